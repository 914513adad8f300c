//! Piecewise-linear convex hazards in hinge form, plus the HS bathtub family.

use rand::Rng;
use rand_distr::{Exp1, OpenClosed01};
use serde::{Deserialize, Serialize};

use crate::empirical::{LifetimeSample, TiePolicy};
use crate::error::{domain, invalid, Error, Result};
use crate::rng::stream_rng;

/// A hinge location with its positive weight.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Knot {
    pub location: f64,
    pub weight: f64,
}

/// `h(t) = a + Σ ν_j (τ_j − t)₊ + Σ μ_j (t − η_j)₊` on `[0, domain_end)`, and `+∞` beyond.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "HazardRepr", into = "HazardRepr")]
pub struct PiecewiseLinearHazard {
    intercept: f64,
    dec_knots: Vec<Knot>,
    inc_knots: Vec<Knot>,
    domain_end: f64,
}

#[derive(Serialize, Deserialize)]
struct HazardRepr {
    intercept: f64,
    domain_end: f64,
    #[serde(default)]
    dec_knots: Vec<Knot>,
    #[serde(default)]
    inc_knots: Vec<Knot>,
}

impl TryFrom<HazardRepr> for PiecewiseLinearHazard {
    type Error = Error;
    fn try_from(r: HazardRepr) -> Result<Self> {
        Self::new(r.intercept, r.dec_knots, r.inc_knots, r.domain_end)
    }
}

impl From<PiecewiseLinearHazard> for HazardRepr {
    fn from(h: PiecewiseLinearHazard) -> Self {
        Self {
            intercept: h.intercept,
            domain_end: h.domain_end,
            dec_knots: h.dec_knots,
            inc_knots: h.inc_knots,
        }
    }
}

fn check_knots(knots: &mut Vec<Knot>, what: &str, min_loc: f64, domain_end: f64) -> Result<()> {
    knots.retain(|k| k.weight != 0.0);
    for (i, k) in knots.iter().enumerate() {
        if !(k.weight > 0.0 && k.weight.is_finite()) {
            return Err(invalid(format!(
                "{what} weight {} must be positive",
                k.weight
            )));
        }
        if !(k.location >= min_loc && k.location <= domain_end && k.location.is_finite()) {
            return Err(invalid(format!(
                "{what} location {} out of range",
                k.location
            )));
        }
        if i > 0 && knots[i - 1].location >= k.location {
            return Err(invalid(format!(
                "{what} locations must be strictly increasing"
            )));
        }
    }
    Ok(())
}

impl PiecewiseLinearHazard {
    /// Builds a hazard already in canonical order. Zero-weight knots are dropped.
    pub fn new(
        intercept: f64,
        mut dec_knots: Vec<Knot>,
        mut inc_knots: Vec<Knot>,
        domain_end: f64,
    ) -> Result<Self> {
        if !(domain_end > 0.0) {
            return Err(invalid(format!("domain_end {domain_end} must be positive")));
        }
        if !(intercept >= 0.0 && intercept.is_finite()) {
            return Err(invalid(format!(
                "intercept {intercept} must be nonnegative"
            )));
        }
        check_knots(
            &mut dec_knots,
            "decreasing knot",
            f64::MIN_POSITIVE,
            domain_end,
        )?;
        check_knots(&mut inc_knots, "increasing knot", 0.0, domain_end)?;
        if let (Some(t), Some(e)) = (dec_knots.last(), inc_knots.first()) {
            if t.location > e.location {
                return Err(invalid("decreasing knots must precede increasing knots"));
            }
        }
        Ok(Self {
            intercept,
            dec_knots,
            inc_knots,
            domain_end,
        })
    }

    pub fn constant(value: f64, domain_end: f64) -> Result<Self> {
        Self::new(value, vec![], vec![], domain_end)
    }

    /// Canonical form of an arbitrary nonnegative combination of hinges.
    ///
    /// Hinges may be given in any order and at coinciding locations; the result stores
    /// the function's minimum as the intercept.
    pub fn from_hinges(
        intercept: f64,
        dec: &[(f64, f64)],
        inc: &[(f64, f64)],
        domain_end: f64,
    ) -> Result<Self> {
        let raw = Self {
            intercept,
            dec_knots: dec
                .iter()
                .map(|&(location, weight)| Knot { location, weight })
                .collect(),
            inc_knots: inc
                .iter()
                .map(|&(location, weight)| Knot { location, weight })
                .collect(),
            domain_end,
        };
        if dec
            .iter()
            .chain(inc)
            .any(|&(x, w)| !(w >= 0.0 && x >= 0.0 && x.is_finite()))
        {
            return Err(invalid("hinges need nonnegative weights and locations"));
        }
        let mut points: Vec<f64> = dec
            .iter()
            .chain(inc)
            .filter(|&&(_, w)| w > 0.0)
            .map(|&(x, _)| x)
            .filter(|&x| x > 0.0 && x < domain_end)
            .collect();
        points.sort_by(f64::total_cmp);
        points.dedup();

        let active = |p: f64, right: bool| -> f64 {
            let rising: f64 = inc
                .iter()
                .filter(|&&(x, _)| if right { x <= p } else { x < p })
                .map(|&(_, w)| w)
                .sum();
            let falling: f64 = dec
                .iter()
                .filter(|&&(x, _)| if right { x > p } else { x >= p })
                .map(|&(_, w)| w)
                .sum();
            let slope = rising - falling;
            if slope.abs() <= 1e-13 * (rising + falling) {
                0.0
            } else {
                slope
            }
        };
        let start_slope = active(0.0, true);
        let mut dec_knots = Vec::new();
        let mut inc_knots = Vec::new();
        if start_slope > 0.0 {
            inc_knots.push(Knot {
                location: 0.0,
                weight: start_slope,
            });
        }
        let mut min_at = if start_slope >= 0.0 { Some(0.0) } else { None };
        let mut left = start_slope;
        for &p in &points {
            let jump: f64 = dec
                .iter()
                .chain(inc)
                .filter(|&&(x, _)| x == p)
                .map(|&(_, w)| w)
                .sum();
            let (before, after) = (active(p, false), active(p, true));
            if before < 0.0 {
                dec_knots.push(Knot {
                    location: p,
                    weight: jump.min(-before),
                });
            }
            if after > 0.0 {
                inc_knots.push(Knot {
                    location: p,
                    weight: jump.min(after),
                });
            }
            if min_at.is_none() && after >= 0.0 {
                min_at = Some(p);
            }
            left = after;
        }
        let a = match min_at {
            Some(p) => raw.eval_finite(p),
            None => {
                if domain_end.is_infinite() {
                    return Err(invalid("hazard decreases without bound"));
                }
                dec_knots.push(Knot {
                    location: domain_end,
                    weight: -left,
                });
                raw.eval_finite(domain_end)
            }
        };
        Self::new(a.max(0.0), dec_knots, inc_knots, domain_end)
    }

    pub fn intercept(&self) -> f64 {
        self.intercept
    }

    pub fn dec_knots(&self) -> &[Knot] {
        &self.dec_knots
    }

    pub fn inc_knots(&self) -> &[Knot] {
        &self.inc_knots
    }

    pub fn domain_end(&self) -> f64 {
        self.domain_end
    }

    /// Same hazard on a different domain.
    pub fn with_domain_end(&self, domain_end: f64) -> Result<Self> {
        Self::new(
            self.intercept,
            self.dec_knots.clone(),
            self.inc_knots.clone(),
            domain_end,
        )
    }

    /// Multiplies every value by `c > 0`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        let scale = |ks: &[Knot]| {
            ks.iter()
                .map(|k| Knot {
                    location: k.location,
                    weight: k.weight * c,
                })
                .collect()
        };
        Self::new(
            self.intercept * c,
            scale(&self.dec_knots),
            scale(&self.inc_knots),
            self.domain_end,
        )
    }

    /// All knot locations, sorted, without duplicates.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self
            .dec_knots
            .iter()
            .chain(&self.inc_knots)
            .map(|k| k.location)
            .collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    }

    fn eval_finite(&self, t: f64) -> f64 {
        let mut v = self.intercept;
        for k in &self.dec_knots {
            if k.location > t {
                v += k.weight * (k.location - t);
            }
        }
        for k in &self.inc_knots {
            if t > k.location {
                v += k.weight * (t - k.location);
            }
        }
        v
    }

    pub fn eval(&self, t: f64) -> Result<f64> {
        if !(t >= 0.0) {
            return Err(domain("t", t));
        }
        if t >= self.domain_end {
            return Ok(f64::INFINITY);
        }
        Ok(self.eval_finite(t))
    }

    /// Right derivative at `t`.
    pub fn slope_right(&self, t: f64) -> f64 {
        let dec: f64 = self
            .dec_knots
            .iter()
            .filter(|k| k.location > t)
            .map(|k| k.weight)
            .sum();
        let inc: f64 = self
            .inc_knots
            .iter()
            .filter(|k| k.location <= t)
            .map(|k| k.weight)
            .sum();
        inc - dec
    }

    /// Left derivative at `t > 0`.
    pub fn slope_left(&self, t: f64) -> f64 {
        let dec: f64 = self
            .dec_knots
            .iter()
            .filter(|k| k.location >= t)
            .map(|k| k.weight)
            .sum();
        let inc: f64 = self
            .inc_knots
            .iter()
            .filter(|k| k.location < t)
            .map(|k| k.weight)
            .sum();
        inc - dec
    }

    fn cumhaz_finite(&self, t: f64) -> f64 {
        let mut v = self.intercept * t;
        for k in &self.dec_knots {
            v += k.weight
                * if t < k.location {
                    t * (k.location - 0.5 * t)
                } else {
                    0.5 * k.location * k.location
                };
        }
        for k in &self.inc_knots {
            if t > k.location {
                let d = t - k.location;
                v += 0.5 * k.weight * d * d;
            }
        }
        v
    }

    /// `H(t) = ∫₀ᵗ h` for `0 ≤ t ≤ domain_end`.
    pub fn cumhaz(&self, t: f64) -> Result<f64> {
        if !(t >= 0.0 && t <= self.domain_end) {
            return Err(domain("t", t));
        }
        Ok(self.cumhaz_finite(t))
    }

    /// `(f(t), S(t))` with `S = exp(−H)` and `f = h·S`.
    pub fn density_survival(&self, t: f64) -> Result<(f64, f64)> {
        let s = (-self.cumhaz(t)?).exp();
        let h = self.eval(t)?;
        Ok((if h == 0.0 { 0.0 } else { h * s }, s))
    }

    /// Draws `count` lifetimes by inverting `H` at standard exponential levels.
    ///
    /// With a finite `domain_end`, levels beyond `H(domain_end)` land on `domain_end`;
    /// such coincident values are separated by one ulp each.
    pub fn sample(&self, count: usize, seed: u64) -> Result<LifetimeSample> {
        if count == 0 {
            return Err(invalid("count must be at least 1"));
        }
        let inverse = CumhazInverse::new(self)?;
        let mut rng = stream_rng(seed, 0);
        let draws: Vec<f64> = (0..count)
            .map(|_| inverse.solve(rng.sample::<f64, _>(Exp1)))
            .collect();
        LifetimeSample::with_policy(draws, TiePolicy::Perturb)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("hazard serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Format(e.to_string()))
    }
}

/// Segment table for solving `H(t) = e`.
struct CumhazInverse {
    starts: Vec<f64>,
    values: Vec<f64>,
    slopes: Vec<f64>,
    cum: Vec<f64>,
    end: f64,
    end_cum: f64,
}

impl CumhazInverse {
    fn new(h: &PiecewiseLinearHazard) -> Result<Self> {
        let mut starts = vec![0.0];
        starts.extend(
            h.breakpoints()
                .into_iter()
                .filter(|&x| x > 0.0 && x < h.domain_end),
        );
        let values: Vec<f64> = starts.iter().map(|&s| h.eval_finite(s)).collect();
        let slopes: Vec<f64> = starts.iter().map(|&s| h.slope_right(s)).collect();
        let cum: Vec<f64> = starts.iter().map(|&s| h.cumhaz_finite(s)).collect();
        let last = starts.len() - 1;
        if h.domain_end.is_infinite() && values[last] <= 0.0 && slopes[last] <= 0.0 {
            return Err(Error::NotSamplable(
                "cumulative hazard stays bounded on an infinite domain".into(),
            ));
        }
        let end_cum = if h.domain_end.is_finite() {
            h.cumhaz_finite(h.domain_end)
        } else {
            f64::INFINITY
        };
        Ok(Self {
            starts,
            values,
            slopes,
            cum,
            end: h.domain_end,
            end_cum,
        })
    }

    fn solve(&self, e: f64) -> f64 {
        if e >= self.end_cum {
            return self.end;
        }
        let k = self.cum.partition_point(|&c| c <= e).saturating_sub(1);
        let c = e - self.cum[k];
        let (v, s) = (self.values[k], self.slopes[k]);
        let disc = (v * v + 2.0 * s * c).max(0.0);
        let u = 2.0 * c / (v + disc.sqrt());
        let t = self.starts[k] + u;
        if k + 1 < self.starts.len() {
            t.min(self.starts[k + 1])
        } else {
            t.min(self.end)
        }
    }
}

/// The HS family on `[0, A]` with density proportional to `1/√(b² + (1+2b)t/A)`.
///
/// `F(t) = (√(b² + (1+2b)t/A) − |b|) / (1 + b − |b|)`; the hazard is convex for every `b > −1/2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HsDistribution {
    #[serde(rename = "A")]
    a: f64,
    b: f64,
}

/// Density, distribution, survival and hazard at one point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HsValues {
    pub density: f64,
    pub cdf: f64,
    pub survival: f64,
    pub hazard: f64,
}

impl HsDistribution {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(a > 0.0 && a.is_finite()) {
            return Err(invalid(format!("A = {a} must be positive")));
        }
        if !(b > -0.5 && b.is_finite()) {
            return Err(invalid(format!("b = {b} must exceed -1/2")));
        }
        Ok(Self { a, b })
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    fn kappa(&self) -> f64 {
        (1.0 + 2.0 * self.b) / self.a
    }

    fn root(&self, t: f64) -> f64 {
        (self.b * self.b + self.kappa() * t).sqrt()
    }

    /// Total mass of the unnormalized density, `1 + b − |b|`.
    fn mass(&self) -> f64 {
        1.0 + self.b - self.b.abs()
    }

    fn check(&self, t: f64) -> Result<()> {
        if t >= 0.0 && t <= self.a {
            Ok(())
        } else {
            Err(domain("t", t))
        }
    }

    /// `(f, F, S, h)`; at `t = A` the hazard is `+∞`.
    pub fn functions(&self, t: f64) -> Result<HsValues> {
        self.check(t)?;
        let r = self.root(t);
        let m = self.mass();
        let density = self.kappa() / (2.0 * r * m);
        let cdf = ((r - self.b.abs()) / m).min(1.0);
        let survival = ((1.0 + self.b - r) / m).max(0.0);
        let hazard = if survival <= 0.0 {
            f64::INFINITY
        } else {
            density / survival
        };
        Ok(HsValues {
            density,
            cdf,
            survival,
            hazard,
        })
    }

    pub fn hazard(&self, t: f64) -> Result<f64> {
        Ok(self.functions(t)?.hazard)
    }

    /// `h′(t)`, by the chain rule through `r = √(b² + κt)`.
    pub fn hazard_derivative(&self, t: f64) -> Result<f64> {
        self.check(t)?;
        let k = self.kappa();
        let r = self.root(t);
        let g = r * (1.0 + self.b - r);
        let dg = 1.0 + self.b - 2.0 * r;
        let dr = k / (2.0 * r);
        Ok(-0.5 * k * dg * dr / (g * g))
    }

    /// `h″(t)`.
    pub fn hazard_second_derivative(&self, t: f64) -> Result<f64> {
        self.check(t)?;
        let k = self.kappa();
        let r = self.root(t);
        let g = r * (1.0 + self.b - r);
        let dg = 1.0 + self.b - 2.0 * r;
        let dr = k / (2.0 * r);
        let ddr = -k * k / (4.0 * r * r * r);
        let inv2 = -(-2.0 * dr * dr + dg * ddr) / (g * g) + 2.0 * dg * dg * dr * dr / (g * g * g);
        Ok(0.5 * k * inv2)
    }

    /// `H(t) = −log S(t)`.
    pub fn cumhaz(&self, t: f64) -> Result<f64> {
        Ok(-self.functions(t)?.survival.ln())
    }

    /// Inverse distribution function for `u ∈ [0, 1]`.
    pub fn quantile(&self, u: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&u) {
            return Err(domain("u", u));
        }
        let b = self.b;
        let r = b.abs() + u * self.mass();
        Ok((self.a * (r - b) * (r + b) / (1.0 + 2.0 * b)).min(self.a))
    }

    pub fn sample(&self, count: usize, seed: u64) -> Result<LifetimeSample> {
        if count == 0 {
            return Err(invalid("count must be at least 1"));
        }
        let mut rng = stream_rng(seed, 0);
        let draws: Result<Vec<f64>> = (0..count)
            .map(|_| self.quantile(rng.sample::<f64, _>(OpenClosed01)))
            .collect();
        LifetimeSample::with_policy(draws?, TiePolicy::Perturb)
    }
}
