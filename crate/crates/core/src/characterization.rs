//! Certificate of optimality for a fitted hazard, computed from the hazard and the sample alone.
//!
//! Slacks are `RHS − LHS` of the first-order inequalities; the report passes when every
//! slack is at least `−tol` and every equality residual is at most `tol` in magnitude.
//! All integrals against the empirical distribution drop the mass at the largest observation.

use serde::{Deserialize, Serialize};

use crate::empirical::{Direction, LifetimeSample};
use crate::error::{invalid, Error, Result};
use crate::hazard::PiecewiseLinearHazard;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CharacterizationReport {
    pub tol: f64,
    /// `min_x ∫₀ˣ∫₀ᵗ S_n − ∫₀ˣ (x−t)/h dF̃_n`
    pub falling_hinge_slack_min: f64,
    pub falling_hinge_slack_argmin: f64,
    /// `min_x ∫ₓ^∞∫ₜ^∞ S_n − ∫ₓ^∞ (t−x)/h dF̃_n`
    pub rising_hinge_slack_min: f64,
    pub rising_hinge_slack_argmin: f64,
    pub falling_hinge_slack_at_taus: Vec<f64>,
    pub rising_hinge_slack_at_etas: Vec<f64>,
    /// `∫ S_n − ∫ 1/h dF̃_n`
    pub constant_slack: f64,
    /// `∫ H dF_n − (1 − 1/n)`
    pub scale_residual: f64,
    /// `∫₀ˣ h S_n − F̃_n(x)` at every touchpoint
    pub mass_balance_residuals: Vec<f64>,
    /// `∫₀^τ 1/h dF̃_n − ∫₀^τ S_n` at interior decreasing touchpoints
    pub left_balance_residuals: Vec<f64>,
    /// `∫_η^∞ 1/h dF̃_n − ∫_η^∞ S_n` at interior increasing touchpoints
    pub right_balance_residuals: Vec<f64>,
    /// Equalities at the innermost touchpoints, present only for strictly positive hazards.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extended_residuals: Option<Vec<f64>>,
    pub passed: bool,
}

impl CharacterizationReport {
    /// Largest violation over all conditions (zero when everything holds exactly).
    pub fn worst(&self) -> f64 {
        let mut w = 0.0f64;
        for s in [
            self.falling_hinge_slack_min,
            self.rising_hinge_slack_min,
            self.constant_slack,
        ] {
            w = w.max(-s);
        }
        let eqs = self
            .falling_hinge_slack_at_taus
            .iter()
            .chain(&self.rising_hinge_slack_at_etas)
            .chain(std::iter::once(&self.scale_residual))
            .chain(&self.mass_balance_residuals)
            .chain(&self.left_balance_residuals)
            .chain(&self.right_balance_residuals)
            .chain(self.extended_residuals.iter().flatten());
        for r in eqs {
            w = w.max(r.abs());
        }
        w
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("report serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Format(e.to_string()))
    }
}

/// Reciprocal hazard sums over the order statistics, excluding the largest.
struct Reciprocals<'a> {
    sample: &'a LifetimeSample,
    u0: Vec<f64>,
    u1: Vec<f64>,
}

impl<'a> Reciprocals<'a> {
    fn new(h: &PiecewiseLinearHazard, sample: &'a LifetimeSample) -> Result<Self> {
        let xs = sample.values();
        let n = xs.len();
        let mut u0 = vec![0.0; n + 1];
        let mut u1 = vec![0.0; n + 1];
        for i in 0..n {
            let u = if i + 1 < n {
                let v = h.eval(xs[i])?;
                if !(v > 0.0 && v.is_finite()) {
                    return Err(Error::NonFiniteCriterion);
                }
                1.0 / v
            } else {
                0.0
            };
            u0[i + 1] = u0[i] + u;
            u1[i + 1] = u1[i] + u * xs[i];
        }
        Ok(Self { sample, u0, u1 })
    }

    fn nf(&self) -> f64 {
        self.sample.len() as f64
    }

    /// `∫₀ˣ (x−t)/h dF̃_n`
    fn falling_lhs(&self, x: f64) -> f64 {
        let k = self.sample.count_lt(x);
        (x * self.u0[k] - self.u1[k]) / self.nf()
    }

    /// `∫ₓ^∞ (t−x)/h dF̃_n`
    fn rising_lhs(&self, x: f64) -> f64 {
        let n = self.sample.len();
        let k = self.sample.count_le(x);
        ((self.u1[n] - self.u1[k]) - x * (self.u0[n] - self.u0[k])) / self.nf()
    }

    fn falling_slack(&self, x: f64) -> f64 {
        self.sample
            .survival_double_integral(x, Direction::Forward)
            .expect("x ≥ 0")
            - self.falling_lhs(x)
    }

    fn rising_slack(&self, x: f64) -> f64 {
        self.sample
            .survival_double_integral(x, Direction::Backward)
            .expect("x ≥ 0")
            - self.rising_lhs(x)
    }

    /// `∫₀^τ 1/h dF̃_n − ∫₀^τ S_n`
    fn left_balance(&self, x: f64) -> f64 {
        self.u0[self.sample.count_le(x)] / self.nf()
            - self.sample.survival_integral(x).expect("x ≥ 0")
    }

    /// `∫_η^∞ 1/h dF̃_n − ∫_η^∞ S_n`
    fn right_balance(&self, x: f64) -> f64 {
        let n = self.sample.len();
        let tail = (self.u0[n] - self.u0[self.sample.count_lt(x)]) / self.nf();
        tail - (self.sample.mean() - self.sample.survival_integral(x).expect("x ≥ 0"))
    }

    /// Points where a slack can attain its minimum: observations, knots, and the
    /// stationary point of each slack inside every gap between observations.
    fn scan_points(&self, knots: &[f64]) -> Vec<f64> {
        let xs = self.sample.values();
        let n = xs.len();
        let mut pts = vec![0.0];
        pts.extend_from_slice(xs);
        pts.extend(
            knots
                .iter()
                .copied()
                .filter(|&x| x >= 0.0 && x <= xs[n - 1]),
        );
        for k in 0..n {
            let left = if k == 0 { 0.0 } else { xs[k - 1] };
            let right = xs[k];
            let m = (n - k) as f64;
            let below = self.sample.prefix_sum(k);
            let above = self.sample.prefix_sum(n) - below;
            let falling = (self.u0[k] - below) / m;
            let rising = (above - (self.u0[n] - self.u0[k])) / m;
            for x in [falling, rising] {
                if x > left && x < right {
                    pts.push(x);
                }
            }
        }
        pts
    }
}

fn positive_everywhere(h: &PiecewiseLinearHazard, tol: f64) -> bool {
    h.intercept() > tol.min(1e-12)
}

/// Knot locations split by decreasing and increasing side.
///
/// A strictly positive flat bottom reports both of its endpoints in both lists.
pub fn touchpoints(h: &PiecewiseLinearHazard, tol: f64) -> (Vec<f64>, Vec<f64>) {
    let mut taus: Vec<f64> = h.dec_knots().iter().map(|k| k.location).collect();
    let mut etas: Vec<f64> = h.inc_knots().iter().map(|k| k.location).collect();
    if positive_everywhere(h, tol) {
        if let (Some(&t), Some(&e)) = (taus.last(), etas.first()) {
            if t < e {
                taus.push(e);
                etas.insert(0, t);
            }
        }
    }
    (taus, etas)
}

/// Evaluates every first-order optimality condition for `h` on `sample`.
pub fn check(
    h: &PiecewiseLinearHazard,
    sample: &LifetimeSample,
    tol: f64,
) -> Result<CharacterizationReport> {
    if !(tol > 0.0) {
        return Err(invalid("tolerance must be positive"));
    }
    if h.domain_end() < sample.max() {
        return Err(invalid("hazard domain ends before the largest observation"));
    }
    let r = Reciprocals::new(h, sample)?;
    let xs = sample.values();
    let n = xs.len();
    let nf = n as f64;
    let top = sample.max();

    let knots = h.breakpoints();
    let mut falling = (f64::INFINITY, 0.0);
    let mut rising = (f64::INFINITY, 0.0);
    for x in r.scan_points(&knots) {
        let f = r.falling_slack(x);
        if f < falling.0 {
            falling = (f, x);
        }
        let g = r.rising_slack(x);
        if g < rising.0 {
            rising = (g, x);
        }
    }

    let (taus, etas) = touchpoints(h, tol);
    let falling_at_taus: Vec<f64> = taus.iter().map(|&t| r.falling_slack(t)).collect();
    let rising_at_etas: Vec<f64> = etas.iter().map(|&e| r.rising_slack(e)).collect();
    let constant_slack = sample.mean() - r.u0[n] / nf;

    let cum: Vec<f64> = xs.iter().map(|&x| h.cumhaz(x)).collect::<Result<_>>()?;
    let mut cum_prefix = vec![0.0; n + 1];
    for i in 0..n {
        cum_prefix[i + 1] = cum_prefix[i] + cum[i];
    }
    let scale_residual = cum_prefix[n] / nf - (1.0 - 1.0 / nf);

    let mut all_touch: Vec<f64> = taus.iter().chain(&etas).copied().collect();
    all_touch.sort_by(f64::total_cmp);
    all_touch.dedup();
    let mass_balance: Vec<f64> = all_touch
        .iter()
        .map(|&x| {
            let k = sample.count_le(x);
            let integral =
                (cum_prefix[k] + (n - k) as f64 * h.cumhaz(x.min(top)).expect("x ≤ X_(n)")) / nf;
            integral - sample.reduced_ecdf(x)
        })
        .collect();

    let interior = |x: &&f64| **x > 0.0 && **x < top;
    let left_balance: Vec<f64> = taus
        .iter()
        .filter(interior)
        .map(|&t| r.left_balance(t))
        .collect();
    let right_balance: Vec<f64> = etas
        .iter()
        .filter(interior)
        .map(|&e| r.right_balance(e))
        .collect();

    let extended = if positive_everywhere(h, tol) {
        let mut v = Vec::new();
        if let Some(&e1) = etas.first() {
            v.push(r.falling_slack(e1));
            if e1 > 0.0 && e1 < top {
                v.push(r.left_balance(e1));
            }
        }
        if let Some(&tk) = taus.last() {
            v.push(r.rising_slack(tk));
            if tk > 0.0 && tk < top {
                v.push(r.right_balance(tk));
            }
        }
        Some(v)
    } else {
        None
    };

    let mut report = CharacterizationReport {
        tol,
        falling_hinge_slack_min: falling.0,
        falling_hinge_slack_argmin: falling.1,
        rising_hinge_slack_min: rising.0,
        rising_hinge_slack_argmin: rising.1,
        falling_hinge_slack_at_taus: falling_at_taus,
        rising_hinge_slack_at_etas: rising_at_etas,
        constant_slack,
        scale_residual,
        mass_balance_residuals: mass_balance,
        left_balance_residuals: left_balance,
        right_balance_residuals: right_balance,
        extended_residuals: extended,
        passed: false,
    };
    report.passed = report.worst() <= tol;
    Ok(report)
}
