//! Limit-law constants, plug-in confidence intervals, and the local minimax perturbation.

use serde::{Deserialize, Serialize};

use crate::envelope::QuantileTable;
use crate::error::{domain, invalid, Error, Result};
use crate::hazard::{HsDistribution, PiecewiseLinearHazard};
use crate::quadrature::{bisect, integrate_pieces};

/// Local behaviour of the true hazard at `x₀`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalParams {
    pub x0: f64,
    /// `h₀(x₀)`
    pub h: f64,
    /// `h₀′(x₀)`
    pub hp: f64,
    /// `h₀″(x₀)`
    pub hpp: f64,
    /// `S₀(x₀)`
    pub s: f64,
}

impl LocalParams {
    pub fn new(x0: f64, h: f64, hp: f64, hpp: f64, s: f64) -> Result<Self> {
        let p = Self { x0, h, hp, hpp, s };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.x0 > 0.0 && self.x0.is_finite()) {
            return Err(domain("x0", self.x0));
        }
        if !(self.h > 0.0 && self.h.is_finite()) {
            return Err(domain("h(x0)", self.h));
        }
        if !self.hp.is_finite() {
            return Err(domain("h'(x0)", self.hp));
        }
        if !(self.hpp > 0.0 && self.hpp.is_finite()) {
            return Err(domain("h''(x0)", self.hpp));
        }
        if !(self.s > 0.0 && self.s <= 1.0) {
            return Err(domain("S(x0)", self.s));
        }
        Ok(())
    }

    /// Exact local values of a smooth hazard.
    pub fn from_smooth(h0: &impl SmoothHazard, x0: f64) -> Result<Self> {
        Self::new(
            x0,
            h0.hazard(x0),
            h0.derivative(x0),
            h0.second_derivative(x0),
            (-h0.cumulative(x0)).exp(),
        )
    }
}

/// `(c₁, c₂)`, the scale factors of the limit law of `(ĥₙ(x₀), ĥₙ′(x₀))`.
pub fn limit_constants(p: &LocalParams) -> Result<(f64, f64)> {
    p.validate()?;
    let c1 = (p.h * p.h * p.hpp / (24.0 * p.s * p.s)).powf(0.2);
    let c2 = (p.h * p.hpp.powi(3) / (24f64.powi(3) * p.s)).powf(0.2);
    Ok((c1, c2))
}

/// `(a, b)` with `b·Y(a·t)` equal in law to `k₁∫₀ᵗW + k₂t⁴`, where `k₁ = √(h/S)` and
/// `k₂ = h″/24`.
pub fn scaling_pair(p: &LocalParams) -> Result<(f64, f64)> {
    p.validate()?;
    let k1 = (p.h / p.s).sqrt();
    let k2 = p.hpp / 24.0;
    let a = (k2 / k1).powf(0.4);
    Ok((a, k1 / a.powf(1.5)))
}

/// Lower bounds on the normalized local minimax risks for `h(x₀)` and `h′(x₀)`.
pub fn minimax_bounds(p: &LocalParams) -> Result<(f64, f64)> {
    p.validate()?;
    let e = std::f64::consts::E;
    let t1 = 0.25 * (p.h * p.hpp.sqrt() / (p.s * e * 8.0 * 2f64.sqrt())).powf(0.4);
    let t2 = 0.25 * (p.h * p.hpp.powi(3) / (4.0 * e * 2.0 * p.s)).powf(0.2);
    Ok((t1, t2))
}

/// Pointwise confidence intervals for `h₀(x₀)` and `h₀′(x₀)` with their plug-ins.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub x0: f64,
    pub n: usize,
    pub alpha: f64,
    pub estimate: f64,
    pub interval: (f64, f64),
    pub slope_estimate: f64,
    pub slope_interval: (f64, f64),
    pub c1: f64,
    pub c2: f64,
    pub curvature: f64,
    pub survival: f64,
    pub table_replications: usize,
    pub table_half_width: f64,
    pub table_step: f64,
    pub table_seed: u64,
}

impl ConfidenceInterval {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("interval serializes")
    }

    pub fn covers(&self, value: f64) -> bool {
        self.interval.0 <= value && value <= self.interval.1
    }

    pub fn slope_covers(&self, value: f64) -> bool {
        self.slope_interval.0 <= value && value <= self.slope_interval.1
    }
}

pub fn confidence_interval(
    estimate: f64,
    slope: f64,
    p: &LocalParams,
    n: usize,
    table: &QuantileTable,
    alpha: f64,
) -> Result<ConfidenceInterval> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(domain("alpha", alpha));
    }
    if n == 0 {
        return Err(invalid("n must be positive"));
    }
    let (c1, c2) = limit_constants(p)?;
    let (lo, hi) = (alpha / 2.0, 1.0 - alpha / 2.0);
    let r1 = (n as f64).powf(-0.4) * c1;
    let r2 = (n as f64).powf(-0.2) * c2;
    Ok(ConfidenceInterval {
        x0: p.x0,
        n,
        alpha,
        estimate,
        interval: (
            estimate - r1 * table.i2_at(hi)?,
            estimate - r1 * table.i2_at(lo)?,
        ),
        slope_estimate: slope,
        slope_interval: (slope - r2 * table.i3_at(hi)?, slope - r2 * table.i3_at(lo)?),
        c1,
        c2,
        curvature: p.hpp,
        survival: p.s,
        table_replications: table.replications,
        table_half_width: table.half_width,
        table_step: table.step,
        table_seed: table.seed,
    })
}

/// Twice the quadratic coefficient of the least-squares quadratic through `f` at
/// `points` equispaced abscissae on `[x₀ − w, x₀ + w]`.
pub fn local_quadratic_curvature(
    f: impl Fn(f64) -> f64,
    x0: f64,
    window: f64,
    points: usize,
) -> f64 {
    let m = points.max(3);
    let (mut s0, mut s2, mut s4, mut y0, mut y2) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for i in 0..m {
        let u = -1.0 + 2.0 * i as f64 / (m - 1) as f64;
        let y = f(x0 + window * u);
        let u2 = u * u;
        s0 += 1.0;
        s2 += u2;
        s4 += u2 * u2;
        y0 += y;
        y2 += u2 * y;
    }
    let c = (s0 * y2 - s2 * y0) / (s0 * s4 - s2 * s2);
    2.0 * c / (window * window)
}

/// Estimate of `h₀″(x₀)` from a fitted hazard by a local quadratic fit on 2001 points.
///
/// A hazard that is affine on the window has curvature 0; one bend is ill-posed.
pub fn curvature_estimate(h: &PiecewiseLinearHazard, x0: f64, window: f64) -> Result<f64> {
    if !(window > 0.0 && window.is_finite()) {
        return Err(domain("window", window));
    }
    let (lo, hi) = (x0 - window, x0 + window);
    if !(lo >= 0.0 && hi < h.domain_end()) {
        return Err(Error::IllPosed(format!(
            "window [{lo}, {hi}] leaves the hazard's domain"
        )));
    }
    let bends = h
        .breakpoints()
        .into_iter()
        .filter(|&b| b > lo && b < hi)
        .count();
    match bends {
        0 => return Ok(0.0),
        1 => {
            return Err(Error::IllPosed(
                "only two hazard segments meet the window".into(),
            ))
        }
        _ => {}
    }
    Ok(local_quadratic_curvature(
        |t| h.eval(t).unwrap_or(f64::NAN),
        x0,
        window,
        2001,
    ))
}

/// Share of the distance from `x₀` to the nearer domain end that a default window may use.
pub const WINDOW_REACH: f64 = 0.8;

/// `2·n^{−1/7}`, capped at [`WINDOW_REACH`] times the distance from `x₀` to either end of
/// the domain.
pub fn default_window(n: usize, x0: f64, domain_end: f64) -> f64 {
    (2.0 * (n as f64).powf(-1.0 / 7.0))
        .min(WINDOW_REACH * x0)
        .min(WINDOW_REACH * (domain_end - x0))
}

/// Plug-in local parameters from a fitted hazard.
pub fn plug_in(h: &PiecewiseLinearHazard, x0: f64, window: f64) -> Result<LocalParams> {
    let value = h.eval(x0)?;
    let slope = 0.5 * (h.slope_left(x0) + h.slope_right(x0));
    let curvature = curvature_estimate(h, x0, window)?;
    let s = (-h.cumhaz(x0)?).exp();
    LocalParams::new(x0, value, slope, curvature, s)
        .map_err(|e| Error::IllPosed(format!("plug-in parameters: {e}")))
}

/// A hazard with two continuous derivatives and an exact cumulative hazard.
pub trait SmoothHazard: Sync {
    fn hazard(&self, t: f64) -> f64;
    fn derivative(&self, t: f64) -> f64;
    fn second_derivative(&self, t: f64) -> f64;
    fn cumulative(&self, t: f64) -> f64;
    /// Right end of the support, possibly infinite.
    fn support_end(&self) -> f64;

    fn density(&self, t: f64) -> f64 {
        (-self.cumulative(t)).exp() * self.hazard(t)
    }
}

impl SmoothHazard for HsDistribution {
    fn hazard(&self, t: f64) -> f64 {
        HsDistribution::hazard(self, t).unwrap_or(f64::NAN)
    }
    fn derivative(&self, t: f64) -> f64 {
        self.hazard_derivative(t).unwrap_or(f64::NAN)
    }
    fn second_derivative(&self, t: f64) -> f64 {
        self.hazard_second_derivative(t).unwrap_or(f64::NAN)
    }
    fn cumulative(&self, t: f64) -> f64 {
        self.cumhaz(t).unwrap_or(f64::NAN)
    }
    fn support_end(&self) -> f64 {
        self.a()
    }
}

/// `α + β(t − center)²` on `[0, ∞)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadraticHazard {
    pub alpha: f64,
    pub beta: f64,
    pub center: f64,
}

impl SmoothHazard for QuadraticHazard {
    fn hazard(&self, t: f64) -> f64 {
        self.alpha + self.beta * (t - self.center).powi(2)
    }
    fn derivative(&self, t: f64) -> f64 {
        2.0 * self.beta * (t - self.center)
    }
    fn second_derivative(&self, _t: f64) -> f64 {
        2.0 * self.beta
    }
    fn cumulative(&self, t: f64) -> f64 {
        self.alpha * t + self.beta * ((t - self.center).powi(3) + self.center.powi(3)) / 3.0
    }
    fn support_end(&self) -> f64 {
        f64::INFINITY
    }
}

/// The hazard `h_ε`: `h₀` with the stretch `[x₀ − εc_ε, x₀ + ε]` replaced by two tangent
/// lines, touching at `x₀ − εc_ε` and `x₀ + ε`.
#[derive(Clone, Copy, Debug)]
pub struct Perturbation<'a, H: SmoothHazard> {
    base: &'a H,
    x0: f64,
    eps: f64,
    c: f64,
    residual: f64,
    kinks: [f64; 3],
    deficit_mid: f64,
    deficit_total: f64,
}

/// Builds `h_ε` with `c_ε` chosen for continuity at `x₀ − ε`.
pub fn minimax_perturbation<H: SmoothHazard>(
    h0: &H,
    x0: f64,
    eps: f64,
) -> Result<Perturbation<'_, H>> {
    if !(eps > 0.0 && x0 > eps && x0 + eps < h0.support_end()) {
        return Err(Error::Bracket(format!(
            "eps = {eps} does not fit around x0 = {x0}"
        )));
    }
    let right = x0 + eps;
    let target = h0.hazard(right) - 2.0 * eps * h0.derivative(right);
    let gap = |c: f64| {
        let p = x0 - eps * c;
        h0.hazard(p) + eps * (c - 1.0) * h0.derivative(p) - target
    };
    let limit = (x0 / eps) * (1.0 - 1e-12);
    let mut hi = 2.0f64.min(limit);
    while !(gap(hi) < 0.0) {
        if hi >= limit {
            return Err(Error::Bracket(format!(
                "no sign change of the continuity gap for c in [1, {limit}]"
            )));
        }
        hi = (2.0 * hi).min(limit);
    }
    let c = bisect(&gap, 1.0, hi)?;
    let residual = gap(c).abs();
    let left = x0 - eps * c;
    let mid = x0 - eps;
    let mut out = Perturbation {
        base: h0,
        x0,
        eps,
        c,
        residual,
        kinks: [left, mid, right],
        deficit_mid: 0.0,
        deficit_total: 0.0,
    };
    out.deficit_mid = out.deficit(mid);
    out.deficit_total = out.deficit(right);
    Ok(out)
}

impl<H: SmoothHazard> Perturbation<'_, H> {
    pub fn c_eps(&self) -> f64 {
        self.c
    }

    /// `|h_ε(x₀ − ε⁻) − h_ε(x₀ − ε⁺)|` at the computed `c_ε`.
    pub fn continuity_residual(&self) -> f64 {
        self.residual
    }

    /// `[x₀ − εc_ε, x₀ − ε, x₀ + ε]`
    pub fn kinks(&self) -> [f64; 3] {
        self.kinks
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn x0(&self) -> f64 {
        self.x0
    }

    /// `∫_{x₀−εc}^{t} (h₀ − h_ε)` for `t` in the replaced stretch.
    fn deficit(&self, t: f64) -> f64 {
        let [p0, p1, p2] = self.kinks;
        let h0 = self.base;
        if t <= p0 {
            0.0
        } else if t <= p1 {
            let d = t - p0;
            (h0.cumulative(t) - h0.cumulative(p0))
                - (h0.hazard(p0) * d + 0.5 * h0.derivative(p0) * d * d)
        } else if t <= p2 {
            let line = h0.hazard(p2) * (t - p1)
                + 0.5 * h0.derivative(p2) * ((t - p2).powi(2) - (p1 - p2).powi(2));
            self.deficit_mid + (h0.cumulative(t) - h0.cumulative(p1)) - line
        } else {
            self.deficit_total
        }
    }

    pub fn hazard(&self, t: f64) -> f64 {
        let [p0, p1, p2] = self.kinks;
        let h0 = self.base;
        if t >= p0 && t <= p1 {
            h0.hazard(p0) + (t - p0) * h0.derivative(p0)
        } else if t > p1 && t <= p2 {
            h0.hazard(p2) + (t - p2) * h0.derivative(p2)
        } else {
            h0.hazard(t)
        }
    }

    /// Right derivative of `h_ε`.
    pub fn derivative(&self, t: f64) -> f64 {
        let [p0, p1, p2] = self.kinks;
        if t >= p0 && t < p1 {
            self.base.derivative(p0)
        } else if t >= p1 && t < p2 {
            self.base.derivative(p2)
        } else {
            self.base.derivative(t)
        }
    }

    pub fn cumulative(&self, t: f64) -> f64 {
        self.base.cumulative(t) - self.deficit(t)
    }

    /// `f_ε = exp(−H_ε)·h_ε`
    pub fn density(&self, t: f64) -> f64 {
        (-self.cumulative(t)).exp() * self.hazard(t)
    }

    /// `T₁(f_ε) − T₁(f₀) = h_ε(x₀) − h₀(x₀)`
    pub fn t1_gap(&self) -> f64 {
        self.hazard(self.x0) - self.base.hazard(self.x0)
    }

    /// `T₂(f_ε) − T₂(f₀) = h_ε′(x₀) − h₀′(x₀)`
    pub fn t2_gap(&self) -> f64 {
        self.derivative(self.x0) - self.base.derivative(self.x0)
    }

    /// `H²(f_ε, f₀)`. Past the stretch the densities differ by the constant factor
    /// `exp(D)`, so the tail is `½(exp(D/2) − 1)²·S₀(x₀ + ε)` exactly.
    pub fn hellinger_sq(&self, tol: f64) -> Result<f64> {
        let [p0, _, p2] = self.kinks;
        let inner = hellinger_sq(
            &|t| self.density(t),
            &|t| self.base.density(t),
            &self.kinks,
            tol,
        )?;
        let tail =
            0.5 * (0.5 * self.deficit_total).exp_m1().powi(2) * (-self.base.cumulative(p2)).exp();
        debug_assert!(p0 < p2);
        Ok(inner + tail)
    }

    /// `⅛∫(f_ε − f₀)²/f₀`, with the tail in closed form as for [`Self::hellinger_sq`].
    pub fn chi_sq_over_8(&self, tol: f64) -> Result<f64> {
        let [_, _, p2] = self.kinks;
        let inner = chi_sq_over_8(
            &|t| self.density(t),
            &|t| self.base.density(t),
            &self.kinks,
            tol,
        )?;
        let tail = 0.125 * self.deficit_total.exp_m1().powi(2) * (-self.base.cumulative(p2)).exp();
        Ok(inner + tail)
    }
}

/// `½∫(√f − √g)²` over consecutive breakpoints, to absolute error `tol`.
pub fn hellinger_sq(
    f: &impl Fn(f64) -> f64,
    g: &impl Fn(f64) -> f64,
    breaks: &[f64],
    tol: f64,
) -> Result<f64> {
    let integrand = |t: f64| {
        let (a, b) = (f(t).max(0.0), g(t).max(0.0));
        let root = a.sqrt() + b.sqrt();
        if root == 0.0 {
            0.0
        } else {
            let d = (a - b) / root;
            0.5 * d * d
        }
    };
    integrate_pieces(&integrand, breaks, tol)
}

/// `⅛∫(f − f₀)²/f₀` over consecutive breakpoints.
pub fn chi_sq_over_8(
    f: &impl Fn(f64) -> f64,
    f0: &impl Fn(f64) -> f64,
    breaks: &[f64],
    tol: f64,
) -> Result<f64> {
    let integrand = |t: f64| {
        let base = f0(t);
        let d = f(t) - base;
        if base > 0.0 {
            0.125 * d * d / base
        } else {
            0.0
        }
    };
    integrate_pieces(&integrand, breaks, tol)
}

/// `ν₀ = (2/5)·h″²·S/h`, the leading coefficient of `H²(f_ε, f₀)` in `ε⁵`.
pub fn hellinger_coefficient(p: &LocalParams) -> f64 {
    0.4 * p.hpp * p.hpp * p.s / p.h
}
