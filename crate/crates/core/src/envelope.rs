//! Simulation of `Y(t) = ∫₀ᵗ W + t⁴` and its envelope on a finite window.
//!
//! The envelope's second derivative `g` is the convex least-squares fit to the discrete
//! second derivative of `Y`. It is computed by support reduction over hinge weights:
//! knots are added where the directional derivative `Σⱼ₍ⱼ₎₋ₖ (tⱼ − tₖ)(gⱼ − yⱼ)` is
//! negative and dropped when their weight would turn negative. With a fixed knot set the
//! least-squares problem is solved in the equivalent interpolation basis, which is
//! tridiagonal.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::{mix, stream_rng};

/// A discretized path on the symmetric grid `−c, −c + Δ, …, c`.
#[derive(Clone, Debug, PartialEq)]
pub struct PathGrid {
    half_width: f64,
    step: f64,
    times: Vec<f64>,
    w: Vec<f64>,
    y: Vec<f64>,
    quartic: f64,
}

impl PathGrid {
    /// Brownian path with independent `N(0, Δ)` increments outward from 0.
    ///
    /// The right half uses stream 0 and the left half stream 1 of `seed`, so a narrower
    /// window with the same seed and step is a restriction of a wider one.
    pub fn simulate(half_width: f64, step: f64, seed: u64) -> Result<Self> {
        let half = Self::half_count(half_width, step)?;
        let sd = step.sqrt();
        let mut right = stream_rng(seed, 0);
        let mut left = stream_rng(seed, 1);
        let up: Vec<f64> = (0..half)
            .map(|_| sd * right.sample::<f64, _>(StandardNormal))
            .collect();
        let down: Vec<f64> = (0..half)
            .map(|_| sd * left.sample::<f64, _>(StandardNormal))
            .collect();
        Ok(Self::assemble(half_width, step, half, &up, &down))
    }

    /// The path with every increment forced to zero, so `Y(t) = t⁴`.
    pub fn noiseless(half_width: f64, step: f64) -> Result<Self> {
        let half = Self::half_count(half_width, step)?;
        let zeros = vec![0.0; half];
        Ok(Self::assemble(half_width, step, half, &zeros, &zeros))
    }

    fn half_count(half_width: f64, step: f64) -> Result<usize> {
        if !(half_width > 0.0 && half_width.is_finite()) {
            return Err(invalid(format!(
                "half-width must be positive, got {half_width}"
            )));
        }
        if !(step > 0.0 && step.is_finite()) {
            return Err(invalid(format!("step must be positive, got {step}")));
        }
        let ratio = half_width / step;
        let half = ratio.round();
        if (ratio - half).abs() > 1e-9 * ratio.max(1.0) {
            return Err(invalid(format!(
                "step {step} does not divide half-width {half_width}"
            )));
        }
        if half < 2.0 {
            return Err(invalid(
                "the grid needs at least two steps on each side of 0",
            ));
        }
        Ok(half as usize)
    }

    fn assemble(half_width: f64, step: f64, half: usize, up: &[f64], down: &[f64]) -> Self {
        let len = 2 * half + 1;
        let times: Vec<f64> = (0..len).map(|j| (j as f64 - half as f64) * step).collect();
        let mut w = vec![0.0; len];
        let mut v = vec![0.0; len];
        for k in 0..half {
            let (a, b) = (half + k, half + k + 1);
            w[b] = w[a] + up[k];
            v[b] = v[a] + 0.5 * step * (w[a] + w[b]);
            let (a, b) = (half - k, half - k - 1);
            w[b] = w[a] + down[k];
            v[b] = v[a] - 0.5 * step * (w[a] + w[b]);
        }
        let y = v.iter().zip(&times).map(|(vi, t)| vi + t.powi(4)).collect();
        Self {
            half_width,
            step,
            times,
            w,
            y,
            quartic: 1.0,
        }
    }

    /// The path `Y(t) + α + βt`.
    pub fn shifted(&self, alpha: f64, beta: f64) -> Self {
        let mut out = self.clone();
        for (y, t) in out.y.iter_mut().zip(&self.times) {
            *y += alpha + beta * t;
        }
        out
    }

    /// The path `b·Y(a·t)` on the grid mapped by `t ↦ t/a`.
    ///
    /// `w` becomes `a·b·W(a·t)`, the part of the derivative process without drift.
    pub fn rescaled(&self, a: f64, b: f64) -> Result<Self> {
        if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
            return Err(invalid(format!(
                "rescaling needs a, b > 0, got a = {a}, b = {b}"
            )));
        }
        Ok(Self {
            half_width: self.half_width / a,
            step: self.step / a,
            times: self.times.iter().map(|t| t / a).collect(),
            w: self.w.iter().map(|v| a * b * v).collect(),
            y: self.y.iter().map(|v| b * v).collect(),
            quartic: self.quartic * b * a.powi(4),
        })
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn w(&self) -> &[f64] {
        &self.w
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    /// Coefficient of `t⁴` in `Y`.
    pub fn quartic(&self) -> f64 {
        self.quartic
    }

    /// Index of `t = 0`.
    pub fn center(&self) -> usize {
        self.times.len() / 2
    }

    /// Discrete second derivative of `Y` at interior grid points, with the quartic
    /// drift differentiated exactly.
    fn curvature_data(&self) -> Vec<f64> {
        let len = self.times.len();
        let noise: Vec<f64> = self
            .y
            .iter()
            .zip(&self.times)
            .map(|(y, t)| y - self.quartic * t.powi(4))
            .collect();
        let d2 = self.step * self.step;
        (1..len - 1)
            .map(|j| {
                (noise[j + 1] - 2.0 * noise[j] + noise[j - 1]) / d2
                    + 12.0 * self.quartic * self.times[j] * self.times[j]
            })
            .collect()
    }
}

/// Discrete envelope of a path.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvelopeFit {
    pub times: Vec<f64>,
    pub y: Vec<f64>,
    /// `𝓘` on the grid.
    pub values: Vec<f64>,
    /// `𝓘′` by central differences, one-sided at the ends.
    pub first: Vec<f64>,
    /// `𝓘″ = g`, piecewise linear and convex.
    pub second: Vec<f64>,
    /// `𝓘‴ = g′` on each grid cell; `third[j]` is the slope on `[tⱼ, tⱼ₊₁]`.
    pub third: Vec<f64>,
    /// Grid locations where `g` bends, i.e. where `𝓘` touches `Y`.
    pub active_knots: Vec<f64>,
    /// `Σ (𝓘 − Y)·Δ𝓘‴` over the knots.
    pub complementarity: f64,
    /// `max |Y|` on the grid, the scale for relative residuals.
    pub scale: f64,
    pub iterations: usize,
}

/// Relative residuals of the three envelope conditions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnvelopeResiduals {
    /// `max(0, −min(𝓘 − Y)) / scale`
    pub above: f64,
    /// `max(0, −min Δ²g) / max|g|`
    pub convexity: f64,
    /// `|Σ (𝓘 − Y)·Δ𝓘‴| / (scale · Σ|Δ𝓘‴|)`
    pub complementarity: f64,
}

impl EnvelopeResiduals {
    pub fn worst(&self) -> f64 {
        self.above.max(self.convexity).max(self.complementarity)
    }
}

impl EnvelopeFit {
    /// `𝓘⁽²⁾(0)`.
    pub fn second_at_zero(&self) -> f64 {
        self.second[self.times.len() / 2]
    }

    /// `𝓘⁽³⁾(0)` by a central difference of `g`.
    pub fn third_at_zero(&self) -> f64 {
        let m = self.times.len() / 2;
        (self.second[m + 1] - self.second[m - 1]) / (self.times[m + 1] - self.times[m - 1])
    }

    pub fn residuals(&self) -> EnvelopeResiduals {
        let len = self.times.len();
        let min_gap = self
            .values
            .iter()
            .zip(&self.y)
            .map(|(i, y)| i - y)
            .fold(f64::INFINITY, f64::min);
        let gmax = self
            .second
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()))
            .max(f64::MIN_POSITIVE);
        let min_d2 = (1..len - 1)
            .map(|j| self.second[j + 1] - 2.0 * self.second[j] + self.second[j - 1])
            .fold(f64::INFINITY, f64::min);
        let jumps: f64 = self.third.windows(2).map(|p| (p[1] - p[0]).abs()).sum();
        EnvelopeResiduals {
            above: (-min_gap).max(0.0) / self.scale,
            convexity: (-min_d2).max(0.0) / gmax,
            complementarity: if jumps > 0.0 {
                self.complementarity.abs() / (self.scale * jumps)
            } else {
                0.0
            },
        }
    }
}

/// Convex piecewise-linear least squares on a fixed knot set.
struct KnotFit<'a> {
    xs: &'a [f64],
    y: &'a [f64],
}

impl KnotFit<'_> {
    /// Values at the sorted knot indices, which must include both ends.
    fn solve(&self, knots: &[usize]) -> Vec<f64> {
        let m = knots.len();
        let mut diag = vec![0.0; m];
        let mut off = vec![0.0; m];
        let mut rhs = vec![0.0; m];
        for i in 0..m - 1 {
            let (a, b) = (knots[i], knots[i + 1]);
            let width = self.xs[b] - self.xs[a];
            let end = if i + 1 == m - 1 { b + 1 } else { b };
            for j in a..end {
                let lam = (self.xs[j] - self.xs[a]) / width;
                diag[i] += (1.0 - lam) * (1.0 - lam);
                off[i] += lam * (1.0 - lam);
                diag[i + 1] += lam * lam;
                rhs[i] += (1.0 - lam) * self.y[j];
                rhs[i + 1] += lam * self.y[j];
            }
        }
        thomas(&diag, &off, &rhs)
    }

    /// Interpolates knot values onto every abscissa.
    fn expand(&self, knots: &[usize], v: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.xs.len()];
        for i in 0..knots.len() - 1 {
            let (a, b) = (knots[i], knots[i + 1]);
            let width = self.xs[b] - self.xs[a];
            for j in a..=b {
                let lam = (self.xs[j] - self.xs[a]) / width;
                g[j] = (1.0 - lam) * v[i] + lam * v[i + 1];
            }
        }
        g
    }

    /// Slope increments at interior knots.
    fn bends(&self, knots: &[usize], v: &[f64]) -> Vec<f64> {
        let slope = |i: usize| (v[i + 1] - v[i]) / (self.xs[knots[i + 1]] - self.xs[knots[i]]);
        (1..knots.len() - 1)
            .map(|i| slope(i) - slope(i - 1))
            .collect()
    }
}

fn thomas(diag: &[f64], off: &[f64], rhs: &[f64]) -> Vec<f64> {
    let m = diag.len();
    let mut c = vec![0.0; m];
    let mut d = vec![0.0; m];
    let mut denom = diag[0];
    c[0] = off[0] / denom;
    d[0] = rhs[0] / denom;
    for i in 1..m {
        denom = diag[i] - off[i - 1] * c[i - 1];
        c[i] = if i + 1 < m { off[i] / denom } else { 0.0 };
        d[i] = (rhs[i] - off[i - 1] * d[i - 1]) / denom;
    }
    let mut x = vec![0.0; m];
    x[m - 1] = d[m - 1];
    for i in (0..m - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    x
}

/// `Gₖ = Σⱼ₍ⱼ₎₋ₖ (tⱼ − tₖ) rⱼ` at every index, by backward accumulation.
fn directional(xs: &[f64], r: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let mut out = vec![0.0; n];
    let mut tail = 0.0;
    for k in (0..n - 1).rev() {
        tail += r[k + 1];
        out[k] = out[k + 1] + (xs[k + 1] - xs[k]) * tail;
    }
    out
}

/// Computes the discrete envelope of `path`.
///
/// Stops once `min(𝓘 − Y) ≥ −tol·scale` with `scale = max(1, max|Y|)`.
pub fn compute_envelope(path: &PathGrid, tol: f64) -> Result<EnvelopeFit> {
    if !(tol > 0.0) {
        return Err(invalid(format!("tolerance must be positive, got {tol}")));
    }
    let times = &path.times;
    let len = times.len();
    let data = path.curvature_data();
    let xs = &times[1..len - 1];
    let n = xs.len();
    let scale = path.y.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let fitter = KnotFit { xs, y: &data };
    let threshold = tol * scale / path.step;

    // Curvature of the hinge at index k: Σⱼ₍ⱼ₎₋ₖ (tⱼ − tₖ)².
    let curvature: Vec<f64> = (0..n)
        .map(|k| xs[k + 1..].iter().map(|x| (x - xs[k]) * (x - xs[k])).sum())
        .collect();

    let mut knots = vec![0, n - 1];
    let mut v = fitter.solve(&knots);
    let mut iterations = 0;
    let max_outer = 20 * n + 100;
    loop {
        let g = fitter.expand(&knots, &v);
        let r: Vec<f64> = g.iter().zip(&data).map(|(a, b)| a - b).collect();
        let dd = directional(xs, &r);
        let mut picks = Vec::new();
        let mut k = 1;
        while k < n - 1 {
            if dd[k] < -threshold {
                let mut best = k;
                while k < n - 1 && dd[k] < -threshold {
                    if dd[k] * dd[k] / curvature[k] > dd[best] * dd[best] / curvature[best] {
                        best = k;
                    }
                    k += 1;
                }
                if knots.binary_search(&best).is_err() {
                    picks.push(best);
                }
            } else {
                k += 1;
            }
        }
        if picks.is_empty() {
            let fit = assemble(path, &fitter, &knots, &v, scale, iterations);
            return Ok(fit);
        }
        iterations += 1;
        if iterations > max_outer {
            let fit = assemble(path, &fitter, &knots, &v, scale, iterations);
            return Err(Error::EnvelopeFailed {
                reason: format!("no convergence after {max_outer} knot updates"),
                last: Box::new(fit),
            });
        }

        let mut trial = knots.clone();
        trial.extend(&picks);
        trial.sort_unstable();
        // Averaging the optimal single-hinge steps decreases the objective by convexity
        // and gives every new knot a positive bend.
        let share = 1.0 / picks.len() as f64;
        let mut current: Vec<f64> = trial.iter().map(|&k| g[k]).collect();
        for &p in &picks {
            let s = -dd[p] / curvature[p] * share;
            for (c, &k) in current.iter_mut().zip(&trial) {
                if k > p {
                    *c += s * (xs[k] - xs[p]);
                }
            }
        }
        loop {
            let target = fitter.solve(&trial);
            let bends_new = fitter.bends(&trial, &target);
            if bends_new.iter().all(|&b| b >= 0.0) {
                knots = trial;
                v = target;
                break;
            }
            let bends_old = fitter.bends(&trial, &current);
            let mut step = 1.0f64;
            let mut blocking = 0;
            for (i, (&bo, &bn)) in bends_old.iter().zip(&bends_new).enumerate() {
                if bn < 0.0 {
                    let t = (bo.max(0.0) / (bo.max(0.0) - bn)).min(1.0);
                    if t < step {
                        step = t;
                        blocking = i;
                    }
                }
            }
            for (c, t) in current.iter_mut().zip(&target) {
                *c += step * (t - *c);
            }
            let after = fitter.bends(&trial, &current);
            let mut keep = vec![true; trial.len()];
            keep[blocking + 1] = false;
            for (i, &b) in after.iter().enumerate() {
                if b <= 0.0 {
                    keep[i + 1] = false;
                }
            }
            let (t2, c2): (Vec<usize>, Vec<f64>) = trial
                .iter()
                .zip(&current)
                .zip(&keep)
                .filter(|(_, &k)| k)
                .map(|((&a, &b), _)| (a, b))
                .unzip();
            trial = t2;
            current = c2;
        }
    }
}

fn assemble(
    path: &PathGrid,
    fitter: &KnotFit,
    knots: &[usize],
    v: &[f64],
    scale: f64,
    iterations: usize,
) -> EnvelopeFit {
    let times = path.times.clone();
    let len = times.len();
    let inner = fitter.expand(knots, v);
    let r: Vec<f64> = inner.iter().zip(fitter.y).map(|(a, b)| a - b).collect();
    let mut padded = vec![0.0; len];
    padded[1..len - 1].copy_from_slice(&r);
    let gap: Vec<f64> = directional(&times, &padded)
        .iter()
        .map(|d| path.step * d)
        .collect();
    let values: Vec<f64> = path.y.iter().zip(&gap).map(|(y, d)| y + d).collect();

    let mut second = vec![0.0; len];
    second[1..len - 1].copy_from_slice(&inner);
    let edge = |a: usize, b: usize, at: usize| {
        let slope = (second[b] - second[a]) / (times[b] - times[a]);
        second[a] + slope * (times[at] - times[a])
    };
    let (left, right) = (edge(1, 2, 0), edge(len - 3, len - 2, len - 1));
    second[0] = left;
    second[len - 1] = right;
    let third: Vec<f64> = (0..len - 1)
        .map(|j| (second[j + 1] - second[j]) / (times[j + 1] - times[j]))
        .collect();
    let mut first = vec![0.0; len];
    for j in 0..len {
        let (a, b) = (j.saturating_sub(1), (j + 1).min(len - 1));
        first[j] = (values[b] - values[a]) / (times[b] - times[a]);
    }
    let bends = fitter.bends(knots, v);
    let active_knots: Vec<f64> = knots[1..knots.len() - 1]
        .iter()
        .zip(&bends)
        .filter(|(_, &b)| b > 0.0)
        .map(|(&k, _)| fitter.xs[k])
        .collect();
    let complementarity = knots[1..knots.len() - 1]
        .iter()
        .zip(&bends)
        .map(|(&k, &b)| gap[k + 1] * b)
        .sum();
    EnvelopeFit {
        times,
        y: path.y.clone(),
        values,
        first,
        second,
        third,
        active_knots,
        complementarity,
        scale,
        iterations,
    }
}

/// Settings for a Monte Carlo table of `(𝓘⁽²⁾(0), 𝓘⁽³⁾(0))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableConfig {
    pub half_width: f64,
    pub step: f64,
    pub replications: usize,
    pub levels: Vec<f64>,
    pub seed: u64,
    #[serde(default = "default_tol")]
    pub tol: f64,
    /// Forces every path increment to zero.
    #[serde(default)]
    pub noiseless: bool,
}

fn default_tol() -> f64 {
    1e-12
}

impl TableConfig {
    pub fn new(replications: usize, levels: Vec<f64>, seed: u64) -> Self {
        Self {
            half_width: 6.0,
            step: 0.01,
            replications,
            levels,
            seed,
            tol: default_tol(),
            noiseless: false,
        }
    }
}

/// Monte Carlo quantiles of `𝓘⁽²⁾(0)` and `𝓘⁽³⁾(0)`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantileTable {
    pub half_width: f64,
    pub step: f64,
    pub replications: usize,
    pub seed: u64,
    pub failures: usize,
    pub levels: Vec<f64>,
    pub i2: Vec<f64>,
    pub i3: Vec<f64>,
    pub mean_abs_i2: f64,
    pub mean_abs_i3: f64,
    /// Per-replication draws in replication order; empty when read back from text.
    pub samples: Vec<(f64, f64)>,
}

/// Linear interpolation between order statistics at position `(n − 1)·p`.
pub fn type7_quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = h - lo as f64;
    if frac == 0.0 || sorted[lo] == sorted[hi] {
        return sorted[lo];
    }
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Seed of replication `index` under `seed`.
pub fn replication_seed(seed: u64, index: usize) -> u64 {
    mix(seed ^ mix(index as u64))
}

/// Simulates one path and returns `(𝓘⁽²⁾(0), 𝓘⁽³⁾(0))`.
pub fn central_derivatives(config: &TableConfig, index: usize) -> Result<(f64, f64)> {
    let path = if config.noiseless {
        PathGrid::noiseless(config.half_width, config.step)?
    } else {
        PathGrid::simulate(
            config.half_width,
            config.step,
            replication_seed(config.seed, index),
        )?
    };
    let fit = compute_envelope(&path, config.tol)?;
    Ok((fit.second_at_zero(), fit.third_at_zero()))
}

pub fn quantile_table(config: &TableConfig) -> Result<QuantileTable> {
    if config.replications == 0 {
        return Err(invalid("replications must be at least 1"));
    }
    if let Some(&bad) = config.levels.iter().find(|p| !(**p >= 0.0 && **p <= 1.0)) {
        return Err(invalid(format!("quantile level {bad} is outside [0, 1]")));
    }
    PathGrid::half_count(config.half_width, config.step)?;
    let draws: Vec<Result<(f64, f64)>> = (0..config.replications)
        .into_par_iter()
        .map(|r| central_derivatives(config, r))
        .collect();
    let samples: Vec<(f64, f64)> = draws
        .iter()
        .filter_map(|d| d.as_ref().ok().copied())
        .collect();
    let failures = config.replications - samples.len();
    if failures * 100 > config.replications || samples.is_empty() {
        return Err(Error::FailureBudget {
            failed: failures,
            total: config.replications,
        });
    }
    QuantileTable::from_samples(config, samples, failures)
}

impl QuantileTable {
    pub fn from_samples(
        config: &TableConfig,
        samples: Vec<(f64, f64)>,
        failures: usize,
    ) -> Result<Self> {
        if samples.is_empty() {
            return Err(invalid("no samples"));
        }
        let mut levels = config.levels.clone();
        levels.sort_by(f64::total_cmp);
        levels.dedup();
        let mut a: Vec<f64> = samples.iter().map(|s| s.0).collect();
        let mut b: Vec<f64> = samples.iter().map(|s| s.1).collect();
        let count = samples.len() as f64;
        let mean_abs_i2 = a.iter().map(|v| v.abs()).sum::<f64>() / count;
        let mean_abs_i3 = b.iter().map(|v| v.abs()).sum::<f64>() / count;
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        Ok(Self {
            half_width: config.half_width,
            step: config.step,
            replications: config.replications,
            seed: config.seed,
            failures,
            i2: levels.iter().map(|&p| type7_quantile(&a, p)).collect(),
            i3: levels.iter().map(|&p| type7_quantile(&b, p)).collect(),
            levels,
            mean_abs_i2,
            mean_abs_i3,
            samples,
        })
    }

    fn index_of(&self, level: f64) -> Result<usize> {
        self.levels
            .iter()
            .position(|&p| (p - level).abs() <= 1e-12)
            .ok_or(Error::MissingLevel(level))
    }

    /// Quantile of `𝓘⁽²⁾(0)` at a stored level.
    pub fn i2_at(&self, level: f64) -> Result<f64> {
        Ok(self.i2[self.index_of(level)?])
    }

    /// Quantile of `𝓘⁽³⁾(0)` at a stored level.
    pub fn i3_at(&self, level: f64) -> Result<f64> {
        Ok(self.i3[self.index_of(level)?])
    }

    /// Comma-separated table with a `#` metadata block.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("# half_width = {}\n", self.half_width));
        out.push_str(&format!("# step = {}\n", self.step));
        out.push_str(&format!("# replications = {}\n", self.replications));
        out.push_str(&format!("# seed = {}\n", self.seed));
        out.push_str(&format!("# failures = {}\n", self.failures));
        out.push_str(&format!("# mean_abs_I2 = {}\n", self.mean_abs_i2));
        out.push_str(&format!("# mean_abs_I3 = {}\n", self.mean_abs_i3));
        out.push_str("level,I2_quantile,I3_quantile\n");
        for ((p, a), b) in self.levels.iter().zip(&self.i2).zip(&self.i3) {
            out.push_str(&format!("{p},{a},{b}\n"));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut meta = std::collections::HashMap::new();
        let mut rows = Vec::new();
        let mut header = false;
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            let parse_err = |message: String| Error::Parse {
                line: idx + 1,
                message,
            };
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                if let Some((k, v)) = rest.split_once('=') {
                    meta.insert(k.trim().to_string(), v.trim().to_string());
                }
                continue;
            }
            if !header {
                if line != "level,I2_quantile,I3_quantile" {
                    return Err(parse_err(format!("unexpected header {line:?}")));
                }
                header = true;
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 3 {
                return Err(parse_err(format!("expected 3 columns, got {}", cols.len())));
            }
            let mut vals = [0.0; 3];
            for (slot, c) in vals.iter_mut().zip(&cols) {
                *slot = c
                    .trim()
                    .parse()
                    .map_err(|_| parse_err(format!("not a number: {c:?}")))?;
            }
            rows.push(vals);
        }
        if !header {
            return Err(Error::Format("missing quantile table header".into()));
        }
        let get = |k: &str| -> Result<f64> {
            meta.get(k)
                .ok_or_else(|| Error::Format(format!("missing metadata {k}")))?
                .parse()
                .map_err(|_| Error::Format(format!("bad metadata {k}")))
        };
        let table = Self {
            half_width: get("half_width")?,
            step: get("step")?,
            replications: get("replications")? as usize,
            seed: meta
                .get("seed")
                .ok_or_else(|| Error::Format("missing metadata seed".into()))?
                .parse()
                .map_err(|_| Error::Format("bad metadata seed".into()))?,
            failures: get("failures")? as usize,
            mean_abs_i2: get("mean_abs_I2")?,
            mean_abs_i3: get("mean_abs_I3")?,
            levels: rows.iter().map(|r| r[0]).collect(),
            i2: rows.iter().map(|r| r[1]).collect(),
            i3: rows.iter().map(|r| r[2]).collect(),
            samples: Vec::new(),
        };
        if table.levels.windows(2).any(|p| p[1] <= p[0]) {
            return Err(Error::Format("levels must be strictly increasing".into()));
        }
        Ok(table)
    }
}
