//! Maximum likelihood fit of a convex hazard by support reduction over hinge functions.

use serde::{Deserialize, Serialize};

use crate::active_set::{solve_spd, Column, Moments, NewtonOptions, Piece, Separable, WorkingSet};
use crate::characterization::{check, CharacterizationReport};
use crate::empirical::LifetimeSample;
use crate::error::{domain, invalid, Error, Result};
use crate::hazard::PiecewiseLinearHazard;

/// Stopping rules for [`fit`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub dd_tol: f64,
    pub eq_tol: f64,
    pub max_outer: usize,
    pub candidate_refinement: u32,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            dd_tol: 1e-8,
            eq_tol: 1e-8,
            max_outer: 500,
            candidate_refinement: 1,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dd_tol > 0.0 && self.eq_tol > 0.0) {
            return Err(invalid("tolerances must be positive"));
        }
        if self.max_outer == 0 || self.candidate_refinement == 0 {
            return Err(invalid(
                "max_outer and candidate_refinement must be at least 1",
            ));
        }
        Ok(())
    }
}

/// Outcome of a fit.
#[derive(Clone, Debug)]
pub struct FitResult {
    pub hazard: PiecewiseLinearHazard,
    pub criterion: f64,
    pub iterations: usize,
    pub report: CharacterizationReport,
    /// Criterion after each outer iteration.
    pub trace: Vec<f64>,
}

/// A direction `γ` for [`directional_derivative`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Probe {
    Constant,
    /// `(x − t)₊`
    Falling(f64),
    /// `(t − x)₊`
    Rising(f64),
    /// `γ = h`
    SelfScale,
}

fn hazard_at_observations(h: &PiecewiseLinearHazard, sample: &LifetimeSample) -> Result<Vec<f64>> {
    if h.domain_end() < sample.max() {
        return Err(invalid(format!(
            "hazard domain ends at {} before the largest observation {}",
            h.domain_end(),
            sample.max()
        )));
    }
    let xs = sample.values();
    xs[..xs.len() - 1].iter().map(|&x| h.eval(x)).collect()
}

/// `φ_n(h) = (1/n) Σ H(X_i) − (1/n) Σ_{i<n} log h(X_i)`.
pub fn criterion(h: &PiecewiseLinearHazard, sample: &LifetimeSample) -> Result<f64> {
    let values = hazard_at_observations(h, sample)?;
    let n = sample.len() as f64;
    if values.iter().any(|&v| v <= 0.0) {
        return Ok(f64::INFINITY);
    }
    let cum: f64 = sample
        .values()
        .iter()
        .map(|&x| h.cumhaz(x))
        .sum::<Result<f64>>()?;
    let logs: f64 = values.iter().map(|v| v.ln()).sum();
    Ok((cum - logs) / n)
}

type Curve = Box<dyn Fn(f64) -> f64>;

/// Directional derivative of `φ_n` at `h` along `probe`.
pub fn directional_derivative(
    h: &PiecewiseLinearHazard,
    sample: &LifetimeSample,
    probe: Probe,
) -> Result<f64> {
    let values = hazard_at_observations(h, sample)?;
    if values.iter().any(|&v| v <= 0.0) {
        return Err(Error::NonFiniteCriterion);
    }
    let n = sample.len() as f64;
    let xs = sample.values();
    let (prim, gamma): (Curve, Curve) = match probe {
        Probe::Constant => (Box::new(|t| t), Box::new(|_| 1.0)),
        Probe::Falling(x) => (
            Box::new(move |t: f64| {
                if t <= x {
                    t * (x - 0.5 * t)
                } else {
                    0.5 * x * x
                }
            }),
            Box::new(move |t: f64| (x - t).max(0.0)),
        ),
        Probe::Rising(x) => (
            Box::new(move |t: f64| 0.5 * (t - x).max(0.0).powi(2)),
            Box::new(move |t: f64| (t - x).max(0.0)),
        ),
        Probe::SelfScale => {
            let cum: f64 = xs.iter().map(|&x| h.cumhaz(x)).sum::<Result<f64>>()?;
            return Ok(cum / n - (n - 1.0) / n);
        }
    };
    let first: f64 = xs.iter().map(|&t| prim(t)).sum();
    let second: f64 = xs.iter().zip(&values).map(|(&t, &v)| gamma(t) / v).sum();
    Ok((first - second) / n)
}

/// `M_n(x) = (∫₀ˣ S_n)⁻¹ + (∫ₓ^∞ S_n)⁻¹`, an upper bound for any candidate satisfying the scale equation.
pub fn upper_bound(sample: &LifetimeSample, x: f64) -> Result<f64> {
    if !(x > 0.0 && x < sample.max()) {
        return Err(domain("x", x));
    }
    let left = sample.survival_integral(x)?;
    let right = sample.mean() - left;
    Ok(1.0 / left + 1.0 / right)
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Kind {
    Constant,
    Falling,
    Rising,
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Basis {
    kind: Kind,
    at: f64,
}

impl Basis {
    fn piece(&self) -> Piece {
        match self.kind {
            Kind::Constant => Piece::constant(),
            Kind::Falling => Piece::falling(self.at),
            Kind::Rising => Piece::rising(self.at),
        }
    }
}

/// `−(1/n) Σ_{i<n} log zᵢ`.
struct NegLogLik {
    n: usize,
}

impl Separable for NegLogLik {
    fn value(&self, z: &[f64]) -> f64 {
        let mut s = 0.0;
        let mut c = 0.0;
        for &v in &z[..self.n - 1] {
            if !(v > 0.0) {
                return f64::INFINITY;
            }
            let y = -v.ln() - c;
            let t = s + y;
            c = (t - s) - y;
            s = t;
        }
        s / self.n as f64
    }

    fn derivatives(&self, z: &[f64], d1: &mut [f64], d2: &mut [f64]) {
        let inv_n = 1.0 / self.n as f64;
        for i in 0..self.n - 1 {
            let u = 1.0 / z[i];
            d1[i] = -inv_n * u;
            d2[i] = inv_n * u * u;
        }
        d1[self.n - 1] = 0.0;
        d2[self.n - 1] = 0.0;
    }

    fn max_step(&self, z: &[f64], dz: &[f64]) -> f64 {
        z[..self.n - 1]
            .iter()
            .zip(dz)
            .filter(|(_, &d)| d < 0.0)
            .map(|(&v, &d)| v / -d)
            .fold(f64::INFINITY, f64::min)
    }
}

/// Everything about the sample that the fit needs repeatedly.
struct Mle<'a> {
    sample: &'a LifetimeSample,
    xs: &'a [f64],
    n: usize,
    loss: NegLogLik,
}

impl<'a> Mle<'a> {
    fn new(sample: &'a LifetimeSample) -> Self {
        Self {
            sample,
            xs: sample.values(),
            n: sample.len(),
            loss: NegLogLik { n: sample.len() },
        }
    }

    /// `(1/n) Σᵢ ∫₀^{Xᵢ} p`.
    fn linear_term(&self, b: &Basis) -> f64 {
        let s = self.sample;
        let n = self.n;
        let x = b.at;
        let total = match b.kind {
            Kind::Constant => s.prefix_sum(n),
            Kind::Rising => self.xs[s.count_le(x)..]
                .iter()
                .map(|&v| 0.5 * (v - x) * (v - x))
                .sum(),
            Kind::Falling => {
                let k = s.count_le(x);
                x * s.prefix_sum(k) - 0.5 * s.prefix_sum_sq(k) + 0.5 * (n - k) as f64 * x * x
            }
        };
        total / n as f64
    }

    /// First and second derivatives of [`Self::linear_term`] in the location.
    fn linear_term_dx(&self, b: &Basis) -> (f64, f64) {
        let s = self.sample;
        let n = self.n;
        let x = b.at;
        let k = s.count_le(x);
        let above = (n - k) as f64;
        let d1 = match b.kind {
            Kind::Constant => 0.0,
            Kind::Rising => -self.xs[k..].iter().map(|&v| v - x).sum::<f64>(),
            Kind::Falling => s.prefix_sum(k) + above * x,
        };
        (d1 / n as f64, above / n as f64)
    }

    fn column(&self, b: &Basis) -> Column {
        Column {
            piece: b.piece(),
            linear: self.linear_term(b),
            nonneg: true,
            tag: 0,
        }
    }

    fn working_set(&self, bases: &[Basis], weights: &[f64]) -> WorkingSet<'a> {
        let mut ws = WorkingSet::new(self.xs);
        for (b, &w) in bases.iter().zip(weights) {
            ws.push(self.column(b), w);
        }
        ws
    }

    fn bases_of(ws: &WorkingSet) -> Vec<Basis> {
        ws.columns
            .iter()
            .map(|c| {
                let p = c.piece;
                if p.slope == 0.0 {
                    Basis {
                        kind: Kind::Constant,
                        at: 0.0,
                    }
                } else if p.slope < 0.0 {
                    Basis {
                        kind: Kind::Falling,
                        at: p.hi,
                    }
                } else {
                    Basis {
                        kind: Kind::Rising,
                        at: p.lo,
                    }
                }
            })
            .collect()
    }

    /// Closed gap `[L, R]` of observations around `x`, and whether `x` is strictly inside it.
    fn gap(&self, x: f64) -> (f64, f64, bool) {
        let k = self.sample.count_lt(x);
        let left = if k == 0 { 0.0 } else { self.xs[k - 1] };
        let right = if k < self.n {
            self.xs[k]
        } else {
            f64::INFINITY
        };
        (left, right, x > left && x < right)
    }

    fn hazard(&self, bases: &[Basis], weights: &[f64]) -> Result<PiecewiseLinearHazard> {
        let mut a = 0.0;
        let mut dec = Vec::new();
        let mut inc = Vec::new();
        for (b, &w) in bases.iter().zip(weights) {
            match b.kind {
                Kind::Constant => a += w,
                Kind::Falling => dec.push((b.at, w)),
                Kind::Rising => inc.push((b.at, w)),
            }
        }
        PiecewiseLinearHazard::from_hinges(a, &dec, &inc, self.sample.max())
    }

    /// Most negative directional derivative over the candidate set, and the descent
    /// candidates ordered by their predicted one-dimensional Newton decrease.
    fn scan(&self, z: &[f64], refine: u32) -> (f64, Vec<(f64, Basis)>) {
        let n = self.n;
        let nf = n as f64;
        let xs = self.xs;
        let mut u0 = vec![0.0; n + 1];
        let mut u1 = vec![0.0; n + 1];
        let mut w = vec![0.0; n];
        for i in 0..n {
            let u = if i + 1 < n { 1.0 / z[i] } else { 0.0 };
            u0[i + 1] = u0[i] + u;
            u1[i + 1] = u1[i] + u * xs[i];
            w[i] = u * u / nf;
        }
        let curv = Moments::new(xs, &w, 2);
        let s = self.sample;
        let mut min_dd = f64::INFINITY;
        let mut found: Vec<(f64, Basis)> = Vec::new();
        let mut consider = |d: f64, c: f64, b: Basis| {
            min_dd = min_dd.min(d);
            if d < -1e-14 {
                found.push((0.5 * d * d / c.max(f64::MIN_POSITIVE), b));
            }
        };
        consider(
            (s.prefix_sum(n) - u0[n]) / nf,
            curv.dot(&Piece::constant(), (0, n)),
            Basis {
                kind: Kind::Constant,
                at: 0.0,
            },
        );
        let midpoints = (1u64 << refine.min(20)) - 1;
        for k in 0..n {
            let left = if k == 0 { 0.0 } else { xs[k - 1] };
            let right = xs[k];
            let m = (n - k) as f64;
            let (a1, a2) = (s.prefix_sum(k), s.prefix_sum_sq(k));
            let falling = |x: f64| (x * a1 - 0.5 * a2 + 0.5 * m * x * x - x * u0[k] + u1[k]) / nf;
            let p1 = s.prefix_sum(n) - a1;
            let p2 = s.prefix_sum_sq(n) - a2;
            let q0 = u0[n] - u0[k];
            let q1 = u1[n] - u1[k];
            let rising = |x: f64| (0.5 * m * x * x + x * (q0 - p1) + 0.5 * p2 - q1) / nf;
            let mut points = Vec::with_capacity(midpoints as usize + 2);
            points.push(((u0[k] - a1) / m).clamp(left, right));
            points.push(((p1 - q0) / m).clamp(left, right));
            for j in 1..=midpoints {
                points.push(left + (right - left) * j as f64 / (midpoints + 1) as f64);
            }
            let mut best_falling: Option<(f64, f64)> = None;
            let mut best_rising: Option<(f64, f64)> = None;
            for &x in &points {
                let df = falling(x);
                if x > 0.0 && best_falling.is_none_or(|(d, _)| df < d) {
                    best_falling = Some((df, x));
                }
                let dr = rising(x);
                if best_rising.is_none_or(|(d, _)| dr < d) {
                    best_rising = Some((dr, x));
                }
            }
            if let Some((d, x)) = best_falling {
                let p = Piece::falling(x);
                consider(
                    d,
                    curv.gram(&p, (0, k), &p, (0, k)),
                    Basis {
                        kind: Kind::Falling,
                        at: x,
                    },
                );
            }
            if let Some((d, x)) = best_rising {
                let p = Piece::rising(x);
                let r = (s.count_le(x), n);
                consider(
                    d,
                    curv.gram(&p, r, &p, r),
                    Basis {
                        kind: Kind::Rising,
                        at: x,
                    },
                );
            }
        }
        found.sort_by(|a, b| b.0.total_cmp(&a.0));
        (min_dd, found)
    }

    /// Merges same-kind hinges with no observation strictly between them.
    fn merge(&self, bases: &mut Vec<Basis>, weights: &mut Vec<f64>) -> bool {
        let mut merged_any = false;
        loop {
            let mut found = None;
            'outer: for i in 0..bases.len() {
                for j in 0..bases.len() {
                    if i == j || bases[i].kind != bases[j].kind || bases[i].kind == Kind::Constant {
                        continue;
                    }
                    let (a, b) = (bases[i].at, bases[j].at);
                    if a <= b && self.sample.count_lt(b) == self.sample.count_le(a) {
                        found = Some((i, j));
                        break 'outer;
                    }
                }
            }
            let Some((i, j)) = found else { break };
            let w = weights[i] + weights[j];
            let at = (weights[i] * bases[i].at + weights[j] * bases[j].at) / w;
            bases[i].at = at.clamp(bases[i].at, bases[j].at);
            weights[i] = w;
            bases.remove(j);
            weights.remove(j);
            merged_any = true;
        }
        merged_any
    }

    fn objective(&self, bases: &[Basis], weights: &[f64]) -> f64 {
        self.working_set(bases, weights).objective(&self.loss)
    }

    /// Moves hinges sitting exactly on an observation slightly into the adjacent gap
    /// on the side where the objective decreases.
    fn release(&self, bases: &mut [Basis], weights: &[f64]) {
        let z = self.working_set(bases, weights).fitted();
        let nf = self.n as f64;
        let top = self.sample.max();
        for b in bases.iter_mut() {
            if b.kind == Kind::Constant || self.gap(b.at).2 {
                continue;
            }
            let at = b.at;
            let below = self.sample.count_lt(at);
            let upto = self.sample.count_le(at);
            let u = |i: usize| if i + 1 < self.n { 1.0 / z[i] } else { 0.0 };
            let sum_u = |r: std::ops::Range<usize>| r.map(u).sum::<f64>() / nf;
            let (c1, _) = self.linear_term_dx(b);
            let (right, left) = match b.kind {
                Kind::Falling => (c1 - sum_u(0..upto), c1 - sum_u(0..below)),
                _ => (c1 + sum_u(upto..self.n), c1 + sum_u(below..self.n)),
            };
            let next = self.xs.get(upto).copied().unwrap_or(f64::INFINITY).min(top);
            let prev = if below == 0 { 0.0 } else { self.xs[below - 1] };
            if right < 0.0 && next > at {
                b.at = at + 1e-3 * (next - at);
            } else if left > 0.0 && at > prev && (b.kind == Kind::Rising || prev > 0.0 || at > 0.0)
            {
                b.at = at - 1e-3 * (at - prev);
            }
        }
    }

    /// Joint Newton on weights and interior knot locations.
    fn polish(&self, bases: &mut Vec<Basis>, weights: &mut Vec<f64>, max_iter: usize) {
        let n = self.n;
        for _ in 0..max_iter {
            if bases.is_empty() {
                return;
            }
            self.release(bases, weights);
            let ws = self.working_set(bases, weights);
            let z = ws.fitted();
            let f = ws.objective(&self.loss);
            let mut d1 = vec![0.0; n];
            let mut d2 = vec![0.0; n];
            self.loss.derivatives(&z, &mut d1, &mut d2);
            let m1 = Moments::new(self.xs, &d1, 1);
            let m2 = Moments::new(self.xs, &d2, 2);

            let free: Vec<usize> = (0..bases.len())
                .filter(|&j| bases[j].kind != Kind::Constant && self.gap(bases[j].at).2)
                .collect();
            let k = bases.len();
            let dim = k + free.len();
            let mut cols: Vec<Piece> = bases.iter().map(|b| b.piece()).collect();
            let mut dcols = Vec::with_capacity(free.len());
            for &j in &free {
                let at = bases[j].at;
                let q = match bases[j].kind {
                    Kind::Rising => Piece::indicator(at, f64::INFINITY, -1.0),
                    _ => Piece::indicator(f64::NEG_INFINITY, at, 1.0),
                };
                dcols.push(q);
                cols.push(Piece {
                    offset: q.offset * weights[j],
                    ..q
                });
            }
            let ranges: Vec<(usize, usize)> = cols.iter().map(|p| p.range(self.xs)).collect();
            let mut g = vec![0.0; dim];
            let mut h = vec![vec![0.0; dim]; dim];
            for a in 0..dim {
                for b in 0..=a {
                    let v = m2.gram(&cols[a], ranges[a], &cols[b], ranges[b]);
                    h[a][b] = v;
                    h[b][a] = v;
                }
            }
            for j in 0..k {
                g[j] = ws.columns[j].linear + m1.dot(&cols[j], ranges[j]);
            }
            for (f_idx, &j) in free.iter().enumerate() {
                let (c1, c2) = self.linear_term_dx(&bases[j]);
                let dq = m1.dot(&dcols[f_idx], ranges[k + f_idx]);
                let row = k + f_idx;
                g[row] = weights[j] * (c1 + dq);
                h[row][j] += c1 + dq;
                h[j][row] += c1 + dq;
                h[row][row] += weights[j] * c2;
            }

            let neg: Vec<f64> = g.iter().map(|v| -v).collect();
            let scale = (0..dim)
                .map(|i| h[i][i].abs())
                .fold(0.0, f64::max)
                .max(1e-300);
            let mut lambda = 0.0;
            let mut step = None;
            for _ in 0..30 {
                let mut hl = h.clone();
                for (i, row) in hl.iter_mut().enumerate() {
                    row[i] += lambda * (h[i][i].abs() + 1e-12 * scale);
                }
                if let Some(d) = solve_spd(&hl, &neg) {
                    let dec: f64 = -g.iter().zip(&d).map(|(a, b)| a * b).sum::<f64>();
                    if dec > 0.0 {
                        step = Some((d, dec));
                        break;
                    }
                }
                lambda = if lambda == 0.0 { 1e-8 } else { lambda * 10.0 };
            }
            let Some((d, dec)) = step else { return };
            if dec < 1e-20 {
                return;
            }

            let mut t_max = 1.0f64;
            let mut block: Option<(usize, bool)> = None;
            for j in 0..k {
                if d[j] < 0.0 {
                    let t = weights[j] / -d[j];
                    if t < t_max {
                        t_max = t;
                        block = Some((j, true));
                    }
                }
            }
            for (f_idx, &j) in free.iter().enumerate() {
                let dx = d[k + f_idx];
                let (left, right, _) = self.gap(bases[j].at);
                let room = if dx > 0.0 {
                    right - bases[j].at
                } else {
                    bases[j].at - left
                };
                if dx != 0.0 {
                    let t = room / dx.abs();
                    if t < t_max {
                        t_max = t;
                        block = Some((j, false));
                    }
                }
            }
            let tiny = dec < 1e-10 * (1.0 + f.abs());
            let mut t = t_max;
            let mut accepted = None;
            for _ in 0..60 {
                let mut nb = bases.clone();
                let mut nw = weights.clone();
                for j in 0..k {
                    nw[j] = (weights[j] + t * d[j]).max(0.0);
                }
                for (f_idx, &j) in free.iter().enumerate() {
                    let (left, right, _) = self.gap(bases[j].at);
                    nb[j].at = (bases[j].at + t * d[k + f_idx]).clamp(left, right);
                }
                if t == t_max {
                    match block {
                        Some((j, true)) => nw[j] = 0.0,
                        Some((j, false)) => {
                            let (left, right, _) = self.gap(bases[j].at);
                            let dx = d[k + free.iter().position(|&q| q == j).expect("free")];
                            nb[j].at = if dx > 0.0 { right } else { left };
                        }
                        None => {}
                    }
                }
                let ft = self.objective(&nb, &nw);
                if ft.is_finite()
                    && (ft <= f - 1e-4 * t * dec || (tiny && ft <= f + 1e-12 * (1.0 + f.abs())))
                {
                    accepted = Some((nb, nw));
                    break;
                }
                t *= 0.5;
            }
            let Some((nb, nw)) = accepted else {
                return;
            };
            *bases = nb;
            *weights = nw;
            let mut i = 0;
            while i < bases.len() {
                if weights[i] <= 0.0 {
                    bases.remove(i);
                    weights.remove(i);
                } else {
                    i += 1;
                }
            }
        }
    }

    /// Objective, self-scaling derivative, and scan results at the current iterate.
    fn survey(
        &self,
        bases: &[Basis],
        weights: &[f64],
        refine: u32,
    ) -> (f64, f64, f64, Vec<(f64, Basis)>) {
        let ws = self.working_set(bases, weights);
        let phi = ws.objective(&self.loss);
        let self_dd: f64 = ws
            .columns
            .iter()
            .zip(&ws.beta)
            .map(|(c, b)| c.linear * b)
            .sum::<f64>()
            - (self.n as f64 - 1.0) / self.n as f64;
        let (min_dd, candidates) = self.scan(&ws.fitted(), refine);
        (phi, self_dd, min_dd, candidates)
    }

    fn reoptimize(&self, bases: &mut Vec<Basis>, weights: &mut Vec<f64>) -> Result<()> {
        let mut ws = self.working_set(bases, weights);
        ws.newton(&self.loss, NewtonOptions::default())
            .ok_or(Error::NonFiniteCriterion)?;
        ws.prune();
        *bases = Self::bases_of(&ws);
        *weights = ws.beta.clone();
        Ok(())
    }

    fn run(
        &self,
        config: &SolverConfig,
        mut bases: Vec<Basis>,
        mut weights: Vec<f64>,
    ) -> Result<FitResult> {
        let tol = config.dd_tol.max(config.eq_tol);
        let mut inner_dd = 0.01 * config.dd_tol;
        let inner_eq = 0.01 * config.eq_tol;
        let refine = config.candidate_refinement;
        let mut trace = vec![self.objective(&bases, &weights)];
        let mut best: Option<FitResult> = None;
        for outer in 1..=config.max_outer {
            self.reoptimize(&mut bases, &mut weights)?;
            if self.merge(&mut bases, &mut weights) {
                self.reoptimize(&mut bases, &mut weights)?;
            }
            self.polish(&mut bases, &mut weights, 4);
            let mut state = self.survey(&bases, &weights, refine);
            let small = |phi: f64, cands: &[(f64, Basis)]| {
                cands.first().map_or(0.0, |c| c.0) <= 1e-10 * (1.0 + phi.abs())
            };
            if small(state.0, &state.3) {
                self.polish(&mut bases, &mut weights, 60);
                state = self.survey(&bases, &weights, refine);
            }
            let (phi, self_dd, min_dd, candidates) = state;
            trace.push(phi);

            let gain = candidates.first().map_or(0.0, |c| c.0);
            if min_dd >= -inner_dd && self_dd.abs() <= inner_eq && gain <= 1e-14 * (1.0 + phi.abs())
            {
                let result = self.finish(&bases, &weights, outer, tol, &trace)?;
                if result.report.passed {
                    return Ok(result);
                }
                best = Some(result);
                inner_dd *= 0.01;
                if !(min_dd < 0.0) || inner_dd < 1e-18 {
                    break;
                }
            }
            let mut added = false;
            for (_, candidate) in candidates.iter().filter(|c| !bases.contains(&c.1)).take(8) {
                let mut ws = self.working_set(&bases, &weights);
                if ws.add_with_line_search(&self.loss, self.column(candidate)) > 0.0 {
                    bases = Self::bases_of(&ws);
                    weights = ws.beta.clone();
                    added = true;
                    break;
                }
            }
            if !added {
                let result = self.finish(&bases, &weights, outer, tol, &trace)?;
                if result.report.passed {
                    return Ok(result);
                }
                best = Some(result);
                break;
            }
            if outer == config.max_outer {
                best = Some(self.finish(&bases, &weights, outer, tol, &trace)?);
            }
        }
        let best = match best {
            Some(b) => b,
            None => self.finish(&bases, &weights, config.max_outer, tol, &trace)?,
        };
        Err(Error::NotConverged(Box::new(best)))
    }

    fn finish(
        &self,
        bases: &[Basis],
        weights: &[f64],
        iterations: usize,
        tol: f64,
        trace: &[f64],
    ) -> Result<FitResult> {
        let hazard = self.hazard(bases, weights)?;
        let criterion = criterion(&hazard, self.sample)?;
        let report = check(&hazard, self.sample, tol)?;
        Ok(FitResult {
            hazard,
            criterion,
            iterations,
            report,
            trace: trace.to_vec(),
        })
    }
}

/// Fits the convex-hazard MLE starting from the constant hazard.
pub fn fit(sample: &LifetimeSample, config: &SolverConfig) -> Result<FitResult> {
    config.validate()?;
    if sample.len() == 1 {
        return degenerate(sample, config);
    }
    let mle = Mle::new(sample);
    let n = sample.len() as f64;
    let a0 = (n - 1.0) / sample.prefix_sum(sample.len());
    mle.run(
        config,
        vec![Basis {
            kind: Kind::Constant,
            at: 0.0,
        }],
        vec![a0],
    )
}

/// Fits the MLE starting from the hinge set of `start`, rescaled to satisfy the scale equation.
pub fn fit_from(
    sample: &LifetimeSample,
    config: &SolverConfig,
    start: &PiecewiseLinearHazard,
) -> Result<FitResult> {
    config.validate()?;
    if sample.len() == 1 {
        return degenerate(sample, config);
    }
    let mle = Mle::new(sample);
    let mut bases = Vec::new();
    let mut weights = Vec::new();
    if start.intercept() > 0.0 {
        bases.push(Basis {
            kind: Kind::Constant,
            at: 0.0,
        });
        weights.push(start.intercept());
    }
    for k in start.dec_knots() {
        bases.push(Basis {
            kind: Kind::Falling,
            at: k.location.min(sample.max()),
        });
        weights.push(k.weight);
    }
    for k in start.inc_knots() {
        if k.location < sample.max() {
            bases.push(Basis {
                kind: Kind::Rising,
                at: k.location,
            });
            weights.push(k.weight);
        }
    }
    let ws = mle.working_set(&bases, &weights);
    let z = ws.fitted();
    if z[..z.len() - 1].iter().any(|&v| !(v > 0.0)) {
        return Err(invalid("starting hazard vanishes at an observation"));
    }
    let mean_cum: f64 = ws
        .columns
        .iter()
        .zip(&ws.beta)
        .map(|(c, b)| c.linear * b)
        .sum();
    let n = sample.len() as f64;
    let c = (n - 1.0) / (n * mean_cum);
    for w in &mut weights {
        *w *= c;
    }
    mle.run(config, bases, weights)
}

fn degenerate(sample: &LifetimeSample, config: &SolverConfig) -> Result<FitResult> {
    let hazard = PiecewiseLinearHazard::constant(0.0, sample.max())?;
    let report = check(&hazard, sample, config.dd_tol.max(config.eq_tol))?;
    Ok(FitResult {
        hazard,
        criterion: 0.0,
        iterations: 0,
        report,
        trace: vec![0.0],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hazard::{HsDistribution, Knot};
    use proptest::prelude::*;

    const SQRT2: f64 = std::f64::consts::SQRT_2;

    fn s12() -> LifetimeSample {
        LifetimeSample::new(vec![1.0, 2.0]).unwrap()
    }

    fn ramp() -> PiecewiseLinearHazard {
        PiecewiseLinearHazard::new(
            0.0,
            vec![],
            vec![Knot {
                location: 1.0 - 1.0 / SQRT2,
                weight: 2.0 - SQRT2,
            }],
            2.0,
        )
        .unwrap()
    }

    #[test]
    fn criterion_values() {
        let s = s12();
        let third = PiecewiseLinearHazard::constant(1.0 / 3.0, 2.0).unwrap();
        assert!((criterion(&third, &s).unwrap() - (0.5 - 0.5 * (1.0f64 / 3.0).ln())).abs() < 1e-15);
        let oracle = 0.5 - 0.5 * (SQRT2 - 1.0).ln();
        assert!((criterion(&ramp(), &s).unwrap() - oracle).abs() < 1e-15);
        assert!((oracle - 0.9406868).abs() < 1e-7);
        let zero_at_one = PiecewiseLinearHazard::new(
            0.0,
            vec![],
            vec![Knot {
                location: 1.0,
                weight: 1.0,
            }],
            2.0,
        )
        .unwrap();
        assert_eq!(criterion(&zero_at_one, &s).unwrap(), f64::INFINITY);
        let short = PiecewiseLinearHazard::constant(1.0, 1.5).unwrap();
        assert!(criterion(&short, &s).is_err());
    }

    #[test]
    fn directional_derivatives_at_ramp() {
        let s = s12();
        let h = ramp();
        let c = directional_derivative(&h, &s, Probe::Constant).unwrap();
        assert!((c - 0.5 * (3.0 - 1.0 / (SQRT2 - 1.0))).abs() < 1e-15);
        assert!((c - 0.2928932).abs() < 1e-7);
        assert!(
            directional_derivative(&h, &s, Probe::Rising(1.0 - 1.0 / SQRT2))
                .unwrap()
                .abs()
                < 1e-15
        );
        assert!(
            directional_derivative(&h, &s, Probe::SelfScale)
                .unwrap()
                .abs()
                < 1e-15
        );
    }

    #[test]
    fn upper_bound_values() {
        let s = s12();
        assert_eq!(upper_bound(&s, 1.0).unwrap(), 3.0);
        assert!(ramp().eval(1.0).unwrap() <= 3.0);
        assert!(upper_bound(&s, 1e-12).unwrap() > 1e11);
        assert!(upper_bound(&s, 0.0).is_err());
        assert!(upper_bound(&s, 2.0).is_err());
    }

    #[test]
    fn closed_form_two_point_fit() {
        let fit = fit(&s12(), &SolverConfig::default()).unwrap();
        let h = &fit.hazard;
        assert_eq!(h.intercept(), 0.0);
        assert!(h.dec_knots().is_empty());
        assert_eq!(h.inc_knots().len(), 1);
        let k = h.inc_knots()[0];
        assert!((k.location - (1.0 - 1.0 / SQRT2)).abs() < 1e-9, "{k:?}");
        assert!((k.weight - (2.0 - SQRT2)).abs() < 1e-9);
        assert!((fit.criterion - (0.5 - 0.5 * (SQRT2 - 1.0).ln())).abs() < 1e-12);
        assert!(fit.report.passed);
    }

    #[test]
    fn single_observation_gives_zero_hazard() {
        let s = LifetimeSample::new(vec![7.0]).unwrap();
        let fit = fit(&s, &SolverConfig::default()).unwrap();
        assert_eq!(
            fit.hazard,
            PiecewiseLinearHazard::constant(0.0, 7.0).unwrap()
        );
        assert_eq!(fit.criterion, 0.0);
        assert_eq!(fit.trace, vec![0.0]);
    }

    #[test]
    fn hs_sample_passes_certificate() {
        let s = HsDistribution::new(1.0, 0.0)
            .unwrap()
            .sample(100, 42)
            .unwrap();
        let fit = fit(&s, &SolverConfig::default()).unwrap();
        assert!(fit.report.passed, "{:?}", fit.report);
        let recomputed = criterion(&fit.hazard, &s).unwrap();
        assert!((recomputed - fit.criterion).abs() < 1e-12);
        for w in fit.trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
    }

    #[test]
    fn bound_holds_for_fit() {
        let s = HsDistribution::new(1.0, 0.0)
            .unwrap()
            .sample(60, 5)
            .unwrap();
        let fit = fit(&s, &SolverConfig::default()).unwrap();
        for i in 1..200 {
            let x = s.max() * i as f64 / 200.0;
            assert!(fit.hazard.eval(x).unwrap() <= upper_bound(&s, x).unwrap() * (1.0 + 1e-9));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn scale_equivariance(seed in 0u64..1000, n in 5usize..60, c in 0.2f64..5.0) {
            let s = HsDistribution::new(1.0, 0.3).unwrap().sample(n, seed).unwrap();
            let sc = LifetimeSample::new(s.values().iter().map(|x| x * c).collect()).unwrap();
            let cfg = SolverConfig::default();
            let a = fit(&s, &cfg).unwrap();
            let b = fit(&sc, &cfg).unwrap();
            for &x in &s.values()[..n - 1] {
                let lhs = b.hazard.eval(c * x).unwrap();
                let rhs = a.hazard.eval(x).unwrap() / c;
                prop_assert!((lhs - rhs).abs() <= 1e-8 * (1.0 + rhs.abs()), "{} vs {}", lhs, rhs);
            }
        }

        #[test]
        fn optimality_certificate(seed in 0u64..1000, n in 2usize..40) {
            let s = HsDistribution::new(2.0, -0.2).unwrap().sample(n, seed).unwrap();
            let cfg = SolverConfig::default();
            let f = fit(&s, &cfg).unwrap();
            let h = &f.hazard;
            prop_assert!(directional_derivative(h, &s, Probe::Constant).unwrap() >= -cfg.dd_tol);
            prop_assert!(directional_derivative(h, &s, Probe::SelfScale).unwrap().abs() <= cfg.eq_tol);
            for k in h.dec_knots() {
                prop_assert!(directional_derivative(h, &s, Probe::Falling(k.location)).unwrap().abs() <= cfg.eq_tol);
            }
            for k in h.inc_knots() {
                prop_assert!(directional_derivative(h, &s, Probe::Rising(k.location)).unwrap().abs() <= cfg.eq_tol);
            }
            for i in 0..=50 {
                let x = s.max() * i as f64 / 50.0;
                prop_assert!(directional_derivative(h, &s, Probe::Rising(x)).unwrap() >= -cfg.dd_tol);
                prop_assert!(directional_derivative(h, &s, Probe::Falling(x)).unwrap() >= -cfg.dd_tol);
            }
        }
    }
}
