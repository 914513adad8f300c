//! Damped Newton over nonnegative combinations of piecewise-affine columns.
//!
//! The objective is `c·β + Σᵢ ψᵢ(zᵢ)` with `z = Σₖ βₖ pₖ(xᵢ)` at sorted abscissae `xᵢ`.
//! Every column is affine on an interval and zero elsewhere, so gradients and Gram
//! matrices reduce to range sums of `ψ′xʳ` and `ψ″xʳ`.

/// `offset + slope·x` on the open interval `(lo, hi)`, zero elsewhere.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Piece {
    pub lo: f64,
    pub hi: f64,
    pub offset: f64,
    pub slope: f64,
}

impl Piece {
    pub const fn constant() -> Self {
        Self {
            lo: f64::NEG_INFINITY,
            hi: f64::INFINITY,
            offset: 1.0,
            slope: 0.0,
        }
    }

    pub const fn linear() -> Self {
        Self {
            lo: f64::NEG_INFINITY,
            hi: f64::INFINITY,
            offset: 0.0,
            slope: 1.0,
        }
    }

    /// `(x − at)₊`
    pub fn rising(at: f64) -> Self {
        Self {
            lo: at,
            hi: f64::INFINITY,
            offset: -at,
            slope: 1.0,
        }
    }

    /// `(at − x)₊`
    pub fn falling(at: f64) -> Self {
        Self {
            lo: f64::NEG_INFINITY,
            hi: at,
            offset: at,
            slope: -1.0,
        }
    }

    /// `c·1{lo < x < hi}`
    pub fn indicator(lo: f64, hi: f64, c: f64) -> Self {
        Self {
            lo,
            hi,
            offset: c,
            slope: 0.0,
        }
    }

    pub fn value(&self, x: f64) -> f64 {
        if x > self.lo && x < self.hi {
            self.offset + self.slope * x
        } else {
            0.0
        }
    }

    /// Index range of sorted `xs` inside the open support.
    pub fn range(&self, xs: &[f64]) -> (usize, usize) {
        let a = xs.partition_point(|&x| x <= self.lo);
        let b = xs.partition_point(|&x| x < self.hi).max(a);
        (a, b)
    }
}

/// Weighted power sums `Σ wᵢ xᵢʳ` for `r ≤ degree` over index ranges.
///
/// Prefix sums are carried in double-double form, so differences over any range stay
/// accurate even when a few weights dwarf the rest.
pub struct Moments {
    hi: Vec<Vec<f64>>,
    lo: Vec<Vec<f64>>,
}

impl Moments {
    pub fn new(xs: &[f64], w: &[f64], degree: usize) -> Self {
        let n = xs.len();
        let mut hi = vec![vec![0.0; n + 1]; degree + 1];
        let mut lo = vec![vec![0.0; n + 1]; degree + 1];
        for r in 0..=degree {
            let (mut s, mut c) = (0.0f64, 0.0f64);
            for i in 0..n {
                let term = w[i] * xs[i].powi(r as i32);
                let t = s + term;
                let bp = t - s;
                c += (s - (t - bp)) + (term - bp);
                s = t;
                hi[r][i + 1] = s;
                lo[r][i + 1] = c;
            }
        }
        Self { hi, lo }
    }

    fn over(&self, r: usize, (a, b): (usize, usize)) -> f64 {
        if a >= b {
            0.0
        } else {
            (self.hi[r][b] - self.hi[r][a]) + (self.lo[r][b] - self.lo[r][a])
        }
    }

    /// `Σ wᵢ p(xᵢ)` given the precomputed index range of `p`.
    pub fn dot(&self, p: &Piece, range: (usize, usize)) -> f64 {
        p.offset * self.over(0, range) + p.slope * self.over(1, range)
    }

    /// `Σ wᵢ p(xᵢ) q(xᵢ)`.
    pub fn gram(&self, p: &Piece, rp: (usize, usize), q: &Piece, rq: (usize, usize)) -> f64 {
        let r = (rp.0.max(rq.0), rp.1.min(rq.1));
        if r.0 >= r.1 {
            return 0.0;
        }
        p.offset * q.offset * self.over(0, r)
            + (p.offset * q.slope + p.slope * q.offset) * self.over(1, r)
            + p.slope * q.slope * self.over(2, r)
    }
}

/// `Σ βₖ pₖ(xᵢ)` at every abscissa.
pub fn combine(xs: &[f64], pieces: &[Piece], ranges: &[(usize, usize)], beta: &[f64]) -> Vec<f64> {
    let mut z = vec![0.0; xs.len()];
    for ((p, &(a, b)), &w) in pieces.iter().zip(ranges).zip(beta) {
        if w == 0.0 {
            continue;
        }
        for (zi, &x) in z[a..b].iter_mut().zip(&xs[a..b]) {
            *zi += w * (p.offset + p.slope * x);
        }
    }
    z
}

/// A separable convex function of the fitted values.
pub trait Separable {
    /// `Σ ψᵢ(zᵢ)`, or `+∞` outside the domain.
    fn value(&self, z: &[f64]) -> f64;
    /// Fills `ψ′ᵢ(zᵢ)` and `ψ″ᵢ(zᵢ)`.
    fn derivatives(&self, z: &[f64], d1: &mut [f64], d2: &mut [f64]);
    /// Supremum of `t` keeping `z + t·dz` inside the domain.
    fn max_step(&self, _z: &[f64], _dz: &[f64]) -> f64 {
        f64::INFINITY
    }
}

/// One column of the working set.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Column {
    pub piece: Piece,
    /// Coefficient of `β` in the linear part of the objective.
    pub linear: f64,
    /// Whether `β ≥ 0` is enforced.
    pub nonneg: bool,
    pub tag: usize,
}

/// Solver knobs.
#[derive(Clone, Copy, Debug)]
pub struct NewtonOptions {
    pub max_iter: usize,
    /// Stop once the Newton decrement `−g·d` falls below this.
    pub decrement_tol: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            max_iter: 200,
            decrement_tol: 1e-26,
        }
    }
}

/// Working set of columns and their weights.
#[derive(Clone, Debug)]
pub struct WorkingSet<'a> {
    xs: &'a [f64],
    pub columns: Vec<Column>,
    pub beta: Vec<f64>,
    ranges: Vec<(usize, usize)>,
}

/// Linear solve with a symmetric positive semidefinite matrix, regularized when singular.
pub fn solve_spd(h: &[Vec<f64>], g: &[f64]) -> Option<Vec<f64>> {
    let k = g.len();
    let d: Vec<f64> = (0..k)
        .map(|i| {
            if h[i][i] > 0.0 {
                1.0 / h[i][i].sqrt()
            } else {
                1.0
            }
        })
        .collect();
    let scaled: Vec<Vec<f64>> = (0..k)
        .map(|i| (0..k).map(|j| h[i][j] * d[i] * d[j]).collect())
        .collect();
    let rhs: Vec<f64> = g.iter().zip(&d).map(|(a, b)| a * b).collect();
    let mut jitter = 0.0;
    for _ in 0..12 {
        if let Some(y) = cholesky_solve(&scaled, &rhs, jitter) {
            if y.iter().all(|v| v.is_finite()) {
                return Some(y.iter().zip(&d).map(|(a, b)| a * b).collect());
            }
        }
        jitter = if jitter == 0.0 { 1e-14 } else { jitter * 100.0 };
    }
    None
}

fn cholesky_solve(h: &[Vec<f64>], g: &[f64], jitter: f64) -> Option<Vec<f64>> {
    let k = g.len();
    let mut l = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in 0..=i {
            let mut s = h[i][j];
            if i == j {
                s += jitter;
            }
            for m in 0..j {
                s -= l[i][m] * l[j][m];
            }
            if i == j {
                if !(s > 0.0) {
                    return None;
                }
                l[i][i] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    let mut y = vec![0.0; k];
    for i in 0..k {
        let s: f64 = (0..i).map(|m| l[i][m] * y[m]).sum();
        y[i] = (g[i] - s) / l[i][i];
    }
    let mut x = vec![0.0; k];
    for i in (0..k).rev() {
        let s: f64 = (i + 1..k).map(|m| l[m][i] * x[m]).sum();
        x[i] = (y[i] - s) / l[i][i];
    }
    Some(x)
}

impl<'a> WorkingSet<'a> {
    pub fn new(xs: &'a [f64]) -> Self {
        Self {
            xs,
            columns: Vec::new(),
            beta: Vec::new(),
            ranges: Vec::new(),
        }
    }

    pub fn xs(&self) -> &'a [f64] {
        self.xs
    }

    pub fn push(&mut self, column: Column, weight: f64) {
        self.ranges.push(column.piece.range(self.xs));
        self.columns.push(column);
        self.beta.push(weight);
    }

    pub fn remove(&mut self, idx: usize) {
        self.columns.remove(idx);
        self.beta.remove(idx);
        self.ranges.remove(idx);
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    /// Fitted values at the abscissae.
    pub fn fitted(&self) -> Vec<f64> {
        let pieces: Vec<Piece> = self.columns.iter().map(|c| c.piece).collect();
        combine(self.xs, &pieces, &self.ranges, &self.beta)
    }

    fn fitted_with(&self, beta: &[f64]) -> Vec<f64> {
        let pieces: Vec<Piece> = self.columns.iter().map(|c| c.piece).collect();
        combine(self.xs, &pieces, &self.ranges, beta)
    }

    fn linear_part(&self, beta: &[f64]) -> f64 {
        self.columns
            .iter()
            .zip(beta)
            .map(|(c, b)| c.linear * b)
            .sum()
    }

    /// Full objective value at the current weights.
    pub fn objective<S: Separable>(&self, obj: &S) -> f64 {
        self.linear_part(&self.beta) + obj.value(&self.fitted())
    }

    /// Drops nonnegative columns whose weight is exactly zero.
    pub fn prune(&mut self) {
        let mut i = 0;
        while i < self.len() {
            if self.columns[i].nonneg && self.beta[i] <= 0.0 {
                self.remove(i);
            } else {
                i += 1;
            }
        }
    }

    /// Adds a column and moves its weight along the one-dimensional descent direction.
    ///
    /// Returns the step taken; zero if the column does not improve the objective.
    pub fn add_with_line_search<S: Separable>(&mut self, obj: &S, column: Column) -> f64 {
        let z = self.fitted();
        let range = column.piece.range(self.xs);
        let (a, b) = range;
        let p: Vec<f64> = (a..b).map(|i| column.piece.value(self.xs[i])).collect();
        let mut zz = z.clone();
        let mut d1 = vec![0.0; z.len()];
        let mut d2 = vec![0.0; z.len()];
        let slope_at = |zz: &[f64], d1: &mut [f64], d2: &mut [f64]| {
            obj.derivatives(zz, d1, d2);
            let g: f64 = column.linear + (a..b).zip(&p).map(|(i, pi)| d1[i] * pi).sum::<f64>();
            let h: f64 = (a..b).zip(&p).map(|(i, pi)| d2[i] * pi * pi).sum();
            (g, h)
        };
        let (g0, _) = slope_at(&zz, &mut d1, &mut d2);
        if !(g0 < 0.0) {
            return 0.0;
        }
        let mut dz = vec![0.0; z.len()];
        for (i, pi) in (a..b).zip(&p) {
            dz[i] = *pi;
        }
        let cap = obj.max_step(&z, &dz);
        let (mut lo, mut hi) = (0.0f64, if cap.is_finite() { cap } else { f64::INFINITY });
        let mut s = 0.0;
        let (mut g, mut h) = (g0, 0.0);
        for _ in 0..100 {
            if h == 0.0 {
                let (_, hh) = slope_at(&zz, &mut d1, &mut d2);
                h = hh;
            }
            let mut next = if h > 0.0 { s - g / h } else { f64::INFINITY };
            if !(next > lo && next < hi) {
                next = if hi.is_finite() {
                    0.5 * (lo + hi)
                } else {
                    2.0 * s.max(1e-3)
                };
            }
            for (i, pi) in (a..b).zip(&p) {
                zz[i] = z[i] + next * pi;
            }
            let (gn, hn) = slope_at(&zz, &mut d1, &mut d2);
            if gn < 0.0 {
                lo = next;
            } else {
                hi = next;
            }
            let done = (next - s).abs() <= 1e-15 * next.abs() || gn == 0.0;
            s = next;
            g = gn;
            h = hn;
            if done || (hi - lo) <= 1e-15 * hi.max(1e-300) {
                break;
            }
        }
        if s.is_finite() && s > 0.0 {
            let value_new = obj.value(&zz) + column.linear * s;
            let value_old = obj.value(&z);
            if value_new.is_finite() && value_new <= value_old {
                self.push(column, s);
                return s;
            }
        }
        0.0
    }

    /// Gradient and Hessian of the objective with respect to the weights.
    pub fn gradient_hessian<S: Separable>(&self, obj: &S, z: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
        let n = self.xs.len();
        let mut d1 = vec![0.0; n];
        let mut d2 = vec![0.0; n];
        obj.derivatives(z, &mut d1, &mut d2);
        let m1 = Moments::new(self.xs, &d1, 1);
        let m2 = Moments::new(self.xs, &d2, 2);
        let k = self.len();
        let g: Vec<f64> = (0..k)
            .map(|i| self.columns[i].linear + m1.dot(&self.columns[i].piece, self.ranges[i]))
            .collect();
        let mut h = vec![vec![0.0; k]; k];
        for i in 0..k {
            for j in 0..=i {
                let v = m2.gram(
                    &self.columns[i].piece,
                    self.ranges[i],
                    &self.columns[j].piece,
                    self.ranges[j],
                );
                h[i][j] = v;
                h[j][i] = v;
            }
        }
        (g, h)
    }

    /// Minimizes over the current columns, dropping nonnegative columns that hit zero.
    ///
    /// Returns the number of Newton iterations, or `None` if a step could not be computed.
    pub fn newton<S: Separable>(&mut self, obj: &S, opts: NewtonOptions) -> Option<usize> {
        let mut z = self.fitted();
        let mut f = self.linear_part(&self.beta) + obj.value(&z);
        for iter in 0..opts.max_iter {
            if self.is_empty() {
                return Some(iter);
            }
            let (g, h) = self.gradient_hessian(obj, &z);
            let neg: Vec<f64> = g.iter().map(|v| -v).collect();
            let d = solve_spd(&h, &neg)?;
            let decrement: f64 = -g.iter().zip(&d).map(|(a, b)| a * b).sum::<f64>();
            if !(decrement > opts.decrement_tol) {
                return Some(iter);
            }
            let mut t_bound = f64::INFINITY;
            let mut blocking = None;
            for (i, (c, (&b, &di))) in self
                .columns
                .iter()
                .zip(self.beta.iter().zip(&d))
                .enumerate()
            {
                if c.nonneg && di < 0.0 {
                    let t = b / -di;
                    if t < t_bound {
                        t_bound = t;
                        blocking = Some(i);
                    }
                }
            }
            if t_bound <= 0.0 {
                let i = blocking.expect("bound implies a blocking column");
                self.beta[i] = 0.0;
                self.remove(i);
                z = self.fitted();
                f = self.linear_part(&self.beta) + obj.value(&z);
                continue;
            }
            let dz = self.fitted_with(&d);
            let feas = obj.max_step(&z, &dz);
            let mut t = 1.0f64.min(t_bound);
            if feas <= t {
                t = 0.95 * feas;
            }
            let scale = 1.0 + f.abs();
            let tiny = decrement < 1e-10 * scale;
            let mut accepted = None;
            for _ in 0..60 {
                let trial: Vec<f64> = self.beta.iter().zip(&d).map(|(b, di)| b + t * di).collect();
                let zt: Vec<f64> = z.iter().zip(&dz).map(|(a, b)| a + t * b).collect();
                let ft = self.linear_part(&trial) + obj.value(&zt);
                if ft.is_finite()
                    && (ft <= f - 1e-4 * t * decrement || (tiny && ft <= f + 1e-12 * scale))
                {
                    accepted = Some((trial, zt, ft));
                    break;
                }
                t *= 0.5;
            }
            let Some((trial, zt, ft)) = accepted else {
                return Some(iter);
            };
            self.beta = trial;
            z = zt;
            f = ft;
            if t == t_bound {
                let i = blocking.expect("bound implies a blocking column");
                self.beta[i] = 0.0;
                self.remove(i);
                z = self.fitted();
                f = self.linear_part(&self.beta) + obj.value(&z);
            }
        }
        Some(opts.max_iter)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    struct LeastSquares {
        y: Vec<f64>,
    }

    impl Separable for LeastSquares {
        fn value(&self, z: &[f64]) -> f64 {
            0.5 * z
                .iter()
                .zip(&self.y)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
        }
        fn derivatives(&self, z: &[f64], d1: &mut [f64], d2: &mut [f64]) {
            for i in 0..z.len() {
                d1[i] = z[i] - self.y[i];
                d2[i] = 1.0;
            }
        }
    }

    fn col(piece: Piece, nonneg: bool, tag: usize) -> Column {
        Column {
            piece,
            linear: 0.0,
            nonneg,
            tag,
        }
    }

    #[test]
    fn moments_match_direct_sums() {
        let xs = [0.1, 0.4, 0.7, 1.3, 2.0];
        let w = [1.0, 2.0, 0.5, 3.0, 1.5];
        let m = Moments::new(&xs, &w, 2);
        let pieces = [
            Piece::constant(),
            Piece::rising(0.5),
            Piece::falling(1.5),
            Piece::indicator(0.2, 1.5, -1.0),
        ];
        for p in &pieces {
            let r = p.range(&xs);
            let direct: f64 = xs.iter().zip(&w).map(|(x, wi)| wi * p.value(*x)).sum();
            assert!((m.dot(p, r) - direct).abs() < 1e-14);
            for q in &pieces {
                let rq = q.range(&xs);
                let direct: f64 = xs
                    .iter()
                    .zip(&w)
                    .map(|(x, wi)| wi * p.value(*x) * q.value(*x))
                    .sum();
                assert!((m.gram(p, r, q, rq) - direct).abs() < 1e-13);
            }
        }
        let beta = [0.5, 2.0, 1.0, 3.0];
        let ranges: Vec<_> = pieces.iter().map(|p| p.range(&xs)).collect();
        let z = combine(&xs, &pieces, &ranges, &beta);
        for (i, x) in xs.iter().enumerate() {
            let direct: f64 = pieces.iter().zip(&beta).map(|(p, b)| b * p.value(*x)).sum();
            assert!((z[i] - direct).abs() < 1e-14);
        }
    }

    #[test]
    fn unconstrained_least_squares_line() {
        let xs: Vec<f64> = (0..20).map(|i| i as f64 / 19.0).collect();
        let y: Vec<f64> = xs.iter().map(|x| 1.5 - 0.25 * x).collect();
        let obj = LeastSquares { y };
        let mut ws = WorkingSet::new(&xs);
        ws.push(col(Piece::constant(), false, 0), 0.0);
        ws.push(col(Piece::linear(), false, 1), 0.0);
        ws.newton(&obj, NewtonOptions::default()).unwrap();
        assert!((ws.beta[0] - 1.5).abs() < 1e-12 && (ws.beta[1] + 0.25).abs() < 1e-12);
    }

    #[test]
    fn nonnegativity_drops_columns() {
        let xs: Vec<f64> = (0..30).map(|i| i as f64 / 29.0).collect();
        let y: Vec<f64> = xs.iter().map(|x| 2.0 - x).collect();
        let obj = LeastSquares { y };
        let mut ws = WorkingSet::new(&xs);
        ws.push(col(Piece::constant(), true, 0), 1.0);
        ws.push(col(Piece::rising(0.0), true, 1), 1.0);
        ws.newton(&obj, NewtonOptions::default()).unwrap();
        assert_eq!(ws.len(), 1);
        assert_eq!(ws.columns[0].tag, 0);
        assert!((ws.beta[0] - 1.5).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn line_search_decreases_objective(ys in prop::collection::vec(-2.0f64..2.0, 10), at in 0.0f64..1.0) {
            let xs: Vec<f64> = (0..10).map(|i| i as f64 / 9.0).collect();
            let obj = LeastSquares { y: ys };
            let mut ws = WorkingSet::new(&xs);
            ws.push(col(Piece::constant(), false, 0), 0.0);
            ws.newton(&obj, NewtonOptions::default()).unwrap();
            let before = ws.objective(&obj);
            ws.add_with_line_search(&obj, col(Piece::rising(at), true, 1));
            prop_assert!(ws.objective(&obj) <= before + 1e-15);
        }
    }
}
