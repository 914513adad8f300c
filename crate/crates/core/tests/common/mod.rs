//! Brute-force reference minimizer of the convex-hazard criterion for two or three
//! observations, written without the library's solver.
//!
//! Knot locations are searched on a grid refined by golden sections. For fixed knots the
//! optimum uses at most `n − 1` basis functions, and on each such subset the criterion
//! `αᵀp − (1/n)·Σ log (Cp)ᵢ` is minimized in closed form.

#![allow(dead_code, clippy::needless_range_loop)]

#[derive(Clone, Copy)]
enum Basis {
    Constant,
    Falling(f64),
    Rising(f64),
}

impl Basis {
    fn value(self, t: f64) -> f64 {
        match self {
            Basis::Constant => 1.0,
            Basis::Falling(l) => (l - t).max(0.0),
            Basis::Rising(l) => (t - l).max(0.0),
        }
    }

    fn integral(self, x: f64) -> f64 {
        match self {
            Basis::Constant => x,
            Basis::Falling(l) if x < l => x * (l - 0.5 * x),
            Basis::Falling(l) => 0.5 * l * l,
            Basis::Rising(l) => 0.5 * (x - l).max(0.0).powi(2),
        }
    }
}

/// Minimum of the criterion over nonnegative combinations of `bases`.
fn best_combination(xs: &[f64], bases: &[Basis]) -> f64 {
    let n = xs.len() as f64;
    let alpha: Vec<f64> = bases
        .iter()
        .map(|b| xs.iter().map(|&x| b.integral(x)).sum::<f64>() / n)
        .collect();
    let inner = &xs[..xs.len() - 1];
    let c = |i: usize, j: usize| bases[j].value(inner[i]);
    let mut best = f64::INFINITY;
    for j in 0..bases.len() {
        // One basis: p = m/(n·α) with m log terms.
        let m = inner.len() as f64;
        if alpha[j] > 0.0 && (0..inner.len()).all(|i| c(i, j) > 0.0) {
            let p = m / (n * alpha[j]);
            let logs: f64 = (0..inner.len()).map(|i| (c(i, j) * p).ln()).sum();
            best = best.min(alpha[j] * p - logs / n);
        }
    }
    if inner.len() == 2 {
        for j in 0..bases.len() {
            for k in j + 1..bases.len() {
                let (a, b, cc, d) = (c(0, j), c(0, k), c(1, j), c(1, k));
                let det = a * d - b * cc;
                if det.abs() < 1e-14 {
                    continue;
                }
                // y = Cp, β = C⁻ᵀα, yᵢ = 1/(n·βᵢ).
                let beta0 = (d * alpha[j] - cc * alpha[k]) / det;
                let beta1 = (-b * alpha[j] + a * alpha[k]) / det;
                if !(beta0 > 0.0 && beta1 > 0.0) {
                    continue;
                }
                let (y0, y1) = (1.0 / (n * beta0), 1.0 / (n * beta1));
                let pj = (d * y0 - b * y1) / det;
                let pk = (-cc * y0 + a * y1) / det;
                if pj < 0.0 || pk < 0.0 {
                    continue;
                }
                best = best.min(alpha[j] * pj + alpha[k] * pk - (y0.ln() + y1.ln()) / n);
            }
        }
    }
    best
}

const GOLDEN: f64 = 0.618_033_988_749_894_8;

/// Grid scan followed by golden-section refinement around the best grid cell.
fn minimize_1d(f: &dyn Fn(f64) -> f64, lo: f64, hi: f64, grid: usize) -> f64 {
    if hi <= lo {
        return f(lo);
    }
    let pts: Vec<f64> = (0..=grid)
        .map(|i| lo + (hi - lo) * i as f64 / grid as f64)
        .collect();
    let vals: Vec<f64> = pts.iter().map(|&t| f(t)).collect();
    let (k, &v) = vals
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .unwrap();
    let mut best = v;
    let (mut a, mut b) = (pts[k.saturating_sub(1)], pts[(k + 1).min(grid)]);
    let mut x1 = b - GOLDEN * (b - a);
    let mut x2 = a + GOLDEN * (b - a);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..60 {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - GOLDEN * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + GOLDEN * (b - a);
            f2 = f(x2);
        }
        best = best.min(f1).min(f2);
    }
    best
}

/// Minimum of the criterion over the piecewise-linear shapes an optimum can take for
/// `n ∈ {2, 3}` sorted distinct positive observations.
pub fn brute_force_criterion(xs: &[f64]) -> f64 {
    let grid = 24;
    match *xs {
        [x1, x2] => {
            let rising = minimize_1d(
                &|e| best_combination(xs, &[Basis::Constant, Basis::Falling(x2), Basis::Rising(e)]),
                0.0,
                x1,
                grid,
            );
            let falling = minimize_1d(
                &|t| {
                    best_combination(
                        xs,
                        &[Basis::Constant, Basis::Rising(0.0), Basis::Falling(t)],
                    )
                },
                x1,
                x2,
                grid,
            );
            rising.min(falling)
        }
        [x1, x2, x3] => {
            let two =
                |lo1: f64, hi1: f64, lo2: f64, hi2: f64, make: &dyn Fn(f64, f64) -> Vec<Basis>| {
                    minimize_1d(
                        &|u| minimize_1d(&|v| best_combination(xs, &make(u, v)), lo2, hi2, grid),
                        lo1,
                        hi1,
                        grid,
                    )
                };
            let rising = two(0.0, x1, x1, x2, &|u, v| {
                vec![
                    Basis::Constant,
                    Basis::Falling(x3),
                    Basis::Rising(u),
                    Basis::Rising(v),
                ]
            });
            let falling = two(x1, x2, x2, x3, &|u, v| {
                vec![
                    Basis::Constant,
                    Basis::Rising(0.0),
                    Basis::Falling(u),
                    Basis::Falling(v),
                ]
            });
            let middle = two(x1, x2, x1, x2, &|u, v| {
                vec![
                    Basis::Constant,
                    Basis::Falling(x3),
                    Basis::Rising(0.0),
                    Basis::Falling(u),
                    Basis::Rising(v),
                ]
            });
            rising.min(falling).min(middle)
        }
        _ => panic!("brute force handles two or three observations"),
    }
}

/// Sorted draws from Uniform(0.1, 3) with a small linear congruential generator.
pub fn tiny_sample(n: usize, seed: u64) -> Vec<f64> {
    let mut state = seed
        .wrapping_mul(6364136223846793005)
        .wrapping_add(1442695040888963407);
    let mut v: Vec<f64> = (0..n)
        .map(|_| {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            0.1 + 2.9 * ((state >> 11) as f64 / (1u64 << 53) as f64)
        })
        .collect();
    v.sort_by(f64::total_cmp);
    v
}
