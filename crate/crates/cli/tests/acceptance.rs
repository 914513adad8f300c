//! End-to-end acceptance run. Prints one PASS or FAIL line per criterion and exits
//! non-zero if any criterion fails.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::collections::BTreeMap;
use std::f64::consts::SQRT_2;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use convex_hazard::asymptotics::{
    hellinger_coefficient, limit_constants, minimax_perturbation, LocalParams, QuadraticHazard,
    SmoothHazard,
};
use convex_hazard::solver::fit_from;
use convex_hazard::{
    check, compute_envelope, fit, HsDistribution, LifetimeSample, PathGrid, PiecewiseLinearHazard,
    SolverConfig,
};

const BIN: &str = env!("CARGO_BIN_EXE_convexhaz");

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        passed,
        detail: detail.into(),
    }
}

fn scratch() -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    std::fs::create_dir_all(&dir).expect("scratch directory");
    dir
}

struct Run {
    code: i32,
    stdout: String,
    elapsed: Duration,
}

fn convexhaz(args: &[&str]) -> Run {
    let start = Instant::now();
    let out = Command::new(BIN).args(args).output().expect("binary runs");
    Run {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        elapsed: start.elapsed(),
    }
}

fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

fn stdout_value(run: &Run, key: &str) -> f64 {
    run.stdout
        .lines()
        .find_map(|l| {
            l.strip_prefix(key)
                .and_then(|r| r.trim().strip_prefix('='))
                .map(|v| v.trim().parse().unwrap())
        })
        .unwrap_or(f64::NAN)
}

/// Slopes and rows of an experiment summary.
struct Summary {
    slopes: BTreeMap<String, f64>,
    rows: Vec<BTreeMap<String, f64>>,
}

fn parse_summary(text: &str) -> Summary {
    let mut slopes = BTreeMap::new();
    let mut header: Vec<String> = Vec::new();
    let mut rows = Vec::new();
    for line in text.lines() {
        if let Some(rest) = line.strip_prefix("# slope ") {
            let (name, value) = rest.split_once(" = ").unwrap();
            let value = value.split_whitespace().next().unwrap().parse().unwrap();
            slopes.insert(name.to_string(), value);
        } else if line.starts_with('#') {
            continue;
        } else if header.is_empty() {
            header = line.split(',').map(String::from).collect();
        } else {
            rows.push(
                header
                    .iter()
                    .cloned()
                    .zip(line.split(',').map(|v| v.parse().unwrap_or(f64::NAN)))
                    .collect(),
            );
        }
    }
    Summary { slopes, rows }
}

fn run_experiment(name: &str, spec: &str, threads: &str) -> (Run, Summary) {
    let dir = scratch();
    let spec_path = dir.join(format!("{name}.toml"));
    let out_path = dir.join(format!("{name}.csv"));
    std::fs::write(&spec_path, spec).unwrap();
    let run = convexhaz(&[
        "--threads",
        threads,
        "experiment",
        "--spec",
        path_str(&spec_path),
        "--output",
        path_str(&out_path),
    ]);
    let text = std::fs::read_to_string(&out_path).unwrap_or_default();
    (run, parse_summary(&text))
}

fn closed_form_two_points() -> Verdict {
    let dir = scratch();
    let input = dir.join("two.txt");
    let output = dir.join("two.toml");
    std::fs::write(&input, "1\n2\n").unwrap();
    let run = convexhaz(&[
        "fit",
        "--input",
        path_str(&input),
        "--output",
        path_str(&output),
    ]);
    let h = PiecewiseLinearHazard::from_toml(&std::fs::read_to_string(&output).unwrap()).unwrap();
    let crit = stdout_value(&run, "criterion");
    let knot = h.inc_knots().first().copied();
    let shape = h.intercept().abs() < 1e-6
        && h.dec_knots().iter().all(|k| k.weight.abs() < 1e-6)
        && h.inc_knots().len() == 1
        && knot.is_some_and(|k| {
            (k.location - (1.0 - 1.0 / SQRT_2)).abs() < 1e-6
                && (k.weight - (2.0 - SQRT_2)).abs() < 1e-6
        });
    let checked = convexhaz(&[
        "check",
        "--input",
        path_str(&input),
        "--estimate",
        path_str(&output),
        "--tol",
        "1e-8",
    ]);
    let ok = run.code == 0
        && shape
        && (crit - 0.9406868).abs() < 1e-6
        && checked.code == 0
        && run.elapsed.as_secs_f64() < 1.0;
    verdict(
        ok,
        format!(
            "knot {:?}, intercept {:e}, criterion {crit}, check exit {}, {:.3}s",
            knot.map(|k| (k.location, k.weight)),
            h.intercept(),
            checked.code,
            run.elapsed.as_secs_f64()
        ),
    )
}

fn single_observation() -> Verdict {
    let dir = scratch();
    let input = dir.join("one.txt");
    let output = dir.join("one.toml");
    std::fs::write(&input, "7\n").unwrap();
    let run = convexhaz(&[
        "fit",
        "--input",
        path_str(&input),
        "--output",
        path_str(&output),
    ]);
    let h = PiecewiseLinearHazard::from_toml(&std::fs::read_to_string(&output).unwrap()).unwrap();
    let zero = h.intercept() == 0.0 && h.dec_knots().is_empty() && h.inc_knots().is_empty();
    let crit = stdout_value(&run, "criterion");
    verdict(
        run.code == 0 && zero && crit == 0.0,
        format!("zero hazard {zero}, criterion {crit}"),
    )
}

fn certificates() -> Verdict {
    let start = Instant::now();
    let d = HsDistribution::new(1.0, 0.0).unwrap();
    let mut failed = Vec::new();
    let mut worst_scale = 0.0f64;
    for i in 0..200usize {
        let n = 5 + (i * 195) / 199;
        let s = d.sample(n, 1000 + i as u64).unwrap();
        match fit(&s, &SolverConfig::default()).and_then(|r| check(&r.hazard, &s, 1e-6)) {
            Ok(rep) => {
                worst_scale = worst_scale.max(rep.scale_residual.abs());
                if !rep.passed || rep.scale_residual.abs() >= 1e-8 {
                    failed.push(i);
                }
            }
            Err(_) => failed.push(i),
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        failed.is_empty() && secs < 120.0,
        format!(
            "{} of 200 failed {failed:?}, worst scale residual {worst_scale:e}, {secs:.1}s",
            failed.len()
        ),
    )
}

fn uniqueness() -> Verdict {
    let d = HsDistribution::new(1.0, 0.0).unwrap();
    let config = SolverConfig::default();
    let mut worst = 0.0f64;
    let mut errors = 0;
    for i in 0..50u64 {
        let n = 20 + 4 * i as usize;
        let s = d.sample(n, 5000 + i).unwrap();
        let end = s.max();
        let start = PiecewiseLinearHazard::from_hinges(
            0.2,
            &[(0.25 * end, 3.0), (0.5 * end, 1.0)],
            &[(0.75 * end, 4.0)],
            end,
        )
        .unwrap();
        match (fit(&s, &config), fit_from(&s, &config, &start)) {
            (Ok(a), Ok(b)) => {
                for &x in &s.values()[..n - 1] {
                    worst =
                        worst.max((a.hazard.eval(x).unwrap() - b.hazard.eval(x).unwrap()).abs());
                }
            }
            _ => errors += 1,
        }
    }
    verdict(
        errors == 0 && worst < 1e-6,
        format!("max disagreement {worst:e}, {errors} solver errors"),
    )
}

fn brute_force() -> Verdict {
    let mut worst = 0.0f64;
    for seed in 0..25u64 {
        let xs = common::tiny_sample(2 + (seed % 2) as usize, 77 + seed);
        let s = LifetimeSample::new(xs.clone()).unwrap();
        let solved = fit(&s, &SolverConfig::default())
            .map(|r| r.criterion)
            .unwrap_or(f64::NAN);
        let gap = (solved - common::brute_force_criterion(&xs)).abs();
        worst = if gap.is_nan() {
            f64::INFINITY
        } else {
            worst.max(gap)
        };
    }
    verdict(worst < 1e-7, format!("max |solver − oracle| = {worst:e}"))
}

const HS_TRUTH: &str = "[truth]\nfamily = \"hs\"\na = 1.0\nb = 0.0\n";

fn consistency() -> Verdict {
    let spec = format!("kind = \"consistency\"\nsizes = [100, 1000, 10000]\nreplications = 50\nseed = 2024\ndelta = 0.1\n{HS_TRUTH}");
    let (run, summary) = run_experiment("consistency", &spec, "1");
    let m: Vec<f64> = summary.rows.iter().map(|r| r["sup_error_median"]).collect();
    let secs = run.elapsed.as_secs_f64();
    let ok = run.code == 0
        && m.len() == 3
        && m.windows(2).all(|w| w[1] < w[0])
        && m[2] < 0.5 * m[0]
        && secs < 600.0;
    verdict(ok, format!("median sup-errors {m:?}, {secs:.0}s"))
}

fn rate_sweep() -> (Verdict, Verdict) {
    let spec = format!(
        "kind = \"rate\"\nsizes = [500, 1000, 2000, 4000, 8000, 16000, 32000]\nreplications = 200\nseed = 2025\nx0 = 0.25\n\
         {HS_TRUTH}[bands]\nslope = [-0.5, -0.3]\nderivative_slope = [-0.3, -0.1]\ngap_slope = [-0.3, -0.1]\n"
    );
    let (run, summary) = run_experiment("rate", &spec, "1");
    let secs = run.elapsed.as_secs_f64();
    let slope = |k: &str| summary.slopes.get(k).copied().unwrap_or(f64::NAN);
    let (e, d, g) = (slope("error"), slope("derivative_error"), slope("gap"));
    let within = |v: f64, lo: f64, hi: f64| v >= lo && v <= hi;
    let distances: Vec<f64> = summary
        .rows
        .iter()
        .map(|r| r["knot_distance_median"])
        .collect();
    let rate = verdict(
        within(e, -0.5, -0.3) && within(d, -0.3, -0.1) && secs < 1800.0,
        format!("error slope {e:.4}, derivative slope {d:.4}, {secs:.0}s"),
    );
    let gap = verdict(
        within(g, -0.3, -0.1),
        format!("gap slope {g:.4}; median nearest-knot distance {distances:.4?}"),
    );
    (rate, gap)
}

fn envelope() -> Verdict {
    let start = Instant::now();
    let noiseless = compute_envelope(&PathGrid::noiseless(6.0, 0.01).unwrap(), 1e-12).unwrap();
    let above = noiseless
        .values
        .iter()
        .zip(&noiseless.y)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let (z2, z3) = (
        noiseless.second_at_zero().abs(),
        noiseless.third_at_zero().abs(),
    );
    let mut worst_residual = 0.0f64;
    let mut window_gap = 0.0f64;
    let mut errors = 0;
    for seed in 0..100u64 {
        let wide = compute_envelope(&PathGrid::simulate(6.0, 0.01, seed).unwrap(), 1e-12);
        let narrow = compute_envelope(&PathGrid::simulate(4.0, 0.01, seed).unwrap(), 1e-12);
        match (wide, narrow) {
            (Ok(w), Ok(n)) => {
                worst_residual = worst_residual
                    .max(w.residuals().worst())
                    .max(n.residuals().worst());
                window_gap = window_gap.max((w.second_at_zero() - n.second_at_zero()).abs());
            }
            _ => errors += 1,
        }
    }
    let mut invariance = 0.0f64;
    for seed in 0..5u64 {
        let path = PathGrid::simulate(6.0, 0.01, 300 + seed).unwrap();
        let base = compute_envelope(&path, 1e-12).unwrap();
        let moved = compute_envelope(&path.shifted(-1.5, 2.5), 1e-12).unwrap();
        invariance = invariance
            .max((moved.second_at_zero() - base.second_at_zero()).abs())
            .max((moved.third_at_zero() - base.third_at_zero()).abs());
        let (a, b) = (1.25, 0.8);
        let scaled = compute_envelope(&path.rescaled(a, b).unwrap(), 1e-12).unwrap();
        let i2 = base.second_at_zero() * b * a * a;
        let i3 = base.third_at_zero() * b * a.powi(3);
        invariance = invariance
            .max((scaled.second_at_zero() - i2).abs() / (1.0 + i2.abs()))
            .max((scaled.third_at_zero() - i3).abs() / (1.0 + i3.abs()));
    }
    let secs = start.elapsed().as_secs_f64();
    let ok = above < 1e-8
        && z2 < 1e-8
        && z3 < 1e-8
        && errors == 0
        && worst_residual <= 1e-6
        && window_gap < 1e-3
        && invariance < 1e-8
        && secs < 300.0;
    verdict(
        ok,
        format!(
            "noiseless |I−Y| {above:e}, |I2(0)| {z2:e}, |I3(0)| {z3:e}; worst residual {worst_residual:e}; \
             c=4 vs c=6 {window_gap:e}; invariance {invariance:e}; {secs:.1}s"
        ),
    )
}

fn monotone_to_one(r: &[f64]) -> bool {
    r.windows(2)
        .all(|w| (1.0 - w[1]).abs() < (1.0 - w[0]).abs())
}

fn minimax() -> Verdict {
    let q = QuadraticHazard {
        alpha: 1.0,
        beta: 1.0,
        center: 1.0,
    };
    let local = LocalParams::from_smooth(&q, 1.0).unwrap();
    let nu0 = hellinger_coefficient(&local);
    let mut c_err = 0.0f64;
    let mut residual = 0.0f64;
    let mut quad_gap = 0.0f64;
    for eps in [0.04, 0.02, 0.01] {
        let p = minimax_perturbation(&q, 1.0, eps).unwrap();
        c_err = c_err.max((p.c_eps() - 3.0).abs());
        residual = residual.max(p.continuity_residual());
        quad_gap = quad_gap
            .max((-p.t1_gap() / (0.5 * local.hpp * eps * eps) - 1.0).abs())
            .max((p.t2_gap() / (local.hpp * eps) - 1.0).abs());
    }
    let p = minimax_perturbation(&q, 1.0, 0.01).unwrap();
    let ratio = p.hellinger_sq(1e-20).unwrap() / 0.01f64.powi(5) / nu0;

    let hs = HsDistribution::new(1.0, 0.0).unwrap();
    let hs_local = LocalParams::from_smooth(&hs, 0.25).unwrap();
    let eps = [0.04, 0.02, 0.01, 0.005];
    let runs: Vec<_> = eps
        .iter()
        .map(|&e| minimax_perturbation(&hs, 0.25, e).unwrap())
        .collect();
    let t1: Vec<f64> = runs
        .iter()
        .zip(eps)
        .map(|(p, e)| -p.t1_gap() / (0.5 * hs_local.hpp * e * e))
        .collect();
    let t2: Vec<f64> = runs
        .iter()
        .zip(eps)
        .map(|(p, e)| p.t2_gap() / (hs_local.hpp * e))
        .collect();
    let hs_ok = monotone_to_one(&t1)
        && monotone_to_one(&t2)
        && (t1[3] - 1.0).abs() < 0.03
        && (t2[3] - 1.0).abs() < 0.03;
    let ok = c_err < 1e-12
        && residual < 1e-10
        && (ratio - 1.0).abs() < 0.05
        && (nu0 - 0.4217518).abs() < 1e-5
        && quad_gap < 1e-12
        && hs_ok;
    verdict(
        ok,
        format!(
            "quadratic: |c−3| {c_err:e}, residual {residual:e}, H²/(ν₀ε⁵) {ratio:.5}, gap ratios exact to {quad_gap:e}; \
             HS(1,0) at ε = {eps:?}: T1 {t1:.4?}, T2 {t2:.4?}"
        ),
    )
}

fn ci_machinery() -> Verdict {
    let unit = LocalParams::new(1.0, 1.0, 0.0, 24.0, 1.0).unwrap();
    let (u1, u2) = limit_constants(&unit).unwrap();
    let hs = HsDistribution::new(1.0, 0.0).unwrap();
    let e = 1e-4;
    let h = |t: f64| SmoothHazard::hazard(&hs, t);
    let fd = (h(0.25 + e) - 2.0 * h(0.25) + h(0.25 - e)) / (e * e);
    let p = LocalParams::new(0.25, h(0.25), 0.0, fd, 0.5).unwrap();
    let (c1, c2) = limit_constants(&p).unwrap();
    let constants = (u1 - 1.0).abs() < 1e-12
        && (u2 - 1.0).abs() < 1e-12
        && (c1 - 1.60549).abs() < 1e-4
        && (c2 - 1.03456).abs() < 1e-4;
    let spec = format!(
        "kind = \"coverage\"\nsizes = [2000]\nreplications = 500\nseed = 2026\nx0 = 0.25\n{HS_TRUTH}\
         [coverage]\nalpha = 0.05\ntable_replications = 2000\ntable_seed = 17\n[bands]\ncoverage = [0.91, 0.99]\n"
    );
    let (run, summary) = run_experiment("coverage", &spec, "1");
    let secs = run.elapsed.as_secs_f64();
    let coverage = summary.rows.first().map_or(f64::NAN, |r| r["covered_mean"]);
    let failures = summary.rows.first().map_or(f64::NAN, |r| r["failures"]);
    let ok = constants && run.code == 0 && (coverage - 0.95).abs() <= 0.04 && secs < 1200.0;
    verdict(
        ok,
        format!("(c1, c2) = ({c1:.6}, {c2:.6}) from h'' ≈ {fd:.6}; coverage {coverage:.3} with {failures} plug-in failures, {secs:.0}s"),
    )
}

fn identical(a: &Path, b: &Path) -> bool {
    matches!((std::fs::read(a), std::fs::read(b)), (Ok(x), Ok(y)) if x == y)
}

fn reproducibility() -> Verdict {
    let dir = scratch();
    let mut mismatches = Vec::new();
    let mut codes = Vec::new();
    let mut outputs = Vec::new();
    for threads in ["1", "3"] {
        let out = |name: &str| dir.join(format!("{name}-{threads}"));
        let sample = out("sample.txt");
        let mut run = |args: Vec<&str>| {
            let mut full = vec!["--threads", threads];
            full.extend(args);
            let r = convexhaz(&full);
            codes.push(r.code);
            r.stdout
        };
        run(vec![
            "sample",
            "--dist",
            "hs",
            "--A",
            "1",
            "--b",
            "0.2",
            "--n",
            "300",
            "--seed",
            "8",
            "--output",
            path_str(&sample),
        ]);
        let fit_out = run(vec![
            "fit",
            "--input",
            path_str(&sample),
            "--output",
            path_str(&out("fit.toml")),
        ]);
        let check_out = run(vec![
            "check",
            "--input",
            path_str(&sample),
            "--estimate",
            path_str(&out("fit.toml")),
        ]);
        run(vec![
            "envelope",
            "--half-width",
            "4",
            "--step",
            "0.01",
            "--reps",
            "200",
            "--levels",
            "0.025,0.5,0.975",
            "--seed",
            "5",
            "--output",
            path_str(&out("table.csv")),
        ]);
        let ci_out = run(vec![
            "ci",
            "--input",
            path_str(&sample),
            "--x0",
            "0.3",
            "--alpha",
            "0.05",
            "--quantiles",
            path_str(&out("table.csv")),
        ]);
        let spec = format!("kind = \"rate\"\nsizes = [100, 200]\nreplications = 12\nseed = 6\nx0 = 0.25\n{HS_TRUTH}");
        std::fs::write(out("spec.toml"), spec).unwrap();
        run(vec![
            "experiment",
            "--spec",
            path_str(&out("spec.toml")),
            "--output",
            path_str(&out("summary.csv")),
        ]);
        outputs.push((fit_out, check_out, ci_out));
    }
    for name in ["sample.txt", "fit.toml", "table.csv", "summary.csv"] {
        if !identical(
            &dir.join(format!("{name}-1")),
            &dir.join(format!("{name}-3")),
        ) {
            mismatches.push(name.to_string());
        }
    }
    if outputs[0] != outputs[1] {
        mismatches.push("stdout".into());
    }
    let ok = mismatches.is_empty() && codes.iter().all(|&c| c == 0);
    verdict(
        ok,
        format!("threads 1 vs 3: mismatches {mismatches:?}, exit codes {codes:?}"),
    )
}

fn main() {
    let filter: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let wanted = |id: u32| filter.as_deref().is_none_or(|f| f == id.to_string());
    let mut results: Vec<(u32, &str, Verdict)> = Vec::new();
    let mut record = |id: u32, name: &'static str, f: &dyn Fn() -> Verdict| {
        if wanted(id) {
            let v = f();
            println!(
                "criterion {id:>2} {name}: {} ({})",
                if v.passed { "PASS" } else { "FAIL" },
                v.detail
            );
            results.push((id, name, v));
        }
    };
    record(
        1,
        "closed-form MLE for two observations",
        &closed_form_two_points,
    );
    record(2, "single observation", &single_observation);
    record(3, "characterization certificates", &certificates);
    record(4, "uniqueness from different starts", &uniqueness);
    record(5, "brute-force equivalence", &brute_force);
    record(6, "consistency", &consistency);
    if wanted(7) || wanted(8) {
        let (rate, gap) = rate_sweep();
        for (id, name, v) in [(7, "pointwise rate", rate), (8, "touchpoint gap", gap)] {
            println!(
                "criterion {id:>2} {name}: {} ({})",
                if v.passed { "PASS" } else { "FAIL" },
                v.detail
            );
            results.push((id, name, v));
        }
    }
    let mut record = |id: u32, name: &'static str, f: &dyn Fn() -> Verdict| {
        if wanted(id) {
            let v = f();
            println!(
                "criterion {id:>2} {name}: {} ({})",
                if v.passed { "PASS" } else { "FAIL" },
                v.detail
            );
            results.push((id, name, v));
        }
    };
    record(9, "envelope", &envelope);
    record(10, "minimax calculus", &minimax);
    record(11, "confidence interval machinery", &ci_machinery);
    record(12, "reproducibility", &reproducibility);
    let failed: Vec<u32> = results
        .iter()
        .filter(|r| !r.2.passed)
        .map(|r| r.0)
        .collect();
    println!(
        "acceptance: {} of {} criteria passed",
        results.len() - failed.len(),
        results.len()
    );
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
