//! Monte Carlo experiments: consistency, pointwise rate, touchpoint gaps and interval coverage.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::asymptotics::{confidence_interval, default_window, plug_in, LocalParams, SmoothHazard};
use crate::characterization::touchpoints;
use crate::empirical::LifetimeSample;
use crate::envelope::{quantile_table, replication_seed, QuantileTable, TableConfig};
use crate::error::{invalid, Error, Result};
use crate::hazard::{HsDistribution, PiecewiseLinearHazard};
use crate::rng::mix;
use crate::solver::{fit, FitResult, SolverConfig};
use crate::stats::{log_log, SlopeFit, Spread};

/// Share of failed replications per sample size above which an experiment errors.
pub const FAILURE_BUDGET: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    Consistency,
    Rate,
    Touchpoints,
    Coverage,
}

/// Where the simulated samples come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum TruthSpec {
    Hs {
        a: f64,
        b: f64,
    },
    /// A serialized piecewise-linear hazard; relative paths resolve against the spec file.
    Hazard {
        file: PathBuf,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageSpec {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Curvature window; defaults to [`default_window`].
    #[serde(default)]
    pub window: Option<f64>,
    /// Precomputed quantile table. When absent one is simulated from the fields below.
    #[serde(default)]
    pub quantiles: Option<PathBuf>,
    #[serde(default = "default_table_replications")]
    pub table_replications: usize,
    #[serde(default)]
    pub table_seed: u64,
    #[serde(default = "default_half_width")]
    pub half_width: f64,
    #[serde(default = "default_step")]
    pub step: f64,
}

impl Default for CoverageSpec {
    fn default() -> Self {
        Self {
            alpha: default_alpha(),
            window: None,
            quantiles: None,
            table_replications: default_table_replications(),
            table_seed: 0,
            half_width: default_half_width(),
            step: default_step(),
        }
    }
}

/// Optional pass/fail bands checked against the summary.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Bands {
    /// Log-log slope of the primary metric.
    #[serde(default)]
    pub slope: Option<[f64; 2]>,
    /// Log-log slope of the derivative error.
    #[serde(default)]
    pub derivative_slope: Option<[f64; 2]>,
    /// Log-log slope of the bracketing-knot gap.
    #[serde(default)]
    pub gap_slope: Option<[f64; 2]>,
    /// Coverage fraction at every size.
    #[serde(default)]
    pub coverage: Option<[f64; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    pub truth: TruthSpec,
    pub sizes: Vec<usize>,
    pub replications: usize,
    pub seed: u64,
    #[serde(default)]
    pub x0: Option<f64>,
    /// Margin of the sup-error range `[δ, T₀ − δ]`.
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_grid")]
    pub grid_points: usize,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub coverage: Option<CoverageSpec>,
    #[serde(default)]
    pub bands: Bands,
}

fn default_alpha() -> f64 {
    0.05
}
fn default_table_replications() -> usize {
    1000
}
fn default_half_width() -> f64 {
    6.0
}
fn default_step() -> f64 {
    0.01
}
fn default_delta() -> f64 {
    0.1
}
fn default_grid() -> usize {
    512
}

impl ExperimentSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("spec serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.sizes.is_empty() {
            return Err(invalid("at least one sample size is required"));
        }
        if self.sizes[0] == 0 || self.sizes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid(
                "sample sizes must be positive and strictly increasing",
            ));
        }
        if self.replications == 0 {
            return Err(invalid("replications must be at least 1"));
        }
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return Err(invalid(format!(
                "delta = {} must be nonnegative",
                self.delta
            )));
        }
        if self.grid_points < 2 {
            return Err(invalid("grid_points must be at least 2"));
        }
        let pointwise = self.kind != ExperimentKind::Consistency;
        match self.x0 {
            Some(x) if !(x > 0.0 && x.is_finite()) => {
                return Err(invalid(format!("x0 = {x} must be positive")))
            }
            None if pointwise => return Err(invalid("x0 is required for pointwise experiments")),
            _ => {}
        }
        if pointwise && self.kind != ExperimentKind::Coverage && self.sizes.len() < 2 {
            return Err(Error::IllPosed(
                "a rate regression needs at least two sample sizes".into(),
            ));
        }
        if let Some(c) = &self.coverage {
            if !(c.alpha > 0.0 && c.alpha < 1.0) {
                return Err(invalid(format!("alpha = {} must lie in (0, 1)", c.alpha)));
            }
        }
        Ok(())
    }
}

/// A sampling distribution together with its hazard.
#[derive(Clone, Debug, PartialEq)]
pub enum Truth {
    Hs(HsDistribution),
    Piecewise(PiecewiseLinearHazard),
}

impl Truth {
    pub fn resolve(spec: &TruthSpec, base: &Path) -> Result<Self> {
        match spec {
            TruthSpec::Hs { a, b } => Ok(Self::Hs(HsDistribution::new(*a, *b)?)),
            TruthSpec::Hazard { file } => {
                let path = if file.is_absolute() {
                    file.clone()
                } else {
                    base.join(file)
                };
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
                Ok(Self::Piecewise(PiecewiseLinearHazard::from_toml(&text)?))
            }
        }
    }

    pub fn hazard(&self, t: f64) -> f64 {
        match self {
            Self::Hs(d) => SmoothHazard::hazard(d, t),
            Self::Piecewise(h) => h.eval(t).unwrap_or(f64::NAN),
        }
    }

    /// Derivative of the hazard; the mean of the one-sided slopes at a kink.
    pub fn derivative(&self, t: f64) -> f64 {
        match self {
            Self::Hs(d) => SmoothHazard::derivative(d, t),
            Self::Piecewise(h) => 0.5 * (h.slope_left(t) + h.slope_right(t)),
        }
    }

    pub fn support_end(&self) -> f64 {
        match self {
            Self::Hs(d) => d.a(),
            Self::Piecewise(h) => h.domain_end(),
        }
    }

    pub fn sample(&self, n: usize, seed: u64) -> Result<LifetimeSample> {
        match self {
            Self::Hs(d) => d.sample(n, seed),
            Self::Piecewise(h) => h.sample(n, seed),
        }
    }

    pub fn local_params(&self, x0: f64) -> Result<LocalParams> {
        match self {
            Self::Hs(d) => LocalParams::from_smooth(d, x0),
            Self::Piecewise(_) => Err(Error::IllPosed(
                "a piecewise-linear truth has no curvature".into(),
            )),
        }
    }
}

/// Everything an experiment needs, with files already read.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub spec: ExperimentSpec,
    pub truth: Truth,
    pub table: Option<QuantileTable>,
}

impl Experiment {
    /// Reads referenced files relative to `base`. Coverage tables are loaded but not simulated.
    pub fn prepare(spec: ExperimentSpec, base: &Path) -> Result<Self> {
        spec.validate()?;
        let truth = Truth::resolve(&spec.truth, base)?;
        let table = match spec.coverage.as_ref().and_then(|c| c.quantiles.as_ref()) {
            Some(file) => {
                let path = if file.is_absolute() {
                    file.clone()
                } else {
                    base.join(file)
                };
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
                Some(QuantileTable::from_csv(&text)?)
            }
            None => None,
        };
        Ok(Self { spec, truth, table })
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::prepare(ExperimentSpec::from_toml(&text)?, base)
    }
}

/// Summary statistics for one sample size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SizeRow {
    pub n: usize,
    pub replications: usize,
    pub failures: usize,
    /// Replications where a bracketing knot was replaced by a domain end.
    pub flagged: usize,
    pub metrics: BTreeMap<String, Spread>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropertyCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub spec: ExperimentSpec,
    pub rows: Vec<SizeRow>,
    /// Log-log slope of each metric's median against `n`, where defined.
    pub slopes: BTreeMap<String, SlopeFit>,
    pub checks: Vec<PropertyCheck>,
    pub passed: bool,
}

impl ExperimentSummary {
    pub fn medians(&self, metric: &str) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| r.metrics.get(metric).map_or(f64::NAN, |s| s.median))
            .collect()
    }

    pub fn slope(&self, metric: &str) -> Option<SlopeFit> {
        self.slopes.get(metric).copied()
    }

    /// Delimited text: `#` lines echo the spec, slopes and checks, then one row per size.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# convexhaz experiment summary\n");
        for line in self.spec.to_toml().lines().filter(|l| !l.trim().is_empty()) {
            let _ = writeln!(out, "# spec: {line}");
        }
        for (name, s) in &self.slopes {
            let _ = writeln!(out, "# slope {name} = {} (se {})", s.slope, s.std_error);
        }
        for c in &self.checks {
            let _ = writeln!(
                out,
                "# check {} = {} ({})",
                c.name,
                if c.passed { "pass" } else { "fail" },
                c.detail
            );
        }
        let _ = writeln!(out, "# passed = {}", self.passed);
        let names: Vec<&String> = self
            .rows
            .first()
            .map(|r| r.metrics.keys().collect())
            .unwrap_or_default();
        out.push_str("n,replications,failures,flagged");
        for name in &names {
            let _ = write!(out, ",{name}_median,{name}_q1,{name}_q3,{name}_mean");
        }
        out.push('\n');
        for row in &self.rows {
            let _ = write!(
                out,
                "{},{},{},{}",
                row.n, row.replications, row.failures, row.flagged
            );
            for name in &names {
                match row.metrics.get(*name) {
                    Some(s) => {
                        let _ = write!(
                            out,
                            ",{},{},{},{}",
                            s.median, s.lower_quartile, s.upper_quartile, s.mean
                        );
                    }
                    None => out.push_str(",nan,nan,nan,nan"),
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Seed of replication `r` at sample size `n`.
pub fn sample_seed(seed: u64, n: usize, r: usize) -> u64 {
    replication_seed(mix(seed) ^ n as u64, r)
}

/// `sup |ĥ − h₀|` over `points` equispaced values in `[lo, hi]` and every knot inside.
///
/// Points where `h₀` is not finite are skipped.
pub fn sup_error(
    estimate: &PiecewiseLinearHazard,
    truth: &Truth,
    lo: f64,
    hi: f64,
    points: usize,
) -> f64 {
    let grid = (0..points).map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64);
    let knots = estimate
        .breakpoints()
        .into_iter()
        .filter(|&k| k >= lo && k <= hi);
    grid.chain(knots)
        .filter_map(|t| {
            let h0 = truth.hazard(t);
            h0.is_finite()
                .then(|| (estimate.eval(t).unwrap_or(f64::INFINITY) - h0).abs())
        })
        .fold(0.0, f64::max)
}

/// Nearest knots at or below and strictly above `x0`.
///
/// A missing side falls back to `0` or the hazard's domain end and sets the flag.
pub fn bracketing_knots(estimate: &PiecewiseLinearHazard, x0: f64) -> (f64, f64, bool) {
    let (taus, etas) = touchpoints(estimate, 1e-12);
    let mut left = None::<f64>;
    let mut right = None::<f64>;
    for k in taus.into_iter().chain(etas) {
        if k <= x0 {
            left = Some(left.map_or(k, |l| l.max(k)));
        } else {
            right = Some(right.map_or(k, |r| r.min(k)));
        }
    }
    let flagged = left.is_none() || right.is_none();
    (
        left.unwrap_or(0.0),
        right.unwrap_or(estimate.domain_end()),
        flagged,
    )
}

struct Draw {
    metrics: Vec<(&'static str, f64)>,
    flagged: bool,
}

fn fit_replication(exp: &Experiment, n: usize, r: usize) -> Result<(LifetimeSample, FitResult)> {
    let sample = exp.truth.sample(n, sample_seed(exp.spec.seed, n, r))?;
    let result = fit(&sample, &SolverConfig::default())?;
    Ok((sample, result))
}

fn consistency_draw(exp: &Experiment, n: usize, r: usize) -> Result<Draw> {
    let (_, result) = fit_replication(exp, n, r)?;
    let (lo, hi) = consistency_range(exp)?;
    let err = sup_error(&result.hazard, &exp.truth, lo, hi, exp.spec.grid_points);
    Ok(Draw {
        metrics: vec![("sup_error", err)],
        flagged: false,
    })
}

fn consistency_range(exp: &Experiment) -> Result<(f64, f64)> {
    let end = exp.truth.support_end();
    let (lo, hi) = (exp.spec.delta, end - exp.spec.delta);
    if !(end.is_finite() && lo < hi) {
        return Err(invalid(format!(
            "sup-error range [{lo}, {hi}] is empty or unbounded"
        )));
    }
    Ok((lo, hi))
}

fn pointwise_draw(exp: &Experiment, n: usize, r: usize, x0: f64) -> Result<Draw> {
    let (_, result) = fit_replication(exp, n, r)?;
    let h = &result.hazard;
    let value = h.eval(x0)?;
    let slope = 0.5 * (h.slope_left(x0) + h.slope_right(x0));
    let (left, right, flagged) = bracketing_knots(h, x0);
    Ok(Draw {
        metrics: vec![
            ("error", (value - exp.truth.hazard(x0)).abs()),
            ("derivative_error", (slope - exp.truth.derivative(x0)).abs()),
            ("gap", right - left),
            ("knot_distance", (x0 - left).min(right - x0)),
        ],
        flagged,
    })
}

fn coverage_draw(
    exp: &Experiment,
    table: &QuantileTable,
    cov: &CoverageSpec,
    n: usize,
    r: usize,
    x0: f64,
) -> Result<Draw> {
    let (_, result) = fit_replication(exp, n, r)?;
    let h = &result.hazard;
    let window = cov
        .window
        .unwrap_or_else(|| default_window(n, x0, h.domain_end()));
    let params = plug_in(h, x0, window)?;
    let ci = confidence_interval(params.h, params.hp, &params, n, table, cov.alpha)?;
    let covered = |b: bool| if b { 1.0 } else { 0.0 };
    Ok(Draw {
        metrics: vec![
            ("covered", covered(ci.covers(exp.truth.hazard(x0)))),
            (
                "slope_covered",
                covered(ci.slope_covers(exp.truth.derivative(x0))),
            ),
            ("width", ci.interval.1 - ci.interval.0),
        ],
        flagged: false,
    })
}

fn collect_row(n: usize, draws: Vec<Result<Draw>>) -> Result<SizeRow> {
    let total = draws.len();
    let ok: Vec<Draw> = draws.into_iter().filter_map(|d| d.ok()).collect();
    let failures = total - ok.len();
    if ok.is_empty() || failures as f64 > FAILURE_BUDGET * total as f64 {
        return Err(Error::FailureBudget {
            failed: failures,
            total,
        });
    }
    let mut values: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for d in &ok {
        for &(name, v) in &d.metrics {
            values.entry(name.to_string()).or_default().push(v);
        }
    }
    let metrics = values
        .into_iter()
        .filter_map(|(k, v)| Spread::of(&v).map(|s| (k, s)))
        .collect();
    Ok(SizeRow {
        n,
        replications: total,
        failures,
        flagged: ok.iter().filter(|d| d.flagged).count(),
        metrics,
    })
}

fn run_rows(
    exp: &Experiment,
    draw: impl Fn(usize, usize) -> Result<Draw> + Sync,
) -> Result<Vec<SizeRow>> {
    exp.spec
        .sizes
        .iter()
        .map(|&n| {
            let draws: Vec<Result<Draw>> = (0..exp.spec.replications)
                .into_par_iter()
                .map(|r| draw(n, r))
                .collect();
            collect_row(n, draws)
        })
        .collect()
}

fn band_check(name: &str, value: f64, band: [f64; 2]) -> PropertyCheck {
    PropertyCheck {
        name: name.to_string(),
        passed: value >= band[0] && value <= band[1],
        detail: format!("{value} in [{}, {}]", band[0], band[1]),
    }
}

fn slopes_of(rows: &[SizeRow]) -> BTreeMap<String, SlopeFit> {
    let sizes: Vec<f64> = rows.iter().map(|r| r.n as f64).collect();
    let names: Vec<String> = rows
        .first()
        .map(|r| r.metrics.keys().cloned().collect())
        .unwrap_or_default();
    names
        .into_iter()
        .filter_map(|name| {
            let medians: Vec<f64> = rows
                .iter()
                .map(|r| r.metrics.get(&name).map_or(f64::NAN, |s| s.median))
                .collect();
            log_log(&sizes, &medians).ok().map(|s| (name, s))
        })
        .collect()
}

fn finish(
    spec: &ExperimentSpec,
    rows: Vec<SizeRow>,
    required: Option<&str>,
    mut checks: Vec<PropertyCheck>,
) -> Result<ExperimentSummary> {
    let slopes = slopes_of(&rows);
    if let Some(name) = required {
        if !slopes.contains_key(name) {
            let sizes: Vec<f64> = rows.iter().map(|r| r.n as f64).collect();
            let medians: Vec<f64> = rows
                .iter()
                .map(|r| r.metrics.get(name).map_or(f64::NAN, |s| s.median))
                .collect();
            log_log(&sizes, &medians)?;
        }
    }
    let slope_of = |name: &str| slopes.get(name).map_or(f64::NAN, |s| s.slope);
    if let (Some(name), Some(band)) = (required, spec.bands.slope) {
        checks.push(band_check(&format!("slope {name}"), slope_of(name), band));
    }
    if let Some(band) = spec.bands.derivative_slope {
        checks.push(band_check(
            "slope derivative_error",
            slope_of("derivative_error"),
            band,
        ));
    }
    if let Some(band) = spec.bands.gap_slope {
        checks.push(band_check("slope gap", slope_of("gap"), band));
    }
    let passed = checks.iter().all(|c| c.passed);
    Ok(ExperimentSummary {
        spec: spec.clone(),
        rows,
        slopes,
        checks,
        passed,
    })
}

/// Median sup-error per size; passes when the medians strictly decrease.
pub fn run_consistency(exp: &Experiment) -> Result<ExperimentSummary> {
    consistency_range(exp)?;
    let rows = run_rows(exp, |n, r| consistency_draw(exp, n, r))?;
    let medians: Vec<f64> = rows.iter().map(|r| r.metrics["sup_error"].median).collect();
    let decreasing = PropertyCheck {
        name: "sup_error decreasing".into(),
        passed: medians.windows(2).all(|w| w[1] < w[0]),
        detail: format!("{medians:?}"),
    };
    finish(&exp.spec, rows, None, vec![decreasing])
}

fn pointwise(exp: &Experiment, primary: &str) -> Result<ExperimentSummary> {
    let x0 = exp.spec.x0.ok_or_else(|| invalid("x0 is required"))?;
    if exp.spec.sizes.len() < 2 {
        return Err(Error::IllPosed(
            "a rate regression needs at least two sample sizes".into(),
        ));
    }
    let rows = run_rows(exp, |n, r| pointwise_draw(exp, n, r, x0))?;
    finish(&exp.spec, rows, Some(primary), Vec::new())
}

/// Pointwise error of `ĥ` and `ĥ′` at `x₀`, with log-log slopes. Touchpoint gaps are
/// computed from the same fits.
pub fn run_rate(exp: &Experiment) -> Result<ExperimentSummary> {
    pointwise(exp, "error")
}

/// Gap between the knots bracketing `x₀`, with log-log slope.
pub fn run_touchpoints(exp: &Experiment) -> Result<ExperimentSummary> {
    pointwise(exp, "gap")
}

/// Fraction of plug-in intervals covering `h₀(x₀)` and `h₀′(x₀)`.
///
/// Simulates the quantile table when none was loaded.
pub fn run_coverage(exp: &Experiment) -> Result<ExperimentSummary> {
    let x0 = exp.spec.x0.ok_or_else(|| invalid("x0 is required"))?;
    let cov = exp.spec.coverage.clone().unwrap_or_default();
    exp.truth.local_params(x0)?;
    let levels = vec![cov.alpha / 2.0, 1.0 - cov.alpha / 2.0];
    let table = match &exp.table {
        Some(t) => t.clone(),
        None => quantile_table(&TableConfig {
            half_width: cov.half_width,
            step: cov.step,
            ..TableConfig::new(cov.table_replications, levels, cov.table_seed)
        })?,
    };
    let rows = run_rows(exp, |n, r| coverage_draw(exp, &table, &cov, n, r, x0))?;
    let mut checks = Vec::new();
    if let Some(band) = exp.spec.bands.coverage {
        for row in &rows {
            checks.push(band_check(
                &format!("coverage n={}", row.n),
                row.metrics["covered"].mean,
                band,
            ));
        }
    }
    finish(&exp.spec, rows, None, checks)
}

pub fn run(exp: &Experiment) -> Result<ExperimentSummary> {
    match exp.spec.kind {
        ExperimentKind::Consistency => run_consistency(exp),
        ExperimentKind::Rate => run_rate(exp),
        ExperimentKind::Touchpoints => run_touchpoints(exp),
        ExperimentKind::Coverage => run_coverage(exp),
    }
}
