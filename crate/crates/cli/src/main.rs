use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use convex_hazard::asymptotics::{confidence_interval, default_window, plug_in};
use convex_hazard::harness::{self, Experiment};
use convex_hazard::{
    check, fit, quantile_table, Error, HsDistribution, LifetimeSample, PiecewiseLinearHazard,
    QuantileTable, SolverConfig, TableConfig, TiePolicy,
};

/// Convex (bathtub) hazard estimation: fit, certify, simulate, and study limit behaviour.
#[derive(Parser)]
#[command(name = "convexhaz", version)]
struct Cli {
    /// Worker threads for replication-parallel commands; results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the maximum likelihood convex hazard to a sample file.
    Fit {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Directional-derivative and scale-equation tolerance.
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        /// Dyadic refinement level of candidate knots.
        #[arg(long, default_value_t = 1)]
        refine: u32,
        #[command(flatten)]
        ties: Ties,
    },
    /// Verify the first-order optimality conditions of an estimate.
    Check {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        estimate: PathBuf,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
        #[command(flatten)]
        ties: Ties,
    },
    /// Draw a sample from an HS distribution or a serialized hazard.
    Sample {
        #[arg(long, value_parser = ["hs"], conflicts_with = "hazard", required_unless_present = "hazard")]
        dist: Option<String>,
        #[arg(long = "A", default_value_t = 1.0)]
        a: f64,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        b: f64,
        #[arg(long)]
        hazard: Option<PathBuf>,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        output: PathBuf,
    },
    /// Tabulate quantiles of the envelope's second and third derivatives at zero.
    Envelope {
        #[arg(long, default_value_t = 6.0)]
        half_width: f64,
        #[arg(long, default_value_t = 0.01)]
        step: f64,
        #[arg(long)]
        reps: usize,
        #[arg(long, value_delimiter = ',', required = true)]
        levels: Vec<f64>,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        output: PathBuf,
    },
    /// Plug-in confidence intervals for the hazard and its slope at a point.
    Ci {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        x0: f64,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long)]
        quantiles: PathBuf,
        /// Half-width of the curvature window.
        #[arg(long)]
        window: Option<f64>,
        #[arg(long)]
        output: Option<PathBuf>,
        #[command(flatten)]
        ties: Ties,
    },
    /// Run a Monte Carlo experiment described by a TOML file.
    Experiment {
        #[arg(long)]
        spec: PathBuf,
        /// Defaults to the spec's `output` entry.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Ties {
    /// Separate tied observations by one ulp instead of rejecting them.
    #[arg(long)]
    detie: bool,
}

impl Ties {
    fn policy(&self) -> TiePolicy {
        if self.detie {
            TiePolicy::Perturb
        } else {
            TiePolicy::Reject
        }
    }
}

enum Outcome {
    Pass,
    PropertyFailed,
}

impl From<bool> for Outcome {
    fn from(passed: bool) -> Self {
        if passed {
            Outcome::Pass
        } else {
            Outcome::PropertyFailed
        }
    }
}

fn read(path: &Path) -> Result<String, Error> {
    std::fs::read_to_string(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Result<(), Error> {
    std::fs::write(path, text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

fn run(command: Command) -> Result<Outcome, Error> {
    match command {
        Command::Fit {
            input,
            output,
            tol,
            refine,
            ties,
        } => {
            let sample = LifetimeSample::parse(&read(&input)?, ties.policy())?;
            let config = SolverConfig {
                dd_tol: tol,
                eq_tol: tol,
                candidate_refinement: refine,
                ..SolverConfig::default()
            };
            let result = match fit(&sample, &config) {
                Ok(r) => r,
                Err(Error::NotConverged(last)) => {
                    write(&output, &last.hazard.to_toml())?;
                    eprintln!(
                        "solver did not converge after {} iterations; last iterate written",
                        last.iterations
                    );
                    return Ok(Outcome::PropertyFailed);
                }
                Err(e) => return Err(e),
            };
            write(&output, &result.hazard.to_toml())?;
            println!("n = {}", sample.len());
            println!("criterion = {}", result.criterion);
            println!("iterations = {}", result.iterations);
            println!(
                "knots = {}",
                result.hazard.dec_knots().len() + result.hazard.inc_knots().len()
            );
            println!("worst_residual = {}", result.report.worst());
            println!("passed = {}", result.report.passed);
            Ok(result.report.passed.into())
        }
        Command::Check {
            input,
            estimate,
            tol,
            ties,
        } => {
            let sample = LifetimeSample::parse(&read(&input)?, ties.policy())?;
            let h = PiecewiseLinearHazard::from_toml(&read(&estimate)?)?;
            let report = check(&h, &sample, tol)?;
            print!("{}", report.to_toml());
            Ok(report.passed.into())
        }
        Command::Sample {
            dist,
            a,
            b,
            hazard,
            n,
            seed,
            output,
        } => {
            let (sample, header) = match (dist, hazard) {
                (Some(_), None) => {
                    let d = HsDistribution::new(a, b)?;
                    (
                        d.sample(n, seed)?,
                        format!("HS distribution A = {a}, b = {b}, n = {n}, seed = {seed}"),
                    )
                }
                (None, Some(path)) => {
                    let h = PiecewiseLinearHazard::from_toml(&read(&path)?)?;
                    (
                        h.sample(n, seed)?,
                        format!("hazard {}, n = {n}, seed = {seed}", path.display()),
                    )
                }
                _ => {
                    return Err(Error::InvalidParameter(
                        "give exactly one of --dist and --hazard".into(),
                    ))
                }
            };
            write(&output, &sample.to_text(&header))?;
            Ok(Outcome::Pass)
        }
        Command::Envelope {
            half_width,
            step,
            reps,
            levels,
            seed,
            output,
        } => {
            let config = TableConfig {
                half_width,
                step,
                ..TableConfig::new(reps, levels, seed)
            };
            let table = quantile_table(&config)?;
            write(&output, &table.to_csv())?;
            Ok(Outcome::Pass)
        }
        Command::Ci {
            input,
            x0,
            alpha,
            quantiles,
            window,
            output,
            ties,
        } => {
            let sample = LifetimeSample::parse(&read(&input)?, ties.policy())?;
            let table = QuantileTable::from_csv(&read(&quantiles)?)?;
            let result = fit(&sample, &SolverConfig::default())?;
            let h = &result.hazard;
            let window = window.unwrap_or_else(|| default_window(sample.len(), x0, h.domain_end()));
            let params = plug_in(h, x0, window)?;
            let ci =
                confidence_interval(params.h, params.hp, &params, sample.len(), &table, alpha)?;
            let text = format!("window = {window}\n{}", ci.to_toml());
            match output {
                Some(path) => write(&path, &text)?,
                None => print!("{text}"),
            }
            Ok(Outcome::Pass)
        }
        Command::Experiment { spec, output } => {
            let exp = Experiment::from_path(&spec)?;
            let base = spec.parent().unwrap_or(Path::new("."));
            let output = output
                .or_else(|| exp.spec.output.as_ref().map(|o| base.join(o)))
                .ok_or_else(|| Error::InvalidParameter("no output path in flags or spec".into()))?;
            let summary = harness::run(&exp)?;
            write(&output, &summary.to_text())?;
            for c in &summary.checks {
                println!(
                    "{}: {} ({})",
                    c.name,
                    if c.passed { "pass" } else { "fail" },
                    c.detail
                );
            }
            Ok(summary.passed.into())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli.command) {
        Ok(Outcome::Pass) => ExitCode::SUCCESS,
        Ok(Outcome::PropertyFailed) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
