use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use stcp::conformal::{alpha_grid, Method};
use stcp::harness::{check_reports, parse_config, run_experiment, Experiment, ExperimentConfig, RunArtifacts, Stage};
use stcp::Error;

const ASSERT_FAILED: u8 = 5;

#[derive(Parser)]
#[command(name = "stcp", version, about = "Conformal error bars for spatio-temporal surrogates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate training and calibration datasets.
    Gen(Common),
    /// Train the surrogates.
    Train(Common),
    /// Compute the conformal quantile field at `--alpha`.
    Calibrate(Common),
    /// Build prediction bands on the validation set.
    Band(Common),
    /// Measure coverage at `--alpha`.
    Validate {
        #[command(flatten)]
        common: Common,
        /// Check the reports against the coverage thresholds (exit 5 on failure).
        #[arg(long)]
        assert: bool,
    },
    /// Coverage over the alpha grid.
    Sweep(Common),
    /// One sweep per calibration size.
    StudyNcal(Common),
    /// Emit the SVG figures and their CSV data.
    Plot(Common),
    /// All stages.
    Run(Common),
}

#[derive(Args)]
struct Common {
    /// JSON config; keys not given take the experiment's defaults.
    #[arg(long, conflicts_with = "experiment")]
    config: Option<PathBuf>,
    /// Run an experiment with its default config.
    #[arg(long, value_parser = parse_experiment)]
    experiment: Option<Experiment>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Restrict to these methods (repeatable).
    #[arg(long, value_parser = parse_method)]
    method: Vec<Method>,
    /// Primary miscoverage level.
    #[arg(long)]
    alpha: Option<f64>,
    /// Sweep grid as lo:hi:step.
    #[arg(long)]
    alphas: Option<String>,
    /// Calibration sizes, comma separated.
    #[arg(long, value_delimiter = ',')]
    sizes: Option<Vec<usize>>,
    /// Worker threads (results do not depend on it).
    #[arg(long)]
    workers: Option<usize>,
}

fn parse_experiment(s: &str) -> Result<Experiment, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| format!("unknown experiment `{s}` (poisson|convdiff|wave)"))
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn resolve(c: &Common) -> stcp::Result<(ExperimentConfig, PathBuf)> {
    let mut cfg = match (&c.config, c.experiment) {
        (Some(p), _) => parse_config(p)?,
        (None, Some(e)) => ExperimentConfig::defaults(e),
        (None, None) => return Err(Error::Config("one of --config or --experiment is required".into())),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if !c.method.is_empty() {
        cfg.methods.retain(|m| c.method.contains(&m.tag()));
        if cfg.methods.is_empty() {
            return Err(Error::Config("--method selects no configured method".into()));
        }
    }
    if let Some(a) = c.alpha {
        cfg.primary_alpha = a;
    }
    if let Some(spec) = &c.alphas {
        let parts: Vec<f64> = spec
            .split(':')
            .map(|p| p.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| Error::Config(format!("--alphas `{spec}`: {e}")))?;
        let [lo, hi, step] = parts[..] else {
            return Err(Error::Config(format!("--alphas `{spec}`: expected lo:hi:step")));
        };
        cfg.alphas = alpha_grid(lo, hi, step)?;
    }
    if let Some(sizes) = &c.sizes {
        cfg.ncal_sizes = sizes.clone();
    }
    cfg.validate()?;
    let out = c
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| Path::new("runs").join(cfg.experiment.name()));
    Ok((cfg, out))
}

fn print_run(art: &RunArtifacts) {
    for (stage, secs) in &art.timings {
        eprintln!("{:>10}  {secs:8.2} s", stage.name());
    }
    for r in &art.reports {
        let c = &r.calibrated;
        let uncal = r
            .uncalibrated
            .as_ref()
            .map(|u| format!("  uncalibrated {:.2}%", 100.0 * u.mean_coverage))
            .unwrap_or_default();
        let beta = match (c.beta_lo, c.beta_hi) {
            (Some(lo), Some(hi)) => format!("  beta [{:.2}%, {:.2}%]", 100.0 * lo, 100.0 * hi),
            _ => String::new(),
        };
        println!(
            "{} {}: alpha {} coverage {:.2}%{beta}{uncal}  tightness {:.4}",
            r.experiment,
            r.method,
            c.alpha,
            100.0 * c.mean_coverage,
            r.tightness_normalised
        );
    }
    for t in &art.sweeps {
        let worst = t.rows.iter().map(|r| r.shortfall()).fold(f64::NEG_INFINITY, f64::max);
        println!("sweep {}: {} points, worst shortfall {worst:.4}", t.method, t.rows.len());
    }
    println!("artifacts in {} (config {})", art.out_dir.display(), &art.config_hash[..16]);
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (common, until, assert) = match &cli.command {
        Command::Gen(c) => (c, Stage::Gen, false),
        Command::Train(c) => (c, Stage::Train, false),
        Command::Calibrate(c) => (c, Stage::Calibrate, false),
        Command::Band(c) => (c, Stage::Band, false),
        Command::Validate { common, assert } => (common, Stage::Validate, *assert),
        Command::Sweep(c) => (c, Stage::Sweep, false),
        Command::StudyNcal(c) => (c, Stage::StudyNcal, false),
        Command::Plot(c) => (c, Stage::Plot, false),
        Command::Run(c) => (c, Stage::Plot, false),
    };
    if let Some(n) = common.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: --workers: {e}");
            return ExitCode::from(2);
        }
    }
    let result = resolve(common).and_then(|(cfg, out)| {
        let art = run_experiment(&cfg, &out, until)?;
        print_run(&art);
        if assert {
            return check_reports(&out).map(Some);
        }
        Ok(None)
    });
    match result {
        Ok(Some(failures)) if !failures.is_empty() => {
            for f in &failures {
                eprintln!("FAIL {f}");
            }
            ExitCode::from(ASSERT_FAILED)
        }
        Ok(Some(_)) => {
            println!("all coverage checks passed");
            ExitCode::SUCCESS
        }
        Ok(None) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
