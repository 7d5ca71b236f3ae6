use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use riemann_patterns::dataset::{CovarianceDataset, TargetKind};
use riemann_patterns::evaluation::{cross_validate, holdout, make_splits, SplitScheme};
use riemann_patterns::format;
use riemann_patterns::patterns::{estimate_num_sources, patterns_for, ShuffleOptions};
use riemann_patterns::pipelines::{fit_pipeline, FittedPipeline, Method, PipelineConfig};
use riemann_patterns::simulation::{gen_dataset, run_sweep, SimulationParams, SweepConfig};

/// Covariance-based regression and classification with interpretable
/// spatial patterns.
#[derive(Debug, Parser)]
#[command(name = "rpat", version)]
struct Cli {
    /// TOML run configuration; see `rpat config dump`.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides every seed of the selected command.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Worker threads (defaults to the number of CPUs).
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a dataset from the generative model.
    Simulate {
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Fit a pipeline on a dataset and save the model.
    Fit {
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        #[command(flatten)]
        pipeline: PipelineArgs,
    },
    /// Predict a dataset with a saved model.
    Predict {
        #[arg(long, value_name = "DIR")]
        model: PathBuf,
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Export channel-space patterns of a saved model.
    Patterns {
        #[arg(long, value_name = "DIR")]
        model: PathBuf,
        /// Training data the model was fitted on.
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Run the shuffle test with this many shuffles.
        #[arg(long, value_name = "N")]
        shuffles: Option<usize>,
    },
    /// Cross-validate a pipeline on a dataset.
    Evaluate {
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        #[command(flatten)]
        pipeline: PipelineArgs,
    },
    /// Run a noise sweep over simulated datasets.
    Sweep {
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Configuration utilities.
    Config {
        #[command(subcommand)]
        command: ConfigCommand,
    },
}

#[derive(Debug, Subcommand)]
enum ConfigCommand {
    /// Print the full default configuration.
    Dump,
}

#[derive(Debug, Args)]
struct PipelineArgs {
    #[arg(long, value_parser = ["riemann", "spoc", "csp", "diag"])]
    method: Option<String>,
    #[arg(long, value_name = "K")]
    components: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
enum SplitConfig {
    KFold { k: usize },
    LeaveOneGroupOut,
    Holdout { test_fraction: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct EvaluateConfig {
    seed: u64,
    split: SplitConfig,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        EvaluateConfig {
            seed: 0,
            split: SplitConfig::KFold { k: 10 },
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RunConfig {
    simulate: SimulationParams,
    pipeline: PipelineConfig,
    evaluate: EvaluateConfig,
    shuffle: ShuffleOptions,
    sweep: SweepConfig,
}

#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    let Some(path) = path else {
        return Ok(RunConfig::default());
    };
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    toml::from_str(&text)
        .map_err(|e| UsageError(format!("invalid config {}: {e}", path.display())).into())
}

fn apply_pipeline_args(config: &mut PipelineConfig, args: &PipelineArgs) -> Result<()> {
    if let Some(m) = &args.method {
        config.method = m.parse::<Method>()?;
    }
    if args.components.is_some() {
        config.components = args.components;
    }
    Ok(())
}

fn read_dataset(dir: &Path) -> Result<CovarianceDataset> {
    format::read_dataset(dir).with_context(|| format!("reading dataset {}", dir.display()))
}

fn read_model(dir: &Path) -> Result<FittedPipeline> {
    format::read_model(dir).with_context(|| format!("reading model {}", dir.display()))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(UsageError("--threads must be positive".into()).into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let mut config = load_config(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        config.simulate.seed = seed;
        config.evaluate.seed = seed;
        config.shuffle.seed = seed;
        config.sweep.seeds = vec![seed];
    }

    match cli.command {
        Command::Simulate { out } => {
            let sim = gen_dataset(&config.simulate)?;
            format::write_dataset(&out, &sim.dataset)?;
            if sim.ridged > 0 {
                eprintln!("{} covariances needed a ridge to stay positive definite", sim.ridged);
            }
        }
        Command::Fit { data, out, pipeline } => {
            apply_pipeline_args(&mut config.pipeline, &pipeline)?;
            let ds = read_dataset(&data)?;
            let model = fit_pipeline(&ds, &config.pipeline)?;
            format::write_model(&out, &model)?;
        }
        Command::Predict { model, data, out } => {
            let model = read_model(&model)?;
            let ds = read_dataset(&data)?;
            let predictions = model.predict(&ds)?;
            let proba = match ds.target_kind() {
                TargetKind::Binary if model.classes().is_some() => Some(model.predict_proba(&ds)?),
                _ => None,
            };
            create_dir(&out)?;
            format::write_atomic(
                &out.join("predictions.csv"),
                &format::predictions_csv(&predictions, proba.as_deref())?,
            )?;
        }
        Command::Patterns { model, data, out, shuffles } => {
            let model = read_model(&model)?;
            let ds = read_dataset(&data)?;
            let mut set = patterns_for(&model, &ds)?;
            let significance = match shuffles {
                Some(n) => {
                    let opts = ShuffleOptions { n_shuffles: n, ..config.shuffle };
                    let sig = estimate_num_sources(&model, &ds, &opts)?;
                    for (band, q) in set.bands.iter_mut().zip(&sig.q_hat) {
                        band.q_hat = Some(*q);
                    }
                    Some(sig)
                }
                None => None,
            };
            create_dir(&out)?;
            format::write_atomic(&out.join("patterns.csv"), &format::patterns_csv(&set)?)?;
            format::write_atomic(&out.join("eigenvalues.csv"), &format::eigenvalues_csv(&set)?)?;
            if let Some(sig) = significance {
                format::write_atomic(&out.join("significance.json"), &format::significance_json(&sig)?)?;
                for (b, q) in sig.q_hat.iter().enumerate() {
                    println!("band {b}: q_hat = {q}");
                }
            }
        }
        Command::Evaluate { data, out, pipeline } => {
            apply_pipeline_args(&mut config.pipeline, &pipeline)?;
            let ds = read_dataset(&data)?;
            let seed = config.evaluate.seed;
            let plan = match config.evaluate.split {
                SplitConfig::KFold { k } => make_splits(ds.n_obs(), SplitScheme::KFold { k }, None, seed)?,
                SplitConfig::LeaveOneGroupOut => {
                    make_splits(ds.n_obs(), SplitScheme::LeaveOneGroupOut, ds.groups(), seed)?
                }
                SplitConfig::Holdout { test_fraction } => holdout(ds.n_obs(), test_fraction, seed)?,
            };
            let report = cross_validate(&ds, &config.pipeline, &plan)?;
            let oof: Vec<f64> = report
                .out_of_fold(ds.n_obs())
                .into_iter()
                .map(|p| p.unwrap_or(f64::NAN))
                .collect();
            create_dir(&out)?;
            format::write_atomic(&out.join("cv.csv"), &format::cv_csv(&report)?)?;
            format::write_atomic(&out.join("predictions.csv"), &format::predictions_csv(&oof, None)?)?;
            let summary = [
                ("mae", report.mean(|m| m.mae)),
                ("normalized_mae", report.mean(|m| m.normalized_mae)),
                ("r_squared", report.mean(|m| m.r_squared)),
                ("balanced_accuracy", report.mean(|m| m.balanced_accuracy)),
            ];
            for (name, value) in summary {
                if let Some(v) = value {
                    println!("{name}: {}", format::fmt_f64(v));
                }
            }
        }
        Command::Sweep { out } => {
            let rows = run_sweep(&config.sweep)?;
            create_dir(&out)?;
            format::write_atomic(&out.join("sweep.csv"), &format::sweep_csv(&rows)?)?;
            let failed = rows.iter().filter(|r| !r.is_ok()).count();
            if failed > 0 {
                eprintln!("{failed} of {} sweep cells failed; see the status column", rows.len());
            }
        }
        Command::Config { command: ConfigCommand::Dump } => {
            print!("{}", toml::to_string_pretty(&config)?);
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<riemann_patterns::Error>() {
            return if e.is_numerical() { 3 } else { 2 };
        }
    }
    2
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
