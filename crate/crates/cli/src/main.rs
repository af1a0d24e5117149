//! `mvlogit` command-line interface.
//!
//! Exit codes: 0 success, 2 invalid input or I/O failure, 3 numerical failure.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mvlogit::cv::CvScheme;
use mvlogit::eeg::ConditionFilter;
use mvlogit::{MvError, PenaltyKind};

#[derive(Parser, Debug)]
#[command(name = "mvlogit", version, about = "Matrix-variate logistic regression")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalOpts,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct GlobalOpts {
    /// Seed for fold assignment and simulation draws.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (defaults to the number of CPUs).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output path. For ingest-eeg, glram and fit this is the saved artifact and
    /// the summary goes to stdout; otherwise it receives the report.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    pub format: Format,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Arm {
    Mv,
    Conventional,
    Both,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Average EEG trial files per subject into a dataset file.
    IngestEeg(IngestArgs),
    /// Fit GLRAM bases to a dataset.
    Glram(GlramArgs),
    /// Fit a binary or multi-class model and save it.
    Fit(FitArgs),
    /// Cross-validated accuracy over a lambda grid.
    Cv(CvArgs),
    /// Coefficient table and probability intervals of a saved model on a dataset.
    Infer(InferArgs),
    /// Predictions of a saved model.
    Predict(PredictArgs),
    /// Monte-Carlo comparison of the bilinear and conventional models.
    Simulate(SimulateArgs),
    /// GLRAM, standardization and cross-validated fits of both arms.
    EegPipeline(PipelineArgs),
    /// Principal components of vec(X) followed by ridge logistic regression.
    PcaBaseline(PcaArgs),
}

#[derive(Args, Debug)]
pub struct DataSource {
    /// Dataset file (JSON, or CSV for binary data).
    #[arg(long, conflicts_with = "data_dir")]
    pub data: Option<PathBuf>,
    /// Directory of EEG trial files, ingested on the fly.
    #[arg(long, env = "MVLOGIT_DATA_DIR")]
    pub data_dir: Option<PathBuf>,
    #[arg(long, default_value = "single-stimulus")]
    pub condition: ConditionFilter,
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    #[arg(long, env = "MVLOGIT_DATA_DIR")]
    pub data_dir: PathBuf,
    #[arg(long, default_value = "single-stimulus")]
    pub condition: ConditionFilter,
    /// Write a synthetic EEG-shaped trial directory to `--data-dir` first.
    #[arg(long)]
    pub synthetic: bool,
}

#[derive(Args, Debug)]
pub struct GlramArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub p0: usize,
    #[arg(long)]
    pub q0: usize,
    /// Skip centering by the mean matrix.
    #[arg(long)]
    pub no_center: bool,
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    #[arg(long, default_value_t = 200)]
    pub max_iter: usize,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 0.0)]
    pub lambda: f64,
    #[arg(long, default_value = "no-intercept")]
    pub penalty: PenaltyKind,
    /// Pinned row of alpha (1-based); chosen from the data when omitted.
    #[arg(long)]
    pub baseline_row: Option<usize>,
    /// Reference class of a multi-class fit (defaults to the last class).
    #[arg(long)]
    pub reference_class: Option<usize>,
    /// Project the data onto these saved GLRAM bases first.
    #[arg(long)]
    pub glram: Option<PathBuf>,
    /// Standardize every entry position and store the statistics with the model.
    #[arg(long)]
    pub standardize: bool,
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    #[arg(long, default_value_t = 100)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    /// Write the per-iteration penalized log-likelihood as CSV.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CvArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0.5,1,2,4,8,16,32,64")]
    pub grid: Vec<f64>,
    /// `loo`, `kfold` or `kfold:K`.
    #[arg(long, default_value = "loo")]
    pub scheme: CvScheme,
    #[arg(long, default_value = "no-intercept")]
    pub penalty: PenaltyKind,
    #[arg(long, value_enum, default_value_t = Arm::Both)]
    pub arm: Arm,
    #[arg(long)]
    pub baseline_row: Option<usize>,
    #[arg(long)]
    pub standardize: bool,
}

#[derive(Args, Debug)]
pub struct InferArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Design file; the flags below are ignored when it is given.
    #[arg(long)]
    pub design: Option<PathBuf>,
    #[arg(long, default_value_t = 12)]
    pub p: usize,
    #[arg(long, default_value_t = 10)]
    pub q: usize,
    #[arg(long, default_value_t = 150)]
    pub n: usize,
    #[arg(long, default_value_t = 0.0)]
    pub sigma: f64,
    #[arg(long)]
    pub replicates: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    pub lambda_mv: f64,
    #[arg(long, default_value_t = 1.0)]
    pub lambda_conventional: f64,
    #[arg(long, default_value = "no-intercept")]
    pub penalty: PenaltyKind,
    #[arg(long)]
    pub test_size: Option<usize>,
    /// Tune both lambdas on an independent pilot study over this grid first.
    #[arg(long, value_delimiter = ',')]
    pub tune_grid: Option<Vec<f64>>,
    #[arg(long, default_value_t = 100)]
    pub pilot_replicates: usize,
    #[arg(long, default_value_t = 12345)]
    pub pilot_seed: u64,
    /// Also write coefficients.csv and accuracy.csv into this directory.
    #[arg(long)]
    pub tables: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PipelineArgs {
    #[command(flatten)]
    pub source: DataSource,
    #[arg(long, default_value_t = 15)]
    pub p0: usize,
    #[arg(long, default_value_t = 15)]
    pub q0: usize,
    #[arg(long, value_delimiter = ',', default_value = "0.5,1,2,4,8,16,24,32,48,64")]
    pub grid: Vec<f64>,
    #[arg(long, default_value = "all-theta")]
    pub penalty: PenaltyKind,
    #[arg(long, default_value = "loo")]
    pub scheme: CvScheme,
    /// Recompute GLRAM and standardization per fold and choose lambda by an inner split.
    #[arg(long)]
    pub nested: bool,
    #[arg(long, default_value_t = 5)]
    pub inner_folds: usize,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    /// Save the full-data model with its preprocessing artifacts.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Also write coefficients.csv, subjects.csv and accuracy.csv into this directory.
    #[arg(long)]
    pub tables: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PcaArgs {
    #[command(flatten)]
    pub source: DataSource,
    /// Numbers of leading components to try.
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5,6,7,8,9,10")]
    pub r: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "0.5,1,2,4,8,16,24,32,48,64")]
    pub grid: Vec<f64>,
    #[arg(long, default_value = "loo")]
    pub scheme: CvScheme,
    #[arg(long, default_value = "all-theta")]
    pub penalty: PenaltyKind,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let numerical = err
        .chain()
        .any(|cause| cause.downcast_ref::<MvError>().is_some_and(MvError::is_numerical));
    if numerical {
        3
    } else {
        2
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(threads) = cli.global.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numerical_failures_map_to_three() {
        let e = anyhow::Error::from(MvError::NonFinite { iteration: 2 }).context("fitting");
        assert_eq!(exit_code(&e), 3);
        let e = anyhow::Error::from(MvError::InvalidInput("x".into()));
        assert_eq!(exit_code(&e), 2);
    }
}
