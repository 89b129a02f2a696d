mod commands;
mod inputs;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gridml::dataset::Mode;
use gridml::models::ModelKind;
use gridml::powerflow::PfOptions;

#[derive(Debug, Parser)]
#[command(
    name = "gridml",
    version,
    about = "N-1 contingency power flow and ML surrogate toolkit"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// Seed for every stochastic stage.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; 1 runs serially. Defaults to available parallelism.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    /// Newton-Raphson mismatch tolerance in p.u.
    #[arg(long, global = true, default_value_t = 1e-8)]
    pub pf_tol: f64,
    #[arg(long, global = true, default_value_t = 30)]
    pub pf_max_iter: usize,
}

impl Global {
    pub fn pf(&self) -> PfOptions {
        PfOptions {
            tolerance: self.pf_tol,
            max_iter: self.pf_max_iter,
        }
    }

    pub fn workers(&self) -> usize {
        self.workers
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
            .max(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CaseSet {
    All,
    Base,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Reg,
    Cls,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::Reg => Mode::Regression,
            ModeArg::Cls => Mode::Classification,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelArg {
    Mlp,
    Ridge,
    Tree,
    Forest,
    Knn,
}

impl From<ModelArg> for ModelKind {
    fn from(m: ModelArg) -> ModelKind {
        match m {
            ModelArg::Mlp => ModelKind::Mlp,
            ModelArg::Ridge => ModelKind::Ridge,
            ModelArg::Tree => ModelKind::Tree,
            ModelArg::Forest => ModelKind::Forest,
            ModelArg::Knn => ModelKind::Knn,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    All,
    Train,
    Test,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve every (case, step) power flow and write a sweep store.
    Simulate {
        /// Grid JSON file or bundled name (demo3, demo9).
        #[arg(long)]
        grid: String,
        /// Time-series CSV, scenario JSON, or `demo-year`.
        #[arg(long)]
        series: String,
        /// `all`, a fraction such as 0.1, or a comma list of steps.
        #[arg(long, default_value = "all")]
        steps: String,
        #[arg(long, value_enum, default_value_t = CaseSet::All)]
        cases: CaseSet,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build a per-case dataset from a store and its source series.
    Dataset {
        #[arg(long)]
        grid: String,
        #[arg(long)]
        series: String,
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        case: usize,
        #[arg(long, value_enum)]
        mode: ModeArg,
        #[arg(long, default_value_t = 0.1)]
        train_frac: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw synthetic operating points from load, RES and conventional scale factors.
    Scenario {
        #[arg(long)]
        grid: String,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0.02)]
        noise: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Peak-shave RES generation to remove a fraction of its energy.
    Curtail {
        #[arg(long)]
        grid: String,
        #[arg(long)]
        series: String,
        #[arg(long, default_value_t = 0.03)]
        fraction: f64,
        /// Curtailed time-series CSV.
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a surrogate on the training rows of a dataset.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_enum, default_value_t = ModelArg::Mlp)]
        model: ModelArg,
        /// Balance the classes with SMOTE before fitting (classification only).
        #[arg(long)]
        smote: bool,
        /// Fit one model for the voltages and another for the loadings
        /// (regression only).
        #[arg(long)]
        separate_heads: bool,
        /// Hidden layer widths of the MLP, comma separated.
        #[arg(long, value_delimiter = ',')]
        hidden: Option<Vec<usize>>,
        #[arg(long)]
        max_epochs: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict dataset rows with a trained model.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predictions against a sweep store over a threshold sweep.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        /// Probability thresholds (classifiers) or loading factors
        /// (regressors), ascending.
        #[arg(long, value_delimiter = ',')]
        thresholds: Option<Vec<f64>>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Collect evaluation files into report.json, table.csv and curves.csv.
    Report {
        /// Evaluation JSON files; repeat the flag for several.
        #[arg(long = "eval", required = true)]
        evals: Vec<PathBuf>,
        /// Threshold reported in the table; defaults to 0.2 for
        /// classifiers and 0.96 for regressors.
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the full experiment end to end.
    Pipeline {
        #[arg(long, default_value = "demo9")]
        grid: String,
        #[arg(long, default_value = "demo-year")]
        series: String,
        #[arg(long, default_value_t = 0.1)]
        train_frac: f64,
        /// Also train ridge, tree, forest and k-NN regressors.
        #[arg(long)]
        compare_models: bool,
        #[arg(long)]
        out: PathBuf,
    },
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .init();
}

/// The error and its causes, skipping causes already quoted by their parent.
fn error_chain(e: &anyhow::Error) -> String {
    let mut out = e.to_string();
    let mut last = out.clone();
    for cause in e.chain().skip(1) {
        let text = cause.to_string();
        if !last.ends_with(&text) {
            out.push_str(": ");
            out.push_str(&text);
        }
        last = text;
    }
    out
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.global.verbose);
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", error_chain(&e));
            ExitCode::from(1)
        }
    }
}
