use std::path::PathBuf;

use adaptevo::compare::AiccForm;
use adaptevo::phylo::TreeKind;
use adaptevo::ModelKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(name = "adaptevo", version, about = "Fit and compare adaptive trait-evolution models on phylogenies")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// Fit one model to tip data and emit the estimates and a fitted line.
    Fit(FitArgs),
    /// Simulate tip data (and optionally a single-lineage path).
    Simulate(SimulateArgs),
    /// Fit several models and rank them by AICc.
    Compare(CompareArgs),
    /// Run the parameter-recovery sweep described by a TOML config.
    BiasStudy(BiasStudyArgs),
    /// Repeat the run recorded in a manifest.json.
    Rerun(RerunArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LogAxes {
    X,
    Y,
    Xy,
}

impl LogAxes {
    pub fn x(self) -> bool {
        matches!(self, LogAxes::X | LogAxes::Xy)
    }

    pub fn y(self) -> bool {
        matches!(self, LogAxes::Y | LogAxes::Xy)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Json,
    Tsv,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct InputArgs {
    /// Newick tree file.
    #[arg(long)]
    pub tree: PathBuf,
    /// Headered CSV/TSV with columns species, x, y.
    #[arg(long)]
    pub data: PathBuf,
    /// Apply log10 to the predictor, the response, or both.
    #[arg(long, value_enum)]
    pub log10: Option<LogAxes>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct FitOptions {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Estimate the initial rate of the stochastic-rate models instead of fixing it at zero.
    #[arg(long)]
    pub free_initial_rate: bool,
    /// Convergence tolerance on the regression coefficients.
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct FitArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long)]
    pub kind: ModelKind,
    #[command(flatten)]
    pub options: FitOptions,
    /// Output directory; without it the result is printed to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct CompareArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Comma-separated model kinds.
    #[arg(long, value_delimiter = ',', required = true)]
    pub kinds: Vec<ModelKind>,
    #[command(flatten)]
    pub options: FitOptions,
    /// Use the conventional n − k − 1 AICc denominator.
    #[arg(long)]
    pub conventional_aicc: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Tsv)]
    pub format: Format,
}

impl CompareArgs {
    pub fn aicc_form(&self) -> AiccForm {
        if self.conventional_aicc {
            AiccForm::Conventional
        } else {
            AiccForm::PlusOne
        }
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SimulateArgs {
    /// Newick tree file to simulate on.
    #[arg(long, conflicts_with = "generate")]
    pub tree: Option<PathBuf>,
    /// Generate a tree of this shape instead of reading one.
    #[arg(long, value_name = "TREE_KIND")]
    pub generate: Option<TreeKind>,
    #[arg(long, default_value_t = 32)]
    pub tips: usize,
    #[arg(long, default_value_t = 1.0)]
    pub depth: f64,
    #[arg(long)]
    pub kind: ModelKind,
    #[arg(long)]
    pub alpha_y: Option<f64>,
    #[arg(long)]
    pub alpha_theta: Option<f64>,
    #[arg(long)]
    pub sigma_y: Option<f64>,
    #[arg(long)]
    pub sigma_theta: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long, default_value_t = 0.0)]
    pub b0: f64,
    #[arg(long, default_value_t = 1.0)]
    pub b1: f64,
    /// Root optimum; defaults to b0.
    #[arg(long)]
    pub theta0: Option<f64>,
    /// Root trait value; defaults to the root optimum.
    #[arg(long)]
    pub y0: Option<f64>,
    /// Predictor rate for the constant-optimum kinds.
    #[arg(long, default_value_t = 1.0)]
    pub sigma_x: f64,
    /// Predictor mean reversion for the constant-optimum kinds (Brownian if absent).
    #[arg(long)]
    pub alpha_x: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Integration step (default: min(0.01, shortest branch / 20)).
    #[arg(long)]
    pub dt: Option<f64>,
    /// Also write a single-lineage trajectory table.
    #[arg(long)]
    pub paths: bool,
    /// Length of the trajectory; defaults to the tree depth.
    #[arg(long)]
    pub duration: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct BiasStudyArgs {
    /// TOML study configuration.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct RerunArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Write outputs here instead of the recorded location.
    #[arg(long)]
    pub out: Option<PathBuf>,
}
