//! Phylogenetic comparative models of adaptation with a stochastic optimum
//! and a stochastic rate of evolution.
//!
//! The crate covers tree handling, closed-form moments of the trait process,
//! between-species covariance matrices, simulation, GLS/likelihood fitting,
//! and AICc model comparison.

pub mod compare;
pub mod covmodel;
pub mod error;
pub mod fit;
pub mod format;
mod linalg;
pub mod moments;
pub mod phylo;
pub mod simulate;

pub use covmodel::{
    cross_moment_pair, residual_covariance_matrix, species_covariance_pair, CovarianceBuilder,
    CovarianceMatrices, PairCovariance,
};
pub use error::{Error, Result};
pub use linalg::{factor_with_jitter, Factor};
pub use moments::{InitialState, ModelKind, ModelParams};
pub use phylo::{parse_newick, serialize_newick, PhyloTree, TreeKind};
pub use simulate::{
    monte_carlo_covariance, simulate_path, simulate_tips, McPairCovariance, PredictorModel,
    SimConfig, TipDataset,
};
pub use fit::{fit_model, FitConfig, FitResult, RegressionDesign};
pub use compare::{
    aicc, akaike_weights, bias_study, compare_models, BiasStudyConfig, BiasStudyTable,
    CompareConfig, ComparisonReport,
};
