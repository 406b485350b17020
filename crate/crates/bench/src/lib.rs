//! Shared fixtures for the benchmarks.

use adaptevo::phylo::{generate_tree, TreeKind};
use adaptevo::{simulate_tips, InitialState, ModelKind, ModelParams, PhyloTree, SimConfig, TipDataset};

pub fn tree(n: usize) -> PhyloTree {
    generate_tree(TreeKind::BirthDeath, n, 100.0, 7).expect("tree")
}

pub fn params(kind: ModelKind) -> ModelParams {
    match kind {
        ModelKind::Oubmbm => ModelParams::new(kind, 0.05, 0.0, 0.0, 0.72, 0.3),
        ModelKind::Ououbm => ModelParams::new(kind, 0.05, 0.12, 0.0, 0.72, 0.3),
        ModelKind::Ouou => ModelParams::new(kind, 0.05, 0.12, 0.1, 0.72, 0.0),
        ModelKind::Oubm => ModelParams::new(kind, 0.05, 0.0, 0.1, 0.72, 0.0),
        ModelKind::Ou => ModelParams::new(kind, 0.05, 0.0, 0.1, 0.0, 0.0),
        ModelKind::Bm => ModelParams::new(kind, 0.0, 0.0, 0.1, 0.0, 0.0),
    }
    .expect("params")
}

pub fn dataset(tree: &PhyloTree, kind: ModelKind) -> TipDataset {
    let p = params(kind);
    let init = InitialState { y0: 1.2, theta0: 1.2, sigma0: p.sigma_y };
    let config = SimConfig { dt: Some(0.05), seed: 11, b0: 1.2, b1: 0.72, ..SimConfig::default() };
    simulate_tips(tree, &p, &init, &config).expect("simulate")
}
