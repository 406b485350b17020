use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::mix_seed;
use crate::error::{Error, Result};
use crate::fit::{estimated_parameters, fit_model, FitConfig, FitResult};
use crate::format::fmt12;
use crate::moments::{InitialState, ModelKind, ModelParams};
use crate::phylo::{generate_tree, TreeKind};
use crate::simulate::{simulate_tips, SimConfig};

/// Generating values shared by all kinds; each kind uses the subset it has.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrueValues {
    pub alpha_y: f64,
    pub alpha_theta: f64,
    pub sigma_y: f64,
    pub tau: f64,
    pub b0: f64,
    pub b1: f64,
    /// Brownian rate of the predictor; the optimum diffuses at `|b₁| σ_x`.
    pub sigma_x: f64,
}

impl Default for TrueValues {
    fn default() -> Self {
        Self { alpha_y: 0.05, alpha_theta: 0.12, sigma_y: 0.10, tau: 0.30, b0: 1.20, b1: 0.72, sigma_x: 1.0 }
    }
}

impl TrueValues {
    /// Structural parameters for `kind`. The stochastic-rate kinds start
    /// their rate at zero unless `free_initial_rate` is set.
    pub fn params(&self, kind: ModelKind, free_initial_rate: bool) -> Result<ModelParams> {
        let sigma_y = if kind.has_stochastic_rate() && !free_initial_rate { 0.0 } else { self.sigma_y };
        ModelParams::forced(
            kind,
            self.alpha_y,
            self.alpha_theta,
            sigma_y,
            self.b1.abs() * self.sigma_x,
            self.tau,
        )
    }

    fn value(&self, name: &str) -> f64 {
        match name {
            "alpha_y" => self.alpha_y,
            "alpha_theta" => self.alpha_theta,
            "sigma_y" => self.sigma_y,
            "tau" => self.tau,
            "b0" => self.b0,
            "b1" => self.b1,
            _ => f64::NAN,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BiasStudyConfig {
    pub kinds: Vec<ModelKind>,
    pub tree_kinds: Vec<TreeKind>,
    pub sizes: Vec<usize>,
    pub replicates: usize,
    /// Root-to-tip depth of every generated tree.
    pub tree_depth: f64,
    pub seed: u64,
    pub truth: TrueValues,
    /// Simulation step; `None` uses the simulator default for each tree.
    pub dt: Option<f64>,
    pub fit: FitConfig,
}

impl Default for BiasStudyConfig {
    fn default() -> Self {
        Self {
            kinds: vec![ModelKind::Oubm, ModelKind::Ouou, ModelKind::Oubmbm, ModelKind::Ououbm],
            tree_kinds: TreeKind::ALL.to_vec(),
            sizes: vec![16, 32, 64, 128],
            replicates: 50,
            tree_depth: 100.0,
            seed: 1,
            truth: TrueValues::default(),
            dt: Some(0.05),
            fit: FitConfig::default(),
        }
    }
}

impl BiasStudyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kinds.is_empty() || self.tree_kinds.is_empty() || self.sizes.is_empty() || self.replicates == 0 {
            return Err(Error::InvalidArgument("bias study needs at least one kind, tree kind, size and replicate".into()));
        }
        if self.sizes.iter().any(|&n| n < 4) {
            return Err(Error::InvalidArgument("bias study sample sizes must be at least 4".into()));
        }
        if !(self.tree_depth > 0.0 && self.tree_depth.is_finite()) {
            return Err(Error::InvalidArgument("tree depth must be positive".into()));
        }
        for k in &self.kinds {
            if !k.has_stochastic_optimum() {
                return Err(Error::InvalidArgument(format!(
                    "{k} has no stochastic optimum and cannot generate predictor data"
                )));
            }
        }
        Ok(())
    }
}

/// One (kind, tree kind, size, replicate) combination of the sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BiasCell {
    pub index: usize,
    pub kind: ModelKind,
    pub tree_kind: TreeKind,
    pub n: usize,
    pub replicate: usize,
}

/// All cells in sweep order: kind, then tree kind, then size, then replicate.
pub fn bias_study_cells(config: &BiasStudyConfig) -> Vec<BiasCell> {
    let mut cells = Vec::new();
    for &kind in &config.kinds {
        for &tree_kind in &config.tree_kinds {
            for &n in &config.sizes {
                for replicate in 0..config.replicates {
                    cells.push(BiasCell { index: cells.len(), kind, tree_kind, n, replicate });
                }
            }
        }
    }
    cells
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasRow {
    pub cell: usize,
    pub kind: ModelKind,
    pub tree_kind: TreeKind,
    pub n: usize,
    pub replicate: usize,
    pub parameter: String,
    pub true_value: f64,
    /// `None` when the fit failed outright.
    pub estimate: Option<f64>,
    pub converged: bool,
}

fn estimate_of(fit: &FitResult, name: &str) -> f64 {
    match name {
        "alpha_y" => fit.params.alpha_y,
        "alpha_theta" => fit.params.alpha_theta,
        "sigma_y" => fit.params.sigma_y,
        "tau" => fit.params.tau,
        "b0" => fit.b[0],
        "b1" => fit.b[1],
        _ => f64::NAN,
    }
}

/// Simulates and fits one cell. Seeds for the tree, the simulation and the
/// fit are all derived from the study seed and the cell's position in the
/// full sweep, so any subset of cells can be run in any order.
pub fn run_cell(config: &BiasStudyConfig, cell: &BiasCell) -> Result<Vec<BiasRow>> {
    let base = mix_seed(config.seed, cell.index as u64);
    let tree = generate_tree(cell.tree_kind, cell.n, config.tree_depth, mix_seed(base, 1))?;
    let t = &config.truth;
    let params = t.params(cell.kind, config.fit.free_initial_rate)?;
    let init = InitialState { y0: t.b0, theta0: t.b0, sigma0: params.sigma_y };
    let sim = SimConfig {
        dt: config.dt,
        seed: mix_seed(base, 2),
        b0: t.b0,
        b1: t.b1,
        ..SimConfig::default()
    };
    let data = simulate_tips(&tree, &params, &init, &sim)?;
    let fit_cfg = FitConfig { seed: mix_seed(base, 3), ..config.fit.clone() };
    let fit = fit_model(&tree, &data, cell.kind, &fit_cfg);
    if let Err(e) = &fit {
        log::warn!("cell {} ({} {} n={} rep {}) failed: {e}", cell.index, cell.kind, cell.tree_kind, cell.n, cell.replicate);
    }
    let mut names: Vec<&str> = estimated_parameters(cell.kind, config.fit.free_initial_rate);
    names.extend(["b0", "b1"]);
    Ok(names
        .into_iter()
        .map(|name| BiasRow {
            cell: cell.index,
            kind: cell.kind,
            tree_kind: cell.tree_kind,
            n: cell.n,
            replicate: cell.replicate,
            parameter: name.to_string(),
            true_value: if name == "sigma_y" { params.sigma_y } else { t.value(name) },
            estimate: fit.as_ref().ok().map(|f| estimate_of(f, name)),
            converged: fit.as_ref().is_ok_and(|f| f.converged),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasStudyTable {
    pub rows: Vec<BiasRow>,
}

impl BiasStudyTable {
    pub const TSV_HEADER: &'static str = "kind\ttree\tn\treplicate\tparameter\ttrue\testimate\tconverged\n";

    pub fn row_tsv(r: &BiasRow) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            r.kind,
            r.tree_kind,
            r.n,
            r.replicate,
            r.parameter,
            fmt12(r.true_value),
            r.estimate.map_or_else(|| "NA".to_string(), fmt12),
            r.converged
        )
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from(Self::TSV_HEADER);
        for r in &self.rows {
            out.push_str(&Self::row_tsv(r));
        }
        out
    }
}

/// Runs every cell (in parallel) and merges rows in cell order.
pub fn bias_study(config: &BiasStudyConfig) -> Result<BiasStudyTable> {
    config.validate()?;
    let cells = bias_study_cells(config);
    let per_cell: Vec<Vec<BiasRow>> =
        cells.par_iter().map(|c| run_cell(config, c)).collect::<Result<_>>()?;
    Ok(BiasStudyTable { rows: per_cell.into_iter().flatten().collect() })
}

/// Linear-interpolation sample quantile of sorted data.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuartileRow {
    pub kind: ModelKind,
    pub tree_kind: TreeKind,
    pub n: usize,
    pub parameter: String,
    pub true_value: f64,
    pub count: usize,
    pub missing: usize,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

impl QuartileRow {
    pub fn iqr(&self) -> f64 {
        self.q3 - self.q1
    }

    pub fn to_tsv(rows: &[QuartileRow]) -> String {
        let mut out = String::from("kind\ttree\tn\tparameter\ttrue\tcount\tmissing\tq1\tmedian\tq3\tiqr\n");
        for r in rows {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                r.kind,
                r.tree_kind,
                r.n,
                r.parameter,
                fmt12(r.true_value),
                r.count,
                r.missing,
                fmt12(r.q1),
                fmt12(r.median),
                fmt12(r.q3),
                fmt12(r.iqr())
            ));
        }
        out
    }
}

/// Quartiles of the estimates per (kind, tree kind, size, parameter), in
/// first-appearance order. Missing estimates are counted, not used.
pub fn quartile_summary(rows: &[BiasRow]) -> Vec<QuartileRow> {
    let mut groups: Vec<(QuartileRow, Vec<f64>)> = Vec::new();
    for r in rows {
        let pos = groups.iter().position(|(g, _)| {
            g.kind == r.kind && g.tree_kind == r.tree_kind && g.n == r.n && g.parameter == r.parameter
        });
        let i = pos.unwrap_or_else(|| {
            groups.push((
                QuartileRow {
                    kind: r.kind,
                    tree_kind: r.tree_kind,
                    n: r.n,
                    parameter: r.parameter.clone(),
                    true_value: r.true_value,
                    count: 0,
                    missing: 0,
                    q1: f64::NAN,
                    median: f64::NAN,
                    q3: f64::NAN,
                },
                Vec::new(),
            ));
            groups.len() - 1
        });
        match r.estimate.filter(|v| v.is_finite()) {
            Some(v) => groups[i].1.push(v),
            None => groups[i].0.missing += 1,
        }
    }
    groups
        .into_iter()
        .map(|(mut g, mut v)| {
            g.count = v.len();
            if !v.is_empty() {
                v.sort_by(f64::total_cmp);
                g.q1 = quantile(&v, 0.25);
                g.median = quantile(&v, 0.5);
                g.q3 = quantile(&v, 0.75);
            }
            g
        })
        .collect()
}
