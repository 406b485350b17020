//! Between-species trait covariance Σ_Y and residual covariance V.
//!
//! Two tips that split at depth t_a evolve independently afterwards, so
//! `Cov[U_i, W_j] = Cov[E[U_i | Z_a], E[W_j | Z_a]]` where Z_a is the
//! ancestral state. With `E[y_i | Z_a] = c_y(t_i) y_a + c_θ(t_i) θ_a` and
//! `E[θ_i | Z_a] = e^{-α_θ t_i} θ_a`, all four pair terms follow from the
//! ancestral central moments. Unequal post-split times are handled exactly
//! (coefficients evaluated at each tip's own t_i), which reduces to the
//! usual `t_ij / 2` form on ultrametric pairs.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::format::fmt12;
use crate::linalg::{factor_with_jitter, Factor};
use crate::moments::{
    central_moments, coefficients_unchecked, rho_from, CentralMoments, InitialState, ModelParams,
};
use crate::phylo::PhyloTree;

/// The four covariance terms between tips i and j.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairCovariance {
    pub y_y: f64,
    pub y_i_theta_j: f64,
    pub y_j_theta_i: f64,
    pub theta_theta: f64,
}

#[derive(Debug, Clone, Copy)]
struct Coeffs {
    c_y: f64,
    c_theta: f64,
    e_theta: f64,
}

fn coeffs(params: &ModelParams, t: f64) -> Coeffs {
    let (c_y, c_theta) = coefficients_unchecked(params, t);
    Coeffs { c_y, c_theta, e_theta: (-params.alpha_theta * t).exp() }
}

fn pair_terms(anc: &CentralMoments, i: Coeffs, j: Coeffs) -> PairCovariance {
    let CentralMoments { var_y, cov_yt, var_theta } = *anc;
    PairCovariance {
        y_y: i.c_y * j.c_y * var_y
            + i.c_theta * j.c_theta * var_theta
            + (i.c_y * j.c_theta + i.c_theta * j.c_y) * cov_yt,
        y_i_theta_j: j.e_theta * (i.c_y * cov_yt + i.c_theta * var_theta),
        y_j_theta_i: i.e_theta * (j.c_y * cov_yt + j.c_theta * var_theta),
        theta_theta: i.e_theta * j.e_theta * var_theta,
    }
}

fn check_times(t_a: f64, t_i: f64, t_j: f64) -> Result<()> {
    if [t_a, t_i, t_j].iter().all(|t| t.is_finite() && *t >= 0.0) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("times must be finite and >= 0: ({t_a}, {t_i}, {t_j})")))
    }
}

/// All four covariance terms for a pair that split at `t_a` and then evolved
/// for `t_i` and `t_j`, starting from the deterministic root state `init`.
pub fn cross_moment_pair(
    params: &ModelParams,
    init: &InitialState,
    t_a: f64,
    t_i: f64,
    t_j: f64,
) -> Result<PairCovariance> {
    params.validate()?;
    init.validate()?;
    check_times(t_a, t_i, t_j)?;
    let anc = central_moments(params, init.sigma0, t_a);
    Ok(pair_terms(&anc, coeffs(params, t_i), coeffs(params, t_j)))
}

/// `Cov[y_i, y_j]`.
pub fn species_covariance_pair(
    params: &ModelParams,
    init: &InitialState,
    t_a: f64,
    t_i: f64,
    t_j: f64,
) -> Result<f64> {
    cross_moment_pair(params, init, t_a, t_i, t_j).map(|p| p.y_y)
}

/// Σ_Y and V over the tips of a tree.
#[derive(Debug, Clone)]
pub struct CovarianceMatrices {
    /// Trait covariance `Cov[y_i, y_j]`.
    pub sigma_y: DMatrix<f64>,
    /// Residual covariance of `y − ρ θ`.
    pub v: DMatrix<f64>,
    /// Per-tip optimal-regression slope. All ones when the optimum is
    /// deterministic (σ_θ = 0), in which case `v == sigma_y`.
    pub rho: DVector<f64>,
    pub labels: Vec<String>,
    /// Diagonal jitter added to V before factorization (0 when none needed).
    pub jitter: f64,
    factor: Factor,
}

impl CovarianceMatrices {
    /// Cholesky factor of V (including any jitter).
    pub fn factor(&self) -> &Factor {
        &self.factor
    }

    /// Tab-separated dump with a tip-order header row.
    pub fn to_tsv(matrix: &DMatrix<f64>, labels: &[String]) -> String {
        let mut out = String::from("species");
        for l in labels {
            out.push('\t');
            out.push_str(l);
        }
        out.push('\n');
        for (i, l) in labels.iter().enumerate() {
            out.push_str(l);
            for j in 0..matrix.ncols() {
                out.push('\t');
                out.push_str(&fmt12(matrix[(i, j)]));
            }
            out.push('\n');
        }
        out
    }
}

/// Tree-dependent bookkeeping reused across parameter values: ancestor
/// chains per tip and the MRCA of every pair.
#[derive(Debug, Clone)]
pub struct CovarianceBuilder {
    n: usize,
    labels: Vec<String>,
    tip_depth: Vec<f64>,
    node_depth: Vec<f64>,
    level: Vec<usize>,
    /// root→tip node chain per tip, flattened.
    chain: Vec<usize>,
    chain_start: Vec<usize>,
    mrca: Vec<usize>,
}

impl CovarianceBuilder {
    pub fn new(tree: &PhyloTree) -> Self {
        let n = tree.n_tips();
        let mut level = vec![0usize; tree.n_nodes()];
        for v in tree.preorder() {
            if let Some(p) = tree.node(v).parent {
                level[v] = level[p] + 1;
            }
        }
        let mut chain = Vec::new();
        let mut chain_start = Vec::with_capacity(n + 1);
        for i in 0..n {
            chain_start.push(chain.len());
            let mut path = vec![tree.tip_node(i)];
            while let Some(p) = tree.node(*path.last().unwrap()).parent {
                path.push(p);
            }
            chain.extend(path.into_iter().rev());
        }
        chain_start.push(chain.len());
        Self {
            n,
            labels: tree.tip_labels(),
            tip_depth: tree.tip_depths(),
            node_depth: (0..tree.n_nodes()).map(|v| tree.node_depth(v)).collect(),
            level,
            chain,
            chain_start,
            mrca: tree.mrca_table(),
        }
    }

    pub fn n_tips(&self) -> usize {
        self.n
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn tip_depths(&self) -> &[f64] {
        &self.tip_depth
    }

    /// Assembles Σ_Y, ρ and V and factors V under the jitter policy.
    pub fn build(&self, params: &ModelParams, init: &InitialState) -> Result<CovarianceMatrices> {
        params.validate()?;
        init.validate()?;
        let n = self.n;

        // Ancestral central moments per node, memoized by depth.
        let mut memo: HashMap<u64, CentralMoments> = HashMap::new();
        let mut moments_at = |d: f64| -> CentralMoments {
            *memo.entry(d.to_bits()).or_insert_with(|| central_moments(params, init.sigma0, d))
        };
        let node_moments: Vec<CentralMoments> = self.node_depth.iter().map(|&d| moments_at(d)).collect();

        // Conditional-expectation coefficients from every ancestor to every tip.
        let mut coef = Vec::with_capacity(self.chain.len());
        for i in 0..n {
            let d_i = self.tip_depth[i];
            for &m in &self.chain[self.chain_start[i]..self.chain_start[i + 1]] {
                let t = crate::phylo::tree_complement(d_i, self.node_depth[m]);
                coef.push(coeffs(params, t));
            }
        }
        let coef_at = |i: usize, node: usize| coef[self.chain_start[i] + self.level[node]];

        let random_optimum = params.sigma_theta > 0.0;
        let mut rho = DVector::from_element(n, 1.0);
        if random_optimum {
            for i in 0..n {
                let c = moments_at(self.tip_depth[i]);
                rho[i] = rho_from(&c, self.tip_depth[i])?;
            }
        }

        // Fill the lower triangle column by column (contiguous in column-major
        // storage), then mirror.
        let mut sigma_y = DMatrix::zeros(n, n);
        let mut v = DMatrix::zeros(n, n);
        {
            let sy = sigma_y.as_mut_slice();
            let vs = v.as_mut_slice();
            for i in 0..n {
                let ci = &coef[self.chain_start[i]..self.chain_start[i + 1]];
                let mrca_row = &self.mrca[i * n..(i + 1) * n];
                for j in i..n {
                    let m = mrca_row[j];
                    let p = pair_terms(&node_moments[m], ci[self.level[m]], coef_at(j, m));
                    let r = if random_optimum {
                        p.y_y - rho[j] * p.y_i_theta_j - rho[i] * p.y_j_theta_i
                            + rho[i] * rho[j] * p.theta_theta
                    } else {
                        p.y_y
                    };
                    sy[i * n + j] = p.y_y;
                    vs[i * n + j] = r;
                }
            }
        }
        sigma_y.fill_upper_triangle_with_lower_triangle();
        v.fill_upper_triangle_with_lower_triangle();
        let factor = factor_with_jitter(&v)?;
        Ok(CovarianceMatrices {
            sigma_y,
            v,
            rho,
            labels: self.labels.clone(),
            jitter: factor.jitter,
            factor,
        })
    }
}

/// Σ_Y, per-tip ρ and residual covariance V for `tree`.
pub fn residual_covariance_matrix(
    tree: &PhyloTree,
    params: &ModelParams,
    init: &InitialState,
) -> Result<CovarianceMatrices> {
    CovarianceBuilder::new(tree).build(params, init)
}
