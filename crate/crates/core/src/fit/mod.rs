//! Maximum-likelihood fitting by alternating a structural-parameter search
//! with GLS updates of the regression coefficients, wrapped in a multi-start
//! search.
//!
//! The optimum's diffusion is not a free parameter: it is tied to the
//! regression slope and the predictor's Brownian rate by `σ_θ = |b₁| σ_x`.

mod optimize;
mod regression;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::covmodel::{CovarianceBuilder, CovarianceMatrices};
use crate::error::{Error, Result};
use crate::linalg::factor_with_jitter;
use crate::moments::{InitialState, ModelKind, ModelParams};
use crate::phylo::{shared_path_matrix, PhyloTree};
use crate::simulate::TipDataset;

pub use optimize::{nelder_mead, Minimum, NelderMeadOptions};
pub use regression::{
    gls_estimate, gls_estimate_factored, log_likelihood, log_likelihood_factored, ols_estimate,
    r_squared, RegressionDesign,
};

/// Closed interval for one structural parameter. `lower == upper` pins the
/// parameter (zero allowed); otherwise the search runs on the log scale and
/// `lower` must be positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lower: f64,
    pub upper: f64,
}

impl Bounds {
    pub const fn new(lower: f64, upper: f64) -> Self {
        Self { lower, upper }
    }

    pub fn is_pinned(&self) -> bool {
        self.lower == self.upper
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamBox {
    pub alpha_y: Bounds,
    pub alpha_theta: Bounds,
    pub sigma_y: Bounds,
    pub tau: Bounds,
}

impl Default for ParamBox {
    fn default() -> Self {
        Self {
            alpha_y: Bounds::new(1e-5, 50.0),
            alpha_theta: Bounds::new(1e-5, 50.0),
            sigma_y: Bounds::new(1e-6, 100.0),
            tau: Bounds::new(1e-6, 100.0),
        }
    }
}

impl ParamBox {
    fn get(&self, p: Structural) -> Bounds {
        match p {
            Structural::AlphaY => self.alpha_y,
            Structural::AlphaTheta => self.alpha_theta,
            Structural::SigmaY => self.sigma_y,
            Structural::Tau => self.tau,
        }
    }

    fn validate(&self) -> Result<()> {
        for p in Structural::ALL {
            let b = self.get(p);
            let ok = b.lower.is_finite()
                && b.upper.is_finite()
                && b.lower >= 0.0
                && b.lower <= b.upper
                && (b.is_pinned() || b.lower > 0.0);
            if !ok {
                return Err(Error::InvalidArgument(format!(
                    "bad bounds [{}, {}] for {}",
                    b.lower,
                    b.upper,
                    p.name()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    /// Stop the GLS loop once `‖b_new − b_old‖∞` falls below this.
    pub tol: f64,
    pub max_gls_iter: usize,
    pub max_starts: usize,
    pub max_attempts: usize,
    /// Stop after this many likelihood improvements across starts.
    pub improvements: usize,
    /// Likelihood evaluations allowed per attempt, across all GLS iterations.
    pub max_evals: usize,
    pub bounds: ParamBox,
    pub seed: u64,
    /// Estimate the initial rate σ_y for the stochastic-rate kinds instead of
    /// fixing it at zero.
    pub free_initial_rate: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_gls_iter: 100,
            max_starts: 5,
            max_attempts: 5,
            improvements: 3,
            max_evals: 2000,
            bounds: ParamBox::default(),
            seed: 0,
            free_initial_rate: false,
        }
    }
}

impl FitConfig {
    fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0)
            || self.max_gls_iter == 0
            || self.max_starts == 0
            || self.max_attempts == 0
            || self.improvements == 0
            || self.max_evals == 0
        {
            return Err(Error::InvalidArgument("fit tolerances and budgets must be positive".into()));
        }
        self.bounds.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Structural {
    AlphaY,
    AlphaTheta,
    SigmaY,
    Tau,
}

impl Structural {
    const ALL: [Structural; 4] = [Self::AlphaY, Self::AlphaTheta, Self::SigmaY, Self::Tau];

    fn name(self) -> &'static str {
        match self {
            Self::AlphaY => "alpha_y",
            Self::AlphaTheta => "alpha_theta",
            Self::SigmaY => "sigma_y",
            Self::Tau => "tau",
        }
    }
}

/// Structural parameters estimated for `kind`. The stochastic-rate kinds
/// start their rate at zero unless `free_initial_rate` is set.
fn structural_for(kind: ModelKind, free_initial_rate: bool) -> Vec<Structural> {
    use Structural::*;
    let mut v = match kind {
        ModelKind::Bm => vec![SigmaY],
        ModelKind::Ou | ModelKind::Oubm => vec![AlphaY, SigmaY],
        ModelKind::Ouou => vec![AlphaY, AlphaTheta, SigmaY],
        ModelKind::Oubmbm => vec![AlphaY, Tau],
        ModelKind::Ououbm => vec![AlphaY, AlphaTheta, Tau],
    };
    if kind.has_stochastic_rate() && free_initial_rate {
        v.insert(v.len() - 1, SigmaY);
    }
    v
}

/// Names of the structural parameters estimated for `kind`.
pub fn estimated_parameters(kind: ModelKind, free_initial_rate: bool) -> Vec<&'static str> {
    structural_for(kind, free_initial_rate).into_iter().map(Structural::name).collect()
}

/// Number of estimated parameters: structural ones plus the `q` coefficients.
pub fn parameter_count(kind: ModelKind, q: usize, free_initial_rate: bool) -> usize {
    structural_for(kind, free_initial_rate).len() + q
}

/// ML estimate of the predictor's Brownian rate on the tree,
/// `(X − μ̂1)'G⁻¹(X − μ̂1) / n` with μ̂ the GLS mean.
pub fn estimate_predictor_rate(tree: &PhyloTree, x: &[f64]) -> Result<f64> {
    let n = tree.n_tips();
    if n < 2 || x.len() != n {
        return Err(Error::InvalidArgument(format!(
            "need one predictor value per tip and at least two tips (tips {n}, values {})",
            x.len()
        )));
    }
    let g = shared_path_matrix(tree).matrix;
    let factor = factor_with_jitter(&g)?;
    let design = RegressionDesign::new(&vec![1.0; n], &[], x)?;
    let mu = gls_estimate_factored(&design, &factor)?;
    let w = factor
        .cholesky
        .l_dirty()
        .solve_lower_triangular(&design.residuals(&mu))
        .expect("positive diagonal");
    Ok(w.norm_squared() / n as f64)
}

/// One multi-start attempt, as recorded in [`FitResult::trace`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttemptTrace {
    pub start: usize,
    pub attempt: usize,
    pub log_likelihood: f64,
    pub converged: bool,
    pub gls_iterations: usize,
    pub evaluations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub kind: ModelKind,
    pub b: Vec<f64>,
    pub params: ModelParams,
    #[serde(rename = "logL")]
    pub log_likelihood: f64,
    #[serde(rename = "r2")]
    pub r_squared: f64,
    pub k: usize,
    pub n: usize,
    pub converged: bool,
    #[serde(rename = "iters")]
    pub iterations: usize,
    pub seed: u64,
    /// Estimated Brownian rate σ_x² of the predictor.
    pub predictor_rate: f64,
    /// ρ at the deepest tip, the attenuation applied to the fitted line.
    pub rho_at_max_depth: f64,
    pub evaluations: usize,
    pub trace: Vec<AttemptTrace>,
}

impl FitResult {
    /// Fitted response `b₀ + b₁ ρ(T) x` at the deepest tip depth T.
    pub fn predict(&self, x: f64) -> f64 {
        self.b[0] + self.b[1] * self.rho_at_max_depth * x
    }
}

struct Problem<'a> {
    kind: ModelKind,
    builder: CovarianceBuilder,
    data: &'a TipDataset,
    sigma_x: f64,
    free: Vec<Structural>,
    fixed: [f64; 4],
    lower: Vec<f64>,
    upper: Vec<f64>,
}

struct Evaluation {
    log_likelihood: f64,
    cov: CovarianceMatrices,
    design: RegressionDesign,
    params: ModelParams,
}

impl<'a> Problem<'a> {
    fn params(&self, u: &[f64], b1: f64) -> Result<ModelParams> {
        let mut v = self.fixed;
        for (p, x) in self.free.iter().zip(u) {
            v[*p as usize] = x.exp();
        }
        let sigma_theta =
            if self.kind.has_stochastic_optimum() { b1.abs() * self.sigma_x } else { 0.0 };
        ModelParams::new(self.kind, v[0], v[1], v[2], sigma_theta, v[3])
    }

    fn evaluate(&self, u: &[f64], b: &DVector<f64>) -> Result<Evaluation> {
        let params = self.params(u, b[1])?;
        let init = InitialState::root(&params, 0.0);
        let cov = self.builder.build(&params, &init)?;
        let design = RegressionDesign::new(cov.rho.as_slice(), &[&self.data.x], &self.data.y)?;
        let log_likelihood = log_likelihood_factored(&design, b, cov.factor());
        if !log_likelihood.is_finite() {
            return Err(Error::NonFinite("log-likelihood".into()));
        }
        Ok(Evaluation { log_likelihood, cov, design, params })
    }

    fn neg_log_likelihood(&self, u: &[f64], b: &DVector<f64>) -> f64 {
        self.evaluate(u, b).map_or(f64::INFINITY, |e| -e.log_likelihood)
    }

    fn clamp(&self, u: &mut [f64]) {
        for ((v, lo), hi) in u.iter_mut().zip(&self.lower).zip(&self.upper) {
            *v = v.clamp(*lo, *hi);
        }
    }
}

struct Attempt {
    u: Vec<f64>,
    b: DVector<f64>,
    log_likelihood: f64,
    converged: bool,
    iterations: usize,
    evals: usize,
}

fn run_attempt(problem: &Problem, u0: &[f64], b0: &DVector<f64>, config: &FitConfig) -> Option<Attempt> {
    let mut u = u0.to_vec();
    let mut b = b0.clone();
    let mut evals = 0;
    let mut converged = false;
    let mut iterations = 0;
    let mut step = 0.5;
    for iter in 1..=config.max_gls_iter {
        // The evaluation budget is shared by every GLS iteration of the attempt.
        if evals >= config.max_evals {
            break;
        }
        iterations = iter;
        let opts = NelderMeadOptions { max_evals: config.max_evals - evals, step, ..Default::default() };
        let m = nelder_mead(|x| problem.neg_log_likelihood(x, &b), &u, &problem.lower, &problem.upper, &opts);
        evals += m.evals;
        if !m.value.is_finite() {
            return None;
        }
        u = m.x;
        let nm_converged = m.converged;
        let e = problem.evaluate(&u, &b).ok()?;
        let b_new = gls_estimate_factored(&e.design, e.cov.factor()).ok()?;
        let delta = (&b_new - &b).amax();
        b = b_new;
        step = 0.1;
        if delta < config.tol {
            converged = nm_converged;
            break;
        }
    }
    let log_likelihood = problem.evaluate(&u, &b).ok()?.log_likelihood;
    Some(Attempt { u, b, log_likelihood, converged, iterations, evals })
}

fn norm(u: &[f64]) -> f64 {
    u.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Fits `kind` to the tip data by iterated GLS and multi-start likelihood
/// maximization. Non-convergence is reported through
/// [`FitResult::converged`]; an error means no start produced a finite
/// likelihood.
pub fn fit_model(
    tree: &PhyloTree,
    dataset: &TipDataset,
    kind: ModelKind,
    config: &FitConfig,
) -> Result<FitResult> {
    config.validate()?;
    let data = dataset.align_to(tree)?;
    let n = data.len();
    let q = 2;
    if n <= q {
        return Err(Error::InvalidArgument(format!("need more than {q} tips to fit, got {n}")));
    }
    let predictor_rate = estimate_predictor_rate(tree, &data.x)?;
    let ols_design = RegressionDesign::new(&vec![1.0; n], &[&data.x], &data.y)?;
    let b_ols = ols_estimate(&ols_design)?;

    let all = structural_for(kind, config.free_initial_rate);
    let mut fixed = [0.0; 4];
    let mut free = Vec::new();
    for p in &all {
        let bounds = config.bounds.get(*p);
        if bounds.is_pinned() {
            fixed[*p as usize] = bounds.lower;
        } else {
            free.push(*p);
        }
    }
    let lower: Vec<f64> = free.iter().map(|p| config.bounds.get(*p).lower.ln()).collect();
    let upper: Vec<f64> = free.iter().map(|p| config.bounds.get(*p).upper.ln()).collect();
    let problem = Problem {
        kind,
        builder: CovarianceBuilder::new(tree),
        data: &data,
        sigma_x: predictor_rate.sqrt(),
        free,
        fixed,
        lower,
        upper,
    };

    // Data-driven first start.
    let depth = tree.max_tip_depth().max(f64::MIN_POSITIVE);
    let s2 = (ols_design.residuals(&b_ols).norm_squared() / n as f64).max(1e-12);
    let mut heuristic: Vec<f64> = problem
        .free
        .iter()
        .map(|p| match p {
            Structural::AlphaY | Structural::AlphaTheta => (1.0 / depth).ln(),
            Structural::SigmaY => (s2 / depth).sqrt().ln(),
            Structural::Tau => ((2.0 * s2).sqrt() / depth).ln(),
        })
        .collect();
    problem.clamp(&mut heuristic);

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut best: Option<Attempt> = None;
    let mut trace = Vec::new();
    let mut improvements = 0;
    let mut evaluations = 0;
    for start in 0..config.max_starts {
        let mut u: Vec<f64> = match (&best, start) {
            (_, 0) => heuristic.clone(),
            (Some(bst), s) if s % 2 == 1 => {
                bst.u.iter().map(|v| v + rng.random_range(-0.5..=0.5)).collect()
            }
            _ => problem.lower.iter().zip(&problem.upper).map(|(lo, hi)| rng.random_range(*lo..=*hi)).collect(),
        };
        problem.clamp(&mut u);
        let mut b = b_ols.clone();
        let mut outcome: Option<Attempt> = None;
        for attempt in 0..config.max_attempts {
            let Some(a) = run_attempt(&problem, &u, &b, config) else {
                trace.push(AttemptTrace {
                    start,
                    attempt,
                    log_likelihood: f64::NAN,
                    converged: false,
                    gls_iterations: 0,
                    evaluations: 0,
                });
                break;
            };
            evaluations += a.evals;
            trace.push(AttemptTrace {
                start,
                attempt,
                log_likelihood: a.log_likelihood,
                converged: a.converged,
                gls_iterations: a.iterations,
                evaluations: a.evals,
            });
            u = a.u.clone();
            b = a.b.clone();
            let done = a.converged;
            outcome = Some(a);
            if done {
                break;
            }
        }
        let Some(a) = outcome else { continue };
        // Converged searches always outrank unconverged ones; only they count
        // as likelihood improvements.
        let improved = a.converged
            && best.as_ref().is_none_or(|bst| !bst.converged || a.log_likelihood > bst.log_likelihood + 1e-9);
        let replace = match &best {
            None => true,
            Some(bst) if a.converged != bst.converged => a.converged,
            Some(bst) => {
                a.log_likelihood > bst.log_likelihood + 1e-9
                    || ((a.log_likelihood - bst.log_likelihood).abs() <= 1e-9 && norm(&a.u) < norm(&bst.u))
            }
        };
        if replace {
            best = Some(a);
        }
        if improved {
            improvements += 1;
            if improvements >= config.improvements {
                break;
            }
        }
    }

    let best = best.ok_or_else(|| {
        Error::NoConvergence(format!("no start produced a finite likelihood for {kind}"))
    })?;
    let e = problem.evaluate(&best.u, &best.b)?;
    let r2 = r_squared(&e.design, &best.b, e.cov.factor()).unwrap_or(f64::NAN);
    let rho_at_max_depth = if e.params.sigma_theta > 0.0 {
        crate::moments::rho(&e.params, &InitialState::root(&e.params, 0.0), tree.max_tip_depth())
            .unwrap_or(1.0)
    } else {
        1.0
    };
    Ok(FitResult {
        kind,
        b: best.b.iter().copied().collect(),
        params: e.params,
        log_likelihood: e.log_likelihood,
        r_squared: r2,
        k: problem.free.len() + q,
        n,
        converged: best.converged,
        iterations: best.iterations,
        seed: config.seed,
        predictor_rate,
        rho_at_max_depth,
        evaluations,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phylo::{generate_tree, parse_newick, TreeKind};
    use crate::simulate::{simulate_tips, SimConfig};

    #[test]
    fn parameter_counts() {
        let q = 2;
        assert_eq!(parameter_count(ModelKind::Bm, q, false), 3);
        assert_eq!(parameter_count(ModelKind::Ou, q, false), 4);
        assert_eq!(parameter_count(ModelKind::Oubm, q, false), 4);
        assert_eq!(parameter_count(ModelKind::Ouou, q, false), 5);
        assert_eq!(parameter_count(ModelKind::Oubmbm, q, false), 4);
        assert_eq!(parameter_count(ModelKind::Ououbm, q, false), 5);
        assert_eq!(parameter_count(ModelKind::Oubmbm, q, true), 5);
        assert_eq!(parameter_count(ModelKind::Oubm, q, true), 4);
    }

    #[test]
    fn predictor_rate_star_is_ml_variance() {
        let t = parse_newick("(A:1,B:1,C:1,D:1);").unwrap();
        let x = [1.0, 2.0, 4.0, 5.0];
        let m = 3.0;
        let want = x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / 4.0;
        assert!((estimate_predictor_rate(&t, &x).unwrap() - want).abs() < 1e-12);
        assert!(estimate_predictor_rate(&t, &[2.0; 4]).unwrap().abs() < 1e-24);
    }

    #[test]
    fn predictor_rate_two_tips_scan() {
        let t = parse_newick("((A:1,B:2):0.5);").unwrap();
        let x = [0.3, 1.4];
        let est = estimate_predictor_rate(&t, &x).unwrap();
        let g = shared_path_matrix(&t).matrix;
        let profile = |s2: f64| {
            let v = &g * s2;
            let d = RegressionDesign::new(&[1.0, 1.0], &[], &x).unwrap();
            let mu = gls_estimate(&d, &v).unwrap();
            log_likelihood(&d, &mu, &v).unwrap()
        };
        let grid: Vec<f64> = (1..4000).map(|i| i as f64 * 1e-3).collect();
        let best = grid.iter().copied().max_by(|a, b| profile(*a).total_cmp(&profile(*b))).unwrap();
        assert!((est - best).abs() < 1e-3, "{est} vs {best}");
    }

    #[test]
    fn label_mismatch_is_reported() {
        let t = parse_newick("(A:1,B:1,C:1);").unwrap();
        let d = TipDataset::new(vec!["A".into(), "B".into(), "Z".into()], vec![0.0; 3], vec![0.0; 3]).unwrap();
        assert!(matches!(fit_model(&t, &d, ModelKind::Bm, &FitConfig::default()), Err(Error::LabelMismatch(_))));
    }

    #[test]
    fn brownian_fit_matches_closed_form() {
        let t = generate_tree(TreeKind::Balanced, 16, 1.0, 1).unwrap();
        let p = ModelParams::new(ModelKind::Bm, 0.0, 0.0, 0.7, 0.0, 0.0).unwrap();
        let d = simulate_tips(&t, &p, &InitialState::root(&p, 0.0), &SimConfig { seed: 4, ..SimConfig::default() }).unwrap();
        let fit = fit_model(&t, &d, ModelKind::Bm, &FitConfig::default()).unwrap();
        assert!(fit.converged);
        // BM ML: b is GLS under G, σ² = r'G⁻¹r / n
        let g = shared_path_matrix(&t).matrix;
        let design = RegressionDesign::new(&[1.0; 16], &[&d.x], &d.y).unwrap();
        let b = gls_estimate(&design, &g).unwrap();
        let f = factor_with_jitter(&g).unwrap();
        let w = f.cholesky.l_dirty().solve_lower_triangular(&design.residuals(&b)).unwrap();
        let s2 = w.norm_squared() / 16.0;
        assert!((fit.b[1] - b[1]).abs() < 1e-6);
        assert!((fit.params.sigma_y.powi(2) - s2).abs() < 1e-5 * s2.max(1.0));
    }

    #[test]
    fn pinned_rate_volatility_reduces_to_oubm() {
        let t = generate_tree(TreeKind::BirthDeath, 12, 20.0, 3).unwrap();
        let truth = ModelParams::new(ModelKind::Oubm, 0.1, 0.0, 0.3, 0.3, 0.0).unwrap();
        let sim = SimConfig { seed: 5, b0: 1.2, b1: 0.72, ..SimConfig::default() };
        let d = simulate_tips(&t, &truth, &InitialState::root(&truth, 1.2), &sim).unwrap();
        let base = FitConfig { seed: 9, free_initial_rate: true, ..FitConfig::default() };
        let oubm = fit_model(&t, &d, ModelKind::Oubm, &base).unwrap();
        let mut pinned = base.clone();
        pinned.bounds.tau = Bounds::new(0.0, 0.0);
        let nested = fit_model(&t, &d, ModelKind::Oubmbm, &pinned).unwrap();
        assert!((oubm.log_likelihood - nested.log_likelihood).abs() < 1e-6,
            "{} vs {}", oubm.log_likelihood, nested.log_likelihood);
    }

    #[test]
    fn multistart_trace_is_monotone_and_deterministic() {
        let t = generate_tree(TreeKind::BirthDeath, 16, 30.0, 8).unwrap();
        let truth = ModelParams::new(ModelKind::Ouou, 0.05, 0.12, 0.1, 0.3, 0.0).unwrap();
        let sim = SimConfig { seed: 2, b0: 1.2, b1: 0.72, ..SimConfig::default() };
        let d = simulate_tips(&t, &truth, &InitialState::root(&truth, 1.2), &sim).unwrap();
        let cfg = FitConfig { seed: 3, ..FitConfig::default() };
        let a = fit_model(&t, &d, ModelKind::Ouou, &cfg).unwrap();
        let b = fit_model(&t, &d, ModelKind::Ouou, &cfg).unwrap();
        assert_eq!(a, b);
        let best_seen = a.trace.iter().map(|t| t.log_likelihood).filter(|v| v.is_finite()).fold(f64::NEG_INFINITY, f64::max);
        assert!(a.log_likelihood >= best_seen - 1e-9);
        assert_eq!(a.k, 5);
    }
}
