//! Euler–Maruyama simulation of the trait, optimum, rate and predictor along
//! single intervals and whole trees, plus a Monte-Carlo covariance oracle.
//!
//! Every step draws three standard normals in a fixed order (trait, optimum,
//! rate) whether or not the kind uses them, so two kinds simulated from the
//! same seed share their random inputs. When the optimum is stochastic the
//! predictor is read off the optimum through `x = (θ − b₀) / b₁`; otherwise
//! the optimum is held at θ₀ and the predictor follows its own model, driven
//! by the optimum's noise slot.

mod montecarlo;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::fmt12;
use crate::moments::{InitialState, ModelParams};
use crate::phylo::PhyloTree;

pub use montecarlo::{monte_carlo_covariance, McPairCovariance};

/// Default integration step when neither the caller nor the tree suggests one.
pub const DEFAULT_DT: f64 = 0.01;

/// Dynamics of the predictor when the optimum is not itself stochastic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase")]
pub enum PredictorModel {
    Bm { sigma_x: f64 },
    Ou { alpha_x: f64, sigma_x: f64 },
}

impl Default for PredictorModel {
    fn default() -> Self {
        PredictorModel::Bm { sigma_x: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Integration step; `None` picks [`SimConfig::step_for_tree`].
    pub dt: Option<f64>,
    pub seed: u64,
    pub predictor: PredictorModel,
    /// Intercept of the optimum/predictor link θ = b₀ + b₁ x.
    pub b0: f64,
    /// Slope of the optimum/predictor link; must be non-zero when the
    /// optimum is stochastic.
    pub b1: f64,
    /// Starting predictor value for kinds with a constant optimum.
    pub x0: f64,
    /// Keep every grid point of [`simulate_path`].
    pub record_path: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: None,
            seed: 0,
            predictor: PredictorModel::default(),
            b0: 0.0,
            b1: 1.0,
            x0: 0.0,
            record_path: false,
        }
    }
}

impl SimConfig {
    /// `min(0.01, shortest positive branch / 20)`, or the explicit `dt`.
    pub fn step_for_tree(&self, tree: &PhyloTree) -> f64 {
        self.dt.unwrap_or_else(|| match tree.min_branch_length() {
            Some(b) if b > 0.0 => DEFAULT_DT.min(b / 20.0),
            _ => DEFAULT_DT,
        })
    }

    fn validate(&self, params: &ModelParams) -> Result<()> {
        if let Some(dt) = self.dt {
            if !(dt > 0.0 && dt.is_finite()) {
                return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
            }
        }
        let (alpha_x, sigma_x) = match self.predictor {
            PredictorModel::Bm { sigma_x } => (0.0, sigma_x),
            PredictorModel::Ou { alpha_x, sigma_x } => (alpha_x, sigma_x),
        };
        if !(sigma_x >= 0.0 && sigma_x.is_finite() && alpha_x >= 0.0 && alpha_x.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "predictor rates must be finite and >= 0 (alpha_x = {alpha_x}, sigma_x = {sigma_x})"
            )));
        }
        if !(self.b0.is_finite() && self.b1.is_finite() && self.x0.is_finite()) {
            return Err(Error::InvalidArgument("b0, b1 and x0 must be finite".into()));
        }
        if params.kind.has_stochastic_optimum() && self.b1 == 0.0 {
            return Err(Error::InvalidArgument(format!(
                "b1 must be non-zero to map the {} optimum onto a predictor",
                params.kind
            )));
        }
        Ok(())
    }
}

/// Instantaneous state of the simulated lineage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub x: f64,
    pub theta: f64,
    pub y: f64,
    pub sigma_y: f64,
}

impl SimState {
    fn is_finite(&self) -> bool {
        self.x.is_finite() && self.theta.is_finite() && self.y.is_finite() && self.sigma_y.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathPoint {
    pub time: f64,
    pub state: SimState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimPath {
    pub end: SimState,
    /// All grid points including t = 0, when recording was requested.
    pub points: Vec<PathPoint>,
    /// Sample standard deviation of y over every grid point.
    pub trait_sd: f64,
    pub steps: u64,
}

impl SimPath {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("time\tx\ttheta\ty\tsigma_y\n");
        for p in &self.points {
            let s = p.state;
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                fmt12(p.time),
                fmt12(s.x),
                fmt12(s.theta),
                fmt12(s.y),
                fmt12(s.sigma_y)
            ));
        }
        out
    }
}

#[derive(Debug, Default)]
struct Welford {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Welford {
    fn push(&mut self, v: f64) {
        self.n += 1;
        let d = v - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (v - self.mean);
    }

    fn sd(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            (self.m2 / (self.n - 1) as f64).sqrt()
        }
    }
}

/// One realisation of the SDE system; stateless apart from the parameters.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Stepper<'a> {
    params: &'a ModelParams,
    cfg: &'a SimConfig,
    stochastic_optimum: bool,
}

impl<'a> Stepper<'a> {
    pub(crate) fn new(params: &'a ModelParams, cfg: &'a SimConfig) -> Result<Self> {
        params.validate()?;
        cfg.validate(params)?;
        Ok(Self { params, cfg, stochastic_optimum: params.kind.has_stochastic_optimum() })
    }

    pub(crate) fn initial(&self, init: &InitialState) -> SimState {
        let x = if self.stochastic_optimum {
            (init.theta0 - self.cfg.b0) / self.cfg.b1
        } else {
            self.cfg.x0
        };
        SimState { x, theta: init.theta0, y: init.y0, sigma_y: init.sigma0 }
    }

    #[inline]
    pub(crate) fn step<R: Rng>(&self, s: &mut SimState, h: f64, rng: &mut R) {
        let p = self.params;
        let zy: f64 = rng.sample(StandardNormal);
        let zt: f64 = rng.sample(StandardNormal);
        let zs: f64 = rng.sample(StandardNormal);
        let sh = h.sqrt();
        let y = s.y + p.alpha_y * (s.theta - s.y) * h + s.sigma_y * sh * zy;
        if self.stochastic_optimum {
            s.theta += -p.alpha_theta * s.theta * h + p.sigma_theta * sh * zt;
            s.x = (s.theta - self.cfg.b0) / self.cfg.b1;
        } else {
            s.x += match self.cfg.predictor {
                PredictorModel::Bm { sigma_x } => sigma_x * sh * zt,
                PredictorModel::Ou { alpha_x, sigma_x } => -alpha_x * s.x * h + sigma_x * sh * zt,
            };
        }
        s.sigma_y += p.tau * sh * zs;
        s.y = y;
    }

    /// Advances `s` by `duration` in steps of `dt`, shortening the last one.
    /// `visit` sees every new grid point with its offset from the start.
    pub(crate) fn advance<R: Rng>(
        &self,
        s: &mut SimState,
        duration: f64,
        dt: f64,
        rng: &mut R,
        mut visit: impl FnMut(f64, &SimState),
    ) -> Result<u64> {
        let full = (duration / dt).floor() as u64;
        let mut k = 0u64;
        loop {
            let h = if k < full { dt } else { duration - full as f64 * dt };
            if !(h > 0.0) {
                break;
            }
            self.step(s, h, rng);
            k += 1;
            if !s.is_finite() {
                return Err(Error::NonFinite(format!("simulation left the finite range at step {k}")));
            }
            let elapsed = if k > full { duration } else { k as f64 * dt };
            visit(elapsed, s);
            if k > full {
                break;
            }
        }
        Ok(k)
    }
}

/// Generator for one branch (or one path): the seed plus a stream number.
pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Simulates the joint process from `init` over `[0, duration]`.
pub fn simulate_path(
    params: &ModelParams,
    init: &InitialState,
    config: &SimConfig,
    duration: f64,
) -> Result<SimPath> {
    init.validate()?;
    if !(duration > 0.0 && duration.is_finite()) {
        return Err(Error::InvalidArgument(format!("duration must be positive, got {duration}")));
    }
    let stepper = Stepper::new(params, config)?;
    let dt = config.dt.unwrap_or(DEFAULT_DT);
    let mut rng = stream_rng(config.seed, 0);
    let mut s = stepper.initial(init);
    let mut stats = Welford::default();
    let mut points = Vec::new();
    stats.push(s.y);
    if config.record_path {
        points.push(PathPoint { time: 0.0, state: s });
    }
    let steps = stepper.advance(&mut s, duration, dt, &mut rng, |t, st| {
        stats.push(st.y);
        if config.record_path {
            points.push(PathPoint { time: t, state: *st });
        }
    })?;
    Ok(SimPath { end: s, points, trait_sd: stats.sd(), steps })
}

/// Parameters that generated a simulated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub params: ModelParams,
    pub init: InitialState,
    pub config: SimConfig,
}

/// Predictor and response values at the tips, in tip order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TipDataset {
    pub labels: Vec<String>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub generator: Option<Generator>,
}

impl TipDataset {
    pub fn new(labels: Vec<String>, x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if labels.len() != x.len() || labels.len() != y.len() {
            return Err(Error::InvalidArgument(format!(
                "dataset columns differ in length ({} labels, {} x, {} y)",
                labels.len(),
                x.len(),
                y.len()
            )));
        }
        if let Some(i) = x.iter().chain(&y).position(|v| !v.is_finite()) {
            let row = i % labels.len().max(1);
            return Err(Error::NonFinite(format!("non-finite value for species {}", labels[row])));
        }
        Ok(Self { labels, x, y, generator: None })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Reorders rows into the tree's tip order. Fails if any label is
    /// missing, unknown or duplicated.
    pub fn align_to(&self, tree: &PhyloTree) -> Result<TipDataset> {
        let n = tree.n_tips();
        let mut slot: Vec<Option<usize>> = vec![None; n];
        for (row, label) in self.labels.iter().enumerate() {
            let tip = tree
                .tip_index(label)
                .ok_or_else(|| Error::LabelMismatch(format!("species {label:?} is not a tip of the tree")))?;
            if slot[tip].replace(row).is_some() {
                return Err(Error::LabelMismatch(format!("species {label:?} appears more than once")));
            }
        }
        let missing: Vec<&str> =
            (0..n).filter(|&t| slot[t].is_none()).map(|t| tree.tip_label(t)).collect();
        if !missing.is_empty() {
            return Err(Error::LabelMismatch(format!("no data for tips {}", missing.join(", "))));
        }
        let rows: Vec<usize> = slot.into_iter().map(|r| r.unwrap()).collect();
        Ok(TipDataset {
            labels: tree.tip_labels(),
            x: rows.iter().map(|&r| self.x[r]).collect(),
            y: rows.iter().map(|&r| self.y[r]).collect(),
            generator: self.generator.clone(),
        })
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("species\tx\ty\n");
        for i in 0..self.len() {
            out.push_str(&format!("{}\t{}\t{}\n", self.labels[i], fmt12(self.x[i]), fmt12(self.y[i])));
        }
        out
    }
}

/// Simulates root to tips. Each branch continues its parent's end state and
/// uses its own generator stream (its pre-order rank among non-root nodes),
/// so results do not depend on traversal order.
pub fn simulate_tips(
    tree: &PhyloTree,
    params: &ModelParams,
    init: &InitialState,
    config: &SimConfig,
) -> Result<TipDataset> {
    init.validate()?;
    let stepper = Stepper::new(params, config)?;
    let dt = config.step_for_tree(tree);
    let order = tree.preorder();
    let mut state: Vec<Option<SimState>> = vec![None; tree.n_nodes()];
    state[tree.root()] = Some(stepper.initial(init));
    for (rank, &v) in order.iter().filter(|&&v| v != tree.root()).enumerate() {
        let node = tree.node(v);
        let parent = node.parent.expect("non-root node has a parent");
        let mut s = state[parent].expect("pre-order visits parents first");
        if node.branch_length > 0.0 {
            let mut rng = stream_rng(config.seed, rank as u64);
            stepper.advance(&mut s, node.branch_length, dt, &mut rng, |_, _| {})?;
        }
        state[v] = Some(s);
    }
    let tips: Vec<SimState> =
        (0..tree.n_tips()).map(|i| state[tree.tip_node(i)].expect("tip simulated")).collect();
    let mut data = TipDataset::new(
        tree.tip_labels(),
        tips.iter().map(|s| s.x).collect(),
        tips.iter().map(|s| s.y).collect(),
    )?;
    data.generator = Some(Generator { params: *params, init: *init, config: config.clone() });
    Ok(data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::moments::{conditional_coefficients, ModelKind};
    use crate::phylo::parse_newick;

    fn cfg(seed: u64, dt: f64) -> SimConfig {
        SimConfig { dt: Some(dt), seed, b0: 0.5, b1: 0.32, ..SimConfig::default() }
    }

    #[test]
    fn deterministic_relaxation() {
        let p = ModelParams::new(ModelKind::Ou, 0.3, 0.0, 0.0, 0.0, 0.0).unwrap();
        let init = InitialState { y0: 2.0, theta0: -1.0, sigma0: 0.0 };
        for dt in [0.01, 0.005] {
            let path = simulate_path(&p, &init, &SimConfig { record_path: true, ..cfg(1, dt) }, 5.0).unwrap();
            let (cy, ct) = conditional_coefficients(&p, 5.0).unwrap();
            let exact = cy * 2.0 + ct * -1.0;
            assert!((path.end.y - exact).abs() < 0.05 * dt * 10.0);
            let ys: Vec<f64> = path.points.iter().map(|q| q.state.y).collect();
            assert!(ys.windows(2).all(|w| w[1] <= w[0]));
            assert!((path.points.last().unwrap().time - 5.0).abs() < 1e-12);
        }
    }

    #[test]
    fn seed_determinism() {
        let p = ModelParams::new(ModelKind::Ououbm, 0.01, 0.01, 0.2, 0.45, 0.01).unwrap();
        let init = InitialState::root(&p, 0.3);
        let a = simulate_path(&p, &init, &SimConfig { record_path: true, ..cfg(7, 0.1) }, 50.0).unwrap();
        let b = simulate_path(&p, &init, &SimConfig { record_path: true, ..cfg(7, 0.1) }, 50.0).unwrap();
        assert_eq!(a, b);
        let c = simulate_path(&p, &init, &SimConfig { record_path: true, ..cfg(8, 0.1) }, 50.0).unwrap();
        assert_ne!(a.end, c.end);
    }

    #[test]
    fn long_oubmbm_path_stays_finite() {
        let p = ModelParams::new(ModelKind::Oubmbm, 0.05, 0.0, 0.01, 0.32, 0.01).unwrap();
        let init = InitialState::root(&p, 0.5);
        let path = simulate_path(&p, &init, &cfg(3, 0.1), 10000.0).unwrap();
        assert_eq!(path.steps, 100000);
        assert!(path.trait_sd.is_finite() && path.trait_sd > 0.0);
    }

    #[test]
    fn predictor_tracks_optimum() {
        let p = ModelParams::new(ModelKind::Oubm, 0.05, 0.0, 0.01, 0.32, 0.0).unwrap();
        let init = InitialState::root(&p, 0.5);
        let path = simulate_path(&p, &init, &SimConfig { record_path: true, ..cfg(4, 0.1) }, 10.0).unwrap();
        for q in &path.points {
            assert!((q.state.theta - (0.5 + 0.32 * q.state.x)).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_config() {
        let p = ModelParams::new(ModelKind::Oubm, 0.05, 0.0, 0.01, 0.32, 0.0).unwrap();
        let init = InitialState::root(&p, 0.5);
        assert!(simulate_path(&p, &init, &cfg(1, 0.1), 0.0).is_err());
        assert!(simulate_path(&p, &init, &SimConfig { b1: 0.0, ..cfg(1, 0.1) }, 1.0).is_err());
        assert!(simulate_path(&p, &init, &SimConfig { dt: Some(-1.0), ..cfg(1, 0.1) }, 1.0).is_err());
    }

    #[test]
    fn frozen_dynamics_keep_tips_at_root() {
        let t = parse_newick("((A:1,B:2):1,C:3);").unwrap();
        let p = ModelParams::new(ModelKind::Bm, 0.0, 0.0, 0.0, 0.0, 0.0).unwrap();
        let init = InitialState { y0: 1.5, theta0: 0.0, sigma0: 0.0 };
        let d = simulate_tips(&t, &p, &init, &SimConfig { predictor: PredictorModel::Bm { sigma_x: 0.0 }, ..cfg(1, 0.1) }).unwrap();
        assert!(d.y.iter().all(|&y| y == 1.5));
    }

    #[test]
    fn zero_length_siblings_share_state() {
        let t = parse_newick("((A:0,B:0):2,C:2);").unwrap();
        let p = ModelParams::new(ModelKind::Ououbm, 0.1, 0.1, 0.2, 0.45, 0.1).unwrap();
        let d = simulate_tips(&t, &p, &InitialState::root(&p, 0.0), &cfg(5, 0.01)).unwrap();
        assert_eq!(d.y[0], d.y[1]);
        assert_eq!(d.x[0], d.x[1]);
        assert_ne!(d.y[0], d.y[2]);
    }

    #[test]
    fn single_branch_tree_matches_path() {
        let t = parse_newick("(A:3.7);").unwrap();
        let p = ModelParams::new(ModelKind::Ououbm, 0.1, 0.1, 0.2, 0.45, 0.1).unwrap();
        let init = InitialState::root(&p, 0.2);
        let c = cfg(11, 0.01);
        let d = simulate_tips(&t, &p, &init, &c).unwrap();
        let path = simulate_path(&p, &init, &c, 3.7).unwrap();
        assert_eq!(d.y[0], path.end.y);
        assert_eq!(d.x[0], path.end.x);
    }

    #[test]
    fn star_bm_tips_have_brownian_moments() {
        let n = 400;
        let labels: Vec<String> = (0..n).map(|i| format!("s{i}:2")).collect();
        let t = parse_newick(&format!("({});", labels.join(","))).unwrap();
        let p = ModelParams::new(ModelKind::Bm, 0.0, 0.0, 0.5, 0.0, 0.0).unwrap();
        let init = InitialState { y0: 1.0, theta0: 0.0, sigma0: 0.5 };
        let d = simulate_tips(&t, &p, &init, &cfg(2, 0.05)).unwrap();
        let mean = d.y.iter().sum::<f64>() / n as f64;
        let var = d.y.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let want = 0.25 * 2.0;
        assert!((mean - 1.0).abs() < 3.0 * (want / n as f64).sqrt());
        // sd of the sample variance of a normal: want * sqrt(2 / (n - 1))
        assert!((var - want).abs() < 3.0 * want * (2.0 / (n - 1) as f64).sqrt());
    }

    #[test]
    fn default_step_follows_branches() {
        let t = parse_newick("((A:0.1,B:0.1):1,C:1.1);").unwrap();
        assert!((SimConfig::default().step_for_tree(&t) - 0.005).abs() < 1e-15);
        let t = parse_newick("(A:10,B:10);").unwrap();
        assert_eq!(SimConfig::default().step_for_tree(&t), DEFAULT_DT);
    }

    #[test]
    fn align_reorders_and_checks() {
        let t = parse_newick("(A:1,B:1,C:1);").unwrap();
        let d = TipDataset::new(
            vec!["C".into(), "A".into(), "B".into()],
            vec![3.0, 1.0, 2.0],
            vec![30.0, 10.0, 20.0],
        )
        .unwrap();
        let a = d.align_to(&t).unwrap();
        assert_eq!(a.x, vec![1.0, 2.0, 3.0]);
        assert_eq!(a.y, vec![10.0, 20.0, 30.0]);
        let bad = TipDataset::new(vec!["A".into(), "B".into(), "D".into()], vec![0.0; 3], vec![0.0; 3]).unwrap();
        assert!(matches!(bad.align_to(&t), Err(Error::LabelMismatch(_))));
        let short = TipDataset::new(vec!["A".into(), "B".into()], vec![0.0; 2], vec![0.0; 2]).unwrap();
        assert!(matches!(short.align_to(&t), Err(Error::LabelMismatch(_))));
        assert!(TipDataset::new(vec!["A".into()], vec![f64::NAN], vec![0.0]).is_err());
    }

    #[test]
    fn tsv_outputs() {
        let d = TipDataset::new(vec!["A".into()], vec![0.1], vec![2.0]).unwrap();
        assert_eq!(d.to_tsv(), "species\tx\ty\nA\t0.1\t2\n");
        let p = ModelParams::new(ModelKind::Bm, 0.0, 0.0, 0.0, 0.0, 0.0).unwrap();
        let init = InitialState { y0: 0.0, theta0: 0.0, sigma0: 0.0 };
        let c = SimConfig { record_path: true, predictor: PredictorModel::Bm { sigma_x: 0.0 }, ..cfg(1, 0.5) };
        let path = simulate_path(&p, &init, &c, 1.0).unwrap();
        assert_eq!(path.to_tsv(), "time\tx\ttheta\ty\tsigma_y\n0\t0\t0\t0\t0\n0.5\t0\t0\t0\t0\n1\t0\t0\t0\t0\n");
    }
}
