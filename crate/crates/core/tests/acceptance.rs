//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.
//!
//! `ACCEPTANCE_ONLY=2,5` restricts the run to the listed criteria.

use std::process::ExitCode;
use std::time::Instant;

use adaptevo::compare::{
    aicc, akaike_weights, bias_study, compare_models, quartile_summary, BiasStudyConfig, CompareConfig,
    TrueValues,
};
use adaptevo::covmodel::{cross_moment_pair, residual_covariance_matrix, species_covariance_pair};
use adaptevo::fit::{gls_estimate, log_likelihood, ols_estimate, RegressionDesign};
use adaptevo::moments::{solve_moments_closed, solve_moments_numeric};
use adaptevo::phylo::{generate_tree, pair_times, shared_path_matrix, TreeKind};
use adaptevo::simulate::{monte_carlo_covariance, simulate_path, simulate_tips, SimConfig};
use adaptevo::{parse_newick, serialize_newick, InitialState, ModelKind, ModelParams, PhyloTree};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

/// Path-simulation parameter sets with their link (b0, b1) and initial rate.
struct PathSet {
    params: ModelParams,
    b0: f64,
    b1: f64,
    sigma0: f64,
}

impl PathSet {
    fn init(&self) -> InitialState {
        InitialState { y0: self.b0, theta0: self.b0, sigma0: self.sigma0 }
    }
}

fn path_set(kind: ModelKind) -> PathSet {
    let p = |a, at, s, st, tau| ModelParams::new(kind, a, at, s, st, tau).unwrap();
    match kind {
        ModelKind::Bm => PathSet { params: p(0.0, 0.0, 0.01, 0.0, 0.0), b0: 0.50, b1: 0.32, sigma0: 0.01 },
        ModelKind::Ou => PathSet { params: p(0.05, 0.0, 0.01, 0.0, 0.0), b0: 0.50, b1: 0.32, sigma0: 0.01 },
        ModelKind::Oubm => PathSet { params: p(0.05, 0.0, 0.01, 0.32, 0.0), b0: 0.50, b1: 0.32, sigma0: 0.01 },
        ModelKind::Oubmbm => PathSet { params: p(0.05, 0.0, 0.01, 0.32, 0.01), b0: 0.50, b1: 0.32, sigma0: 0.01 },
        ModelKind::Ouou => PathSet { params: p(0.01, 0.01, 0.20, 0.45, 0.0), b0: 0.05, b1: 0.30, sigma0: 0.20 },
        ModelKind::Ououbm => PathSet { params: p(0.01, 0.01, 0.20, 0.45, 0.01), b0: 0.05, b1: 0.30, sigma0: 0.20 },
    }
}

fn moment_solvers() -> Outcome {
    let mut worst: f64 = 0.0;
    for kind in ModelKind::ALL {
        let set = path_set(kind);
        for t in [0.1, 1.0, 10.0, 100.0] {
            let closed = solve_moments_closed(&set.params, &set.init(), t).unwrap().second.matrix();
            let rk4 = solve_moments_numeric(&set.params, &set.init(), t, 1e-3).unwrap().second.matrix();
            let scale = rk4.amax();
            for (c, r) in closed.iter().zip(rk4.iter()) {
                worst = worst.max((c - r).abs() / r.abs().max(1e-9 * scale));
            }
        }
    }
    outcome(worst < 1e-6, format!("max relative error {worst:.2e} (limit 1e-6)"))
}

fn monte_carlo_oracle() -> Outcome {
    let (t_a, t_i, t_j) = (3.0, 2.0, 4.0);
    let mut worst: f64 = 0.0;
    for kind in [ModelKind::Oubmbm, ModelKind::Ououbm] {
        let set = path_set(kind);
        let init = set.init();
        let analytic = cross_moment_pair(&set.params, &init, t_a, t_i, t_j).unwrap();
        let config = SimConfig { dt: Some(0.005), seed: 2024, b0: set.b0, b1: set.b1, ..SimConfig::default() };
        let mc = monte_carlo_covariance(&set.params, &init, t_a, t_i, t_j, 100_000, &config).unwrap();
        let terms = |p: &adaptevo::PairCovariance| [p.y_y, p.y_i_theta_j, p.y_j_theta_i, p.theta_theta];
        for ((a, e), se) in terms(&analytic).iter().zip(terms(&mc.estimate)).zip(terms(&mc.std_error)) {
            worst = worst.max((a - e).abs() / se);
        }
    }
    outcome(worst <= 3.0, format!("max |analytic - MC| = {worst:.2} SE (limit 3)"))
}

fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax()
}

fn nested_limits() -> Outcome {
    let (a, s, st, tau) = (0.05, 0.01, 0.32, 0.01);
    let oubm = ModelParams::new(ModelKind::Oubm, a, 0.0, s, st, 0.0).unwrap();
    let oubmbm_tau0 = ModelParams::new(ModelKind::Oubmbm, a, 0.0, s, st, 0.0).unwrap();
    let oubmbm = ModelParams::new(ModelKind::Oubmbm, a, 0.0, s, st, tau).unwrap();
    let ououbm_flat = ModelParams::new(ModelKind::Ououbm, a, 0.0, s, st, tau).unwrap();
    let init = InitialState { y0: 0.5, theta0: 0.5, sigma0: s };
    let (mut d1, mut d2): (f64, f64) = (0.0, 0.0);
    for seed in 0..10 {
        let tree = generate_tree(TreeKind::BirthDeath, 16, 10.0, seed).unwrap();
        let v = |p: &ModelParams| residual_covariance_matrix(&tree, p, &init).unwrap().v;
        d1 = d1.max(max_abs_diff(&v(&oubmbm_tau0), &v(&oubm)));
        d2 = d2.max(max_abs_diff(&v(&ououbm_flat), &v(&oubmbm)));
    }
    outcome(
        d1 < 1e-8 && d2 < 1e-8,
        format!("max |V_OUBMBM(tau=0) - V_OUBM| = {d1:.1e}, max |V_OUOUBM(alpha_theta=0) - V_OUBMBM| = {d2:.1e} (limit 1e-8)"),
    )
}

fn special_cases() -> Outcome {
    let sigma = 0.7;
    let alpha = 0.3;
    let bm = ModelParams::new(ModelKind::Bm, 0.0, 0.0, sigma, 0.0, 0.0).unwrap();
    let ou = ModelParams::new(ModelKind::Ou, alpha, 0.0, sigma, 0.0, 0.0).unwrap();
    let (mut bm_err, mut ou_err): (f64, f64) = (0.0, 0.0);
    for seed in 0..5 {
        let tree = generate_tree(TreeKind::BirthDeath, 12, 5.0, 100 + seed).unwrap();
        for i in 0..tree.n_tips() {
            for j in 0..tree.n_tips() {
                let pt = pair_times(&tree, i, j).unwrap();
                let (t_a, t_ij) = (pt.ancestor, pt.divergence);
                let got = species_covariance_pair(&bm, &InitialState::root(&bm, 0.0), t_a, pt.tip_i, pt.tip_j).unwrap();
                bm_err = bm_err.max((got - sigma * sigma * t_a).abs());
                let got = species_covariance_pair(&ou, &InitialState::root(&ou, 0.0), t_a, pt.tip_i, pt.tip_j).unwrap();
                let want = sigma * sigma * (-alpha * t_ij).exp() * (1.0 - (-2.0 * alpha * t_a).exp()) / (2.0 * alpha);
                ou_err = ou_err.max((got - want).abs());
            }
        }
    }
    outcome(
        bm_err < 1e-12 && ou_err < 1e-10,
        format!("BM max error {bm_err:.1e} (limit 1e-12), OU max error {ou_err:.1e} (limit 1e-10)"),
    )
}

fn regression_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 20;
    let x: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    let y: Vec<f64> = x.iter().map(|v| 0.3 + 1.7 * v + rng.random_range(-0.5..0.5)).collect();
    let design = RegressionDesign::new(&vec![1.0; n], &[&x], &y).unwrap();
    let gls = gls_estimate(&design, &DMatrix::identity(n, n)).unwrap();
    let ols = ols_estimate(&design).unwrap();
    let gls_err = (&gls - &ols).amax();

    let single = RegressionDesign::new(&[1.0], &[], &[0.0]).unwrap();
    let ll = log_likelihood(&single, &nalgebra::DVector::from_vec(vec![0.0]), &DMatrix::identity(1, 1)).unwrap();
    let ll_err = (ll + 0.5 * (2.0 * std::f64::consts::PI).ln()).abs();

    let a = aicc(-10.0, 3, 10).unwrap();
    let w = akaike_weights(&[12.5, 12.5]).unwrap();
    let w_err = (w[0] - 0.5).abs().max((w[1] - 0.5).abs());
    outcome(
        gls_err < 1e-12 && ll_err < 1e-12 && (a - 27.5).abs() < 1e-12 && w_err < 1e-12,
        format!("GLS-OLS {gls_err:.1e}; n=1 logL error {ll_err:.1e}; AICc(-10,3,10) = {a}; weights ({:.3}, {:.3})", w[0], w[1]),
    )
}

/// Non-increasing in n, allowing one inversion.
fn shrinks(values: &[f64]) -> bool {
    values.windows(2).filter(|w| w[1] > w[0]).count() <= 1
}

fn recovery_trend() -> Outcome {
    let config = BiasStudyConfig {
        kinds: vec![ModelKind::Oubmbm, ModelKind::Ouou],
        tree_kinds: vec![TreeKind::BirthDeath],
        sizes: vec![16, 32, 64, 128],
        replicates: 50,
        ..BiasStudyConfig::default()
    };
    let table = bias_study(&config).unwrap();
    let summary = quartile_summary(&table.rows);
    let pick = |kind: ModelKind, parameter: &str| -> Vec<(usize, f64, f64)> {
        let mut rows: Vec<_> = summary
            .iter()
            .filter(|q| q.kind == kind && q.parameter == parameter)
            .map(|q| (q.n, q.iqr(), q.median))
            .collect();
        rows.sort_by_key(|r| r.0);
        rows
    };
    let tau = pick(ModelKind::Oubmbm, "tau");
    let sigma = pick(ModelKind::Ouou, "sigma_y");
    let tau_iqr: Vec<f64> = tau.iter().map(|r| r.1).collect();
    let sigma_iqr: Vec<f64> = sigma.iter().map(|r| r.1).collect();
    let b1_oubmbm = pick(ModelKind::Oubmbm, "b1").last().unwrap().2;
    let b1_ouou = pick(ModelKind::Ouou, "b1").last().unwrap().2;
    // The slope target applies to OUBMBM. Under OUOU the optimum reverts to
    // zero rather than to b0, so the fitted link is reported only.
    let b1_ok = (b1_oubmbm - 0.72).abs() <= 0.15;
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(" ");
    outcome(
        shrinks(&tau_iqr) && shrinks(&sigma_iqr) && b1_ok,
        format!(
            "IQR tau (OUBMBM) [{}], IQR sigma_y (OUOU) [{}]; median b1 at n=128: OUBMBM {b1_oubmbm:.3} (0.72 +/- 0.15), OUOU {b1_ouou:.3} (not checked)",
            fmt(&tau_iqr),
            fmt(&sigma_iqr)
        ),
    )
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 0 {
        0.5 * (v[m - 1] + v[m])
    } else {
        v[m]
    }
}

fn self_selection() -> Outcome {
    let truth = TrueValues::default();
    let params = truth.params(ModelKind::Oubmbm, false).unwrap();
    let kinds = [ModelKind::Ouou, ModelKind::Oubmbm, ModelKind::Ououbm];
    let mut weights = vec![Vec::new(); kinds.len()];
    for seed in 0..50u64 {
        let tree = generate_tree(TreeKind::BirthDeath, 64, 100.0, 9000 + seed).unwrap();
        let init = InitialState { y0: truth.b0, theta0: truth.b0, sigma0: params.sigma_y };
        let sim = SimConfig { dt: Some(0.05), seed, b0: truth.b0, b1: truth.b1, ..SimConfig::default() };
        let data = simulate_tips(&tree, &params, &init, &sim).unwrap();
        let config = CompareConfig { fit: adaptevo::FitConfig { seed, ..Default::default() }, ..Default::default() };
        let report = compare_models(&tree, &data, &kinds, &config).unwrap();
        for (w, e) in weights.iter_mut().zip(&report.entries) {
            w.push(e.weight.unwrap_or(0.0));
        }
    }
    let medians: Vec<f64> = weights.into_iter().map(median).collect();
    let best = medians[1] > medians[0] && medians[1] > medians[2];
    outcome(
        best,
        format!("median weights OUOU {:.3}, OUBMBM {:.3}, OUOUBM {:.3}", medians[0], medians[1], medians[2]),
    )
}

fn variance_amplification() -> Outcome {
    let pairs = [(ModelKind::Oubm, ModelKind::Oubmbm), (ModelKind::Ouou, ModelKind::Ououbm)];
    let mut wins = [0; 2];
    for seed in 0..50u64 {
        for (k, (fixed, random)) in pairs.iter().enumerate() {
            let (a, b) = (path_set(*fixed), path_set(*random));
            let config = SimConfig { dt: Some(0.01), seed, b0: a.b0, b1: a.b1, ..SimConfig::default() };
            let sd_fixed = simulate_path(&a.params, &a.init(), &config, 10_000.0).unwrap().trait_sd;
            let sd_random = simulate_path(&b.params, &b.init(), &config, 10_000.0).unwrap().trait_sd;
            if sd_random > sd_fixed {
                wins[k] += 1;
            }
        }
    }
    outcome(
        wins.iter().all(|w| *w >= 40),
        format!("OUBMBM > OUBM in {}/50, OUOUBM > OUOU in {}/50 (need 40)", wins[0], wins[1]),
    )
}

/// MRCA by walking parent pointers up from both tips.
fn brute_force_mrca(tree: &PhyloTree, i: usize, j: usize) -> usize {
    let ancestors = |mut v: usize| {
        let mut out = vec![v];
        while let Some(p) = tree.node(v).parent {
            out.push(p);
            v = p;
        }
        out
    };
    let ai = ancestors(tree.tip_node(i));
    let aj = ancestors(tree.tip_node(j));
    *ai.iter().find(|v| aj.contains(v)).unwrap()
}

fn newick_and_shared_paths() -> Outcome {
    let kinds = [TreeKind::BirthDeath, TreeKind::Balanced, TreeKind::Pectinate, TreeKind::Star];
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut failures = Vec::new();
    for k in 0..100 {
        let kind = kinds[k % kinds.len()];
        let n = if kind == TreeKind::Balanced { 1 << rng.random_range(1..6) } else { rng.random_range(2..40) };
        let depth = rng.random_range(0.5..50.0);
        let tree = generate_tree(kind, n, depth, k as u64).unwrap();
        let text = serialize_newick(&tree);
        let back = parse_newick(&text).unwrap();
        if serialize_newick(&back) != text || back.tip_labels() != tree.tip_labels() {
            failures.push(format!("tree {k}: round trip changed the tree"));
            continue;
        }
        let g = shared_path_matrix(&back).matrix;
        for i in 0..n {
            for j in 0..n {
                let want = back.node_depth(brute_force_mrca(&back, i, j));
                if g[(i, j)] != g[(j, i)] || (g[(i, j)] - want).abs() > 1e-12 * depth.max(1.0) {
                    failures.push(format!("tree {k}: G[{i},{j}] = {} but MRCA depth {want}", g[(i, j)]));
                }
            }
        }
    }
    let detail = if failures.is_empty() {
        "100 trees round-tripped; G symmetric and equal to brute-force MRCA depths".to_string()
    } else {
        failures[..failures.len().min(3)].join("; ")
    };
    outcome(failures.is_empty(), detail)
}

fn main() -> ExitCode {
    let only: Option<Vec<usize>> =
        std::env::var("ACCEPTANCE_ONLY").ok().map(|s| s.split(',').filter_map(|v| v.trim().parse().ok()).collect());
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("moment solvers agree (closed form vs RK4)", moment_solvers),
        ("pair covariances match Monte Carlo", monte_carlo_oracle),
        ("nested-limit identities", nested_limits),
        ("BM and OU closed forms", special_cases),
        ("GLS, likelihood and AICc basics", regression_suite),
        ("parameter-recovery trend", recovery_trend),
        ("model self-selection", self_selection),
        ("variance amplification", variance_amplification),
        ("Newick round trip and shared-path matrix", newick_and_shared_paths),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let id = i + 1;
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let start = Instant::now();
        let result = run();
        let status = if result.pass { "PASS" } else { "FAIL" };
        println!("criterion {id} [{status}] {name}: {} ({:.1?})", result.detail, start.elapsed());
        if !result.pass {
            failed += 1;
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
