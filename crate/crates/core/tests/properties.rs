use adaptevo::covmodel::residual_covariance_matrix;
use adaptevo::moments::{central_moments, solve_moments_closed};
use adaptevo::phylo::{generate_tree, shared_path_matrix, Node, TreeKind};
use adaptevo::simulate::{simulate_path, simulate_tips, SimConfig};
use adaptevo::{parse_newick, serialize_newick, InitialState, ModelKind, ModelParams, PhyloTree};
use proptest::prelude::*;

fn tree_kind() -> impl Strategy<Value = TreeKind> {
    prop_oneof![Just(TreeKind::Star), Just(TreeKind::Pectinate), Just(TreeKind::BirthDeath)]
}

fn any_tree() -> impl Strategy<Value = PhyloTree> {
    (tree_kind(), 2usize..24, 0.1f64..50.0, any::<u64>())
        .prop_map(|(kind, n, depth, seed)| generate_tree(kind, n, depth, seed).unwrap())
}

fn model_kind() -> impl Strategy<Value = ModelKind> {
    prop::sample::select(ModelKind::ALL.to_vec())
}

fn any_params() -> impl Strategy<Value = ModelParams> {
    (model_kind(), 1e-3f64..2.0, 1e-3f64..2.0, 1e-3f64..1.0, 1e-3f64..1.0, 1e-3f64..1.0)
        .prop_map(|(kind, a, at, s, st, tau)| ModelParams::forced(kind, a, at, s, st, tau).unwrap())
}

/// The same tree with every node's children in reverse order.
fn rotated(tree: &PhyloTree) -> PhyloTree {
    let nodes: Vec<Node> = tree
        .nodes()
        .iter()
        .map(|n| Node { children: n.children.iter().rev().copied().collect(), ..n.clone() })
        .collect();
    PhyloTree::from_nodes(nodes, tree.root()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn newick_round_trip(tree in any_tree()) {
        let text = serialize_newick(&tree);
        let back = parse_newick(&text).unwrap();
        prop_assert_eq!(serialize_newick(&back), text);
        prop_assert_eq!(back.tip_labels(), tree.tip_labels());
        for (a, b) in back.tip_depths().iter().zip(tree.tip_depths()) {
            prop_assert!((a - b).abs() <= 1e-9 * b.max(1.0));
        }
    }

    #[test]
    fn shared_paths_follow_tip_labels_under_rotation(tree in any_tree()) {
        let g = shared_path_matrix(&tree).matrix;
        let r = rotated(&tree);
        let gr = shared_path_matrix(&r).matrix;
        let n = tree.n_tips();
        for i in 0..n {
            for j in 0..n {
                let (ri, rj) = (r.tip_index(tree.tip_label(i)).unwrap(), r.tip_index(tree.tip_label(j)).unwrap());
                prop_assert_eq!(g[(i, j)], gr[(ri, rj)]);
            }
        }
    }

    #[test]
    fn covariances_are_label_invariant_and_factorable(tree in any_tree(), params in any_params()) {
        let init = InitialState::root(&params, 0.3);
        let c = residual_covariance_matrix(&tree, &params, &init).unwrap();
        let r = rotated(&tree);
        let cr = residual_covariance_matrix(&r, &params, &init).unwrap();
        let n = tree.n_tips();
        let scale = c.sigma_y.amax().max(1e-300);
        for i in 0..n {
            let ri = r.tip_index(tree.tip_label(i)).unwrap();
            prop_assert!((c.rho[i] - cr.rho[ri]).abs() <= 1e-12);
            for j in 0..n {
                let rj = r.tip_index(tree.tip_label(j)).unwrap();
                prop_assert!((c.v[(i, j)] - cr.v[(ri, rj)]).abs() <= 1e-12 * scale);
                prop_assert_eq!(c.v[(i, j)], c.v[(j, i)]);
                prop_assert_eq!(c.sigma_y[(i, j)], c.sigma_y[(j, i)]);
            }
        }
        // Jitter, when needed at all, stays at the level of rounding.
        prop_assert!(c.jitter <= 1e-8 * c.v.trace() / n as f64 + 1e-300);
    }

    #[test]
    fn central_moment_matrix_is_psd(params in any_params(), t in 0.0f64..200.0) {
        let init = InitialState::root(&params, 0.0);
        let m = solve_moments_closed(&params, &init, t).unwrap();
        let trace = m.covariance().trace();
        prop_assert!(m.min_covariance_eigenvalue() >= -1e-9 * trace.max(1e-300));
        let c = central_moments(&params, init.sigma0, t);
        prop_assert!((c.var_y - m.var_y()).abs() <= 1e-9 * c.var_y.abs().max(1e-12));
    }

    #[test]
    fn single_branch_tree_matches_path(params in any_params(), len in 0.1f64..5.0, seed in any::<u64>()) {
        let tree = parse_newick(&format!("(a:{len});")).unwrap();
        let init = InitialState { y0: 0.2, theta0: 0.1, sigma0: params.sigma_y };
        let config = SimConfig { dt: Some(0.01), seed, b0: 0.1, b1: 0.5, ..SimConfig::default() };
        let tips = simulate_tips(&tree, &params, &init, &config).unwrap();
        let path = simulate_path(&params, &init, &config, len).unwrap();
        prop_assert_eq!(tips.y[0], path.end.y);
        prop_assert_eq!(tips.x[0], path.end.x);
    }
}

#[test]
fn deterministic_optimum_leaves_v_equal_to_trait_covariance() {
    let tree = generate_tree(TreeKind::BirthDeath, 20, 3.0, 4).unwrap();
    for kind in [ModelKind::Bm, ModelKind::Ou] {
        let params = ModelParams::forced(kind, 0.4, 0.0, 0.6, 0.0, 0.0).unwrap();
        let c = residual_covariance_matrix(&tree, &params, &InitialState::root(&params, 0.0)).unwrap();
        assert_eq!(c.v, c.sigma_y);
        assert!(c.rho.iter().all(|r| *r == 1.0));
    }
}

#[test]
fn brownian_covariance_is_scaled_shared_path_matrix() {
    let tree = generate_tree(TreeKind::BirthDeath, 25, 7.0, 11).unwrap();
    let params = ModelParams::new(ModelKind::Bm, 0.0, 0.0, 0.3, 0.0, 0.0).unwrap();
    let c = residual_covariance_matrix(&tree, &params, &InitialState::root(&params, 0.0)).unwrap();
    let g = shared_path_matrix(&tree).matrix * 0.09;
    assert!((c.sigma_y - g).amax() < 1e-12);
}
