use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::tree::{Node, PhyloTree};

/// Tree shapes used by the simulation studies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreeKind {
    /// All tips attach directly to the root.
    Star,
    /// Complete binary tree; requires a power-of-two tip count.
    Balanced,
    /// Caterpillar with equal inter-speciation intervals.
    Pectinate,
    /// Constant-rate birth–death tree rescaled to the requested depth.
    BirthDeath,
}

impl TreeKind {
    pub const ALL: [TreeKind; 4] =
        [TreeKind::Star, TreeKind::Balanced, TreeKind::Pectinate, TreeKind::BirthDeath];

    pub fn name(self) -> &'static str {
        match self {
            TreeKind::Star => "star",
            TreeKind::Balanced => "balanced",
            TreeKind::Pectinate => "pectinate",
            TreeKind::BirthDeath => "birth_death",
        }
    }
}

impl std::str::FromStr for TreeKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "star" => Ok(TreeKind::Star),
            "balanced" => Ok(TreeKind::Balanced),
            "pectinate" | "caterpillar" => Ok(TreeKind::Pectinate),
            "birth_death" | "bd" | "yule" => Ok(TreeKind::BirthDeath),
            _ => Err(Error::InvalidArgument(format!("unknown tree kind '{s}'"))),
        }
    }
}

impl std::fmt::Display for TreeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Per-lineage speciation and extinction rates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BirthDeathRates {
    pub birth: f64,
    pub death: f64,
}

impl Default for BirthDeathRates {
    fn default() -> Self {
        Self { birth: 1.0, death: 0.0 }
    }
}

/// Generates a tree with `n` tips labelled `t1..tn` (left to right) whose
/// deepest tip sits at `depth`. Birth–death trees use [`BirthDeathRates::default`].
pub fn generate_tree(kind: TreeKind, n: usize, depth: f64, seed: u64) -> Result<PhyloTree> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 tips, got {n}")));
    }
    if !(depth > 0.0 && depth.is_finite()) {
        return Err(Error::InvalidArgument(format!("tree depth must be positive, got {depth}")));
    }
    match kind {
        TreeKind::Star => {
            let mut b = Builder::new();
            let root = b.add(None, 0.0);
            for _ in 0..n {
                b.add(Some(root), depth);
            }
            b.finish()
        }
        TreeKind::Balanced => {
            if !n.is_power_of_two() {
                return Err(Error::InvalidArgument(format!(
                    "balanced tree needs a power-of-two tip count, got {n}"
                )));
            }
            let levels = n.trailing_zeros() as usize;
            let edge = depth / levels as f64;
            let mut b = Builder::new();
            let root = b.add(None, 0.0);
            let mut frontier = vec![root];
            for _ in 0..levels {
                let mut next = Vec::with_capacity(frontier.len() * 2);
                for &v in &frontier {
                    next.push(b.add(Some(v), edge));
                    next.push(b.add(Some(v), edge));
                }
                frontier = next;
            }
            b.finish()
        }
        TreeKind::Pectinate => {
            let step = depth / (n - 1) as f64;
            let mut b = Builder::new();
            let mut spine = b.add(None, 0.0);
            for k in 0..n - 1 {
                let here = k as f64 * step;
                b.add(Some(spine), depth - here);
                if k == n - 2 {
                    b.add(Some(spine), depth - here);
                } else {
                    spine = b.add(Some(spine), step);
                }
            }
            b.finish()
        }
        TreeKind::BirthDeath => {
            generate_birth_death(n, depth, BirthDeathRates::default(), seed)
        }
    }
}

/// Constant-rate birth–death tree, simulated forward from a crown split until
/// `n` lineages coexist, extended by one further waiting time, pruned of
/// extinct lineages and rescaled so the tips sit at `depth`.
pub fn generate_birth_death(
    n: usize,
    depth: f64,
    rates: BirthDeathRates,
    seed: u64,
) -> Result<PhyloTree> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 tips, got {n}")));
    }
    if !(rates.birth > 0.0) || !(rates.death >= 0.0) || !rates.death.is_finite() {
        return Err(Error::InvalidArgument(format!("invalid birth–death rates {rates:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total = rates.birth + rates.death;
    loop {
        // (start, end, children, alive at present)
        let mut lin: Vec<(f64, f64, Vec<usize>, bool)> = vec![(0.0, 0.0, vec![1, 2], false)];
        lin.push((0.0, f64::NAN, vec![], true));
        lin.push((0.0, f64::NAN, vec![], true));
        let mut active = vec![1usize, 2];
        let mut t = 0.0;
        let mut extinct = false;
        while active.len() < n {
            let k = active.len() as f64;
            t += Exp::new(k * total).expect("positive rate").sample(&mut rng);
            let pick = rng.random_range(0..active.len());
            let v = active[pick];
            lin[v].1 = t;
            if rng.random::<f64>() < rates.birth / total {
                let a = lin.len();
                lin.push((t, f64::NAN, vec![], true));
                lin.push((t, f64::NAN, vec![], true));
                lin[v].2 = vec![a, a + 1];
                lin[v].3 = false;
                active[pick] = a;
                active.push(a + 1);
            } else {
                lin[v].3 = false;
                active.swap_remove(pick);
                if active.is_empty() {
                    extinct = true;
                    break;
                }
            }
        }
        if extinct {
            continue;
        }
        let present = t + Exp::new(n as f64 * total).expect("positive rate").sample(&mut rng);
        for &v in &active {
            lin[v].1 = present;
        }

        let mut has_extant = vec![false; lin.len()];
        for v in (0..lin.len()).rev() {
            has_extant[v] = lin[v].3 || lin[v].2.iter().any(|&c| has_extant[c]);
        }

        // Collapse unary nodes; the root descends to the first real split.
        let mut root = 0;
        loop {
            let alive: Vec<usize> = lin[root].2.iter().copied().filter(|&c| has_extant[c]).collect();
            if alive.len() == 1 {
                root = alive[0];
            } else {
                break;
            }
        }
        let mut b = Builder::new();
        let out_root = b.add(None, 0.0);
        let root_time = lin[root].1;
        let mut stack: Vec<(usize, usize, f64)> = lin[root]
            .2
            .iter()
            .rev()
            .filter(|&&c| has_extant[c])
            .map(|&c| (c, out_root, 0.0))
            .collect();
        while let Some((v, parent, acc)) = stack.pop() {
            let len = acc + (lin[v].1 - lin[v].0);
            let alive: Vec<usize> = lin[v].2.iter().copied().filter(|&c| has_extant[c]).collect();
            match alive.len() {
                0 => {
                    b.add(Some(parent), len);
                }
                1 => stack.push((alive[0], parent, len)),
                _ => {
                    let id = b.add(Some(parent), len);
                    for &c in alive.iter().rev() {
                        stack.push((c, id, 0.0));
                    }
                }
            }
        }
        let height = present - root_time;
        let scale = depth / height;
        for node in b.nodes.iter_mut() {
            node.branch_length *= scale;
        }
        return b.finish();
    }
}

struct Builder {
    nodes: Vec<Node>,
}

impl Builder {
    fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    fn add(&mut self, parent: Option<usize>, length: f64) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node { parent, children: Vec::new(), branch_length: length, label: None });
        if let Some(p) = parent {
            self.nodes[p].children.push(id);
        }
        id
    }

    /// Labels tips `t1..tn` in pre-order and validates.
    fn finish(mut self) -> Result<PhyloTree> {
        let mut stack = vec![0usize];
        let mut k = 0;
        while let Some(v) = stack.pop() {
            if self.nodes[v].children.is_empty() {
                k += 1;
                self.nodes[v].label = Some(format!("t{k}"));
            }
            stack.extend(self.nodes[v].children.iter().rev());
        }
        PhyloTree::from_nodes(self.nodes, 0)
    }
}
