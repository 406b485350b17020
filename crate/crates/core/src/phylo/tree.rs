use std::collections::HashSet;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// A node record in the tree arena.
#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    /// Length of the edge to the parent, in time units. Ignored for the root.
    pub branch_length: f64,
    pub label: Option<String>,
}

impl Node {
    pub fn is_tip(&self) -> bool {
        self.children.is_empty()
    }
}

/// A rooted phylogenetic tree with branch lengths, stored as an arena of nodes.
///
/// Tips are indexed `0..n_tips()` in left-to-right (pre-order) order; every
/// matrix produced from a tree uses that order.
#[derive(Debug, Clone, PartialEq)]
pub struct PhyloTree {
    nodes: Vec<Node>,
    root: usize,
    tips: Vec<usize>,
    depths: Vec<f64>,
}

impl PhyloTree {
    /// Validates the arena and builds the tree. `children` of each node are
    /// taken as given; `parent` links must agree with them.
    pub fn from_nodes(nodes: Vec<Node>, root: usize) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::InvalidTree("tree has no nodes".into()));
        }
        if root >= nodes.len() {
            return Err(Error::InvalidTree(format!("root index {root} out of range")));
        }
        let roots = nodes.iter().filter(|n| n.parent.is_none()).count();
        if roots != 1 || nodes[root].parent.is_some() {
            return Err(Error::InvalidTree(format!(
                "expected exactly one parentless root, found {roots}"
            )));
        }
        for (i, node) in nodes.iter().enumerate() {
            for &c in &node.children {
                if c >= nodes.len() || nodes[c].parent != Some(i) {
                    return Err(Error::InvalidTree(format!(
                        "child link {i} -> {c} has no matching parent link"
                    )));
                }
            }
            if let Some(p) = node.parent {
                if p >= nodes.len() || !nodes[p].children.contains(&i) {
                    return Err(Error::InvalidTree(format!(
                        "node {i} is not listed among the children of its parent"
                    )));
                }
                if !node.branch_length.is_finite() || node.branch_length < 0.0 {
                    return Err(Error::InvalidTree(format!(
                        "node {i} has invalid branch length {}",
                        node.branch_length
                    )));
                }
            }
        }

        // Pre-order walk from the root; also detects cycles/unreachable nodes.
        let mut depths = vec![f64::NAN; nodes.len()];
        let mut tips = Vec::new();
        let mut seen = vec![false; nodes.len()];
        let mut stack = vec![root];
        depths[root] = 0.0;
        let mut visited = 0;
        while let Some(v) = stack.pop() {
            if seen[v] {
                return Err(Error::InvalidTree("cycle detected".into()));
            }
            seen[v] = true;
            visited += 1;
            if nodes[v].is_tip() {
                tips.push(v);
            }
            for &c in nodes[v].children.iter().rev() {
                depths[c] = depths[v] + nodes[c].branch_length;
                stack.push(c);
            }
        }
        if visited != nodes.len() {
            return Err(Error::InvalidTree(format!(
                "{} nodes are not reachable from the root",
                nodes.len() - visited
            )));
        }

        let mut labels = HashSet::new();
        for &t in &tips {
            match nodes[t].label.as_deref() {
                None | Some("") => {
                    return Err(Error::InvalidTree(format!("tip node {t} has no label")))
                }
                Some(l) => {
                    if !labels.insert(l) {
                        return Err(Error::InvalidTree(format!("duplicate tip label '{l}'")));
                    }
                }
            }
        }

        Ok(Self { nodes, root, tips, depths })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: usize) -> &Node {
        &self.nodes[id]
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_tips(&self) -> usize {
        self.tips.len()
    }

    /// Node index of tip `i`.
    pub fn tip_node(&self, i: usize) -> usize {
        self.tips[i]
    }

    pub fn tip_label(&self, i: usize) -> &str {
        self.nodes[self.tips[i]].label.as_deref().unwrap_or_default()
    }

    pub fn tip_labels(&self) -> Vec<String> {
        (0..self.n_tips()).map(|i| self.tip_label(i).to_string()).collect()
    }

    pub fn tip_index(&self, label: &str) -> Option<usize> {
        (0..self.n_tips()).find(|&i| self.tip_label(i) == label)
    }

    /// Root-to-node depth, summed root to tip.
    pub fn node_depth(&self, id: usize) -> f64 {
        self.depths[id]
    }

    pub fn tip_depth(&self, i: usize) -> f64 {
        self.depths[self.tips[i]]
    }

    pub fn tip_depths(&self) -> Vec<f64> {
        self.tips.iter().map(|&t| self.depths[t]).collect()
    }

    pub fn max_tip_depth(&self) -> f64 {
        self.tip_depths().into_iter().fold(0.0, f64::max)
    }

    pub fn is_ultrametric(&self, tol: f64) -> bool {
        let d = self.tip_depths();
        let max = d.iter().copied().fold(f64::MIN, f64::max);
        d.iter().all(|&x| (max - x).abs() <= tol)
    }

    /// Shortest non-root edge; `None` for a single-node tree.
    pub fn min_branch_length(&self) -> Option<f64> {
        self.nodes
            .iter()
            .filter(|n| n.parent.is_some())
            .map(|n| n.branch_length)
            .reduce(f64::min)
    }

    /// Node ids in pre-order (parents before children, left to right).
    pub fn preorder(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.nodes.len());
        let mut stack = vec![self.root];
        while let Some(v) = stack.pop() {
            out.push(v);
            stack.extend(self.nodes[v].children.iter().rev());
        }
        out
    }

    /// Most recent common ancestor of tips `i` and `j`, by walking parent links.
    pub fn mrca(&self, i: usize, j: usize) -> usize {
        let mut on_path = vec![false; self.nodes.len()];
        let mut v = Some(self.tips[i]);
        while let Some(x) = v {
            on_path[x] = true;
            v = self.nodes[x].parent;
        }
        let mut w = self.tips[j];
        while !on_path[w] {
            w = self.nodes[w].parent.expect("root is a common ancestor");
        }
        w
    }

    /// MRCA node id for every ordered tip pair, as a row-major `n × n` table.
    /// The diagonal holds the tip's own node id.
    pub fn mrca_table(&self) -> Vec<usize> {
        let n = self.n_tips();
        let mut tip_of_node = vec![usize::MAX; self.nodes.len()];
        for (i, &t) in self.tips.iter().enumerate() {
            tip_of_node[t] = i;
        }
        let mut table = vec![0usize; n * n];
        let mut below: Vec<Vec<usize>> = vec![Vec::new(); self.nodes.len()];
        for v in self.preorder().into_iter().rev() {
            if self.nodes[v].is_tip() {
                let i = tip_of_node[v];
                table[i * n + i] = v;
                below[v].push(i);
                continue;
            }
            let mut acc: Vec<usize> = Vec::new();
            for &c in &self.nodes[v].children {
                let sub = std::mem::take(&mut below[c]);
                for &a in &acc {
                    for &b in &sub {
                        table[a * n + b] = v;
                        table[b * n + a] = v;
                    }
                }
                acc.extend(sub);
            }
            below[v] = acc;
        }
        table
    }
}

/// Times describing a tip pair: MRCA depth and post-divergence times.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairTimes {
    /// Depth of the most recent common ancestor.
    pub ancestor: f64,
    /// Time from the MRCA to tip i.
    pub tip_i: f64,
    /// Time from the MRCA to tip j.
    pub tip_j: f64,
    /// `tip_i + tip_j`.
    pub divergence: f64,
}

/// `total - part`, nudged by at most one ulp so that `part + result == total`.
pub(crate) fn complement(total: f64, part: f64) -> f64 {
    let mut r = total - part;
    for _ in 0..4 {
        let s = part + r;
        if s == total {
            break;
        }
        r = if s < total { r.next_up() } else { r.next_down() };
    }
    r.max(0.0)
}

/// Pair times for tips `i`, `j`. For `i == j` returns `(depth, 0, 0, 0)`.
pub fn pair_times(tree: &PhyloTree, i: usize, j: usize) -> Result<PairTimes> {
    let n = tree.n_tips();
    if i >= n || j >= n {
        return Err(Error::InvalidArgument(format!(
            "tip index ({i}, {j}) out of range for {n} tips"
        )));
    }
    let a = tree.mrca(i, j);
    Ok(times_from_mrca(tree, a, i, j))
}

pub(crate) fn times_from_mrca(tree: &PhyloTree, mrca: usize, i: usize, j: usize) -> PairTimes {
    let ancestor = tree.node_depth(mrca);
    if i == j {
        return PairTimes { ancestor, tip_i: 0.0, tip_j: 0.0, divergence: 0.0 };
    }
    let tip_i = complement(tree.tip_depth(i), ancestor);
    let tip_j = complement(tree.tip_depth(j), ancestor);
    PairTimes { ancestor, tip_i, tip_j, divergence: tip_i + tip_j }
}

/// Matrix of shared root-to-MRCA times (the BM covariance kernel up to scale).
#[derive(Debug, Clone, PartialEq)]
pub struct SharedPathMatrix {
    pub matrix: DMatrix<f64>,
    pub labels: Vec<String>,
}

/// Entry `(i, j)` is the depth of MRCA(i, j); entry `(i, i)` the depth of tip i.
pub fn shared_path_matrix(tree: &PhyloTree) -> SharedPathMatrix {
    let n = tree.n_tips();
    let table = tree.mrca_table();
    let matrix = DMatrix::from_fn(n, n, |i, j| tree.node_depth(table[i * n + j]));
    SharedPathMatrix { matrix, labels: tree.tip_labels() }
}
