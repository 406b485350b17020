//! Rooted phylogenetic trees: Newick I/O, generators, and the shared-path
//! (MRCA depth) matrix.

mod generate;
mod newick;
mod tree;

pub use generate::{generate_birth_death, generate_tree, BirthDeathRates, TreeKind};
pub use newick::{parse_newick, serialize_newick};
pub use tree::{pair_times, shared_path_matrix, Node, PairTimes, PhyloTree, SharedPathMatrix};
pub(crate) use tree::complement as tree_complement;
