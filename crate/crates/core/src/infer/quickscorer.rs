//! Bitvector-based decision forest scoring.
//!
//! Each internal node carries a mask with zeros over its left subtree's
//! leaves. ANDing the masks of all false nodes (feature >= threshold)
//! leaves the reachable leaves set; the exit leaf is the lowest set bit
//! (trailing-zero count). The AND factorizes over any partition of the
//! internal nodes by feature ownership, which is what makes per-source
//! push-down lossless: partial masks from each source AND together into
//! the exact monolithic mask.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Internal node: predicate `x[fid] < threshold` is the true branch.
/// Ties (x[fid] == threshold) are false, matching the traversal oracle.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QsNode {
    pub fid: usize,
    pub threshold: f32,
    /// Leaf bitmask, bit 0 = leaf 0 (leftmost); one or more 64-bit blocks.
    pub mask: Vec<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QsTree {
    pub nodes: Vec<QsNode>,
    pub leaf_values: Vec<f32>,
}

impl QsTree {
    pub fn blocks(&self) -> usize {
        self.leaf_values.len().div_ceil(64)
    }

    /// All-ones over the leaf count: the empty-AND identity.
    pub fn full_mask(&self) -> Vec<u64> {
        full_mask(self.leaf_values.len())
    }
}

fn full_mask(leaves: usize) -> Vec<u64> {
    let blocks = leaves.div_ceil(64);
    let mut mask = vec![u64::MAX; blocks];
    let rem = leaves % 64;
    if rem != 0 {
        mask[blocks - 1] = (1u64 << rem) - 1;
    }
    mask
}

fn and_assign(acc: &mut [u64], other: &[u64]) {
    for (a, b) in acc.iter_mut().zip(other) {
        *a &= b;
    }
}

fn trailing_zeros(mask: &[u64]) -> usize {
    for (i, &block) in mask.iter().enumerate() {
        if block != 0 {
            return i * 64 + block.trailing_zeros() as usize;
        }
    }
    mask.len() * 64
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QsForest {
    pub trees: Vec<QsTree>,
    pub input_dim: usize,
}

impl QsForest {
    pub fn validate(&self) -> Result<()> {
        for (t, tree) in self.trees.iter().enumerate() {
            if tree.leaf_values.is_empty() {
                return Err(Error::Model(format!("tree {t} has no leaves")));
            }
            let blocks = tree.blocks();
            for (n, node) in tree.nodes.iter().enumerate() {
                if node.fid >= self.input_dim {
                    return Err(Error::Model(format!(
                        "tree {t} node {n}: fid {} out of range {}",
                        node.fid, self.input_dim
                    )));
                }
                if node.mask.len() != blocks {
                    return Err(Error::Model(format!(
                        "tree {t} node {n}: {} mask blocks, expected {blocks}",
                        node.mask.len()
                    )));
                }
                if node.mask.iter().all(|&b| b == 0) {
                    return Err(Error::Model(format!("tree {t} node {n}: empty mask")));
                }
            }
        }
        Ok(())
    }

    /// Total mask blocks across trees (the per-source partial width).
    pub fn mask_blocks(&self) -> usize {
        self.trees.iter().map(|t| t.blocks()).sum()
    }
}

/// Exit leaf of one tree for one input.
pub fn qs_tree_exit_leaf(tree: &QsTree, x: &[f32]) -> usize {
    let mut mask = tree.full_mask();
    for node in &tree.nodes {
        if x[node.fid] >= node.threshold {
            and_assign(&mut mask, &node.mask);
        }
    }
    trailing_zeros(&mask)
}

/// Forest score: sum of exit-leaf values in tree order.
pub fn qs_score(forest: &QsForest, x: &[f32]) -> f32 {
    let mut score = 0.0f32;
    for tree in &forest.trees {
        score += tree.leaf_values[qs_tree_exit_leaf(tree, x)];
    }
    score
}

/// Partial mask over one tree: AND of false-node masks restricted to
/// the nodes whose feature falls in `[range_start, range_start + x_k.len())`,
/// evaluated against the sub-vector. All-ones when no owned node is false.
pub fn qs_partial(
    nodes: &[QsNode],
    leaves: usize,
    x_k: &[f32],
    range_start: usize,
) -> Result<Vec<u64>> {
    let mut mask = full_mask(leaves);
    for node in nodes {
        let local = node
            .fid
            .checked_sub(range_start)
            .filter(|&i| i < x_k.len())
            .ok_or_else(|| {
                Error::DimMismatch(format!(
                    "fid {} outside owned range starting at {range_start}",
                    node.fid
                ))
            })?;
        if x_k[local] >= node.threshold {
            and_assign(&mut mask, &node.mask);
        }
    }
    Ok(mask)
}

/// Per-source partial over the whole forest: the concatenation of each
/// tree's partial mask, using only nodes the range owns.
pub fn qs_forest_partial(
    forest: &QsForest,
    x_k: &[f32],
    range_start: usize,
) -> Result<Vec<u64>> {
    let mut out = Vec::with_capacity(forest.mask_blocks());
    for tree in &forest.trees {
        let owned: Vec<QsNode> = tree
            .nodes
            .iter()
            .filter(|n| n.fid >= range_start && n.fid < range_start + x_k.len())
            .cloned()
            .collect();
        out.extend(qs_partial(&owned, tree.leaf_values.len(), x_k, range_start)?);
    }
    Ok(out)
}

/// AND per-source forest partials and read off the exit leaf per tree.
pub fn qs_combine_exit_leaves(forest: &QsForest, partials: &[Vec<u64>]) -> Vec<usize> {
    let total = forest.mask_blocks();
    let mut acc = partials
        .first()
        .cloned()
        .unwrap_or_else(|| vec![u64::MAX; total]);
    for p in &partials[1..] {
        and_assign(&mut acc, p);
    }
    let mut leaves = Vec::with_capacity(forest.trees.len());
    let mut offset = 0;
    for tree in &forest.trees {
        let blocks = tree.blocks();
        leaves.push(trailing_zeros(&acc[offset..offset + blocks]));
        offset += blocks;
    }
    leaves
}

/// Combined forest score from per-source partials.
pub fn qs_combine(forest: &QsForest, partials: &[Vec<u64>]) -> f32 {
    qs_combine_exit_leaves(forest, partials)
        .iter()
        .zip(&forest.trees)
        .map(|(&leaf, tree)| tree.leaf_values[leaf])
        .sum()
}

/// Explicit binary tree, kept for generation and as the traversal
/// reference the bitvector path is checked against.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum NaiveNode {
    Leaf {
        value: f32,
    },
    Split {
        fid: usize,
        threshold: f32,
        left: Box<NaiveNode>,
        right: Box<NaiveNode>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NaiveTree {
    pub root: NaiveNode,
}

impl NaiveTree {
    /// Root-to-leaf traversal: left on `x[fid] < threshold`. Returns the
    /// left-to-right leaf index and its value.
    pub fn eval(&self, x: &[f32]) -> (usize, f32) {
        let mut leaf_index = 0usize;
        let mut node = &self.root;
        loop {
            match node {
                NaiveNode::Leaf { value } => return (leaf_index, *value),
                NaiveNode::Split {
                    fid,
                    threshold,
                    left,
                    right,
                } => {
                    if x[*fid] < *threshold {
                        node = left;
                    } else {
                        leaf_index += count_leaves(left);
                        node = right;
                    }
                }
            }
        }
    }
}

fn count_leaves(node: &NaiveNode) -> usize {
    match node {
        NaiveNode::Leaf { .. } => 1,
        NaiveNode::Split { left, right, .. } => count_leaves(left) + count_leaves(right),
    }
}

/// Random binary tree of bounded depth; the root always splits so
/// every tree has at least one internal node.
pub fn random_naive_tree<R: rand::Rng>(rng: &mut R, input_dim: usize, max_depth: usize) -> NaiveTree {
    fn build<R: rand::Rng>(rng: &mut R, input_dim: usize, depth: usize) -> NaiveNode {
        if depth == 0 || rng.random_bool(0.3) {
            NaiveNode::Leaf {
                value: rng.random_range(-1.0f32..1.0),
            }
        } else {
            NaiveNode::Split {
                fid: rng.random_range(0..input_dim),
                threshold: rng.random_range(-1.0f32..1.0),
                left: Box::new(build(rng, input_dim, depth - 1)),
                right: Box::new(build(rng, input_dim, depth - 1)),
            }
        }
    }
    let root = NaiveNode::Split {
        fid: rng.random_range(0..input_dim),
        threshold: rng.random_range(-1.0f32..1.0),
        left: Box::new(build(rng, input_dim, max_depth - 1)),
        right: Box::new(build(rng, input_dim, max_depth - 1)),
    };
    NaiveTree { root }
}

/// Compile a structural tree into bitvector form: each internal node's
/// mask clears the bits of its left subtree's leaves.
pub fn compile_tree(tree: &NaiveTree) -> QsTree {
    let leaves_total = count_leaves(&tree.root);
    let blocks = leaves_total.div_ceil(64);
    let mut nodes = Vec::new();
    let mut leaf_values = Vec::new();

    fn walk(
        node: &NaiveNode,
        first_leaf: usize,
        leaves_total: usize,
        blocks: usize,
        nodes: &mut Vec<QsNode>,
        leaf_values: &mut Vec<f32>,
    ) {
        match node {
            NaiveNode::Leaf { value } => leaf_values.push(*value),
            NaiveNode::Split {
                fid,
                threshold,
                left,
                right,
            } => {
                let left_count = count_leaves(left);
                let mut mask = full_mask(leaves_total);
                debug_assert_eq!(mask.len(), blocks);
                for leaf in first_leaf..first_leaf + left_count {
                    mask[leaf / 64] &= !(1u64 << (leaf % 64));
                }
                nodes.push(QsNode {
                    fid: *fid,
                    threshold: *threshold,
                    mask,
                });
                walk(left, first_leaf, leaves_total, blocks, nodes, leaf_values);
                walk(
                    right,
                    first_leaf + left_count,
                    leaves_total,
                    blocks,
                    nodes,
                    leaf_values,
                );
            }
        }
    }
    walk(
        &tree.root,
        0,
        leaves_total,
        blocks,
        &mut nodes,
        &mut leaf_values,
    );
    QsTree { nodes, leaf_values }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn all_true_predicates_exit_leaf_zero() {
        // One split with a huge threshold: predicate always true.
        let tree = NaiveTree {
            root: NaiveNode::Split {
                fid: 0,
                threshold: 1e9,
                left: Box::new(NaiveNode::Leaf { value: 7.0 }),
                right: Box::new(NaiveNode::Leaf { value: -7.0 }),
            },
        };
        let qs = compile_tree(&tree);
        assert_eq!(qs_tree_exit_leaf(&qs, &[0.0]), 0);
    }

    #[test]
    fn artificial_mask_trailing_zeros() {
        // A single false node with mask ...1101 exits at leaf 0.
        let tree = QsTree {
            nodes: vec![QsNode {
                fid: 0,
                threshold: 0.0,
                mask: vec![0b1101],
            }],
            leaf_values: vec![1.0, 2.0, 3.0, 4.0],
        };
        assert_eq!(qs_tree_exit_leaf(&tree, &[1.0]), 0);
        // Mask ...0100 exits at leaf 2.
        let tree2 = QsTree {
            nodes: vec![QsNode {
                fid: 0,
                threshold: 0.0,
                mask: vec![0b0100],
            }],
            leaf_values: vec![1.0, 2.0, 3.0, 4.0],
        };
        assert_eq!(qs_tree_exit_leaf(&tree2, &[1.0]), 2);
    }

    #[test]
    fn tie_goes_false() {
        let tree = NaiveTree {
            root: NaiveNode::Split {
                fid: 0,
                threshold: 0.5,
                left: Box::new(NaiveNode::Leaf { value: 1.0 }),
                right: Box::new(NaiveNode::Leaf { value: 2.0 }),
            },
        };
        let qs = compile_tree(&tree);
        assert_eq!(qs_tree_exit_leaf(&qs, &[0.5]), 1);
        assert_eq!(tree.eval(&[0.5]).0, 1);
    }

    #[test]
    fn compiled_exit_matches_traversal() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..300 {
            let dim = rng.random_range(1..20usize);
            let tree = random_naive_tree(&mut rng, dim, 6);
            let qs = compile_tree(&tree);
            for _ in 0..20 {
                let x: Vec<f32> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
                let (want, want_value) = tree.eval(&x);
                let got = qs_tree_exit_leaf(&qs, &x);
                assert_eq!(got, want);
                assert_eq!(qs.leaf_values[got], want_value);
            }
        }
    }

    #[test]
    fn empty_partial_is_identity() {
        let mask = qs_partial(&[], 10, &[], 0).unwrap();
        assert_eq!(mask, full_mask(10));
    }

    #[test]
    fn partial_of_one_false_node_is_its_mask() {
        let node = QsNode {
            fid: 3,
            threshold: 0.0,
            mask: vec![0b1011],
        };
        let mask = qs_partial(std::slice::from_ref(&node), 4, &[5.0], 3).unwrap();
        assert_eq!(mask, vec![0b1011]);
    }

    #[test]
    fn partial_rejects_foreign_fid() {
        let node = QsNode {
            fid: 9,
            threshold: 0.0,
            mask: vec![1],
        };
        assert!(qs_partial(std::slice::from_ref(&node), 4, &[0.0, 0.0], 0).is_err());
    }

    /// Factorized AND over random feature splits is bit-identical to the
    /// monolithic mask path, for every split arity.
    #[test]
    fn split_partials_match_monolithic() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for round in 0..100 {
            let dim = rng.random_range(4..24usize);
            let trees: Vec<QsTree> = (0..rng.random_range(1..8usize))
                .map(|_| compile_tree(&random_naive_tree(&mut rng, dim, 6)))
                .collect();
            let forest = QsForest {
                trees,
                input_dim: dim,
            };
            forest.validate().unwrap();
            let parts = rng.random_range(2..=4usize).min(dim);
            let mut cuts: Vec<usize> = (1..parts).map(|_| rng.random_range(1..dim)).collect();
            cuts.push(0);
            cuts.push(dim);
            cuts.sort_unstable();
            cuts.dedup();
            for _ in 0..10 {
                let x: Vec<f32> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
                let partials: Vec<Vec<u64>> = cuts
                    .windows(2)
                    .map(|w| qs_forest_partial(&forest, &x[w[0]..w[1]], w[0]).unwrap())
                    .collect();
                let combined = qs_combine(&forest, &partials);
                let whole = qs_score(&forest, &x);
                assert_eq!(combined.to_bits(), whole.to_bits(), "round {round}");
                let leaves = qs_combine_exit_leaves(&forest, &partials);
                for (tree, &leaf) in forest.trees.iter().zip(&leaves) {
                    assert_eq!(leaf, qs_tree_exit_leaf(tree, &x));
                }
            }
        }
    }
}
