//! The node-benefit function behind the greedy cost model: the cost
//! change from pushing the available computations at a node with the
//! given factor values instead of leaving them for the root, written
//! directly from the two cost terms on a canonical scenario.

use super::logistic::NodeCostFeatures;
use super::sobol::SobolSeq;

/// Canonical single-node scenario the factors plug into.
#[derive(Debug, Clone, Copy)]
pub struct BenefitScenario {
    /// Tuples entering the node.
    pub rows_in: f64,
    /// Tuples at the root (where the computation would otherwise run).
    pub root_rows: f64,
    /// Tuple width before the push, in slots.
    pub width_before: f64,
    /// Join levels between the node and the root at depth ratio 0.
    pub levels: f64,
    pub lambda: f64,
}

impl Default for BenefitScenario {
    fn default() -> Self {
        BenefitScenario {
            rows_in: 1000.0,
            root_rows: 1000.0,
            width_before: 100.0,
            levels: 4.0,
            lambda: 1.0,
        }
    }
}

pub const FACTOR_NAMES: [&str; 4] = [
    "cardinality_ratio",
    "factorized_cost",
    "tuple_dim_ratio",
    "depth_ratio",
];

/// Factor ranges used for sensitivity analysis and training data.
pub const FACTOR_RANGES: [(f64, f64); 4] = [(0.05, 10.0), (10.0, 1000.0), (0.05, 1.0), (0.0, 1.0)];

/// Signed cost delta of pushing at the node (negative = beneficial):
/// compute moves from root_rows to rows_out tuples, and the width
/// change propagates across the remaining levels to the root.
pub fn benefit_delta(f: &NodeCostFeatures, sc: &BenefitScenario) -> f64 {
    let rows_out = f.cardinality_ratio * sc.rows_in;
    let compute_delta = (rows_out - sc.root_rows) * f.factorized_cost;
    let io_delta = sc.lambda
        * rows_out
        * sc.width_before
        * (f.tuple_dim_ratio - 1.0)
        * (1.0 - f.depth_ratio)
        * sc.levels;
    compute_delta + io_delta
}

/// Deterministic synthetic training set over the factor box: features
/// drawn from the low-discrepancy sequence, label = push is beneficial.
pub fn gen_benefit_dataset(count: usize, seed: u64) -> (Vec<NodeCostFeatures>, Vec<bool>) {
    let sc = BenefitScenario::default();
    let mut seq = SobolSeq::new(4, seed).expect("4 dims supported");
    let mut point = [0.0f64; 4];
    let mut features = Vec::with_capacity(count);
    let mut labels = Vec::with_capacity(count);
    for _ in 0..count {
        seq.next_point(&mut point);
        let f = NodeCostFeatures {
            cardinality_ratio: scale(point[0], FACTOR_RANGES[0]),
            factorized_cost: scale(point[1], FACTOR_RANGES[1]),
            tuple_dim_ratio: scale(point[2], FACTOR_RANGES[2]),
            depth_ratio: scale(point[3], FACTOR_RANGES[3]),
        };
        labels.push(benefit_delta(&f, &sc) < 0.0);
        features.push(f);
    }
    (features, labels)
}

fn scale(u: f64, r: (f64, f64)) -> f64 {
    r.0 + u * (r.1 - r.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::sobol::sobol_indices;

    #[test]
    fn shrinking_cheap_node_is_beneficial() {
        let f = NodeCostFeatures {
            cardinality_ratio: 0.1,
            factorized_cost: 100.0,
            tuple_dim_ratio: 0.2,
            depth_ratio: 0.25,
        };
        assert!(benefit_delta(&f, &BenefitScenario::default()) < 0.0);
    }

    #[test]
    fn exploding_node_is_not() {
        let f = NodeCostFeatures {
            cardinality_ratio: 8.0,
            factorized_cost: 100.0,
            tuple_dim_ratio: 1.0,
            depth_ratio: 0.5,
        };
        assert!(benefit_delta(&f, &BenefitScenario::default()) > 0.0);
    }

    #[test]
    fn dataset_is_deterministic_and_mixed() {
        let (f1, l1) = gen_benefit_dataset(500, 42);
        let (_, l2) = gen_benefit_dataset(500, 42);
        assert_eq!(l1, l2);
        assert_eq!(f1.len(), 500);
        let pos = l1.iter().filter(|&&l| l).count();
        assert!(pos > 50 && pos < 450, "degenerate split: {pos}");
    }

    /// Cardinality ratio carries the largest first-order index over the
    /// factor box, matching the reported factor ordering.
    #[test]
    fn cardinality_ratio_ranks_first() {
        let sc = BenefitScenario::default();
        let f = move |x: &[f64]| {
            benefit_delta(
                &NodeCostFeatures {
                    cardinality_ratio: x[0],
                    factorized_cost: x[1],
                    tuple_dim_ratio: x[2],
                    depth_ratio: x[3],
                },
                &sc,
            )
        };
        let r = sobol_indices(&f, &FACTOR_RANGES, 1 << 13, 7).unwrap();
        let ranked = r.ranked_first_order();
        assert_eq!(ranked[0], 0, "indices: {:?}", r.first_order);
    }
}
