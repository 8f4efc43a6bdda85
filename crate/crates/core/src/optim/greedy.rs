//! Benefit-first greedy search: a min-heap over per-node signed cost
//! deltas, committing the most beneficial push, pruning descendants,
//! and refreshing ancestors. Stale heap entries are re-validated on
//! pop, so priorities never act on outdated availability.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::cost::{
    node_delta_cost, plan_cost, predict_benefit, CostConfig, LogisticModel, NodeCostFeatures,
    PlanInstance,
};
use crate::plan::{availability_with_homes, NodeId, PushdownPlan};
use crate::Result;

use super::OptimizerReport;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct GreedyConfig {
    /// Commit only pushes with delta strictly below this threshold.
    pub threshold: f64,
    /// Optional learned gate: skip commits the predictor scores below
    /// one half.
    #[serde(skip)]
    pub benefit_gate: Option<LogisticModel>,
}

struct Entry {
    delta: f64,
    node: NodeId,
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.delta == other.delta && self.node == other.node
    }
}
impl Eq for Entry {}
impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        // BinaryHeap is a max-heap: invert so the smallest delta pops
        // first, ties toward the smaller node id.
        other
            .delta
            .partial_cmp(&self.delta)
            .unwrap()
            .then(other.node.cmp(&self.node))
    }
}

pub fn greedy(
    inst: &PlanInstance,
    config: &CostConfig,
    gcfg: &GreedyConfig,
) -> Result<OptimizerReport> {
    let start = Instant::now();
    let homes = inst.homes();
    let n = inst.tree.node_count();
    let mut plan = PushdownPlan {
        bits: vec![false; n],
    };
    let mut processed = vec![false; n + 1];
    let mut evaluated = 0u64;

    // Deltas are taken on the repaired view of the working bits: the
    // cost function is defined over valid plans only. A node the repair
    // already forces (the root) is a fixed point with delta zero.
    let mut delta_of = |plan: &PushdownPlan, node: NodeId, evaluated: &mut u64| -> Result<Option<f64>> {
        let repaired = inst.repair(plan.bits.clone());
        let avail = availability_with_homes(&inst.tree, &repaired, &homes);
        if avail.at(node).is_empty() {
            return Ok(None);
        }
        if repaired.get(node) {
            return Ok(Some(0.0));
        }
        *evaluated += 2;
        Ok(Some(node_delta_cost(inst, &repaired, node, config)?))
    };

    let mut heap = BinaryHeap::new();
    for node in 1..=n {
        if let Some(delta) = delta_of(&plan, node, &mut evaluated)? {
            if delta < gcfg.threshold {
                heap.push(Entry { delta, node });
            }
        }
    }

    while let Some(Entry { delta, node }) = heap.pop() {
        if processed[node] {
            continue;
        }
        // Lazy invalidation: recompute against the current plan.
        let fresh = match delta_of(&plan, node, &mut evaluated)? {
            // Every available computation was consumed below meanwhile
            // (the transient blocked state); the node stays unpushed.
            None => {
                processed[node] = true;
                continue;
            }
            Some(f) => f,
        };
        if (fresh - delta).abs() > 1e-9 {
            if fresh < gcfg.threshold {
                heap.push(Entry { delta: fresh, node });
            }
            continue;
        }
        if let Some(gate) = &gcfg.benefit_gate {
            let features = node_features(inst, &plan, node, config)?;
            if predict_benefit(&features, gate) < 0.5 {
                processed[node] = true;
                continue;
            }
        }
        // Commit: push everything available here; descendants can never
        // offer anything again.
        plan.set(node, true);
        for id in inst.tree.subtree_nodes(node) {
            processed[id] = true;
        }
        let mut cur = node;
        while let Some(parent) = inst.tree.parent(cur) {
            if !processed[parent] {
                if let Some(delta) = delta_of(&plan, parent, &mut evaluated)? {
                    if delta < gcfg.threshold {
                        heap.push(Entry {
                            delta,
                            node: parent,
                        });
                    }
                }
            }
            cur = parent;
        }
    }

    let plan = inst.repair(plan.bits);
    let cost = plan_cost(inst, &plan, config)?;
    Ok(OptimizerReport {
        strategy: "greedy".into(),
        plan,
        cost,
        plans_evaluated: evaluated,
        wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
        seed: 0,
    })
}

/// Factor values for one candidate node under the current plan.
pub fn node_features(
    inst: &PlanInstance,
    plan: &PushdownPlan,
    node: NodeId,
    _config: &CostConfig,
) -> Result<NodeCostFeatures> {
    let homes = inst.homes();
    let avail = availability_with_homes(&inst.tree, plan, &homes);
    let factorized_cost: f64 = avail.at(node).iter().map(|&u| inst.unit_flops[u]).sum();
    let rows_out = inst.tree.cardinality(node);
    let rows_in: f64 = match inst.tree.node(node).children {
        Some((l, r)) => inst.tree.cardinality(l) + inst.tree.cardinality(r),
        None => rows_out,
    };
    let before = inst.width.node_width(&inst.tree, plan, node)?;
    let mut bits = plan.bits.clone();
    bits[node - 1] = true;
    let flipped = inst.repair(bits);
    let after = if flipped.get(node) {
        inst.width.node_width(&inst.tree, &flipped, node)?
    } else {
        before
    };
    let height = inst
        .tree
        .nodes()
        .iter()
        .map(|n| n.depth)
        .max()
        .unwrap_or(1)
        .max(1);
    Ok(NodeCostFeatures {
        cardinality_ratio: if rows_in > 0.0 { rows_out / rows_in } else { 0.0 },
        factorized_cost,
        tuple_dim_ratio: if before > 0 {
            after as f64 / before as f64
        } else {
            1.0
        },
        depth_ratio: inst.tree.node(node).depth as f64 / height as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::tests::random_instance;
    use crate::optim::{baseline_none, exhaustive};
    use crate::plan::{validate_plan_with_homes, CombineKind, WidthModel};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn no_beneficial_push_returns_root_only() {
        // Root has the smallest cardinality: pushing anywhere only adds
        // compute over more rows; widths do not shrink (out = raw).
        let tree =
            crate::plan::pushdown::tests::left_deep_with_cards(&[500.0, 500.0], &[100.0]);
        let width = WidthModel::per_leaf(&[8, 8], &[8, 8], CombineKind::Sum, true);
        let inst = PlanInstance::synthetic(tree, width, vec![50.0, 50.0], 0.0);
        let report = greedy(&inst, &CostConfig::default(), &GreedyConfig::default()).unwrap();
        assert_eq!(report.plan, inst.root_only_plan());
    }

    #[test]
    fn star_with_tiny_dimensions_pushes_to_scans() {
        // Two tiny leaves with strong width reduction under a huge join.
        let tree =
            crate::plan::pushdown::tests::left_deep_with_cards(&[20.0, 30.0, 5000.0], &[5000.0, 5000.0]);
        let width = WidthModel::per_leaf(&[120, 120, 4], &[8, 8, 4], CombineKind::Sum, true);
        let inst =
            PlanInstance::synthetic(tree, width, vec![2000.0, 2000.0, 8.0], 10.0);
        let config = CostConfig::default();
        let report = greedy(&inst, &config, &GreedyConfig::default()).unwrap();
        assert!(report.plan.get(1), "leaf 1 not pushed: {:?}", report.plan.bits);
        assert!(report.plan.get(2), "leaf 2 not pushed: {:?}", report.plan.bits);
        let e = exhaustive(&inst, &config).unwrap();
        assert_eq!(report.cost, e.cost, "greedy missed the optimum");
    }

    #[test]
    fn never_worse_than_no_factorization() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let config = CostConfig::default();
        for _ in 0..100 {
            let m = rand::Rng::random_range(&mut rng, 2..7usize);
            let inst = random_instance(&mut rng, m);
            let report = greedy(&inst, &config, &GreedyConfig::default()).unwrap();
            let none = baseline_none(&inst, &config).unwrap();
            assert!(
                report.cost <= none.cost + 1e-9,
                "greedy {} vs none {}",
                report.cost,
                none.cost
            );
            let homes = inst.homes();
            assert!(validate_plan_with_homes(&inst.tree, &report.plan, &homes).is_empty());
        }
    }

    #[test]
    fn greedy_is_floored_by_exhaustive() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let config = CostConfig::default();
        for _ in 0..50 {
            let m = rand::Rng::random_range(&mut rng, 2..7usize);
            let inst = random_instance(&mut rng, m);
            let g = greedy(&inst, &config, &GreedyConfig::default()).unwrap();
            let e = exhaustive(&inst, &config).unwrap();
            assert!(g.cost >= e.cost - 1e-9);
        }
    }
}
