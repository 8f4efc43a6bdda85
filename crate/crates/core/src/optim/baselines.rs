//! Literature baselines: no push-down, full factorization, and the
//! two-way-join decision rules applied per node in level order.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::cost::{plan_cost, CostConfig, PlanInstance};
use crate::plan::{NodeId, PushdownPlan};
use crate::Result;

use super::OptimizerReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    BottomUp,
    TopDown,
}

fn finish(
    inst: &PlanInstance,
    config: &CostConfig,
    strategy: &str,
    bits: Vec<bool>,
    evaluated: u64,
    start: Instant,
) -> Result<OptimizerReport> {
    let plan = inst.repair(bits);
    let cost = plan_cost(inst, &plan, config)?;
    Ok(OptimizerReport {
        strategy: strategy.to_string(),
        plan,
        cost,
        plans_evaluated: evaluated.max(1),
        wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
        seed: 0,
    })
}

/// Everything stays at the root.
pub fn baseline_none(inst: &PlanInstance, config: &CostConfig) -> Result<OptimizerReport> {
    let start = Instant::now();
    finish(
        inst,
        config,
        "none",
        vec![false; inst.tree.node_count()],
        1,
        start,
    )
}

/// Push every unit at its home scan; repair clears leaves with nothing
/// homed and keeps the root when something (an inner-homed unit or
/// nothing at all) remains.
pub fn baseline_full(inst: &PlanInstance, config: &CostConfig) -> Result<OptimizerReport> {
    let start = Instant::now();
    let mut bits = vec![false; inst.tree.node_count()];
    for leaf in 1..=inst.tree.leaf_count {
        bits[leaf - 1] = true;
    }
    finish(inst, config, "full", bits, 1, start)
}

/// Join nodes in level order: bottom-up = deepest first; ties resolve
/// by ascending id so runs are reproducible.
fn level_order(inst: &PlanInstance, direction: Direction) -> Vec<NodeId> {
    let mut joins: Vec<NodeId> = (inst.tree.leaf_count + 1..=inst.tree.node_count()).collect();
    match direction {
        Direction::BottomUp => joins.sort_by_key(|&id| {
            (
                usize::MAX - inst.tree.node(id).depth,
                id,
            )
        }),
        Direction::TopDown => joins.sort_by_key(|&id| (inst.tree.node(id).depth, id)),
    }
    joins
}

/// Raw feature slots contributed by the subtree under `id`.
fn subtree_feature_slots(inst: &PlanInstance, id: NodeId) -> f64 {
    let leaves = inst.tree.subtree_leaves(id);
    inst.width
        .raw_groups
        .iter()
        .filter(|rg| leaves.contains(&rg.leaf))
        .map(|rg| rg.slots as f64)
        .sum()
}

/// The two-way factorization rule (tuple ratio above 5 or feature ratio
/// above 1) applied to each join's inputs: when the other side's tuple
/// count dominates or this side is feature-heavier, factorize this side
/// by pushing at the child.
pub fn baseline_morpheus(
    inst: &PlanInstance,
    config: &CostConfig,
    direction: Direction,
) -> Result<OptimizerReport> {
    let start = Instant::now();
    let mut bits = vec![false; inst.tree.node_count()];
    for join in level_order(inst, direction) {
        let (l, r) = inst.tree.node(join).children.expect("join node");
        for (child, other) in [(l, r), (r, l)] {
            let n_child = inst.tree.cardinality(child).max(1.0);
            let n_other = inst.tree.cardinality(other).max(1.0);
            let w_child = subtree_feature_slots(inst, child);
            let w_other = subtree_feature_slots(inst, other).max(1.0);
            if n_other / n_child > 5.0 || w_child / w_other > 1.0 {
                bits[child - 1] = true;
            }
        }
    }
    let name = match direction {
        Direction::BottomUp => "morpheus-bu",
        Direction::TopDown => "morpheus-td",
    };
    finish(inst, config, name, bits, 1, start)
}

/// Cost of the plan restricted to the subtree under `top`: compute at
/// push sites inside it plus the weighted width of its nodes.
fn subtree_cost(
    inst: &PlanInstance,
    plan: &PushdownPlan,
    top: NodeId,
    config: &CostConfig,
) -> Result<f64> {
    let states = inst.width.simulate(&inst.tree, plan)?;
    let homes = inst.homes();
    let sites = crate::plan::unit_sites(&inst.tree, plan, &homes);
    let nodes = inst.tree.subtree_nodes(top);
    let mut total = 0.0;
    for &id in &nodes {
        let mut flops: f64 = sites
            .iter()
            .enumerate()
            .filter(|(_, s)| **s == Some(id))
            .map(|(u, _)| inst.unit_flops[u])
            .sum();
        flops += states[id - 1]
            .folds
            .iter()
            .map(|f| (f.items - 1) as f64 * f.dim as f64 * inst.fold_multipliers[f.group])
            .sum::<f64>();
        total += inst.tree.cardinality(id) * flops;
        total += config.lambda * inst.tree.cardinality(id) * states[id - 1].width as f64;
    }
    Ok(total)
}

/// Adapted two-way cost rule: at each join, push a child's units below
/// when the I/O-plus-CPU estimate restricted to that join's subtree
/// improves.
pub fn baseline_fl(
    inst: &PlanInstance,
    config: &CostConfig,
    direction: Direction,
) -> Result<OptimizerReport> {
    let start = Instant::now();
    let mut bits = vec![false; inst.tree.node_count()];
    let mut evaluated = 0u64;
    for join in level_order(inst, direction) {
        let (l, r) = inst.tree.node(join).children.expect("join node");
        for child in [l, r] {
            let mut with = bits.clone();
            with[child - 1] = true;
            let plan_with = inst.repair(with.clone());
            if !plan_with.get(child) {
                continue; // nothing available at this child
            }
            let plan_without = inst.repair(bits.clone());
            let c_with = subtree_cost(inst, &plan_with, join, config)?;
            let c_without = subtree_cost(inst, &plan_without, join, config)?;
            evaluated += 2;
            if c_with < c_without {
                bits[child - 1] = true;
            }
        }
    }
    let name = match direction {
        Direction::BottomUp => "fl-bu",
        Direction::TopDown => "fl-td",
    };
    finish(inst, config, name, bits, evaluated, start)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::tests::random_instance;
    use crate::plan::{validate_plan_with_homes, CombineKind, WidthModel};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn all_baselines_return_valid_plans() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let config = CostConfig::default();
        for _ in 0..30 {
            let m = rand::Rng::random_range(&mut rng, 2..8usize);
            let inst = random_instance(&mut rng, m);
            let homes = inst.homes();
            for report in [
                baseline_none(&inst, &config).unwrap(),
                baseline_full(&inst, &config).unwrap(),
                baseline_morpheus(&inst, &config, Direction::BottomUp).unwrap(),
                baseline_morpheus(&inst, &config, Direction::TopDown).unwrap(),
                baseline_fl(&inst, &config, Direction::BottomUp).unwrap(),
                baseline_fl(&inst, &config, Direction::TopDown).unwrap(),
            ] {
                assert!(
                    validate_plan_with_homes(&inst.tree, &report.plan, &homes).is_empty(),
                    "{} produced an invalid plan",
                    report.strategy
                );
            }
        }
    }

    #[test]
    fn none_costs_root_times_whole_expression_compute() {
        let tree =
            crate::plan::pushdown::tests::left_deep_with_cards(&[10.0, 10.0], &[40.0]);
        let width = WidthModel::per_leaf(&[4, 4], &[2, 2], CombineKind::Sum, true);
        let inst = PlanInstance::synthetic(tree, width, vec![3.0, 4.0], 2.0);
        let report = baseline_none(&inst, &CostConfig { lambda: 0.0 }).unwrap();
        // u_f = units + one fold (1 matadd of dim 2) + residual.
        assert_eq!(report.cost, 40.0 * (3.0 + 4.0 + 2.0 + 2.0));
    }

    #[test]
    fn full_empties_interior_availability() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let inst = random_instance(&mut rng, 4);
        let config = CostConfig::default();
        let report = baseline_full(&inst, &config).unwrap();
        let homes = inst.homes();
        let avail =
            crate::plan::availability_with_homes(&inst.tree, &report.plan, &homes);
        for join in 5..=6 {
            assert!(avail.at(join).is_empty());
        }
    }

    #[test]
    fn morpheus_factorizes_on_tuple_ratio() {
        // Fact side 10x the dimension side: rule fires for the dimension.
        let tree =
            crate::plan::pushdown::tests::left_deep_with_cards(&[100.0, 1000.0], &[1000.0]);
        let width = WidthModel::per_leaf(&[16, 8], &[4, 4], CombineKind::Sum, true);
        let inst = PlanInstance::synthetic(tree, width, vec![100.0, 50.0], 0.0);
        let config = CostConfig::default();
        let report = baseline_morpheus(&inst, &config, Direction::BottomUp).unwrap();
        assert!(report.plan.get(1));

        // Ratio 1 on both axes: no factorization below the root.
        let tree =
            crate::plan::pushdown::tests::left_deep_with_cards(&[100.0, 100.0], &[100.0]);
        let width = WidthModel::per_leaf(&[8, 8], &[4, 4], CombineKind::Sum, true);
        let inst = PlanInstance::synthetic(tree, width, vec![10.0, 10.0], 0.0);
        let report = baseline_morpheus(&inst, &config, Direction::BottomUp).unwrap();
        assert_eq!(report.plan, inst.root_only_plan());
    }

    #[test]
    fn directions_coincide_on_two_way_joins() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let config = CostConfig::default();
        for _ in 0..10 {
            let inst = random_instance(&mut rng, 2);
            let bu = baseline_morpheus(&inst, &config, Direction::BottomUp).unwrap();
            let td = baseline_morpheus(&inst, &config, Direction::TopDown).unwrap();
            assert_eq!(bu.plan, td.plan);
            let bu = baseline_fl(&inst, &config, Direction::BottomUp).unwrap();
            let td = baseline_fl(&inst, &config, Direction::TopDown).unwrap();
            assert_eq!(bu.plan, td.plan);
        }
    }
}
