//! The global cost of a push-down plan: per-node inference computation
//! over the tuples that reach each push site, plus a weighted I/O term
//! over every node's cardinality-width product. Join CPU cost is
//! excluded: push-down never changes node cardinalities.

use serde::{Deserialize, Serialize};

use crate::expr::{CostTable, FactorizationMap};
use crate::plan::{
    availability_with_homes, repair_bits, unit_sites, CombineKind, FoldEvent, JoinTree, NodeId,
    PushdownPlan, WidthModel,
};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CostConfig {
    /// Weight on the I/O term, in cost units per row-slot.
    pub lambda: f64,
}

impl Default for CostConfig {
    fn default() -> Self {
        CostConfig { lambda: 1.0 }
    }
}

/// Everything the cost function needs about one query: the tree with
/// cardinalities, the width model, and per-unit compute costs. Built
/// from a factorization map for real queries or assembled directly for
/// synthetic optimizer instances.
#[derive(Debug, Clone)]
pub struct PlanInstance {
    pub tree: JoinTree,
    pub width: WidthModel,
    pub unit_flops: Vec<f64>,
    pub residual_flops: f64,
    /// Fold cost multiplier per group (by combine kind).
    pub fold_multipliers: Vec<f64>,
}

impl PlanInstance {
    pub fn from_map(
        tree: JoinTree,
        map: &FactorizationMap,
        table: &CostTable,
        aggressive: bool,
    ) -> Result<Self> {
        let width = map.width_model(aggressive);
        let fold_multipliers = map
            .groups
            .iter()
            .map(|g| {
                table.multiplier(match g.combine {
                    CombineKind::Sum => "matadd",
                    CombineKind::And => "bool",
                    CombineKind::Concat => "concat",
                    CombineKind::Independent => "concat",
                })
            })
            .collect::<Result<_>>()?;
        Ok(PlanInstance {
            tree,
            width,
            unit_flops: map.units.iter().map(|u| u.flops).collect(),
            residual_flops: map.residual_flops,
            fold_multipliers,
        })
    }

    pub fn synthetic(
        tree: JoinTree,
        width: WidthModel,
        unit_flops: Vec<f64>,
        residual_flops: f64,
    ) -> Self {
        let fold_multipliers = vec![1.0; width.groups.len()];
        PlanInstance {
            tree,
            width,
            unit_flops,
            residual_flops,
            fold_multipliers,
        }
    }

    pub fn homes(&self) -> Vec<NodeId> {
        self.width.homes()
    }

    pub fn repair(&self, bits: Vec<bool>) -> PushdownPlan {
        repair_bits(&self.tree, bits, &self.homes())
    }

    /// The plan that pushes nothing below the root.
    pub fn root_only_plan(&self) -> PushdownPlan {
        self.repair(vec![false; self.tree.node_count()])
    }

    fn fold_flops(&self, folds: &[FoldEvent]) -> f64 {
        folds
            .iter()
            .map(|f| (f.items - 1) as f64 * f.dim as f64 * self.fold_multipliers[f.group])
            .sum()
    }
}

/// Evaluate the cost b(x) of a valid plan.
///
/// First term: for every push site, the site's cardinality times the
/// per-tuple cost of the units landing there plus the aggregation work
/// performed there. The always-at-root residual (and any leftover
/// folds) is included as a plan-invariant root term so the no-push-down
/// plan's compute term equals root cardinality times the whole
/// expression's per-tuple cost. Second term: lambda times the sum over
/// all nodes of cardinality times emitted tuple width.
pub fn plan_cost(inst: &PlanInstance, plan: &PushdownPlan, config: &CostConfig) -> Result<f64> {
    let states = inst.width.simulate(&inst.tree, plan)?;
    let homes = inst.homes();
    let sites = unit_sites(&inst.tree, plan, &homes);

    let mut per_node_flops = vec![0.0f64; inst.tree.node_count() + 1];
    for (u, site) in sites.iter().enumerate() {
        let site = site.ok_or_else(|| Error::InvalidPlan(format!("unit {u} unplaced")))?;
        per_node_flops[site] += inst.unit_flops[u];
    }
    let mut compute = 0.0f64;
    for id in 1..=inst.tree.node_count() {
        let flops = per_node_flops[id] + inst.fold_flops(&states[id - 1].folds);
        if flops > 0.0 {
            compute += inst.tree.cardinality(id) * flops;
        }
    }
    let root = inst.tree.root();
    let leftover = inst.fold_flops(&inst.width.residual_folds(&states));
    compute += inst.tree.cardinality(root) * (inst.residual_flops + leftover);

    let io: f64 = states
        .iter()
        .enumerate()
        .map(|(i, s)| inst.tree.cardinality(i + 1) * s.width as f64)
        .sum();

    Ok(compute + config.lambda * io)
}

/// Signed cost change from pushing at `node` (with repair): negative
/// means beneficial. The node must currently be unset with a non-empty
/// availability set.
pub fn node_delta_cost(
    inst: &PlanInstance,
    plan: &PushdownPlan,
    node: NodeId,
    config: &CostConfig,
) -> Result<f64> {
    if plan.get(node) {
        return Err(Error::Cost(format!("node {node} already pushes")));
    }
    let homes = inst.homes();
    let avail = availability_with_homes(&inst.tree, plan, &homes);
    if avail.at(node).is_empty() {
        return Err(Error::Cost(format!(
            "node {node} has no available computations"
        )));
    }
    let base = plan_cost(inst, plan, config)?;
    let mut bits = plan.bits.clone();
    bits[node - 1] = true;
    let flipped = inst.repair(bits);
    let after = plan_cost(inst, &flipped, config)?;
    Ok(after - base)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plan::enumerate_feasible_plans_with_homes;

    pub(crate) fn golden_instance() -> PlanInstance {
        let tree = crate::plan::pushdown::tests::left_deep_with_cards(&[100.0, 100.0], &[100.0]);
        let width = WidthModel::per_leaf(&[50, 50], &[5, 5], CombineKind::Independent, true);
        PlanInstance::synthetic(tree, width, vec![10.0, 10.0], 0.0)
    }

    /// Hand-evaluated golden value: both units pushed at their scans on
    /// a two-leaf tree with flat 100 cardinalities, raw widths 50, out
    /// dims 5, one key slot per leaf, lambda 1:
    /// compute 100*10 + 100*10, io 100*6 + 100*6 + 100*10 -> 4200.
    #[test]
    fn golden_two_leaf_cost() {
        let inst = golden_instance();
        let plan = PushdownPlan {
            bits: vec![true, true, false],
        };
        let cost = plan_cost(&inst, &plan, &CostConfig::default()).unwrap();
        assert_eq!(cost, 4200.0);
    }

    #[test]
    fn lambda_zero_root_only_is_pure_compute() {
        let inst = golden_instance();
        let plan = inst.root_only_plan();
        let cost = plan_cost(&inst, &plan, &CostConfig { lambda: 0.0 }).unwrap();
        // All units at the root over 100 rows.
        assert_eq!(cost, 100.0 * 20.0);
    }

    /// Independent recomputation oracle: availability sets and widths
    /// materialized from scratch, then Eq.-style summation.
    fn recompute_from_scratch(
        inst: &PlanInstance,
        plan: &PushdownPlan,
        config: &CostConfig,
    ) -> f64 {
        let homes = inst.homes();
        let avail = availability_with_homes(&inst.tree, plan, &homes);
        let states = inst.width.simulate(&inst.tree, plan).unwrap();
        let mut total = 0.0;
        for id in 1..=inst.tree.node_count() {
            if plan.get(id) {
                let unit_cost: f64 = avail
                    .at(id)
                    .iter()
                    .map(|&u| inst.unit_flops[u])
                    .sum();
                total += inst.tree.cardinality(id) * unit_cost;
            }
            total += inst.tree.cardinality(id) * inst.fold_flops(&states[id - 1].folds);
            total += config.lambda * inst.tree.cardinality(id) * states[id - 1].width as f64;
        }
        let root = inst.tree.root();
        total += inst.tree.cardinality(root)
            * (inst.residual_flops + inst.fold_flops(&inst.width.residual_folds(&states)));
        total
    }

    #[test]
    fn matches_independent_recomputation_on_random_instances() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
        for _ in 0..20 {
            let m = rng.random_range(2..6usize);
            let cards: Vec<f64> = (0..2 * m - 1)
                .map(|_| rng.random_range(10.0..1000.0f64).round())
                .collect();
            let tree = crate::plan::pushdown::tests::left_deep_with_cards(
                &cards[..m],
                &cards[m..],
            );
            let raw: Vec<usize> = (0..m).map(|_| rng.random_range(4..80)).collect();
            let dims: Vec<usize> = (0..m).map(|_| rng.random_range(1..40)).collect();
            let kind = match rng.random_range(0..3) {
                0 => CombineKind::Sum,
                1 => CombineKind::And,
                _ => CombineKind::Independent,
            };
            let width = WidthModel::per_leaf(&raw, &dims, kind, rng.random_bool(0.5));
            let flops: Vec<f64> = (0..m).map(|_| rng.random_range(1.0..100.0f64)).collect();
            let inst = PlanInstance::synthetic(tree, width, flops, rng.random_range(0.0..50.0));
            let config = CostConfig {
                lambda: rng.random_range(0.0..3.0),
            };
            let homes = inst.homes();
            for plan in enumerate_feasible_plans_with_homes(&inst.tree, &homes).unwrap() {
                let got = plan_cost(&inst, &plan, &config).unwrap();
                let want = recompute_from_scratch(&inst, &plan, &config);
                assert!(
                    (got - want).abs() < 1e-9 * (1.0 + want.abs()),
                    "plan {:?}: {got} vs {want}",
                    plan.bits
                );
            }
        }
    }

    /// The no-push-down plan's compute equals root cardinality times the
    /// whole expression cost (all units, all folds, residual).
    #[test]
    fn no_factorization_compute_is_root_times_whole_expression() {
        let tree = crate::plan::pushdown::tests::left_deep_with_cards(
            &[10.0, 20.0, 30.0],
            &[50.0, 40.0],
        );
        let width = WidthModel::per_leaf(&[8, 8, 8], &[4, 4, 4], CombineKind::Sum, true);
        let inst = PlanInstance::synthetic(tree, width, vec![7.0, 8.0, 9.0], 5.0);
        let plan = inst.root_only_plan();
        let cost = plan_cost(&inst, &plan, &CostConfig { lambda: 0.0 }).unwrap();
        // All three units land at the root: their sum folds there as one
        // 2-item... 3-member fold (2 matadds of dim 4) plus residual.
        let u_f = 7.0 + 8.0 + 9.0 + 2.0 * 4.0 + 5.0;
        assert_eq!(cost, 40.0 * u_f);
    }

    #[test]
    fn widths_never_drop_below_keys() {
        let inst = golden_instance();
        let homes = inst.homes();
        for plan in enumerate_feasible_plans_with_homes(&inst.tree, &homes).unwrap() {
            let states = inst.width.simulate(&inst.tree, &plan).unwrap();
            for (i, s) in states.iter().enumerate() {
                assert!(s.width >= inst.tree.key_slots_above(i + 1));
            }
        }
    }

    #[test]
    fn delta_matches_two_evaluations() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(78);
        let inst = golden_instance();
        let config = CostConfig::default();
        let homes = inst.homes();
        for _ in 0..30 {
            let plans = enumerate_feasible_plans_with_homes(&inst.tree, &homes).unwrap();
            let plan = plans[rng.random_range(0..plans.len())].clone();
            let avail = availability_with_homes(&inst.tree, &plan, &homes);
            for node in 1..=inst.tree.node_count() {
                if plan.get(node) || avail.at(node).is_empty() {
                    continue;
                }
                let delta = node_delta_cost(&inst, &plan, node, &config).unwrap();
                let mut bits = plan.bits.clone();
                bits[node - 1] = true;
                let flipped = inst.repair(bits);
                let explicit = plan_cost(&inst, &flipped, &config).unwrap()
                    - plan_cost(&inst, &plan, &config).unwrap();
                assert_eq!(delta, explicit);
            }
        }
    }

    #[test]
    fn ineligible_node_is_an_error() {
        let inst = golden_instance();
        let plan = PushdownPlan {
            bits: vec![true, true, false],
        };
        // Root has empty availability after both leaves consumed.
        assert!(node_delta_cost(&inst, &plan, 3, &CostConfig::default()).is_err());
    }
}
