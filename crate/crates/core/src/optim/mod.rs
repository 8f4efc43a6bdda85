//! Plan search: exhaustive oracle, genetic and greedy optimizers, and
//! the two-way-join rule baselines.

mod baselines;
mod genetic;
mod greedy;

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::cost::{plan_cost, CostConfig, PlanInstance};
use crate::plan::{enumerate_feasible_plans_with_homes, PushdownPlan};
use crate::{Error, Result};

pub use baselines::{baseline_fl, baseline_full, baseline_morpheus, baseline_none, Direction};
pub use genetic::{crossover, genetic, mutate, GeneticConfig};
pub use greedy::{greedy, GreedyConfig};

/// Repair an arbitrary chromosome into a valid plan for the instance.
pub fn repair(inst: &PlanInstance, bits: Vec<bool>) -> PushdownPlan {
    inst.repair(bits)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimizerReport {
    pub strategy: String,
    pub plan: PushdownPlan,
    pub cost: f64,
    pub plans_evaluated: u64,
    pub wall_time_ms: f64,
    pub seed: u64,
}

impl OptimizerReport {
    pub fn plan_string(&self) -> String {
        self.plan.to_report_string()
    }
}

/// Leaf limit beyond which exhaustive search refuses to run.
pub const EXHAUSTIVE_MAX_LEAVES: usize = 12;

/// Minimize cost over every feasible plan. Ties break toward the
/// lexicographically smallest decision vector.
pub fn exhaustive(inst: &PlanInstance, config: &CostConfig) -> Result<OptimizerReport> {
    if inst.tree.leaf_count > EXHAUSTIVE_MAX_LEAVES {
        return Err(Error::TreeTooLarge {
            m: inst.tree.leaf_count,
            limit: EXHAUSTIVE_MAX_LEAVES,
        });
    }
    let start = Instant::now();
    let homes = inst.homes();
    let plans = enumerate_feasible_plans_with_homes(&inst.tree, &homes)?;
    let mut best: Option<(f64, PushdownPlan)> = None;
    let mut evaluated = 0u64;
    for plan in plans {
        let cost = plan_cost(inst, &plan, config)?;
        evaluated += 1;
        let better = match &best {
            None => true,
            Some((c, p)) => cost < *c || (cost == *c && plan < *p),
        };
        if better {
            best = Some((cost, plan));
        }
    }
    let (cost, plan) = best.expect("plan space is never empty");
    Ok(OptimizerReport {
        strategy: "exhaustive".into(),
        plan,
        cost,
        plans_evaluated: evaluated,
        wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
        seed: 0,
    })
}
