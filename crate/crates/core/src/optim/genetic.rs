//! Genetic plan search: random repaired population, subtree crossover,
//! bit-flip mutation, elitist truncation selection.

use std::collections::HashMap;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cost::{plan_cost, CostConfig, PlanInstance};
use crate::plan::{JoinTree, NodeId, PushdownPlan};
use crate::Result;

use super::OptimizerReport;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GeneticConfig {
    /// Generations to run.
    pub generations: usize,
    /// Population size kept after selection.
    pub population: usize,
    /// New chromosomes produced per generation.
    pub offspring: usize,
    pub seed: u64,
}

impl Default for GeneticConfig {
    fn default() -> Self {
        GeneticConfig {
            generations: 20,
            population: 150,
            offspring: 25,
            seed: 0,
        }
    }
}

/// Exchange the decision bits of the subtree under a uniformly chosen
/// join node, then repair both children.
pub fn crossover<R: Rng>(
    p1: &PushdownPlan,
    p2: &PushdownPlan,
    tree: &JoinTree,
    homes: &[NodeId],
    rng: &mut R,
) -> (PushdownPlan, PushdownPlan) {
    let m = tree.leaf_count;
    let point = rng.random_range(m + 1..=tree.node_count());
    let mut c1 = p1.bits.clone();
    let mut c2 = p2.bits.clone();
    for id in tree.subtree_nodes(point) {
        c1[id - 1] = p2.bits[id - 1];
        c2[id - 1] = p1.bits[id - 1];
    }
    (
        crate::plan::repair_bits(tree, c1, homes),
        crate::plan::repair_bits(tree, c2, homes),
    )
}

/// Flip one uniformly chosen bit, then repair.
pub fn mutate<R: Rng>(
    p: &PushdownPlan,
    tree: &JoinTree,
    homes: &[NodeId],
    rng: &mut R,
) -> PushdownPlan {
    let mut bits = p.bits.clone();
    let idx = rng.random_range(0..bits.len());
    bits[idx] = !bits[idx];
    crate::plan::repair_bits(tree, bits, homes)
}

/// Run the genetic optimizer. Deterministic for a fixed seed: selection
/// sorts by (cost, decision vector) and the RNG is seeded.
pub fn genetic(
    inst: &PlanInstance,
    config: &CostConfig,
    gcfg: &GeneticConfig,
) -> Result<OptimizerReport> {
    assert!(gcfg.population >= 2 && gcfg.offspring >= 1);
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(gcfg.seed);
    let homes = inst.homes();
    let n = inst.tree.node_count();

    let mut evaluated = 0u64;
    let mut cache: HashMap<PushdownPlan, f64> = HashMap::new();
    let mut cost_of = |plan: &PushdownPlan, evaluated: &mut u64| -> Result<f64> {
        if let Some(&c) = cache.get(plan) {
            return Ok(c);
        }
        let c = plan_cost(inst, plan, config)?;
        cache.insert(plan.clone(), c);
        *evaluated += 1;
        Ok(c)
    };

    // Random repaired population, deduplicated best-effort: the space
    // can be smaller than the population, so retries are bounded.
    let mut population: Vec<(f64, PushdownPlan)> = Vec::with_capacity(gcfg.population);
    let mut attempts = 0usize;
    while population.len() < gcfg.population {
        let bits: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        let plan = crate::plan::repair_bits(&inst.tree, bits, &homes);
        attempts += 1;
        let duplicate = population.iter().any(|(_, p)| *p == plan);
        if duplicate && attempts < 10 * gcfg.population {
            continue;
        }
        let cost = cost_of(&plan, &mut evaluated)?;
        population.push((cost, plan));
    }

    let mut best = population
        .iter()
        .min_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)))
        .cloned()
        .unwrap();

    for _generation in 0..gcfg.generations {
        let target = gcfg.population + gcfg.offspring;
        while population.len() < target {
            let i = rng.random_range(0..gcfg.population);
            let j = rng.random_range(0..gcfg.population);
            let (c1, c2) = crossover(&population[i].1, &population[j].1, &inst.tree, &homes, &mut rng);
            let c1 = mutate(&c1, &inst.tree, &homes, &mut rng);
            let c2 = mutate(&c2, &inst.tree, &homes, &mut rng);
            for child in [c1, c2] {
                if population.len() >= target {
                    break;
                }
                let cost = cost_of(&child, &mut evaluated)?;
                population.push((cost, child));
            }
        }
        population.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        population.truncate(gcfg.population);
        if population[0].0 < best.0 || (population[0].0 == best.0 && population[0].1 < best.1) {
            best = population[0].clone();
        }
    }

    Ok(OptimizerReport {
        strategy: "genetic".into(),
        plan: best.1,
        cost: best.0,
        plans_evaluated: evaluated,
        wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
        seed: gcfg.seed,
    })
}
