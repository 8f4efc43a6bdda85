//! Benchmark harness: optimize, execute and verify each query under
//! each strategy, accumulating a per-cell report.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::cost::{CostConfig, PlanInstance};
use crate::expr::{analyze, rewrite, CostTable, FactorizationMap};
use crate::optim::{
    baseline_fl, baseline_full, baseline_morpheus, baseline_none, exhaustive, genetic, greedy,
    Direction, GeneticConfig, GreedyConfig, OptimizerReport,
};
use crate::plan::JoinTree;
use crate::relational::Table;
use crate::{Error, Result};

use super::exec::{execute, ExecOptions};
use super::metrics::RunMetrics;
use super::verify::{verify, VerifyReport};
use super::workload::Workload;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    None,
    Full,
    Greedy,
    Genetic,
    Exhaustive,
    MorpheusBu,
    MorpheusTd,
    FlBu,
    FlTd,
}

impl std::str::FromStr for Strategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "none" => Strategy::None,
            "full" => Strategy::Full,
            "greedy" => Strategy::Greedy,
            "genetic" => Strategy::Genetic,
            "exhaustive" => Strategy::Exhaustive,
            "morpheus-bu" => Strategy::MorpheusBu,
            "morpheus-td" => Strategy::MorpheusTd,
            "fl-bu" => Strategy::FlBu,
            "fl-td" => Strategy::FlTd,
            other => return Err(Error::Workload(format!("unknown strategy `{other}`"))),
        })
    }
}

impl Strategy {
    pub const ALL: [Strategy; 9] = [
        Strategy::None,
        Strategy::Full,
        Strategy::Greedy,
        Strategy::Genetic,
        Strategy::Exhaustive,
        Strategy::MorpheusBu,
        Strategy::MorpheusTd,
        Strategy::FlBu,
        Strategy::FlTd,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::None => "none",
            Strategy::Full => "full",
            Strategy::Greedy => "greedy",
            Strategy::Genetic => "genetic",
            Strategy::Exhaustive => "exhaustive",
            Strategy::MorpheusBu => "morpheus-bu",
            Strategy::MorpheusTd => "morpheus-td",
            Strategy::FlBu => "fl-bu",
            Strategy::FlTd => "fl-td",
        }
    }
}

/// Run one optimizer strategy on a prepared instance.
pub fn optimize_with(
    strategy: Strategy,
    inst: &PlanInstance,
    config: &CostConfig,
    genetic_config: &GeneticConfig,
    greedy_config: &GreedyConfig,
) -> Result<OptimizerReport> {
    match strategy {
        Strategy::None => baseline_none(inst, config),
        Strategy::Full => baseline_full(inst, config),
        Strategy::Greedy => greedy(inst, config, greedy_config),
        Strategy::Genetic => genetic(inst, config, genetic_config),
        Strategy::Exhaustive => exhaustive(inst, config),
        Strategy::MorpheusBu => baseline_morpheus(inst, config, Direction::BottomUp),
        Strategy::MorpheusTd => baseline_morpheus(inst, config, Direction::TopDown),
        Strategy::FlBu => baseline_fl(inst, config, Direction::BottomUp),
        Strategy::FlTd => baseline_fl(inst, config, Direction::TopDown),
    }
}

/// A query prepared for planning and execution.
pub struct PreparedQuery {
    pub tree: JoinTree,
    pub map: FactorizationMap,
    pub instance: PlanInstance,
}

pub fn prepare(
    workload: &Workload,
    cost_table: &CostTable,
    aggressive: bool,
) -> Result<PreparedQuery> {
    let tree = workload.join_tree()?;
    let map = analyze(
        &workload.expr,
        &tree,
        &workload.schema,
        &workload.store,
        cost_table,
    )?;
    map.validate()?;
    let instance = PlanInstance::from_map(tree.clone(), &map, cost_table, aggressive)?;
    Ok(PreparedQuery {
        tree,
        map,
        instance,
    })
}

/// Optimize + execute one strategy end to end.
pub fn run_strategy(
    workload: &Workload,
    prepared: &PreparedQuery,
    strategy: Strategy,
    config: &CostConfig,
    genetic_config: &GeneticConfig,
    greedy_config: &GreedyConfig,
    exec: &ExecOptions,
    aggressive: bool,
) -> Result<(OptimizerReport, Table, RunMetrics)> {
    let report = optimize_with(strategy, &prepared.instance, config, genetic_config, greedy_config)?;
    let rewritten = rewrite(&prepared.tree, &report.plan, &prepared.map, aggressive)?;
    let (result, mut metrics) = execute(
        &prepared.tree,
        &rewritten,
        &prepared.map,
        &workload.store,
        &workload.tables,
        exec,
    )?;
    metrics.strategy = report.strategy.clone();
    metrics.seed = report.seed;
    Ok((report, result, metrics))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchCell {
    pub query: String,
    pub tables: usize,
    pub strategy: String,
    pub seed: u64,
    pub opt_ms: f64,
    pub exec_ms: f64,
    pub total_ms: f64,
    pub cost_estimate: f64,
    pub plans_evaluated: u64,
    pub plan: String,
    pub verified: Option<bool>,
    pub max_rel_err: Option<f64>,
    pub speedup_vs_none: Option<f64>,
    pub bytes_moved: u64,
    pub rows_root: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct BenchReport {
    pub cells: Vec<BenchCell>,
    pub all_verified: bool,
}

impl BenchReport {
    /// Render the per-strategy cumulative latency table.
    pub fn human_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<18} {:<12} {:>9} {:>9} {:>11} {:>10} {:>8}\n",
            "query", "strategy", "opt ms", "exec ms", "cumul ms", "speedup", "verified"
        ));
        let mut cumulative: HashMap<&str, f64> = HashMap::new();
        for cell in &self.cells {
            let cum = cumulative.entry(cell.strategy.as_str()).or_insert(0.0);
            *cum += cell.total_ms;
            out.push_str(&format!(
                "{:<18} {:<12} {:>9.2} {:>9.2} {:>11.2} {:>10} {:>8}\n",
                cell.query,
                cell.strategy,
                cell.opt_ms,
                cell.exec_ms,
                *cum,
                cell.speedup_vs_none
                    .map(|s| format!("{s:.2}x"))
                    .unwrap_or_else(|| "-".into()),
                match cell.verified {
                    Some(true) => "yes",
                    Some(false) => "NO",
                    None => "-",
                }
            ));
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "query,tables,strategy,seed,opt_ms,exec_ms,total_ms,cumulative_ms,cost_estimate,plans_evaluated,plan,verified,max_rel_err,speedup_vs_none,bytes_moved,rows_root,error\n",
        );
        let mut cumulative: HashMap<&str, f64> = HashMap::new();
        for cell in &self.cells {
            let cum = cumulative.entry(cell.strategy.as_str()).or_insert(0.0);
            *cum += cell.total_ms;
            out.push_str(&format!(
                "{},{},{},{},{:.3},{:.3},{:.3},{:.3},{},{},{},{},{},{},{},{},{}\n",
                cell.query,
                cell.tables,
                cell.strategy,
                cell.seed,
                cell.opt_ms,
                cell.exec_ms,
                cell.total_ms,
                *cum,
                cell.cost_estimate,
                cell.plans_evaluated,
                cell.plan.replace(',', ";"),
                cell.verified.map(|v| v.to_string()).unwrap_or_default(),
                cell.max_rel_err.map(|v| v.to_string()).unwrap_or_default(),
                cell.speedup_vs_none.map(|v| format!("{v:.4}")).unwrap_or_default(),
                cell.bytes_moved,
                cell.rows_root,
                cell.error.clone().unwrap_or_default(),
            ));
        }
        out
    }
}

pub struct BenchOptions {
    pub cost_config: CostConfig,
    pub cost_table: CostTable,
    pub genetic: GeneticConfig,
    pub greedy: GreedyConfig,
    pub exec: ExecOptions,
    pub aggressive: bool,
    pub rel_tol: f64,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions {
            cost_config: CostConfig::default(),
            cost_table: CostTable::default(),
            genetic: GeneticConfig::default(),
            greedy: GreedyConfig::default(),
            exec: ExecOptions::default(),
            aggressive: true,
            rel_tol: 1e-4,
        }
    }
}

/// For each workload and strategy: optimize (timed), execute (timed),
/// and verify against the no-push-down execution. Failures are recorded
/// per cell and the run continues.
pub fn run_bench(
    workloads: &[(String, Workload)],
    strategies: &[Strategy],
    opts: &BenchOptions,
) -> BenchReport {
    let mut report = BenchReport {
        cells: Vec::new(),
        all_verified: true,
    };
    for (name, workload) in workloads {
        let prepared = match prepare(workload, &opts.cost_table, opts.aggressive) {
            Ok(p) => p,
            Err(e) => {
                report.all_verified = false;
                report.cells.push(error_cell(name, workload, "prepare", &e));
                continue;
            }
        };
        // Reference execution for equivalence checks.
        let reference = run_strategy(
            workload,
            &prepared,
            Strategy::None,
            &opts.cost_config,
            &opts.genetic,
            &opts.greedy,
            &opts.exec,
            opts.aggressive,
        );
        let reference = match reference {
            Ok(r) => r,
            Err(e) => {
                report.all_verified = false;
                report.cells.push(error_cell(name, workload, "none", &e));
                continue;
            }
        };
        let none_total = reference.0.wall_time_ms + reference.2.total_ms;

        for &strategy in strategies {
            let outcome = run_strategy(
                workload,
                &prepared,
                strategy,
                &opts.cost_config,
                &opts.genetic,
                &opts.greedy,
                &opts.exec,
                opts.aggressive,
            );
            let (opt, result, metrics) = match outcome {
                Ok(r) => r,
                Err(e) => {
                    report.all_verified = false;
                    report
                        .cells
                        .push(error_cell(name, workload, strategy.name(), &e));
                    continue;
                }
            };
            let verdict: Result<VerifyReport> = verify(
                &result,
                &reference.1,
                opts.rel_tol,
                &exact_columns(&prepared.map),
            );
            let (verified, max_rel) = match &verdict {
                Ok(v) => (Some(v.pass), Some(v.max_rel)),
                Err(_) => (Some(false), None),
            };
            if verified != Some(true) {
                report.all_verified = false;
            }
            let total = opt.wall_time_ms + metrics.total_ms;
            report.cells.push(BenchCell {
                query: name.clone(),
                tables: workload.config.tables,
                strategy: strategy.name().to_string(),
                seed: workload.config.seed,
                opt_ms: opt.wall_time_ms,
                exec_ms: metrics.total_ms,
                total_ms: total,
                cost_estimate: opt.cost,
                plans_evaluated: opt.plans_evaluated,
                plan: opt.plan_string(),
                verified,
                max_rel_err: max_rel,
                speedup_vs_none: Some(none_total / total.max(1e-9)),
                bytes_moved: metrics.total_bytes(),
                rows_root: metrics.per_node.last().map(|n| n.rows).unwrap_or(0),
                error: None,
            });
        }
    }
    report
}

/// Output columns that must match bit for bit under any plan.
pub fn exact_columns(map: &FactorizationMap) -> Vec<String> {
    map.output_names
        .iter()
        .zip(&map.output_exact)
        .filter(|(_, &exact)| exact)
        .map(|(name, _)| name.clone())
        .collect()
}

fn error_cell(name: &str, workload: &Workload, strategy: &str, e: &Error) -> BenchCell {
    BenchCell {
        query: name.to_string(),
        tables: workload.config.tables,
        strategy: strategy.to_string(),
        seed: workload.config.seed,
        opt_ms: 0.0,
        exec_ms: 0.0,
        total_ms: 0.0,
        cost_estimate: f64::NAN,
        plans_evaluated: 0,
        plan: String::new(),
        verified: Some(false),
        max_rel_err: None,
        speedup_vs_none: None,
        bytes_moved: 0,
        rows_root: 0,
        error: Some(e.to_string()),
    }
}
