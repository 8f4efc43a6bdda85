//! Command-line workbench: generate workloads, optimize push-down
//! plans, execute and verify them, benchmark strategies, and calibrate
//! the cost model.

use std::collections::HashMap;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use fjord_core::cost::{
    calibrate_op_costs, gen_benefit_dataset, run_microbench, train_logistic, CostConfig,
    LogisticModel,
};
use fjord_core::engine::{
    exact_columns, gen_workload, load_workload, prepare, run_bench, run_strategy, save_workload,
    verify, BenchOptions, ExecOptions, ModelKind, Shape, Strategy, Workload, WorkloadConfig,
};
use fjord_core::expr::{CostTable, ModelStore};
use fjord_core::optim::{GeneticConfig, GreedyConfig};
use fjord_core::relational::write_csv;

#[derive(Parser)]
#[command(name = "fjord", about = "Factorized inference over joins", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic workload directory.
    Gen(GenArgs),
    /// Choose a push-down plan for a workload.
    Optimize(OptimizeArgs),
    /// Execute a workload under one strategy and verify it.
    Run(RunArgs),
    /// Run a strategy matrix over generated or saved workloads.
    Bench(BenchArgs),
    /// Microbenchmark kernels and fit the cost table; train the
    /// benefit predictor.
    Calibrate(CalibrateArgs),
    /// Model file utilities.
    Model(ModelArgs),
}

/// Seed fallback: flag, then FJORD_SEED, then zero.
fn resolve_seed(flag: Option<u64>) -> u64 {
    flag.or_else(|| {
        std::env::var("FJORD_SEED")
            .ok()
            .and_then(|s| s.parse().ok())
    })
    .unwrap_or(0)
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value_t = 3)]
    tables: usize,
    #[arg(long, default_value = "ffnn")]
    model: String,
    #[arg(long, default_value = "star")]
    shape: String,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 100)]
    dim_rows: usize,
    #[arg(long, default_value_t = 10.0)]
    fanout: f64,
    #[arg(long)]
    fact_rows: Option<usize>,
    /// Per-table feature dims, inclusive range "lo..hi".
    #[arg(long, default_value = "2..20")]
    features: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PlanningArgs {
    #[arg(long)]
    workload: PathBuf,
    #[arg(long, default_value = "greedy")]
    strategy: String,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Disable aggressive aggregation (early combining of partials).
    #[arg(long)]
    no_aggregation: bool,
    /// Calibrated per-op cost multipliers (from `calibrate`).
    #[arg(long)]
    cost_table: Option<PathBuf>,
    /// Learned benefit predictor (from `calibrate`).
    #[arg(long)]
    benefit_model: Option<PathBuf>,
    /// Gate greedy commits on the predictor.
    #[arg(long)]
    benefit_gate: bool,
}

#[derive(Args)]
struct OptimizeArgs {
    #[command(flatten)]
    planning: PlanningArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    planning: PlanningArgs,
    /// Verify the result against the no-push-down execution.
    #[arg(long)]
    verify: bool,
    #[arg(long, default_value_t = 1e-4)]
    rel_tol: f64,
    /// Write metrics JSON here.
    #[arg(long)]
    metrics: Option<PathBuf>,
    /// Write the result table CSV here.
    #[arg(long)]
    result: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Saved workload directories (comma separated). When omitted, a
    /// suite is generated from --tables/--models/--per.
    #[arg(long, value_delimiter = ',')]
    workloads: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "2,3,4")]
    tables: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "ffnn")]
    models: Vec<String>,
    /// Queries per (tables, model) combination.
    #[arg(long, default_value_t = 1)]
    per: usize,
    #[arg(long, value_delimiter = ',', default_value = "none,full,greedy,genetic")]
    strategies: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    #[arg(long)]
    no_aggregation: bool,
    #[arg(long, default_value_t = 100)]
    dim_rows: usize,
    #[arg(long, default_value_t = 10.0)]
    fanout: f64,
    #[arg(long, default_value = "2..20")]
    features: String,
    #[arg(long)]
    cost_table: Option<PathBuf>,
    /// Write report.csv here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long)]
    seed: Option<u64>,
    /// Output path for the fitted cost table.
    #[arg(long, default_value = "cost_table.json")]
    out: PathBuf,
    /// Output path for the trained benefit model.
    #[arg(long, default_value = "benefit_model.json")]
    benefit_out: PathBuf,
    /// Synthetic training samples for the predictor.
    #[arg(long, default_value_t = 500)]
    samples: usize,
}

#[derive(Args)]
struct ModelArgs {
    #[command(subcommand)]
    command: ModelCommand,
}

#[derive(Subcommand)]
enum ModelCommand {
    /// Check the structural invariants of a model file.
    Validate {
        #[arg(long)]
        model: PathBuf,
    },
}

fn parse_range(s: &str) -> Result<(usize, usize)> {
    let (lo, hi) = s
        .split_once("..")
        .with_context(|| format!("expected lo..hi, got `{s}`"))?;
    Ok((lo.parse()?, hi.parse()?))
}

fn load_cost_table(path: &Option<PathBuf>) -> Result<CostTable> {
    match path {
        Some(p) => {
            let table: CostTable = serde_json::from_str(&std::fs::read_to_string(p)?)?;
            Ok(table)
        }
        None => Ok(CostTable::default()),
    }
}

struct Planning {
    workload: Workload,
    strategy: Strategy,
    cost_config: CostConfig,
    cost_table: CostTable,
    genetic: GeneticConfig,
    greedy: GreedyConfig,
    exec: ExecOptions,
    aggressive: bool,
    seed: u64,
}

impl Planning {
    fn from_args(args: &PlanningArgs) -> Result<Self> {
        let seed = resolve_seed(args.seed);
        let workload = load_workload(&args.workload)
            .with_context(|| format!("loading workload from {}", args.workload.display()))?;
        let strategy: Strategy = args.strategy.parse()?;
        let cost_table = load_cost_table(&args.cost_table)?;
        let benefit_gate = match (&args.benefit_model, args.benefit_gate) {
            (Some(path), true) => {
                let model: LogisticModel = serde_json::from_str(&std::fs::read_to_string(path)?)?;
                Some(model)
            }
            (None, true) => bail!("--benefit-gate requires --benefit-model"),
            _ => None,
        };
        Ok(Planning {
            workload,
            strategy,
            cost_config: CostConfig { lambda: args.lambda },
            cost_table,
            genetic: GeneticConfig {
                seed,
                ..GeneticConfig::default()
            },
            greedy: GreedyConfig {
                threshold: 0.0,
                benefit_gate,
            },
            exec: ExecOptions {
                threads: args.threads,
                ..ExecOptions::default()
            },
            aggressive: !args.no_aggregation,
            seed,
        })
    }
}

fn main() {
    let cli = Cli::parse();
    let code = match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    };
    std::process::exit(code);
}

fn dispatch(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Gen(args) => {
            let config = WorkloadConfig {
                tables: args.tables,
                model: args.model.parse::<ModelKind>()?,
                shape: args.shape.parse::<Shape>()?,
                seed: resolve_seed(args.seed),
                dim_rows: args.dim_rows,
                fanout: args.fanout,
                fact_rows: args.fact_rows,
                feature_range: parse_range(&args.features)?,
                order: None,
            };
            let workload = gen_workload(&config)?;
            save_workload(&workload, &args.out)?;
            println!(
                "wrote {} tables, query, expression and models to {}",
                workload.table_order.len(),
                args.out.display()
            );
            Ok(0)
        }
        Command::Optimize(args) => {
            let p = Planning::from_args(&args.planning)?;
            let prepared = prepare(&p.workload, &p.cost_table, p.aggressive)?;
            let report = fjord_core::engine::optimize_with(
                p.strategy,
                &prepared.instance,
                &p.cost_config,
                &p.genetic,
                &p.greedy,
            )?;
            let json = serde_json::to_string_pretty(&report)?;
            match &args.out {
                Some(path) => std::fs::write(path, &json)?,
                None => println!("{json}"),
            }
            eprintln!(
                "{}: cost {:.3}, {} plans evaluated, {:.3} ms, {}",
                report.strategy,
                report.cost,
                report.plans_evaluated,
                report.wall_time_ms,
                report.plan_string()
            );
            Ok(0)
        }
        Command::Run(args) => {
            let p = Planning::from_args(&args.planning)?;
            let prepared = prepare(&p.workload, &p.cost_table, p.aggressive)?;
            let (opt, result, metrics) = run_strategy(
                &p.workload,
                &prepared,
                p.strategy,
                &p.cost_config,
                &p.genetic,
                &p.greedy,
                &p.exec,
                p.aggressive,
            )?;
            eprintln!(
                "{}: optimized in {:.3} ms, executed in {:.3} ms, {} rows out",
                opt.strategy,
                opt.wall_time_ms,
                metrics.total_ms,
                result.row_count
            );
            let mut ok = true;
            if args.verify {
                let (_, reference, _) = run_strategy(
                    &p.workload,
                    &prepared,
                    Strategy::None,
                    &p.cost_config,
                    &p.genetic,
                    &p.greedy,
                    &p.exec,
                    p.aggressive,
                )?;
                let report = verify(&result, &reference, args.rel_tol, &exact_columns(&prepared.map))?;
                ok = report.pass;
                eprintln!(
                    "verify vs no-push-down: {} (max rel {:.3e})",
                    if report.pass { "pass" } else { "FAIL" },
                    report.max_rel
                );
            }
            if let Some(path) = &args.metrics {
                std::fs::write(path, serde_json::to_string_pretty(&metrics)?)?;
            }
            if let Some(path) = &args.result {
                write_csv(&result, path)?;
            }
            Ok(if ok { 0 } else { 1 })
        }
        Command::Bench(args) => {
            let seed = resolve_seed(args.seed);
            let strategies: Vec<Strategy> = args
                .strategies
                .iter()
                .map(|s| s.parse())
                .collect::<fjord_core::Result<_>>()?;
            let mut workloads: Vec<(String, Workload)> = Vec::new();
            if args.workloads.is_empty() {
                let feature_range = parse_range(&args.features)?;
                for &m in &args.tables {
                    for model in &args.models {
                        let kind: ModelKind = model.parse()?;
                        for i in 0..args.per {
                            let config = WorkloadConfig {
                                tables: m,
                                model: kind,
                                shape: Shape::Star,
                                seed: seed ^ ((m as u64) << 32) ^ (i as u64),
                                dim_rows: args.dim_rows,
                                fanout: args.fanout,
                                fact_rows: None,
                                feature_range,
                                order: None,
                            };
                            workloads.push((format!("{model}-m{m}-{i}"), gen_workload(&config)?));
                        }
                    }
                }
            } else {
                for dir in &args.workloads {
                    let name = dir
                        .file_name()
                        .map(|s| s.to_string_lossy().into_owned())
                        .unwrap_or_else(|| dir.display().to_string());
                    workloads.push((name, load_workload(dir)?));
                }
            }
            let opts = BenchOptions {
                cost_config: CostConfig { lambda: args.lambda },
                cost_table: load_cost_table(&args.cost_table)?,
                genetic: GeneticConfig {
                    seed,
                    ..GeneticConfig::default()
                },
                greedy: GreedyConfig::default(),
                exec: ExecOptions {
                    threads: args.threads,
                    ..ExecOptions::default()
                },
                aggressive: !args.no_aggregation,
                rel_tol: 1e-4,
            };
            let report = run_bench(&workloads, &strategies, &opts);
            print!("{}", report.human_table());
            if let Some(path) = &args.out {
                std::fs::write(path, report.to_csv())?;
                eprintln!("report written to {}", path.display());
            }
            Ok(if report.all_verified { 0 } else { 1 })
        }
        Command::Calibrate(args) => {
            let seed = resolve_seed(args.seed);
            eprintln!("timing kernels...");
            let measurements = run_microbench(seed);
            let report = calibrate_op_costs(&measurements)?;
            std::fs::write(&args.out, serde_json::to_string_pretty(&report.table)?)?;
            let mut residuals: Vec<_> = report.residuals.iter().collect();
            residuals.sort_by(|a, b| a.0.cmp(b.0));
            for (op, residual) in residuals {
                eprintln!(
                    "  {op:<10} x{:<12.4} worst residual {:.1}%",
                    report.table.multipliers[op],
                    residual * 100.0
                );
            }
            eprintln!("cost table written to {}", args.out.display());

            let (features, labels) = gen_benefit_dataset(args.samples, seed);
            let model = train_logistic(&features, &labels, 4000, 0.5, None)?;
            std::fs::write(&args.benefit_out, serde_json::to_string_pretty(&model)?)?;
            eprintln!("benefit model written to {}", args.benefit_out.display());
            Ok(0)
        }
        Command::Model(args) => match args.command {
            ModelCommand::Validate { model } => {
                let store: ModelStore = serde_json::from_str(&std::fs::read_to_string(&model)?)?;
                store.validate()?;
                let counts = format!(
                    "{} weights, {} biases, {} forests, {} quantizers, {} scalers, {} encoders",
                    store.weights.len(),
                    store.biases.len(),
                    store.forests.len(),
                    store.pq.len(),
                    store.scalers.len(),
                    store.encoders.len()
                );
                println!("ok: {counts}");
                Ok(0)
            }
        },
    }
}

#[allow(dead_code)]
fn unused(_: &HashMap<String, ()>) {}
