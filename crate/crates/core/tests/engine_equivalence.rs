//! End-to-end equivalence: every valid plan's execution must match the
//! no-push-down execution, and the no-push-down execution must match an
//! independent evaluation of the original expression over the
//! materialized join (no analysis or rewriting involved).

use std::collections::HashMap;

use fjord_core::engine::{
    exact_columns, gen_workload, prepare, verify, ExecOptions, ModelKind, Shape, WorkloadConfig,
};
use fjord_core::expr::{evaluate_graph, rewrite, Batch, CostTable, ExprOp};
use fjord_core::infer::DenseMatrix;
use fjord_core::plan::{enumerate_feasible_plans_with_homes, NodeKind};
use fjord_core::relational::{hash_join, Column, ColumnData, Table};

/// Join the workload tables along the tree order with the standalone
/// hash join, then evaluate the original expression over the result.
fn monolithic_oracle(
    workload: &fjord_core::engine::Workload,
    tree: &fjord_core::plan::JoinTree,
) -> Table {
    // Materialize the join bottom-up over full tables.
    let mut acc: HashMap<usize, Table> = HashMap::new();
    for id in 1..=tree.node_count() {
        let table = match &tree.node(id).kind {
            NodeKind::Scan { table_ref } => {
                let t = &workload.tables[table_ref];
                // Qualify column names the way the engine does.
                let columns = t
                    .columns
                    .iter()
                    .map(|c| Column {
                        name: format!("{table_ref}.{}", c.name),
                        lineage: c.lineage.clone(),
                        data: c.data.clone(),
                    })
                    .collect();
                Table::new(table_ref.clone(), columns).unwrap()
            }
            NodeKind::Join {
                left_key,
                right_key,
            } => {
                let (l, r) = tree.node(id).children.unwrap();
                let left = acc.remove(&l).unwrap();
                let right = acc.remove(&r).unwrap();
                hash_join(&left, &right, &left_key.to_string(), &right_key.to_string())
                    .unwrap()
            }
        };
        acc.insert(id, table);
    }
    let joined = acc.remove(&tree.node_count()).unwrap();
    let rows = joined.row_count;

    // Evaluate the pristine expression over the joined batch.
    let mut resolve = |node: &fjord_core::expr::ExprNode| -> fjord_core::Result<Batch> {
        match &node.op {
            ExprOp::InputRef { columns } => {
                if columns.len() == 1 {
                    if let ColumnData::Str(v) = &joined.column(&columns[0]).unwrap().data {
                        return Ok(Batch::S(v.clone()));
                    }
                }
                let mut dim = 0usize;
                let mut parts = Vec::new();
                for c in columns {
                    let col = joined.column(c).unwrap();
                    dim += col.dtype().slots();
                    parts.push(&col.data);
                }
                let mut data = Vec::with_capacity(rows * dim);
                for r in 0..rows {
                    for p in &parts {
                        match p {
                            ColumnData::Float32(v) => data.push(v[r]),
                            ColumnData::Int64(v) => data.push(v[r] as f32),
                            ColumnData::FloatArray { dim, data: d } => {
                                data.extend_from_slice(&d[r * dim..(r + 1) * dim])
                            }
                            ColumnData::Str(_) => unreachable!(),
                        }
                    }
                }
                Ok(Batch::F(DenseMatrix {
                    rows,
                    cols: dim,
                    data,
                }))
            }
            other => panic!("oracle resolver hit {other:?}"),
        }
    };
    let outputs = evaluate_graph(&workload.expr, &workload.store, rows, &mut resolve).unwrap();

    let mut columns = vec![Column::new(
        "__row",
        "oracle",
        ColumnData::Int64((0..rows as i64).collect()),
    )];
    for (i, (out, &orig)) in outputs.iter().zip(&workload.expr.outputs).enumerate() {
        let data = match out {
            Batch::F(m) if m.cols == 1 => ColumnData::Float32(m.data.clone()),
            Batch::F(m) => ColumnData::FloatArray {
                dim: m.cols,
                data: m.data.clone(),
            },
            Batch::S(v) => ColumnData::Str(v.clone()),
        };
        let _ = i;
        columns.push(Column::new(format!("out_{orig}"), "oracle", data));
    }
    Table::new("oracle", columns).unwrap()
}

fn check_workload(config: WorkloadConfig, aggressive: bool) {
    let workload = gen_workload(&config).unwrap();
    let prepared = prepare(&workload, &CostTable::default(), aggressive).unwrap();
    let homes = prepared.map.homes();
    let exact = exact_columns(&prepared.map);

    let plans = enumerate_feasible_plans_with_homes(&prepared.tree, &homes).unwrap();
    assert!(!plans.is_empty());

    // Reference: the root-only plan.
    let baseline = prepared.instance.root_only_plan();
    let rewritten = rewrite(&prepared.tree, &baseline, &prepared.map, aggressive).unwrap();
    let (reference, _) = fjord_core::engine::execute(
        &prepared.tree,
        &rewritten,
        &prepared.map,
        &workload.store,
        &workload.tables,
        &ExecOptions::default(),
    )
    .unwrap();

    // Against the monolithic oracle (independent execution path).
    let oracle = monolithic_oracle(&workload, &prepared.tree);
    let report = verify(&reference, &oracle, 1e-4, &exact).unwrap();
    assert!(
        report.pass,
        "baseline diverges from the oracle: seed {} model {:?} max_rel {}",
        config.seed, config.model, report.max_rel
    );

    // Every feasible plan agrees with the baseline.
    for plan in &plans {
        let rewritten = rewrite(&prepared.tree, plan, &prepared.map, aggressive).unwrap();
        let (result, metrics) = fjord_core::engine::execute(
            &prepared.tree,
            &rewritten,
            &prepared.map,
            &workload.store,
            &workload.tables,
            &ExecOptions::default(),
        )
        .unwrap();
        let report = verify(&result, &reference, 1e-4, &exact).unwrap();
        assert!(
            report.pass,
            "plan {:?} diverges (seed {}, model {:?}, aggressive {}): max_rel {}",
            plan.bits, config.seed, config.model, aggressive, report.max_rel
        );
        // Row counts per node never depend on the plan.
        assert_eq!(
            metrics.per_node.last().unwrap().rows,
            reference.row_count
        );
    }
}

#[test]
fn ffnn_star_all_plans_match() {
    for seed in [1, 2] {
        check_workload(
            WorkloadConfig {
                tables: 3,
                model: ModelKind::Ffnn,
                shape: Shape::Star,
                seed,
                dim_rows: 40,
                fanout: 4.0,
                feature_range: (2, 8),
                ..WorkloadConfig::default()
            },
            true,
        );
    }
}

#[test]
fn forest_chain_all_plans_match() {
    check_workload(
        WorkloadConfig {
            tables: 3,
            model: ModelKind::Forest,
            shape: Shape::Chain,
            seed: 3,
            dim_rows: 30,
            fanout: 3.0,
            feature_range: (2, 6),
            ..WorkloadConfig::default()
        },
        true,
    );
}

#[test]
fn pq_star_all_plans_match() {
    check_workload(
        WorkloadConfig {
            tables: 4,
            model: ModelKind::Pq,
            shape: Shape::Star,
            seed: 4,
            dim_rows: 25,
            fanout: 3.0,
            feature_range: (2, 5),
            ..WorkloadConfig::default()
        },
        true,
    );
}

#[test]
fn prep_snowflake_all_plans_match() {
    check_workload(
        WorkloadConfig {
            tables: 4,
            model: ModelKind::Prep,
            shape: Shape::Snowflake,
            seed: 5,
            dim_rows: 30,
            fanout: 2.0,
            feature_range: (2, 5),
            ..WorkloadConfig::default()
        },
        true,
    );
}

#[test]
fn aggregation_off_still_lossless() {
    check_workload(
        WorkloadConfig {
            tables: 3,
            model: ModelKind::Ffnn,
            shape: Shape::Star,
            seed: 6,
            dim_rows: 30,
            fanout: 3.0,
            feature_range: (2, 6),
            ..WorkloadConfig::default()
        },
        false,
    );
}

#[test]
fn thread_count_does_not_change_results() {
    let config = WorkloadConfig {
        tables: 3,
        model: ModelKind::Ffnn,
        shape: Shape::Star,
        seed: 7,
        dim_rows: 60,
        fanout: 5.0,
        feature_range: (3, 8),
        ..WorkloadConfig::default()
    };
    let workload = gen_workload(&config).unwrap();
    let prepared = prepare(&workload, &CostTable::default(), true).unwrap();
    let plan = prepared.instance.root_only_plan();
    let rewritten = rewrite(&prepared.tree, &plan, &prepared.map, true).unwrap();
    let mut results = Vec::new();
    for threads in [1usize, 8] {
        let opts = ExecOptions {
            threads,
            parallel_rows: 64, // force chunking
        };
        let (result, _) = fjord_core::engine::execute(
            &prepared.tree,
            &rewritten,
            &prepared.map,
            &workload.store,
            &workload.tables,
            &opts,
        )
        .unwrap();
        results.push(result);
    }
    assert_eq!(results[0], results[1]);
}
