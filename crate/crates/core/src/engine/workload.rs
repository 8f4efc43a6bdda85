//! Synthetic workload generation: key-linked star/chain/snowflake
//! tables with controllable fan-out, a sampled model (dense network,
//! forest, quantizer, or preprocessing pipeline), and the join query.
//! Fully reproducible from the seed.

use std::collections::HashMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::expr::{parse_expr, print_expr, ExprGraph, ExprNode, ExprOp, ForestOutput, ModelStore, Schema};
use crate::infer::{
    compile_tree, random_naive_tree, random_pq_model, Activation, DenseMatrix, FfnnLayer,
    FfnnModel, OneHotSpec, QsForest, ScalerSpec,
};
use crate::plan::{build_join_tree, ColumnRef, JoinSpec, JoinTree, QuerySpec, StatsCatalog, TableMeta};
use crate::relational::{
    build_histogram, load_csv_named, write_csv, Column, ColumnData, DataType, Table,
    DEFAULT_BUCKETS,
};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Ffnn,
    Forest,
    Pq,
    /// Scaling + one-hot preprocessing in front of a small dense net.
    Prep,
}

impl std::str::FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ffnn" => Ok(ModelKind::Ffnn),
            "forest" | "qs" => Ok(ModelKind::Forest),
            "pq" => Ok(ModelKind::Pq),
            "prep" => Ok(ModelKind::Prep),
            other => Err(Error::Workload(format!("unknown model kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Star,
    Chain,
    Snowflake,
}

impl std::str::FromStr for Shape {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "star" => Ok(Shape::Star),
            "chain" => Ok(Shape::Chain),
            "snowflake" => Ok(Shape::Snowflake),
            other => Err(Error::Workload(format!("unknown shape `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorkloadConfig {
    pub tables: usize,
    pub model: ModelKind,
    pub shape: Shape,
    pub seed: u64,
    /// Rows per non-fact table.
    pub dim_rows: usize,
    /// Matched fact rows per referenced key.
    pub fanout: f64,
    /// Explicit fact row count; rows beyond the matched range carry
    /// dangling keys, shrinking the first join.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fact_rows: Option<usize>,
    /// Per-table feature dimension range (inclusive).
    pub feature_range: (usize, usize),
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order: Option<Vec<String>>,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        WorkloadConfig {
            tables: 3,
            model: ModelKind::Ffnn,
            shape: Shape::Star,
            seed: 0,
            dim_rows: 100,
            fanout: 10.0,
            fact_rows: None,
            feature_range: (2, 20),
            order: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Workload {
    pub config: WorkloadConfig,
    pub table_order: Vec<String>,
    pub tables: HashMap<String, Table>,
    pub query: QuerySpec,
    pub expr: ExprGraph,
    pub store: ModelStore,
    pub schema: Schema,
}

impl Workload {
    /// Statistics catalog for join ordering and cardinality estimation.
    pub fn stats(&self) -> Result<StatsCatalog> {
        let mut catalog = StatsCatalog::default();
        for (name, table) in &self.tables {
            let mut key_hists = HashMap::new();
            for col in &table.columns {
                let is_key = col.name == "pk" || col.name.starts_with("fk_");
                if is_key && table.row_count > 0 {
                    key_hists.insert(col.name.clone(), build_histogram(col, DEFAULT_BUCKETS)?);
                }
            }
            let slots = table.columns.iter().map(|c| c.dtype().slots()).sum();
            catalog.tables.insert(
                name.clone(),
                TableMeta {
                    rows: table.row_count as u64,
                    key_hists,
                    slots,
                },
            );
        }
        Ok(catalog)
    }

    pub fn join_tree(&self) -> Result<JoinTree> {
        build_join_tree(&self.query, &self.stats()?)
    }
}

/// Zipf(s)-distributed keys over `1..=domain`, via inverse transform.
pub fn zipf_keys<R: Rng>(rng: &mut R, n: usize, domain: usize, s: f64) -> Vec<i64> {
    let mut cum = Vec::with_capacity(domain);
    let mut total = 0.0f64;
    for k in 1..=domain {
        total += 1.0 / (k as f64).powf(s);
        cum.push(total);
    }
    (0..n)
        .map(|_| {
            let u: f64 = rng.random_range(0.0..total);
            let idx = cum.partition_point(|&c| c < u);
            (idx + 1).min(domain) as i64
        })
        .collect()
}

/// Edges of the requested shape: (child, parent) meaning child carries
/// `fk_<parent>` referencing parent's `pk`.
fn shape_edges(shape: Shape, m: usize) -> Vec<(usize, usize)> {
    match shape {
        Shape::Star => (1..m).map(|d| (0, d)).collect(),
        Shape::Chain => (0..m - 1).map(|i| (i, i + 1)).collect(),
        Shape::Snowflake => (1..m)
            .map(|d| {
                // Every third dimension hangs off the previous one.
                if d >= 2 && d % 3 == 2 {
                    (d - 1, d)
                } else {
                    (0, d)
                }
            })
            .collect(),
    }
}

pub fn gen_workload(config: &WorkloadConfig) -> Result<Workload> {
    let m = config.tables;
    if !(2..=20).contains(&m) {
        return Err(Error::Workload(format!(
            "table count {m} outside supported range 2..=20"
        )));
    }
    let (flo, fhi) = config.feature_range;
    if flo == 0 || fhi < flo {
        return Err(Error::Workload("bad feature range".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let names: Vec<String> = (0..m).map(|i| format!("t{i}")).collect();
    let edges = shape_edges(config.shape, m);

    // Feature dims per table; t0's follow the same range.
    let feature_dims: Vec<usize> = (0..m).map(|_| rng.random_range(flo..=fhi)).collect();

    // Row counts: non-fact tables use dim_rows; children of an edge get
    // parent_rows * fanout (the fact in a star, the whole spine in a
    // chain is dominated by its last edge).
    let mut rows = vec![config.dim_rows; m];
    let is_child: Vec<bool> = (0..m).map(|i| edges.iter().any(|&(c, _)| c == i)).collect();
    // Only the fact table (t0) fans out; dim-dim edges stay one-to-one.
    if is_child[0] {
        let matched = (config.dim_rows as f64 * config.fanout).round() as usize;
        rows[0] = config.fact_rows.unwrap_or(matched).max(1);
    }

    let mut tables = HashMap::new();
    let mut schema = Schema::default();
    for i in 0..m {
        let name = &names[i];
        let n_rows = rows[i];
        let mut columns = vec![Column::new(
            "pk",
            name.clone(),
            ColumnData::Int64((0..n_rows as i64).collect()),
        )];
        // FK columns for edges where this table is the child.
        for &(child, parent) in &edges {
            if child != i {
                continue;
            }
            let parent_rows = rows[parent];
            let fan = if child == 0 { config.fanout } else { 1.0 };
            let matched = ((parent_rows as f64 * fan).round() as usize).min(n_rows);
            let mut keys: Vec<i64> = (0..matched)
                .map(|k| (k % parent_rows) as i64)
                .collect();
            // Dangling keys beyond the matched range never join.
            keys.extend((matched..n_rows).map(|k| (parent_rows + k) as i64));
            // Deterministic shuffle.
            for k in (1..keys.len()).rev() {
                let j = rng.random_range(0..=k);
                keys.swap(k, j);
            }
            columns.push(Column::new(
                format!("fk_{}", names[parent]),
                name.clone(),
                ColumnData::Int64(keys),
            ));
        }
        // Feature array column.
        let dim = feature_dims[i];
        let data: Vec<f32> = (0..n_rows * dim)
            .map(|_| rng.random_range(-1.0f32..1.0))
            .collect();
        columns.push(Column::new(
            "f",
            name.clone(),
            ColumnData::FloatArray { dim, data },
        ));
        // Categorical column for preprocessing workloads.
        if config.model == ModelKind::Prep {
            let cats = rng.random_range(3..=6usize);
            let values: Vec<String> = (0..n_rows)
                .map(|_| format!("c{}", rng.random_range(0..cats)))
                .collect();
            columns.push(Column::new("cat", name.clone(), ColumnData::Str(values)));
        }
        let table = Table::new(name.clone(), columns)?;
        for col in &table.columns {
            schema
                .columns
                .insert(format!("{name}.{}", col.name), col.dtype());
        }
        tables.insert(name.clone(), table);
    }

    let joins: Vec<JoinSpec> = edges
        .iter()
        .map(|&(child, parent)| JoinSpec {
            left: ColumnRef {
                table: names[child].clone(),
                column: format!("fk_{}", names[parent]),
            },
            right: ColumnRef {
                table: names[parent].clone(),
                column: "pk".into(),
            },
        })
        .collect();
    let order = config.order.clone().unwrap_or_else(|| match config.shape {
        // Chain order starts at the far end so the fan-out join comes
        // last; star and snowflake start from the fact.
        Shape::Chain => names.iter().rev().cloned().collect(),
        _ => names.clone(),
    });
    let query = QuerySpec {
        tables: names.clone(),
        joins,
        order: Some(order),
    };

    let (expr, store) = build_model(config, &mut rng, &names, &feature_dims, &tables)?;
    expr.validate()?;
    store.validate()?;

    Ok(Workload {
        config: config.clone(),
        table_order: names,
        tables,
        query,
        expr,
        store,
        schema,
    })
}

/// Sample the inference expression and its parameters.
fn build_model(
    config: &WorkloadConfig,
    rng: &mut ChaCha8Rng,
    names: &[String],
    feature_dims: &[usize],
    tables: &HashMap<String, Table>,
) -> Result<(ExprGraph, ModelStore)> {
    let m = names.len();
    let mut store = ModelStore::default();
    let mut nodes: Vec<ExprNode> = Vec::new();

    // Input references in table order, then the concatenation.
    for name in names {
        nodes.push(ExprNode {
            id: nodes.len(),
            op: ExprOp::InputRef {
                columns: vec![format!("{name}.f")],
            },
            inputs: vec![],
        });
    }
    let total_dim: usize = feature_dims.iter().sum();

    match config.model {
        ModelKind::Ffnn => {
            let concat = nodes.len();
            nodes.push(ExprNode {
                id: concat,
                op: ExprOp::Concat,
                inputs: (0..m).collect(),
            });
            let model = sample_ffnn(rng, total_dim);
            store.add_ffnn("net", &model);
            let mut cur = concat;
            for (i, layer) in model.layers.iter().enumerate() {
                nodes.push(ExprNode {
                    id: nodes.len(),
                    op: ExprOp::MatMul {
                        weight: format!("w{i}_net"),
                    },
                    inputs: vec![cur],
                });
                cur = nodes.len() - 1;
                nodes.push(ExprNode {
                    id: nodes.len(),
                    op: ExprOp::Bias {
                        bias: format!("b{i}_net"),
                        offset: 0,
                    },
                    inputs: vec![cur],
                });
                cur = nodes.len() - 1;
                if layer.activation != Activation::None {
                    nodes.push(ExprNode {
                        id: nodes.len(),
                        op: if layer.activation == Activation::Relu {
                            ExprOp::Relu
                        } else {
                            ExprOp::Softmax
                        },
                        inputs: vec![cur],
                    });
                    cur = nodes.len() - 1;
                }
            }
            Ok((
                ExprGraph {
                    nodes,
                    outputs: vec![cur],
                },
                store,
            ))
        }
        ModelKind::Forest => {
            let concat = nodes.len();
            nodes.push(ExprNode {
                id: concat,
                op: ExprOp::Concat,
                inputs: (0..m).collect(),
            });
            let tree_count = *[16usize, 48, 64, 128]
                .get(rng.random_range(0..4usize))
                .unwrap();
            let forest = QsForest {
                trees: (0..tree_count)
                    .map(|_| compile_tree(&random_naive_tree(rng, total_dim, 6)))
                    .collect(),
                input_dim: total_dim,
            };
            store.forests.insert("rf".into(), forest);
            let output = if rng.random_bool(0.5) {
                ForestOutput::Score
            } else {
                ForestOutput::Leaves
            };
            nodes.push(ExprNode {
                id: nodes.len(),
                op: ExprOp::DecisionForest {
                    model: "rf".into(),
                    output,
                },
                inputs: vec![concat],
            });
            let out = nodes.len() - 1;
            Ok((
                ExprGraph {
                    nodes,
                    outputs: vec![out],
                },
                store,
            ))
        }
        ModelKind::Pq => {
            let concat = nodes.len();
            nodes.push(ExprNode {
                id: concat,
                op: ExprOp::Concat,
                inputs: (0..m).collect(),
            });
            // One part per table, aligned with the concatenation.
            let clusters = rng.random_range(16..=64usize);
            let db = 200;
            let mut model = random_pq_model(rng, m, 1, clusters, db, 3);
            let mut offset = 0;
            for (part, &dim) in model.parts.iter_mut().zip(feature_dims) {
                part.offset = offset;
                part.len = dim;
                part.centroids = DenseMatrix {
                    rows: clusters,
                    cols: dim,
                    data: (0..clusters * dim)
                        .map(|_| rng.random_range(-1.0f32..1.0))
                        .collect(),
                };
                offset += dim;
            }
            store.pq.insert("ann".into(), model);
            nodes.push(ExprNode {
                id: nodes.len(),
                op: ExprOp::PqSearch {
                    model: "ann".into(),
                },
                inputs: vec![concat],
            });
            let out = nodes.len() - 1;
            Ok((
                ExprGraph {
                    nodes,
                    outputs: vec![out],
                },
                store,
            ))
        }
        ModelKind::Prep => {
            // Per table: scaled numerics and a one-hot category.
            let mut concat_inputs = Vec::new();
            let mut prep_dim = 0usize;
            for (i, name) in names.iter().enumerate() {
                let scaler_name = format!("sc_{name}");
                let table = &tables[name];
                let rows: Vec<Vec<f32>> = match &table.column("f")?.data {
                    ColumnData::FloatArray { dim, data } => (0..table.row_count)
                        .map(|r| data[r * dim..(r + 1) * dim].to_vec())
                        .collect(),
                    _ => unreachable!(),
                };
                store
                    .scalers
                    .insert(scaler_name.clone(), ScalerSpec::fit(&rows, feature_dims[i]));
                nodes.push(ExprNode {
                    id: nodes.len(),
                    op: ExprOp::MinMaxScale {
                        scaler: scaler_name,
                        offset: 0,
                    },
                    inputs: vec![i],
                });
                concat_inputs.push(nodes.len() - 1);
                prep_dim += feature_dims[i];

                let mut cats: Vec<String> = match &table.column("cat")?.data {
                    ColumnData::Str(v) => v.clone(),
                    _ => unreachable!(),
                };
                cats.sort();
                cats.dedup();
                let enc_name = format!("oh_{name}");
                prep_dim += cats.len();
                store
                    .encoders
                    .insert(enc_name.clone(), OneHotSpec { categories: cats });
                nodes.push(ExprNode {
                    id: nodes.len(),
                    op: ExprOp::InputRef {
                        columns: vec![format!("{name}.cat")],
                    },
                    inputs: vec![],
                });
                let cat_ref = nodes.len() - 1;
                nodes.push(ExprNode {
                    id: nodes.len(),
                    op: ExprOp::OneHot {
                        encoder: enc_name,
                    },
                    inputs: vec![cat_ref],
                });
                concat_inputs.push(nodes.len() - 1);
            }
            nodes.push(ExprNode {
                id: nodes.len(),
                op: ExprOp::Concat,
                inputs: concat_inputs,
            });
            let concat = nodes.len() - 1;
            let hidden = rng.random_range(8..=32usize);
            let out_dim = rng.random_range(2..=6usize);
            let model = FfnnModel {
                layers: vec![
                    dense_layer(rng, prep_dim, hidden, Activation::Relu),
                    dense_layer(rng, hidden, out_dim, Activation::Softmax),
                ],
            };
            store.add_ffnn("net", &model);
            let mut cur = concat;
            for i in 0..model.layers.len() {
                nodes.push(ExprNode {
                    id: nodes.len(),
                    op: ExprOp::MatMul {
                        weight: format!("w{i}_net"),
                    },
                    inputs: vec![cur],
                });
                cur = nodes.len() - 1;
                nodes.push(ExprNode {
                    id: nodes.len(),
                    op: ExprOp::Bias {
                        bias: format!("b{i}_net"),
                        offset: 0,
                    },
                    inputs: vec![cur],
                });
                cur = nodes.len() - 1;
                let act = model.layers[i].activation;
                if act != Activation::None {
                    nodes.push(ExprNode {
                        id: nodes.len(),
                        op: if act == Activation::Relu {
                            ExprOp::Relu
                        } else {
                            ExprOp::Softmax
                        },
                        inputs: vec![cur],
                    });
                    cur = nodes.len() - 1;
                }
            }
            Ok((
                ExprGraph {
                    nodes,
                    outputs: vec![cur],
                },
                store,
            ))
        }
    }
}

fn dense_layer(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize, act: Activation) -> FfnnLayer {
    let scale = 1.0 / (fan_in as f32).sqrt();
    FfnnLayer {
        weight: DenseMatrix {
            rows: fan_in,
            cols: fan_out,
            data: (0..fan_in * fan_out)
                .map(|_| rng.random_range(-scale..scale))
                .collect(),
        },
        bias: (0..fan_out).map(|_| rng.random_range(-0.1..0.1)).collect(),
        activation: act,
    }
}

fn sample_ffnn(rng: &mut ChaCha8Rng, input_dim: usize) -> FfnnModel {
    let layer_count = rng.random_range(1..=5usize);
    let mut layers = Vec::new();
    let mut cur = input_dim;
    for _ in 0..layer_count.saturating_sub(1) {
        let next = rng.random_range(16..=256usize);
        layers.push(dense_layer(rng, cur, next, Activation::Relu));
        cur = next;
    }
    let classification = rng.random_bool(0.7);
    if classification {
        let classes = rng.random_range(2..=10usize);
        layers.push(dense_layer(rng, cur, classes, Activation::Softmax));
    } else {
        layers.push(dense_layer(rng, cur, 1, Activation::None));
    }
    FfnnModel { layers }
}

#[derive(Debug, Serialize, Deserialize)]
struct WorkloadManifest {
    config: WorkloadConfig,
    table_order: Vec<String>,
    schemas: Vec<(String, Vec<(String, DataType)>)>,
}

pub fn save_workload(workload: &Workload, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir.join("tables"))?;
    let mut schemas = Vec::new();
    for name in &workload.table_order {
        let table = &workload.tables[name];
        write_csv(table, &dir.join("tables").join(format!("{name}.csv")))?;
        schemas.push((
            name.clone(),
            table
                .columns
                .iter()
                .map(|c| (c.name.clone(), c.dtype()))
                .collect(),
        ));
    }
    let manifest = WorkloadManifest {
        config: workload.config.clone(),
        table_order: workload.table_order.clone(),
        schemas,
    };
    std::fs::write(
        dir.join("workload.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    std::fs::write(
        dir.join("query.json"),
        serde_json::to_string_pretty(&workload.query)?,
    )?;
    std::fs::write(dir.join("expr.json"), print_expr(&workload.expr))?;
    std::fs::write(
        dir.join("model.json"),
        serde_json::to_string_pretty(&workload.store)?,
    )?;
    Ok(())
}

pub fn load_workload(dir: &Path) -> Result<Workload> {
    let manifest: WorkloadManifest =
        serde_json::from_str(&std::fs::read_to_string(dir.join("workload.json"))?)?;
    let query: QuerySpec = serde_json::from_str(&std::fs::read_to_string(dir.join("query.json"))?)?;
    let expr = parse_expr(&std::fs::read_to_string(dir.join("expr.json"))?)?;
    let store: ModelStore =
        serde_json::from_str(&std::fs::read_to_string(dir.join("model.json"))?)?;
    let mut tables = HashMap::new();
    let mut schema = Schema::default();
    for (name, cols) in &manifest.schemas {
        let table = load_csv_named(
            &dir.join("tables").join(format!("{name}.csv")),
            cols,
            name,
        )?;
        for col in &table.columns {
            schema
                .columns
                .insert(format!("{name}.{}", col.name), col.dtype());
        }
        tables.insert(name.clone(), table);
    }
    Ok(Workload {
        config: manifest.config,
        table_order: manifest.table_order,
        tables,
        query,
        expr,
        store,
        schema,
    })
}
