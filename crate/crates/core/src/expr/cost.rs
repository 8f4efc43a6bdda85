//! Analytic per-operator cost in abstract flop units, scaled by
//! calibrated multipliers.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

use super::graph::{infer_dims, ExprGraph, ExprNode, ExprOp, ModelStore, Schema};

/// Per-operator-kind multipliers mapping analytic flop counts to cost
/// units (nanoseconds after calibration).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CostTable {
    pub multipliers: HashMap<String, f64>,
}

pub const OP_KEYS: &[&str] = &[
    "ref", "matmul", "matadd", "bias", "relu", "softmax", "concat", "forest", "pq", "scale",
    "onehot", "compare", "bool", "arith", "cond", "udf",
];

impl Default for CostTable {
    fn default() -> Self {
        CostTable {
            multipliers: OP_KEYS.iter().map(|k| (k.to_string(), 1.0)).collect(),
        }
    }
}

impl CostTable {
    pub fn multiplier(&self, key: &str) -> Result<f64> {
        self.multipliers
            .get(key)
            .copied()
            .ok_or_else(|| Error::Cost(format!("op `{key}` missing from cost table")))
    }
}

/// Analytic flops of one node given its input/output dims.
pub fn op_cost(
    node: &ExprNode,
    in_dims: &[usize],
    out_dim: usize,
    store: &ModelStore,
) -> Result<f64> {
    let d_in = in_dims.first().copied().unwrap_or(0) as f64;
    let d_out = out_dim as f64;
    Ok(match &node.op {
        ExprOp::InputRef { .. } | ExprOp::GroupRef { .. } => 0.0,
        ExprOp::MatMul { .. } | ExprOp::MatMulRows { .. } => d_in * d_out * 2.0,
        ExprOp::MatAdd => d_out * (in_dims.len().saturating_sub(1)) as f64,
        ExprOp::Bias { .. } | ExprOp::Relu => d_out,
        ExprOp::Softmax => d_out,
        ExprOp::Concat => d_out,
        ExprOp::DecisionForest { model, .. } => {
            let forest = store.forest(model)?;
            let depth_sum: usize = forest
                .trees
                .iter()
                .map(|t| (t.leaf_values.len().max(2) as f64).log2().ceil() as usize)
                .sum();
            depth_sum as f64
        }
        ExprOp::ForestPartial { model, start, len } => {
            let forest = store.forest(model)?;
            let owned: usize = forest
                .trees
                .iter()
                .map(|t| {
                    t.nodes
                        .iter()
                        .filter(|n| n.fid >= *start && n.fid < start + len)
                        .count()
                })
                .sum();
            (owned * 2 + forest.mask_blocks()) as f64
        }
        ExprOp::ForestFromMasks { model, .. } => {
            let forest = store.forest(model)?;
            (forest.trees.len() + forest.mask_blocks()) as f64
        }
        ExprOp::PqSearch { model } => {
            let pq = store.pq_model(model)?;
            let tables: f64 = pq
                .parts
                .iter()
                .map(|p| (p.centroids.rows * p.centroids.cols * 3) as f64)
                .sum();
            tables + (pq.database_size() * pq.parts.len()) as f64
        }
        ExprOp::PqPartial { model, first, count } => {
            let pq = store.pq_model(model)?;
            pq.parts[*first..first + count]
                .iter()
                .map(|p| (p.centroids.rows * p.centroids.cols * 3) as f64)
                .sum()
        }
        ExprOp::PqFromTables { model } => {
            let pq = store.pq_model(model)?;
            (pq.database_size() * pq.parts.len()) as f64
        }
        ExprOp::MinMaxScale { .. }
        | ExprOp::OneHot { .. }
        | ExprOp::Compare { .. }
        | ExprOp::BoolOp { .. }
        | ExprOp::Arith { .. }
        | ExprOp::Cond
        | ExprOp::OpaqueUdf { .. } => d_out.max(d_in),
    })
}

/// Per-tuple cost of a whole graph: the sum over nodes of analytic
/// flops scaled by the operator's calibrated multiplier.
pub fn expr_cost(
    graph: &ExprGraph,
    schema: &Schema,
    store: &ModelStore,
    group_dims: &HashMap<usize, usize>,
    table: &CostTable,
) -> Result<f64> {
    let dims = infer_dims(graph, schema, store, group_dims)?;
    let mut total = 0.0;
    for node in &graph.nodes {
        let in_dims: Vec<usize> = node.inputs.iter().map(|&i| dims[i]).collect();
        let flops = op_cost(node, &in_dims, dims[node.id], store)?;
        total += flops * table.multiplier(node.op.cost_key())?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::infer::DenseMatrix;
    use crate::relational::DataType;

    #[test]
    fn empty_cost_for_pure_references() {
        let graph = ExprGraph {
            nodes: vec![ExprNode {
                id: 0,
                op: ExprOp::InputRef {
                    columns: vec!["t.a".into()],
                },
                inputs: vec![],
            }],
            outputs: vec![0],
        };
        let mut schema = Schema::default();
        schema.columns.insert("t.a".into(), DataType::Float32);
        let cost = expr_cost(
            &graph,
            &schema,
            &ModelStore::default(),
            &HashMap::new(),
            &CostTable::default(),
        )
        .unwrap();
        assert_eq!(cost, 0.0);
    }

    #[test]
    fn lone_matmul_is_two_nk() {
        let mut store = ModelStore::default();
        store.weights.insert("w".into(), DenseMatrix::zeros(7, 5));
        let mut schema = Schema::default();
        schema
            .columns
            .insert("t.a".into(), DataType::FloatArray(7));
        let graph = ExprGraph {
            nodes: vec![
                ExprNode {
                    id: 0,
                    op: ExprOp::InputRef {
                        columns: vec!["t.a".into()],
                    },
                    inputs: vec![],
                },
                ExprNode {
                    id: 1,
                    op: ExprOp::MatMul { weight: "w".into() },
                    inputs: vec![0],
                },
            ],
            outputs: vec![1],
        };
        let cost = expr_cost(
            &graph,
            &schema,
            &store,
            &HashMap::new(),
            &CostTable::default(),
        )
        .unwrap();
        assert_eq!(cost, 2.0 * 7.0 * 5.0);
    }

    #[test]
    fn missing_multiplier_is_an_error() {
        let table = CostTable {
            multipliers: HashMap::new(),
        };
        assert!(table.multiplier("matmul").is_err());
    }
}
