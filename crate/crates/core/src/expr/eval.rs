//! Batch evaluation of expression graphs.
//!
//! Values are dense float batches except for raw string columns, which
//! only ever feed one-hot encoding. Forest masks and PQ tables travel
//! through the graph bit-cast into float slots (two per 64-bit block),
//! never arithmetically touched, so factorized and monolithic paths
//! stay bit-identical.

use crate::infer::{
    matmul, min_max_scale, one_hot, pq_combine, pq_partial, qs_combine_exit_leaves,
    qs_forest_partial, qs_score, qs_tree_exit_leaf, Activation, DenseMatrix,
};
use crate::{Error, Result};

use super::graph::{ArithKind, BoolKind, CmpKind, ExprGraph, ExprNode, ExprOp, ForestOutput, ModelStore};

/// A batch value: one row per input tuple.
#[derive(Debug, Clone, PartialEq)]
pub enum Batch {
    F(DenseMatrix),
    S(Vec<String>),
}

impl Batch {
    pub fn rows(&self) -> usize {
        match self {
            Batch::F(m) => m.rows,
            Batch::S(v) => v.len(),
        }
    }

    pub fn floats(self) -> Result<DenseMatrix> {
        match self {
            Batch::F(m) => Ok(m),
            Batch::S(_) => Err(Error::Expr("expected numeric batch, found strings".into())),
        }
    }

    pub fn floats_ref(&self) -> Result<&DenseMatrix> {
        match self {
            Batch::F(m) => Ok(m),
            Batch::S(_) => Err(Error::Expr("expected numeric batch, found strings".into())),
        }
    }
}

/// Pack 64-bit mask blocks into float slots, bit for bit.
pub fn masks_to_slots(blocks: &[u64], out: &mut Vec<f32>) {
    for &b in blocks {
        out.push(f32::from_bits(b as u32));
        out.push(f32::from_bits((b >> 32) as u32));
    }
}

pub fn slots_to_masks(slots: &[f32]) -> Vec<u64> {
    slots
        .chunks_exact(2)
        .map(|c| (c[0].to_bits() as u64) | ((c[1].to_bits() as u64) << 32))
        .collect()
}

/// Named opaque functions: analyzable as black boxes only.
pub struct UdfRegistry;

impl UdfRegistry {
    pub fn builtin() -> Self {
        UdfRegistry
    }

    pub fn output_dim(&self, name: &str, input_dim: usize) -> Result<usize> {
        match name {
            "mix" => Ok(input_dim),
            "mean1" => Ok(1),
            other => Err(Error::Expr(format!("unknown udf `{other}`"))),
        }
    }

    pub fn apply(&self, name: &str, row: &[f32], out: &mut Vec<f32>) -> Result<()> {
        match name {
            "mix" => {
                let d = row.len();
                for i in 0..d {
                    out.push(row[i] + 0.5 * row[(i + 1) % d]);
                }
                Ok(())
            }
            "mean1" => {
                let mut acc = 0.0f32;
                for &v in row {
                    acc += v;
                }
                out.push(acc / row.len().max(1) as f32);
                Ok(())
            }
            other => Err(Error::Expr(format!("unknown udf `{other}`"))),
        }
    }
}

/// Evaluate the graph over `rows` tuples. `resolve` supplies source
/// values (`InputRef` and `GroupRef` nodes). Returns one batch per
/// graph output.
pub fn evaluate_graph(
    graph: &ExprGraph,
    store: &ModelStore,
    rows: usize,
    resolve: &mut dyn FnMut(&ExprNode) -> Result<Batch>,
) -> Result<Vec<Batch>> {
    let udfs = UdfRegistry::builtin();
    let mut values: Vec<Option<Batch>> = vec![None; graph.nodes.len()];
    for node in &graph.nodes {
        let value = eval_node(graph, store, &udfs, rows, node, &values, resolve)?;
        if value.rows() != rows {
            return Err(Error::Expr(format!(
                "node {} produced {} rows, expected {rows}",
                node.id,
                value.rows()
            )));
        }
        values[node.id] = Some(value);
    }
    graph
        .outputs
        .iter()
        .map(|&o| {
            values[o]
                .clone()
                .ok_or_else(|| Error::Expr(format!("output {o} unevaluated")))
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn eval_node(
    _graph: &ExprGraph,
    store: &ModelStore,
    udfs: &UdfRegistry,
    rows: usize,
    node: &ExprNode,
    values: &[Option<Batch>],
    resolve: &mut dyn FnMut(&ExprNode) -> Result<Batch>,
) -> Result<Batch> {
    let input = |i: usize| -> Result<&Batch> {
        values[node.inputs[i]]
            .as_ref()
            .ok_or_else(|| Error::Expr(format!("node {} input unevaluated", node.id)))
    };
    let fin = |i: usize| -> Result<&DenseMatrix> { input(i)?.floats_ref() };

    let out = match &node.op {
        ExprOp::InputRef { .. } | ExprOp::GroupRef { .. } => resolve(node)?,
        ExprOp::MatMul { weight } => Batch::F(matmul(fin(0)?, store.weight(weight)?)?),
        ExprOp::MatMulRows { weight, start, len } => {
            let w = store.weight(weight)?;
            let part = DenseMatrix {
                rows: *len,
                cols: w.cols,
                data: w.data[start * w.cols..(start + len) * w.cols].to_vec(),
            };
            Batch::F(matmul(fin(0)?, &part)?)
        }
        ExprOp::MatAdd => {
            let mut acc = fin(0)?.clone();
            for i in 1..node.inputs.len() {
                let other = fin(i)?;
                if other.cols != acc.cols {
                    return Err(Error::DimMismatch(format!(
                        "node {}: matadd {} vs {}",
                        node.id, acc.cols, other.cols
                    )));
                }
                for (a, b) in acc.data.iter_mut().zip(&other.data) {
                    *a += b;
                }
            }
            Batch::F(acc)
        }
        ExprOp::Bias { bias, offset } => {
            let b = store.bias(bias)?;
            let mut m = fin(0)?.clone();
            let slice = &b[*offset..offset + m.cols];
            for r in 0..m.rows {
                for (v, bv) in m.data[r * m.cols..(r + 1) * m.cols].iter_mut().zip(slice) {
                    *v += bv;
                }
            }
            Batch::F(m)
        }
        ExprOp::Relu => {
            let mut m = fin(0)?.clone();
            Activation::Relu.apply_rows(&mut m);
            Batch::F(m)
        }
        ExprOp::Softmax => {
            let mut m = fin(0)?.clone();
            Activation::Softmax.apply_rows(&mut m);
            Batch::F(m)
        }
        ExprOp::Concat => {
            let parts: Vec<&DenseMatrix> = node
                .inputs
                .iter()
                .map(|&i| values[i].as_ref().unwrap().floats_ref())
                .collect::<Result<_>>()?;
            let cols: usize = parts.iter().map(|p| p.cols).sum();
            let mut data = Vec::with_capacity(rows * cols);
            for r in 0..rows {
                for p in &parts {
                    data.extend_from_slice(p.row(r));
                }
            }
            Batch::F(DenseMatrix { rows, cols, data })
        }
        ExprOp::DecisionForest { model, output } => {
            let forest = store.forest(model)?;
            let x = fin(0)?;
            match output {
                ForestOutput::Score => {
                    let data = (0..rows).map(|r| qs_score(forest, x.row(r))).collect();
                    Batch::F(DenseMatrix {
                        rows,
                        cols: 1,
                        data,
                    })
                }
                ForestOutput::Leaves => {
                    let cols = forest.trees.len();
                    let mut data = Vec::with_capacity(rows * cols);
                    for r in 0..rows {
                        for tree in &forest.trees {
                            data.push(qs_tree_exit_leaf(tree, x.row(r)) as f32);
                        }
                    }
                    Batch::F(DenseMatrix { rows, cols, data })
                }
            }
        }
        ExprOp::ForestPartial { model, start, len } => {
            let forest = store.forest(model)?;
            let x = fin(0)?;
            if x.cols != *len {
                return Err(Error::DimMismatch(format!(
                    "node {}: partial input {} != owned range {len}",
                    node.id, x.cols
                )));
            }
            let cols = 2 * forest.mask_blocks();
            let mut data = Vec::with_capacity(rows * cols);
            for r in 0..rows {
                let blocks = qs_forest_partial(forest, x.row(r), *start)?;
                masks_to_slots(&blocks, &mut data);
            }
            Batch::F(DenseMatrix { rows, cols, data })
        }
        ExprOp::ForestFromMasks { model, output } => {
            let forest = store.forest(model)?;
            let x = fin(0)?;
            if x.cols != 2 * forest.mask_blocks() {
                return Err(Error::DimMismatch(format!(
                    "node {}: mask column {} slots, expected {}",
                    node.id,
                    x.cols,
                    2 * forest.mask_blocks()
                )));
            }
            let cols = match output {
                ForestOutput::Score => 1,
                ForestOutput::Leaves => forest.trees.len(),
            };
            let mut data = Vec::with_capacity(rows * cols);
            for r in 0..rows {
                let masks = slots_to_masks(x.row(r));
                let leaves = qs_combine_exit_leaves(forest, std::slice::from_ref(&masks));
                match output {
                    ForestOutput::Score => {
                        let mut score = 0.0f32;
                        for (tree, &leaf) in forest.trees.iter().zip(&leaves) {
                            score += tree.leaf_values[leaf];
                        }
                        data.push(score);
                    }
                    ForestOutput::Leaves => {
                        data.extend(leaves.iter().map(|&l| l as f32));
                    }
                }
            }
            Batch::F(DenseMatrix { rows, cols, data })
        }
        ExprOp::PqSearch { model } => {
            let pq = store.pq_model(model)?;
            let x = fin(0)?;
            let cols = 2 * pq.k_neighbors;
            let mut data = Vec::with_capacity(rows * cols);
            for r in 0..rows {
                let row = x.row(r);
                let tables: Vec<Vec<f32>> = pq
                    .parts
                    .iter()
                    .map(|p| pq_partial(&row[p.offset..p.offset + p.len], &p.centroids))
                    .collect::<Result<_>>()?;
                let (idx, dist) = pq_combine(pq, &tables)?;
                data.extend_from_slice(&dist);
                data.extend(idx.iter().map(|&i| i as f32));
            }
            Batch::F(DenseMatrix { rows, cols, data })
        }
        ExprOp::PqPartial { model, first, count } => {
            let pq = store.pq_model(model)?;
            let x = fin(0)?;
            let parts = &pq.parts[*first..first + count];
            let base = parts[0].offset;
            let cols: usize = parts.iter().map(|p| p.centroids.rows).sum();
            let mut data = Vec::with_capacity(rows * cols);
            for r in 0..rows {
                let row = x.row(r);
                for p in parts {
                    let local = p.offset - base;
                    let table = pq_partial(&row[local..local + p.len], &p.centroids)?;
                    data.extend_from_slice(&table);
                }
            }
            Batch::F(DenseMatrix { rows, cols, data })
        }
        ExprOp::PqFromTables { model } => {
            let pq = store.pq_model(model)?;
            let x = fin(0)?;
            let expected: usize = pq.parts.iter().map(|p| p.centroids.rows).sum();
            if x.cols != expected {
                return Err(Error::DimMismatch(format!(
                    "node {}: tables column {} slots, expected {expected}",
                    node.id, x.cols
                )));
            }
            let cols = 2 * pq.k_neighbors;
            let mut data = Vec::with_capacity(rows * cols);
            for r in 0..rows {
                let row = x.row(r);
                let mut tables = Vec::with_capacity(pq.parts.len());
                let mut off = 0;
                for p in &pq.parts {
                    tables.push(row[off..off + p.centroids.rows].to_vec());
                    off += p.centroids.rows;
                }
                let (idx, dist) = pq_combine(pq, &tables)?;
                data.extend_from_slice(&dist);
                data.extend(idx.iter().map(|&i| i as f32));
            }
            Batch::F(DenseMatrix { rows, cols, data })
        }
        ExprOp::MinMaxScale { scaler, offset } => {
            let spec = store.scaler(scaler)?;
            let x = fin(0)?;
            let sliced = crate::infer::ScalerSpec {
                mins: spec.mins[*offset..offset + x.cols].to_vec(),
                maxs: spec.maxs[*offset..offset + x.cols].to_vec(),
            };
            let mut data = Vec::with_capacity(rows * x.cols);
            for r in 0..rows {
                data.extend(min_max_scale(x.row(r), &sliced)?);
            }
            Batch::F(DenseMatrix {
                rows,
                cols: x.cols,
                data,
            })
        }
        ExprOp::OneHot { encoder } => {
            let spec = store.encoder(encoder)?;
            let strings = match input(0)? {
                Batch::S(v) => v,
                Batch::F(_) => {
                    return Err(Error::Expr(format!(
                        "node {}: one-hot expects a string column",
                        node.id
                    )))
                }
            };
            let cols = spec.dim();
            let mut data = Vec::with_capacity(rows * cols);
            for s in strings {
                let (v, _known) = one_hot(s, spec);
                data.extend(v);
            }
            Batch::F(DenseMatrix { rows, cols, data })
        }
        ExprOp::Compare { cmp, rhs } => {
            let a = fin(0)?;
            let apply = |x: f32, y: f32| -> f32 {
                let b = match cmp {
                    CmpKind::Eq => x == y,
                    CmpKind::Ne => x != y,
                    CmpKind::Lt => x < y,
                    CmpKind::Le => x <= y,
                    CmpKind::Gt => x > y,
                    CmpKind::Ge => x >= y,
                };
                if b {
                    1.0
                } else {
                    0.0
                }
            };
            let data = match rhs {
                Some(c) => a.data.iter().map(|&x| apply(x, *c)).collect(),
                None => {
                    let b = fin(1)?;
                    a.data.iter().zip(&b.data).map(|(&x, &y)| apply(x, y)).collect()
                }
            };
            Batch::F(DenseMatrix {
                rows,
                cols: a.cols,
                data,
            })
        }
        ExprOp::BoolOp { bool } => {
            let a = fin(0)?;
            let data = match bool {
                BoolKind::Not => a.data.iter().map(|&x| if x != 0.0 { 0.0 } else { 1.0 }).collect(),
                BoolKind::And => {
                    let b = fin(1)?;
                    a.data
                        .iter()
                        .zip(&b.data)
                        .map(|(&x, &y)| if x != 0.0 && y != 0.0 { 1.0 } else { 0.0 })
                        .collect()
                }
                BoolKind::Or => {
                    let b = fin(1)?;
                    a.data
                        .iter()
                        .zip(&b.data)
                        .map(|(&x, &y)| if x != 0.0 || y != 0.0 { 1.0 } else { 0.0 })
                        .collect()
                }
            };
            Batch::F(DenseMatrix {
                rows,
                cols: a.cols,
                data,
            })
        }
        ExprOp::Arith { arith, rhs } => {
            let a = fin(0)?;
            let apply = |x: f32, y: f32| match arith {
                ArithKind::Add => x + y,
                ArithKind::Sub => x - y,
                ArithKind::Mul => x * y,
            };
            let data = match rhs {
                Some(c) => a.data.iter().map(|&x| apply(x, *c)).collect(),
                None => {
                    let b = fin(1)?;
                    a.data.iter().zip(&b.data).map(|(&x, &y)| apply(x, y)).collect()
                }
            };
            Batch::F(DenseMatrix {
                rows,
                cols: a.cols,
                data,
            })
        }
        ExprOp::Cond => {
            let c = fin(0)?;
            let a = fin(1)?;
            let b = fin(2)?;
            let data = c
                .data
                .iter()
                .zip(a.data.iter().zip(&b.data))
                .map(|(&sel, (&x, &y))| if sel != 0.0 { x } else { y })
                .collect();
            Batch::F(DenseMatrix {
                rows,
                cols: a.cols,
                data,
            })
        }
        ExprOp::OpaqueUdf { name } => {
            // Multi-input UDFs see the concatenation of their inputs.
            let parts: Vec<&DenseMatrix> = (0..node.inputs.len())
                .map(fin)
                .collect::<Result<_>>()?;
            let in_dim: usize = parts.iter().map(|p| p.cols).sum();
            let out_dim = udfs.output_dim(name, in_dim)?;
            let mut data = Vec::with_capacity(rows * out_dim);
            let mut row_buf = Vec::with_capacity(in_dim);
            for r in 0..rows {
                row_buf.clear();
                for p in &parts {
                    row_buf.extend_from_slice(p.row(r));
                }
                udfs.apply(name, &row_buf, &mut data)?;
            }
            Batch::F(DenseMatrix {
                rows,
                cols: out_dim,
                data,
            })
        }
    };
    Ok(out)
}
