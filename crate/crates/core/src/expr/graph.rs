//! Expression graph types, the JSON text form, and dimension inference.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::infer::{DenseMatrix, FfnnModel, OneHotSpec, PqModel, QsForest, ScalerSpec};
use crate::relational::DataType;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CmpKind {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoolKind {
    And,
    Or,
    Not,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArithKind {
    Add,
    Sub,
    Mul,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ForestOutput {
    Score,
    Leaves,
}

/// Expression operators. The first block is what queries are written
/// in; the `*Partial`/`*FromMasks`/`*FromTables`/`GroupRef` forms are
/// produced by factorization analysis and appear in rewritten plans.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum ExprOp {
    /// Qualified `table.column` references concatenated into a vector.
    InputRef { columns: Vec<String> },
    #[serde(rename = "matmul")]
    MatMul { weight: String },
    #[serde(rename = "matadd")]
    MatAdd,
    Bias {
        bias: String,
        #[serde(default, skip_serializing_if = "is_zero")]
        offset: usize,
    },
    Relu,
    Softmax,
    Concat,
    DecisionForest { model: String, output: ForestOutput },
    PqSearch { model: String },
    MinMaxScale {
        scaler: String,
        #[serde(default, skip_serializing_if = "is_zero")]
        offset: usize,
    },
    OneHot { encoder: String },
    Compare {
        cmp: CmpKind,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rhs: Option<f32>,
    },
    BoolOp { bool: BoolKind },
    Arith {
        arith: ArithKind,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rhs: Option<f32>,
    },
    Cond,
    OpaqueUdf { name: String },

    // Factorized forms.
    /// Partial product against weight rows [start, start+len).
    #[serde(rename = "matmul_rows")]
    MatMulRows { weight: String, start: usize, len: usize },
    /// Per-source forest masks over the owned feature range.
    ForestPartial { model: String, start: usize, len: usize },
    /// Exit leaves / score from a combined mask column.
    ForestFromMasks { model: String, output: ForestOutput },
    /// Distance tables for parts [first, first+count).
    PqPartial { model: String, first: usize, count: usize },
    /// Nearest neighbors from the fully concatenated tables.
    PqFromTables { model: String },
    /// Combined output of a factorized-unit group.
    GroupRef { group: usize },
}

fn is_zero(v: &usize) -> bool {
    *v == 0
}

impl ExprOp {
    /// Cost-table key for this operator kind.
    pub fn cost_key(&self) -> &'static str {
        match self {
            ExprOp::InputRef { .. } | ExprOp::GroupRef { .. } => "ref",
            ExprOp::MatMul { .. } | ExprOp::MatMulRows { .. } => "matmul",
            ExprOp::MatAdd => "matadd",
            ExprOp::Bias { .. } => "bias",
            ExprOp::Relu => "relu",
            ExprOp::Softmax => "softmax",
            ExprOp::Concat => "concat",
            ExprOp::DecisionForest { .. }
            | ExprOp::ForestPartial { .. }
            | ExprOp::ForestFromMasks { .. } => "forest",
            ExprOp::PqSearch { .. } | ExprOp::PqPartial { .. } | ExprOp::PqFromTables { .. } => {
                "pq"
            }
            ExprOp::MinMaxScale { .. } => "scale",
            ExprOp::OneHot { .. } => "onehot",
            ExprOp::Compare { .. } => "compare",
            ExprOp::BoolOp { .. } => "bool",
            ExprOp::Arith { .. } => "arith",
            ExprOp::Cond => "cond",
            ExprOp::OpaqueUdf { .. } => "udf",
        }
    }

    fn arity_ok(&self, n: usize) -> bool {
        match self {
            ExprOp::InputRef { .. } => n == 0,
            ExprOp::GroupRef { .. } => n == 0,
            ExprOp::MatAdd => n >= 2,
            ExprOp::Concat => n >= 1,
            ExprOp::Compare { rhs, .. } => (rhs.is_some() && n == 1) || (rhs.is_none() && n == 2),
            ExprOp::Arith { rhs, .. } => (rhs.is_some() && n == 1) || (rhs.is_none() && n == 2),
            ExprOp::BoolOp { bool: BoolKind::Not } => n == 1,
            ExprOp::BoolOp { .. } => n == 2,
            ExprOp::Cond => n == 3,
            ExprOp::OpaqueUdf { .. } => n >= 1,
            _ => n == 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExprNode {
    pub id: usize,
    #[serde(flatten)]
    pub op: ExprOp,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub inputs: Vec<usize>,
}

/// DAG of expression nodes. Node ids are dense 0..n and every input
/// refers to a smaller id, which rules out cycles by construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExprGraph {
    pub nodes: Vec<ExprNode>,
    pub outputs: Vec<usize>,
}

impl ExprGraph {
    pub fn validate(&self) -> Result<()> {
        for (i, node) in self.nodes.iter().enumerate() {
            if node.id != i {
                return Err(Error::Parse {
                    location: format!("node {}", node.id),
                    msg: format!("ids must be dense 0..{}, found {} at position {i}", self.nodes.len(), node.id),
                });
            }
            for &input in &node.inputs {
                if input >= node.id {
                    return Err(Error::Parse {
                        location: format!("node {}", node.id),
                        msg: format!("input {input} is not an earlier node (cycle or forward reference)"),
                    });
                }
            }
            if !node.op.arity_ok(node.inputs.len()) {
                return Err(Error::Parse {
                    location: format!("node {}", node.id),
                    msg: format!("{} inputs invalid for {:?}", node.inputs.len(), node.op.cost_key()),
                });
            }
        }
        if self.outputs.is_empty() {
            return Err(Error::Parse {
                location: "outputs".into(),
                msg: "graph has no outputs".into(),
            });
        }
        for &o in &self.outputs {
            if o >= self.nodes.len() {
                return Err(Error::Parse {
                    location: "outputs".into(),
                    msg: format!("output {o} is not a node"),
                });
            }
        }
        Ok(())
    }

    pub fn node(&self, id: usize) -> &ExprNode {
        &self.nodes[id]
    }

    /// Consumers of each node, ascending.
    pub fn consumers(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.nodes.len()];
        for node in &self.nodes {
            for &i in &node.inputs {
                out[i].push(node.id);
            }
        }
        out
    }
}

/// Parse the JSON text form, validating structure and arities.
pub fn parse_expr(text: &str) -> Result<ExprGraph> {
    let graph: ExprGraph = serde_json::from_str(text).map_err(|e| Error::Parse {
        location: format!("line {}, column {}", e.line(), e.column()),
        msg: e.to_string(),
    })?;
    graph.validate()?;
    Ok(graph)
}

/// Canonical pretty-printed form; `parse_expr(print_expr(g)) == g`.
pub fn print_expr(graph: &ExprGraph) -> String {
    serde_json::to_string_pretty(graph).expect("graph serialization cannot fail")
}

/// Named model parameters an expression refers to.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ModelStore {
    #[serde(default, skip_serializing_if = "HashMap::is_empty")]
    pub weights: HashMap<String, DenseMatrix>,
    #[serde(default, skip_serializing_if = "HashMap::is_empty")]
    pub biases: HashMap<String, Vec<f32>>,
    #[serde(default, skip_serializing_if = "HashMap::is_empty")]
    pub forests: HashMap<String, QsForest>,
    #[serde(default, skip_serializing_if = "HashMap::is_empty")]
    pub pq: HashMap<String, PqModel>,
    #[serde(default, skip_serializing_if = "HashMap::is_empty")]
    pub scalers: HashMap<String, ScalerSpec>,
    #[serde(default, skip_serializing_if = "HashMap::is_empty")]
    pub encoders: HashMap<String, OneHotSpec>,
}

impl ModelStore {
    pub fn weight(&self, name: &str) -> Result<&DenseMatrix> {
        self.weights
            .get(name)
            .ok_or_else(|| Error::Model(format!("unknown weight `{name}`")))
    }

    pub fn bias(&self, name: &str) -> Result<&Vec<f32>> {
        self.biases
            .get(name)
            .ok_or_else(|| Error::Model(format!("unknown bias `{name}`")))
    }

    pub fn forest(&self, name: &str) -> Result<&QsForest> {
        self.forests
            .get(name)
            .ok_or_else(|| Error::Model(format!("unknown forest `{name}`")))
    }

    pub fn pq_model(&self, name: &str) -> Result<&PqModel> {
        self.pq
            .get(name)
            .ok_or_else(|| Error::Model(format!("unknown pq model `{name}`")))
    }

    pub fn scaler(&self, name: &str) -> Result<&ScalerSpec> {
        self.scalers
            .get(name)
            .ok_or_else(|| Error::Model(format!("unknown scaler `{name}`")))
    }

    pub fn encoder(&self, name: &str) -> Result<&OneHotSpec> {
        self.encoders
            .get(name)
            .ok_or_else(|| Error::Model(format!("unknown encoder `{name}`")))
    }

    /// Check every stored model's structural invariants.
    pub fn validate(&self) -> Result<()> {
        for forest in self.forests.values() {
            forest.validate()?;
        }
        for pq in self.pq.values() {
            pq.validate()?;
        }
        for scaler in self.scalers.values() {
            scaler.validate()?;
        }
        for enc in self.encoders.values() {
            enc.validate()?;
        }
        // Weight/bias pairs are checked where an FFNN references them.
        Ok(())
    }

    /// Register an FFNN's parameters under `w{i}_{name}` / `b{i}_{name}`.
    pub fn add_ffnn(&mut self, name: &str, model: &FfnnModel) {
        for (i, layer) in model.layers.iter().enumerate() {
            self.weights
                .insert(format!("w{i}_{name}"), layer.weight.clone());
            self.biases.insert(format!("b{i}_{name}"), layer.bias.clone());
        }
    }
}

/// Column types of the joined schema, keyed by `table.column`.
#[derive(Debug, Clone, Default)]
pub struct Schema {
    pub columns: HashMap<String, DataType>,
}

impl Schema {
    pub fn slots(&self, qualified: &str) -> Result<usize> {
        self.columns
            .get(qualified)
            .map(|t| t.slots())
            .ok_or_else(|| Error::UnknownColumn(qualified.to_string()))
    }

    pub fn dtype(&self, qualified: &str) -> Result<DataType> {
        self.columns
            .get(qualified)
            .copied()
            .ok_or_else(|| Error::UnknownColumn(qualified.to_string()))
    }
}

/// Output dimension (in value slots) of every node. `group_dims` feeds
/// `GroupRef` nodes when the graph is a factorized fragment.
pub fn infer_dims(
    graph: &ExprGraph,
    schema: &Schema,
    store: &ModelStore,
    group_dims: &HashMap<usize, usize>,
) -> Result<Vec<usize>> {
    let mut dims = vec![0usize; graph.nodes.len()];
    for node in &graph.nodes {
        let d_in = |i: usize| dims[node.inputs[i]];
        dims[node.id] = match &node.op {
            ExprOp::InputRef { columns } => {
                let mut total = 0;
                for c in columns {
                    total += schema.slots(c)?;
                }
                total
            }
            ExprOp::GroupRef { group } => *group_dims.get(group).ok_or_else(|| {
                Error::Expr(format!("group {group} dimension unknown"))
            })?,
            ExprOp::MatMul { weight } => {
                let w = store.weight(weight)?;
                if d_in(0) != w.rows {
                    return Err(Error::DimMismatch(format!(
                        "node {}: input dim {} != weight rows {}",
                        node.id,
                        d_in(0),
                        w.rows
                    )));
                }
                w.cols
            }
            ExprOp::MatMulRows { weight, start, len } => {
                let w = store.weight(weight)?;
                if start + len > w.rows {
                    return Err(Error::DimMismatch(format!(
                        "node {}: rows {}..{} outside weight with {} rows",
                        node.id,
                        start,
                        start + len,
                        w.rows
                    )));
                }
                if d_in(0) != *len {
                    return Err(Error::DimMismatch(format!(
                        "node {}: input dim {} != partial rows {len}",
                        node.id,
                        d_in(0)
                    )));
                }
                w.cols
            }
            ExprOp::MatAdd => {
                let d = d_in(0);
                for i in 1..node.inputs.len() {
                    if d_in(i) != d {
                        return Err(Error::DimMismatch(format!(
                            "node {}: matadd dims {} vs {}",
                            node.id,
                            d,
                            d_in(i)
                        )));
                    }
                }
                d
            }
            ExprOp::Bias { bias, offset } => {
                let b = store.bias(bias)?;
                if offset + d_in(0) > b.len() {
                    return Err(Error::DimMismatch(format!(
                        "node {}: bias slice {}..{} outside length {}",
                        node.id,
                        offset,
                        offset + d_in(0),
                        b.len()
                    )));
                }
                d_in(0)
            }
            ExprOp::Relu | ExprOp::Softmax => d_in(0),
            ExprOp::Concat => node.inputs.iter().map(|&i| dims[i]).sum(),
            ExprOp::DecisionForest { model, output } => match output {
                ForestOutput::Score => 1,
                ForestOutput::Leaves => store.forest(model)?.trees.len(),
            },
            ExprOp::ForestPartial { model, .. } => 2 * store.forest(model)?.mask_blocks(),
            ExprOp::ForestFromMasks { model, output } => match output {
                ForestOutput::Score => 1,
                ForestOutput::Leaves => store.forest(model)?.trees.len(),
            },
            ExprOp::PqSearch { model } => {
                let pq = store.pq_model(model)?;
                if d_in(0) != pq.query_dim() {
                    return Err(Error::DimMismatch(format!(
                        "node {}: query dim {} != pq dim {}",
                        node.id,
                        d_in(0),
                        pq.query_dim()
                    )));
                }
                2 * pq.k_neighbors
            }
            ExprOp::PqPartial { model, first, count } => {
                let pq = store.pq_model(model)?;
                pq.parts[*first..first + count]
                    .iter()
                    .map(|p| p.centroids.rows)
                    .sum()
            }
            ExprOp::PqFromTables { model } => 2 * store.pq_model(model)?.k_neighbors,
            ExprOp::MinMaxScale { scaler, offset } => {
                let s = store.scaler(scaler)?;
                if offset + d_in(0) > s.mins.len() {
                    return Err(Error::DimMismatch(format!(
                        "node {}: scaler slice outside spec",
                        node.id
                    )));
                }
                d_in(0)
            }
            ExprOp::OneHot { encoder } => store.encoder(encoder)?.dim(),
            ExprOp::Compare { rhs, .. } | ExprOp::Arith { arith: _, rhs } => {
                if rhs.is_none() && d_in(0) != d_in(1) {
                    return Err(Error::DimMismatch(format!(
                        "node {}: elementwise dims {} vs {}",
                        node.id,
                        d_in(0),
                        d_in(1)
                    )));
                }
                d_in(0)
            }
            ExprOp::BoolOp { bool } => {
                if !matches!(bool, BoolKind::Not) && d_in(0) != d_in(1) {
                    return Err(Error::DimMismatch(format!(
                        "node {}: bool dims {} vs {}",
                        node.id,
                        d_in(0),
                        d_in(1)
                    )));
                }
                d_in(0)
            }
            ExprOp::Cond => {
                let d = d_in(1);
                if d_in(2) != d || d_in(0) != d {
                    return Err(Error::DimMismatch(format!(
                        "node {}: cond arms {} / {} with selector {}",
                        node.id,
                        d_in(1),
                        d_in(2),
                        d_in(0)
                    )));
                }
                d
            }
            ExprOp::OpaqueUdf { name } => {
                let total: usize = node.inputs.iter().map(|&i| dims[i]).sum();
                crate::expr::eval::UdfRegistry::builtin().output_dim(name, total)?
            }
        };
    }
    Ok(dims)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_graph() -> ExprGraph {
        ExprGraph {
            nodes: vec![
                ExprNode {
                    id: 0,
                    op: ExprOp::InputRef {
                        columns: vec!["a.x".into(), "a.y".into()],
                    },
                    inputs: vec![],
                },
                ExprNode {
                    id: 1,
                    op: ExprOp::Relu,
                    inputs: vec![0],
                },
            ],
            outputs: vec![1],
        }
    }

    #[test]
    fn single_input_graph_parses() {
        let text = r#"{"nodes":[{"id":0,"op":"input_ref","columns":["a.x"]}],"outputs":[0]}"#;
        let g = parse_expr(text).unwrap();
        assert_eq!(g.nodes.len(), 1);
    }

    #[test]
    fn print_parse_round_trip() {
        let g = tiny_graph();
        let text = print_expr(&g);
        assert_eq!(parse_expr(&text).unwrap(), g);
    }

    #[test]
    fn forward_reference_rejected() {
        let text = r#"{"nodes":[{"id":0,"op":"relu","inputs":[1]},{"id":1,"op":"input_ref","columns":["a.x"]}],"outputs":[0]}"#;
        let err = parse_expr(text).unwrap_err();
        assert!(err.to_string().contains("cycle or forward"), "{err}");
    }

    #[test]
    fn unknown_op_rejected_with_location() {
        let text = r#"{"nodes":[{"id":0,"op":"frobnicate"}],"outputs":[0]}"#;
        assert!(matches!(parse_expr(text), Err(Error::Parse { .. })));
    }

    #[test]
    fn arity_checked() {
        let text = r#"{"nodes":[{"id":0,"op":"input_ref","columns":["a.x"]},{"id":1,"op":"cond","inputs":[0,0]}],"outputs":[1]}"#;
        assert!(parse_expr(text).is_err());
    }

    #[test]
    fn dims_flow_through() {
        let mut store = ModelStore::default();
        store
            .weights
            .insert("w".into(), DenseMatrix::zeros(2, 5));
        let mut schema = Schema::default();
        schema.columns.insert("a.x".into(), DataType::Float32);
        schema.columns.insert("a.y".into(), DataType::Float32);
        let g = ExprGraph {
            nodes: vec![
                ExprNode {
                    id: 0,
                    op: ExprOp::InputRef {
                        columns: vec!["a.x".into(), "a.y".into()],
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
        let dims = infer_dims(&g, &schema, &store, &HashMap::new()).unwrap();
        assert_eq!(dims, vec![2, 5]);
    }

    proptest::proptest! {
        /// print/parse is the identity on randomly assembled chains.
        #[test]
        fn round_trip_random_chains(ops in proptest::collection::vec(0usize..4, 1..12)) {
            let mut nodes = vec![ExprNode {
                id: 0,
                op: ExprOp::InputRef { columns: vec!["t.c".into()] },
                inputs: vec![],
            }];
            for (i, &k) in ops.iter().enumerate() {
                let id = i + 1;
                let op = match k {
                    0 => ExprOp::Relu,
                    1 => ExprOp::Arith { arith: ArithKind::Mul, rhs: Some(0.5) },
                    2 => ExprOp::Compare { cmp: CmpKind::Gt, rhs: Some(0.0) },
                    _ => ExprOp::OpaqueUdf { name: "mix".into() },
                };
                nodes.push(ExprNode { id, op, inputs: vec![id - 1] });
            }
            let outputs = vec![nodes.len() - 1];
            let g = ExprGraph { nodes, outputs };
            let printed = print_expr(&g);
            proptest::prop_assert_eq!(parse_expr(&printed).unwrap(), g);
        }
    }
}
