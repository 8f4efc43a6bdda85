//! The factorizable expression IR: a DAG of inference and expression
//! operators, its analysis into per-source factorized units, and the
//! rewriting that places those units into a join tree under a push-down
//! plan.

mod analyze;
mod cost;
mod eval;
mod graph;
mod lineage;
mod rewrite;

pub use analyze::{analyze, FactorizationMap, FactorizedUnit, UnitGroup};
pub use cost::{expr_cost, op_cost, CostTable, OP_KEYS};
pub use eval::{evaluate_graph, Batch, UdfRegistry};
pub use graph::{
    infer_dims, parse_expr, print_expr, ArithKind, BoolKind, CmpKind, ExprGraph, ExprNode,
    ExprOp, ForestOutput, ModelStore, Schema,
};
pub use lineage::lineage;
pub use rewrite::{rewrite, RewrittenPlan};
