//! Inference kernels in monolithic and factorized form: dense layers,
//! bitvector forest scoring, product quantization, and feature scaling.
//!
//! Every kernel fixes its floating-point reduction order so the
//! factorized path can be compared against the monolithic one with a
//! tight tolerance (bit-exact for masks and PQ distances).

mod dense;
pub(crate) mod pq;
pub(crate) mod quickscorer;
mod scaler;

pub use dense::{
    aggregate_partials, ffnn_forward, matmul, partial_dense, partition_dense_layer, Activation,
    DenseMatrix, FeaturePartition, FfnnLayer, FfnnModel,
};
pub use pq::{pq_combine, pq_distances, pq_partial, random_pq_model, PqModel, PqPart};
pub use quickscorer::{
    compile_tree, qs_combine, qs_combine_exit_leaves, qs_forest_partial, qs_partial, qs_score,
    qs_tree_exit_leaf, random_naive_tree, NaiveNode, NaiveTree, QsForest, QsNode, QsTree,
};
pub use scaler::{min_max_scale, one_hot, OneHotSpec, ScalerSpec};
