//! Binary join trees, push-down decision vectors, availability sets,
//! plan validation/enumeration, and tuple-width accounting.

pub(crate) mod pushdown;
mod tree;
mod width;

pub use pushdown::{
    availability, availability_with_homes, enumerate_feasible_plans,
    enumerate_feasible_plans_with_homes, enumerate_valid_plans, left_deep_plan_count,
    repair_bits, unit_sites, validate_plan, validate_plan_with_homes, AvailabilitySet,
    PushdownPlan, Violation,
};
pub use tree::{
    build_join_tree, ColumnRef, JoinSpec, NodeId, NodeKind, PlanNode, QuerySpec, StatsCatalog,
    TableMeta, JoinTree, MAX_ENUM_LEAVES,
};
pub use width::{
    Block, CombineKind, FoldEvent, GroupWidthInfo, NodeState, RawGroup, UnitWidthInfo, WidthModel,
};
