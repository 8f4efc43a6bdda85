//! Plan rewriting: place every factorized unit at the lowest push site
//! on its home-to-root path and lay out the per-node programs the
//! executor runs.

use std::collections::HashMap;

use crate::plan::{
    unit_sites, validate_plan_with_homes, JoinTree, NodeId, PushdownPlan,
    UnitWidthInfo, WidthModel,
};
use crate::{Error, Result};

use super::analyze::FactorizationMap;
use super::graph::ExprOp;

/// A rewritten query: the plan, where each unit lands, and the raw
/// column retirement schedule. The residual stays in the map.
#[derive(Debug, Clone)]
pub struct RewrittenPlan {
    pub plan: PushdownPlan,
    /// Site of each unit (indexed by unit id).
    pub sites: Vec<NodeId>,
    /// Units to evaluate per node, ascending unit id.
    pub per_node: HashMap<NodeId, Vec<usize>>,
    /// Highest node each raw column must reach: drop it after this node
    /// (None = ride到 the root for the residual).
    pub column_retirement: HashMap<String, Option<NodeId>>,
    pub aggressive: bool,
}

/// Place units under a valid plan. Every unit lands exactly once, at
/// the minimal pushed ancestor of its home.
pub fn rewrite(
    tree: &JoinTree,
    plan: &PushdownPlan,
    map: &FactorizationMap,
    aggressive: bool,
) -> Result<RewrittenPlan> {
    let homes = map.homes();
    let violations = validate_plan_with_homes(tree, plan, &homes);
    if !violations.is_empty() {
        return Err(Error::InvalidPlan(format!("{violations:?}")));
    }
    let raw_sites = unit_sites(tree, plan, &homes);
    let mut sites = Vec::with_capacity(raw_sites.len());
    for (unit, site) in raw_sites.into_iter().enumerate() {
        // Valid plans place every unit; the root catches leftovers.
        sites.push(site.ok_or_else(|| {
            Error::InvalidPlan(format!("unit {unit} has no push site on its path"))
        })?);
    }

    let mut per_node: HashMap<NodeId, Vec<usize>> = HashMap::new();
    for (unit, &site) in sites.iter().enumerate() {
        per_node.entry(site).or_default().push(unit);
    }
    for units in per_node.values_mut() {
        units.sort_unstable();
    }

    // Readers of a group must sit at or above every member; unit ids
    // ascend along dependencies by construction.
    for group in &map.groups {
        for &reader in &group.readers {
            for &member in &group.members {
                debug_assert!(member < reader, "group member created after reader");
                if !tree.is_ancestor_or_self(sites[reader], sites[member]) {
                    return Err(Error::InvalidPlan(format!(
                        "unit {reader} at node {} reads a group member computed at {}",
                        sites[reader], sites[member]
                    )));
                }
            }
        }
    }

    // A raw column survives until the highest site among its consuming
    // units, or to the root when the residual reads it.
    let mut column_retirement: HashMap<String, Option<NodeId>> = HashMap::new();
    for col in &map.raw_columns {
        let retirement = if col.residual {
            None
        } else {
            let mut highest = sites[col.consumers[0]];
            for &u in &col.consumers[1..] {
                if tree.is_ancestor_or_self(sites[u], highest) {
                    highest = sites[u];
                }
            }
            Some(highest)
        };
        column_retirement.insert(col.column.clone(), retirement);
    }

    Ok(RewrittenPlan {
        plan: plan.clone(),
        sites,
        per_node,
        column_retirement,
        aggressive,
    })
}

impl FactorizationMap {
    /// Width model equivalent of this factorization, for Eq.-style cost
    /// accounting that matches execution widths exactly.
    pub fn width_model(&self, aggressive: bool) -> WidthModel {
        let units = self
            .units
            .iter()
            .map(|u| UnitWidthInfo {
                home: u.home,
                out_dim: u.output_dim,
                group: u.group,
                group_pos: u.group_pos,
            })
            .collect();
        let mut model = WidthModel {
            units,
            groups: self
                .groups
                .iter()
                .map(|g| crate::plan::GroupWidthInfo {
                    kind: g.combine,
                    readers: g.readers.clone(),
                    residual_reads: g.residual_reads,
                })
                .collect(),
            raw_groups: Vec::new(),
            aggressive,
        };
        for col in &self.raw_columns {
            model.raw_groups.push(crate::plan::RawGroup {
                leaf: col.leaf,
                slots: col.slots,
                consumers: col.consumers.clone(),
                residual: col.residual,
            });
        }
        model
    }

    /// Dimensions of each group's combined output.
    pub fn group_dims(&self) -> HashMap<usize, usize> {
        self.groups.iter().enumerate().map(|(g, gb)| (g, gb.dim)).collect()
    }

    /// Sanity check: every unit's sub-graph references only groups that
    /// exist and ends in a single output.
    pub fn validate(&self) -> Result<()> {
        for unit in &self.units {
            unit.graph.validate()?;
            if unit.graph.outputs.len() != 1 {
                return Err(Error::Expr(format!(
                    "unit {} has {} outputs",
                    unit.id,
                    unit.graph.outputs.len()
                )));
            }
            for n in &unit.graph.nodes {
                if let ExprOp::GroupRef { group } = &n.op {
                    if *group >= self.groups.len() {
                        return Err(Error::Expr(format!("unit {} reads unknown group", unit.id)));
                    }
                }
            }
        }
        self.residual.validate()
    }
}
