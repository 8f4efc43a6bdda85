//! Push-down decision vectors, availability sets, validation, repair
//! and full plan-space enumeration.
//!
//! A plan sets one bit per tree node: bit `i` means "push all factorized
//! computations available at node i to node i". Two constraints shape
//! the space: a node with nothing available must stay 0, and the root
//! must be 1 whenever anything is still available there.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

use super::tree::{JoinTree, NodeId, MAX_ENUM_LEAVES};

/// Decision vector x over the 2m-1 tree nodes; `bits[i]` is node i+1.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PushdownPlan {
    pub bits: Vec<bool>,
}

impl PushdownPlan {
    pub fn all_zero(tree: &JoinTree) -> Self {
        PushdownPlan {
            bits: vec![false; tree.node_count()],
        }
    }

    pub fn get(&self, id: NodeId) -> bool {
        self.bits[id - 1]
    }

    pub fn set(&mut self, id: NodeId, value: bool) {
        self.bits[id - 1] = value;
    }

    /// Render as the report form `x=[0,1,...]`.
    pub fn to_report_string(&self) -> String {
        let inner: Vec<&str> = self.bits.iter().map(|&b| if b { "1" } else { "0" }).collect();
        format!("x=[{}]", inner.join(","))
    }
}

/// Per-node sets D_i of factorized-unit ids available at each node:
/// units homed in the subtree that no descendant push site has consumed.
#[derive(Debug, Clone, PartialEq)]
pub struct AvailabilitySet {
    /// Indexed by node id - 1; unit ids sorted ascending.
    pub per_node: Vec<Vec<usize>>,
}

impl AvailabilitySet {
    pub fn at(&self, id: NodeId) -> &[usize] {
        &self.per_node[id - 1]
    }
}

/// Availability under the one-unit-per-leaf model: unit j is homed at
/// leaf j. This is the combinatorial object behind plan counting.
pub fn availability(tree: &JoinTree, plan: &PushdownPlan) -> AvailabilitySet {
    let homes: Vec<NodeId> = (1..=tree.leaf_count).collect();
    availability_with_homes(tree, plan, &homes)
}

/// Availability for an explicit unit-home assignment (`homes[u]` is the
/// tree node unit u's inputs are complete at). Computed bottom-up in
/// one pass: a child with its bit set consumes everything available
/// there, so nothing propagates past it.
pub fn availability_with_homes(
    tree: &JoinTree,
    plan: &PushdownPlan,
    homes: &[NodeId],
) -> AvailabilitySet {
    let n = tree.node_count();
    debug_assert_eq!(plan.bits.len(), n);
    let mut homed_at: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (unit, &home) in homes.iter().enumerate() {
        homed_at[home - 1].push(unit);
    }
    let mut per_node: Vec<Vec<usize>> = vec![Vec::new(); n];
    for id in 1..=n {
        let mut avail = std::mem::take(&mut homed_at[id - 1]);
        if let Some((l, r)) = tree.node(id).children {
            for child in [l, r] {
                if !plan.get(child) {
                    avail.extend_from_slice(&per_node[child - 1]);
                }
            }
        }
        avail.sort_unstable();
        per_node[id - 1] = avail;
    }
    AvailabilitySet { per_node }
}

/// A constraint violation found by [`validate_plan`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    /// Bit set on a node whose availability set is empty.
    PushWithEmptyAvailability(NodeId),
    /// Root bit clear while computations are still available there.
    RootMustCompute,
}

pub fn validate_plan(tree: &JoinTree, plan: &PushdownPlan) -> Vec<Violation> {
    let homes: Vec<NodeId> = (1..=tree.leaf_count).collect();
    validate_plan_with_homes(tree, plan, &homes)
}

pub fn validate_plan_with_homes(
    tree: &JoinTree,
    plan: &PushdownPlan,
    homes: &[NodeId],
) -> Vec<Violation> {
    let avail = availability_with_homes(tree, plan, homes);
    let mut violations = Vec::new();
    for id in 1..=tree.node_count() {
        if plan.get(id) && avail.at(id).is_empty() {
            violations.push(Violation::PushWithEmptyAvailability(id));
        }
    }
    let root = tree.root();
    if !plan.get(root) && !avail.at(root).is_empty() {
        violations.push(Violation::RootMustCompute);
    }
    violations
}

/// Repair an arbitrary bit vector into a valid plan: clear bits on
/// nodes with empty availability (bottom-up, so upstream effects are
/// seen), then force the root bit when availability remains there.
/// Idempotent.
pub fn repair_bits(tree: &JoinTree, bits: Vec<bool>, homes: &[NodeId]) -> PushdownPlan {
    let n = tree.node_count();
    let mut plan = PushdownPlan { bits };
    debug_assert_eq!(plan.bits.len(), n);
    let mut homed_count = vec![0usize; n];
    for &home in homes {
        homed_count[home - 1] += 1;
    }
    // leak[i]: number of units flowing out of node i upward.
    let mut leak = vec![0usize; n];
    for id in 1..=n {
        let mut avail = homed_count[id - 1];
        if let Some((l, r)) = tree.node(id).children {
            avail += leak[l - 1] + leak[r - 1];
        }
        if avail == 0 {
            plan.bits[id - 1] = false;
        }
        if id == n && avail > 0 {
            plan.bits[id - 1] = true;
        }
        leak[id - 1] = if plan.bits[id - 1] { 0 } else { avail };
    }
    plan
}

/// Where each unit lands under a plan: the lowest node on its
/// home-to-root path with the bit set. `None` means the unit is
/// stranded, which cannot happen for valid plans.
pub fn unit_sites(tree: &JoinTree, plan: &PushdownPlan, homes: &[NodeId]) -> Vec<Option<NodeId>> {
    homes
        .iter()
        .map(|&home| tree.path_to_root(home).into_iter().find(|&id| plan.get(id)))
        .collect()
}

/// Enumerate the plan space of the recursive grouped push-down
/// construction, in lexicographic order of the decision vector (node
/// ids ascending). One-unit-per-leaf model.
///
/// The construction composes subtree states: a subtree contributes its
/// own plans (root bit forced by availability) plus three leak states
/// (nothing pushed; only the left child's root pushed; only the right
/// child's root pushed). For left-deep trees this yields exactly
/// 5 * 2^(m-1) - 6 plans, every one of which passes [`validate_plan`].
/// The full constraint-satisfying space is larger from m = 4 up;
/// [`enumerate_feasible_plans`] walks that one.
pub fn enumerate_valid_plans(tree: &JoinTree) -> Result<Vec<PushdownPlan>> {
    if tree.leaf_count > MAX_ENUM_LEAVES {
        return Err(Error::TreeTooLarge {
            m: tree.leaf_count,
            limit: MAX_ENUM_LEAVES,
        });
    }
    let n = tree.node_count();
    let root = tree.root();

    // Per subtree: (assignments over subtree nodes, leaks) split into
    // tree plans (forced root bit) and canonical leak states.
    fn states(
        tree: &JoinTree,
        id: NodeId,
    ) -> (Vec<(Vec<(NodeId, bool)>, bool)>, Vec<Vec<(NodeId, bool)>>) {
        match tree.node(id).children {
            None => (vec![(vec![(id, true)], false)], vec![vec![(id, false)]]),
            Some((l, r)) => {
                let (lt, ll) = states(tree, l);
                let (rt, rl) = states(tree, r);
                let left_states: Vec<(Vec<(NodeId, bool)>, bool)> = lt
                    .into_iter()
                    .map(|(a, _)| (a, false))
                    .chain(ll.into_iter().map(|a| (a, true)))
                    .collect();
                let right_states: Vec<(Vec<(NodeId, bool)>, bool)> = rt
                    .into_iter()
                    .map(|(a, _)| (a, false))
                    .chain(rl.into_iter().map(|a| (a, true)))
                    .collect();
                let mut plans = Vec::with_capacity(left_states.len() * right_states.len());
                for (la, lleak) in &left_states {
                    for (ra, rleak) in &right_states {
                        let mut assign = la.clone();
                        assign.extend_from_slice(ra);
                        let avail = *lleak || *rleak;
                        assign.push((id, avail));
                        plans.push((assign, false));
                    }
                }
                let zero: Vec<(NodeId, bool)> = tree
                    .subtree_nodes(id)
                    .into_iter()
                    .map(|nid| (nid, false))
                    .collect();
                let mut one_left = zero.clone();
                set_bit(&mut one_left, l);
                let mut one_right = zero.clone();
                set_bit(&mut one_right, r);
                (plans, vec![zero, one_left, one_right])
            }
        }
    }

    fn set_bit(assign: &mut [(NodeId, bool)], id: NodeId) {
        for entry in assign.iter_mut() {
            if entry.0 == id {
                entry.1 = true;
            }
        }
    }

    let (tree_plans, leaks) = states(tree, root);
    debug_assert!(!tree_plans.is_empty());
    drop(leaks);
    let mut plans: Vec<PushdownPlan> = tree_plans
        .into_iter()
        .map(|(assign, _)| {
            let mut bits = vec![false; n];
            for (id, bit) in assign {
                bits[id - 1] = bit;
            }
            PushdownPlan { bits }
        })
        .collect();
    plans.sort();
    plans.dedup();
    Ok(plans)
}

/// Every plan satisfying the availability constraints (bit only on
/// nodes with something available; root forced), one-unit-per-leaf.
/// This is a superset of [`enumerate_valid_plans`] from m = 4 up and is
/// the space the exhaustive optimizer minimizes over.
pub fn enumerate_feasible_plans(tree: &JoinTree) -> Result<Vec<PushdownPlan>> {
    let homes: Vec<NodeId> = (1..=tree.leaf_count).collect();
    enumerate_feasible_plans_with_homes(tree, &homes)
}

/// Feasible-plan enumeration under an explicit unit-home assignment.
/// Built recursively: per subtree only "does anything escape upward"
/// matters, because pushing consumes everything available at once.
pub fn enumerate_feasible_plans_with_homes(
    tree: &JoinTree,
    homes: &[NodeId],
) -> Result<Vec<PushdownPlan>> {
    if tree.leaf_count > MAX_ENUM_LEAVES {
        return Err(Error::TreeTooLarge {
            m: tree.leaf_count,
            limit: MAX_ENUM_LEAVES,
        });
    }
    let n = tree.node_count();
    let mut homed = vec![false; n];
    for &h in homes {
        homed[h - 1] = true;
    }

    // states[i]: list of (bit assignment over subtree(i), leaks) pairs.
    let mut states: Vec<Vec<(Vec<(NodeId, bool)>, bool)>> = vec![Vec::new(); n + 1];
    for id in 1..=n {
        let is_root = id == n;
        let child_states: Vec<(Vec<(NodeId, bool)>, bool)> = match tree.node(id).children {
            None => vec![(Vec::new(), false)],
            Some((l, r)) => {
                let mut combos = Vec::new();
                for (la, ll) in &states[l] {
                    for (ra, rl) in &states[r] {
                        let mut assign = la.clone();
                        assign.extend_from_slice(ra);
                        combos.push((assign, *ll || *rl));
                    }
                }
                combos
            }
        };
        let mut out = Vec::new();
        for (assign, child_leak) in child_states {
            let has_avail = child_leak || homed[id - 1];
            if is_root {
                // Root bit is forced either way.
                let mut a = assign;
                a.push((id, has_avail));
                out.push((a, false));
            } else if has_avail {
                for bit in [false, true] {
                    let mut a = assign.clone();
                    a.push((id, bit));
                    out.push((a, !bit));
                }
            } else {
                let mut a = assign;
                a.push((id, false));
                out.push((a, false));
            }
        }
        // Free children state memory early.
        if let Some((l, r)) = tree.node(id).children {
            states[l].clear();
            states[r].clear();
        }
        states[id] = out;
    }

    let mut plans: Vec<PushdownPlan> = states[n]
        .drain(..)
        .map(|(assign, _)| {
            let mut bits = vec![false; n];
            for (id, bit) in assign {
                bits[id - 1] = bit;
            }
            PushdownPlan { bits }
        })
        .collect();
    plans.sort();
    plans.dedup();
    Ok(plans)
}

/// Closed-form left-deep valid-plan count: 5 * 2^(m-1) - 6 for m >= 2.
pub fn left_deep_plan_count(m: usize) -> u64 {
    assert!(m >= 2);
    5 * (1u64 << (m - 1)) - 6
}
