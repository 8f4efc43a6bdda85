//! The binary join-tree abstraction: m scan leaves, m-1 join nodes,
//! node ids 1..=2m-1 with children always below parents and the root
//! at 2m-1.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::relational::{estimate_join_cardinality, Histogram};
use crate::{Error, Result};

pub type NodeId = usize;

/// Guard for exhaustive plan enumeration.
pub const MAX_ENUM_LEAVES: usize = 16;

/// Qualified column reference `table.column`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ColumnRef {
    pub table: String,
    pub column: String,
}

impl ColumnRef {
    pub fn parse(s: &str) -> Result<Self> {
        let (table, column) = s
            .split_once('.')
            .ok_or_else(|| Error::Parse {
                location: s.to_string(),
                msg: "expected `table.column`".to_string(),
            })?;
        Ok(ColumnRef {
            table: table.to_string(),
            column: column.to_string(),
        })
    }
}

impl std::fmt::Display for ColumnRef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}.{}", self.table, self.column)
    }
}

/// One equi-join edge of the query.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JoinSpec {
    pub left: ColumnRef,
    pub right: ColumnRef,
}

/// Join query: tables, equi-join edges, and an optional explicit join
/// order (left-to-right leaf order of the left-deep tree).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuerySpec {
    pub tables: Vec<String>,
    pub joins: Vec<JoinSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order: Option<Vec<String>>,
}

/// Per-table statistics feeding cardinality estimation.
#[derive(Debug, Clone, Default)]
pub struct TableMeta {
    pub rows: u64,
    /// Histograms over join-key columns.
    pub key_hists: HashMap<String, Histogram>,
    /// Full tuple width in value slots (all columns).
    pub slots: usize,
}

#[derive(Debug, Clone, Default)]
pub struct StatsCatalog {
    pub tables: HashMap<String, TableMeta>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum NodeKind {
    Scan {
        table_ref: String,
    },
    Join {
        left_key: ColumnRef,
        right_key: ColumnRef,
    },
}

#[derive(Debug, Clone)]
pub struct PlanNode {
    pub id: NodeId,
    pub kind: NodeKind,
    /// (left, right) child ids; scans have none.
    pub children: Option<(NodeId, NodeId)>,
    /// Estimated output rows n_i.
    pub cardinality: f64,
    /// Tuple width in value slots before any push-down (subtree raw
    /// slots plus keys still needed above).
    pub base_width: usize,
    /// Levels below the root (root = 0).
    pub depth: usize,
}

impl PlanNode {
    pub fn is_scan(&self) -> bool {
        matches!(self.kind, NodeKind::Scan { .. })
    }
}

/// Binary join tree with `m` scan leaves (ids 1..=m) and `m-1` join
/// nodes (ids m+1..=2m-1, children below parents, root = 2m-1).
#[derive(Debug, Clone)]
pub struct JoinTree {
    nodes: Vec<PlanNode>,
    pub leaf_count: usize,
    parent: Vec<Option<NodeId>>,
    /// Source leaf of every join-key column, by (table, column).
    key_sources: HashMap<ColumnRef, NodeId>,
}

impl JoinTree {
    /// Assemble a tree from nodes. Enforces the id layout invariants.
    pub fn from_nodes(nodes: Vec<PlanNode>) -> Result<Self> {
        let leaf_count = nodes.iter().filter(|n| n.is_scan()).count();
        let total = nodes.len();
        if leaf_count == 0 || total != 2 * leaf_count - 1 {
            return Err(Error::InvalidPlan(format!(
                "{total} nodes with {leaf_count} leaves is not a binary join tree"
            )));
        }
        for (i, n) in nodes.iter().enumerate() {
            if n.id != i + 1 {
                return Err(Error::InvalidPlan("node ids must be 1..=2m-1 in order".into()));
            }
            match (&n.kind, n.children) {
                (NodeKind::Scan { .. }, None) => {
                    if n.id > leaf_count {
                        return Err(Error::InvalidPlan(format!(
                            "scan node id {} above leaf range 1..={leaf_count}",
                            n.id
                        )));
                    }
                }
                (NodeKind::Join { .. }, Some((l, r))) => {
                    if l >= n.id || r >= n.id {
                        return Err(Error::InvalidPlan(
                            "children must have smaller ids than their parent".into(),
                        ));
                    }
                }
                _ => {
                    return Err(Error::InvalidPlan(
                        "scan nodes have no children; joins have two".into(),
                    ))
                }
            }
        }
        let mut parent = vec![None; total + 1];
        for n in &nodes {
            if let Some((l, r)) = n.children {
                parent[l] = Some(n.id);
                parent[r] = Some(n.id);
            }
        }
        let mut key_sources = HashMap::new();
        for n in &nodes {
            if let NodeKind::Join {
                left_key,
                right_key,
            } = &n.kind
            {
                for key in [left_key, right_key] {
                    if let Some(leaf) = nodes
                        .iter()
                        .find(|c| matches!(&c.kind, NodeKind::Scan { table_ref } if *table_ref == key.table))
                    {
                        key_sources.insert(key.clone(), leaf.id);
                    }
                }
            }
        }
        Ok(JoinTree {
            nodes,
            leaf_count,
            parent,
            key_sources,
        })
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn root(&self) -> NodeId {
        self.nodes.len()
    }

    pub fn node(&self, id: NodeId) -> &PlanNode {
        &self.nodes[id - 1]
    }

    pub fn nodes(&self) -> &[PlanNode] {
        &self.nodes
    }

    pub fn parent(&self, id: NodeId) -> Option<NodeId> {
        self.parent[id]
    }

    pub fn cardinality(&self, id: NodeId) -> f64 {
        self.node(id).cardinality
    }

    /// Leaf id of the scan over `table`, if any.
    pub fn leaf_of(&self, table: &str) -> Option<NodeId> {
        self.nodes[..self.leaf_count]
            .iter()
            .find(|n| matches!(&n.kind, NodeKind::Scan { table_ref } if table_ref == table))
            .map(|n| n.id)
    }

    /// All node ids in the subtree rooted at `id`, ascending.
    pub fn subtree_nodes(&self, id: NodeId) -> Vec<NodeId> {
        let mut out = Vec::new();
        let mut stack = vec![id];
        while let Some(n) = stack.pop() {
            out.push(n);
            if let Some((l, r)) = self.node(n).children {
                stack.push(r);
                stack.push(l);
            }
        }
        out.sort_unstable();
        out
    }

    /// Leaf ids in the subtree rooted at `id`.
    pub fn subtree_leaves(&self, id: NodeId) -> Vec<NodeId> {
        let mut out = Vec::new();
        let mut stack = vec![id];
        while let Some(n) = stack.pop() {
            match self.node(n).children {
                None => out.push(n),
                Some((l, r)) => {
                    stack.push(r);
                    stack.push(l);
                }
            }
        }
        out.sort_unstable();
        out
    }

    /// Node path from `id` (inclusive) up to the root (inclusive).
    pub fn path_to_root(&self, id: NodeId) -> Vec<NodeId> {
        let mut path = vec![id];
        let mut cur = id;
        while let Some(p) = self.parent(cur) {
            path.push(p);
            cur = p;
        }
        path
    }

    /// Whether `anc` is an ancestor of `id` (or equal).
    pub fn is_ancestor_or_self(&self, anc: NodeId, id: NodeId) -> bool {
        let mut cur = Some(id);
        while let Some(c) = cur {
            if c == anc {
                return true;
            }
            cur = self.parent(c);
        }
        false
    }

    /// Lowest common ancestor of a non-empty node set.
    pub fn lca(&self, ids: &[NodeId]) -> NodeId {
        let mut cur = ids[0];
        for &id in &ids[1..] {
            while !self.is_ancestor_or_self(cur, id) {
                cur = self.parent(cur).expect("lca walk passed the root");
            }
        }
        cur
    }

    /// Join-key slots still needed by joins strictly above `id`: the
    /// number of key columns sourced inside subtree(id) that some
    /// ancestor join consumes. Push-down never eliminates these.
    pub fn key_slots_above(&self, id: NodeId) -> usize {
        let leaves: HashSet<NodeId> = self.subtree_leaves(id).into_iter().collect();
        let mut slots = 0;
        let mut seen: HashSet<&ColumnRef> = HashSet::new();
        for anc in self.path_to_root(id).into_iter().skip(1) {
            if let NodeKind::Join {
                left_key,
                right_key,
            } = &self.node(anc).kind
            {
                for key in [left_key, right_key] {
                    if let Some(src) = self.key_sources.get(key) {
                        if leaves.contains(src) && seen.insert(key) {
                            slots += 1;
                        }
                    }
                }
            }
        }
        slots
    }
}

/// Build a left-deep join tree. The leaf order is the caller-supplied
/// `order` or, when omitted, a greedy ascending-estimated-size order
/// that only ever joins connected tables. Cardinalities are estimated
/// bottom-up from key histograms, scaling the base-table key
/// distribution by the intermediate blow-up (key independence).
pub fn build_join_tree(spec: &QuerySpec, stats: &StatsCatalog) -> Result<JoinTree> {
    let m = spec.tables.len();
    if m == 0 {
        return Err(Error::InvalidPlan("query joins no tables".into()));
    }
    for t in &spec.tables {
        if !stats.tables.contains_key(t) {
            return Err(Error::UnknownTable(t.clone()));
        }
    }

    let order: Vec<String> = match &spec.order {
        Some(order) => {
            if order.len() != m {
                return Err(Error::InvalidPlan(format!(
                    "join order lists {} tables, query has {m}",
                    order.len()
                )));
            }
            order.clone()
        }
        None => greedy_order(spec, stats)?,
    };

    // Leaves in order, ids 1..=m.
    let mut nodes: Vec<PlanNode> = Vec::with_capacity(2 * m - 1);
    for (i, table) in order.iter().enumerate() {
        let meta = &stats.tables[table];
        nodes.push(PlanNode {
            id: i + 1,
            kind: NodeKind::Scan {
                table_ref: table.clone(),
            },
            children: None,
            cardinality: meta.rows as f64,
            base_width: 0,
            depth: 0,
        });
    }

    // Left-deep spine, ids m+1..=2m-1.
    let mut joined: HashSet<&str> = HashSet::new();
    joined.insert(order[0].as_str());
    let mut left_child: NodeId = 1;
    let mut left_card = nodes[0].cardinality;

    for (step, table) in order.iter().enumerate().skip(1) {
        let right_leaf = step + 1;
        let join = find_join(spec, &joined, table)?;
        // Normalize so the left key refers to the already-joined side.
        let (left_key, right_key) = if joined.contains(join.left.table.as_str()) {
            (join.left.clone(), join.right.clone())
        } else {
            (join.right.clone(), join.left.clone())
        };

        let left_meta = &stats.tables[&left_key.table];
        let right_meta = &stats.tables[&right_key.table];
        let card = match (
            left_meta.key_hists.get(&left_key.column),
            right_meta.key_hists.get(&right_key.column),
        ) {
            (Some(lh), Some(rh)) => {
                // The key column's distribution inside the intermediate is
                // its base-table distribution scaled by the blow-up so far
                // (key independence assumption).
                let factor = left_card / (left_meta.rows.max(1) as f64);
                estimate_join_cardinality(&lh.scaled(factor), rh)
            }
            // Without key stats fall back to the larger side.
            _ => left_card.max(right_meta.rows as f64),
        };

        let id = m + step;
        nodes.push(PlanNode {
            id,
            kind: NodeKind::Join {
                left_key,
                right_key,
            },
            children: Some((left_child, right_leaf)),
            cardinality: card,
            base_width: 0,
            depth: 0,
        });

        joined.insert(table.as_str());
        left_child = id;
        left_card = card;
    }

    let mut tree = JoinTree::from_nodes(nodes)?;
    fill_depth_and_width(&mut tree, stats);
    Ok(tree)
}

fn find_join<'a>(
    spec: &'a QuerySpec,
    joined: &HashSet<&str>,
    next: &str,
) -> Result<&'a JoinSpec> {
    spec.joins
        .iter()
        .find(|j| {
            (joined.contains(j.left.table.as_str()) && j.right.table == next)
                || (joined.contains(j.right.table.as_str()) && j.left.table == next)
        })
        .ok_or_else(|| {
            Error::InvalidPlan(format!(
                "no join edge connects `{next}` to the joined tables"
            ))
        })
}

/// Greedy join order: start from the globally smallest table, then
/// repeatedly append the smallest table connected to the joined set.
fn greedy_order(spec: &QuerySpec, stats: &StatsCatalog) -> Result<Vec<String>> {
    let mut remaining: Vec<String> = spec.tables.clone();
    remaining.sort_by(|a, b| {
        stats.tables[a]
            .rows
            .cmp(&stats.tables[b].rows)
            .then_with(|| a.cmp(b))
    });
    let mut order = vec![remaining.remove(0)];
    while !remaining.is_empty() {
        let joined: HashSet<&str> = order.iter().map(|s| s.as_str()).collect();
        let pos = remaining
            .iter()
            .position(|t| find_join(spec, &joined, t).is_ok())
            .ok_or_else(|| {
                Error::InvalidPlan("join graph is disconnected (cross products unsupported)".into())
            })?;
        let next = remaining.remove(pos);
        drop(joined);
        order.push(next);
    }
    Ok(order)
}

fn fill_depth_and_width(tree: &mut JoinTree, stats: &StatsCatalog) {
    let root = tree.root();
    // Depth: root 0, children one more.
    let mut depth = vec![0usize; tree.node_count() + 1];
    let mut stack = vec![root];
    while let Some(id) = stack.pop() {
        if let Some((l, r)) = tree.node(id).children {
            depth[l] = depth[id] + 1;
            depth[r] = depth[id] + 1;
            stack.push(l);
            stack.push(r);
        }
    }
    // Base width: subtree raw table slots plus keys needed above.
    for id in 1..=tree.node_count() {
        let raw: usize = tree
            .subtree_leaves(id)
            .iter()
            .map(|&leaf| match &tree.node(leaf).kind {
                NodeKind::Scan { table_ref } => {
                    stats.tables.get(table_ref).map(|t| t.slots).unwrap_or(0)
                }
                _ => 0,
            })
            .sum();
        let keys = tree.key_slots_above(id);
        let n = &mut tree.nodes[id - 1];
        n.depth = depth[id];
        n.base_width = raw + keys;
    }
}
