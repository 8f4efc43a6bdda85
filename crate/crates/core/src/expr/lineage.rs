//! Mapping expression sources to the join-tree nodes they depend on.

use std::collections::HashMap;

use crate::plan::{ColumnRef, JoinTree, NodeId};
use crate::{Error, Result};

use super::graph::{ExprGraph, ExprOp};

/// For every `InputRef` node, the smallest join-tree node whose output
/// contains all of its columns: the table's scan leaf for single-table
/// references, the lowest common ancestor for mixed references.
pub fn lineage(expr: &ExprGraph, tree: &JoinTree) -> Result<HashMap<usize, NodeId>> {
    let mut out = HashMap::new();
    for node in &expr.nodes {
        if let ExprOp::InputRef { columns } = &node.op {
            let mut leaves = Vec::new();
            for qualified in columns {
                let col = ColumnRef::parse(qualified)?;
                let leaf = tree
                    .leaf_of(&col.table)
                    .ok_or_else(|| Error::UnknownColumn(qualified.clone()))?;
                leaves.push(leaf);
            }
            if leaves.is_empty() {
                return Err(Error::Expr(format!(
                    "input node {} references no columns",
                    node.id
                )));
            }
            leaves.dedup();
            out.insert(node.id, tree.lca(&leaves));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::graph::ExprNode;

    fn graph_with(columns: Vec<&str>) -> ExprGraph {
        ExprGraph {
            nodes: vec![ExprNode {
                id: 0,
                op: ExprOp::InputRef {
                    columns: columns.into_iter().map(String::from).collect(),
                },
                inputs: vec![],
            }],
            outputs: vec![0],
        }
    }

    #[test]
    fn single_table_maps_to_leaf() {
        let tree = crate::plan::pushdown::tests::left_deep(3);
        let g = graph_with(vec!["t2.x", "t2.y"]);
        let map = lineage(&g, &tree).unwrap();
        assert_eq!(map[&0], 2);
    }

    #[test]
    fn mixed_reference_maps_to_lca() {
        let tree = crate::plan::pushdown::tests::left_deep(3);
        let g = graph_with(vec!["t1.x", "t2.y"]);
        let map = lineage(&g, &tree).unwrap();
        assert_eq!(map[&0], 4);
        let g2 = graph_with(vec!["t1.x", "t3.y"]);
        assert_eq!(lineage(&g2, &tree).unwrap()[&0], 5);
    }

    #[test]
    fn unknown_table_rejected() {
        let tree = crate::plan::pushdown::tests::left_deep(2);
        let g = graph_with(vec!["ghost.x"]);
        assert!(matches!(
            lineage(&g, &tree),
            Err(Error::UnknownColumn(_))
        ));
    }
}
