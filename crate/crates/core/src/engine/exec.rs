//! Bottom-up execution of a rewritten plan: scans apply their pushed
//! units, joins run the hash join and then theirs, blocks fold where
//! the width model says they fold, and the root finishes with the
//! residual. Emitted widths are asserted against the width model node
//! by node, so the cost model's I/O accounting is exact by
//! construction.

use std::collections::HashMap;
use std::time::Instant;

use rayon::prelude::*;

use crate::expr::{evaluate_graph, Batch, ExprOp, FactorizationMap, ModelStore, RewrittenPlan};
use crate::infer::DenseMatrix;
use crate::plan::{Block, CombineKind, JoinTree, NodeId, NodeKind};
use crate::relational::join::{join_match_indices, JoinOptions};
use crate::relational::{Column, ColumnData, Table};
use crate::{Error, Result};

use super::metrics::{NodeMetrics, RunMetrics, StageTime};

#[derive(Debug, Clone)]
pub struct ExecOptions {
    pub threads: usize,
    /// Rows per work chunk for batch-parallel unit evaluation.
    pub parallel_rows: usize,
}

impl Default for ExecOptions {
    fn default() -> Self {
        ExecOptions {
            threads: 1,
            parallel_rows: 8 * 1024,
        }
    }
}

/// One materialized block column.
#[derive(Debug, Clone)]
struct BlockCol {
    meta: Block,
    data: DenseMatrix,
}

/// Intermediate state flowing between nodes.
struct ExecBatch {
    rows: usize,
    raw: Vec<Column>,
    blocks: Vec<BlockCol>,
}

impl ExecBatch {
    fn width(&self) -> usize {
        self.raw.iter().map(|c| c.dtype().slots()).sum::<usize>()
            + self.blocks.iter().map(|b| b.meta.dim).sum::<usize>()
    }

    fn column(&self, qualified: &str) -> Result<&Column> {
        self.raw
            .iter()
            .find(|c| c.name == qualified)
            .ok_or_else(|| Error::UnknownColumn(qualified.to_string()))
    }

    fn gather(&self, lidx: &[usize], ridx_cols: Option<(&ExecBatch, &[usize])>) -> ExecBatch {
        // Left gather plus optional right-side columns for joins.
        let rows = lidx.len();
        let mut raw: Vec<Column> = self
            .raw
            .iter()
            .map(|c| Column {
                name: c.name.clone(),
                lineage: c.lineage.clone(),
                data: c.data.gather(lidx),
            })
            .collect();
        let mut blocks: Vec<BlockCol> = self
            .blocks
            .iter()
            .map(|b| BlockCol {
                meta: b.meta,
                data: gather_matrix(&b.data, lidx),
            })
            .collect();
        if let Some((right, ridx)) = ridx_cols {
            for c in &right.raw {
                raw.push(Column {
                    name: c.name.clone(),
                    lineage: c.lineage.clone(),
                    data: c.data.gather(ridx),
                });
            }
            for b in &right.blocks {
                blocks.push(BlockCol {
                    meta: b.meta,
                    data: gather_matrix(&b.data, ridx),
                });
            }
        }
        ExecBatch { rows, raw, blocks }
    }
}

fn gather_matrix(m: &DenseMatrix, idx: &[usize]) -> DenseMatrix {
    let d = m.cols;
    let mut data = Vec::with_capacity(idx.len() * d);
    for &i in idx {
        data.extend_from_slice(&m.data[i * d..(i + 1) * d]);
    }
    DenseMatrix {
        rows: idx.len(),
        cols: d,
        data,
    }
}

/// Execute the rewritten plan over the catalog tables. Returns the
/// result table (row identity column plus one column per expression
/// output) and the per-stage metrics.
pub fn execute(
    tree: &JoinTree,
    rewritten: &RewrittenPlan,
    map: &FactorizationMap,
    store: &ModelStore,
    catalog: &HashMap<String, Table>,
    opts: &ExecOptions,
) -> Result<(Table, RunMetrics)> {
    let run = || execute_inner(tree, rewritten, map, store, catalog, opts);
    if opts.threads > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(opts.threads)
            .build()
            .map_err(|e| Error::Workload(format!("thread pool: {e}")))?;
        pool.install(run)
    } else {
        run()
    }
}

fn execute_inner(
    tree: &JoinTree,
    rewritten: &RewrittenPlan,
    map: &FactorizationMap,
    store: &ModelStore,
    catalog: &HashMap<String, Table>,
    opts: &ExecOptions,
) -> Result<(Table, RunMetrics)> {
    let total_start = Instant::now();
    let mut metrics = RunMetrics::default();
    let width_model = map.width_model(rewritten.aggressive);
    let expected = width_model.simulate(tree, &rewritten.plan)?;

    // Group retirement mirrors the width model: highest reader's site.
    let retire: Vec<Option<NodeId>> = map
        .groups
        .iter()
        .map(|g| {
            if g.residual_reads || g.readers.is_empty() {
                None
            } else {
                let mut best = rewritten.sites[g.readers[0]];
                for &u in &g.readers[1..] {
                    if tree.is_ancestor_or_self(rewritten.sites[u], best) {
                        best = rewritten.sites[u];
                    }
                }
                Some(best)
            }
        })
        .collect();

    // Key columns each node's ancestors still consume.
    let join_opts = JoinOptions::default();
    let root = tree.root();
    let mut states: Vec<Option<ExecBatch>> = (0..=tree.node_count()).map(|_| None).collect();
    let mut unknown_categories = 0u64;

    for id in 1..=tree.node_count() {
        let stage_start = Instant::now();
        let mut batch = match &tree.node(id).kind {
            NodeKind::Scan { table_ref } => {
                let table = catalog
                    .get(table_ref)
                    .ok_or_else(|| Error::UnknownTable(table_ref.clone()))?;
                scan_batch(tree, id, table, table_ref, map)?
            }
            NodeKind::Join {
                left_key,
                right_key,
            } => {
                let (l, r) = tree.node(id).children.expect("join children");
                let left = states[l].take().expect("child executed");
                let right = states[r].take().expect("child executed");
                let lkey = left.column(&left_key.to_string())?;
                let rkey = right.column(&right_key.to_string())?;
                if lkey.dtype() != rkey.dtype() {
                    return Err(Error::KeyTypeMismatch {
                        left: format!("{:?}", lkey.dtype()),
                        right: format!("{:?}", rkey.dtype()),
                    });
                }
                let (lidx, ridx) = join_match_indices(
                    &lkey.data,
                    left.rows,
                    &rkey.data,
                    right.rows,
                    &join_opts,
                );
                let mut joined = left.gather(&lidx, Some((&right, &ridx)));
                // The right key column is consumed by the join itself.
                let rname = right_key.to_string();
                joined.raw.retain(|c| c.name != rname);
                joined
            }
        };

        // Meet-point aggregation below the root.
        if rewritten.aggressive && id != root && tree.node(id).children.is_some() {
            fold_batch_blocks(&mut batch, map, None)?;
        }

        // Pushed computation at this node.
        if let Some(units) = rewritten.per_node.get(&id) {
            let mut read_groups: Vec<usize> = Vec::new();
            for &u in units {
                for (g, info) in map.groups.iter().enumerate() {
                    if info.readers.contains(&u) && !read_groups.contains(&g) {
                        read_groups.push(g);
                    }
                }
            }
            if rewritten.aggressive && !read_groups.is_empty() {
                fold_batch_blocks(&mut batch, map, Some(&read_groups))?;
            }
            for &u in units {
                let unit = &map.units[u];
                let out = eval_graph_over_batch(
                    &unit.graph,
                    store,
                    &batch,
                    map,
                    opts,
                    &mut unknown_categories,
                )?;
                let out = single_output(out)?;
                batch.blocks.push(BlockCol {
                    meta: Block {
                        group: unit.group,
                        dim: unit.output_dim,
                        lo: unit.group_pos,
                        hi: unit.group_pos,
                    },
                    data: out,
                });
            }
            if rewritten.aggressive {
                let touched: Vec<usize> = units.iter().map(|&u| map.units[u].group).collect();
                fold_batch_blocks(&mut batch, map, Some(&touched))?;
            }
        }

        // Retire consumed columns and fully read groups.
        batch.raw.retain(|c| {
            if key_needed_above(tree, id, &c.name) {
                return true;
            }
            match rewritten.column_retirement.get(&c.name) {
                Some(Some(site)) => !tree.is_ancestor_or_self(id, *site),
                Some(None) => true,
                None => false,
            }
        });
        batch.blocks.retain(|b| match retire[b.meta.group] {
            Some(site) => !tree.is_ancestor_or_self(id, site),
            None => true,
        });
        batch
            .blocks
            .sort_by_key(|b| (b.meta.group, b.meta.lo));

        // The emitted width must agree with the cost model exactly.
        let got = batch.width();
        let want = expected[id - 1].width;
        if got != want {
            return Err(Error::Workload(format!(
                "width drift at node {id}: executed {got}, model {want}"
            )));
        }
        metrics.per_node.push(NodeMetrics {
            node: id,
            rows: batch.rows,
            width: got,
            bytes: (batch.rows * got * 4) as u64,
        });
        metrics.stages.push(StageTime {
            label: format!(
                "{}{id}",
                if tree.node(id).is_scan() { "scan" } else { "join" }
            ),
            ms: stage_start.elapsed().as_secs_f64() * 1e3,
        });
        states[id] = Some(batch);
    }

    // Residual at the root.
    let stage_start = Instant::now();
    let batch = states[root].take().expect("root executed");
    let outputs = eval_graph_over_batch(
        &map.residual,
        store,
        &batch,
        map,
        opts,
        &mut unknown_categories,
    )?;
    let rows = batch.rows;
    let mut columns = vec![Column::new(
        "__row",
        "result",
        ColumnData::Int64((0..rows as i64).collect()),
    )];
    for (out, name) in outputs.into_iter().zip(&map.output_names) {
        let data = match out {
            Batch::F(m) if m.cols == 1 => ColumnData::Float32(m.data),
            Batch::F(m) => ColumnData::FloatArray {
                dim: m.cols,
                data: m.data,
            },
            Batch::S(v) => ColumnData::Str(v),
        };
        columns.push(Column::new(name.clone(), "result", data));
    }
    metrics.stages.push(StageTime {
        label: "residual".into(),
        ms: stage_start.elapsed().as_secs_f64() * 1e3,
    });
    metrics.unknown_categories = unknown_categories;
    metrics.total_ms = total_start.elapsed().as_secs_f64() * 1e3;
    let result = Table::new("result", columns)?;
    Ok((result, metrics))
}

/// Leaf scan: project the raw columns the plan needs (join keys still
/// consumed above and expression inputs of this table).
fn scan_batch(
    tree: &JoinTree,
    leaf: NodeId,
    table: &Table,
    table_ref: &str,
    map: &FactorizationMap,
) -> Result<ExecBatch> {
    let mut raw = Vec::new();
    for col in &table.columns {
        let qualified = format!("{table_ref}.{}", col.name);
        let is_key = key_needed_above(tree, leaf, &qualified);
        let is_expr = map.raw_columns.iter().any(|c| c.column == qualified);
        if is_key || is_expr {
            raw.push(Column {
                name: qualified,
                lineage: col.lineage.clone(),
                data: col.data.clone(),
            });
        }
    }
    Ok(ExecBatch {
        rows: table.row_count,
        raw,
        blocks: Vec::new(),
    })
}

fn key_needed_above(tree: &JoinTree, id: NodeId, qualified: &str) -> bool {
    for anc in tree.path_to_root(id).into_iter().skip(1) {
        if let NodeKind::Join {
            left_key,
            right_key,
        } = &tree.node(anc).kind
        {
            if left_key.to_string() == qualified || right_key.to_string() == qualified {
                return true;
            }
        }
    }
    false
}

fn single_output(mut outputs: Vec<Batch>) -> Result<DenseMatrix> {
    if outputs.len() != 1 {
        return Err(Error::Expr(format!(
            "unit produced {} outputs",
            outputs.len()
        )));
    }
    outputs.pop().unwrap().floats()
}

/// Evaluate a sub-graph over the batch, resolving raw columns and group
/// references. Row ranges are processed in parallel and reassembled in
/// order, so results are identical at any thread count.
fn eval_graph_over_batch(
    graph: &crate::expr::ExprGraph,
    store: &ModelStore,
    batch: &ExecBatch,
    map: &FactorizationMap,
    opts: &ExecOptions,
    unknown_categories: &mut u64,
) -> Result<Vec<Batch>> {
    let rows = batch.rows;
    let chunk = opts.parallel_rows.max(1);
    let uses_strings = graph
        .nodes
        .iter()
        .any(|n| matches!(n.op, ExprOp::OneHot { .. }));
    if uses_strings {
        // Count dictionary misses once, over the whole batch.
        for node in &graph.nodes {
            if let ExprOp::OneHot { encoder } = &node.op {
                let spec = store.encoder(encoder)?;
                if let ExprOp::InputRef { columns } = &graph.node(node.inputs[0]).op {
                    if let Batch::S(values) = resolve_columns(batch, columns, 0, rows)? {
                        *unknown_categories += values
                            .iter()
                            .filter(|v| !spec.categories.contains(v))
                            .count() as u64;
                    }
                }
            }
        }
    }

    if rows > chunk && rayon::current_num_threads() > 1 {
        let ranges: Vec<(usize, usize)> = (0..rows.div_ceil(chunk))
            .map(|i| (i * chunk, ((i + 1) * chunk).min(rows)))
            .collect();
        let parts: Vec<Result<Vec<Batch>>> = ranges
            .par_iter()
            .map(|&(lo, hi)| {
                let mut resolve = |node: &crate::expr::ExprNode| -> Result<Batch> {
                    resolve_node(batch, map, node, lo, hi)
                };
                evaluate_graph(graph, store, hi - lo, &mut resolve)
            })
            .collect();
        let mut merged: Option<Vec<Batch>> = None;
        for part in parts {
            let part = part?;
            match &mut merged {
                None => merged = Some(part),
                Some(acc) => {
                    for (a, p) in acc.iter_mut().zip(part) {
                        append_batch(a, p)?;
                    }
                }
            }
        }
        Ok(merged.expect("at least one chunk"))
    } else {
        let mut resolve =
            |node: &crate::expr::ExprNode| -> Result<Batch> { resolve_node(batch, map, node, 0, rows) };
        evaluate_graph(graph, store, rows, &mut resolve)
    }
}

fn append_batch(acc: &mut Batch, part: Batch) -> Result<()> {
    match (acc, part) {
        (Batch::F(a), Batch::F(p)) => {
            a.data.extend(p.data);
            a.rows += p.rows;
            Ok(())
        }
        (Batch::S(a), Batch::S(p)) => {
            a.extend(p);
            Ok(())
        }
        _ => Err(Error::Expr("chunk type mismatch".into())),
    }
}

fn resolve_node(
    batch: &ExecBatch,
    map: &FactorizationMap,
    node: &crate::expr::ExprNode,
    lo: usize,
    hi: usize,
) -> Result<Batch> {
    match &node.op {
        ExprOp::InputRef { columns } => resolve_columns(batch, columns, lo, hi),
        ExprOp::GroupRef { group } => {
            let combined = materialize_group(batch, map, *group, lo, hi)?;
            Ok(Batch::F(combined))
        }
        other => Err(Error::Expr(format!(
            "resolver asked for non-source op {other:?}"
        ))),
    }
}

/// Gather the named raw columns into one numeric (or string) batch.
fn resolve_columns(batch: &ExecBatch, columns: &[String], lo: usize, hi: usize) -> Result<Batch> {
    let rows = hi - lo;
    if columns.len() == 1 {
        let col = batch.column(&columns[0])?;
        if let ColumnData::Str(v) = &col.data {
            return Ok(Batch::S(v[lo..hi].to_vec()));
        }
    }
    let mut parts: Vec<(&ColumnData, usize)> = Vec::with_capacity(columns.len());
    let mut dim = 0usize;
    for name in columns {
        let col = batch.column(name)?;
        let slots = col.dtype().slots();
        if matches!(col.data, ColumnData::Str(_)) {
            return Err(Error::Expr(format!(
                "string column `{name}` cannot join a numeric vector"
            )));
        }
        parts.push((&col.data, slots));
        dim += slots;
    }
    let mut data = Vec::with_capacity(rows * dim);
    for r in lo..hi {
        for (col, slots) in &parts {
            match col {
                ColumnData::Float32(v) => data.push(v[r]),
                ColumnData::Int64(v) => data.push(v[r] as f32),
                ColumnData::FloatArray { dim, data: d } => {
                    data.extend_from_slice(&d[r * dim..(r + 1) * dim])
                }
                ColumnData::Str(_) => unreachable!(),
            }
            let _ = slots;
        }
    }
    Ok(Batch::F(DenseMatrix { rows, cols: dim, data }))
}

/// Fold all of a group's present blocks into its combined value for a
/// row range, in member-position order.
fn materialize_group(
    batch: &ExecBatch,
    map: &FactorizationMap,
    group: usize,
    lo: usize,
    hi: usize,
) -> Result<DenseMatrix> {
    let mut members: Vec<&BlockCol> = batch
        .blocks
        .iter()
        .filter(|b| b.meta.group == group)
        .collect();
    if members.is_empty() {
        return Err(Error::Expr(format!("group {group} has no blocks here")));
    }
    members.sort_by_key(|b| b.meta.lo);
    let rows = hi - lo;
    let kind = map.groups[group].combine;
    let mut acc = slice_matrix(&members[0].data, lo, hi);
    for b in &members[1..] {
        let part = slice_matrix(&b.data, lo, hi);
        match kind {
            CombineKind::Sum => {
                for (a, p) in acc.data.iter_mut().zip(&part.data) {
                    *a += p;
                }
            }
            CombineKind::And => {
                for (a, p) in acc.data.iter_mut().zip(&part.data) {
                    *a = f32::from_bits(a.to_bits() & p.to_bits());
                }
            }
            CombineKind::Concat => {
                let dim = acc.cols + part.cols;
                let mut data = Vec::with_capacity(rows * dim);
                for r in 0..rows {
                    data.extend_from_slice(acc.row(r));
                    data.extend_from_slice(part.row(r));
                }
                acc = DenseMatrix { rows, cols: dim, data };
            }
            CombineKind::Independent => {
                return Err(Error::Expr(format!(
                    "group {group} is independent but has several blocks"
                )))
            }
        }
    }
    Ok(acc)
}

fn slice_matrix(m: &DenseMatrix, lo: usize, hi: usize) -> DenseMatrix {
    DenseMatrix {
        rows: hi - lo,
        cols: m.cols,
        data: m.data[lo * m.cols..hi * m.cols].to_vec(),
    }
}

/// Physically merge same-group blocks in the batch, mirroring the width
/// model's fold rules (Sum adds, And intersects, Concat joins adjacent
/// position runs, Independent never folds).
fn fold_batch_blocks(
    batch: &mut ExecBatch,
    map: &FactorizationMap,
    only: Option<&[usize]>,
) -> Result<()> {
    batch.blocks.sort_by_key(|b| (b.meta.group, b.meta.lo));
    let mut out: Vec<BlockCol> = Vec::with_capacity(batch.blocks.len());
    for b in batch.blocks.drain(..) {
        let kind = map.groups[b.meta.group].combine;
        let foldable = !matches!(kind, CombineKind::Independent)
            && only.map(|t| t.contains(&b.meta.group)).unwrap_or(true);
        if !foldable {
            out.push(b);
            continue;
        }
        let merged = match out.last_mut() {
            Some(prev) if prev.meta.group == b.meta.group => match kind {
                CombineKind::Concat => {
                    if prev.meta.hi + 1 == b.meta.lo {
                        let rows = prev.data.rows;
                        let dim = prev.data.cols + b.data.cols;
                        let mut data = Vec::with_capacity(rows * dim);
                        for r in 0..rows {
                            data.extend_from_slice(prev.data.row(r));
                            data.extend_from_slice(b.data.row(r));
                        }
                        prev.data = DenseMatrix { rows, cols: dim, data };
                        prev.meta.dim = dim;
                        prev.meta.hi = b.meta.hi;
                        true
                    } else {
                        false
                    }
                }
                CombineKind::Sum => {
                    for (a, p) in prev.data.data.iter_mut().zip(&b.data.data) {
                        *a += p;
                    }
                    prev.meta.hi = prev.meta.hi.max(b.meta.hi);
                    true
                }
                CombineKind::And => {
                    for (a, p) in prev.data.data.iter_mut().zip(&b.data.data) {
                        *a = f32::from_bits(a.to_bits() & p.to_bits());
                    }
                    prev.meta.hi = prev.meta.hi.max(b.meta.hi);
                    true
                }
                CombineKind::Independent => unreachable!(),
            },
            _ => false,
        };
        if !merged {
            out.push(b);
        }
    }
    batch.blocks = out;
    Ok(())
}
