//! Inner hash equi-join over columnar tables.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::{Error, Result};

use super::table::{Column, ColumnData, Table};

#[derive(Debug, Clone, Copy)]
pub struct JoinOptions {
    /// Minimum probe rows before the probe side is partitioned across
    /// workers. Partitions merge in index order, so results are identical
    /// at any thread count.
    pub parallel_threshold: usize,
}

impl Default for JoinOptions {
    fn default() -> Self {
        JoinOptions {
            parallel_threshold: 16 * 1024,
        }
    }
}

#[derive(Clone, PartialEq, Eq, Hash)]
enum Key {
    Int(i64),
    Str(String),
}

fn key_at(data: &ColumnData, row: usize) -> Key {
    match data {
        ColumnData::Int64(v) => Key::Int(v[row]),
        ColumnData::Str(v) => Key::Str(v[row].clone()),
        _ => unreachable!("key columns are int64 or string"),
    }
}

/// Inner equi-join. Output columns are the left columns followed by the
/// right columns with the right key dropped; lineage is preserved.
///
/// Row order is deterministic: left-major, and for each left row the
/// matching right rows appear in right-table order. The hash table is
/// built over the smaller input (ties go to the left input); the choice
/// affects performance only.
pub fn hash_join(
    left: &Table,
    right: &Table,
    left_key: &str,
    right_key: &str,
) -> Result<Table> {
    hash_join_with(left, right, left_key, right_key, &JoinOptions::default())
}

pub fn hash_join_with(
    left: &Table,
    right: &Table,
    left_key: &str,
    right_key: &str,
    opts: &JoinOptions,
) -> Result<Table> {
    let lkey = left.column(left_key)?;
    let rkey = right.column(right_key)?;
    match (lkey.dtype(), rkey.dtype()) {
        (a, b) if a == b => {}
        (a, b) => {
            return Err(Error::KeyTypeMismatch {
                left: format!("{a:?}"),
                right: format!("{b:?}"),
            })
        }
    }
    if !matches!(lkey.data, ColumnData::Int64(_) | ColumnData::Str(_)) {
        return Err(Error::KeyTypeMismatch {
            left: format!("{:?}", lkey.dtype()),
            right: "int64 or string".to_string(),
        });
    }

    let (lidx, ridx) = join_match_indices(
        &lkey.data,
        left.row_count,
        &rkey.data,
        right.row_count,
        opts,
    );

    let mut columns = Vec::with_capacity(left.columns.len() + right.columns.len() - 1);
    for c in &left.columns {
        columns.push(Column {
            name: c.name.clone(),
            lineage: c.lineage.clone(),
            data: c.data.gather(&lidx),
        });
    }
    for c in &right.columns {
        if c.name == right_key {
            continue;
        }
        let name = if left.column_index(&c.name).is_some() {
            format!("{}.{}", right.name, c.name)
        } else {
            c.name.clone()
        };
        columns.push(Column {
            name,
            lineage: c.lineage.clone(),
            data: c.data.gather(&ridx),
        });
    }
    Table::new(format!("{}_{}", left.name, right.name), columns)
}

/// Matching (left, right) row index pairs in the deterministic
/// left-major order. The hash table is built over the smaller side.
pub(crate) fn join_match_indices(
    left_key: &ColumnData,
    left_rows: usize,
    right_key: &ColumnData,
    right_rows: usize,
    opts: &JoinOptions,
) -> (Vec<usize>, Vec<usize>) {
    if right_rows <= left_rows {
        // Build on right, probe left in order: naturally left-major.
        let table = build_table(right_key, right_rows);
        probe_pairs(left_key, left_rows, &table, opts, false)
    } else {
        // Build on left, probe right; regroup matches per left row to
        // keep the left-major contract.
        let table = build_table(left_key, left_rows);
        let (r, l) = probe_pairs(right_key, right_rows, &table, opts, false);
        regroup_left_major(left_rows, &l, &r)
    }
}

fn build_table(key: &ColumnData, rows: usize) -> HashMap<Key, Vec<usize>> {
    let mut map: HashMap<Key, Vec<usize>> = HashMap::with_capacity(rows);
    for row in 0..rows {
        map.entry(key_at(key, row)).or_default().push(row);
    }
    map
}

/// Probe `key` rows in order against the build table, returning
/// (probe indices, build indices). Partitions the probe side when large;
/// chunks are concatenated in partition-index order.
fn probe_pairs(
    key: &ColumnData,
    rows: usize,
    table: &HashMap<Key, Vec<usize>>,
    opts: &JoinOptions,
    _swap: bool,
) -> (Vec<usize>, Vec<usize>) {
    let probe_chunk = |range: std::ops::Range<usize>| {
        let mut p = Vec::new();
        let mut b = Vec::new();
        for row in range {
            if let Some(matches) = table.get(&key_at(key, row)) {
                for &m in matches {
                    p.push(row);
                    b.push(m);
                }
            }
        }
        (p, b)
    };

    if rows >= opts.parallel_threshold && rayon::current_num_threads() > 1 {
        let chunk = rows.div_ceil(rayon::current_num_threads() * 4).max(1);
        let ranges: Vec<_> = (0..rows.div_ceil(chunk))
            .map(|i| i * chunk..((i + 1) * chunk).min(rows))
            .collect();
        let parts: Vec<_> = ranges.into_par_iter().map(probe_chunk).collect();
        let mut p = Vec::new();
        let mut b = Vec::new();
        for (cp, cb) in parts {
            p.extend(cp);
            b.extend(cb);
        }
        (p, b)
    } else {
        probe_chunk(0..rows)
    }
}

/// Reorder (left, right) match pairs produced right-major into the
/// left-major contract order.
fn regroup_left_major(
    left_rows: usize,
    l: &[usize],
    r: &[usize],
) -> (Vec<usize>, Vec<usize>) {
    let mut per_left: Vec<Vec<usize>> = vec![Vec::new(); left_rows];
    for (&li, &ri) in l.iter().zip(r) {
        per_left[li].push(ri);
    }
    let mut lidx = Vec::with_capacity(l.len());
    let mut ridx = Vec::with_capacity(r.len());
    for (li, matches) in per_left.into_iter().enumerate() {
        // Probe order over the right side is ascending within each bucket.
        for ri in matches {
            lidx.push(li);
            ridx.push(ri);
        }
    }
    (lidx, ridx)
}
