//! Result comparison between two executions of the same query.

use serde::{Deserialize, Serialize};

use crate::relational::{ColumnData, Table};
use crate::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ColumnDivergence {
    pub column: String,
    pub max_abs: f64,
    pub max_rel: f64,
    /// (row, slot) of the worst cell.
    pub worst_cell: (usize, usize),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerifyReport {
    pub pass: bool,
    pub rel_tol: f64,
    pub max_rel: f64,
    pub columns: Vec<ColumnDivergence>,
}

/// Compare two result tables after aligning rows on the `__row`
/// identity column. Columns listed in `exact` must match bit for bit;
/// the rest pass under the relative tolerance.
pub fn verify(a: &Table, b: &Table, rel_tol: f64, exact: &[String]) -> Result<VerifyReport> {
    if a.row_count != b.row_count {
        return Err(Error::SchemaMismatch(format!(
            "row counts differ: {} vs {}",
            a.row_count, b.row_count
        )));
    }
    let names_a: Vec<&str> = a.columns.iter().map(|c| c.name.as_str()).collect();
    let names_b: Vec<&str> = b.columns.iter().map(|c| c.name.as_str()).collect();
    if names_a != names_b {
        return Err(Error::SchemaMismatch(format!(
            "column sets differ: {names_a:?} vs {names_b:?}"
        )));
    }

    let order_a = row_order(a)?;
    let order_b = row_order(b)?;

    let mut columns = Vec::new();
    let mut max_rel = 0.0f64;
    let mut pass = true;
    for (ca, cb) in a.columns.iter().zip(&b.columns) {
        if ca.name == "__row" {
            continue;
        }
        let exact_col = exact.iter().any(|e| e == &ca.name);
        let mut div = ColumnDivergence {
            column: ca.name.clone(),
            max_abs: 0.0,
            max_rel: 0.0,
            worst_cell: (0, 0),
        };
        for row in 0..a.row_count {
            let (ra, rb) = (order_a[row], order_b[row]);
            compare_cell(&ca.data, ra, &cb.data, rb, row, &mut div)?;
        }
        let col_pass = if exact_col {
            div.max_abs == 0.0
        } else {
            div.max_rel <= rel_tol
        };
        pass &= col_pass;
        max_rel = max_rel.max(div.max_rel);
        columns.push(div);
    }
    Ok(VerifyReport {
        pass,
        rel_tol,
        max_rel,
        columns,
    })
}

fn row_order(t: &Table) -> Result<Vec<usize>> {
    let key = t.column("__row")?;
    let keys = match &key.data {
        ColumnData::Int64(v) => v,
        _ => return Err(Error::SchemaMismatch("__row must be int64".into())),
    };
    let mut order: Vec<usize> = (0..t.row_count).collect();
    order.sort_by_key(|&i| keys[i]);
    Ok(order)
}

fn compare_cell(
    a: &ColumnData,
    ra: usize,
    b: &ColumnData,
    rb: usize,
    row: usize,
    div: &mut ColumnDivergence,
) -> Result<()> {
    let mut update = |x: f64, y: f64, slot: usize| {
        let abs = (x - y).abs();
        let rel = abs / (1.0 + y.abs());
        if abs > div.max_abs {
            div.max_abs = abs;
            div.worst_cell = (row, slot);
        }
        div.max_rel = div.max_rel.max(rel);
    };
    match (a, b) {
        (ColumnData::Float32(va), ColumnData::Float32(vb)) => {
            update(va[ra] as f64, vb[rb] as f64, 0);
        }
        (ColumnData::Int64(va), ColumnData::Int64(vb)) => {
            update(va[ra] as f64, vb[rb] as f64, 0);
        }
        (
            ColumnData::FloatArray { dim, data: da },
            ColumnData::FloatArray { dim: db_dim, data: db },
        ) => {
            if dim != db_dim {
                return Err(Error::SchemaMismatch(format!(
                    "array dims differ: {dim} vs {db_dim}"
                )));
            }
            for s in 0..*dim {
                update(
                    da[ra * dim + s] as f64,
                    db[rb * dim + s] as f64,
                    s,
                );
            }
        }
        (ColumnData::Str(va), ColumnData::Str(vb)) => {
            if va[ra] != vb[rb] {
                update(1.0, 0.0, 0);
            }
        }
        _ => return Err(Error::SchemaMismatch("column type mismatch".into())),
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::relational::Column;

    fn result_table(values: Vec<f32>) -> Table {
        let n = values.len();
        Table::new(
            "r",
            vec![
                Column::new("__row", "r", ColumnData::Int64((0..n as i64).collect())),
                Column::new("out_0", "r", ColumnData::Float32(values)),
            ],
        )
        .unwrap()
    }

    #[test]
    fn identical_tables_have_zero_divergence() {
        let a = result_table(vec![1.0, 2.0, 3.0]);
        let report = verify(&a, &a, 1e-6, &[]).unwrap();
        assert!(report.pass);
        assert_eq!(report.max_rel, 0.0);
    }

    #[test]
    fn perturbation_beyond_tolerance_fails_with_location() {
        let a = result_table(vec![1.0, 2.0, 3.0]);
        let b = result_table(vec![1.0, 2.001, 3.0]);
        let report = verify(&a, &b, 1e-4, &[]).unwrap();
        assert!(!report.pass);
        assert_eq!(report.columns[0].worst_cell, (1, 0));
    }

    #[test]
    fn exact_columns_reject_any_difference() {
        let a = result_table(vec![1.0, 2.0]);
        let b = result_table(vec![1.0, 2.0 + 2.0 * f32::EPSILON]);
        let report = verify(&a, &b, 1e-3, &[]).unwrap();
        assert!(report.pass);
        let report = verify(&a, &b, 1e-3, &["out_0".to_string()]).unwrap();
        assert!(!report.pass);
    }

    #[test]
    fn rows_align_on_identity() {
        let a = result_table(vec![1.0, 2.0, 3.0]);
        let mut b = result_table(vec![3.0, 1.0, 2.0]);
        // Permute b's identity so the logical rows still match.
        b.columns[0].data = ColumnData::Int64(vec![2, 0, 1]);
        let report = verify(&a, &b, 1e-6, &[]).unwrap();
        assert!(report.pass);
    }

    #[test]
    fn schema_mismatch_rejected() {
        let a = result_table(vec![1.0]);
        let mut b = result_table(vec![1.0]);
        b.columns[1].name = "out_9".into();
        assert!(verify(&a, &b, 1e-6, &[]).is_err());
    }
}
