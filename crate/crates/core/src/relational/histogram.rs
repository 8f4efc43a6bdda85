//! Equi-depth histograms and two-sided join cardinality estimation.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

use super::table::{Column, ColumnData};

pub const DEFAULT_BUCKETS: usize = 100;

/// Equi-depth histogram over a numeric column. `bounds` has one more
/// entry than `counts` and is strictly increasing; bucket `i` covers
/// `[bounds[i], bounds[i+1])` with the last bucket closed on the right.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Histogram {
    pub column: String,
    pub bucket_count: usize,
    pub bounds: Vec<f64>,
    pub counts: Vec<u64>,
    pub distinct_estimate: f64,
    pub row_count: u64,
}

/// Build an equi-depth histogram: bucket counts differ by at most one
/// before buckets with duplicate boundaries are merged. The distinct
/// estimate is the exact distinct count.
pub fn build_histogram(column: &Column, bucket_count: usize) -> Result<Histogram> {
    let values: Vec<f64> = match &column.data {
        ColumnData::Int64(v) => v.iter().map(|&x| x as f64).collect(),
        ColumnData::Float32(v) => v.iter().map(|&x| x as f64).collect(),
        _ => return Err(Error::NonNumericColumn(column.name.clone())),
    };
    assert!(bucket_count >= 1, "bucket_count must be >= 1");

    if values.is_empty() {
        return Ok(Histogram {
            column: column.name.clone(),
            bucket_count: 0,
            bounds: vec![0.0, 1.0],
            counts: vec![0],
            distinct_estimate: 1.0,
            row_count: 0,
        });
    }

    let integer_domain = matches!(column.data, ColumnData::Int64(_));
    let mut sorted = values;
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    let distinct = {
        let mut d = 1u64;
        for i in 1..n {
            if sorted[i] != sorted[i - 1] {
                d += 1;
            }
        }
        d as f64
    };

    // Equi-depth cut indices, advanced past duplicate runs so a value
    // never straddles a bucket boundary. Cuts advanced onto each other
    // merge (the duplicate-boundary merging step).
    let buckets = bucket_count.min(n);
    let mut cuts = vec![0usize];
    for i in 1..buckets {
        let mut c = i * n / buckets;
        while c < n && sorted[c] == sorted[c - 1] {
            c += 1;
        }
        if c > *cuts.last().unwrap() && c < n {
            cuts.push(c);
        }
    }
    cuts.push(n);

    let mut bounds = Vec::with_capacity(cuts.len());
    let mut counts = Vec::with_capacity(cuts.len() - 1);
    bounds.push(sorted[0]);
    for w in cuts.windows(2) {
        counts.push((w[1] - w[0]) as u64);
        let upper = if w[1] == n {
            // Integer values occupy unit intervals [v, v+1); floats get
            // the next representable value so the max stays inside.
            if integer_domain {
                sorted[n - 1] + 1.0
            } else {
                next_up(sorted[n - 1])
            }
        } else {
            sorted[w[1]]
        };
        bounds.push(upper);
    }

    Ok(Histogram {
        column: column.name.clone(),
        bucket_count: counts.len(),
        bounds,
        counts,
        distinct_estimate: distinct,
        row_count: n as u64,
    })
}

fn next_up(x: f64) -> f64 {
    let next = f64::from_bits(if x >= 0.0 {
        x.to_bits() + 1
    } else {
        x.to_bits() - 1
    });
    if next > x {
        next
    } else {
        x + f64::EPSILON
    }
}

impl Histogram {
    /// Scale row counts by `factor`, keeping distincts. Used to model the
    /// key distribution of an intermediate join result from its base
    /// table under key independence.
    pub fn scaled(&self, factor: f64) -> Histogram {
        let mut h = self.clone();
        h.counts = self
            .counts
            .iter()
            .map(|&c| (c as f64 * factor).round() as u64)
            .collect();
        h.row_count = (self.row_count as f64 * factor).round() as u64;
        h
    }

    fn bucket_width(&self, i: usize) -> f64 {
        self.bounds[i + 1] - self.bounds[i]
    }

    /// Distinct values attributed to a sub-range of bucket `i`, assuming
    /// distincts spread uniformly over the column's value range. Capped
    /// by the rows in the sub-range: a narrow bucket packed with
    /// duplicates holds few distincts even when its count is large.
    fn distinct_in(&self, overlap: f64, rows_in_seg: f64) -> f64 {
        let total_range = self.bounds[self.bucket_count] - self.bounds[0];
        let est = if total_range <= 0.0 {
            self.distinct_estimate
        } else {
            self.distinct_estimate * overlap / total_range
        };
        est.min(rows_in_seg).max(1.0)
    }
}

/// Histogram-based inner equi-join cardinality estimate: per pair of
/// overlapping buckets, `|L|*|R| / max(V(L), V(R))` with uniform
/// interpolation inside buckets. Returns 0 for disjoint ranges; the
/// estimate is exact when both sides are unique keys over aligned
/// domains.
pub fn estimate_join_cardinality(left: &Histogram, right: &Histogram) -> f64 {
    if left.row_count == 0 || right.row_count == 0 {
        return 0.0;
    }
    let mut total = 0.0;
    for i in 0..left.bucket_count {
        if left.counts[i] == 0 {
            continue;
        }
        for j in 0..right.bucket_count {
            if right.counts[j] == 0 {
                continue;
            }
            let lo = left.bounds[i].max(right.bounds[j]);
            let hi = left.bounds[i + 1].min(right.bounds[j + 1]);
            if hi <= lo {
                continue;
            }
            let seg = hi - lo;
            let lw = left.bucket_width(i);
            let rw = right.bucket_width(j);
            let lf = if lw > 0.0 { (seg / lw).min(1.0) } else { 1.0 };
            let rf = if rw > 0.0 { (seg / rw).min(1.0) } else { 1.0 };
            let l_rows = left.counts[i] as f64 * lf;
            let r_rows = right.counts[j] as f64 * rf;
            let l_distinct = left.distinct_in(seg, l_rows);
            let r_distinct = right.distinct_in(seg, r_rows);
            total += l_rows * r_rows / l_distinct.max(r_distinct);
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::relational::table::Column;

    fn col(values: Vec<i64>) -> Column {
        Column::new("k", "t", ColumnData::Int64(values))
    }

    #[test]
    fn constant_column_collapses_to_one_bucket() {
        let h = build_histogram(&col(vec![5; 100]), 4).unwrap();
        assert_eq!(h.bucket_count, 1);
        assert_eq!(h.counts, vec![100]);
        assert_eq!(h.distinct_estimate, 1.0);
    }

    #[test]
    fn uniform_equi_depth_counts() {
        let h = build_histogram(&col((1..=100).collect()), 4).unwrap();
        assert_eq!(h.counts, vec![25, 25, 25, 25]);
        assert!(h.bounds.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn counts_sum_to_rows() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let values: Vec<i64> = (0..997).map(|_| rng.random_range(0..50)).collect();
        let h = build_histogram(&col(values), 16).unwrap();
        assert_eq!(h.counts.iter().sum::<u64>(), 997);
    }

    #[test]
    fn non_numeric_rejected() {
        let c = Column::new("s", "t", ColumnData::Str(vec!["a".into()]));
        assert!(build_histogram(&c, 4).is_err());
    }

    #[test]
    fn disjoint_ranges_estimate_zero() {
        let a = build_histogram(&col((0..100).collect()), 10).unwrap();
        let b = build_histogram(&col((1000..1100).collect()), 10).unwrap();
        assert_eq!(estimate_join_cardinality(&a, &b), 0.0);
    }

    #[test]
    fn unique_unique_identical_domain_is_exact() {
        for n in [10i64, 100, 1000] {
            let a = build_histogram(&col((0..n).collect()), 10).unwrap();
            let b = build_histogram(&col((0..n).collect()), 10).unwrap();
            let est = estimate_join_cardinality(&a, &b);
            assert!(
                (est - n as f64).abs() < 1e-6,
                "n={n} estimate={est}"
            );
        }
    }
}
