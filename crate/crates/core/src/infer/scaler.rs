//! Feature preprocessing: min-max scaling and one-hot encoding.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Per-feature (min, max) ranges.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScalerSpec {
    pub mins: Vec<f32>,
    pub maxs: Vec<f32>,
}

impl ScalerSpec {
    pub fn validate(&self) -> Result<()> {
        if self.mins.len() != self.maxs.len() {
            return Err(Error::Model("scaler min/max length mismatch".into()));
        }
        for (i, (lo, hi)) in self.mins.iter().zip(&self.maxs).enumerate() {
            if hi < lo {
                return Err(Error::Model(format!("scaler feature {i}: max {hi} < min {lo}")));
            }
        }
        Ok(())
    }

    /// Fit from columns of data (per-feature min/max).
    pub fn fit(rows: &[Vec<f32>], dim: usize) -> Self {
        let mut mins = vec![f32::INFINITY; dim];
        let mut maxs = vec![f32::NEG_INFINITY; dim];
        for row in rows {
            for d in 0..dim {
                mins[d] = mins[d].min(row[d]);
                maxs[d] = maxs[d].max(row[d]);
            }
        }
        if rows.is_empty() {
            mins.fill(0.0);
            maxs.fill(1.0);
        }
        ScalerSpec { mins, maxs }
    }
}

/// (x - min) / (max - min) per feature; a degenerate range maps to 0.
pub fn min_max_scale(x: &[f32], spec: &ScalerSpec) -> Result<Vec<f32>> {
    if x.len() != spec.mins.len() {
        return Err(Error::DimMismatch(format!(
            "{} features, scaler covers {}",
            x.len(),
            spec.mins.len()
        )));
    }
    Ok(x.iter()
        .enumerate()
        .map(|(d, &v)| {
            let range = spec.maxs[d] - spec.mins[d];
            if range == 0.0 {
                0.0
            } else {
                (v - spec.mins[d]) / range
            }
        })
        .collect())
}

/// Category dictionary for one-hot encoding.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OneHotSpec {
    pub categories: Vec<String>,
}

impl OneHotSpec {
    pub fn validate(&self) -> Result<()> {
        if self.categories.is_empty() {
            return Err(Error::Model("one-hot dictionary is empty".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.categories.len()
    }
}

/// One-hot vector with exactly one bit set for known categories. An
/// unknown category yields the all-zero vector and `known = false`, so
/// callers can count the misses.
pub fn one_hot(value: &str, spec: &OneHotSpec) -> (Vec<f32>, bool) {
    let mut out = vec![0.0f32; spec.categories.len()];
    match spec.categories.iter().position(|c| c == value) {
        Some(i) => {
            out[i] = 1.0;
            (out, true)
        }
        None => (out, false),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn min_maps_to_zero_max_to_one() {
        let spec = ScalerSpec {
            mins: vec![-2.0, 0.0],
            maxs: vec![2.0, 10.0],
        };
        assert_eq!(min_max_scale(&[-2.0, 0.0], &spec).unwrap(), vec![0.0, 0.0]);
        assert_eq!(min_max_scale(&[2.0, 10.0], &spec).unwrap(), vec![1.0, 1.0]);
    }

    #[test]
    fn degenerate_range_maps_to_zero() {
        let spec = ScalerSpec {
            mins: vec![3.0],
            maxs: vec![3.0],
        };
        assert_eq!(min_max_scale(&[3.0], &spec).unwrap(), vec![0.0]);
    }

    #[test]
    fn one_hot_sets_single_bit() {
        let spec = OneHotSpec {
            categories: vec!["a".into(), "b".into(), "c".into()],
        };
        let (v, known) = one_hot("b", &spec);
        assert!(known);
        assert_eq!(v, vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn unknown_category_is_all_zero() {
        let spec = OneHotSpec {
            categories: vec!["a".into()],
        };
        let (v, known) = one_hot("zzz", &spec);
        assert!(!known);
        assert_eq!(v, vec![0.0]);
    }
}
