//! Product quantization: per-part distance tables and their combination
//! into approximate nearest-neighbor results.
//!
//! The squared distance to a database vector decomposes exactly over the
//! parts (each part's centroid substitutes for the stored sub-vector),
//! so per-part tables computed at different join-tree nodes combine into
//! bit-identical distances as long as the summation order is fixed:
//! parts ascending, and within a part dimensions ascending.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

use super::dense::DenseMatrix;

/// One sub-vector partition: `centroids` is clusters x subdim.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PqPart {
    pub offset: usize,
    pub len: usize,
    pub centroids: DenseMatrix,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PqModel {
    pub parts: Vec<PqPart>,
    /// codes[i][k] is the cluster id of database vector i's k-th part.
    pub codes: Vec<Vec<u16>>,
    pub k_neighbors: usize,
}

impl PqModel {
    pub fn query_dim(&self) -> usize {
        self.parts.iter().map(|p| p.len).sum()
    }

    pub fn database_size(&self) -> usize {
        self.codes.len()
    }

    pub fn validate(&self) -> Result<()> {
        let mut expected = 0usize;
        for (k, part) in self.parts.iter().enumerate() {
            if part.offset != expected {
                return Err(Error::Model(format!(
                    "part {k} starts at {}, expected {expected}",
                    part.offset
                )));
            }
            if part.centroids.cols != part.len {
                return Err(Error::Model(format!(
                    "part {k}: centroid dim {} != part length {}",
                    part.centroids.cols, part.len
                )));
            }
            expected += part.len;
        }
        for (i, code) in self.codes.iter().enumerate() {
            if code.len() != self.parts.len() {
                return Err(Error::Model(format!(
                    "vector {i} has {} codes, expected {}",
                    code.len(),
                    self.parts.len()
                )));
            }
            for (k, &c) in code.iter().enumerate() {
                if (c as usize) >= self.parts[k].centroids.rows {
                    return Err(Error::Model(format!(
                        "vector {i} part {k}: cluster {c} out of range"
                    )));
                }
            }
        }
        if self.k_neighbors == 0 || self.k_neighbors > self.codes.len() {
            return Err(Error::Model(format!(
                "k_neighbors {} out of range for database of {}",
                self.k_neighbors,
                self.codes.len()
            )));
        }
        Ok(())
    }
}

/// Distance table for one part: table[j] = squared L2 distance between
/// the query sub-vector and centroid j.
pub fn pq_partial(x_k: &[f32], centroids: &DenseMatrix) -> Result<Vec<f32>> {
    if x_k.len() != centroids.cols {
        return Err(Error::DimMismatch(format!(
            "sub-vector has {} dims, centroids expect {}",
            x_k.len(),
            centroids.cols
        )));
    }
    let mut table = Vec::with_capacity(centroids.rows);
    for j in 0..centroids.rows {
        let c = centroids.row(j);
        let mut acc = 0.0f32;
        for (xv, cv) in x_k.iter().zip(c) {
            let d = xv - cv;
            acc += d * d;
        }
        table.push(acc);
    }
    Ok(table)
}

/// Approximate distances to every database vector: sqrt of the per-part
/// table entries summed in part order.
pub fn pq_distances(model: &PqModel, tables: &[Vec<f32>]) -> Result<Vec<f32>> {
    if tables.len() != model.parts.len() {
        return Err(Error::DimMismatch(format!(
            "{} tables for {} parts",
            tables.len(),
            model.parts.len()
        )));
    }
    Ok(model
        .codes
        .iter()
        .map(|code| {
            let mut acc = 0.0f32;
            for (k, &c) in code.iter().enumerate() {
                acc += tables[k][c as usize];
            }
            acc.sqrt()
        })
        .collect())
}

/// k nearest database vectors by approximate distance, ties broken by
/// ascending database index.
pub fn pq_combine(model: &PqModel, tables: &[Vec<f32>]) -> Result<(Vec<usize>, Vec<f32>)> {
    let distances = pq_distances(model, tables)?;
    if model.k_neighbors > distances.len() {
        return Err(Error::Model(format!(
            "k_neighbors {} exceeds database size {}",
            model.k_neighbors,
            distances.len()
        )));
    }
    let mut order: Vec<usize> = (0..distances.len()).collect();
    order.sort_by(|&a, &b| {
        distances[a]
            .partial_cmp(&distances[b])
            .unwrap()
            .then(a.cmp(&b))
    });
    order.truncate(model.k_neighbors);
    let dists = order.iter().map(|&i| distances[i]).collect();
    Ok((order, dists))
}

/// Random quantizer with equal part sizes, for tests and synthetic
/// workloads.
pub fn random_pq_model<R: rand::Rng>(
    rng: &mut R,
    parts: usize,
    subdim: usize,
    clusters: usize,
    db: usize,
    k: usize,
) -> PqModel {
    let parts_vec = (0..parts)
        .map(|p| PqPart {
            offset: p * subdim,
            len: subdim,
            centroids: DenseMatrix::new(
                clusters,
                subdim,
                (0..clusters * subdim)
                    .map(|_| rng.random_range(-1.0f32..1.0))
                    .collect(),
            )
            .unwrap(),
        })
        .collect();
    let codes = (0..db)
        .map(|_| {
            (0..parts)
                .map(|_| rng.random_range(0..clusters as u16))
                .collect()
        })
        .collect();
    PqModel {
        parts: parts_vec,
        codes,
        k_neighbors: k,
    }
}
