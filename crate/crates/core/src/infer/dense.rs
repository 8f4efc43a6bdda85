//! Dense layers: monolithic forward pass, weight partitioning, partial
//! products and the aggregation that reassembles them.
//!
//! The factorization identity is W^T x = sum_i W_i^T x_i over a row
//! partition of W; bias and activation attach to the aggregation only,
//! since the activation is nonlinear.

use serde::{Deserialize, Serialize};

use crate::plan::NodeId;
use crate::{Error, Result};

/// Row-major float32 matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimMismatch(format!(
                "matrix {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(DenseMatrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Softmax,
    None,
}

impl Activation {
    pub fn apply_rows(&self, m: &mut DenseMatrix) {
        match self {
            Activation::None => {}
            Activation::Relu => {
                for v in &mut m.data {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            Activation::Softmax => {
                for r in 0..m.rows {
                    let row = &mut m.data[r * m.cols..(r + 1) * m.cols];
                    let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
                    let mut sum = 0.0f32;
                    for v in row.iter_mut() {
                        *v = (*v - max).exp();
                        sum += *v;
                    }
                    for v in row.iter_mut() {
                        *v /= sum;
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FfnnLayer {
    pub weight: DenseMatrix,
    pub bias: Vec<f32>,
    pub activation: Activation,
}

/// Feed-forward network: layer l's input dim equals layer l-1's output
/// dim, bias length equals the weight's column count.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FfnnModel {
    pub layers: Vec<FfnnLayer>,
}

impl FfnnModel {
    pub fn validate(&self) -> Result<()> {
        let mut prev_out: Option<usize> = None;
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.bias.len() != layer.weight.cols {
                return Err(Error::Model(format!(
                    "layer {i}: bias length {} != {} output columns",
                    layer.bias.len(),
                    layer.weight.cols
                )));
            }
            if let Some(out) = prev_out {
                if layer.weight.rows != out {
                    return Err(Error::Model(format!(
                        "layer {i}: input dim {} != previous output {out}",
                        layer.weight.rows
                    )));
                }
            }
            prev_out = Some(layer.weight.cols);
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map(|l| l.weight.rows).unwrap_or(0)
    }
}

/// X (batch x n) times W (n x k). Accumulation over the shared dimension
/// runs in ascending index order for every output element, which pins
/// the float32 result.
pub fn matmul(x: &DenseMatrix, w: &DenseMatrix) -> Result<DenseMatrix> {
    if x.cols != w.rows {
        return Err(Error::DimMismatch(format!(
            "batch has {} features, weight expects {}",
            x.cols, w.rows
        )));
    }
    let mut out = DenseMatrix::zeros(x.rows, w.cols);
    for r in 0..x.rows {
        let xrow = x.row(r);
        let orow = &mut out.data[r * w.cols..(r + 1) * w.cols];
        for (k, &xv) in xrow.iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            let wrow = &w.data[k * w.cols..(k + 1) * w.cols];
            for (o, &wv) in orow.iter_mut().zip(wrow) {
                *o += xv * wv;
            }
        }
    }
    Ok(out)
}

/// Full forward pass over a batch.
pub fn ffnn_forward(model: &FfnnModel, x: &DenseMatrix) -> Result<DenseMatrix> {
    let mut cur = x.clone();
    for layer in &model.layers {
        let mut next = matmul(&cur, &layer.weight)?;
        add_bias(&mut next, &layer.bias)?;
        layer.activation.apply_rows(&mut next);
        cur = next;
    }
    Ok(cur)
}

fn add_bias(m: &mut DenseMatrix, bias: &[f32]) -> Result<()> {
    if bias.len() != m.cols {
        return Err(Error::DimMismatch(format!(
            "bias length {} != {} columns",
            bias.len(),
            m.cols
        )));
    }
    for r in 0..m.rows {
        let row = &mut m.data[r * m.cols..(r + 1) * m.cols];
        for (v, b) in row.iter_mut().zip(bias) {
            *v += b;
        }
    }
    Ok(())
}

/// Contiguous input-feature ranges, one per source node, covering the
/// first layer's input dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeaturePartition {
    /// (source join-tree node, start feature, length).
    pub ranges: Vec<(NodeId, usize, usize)>,
}

impl FeaturePartition {
    pub fn validate(&self, input_dim: usize) -> Result<()> {
        let mut expected = 0usize;
        for &(_, start, len) in &self.ranges {
            if start != expected {
                return Err(Error::DimMismatch(format!(
                    "partition gap/overlap at feature {start}, expected {expected}"
                )));
            }
            expected = start + len;
        }
        if expected != input_dim {
            return Err(Error::DimMismatch(format!(
                "partition covers {expected} features, weight has {input_dim} rows"
            )));
        }
        Ok(())
    }
}

/// Split W's rows by the partition: piece i holds rows
/// [start_i, start_i + len_i). The bias is not split; it belongs to the
/// aggregation site.
pub fn partition_dense_layer(
    w: &DenseMatrix,
    partition: &FeaturePartition,
) -> Result<Vec<DenseMatrix>> {
    partition.validate(w.rows)?;
    Ok(partition
        .ranges
        .iter()
        .map(|&(_, start, len)| DenseMatrix {
            rows: len,
            cols: w.cols,
            data: w.data[start * w.cols..(start + len) * w.cols].to_vec(),
        })
        .collect())
}

/// One partial product X_i * W_i: no bias, no activation.
pub fn partial_dense(w_i: &DenseMatrix, x_i: &DenseMatrix) -> Result<DenseMatrix> {
    matmul(x_i, w_i)
}

/// Sum the partials in list order, add the bias, apply the activation.
pub fn aggregate_partials(
    parts: &[DenseMatrix],
    bias: &[f32],
    activation: Activation,
) -> Result<DenseMatrix> {
    let first = parts
        .first()
        .ok_or_else(|| Error::DimMismatch("no partials to aggregate".into()))?;
    let mut acc = first.clone();
    for p in &parts[1..] {
        if p.rows != acc.rows || p.cols != acc.cols {
            return Err(Error::DimMismatch(format!(
                "partial shape {}x{} != {}x{}",
                p.rows, p.cols, acc.rows, acc.cols
            )));
        }
        for (a, b) in acc.data.iter_mut().zip(&p.data) {
            *a += b;
        }
    }
    add_bias(&mut acc, bias)?;
    activation.apply_rows(&mut acc);
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Plain per-element reference: out[r][j] = sum_k x[r][k] * w[k][j].
    fn scalar_matmul(x: &DenseMatrix, w: &DenseMatrix) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(x.rows, w.cols);
        for r in 0..x.rows {
            for j in 0..w.cols {
                let mut acc = 0.0f32;
                for k in 0..x.cols {
                    acc += x.data[r * x.cols + k] * w.data[k * w.cols + j];
                }
                out.data[r * w.cols + j] = acc;
            }
        }
        out
    }

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DenseMatrix {
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-1.0f32..1.0))
            .collect();
        DenseMatrix::new(rows, cols, data).unwrap()
    }

    fn max_rel_diff(a: &DenseMatrix, b: &DenseMatrix) -> f32 {
        a.data
            .iter()
            .zip(&b.data)
            .map(|(x, y)| (x - y).abs() / (1.0 + y.abs()))
            .fold(0.0, f32::max)
    }

    #[test]
    fn identity_network_is_identity() {
        let model = FfnnModel {
            layers: vec![FfnnLayer {
                weight: DenseMatrix::identity(4),
                bias: vec![0.0; 4],
                activation: Activation::None,
            }],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_matrix(&mut rng, 3, 4);
        assert_eq!(ffnn_forward(&model, &x).unwrap(), x);
    }

    #[test]
    fn hand_arithmetic_single_layer() {
        // W = [[2],[3]], b = [1], x = [1,1] -> 2+3+1 = 6
        let model = FfnnModel {
            layers: vec![FfnnLayer {
                weight: DenseMatrix::new(2, 1, vec![2.0, 3.0]).unwrap(),
                bias: vec![1.0],
                activation: Activation::None,
            }],
        };
        let x = DenseMatrix::new(1, 2, vec![1.0, 1.0]).unwrap();
        assert_eq!(ffnn_forward(&model, &x).unwrap().data, vec![6.0]);
    }

    #[test]
    fn forward_matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let dims = [20usize, 16, 8, 4];
        let layers = (0..3)
            .map(|i| FfnnLayer {
                weight: random_matrix(&mut rng, dims[i], dims[i + 1]),
                bias: (0..dims[i + 1]).map(|_| rng.random_range(-0.5..0.5)).collect(),
                activation: if i == 2 {
                    Activation::Softmax
                } else {
                    Activation::Relu
                },
            })
            .collect();
        let model = FfnnModel { layers };
        let x = random_matrix(&mut rng, 64, 20);

        // Reference path built from the scalar loop.
        let mut expected = x.clone();
        for layer in &model.layers {
            let mut next = scalar_matmul(&expected, &layer.weight);
            for r in 0..next.rows {
                for c in 0..next.cols {
                    next.data[r * next.cols + c] += layer.bias[c];
                }
            }
            layer.activation.apply_rows(&mut next);
            expected = next;
        }
        let got = ffnn_forward(&model, &x).unwrap();
        assert!(max_rel_diff(&got, &expected) < 1e-5);
    }

    #[test]
    fn softmax_rows_sum_to_one_and_relu_nonnegative() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut m = random_matrix(&mut rng, 32, 7);
        let mut r = m.clone();
        Activation::Softmax.apply_rows(&mut m);
        for row in 0..m.rows {
            let s: f32 = m.row(row).iter().sum();
            assert!((s - 1.0).abs() < 1e-6, "row {row} sums to {s}");
        }
        Activation::Relu.apply_rows(&mut r);
        assert!(r.data.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn single_range_partition_is_whole_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let w = random_matrix(&mut rng, 6, 3);
        let partition = FeaturePartition {
            ranges: vec![(1, 0, 6)],
        };
        let parts = partition_dense_layer(&w, &partition).unwrap();
        assert_eq!(parts, vec![w]);
    }

    #[test]
    fn split_halves_reassemble() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = random_matrix(&mut rng, 4, 3);
        let partition = FeaturePartition {
            ranges: vec![(1, 0, 2), (2, 2, 2)],
        };
        let parts = partition_dense_layer(&w, &partition).unwrap();
        let mut stacked = parts[0].data.clone();
        stacked.extend_from_slice(&parts[1].data);
        assert_eq!(stacked, w.data);
    }

    #[test]
    fn partition_gap_rejected() {
        let w = DenseMatrix::zeros(4, 2);
        let partition = FeaturePartition {
            ranges: vec![(1, 0, 1), (2, 2, 2)],
        };
        assert!(partition_dense_layer(&w, &partition).is_err());
    }

    /// Factorization identity: sum_i X_i W_i equals X W within 1e-5.
    #[test]
    fn partial_sum_equals_monolithic() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..20 {
            let n = rng.random_range(4..40usize);
            let k = rng.random_range(1..16usize);
            let w = random_matrix(&mut rng, n, k);
            let x = random_matrix(&mut rng, 8, n);
            // Random contiguous partition of [0, n).
            let mut cuts: Vec<usize> = vec![0, n];
            for _ in 0..rng.random_range(0..4usize) {
                cuts.push(rng.random_range(0..=n));
            }
            cuts.sort_unstable();
            cuts.dedup();
            let ranges: Vec<(usize, usize, usize)> = cuts
                .windows(2)
                .enumerate()
                .map(|(i, w)| (i + 1, w[0], w[1] - w[0]))
                .collect();
            let partition = FeaturePartition { ranges };
            let parts_w = partition_dense_layer(&w, &partition).unwrap();
            let partials: Vec<DenseMatrix> = partition
                .ranges
                .iter()
                .zip(&parts_w)
                .map(|(&(_, start, len), wi)| {
                    let xi = DenseMatrix {
                        rows: x.rows,
                        cols: len,
                        data: (0..x.rows)
                            .flat_map(|r| x.row(r)[start..start + len].to_vec())
                            .collect(),
                    };
                    partial_dense(wi, &xi).unwrap()
                })
                .collect();
            let got = aggregate_partials(&partials, &vec![0.0; k], Activation::None).unwrap();
            let want = scalar_matmul(&x, &w);
            assert!(
                max_rel_diff(&got, &want) < 1e-5,
                "identity violated at n={n} k={k}"
            );
        }
    }

    #[test]
    fn aggregation_of_one_part_applies_bias_and_activation() {
        let part = DenseMatrix::new(1, 2, vec![-3.0, 0.5]).unwrap();
        let out = aggregate_partials(&[part], &[1.0, 1.0], Activation::Relu).unwrap();
        assert_eq!(out.data, vec![0.0, 1.5]);
    }

    /// Factorized two-layer pipeline equals the monolithic forward pass.
    #[test]
    fn factorized_pipeline_matches_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (n, h, o) = (30usize, 10usize, 3usize);
        let w1 = random_matrix(&mut rng, n, h);
        let b1: Vec<f32> = (0..h).map(|_| rng.random_range(-0.5..0.5)).collect();
        let w2 = random_matrix(&mut rng, h, o);
        let b2: Vec<f32> = (0..o).map(|_| rng.random_range(-0.5..0.5)).collect();
        let model = FfnnModel {
            layers: vec![
                FfnnLayer {
                    weight: w1.clone(),
                    bias: b1.clone(),
                    activation: Activation::Relu,
                },
                FfnnLayer {
                    weight: w2.clone(),
                    bias: b2.clone(),
                    activation: Activation::Softmax,
                },
            ],
        };
        let x = random_matrix(&mut rng, 16, n);
        let want = ffnn_forward(&model, &x).unwrap();

        let partition = FeaturePartition {
            ranges: vec![(1, 0, 10), (2, 10, 10), (3, 20, 10)],
        };
        let ws = partition_dense_layer(&w1, &partition).unwrap();
        let partials: Vec<DenseMatrix> = partition
            .ranges
            .iter()
            .zip(&ws)
            .map(|(&(_, s, l), wi)| {
                let xi = DenseMatrix {
                    rows: x.rows,
                    cols: l,
                    data: (0..x.rows).flat_map(|r| x.row(r)[s..s + l].to_vec()).collect(),
                };
                partial_dense(wi, &xi).unwrap()
            })
            .collect();
        let hidden = aggregate_partials(&partials, &b1, Activation::Relu).unwrap();
        let mut out = matmul(&hidden, &w2).unwrap();
        for r in 0..out.rows {
            for c in 0..out.cols {
                out.data[r * out.cols + c] += b2[c];
            }
        }
        Activation::Softmax.apply_rows(&mut out);
        let diff = want
            .data
            .iter()
            .zip(&out.data)
            .map(|(a, b)| (a - b).abs() / (1.0 + a.abs()))
            .fold(0.0f32, f32::max);
        assert!(diff < 1e-4, "pipeline diverged by {diff}");
    }
}
