//! Calibration of per-operator cost multipliers: time each kernel at
//! several sizes and fit nanoseconds-per-analytic-flop by least
//! squares through the origin.

use std::collections::HashMap;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::expr::{CostTable, OP_KEYS};
use crate::infer::{
    compile_tree, matmul, pq_combine, pq_partial, qs_score, Activation, DenseMatrix, QsForest,
};
use crate::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub table: CostTable,
    /// Per-op maximum relative residual of the fit.
    pub residuals: HashMap<String, f64>,
}

/// Least-squares multiplier through the origin: ns ~= k * flops.
pub fn fit_multiplier(points: &[(f64, f64)]) -> Result<f64> {
    let sxx: f64 = points.iter().map(|(x, _)| x * x).sum();
    if sxx == 0.0 {
        return Err(Error::Cost("all sizes are zero; design is rank-deficient".into()));
    }
    let sxy: f64 = points.iter().map(|(x, y)| x * y).sum();
    Ok(sxy / sxx)
}

/// Fit one multiplier per op kind from (flops, nanoseconds) samples.
/// Ops without measurements keep multiplier 1.0.
pub fn calibrate_op_costs(
    measurements: &HashMap<String, Vec<(f64, f64)>>,
) -> Result<CalibrationReport> {
    let mut table = CostTable::default();
    let mut residuals = HashMap::new();
    for (op, points) in measurements {
        if points.len() < 5 {
            return Err(Error::Cost(format!(
                "op `{op}` has {} timing points, need at least 5",
                points.len()
            )));
        }
        let k = fit_multiplier(points)?;
        let worst = points
            .iter()
            .map(|(x, y)| {
                let pred = k * x;
                (pred - y).abs() / y.abs().max(1e-9)
            })
            .fold(0.0f64, f64::max);
        table.multipliers.insert(op.clone(), k);
        residuals.insert(op.clone(), worst);
    }
    for key in OP_KEYS {
        table.multipliers.entry(key.to_string()).or_insert(1.0);
    }
    Ok(CalibrationReport { table, residuals })
}

fn time_ns<F: FnMut()>(reps: usize, mut f: F) -> f64 {
    // Median of repetitions to damp scheduler noise.
    let mut samples = Vec::with_capacity(reps);
    for _ in 0..reps {
        let start = Instant::now();
        f();
        samples.push(start.elapsed().as_nanos() as f64);
    }
    samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
    samples[reps / 2]
}

/// Microbenchmark the main kernels at several sizes, returning
/// (analytic flops, measured ns) per op kind.
pub fn run_microbench(seed: u64) -> HashMap<String, Vec<(f64, f64)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: HashMap<String, Vec<(f64, f64)>> = HashMap::new();
    let reps = 5;

    let rand_mat = |rng: &mut ChaCha8Rng, r: usize, c: usize| DenseMatrix {
        rows: r,
        cols: c,
        data: (0..r * c).map(|_| rng.random_range(-1.0f32..1.0)).collect(),
    };

    // matmul: batch x n x k.
    for &(batch, n, k) in &[(256, 64, 32), (256, 128, 32), (512, 128, 64), (512, 256, 64), (1024, 256, 64)] {
        let x = rand_mat(&mut rng, batch, n);
        let w = rand_mat(&mut rng, n, k);
        let flops = (batch * n * k * 2) as f64;
        let ns = time_ns(reps, || {
            std::hint::black_box(matmul(&x, &w).unwrap());
        });
        out.entry("matmul".into()).or_default().push((flops, ns));
    }

    // matadd / relu / softmax over growing batches.
    for &(batch, d) in &[(1 << 12, 32), (1 << 13, 32), (1 << 14, 32), (1 << 15, 32), (1 << 16, 32)] {
        let a = rand_mat(&mut rng, batch, d);
        let b = rand_mat(&mut rng, batch, d);
        let flops = (batch * d) as f64;
        let ns = time_ns(reps, || {
            let mut acc = a.clone();
            for (x, y) in acc.data.iter_mut().zip(&b.data) {
                *x += y;
            }
            std::hint::black_box(acc);
        });
        out.entry("matadd".into()).or_default().push((flops, ns));

        let ns = time_ns(reps, || {
            let mut m = a.clone();
            Activation::Relu.apply_rows(&mut m);
            std::hint::black_box(m);
        });
        out.entry("relu".into()).or_default().push((flops, ns));

        let ns = time_ns(reps, || {
            let mut m = a.clone();
            Activation::Softmax.apply_rows(&mut m);
            std::hint::black_box(m);
        });
        out.entry("softmax".into()).or_default().push((flops, ns));
    }

    // forest scoring.
    for &(trees, batch) in &[(16, 512), (32, 512), (64, 512), (96, 512), (128, 512)] {
        let dim = 32;
        let forest = QsForest {
            trees: (0..trees)
                .map(|_| {
                    compile_tree(&crate::infer::random_naive_tree(&mut rng, dim, 6))
                })
                .collect(),
            input_dim: dim,
        };
        let x = rand_mat(&mut rng, batch, dim);
        let flops: f64 = batch as f64
            * forest
                .trees
                .iter()
                .map(|t| (t.leaf_values.len().max(2) as f64).log2().ceil())
                .sum::<f64>();
        let ns = time_ns(reps, || {
            let mut acc = 0.0f32;
            for r in 0..batch {
                acc += qs_score(&forest, x.row(r));
            }
            std::hint::black_box(acc);
        });
        out.entry("forest".into()).or_default().push((flops, ns));
    }

    // pq distance tables + combine.
    for &(clusters, parts) in &[(16, 2), (32, 2), (32, 4), (64, 4), (64, 8)] {
        let subdim = 8;
        let db = 256;
        let model = crate::infer::random_pq_model(&mut rng, parts, subdim, clusters, db, 3);
        let x: Vec<f32> = (0..parts * subdim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        let flops = (clusters * subdim * 3 * parts + db * parts) as f64;
        let ns = time_ns(reps, || {
            let tables: Vec<Vec<f32>> = model
                .parts
                .iter()
                .map(|p| pq_partial(&x[p.offset..p.offset + p.len], &p.centroids).unwrap())
                .collect();
            std::hint::black_box(pq_combine(&model, &tables).unwrap());
        });
        out.entry("pq".into()).or_default().push((flops, ns));
    }

    // elementwise family shares one loop shape.
    for &n in &[1usize << 14, 1 << 15, 1 << 16, 1 << 17, 1 << 18] {
        let v: Vec<f32> = (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        let flops = n as f64;
        let ns = time_ns(reps, || {
            let s: f32 = v.iter().map(|x| if *x > 0.0 { *x } else { 0.0 }).sum();
            std::hint::black_box(s);
        });
        for key in ["scale", "onehot", "compare", "bool", "arith", "cond", "udf", "concat", "bias"] {
            out.entry(key.into()).or_default().push((flops, ns));
        }
    }

    out
}
