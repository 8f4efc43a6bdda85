//! Variance-based sensitivity indices from paired-matrix sampling over
//! a digital low-discrepancy sequence.
//!
//! First-order indices use the estimator
//! `V_i = mean(f(B) * (f(A_B^i) - f(A)))`; closed second-order effects
//! use the complementary pair `V^c_ij = mean(f(B_A^i) * f(A_B^j)) - f0^2`,
//! from which `S_ij = (V^c_ij - V_i - V_j) / Var(Y)`. The sample cost is
//! n * (2d + 2) model evaluations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::{Error, Result};

/// Direction-number parameters (s, a, m) for dimensions 2..=10 of the
/// standard Joe-Kuo table; higher dimensions draw admissible odd
/// initial values from the seed.
const JOE_KUO: &[(u32, u32, &[u32])] = &[
    (1, 0, &[1]),
    (2, 1, &[1, 3]),
    (3, 1, &[1, 3, 1]),
    (3, 2, &[1, 1, 1]),
    (4, 1, &[1, 1, 3, 3]),
    (4, 4, &[1, 3, 5, 13]),
    (5, 2, &[1, 1, 5, 5, 17]),
    (5, 4, &[1, 1, 5, 5, 5]),
    (5, 7, &[1, 1, 7, 11, 19]),
];

/// Primitive polynomial parameters (degree, a) beyond the hardcoded
/// table: degree-6 primitive polynomials over GF(2).
const EXTRA_POLYS: &[(u32, u32)] = &[(6, 1), (6, 16), (6, 13), (6, 22), (6, 19), (6, 25)];

const BITS: u32 = 32;

/// Gray-code digital sequence generator with a per-dimension digital
/// shift derived from the seed (deterministic scrambling).
pub struct SobolSeq {
    direction: Vec<[u32; BITS as usize]>,
    shift: Vec<u32>,
    state: Vec<u32>,
    index: u64,
}

impl SobolSeq {
    pub fn new(dims: usize, seed: u64) -> Result<Self> {
        if dims == 0 || dims > 2 + JOE_KUO.len() + EXTRA_POLYS.len() {
            return Err(Error::Cost(format!(
                "sequence supports 1..={} dimensions, requested {dims}",
                2 + JOE_KUO.len() + EXTRA_POLYS.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eb0_17a9);
        let mut direction = Vec::with_capacity(dims);
        for d in 0..dims {
            let mut v = [0u32; BITS as usize];
            if d == 0 {
                for (j, slot) in v.iter_mut().enumerate() {
                    *slot = 1u32 << (BITS - 1 - j as u32);
                }
            } else {
                let (s, a, m): (u32, u32, Vec<u32>) = if d - 1 < JOE_KUO.len() {
                    let (s, a, m) = JOE_KUO[d - 1];
                    (s, a, m.to_vec())
                } else {
                    let (s, a) = EXTRA_POLYS[d - 1 - JOE_KUO.len()];
                    // Any odd m_j < 2^j keeps the net digital.
                    let m = (1..=s)
                        .map(|j| rng.random_range(0..(1u32 << (j - 1))) * 2 + 1)
                        .collect();
                    (s, a, m)
                };
                for j in 0..BITS as usize {
                    if (j as u32) < s {
                        v[j] = m[j] << (BITS - 1 - j as u32);
                    } else {
                        let mut value = v[j - s as usize] ^ (v[j - s as usize] >> s);
                        for k in 1..s {
                            if (a >> (s - 1 - k)) & 1 == 1 {
                                value ^= v[j - k as usize];
                            }
                        }
                        v[j] = value;
                    }
                }
            }
            direction.push(v);
        }
        let shift = (0..dims).map(|_| rng.random::<u32>()).collect();
        Ok(SobolSeq {
            direction,
            shift,
            state: vec![0; dims],
            index: 0,
        })
    }

    /// Next point in [0,1)^d.
    pub fn next_point(&mut self, out: &mut [f64]) {
        // Gray-code stepping: flip the direction of the lowest zero bit.
        self.index += 1;
        let bit = self.index.trailing_zeros() as usize;
        for (d, value) in out.iter_mut().enumerate() {
            self.state[d] ^= self.direction[d][bit];
            *value = ((self.state[d] ^ self.shift[d]) as f64 + 0.5) / (u32::MAX as f64 + 1.0);
        }
    }
}

#[derive(Debug, Clone)]
pub struct SobolResult {
    pub first_order: Vec<f64>,
    /// Closed-minus-main second-order effects for every factor pair.
    pub second_order: Vec<((usize, usize), f64)>,
    pub total_variance: f64,
}

impl SobolResult {
    pub fn ranked_first_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.first_order.len()).collect();
        order.sort_by(|&a, &b| self.first_order[b].partial_cmp(&self.first_order[a]).unwrap());
        order
    }
}

/// Estimate first-order and pairwise second-order sensitivity indices
/// of `f` over box `ranges` from `n` paired samples (`n` a power of two
/// of at least 64).
pub fn sobol_indices(
    f: &(dyn Fn(&[f64]) -> f64 + Sync),
    ranges: &[(f64, f64)],
    n: usize,
    seed: u64,
) -> Result<SobolResult> {
    let d = ranges.len();
    if d == 0 {
        return Err(Error::Cost("no factors".into()));
    }
    if n < 64 || !n.is_power_of_two() {
        return Err(Error::Cost(format!(
            "sample count must be a power of two >= 64, got {n}"
        )));
    }

    let mut seq = SobolSeq::new(2 * d, seed)?;
    let mut point = vec![0.0; 2 * d];
    let scale = |u: f64, r: (f64, f64)| r.0 + u * (r.1 - r.0);
    let mut a = vec![vec![0.0f64; d]; n];
    let mut b = vec![vec![0.0f64; d]; n];
    for k in 0..n {
        seq.next_point(&mut point);
        for i in 0..d {
            a[k][i] = scale(point[i], ranges[i]);
            b[k][i] = scale(point[d + i], ranges[i]);
        }
    }

    let eval = |rows: &[Vec<f64>]| -> Vec<f64> { rows.par_iter().map(|r| f(r)).collect() };
    let fa = eval(&a);
    let fb = eval(&b);
    // A with column i replaced from B, and the mirror image.
    let mut fab: Vec<Vec<f64>> = Vec::with_capacity(d);
    let mut fba: Vec<Vec<f64>> = Vec::with_capacity(d);
    for i in 0..d {
        let ab: Vec<Vec<f64>> = (0..n)
            .map(|k| {
                let mut row = a[k].clone();
                row[i] = b[k][i];
                row
            })
            .collect();
        let ba: Vec<Vec<f64>> = (0..n)
            .map(|k| {
                let mut row = b[k].clone();
                row[i] = a[k][i];
                row
            })
            .collect();
        fab.push(eval(&ab));
        fba.push(eval(&ba));
    }

    let nf = n as f64;
    let mean: f64 = fa.iter().chain(&fb).sum::<f64>() / (2.0 * nf);
    let total_variance: f64 =
        fa.iter().chain(&fb).map(|&y| (y - mean) * (y - mean)).sum::<f64>() / (2.0 * nf - 1.0);
    if total_variance == 0.0 {
        return Err(Error::Cost("constant function has no variance to attribute".into()));
    }

    let mut first_order = Vec::with_capacity(d);
    for i in 0..d {
        let v_i: f64 = (0..n).map(|k| fb[k] * (fab[i][k] - fa[k])).sum::<f64>() / nf;
        first_order.push(v_i / total_variance);
    }

    let f0sq: f64 = (0..n).map(|k| fa[k] * fb[k]).sum::<f64>() / nf;
    let mut second_order = Vec::new();
    for i in 0..d {
        for j in (i + 1)..d {
            let closed: f64 =
                (0..n).map(|k| fba[i][k] * fab[j][k]).sum::<f64>() / nf - f0sq;
            let s_ij = closed / total_variance - first_order[i] - first_order[j];
            second_order.push(((i, j), s_ij));
        }
    }

    Ok(SobolResult {
        first_order,
        second_order,
        total_variance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn passthrough_factor_owns_the_variance() {
        let f = |x: &[f64]| x[0];
        let ranges = [(0.0, 1.0), (0.0, 1.0), (0.0, 1.0)];
        let r = sobol_indices(&f, &ranges, 1 << 12, 0).unwrap();
        assert!((r.first_order[0] - 1.0).abs() < 0.02, "{:?}", r.first_order);
        assert!(r.first_order[1].abs() < 0.02);
        assert!(r.first_order[2].abs() < 0.02);
    }

    /// Ishigami with a=7, b=0.1; analytic values computed from
    /// V1 = b*pi^4/5 + b^2*pi^8/50 + 1/2, V2 = a^2/8,
    /// V13 = 8*b^2*pi^8/225, V = V1 + V2 + V13.
    #[test]
    fn ishigami_first_order() {
        let (a, b) = (7.0f64, 0.1f64);
        let f = move |x: &[f64]| {
            x[0].sin() + a * x[1].sin().powi(2) + b * x[2].powi(4) * x[0].sin()
        };
        let pi = std::f64::consts::PI;
        let ranges = [(-pi, pi); 3];
        let p4 = pi.powi(4);
        let p8 = pi.powi(8);
        let v1 = b * p4 / 5.0 + b * b * p8 / 50.0 + 0.5;
        let v2 = a * a / 8.0;
        let v13 = 8.0 * b * b * p8 / 225.0;
        let v = v1 + v2 + v13;
        let want = [v1 / v, v2 / v, 0.0];
        let r = sobol_indices(&f, &ranges, 1 << 14, 1).unwrap();
        for i in 0..3 {
            assert!(
                (r.first_order[i] - want[i]).abs() < 0.02,
                "S{}: {} vs {}",
                i + 1,
                r.first_order[i],
                want[i]
            );
        }
        // The x1-x3 interaction carries the rest.
        let s13 = r
            .second_order
            .iter()
            .find(|((i, j), _)| (*i, *j) == (0, 2))
            .unwrap()
            .1;
        assert!((s13 - v13 / v).abs() < 0.05, "S13 {} vs {}", s13, v13 / v);
    }

    /// First-order indices of an additive function sum to one.
    #[test]
    fn additive_function_indices_sum_to_one() {
        let f = |x: &[f64]| 2.0 * x[0] - 3.0 * x[1] + 0.5 * x[2] + x[3];
        let ranges = [(0.0, 1.0); 4];
        let r = sobol_indices(&f, &ranges, 1 << 14, 2).unwrap();
        let sum: f64 = r.first_order.iter().sum();
        assert!((sum - 1.0).abs() < 0.03, "sum {sum}");
    }

    #[test]
    fn constant_function_rejected() {
        let f = |_: &[f64]| 1.0;
        assert!(sobol_indices(&f, &[(0.0, 1.0)], 64, 0).is_err());
    }

    #[test]
    fn non_power_of_two_rejected() {
        let f = |x: &[f64]| x[0];
        assert!(sobol_indices(&f, &[(0.0, 1.0)], 100, 0).is_err());
    }

    #[test]
    fn sequence_is_deterministic_per_seed() {
        let mut s1 = SobolSeq::new(4, 9).unwrap();
        let mut s2 = SobolSeq::new(4, 9).unwrap();
        let mut p1 = [0.0; 4];
        let mut p2 = [0.0; 4];
        for _ in 0..100 {
            s1.next_point(&mut p1);
            s2.next_point(&mut p2);
            assert_eq!(p1, p2);
        }
    }
}
