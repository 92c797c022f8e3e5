//! Weight initializers.
//!
//! Dense input weights use fan-in-scaled uniform noise, recurrent weights
//! start orthogonal (keeps hidden-state norms stable over long unrolls),
//! and biases start at zero. Everything is driven by an explicit RNG so
//! initialization is a pure function of the seed stream.

use super::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// `U(-1/sqrt(rows), 1/sqrt(rows))` for a `[rows, cols]` weight applied as
/// `x . W` (so `rows` is the fan-in).
pub fn fan_in_uniform(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let bound = 1.0 / (rows as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.gen_range(-bound..bound))
        .collect();
    Tensor::from_vec(&[rows, cols], data).expect("sized by construction")
}

/// Random square orthogonal matrix, Haar-distributed: QR of a Gaussian
/// matrix via modified Gram-Schmidt (two projection sweeps per column for
/// numerical orthogonality; MGS yields a positive R diagonal, which makes
/// the Q factor uniform over the orthogonal group).
pub fn orthogonal(n: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let a: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..n).map(|_| StandardNormal.sample(rng)).collect())
        .collect();
    // Column-major Gram-Schmidt over columns of A; store orthonormal columns.
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(n);
    for j in 0..n {
        let mut v: Vec<f64> = (0..n).map(|r| a[r][j]).collect();
        for _sweep in 0..2 {
            for qk in &q {
                let dot: f64 = v.iter().zip(qk).map(|(a, b)| a * b).sum();
                for (vi, qi) in v.iter_mut().zip(qk) {
                    *vi -= dot * qi;
                }
            }
        }
        let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-12 {
            // Degenerate draw (essentially impossible for Gaussian input);
            // replace with a unit basis vector to stay orthonormal.
            v = vec![0.0; n];
            v[j % n] = 1.0;
        } else {
            for vi in v.iter_mut() {
                *vi /= norm;
            }
        }
        q.push(v);
    }
    let mut data = vec![0.0; n * n];
    for (j, col) in q.iter().enumerate() {
        for (r, &v) in col.iter().enumerate() {
            data[r * n + j] = v;
        }
    }
    Tensor::from_vec(&[n, n], data).expect("sized by construction")
}
