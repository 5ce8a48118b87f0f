//! Synthetic inputs shared by the benchmarks.

use dsvis_core::{DataMatrix, Shape};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `n x p` matrix with entries uniform in `[0, 1)`.
pub fn uniform_matrix(n: usize, p: usize, seed: u64) -> DataMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..n * p).map(|_| rng.random::<f64>()).collect();
    DataMatrix::new(Shape::flat(p), data, None).expect("valid matrix")
}

/// Low-rank data plus small noise: `rank` random directions with decaying scale.
pub fn low_rank_matrix(n: usize, p: usize, rank: usize, seed: u64) -> DataMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dirs: Vec<f64> = (0..rank * p).map(|_| rng.random::<f64>() - 0.5).collect();
    let mut data = vec![0.0; n * p];
    for row in data.chunks_exact_mut(p) {
        for r in 0..rank {
            let w = (rng.random::<f64>() - 0.5) / (1.0 + r as f64);
            for (x, d) in row.iter_mut().zip(&dirs[r * p..(r + 1) * p]) {
                *x += w * d;
            }
        }
        for x in row.iter_mut() {
            *x += 1e-3 * (rng.random::<f64>() - 0.5);
        }
    }
    DataMatrix::new(Shape::flat(p), data, None).expect("valid matrix")
}

/// Independent Laplace-like sources mixed by a random square matrix.
pub fn mixed_sources(n: usize, k: usize, seed: u64) -> DataMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mix: Vec<f64> = (0..k * k).map(|_| rng.random::<f64>() - 0.5).collect();
    let mut data = Vec::with_capacity(n * k);
    for _ in 0..n {
        let s: Vec<f64> = (0..k)
            .map(|_| {
                let u: f64 = rng.random::<f64>() - 0.5;
                -u.signum() * (1.0 - 2.0 * u.abs()).max(1e-300).ln()
            })
            .collect();
        for i in 0..k {
            data.push((0..k).map(|j| mix[i * k + j] * s[j]).sum());
        }
    }
    DataMatrix::new(Shape::flat(k), data, None).expect("valid matrix")
}
