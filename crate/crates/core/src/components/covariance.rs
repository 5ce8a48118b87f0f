use std::cmp::Ordering;

use faer::{Accum, Mat, MatMut};
use rayon::prelude::*;

use super::linalg::gemm;
use crate::error::{Error, Result};
use crate::ingest::DataMatrix;

/// Rows centred and multiplied per block; bounds the scratch buffer.
const BLOCK_ROWS: usize = 256;
/// Output column tile width. Fixed so the summation order of every entry is
/// independent of the thread count.
const TILE_COLS: usize = 128;

/// Column mean and sample covariance (divisor `n - 1`).
#[derive(Debug, Clone)]
pub struct Covariance {
    n: usize,
    mean: Vec<f64>,
    matrix: Mat<f64>,
}

impl Covariance {
    pub fn samples(&self) -> usize {
        self.n
    }

    pub fn dims(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix[(i, j)]
    }

    pub fn trace(&self) -> f64 {
        (0..self.dims()).map(|i| self.matrix[(i, i)]).sum()
    }

    /// Row-major copy of the matrix.
    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.dims())
            .map(|i| (0..self.dims()).map(|j| self.matrix[(i, j)]).collect())
            .collect()
    }

    pub(crate) fn matrix(&self) -> &Mat<f64> {
        &self.matrix
    }

    pub(crate) fn into_parts(self) -> (Vec<f64>, Mat<f64>) {
        (self.mean, self.matrix)
    }
}

/// Row visiting order used by every reduction over a matrix: rows sorted
/// lexicographically. Any permutation of the input rows therefore produces
/// bitwise-identical sums.
pub(crate) fn canonical_row_order(x: &DataMatrix) -> Vec<usize> {
    let mut order: Vec<usize> = (0..x.rows()).collect();
    order.sort_by(|&a, &b| {
        x.row(a)
            .iter()
            .zip(x.row(b))
            .map(|(u, v)| u.total_cmp(v))
            .find(|o| *o != Ordering::Equal)
            .unwrap_or(Ordering::Equal)
    });
    order
}

pub(crate) fn column_mean(x: &DataMatrix, order: &[usize]) -> Vec<f64> {
    let mut sum = vec![0.0; x.dims()];
    for &i in order {
        for (s, v) in sum.iter_mut().zip(x.row(i)) {
            *s += v;
        }
    }
    let n = x.rows() as f64;
    sum.iter_mut().for_each(|s| *s /= n);
    sum
}

/// Sum of squared distances to the mean divided by `n - 1`, i.e. the trace of
/// the covariance, without forming the matrix.
pub(crate) fn total_variance(x: &DataMatrix, mean: &[f64], order: &[usize]) -> f64 {
    let ss: f64 = order
        .iter()
        .map(|&i| {
            x.row(i)
                .iter()
                .zip(mean)
                .map(|(v, m)| (v - m) * (v - m))
                .sum::<f64>()
        })
        .sum();
    ss / (x.rows() - 1) as f64
}

/// Two passes over the rows: the mean, then the centred scatter matrix
/// accumulated block by block. Only one `BLOCK_ROWS x p` centred block is
/// held at a time; column tiles of the output are updated in parallel.
pub fn mean_and_covariance(x: &DataMatrix) -> Result<Covariance> {
    let n = x.rows();
    if n < 2 {
        return Err(Error::invalid(format!(
            "covariance needs at least 2 rows, got {n}"
        )));
    }
    let p = x.dims();
    let order = canonical_row_order(x);
    let mean = column_mean(x, &order);

    let mut scatter = Mat::<f64>::zeros(p, p);
    let mut block = Mat::<f64>::zeros(BLOCK_ROWS.min(n), p);
    for rows in order.chunks(BLOCK_ROWS) {
        let b = rows.len();
        for (r, &i) in rows.iter().enumerate() {
            for (j, (v, m)) in x.row(i).iter().zip(&mean).enumerate() {
                block[(r, j)] = v - m;
            }
        }
        let centred = block.as_ref().subrows(0, b);
        let tiles = column_tiles(scatter.as_mut());
        tiles.into_par_iter().for_each(|(start, tile)| {
            let width = tile.ncols();
            gemm(
                tile,
                Accum::Add,
                centred.transpose(),
                centred.subcols(start, width),
            );
        });
    }

    let denom = (n - 1) as f64;
    for j in 0..p {
        for i in j..p {
            let v = 0.5 * (scatter[(i, j)] + scatter[(j, i)]) / denom;
            scatter[(i, j)] = v;
            scatter[(j, i)] = v;
        }
    }
    Ok(Covariance {
        n,
        mean,
        matrix: scatter,
    })
}

fn column_tiles(mut m: MatMut<'_, f64>) -> Vec<(usize, MatMut<'_, f64>)> {
    let mut tiles = Vec::new();
    let mut start = 0;
    while m.ncols() > 0 {
        let w = TILE_COLS.min(m.ncols());
        let (left, right) = m.split_at_col_mut(w);
        tiles.push((start, left));
        start += w;
        m = right;
    }
    tiles
}
