//! Brute-force reference implementations and fixture helpers shared by the
//! integration tests. Nothing here calls into the library's numerics.

#![allow(dead_code)]

use std::path::{Path, PathBuf};

use dsvis_core::{DatasetManifest, SampleRecord};
use rand::Rng;

/// Sample covariance with divisor `n - 1`, by direct double summation.
pub fn naive_covariance(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = rows.len();
    let p = rows[0].len();
    let mut mean = vec![0.0; p];
    for r in rows {
        for j in 0..p {
            mean[j] += r[j];
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut cov = vec![vec![0.0; p]; p];
    for i in 0..p {
        for j in 0..p {
            let mut s = 0.0;
            for r in rows {
                s += (r[i] - mean[i]) * (r[j] - mean[j]);
            }
            cov[i][j] = s / (n as f64 - 1.0);
        }
    }
    cov
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
/// Returns eigenvalues in descending order and the matching unit
/// eigenvectors (one `Vec` per eigenvalue).
pub fn jacobi_eigen(a: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut a: Vec<Vec<f64>> = a.to_vec();
    let mut v = vec![vec![0.0; n]; n];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    let norm: f64 = a.iter().flatten().map(|x| x * x).sum();
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    off += a[i][j] * a[i][j];
                }
            }
        }
        if off <= 1e-32 * norm || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q] == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let vp = row[p];
                    let vq = row[q];
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j][j].total_cmp(&a[i][i]));
    let values = order.iter().map(|&i| a[i][i]).collect();
    let vectors = order
        .iter()
        .map(|&i| (0..n).map(|r| v[r][i]).collect())
        .collect();
    (values, vectors)
}

/// Index of the entry of largest magnitude, and whether the runner-up is
/// within `tie` of it (making a magnitude-based sign convention unstable).
pub fn dominant_entry(v: &[f64], tie: f64) -> (usize, bool) {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[b].abs().total_cmp(&v[a].abs()).then(a.cmp(&b)));
    let ambiguous = v.len() > 1 && v[idx[0]].abs() - v[idx[1]].abs() <= tie;
    (idx[0], ambiguous)
}

/// Amari index with normalization `1 / (2k(k-1))`.
pub fn amari(p: &[Vec<f64>]) -> f64 {
    let k = p.len();
    let mut total = 0.0;
    for row in p {
        let m = row.iter().map(|x| x.abs()).fold(0.0, f64::max);
        total += row.iter().map(|x| x.abs() / m).sum::<f64>() - 1.0;
    }
    for j in 0..k {
        let m = p.iter().map(|r| r[j].abs()).fold(0.0, f64::max);
        total += p.iter().map(|r| r[j].abs() / m).sum::<f64>() - 1.0;
    }
    total / (2.0 * k as f64 * (k as f64 - 1.0))
}

/// Sine of the largest principal angle between the row spaces of two
/// `k x p` matrices with orthonormal rows.
pub fn max_principal_sine(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(u, v)| u * v).sum::<f64>();
    // residual of each row of b after projecting onto span(a)
    let resid: Vec<Vec<f64>> = b
        .iter()
        .map(|row| {
            let mut r = row.clone();
            for basis in a {
                let c = dot(basis, row);
                for (x, y) in r.iter_mut().zip(basis) {
                    *x -= c * y;
                }
            }
            r
        })
        .collect();
    let gram: Vec<Vec<f64>> = resid
        .iter()
        .map(|x| resid.iter().map(|y| dot(x, y)).collect())
        .collect();
    let (values, _) = jacobi_eigen(&gram);
    values[0].max(0.0).sqrt()
}

pub fn matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    a.iter()
        .map(|row| {
            (0..b[0].len())
                .map(|j| row.iter().zip(b).map(|(x, br)| x * br[j]).sum())
                .collect()
        })
        .collect()
}

pub fn standard_normal(rng: &mut impl Rng) -> f64 {
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

pub fn laplace(rng: &mut impl Rng) -> f64 {
    let u: f64 = rng.random_range(-0.5..0.5);
    -u.signum() * (1.0 - 2.0 * u.abs()).ln()
}

/// Writes an 8-bit PNG from row-major `[0, 1]` values.
pub fn write_png(path: &Path, width: u32, height: u32, channels: u8, values: &[f64]) {
    let bytes: Vec<u8> = values.iter().map(|v| (v * 255.0).round() as u8).collect();
    let color = match channels {
        1 => image::ExtendedColorType::L8,
        3 => image::ExtendedColorType::Rgb8,
        _ => panic!("unsupported channel count"),
    };
    image::save_buffer(path, &bytes, width, height, color).unwrap();
}

/// Writes a binary grayscale mask; `on` pixels get an arbitrary non-zero level.
pub fn write_mask(path: &Path, width: u32, height: u32, on: &[bool], level: u8) {
    let bytes: Vec<u8> = on.iter().map(|&b| if b { level } else { 0 }).collect();
    image::save_buffer(path, &bytes, width, height, image::ExtendedColorType::L8).unwrap();
}

/// Decoded 8-bit samples as `[0, 1]` values.
pub fn read_png(path: &Path) -> (u32, u32, Vec<f64>) {
    let img = image::open(path).unwrap().to_rgb8();
    let (w, h) = img.dimensions();
    (
        w,
        h,
        img.into_raw()
            .into_iter()
            .map(|b| b as f64 / 255.0)
            .collect(),
    )
}

pub fn record(id: &str, image: impl Into<PathBuf>, label: Option<&str>) -> SampleRecord {
    let mut r = SampleRecord::new(id, image, "train");
    r.label = label.map(str::to_string);
    r
}

pub fn manifest(root: &Path, records: Vec<SampleRecord>) -> DatasetManifest {
    DatasetManifest::new(root, records).unwrap()
}
