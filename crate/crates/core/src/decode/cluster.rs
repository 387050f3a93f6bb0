//! Spectral clustering for enrollment selection: cosine affinity with
//! clipped negatives, symmetric normalized Laplacian, eigengap model order,
//! and a deterministic farthest-point-initialized k-means.

use crate::numerics::{sym_eig, Tensor};
use crate::{Real, Result};

/// Cluster the rows of an n×d matrix. Returns one label per row; labels are
/// contiguous from 0. `k_max` caps the eigengap search. Fully deterministic.
pub fn spectral_cluster(rows: &[Real], n: usize, d: usize, k_max: usize) -> Result<Vec<usize>> {
    if n < 2 {
        return Ok(vec![0; n]);
    }
    let k_max = k_max.max(1).min(n - 1);

    // Cosine affinity, negatives clipped to zero, zero diagonal.
    let norms: Vec<Real> = (0..n)
        .map(|i| rows[i * d..(i + 1) * d].iter().map(|v| v * v).sum::<Real>().sqrt())
        .collect();
    let mut w = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let denom = norms[i] * norms[j];
            let cos = if denom > 0.0 {
                let dot: Real = rows[i * d..(i + 1) * d]
                    .iter()
                    .zip(&rows[j * d..(j + 1) * d])
                    .map(|(a, b)| a * b)
                    .sum();
                dot / denom
            } else {
                0.0
            };
            let v = cos.max(0.0);
            w[i * n + j] = v;
            w[j * n + i] = v;
        }
    }

    // Symmetric normalized Laplacian L = I - D^{-1/2} W D^{-1/2}.
    let inv_sqrt_deg: Vec<Real> = (0..n)
        .map(|i| {
            let deg: Real = w[i * n..(i + 1) * n].iter().sum();
            if deg > 0.0 {
                1.0 / deg.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    let mut lap = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let off = -inv_sqrt_deg[i] * w[i * n + j] * inv_sqrt_deg[j];
            lap[i * n + j] = if i == j { 1.0 + off } else { off };
        }
    }

    let (eigenvalues, eigenvectors) = sym_eig(&Tensor::new(vec![n, n], lap)?)?;

    // Largest eigengap among the k_max smallest eigenvalues picks k.
    let mut k = 1;
    let mut best_gap = Real::NEG_INFINITY;
    for i in 1..=k_max {
        let gap = eigenvalues.values[i] - eigenvalues.values[i - 1];
        if gap > best_gap {
            best_gap = gap;
            k = i;
        }
    }

    // Row-normalized spectral embedding over the first k eigenvectors.
    let mut embed = vec![0.0; n * k];
    for i in 0..n {
        for j in 0..k {
            embed[i * k + j] = eigenvectors.values[i * n + j];
        }
        let norm: Real = embed[i * k..(i + 1) * k].iter().map(|v| v * v).sum::<Real>().sqrt();
        if norm > 0.0 {
            embed[i * k..(i + 1) * k].iter_mut().for_each(|v| *v /= norm);
        }
    }

    Ok(kmeans(&embed, n, k, 100))
}

fn dist_sq(a: &[Real], b: &[Real]) -> Real {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Lloyd's k-means with deterministic farthest-point initialization: the
/// first center is the point farthest from the data mean, each next center
/// the point maximizing its distance to the chosen set; ties break to the
/// lowest index.
pub fn kmeans(points: &[Real], n: usize, k: usize, max_iters: usize) -> Vec<usize> {
    let d = if n > 0 { points.len() / n } else { 0 };
    if n == 0 || k == 0 {
        return vec![];
    }
    let k = k.min(n);

    let mut mean = vec![0.0; d];
    for i in 0..n {
        for j in 0..d {
            mean[j] += points[i * d + j];
        }
    }
    mean.iter_mut().for_each(|v| *v /= n as Real);

    let mut centers: Vec<Vec<Real>> = Vec::with_capacity(k);
    let first = (0..n)
        .map(|i| dist_sq(&points[i * d..(i + 1) * d], &mean))
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(b.0.cmp(&a.0)))
        .map(|(i, _)| i)
        .unwrap_or(0);
    centers.push(points[first * d..(first + 1) * d].to_vec());
    while centers.len() < k {
        let next = (0..n)
            .map(|i| {
                centers
                    .iter()
                    .map(|c| dist_sq(&points[i * d..(i + 1) * d], c))
                    .fold(Real::INFINITY, Real::min)
            })
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(b.0.cmp(&a.0)))
            .map(|(i, _)| i)
            .unwrap_or(0);
        centers.push(points[next * d..(next + 1) * d].to_vec());
    }

    let mut assign = vec![0usize; n];
    for _ in 0..max_iters {
        let mut changed = false;
        for i in 0..n {
            let mut best = 0;
            let mut best_d = Real::INFINITY;
            for (c, center) in centers.iter().enumerate() {
                let dd = dist_sq(&points[i * d..(i + 1) * d], center);
                if dd < best_d {
                    best_d = dd;
                    best = c;
                }
            }
            if assign[i] != best {
                assign[i] = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            counts[assign[i]] += 1;
            for j in 0..d {
                sums[assign[i]][j] += points[i * d + j];
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for j in 0..d {
                    centers[c][j] = sums[c][j] / counts[c] as Real;
                }
            }
            // Empty clusters keep their previous center.
        }
    }
    assign
}
