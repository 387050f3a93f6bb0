use super::Tensor;
use crate::{Error, Real, Result};

const SYMMETRY_TOL: Real = 1e-8;
const MAX_SWEEPS: usize = 64;
const DEFAULT_DIM_CAP: usize = 4096;

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in ascending order and the matching eigenvectors as
/// the columns of an n×n matrix. The sweep order is fixed (row-major over the
/// upper triangle), so the output is bitwise deterministic for a given input.
pub fn sym_eig(a: &Tensor) -> Result<(Tensor, Tensor)> {
    sym_eig_capped(a, DEFAULT_DIM_CAP)
}

pub fn sym_eig_capped(a: &Tensor, dim_cap: usize) -> Result<(Tensor, Tensor)> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::contract(format!("sym_eig needs a square matrix, got {:?}", a.shape)));
    }
    if n > dim_cap {
        return Err(Error::contract(format!("sym_eig dimension {n} exceeds cap {dim_cap}")));
    }
    if a.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::contract("sym_eig input contains non-finite values"));
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if (a.values[i * n + j] - a.values[j * n + i]).abs() > SYMMETRY_TOL {
                return Err(Error::contract(format!(
                    "sym_eig input not symmetric at ({i},{j}): {} vs {}",
                    a.values[i * n + j],
                    a.values[j * n + i]
                )));
            }
        }
    }
    if n == 0 {
        return Ok((Tensor::new(vec![0], vec![])?, Tensor::new(vec![0, 0], vec![])?));
    }

    let mut m = a.values.clone();
    // Symmetrize exactly so rotations stay consistent.
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[i * n + j] + m[j * n + i]);
            m[i * n + j] = avg;
            m[j * n + i] = avg;
        }
    }
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }

    let conv_tol = (n as Real) * (n as Real) * Real::EPSILON * Real::EPSILON;
    let mut converged = false;
    for _sweep in 0..MAX_SWEEPS {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += m[i * n + j] * m[i * n + j];
            }
        }
        let scale: Real = m.iter().map(|x| x * x).sum::<Real>().max(1e-300);
        if off == 0.0 || off / scale < conv_tol {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                // Rotation zeroing m[p][q]; skip when already negligible.
                if apq.abs() <= Real::EPSILON * (app.abs() + aqq.abs()).max(1e-300) {
                    m[p * n + q] = 0.0;
                    m[q * n + p] = 0.0;
                    continue;
                }
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    1.0 / (theta - (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;

                for k in 0..n {
                    let mkp = m[k * n + p];
                    let mkq = m[k * n + q];
                    m[k * n + p] = c * mkp - s * mkq;
                    m[k * n + q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p * n + k];
                    let mqk = m[q * n + k];
                    m[p * n + k] = c * mpk - s * mqk;
                    m[q * n + k] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    if !converged {
        // One final check after the last sweep.
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += m[i * n + j] * m[i * n + j];
            }
        }
        let scale: Real = m.iter().map(|x| x * x).sum::<Real>().max(1e-300);
        if off / scale >= 1e-18 {
            return Err(Error::numeric(format!(
                "sym_eig did not converge in {MAX_SWEEPS} sweeps (off-diagonal {off:e})"
            )));
        }
    }

    // Sort eigenpairs ascending by eigenvalue; stable order keeps determinism.
    let mut order: Vec<usize> = (0..n).collect();
    let diag: Vec<Real> = (0..n).map(|i| m[i * n + i]).collect();
    order.sort_by(|&i, &j| diag[i].partial_cmp(&diag[j]).unwrap());

    let mut eigenvalues = Vec::with_capacity(n);
    let mut eigenvectors = vec![0.0; n * n];
    for (dst, &src) in order.iter().enumerate() {
        eigenvalues.push(diag[src]);
        for k in 0..n {
            eigenvectors[k * n + dst] = v[k * n + src];
        }
    }

    Ok((Tensor::new(vec![n], eigenvalues)?, Tensor::new(vec![n, n], eigenvectors)?))
}
