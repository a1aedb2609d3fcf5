//! Symmetric eigendecomposition by cyclic Jacobi rotations.
//!
//! Good enough for desk-scale dense matrices (a few hundred rows); the
//! training path never calls this, only the spectral diagnostics and tests do.

use crate::error::{NkError, Result};
use crate::matrix::Matrix;

const MAX_SWEEPS: usize = 100;

/// Eigendecomposition of a symmetric matrix.
///
/// Returns eigenvalues in ascending order and the matching unit eigenvectors
/// as columns, so `m ≈ U diag(λ) Uᵀ`.
pub fn eigh_symmetric(m: &Matrix, tol: f64) -> Result<(Vec<f64>, Matrix)> {
    let n = m.rows();
    if m.cols() != n {
        return Err(NkError::shape(
            "eigh_symmetric",
            format!("matrix is {}x{}, must be square", m.rows(), m.cols()),
        ));
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if (m.get(i, j) - m.get(j, i)).abs() > tol {
                return Err(NkError::shape(
                    "eigh_symmetric",
                    format!(
                        "asymmetric at ({i},{j}): {} vs {} (tol {tol})",
                        m.get(i, j),
                        m.get(j, i)
                    ),
                ));
            }
        }
    }
    if n == 0 {
        return Ok((Vec::new(), Matrix::zeros(0, 0)));
    }

    // Work on a symmetrized copy so tiny input asymmetry cannot bias rotations.
    let mut a = m.clone();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (a.get(i, j) + a.get(j, i));
            a.set(i, j, avg);
            a.set(j, i, avg);
        }
    }
    let mut v = Matrix::identity(n);

    let scale = a.max_abs().max(1e-300);
    let stop = 1e-14 * scale;

    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        let mut off = 0.0f64;
        for i in 0..n {
            for j in (i + 1)..n {
                off = off.max(a.get(i, j).abs());
            }
        }
        if off <= stop {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a.get(p, q);
                if apq.abs() <= stop * 1e-2 {
                    continue;
                }
                let app = a.get(p, p);
                let aqq = a.get(q, q);
                // Rotation angle per Golub & Van Loan.
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    1.0 / (theta - (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;

                for k in 0..n {
                    let akp = a.get(k, p);
                    let akq = a.get(k, q);
                    a.set(k, p, c * akp - s * akq);
                    a.set(k, q, s * akp + c * akq);
                }
                for k in 0..n {
                    let apk = a.get(p, k);
                    let aqk = a.get(q, k);
                    a.set(p, k, c * apk - s * aqk);
                    a.set(q, k, s * apk + c * aqk);
                }
                for k in 0..n {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }
    if !converged {
        // Final check: the last sweep may have finished the job.
        let mut off = 0.0f64;
        for i in 0..n {
            for j in (i + 1)..n {
                off = off.max(a.get(i, j).abs());
            }
        }
        if off > stop {
            return Err(NkError::numeric(
                "eigh_symmetric",
                format!(
                    "no convergence after {MAX_SWEEPS} sweeps (n={n}, max off-diagonal {off:.3e}, threshold {stop:.3e})"
                ),
            ));
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a.get(i, i).partial_cmp(&a.get(j, j)).unwrap());

    let eigenvalues: Vec<f64> = order.iter().map(|&i| a.get(i, i)).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (col, &src) in order.iter().enumerate() {
        for row in 0..n {
            vectors.set(row, col, v.get(row, src));
        }
    }
    Ok((eigenvalues, vectors))
}

/// Reconstruct U diag(λ) Uᵀ; handy for checking the decomposition.
pub fn reconstruct(eigenvalues: &[f64], eigenvectors: &Matrix) -> Result<Matrix> {
    let n = eigenvectors.rows();
    let mut scaled = eigenvectors.clone();
    for j in 0..n {
        for i in 0..n {
            scaled.set(i, j, eigenvectors.get(i, j) * eigenvalues[j]);
        }
    }
    scaled.matmul(&eigenvectors.transpose())
}
