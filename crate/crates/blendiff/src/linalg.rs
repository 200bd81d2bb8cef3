//! Dense symmetric linear algebra: Cholesky, cyclic Jacobi
//! eigendecomposition, and the symmetric matrix square root.
//!
//! Matrices here are small (K x K blendshape Grams, latent covariances,
//! vertex-count normal systems), so simple O(n^3) routines are enough.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const PIVOT_TOL: f64 = 1e-12;
const SYMMETRY_TOL: f64 = 1e-8;

fn check_square(a: &Tensor) -> usize {
    assert_eq!(a.rank(), 2, "expected a matrix");
    assert_eq!(a.rows(), a.cols(), "expected a square matrix");
    a.rows()
}

pub fn max_asymmetry(a: &Tensor) -> f64 {
    let n = check_square(a);
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((a.at(i, j) - a.at(j, i)).abs());
        }
    }
    worst
}

/// Lower-triangular L with L * L^T = a.
pub fn cholesky(a: &Tensor) -> Result<Tensor> {
    let n = check_square(a);
    let asym = max_asymmetry(a);
    if asym > 1e-10 {
        return Err(Error::NotSymmetric(asym));
    }
    let mut l = Tensor::zeros(vec![n, n]);
    for i in 0..n {
        for j in 0..=i {
            let mut s = a.at(i, j);
            for k in 0..j {
                s -= l.at(i, k) * l.at(j, k);
            }
            if i == j {
                if s <= PIVOT_TOL {
                    return Err(Error::NotPositiveDefinite { index: i, pivot: s });
                }
                l.set(i, j, s.sqrt());
            } else {
                l.set(i, j, s / l.at(j, j));
            }
        }
    }
    Ok(l)
}

/// Solve (L L^T) x = b given the Cholesky factor L.
pub fn cholesky_solve(l: &Tensor, b: &[f64]) -> Vec<f64> {
    let n = check_square(l);
    assert_eq!(b.len(), n);
    let mut y = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            y[i] -= l.at(i, k) * y[k];
        }
        y[i] /= l.at(i, i);
    }
    for i in (0..n).rev() {
        for k in (i + 1)..n {
            y[i] -= l.at(k, i) * y[k];
        }
        y[i] /= l.at(i, i);
    }
    y
}

pub fn solve_spd(a: &Tensor, b: &[f64]) -> Result<Vec<f64>> {
    let l = cholesky(a)?;
    Ok(cholesky_solve(&l, b))
}

/// Log-determinant of a from its Cholesky factor.
pub fn log_det_from_cholesky(l: &Tensor) -> f64 {
    let n = l.rows();
    (0..n).map(|i| l.at(i, i).ln()).sum::<f64>() * 2.0
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
///
/// Returns (eigenvalues, eigenvectors) with eigenvectors as matrix
/// columns: a = V diag(w) V^T.
pub fn sym_eigen(a: &Tensor) -> Result<(Vec<f64>, Tensor)> {
    let n = check_square(a);
    let asym = max_asymmetry(a);
    if asym > SYMMETRY_TOL {
        return Err(Error::NotSymmetric(asym));
    }
    let mut m = a.clone();
    // Symmetrize away roundoff so rotations stay exact.
    for i in 0..n {
        for j in 0..n {
            let v = 0.5 * (m.at(i, j) + m.at(j, i));
            m.set(i, j, v);
        }
    }
    let mut v = Tensor::identity(n);
    let scale = m.max_abs().max(1.0);
    for _sweep in 0..100 {
        let mut off = 0.0f64;
        for i in 0..n {
            for j in (i + 1)..n {
                off = off.max(m.at(i, j).abs());
            }
        }
        if off <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m.at(p, q);
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let app = m.at(p, p);
                let aqq = m.at(q, q);
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    1.0 / (theta - (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m.at(k, p);
                    let mkq = m.at(k, q);
                    m.set(k, p, c * mkp - s * mkq);
                    m.set(k, q, s * mkp + c * mkq);
                }
                for k in 0..n {
                    let mpk = m.at(p, k);
                    let mqk = m.at(q, k);
                    m.set(p, k, c * mpk - s * mqk);
                    m.set(q, k, s * mpk + c * mqk);
                }
                for k in 0..n {
                    let vkp = v.at(k, p);
                    let vkq = v.at(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }
    let w: Vec<f64> = (0..n).map(|i| m.at(i, i)).collect();
    Ok((w, v))
}

/// Symmetric PSD square root: result * result = a.
///
/// Eigenvalues in [-1e-10, 0) are treated as roundoff and clamped to 0.
pub fn sym_sqrt(a: &Tensor) -> Result<Tensor> {
    let n = check_square(a);
    let (w, v) = sym_eigen(a)?;
    let mut out = Tensor::zeros(vec![n, n]);
    for (k, &wk) in w.iter().enumerate() {
        let s = wk.max(0.0).sqrt();
        if s == 0.0 {
            continue;
        }
        for i in 0..n {
            let vi = v.at(i, k) * s;
            if vi == 0.0 {
                continue;
            }
            for j in 0..n {
                let val = out.at(i, j) + vi * v.at(j, k);
                out.set(i, j, val);
            }
        }
    }
    // Exact symmetry despite accumulation order.
    for i in 0..n {
        for j in (i + 1)..n {
            let v2 = 0.5 * (out.at(i, j) + out.at(j, i));
            out.set(i, j, v2);
            out.set(j, i, v2);
        }
    }
    Ok(out)
}

/// Largest eigenvalue of a symmetric matrix.
pub fn sym_max_eigenvalue(a: &Tensor) -> Result<f64> {
    let (w, _) = sym_eigen(a)?;
    Ok(w.into_iter().fold(f64::NEG_INFINITY, f64::max))
}
