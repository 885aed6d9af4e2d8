//! Small dense linear-algebra kernels over row-major `f64` slices.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// `c = alpha * op(a) * op(b) + beta * c` for row-major operands.
///
/// `op(a)` is `m × k` and `op(b)` is `k × n`; `trans_*` selects whether the
/// stored matrix is the transpose of the operand.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: slice lengths checked above cover every index the strides reach.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Eigendecomposition of a symmetric `n × n` matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in descending order and the matching eigenvectors as
/// the columns of a row-major `n × n` matrix.
pub fn symmetric_eigen(a: &[f64], n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if a.len() != n * n {
        return Err(Error::Dimension(alloc::format!("expected {n}x{n} matrix")));
    }
    let mut m = a.to_vec();
    let mut v = identity(n);
    let scale = m.iter().fold(0.0f64, |s, x| s.max(x.abs())).max(f64::MIN_POSITIVE);
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                off += m[p * n + q] * m[p * n + q];
            }
        }
        if libm::sqrt(off) <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + libm::sqrt(theta * theta + 1.0));
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / libm::sqrt(t * t + 1.0);
                let s = t * c;
                for r in 0..n {
                    let mrp = m[r * n + p];
                    let mrq = m[r * n + q];
                    m[r * n + p] = c * mrp - s * mrq;
                    m[r * n + q] = s * mrp + c * mrq;
                }
                for r in 0..n {
                    let mpr = m[p * n + r];
                    let mqr = m[q * n + r];
                    m[p * n + r] = c * mpr - s * mqr;
                    m[q * n + r] = s * mpr + c * mqr;
                }
                for r in 0..n {
                    let vrp = v[r * n + p];
                    let vrq = v[r * n + q];
                    v[r * n + p] = c * vrp - s * vrq;
                    v[r * n + q] = s * vrp + c * vrq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[j * n + j].total_cmp(&m[i * n + i]));
    let values = order.iter().map(|&i| m[i * n + i]).collect();
    let mut vectors = vec![0.0; n * n];
    for (dst, &src) in order.iter().enumerate() {
        for r in 0..n {
            vectors[r * n + dst] = v[r * n + src];
        }
    }
    Ok((values, vectors))
}

/// Thin SVD of a row-major `rows × cols` matrix by one-sided Jacobi.
///
/// Returns singular values (descending) and right singular vectors as the
/// rows of a `r × cols` matrix, `r = min(rows, cols)`.
pub fn svd_right(a: &[f64], rows: usize, cols: usize) -> (Vec<f64>, Vec<f64>) {
    if cols <= rows {
        // Orthogonalize the columns of A; the accumulated rotation is V.
        let mut u = a.to_vec();
        let mut v = identity(cols);
        jacobi_orthogonalize(&mut u, rows, cols, &mut v);
        let mut sv: Vec<(f64, usize)> = (0..cols)
            .map(|j| (libm::sqrt((0..rows).map(|i| u[i * cols + j] * u[i * cols + j]).sum()), j))
            .collect();
        sv.sort_by(|x, y| y.0.total_cmp(&x.0));
        let mut vt = vec![0.0; cols * cols];
        for (r, &(_, j)) in sv.iter().enumerate() {
            for i in 0..cols {
                vt[r * cols + i] = v[i * cols + j];
            }
        }
        (sv.iter().map(|s| s.0).collect(), vt)
    } else {
        // Orthogonalize the columns of Aᵀ: Aᵀ U = V Σ, so normalized columns give V.
        let mut w = vec![0.0; cols * rows];
        for i in 0..rows {
            for j in 0..cols {
                w[j * rows + i] = a[i * cols + j];
            }
        }
        let mut u = identity(rows);
        jacobi_orthogonalize(&mut w, cols, rows, &mut u);
        let mut sv: Vec<(f64, usize)> = (0..rows)
            .map(|j| (libm::sqrt((0..cols).map(|i| w[i * rows + j] * w[i * rows + j]).sum()), j))
            .collect();
        sv.sort_by(|x, y| y.0.total_cmp(&x.0));
        let mut vt = vec![0.0; rows * cols];
        for (r, &(s, j)) in sv.iter().enumerate() {
            let inv = if s > 0.0 { 1.0 / s } else { 0.0 };
            for i in 0..cols {
                vt[r * cols + i] = w[i * rows + j] * inv;
            }
        }
        (sv.iter().map(|s| s.0).collect(), vt)
    }
}

fn jacobi_orthogonalize(u: &mut [f64], rows: usize, cols: usize, v: &mut [f64]) {
    let vn = v.len() / cols;
    for _sweep in 0..60 {
        let mut rotated = false;
        for p in 0..cols {
            for q in p + 1..cols {
                let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
                for i in 0..rows {
                    let up = u[i * cols + p];
                    let uq = u[i * cols + q];
                    alpha += up * up;
                    beta += uq * uq;
                    gamma += up * uq;
                }
                if gamma.abs() <= 1e-15 * libm::sqrt(alpha * beta) || gamma == 0.0 {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + libm::sqrt(1.0 + zeta * zeta));
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / libm::sqrt(1.0 + t * t);
                let s = c * t;
                for i in 0..rows {
                    let up = u[i * cols + p];
                    let uq = u[i * cols + q];
                    u[i * cols + p] = c * up - s * uq;
                    u[i * cols + q] = s * up + c * uq;
                }
                for i in 0..vn {
                    let vp = v[i * cols + p];
                    let vq = v[i * cols + q];
                    v[i * cols + p] = c * vp - s * vq;
                    v[i * cols + q] = s * vp + c * vq;
                }
            }
        }
        if !rotated {
            break;
        }
    }
}

pub fn identity(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        m[i * n + i] = 1.0;
    }
    m
}

/// Solves `A X = B` for square `A` (`n × n`) and `B` (`n × m`) by partial-pivot LU.
pub fn solve(a: &[f64], n: usize, b: &[f64], m: usize) -> Result<Vec<f64>> {
    let mut lu = a.to_vec();
    let mut x = b.to_vec();
    let scale = lu.iter().fold(0.0f64, |s, v| s.max(v.abs()));
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| lu[i * n + col].abs().total_cmp(&lu[j * n + col].abs()))
            .unwrap();
        if lu[piv * n + col].abs() <= 1e-13 * scale {
            return Err(Error::Decomposition("singular matrix in solve".into()));
        }
        if piv != col {
            for j in 0..n {
                lu.swap(piv * n + j, col * n + j);
            }
            for j in 0..m {
                x.swap(piv * m + j, col * m + j);
            }
        }
        let d = lu[col * n + col];
        for r in col + 1..n {
            let f = lu[r * n + col] / d;
            if f == 0.0 {
                continue;
            }
            for j in col..n {
                lu[r * n + j] -= f * lu[col * n + j];
            }
            for j in 0..m {
                x[r * m + j] -= f * x[col * m + j];
            }
        }
    }
    for col in (0..n).rev() {
        let d = lu[col * n + col];
        for j in 0..m {
            let mut s = x[col * m + j];
            for k in col + 1..n {
                s -= lu[col * n + k] * x[k * m + j];
            }
            x[col * m + j] = s / d;
        }
    }
    Ok(x)
}

/// Moore–Penrose pseudo-inverse of a full-row-rank `rows × cols` matrix
/// (`rows ≤ cols`): `Aᵀ (A Aᵀ)⁻¹`, returned as `cols × rows`.
pub fn pinv_full_row_rank(a: &[f64], rows: usize, cols: usize) -> Result<Vec<f64>> {
    let mut aat = vec![0.0; rows * rows];
    gemm(rows, cols, rows, 1.0, a, false, a, true, 0.0, &mut aat);
    let inv = solve(&aat, rows, &identity(rows), rows)?;
    let mut out = vec![0.0; cols * rows];
    gemm(cols, rows, rows, 1.0, a, true, &inv, false, 0.0, &mut out);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_transposes() {
        // a = [[1,2],[3,4]], b = [[5,6],[7,8]]
        let a = [1., 2., 3., 4.];
        let b = [5., 6., 7., 8.];
        let mut c = [0.0; 4];
        gemm(2, 2, 2, 1.0, &a, false, &b, false, 0.0, &mut c);
        assert_eq!(c, [19., 22., 43., 50.]);
        gemm(2, 2, 2, 1.0, &a, true, &b, false, 0.0, &mut c);
        assert_eq!(c, [26., 30., 38., 44.]);
        gemm(2, 2, 2, 1.0, &a, false, &b, true, 0.0, &mut c);
        assert_eq!(c, [17., 23., 39., 53.]);
    }

    #[test]
    fn eigen_of_diagonal_and_rotated() {
        let (vals, _) = symmetric_eigen(&[2., 1., 1., 2.], 2).unwrap();
        assert!((vals[0] - 3.0).abs() < 1e-12 && (vals[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn svd_matches_known_singular_values() {
        // [[3,0],[4,5]] has singular values sqrt(45) and sqrt(5)
        let (s, vt) = svd_right(&[3., 0., 4., 5.], 2, 2);
        assert!((s[0] - libm::sqrt(45.0)).abs() < 1e-12);
        assert!((s[1] - libm::sqrt(5.0)).abs() < 1e-12);
        let dot = vt[0] * vt[2] + vt[1] * vt[3];
        assert!(dot.abs() < 1e-12);
        // wide variant
        let (s2, _) = svd_right(&[3., 4., 0., 5.], 2, 2);
        assert!((s2[0] - s[0]).abs() < 1e-12);
        let (s3, vt3) = svd_right(&[1., 2., 3., 2., 4., 6.], 2, 3);
        assert!((s3[0] - libm::sqrt(70.0)).abs() < 1e-10 && s3[1].abs() < 1e-10);
        assert_eq!(vt3.len(), 6);
    }

    #[test]
    fn solve_and_pinv() {
        let x = solve(&[2., 1., 1., 3.], 2, &[3., 5.], 1).unwrap();
        assert!((x[0] - 0.8).abs() < 1e-12 && (x[1] - 1.4).abs() < 1e-12);
        assert!(solve(&[1., 2., 2., 4.], 2, &[1., 1.], 1).is_err());
        let a = [1., 0., 1., 0., 1., 1.];
        let p = pinv_full_row_rank(&a, 2, 3).unwrap();
        let mut eye = [0.0; 4];
        gemm(2, 3, 2, 1.0, &a, false, &p, false, 0.0, &mut eye);
        assert!((eye[0] - 1.0).abs() < 1e-12 && eye[1].abs() < 1e-12);
    }
}
