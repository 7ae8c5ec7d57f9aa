//! Small dense linear algebra: symmetric eigendecomposition by cyclic Jacobi
//! rotations and a row-major GEMM wrapper.

use crate::error::{Error, Result};

/// Off-diagonal Frobenius norm at which Jacobi sweeps stop, relative to ‖M‖_F.
pub const JACOBI_TOL: f64 = 1e-10;
const MAX_SWEEPS: usize = 64;

/// Eigenpairs of a symmetric matrix, sorted by descending eigenvalue.
#[derive(Clone, Debug)]
pub struct SymEigen {
    n: usize,
    values: Vec<f64>,
    /// Row `j` holds the unit eigenvector for `values[j]`.
    vectors: Vec<f64>,
    pub sweeps: usize,
}

impl SymEigen {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn vector(&self, j: usize) -> &[f64] {
        &self.vectors[j * self.n..(j + 1) * self.n]
    }

    /// Eigenvectors as rows, `n x n` row-major.
    pub fn vectors_rows(&self) -> &[f64] {
        &self.vectors
    }

    /// `sum_j f(lambda_j) v_j v_j^T` over the first `rank` eigenpairs.
    pub fn spectral_map(&self, rank: usize, f: impl Fn(f64) -> f64) -> Vec<f64> {
        let n = self.n;
        let rank = rank.min(n);
        // scaled = diag(f(lambda)) * V_rows, then out = V_rows^T * scaled
        let mut scaled = self.vectors[..rank * n].to_vec();
        for j in 0..rank {
            let k = f(self.values[j]);
            scaled[j * n..(j + 1) * n].iter_mut().for_each(|v| *v *= k);
        }
        let mut out = vec![0.0; n * n];
        if rank > 0 {
            gemm_tn(&self.vectors[..rank * n], &scaled, rank, n, n, &mut out);
        }
        out
    }
}

pub fn frobenius(m: &[f64]) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Largest `|m_ij - m_ji|` over the matrix.
pub fn asymmetry(m: &[f64], n: usize) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[i * n + j] - m[j * n + i]).abs());
        }
    }
    worst
}

/// Rejects matrices whose asymmetry exceeds `tol * max(1, max|m_ij|)`.
pub fn check_symmetric(m: &[f64], n: usize, tol: f64) -> Result<()> {
    if m.len() != n * n {
        return Err(Error::shape(format!(
            "expected {n}x{n} matrix, got {} entries",
            m.len()
        )));
    }
    let scale = m.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    let asym = asymmetry(m, n);
    if asym > tol * scale {
        return Err(Error::validation(format!(
            "matrix is not symmetric (max |m_ij - m_ji| = {asym:e})"
        )));
    }
    Ok(())
}

/// Cyclic Jacobi eigendecomposition of a symmetric `n x n` row-major matrix.
///
/// Sweeps continue until the off-diagonal Frobenius norm falls below
/// [`JACOBI_TOL`] times the Frobenius norm of the input.
pub fn jacobi_eigen(m: &[f64], n: usize) -> Result<SymEigen> {
    check_symmetric(m, n, 1e-8)?;
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::validation("matrix has non-finite entries"));
    }
    // symmetrize exactly so row and column updates stay consistent
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            a[i * n + j] = 0.5 * (m[i * n + j] + m[j * n + i]);
        }
    }
    let mut vt = vec![0.0; n * n];
    for i in 0..n {
        vt[i * n + i] = 1.0;
    }

    let target = JACOBI_TOL * frobenius(&a);
    let mut sweeps = 0;
    let mut row_p = vec![0.0; n];
    let mut row_q = vec![0.0; n];
    while sweeps < MAX_SWEEPS {
        let off = off_diagonal_norm(&a, n);
        if off <= target || off == 0.0 {
            break;
        }
        sweeps += 1;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                // after a few sweeps, drop elements below the diagonal's resolution
                if sweeps > 4
                    && (app.abs() + 100.0 * apq.abs() == app.abs())
                    && (aqq.abs() + 100.0 * apq.abs() == aqq.abs())
                {
                    a[p * n + q] = 0.0;
                    a[q * n + p] = 0.0;
                    continue;
                }
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                row_p.copy_from_slice(&a[p * n..(p + 1) * n]);
                row_q.copy_from_slice(&a[q * n..(q + 1) * n]);
                for k in 0..n {
                    let kp = row_p[k];
                    let kq = row_q[k];
                    a[p * n + k] = c * kp - s * kq;
                    a[q * n + k] = s * kp + c * kq;
                }
                a[p * n + p] = app - t * apq;
                a[q * n + q] = aqq + t * apq;
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;
                for k in 0..n {
                    if k != p && k != q {
                        a[k * n + p] = a[p * n + k];
                        a[k * n + q] = a[q * n + k];
                    }
                }

                let (head, tail) = vt.split_at_mut(q * n);
                let vp = &mut head[p * n..(p + 1) * n];
                let vq = &mut tail[..n];
                for k in 0..n {
                    let x = vp[k];
                    let y = vq[k];
                    vp[k] = c * x - s * y;
                    vq[k] = s * x + c * y;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j * n + j].total_cmp(&a[i * n + i]));
    let values = order.iter().map(|&i| a[i * n + i]).collect();
    let mut vectors = Vec::with_capacity(n * n);
    for &i in &order {
        vectors.extend_from_slice(&vt[i * n..(i + 1) * n]);
    }
    Ok(SymEigen {
        n,
        values,
        vectors,
        sweeps,
    })
}

fn off_diagonal_norm(a: &[f64], n: usize) -> f64 {
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a[i * n + j] * a[i * n + j];
            }
        }
    }
    s.sqrt()
}

/// `out = a * b` with `a: m x k`, `b: k x n`, all row-major.
pub fn gemm(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    assert!(a.len() >= m * k && b.len() >= k * n && out.len() >= m * n);
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            n as isize,
            1,
            0.0,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `out = a^T * b` with `a: k x m`, `b: k x n`, all row-major.
pub fn gemm_tn(a: &[f64], b: &[f64], k: usize, m: usize, n: usize, out: &mut [f64]) {
    assert!(a.len() >= k * m && b.len() >= k * n && out.len() >= m * n);
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            1,
            m as isize,
            b.as_ptr(),
            n as isize,
            1,
            0.0,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `out = a * b^T` with `a: m x k`, `b: n x k`, all row-major.
pub fn gemm_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    assert!(a.len() >= m * k && b.len() >= n * k && out.len() >= m * n);
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            1,
            k as isize,
            0.0,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::TestRng;

    fn random_symmetric(rng: &mut TestRng, n: usize) -> Vec<f64> {
        let mut m = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let v = rng.normal();
                m[i * n + j] = v;
                m[j * n + i] = v;
            }
        }
        m
    }

    fn reconstruct(e: &SymEigen) -> Vec<f64> {
        e.spectral_map(e.dim(), |l| l)
    }

    #[test]
    fn identity_has_unit_spectrum() {
        let n = 4;
        let mut m = vec![0.0; n * n];
        for i in 0..n {
            m[i * n + i] = 1.0;
        }
        let e = jacobi_eigen(&m, n).unwrap();
        assert!(e.values().iter().all(|&v| v == 1.0));
        assert_eq!(e.vectors_rows(), m.as_slice());
    }

    #[test]
    fn diagonal_sorted_descending() {
        let e = jacobi_eigen(&[1.0, 0.0, 0.0, 3.0], 2).unwrap();
        assert_eq!(e.values(), &[3.0, 1.0]);
        assert_eq!(e.vector(0)[0].abs(), 0.0);
        assert_eq!(e.vector(0)[1].abs(), 1.0);
    }

    #[test]
    fn random_reconstruction_and_orthonormality() {
        let mut rng = TestRng::new(17);
        for n in [2, 3, 7, 32] {
            let m = random_symmetric(&mut rng, n);
            let e = jacobi_eigen(&m, n).unwrap();
            let r = reconstruct(&e);
            let err: Vec<f64> = r.iter().zip(&m).map(|(a, b)| a - b).collect();
            assert!(frobenius(&err) / frobenius(&m) < 1e-8, "n = {n}");
            for i in 0..n {
                for j in 0..n {
                    let d: f64 = e.vector(i).iter().zip(e.vector(j)).map(|(a, b)| a * b).sum();
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert!((d - expect).abs() < 1e-10);
                }
            }
            assert!(e.values().windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn asymmetric_rejected() {
        assert!(matches!(
            jacobi_eigen(&[1.0, 2.0, 0.0, 1.0], 2),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn gemm_variants_agree() {
        let mut rng = TestRng::new(3);
        let (m, k, n) = (3, 4, 5);
        let a: Vec<f64> = (0..m * k).map(|_| rng.normal()).collect();
        let b: Vec<f64> = (0..k * n).map(|_| rng.normal()).collect();
        let mut naive = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                naive[i * n + j] = (0..k).map(|l| a[i * k + l] * b[l * n + j]).sum();
            }
        }
        let mut out = vec![0.0; m * n];
        gemm(&a, &b, m, k, n, &mut out);
        assert!(out.iter().zip(&naive).all(|(x, y)| (x - y).abs() < 1e-12));

        let mut at = vec![0.0; k * m];
        for i in 0..m {
            for l in 0..k {
                at[l * m + i] = a[i * k + l];
            }
        }
        gemm_tn(&at, &b, k, m, n, &mut out);
        assert!(out.iter().zip(&naive).all(|(x, y)| (x - y).abs() < 1e-12));

        let mut bt = vec![0.0; n * k];
        for l in 0..k {
            for j in 0..n {
                bt[j * k + l] = b[l * n + j];
            }
        }
        gemm_nt(&a, &bt, m, k, n, &mut out);
        assert!(out.iter().zip(&naive).all(|(x, y)| (x - y).abs() < 1e-12));
    }
}
