//! Histogram color matching: an affine RGB map `x' = A x + b` that gives one
//! image the color mean and covariance of another.
//!
//! `A = Σ_C^{1/2} Σ_S^{-1/2}` and `b = μ_C - A μ_S`, with matrix square roots
//! taken through the eigendecomposition `Σ = U Δ Uᵀ`.

use crate::error::{Error, Result};
use crate::linalg::jacobi_eigen;
use crate::tensor::Tensor;

pub type Mat3 = [[f64; 3]; 3];

/// Eigenvalues below this are raised to it before taking roots.
pub const EIGEN_FLOOR: f64 = 1e-8;

pub const IDENTITY: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

/// Per-image RGB mean and population covariance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ColorStats {
    pub mean: [f64; 3],
    pub cov: Mat3,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ColorTransform {
    pub a: Mat3,
    pub b: [f64; 3],
}

pub fn compute_stats(image: &Tensor) -> Result<ColorStats> {
    if image.channels() != 3 {
        return Err(Error::shape(format!(
            "color statistics need 3 channels, got {}",
            image.channels()
        )));
    }
    let n = image.shape().plane();
    if n < 2 {
        return Err(Error::argument("color statistics need at least 2 pixels"));
    }
    let mut mean = [0.0; 3];
    for (c, m) in mean.iter_mut().enumerate() {
        *m = image.plane(c).iter().sum::<f64>() / n as f64;
    }
    let mut cov = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in i..3 {
            let s: f64 = image
                .plane(i)
                .iter()
                .zip(image.plane(j))
                .map(|(a, b)| (a - mean[i]) * (b - mean[j]))
                .sum();
            cov[i][j] = s / n as f64;
            cov[j][i] = cov[i][j];
        }
    }
    Ok(ColorStats { mean, cov })
}

fn flatten(m: &Mat3) -> [f64; 9] {
    let mut out = [0.0; 9];
    for i in 0..3 {
        out[i * 3..i * 3 + 3].copy_from_slice(&m[i]);
    }
    out
}

/// `U f(max(Δ, floor)) Uᵀ` for a symmetric 3x3 matrix.
fn spectral(m: &Mat3, f: impl Fn(f64) -> f64) -> Result<Mat3> {
    let e = jacobi_eigen(&flatten(m), 3)?;
    let flat = e.spectral_map(3, |l| f(l.max(EIGEN_FLOOR)));
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            // symmetrize to wash out rounding in the product
            out[i][j] = 0.5 * (flat[i * 3 + j] + flat[j * 3 + i]);
        }
    }
    Ok(out)
}

/// Symmetric square root with eigenvalues floored at [`EIGEN_FLOOR`].
pub fn sqrt_spd(m: &Mat3) -> Result<Mat3> {
    spectral(m, f64::sqrt)
}

/// Inverse symmetric square root with eigenvalues floored at [`EIGEN_FLOOR`].
pub fn inv_sqrt_spd(m: &Mat3) -> Result<Mat3> {
    spectral(m, |l| 1.0 / l.sqrt())
}

/// The matrix rebuilt from its floored eigenvalues.
pub fn floor_spd(m: &Mat3) -> Result<Mat3> {
    spectral(m, |l| l)
}

pub fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

pub fn mat_vec(a: &Mat3, v: &[f64; 3]) -> [f64; 3] {
    let mut out = [0.0; 3];
    for (i, o) in out.iter_mut().enumerate() {
        *o = (0..3).map(|k| a[i][k] * v[k]).sum();
    }
    out
}

pub fn transpose(a: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[j][i];
        }
    }
    out
}

pub fn frobenius(a: &Mat3) -> f64 {
    a.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
}

/// `‖a - b‖_F / ‖b‖_F`, or the absolute norm when `b` vanishes.
pub fn rel_frobenius(a: &Mat3, b: &Mat3) -> f64 {
    let mut d = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            d[i][j] = a[i][j] - b[i][j];
        }
    }
    let nb = frobenius(b);
    if nb == 0.0 {
        frobenius(&d)
    } else {
        frobenius(&d) / nb
    }
}

/// Fits the map taking `style` colors onto `content` statistics.
///
/// A content covariance with every eigenvalue at or below the floor maps all
/// pixels to the content mean (`A = 0`).
pub fn fit_color_transform(content: &ColorStats, style: &ColorStats) -> Result<ColorTransform> {
    let content_eig = jacobi_eigen(&flatten(&content.cov), 3)?;
    if content_eig.values()[0] <= EIGEN_FLOOR {
        return Ok(ColorTransform {
            a: [[0.0; 3]; 3],
            b: content.mean,
        });
    }
    let a = mat_mul(&sqrt_spd(&content.cov)?, &inv_sqrt_spd(&style.cov)?);
    let am = mat_vec(&a, &style.mean);
    let b = [
        content.mean[0] - am[0],
        content.mean[1] - am[1],
        content.mean[2] - am[2],
    ];
    Ok(ColorTransform { a, b })
}

impl ColorTransform {
    pub fn identity() -> Self {
        ColorTransform {
            a: IDENTITY,
            b: [0.0; 3],
        }
    }

    /// Applies the map to every pixel. No clamping happens here.
    pub fn apply(&self, image: &Tensor) -> Result<Tensor> {
        if image.channels() != 3 {
            return Err(Error::shape(format!(
                "color transform needs 3 channels, got {}",
                image.channels()
            )));
        }
        let mut out = image.clone();
        let n = image.shape().plane();
        let (r, g, b) = (image.plane(0), image.plane(1), image.plane(2));
        let dst = out.data_mut();
        for p in 0..n {
            let px = [r[p], g[p], b[p]];
            for c in 0..3 {
                dst[c * n + p] = self.a[c][0] * px[0]
                    + self.a[c][1] * px[1]
                    + self.a[c][2] * px[2]
                    + self.b[c];
            }
        }
        Ok(out)
    }

    /// Statistics an image with `stats` has after this map, in closed form.
    pub fn map_stats(&self, stats: &ColorStats) -> ColorStats {
        let m = mat_vec(&self.a, &stats.mean);
        ColorStats {
            mean: [m[0] + self.b[0], m[1] + self.b[1], m[2] + self.b[2]],
            cov: mat_mul(&mat_mul(&self.a, &stats.cov), &transpose(&self.a)),
        }
    }
}

/// Recolors `source` so its color statistics match `reference`.
pub fn match_colors(source: &Tensor, reference: &Tensor) -> Result<Tensor> {
    let t = fit_color_transform(&compute_stats(reference)?, &compute_stats(source)?)?;
    t.apply(source)
}
