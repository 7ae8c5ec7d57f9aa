//! Whitening and coloring transforms on encoder features, and the
//! coarse-to-fine autoencoder pipeline built on them.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::linalg::{check_symmetric, frobenius, gemm, gemm_nt, jacobi_eigen};
use crate::tensor::{Shape3, Tensor};
use crate::vgg::{decode, encode, encode_levels, WeightStore};

/// Eigenvalues below this fraction of the largest are dropped.
pub const RANK_TOL: f64 = 1e-5;

pub const DEFAULT_LEVELS: [usize; 5] = [5, 4, 3, 2, 1];

/// A `C x N` feature matrix (one row per channel) with its channel means.
#[derive(Clone, Debug, PartialEq)]
pub struct FlatFeatures {
    pub channels: usize,
    pub n: usize,
    pub data: Vec<f64>,
    pub mean: Vec<f64>,
}

impl FlatFeatures {
    pub fn new(channels: usize, n: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || n == 0 || data.len() != channels * n {
            return Err(Error::shape(format!(
                "{} values do not form a {channels}x{n} feature matrix",
                data.len()
            )));
        }
        let mean = data.chunks_exact(n).map(|r| r.iter().sum::<f64>() / n as f64).collect();
        Ok(FlatFeatures { channels, n, data, mean })
    }

    pub fn from_tensor(t: &Tensor) -> Self {
        let s = t.shape();
        Self::new(s.c, s.plane(), t.data().to_vec()).expect("tensor is non-empty")
    }

    pub fn to_tensor(&self, h: usize, w: usize) -> Result<Tensor> {
        if h * w != self.n {
            return Err(Error::shape(format!("{h}x{w} does not hold {} positions", self.n)));
        }
        Tensor::new(Shape3::new(self.channels, h, w)?, self.data.clone())
    }

    pub fn row(&self, c: usize) -> &[f64] {
        &self.data[c * self.n..(c + 1) * self.n]
    }

    /// Rows minus their means.
    pub fn centered(&self) -> Vec<f64> {
        let mut out = self.data.clone();
        for (row, m) in out.chunks_exact_mut(self.n).zip(&self.mean) {
            row.iter_mut().for_each(|v| *v -= m);
        }
        out
    }

    /// `(1 / (N - 1)) f̄ f̄ᵀ` of the centered features; zero when `N < 2`.
    pub fn covariance(&self) -> Vec<f64> {
        let c = self.channels;
        let mut cov = vec![0.0; c * c];
        if self.n < 2 {
            return cov;
        }
        let centered = self.centered();
        gemm_nt(&centered, &centered, c, self.n, c, &mut cov);
        let k = 1.0 / (self.n - 1) as f64;
        cov.iter_mut().for_each(|v| *v *= k);
        // exact symmetry for the eigensolver
        for i in 0..c {
            for j in i + 1..c {
                let m = 0.5 * (cov[i * c + j] + cov[j * c + i]);
                cov[i * c + j] = m;
                cov[j * c + i] = m;
            }
        }
        cov
    }
}

/// Eigenpairs of a symmetric matrix, descending, with the retained rank.
#[derive(Clone, Debug, PartialEq)]
pub struct EigenDecomp {
    pub n: usize,
    pub values: Vec<f64>,
    /// Row `j` is the eigenvector for `values[j]`.
    pub vectors: Vec<f64>,
    pub rank: usize,
}

impl EigenDecomp {
    pub fn vector(&self, j: usize) -> &[f64] {
        &self.vectors[j * self.n..(j + 1) * self.n]
    }

    /// `Σ_{j<rank} f(λ_j) e_j e_jᵀ`.
    pub fn spectral_map(&self, f: impl Fn(f64) -> f64) -> Vec<f64> {
        let (n, k) = (self.n, self.rank);
        let mut scaled = self.vectors[..k * n].to_vec();
        for (row, &l) in scaled.chunks_exact_mut(n).zip(&self.values) {
            let s = f(l);
            row.iter_mut().for_each(|v| *v *= s);
        }
        let mut out = vec![0.0; n * n];
        crate::linalg::gemm_tn(&self.vectors[..k * n], &scaled, k, n, n, &mut out);
        out
    }
}

pub fn eig_sym(m: &[f64], n: usize) -> Result<EigenDecomp> {
    check_symmetric(m, n, 1e-8)?;
    let e = jacobi_eigen(m, n)?;
    let values = e.values().to_vec();
    let top = values.first().copied().unwrap_or(0.0);
    let rank = if top > 0.0 {
        values.iter().take_while(|&&l| l >= RANK_TOL * top).count()
    } else {
        0
    };
    Ok(EigenDecomp {
        n,
        values,
        vectors: e.vectors_rows().to_vec(),
        rank,
    })
}

fn apply(m: &[f64], c: usize, x: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; c * n];
    gemm(m, x, c, c, n, &mut out);
    out
}

/// `E D^{-1/2} Eᵀ (f - m)` over the retained rank. The result is centered,
/// and its covariance is the identity on the retained subspace.
pub fn whiten(f: &FlatFeatures) -> Result<FlatFeatures> {
    let c = f.channels;
    let eig = eig_sym(&f.covariance(), c)?;
    let w = eig.spectral_map(|l| 1.0 / l.sqrt());
    Ok(FlatFeatures {
        channels: c,
        n: f.n,
        data: apply(&w, c, &f.centered(), f.n),
        mean: vec![0.0; c],
    })
}

/// `E_s D_s^{1/2} E_sᵀ f̂ + m_s`.
pub fn color(f_hat: &FlatFeatures, style: &FlatFeatures) -> Result<FlatFeatures> {
    let c = f_hat.channels;
    if style.channels != c {
        return Err(Error::shape(format!(
            "coloring {c}-channel features with {}-channel style",
            style.channels
        )));
    }
    let eig = eig_sym(&style.covariance(), c)?;
    let k = eig.spectral_map(f64::sqrt);
    let mut data = apply(&k, c, &f_hat.data, f_hat.n);
    for (row, m) in data.chunks_exact_mut(f_hat.n).zip(&style.mean) {
        row.iter_mut().for_each(|v| *v += m);
    }
    Ok(FlatFeatures {
        channels: c,
        n: f_hat.n,
        data,
        mean: style.mean.clone(),
    })
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::argument(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    Ok(())
}

/// `α f_cs + (1 - α) f_c`, elementwise.
pub fn blend(stylized: &Tensor, content: &Tensor, alpha: f64) -> Result<Tensor> {
    check_alpha(alpha)?;
    stylized.zip_map(content, |s, c| alpha * s + (1.0 - alpha) * c)
}

/// Statistics of one whitening-coloring step.
#[derive(Clone, Debug, PartialEq)]
pub struct WctStep {
    pub level: usize,
    pub channels: usize,
    pub positions: usize,
    pub content_rank: usize,
    pub style_rank: usize,
    /// Relative Frobenius distance between the colored features' covariance
    /// and the style covariance.
    pub covariance_error: f64,
}

/// Whitening-coloring of one feature map followed by the α-blend.
pub fn wct_features(content: &Tensor, style: &Tensor, alpha: f64) -> Result<(Tensor, WctStep)> {
    check_alpha(alpha)?;
    if content.channels() != style.channels() {
        return Err(Error::shape(format!(
            "content has {} channels, style {}",
            content.channels(),
            style.channels()
        )));
    }
    let fc = FlatFeatures::from_tensor(content);
    let fs = FlatFeatures::from_tensor(style);
    let c = fc.channels;
    let c_eig = eig_sym(&fc.covariance(), c)?;
    let white = FlatFeatures {
        channels: c,
        n: fc.n,
        data: apply(&c_eig.spectral_map(|l| 1.0 / l.sqrt()), c, &fc.centered(), fc.n),
        mean: vec![0.0; c],
    };
    let s_cov = fs.covariance();
    let s_eig = eig_sym(&s_cov, c)?;
    let mut data = apply(&s_eig.spectral_map(f64::sqrt), c, &white.data, fc.n);
    for (row, m) in data.chunks_exact_mut(fc.n).zip(&fs.mean) {
        row.iter_mut().for_each(|v| *v += m);
    }
    let colored = FlatFeatures::new(c, fc.n, data)?;
    let out_cov = colored.covariance();
    let diff: Vec<f64> = out_cov.iter().zip(&s_cov).map(|(a, b)| a - b).collect();
    let step = WctStep {
        level: 0,
        channels: c,
        positions: fc.n,
        content_rank: c_eig.rank,
        style_rank: s_eig.rank,
        covariance_error: frobenius(&diff) / frobenius(&s_cov).max(f64::MIN_POSITIVE),
    };
    let stylized = colored.to_tensor(content.height(), content.width())?;
    Ok((blend(&stylized, content, alpha)?, step))
}

/// Encode both images at `relu{level}_1`, transform, blend, decode.
pub fn stylize_level(
    content: &Tensor,
    style: &Tensor,
    level: usize,
    alpha: f64,
    weights: &WeightStore,
) -> Result<Tensor> {
    let fs = encode(level, weights, style)?;
    Ok(level_step(content, &fs, level, alpha, weights)?.0)
}

fn level_step(
    content: &Tensor,
    style_features: &Tensor,
    level: usize,
    alpha: f64,
    weights: &WeightStore,
) -> Result<(Tensor, WctStep)> {
    let fc = encode(level, weights, content)?;
    let (mixed, mut step) = wct_features(&fc, style_features, alpha)?;
    step.level = level;
    Ok((decode(level, weights, &mixed)?, step))
}

pub fn check_levels(levels: &[usize]) -> Result<()> {
    if levels.is_empty() {
        return Err(Error::argument("at least one level is required"));
    }
    if let Some(&bad) = levels.iter().find(|l| !(1..=5).contains(*l)) {
        return Err(Error::argument(format!("level {bad} is outside 1..=5")));
    }
    if levels.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::argument(format!(
            "levels must run strictly from coarse to fine (e.g. 5,4,3,2,1), got {levels:?}"
        )));
    }
    Ok(())
}

/// Applies [`stylize_level`] for each level in order, feeding each output
/// forward as the next content. Style features are encoded once.
pub fn stylize_multilevel(
    content: &Tensor,
    style: &Tensor,
    alpha: f64,
    levels: &[usize],
    weights: &WeightStore,
) -> Result<(Tensor, Vec<WctStep>)> {
    check_levels(levels)?;
    check_alpha(alpha)?;
    let style_features: BTreeMap<usize, Tensor> = encode_levels(weights, style, levels[0])?;
    let mut current = content.clone();
    let mut steps = Vec::with_capacity(levels.len());
    for &level in levels {
        let (next, step) = level_step(&current, &style_features[&level], level, alpha, weights)?;
        if next.shape() != current.shape() {
            return Err(Error::shape(format!(
                "level {level} decoder produced {} from {}",
                next.shape(),
                current.shape()
            )));
        }
        current = next;
        steps.push(step);
    }
    Ok((current, steps))
}
