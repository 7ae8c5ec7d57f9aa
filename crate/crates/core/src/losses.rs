//! Objective terms for optimization-based style transfer.
//!
//! Every term returns its value and its gradient with respect to the
//! features (or image) it was computed from.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::linalg::gemm_nt;
use crate::tensor::{avgpool2x2, avgpool2x2_backward, resize_bilinear, Shape3, Tensor};
use crate::vgg::{FeatureMaps, NetworkSpec};

/// Default total-variation weight.
pub const DEFAULT_TV_WEIGHT: f64 = 8.5e-2;
pub const DEFAULT_CONTENT_WEIGHT: f64 = 1.0;
pub const DEFAULT_STYLE_WEIGHT: f64 = 1e4;

/// Which end of the network gets depth 1 in `2^(D - d)` layer weighting.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Deserialize, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DepthOrder {
    /// `conv1_1` has depth 1, so shallow layers weigh the most.
    #[default]
    ShallowFirst,
    /// The deepest style layer has depth 1.
    DeepFirst,
}

/// Objective hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct StyleConfig {
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
    pub use_shift: bool,
    pub use_chained: bool,
    pub use_all_layers: bool,
    pub depth_order: DepthOrder,
}

impl Default for StyleConfig {
    fn default() -> Self {
        StyleConfig {
            alpha: DEFAULT_CONTENT_WEIGHT,
            beta: DEFAULT_STYLE_WEIGHT,
            lambda: DEFAULT_TV_WEIGHT,
            use_shift: false,
            use_chained: false,
            use_all_layers: true,
            depth_order: DepthOrder::ShallowFirst,
        }
    }
}

impl StyleConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("lambda", self.lambda)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::argument(format!(
                    "{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Anything that can hand out named activations.
pub trait Activations {
    fn activation(&self, name: &str) -> Option<&Tensor>;
}

impl Activations for FeatureMaps {
    fn activation(&self, name: &str) -> Option<&Tensor> {
        self.get(name)
    }
}

impl Activations for BTreeMap<String, Tensor> {
    fn activation(&self, name: &str) -> Option<&Tensor> {
        self.get(name)
    }
}

fn lookup<'a>(acts: &'a dyn Activations, name: &str, which: &str) -> Result<&'a Tensor> {
    acts.activation(name).ok_or_else(|| {
        Error::argument(format!("{which} features are missing layer {name}"))
    })
}

/// Squared Frobenius distance and its gradient `2 (F_o - F_c)`.
pub fn content_loss(generated: &Tensor, content: &Tensor) -> Result<(f64, Tensor)> {
    let diff = generated.sub(content)?;
    Ok((diff.sq_norm(), diff.scale(2.0)))
}

/// `rows x cols` feature correlation matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct GramMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl GramMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        GramMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn scale(&self, k: f64) -> GramMatrix {
        GramMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * k).collect(),
        }
    }

    pub fn asymmetry(&self) -> f64 {
        assert_eq!(self.rows, self.cols);
        crate::linalg::asymmetry(&self.data, self.rows)
    }

    fn expect_dims(&self, other: &GramMatrix, what: &str) -> Result<()> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::shape(format!(
                "{what}: {}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(())
    }
}

fn shifted(x: &Tensor, shift: bool) -> Vec<f64> {
    if shift {
        x.data().iter().map(|v| v - 1.0).collect()
    } else {
        x.data().to_vec()
    }
}

/// `(1 / (N C_x)) * sum_p m_p x_p y_p^T` for already-shifted flat features.
fn correlate(x: &[f64], cx: usize, y: &[f64], cy: usize, n: usize, mask: Option<&[f64]>) -> GramMatrix {
    let mut g = GramMatrix::zeros(cx, cy);
    let norm = 1.0 / (n * cx) as f64;
    match mask {
        None => gemm_nt(x, y, cx, n, cy, &mut g.data),
        Some(m) => {
            let xm: Vec<f64> = x
                .chunks_exact(n)
                .flat_map(|row| row.iter().zip(m).map(|(a, w)| a * w))
                .collect();
            gemm_nt(&xm, y, cx, n, cy, &mut g.data);
        }
    }
    g.data.iter_mut().for_each(|v| *v *= norm);
    g
}

/// `φ(x)[c, c'] = (1 / HWC) Σ_{h,w} x̃[c,h,w] x̃[c',h,w]`, with `x̃ = x - 1`
/// when `shift` is set and `x̃ = x` otherwise.
pub fn gram(x: &Tensor, shift: bool) -> GramMatrix {
    let s = x.shape();
    let xs = shifted(x, shift);
    correlate(&xs, s.c, &xs, s.c, s.plane(), None)
}

/// Cross-layer correlation `(1 / HW C_x) Σ (x - 1)[c] (y - 1)[c']` of two
/// spatially aligned maps.
pub fn chained_gram(x: &Tensor, y: &Tensor) -> Result<GramMatrix> {
    let (sx, sy) = (x.shape(), y.shape());
    if sx.h != sy.h || sx.w != sy.w {
        return Err(Error::shape(format!(
            "chained_gram needs equal spatial extents, got {sx} and {sy}"
        )));
    }
    Ok(correlate(&shifted(x, true), sx.c, &shifted(y, true), sy.c, sx.plane(), None))
}

/// Hadamard product of every channel with a single-channel mask.
pub fn apply_mask(features: &Tensor, mask: &Tensor) -> Result<Tensor> {
    let s = features.shape();
    let m = mask_plane(mask, s.h, s.w)?;
    let mut out = features.clone();
    for c in 0..s.c {
        out.plane_mut(c).iter_mut().zip(m).for_each(|(v, w)| *v *= w);
    }
    Ok(out)
}

fn mask_plane(mask: &Tensor, h: usize, w: usize) -> Result<&[f64]> {
    let ms = mask.shape();
    if ms.c != 1 || ms.h != h || ms.w != w {
        return Err(Error::shape(format!(
            "mask {ms} does not match a {h}x{w} feature map"
        )));
    }
    validate_mask(mask)?;
    Ok(mask.plane(0))
}

pub fn validate_mask(mask: &Tensor) -> Result<()> {
    if let Some(v) = mask.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::validation(format!(
            "mask values must lie in [0, 1], found {v}"
        )));
    }
    Ok(())
}

/// Bilinear rescale of an image-resolution mask to a feature map's extent.
pub fn rescale_mask(mask: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    if mask.channels() != 1 {
        return Err(Error::shape("masks must have one channel"));
    }
    if mask.height() == h && mask.width() == w {
        return Ok(mask.clone());
    }
    let r = resize_bilinear(mask, h, w)?;
    // interpolation of [0, 1] data stays in range up to rounding
    Ok(r.map(|v| v.clamp(0.0, 1.0)))
}

/// `2^(D - d)`.
pub fn layer_weight(depth: usize, total: usize) -> f64 {
    assert!(depth >= 1 && depth <= total, "need 1 <= d <= D");
    2f64.powi((total - depth) as i32)
}

#[derive(Clone, Debug, PartialEq)]
pub struct StyleLayer {
    pub name: String,
    pub weight: f64,
}

/// Correlation between a layer and the style layer before it.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainPair {
    pub deep: String,
    pub shallow: String,
    pub weight: f64,
}

/// Which activations enter the style loss, and with what weights.
#[derive(Clone, Debug, PartialEq)]
pub struct StylePlan {
    pub layers: Vec<StyleLayer>,
    pub chains: Vec<ChainPair>,
    pub shift: bool,
}

impl StylePlan {
    /// Style layers for `net`: every conv's ReLU when `use_all_layers`,
    /// otherwise the first ReLU of each block. Weights are `2^(D - d(l))`
    /// with `D` the network's conv count, normalized to sum to one; chained
    /// pairs reuse the deeper layer's weight.
    pub fn for_network(net: &NetworkSpec, cfg: &StyleConfig) -> StylePlan {
        let total = net.conv_count();
        let points: Vec<_> = net
            .relu_points()
            .into_iter()
            .filter(|p| cfg.use_all_layers || p.index_in_block == 1)
            .collect();
        let raw: Vec<f64> = points
            .iter()
            .map(|p| {
                let d = match cfg.depth_order {
                    DepthOrder::ShallowFirst => p.depth,
                    DepthOrder::DeepFirst => total + 1 - p.depth,
                };
                layer_weight(d, total)
            })
            .collect();
        let sum: f64 = raw.iter().sum();
        let layers: Vec<StyleLayer> = points
            .iter()
            .zip(&raw)
            .map(|(p, w)| StyleLayer {
                name: p.name.clone(),
                weight: w / sum,
            })
            .collect();
        let chains = if cfg.use_chained {
            layers
                .windows(2)
                .map(|w| ChainPair {
                    deep: w[1].name.clone(),
                    shallow: w[0].name.clone(),
                    weight: w[1].weight,
                })
                .collect()
        } else {
            Vec::new()
        };
        StylePlan {
            layers,
            chains,
            shift: cfg.use_shift,
        }
    }

    pub fn capture_names(&self) -> Vec<&str> {
        self.layers.iter().map(|l| l.name.as_str()).collect()
    }
}

/// Halves `y` until its extent matches `like`, returning the pooled map and
/// the shapes visited so gradients can be routed back.
fn align_to(y: &Tensor, like: Shape3) -> Result<(Tensor, Vec<Shape3>)> {
    let mut cur = y.clone();
    let mut trail = Vec::new();
    while cur.height() > like.h || cur.width() > like.w {
        trail.push(cur.shape());
        cur = avgpool2x2(&cur)?;
    }
    if cur.height() != like.h || cur.width() != like.w {
        return Err(Error::shape(format!(
            "cannot align {} to {like} by 2x2 pooling",
            y.shape()
        )));
    }
    Ok((cur, trail))
}

/// Gram targets of one style image.
#[derive(Clone, Debug, PartialEq)]
pub struct StyleTarget {
    pub grams: BTreeMap<String, GramMatrix>,
    pub chains: Vec<GramMatrix>,
}

impl StyleTarget {
    pub fn from_features(plan: &StylePlan, style: &dyn Activations) -> Result<StyleTarget> {
        let mut grams = BTreeMap::new();
        for l in &plan.layers {
            grams.insert(l.name.clone(), gram(lookup(style, &l.name, "style")?, plan.shift));
        }
        let mut chains = Vec::new();
        for c in &plan.chains {
            let deep = lookup(style, &c.deep, "style")?;
            let (shallow, _) = align_to(lookup(style, &c.shallow, "style")?, deep.shape())?;
            chains.push(chained_gram(deep, &shallow)?);
        }
        Ok(StyleTarget { grams, chains })
    }
}

/// One style target restricted to an image-resolution mask (`None` = everywhere).
#[derive(Clone, Copy, Debug)]
pub struct StyleTerm<'a> {
    pub target: &'a StyleTarget,
    pub mask: Option<&'a Tensor>,
}

fn add_grad(grads: &mut BTreeMap<String, Tensor>, name: &str, g: Tensor) -> Result<()> {
    match grads.get_mut(name) {
        Some(acc) => acc.add_scaled(&g, 1.0),
        None => {
            grads.insert(name.to_string(), g);
            Ok(())
        }
    }
}

/// `D^T` for a square residual; the gradient of `|G - T|^2` through a
/// self-correlation uses `D + D^T`.
fn symmetrized(d: &GramMatrix) -> GramMatrix {
    let n = d.rows;
    let mut out = GramMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            out.data[i * n + j] = d.get(i, j) + d.get(j, i);
        }
    }
    out
}

/// `k * R (rows x cols) * Y (cols x n) ∘ mask` -> tensor of `shape`.
fn backproject(r: &GramMatrix, y: &[f64], n: usize, mask: Option<&[f64]>, k: f64, shape: Shape3) -> Result<Tensor> {
    let mut out = vec![0.0; r.rows * n];
    crate::linalg::gemm(&r.data, y, r.rows, r.cols, n, &mut out);
    match mask {
        None => out.iter_mut().for_each(|v| *v *= k),
        Some(m) => {
            for row in out.chunks_exact_mut(n) {
                row.iter_mut().zip(m).for_each(|(v, w)| *v *= k * w);
            }
        }
    }
    Tensor::new(shape, out)
}

/// Weighted style loss over a plan, summed over terms, with per-layer
/// gradients.
///
/// For a term with mask `m` (rescaled to each layer), the generated
/// correlation is `(1/NC) Σ_p m_p x̃_p x̃_pᵀ`, i.e. the Gram of the masked
/// features against the unmasked ones, and the target is the style Gram
/// scaled by the mask's mean coverage. A mask of ones reproduces the
/// unmasked loss; a mask of zeros contributes nothing.
pub fn style_loss_terms(
    plan: &StylePlan,
    generated: &dyn Activations,
    terms: &[StyleTerm<'_>],
) -> Result<(f64, BTreeMap<String, Tensor>)> {
    let mut total = 0.0;
    let mut grads = BTreeMap::new();
    for term in terms {
        if let Some(m) = term.mask {
            validate_mask(m)?;
        }
        for layer in &plan.layers {
            let x = lookup(generated, &layer.name, "generated")?;
            let target = term.target.grams.get(&layer.name).ok_or_else(|| {
                Error::argument(format!("style target is missing layer {}", layer.name))
            })?;
            let s = x.shape();
            let n = s.plane();
            let mask = term.mask.map(|m| rescale_mask(m, s.h, s.w)).transpose()?;
            let mplane = mask.as_ref().map(|m| m.plane(0));
            let coverage = mplane.map_or(1.0, |m| m.iter().sum::<f64>() / n as f64);

            let xs = shifted(x, plan.shift);
            let g = correlate(&xs, s.c, &xs, s.c, n, mplane);
            g.expect_dims(target, &layer.name)?;
            let mut resid = g.clone();
            for (r, t) in resid.data.iter_mut().zip(&target.data) {
                *r -= coverage * t;
            }
            total += layer.weight * resid.data.iter().map(|v| v * v).sum::<f64>();
            // dL/dx = w/(N C) (R + R^T) x̃ M, with R = 2 (G - T) folded into k
            let k = 2.0 * layer.weight / (n * s.c) as f64;
            let grad = backproject(&symmetrized(&resid), &xs, n, mplane, k, s)?;
            add_grad(&mut grads, &layer.name, grad)?;
        }
        for (pair, target) in plan.chains.iter().zip(&term.target.chains) {
            let x = lookup(generated, &pair.deep, "generated")?;
            let y_raw = lookup(generated, &pair.shallow, "generated")?;
            let (y, trail) = align_to(y_raw, x.shape())?;
            let (sx, sy) = (x.shape(), y.shape());
            let n = sx.plane();
            let mask = term.mask.map(|m| rescale_mask(m, sx.h, sx.w)).transpose()?;
            let mplane = mask.as_ref().map(|m| m.plane(0));
            let coverage = mplane.map_or(1.0, |m| m.iter().sum::<f64>() / n as f64);

            let xs = shifted(x, true);
            let ys = shifted(&y, true);
            let g = correlate(&xs, sx.c, &ys, sy.c, n, mplane);
            g.expect_dims(target, &pair.deep)?;
            let mut resid = g;
            for (r, t) in resid.data.iter_mut().zip(&target.data) {
                *r -= coverage * t;
            }
            total += pair.weight * resid.data.iter().map(|v| v * v).sum::<f64>();
            let k = 2.0 * pair.weight / (n * sx.c) as f64;
            // dL/dx = k R ỹ M ; dL/dy = k R^T x̃ M
            let gx = backproject(&resid, &ys, n, mplane, k, sx)?;
            let mut rt = GramMatrix::zeros(resid.cols, resid.rows);
            for i in 0..resid.rows {
                for j in 0..resid.cols {
                    rt.data[j * resid.rows + i] = resid.get(i, j);
                }
            }
            let mut gy = backproject(&rt, &xs, n, mplane, k, sy)?;
            for shape in trail.iter().rev() {
                gy = avgpool2x2_backward(&gy, *shape)?;
            }
            add_grad(&mut grads, &pair.deep, gx)?;
            add_grad(&mut grads, &pair.shallow, gy)?;
        }
    }
    Ok((total, grads))
}

/// Style loss of generated features against a single style image's features.
pub fn style_loss(
    generated: &dyn Activations,
    style: &dyn Activations,
    plan: &StylePlan,
    mask: Option<&Tensor>,
) -> Result<(f64, BTreeMap<String, Tensor>)> {
    let target = StyleTarget::from_features(plan, style)?;
    style_loss_terms(plan, generated, &[StyleTerm { target: &target, mask }])
}

/// Regions of an image assigned to styles.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskSet {
    /// `(mask, style index)`; masks are `1 x H x W` with values in `[0, 1]`.
    pub regions: Vec<(Tensor, usize)>,
}

impl MaskSet {
    pub fn single(mask: Tensor) -> Result<MaskSet> {
        validate_mask(&mask)?;
        Ok(MaskSet {
            regions: vec![(mask, 0)],
        })
    }

    /// `mask` selects style 0, its complement style 1.
    pub fn binary(mask: Tensor) -> Result<MaskSet> {
        validate_mask(&mask)?;
        let inverse = mask.map(|v| 1.0 - v);
        Ok(MaskSet {
            regions: vec![(mask, 0), (inverse, 1)],
        })
    }

    /// One region per label of an index map; `table[label]` is its style.
    pub fn from_labels(labels: &[u8], h: usize, w: usize, table: &[usize]) -> Result<MaskSet> {
        if labels.len() != h * w {
            return Err(Error::shape("label map does not match its extent"));
        }
        let shape = Shape3::new(1, h, w)?;
        let mut regions = Vec::new();
        for (label, &style) in table.iter().enumerate() {
            let m = Tensor::new(
                shape,
                labels
                    .iter()
                    .map(|&l| if l as usize == label { 1.0 } else { 0.0 })
                    .collect(),
            )?;
            regions.push((m, style));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= table.len()) {
            return Err(Error::validation(format!(
                "label {bad} has no entry in the region table"
            )));
        }
        Ok(MaskSet { regions })
    }

    pub fn shape(&self) -> Option<Shape3> {
        self.regions.first().map(|(m, _)| m.shape())
    }

    /// Sum of region masks per style after mapping each style index through
    /// `canonical` (so duplicate styles share one mask).
    pub fn union_by_style(&self, canonical: &[usize]) -> Result<BTreeMap<usize, Tensor>> {
        let mut out: BTreeMap<usize, Tensor> = BTreeMap::new();
        for (m, style) in &self.regions {
            let key = *canonical.get(*style).ok_or_else(|| {
                Error::argument(format!("region refers to missing style {style}"))
            })?;
            match out.get_mut(&key) {
                Some(acc) => acc.add_scaled(m, 1.0)?,
                None => {
                    out.insert(key, m.clone());
                }
            }
        }
        for m in out.values_mut() {
            *m = m.map(|v| v.clamp(0.0, 1.0));
        }
        Ok(out)
    }

    /// Region masks, in region order, resampled to `h x w`.
    pub fn resized(&self, h: usize, w: usize) -> Result<MaskSet> {
        Ok(MaskSet {
            regions: self
                .regions
                .iter()
                .map(|(m, s)| Ok((rescale_mask(m, h, w)?, *s)))
                .collect::<Result<_>>()?,
        })
    }
}

/// Sum of squared forward differences along rows and columns, and its gradient.
pub fn tv_loss(image: &Tensor) -> (f64, Tensor) {
    let Shape3 { c, h, w } = image.shape();
    let mut value = 0.0;
    let mut grad = Tensor::zeros(image.shape());
    for ch in 0..c {
        let src = image.plane(ch);
        let g = grad.plane_mut(ch);
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                if x + 1 < w {
                    let d = src[i + 1] - src[i];
                    value += d * d;
                    g[i + 1] += 2.0 * d;
                    g[i] -= 2.0 * d;
                }
                if y + 1 < h {
                    let d = src[i + w] - src[i];
                    value += d * d;
                    g[i + w] += 2.0 * d;
                    g[i] -= 2.0 * d;
                }
            }
        }
    }
    (value, grad)
}

/// Unweighted objective components.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossParts {
    pub content: f64,
    pub style: f64,
    pub tv: f64,
}

impl LossParts {
    /// `α L_content + β L_style + λ J`.
    pub fn weighted(&self, cfg: &StyleConfig) -> f64 {
        cfg.alpha * self.content + cfg.beta * self.style + cfg.lambda * self.tv
    }
}

/// Weighted total and the same combination of the component image gradients.
pub fn total_loss(
    parts: LossParts,
    grads: [&Tensor; 3],
    cfg: &StyleConfig,
) -> Result<(f64, Tensor)> {
    let [gc, gs, gt] = grads;
    let shape = gc.shape();
    gs.expect_shape(shape, "style gradient")?;
    gt.expect_shape(shape, "tv gradient")?;
    let data = gc
        .data()
        .iter()
        .zip(gs.data())
        .zip(gt.data())
        .map(|((c, s), t)| cfg.alpha * c + cfg.beta * s + cfg.lambda * t)
        .collect();
    Ok((parts.weighted(cfg), Tensor::new(shape, data)?))
}
