//! Optimization-based style transfer: the image is the parameter vector.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::losses::{
    content_loss, style_loss_terms, tv_loss, LossParts, MaskSet, StyleConfig, StylePlan,
    StyleTarget, StyleTerm,
};
use crate::optimize::{
    init_image, run_adam, run_lbfgs, AdamParams, Bounds, Fallible, InitMode, LbfgsParams,
    OptimizeResult,
};
use crate::tensor::{crop, pad_reflect_to_multiple, Tensor};
use crate::vgg::{backward_to_input, forward_collect, forward_features, NetworkSpec, WeightStore};

/// Inputs are reflect-padded to a multiple of this before optimization.
pub const PAD_MULTIPLE: usize = 32;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Deserialize, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Adam,
    Lbfgs,
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(OptimizerKind::Adam),
            "lbfgs" | "l-bfgs" => Ok(OptimizerKind::Lbfgs),
            _ => Err(Error::argument(format!("unknown optimizer {s:?} (adam | lbfgs)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NstOptions {
    pub style: StyleConfig,
    /// `None` picks [`default_content_layer`].
    pub content_layer: Option<String>,
    pub optimizer: OptimizerKind,
    pub iters: usize,
    /// Adam step size in network units (pixels scaled by the preprocess scale).
    pub lr: f64,
    pub init: InitMode,
}

pub const DEFAULT_ITERS: usize = 300;
pub const DEFAULT_LR: f64 = 2.0;

impl Default for NstOptions {
    fn default() -> Self {
        NstOptions {
            style: StyleConfig::default(),
            content_layer: None,
            optimizer: OptimizerKind::Adam,
            iters: DEFAULT_ITERS,
            lr: DEFAULT_LR,
            init: InitMode::Content,
        }
    }
}

/// `relu4_2` when the network has it, otherwise its deepest ReLU.
pub fn default_content_layer(net: &NetworkSpec) -> Result<String> {
    if net.layer_index("relu4_2").is_some() {
        return Ok("relu4_2".into());
    }
    net.relu_points()
        .last()
        .map(|p| p.name.clone())
        .ok_or_else(|| Error::argument(format!("{} has no ReLU layers", net.name())))
}

/// Index of the first bitwise-identical earlier image for each image.
pub fn canonical_styles(styles: &[Tensor]) -> Vec<usize> {
    (0..styles.len())
        .map(|i| (0..i).find(|&j| styles[j] == styles[i]).unwrap_or(i))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct NstOutput {
    /// RGB in `[0, 1]` units at the content's original size (unclamped).
    pub image: Tensor,
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub initial: LossParts,
    pub last: LossParts,
}

impl NstOutput {
    pub fn initial_total(&self) -> f64 {
        self.trace[0]
    }

    pub fn final_total(&self) -> f64 {
        *self.trace.last().expect("non-empty trace")
    }
}

/// Everything the objective needs, prepared once.
pub struct NstProblem<'a> {
    net: &'a NetworkSpec,
    weights: &'a WeightStore,
    cfg: StyleConfig,
    plan: StylePlan,
    content_layer: String,
    captures: Vec<String>,
    content_net: Tensor,
    content_target: Tensor,
    targets: Vec<(StyleTarget, Option<Tensor>)>,
    orig: (usize, usize),
}

impl<'a> NstProblem<'a> {
    /// `content` and `styles` are `[0, 1]` RGB images; `masks` (at content
    /// resolution) assign regions to styles and are required when more than
    /// one style is given.
    pub fn new(
        net: &'a NetworkSpec,
        weights: &'a WeightStore,
        content: &Tensor,
        styles: &[Tensor],
        masks: Option<&MaskSet>,
        opts: &NstOptions,
    ) -> Result<Self> {
        opts.style.validate()?;
        if styles.is_empty() {
            return Err(Error::argument("at least one style image is required"));
        }
        if styles.len() > 1 && masks.is_none() {
            return Err(Error::argument("several style images need region masks"));
        }
        weights.validate_for(net)?;
        let pre = weights.preprocess;
        let plan = StylePlan::for_network(net, &opts.style);
        let content_layer = match &opts.content_layer {
            Some(l) => crate::vgg::canonical_layer_name(l),
            None => default_content_layer(net)?,
        };
        if net.layer_index(&content_layer).is_none() {
            return Err(Error::argument(format!(
                "content layer {content_layer} is not in {}",
                net.name()
            )));
        }
        let mut captures: Vec<String> = plan.capture_names().iter().map(|s| s.to_string()).collect();
        if !captures.contains(&content_layer) {
            captures.push(content_layer.clone());
        }
        let style_refs = plan.capture_names();

        let (content_pad, _) = pad_reflect_to_multiple(content, PAD_MULTIPLE)?;
        let content_net = pre.apply(&content_pad)?;
        let content_target = forward_features(net, weights, &content_net, &[content_layer.as_str()])?
            .into_map()
            .remove(&content_layer)
            .expect("captured");

        let canonical = canonical_styles(styles);
        let mut style_targets: BTreeMap<usize, StyleTarget> = BTreeMap::new();
        for (i, s) in styles.iter().enumerate() {
            if canonical[i] != i {
                continue;
            }
            let (pad, _) = pad_reflect_to_multiple(s, PAD_MULTIPLE)?;
            let fm = forward_features(net, weights, &pre.apply(&pad)?, &style_refs)?;
            style_targets.insert(i, StyleTarget::from_features(&plan, &fm)?);
        }

        let targets = match masks {
            None => vec![(style_targets.remove(&0).expect("style 0"), None)],
            Some(set) => {
                if let Some(shape) = set.shape() {
                    if (shape.h, shape.w) != (content.height(), content.width()) {
                        return Err(Error::shape(format!(
                            "masks are {}x{}, content is {}x{}",
                            shape.h,
                            shape.w,
                            content.height(),
                            content.width()
                        )));
                    }
                }
                let mut out = Vec::new();
                for (style, mask) in set.union_by_style(&canonical)? {
                    let (pad, _) = pad_reflect_to_multiple(&mask, PAD_MULTIPLE)?;
                    let target = style_targets.get(&style).cloned().ok_or_else(|| {
                        Error::argument(format!("mask refers to missing style {style}"))
                    })?;
                    out.push((target, Some(pad)));
                }
                out
            }
        };

        Ok(NstProblem {
            net,
            weights,
            cfg: opts.style.clone(),
            plan,
            content_layer,
            captures,
            content_net,
            content_target,
            targets,
            orig: (content.height(), content.width()),
        })
    }

    pub fn plan(&self) -> &StylePlan {
        &self.plan
    }

    pub fn content_layer(&self) -> &str {
        &self.content_layer
    }

    /// Network-space content image (padded).
    pub fn content_input(&self) -> &Tensor {
        &self.content_net
    }

    /// Loss components and the gradient of the weighted total at `x`.
    pub fn evaluate(&self, x: &Tensor) -> Result<(LossParts, f64, Tensor)> {
        let refs: Vec<&str> = self.captures.iter().map(String::as_str).collect();
        let fm = forward_collect(self.net, self.weights, x, &refs)?;
        let (lc, gc) = content_loss(
            fm.get(&self.content_layer).expect("captured"),
            &self.content_target,
        )?;
        let terms: Vec<StyleTerm<'_>> = self
            .targets
            .iter()
            .map(|(t, m)| StyleTerm { target: t, mask: m.as_ref() })
            .collect();
        let (ls, gs) = style_loss_terms(&self.plan, &fm, &terms)?;
        let (lt, gt) = tv_loss(x);

        let mut feature_grads: BTreeMap<String, Tensor> = gs
            .into_iter()
            .map(|(k, g)| (k, g.scale(self.cfg.beta)))
            .collect();
        match feature_grads.get_mut(&self.content_layer) {
            Some(g) => g.add_scaled(&gc, self.cfg.alpha)?,
            None => {
                feature_grads.insert(self.content_layer.clone(), gc.scale(self.cfg.alpha));
            }
        }
        let mut grad = backward_to_input(self.net, self.weights, &fm, &feature_grads)?;
        grad.add_scaled(&gt, self.cfg.lambda)?;
        let parts = LossParts { content: lc, style: ls, tv: lt };
        Ok((parts, parts.weighted(&self.cfg), grad))
    }

    fn bounds(&self) -> Bounds {
        Bounds::Grouped {
            group: self.content_net.shape().plane(),
            ranges: self.weights.preprocess.valid_range().to_vec(),
        }
    }

    /// Runs the configured optimizer from the configured start image.
    pub fn solve(&self, opts: &NstOptions) -> Result<NstOutput> {
        let pre = self.weights.preprocess;
        let x0 = init_image(&self.content_net, &opts.init, pre.scale)?;
        let shape = x0.shape();
        let mut objective = Fallible(|x: &[f64]| {
            let t = Tensor::new(shape, x.to_vec())?;
            let (_, total, g) = self.evaluate(&t)?;
            Ok((total, g.into_data()))
        });
        let bounds = self.bounds();
        let OptimizeResult { x, trace, iterations } = match opts.optimizer {
            OptimizerKind::Adam => {
                let params = AdamParams { lr: opts.lr, ..AdamParams::default() };
                run_adam(&mut objective, x0.data(), opts.iters, &params, &bounds)?
            }
            OptimizerKind::Lbfgs => {
                run_lbfgs(&mut objective, x0.data(), opts.iters, &LbfgsParams::default(), &bounds)?
            }
        };
        let mut start = x0.clone();
        bounds.project(start.data_mut());
        let initial = self.evaluate(&start)?.0;
        let result = Tensor::new(shape, x)?;
        let last = self.evaluate(&result)?.0;
        let rgb = pre.invert(&result)?;
        Ok(NstOutput {
            image: crop(&rgb, self.orig.0, self.orig.1)?,
            trace,
            iterations,
            initial,
            last,
        })
    }
}

/// Convenience wrapper: build the problem and solve it.
pub fn stylize(
    net: &NetworkSpec,
    weights: &WeightStore,
    content: &Tensor,
    styles: &[Tensor],
    masks: Option<&MaskSet>,
    opts: &NstOptions,
) -> Result<NstOutput> {
    NstProblem::new(net, weights, content, styles, masks, opts)?.solve(opts)
}
