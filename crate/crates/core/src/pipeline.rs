//! End-to-end runs: load inputs, stylize, post-process, save, report.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::color::{compute_stats, match_colors, rel_frobenius};
use crate::error::{Error, Result, StageExt};
use crate::io::{load_image, load_labels, load_mask, resize_labels, save_image};
use crate::losses::{DepthOrder, MaskSet, StyleConfig};
use crate::nst::{self, NstOptions, OptimizerKind};
use crate::optimize::{InitMode, DEFAULT_NOISE_SIGMA};
use crate::tensor::{crop, gaussian_blur, pad_reflect_to_multiple, upscale_bilinear, Tensor};
use crate::vgg::synthetic::{add_random_weights, passthrough_autoencoder, random_weights, Init};
use crate::vgg::{load_weight_files, NetworkSpec, WeightStore};
use crate::wct::{self, DEFAULT_LEVELS};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Nst,
    Ust,
    ColorMatch,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Nst => "nst",
            Command::Ust => "ust",
            Command::ColorMatch => "color-match",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ColorMode {
    #[default]
    Off,
    /// Recolor the style image to the content's statistics before stylizing.
    Pre,
    /// Recolor the result to the content's statistics afterwards.
    Post,
}

impl std::str::FromStr for ColorMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "off" => Ok(ColorMode::Off),
            "pre" => Ok(ColorMode::Pre),
            "post" => Ok(ColorMode::Post),
            _ => Err(Error::argument(format!("unknown color mode {s:?} (off | pre | post)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum InitKind {
    #[default]
    Content,
    Noise,
}

/// Every knob of a run. Fields left out of a config file take these defaults.
#[derive(Clone, Debug, PartialEq, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub content: Option<PathBuf>,
    pub style: Option<PathBuf>,
    /// Second style, applied where the mask is zero.
    pub style2: Option<PathBuf>,
    /// Gray mask; or, with `region_styles`, an index map of region labels.
    pub mask: Option<PathBuf>,
    /// Style image for each label of an index mask, in label order.
    pub region_styles: Vec<PathBuf>,
    pub weights: Vec<PathBuf>,
    pub output: Option<PathBuf>,
    /// Report path; defaults to `<output stem>.report.txt`.
    pub report: Option<PathBuf>,
    /// Loss trace CSV path.
    pub trace: Option<PathBuf>,
    /// `vgg16`, `vgg19`, or `custom:<convs>x<channels>,...`; empty infers
    /// it from the weight file's architecture tag.
    pub network: String,

    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
    pub shift: bool,
    pub chained: bool,
    pub all_layers: bool,
    pub depth_order: DepthOrder,
    pub content_layer: Option<String>,
    pub optimizer: OptimizerKind,
    pub iters: usize,
    pub lr: f64,
    pub init: InitKind,
    pub noise_sigma: f64,

    pub ust_alpha: f64,
    pub levels: Vec<usize>,

    pub color: ColorMode,
    pub upscale: usize,
    pub blur_sigma: f64,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let style = StyleConfig::default();
        RunConfig {
            content: None,
            style: None,
            style2: None,
            mask: None,
            region_styles: Vec::new(),
            weights: Vec::new(),
            output: None,
            report: None,
            trace: None,
            network: String::new(),
            alpha: style.alpha,
            beta: style.beta,
            lambda: style.lambda,
            shift: style.use_shift,
            chained: style.use_chained,
            all_layers: style.use_all_layers,
            depth_order: style.depth_order,
            content_layer: None,
            optimizer: OptimizerKind::Adam,
            iters: nst::DEFAULT_ITERS,
            lr: nst::DEFAULT_LR,
            init: InitKind::Content,
            noise_sigma: DEFAULT_NOISE_SIGMA,
            ust_alpha: 1.0,
            levels: DEFAULT_LEVELS.to_vec(),
            color: ColorMode::Off,
            upscale: 1,
            blur_sigma: 0.0,
            seed: 0,
        }
    }
}

fn require<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    p.as_deref()
        .ok_or_else(|| Error::argument(format!("--{flag} is required")))
}

fn must_exist(p: &Path) -> Result<()> {
    if !p.exists() {
        return Err(Error::io(
            p,
            std::io::Error::new(std::io::ErrorKind::NotFound, "file not found"),
        ));
    }
    Ok(())
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<RunConfig> {
        toml::from_str(text).map_err(|e| Error::argument(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Argument(m) => Error::argument(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn style_config(&self) -> StyleConfig {
        StyleConfig {
            alpha: self.alpha,
            beta: self.beta,
            lambda: self.lambda,
            use_shift: self.shift,
            use_chained: self.chained,
            use_all_layers: self.all_layers,
            depth_order: self.depth_order,
        }
    }

    pub fn nst_options(&self) -> NstOptions {
        NstOptions {
            style: self.style_config(),
            content_layer: self.content_layer.clone(),
            optimizer: self.optimizer,
            iters: self.iters,
            lr: self.lr,
            init: match self.init {
                InitKind::Content => InitMode::Content,
                InitKind::Noise => InitMode::Noise {
                    sigma: self.noise_sigma,
                    seed: self.seed,
                },
            },
        }
    }

    /// Checks paths and numeric ranges; runs before any compute.
    pub fn validate(&self, cmd: Command) -> Result<()> {
        must_exist(require(&self.content, "content")?)?;
        require(&self.output, "output")?;
        if self.region_styles.is_empty() {
            must_exist(require(&self.style, "style")?)?;
        } else if self.style.is_some() || self.style2.is_some() {
            return Err(Error::argument("--region-styles replaces --style/--style2"));
        }
        for p in self.style2.iter().chain(&self.mask).chain(&self.region_styles) {
            must_exist(p)?;
        }
        if self.style2.is_some() && self.mask.is_none() {
            return Err(Error::argument("--style2 needs a --mask"));
        }
        if !self.region_styles.is_empty() && self.mask.is_none() {
            return Err(Error::argument("--region-styles needs an index --mask"));
        }
        if self.upscale == 0 {
            return Err(Error::argument("--upscale must be at least 1"));
        }
        if !(self.blur_sigma >= 0.0) || !self.blur_sigma.is_finite() {
            return Err(Error::argument("--blur-sigma must be non-negative"));
        }
        match cmd {
            Command::Nst => {
                self.style_config().validate()?;
                if !(self.lr > 0.0) || !self.lr.is_finite() {
                    return Err(Error::argument("--lr must be positive"));
                }
                if !(self.noise_sigma > 0.0) {
                    return Err(Error::argument("noise sigma must be positive"));
                }
                self.require_weights()?;
            }
            Command::Ust => {
                if !(0.0..=1.0).contains(&self.ust_alpha) {
                    return Err(Error::argument("--ust-alpha must lie in [0, 1]"));
                }
                wct::check_levels(&self.levels)?;
                if !self.region_styles.is_empty() {
                    return Err(Error::argument("ust supports --style2 masks, not --region-styles"));
                }
                self.require_weights()?;
            }
            Command::ColorMatch => {}
        }
        Ok(())
    }

    fn require_weights(&self) -> Result<()> {
        if self.weights.is_empty() {
            return Err(Error::argument("--weights is required"));
        }
        self.weights.iter().try_for_each(|p| must_exist(p))
    }

    pub fn report_path(&self) -> Option<PathBuf> {
        self.report.clone().or_else(|| {
            self.output.as_ref().map(|o| {
                let stem = o.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                o.with_file_name(format!("{stem}.report.txt"))
            })
        })
    }
}

/// Parses a network name: `vgg16`, `vgg19` (and tags starting with them),
/// or `custom:2x16,2x32` (conv count x channels per block).
pub fn parse_network(name: &str) -> Result<NetworkSpec> {
    if let Some(rest) = name.strip_prefix("custom:") {
        let blocks = rest
            .split(',')
            .map(|b| {
                let (n, c) = b
                    .trim()
                    .split_once('x')
                    .ok_or_else(|| Error::argument(format!("bad block {b:?}, expected NxC")))?;
                let parse = |s: &str| {
                    s.parse::<usize>()
                        .ok()
                        .filter(|v| *v > 0)
                        .ok_or_else(|| Error::argument(format!("bad block {b:?}")))
                };
                Ok((parse(n)?, parse(c)?))
            })
            .collect::<Result<Vec<_>>>()?;
        return Ok(NetworkSpec::from_blocks(name, "", 3, &blocks));
    }
    if name.starts_with("vgg16") {
        Ok(NetworkSpec::vgg16())
    } else if name.starts_with("vgg19") {
        Ok(NetworkSpec::vgg19())
    } else {
        Err(Error::argument(format!(
            "unknown network {name:?} (vgg16 | vgg19 | custom:NxC,...)"
        )))
    }
}

/// Machine-readable `key = value` run report.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Report {
    pub entries: Vec<(String, String)>,
}

impl Report {
    pub fn push(&mut self, key: impl Into<String>, value: impl ToString) {
        self.entries.push((key.into(), value.to_string()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    fn echo_config(&mut self, cmd: Command, cfg: &RunConfig) {
        self.push("command", cmd.name());
        if let Ok(toml::Value::Table(t)) = toml::Value::try_from(cfg) {
            for (k, v) in t {
                self.push(format!("config.{k}"), v);
            }
        }
    }
}

struct Timer {
    report: Report,
}

impl Timer {
    fn time<T>(&mut self, stage: &'static str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f().stage(stage)?;
        self.report
            .push(format!("time.{stage}_ms"), format!("{:.3}", start.elapsed().as_secs_f64() * 1e3));
        Ok(out)
    }
}

/// Output of a pipeline run.
#[derive(Clone, Debug)]
pub struct RunSummary {
    pub image: Tensor,
    pub report: Report,
    pub trace: Vec<f64>,
}

/// Validates, runs and saves; writes the report (and trace, if requested).
pub fn run(cmd: Command, cfg: &RunConfig) -> Result<RunSummary> {
    let total = Instant::now();
    let mut timer = Timer { report: Report::default() };
    timer.report.echo_config(cmd, cfg);
    timer.time("config", || cfg.validate(cmd))?;
    let (image, trace) = match cmd {
        Command::Nst => run_nst(cfg, &mut timer)?,
        Command::Ust => (run_ust(cfg, &mut timer)?, Vec::new()),
        Command::ColorMatch => (run_color_match(cfg, &mut timer)?, Vec::new()),
    };
    let image = timer.time("postprocess", || postprocess(&image, cfg.upscale, cfg.blur_sigma))?;
    let out = cfg.output.as_deref().expect("validated");
    timer.time("save", || save_image(&image, out))?;
    if let Some(tp) = &cfg.trace {
        timer.time("save", || write_trace(&trace, tp))?;
    }
    timer.report.push("output.height", image.height());
    timer.report.push("output.width", image.width());
    timer
        .report
        .push("time.total_ms", format!("{:.3}", total.elapsed().as_secs_f64() * 1e3));
    let mut report = timer.report;
    if let Some(rp) = cfg.report_path() {
        std::fs::write(&rp, report.render())
            .map_err(|e| Error::io(&rp, e))
            .stage("save")?;
        report.push("report", rp.display());
    }
    Ok(RunSummary { image, report, trace })
}

pub fn write_trace(trace: &[f64], path: &Path) -> Result<()> {
    let mut s = String::from("iteration,loss\n");
    for (i, v) in trace.iter().enumerate() {
        let _ = writeln!(s, "{i},{v:e}");
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Bilinear upscale by `factor`, then Gaussian blur when `sigma > 0`.
pub fn postprocess(image: &Tensor, factor: usize, sigma: f64) -> Result<Tensor> {
    let up = upscale_bilinear(image, factor)?;
    if sigma > 0.0 {
        gaussian_blur(&up, sigma)
    } else {
        Ok(up)
    }
}

/// Loaded content, styles and region masks.
struct Inputs {
    content: Tensor,
    styles: Vec<Tensor>,
    masks: Option<MaskSet>,
}

fn load_inputs(cfg: &RunConfig) -> Result<Inputs> {
    let content = load_image(cfg.content.as_deref().expect("validated"))?;
    let (h, w) = (content.height(), content.width());
    let (styles, masks) = if !cfg.region_styles.is_empty() {
        let styles = cfg
            .region_styles
            .iter()
            .map(|p| load_image(p))
            .collect::<Result<Vec<_>>>()?;
        let (labels, lh, lw) = load_labels(cfg.mask.as_deref().expect("validated"))?;
        let labels = if (lh, lw) == (h, w) { labels } else { resize_labels(&labels, lh, lw, h, w) };
        let table: Vec<usize> = (0..styles.len()).collect();
        (styles, Some(MaskSet::from_labels(&labels, h, w, &table)?))
    } else {
        let mut styles = vec![load_image(cfg.style.as_deref().expect("validated"))?];
        if let Some(p) = &cfg.style2 {
            styles.push(load_image(p)?);
        }
        let masks = match &cfg.mask {
            None => None,
            Some(p) => {
                let m = load_mask(p, h, w)?;
                Some(if styles.len() > 1 { MaskSet::binary(m)? } else { MaskSet::single(m)? })
            }
        };
        (styles, masks)
    };
    Ok(Inputs { content, styles, masks })
}

fn pre_color(cfg: &RunConfig, inputs: &mut Inputs) -> Result<()> {
    if cfg.color == ColorMode::Pre {
        for s in &mut inputs.styles {
            *s = match_colors(s, &inputs.content)?;
        }
    }
    Ok(())
}

fn post_color(cfg: &RunConfig, image: Tensor, content: &Tensor) -> Result<Tensor> {
    if cfg.color == ColorMode::Post {
        match_colors(&image, content)
    } else {
        Ok(image)
    }
}

fn resolve_network(cfg: &RunConfig, weights: &WeightStore) -> Result<NetworkSpec> {
    if !cfg.network.is_empty() {
        return parse_network(&cfg.network);
    }
    match &weights.arch {
        Some(a) => parse_network(a).or_else(|_| Ok(NetworkSpec::vgg16())),
        None => Ok(NetworkSpec::vgg16()),
    }
}

fn run_nst(cfg: &RunConfig, timer: &mut Timer) -> Result<(Tensor, Vec<f64>)> {
    let mut inputs = timer.time("load", || load_inputs(cfg))?;
    let weights = timer.time("weights", || load_weight_files(&cfg.weights))?;
    let net = timer.time("weights", || {
        let net = resolve_network(cfg, &weights)?;
        weights.validate_for(&net)?;
        Ok(net)
    })?;
    timer.time("color", || pre_color(cfg, &mut inputs))?;
    let opts = cfg.nst_options();
    let problem = timer.time("prepare", || {
        nst::NstProblem::new(&net, &weights, &inputs.content, &inputs.styles, inputs.masks.as_ref(), &opts)
    })?;
    let out = timer.time("optimize", || problem.solve(&opts))?;
    let r = &mut timer.report;
    r.push("network", net.name());
    r.push("content_layer", problem.content_layer());
    r.push("iterations", out.iterations);
    r.push("loss.initial", format!("{:e}", out.initial_total()));
    r.push("loss.final", format!("{:e}", out.final_total()));
    r.push("loss.final.content", format!("{:e}", out.last.content));
    r.push("loss.final.style", format!("{:e}", out.last.style));
    r.push("loss.final.tv", format!("{:e}", out.last.tv));
    let image = timer.time("color", || post_color(cfg, out.image.clone(), &inputs.content))?;
    Ok((image, out.trace))
}

/// Stylizes `content` with `style` through the multi-level pipeline, in
/// `[0, 1]` RGB, padding both to multiples of 32 and cropping back.
pub fn ust_stylize(
    content: &Tensor,
    style: &Tensor,
    alpha: f64,
    levels: &[usize],
    weights: &WeightStore,
) -> Result<(Tensor, Vec<wct::WctStep>)> {
    let pre = weights.preprocess;
    let (c_pad, _) = pad_reflect_to_multiple(content, nst::PAD_MULTIPLE)?;
    let (s_pad, _) = pad_reflect_to_multiple(style, nst::PAD_MULTIPLE)?;
    let (out, steps) = wct::stylize_multilevel(&pre.apply(&c_pad)?, &pre.apply(&s_pad)?, alpha, levels, weights)?;
    let rgb = pre.invert(&out)?;
    Ok((crop(&rgb, content.height(), content.width())?, steps))
}

fn run_ust(cfg: &RunConfig, timer: &mut Timer) -> Result<Tensor> {
    let mut inputs = timer.time("load", || load_inputs(cfg))?;
    let weights = timer.time("weights", || load_weight_files(&cfg.weights))?;
    timer.time("color", || pre_color(cfg, &mut inputs))?;
    let start = Instant::now();
    let mut outputs = Vec::new();
    for (i, style) in inputs.styles.iter().enumerate() {
        let (img, steps) = timer.time("stylize", || {
            ust_stylize(&inputs.content, style, cfg.ust_alpha, &cfg.levels, &weights)
        })?;
        for s in &steps {
            let key = format!("wct.style{i}.level{}", s.level);
            timer.report.push(format!("{key}.covariance_error"), format!("{:e}", s.covariance_error));
            timer.report.push(format!("{key}.rank"), format!("{}/{}", s.content_rank, s.channels));
        }
        outputs.push(img);
    }
    let elapsed = start.elapsed().as_secs_f64();
    timer.report.push("ust.seconds", format!("{elapsed:.3}"));
    eprintln!("stylized in {elapsed:.2} s");

    // masks act on the finished images: m * first + (1 - m) * (second or content)
    let image = timer.time("mask", || match &inputs.masks {
        None => Ok(outputs.swap_remove(0)),
        Some(set) => {
            let m = &set.regions[0].0;
            let other = outputs.get(1).unwrap_or(&inputs.content);
            let first = &outputs[0];
            Ok(Tensor::from_fn(first.shape(), |c, y, x| {
                let k = m.get(0, y, x);
                k * first.get(c, y, x) + (1.0 - k) * other.get(c, y, x)
            }))
        }
    })?;
    timer.time("color", || post_color(cfg, image, &inputs.content))
}

fn run_color_match(cfg: &RunConfig, timer: &mut Timer) -> Result<Tensor> {
    let content = timer.time("load", || load_image(cfg.content.as_deref().expect("validated")))?;
    let style = timer.time("load", || load_image(cfg.style.as_deref().expect("validated")))?;
    let out = timer.time("color", || match_colors(&style, &content))?;
    let (cs, os) = (compute_stats(&content)?, compute_stats(&out)?);
    let mean_err = (0..3).map(|i| (cs.mean[i] - os.mean[i]).abs()).fold(0.0, f64::max);
    timer.report.push("color.mean_error", format!("{mean_err:e}"));
    timer
        .report
        .push("color.covariance_rel_error", format!("{:e}", rel_frobenius(&os.cov, &cs.cov)));
    Ok(out)
}

/// Generated weight sets for experiments and fixtures.
pub fn synth_weights(kind: &str, seed: u64) -> Result<WeightStore> {
    match kind {
        "passthrough" => Ok(passthrough_autoencoder()),
        "ust" => {
            let init = Init::Orthogonal { gain: std::f64::consts::SQRT_2 };
            let mut w = random_weights(&NetworkSpec::vgg19_encoder(5), init, seed);
            for level in 1..=5 {
                add_random_weights(&mut w, &NetworkSpec::vgg19_decoder(level), Init::Orthogonal { gain: 1.0 }, seed + level as u64);
            }
            w.arch = Some("vgg19-ust-random".into());
            Ok(w)
        }
        other => {
            let net = parse_network(other)?;
            let mut w = random_weights(&net, Init::He, seed);
            w.arch = Some(other.to_string());
            Ok(w)
        }
    }
}
