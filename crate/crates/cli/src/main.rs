use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use stylize_core::nst::OptimizerKind;
use stylize_core::pipeline::{self, ColorMode, Command, InitKind, RunConfig};

#[derive(Parser)]
#[command(name = "stylize", version, about = "Neural style transfer: optimization (nst) and whitening/coloring (ust)")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Optimize an image against content, style and smoothness losses.
    Nst(RunArgs),
    /// Feed-forward multi-level whitening/coloring transfer.
    Ust(RunArgs),
    /// Recolor the style image to the content image's color statistics.
    ColorMatch(RunArgs),
    /// Write a generated weight file (and manifest) for testing.
    SynthWeights(SynthArgs),
}

#[derive(Args, Default)]
struct RunArgs {
    /// TOML file with run settings; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    content: Option<PathBuf>,
    #[arg(long)]
    style: Option<PathBuf>,
    /// Second style image, applied where the mask is zero.
    #[arg(long)]
    style2: Option<PathBuf>,
    /// Gray mask (1 = first style), or an index map with --region-styles.
    #[arg(long)]
    mask: Option<PathBuf>,
    /// Style image per label of an index mask, in label order.
    #[arg(long, value_delimiter = ',')]
    region_styles: Vec<PathBuf>,
    /// Weight files (SFW1); repeat to merge several.
    #[arg(long)]
    weights: Vec<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
    /// Report file (default: <output stem>.report.txt).
    #[arg(long)]
    report: Option<PathBuf>,
    /// Write the loss trace as CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// vgg16 | vgg19 | custom:NxC,... (default: from the weight file).
    #[arg(long)]
    network: Option<String>,
    /// Content loss weight.
    #[arg(long)]
    alpha: Option<f64>,
    /// Style loss weight.
    #[arg(long)]
    beta: Option<f64>,
    /// Total-variation weight.
    #[arg(long)]
    lambda: Option<f64>,
    /// Subtract 1 from activations before Gram products.
    #[arg(long)]
    shift: bool,
    /// Add correlations between neighbouring style layers.
    #[arg(long)]
    chained: bool,
    #[arg(long, value_parser = ["adam", "lbfgs"])]
    optimizer: Option<String>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Start from the content image or from Gaussian noise.
    #[arg(long, value_parser = ["content", "noise"])]
    init: Option<String>,
    /// Feature blend weight for ust, in [0, 1].
    #[arg(long)]
    ust_alpha: Option<f64>,
    /// Coarse-to-fine level list, e.g. 5,4,3,2,1.
    #[arg(long, value_delimiter = ',')]
    levels: Option<Vec<usize>>,
    #[arg(long, value_parser = ["off", "pre", "post"])]
    color: Option<String>,
    /// Bilinear upscale factor applied to the result.
    #[arg(long)]
    upscale: Option<usize>,
    /// Gaussian blur after upscaling (0 = off).
    #[arg(long)]
    blur_sigma: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SynthArgs {
    /// vgg16 | vgg19 | custom:NxC,... | ust | passthrough
    #[arg(long, default_value = "vgg16")]
    kind: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    output: PathBuf,
}

fn merge(args: RunArgs) -> stylize_core::Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    macro_rules! set {
        ($($field:ident),*) => {$(
            if let Some(v) = args.$field { cfg.$field = v.into(); }
        )*};
    }
    set!(alpha, beta, lambda, iters, lr, ust_alpha, levels, upscale, blur_sigma, seed, network);
    for (dst, src) in [
        (&mut cfg.content, args.content),
        (&mut cfg.style, args.style),
        (&mut cfg.style2, args.style2),
        (&mut cfg.mask, args.mask),
        (&mut cfg.output, args.output),
        (&mut cfg.report, args.report),
        (&mut cfg.trace, args.trace),
    ] {
        if src.is_some() {
            *dst = src;
        }
    }
    if !args.region_styles.is_empty() {
        cfg.region_styles = args.region_styles;
    }
    if !args.weights.is_empty() {
        cfg.weights = args.weights;
    }
    cfg.shift |= args.shift;
    cfg.chained |= args.chained;
    if let Some(o) = args.optimizer {
        cfg.optimizer = o.parse::<OptimizerKind>()?;
    }
    if let Some(c) = args.color {
        cfg.color = c.parse::<ColorMode>()?;
    }
    if let Some(i) = args.init {
        cfg.init = if i == "noise" { InitKind::Noise } else { InitKind::Content };
    }
    Ok(cfg)
}

fn execute(cli: Cli) -> stylize_core::Result<()> {
    let (cmd, args) = match cli.command {
        Cmd::Nst(a) => (Command::Nst, a),
        Cmd::Ust(a) => (Command::Ust, a),
        Cmd::ColorMatch(a) => (Command::ColorMatch, a),
        Cmd::SynthWeights(s) => {
            let w = pipeline::synth_weights(&s.kind, s.seed)?;
            w.save(&s.output)?;
            println!("wrote {} tensors to {}", w.len(), s.output.display());
            return Ok(());
        }
    };
    let cfg = {
        use stylize_core::error::StageExt;
        merge(args).stage("config")?
    };
    let summary = pipeline::run(cmd, &cfg)?;
    for key in ["loss.initial", "loss.final", "ust.seconds", "time.total_ms", "report"] {
        if let Some(v) = summary.report.get(key) {
            println!("{key} = {v}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                if !e.to_string().contains(&s.to_string()) {
                    eprintln!("  caused by: {s}");
                }
                src = s.source();
            }
            ExitCode::FAILURE
        }
    }
}
