//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test -p stylize-core --test acceptance`. Tolerances are
//! pinned below; every criterion runs on generated fixtures and weights.

use std::collections::BTreeMap;
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use stylize_core::color::{compute_stats, fit_color_transform, rel_frobenius};
use stylize_core::gradcheck::{check_random, check_random_with, GradCheck, Stencil};
use stylize_core::losses::{
    chained_gram, content_loss, gram, style_loss_terms, total_loss, tv_loss, ChainPair, LossParts,
    StyleConfig, StyleLayer, StylePlan, StyleTarget, StyleTerm, DEFAULT_TV_WEIGHT,
};
use stylize_core::nst::{self, NstOptions, NstProblem};
use stylize_core::optimize::{run_adam, run_lbfgs, AdamParams, Bounds, LbfgsParams};
use stylize_core::pipeline::postprocess;
use stylize_core::tensor::{
    avgpool2x2, avgpool2x2_backward, conv2d_backward, conv2d_forward, maxpool2x2,
    maxpool2x2_backward, relu, relu_backward, upsample_nearest2x, Kernel,
};
use stylize_core::vgg::synthetic::{random_weights, Init};
use stylize_core::vgg::NetworkSpec;
use stylize_core::wct::{self, color, eig_sym, whiten, FlatFeatures};
use stylize_core::{Shape3, Tensor};

// pinned tolerances
const GRAD_TOL: f64 = 1e-5;
const GRAD_COORDS: usize = 100;
const GRAD_BUDGET_S: f64 = 120.0;
// the composite loss is ~1e8 in network units while some gradient entries are ~1;
// a fourth-order stencil keeps truncation and evaluation noise both below tolerance
const COMPOSITE_EPS: f64 = 3e-4;
const GRAM_TOL: f64 = 1e-12;
const WHITEN_TOL: f64 = 1e-4;
const COLOR_COV_TOL: f64 = 1e-3;
const COLOR_ROUNDTRIP_TOL: f64 = 1e-6;
const CT_MEAN_TOL: f64 = 1e-6;
const CT_COV_TOL: f64 = 1e-5;
const CT_PAIRS: usize = 20;
const NST_RATIO: f64 = 0.5;
const NST_ITERS: usize = 300;
const NST_BUDGET_S: f64 = 300.0;
const QUAD_DIM: usize = 50;
const QUAD_COND: f64 = 100.0;
const QUAD_TARGET: f64 = 1e-6;
const QUAD_MAX_ITERS: usize = 20_000;
const MASK_TOL: f64 = 1e-12;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

struct Rng64(ChaCha8Rng);

impl Rng64 {
    fn new(seed: u64) -> Self {
        Rng64(ChaCha8Rng::seed_from_u64(seed))
    }
    fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        self.0.random_range(lo..hi)
    }
    fn normal(&mut self) -> f64 {
        self.0.sample(StandardNormal)
    }
    fn tensor(&mut self, c: usize, h: usize, w: usize) -> Tensor {
        let s = Shape3::new(c, h, w).unwrap();
        Tensor::new(s, (0..s.len()).map(|_| self.uniform(-1.0, 1.0)).collect()).unwrap()
    }
}

fn t_of(like: &Tensor, x: &[f64]) -> Tensor {
    Tensor::new(like.shape(), x.to_vec()).unwrap()
}

// ---------------------------------------------------------------------------
// gradient suite

fn grad_suite() -> Outcome {
    let start = Instant::now();
    let mut rng = Rng64::new(100);
    let mut results: Vec<(&str, GradCheck)> = Vec::new();
    let eps = 1e-6;

    // conv: L = <conv(x), W>
    let x = rng.tensor(3, 9, 9);
    let k = Kernel::new(4, 3, (0..4 * 3 * 9).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap();
    let bias = [0.1, -0.2, 0.3, 0.0];
    let wout = rng.tensor(4, 9, 9);
    let g = conv2d_backward(&x, &k, &wout).unwrap();
    let f = |d: &[f64]| conv2d_forward(&t_of(&x, d), &k, &bias).unwrap().dot(&wout).unwrap();
    results.push(("conv", check_random(f, x.data(), g.data(), GRAD_COORDS, eps, 1)));

    // relu, max pool, avg pool, upsample: L = <op(x), W>
    let x = rng.tensor(3, 8, 8);
    let w8 = rng.tensor(3, 8, 8);
    let g = relu_backward(&x, &w8).unwrap();
    let f = |d: &[f64]| relu(&t_of(&x, d)).dot(&w8).unwrap();
    results.push(("relu", check_random(f, x.data(), g.data(), GRAD_COORDS, eps, 2)));

    let w4 = rng.tensor(3, 4, 4);
    let (_, idx) = maxpool2x2(&x).unwrap();
    let g = maxpool2x2_backward(&idx, &w4, x.shape()).unwrap();
    let f = |d: &[f64]| maxpool2x2(&t_of(&x, d)).unwrap().0.dot(&w4).unwrap();
    results.push(("maxpool", check_random(f, x.data(), g.data(), GRAD_COORDS, eps, 3)));

    let g = avgpool2x2_backward(&w4, x.shape()).unwrap();
    let f = |d: &[f64]| avgpool2x2(&t_of(&x, d)).unwrap().dot(&w4).unwrap();
    results.push(("avgpool", check_random(f, x.data(), g.data(), GRAD_COORDS, eps, 4)));

    let small = rng.tensor(3, 4, 4);
    let g = avgpool2x2(&w8).unwrap().scale(4.0);
    let f = |d: &[f64]| upsample_nearest2x(&t_of(&small, d)).dot(&w8).unwrap();
    results.push(("upsample", check_random(f, small.data(), g.data(), GRAD_COORDS, eps, 5)));

    // content, tv
    let target = rng.tensor(3, 8, 8);
    let (_, g) = content_loss(&x, &target).unwrap();
    let f = |d: &[f64]| content_loss(&t_of(&x, d), &target).unwrap().0;
    results.push(("content", check_random(f, x.data(), g.data(), GRAD_COORDS, eps, 6)));
    let (_, g) = tv_loss(&x);
    let f = |d: &[f64]| tv_loss(&t_of(&x, d)).0;
    results.push(("tv", check_random(f, x.data(), g.data(), GRAD_COORDS, eps, 7)));

    // style: plain, shifted, chained, masked (two layers, pooled alignment)
    let gen: BTreeMap<String, Tensor> =
        [("a".to_string(), rng.tensor(3, 8, 8)), ("b".to_string(), rng.tensor(5, 4, 4))].into();
    let sty: BTreeMap<String, Tensor> =
        [("a".to_string(), rng.tensor(3, 8, 8)), ("b".to_string(), rng.tensor(5, 4, 4))].into();
    let mask = Tensor::from_fn(Shape3::new(1, 8, 8).unwrap(), |_, y, x| ((y + x) as f64 / 14.0).min(1.0));
    let flat = |m: &BTreeMap<String, Tensor>| -> Vec<f64> { m.values().flat_map(|t| t.data().to_vec()).collect() };
    let unflat = |x: &[f64]| -> BTreeMap<String, Tensor> {
        let n = gen["a"].len();
        [("a".to_string(), t_of(&gen["a"], &x[..n])), ("b".to_string(), t_of(&gen["b"], &x[n..]))].into()
    };
    let variants: [(&str, bool, bool, bool); 4] = [
        ("style", false, false, false),
        ("style-shifted", true, false, false),
        ("style-chained", true, true, false),
        ("style-masked", true, true, true),
    ];
    for (name, shift, chained, masked) in variants {
        let plan = StylePlan {
            layers: vec![
                StyleLayer { name: "a".into(), weight: 0.8 },
                StyleLayer { name: "b".into(), weight: 0.2 },
            ],
            chains: if chained {
                vec![ChainPair { deep: "b".into(), shallow: "a".into(), weight: 0.2 }]
            } else {
                vec![]
            },
            shift,
        };
        let tgt = StyleTarget::from_features(&plan, &sty).unwrap();
        let terms = [StyleTerm { target: &tgt, mask: masked.then_some(&mask) }];
        let (_, gr) = style_loss_terms(&plan, &gen, &terms).unwrap();
        let x0 = flat(&gen);
        let f = |d: &[f64]| style_loss_terms(&plan, &unflat(d), &terms).unwrap().0;
        results.push((name, check_random(f, &x0, &flat(&gr), GRAD_COORDS, eps, 8)));
    }

    // total objective through a small network, masked two-style variant
    let net = NetworkSpec::from_blocks("grad", "", 3, &[(2, 6), (2, 8)]);
    let w = random_weights(&net, Init::He, 9);
    let content = fixture_content(8, 8);
    let style = fixture_style(8, 8);
    let opts = NstOptions {
        // moderate weights keep the total well scaled for central differences
        style: StyleConfig { beta: 10.0, use_shift: true, use_chained: true, ..StyleConfig::default() },
        ..NstOptions::default()
    };
    let masks = stylize_core::losses::MaskSet::binary(mask).unwrap();
    for (name, m) in [("total", None), ("total-masked", Some(&masks))] {
        let styles = if m.is_some() { vec![style.clone(), content.clone()] } else { vec![style.clone()] };
        let p = NstProblem::new(&net, &w, &content, &styles, m, &opts).unwrap();
        let noise = Rng64::new(10).tensor(3, 32, 32);
        let x = p.content_input().zip_map(&noise, |a, b| a + 2.0 * b).unwrap();
        let (_, _, g) = p.evaluate(&x).unwrap();
        let f = |d: &[f64]| p.evaluate(&t_of(&x, d)).unwrap().1;
        results.push((
            name,
            check_random_with(f, x.data(), g.data(), GRAD_COORDS, COMPOSITE_EPS, 11, Stencil::FourPoint),
        ));
    }

    let secs = start.elapsed().as_secs_f64();
    let worst = results
        .iter()
        .max_by(|a, b| a.1.max_rel_err.total_cmp(&b.1.max_rel_err))
        .unwrap();
    let failed: Vec<&str> = results.iter().filter(|r| !r.1.passes(GRAD_TOL)).map(|r| r.0).collect();
    outcome(
        failed.is_empty() && secs < GRAD_BUDGET_S,
        format!(
            "{} ops x {GRAD_COORDS} coords, worst {} rel err {:.2e} (< {GRAD_TOL:e}), {secs:.1} s (< {GRAD_BUDGET_S} s){}",
            results.len(),
            worst.0,
            worst.1.max_rel_err,
            if failed.is_empty() { String::new() } else { format!(", failing: {failed:?}") }
        ),
    )
}

// ---------------------------------------------------------------------------

fn gram_oracle() -> Outcome {
    let mut rng = Rng64::new(200);
    let x = rng.tensor(3, 4, 4);
    let y = rng.tensor(3, 4, 4);
    let brute = |a: &Tensor, b: &Tensor, s: f64| {
        let mut out = vec![0.0; 9];
        for i in 0..3 {
            for j in 0..3 {
                let mut acc = 0.0;
                for h in 0..4 {
                    for w in 0..4 {
                        acc += (a.get(i, h, w) - s) * (b.get(j, h, w) - s);
                    }
                }
                out[i * 3 + j] = acc / 48.0;
            }
        }
        out
    };
    let diff = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
    let e1 = diff(&gram(&x, false).data, &brute(&x, &x, 0.0));
    let e2 = diff(&gram(&x, true).data, &brute(&x, &x, 1.0));
    let e3 = diff(&chained_gram(&x, &y).unwrap().data, &brute(&x, &y, 1.0));
    let worst = e1.max(e2).max(e3);
    outcome(
        worst <= GRAM_TOL,
        format!("gram {e1:.1e}, shifted {e2:.1e}, chained {e3:.1e} (<= {GRAM_TOL:e})"),
    )
}

fn correlated(rng: &mut Rng64, c: usize, n: usize) -> FlatFeatures {
    let mix: Vec<f64> = (0..c * c).map(|_| rng.normal()).collect();
    let base: Vec<f64> = (0..c * n).map(|_| rng.normal()).collect();
    let mut data = vec![0.0; c * n];
    for i in 0..c {
        for j in 0..c {
            for p in 0..n {
                data[i * n + p] += mix[i * c + j] * base[j * n + p];
            }
        }
        for p in 0..n {
            data[i * n + p] += i as f64;
        }
    }
    FlatFeatures::new(c, n, data).unwrap()
}

fn whitening() -> Outcome {
    let mut rng = Rng64::new(300);
    let mut details = Vec::new();
    let mut pass = true;
    for (c, n) in [(16, 64), (64, 32)] {
        let f = correlated(&mut rng, c, n);
        let eig = eig_sym(&f.covariance(), c).unwrap();
        let cov = whiten(&f).unwrap().covariance();
        let proj = eig.spectral_map(|_| 1.0);
        let err = cov.iter().zip(&proj).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        pass &= err < WHITEN_TOL;
        details.push(format!("{c}x{n} rank {} err {err:.1e}", eig.rank));
    }
    outcome(pass, format!("{} (< {WHITEN_TOL:e})", details.join(", ")))
}

fn coloring() -> Outcome {
    let mut rng = Rng64::new(400);
    let rel = |a: &[f64], b: &[f64]| {
        let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        d / b.iter().map(|v| v * v).sum::<f64>().sqrt()
    };
    let mut worst = 0.0f64;
    for _ in 0..5 {
        let fc = correlated(&mut rng, 16, 100);
        let fs = correlated(&mut rng, 16, 100);
        let out = color(&whiten(&fc).unwrap(), &fs).unwrap();
        worst = worst.max(rel(&out.covariance(), &fs.covariance()));
    }
    let fs = correlated(&mut rng, 16, 100);
    let round = rel(&color(&whiten(&fs).unwrap(), &fs).unwrap().covariance(), &fs.covariance());
    outcome(
        worst < COLOR_COV_TOL && round < COLOR_ROUNDTRIP_TOL,
        format!("5 random pairs worst {worst:.1e} (< {COLOR_COV_TOL:e}), round trip {round:.1e} (< {COLOR_ROUNDTRIP_TOL:e})"),
    )
}

fn random_color_image(rng: &mut Rng64, gray: bool) -> Tensor {
    let (h, w) = (24, 24);
    let m: Vec<f64> = (0..9).map(|_| rng.uniform(-0.3, 0.3)).collect();
    let base: Vec<f64> = (0..3).map(|_| rng.uniform(0.2, 0.8)).collect();
    let mut t = Tensor::zeros(Shape3::new(3, h, w).unwrap());
    for y in 0..h {
        for x in 0..w {
            let z = [rng.normal(), rng.normal(), rng.normal()];
            if gray {
                let v = base[0] + 0.2 * z[0];
                (0..3).for_each(|c| t.set(c, y, x, v));
            } else {
                for c in 0..3 {
                    t.set(c, y, x, base[c] + m[c * 3] * z[0] + m[c * 3 + 1] * z[1] + m[c * 3 + 2] * z[2]);
                }
            }
        }
    }
    t
}

fn color_transform() -> Outcome {
    let mut rng = Rng64::new(500);
    let (mut mean_err, mut cov_err) = (0.0f64, 0.0f64);
    for i in 0..CT_PAIRS {
        // the last pair is the degenerate grayscale style; an exactly
        // grayscale style has rank-1 color covariance, so a full-rank target
        // is unreachable by any linear map and the pair uses grayscale content
        let gray = i == CT_PAIRS - 1;
        let content = random_color_image(&mut rng, gray);
        let style = random_color_image(&mut rng, gray);
        let cs = compute_stats(&content).unwrap();
        let t = fit_color_transform(&cs, &compute_stats(&style).unwrap()).unwrap();
        let os = compute_stats(&t.apply(&style).unwrap()).unwrap();
        mean_err = mean_err.max((0..3).map(|c| (os.mean[c] - cs.mean[c]).abs()).fold(0.0, f64::max));
        cov_err = cov_err.max(rel_frobenius(&os.cov, &cs.cov));
    }
    // informational: grayscale style against color content
    let content = random_color_image(&mut rng, false);
    let style = random_color_image(&mut rng, true);
    let cs = compute_stats(&content).unwrap();
    let out = fit_color_transform(&cs, &compute_stats(&style).unwrap())
        .unwrap()
        .apply(&style)
        .unwrap();
    let os = compute_stats(&out).unwrap();
    let gm = (0..3).map(|c| (os.mean[c] - cs.mean[c]).abs()).fold(0.0, f64::max);
    println!(
        "  info: grayscale style vs color content: mean err {gm:.1e}, cov rel err {:.2} (rank-1 source, covariance unreachable), finite {}",
        rel_frobenius(&os.cov, &cs.cov),
        out.is_finite()
    );
    outcome(
        mean_err < CT_MEAN_TOL && cov_err < CT_COV_TOL,
        format!("{CT_PAIRS} pairs incl. grayscale: mean err {mean_err:.1e} (< {CT_MEAN_TOL:e}), cov rel err {cov_err:.1e} (< {CT_COV_TOL:e})"),
    )
}

fn objective_composition() -> Outcome {
    let mut rng = Rng64::new(600);
    let z = Tensor::zeros(Shape3::new(1, 2, 2).unwrap());
    let mut exact = true;
    for _ in 0..1000 {
        let cfg = StyleConfig {
            alpha: rng.uniform(0.0, 10.0),
            beta: rng.uniform(0.0, 1e5),
            lambda: rng.uniform(0.0, 1.0),
            ..StyleConfig::default()
        };
        let parts = LossParts {
            content: rng.uniform(0.0, 1e6),
            style: rng.uniform(0.0, 1e-3),
            tv: rng.uniform(0.0, 1e4),
        };
        let (v, _) = total_loss(parts, [&z, &z, &z], &cfg).unwrap();
        exact &= v.to_bits() == (cfg.alpha * parts.content + cfg.beta * parts.style + cfg.lambda * parts.tv).to_bits();
    }
    let lambda = StyleConfig::default().lambda;
    outcome(
        exact && lambda == 8.5e-2 && DEFAULT_TV_WEIGHT == 8.5e-2,
        format!("1000 random compositions bit-exact: {exact}; default lambda = {lambda}"),
    )
}

fn fixture_content(h: usize, w: usize) -> Tensor {
    // soft shapes on a gradient
    Tensor::from_fn(Shape3::new(3, h, w).unwrap(), |c, y, x| {
        let (fy, fx) = (y as f64 / h as f64, x as f64 / w as f64);
        let disk = if (fx - 0.4).powi(2) + (fy - 0.5).powi(2) < 0.06 { 0.35 } else { 0.0 };
        (0.2 + 0.5 * fy + 0.1 * c as f64 + disk * (1.0 - 0.4 * c as f64)).clamp(0.0, 1.0)
    })
}

fn fixture_style(h: usize, w: usize) -> Tensor {
    // diagonal colored stripes
    Tensor::from_fn(Shape3::new(3, h, w).unwrap(), |c, y, x| {
        let phase = (x + 2 * y) as f64 * 0.8 + c as f64 * 2.1;
        0.5 + 0.45 * phase.sin()
    })
}

fn desk_nst() -> Outcome {
    let net = NetworkSpec::from_blocks("desk", "", 3, &[(2, 16), (2, 32)]);
    let weights = random_weights(&net, Init::He, 7);
    let content = fixture_content(64, 64);
    let style = fixture_style(64, 64);
    let opts = NstOptions { iters: NST_ITERS, ..NstOptions::default() };
    let start = Instant::now();
    let a = nst::stylize(&net, &weights, &content, &[style.clone()], None, &opts).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let b = nst::stylize(&net, &weights, &content, &[style], None, &opts).unwrap();
    let deterministic = a.image == b.image && a.trace == b.trace;
    let ratio = a.final_total() / a.initial_total();
    outcome(
        ratio < NST_RATIO && deterministic && secs < NST_BUDGET_S,
        format!(
            "64x64, 4-conv random net, {NST_ITERS} Adam iters: loss {:.3e} -> {:.3e} (ratio {ratio:.3} < {NST_RATIO}), deterministic {deterministic}, {secs:.1} s (< {NST_BUDGET_S} s)",
            a.initial_total(),
            a.final_total()
        ),
    )
}

fn iterations_to_target(trace: &[f64]) -> Option<usize> {
    trace.iter().position(|&v| v <= QUAD_TARGET * trace[0])
}

fn optimizer_property() -> Outcome {
    let d: Vec<f64> = (0..QUAD_DIM)
        .map(|i| QUAD_COND.powf(i as f64 / (QUAD_DIM - 1) as f64))
        .collect();
    let quad = |x: &[f64]| -> (f64, Vec<f64>) {
        let v = x.iter().zip(&d).map(|(x, d)| 0.5 * d * x * x).sum();
        (v, x.iter().zip(&d).map(|(x, d)| d * x).collect())
    };
    let x0 = vec![1.0; QUAD_DIM];
    let lb = run_lbfgs(&mut { quad }, &x0, QUAD_MAX_ITERS, &LbfgsParams::default(), &Bounds::None).unwrap();
    let lb_iters = iterations_to_target(&lb.trace);
    let mut details = vec![format!("L-BFGS {}", lb_iters.map_or("never".into(), |k| k.to_string()))];
    let mut pass = lb_iters.is_some();
    for lr in [0.3, 0.1, 0.03] {
        let p = AdamParams { lr, ..AdamParams::default() };
        let ad = run_adam(&mut { quad }, &x0, QUAD_MAX_ITERS, &p, &Bounds::None).unwrap();
        let k = iterations_to_target(&ad.trace);
        pass &= match (lb_iters, k) {
            (Some(l), Some(a)) => l < a,
            (Some(_), None) => true,
            _ => false,
        };
        details.push(format!(
            "Adam lr {lr}: {}",
            k.map_or(format!("not within {QUAD_MAX_ITERS}"), |k| k.to_string())
        ));
    }
    outcome(
        pass,
        format!("{QUAD_DIM}-dim quadratic, cond {QUAD_COND}, iterations to {QUAD_TARGET:e} x initial: {}", details.join(", ")),
    )
}

fn mask_algebra() -> Outcome {
    let mut rng = Rng64::new(800);
    let gen: BTreeMap<String, Tensor> =
        [("a".to_string(), rng.tensor(4, 8, 8)), ("b".to_string(), rng.tensor(6, 4, 4))].into();
    let sty: BTreeMap<String, Tensor> =
        [("a".to_string(), rng.tensor(4, 8, 8)), ("b".to_string(), rng.tensor(6, 4, 4))].into();
    let plan = StylePlan {
        layers: vec![
            StyleLayer { name: "a".into(), weight: 0.6 },
            StyleLayer { name: "b".into(), weight: 0.4 },
        ],
        chains: vec![ChainPair { deep: "b".into(), shallow: "a".into(), weight: 0.4 }],
        shift: true,
    };
    let tgt = StyleTarget::from_features(&plan, &sty).unwrap();
    let run = |plan: &StylePlan, tgt: &StyleTarget, m: Option<&Tensor>| {
        style_loss_terms(plan, &gen, &[StyleTerm { target: tgt, mask: m }]).unwrap()
    };
    let s8 = Shape3::new(1, 8, 8).unwrap();
    let (plain, gp) = run(&plan, &tgt, None);
    let (ones, go) = run(&plan, &tgt, Some(&Tensor::filled(s8, 1.0)));
    let ones_err = ((ones - plain) / plain).abs().max(
        gp.iter().map(|(k, g)| g.max_abs_diff(&go[k]).unwrap()).fold(0.0, f64::max),
    );
    let (zero, gz) = run(&plan, &tgt, Some(&Tensor::zeros(s8)));
    let zero_ok = zero == 0.0 && gz.values().all(|g| g.data().iter().all(|&v| v == 0.0));

    let single = StylePlan {
        layers: vec![StyleLayer { name: "a".into(), weight: 1.0 }],
        chains: vec![],
        shift: false,
    };
    let st = StyleTarget::from_features(&single, &sty).unwrap();
    let (full, _) = run(&single, &st, None);
    let (half, _) = run(&single, &st, Some(&Tensor::filled(s8, 0.5)));
    let half_err = (half / full - 0.25).abs();
    outcome(
        ones_err <= MASK_TOL && zero_ok && half_err <= MASK_TOL,
        format!(
            "ones vs unmasked {ones_err:.1e}, zeros give zero loss and gradient: {zero_ok}, half mask ratio err {half_err:.1e} (tol {MASK_TOL:e})"
        ),
    )
}

fn multilevel() -> Outcome {
    let weights = stylize_core::pipeline::synth_weights("ust", 3).unwrap();
    let pre = weights.preprocess;
    let content = pre.apply(&fixture_content(64, 96)).unwrap();
    let style = pre.apply(&fixture_style(64, 64)).unwrap();
    let accepted = wct::stylize_multilevel(&content, &style, 1.0, &[5, 4, 3, 2, 1], &weights);
    let (shape_ok, finite) = match &accepted {
        Ok((out, _)) => (out.shape() == content.shape(), out.is_finite()),
        Err(_) => (false, false),
    };
    let rejected = [&[1, 2, 3, 4, 5][..], &[1, 5], &[4, 5]]
        .iter()
        .all(|l| matches!(wct::stylize_multilevel(&content, &style, 1.0, l, &weights), Err(stylize_core::Error::Argument(_))));
    outcome(
        accepted.is_ok() && shape_ok && finite && rejected,
        format!(
            "[5,4,3,2,1] accepted: {}, 3x64x96 preserved: {shape_ok}, finite: {finite}, ascending orders rejected: {rejected}",
            accepted.is_ok()
        ),
    )
}

fn post_processing() -> Outcome {
    let img = fixture_content(24, 20);
    let out = postprocess(&img, 4, 2.0).unwrap();
    let shape_ok = out.shape() == Shape3::new(3, 96, 80).unwrap();
    let constant = Tensor::filled(Shape3::new(3, 9, 13).unwrap(), 0.625);
    let fixed = postprocess(&constant, 4, 2.0).unwrap();
    let fixed_err = fixed.data().iter().map(|v| (v - 0.625).abs()).fold(0.0, f64::max);
    let fixed_shape = fixed.shape() == Shape3::new(3, 36, 52).unwrap();
    // blur keeps the mean of the upscaled image up to edge effects
    let mean_in = img.sum() / img.len() as f64;
    let mean_out = out.sum() / out.len() as f64;
    let pass = shape_ok && fixed_shape && fixed_err < 1e-12 && (mean_in - mean_out).abs() < 1e-2;
    outcome(
        pass,
        format!(
            "x4 upscale + blur: 3x24x20 -> {}, constant fixed point err {fixed_err:.1e}, mean drift {:.1e}",
            out.shape(),
            (mean_in - mean_out).abs()
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("gradient suite", grad_suite),
        ("gram oracle", gram_oracle),
        ("whitening invariant", whitening),
        ("coloring invariant", coloring),
        ("color transform", color_transform),
        ("objective composition", objective_composition),
        ("desk-scale nst", desk_nst),
        ("optimizer property", optimizer_property),
        ("mask algebra", mask_algebra),
        ("multi-level shape/ordering", multilevel),
        ("post-processing", post_processing),
    ];
    let mut failures = 0;
    for (name, f) in criteria {
        let o = f();
        if !o.pass {
            failures += 1;
        }
        println!("{} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    println!("acceptance: {} passed, {failures} failed", criteria.len() - failures);
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
