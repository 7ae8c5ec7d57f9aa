//! First- and quasi-second-order minimizers over flat parameter vectors.

use std::collections::VecDeque;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{Shape3, Tensor};

/// Something that can be evaluated with its gradient.
pub trait Objective {
    fn evaluate(&mut self, x: &[f64]) -> Result<(f64, Vec<f64>)>;
}

impl<F> Objective for F
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    fn evaluate(&mut self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        Ok(self(x))
    }
}

/// Adapts a fallible closure.
pub struct Fallible<F>(pub F);

impl<F> Objective for Fallible<F>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    fn evaluate(&mut self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        (self.0)(x)
    }
}

/// Per-coordinate box applied after every step.
#[derive(Clone, Debug, PartialEq)]
pub enum Bounds {
    None,
    /// `(lo, hi)` per coordinate group of `group` consecutive entries;
    /// used for per-channel pixel ranges.
    Grouped { group: usize, ranges: Vec<(f64, f64)> },
}

impl Bounds {
    pub fn project(&self, x: &mut [f64]) {
        if let Bounds::Grouped { group, ranges } = self {
            for (chunk, (lo, hi)) in x.chunks_mut(*group).zip(ranges) {
                chunk.iter_mut().for_each(|v| *v = v.clamp(*lo, *hi));
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            lr: 1.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LbfgsParams {
    pub history: usize,
    pub c1: f64,
    pub max_line_search: usize,
}

impl Default for LbfgsParams {
    fn default() -> Self {
        LbfgsParams {
            history: 10,
            c1: 1e-4,
            max_line_search: 20,
        }
    }
}

/// Result of a run: the final iterate and `trace[k] = f(x_k)`.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizeResult {
    pub x: Vec<f64>,
    pub trace: Vec<f64>,
    /// Iterations actually taken (less than requested on early exit).
    pub iterations: usize,
}

impl OptimizeResult {
    pub fn final_loss(&self) -> f64 {
        *self.trace.last().expect("trace holds the starting loss")
    }
}

fn eval_checked(f: &mut dyn Objective, x: &[f64], iteration: usize) -> Result<(f64, Vec<f64>)> {
    let (v, g) = f.evaluate(x)?;
    if g.len() != x.len() {
        return Err(Error::shape(format!(
            "objective returned {} gradient entries for {} parameters",
            g.len(),
            x.len()
        )));
    }
    if !v.is_finite() || g.iter().any(|d| !d.is_finite()) {
        return Err(Error::NonFinite { iteration });
    }
    Ok((v, g))
}

/// Bias-corrected Adam for `iters` steps.
pub fn run_adam(
    f: &mut dyn Objective,
    x0: &[f64],
    iters: usize,
    params: &AdamParams,
    bounds: &Bounds,
) -> Result<OptimizeResult> {
    let mut x = x0.to_vec();
    bounds.project(&mut x);
    let n = x.len();
    let (mut m, mut v) = (vec![0.0; n], vec![0.0; n]);
    let (mut b1t, mut b2t) = (1.0, 1.0);
    let (mut loss, mut g) = eval_checked(f, &x, 0)?;
    let mut trace = vec![loss];
    for t in 1..=iters {
        b1t *= params.beta1;
        b2t *= params.beta2;
        for i in 0..n {
            m[i] = params.beta1 * m[i] + (1.0 - params.beta1) * g[i];
            v[i] = params.beta2 * v[i] + (1.0 - params.beta2) * g[i] * g[i];
            let mh = m[i] / (1.0 - b1t);
            let vh = v[i] / (1.0 - b2t);
            x[i] -= params.lr * mh / (vh.sqrt() + params.eps);
        }
        bounds.project(&mut x);
        (loss, g) = eval_checked(f, &x, t)?;
        trace.push(loss);
    }
    Ok(OptimizeResult {
        x,
        trace,
        iterations: iters,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Limited-memory BFGS with an Armijo backtracking line search.
///
/// Runs at most `iters` iterations; stops early at a zero gradient or after
/// three consecutive failed line searches, returning the best iterate seen.
pub fn run_lbfgs(
    f: &mut dyn Objective,
    x0: &[f64],
    iters: usize,
    params: &LbfgsParams,
    bounds: &Bounds,
) -> Result<OptimizeResult> {
    let mut x = x0.to_vec();
    bounds.project(&mut x);
    let (mut loss, mut g) = eval_checked(f, &x, 0)?;
    let mut trace = vec![loss];
    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut failures = 0;
    let mut taken = 0;

    for it in 1..=iters {
        if g.iter().all(|&d| d == 0.0) {
            break;
        }
        // two-loop recursion
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(pairs.len());
        for (s, y, rho) in pairs.iter().rev() {
            let a = rho * dot(s, &q);
            q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
            alphas.push(a);
        }
        match pairs.back() {
            Some((s, y, _)) => {
                let gamma = dot(s, y) / dot(y, y);
                q.iter_mut().for_each(|v| *v *= gamma);
            }
            None => {
                let scale = 1.0 / dot(&g, &g).sqrt().max(1.0);
                q.iter_mut().for_each(|v| *v *= scale);
            }
        }
        for ((s, y, rho), a) in pairs.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
        }
        let mut dir: Vec<f64> = q.iter().map(|v| -v).collect();
        let mut slope = dot(&g, &dir);
        if !(slope < 0.0) {
            // not a descent direction; restart from steepest descent
            pairs.clear();
            let scale = 1.0 / dot(&g, &g).sqrt().max(1.0);
            dir = g.iter().map(|v| -v * scale).collect();
            slope = dot(&g, &dir);
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..params.max_line_search {
            let mut trial: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + step * d).collect();
            bounds.project(&mut trial);
            let (tv, tg) = eval_checked(f, &trial, it)?;
            if tv <= loss + params.c1 * step * slope {
                accepted = Some((trial, tv, tg));
                break;
            }
            step *= 0.5;
        }
        taken = it;
        match accepted {
            Some((nx, nv, ng)) => {
                failures = 0;
                let s: Vec<f64> = nx.iter().zip(&x).map(|(a, b)| a - b).collect();
                let y: Vec<f64> = ng.iter().zip(&g).map(|(a, b)| a - b).collect();
                let sy = dot(&s, &y);
                if sy > 1e-10 {
                    if pairs.len() == params.history {
                        pairs.pop_front();
                    }
                    if params.history > 0 {
                        pairs.push_back((s, y, 1.0 / sy));
                    }
                }
                x = nx;
                loss = nv;
                g = ng;
            }
            None => {
                failures += 1;
                pairs.clear();
            }
        }
        trace.push(loss);
        if failures >= 3 {
            break;
        }
    }
    Ok(OptimizeResult {
        x,
        trace,
        iterations: taken,
    })
}

/// Starting image in network space.
#[derive(Clone, Debug, PartialEq)]
pub enum InitMode {
    /// Start from the (preprocessed) content image.
    Content,
    /// `N(0, sigma * scale / 255)` per value, i.e. `sigma` in 8-bit units.
    Noise { sigma: f64, seed: u64 },
}

pub const DEFAULT_NOISE_SIGMA: f64 = 50.0;

pub fn init_image(content: &Tensor, mode: &InitMode, scale: f64) -> Result<Tensor> {
    match mode {
        InitMode::Content => Ok(content.clone()),
        InitMode::Noise { sigma, seed } => noise_image(content.shape(), *sigma * scale / 255.0, *seed),
    }
}

pub fn noise_image(shape: Shape3, std: f64, seed: u64) -> Result<Tensor> {
    let dist = Normal::new(0.0, std)
        .map_err(|e| Error::argument(format!("invalid noise std {std}: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::new(shape, (0..shape.len()).map(|_| dist.sample(&mut rng)).collect())
}
