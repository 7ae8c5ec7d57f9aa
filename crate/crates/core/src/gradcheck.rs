//! Central finite-difference gradient checks.

use rand::{seq::index::sample, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `|a - b| / max(|a|, |b|, floor)`, with a floor that keeps near-zero pairs
/// from producing meaningless ratios.
pub fn rel_err(a: f64, b: f64) -> f64 {
    rel_err_floor(a, b, 1e-12)
}

pub fn rel_err_floor(a: f64, b: f64, floor: f64) -> f64 {
    let d = (a - b).abs();
    if d == 0.0 {
        return 0.0;
    }
    d / a.abs().max(b.abs()).max(floor)
}

/// Outcome of comparing an analytic gradient with central differences.
#[derive(Clone, Debug)]
pub struct GradCheck {
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

impl GradCheck {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

/// Central difference stencils.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Stencil {
    /// `(f(x+h) - f(x-h)) / 2h`, error `O(h^2)`.
    #[default]
    TwoPoint,
    /// `(-f(x+2h) + 8f(x+h) - 8f(x-h) + f(x-2h)) / 12h`, error `O(h^4)`;
    /// allows larger steps when the loss value dwarfs a gradient entry.
    FourPoint,
}

pub fn central_difference4(f: &mut impl FnMut(&[f64]) -> f64, x: &[f64], i: usize, eps: f64) -> f64 {
    let mut probe = x.to_vec();
    let mut at = |k: f64| {
        probe[i] = x[i] + k * eps;
        f(&probe)
    };
    let (p2, p1, m1, m2) = (at(2.0), at(1.0), at(-1.0), at(-2.0));
    (-p2 + 8.0 * p1 - 8.0 * m1 + m2) / (12.0 * eps)
}

pub fn central_difference(f: &mut impl FnMut(&[f64]) -> f64, x: &[f64], i: usize, eps: f64) -> f64 {
    let mut probe = x.to_vec();
    probe[i] = x[i] + eps;
    let fp = f(&probe);
    probe[i] = x[i] - eps;
    let fm = f(&probe);
    (fp - fm) / (2.0 * eps)
}

/// Checks `analytic` against central differences of `f` at `coords`.
///
/// The step is `eps * max(1, |x_i|)`. Relative errors are floored at
/// `1e-7 * max|analytic|` so coordinates whose true derivative is
/// numerically zero are judged on an absolute scale.
pub fn check_coords(
    f: impl FnMut(&[f64]) -> f64,
    x: &[f64],
    analytic: &[f64],
    coords: &[usize],
    eps: f64,
) -> GradCheck {
    check_coords_with(f, x, analytic, coords, eps, Stencil::TwoPoint)
}

pub fn check_coords_with(
    mut f: impl FnMut(&[f64]) -> f64,
    x: &[f64],
    analytic: &[f64],
    coords: &[usize],
    eps: f64,
    stencil: Stencil,
) -> GradCheck {
    assert_eq!(x.len(), analytic.len(), "gradient length mismatch");
    let scale = analytic.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = (1e-7 * scale).max(1e-12);
    let mut report = GradCheck {
        checked: 0,
        max_rel_err: 0.0,
        worst_index: 0,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
    };
    for &i in coords {
        let h = eps * x[i].abs().max(1.0);
        let numeric = match stencil {
            Stencil::TwoPoint => central_difference(&mut f, x, i, h),
            Stencil::FourPoint => central_difference4(&mut f, x, i, h),
        };
        let err = rel_err_floor(analytic[i], numeric, floor);
        report.checked += 1;
        if err > report.max_rel_err || report.checked == 1 {
            report.max_rel_err = err;
            report.worst_index = i;
            report.worst_analytic = analytic[i];
            report.worst_numeric = numeric;
        }
    }
    report
}

/// Same as [`check_coords`] on `count` coordinates drawn without replacement.
pub fn check_random(
    f: impl FnMut(&[f64]) -> f64,
    x: &[f64],
    analytic: &[f64],
    count: usize,
    eps: f64,
    seed: u64,
) -> GradCheck {
    check_random_with(f, x, analytic, count, eps, seed, Stencil::TwoPoint)
}

pub fn check_random_with(
    f: impl FnMut(&[f64]) -> f64,
    x: &[f64],
    analytic: &[f64],
    count: usize,
    eps: f64,
    seed: u64,
    stencil: Stencil,
) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coords = sample(&mut rng, x.len(), count.min(x.len())).into_vec();
    check_coords_with(f, x, analytic, &coords, eps, stencil)
}
