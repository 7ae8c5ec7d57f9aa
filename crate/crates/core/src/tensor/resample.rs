use super::{Shape3, Tensor};
use crate::error::{Error, Result};

/// Source taps and weight for one output coordinate under half-pixel-centred
/// bilinear sampling with clamped edges.
fn bilinear_taps(out_len: usize, in_len: usize) -> Vec<(usize, usize, f64)> {
    let ratio = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let src = ((o as f64 + 0.5) * ratio - 0.5).clamp(0.0, (in_len - 1) as f64);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(in_len - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

/// Bilinear resize to `out_h x out_w` with half-pixel-centred sampling.
///
/// An exact factor-2 reduction averages each 2x2 block.
pub fn resize_bilinear(input: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let s = input.shape();
    let out_shape = Shape3::new(s.c, out_h, out_w)?;
    let ys = bilinear_taps(out_h, s.h);
    let xs = bilinear_taps(out_w, s.w);
    Ok(Tensor::from_fn(out_shape, |c, y, x| {
        let (y0, y1, ty) = ys[y];
        let (x0, x1, tx) = xs[x];
        let top = input.get(c, y0, x0) * (1.0 - tx) + input.get(c, y0, x1) * tx;
        let bottom = input.get(c, y1, x0) * (1.0 - tx) + input.get(c, y1, x1) * tx;
        top * (1.0 - ty) + bottom * ty
    }))
}

pub fn upscale_bilinear(image: &Tensor, factor: usize) -> Result<Tensor> {
    if factor == 0 {
        return Err(Error::argument("upscale factor must be at least 1"));
    }
    if factor == 1 {
        return Ok(image.clone());
    }
    resize_bilinear(image, image.height() * factor, image.width() * factor)
}

/// Normalized 1-D Gaussian taps with radius `ceil(3 sigma)`.
pub fn gaussian_kernel_1d(sigma: f64) -> Result<Vec<f64>> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::argument(format!(
            "blur sigma must be positive, got {sigma}"
        )));
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut taps: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= total);
    Ok(taps)
}

/// Separable Gaussian blur with clamp-to-edge borders.
pub fn gaussian_blur(image: &Tensor, sigma: f64) -> Result<Tensor> {
    let taps = gaussian_kernel_1d(sigma)?;
    let r = (taps.len() / 2) as isize;
    let Shape3 { h, w, .. } = image.shape();
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;

    let horizontal = Tensor::from_fn(image.shape(), |c, y, x| {
        taps.iter()
            .enumerate()
            .map(|(k, t)| t * image.get(c, y, clamp(x as isize + k as isize - r, w)))
            .sum()
    });
    Ok(Tensor::from_fn(image.shape(), |c, y, x| {
        taps.iter()
            .enumerate()
            .map(|(k, t)| t * horizontal.get(c, clamp(y as isize + k as isize - r, h), x))
            .sum()
    }))
}

/// Amount of bottom/right padding added by [`pad_reflect_to_multiple`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Padding {
    pub orig_h: usize,
    pub orig_w: usize,
    pub bottom: usize,
    pub right: usize,
}

impl Padding {
    pub fn is_none(&self) -> bool {
        self.bottom == 0 && self.right == 0
    }
}

fn reflect(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = i % period;
    if m < n {
        m
    } else {
        period - m
    }
}

/// Reflect-pads the bottom and right edges so both extents become multiples of `multiple`.
pub fn pad_reflect_to_multiple(input: &Tensor, multiple: usize) -> Result<(Tensor, Padding)> {
    if multiple == 0 {
        return Err(Error::argument("padding multiple must be positive"));
    }
    let s = input.shape();
    let h = s.h.div_ceil(multiple) * multiple;
    let w = s.w.div_ceil(multiple) * multiple;
    let pad = Padding {
        orig_h: s.h,
        orig_w: s.w,
        bottom: h - s.h,
        right: w - s.w,
    };
    if pad.is_none() {
        return Ok((input.clone(), pad));
    }
    let out = Tensor::from_fn(Shape3 { c: s.c, h, w }, |c, y, x| {
        input.get(c, reflect(y, s.h), reflect(x, s.w))
    });
    Ok((out, pad))
}

/// Keeps the top-left `h x w` window, undoing [`pad_reflect_to_multiple`].
pub fn crop(input: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let s = input.shape();
    if h > s.h || w > s.w || h == 0 || w == 0 {
        return Err(Error::shape(format!(
            "cannot crop {s} to {h}x{w}"
        )));
    }
    if h == s.h && w == s.w {
        return Ok(input.clone());
    }
    Ok(Tensor::from_fn(Shape3 { c: s.c, h, w }, |c, y, x| {
        input.get(c, y, x)
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{random_tensor, TestRng};

    #[test]
    fn upscale_factor_one_is_identity() {
        let mut rng = TestRng::new(1);
        let x = random_tensor(&mut rng, Shape3::new(3, 5, 7).unwrap());
        assert_eq!(upscale_bilinear(&x, 1).unwrap(), x);
        assert!(matches!(upscale_bilinear(&x, 0), Err(Error::Argument(_))));
    }

    #[test]
    fn upscale_constant_stays_constant() {
        let x = Tensor::filled(Shape3::new(3, 4, 6).unwrap(), 0.37);
        let up = upscale_bilinear(&x, 4).unwrap();
        assert_eq!(up.shape(), Shape3::new(3, 16, 24).unwrap());
        assert!(up.data().iter().all(|v| (v - 0.37).abs() < 1e-15));
    }

    #[test]
    fn upscale_ramp_is_monotone_and_bounded() {
        let x = Tensor::from_fn(Shape3::new(1, 2, 6).unwrap(), |_, _, c| c as f64);
        let up = upscale_bilinear(&x, 4).unwrap();
        for y in 0..up.height() {
            for col in 1..up.width() {
                assert!(up.get(0, y, col) >= up.get(0, y, col - 1));
            }
            for col in 0..up.width() {
                // direct evaluation of the half-pixel bilinear formula
                let src = ((col as f64 + 0.5) / 4.0 - 0.5).clamp(0.0, 5.0);
                assert!((up.get(0, y, col) - src).abs() < 1e-12);
                let lo = src.floor();
                let hi = src.ceil();
                assert!(up.get(0, y, col) >= lo && up.get(0, y, col) <= hi);
            }
        }
    }

    #[test]
    fn halving_resize_averages_blocks() {
        let mut rng = TestRng::new(6);
        let x = random_tensor(&mut rng, Shape3::new(2, 8, 6).unwrap());
        let r = resize_bilinear(&x, 4, 3).unwrap();
        let a = crate::tensor::avgpool2x2(&x).unwrap();
        assert!(r.max_abs_diff(&a).unwrap() < 1e-15);
    }

    #[test]
    fn blur_keeps_constants_fixed() {
        let x = Tensor::filled(Shape3::new(3, 9, 11).unwrap(), 0.6);
        let b = gaussian_blur(&x, 1.7).unwrap();
        assert!(b.data().iter().all(|v| (v - 0.6).abs() < 1e-6));
    }

    #[test]
    fn blur_impulse_center_is_product_of_taps() {
        let mut x = Tensor::zeros(Shape3::new(1, 15, 15).unwrap());
        x.set(0, 7, 7, 1.0);
        let b = gaussian_blur(&x, 1.0).unwrap();
        // radius 3, unnormalized center 1, total = 1 + 2(e^-0.5 + e^-2 + e^-4.5)
        let total = 1.0 + 2.0 * ((-0.5f64).exp() + (-2.0f64).exp() + (-4.5f64).exp());
        let center = 1.0 / total;
        assert!((b.get(0, 7, 7) - center * center).abs() < 1e-15);
    }

    #[test]
    fn blur_preserves_mass_away_from_borders() {
        let mut rng = TestRng::new(31);
        let mut x = Tensor::zeros(Shape3::new(1, 32, 32).unwrap());
        for y in 10..22 {
            for c in 10..22 {
                x.set(0, y, c, rng.uniform(0.0, 1.0));
            }
        }
        let b = gaussian_blur(&x, 1.5).unwrap();
        assert!((b.sum() - x.sum()).abs() < 1e-4);
    }

    #[test]
    fn blur_rejects_nonpositive_sigma() {
        let x = Tensor::zeros(Shape3::new(1, 2, 2).unwrap());
        assert!(matches!(gaussian_blur(&x, 0.0), Err(Error::Argument(_))));
        assert!(matches!(gaussian_blur(&x, -1.0), Err(Error::Argument(_))));
    }

    #[test]
    fn pad_then_crop_roundtrips() {
        let mut rng = TestRng::new(2);
        let x = random_tensor(&mut rng, Shape3::new(3, 20, 45).unwrap());
        let (p, pad) = pad_reflect_to_multiple(&x, 32).unwrap();
        assert_eq!((p.height(), p.width()), (32, 64));
        assert_eq!((pad.bottom, pad.right), (12, 19));
        assert_eq!(p.get(1, 20, 3), x.get(1, 18, 3));
        assert_eq!(crop(&p, 20, 45).unwrap(), x);

        let tiny = random_tensor(&mut rng, Shape3::new(1, 1, 3).unwrap());
        let (p, _) = pad_reflect_to_multiple(&tiny, 32).unwrap();
        assert!(p.is_finite());
        assert_eq!(crop(&p, 1, 3).unwrap(), tiny);
    }
}
