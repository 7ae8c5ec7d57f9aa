use super::{Shape3, Tensor};
use crate::error::{Error, Result};

/// Rows of the im2col buffer are capped so a chunk stays around 32 MiB.
const COL_BUDGET: usize = 4 << 20;

/// A 3x3 convolution kernel bank of shape `out_c x in_c x 3 x 3`.
#[derive(Clone, Debug, PartialEq)]
pub struct Kernel {
    out_c: usize,
    in_c: usize,
    data: Vec<f64>,
}

impl Kernel {
    pub fn new(out_c: usize, in_c: usize, data: Vec<f64>) -> Result<Self> {
        if out_c == 0 || in_c == 0 {
            return Err(Error::shape("kernel channel counts must be positive"));
        }
        if data.len() != out_c * in_c * 9 {
            return Err(Error::shape(format!(
                "kernel data length {} does not match {out_c}x{in_c}x3x3",
                data.len()
            )));
        }
        Ok(Kernel { out_c, in_c, data })
    }

    pub fn zeros(out_c: usize, in_c: usize) -> Self {
        Kernel {
            out_c,
            in_c,
            data: vec![0.0; out_c * in_c * 9],
        }
    }

    pub fn out_channels(&self) -> usize {
        self.out_c
    }

    pub fn in_channels(&self) -> usize {
        self.in_c
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, o: usize, i: usize, ky: usize, kx: usize) -> f64 {
        self.data[((o * self.in_c + i) * 3 + ky) * 3 + kx]
    }

    #[inline]
    pub fn set(&mut self, o: usize, i: usize, ky: usize, kx: usize, v: f64) {
        self.data[((o * self.in_c + i) * 3 + ky) * 3 + kx] = v;
    }

    /// Kernel of the adjoint convolution: in/out swapped and taps flipped.
    pub fn transposed_flipped(&self) -> Kernel {
        let mut t = Kernel::zeros(self.in_c, self.out_c);
        for o in 0..self.out_c {
            for i in 0..self.in_c {
                for ky in 0..3 {
                    for kx in 0..3 {
                        t.set(i, o, 2 - ky, 2 - kx, self.get(o, i, ky, kx));
                    }
                }
            }
        }
        t
    }
}

/// Stride-1 3x3 convolution (cross-correlation) with zero padding of one pixel.
pub fn conv2d_forward(input: &Tensor, kernel: &Kernel, bias: &[f64]) -> Result<Tensor> {
    let Shape3 { c, h, w } = input.shape();
    if c != kernel.in_c {
        return Err(Error::shape(format!(
            "conv2d: input has {c} channels, kernel expects {}",
            kernel.in_c
        )));
    }
    if bias.len() != kernel.out_c {
        return Err(Error::shape(format!(
            "conv2d: bias length {} does not match {} output channels",
            bias.len(),
            kernel.out_c
        )));
    }
    let out_shape = Shape3 {
        c: kernel.out_c,
        h,
        w,
    };
    let mut out = vec![0.0; out_shape.len()];
    let plane = h * w;
    for (o, &b) in bias.iter().enumerate() {
        out[o * plane..(o + 1) * plane].fill(b);
    }

    let k_rows = c * 9;
    let rows_per_chunk = (COL_BUDGET / (k_rows * w).max(1)).clamp(1, h);
    let mut col = vec![0.0; k_rows * rows_per_chunk * w];
    let src = input.data();

    let mut y0 = 0;
    while y0 < h {
        let y1 = (y0 + rows_per_chunk).min(h);
        let ncol = (y1 - y0) * w;
        im2col(src, c, h, w, y0, y1, &mut col[..k_rows * ncol]);
        // out[:, y0*w .. y1*w] += K (out_c x 9c) * col (9c x ncol)
        unsafe {
            matrixmultiply::dgemm(
                kernel.out_c,
                k_rows,
                ncol,
                1.0,
                kernel.data.as_ptr(),
                k_rows as isize,
                1,
                col.as_ptr(),
                ncol as isize,
                1,
                1.0,
                out.as_mut_ptr().add(y0 * w),
                plane as isize,
                1,
            );
        }
        y0 = y1;
    }
    Tensor::new(out_shape, out)
}

fn im2col(src: &[f64], c: usize, h: usize, w: usize, y0: usize, y1: usize, col: &mut [f64]) {
    let ncol = (y1 - y0) * w;
    for ic in 0..c {
        let plane = &src[ic * h * w..(ic + 1) * h * w];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut col[((ic * 9) + ky * 3 + kx) * ncol..][..ncol];
                for y in y0..y1 {
                    let dst = &mut row[(y - y0) * w..(y - y0 + 1) * w];
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let srow = &plane[sy as usize * w..(sy as usize + 1) * w];
                    match kx {
                        0 => {
                            dst[0] = 0.0;
                            dst[1..].copy_from_slice(&srow[..w - 1]);
                        }
                        1 => dst.copy_from_slice(srow),
                        _ => {
                            dst[..w - 1].copy_from_slice(&srow[1..]);
                            dst[w - 1] = 0.0;
                        }
                    }
                }
            }
        }
    }
}

/// Gradient of [`conv2d_forward`] with respect to its input.
///
/// `input` is only consulted for its shape; the result is the transpose
/// convolution of `grad_output` with `kernel`.
pub fn conv2d_backward(input: &Tensor, kernel: &Kernel, grad_output: &Tensor) -> Result<Tensor> {
    let s = input.shape();
    if s.c != kernel.in_c {
        return Err(Error::shape(format!(
            "conv2d_backward: input has {} channels, kernel expects {}",
            s.c, kernel.in_c
        )));
    }
    let expected = s.with_channels(kernel.out_c);
    grad_output.expect_shape(expected, "conv2d_backward grad_output")?;
    let adjoint = kernel.transposed_flipped();
    conv2d_forward(grad_output, &adjoint, &vec![0.0; kernel.in_c])
}
