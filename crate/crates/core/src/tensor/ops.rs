use super::{Shape3, Tensor};
use crate::error::{Error, Result};

pub fn relu(input: &Tensor) -> Tensor {
    input.map(|v| v.max(0.0))
}

/// Passes `grad_output` where `input > 0`; the subgradient at exactly zero is 0.
pub fn relu_backward(input: &Tensor, grad_output: &Tensor) -> Result<Tensor> {
    input.zip_map(grad_output, |x, g| if x > 0.0 { g } else { 0.0 })
}

/// Flat input offsets of each pooled maximum, one per output element.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PoolIndices(pub Vec<usize>);

fn halve(shape: Shape3, what: &str) -> Result<Shape3> {
    if shape.h % 2 != 0 || shape.w % 2 != 0 {
        return Err(Error::shape(format!(
            "{what}: spatial extents must be even, got {shape}"
        )));
    }
    Ok(Shape3 {
        c: shape.c,
        h: shape.h / 2,
        w: shape.w / 2,
    })
}

/// 2x2 max pooling, stride 2. Ties go to the first window entry in row-major order.
pub fn maxpool2x2(input: &Tensor) -> Result<(Tensor, PoolIndices)> {
    let s = input.shape();
    let out_shape = halve(s, "maxpool2x2")?;
    let src = input.data();
    let mut out = Vec::with_capacity(out_shape.len());
    let mut idx = Vec::with_capacity(out_shape.len());
    for c in 0..s.c {
        for oy in 0..out_shape.h {
            for ox in 0..out_shape.w {
                let base = (c * s.h + 2 * oy) * s.w + 2 * ox;
                let mut best = base;
                for cand in [base + 1, base + s.w, base + s.w + 1] {
                    if src[cand] > src[best] {
                        best = cand;
                    }
                }
                out.push(src[best]);
                idx.push(best);
            }
        }
    }
    Ok((Tensor::new(out_shape, out)?, PoolIndices(idx)))
}

pub fn maxpool2x2_backward(
    indices: &PoolIndices,
    grad_output: &Tensor,
    input_shape: Shape3,
) -> Result<Tensor> {
    let out_shape = halve(input_shape, "maxpool2x2_backward")?;
    grad_output.expect_shape(out_shape, "maxpool2x2_backward grad_output")?;
    if indices.0.len() != grad_output.len() {
        return Err(Error::shape("maxpool2x2_backward: index count mismatch"));
    }
    let mut grad = Tensor::zeros(input_shape);
    let dst = grad.data_mut();
    for (&i, &g) in indices.0.iter().zip(grad_output.data()) {
        dst[i] += g;
    }
    Ok(grad)
}

/// 2x2 mean pooling, stride 2.
pub fn avgpool2x2(input: &Tensor) -> Result<Tensor> {
    let s = input.shape();
    let out_shape = halve(s, "avgpool2x2")?;
    Ok(Tensor::from_fn(out_shape, |c, y, x| {
        let top = input.get(c, 2 * y, 2 * x) + input.get(c, 2 * y, 2 * x + 1);
        let bottom = input.get(c, 2 * y + 1, 2 * x) + input.get(c, 2 * y + 1, 2 * x + 1);
        0.25 * (top + bottom)
    }))
}

pub fn avgpool2x2_backward(grad_output: &Tensor, input_shape: Shape3) -> Result<Tensor> {
    let out_shape = halve(input_shape, "avgpool2x2_backward")?;
    grad_output.expect_shape(out_shape, "avgpool2x2_backward grad_output")?;
    Ok(Tensor::from_fn(input_shape, |c, y, x| {
        0.25 * grad_output.get(c, y / 2, x / 2)
    }))
}

/// Nearest-neighbour 2x upsampling: every pixel becomes a 2x2 block.
pub fn upsample_nearest2x(input: &Tensor) -> Tensor {
    let s = input.shape();
    let out_shape = Shape3 {
        c: s.c,
        h: 2 * s.h,
        w: 2 * s.w,
    };
    Tensor::from_fn(out_shape, |c, y, x| input.get(c, y / 2, x / 2))
}
