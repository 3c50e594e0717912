//! Bilinear resampling with half-pixel-center alignment and edge clamping.

use super::{Tensor4, TensorError};

/// Per-axis sampling plan: low/high source indices and the high-side weight.
fn axis_plan(out_len: usize, in_len: usize) -> Vec<(usize, usize, f64)> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|i| {
            let src = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (in_len - 1) as f64);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(in_len - 1);
            (lo, hi, src - lo as f64)
        })
        .collect()
}

pub fn bilinear_resize(input: &Tensor4, out_h: usize, out_w: usize) -> Result<Tensor4, TensorError> {
    if out_h == 0 || out_w == 0 {
        return Err(TensorError::Shape("resize target must be at least 1x1".into()));
    }
    let [batch, channels, in_h, in_w] = input.dims();
    if in_h == out_h && in_w == out_w {
        return Ok(input.clone());
    }
    let ys = axis_plan(out_h, in_h);
    let xs = axis_plan(out_w, in_w);
    let mut out = Tensor4::zeros([batch, channels, out_h, out_w]);
    for n in 0..batch {
        for c in 0..channels {
            let src = input.plane(n, c);
            let dst = out.plane_mut(n, c);
            for (y, &(y0, y1, fy)) in ys.iter().enumerate() {
                let r0 = &src[y0 * in_w..(y0 + 1) * in_w];
                let r1 = &src[y1 * in_w..(y1 + 1) * in_w];
                let drow = &mut dst[y * out_w..(y + 1) * out_w];
                for (d, &(x0, x1, fx)) in drow.iter_mut().zip(&xs) {
                    let top = r0[x0] * (1.0 - fx) + r0[x1] * fx;
                    let bot = r1[x0] * (1.0 - fx) + r1[x1] * fx;
                    *d = top * (1.0 - fy) + bot * fy;
                }
            }
        }
    }
    Ok(out)
}

/// Transpose of the interpolation map: scatter `upstream` back onto an
/// `in_h`x`in_w` grid with the same weights the forward pass used.
pub fn bilinear_resize_backward(
    in_h: usize,
    in_w: usize,
    upstream: &Tensor4,
) -> Result<Tensor4, TensorError> {
    if in_h == 0 || in_w == 0 {
        return Err(TensorError::Shape("source size must be at least 1x1".into()));
    }
    let [batch, channels, out_h, out_w] = upstream.dims();
    let mut d_input = Tensor4::zeros([batch, channels, in_h, in_w]);
    if in_h == out_h && in_w == out_w {
        d_input.values_mut().copy_from_slice(upstream.values());
        return Ok(d_input);
    }
    let ys = axis_plan(out_h, in_h);
    let xs = axis_plan(out_w, in_w);
    for n in 0..batch {
        for c in 0..channels {
            let g = upstream.plane(n, c);
            let d = d_input.plane_mut(n, c);
            for (y, &(y0, y1, fy)) in ys.iter().enumerate() {
                for (x, &(x0, x1, fx)) in xs.iter().enumerate() {
                    let gv = g[y * out_w + x];
                    d[y0 * in_w + x0] += gv * (1.0 - fy) * (1.0 - fx);
                    d[y0 * in_w + x1] += gv * (1.0 - fy) * fx;
                    d[y1 * in_w + x0] += gv * fy * (1.0 - fx);
                    d[y1 * in_w + x1] += gv * fy * fx;
                }
            }
        }
    }
    Ok(d_input)
}
