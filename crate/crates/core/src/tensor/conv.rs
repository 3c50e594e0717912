//! Direct 2-D convolution with stride, dilation and zero padding, plus exact
//! analytic gradients.
//!
//! The forward pass is the definition itself:
//!
//! ```text
//! out[n,o,y,x] = bias[o] + sum_{i,ky,kx} in[n,i, y*s - p + ky*d, x*s - p + kx*d] * w[o,i,ky,kx]
//! ```
//!
//! with out-of-range taps contributing zero. For speed the loops run
//! kernel-tap outermost and image row innermost, which visits each output
//! element's terms in exactly the `(i, ky, kx)` order of the definition, so
//! the result is bit-identical to a naive gather loop in `f64`.

use super::{ConvSpec, Tensor4, TensorError};

fn check_shapes(
    input: &Tensor4,
    weights: &Tensor4,
    bias: Option<&[f64]>,
    spec: &ConvSpec,
) -> Result<(usize, usize), TensorError> {
    let [_, c_in, h, w] = input.dims();
    let [w_out, w_in, kh, kw] = weights.dims();
    if c_in != spec.in_channels || w_in != spec.in_channels {
        return Err(TensorError::Shape(format!(
            "input channels {} / weight channels {} vs spec {}",
            c_in, w_in, spec.in_channels
        )));
    }
    if w_out != spec.out_channels || kh != spec.kernel || kw != spec.kernel {
        return Err(TensorError::Shape(format!(
            "weight dims {:?} vs spec {:?}",
            weights.dims(),
            spec
        )));
    }
    match (bias, spec.has_bias) {
        (Some(b), true) if b.len() != spec.out_channels => {
            return Err(TensorError::Shape(format!(
                "bias length {} vs {} output channels",
                b.len(),
                spec.out_channels
            )));
        }
        (Some(_), false) => {
            return Err(TensorError::Shape("bias given but spec.has_bias is false".into()));
        }
        (None, true) => {
            return Err(TensorError::Shape("spec.has_bias set but no bias given".into()));
        }
        _ => {}
    }
    spec.out_size(h, w)
}

/// Valid output-x range `[lo, hi)` for a kernel column offset, so that the
/// sampled input column `x*s + off` stays inside `[0, in_w)`.
#[inline]
fn x_range(out_w: usize, in_w: usize, stride: usize, off: isize) -> (usize, usize) {
    let s = stride as isize;
    let lo = if off >= 0 { 0 } else { ((-off) + s - 1) / s };
    let hi = ((in_w as isize - 1 - off) / s + 1).clamp(0, out_w as isize);
    if lo >= hi {
        (0, 0)
    } else {
        (lo as usize, hi as usize)
    }
}

pub fn conv2d(
    input: &Tensor4,
    weights: &Tensor4,
    bias: Option<&[f64]>,
    spec: &ConvSpec,
) -> Result<Tensor4, TensorError> {
    let (out_h, out_w) = check_shapes(input, weights, bias, spec)?;
    let [batch, _, in_h, in_w] = input.dims();
    let (s, d, p, k) = (spec.stride, spec.dilation, spec.padding as isize, spec.kernel);

    let mut out = Tensor4::zeros([batch, spec.out_channels, out_h, out_w]);
    for n in 0..batch {
        for o in 0..spec.out_channels {
            let init = bias.map_or(0.0, |b| b[o]);
            out.plane_mut(n, o).fill(init);
            for i in 0..spec.in_channels {
                let in_plane = input.plane(n, i);
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = weights.at(o, i, ky, kx);
                        let off = kx as isize * d as isize - p;
                        let (x_lo, x_hi) = x_range(out_w, in_w, s, off);
                        if x_lo >= x_hi {
                            continue;
                        }
                        let out_plane = out.plane_mut(n, o);
                        for y in 0..out_h {
                            let iy = y as isize * s as isize - p + ky as isize * d as isize;
                            if iy < 0 || iy >= in_h as isize {
                                continue;
                            }
                            let in_row = &in_plane[iy as usize * in_w..(iy as usize + 1) * in_w];
                            let out_row = &mut out_plane[y * out_w + x_lo..y * out_w + x_hi];
                            if s == 1 {
                                let src = &in_row[(x_lo as isize + off) as usize..];
                                for (ov, &iv) in out_row.iter_mut().zip(src) {
                                    *ov += wv * iv;
                                }
                            } else {
                                for (j, ov) in out_row.iter_mut().enumerate() {
                                    let ix = ((x_lo + j) * s) as isize + off;
                                    *ov += wv * in_row[ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of a convolution with respect to its differentiable inputs.
#[derive(Debug, Clone)]
pub struct ConvGrads {
    pub input: Tensor4,
    pub weights: Tensor4,
    pub bias: Option<Vec<f64>>,
}

/// Backward pass: push `upstream = dL/dout` through the convolution.
pub fn conv2d_backward(
    input: &Tensor4,
    weights: &Tensor4,
    spec: &ConvSpec,
    upstream: &Tensor4,
) -> Result<ConvGrads, TensorError> {
    let bias_probe = if spec.has_bias {
        Some(vec![0.0; spec.out_channels])
    } else {
        None
    };
    let (out_h, out_w) = check_shapes(input, weights, bias_probe.as_deref(), spec)?;
    if upstream.dims() != [input.n(), spec.out_channels, out_h, out_w] {
        return Err(TensorError::Shape(format!(
            "upstream dims {:?}, expected {:?}",
            upstream.dims(),
            [input.n(), spec.out_channels, out_h, out_w]
        )));
    }
    let [batch, _, in_h, in_w] = input.dims();
    let (s, d, p, k) = (spec.stride, spec.dilation, spec.padding as isize, spec.kernel);

    let mut d_input = Tensor4::zeros(input.dims());
    let mut d_weights = Tensor4::zeros(weights.dims());
    for n in 0..batch {
        for o in 0..spec.out_channels {
            let g_plane = upstream.plane(n, o);
            for i in 0..spec.in_channels {
                let in_plane = input.plane(n, i);
                for ky in 0..k {
                    for kx in 0..k {
                        let off = kx as isize * d as isize - p;
                        let (x_lo, x_hi) = x_range(out_w, in_w, s, off);
                        if x_lo >= x_hi {
                            continue;
                        }
                        let wv = weights.at(o, i, ky, kx);
                        let mut w_acc = 0.0;
                        let din_plane = d_input.plane_mut(n, i);
                        for y in 0..out_h {
                            let iy = y as isize * s as isize - p + ky as isize * d as isize;
                            if iy < 0 || iy >= in_h as isize {
                                continue;
                            }
                            let row0 = iy as usize * in_w;
                            let g_row = &g_plane[y * out_w + x_lo..y * out_w + x_hi];
                            if s == 1 {
                                let base = (x_lo as isize + off) as usize;
                                let in_row = &in_plane[row0 + base..];
                                let din_row = &mut din_plane[row0 + base..row0 + base + g_row.len()];
                                for ((&gv, &iv), dv) in
                                    g_row.iter().zip(in_row).zip(din_row.iter_mut())
                                {
                                    w_acc += gv * iv;
                                    *dv += gv * wv;
                                }
                            } else {
                                for (j, &gv) in g_row.iter().enumerate() {
                                    let ix = (((x_lo + j) * s) as isize + off) as usize;
                                    w_acc += gv * in_plane[row0 + ix];
                                    din_plane[row0 + ix] += gv * wv;
                                }
                            }
                        }
                        *d_weights.at_mut(o, i, ky, kx) += w_acc;
                    }
                }
            }
        }
    }

    let bias = if spec.has_bias {
        let mut db = vec![0.0; spec.out_channels];
        for n in 0..batch {
            for (o, dbo) in db.iter_mut().enumerate() {
                *dbo += upstream.plane(n, o).iter().sum::<f64>();
            }
        }
        Some(db)
    } else {
        None
    };

    Ok(ConvGrads {
        input: d_input,
        weights: d_weights,
        bias,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Literal transcription of the definition, used as the order oracle.
    fn conv2d_gather(
        input: &Tensor4,
        weights: &Tensor4,
        bias: Option<&[f64]>,
        spec: &ConvSpec,
    ) -> Tensor4 {
        let [batch, _, in_h, in_w] = input.dims();
        let (out_h, out_w) = spec.out_size(in_h, in_w).unwrap();
        let mut out = Tensor4::zeros([batch, spec.out_channels, out_h, out_w]);
        for n in 0..batch {
            for o in 0..spec.out_channels {
                for y in 0..out_h {
                    for x in 0..out_w {
                        let mut acc = bias.map_or(0.0, |b| b[o]);
                        for i in 0..spec.in_channels {
                            for ky in 0..spec.kernel {
                                for kx in 0..spec.kernel {
                                    let iy = (y * spec.stride + ky * spec.dilation) as isize
                                        - spec.padding as isize;
                                    let ix = (x * spec.stride + kx * spec.dilation) as isize
                                        - spec.padding as isize;
                                    if iy < 0
                                        || iy >= in_h as isize
                                        || ix < 0
                                        || ix >= in_w as isize
                                    {
                                        continue;
                                    }
                                    acc += input.at(n, i, iy as usize, ix as usize)
                                        * weights.at(o, i, ky, kx);
                                }
                            }
                        }
                        *out.at_mut(n, o, y, x) = acc;
                    }
                }
            }
        }
        out
    }

    fn ones(dims: [usize; 4]) -> Tensor4 {
        Tensor4::filled(dims, 1.0)
    }

    #[test]
    fn box_sum_on_ones() {
        // 3x3 ones input, 3x3 ones kernel, s=1 d=1 p=1: corner 4, edge 6, center 9.
        let spec = ConvSpec::new(1, 1, 3).padding(1);
        let out = conv2d(&ones([1, 1, 3, 3]), &ones([1, 1, 3, 3]), None, &spec).unwrap();
        let expect = [4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0];
        assert_eq!(out.values(), &expect);
    }

    #[test]
    fn dilated_box_sum_keeps_size() {
        // Same input with d=2 p=2: taps spread out by 2, size preserved.
        let spec = ConvSpec::new(1, 1, 3).dilation(2).padding(2);
        let out = conv2d(&ones([1, 1, 3, 3]), &ones([1, 1, 3, 3]), None, &spec).unwrap();
        assert_eq!((out.h(), out.w()), (3, 3));
        // Direct tap count oracle: out[y][x] = #{(ky,kx) : y-2+2ky, x-2+2kx in [0,3)}.
        let mut expect = Tensor4::zeros([1, 1, 3, 3]);
        for y in 0..3usize {
            for x in 0..3usize {
                let mut cnt = 0.0;
                for ky in 0..3usize {
                    for kx in 0..3usize {
                        let iy = y as isize - 2 + 2 * ky as isize;
                        let ix = x as isize - 2 + 2 * kx as isize;
                        if (0..3).contains(&iy) && (0..3).contains(&ix) {
                            cnt += 1.0;
                        }
                    }
                }
                *expect.at_mut(0, 0, y, x) = cnt;
            }
        }
        assert_eq!(out, expect);
        assert_eq!(out.at(0, 0, 0, 0), 4.0);
        assert_eq!(out.at(0, 0, 1, 1), 1.0);
    }

    #[test]
    fn matches_gather_loop_bit_for_bit() {
        let mut state = 0x1234_5678_u64;
        let mut next = move || {
            // xorshift; values in [-1, 1)
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 52) as f64 * 2.0 - 1.0
        };
        for &(s, d, p, k) in &[(1, 1, 1, 3), (2, 1, 0, 3), (3, 1, 1, 3), (1, 2, 2, 3), (2, 2, 1, 3)]
        {
            let spec = ConvSpec {
                in_channels: 3,
                out_channels: 2,
                kernel: k,
                stride: s,
                dilation: d,
                padding: p,
                has_bias: true,
            };
            let input = Tensor4::from_fn([2, 3, 5, 5], |_, _, _, _| next());
            let weights = Tensor4::from_fn([2, 3, k, k], |_, _, _, _| next());
            let bias: Vec<f64> = (0..2).map(|_| next()).collect();
            let fast = conv2d(&input, &weights, Some(&bias), &spec).unwrap();
            let slow = conv2d_gather(&input, &weights, Some(&bias), &spec);
            assert_eq!(fast.values(), slow.values(), "spec {:?}", spec);
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let spec = ConvSpec::new(2, 1, 3).padding(1);
        let err = conv2d(&ones([1, 3, 4, 4]), &ones([1, 2, 3, 3]), None, &spec).unwrap_err();
        assert!(matches!(err, TensorError::Shape(_)));
    }

    #[test]
    fn linearity_without_bias() {
        let spec = ConvSpec::new(2, 2, 3).padding(1);
        let weights = Tensor4::from_fn([2, 2, 3, 3], |o, i, ky, kx| {
            ((o * 9 + i * 5 + ky * 2 + kx) as f64).sin()
        });
        let x = Tensor4::from_fn([1, 2, 4, 4], |_, c, y, xx| ((c + y * 3 + xx) as f64).cos());
        let y = Tensor4::from_fn([1, 2, 4, 4], |_, c, yy, xx| ((c * 7 + yy + xx * 2) as f64).sin());
        let (a, b) = (0.37, -1.21);
        let mixed = Tensor4::new(
            x.dims(),
            x.values()
                .iter()
                .zip(y.values())
                .map(|(&xv, &yv)| a * xv + b * yv)
                .collect(),
        )
        .unwrap();
        let lhs = conv2d(&mixed, &weights, None, &spec).unwrap();
        let cx = conv2d(&x, &weights, None, &spec).unwrap();
        let cy = conv2d(&y, &weights, None, &spec).unwrap();
        for ((l, &gx), &gy) in lhs.values().iter().zip(cx.values()).zip(cy.values()) {
            assert!((l - (a * gx + b * gy)).abs() < 1e-10);
        }
    }
}
