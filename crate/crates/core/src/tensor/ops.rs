//! Pointwise activations, channel concatenation, and the bilinear forms used
//! by the object-context head.
//!
//! Region descriptors are carried as `(n, C, K, 1)` tensors — one spatial
//! column per region — so 1×1 convolutions apply to them unchanged.

use super::{Tensor4, TensorError};

pub fn relu(input: &Tensor4) -> Tensor4 {
    let mut out = input.clone();
    for v in out.values_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    out
}

/// Passes upstream gradient where the forward input was strictly positive.
pub fn relu_backward(input: &Tensor4, upstream: &Tensor4) -> Tensor4 {
    debug_assert_eq!(input.dims(), upstream.dims());
    let mut grad = upstream.clone();
    for (g, &v) in grad.values_mut().iter_mut().zip(input.values()) {
        if v <= 0.0 {
            *g = 0.0;
        }
    }
    grad
}

pub fn concat_channels(a: &Tensor4, b: &Tensor4) -> Result<Tensor4, TensorError> {
    if a.n() != b.n() || a.h() != b.h() || a.w() != b.w() {
        return Err(TensorError::Shape(format!(
            "concat operands {:?} and {:?} disagree outside the channel axis",
            a.dims(),
            b.dims()
        )));
    }
    let mut out = Tensor4::zeros([a.n(), a.c() + b.c(), a.h(), a.w()]);
    for n in 0..a.n() {
        for c in 0..a.c() {
            out.plane_mut(n, c).copy_from_slice(a.plane(n, c));
        }
        for c in 0..b.c() {
            out.plane_mut(n, a.c() + c).copy_from_slice(b.plane(n, c));
        }
    }
    Ok(out)
}

/// Splits the upstream gradient back into the two operands' channel ranges.
pub fn concat_channels_backward(
    a_channels: usize,
    upstream: &Tensor4,
) -> Result<(Tensor4, Tensor4), TensorError> {
    let [batch, channels, h, w] = upstream.dims();
    if a_channels > channels {
        return Err(TensorError::Shape(format!(
            "split at {} exceeds {} channels",
            a_channels, channels
        )));
    }
    let mut da = Tensor4::zeros([batch, a_channels, h, w]);
    let mut db = Tensor4::zeros([batch, channels - a_channels, h, w]);
    for n in 0..batch {
        for c in 0..a_channels {
            da.plane_mut(n, c).copy_from_slice(upstream.plane(n, c));
        }
        for c in a_channels..channels {
            db.plane_mut(n, c - a_channels)
                .copy_from_slice(upstream.plane(n, c));
        }
    }
    Ok((da, db))
}

/// Softmax over the `h·w` positions of every `(n, c)` plane.
pub fn spatial_softmax(input: &Tensor4) -> Tensor4 {
    let mut out = input.clone();
    for n in 0..input.n() {
        for c in 0..input.c() {
            let plane = out.plane_mut(n, c);
            let max = plane.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for v in plane.iter_mut() {
                *v = (*v - max).exp();
                denom += *v;
            }
            for v in plane.iter_mut() {
                *v /= denom;
            }
        }
    }
    out
}

pub fn spatial_softmax_backward(output: &Tensor4, upstream: &Tensor4) -> Tensor4 {
    debug_assert_eq!(output.dims(), upstream.dims());
    let mut grad = Tensor4::zeros(output.dims());
    for n in 0..output.n() {
        for c in 0..output.c() {
            let s = output.plane(n, c);
            let g = upstream.plane(n, c);
            let dot: f64 = s.iter().zip(g).map(|(&sv, &gv)| sv * gv).sum();
            for ((d, &sv), &gv) in grad.plane_mut(n, c).iter_mut().zip(s).zip(g) {
                *d = sv * (gv - dot);
            }
        }
    }
    grad
}

/// Softmax over the channel axis at every `(n, y, x)` position.
pub fn channel_softmax(input: &Tensor4) -> Tensor4 {
    let [batch, channels, h, w] = input.dims();
    let mut out = input.clone();
    for n in 0..batch {
        for y in 0..h {
            for x in 0..w {
                let mut max = f64::NEG_INFINITY;
                for c in 0..channels {
                    max = max.max(out.at(n, c, y, x));
                }
                let mut denom = 0.0;
                for c in 0..channels {
                    let e = (out.at(n, c, y, x) - max).exp();
                    *out.at_mut(n, c, y, x) = e;
                    denom += e;
                }
                for c in 0..channels {
                    *out.at_mut(n, c, y, x) /= denom;
                }
            }
        }
    }
    out
}

pub fn channel_softmax_backward(output: &Tensor4, upstream: &Tensor4) -> Tensor4 {
    debug_assert_eq!(output.dims(), upstream.dims());
    let [batch, channels, h, w] = output.dims();
    let mut grad = Tensor4::zeros(output.dims());
    for n in 0..batch {
        for y in 0..h {
            for x in 0..w {
                let mut dot = 0.0;
                for c in 0..channels {
                    dot += output.at(n, c, y, x) * upstream.at(n, c, y, x);
                }
                for c in 0..channels {
                    let s = output.at(n, c, y, x);
                    *grad.at_mut(n, c, y, x) = s * (upstream.at(n, c, y, x) - dot);
                }
            }
        }
    }
    grad
}

/// Soft region pooling: `out[n,c,k,0] = Σ_{y,x} weights[n,k,y,x] · features[n,c,y,x]`.
pub fn region_pool(weights: &Tensor4, features: &Tensor4) -> Result<Tensor4, TensorError> {
    if weights.n() != features.n() || weights.h() != features.h() || weights.w() != features.w() {
        return Err(TensorError::Shape(format!(
            "weights {:?} and features {:?} disagree",
            weights.dims(),
            features.dims()
        )));
    }
    let (batch, regions, channels) = (weights.n(), weights.c(), features.c());
    let mut out = Tensor4::zeros([batch, channels, regions, 1]);
    for n in 0..batch {
        for c in 0..channels {
            let f = features.plane(n, c);
            for k in 0..regions {
                let mut acc = 0.0;
                for (&wv, &fv) in weights.plane(n, k).iter().zip(f) {
                    acc += wv * fv;
                }
                *out.at_mut(n, c, k, 0) = acc;
            }
        }
    }
    Ok(out)
}

pub fn region_pool_backward(
    weights: &Tensor4,
    features: &Tensor4,
    upstream: &Tensor4,
) -> Result<(Tensor4, Tensor4), TensorError> {
    let (batch, regions, channels) = (weights.n(), weights.c(), features.c());
    if upstream.dims() != [batch, channels, regions, 1] {
        return Err(TensorError::Shape(format!(
            "upstream {:?}, expected {:?}",
            upstream.dims(),
            [batch, channels, regions, 1]
        )));
    }
    let mut dw = Tensor4::zeros(weights.dims());
    let mut df = Tensor4::zeros(features.dims());
    for n in 0..batch {
        for c in 0..channels {
            let f = features.plane(n, c);
            for k in 0..regions {
                let g = upstream.at(n, c, k, 0);
                let wplane = weights.plane(n, k);
                for ((dwv, dfv), (&wv, &fv)) in dw
                    .plane_mut(n, k)
                    .iter_mut()
                    .zip(df.plane_mut(n, c).iter_mut())
                    .zip(wplane.iter().zip(f))
                {
                    *dwv += g * fv;
                    *dfv += g * wv;
                }
            }
        }
    }
    Ok((dw, df))
}

/// Scaled dot products between pixel keys and region keys:
/// `out[n,k,y,x] = ⟨pixel[n,·,y,x], region[n,·,k,0]⟩ / sqrt(key_channels)`.
pub fn pixel_region_scores(pixel: &Tensor4, region: &Tensor4) -> Result<Tensor4, TensorError> {
    if pixel.n() != region.n() || pixel.c() != region.c() || region.w() != 1 {
        return Err(TensorError::Shape(format!(
            "pixel keys {:?} and region keys {:?} disagree",
            pixel.dims(),
            region.dims()
        )));
    }
    let (batch, keys, regions) = (pixel.n(), pixel.c(), region.h());
    let (h, w) = (pixel.h(), pixel.w());
    let scale = 1.0 / (keys as f64).sqrt();
    let mut out = Tensor4::zeros([batch, regions, h, w]);
    for n in 0..batch {
        for k in 0..regions {
            let dst = out.plane_mut(n, k);
            for ck in 0..keys {
                let rv = region.at(n, ck, k, 0);
                for (d, &pv) in dst.iter_mut().zip(pixel.plane(n, ck)) {
                    *d += rv * pv;
                }
            }
            for d in dst.iter_mut() {
                *d *= scale;
            }
        }
    }
    Ok(out)
}

pub fn pixel_region_scores_backward(
    pixel: &Tensor4,
    region: &Tensor4,
    upstream: &Tensor4,
) -> Result<(Tensor4, Tensor4), TensorError> {
    let (batch, keys, regions) = (pixel.n(), pixel.c(), region.h());
    if upstream.dims() != [batch, regions, pixel.h(), pixel.w()] {
        return Err(TensorError::Shape(format!(
            "upstream {:?}, expected {:?}",
            upstream.dims(),
            [batch, regions, pixel.h(), pixel.w()]
        )));
    }
    let scale = 1.0 / (keys as f64).sqrt();
    let mut dp = Tensor4::zeros(pixel.dims());
    let mut dr = Tensor4::zeros(region.dims());
    for n in 0..batch {
        for k in 0..regions {
            let g = upstream.plane(n, k);
            for ck in 0..keys {
                let rv = region.at(n, ck, k, 0);
                let mut racc = 0.0;
                for ((dpv, &gv), &pv) in
                    dp.plane_mut(n, ck).iter_mut().zip(g).zip(pixel.plane(n, ck))
                {
                    *dpv += gv * rv * scale;
                    racc += gv * pv;
                }
                *dr.at_mut(n, ck, k, 0) += racc * scale;
            }
        }
    }
    Ok((dp, dr))
}

/// Attention-weighted mix of region values back onto pixels:
/// `out[n,c,y,x] = Σ_k attn[n,k,y,x] · values[n,c,k,0]`.
pub fn region_context(attn: &Tensor4, values: &Tensor4) -> Result<Tensor4, TensorError> {
    if attn.n() != values.n() || attn.c() != values.h() || values.w() != 1 {
        return Err(TensorError::Shape(format!(
            "attention {:?} and region values {:?} disagree",
            attn.dims(),
            values.dims()
        )));
    }
    let (batch, regions, channels) = (attn.n(), attn.c(), values.c());
    let mut out = Tensor4::zeros([batch, channels, attn.h(), attn.w()]);
    for n in 0..batch {
        for c in 0..channels {
            let dst = out.plane_mut(n, c);
            for k in 0..regions {
                let v = values.at(n, c, k, 0);
                for (d, &av) in dst.iter_mut().zip(attn.plane(n, k)) {
                    *d += v * av;
                }
            }
        }
    }
    Ok(out)
}

pub fn region_context_backward(
    attn: &Tensor4,
    values: &Tensor4,
    upstream: &Tensor4,
) -> Result<(Tensor4, Tensor4), TensorError> {
    let (batch, regions, channels) = (attn.n(), attn.c(), values.c());
    if upstream.dims() != [batch, channels, attn.h(), attn.w()] {
        return Err(TensorError::Shape(format!(
            "upstream {:?}, expected {:?}",
            upstream.dims(),
            [batch, channels, attn.h(), attn.w()]
        )));
    }
    let mut da = Tensor4::zeros(attn.dims());
    let mut dv = Tensor4::zeros(values.dims());
    for n in 0..batch {
        for c in 0..channels {
            let g = upstream.plane(n, c);
            for k in 0..regions {
                let v = values.at(n, c, k, 0);
                let mut vacc = 0.0;
                for ((dav, &gv), &av) in da.plane_mut(n, k).iter_mut().zip(g).zip(attn.plane(n, k))
                {
                    *dav += gv * v;
                    vacc += gv * av;
                }
                *dv.at_mut(n, c, k, 0) += vacc;
            }
        }
    }
    Ok((da, dv))
}
