//! Minimal numerical core for the segmentation model.
//!
//! Everything runs on 4-D tensors in `(n, c, h, w)` layout, stored row-major
//! with `n` outermost. Values are `f64` in memory; single precision only
//! appears at the file boundary (rasters, checkpoints). Each layer primitive
//! comes as a pure forward function plus an explicit backward that maps an
//! upstream gradient to gradients of every differentiable input. The
//! [`graph`] module chains those primitives into a tape so the full network
//! can be differentiated, and [`gradcheck`] verifies any of them against
//! central finite differences.
//!
//! All operations are sequential with fixed iteration order, so results are
//! bit-reproducible across runs and thread counts.

mod conv;
mod gradcheck;
pub mod graph;
mod loss;
mod norm;
mod ops;
mod resize;

pub use conv::{conv2d, conv2d_backward, ConvGrads};
pub use gradcheck::{grad_check, random_projection, CheckedOp, DEFAULT_FD_EPS};
pub use loss::{softmax_cross_entropy, softmax_cross_entropy_backward, CrossEntropy};
pub use norm::{
    batch_norm_eval, batch_norm_train, batch_norm_train_backward, BnGrads, BnSaved, RunningStats,
    BN_EPS, BN_MOMENTUM,
};
pub use ops::{
    channel_softmax, channel_softmax_backward, concat_channels, concat_channels_backward,
    pixel_region_scores, pixel_region_scores_backward, region_context, region_context_backward,
    region_pool, region_pool_backward, relu, relu_backward, spatial_softmax,
    spatial_softmax_backward,
};
pub use resize::{bilinear_resize, bilinear_resize_backward};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    /// Operand dimensions are inconsistent with the operation.
    #[error("shape error: {0}")]
    Shape(String),
    /// A value is outside the operation's domain (e.g. a label code >= K).
    #[error("value error: {0}")]
    Value(String),
}

/// Dense 4-D tensor, `(n, c, h, w)` row-major with `n` outermost.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    dims: [usize; 4],
    data: Vec<f64>,
}

impl Tensor4 {
    pub fn new(dims: [usize; 4], data: Vec<f64>) -> Result<Self, TensorError> {
        let count: usize = dims.iter().product();
        if data.len() != count {
            return Err(TensorError::Shape(format!(
                "data length {} does not match dims {:?}",
                data.len(),
                dims
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: [usize; 4]) -> Self {
        let count = dims.iter().product();
        Self {
            dims,
            data: vec![0.0; count],
        }
    }

    pub fn filled(dims: [usize; 4], v: f64) -> Self {
        let count = dims.iter().product();
        Self {
            dims,
            data: vec![v; count],
        }
    }

    pub fn from_fn(dims: [usize; 4], mut f: impl FnMut(usize, usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(dims.iter().product());
        for n in 0..dims[0] {
            for c in 0..dims[1] {
                for y in 0..dims[2] {
                    for x in 0..dims[3] {
                        data.push(f(n, c, y, x));
                    }
                }
            }
        }
        Self { dims, data }
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.dims[0]
    }

    #[inline]
    pub fn c(&self) -> usize {
        self.dims[1]
    }

    #[inline]
    pub fn h(&self) -> usize {
        self.dims[2]
    }

    #[inline]
    pub fn w(&self) -> usize {
        self.dims[3]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    fn offset(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.dims[1] + c) * self.dims[2] + y) * self.dims[3] + x
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.offset(n, c, y, x)]
    }

    #[inline]
    pub fn at_mut(&mut self, n: usize, c: usize, y: usize, x: usize) -> &mut f64 {
        let i = self.offset(n, c, y, x);
        &mut self.data[i]
    }

    /// One `(n, c)` plane as a flat `h*w` slice.
    #[inline]
    pub fn plane(&self, n: usize, c: usize) -> &[f64] {
        let hw = self.dims[2] * self.dims[3];
        let start = (n * self.dims[1] + c) * hw;
        &self.data[start..start + hw]
    }

    #[inline]
    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [f64] {
        let hw = self.dims[2] * self.dims[3];
        let start = (n * self.dims[1] + c) * hw;
        &mut self.data[start..start + hw]
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// The single element of a scalar-shaped tensor.
    pub fn scalar(&self) -> f64 {
        debug_assert_eq!(self.len(), 1);
        self.data[0]
    }

    pub fn scalar_tensor(v: f64) -> Self {
        Self {
            dims: [1, 1, 1, 1],
            data: vec![v],
        }
    }
}

/// Static description of a 2-D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    /// Square kernel side.
    pub kernel: usize,
    pub stride: usize,
    pub dilation: usize,
    pub padding: usize,
    pub has_bias: bool,
}

impl ConvSpec {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            stride: 1,
            dilation: 1,
            padding: 0,
            has_bias: false,
        }
    }

    pub fn stride(mut self, s: usize) -> Self {
        self.stride = s;
        self
    }

    pub fn dilation(mut self, d: usize) -> Self {
        self.dilation = d;
        self
    }

    pub fn padding(mut self, p: usize) -> Self {
        self.padding = p;
        self
    }

    pub fn bias(mut self, b: bool) -> Self {
        self.has_bias = b;
        self
    }

    /// Output extent along one axis: `floor((L + 2p - d(k-1) - 1)/s) + 1`.
    pub fn out_extent(&self, input: usize) -> Result<usize, TensorError> {
        let span = input as isize + 2 * self.padding as isize
            - (self.dilation * (self.kernel - 1)) as isize
            - 1;
        if self.stride == 0 || self.dilation == 0 || self.kernel == 0 || span < 0 {
            return Err(TensorError::Shape(format!(
                "conv output collapses: input {}, spec {:?}",
                input, self
            )));
        }
        Ok((span / self.stride as isize) as usize + 1)
    }

    pub fn out_size(&self, h: usize, w: usize) -> Result<(usize, usize), TensorError> {
        Ok((self.out_extent(h)?, self.out_extent(w)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn out_size_formula_cases() {
        // 3x3 stride-3 pad-1 maps R to ceil(R/3).
        let s3 = ConvSpec::new(1, 1, 3).stride(3).padding(1);
        for r in 1..200usize {
            assert_eq!(s3.out_extent(r).unwrap(), r.div_ceil(3), "r={}", r);
        }
        // 3x3 stride-2 pad-1 maps R to ceil(R/2).
        let s2 = ConvSpec::new(1, 1, 3).stride(2).padding(1);
        for r in 1..200usize {
            assert_eq!(s2.out_extent(r).unwrap(), r.div_ceil(2), "r={}", r);
        }
        // Dilated 3x3 with padding 2 preserves the extent.
        let dil = ConvSpec::new(1, 1, 3).dilation(2).padding(2);
        for r in 1..64usize {
            assert_eq!(dil.out_extent(r).unwrap(), r, "r={}", r);
        }
    }

    #[test]
    fn out_size_rejects_collapse() {
        let spec = ConvSpec::new(1, 1, 5);
        assert!(spec.out_extent(3).is_err());
    }

    #[test]
    fn indexing_layout_is_row_major_n_outermost() {
        let t = Tensor4::from_fn([2, 3, 4, 5], |n, c, y, x| {
            (((n * 3 + c) * 4 + y) * 5 + x) as f64
        });
        for (i, &v) in t.values().iter().enumerate() {
            assert_eq!(v, i as f64);
        }
        assert_eq!(t.at(1, 2, 3, 4), (t.len() - 1) as f64);
    }
}
