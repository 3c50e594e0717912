//! A small reverse-mode tape over the layer primitives.
//!
//! Forward calls append nodes that remember their operands; [`Graph::backward`]
//! walks the tape in reverse, accumulating gradients for every node, so a
//! network built from these calls gets end-to-end derivatives for free. Node
//! ids are indices into the tape; parents always precede children, which makes
//! reverse creation order a valid topological order.

use super::{
    batch_norm_eval, batch_norm_train, batch_norm_train_backward, bilinear_resize,
    bilinear_resize_backward, channel_softmax, channel_softmax_backward, concat_channels,
    concat_channels_backward, conv2d, conv2d_backward, pixel_region_scores,
    pixel_region_scores_backward, region_context, region_context_backward, region_pool,
    region_pool_backward, relu, relu_backward, spatial_softmax, spatial_softmax_backward, BnSaved,
    ConvSpec, RunningStats, Tensor4, TensorError,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

impl NodeId {
    /// Position on the tape; indexes the vector returned by [`Graph::backward`].
    pub fn index(self) -> usize {
        self.0
    }

    /// Inverse of [`NodeId::index`], for walking a tape positionally.
    pub fn from_index(index: usize) -> Self {
        NodeId(index)
    }
}

enum Ctx {
    Leaf,
    Conv {
        input: NodeId,
        weights: NodeId,
        bias: Option<NodeId>,
        spec: ConvSpec,
    },
    BnTrain {
        input: NodeId,
        gamma: NodeId,
        beta: NodeId,
        saved: BnSaved,
    },
    BnEval {
        input: NodeId,
        gamma: NodeId,
        beta: NodeId,
        mean: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Relu {
        input: NodeId,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    Resize {
        input: NodeId,
    },
    Concat {
        a: NodeId,
        b: NodeId,
    },
    SpatialSoftmax {
        input: NodeId,
    },
    ChannelSoftmax {
        input: NodeId,
    },
    RegionPool {
        weights: NodeId,
        features: NodeId,
    },
    PixelRegionScores {
        pixel: NodeId,
        region: NodeId,
    },
    RegionContext {
        attn: NodeId,
        values: NodeId,
    },
}

struct Node {
    value: Tensor4,
    ctx: Ctx,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor4 {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor4, ctx: Ctx) -> NodeId {
        self.nodes.push(Node { value, ctx });
        NodeId(self.nodes.len() - 1)
    }

    /// Registers a tensor (network input or parameter) as a tape leaf.
    pub fn leaf(&mut self, value: Tensor4) -> NodeId {
        self.push(value, Ctx::Leaf)
    }

    pub fn conv(
        &mut self,
        input: NodeId,
        weights: NodeId,
        bias: Option<NodeId>,
        spec: ConvSpec,
    ) -> Result<NodeId, TensorError> {
        let bias_vec = bias.map(|b| self.value(b).values().to_vec());
        let out = conv2d(
            self.value(input),
            self.value(weights),
            bias_vec.as_deref(),
            &spec,
        )?;
        Ok(self.push(
            out,
            Ctx::Conv {
                input,
                weights,
                bias,
                spec,
            },
        ))
    }

    /// Batch norm with batch statistics; updates `stats` in place.
    pub fn bn_train(
        &mut self,
        input: NodeId,
        gamma: NodeId,
        beta: NodeId,
        stats: &mut RunningStats,
        eps: f64,
    ) -> Result<NodeId, TensorError> {
        let g = self.value(gamma).values().to_vec();
        let b = self.value(beta).values().to_vec();
        let (out, saved) = batch_norm_train(self.value(input), &g, &b, stats, eps)?;
        Ok(self.push(
            out,
            Ctx::BnTrain {
                input,
                gamma,
                beta,
                saved,
            },
        ))
    }

    /// Batch norm with frozen running statistics.
    pub fn bn_eval(
        &mut self,
        input: NodeId,
        gamma: NodeId,
        beta: NodeId,
        stats: &RunningStats,
        eps: f64,
    ) -> Result<NodeId, TensorError> {
        let g = self.value(gamma).values().to_vec();
        let b = self.value(beta).values().to_vec();
        let out = batch_norm_eval(self.value(input), &g, &b, stats, eps)?;
        let inv_std: Vec<f64> = stats.var.iter().map(|&v| 1.0 / (v + eps).sqrt()).collect();
        Ok(self.push(
            out,
            Ctx::BnEval {
                input,
                gamma,
                beta,
                mean: stats.mean.clone(),
                inv_std,
            },
        ))
    }

    pub fn relu(&mut self, input: NodeId) -> NodeId {
        let out = relu(self.value(input));
        self.push(out, Ctx::Relu { input })
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        if self.value(a).dims() != self.value(b).dims() {
            return Err(TensorError::Shape(format!(
                "add operands {:?} vs {:?}",
                self.value(a).dims(),
                self.value(b).dims()
            )));
        }
        let mut out = self.value(a).clone();
        for (o, &v) in out.values_mut().iter_mut().zip(self.value(b).values()) {
            *o += v;
        }
        Ok(self.push(out, Ctx::Add { a, b }))
    }

    pub fn resize(&mut self, input: NodeId, h: usize, w: usize) -> Result<NodeId, TensorError> {
        let out = bilinear_resize(self.value(input), h, w)?;
        Ok(self.push(out, Ctx::Resize { input }))
    }

    pub fn concat(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let out = concat_channels(self.value(a), self.value(b))?;
        Ok(self.push(out, Ctx::Concat { a, b }))
    }

    pub fn spatial_softmax(&mut self, input: NodeId) -> NodeId {
        let out = spatial_softmax(self.value(input));
        self.push(out, Ctx::SpatialSoftmax { input })
    }

    pub fn channel_softmax(&mut self, input: NodeId) -> NodeId {
        let out = channel_softmax(self.value(input));
        self.push(out, Ctx::ChannelSoftmax { input })
    }

    pub fn region_pool(&mut self, weights: NodeId, features: NodeId) -> Result<NodeId, TensorError> {
        let out = region_pool(self.value(weights), self.value(features))?;
        Ok(self.push(out, Ctx::RegionPool { weights, features }))
    }

    pub fn pixel_region_scores(
        &mut self,
        pixel: NodeId,
        region: NodeId,
    ) -> Result<NodeId, TensorError> {
        let out = pixel_region_scores(self.value(pixel), self.value(region))?;
        Ok(self.push(out, Ctx::PixelRegionScores { pixel, region }))
    }

    pub fn region_context(&mut self, attn: NodeId, values: NodeId) -> Result<NodeId, TensorError> {
        let out = region_context(self.value(attn), self.value(values))?;
        Ok(self.push(out, Ctx::RegionContext { attn, values }))
    }

    /// Runs reverse accumulation from the seeded nodes and returns one
    /// gradient tensor per tape node (zero where nothing flows).
    pub fn backward(&self, seeds: Vec<(NodeId, Tensor4)>) -> Result<Vec<Tensor4>, TensorError> {
        let mut grads: Vec<Option<Tensor4>> = (0..self.nodes.len()).map(|_| None).collect();
        for (id, seed) in seeds {
            if seed.dims() != self.value(id).dims() {
                return Err(TensorError::Shape(format!(
                    "seed dims {:?} vs node dims {:?}",
                    seed.dims(),
                    self.value(id).dims()
                )));
            }
            accumulate(&mut grads[id.0], seed);
        }

        for id in (0..self.nodes.len()).rev() {
            let g = match grads[id].clone() {
                Some(g) => g,
                None => continue,
            };
            match &self.nodes[id].ctx {
                Ctx::Leaf => {}
                Ctx::Conv {
                    input,
                    weights,
                    bias,
                    spec,
                } => {
                    let cg = conv2d_backward(self.value(*input), self.value(*weights), spec, &g)?;
                    accumulate(&mut grads[input.0], cg.input);
                    accumulate(&mut grads[weights.0], cg.weights);
                    if let (Some(bid), Some(db)) = (bias, cg.bias) {
                        let dims = self.value(*bid).dims();
                        accumulate(&mut grads[bid.0], Tensor4::new(dims, db)?);
                    }
                }
                Ctx::BnTrain {
                    input,
                    gamma,
                    beta,
                    saved,
                } => {
                    let gv = self.value(*gamma).values().to_vec();
                    let bg =
                        batch_norm_train_backward(self.value(*input), &gv, saved, &g)?;
                    accumulate(&mut grads[input.0], bg.input);
                    let gdims = self.value(*gamma).dims();
                    let bdims = self.value(*beta).dims();
                    accumulate(&mut grads[gamma.0], Tensor4::new(gdims, bg.gamma)?);
                    accumulate(&mut grads[beta.0], Tensor4::new(bdims, bg.beta)?);
                }
                Ctx::BnEval {
                    input,
                    gamma,
                    beta,
                    mean,
                    inv_std,
                } => {
                    let x = self.value(*input);
                    let gv = self.value(*gamma).values();
                    let [batch, channels, _, _] = x.dims();
                    let mut dx = Tensor4::zeros(x.dims());
                    let mut dgamma = vec![0.0; channels];
                    let mut dbeta = vec![0.0; channels];
                    for n in 0..batch {
                        for c in 0..channels {
                            let scale = gv[c] * inv_std[c];
                            for ((d, &up), &v) in dx
                                .plane_mut(n, c)
                                .iter_mut()
                                .zip(g.plane(n, c))
                                .zip(x.plane(n, c))
                            {
                                *d += up * scale;
                                dgamma[c] += up * (v - mean[c]) * inv_std[c];
                                dbeta[c] += up;
                            }
                        }
                    }
                    accumulate(&mut grads[input.0], dx);
                    let gdims = self.value(*gamma).dims();
                    let bdims = self.value(*beta).dims();
                    accumulate(&mut grads[gamma.0], Tensor4::new(gdims, dgamma)?);
                    accumulate(&mut grads[beta.0], Tensor4::new(bdims, dbeta)?);
                }
                Ctx::Relu { input } => {
                    accumulate(&mut grads[input.0], relu_backward(self.value(*input), &g));
                }
                Ctx::Add { a, b } => {
                    accumulate(&mut grads[a.0], g.clone());
                    accumulate(&mut grads[b.0], g);
                }
                Ctx::Resize { input } => {
                    let src = self.value(*input);
                    accumulate(
                        &mut grads[input.0],
                        bilinear_resize_backward(src.h(), src.w(), &g)?,
                    );
                }
                Ctx::Concat { a, b } => {
                    let (da, db) = concat_channels_backward(self.value(*a).c(), &g)?;
                    accumulate(&mut grads[a.0], da);
                    accumulate(&mut grads[b.0], db);
                }
                Ctx::SpatialSoftmax { input } => {
                    accumulate(
                        &mut grads[input.0],
                        spatial_softmax_backward(&self.nodes[id].value, &g),
                    );
                }
                Ctx::ChannelSoftmax { input } => {
                    accumulate(
                        &mut grads[input.0],
                        channel_softmax_backward(&self.nodes[id].value, &g),
                    );
                }
                Ctx::RegionPool { weights, features } => {
                    let (dw, df) =
                        region_pool_backward(self.value(*weights), self.value(*features), &g)?;
                    accumulate(&mut grads[weights.0], dw);
                    accumulate(&mut grads[features.0], df);
                }
                Ctx::PixelRegionScores { pixel, region } => {
                    let (dp, dr) =
                        pixel_region_scores_backward(self.value(*pixel), self.value(*region), &g)?;
                    accumulate(&mut grads[pixel.0], dp);
                    accumulate(&mut grads[region.0], dr);
                }
                Ctx::RegionContext { attn, values } => {
                    let (da, dv) =
                        region_context_backward(self.value(*attn), self.value(*values), &g)?;
                    accumulate(&mut grads[attn.0], da);
                    accumulate(&mut grads[values.0], dv);
                }
            }
        }

        Ok(grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| g.unwrap_or_else(|| Tensor4::zeros(self.nodes[i].value.dims())))
            .collect())
    }
}

fn accumulate(slot: &mut Option<Tensor4>, g: Tensor4) {
    match slot {
        None => *slot = Some(g),
        Some(acc) => {
            for (a, &v) in acc.values_mut().iter_mut().zip(g.values()) {
                *a += v;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{grad_check, random_projection, CheckedOp, DEFAULT_FD_EPS};

    /// conv → BN(train) → ReLU → resize → weighted sum, checked end to end.
    #[test]
    fn composed_chain_matches_finite_differences() {
        let dims_in = [1, 2, 5, 5];
        let spec = ConvSpec::new(2, 3, 3).padding(1).bias(true);
        let proj = random_projection(31, 3 * 8 * 8);
        let op = move |inputs: &[Vec<f64>]| {
            let mut graph = Graph::new();
            let x = graph.leaf(Tensor4::new(dims_in, inputs[0].clone()).unwrap());
            let w = graph.leaf(Tensor4::new([3, 2, 3, 3], inputs[1].clone()).unwrap());
            let b = graph.leaf(Tensor4::new([1, 3, 1, 1], inputs[2].clone()).unwrap());
            let gamma = graph.leaf(Tensor4::new([1, 3, 1, 1], inputs[3].clone()).unwrap());
            let beta = graph.leaf(Tensor4::new([1, 3, 1, 1], inputs[4].clone()).unwrap());
            let mut stats = RunningStats::new(3);
            let c = graph.conv(x, w, Some(b), spec).unwrap();
            let n = graph.bn_train(c, gamma, beta, &mut stats, 1e-5).unwrap();
            let r = graph.relu(n);
            let up = graph.resize(r, 8, 8).unwrap();
            let value: f64 = graph
                .value(up)
                .values()
                .iter()
                .zip(&proj)
                .map(|(&o, &p)| o * p)
                .sum();
            let seed = Tensor4::new([1, 3, 8, 8], proj.clone()).unwrap();
            let grads = graph.backward(vec![(up, seed)]).unwrap();
            CheckedOp {
                value,
                grads: vec![
                    grads[0].values().to_vec(),
                    grads[1].values().to_vec(),
                    grads[2].values().to_vec(),
                    grads[3].values().to_vec(),
                    grads[4].values().to_vec(),
                ],
            }
        };
        let inputs = vec![
            random_projection(41, 50),
            random_projection(42, 54),
            random_projection(43, 3),
            random_projection(44, 3).iter().map(|v| v + 1.5).collect(),
            random_projection(45, 3),
        ];
        let err = grad_check(op, &inputs, DEFAULT_FD_EPS);
        assert!(err < 1e-4, "max relative error {}", err);
    }

    #[test]
    fn fan_out_gradients_accumulate() {
        // y = x + x: dy/dx must be 2.
        let mut graph = Graph::new();
        let x = graph.leaf(Tensor4::filled([1, 1, 2, 2], 3.0));
        let y = graph.add(x, x).unwrap();
        let grads = graph
            .backward(vec![(y, Tensor4::filled([1, 1, 2, 2], 1.0))])
            .unwrap();
        assert!(grads[0].values().iter().all(|&g| g == 2.0));
    }

    #[test]
    fn seeds_on_two_outputs_combine() {
        // main = relu(x), aux = x + x; seed both and check dx = relu'(x) + 2.
        let mut graph = Graph::new();
        let x = graph.leaf(Tensor4::new([1, 1, 1, 2], vec![-1.0, 2.0]).unwrap());
        let main = graph.relu(x);
        let aux = graph.add(x, x).unwrap();
        let one = Tensor4::filled([1, 1, 1, 2], 1.0);
        let grads = graph
            .backward(vec![(main, one.clone()), (aux, one)])
            .unwrap();
        assert_eq!(grads[0].values(), &[2.0, 3.0]);
    }

    #[test]
    fn untouched_nodes_get_zero_gradients() {
        let mut graph = Graph::new();
        let x = graph.leaf(Tensor4::filled([1, 1, 2, 2], 1.0));
        let orphan = graph.leaf(Tensor4::filled([1, 2, 3, 3], 5.0));
        let y = graph.relu(x);
        let grads = graph
            .backward(vec![(y, Tensor4::filled([1, 1, 2, 2], 1.0))])
            .unwrap();
        assert!(grads[orphan.0].values().iter().all(|&g| g == 0.0));
        assert_eq!(grads[orphan.0].dims(), [1, 2, 3, 3]);
    }
}
