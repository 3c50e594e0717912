//! Parameter initialization and the forward graph of the modified-HRNet
//! segmentation network.
//!
//! The layout mirrors HRNet at toy scale: a stem, four stages that grow one
//! resolution branch each (until the configured widths run out), residual
//! basic blocks on every branch, a fusion exchange at the end of each
//! multi-branch stage, and a classification head fed by the concatenated
//! branch features. The first transition and the fusion paths leaving
//! branch 1 use stride 3; everything else downsamples by 2. Branch-2 grids
//! therefore live at `ceil(r/3)` of the stem resolution, and upward fusion
//! paths bilinearly resize onto the exact target grid.

use std::collections::BTreeMap;

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::tensor::graph::{Graph, NodeId};
use crate::tensor::{ConvSpec, RunningStats, Tensor4, BN_EPS};

use super::{ModelConfig, ModelError};

pub(super) struct ParamSet {
    pub params: BTreeMap<String, Tensor4>,
    pub running: BTreeMap<String, RunningStats>,
}

fn he_uniform(rng: &mut ChaCha20Rng, dims: [usize; 4]) -> Tensor4 {
    let fan_in = (dims[1] * dims[2] * dims[3]) as f64;
    let limit = (6.0 / fan_in).sqrt();
    let dist = Uniform::new(-limit, limit);
    let len: usize = dims.iter().product();
    let data: Vec<f64> = (0..len).map(|_| dist.sample(rng)).collect();
    Tensor4::new(dims, data).expect("init length matches dims")
}

fn conv_weight(
    params: &mut BTreeMap<String, Tensor4>,
    rng: &mut ChaCha20Rng,
    name: &str,
    out_c: usize,
    in_c: usize,
    k: usize,
) {
    params.insert(name.to_string(), he_uniform(rng, [out_c, in_c, k, k]));
}

fn bias_zero(params: &mut BTreeMap<String, Tensor4>, name: &str, c: usize) {
    params.insert(name.to_string(), Tensor4::zeros([1, c, 1, 1]));
}

fn bn_init(
    params: &mut BTreeMap<String, Tensor4>,
    running: &mut BTreeMap<String, RunningStats>,
    name: &str,
    c: usize,
) {
    params.insert(format!("{name}.gamma"), Tensor4::filled([1, c, 1, 1], 1.0));
    params.insert(format!("{name}.beta"), Tensor4::zeros([1, c, 1, 1]));
    running.insert(name.to_string(), RunningStats::new(c));
}

/// Creates every parameter tensor and running-stat slot for `cfg`,
/// initializing conv weights He-uniform from a ChaCha20 stream seeded with
/// `cfg.seed`. The draw order is the fixed construction order below, so the
/// same config always yields the same bytes.
pub(super) fn init_params(cfg: &ModelConfig) -> ParamSet {
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut params = BTreeMap::new();
    let mut running = BTreeMap::new();
    let widths = &cfg.branch_widths;
    let w0 = widths[0];

    conv_weight(&mut params, &mut rng, "stem.conv1.weight", w0, cfg.in_channels, 3);
    bn_init(&mut params, &mut running, "stem.bn1", w0);
    if cfg.stem_downsample == 4 {
        conv_weight(&mut params, &mut rng, "stem.conv2.weight", w0, w0, 3);
        bn_init(&mut params, &mut running, "stem.bn2", w0);
    }

    for stage in 1..=cfg.num_stages {
        let nb = cfg.branches_at_stage(stage);
        if stage >= 2 && nb > cfg.branches_at_stage(stage - 1) {
            let src = widths[nb - 2];
            let dst = widths[nb - 1];
            conv_weight(
                &mut params,
                &mut rng,
                &format!("transition{stage}.conv.weight"),
                dst,
                src,
                3,
            );
            bn_init(&mut params, &mut running, &format!("transition{stage}.bn"), dst);
        }
        for b in 1..=nb {
            let w = widths[b - 1];
            for blk in 1..=cfg.blocks_per_branch {
                let pre = format!("stage{stage}.branch{b}.block{blk}");
                conv_weight(&mut params, &mut rng, &format!("{pre}.conv1.weight"), w, w, 3);
                bn_init(&mut params, &mut running, &format!("{pre}.bn1"), w);
                conv_weight(&mut params, &mut rng, &format!("{pre}.conv2.weight"), w, w, 3);
                bn_init(&mut params, &mut running, &format!("{pre}.bn2"), w);
            }
        }
        if stage >= 2 && nb > 1 {
            for i in 1..=nb {
                for j in 1..=nb {
                    if i == j {
                        continue;
                    }
                    if i < j {
                        for h in 1..=(j - i) {
                            let in_c = widths[i - 1];
                            let out_c = if h == j - i { widths[j - 1] } else { widths[i - 1] };
                            conv_weight(
                                &mut params,
                                &mut rng,
                                &format!("stage{stage}.fuse.b{i}to{j}.hop{h}.weight"),
                                out_c,
                                in_c,
                                3,
                            );
                        }
                    } else {
                        conv_weight(
                            &mut params,
                            &mut rng,
                            &format!("stage{stage}.fuse.b{i}to{j}.weight"),
                            widths[j - 1],
                            widths[i - 1],
                            1,
                        );
                    }
                }
            }
        }
    }

    let hc = cfg.head_channels();
    let k = cfg.num_classes;
    conv_weight(&mut params, &mut rng, "head.aux.weight", k, hc, 1);
    bias_zero(&mut params, "head.aux.bias", k);
    if cfg.ocr_enabled {
        let key = cfg.ocr_key_channels;
        conv_weight(&mut params, &mut rng, "head.ocr.phi.weight", key, hc, 1);
        bias_zero(&mut params, "head.ocr.phi.bias", key);
        conv_weight(&mut params, &mut rng, "head.ocr.psi.weight", key, hc, 1);
        bias_zero(&mut params, "head.ocr.psi.bias", key);
        conv_weight(&mut params, &mut rng, "head.ocr.delta.weight", hc, hc, 1);
        bias_zero(&mut params, "head.ocr.delta.bias", hc);
        conv_weight(&mut params, &mut rng, "head.ocr.eta.weight", hc, 2 * hc, 1);
        bias_zero(&mut params, "head.ocr.eta.bias", hc);
        conv_weight(&mut params, &mut rng, "head.main.weight", k, hc, 1);
        bias_zero(&mut params, "head.main.bias", k);
    }

    ParamSet { params, running }
}

pub(super) struct ForwardOut {
    pub graph: Graph,
    /// Parameter name -> tape leaf, for routing gradients back by name.
    pub ids: BTreeMap<String, NodeId>,
    pub main: NodeId,
    pub aux: NodeId,
}

pub(super) struct Pass<'m> {
    pub g: Graph,
    pub ids: BTreeMap<String, NodeId>,
    params: &'m BTreeMap<String, Tensor4>,
    running: &'m mut BTreeMap<String, RunningStats>,
    cfg: &'m ModelConfig,
    train: bool,
}

impl<'m> Pass<'m> {
    pub fn new(
        cfg: &'m ModelConfig,
        params: &'m BTreeMap<String, Tensor4>,
        running: &'m mut BTreeMap<String, RunningStats>,
        train: bool,
    ) -> Self {
        Self {
            g: Graph::new(),
            ids: BTreeMap::new(),
            params,
            running,
            cfg,
            train,
        }
    }

    fn p(&mut self, name: &str) -> Result<NodeId, ModelError> {
        if let Some(&id) = self.ids.get(name) {
            return Ok(id);
        }
        let tensor = self
            .params
            .get(name)
            .ok_or_else(|| ModelError::Shape(format!("missing parameter {name}")))?;
        let id = self.g.leaf(tensor.clone());
        self.ids.insert(name.to_string(), id);
        Ok(id)
    }

    fn conv(
        &mut self,
        x: NodeId,
        weight: &str,
        bias: Option<&str>,
        spec: ConvSpec,
    ) -> Result<NodeId, ModelError> {
        let w = self.p(weight)?;
        let b = match bias {
            Some(name) => Some(self.p(name)?),
            None => None,
        };
        Ok(self.g.conv(x, w, b, spec)?)
    }

    fn bn(&mut self, x: NodeId, name: &str) -> Result<NodeId, ModelError> {
        let gamma = self.p(&format!("{name}.gamma"))?;
        let beta = self.p(&format!("{name}.beta"))?;
        let stats = self
            .running
            .get_mut(name)
            .ok_or_else(|| ModelError::Shape(format!("missing running stats for {name}")))?;
        let id = if self.train {
            self.g.bn_train(x, gamma, beta, stats, BN_EPS)?
        } else {
            self.g.bn_eval(x, gamma, beta, stats, BN_EPS)?
        };
        Ok(id)
    }

    fn conv_bn_relu(
        &mut self,
        x: NodeId,
        conv_name: &str,
        bn_name: &str,
        spec: ConvSpec,
    ) -> Result<NodeId, ModelError> {
        let c = self.conv(x, &format!("{conv_name}.weight"), None, spec)?;
        let n = self.bn(c, bn_name)?;
        Ok(self.g.relu(n))
    }

    fn stem(&mut self, x: NodeId) -> Result<NodeId, ModelError> {
        let w0 = self.cfg.branch_widths[0];
        let cin = self.cfg.in_channels;
        if self.cfg.stem_downsample == 4 {
            let x = self.conv_bn_relu(
                x,
                "stem.conv1",
                "stem.bn1",
                ConvSpec::new(cin, w0, 3).stride(2).padding(1),
            )?;
            self.conv_bn_relu(
                x,
                "stem.conv2",
                "stem.bn2",
                ConvSpec::new(w0, w0, 3).stride(2).padding(1),
            )
        } else {
            self.conv_bn_relu(x, "stem.conv1", "stem.bn1", ConvSpec::new(cin, w0, 3).padding(1))
        }
    }

    fn residual_block(
        &mut self,
        x: NodeId,
        prefix: &str,
        width: usize,
        dilation: usize,
    ) -> Result<NodeId, ModelError> {
        let spec = ConvSpec::new(width, width, 3)
            .padding(dilation)
            .dilation(dilation);
        let c1 = self.conv(x, &format!("{prefix}.conv1.weight"), None, spec)?;
        let b1 = self.bn(c1, &format!("{prefix}.bn1"))?;
        let r1 = self.g.relu(b1);
        let c2 = self.conv(r1, &format!("{prefix}.conv2.weight"), None, spec)?;
        let b2 = self.bn(c2, &format!("{prefix}.bn2"))?;
        let sum = self.g.add(b2, x)?;
        Ok(self.g.relu(sum))
    }

    fn stage_blocks(
        &mut self,
        stage: usize,
        streams: Vec<NodeId>,
    ) -> Result<Vec<NodeId>, ModelError> {
        let dilation = self.cfg.stage_dilation(stage);
        let mut out = Vec::with_capacity(streams.len());
        for (bi, x) in streams.into_iter().enumerate() {
            let w = self.cfg.branch_widths[bi];
            let mut cur = x;
            for blk in 1..=self.cfg.blocks_per_branch {
                let prefix = format!("stage{stage}.branch{}.block{blk}", bi + 1);
                cur = self.residual_block(cur, &prefix, w, dilation)?;
            }
            out.push(cur);
        }
        Ok(out)
    }

    /// Verifies the stream-size rule before information is exchanged.
    fn shape_probe(&self, stage: usize, streams: &[NodeId]) -> Result<(), ModelError> {
        let r_h = self.g.value(streams[0]).h();
        let r_w = self.g.value(streams[0]).w();
        let want_h = self.cfg.branch_extents(r_h);
        let want_w = self.cfg.branch_extents(r_w);
        for (bi, &s) in streams.iter().enumerate() {
            let t = self.g.value(s);
            if t.c() != self.cfg.branch_widths[bi] || t.h() != want_h[bi] || t.w() != want_w[bi] {
                return Err(ModelError::Shape(format!(
                    "stage {stage} branch {}: features {}x{}x{} break the stream size rule \
                     (expected {}x{}x{})",
                    bi + 1,
                    t.c(),
                    t.h(),
                    t.w(),
                    self.cfg.branch_widths[bi],
                    want_h[bi],
                    want_w[bi],
                )));
            }
        }
        Ok(())
    }

    /// Sums transformed contributions from every branch into every branch.
    /// Down paths are 3x3 strided convs (stride 3 leaving branch 1, 2
    /// elsewhere), up paths a 1x1 conv followed by bilinear resize onto the
    /// target grid; all fusion convs are bias-free so zero streams stay zero.
    pub fn fusion(&mut self, stage: usize, streams: Vec<NodeId>) -> Result<Vec<NodeId>, ModelError> {
        self.shape_probe(stage, &streams)?;
        let nb = streams.len();
        if nb == 1 {
            return Ok(streams);
        }
        let widths = &self.cfg.branch_widths;
        let mut outs = Vec::with_capacity(nb);
        for j in 1..=nb {
            let mut acc = streams[j - 1];
            for i in 1..=nb {
                if i == j {
                    continue;
                }
                let contrib = if i < j {
                    let mut cur = streams[i - 1];
                    for h in 1..=(j - i) {
                        let stride = if i == 1 && h == 1 {
                            self.cfg.stage1_fusion_stride
                        } else {
                            self.cfg.other_fusion_stride
                        };
                        let out_c = if h == j - i { widths[j - 1] } else { widths[i - 1] };
                        let spec = ConvSpec::new(widths[i - 1], out_c, 3)
                            .stride(stride)
                            .padding(1);
                        let name = format!("stage{stage}.fuse.b{i}to{j}.hop{h}.weight");
                        cur = self.conv(cur, &name, None, spec)?;
                    }
                    cur
                } else {
                    let spec = ConvSpec::new(widths[i - 1], widths[j - 1], 1);
                    let name = format!("stage{stage}.fuse.b{i}to{j}.weight");
                    let c = self.conv(streams[i - 1], &name, None, spec)?;
                    let target = self.g.value(streams[j - 1]);
                    let (th, tw) = (target.h(), target.w());
                    self.g.resize(c, th, tw)?
                };
                acc = self.g.add(acc, contrib)?;
            }
            outs.push(acc);
        }
        Ok(outs)
    }

    /// Object-contextual augmentation: pool soft region vectors from the
    /// coarse logits, attend every pixel over the regions, and mix the
    /// gathered context back into the features.
    pub fn ocr(&mut self, features: NodeId, coarse: NodeId) -> Result<NodeId, ModelError> {
        let hc = self.cfg.head_channels();
        let key = self.cfg.ocr_key_channels;
        let region_weights = self.g.spatial_softmax(coarse);
        let regions = self.g.region_pool(region_weights, features)?;
        let phi = self.conv(
            features,
            "head.ocr.phi.weight",
            Some("head.ocr.phi.bias"),
            ConvSpec::new(hc, key, 1).bias(true),
        )?;
        let psi = self.conv(
            regions,
            "head.ocr.psi.weight",
            Some("head.ocr.psi.bias"),
            ConvSpec::new(hc, key, 1).bias(true),
        )?;
        let scores = self.g.pixel_region_scores(phi, psi)?;
        let attn = self.g.channel_softmax(scores);
        let delta = self.conv(
            regions,
            "head.ocr.delta.weight",
            Some("head.ocr.delta.bias"),
            ConvSpec::new(hc, hc, 1).bias(true),
        )?;
        let context = self.g.region_context(attn, delta)?;
        let cat = self.g.concat(features, context)?;
        self.conv(
            cat,
            "head.ocr.eta.weight",
            Some("head.ocr.eta.bias"),
            ConvSpec::new(2 * hc, hc, 1).bias(true),
        )
    }

    fn head(&mut self, streams: &[NodeId]) -> Result<(NodeId, NodeId), ModelError> {
        let b1 = streams[0];
        let (th, tw) = (self.g.value(b1).h(), self.g.value(b1).w());
        let mut cat = b1;
        for &s in &streams[1..] {
            let up = self.g.resize(s, th, tw)?;
            cat = self.g.concat(cat, up)?;
        }
        let hc = self.cfg.head_channels();
        let k = self.cfg.num_classes;
        let aux = self.conv(
            cat,
            "head.aux.weight",
            Some("head.aux.bias"),
            ConvSpec::new(hc, k, 1).bias(true),
        )?;
        let main = if self.cfg.ocr_enabled {
            let augmented = self.ocr(cat, aux)?;
            self.conv(
                augmented,
                "head.main.weight",
                Some("head.main.bias"),
                ConvSpec::new(hc, k, 1).bias(true),
            )?
        } else {
            aux
        };
        Ok((main, aux))
    }
}

/// Runs the whole network on `batch`, returning the tape plus the main and
/// auxiliary logit nodes (both resized to the input resolution).
pub(super) fn forward_pass(
    cfg: &ModelConfig,
    params: &BTreeMap<String, Tensor4>,
    running: &mut BTreeMap<String, RunningStats>,
    batch: &Tensor4,
    train: bool,
) -> Result<ForwardOut, ModelError> {
    let [_, c, h, w] = batch.dims();
    if c != cfg.in_channels {
        return Err(ModelError::Shape(format!(
            "batch has {c} channels but the stem expects {}",
            cfg.in_channels
        )));
    }
    let min = cfg.min_input_side();
    if h < min || w < min {
        return Err(ModelError::Shape(format!(
            "input {h}x{w} under the {min}x{min} minimum for stem factor {}",
            cfg.stem_downsample
        )));
    }

    let mut pass = Pass::new(cfg, params, running, train);
    let input = pass.g.leaf(batch.clone());
    let stem = pass.stem(input)?;
    let mut streams = pass.stage_blocks(1, vec![stem])?;
    for stage in 2..=cfg.num_stages {
        if cfg.branches_at_stage(stage) > streams.len() {
            let src = cfg.branch_widths[streams.len() - 1];
            let dst = cfg.branch_widths[streams.len()];
            let stride = if streams.len() == 1 {
                cfg.stage1_fusion_stride
            } else {
                cfg.other_fusion_stride
            };
            let t = pass.conv_bn_relu(
                *streams.last().expect("at least one stream"),
                &format!("transition{stage}.conv"),
                &format!("transition{stage}.bn"),
                ConvSpec::new(src, dst, 3).stride(stride).padding(1),
            )?;
            streams.push(t);
        }
        streams = pass.stage_blocks(stage, streams)?;
        streams = pass.fusion(stage, streams)?;
    }
    let (main_head, aux_head) = pass.head(&streams)?;
    let main = pass.g.resize(main_head, h, w)?;
    let aux = pass.g.resize(aux_head, h, w)?;
    Ok(ForwardOut {
        graph: pass.g,
        ids: pass.ids,
        main,
        aux,
    })
}
