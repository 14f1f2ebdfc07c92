//! Lightweight 3-D CNN with a per-slice temporal attention branch and a pyramid-pooled head.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};

use crate::error::{config_err, shape_err, Error, Result};
use crate::kernels::conv::backward_impl;
use crate::kernels::{
    batchnorm3d, batchnorm3d_backward, conv2d, conv2d_backward, conv3d, dropout, dropout_backward,
    fully_connected, fully_connected_backward, glorot_uniform, maxpool3d, maxpool3d_argmax,
    maxpool3d_backward, relu, relu_backward, sigmoid_scalar, spp3d, spp3d_argmax, spp3d_backward,
    spp_output_len, BatchNormCache, BatchNormParams, ConvSpec, Mode,
};
use crate::params::Parameters;
use crate::rng::{self, Rng};
use crate::tensor::Tensor;

const POOL: [usize; 3] = [2, 2, 2];

/// Architecture hyperparameters. Every preset keeps the same layer pattern:
/// four conv+BN+ReLU blocks, pooling after the third and fourth, attention on
/// the first pooled map, and a two-layer head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierConfig {
    /// Frames per clip.
    pub clip_len: usize,
    /// Side of the square nodule crop.
    pub crop_size: usize,
    pub channels: [usize; 4],
    pub conv_strides: [[usize; 3]; 4],
    /// Output channels of the first two attention convolutions (the third emits one).
    pub attention_channels: [usize; 2],
    pub fc_hidden: usize,
    pub dropout: f64,
    pub attention: bool,
    /// Pyramid pooling before the head; otherwise the pooled map is flattened.
    pub spp: bool,
}

impl ClassifierConfig {
    /// 32 frames of 112x112, channels 16/32/64/64, head input 1728.
    pub fn canonical() -> Self {
        ClassifierConfig {
            clip_len: 32,
            crop_size: 112,
            channels: [16, 32, 64, 64],
            conv_strides: [[1, 1, 1], [1, 2, 2], [2, 2, 2], [2, 2, 2]],
            attention_channels: [8, 4],
            fc_hidden: 128,
            dropout: 0.5,
            attention: true,
            spp: true,
        }
    }

    /// Desk-scale variant: 16 frames of 28x28 and narrow layers. The first pooled
    /// map is still 14x14, so the attention branch runs 14 -> 6 -> 2 -> 1.
    pub fn compact() -> Self {
        ClassifierConfig {
            clip_len: 16,
            crop_size: 28,
            channels: [4, 8, 8, 8],
            conv_strides: [[1, 1, 1], [1, 1, 1], [2, 1, 1], [1, 2, 2]],
            attention_channels: [4, 4],
            fc_hidden: 32,
            dropout: 0.5,
            attention: true,
            spp: true,
        }
    }

    /// Tiny variant for finite-difference checks: 8 frames of 28x28, two channels per layer.
    pub fn reduced() -> Self {
        ClassifierConfig {
            clip_len: 8,
            crop_size: 28,
            channels: [2, 2, 2, 2],
            conv_strides: [[1, 1, 1], [1, 1, 1], [1, 1, 1], [1, 2, 2]],
            attention_channels: [2, 2],
            fc_hidden: 4,
            dropout: 0.5,
            attention: true,
            spp: true,
        }
    }

    pub fn conv_spec(&self, layer: usize) -> ConvSpec {
        let cin = if layer == 0 {
            1
        } else {
            self.channels[layer - 1]
        };
        ConvSpec::new3d(
            cin,
            self.channels[layer],
            [3, 3, 3],
            self.conv_strides[layer],
            [1, 1, 1],
        )
    }

    pub fn attention_specs(&self) -> [ConvSpec; 3] {
        let [a, b] = self.attention_channels;
        [
            ConvSpec::new2d(self.channels[2], a, [3, 3], [2, 2], [0, 0]),
            ConvSpec::new2d(a, b, [3, 3], [2, 2], [0, 0]),
            ConvSpec::new2d(b, 1, [2, 2], [1, 1], [0, 0]),
        ]
    }

    /// Feature-map shapes for one clip; fails if any layer does not fit.
    pub fn trace(&self) -> Result<ShapeTrace> {
        if self.clip_len == 0
            || self.crop_size == 0
            || self.channels.contains(&0)
            || self.fc_hidden == 0
        {
            return config_err("classifier extents and widths must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return config_err(format!("dropout rate {} outside [0, 1)", self.dropout));
        }
        let mut extent = [self.clip_len, self.crop_size, self.crop_size];
        let mut conv = [[0; 4]; 4];
        let mut pool1 = [0; 4];
        let mut pool2 = [0; 4];
        for (layer, slot) in conv.iter_mut().enumerate() {
            extent = self.conv_spec(layer).output_extent(extent)?;
            *slot = [self.channels[layer], extent[0], extent[1], extent[2]];
            if layer >= 2 {
                if extent.iter().any(|&e| e < 2) {
                    return config_err(format!(
                        "conv{} output {extent:?} too small to pool",
                        layer + 1
                    ));
                }
                extent = extent.map(|e| e / 2);
                let p = [self.channels[layer], extent[0], extent[1], extent[2]];
                if layer == 2 {
                    pool1 = p;
                } else {
                    pool2 = p;
                }
            }
        }
        let mut side = [pool1[2], 0, 0, 0];
        let mut plane = [1, pool1[2], pool1[3]];
        for (i, spec) in self.attention_specs().iter().enumerate() {
            plane = spec.output_extent(plane).map_err(|e| {
                Error::Config(format!(
                    "attention conv {} does not fit the {}x{} slice: {e}",
                    i + 1,
                    pool1[2],
                    pool1[3]
                ))
            })?;
            side[i + 1] = plane[1];
        }
        if self.attention && (plane[1] != 1 || plane[2] != 1) {
            return config_err(format!(
                "attention branch ends at {}x{}, expected 1x1",
                plane[1], plane[2]
            ));
        }
        let map = [pool2[1], pool2[2], pool2[3]];
        let head_len = if self.spp {
            if map.iter().any(|&e| e < 2) {
                return config_err(format!("pyramid pooling needs extents >= 2, got {map:?}"));
            }
            spp_output_len(pool2[0], map)
        } else {
            pool2.iter().product()
        };
        Ok(ShapeTrace {
            conv,
            pool1,
            pool2,
            attention_sides: side,
            temporal_windows: pool1[1],
            head_len,
        })
    }
}

/// Per-sample `(C, D, H, W)` shapes through the network.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShapeTrace {
    pub conv: [[usize; 4]; 4],
    pub pool1: [usize; 4],
    pub pool2: [usize; 4],
    /// Slice side before and after each attention convolution.
    pub attention_sides: [usize; 4],
    /// Number of temporal attention weights.
    pub temporal_windows: usize,
    pub head_len: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvBlock {
    pub spec: ConvSpec,
    /// No bias: the batch norm that follows would cancel it.
    pub weight: Tensor,
    pub bn: BatchNormParams,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer {
    pub spec: ConvSpec,
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionBranch {
    pub convs: [ConvLayer; 3],
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierModel {
    pub config: ClassifierConfig,
    pub blocks: Vec<ConvBlock>,
    pub attention: Option<AttentionBranch>,
    pub fc1_weight: Tensor,
    pub fc1_bias: Tensor,
    pub fc2_weight: Tensor,
    pub fc2_bias: Tensor,
}

struct BlockCache {
    input: Tensor,
    bn: BatchNormCache,
    bn_out: Tensor,
}

struct AttentionCache {
    slices: Tensor,
    pre: [Tensor; 2],
    act: [Tensor; 2],
    gates: Vec<f64>,
}

/// Everything the backward pass needs, plus the outputs.
pub struct ClassifierCache {
    blocks: Vec<BlockCache>,
    pool1_in: Tensor,
    pool1: Tensor,
    attention: Option<AttentionCache>,
    pool2_in: Tensor,
    pool2: Tensor,
    head_in: Tensor,
    fc1_pre: Tensor,
    drop_mask: Tensor,
    fc2_in: Tensor,
    /// Malignancy probability per sample.
    pub probs: Vec<f64>,
    /// Temporal weights `[N, T_w]`, present when the branch ran.
    pub v_temp: Option<Tensor>,
}

impl ClassifierCache {
    /// Fingerprint of the active linear piece: every ReLU sign and every
    /// max-pooling / pyramid argmax of this pass.
    pub fn activation_pattern(&self) -> Result<u64> {
        let mut h = DefaultHasher::new();
        let signs = |t: &Tensor, h: &mut DefaultHasher| {
            for v in t.data() {
                (*v > 0.0).hash(h);
            }
        };
        for b in &self.blocks {
            signs(&b.bn_out, &mut h);
        }
        if let Some(a) = &self.attention {
            a.pre.iter().for_each(|t| signs(t, &mut h));
        }
        signs(&self.fc1_pre, &mut h);
        maxpool3d_argmax(&self.pool1_in, POOL, POOL)?.hash(&mut h);
        maxpool3d_argmax(&self.pool2_in, POOL, POOL)?.hash(&mut h);
        if self.head_in.len() != self.pool2.len() {
            spp3d_argmax(&self.pool2)?.hash(&mut h);
        }
        Ok(h.finish())
    }

    /// Batch-norm statistics of this pass, in block order.
    pub fn bn_caches(&self) -> Vec<&BatchNormCache> {
        self.blocks.iter().map(|b| &b.bn).collect()
    }
}

/// Copies `[N, C, D, H, W]` into per-slice order `[N*D, C, H, W]`.
fn to_slices(x: &Tensor) -> Tensor {
    let [n, c, d, h, w] = *x.shape() else {
        unreachable!()
    };
    let hw = h * w;
    let mut out = vec![0.0; x.len()];
    for b in 0..n {
        for ch in 0..c {
            for z in 0..d {
                let src = ((b * c + ch) * d + z) * hw;
                let dst = ((b * d + z) * c + ch) * hw;
                out[dst..dst + hw].copy_from_slice(&x.data()[src..src + hw]);
            }
        }
    }
    Tensor::new(vec![n * d, c, h, w], out).expect("same volume")
}

/// Inverse of [`to_slices`], added into `into`.
fn add_from_slices(slices: &Tensor, into: &mut Tensor) {
    let [n, c, d, h, w] = *into.shape() else {
        unreachable!()
    };
    let hw = h * w;
    let dst_data = into.data_mut();
    for b in 0..n {
        for ch in 0..c {
            for z in 0..d {
                let dst = ((b * c + ch) * d + z) * hw;
                let src = ((b * d + z) * c + ch) * hw;
                for (o, v) in dst_data[dst..dst + hw]
                    .iter_mut()
                    .zip(&slices.data()[src..src + hw])
                {
                    *o += v;
                }
            }
        }
    }
}

/// Multiplies each temporal slice `[n, :, d, :, :]` by `weights[n * D + d]`.
pub fn apply_temporal_weights(x: &Tensor, weights: &[f64]) -> Result<Tensor> {
    let [n, c, d, h, w] = *x.shape() else {
        return shape_err(format!(
            "temporal weighting expects [N,C,D,H,W], got {:?}",
            x.shape()
        ));
    };
    if weights.len() != n * d {
        return shape_err(format!(
            "{} temporal weights for {n}x{d} slices",
            weights.len()
        ));
    }
    let hw = h * w;
    let mut out = x.clone();
    for (i, chunk) in out.data_mut().chunks_mut(hw).enumerate() {
        let (b, z) = (i / (c * d), i % d);
        let s = weights[b * d + z];
        chunk.iter_mut().for_each(|v| *v *= s);
    }
    Ok(out)
}

impl ClassifierModel {
    /// Glorot-uniform weights, zero biases, unit BN scale. `stream` selects an
    /// independent initialisation (one per fold).
    pub fn new(config: ClassifierConfig, seed: u64, stream: u64) -> Result<Self> {
        let trace = config.trace()?;
        let mut r = rng::stream(seed, rng::INIT_CLASSIFIER, stream);
        let blocks = (0..4)
            .map(|i| {
                let spec = config.conv_spec(i);
                let fan = spec.kernel_volume();
                ConvBlock {
                    weight: glorot_uniform(
                        &spec.weight_shape3d(),
                        spec.in_channels * fan,
                        spec.out_channels * fan,
                        &mut r,
                    ),
                    bn: BatchNormParams::new(spec.out_channels),
                    spec,
                }
            })
            .collect();
        let attention = config.attention.then(|| AttentionBranch {
            convs: config.attention_specs().map(|spec| {
                let fan = spec.kernel_volume();
                ConvLayer {
                    weight: glorot_uniform(
                        &spec.weight_shape2d(),
                        spec.in_channels * fan,
                        spec.out_channels * fan,
                        &mut r,
                    ),
                    bias: Tensor::zeros(&[spec.out_channels]),
                    spec,
                }
            }),
        });
        let (l, hdn) = (trace.head_len, config.fc_hidden);
        Ok(ClassifierModel {
            blocks,
            attention,
            fc1_weight: glorot_uniform(&[hdn, l], l, hdn, &mut r),
            fc1_bias: Tensor::zeros(&[hdn]),
            fc2_weight: glorot_uniform(&[1, hdn], hdn, 1, &mut r),
            fc2_bias: Tensor::zeros(&[1]),
            config,
        })
    }

    /// Drops the attention branch (the network then sees unweighted pooled maps).
    pub fn without_attention(&self) -> Self {
        let mut m = self.clone();
        m.attention = None;
        m.config.attention = false;
        m
    }

    pub fn trace(&self) -> Result<ShapeTrace> {
        self.config.trace()
    }

    fn check_input(&self, x: &Tensor) -> Result<usize> {
        let c = &self.config;
        match *x.shape() {
            [n, 1, t, h, w] if t == c.clip_len && h == c.crop_size && w == c.crop_size => Ok(n),
            _ => shape_err(format!(
                "classifier expects [N, 1, {}, {}, {}], got {:?}",
                c.clip_len,
                c.crop_size,
                c.crop_size,
                x.shape()
            )),
        }
    }

    fn block_forward(&self, i: usize, input: Tensor, mode: Mode) -> Result<(Tensor, BlockCache)> {
        let b = &self.blocks[i];
        let zero_bias = Tensor::zeros(&[b.spec.out_channels]);
        let z = conv3d(&input, &b.spec, &b.weight, &zero_bias)?;
        let (bn_out, bn) = batchnorm3d(&z, &b.bn, mode)?;
        Ok((relu(&bn_out), BlockCache { input, bn, bn_out }))
    }

    fn attention_forward(
        &self,
        branch: &AttentionBranch,
        pool1: &Tensor,
    ) -> Result<AttentionCache> {
        let slices = to_slices(pool1);
        let [a, b, c] = &branch.convs;
        let pre_a = conv2d(&slices, &a.spec, &a.weight, &a.bias)?;
        let act_a = relu(&pre_a);
        let pre_b = conv2d(&act_a, &b.spec, &b.weight, &b.bias)?;
        let act_b = relu(&pre_b);
        let logits = conv2d(&act_b, &c.spec, &c.weight, &c.bias)?;
        let gates = logits
            .data()
            .iter()
            .map(|&z| 2.0 * sigmoid_scalar(z))
            .collect();
        Ok(AttentionCache {
            slices,
            pre: [pre_a, pre_b],
            act: [act_a, act_b],
            gates,
        })
    }

    /// Forward pass over a batch `[N, 1, T, S, S]`.
    ///
    /// With `bypass_attention` the temporal weights are fixed at 1 and the
    /// branch is not evaluated. `dropout_rng` is only drawn from in training mode.
    pub fn forward(
        &self,
        x: &Tensor,
        mode: Mode,
        bypass_attention: bool,
        dropout_rng: &mut Rng,
    ) -> Result<ClassifierCache> {
        let n = self.check_input(x)?;
        let mut blocks = Vec::with_capacity(4);
        let mut act = x.clone();
        for i in 0..3 {
            let (next, cache) = self.block_forward(i, act, mode)?;
            blocks.push(cache);
            act = next;
        }
        let pool1_in = act;
        let pool1 = maxpool3d(&pool1_in, POOL, POOL)?;
        let windows = pool1.shape()[2];
        let (attention, v_temp, attended) = match (&self.attention, bypass_attention) {
            (Some(branch), false) => {
                let ac = self.attention_forward(branch, &pool1)?;
                let attended = apply_temporal_weights(&pool1, &ac.gates)?;
                let v = Tensor::new(vec![n, windows], ac.gates.clone())?;
                (Some(ac), Some(v), attended)
            }
            _ => (None, None, pool1.clone()),
        };
        let (pool2_in, cache4) = self.block_forward(3, attended, mode)?;
        blocks.push(cache4);
        let pool2 = maxpool3d(&pool2_in, POOL, POOL)?;
        let head_in = if self.config.spp {
            spp3d(&pool2)?
        } else {
            let len = pool2.len() / n;
            pool2.clone().reshape(&[n, len])?
        };
        let fc1_pre = fully_connected(&head_in, &self.fc1_weight, &self.fc1_bias)?;
        let (fc2_in, drop_mask) = dropout(&relu(&fc1_pre), self.config.dropout, mode, dropout_rng)?;
        let logits = fully_connected(&fc2_in, &self.fc2_weight, &self.fc2_bias)?;
        let probs: Vec<f64> = logits.data().iter().map(|&z| sigmoid_scalar(z)).collect();
        if let Some(bad) = probs.iter().find(|p| !p.is_finite()) {
            return Err(Error::NonFinite(format!("classifier probability {bad}")));
        }
        Ok(ClassifierCache {
            blocks,
            pool1_in,
            pool1,
            attention,
            pool2_in,
            pool2,
            head_in,
            fc1_pre,
            drop_mask,
            fc2_in,
            probs,
            v_temp,
        })
    }

    /// Eval-mode probabilities.
    pub fn predict(&self, x: &Tensor) -> Result<Vec<f64>> {
        let mut unused = rng::stream(0, rng::DROPOUT, 0);
        Ok(self.forward(x, Mode::Eval, false, &mut unused)?.probs)
    }

    /// Parameter gradients (in [`Parameters`] order) given the loss gradient
    /// with respect to the output logits and, optionally, the temporal weights.
    pub fn backward(
        &self,
        cache: &ClassifierCache,
        d_logits: &[f64],
        d_v_temp: Option<&Tensor>,
    ) -> Result<Vec<Tensor>> {
        let n = cache.probs.len();
        if d_logits.len() != n {
            return shape_err(format!(
                "{} logit gradients for a batch of {n}",
                d_logits.len()
            ));
        }
        let d_logits = Tensor::new(vec![n, 1], d_logits.to_vec())?;
        let fc2 = fully_connected_backward(&cache.fc2_in, &self.fc2_weight, &d_logits)?;
        let d_hidden = relu_backward(
            &cache.fc1_pre,
            &dropout_backward(&cache.drop_mask, &fc2.d_input)?,
        )?;
        let fc1 = fully_connected_backward(&cache.head_in, &self.fc1_weight, &d_hidden)?;
        let d_pool2 = if self.config.spp {
            spp3d_backward(&cache.pool2, &fc1.d_input)?
        } else {
            fc1.d_input.clone().reshape(cache.pool2.shape())?
        };
        let d_a4 = maxpool3d_backward(&cache.pool2_in, POOL, POOL, &d_pool2)?;
        let (mut d_attended, g4) = self.block_backward(3, &cache.blocks[3], &d_a4, true)?;

        let mut attention_grads = Vec::new();
        let d_pool1 = match (&self.attention, &cache.attention) {
            (Some(branch), Some(ac)) => {
                let windows = cache.pool1.shape()[2];
                let hw: usize = cache.pool1.shape()[3..].iter().product();
                let c = cache.pool1.shape()[1];
                // d/dv of sum(d_attended * v * pool1), then through 2*sigmoid
                let mut d_gate = vec![0.0; n * windows];
                for (i, (chunk, x)) in d_attended
                    .data()
                    .chunks(hw)
                    .zip(cache.pool1.data().chunks(hw))
                    .enumerate()
                {
                    let (b, z) = (i / (c * windows), i % windows);
                    d_gate[b * windows + z] += chunk.iter().zip(x).map(|(g, v)| g * v).sum::<f64>();
                }
                if let Some(dv) = d_v_temp {
                    dv.expect_shape(&[n, windows], "temporal weight gradient")?;
                    d_gate.iter_mut().zip(dv.data()).for_each(|(a, b)| *a += b);
                }
                let d_logit: Vec<f64> = d_gate
                    .iter()
                    .zip(&ac.gates)
                    .map(|(g, v)| {
                        let s = v / 2.0;
                        g * 2.0 * s * (1.0 - s)
                    })
                    .collect();
                let [a, b, cv] = &branch.convs;
                let d_logit = Tensor::new(vec![n * windows, 1, 1, 1], d_logit)?;
                let gc = conv2d_backward(&ac.act[1], &cv.spec, &cv.weight, &d_logit)?;
                let d_pre_b = relu_backward(&ac.pre[1], &gc.d_input)?;
                let gb = conv2d_backward(&ac.act[0], &b.spec, &b.weight, &d_pre_b)?;
                let d_pre_a = relu_backward(&ac.pre[0], &gb.d_input)?;
                let ga = conv2d_backward(&ac.slices, &a.spec, &a.weight, &d_pre_a)?;
                for g in [&ga, &gb, &gc] {
                    attention_grads.push(g.param("weight").clone());
                    attention_grads.push(g.param("bias").clone());
                }
                let gates = &ac.gates;
                let mut d_pool1 = apply_temporal_weights(&d_attended, gates)?;
                add_from_slices(&ga.d_input, &mut d_pool1);
                d_pool1
            }
            _ => {
                if d_v_temp.is_some() {
                    return config_err("temporal weight gradient given but attention did not run");
                }
                std::mem::replace(&mut d_attended, Tensor::zeros(&[1]))
            }
        };
        if let (Some(attention), None) = (&self.attention, &cache.attention) {
            // bypassed branch: its parameters did not influence the output
            for conv in &attention.convs {
                attention_grads.push(Tensor::zeros(conv.weight.shape()));
                attention_grads.push(Tensor::zeros(conv.bias.shape()));
            }
        }
        let mut d_act = maxpool3d_backward(&cache.pool1_in, POOL, POOL, &d_pool1)?;
        let mut block_grads = Vec::with_capacity(3);
        for i in (0..3).rev() {
            let (d_in, g) = self.block_backward(i, &cache.blocks[i], &d_act, i > 0)?;
            block_grads.push(g);
            d_act = d_in;
        }
        block_grads.reverse();
        let mut grads = Vec::new();
        for g in block_grads {
            grads.extend(g);
        }
        grads.extend(attention_grads);
        grads.extend(g4);
        grads.push(fc1.param("weight").clone());
        grads.push(fc1.param("bias").clone());
        grads.push(fc2.param("weight").clone());
        grads.push(fc2.param("bias").clone());
        Ok(grads)
    }

    /// Returns the gradient with respect to the block input and `[weight, gamma, beta]`.
    fn block_backward(
        &self,
        i: usize,
        cache: &BlockCache,
        d_out: &Tensor,
        want_input: bool,
    ) -> Result<(Tensor, Vec<Tensor>)> {
        let b = &self.blocks[i];
        let d_bn_out = relu_backward(&cache.bn_out, d_out)?;
        let bn = batchnorm3d_backward(&cache.bn, &b.bn.gamma, &d_bn_out)?;
        let conv = backward_impl(&cache.input, &b.spec, 3, &b.weight, &bn.d_input, want_input)?;
        Ok((
            conv.d_input.clone(),
            vec![
                conv.param("weight").clone(),
                bn.param("gamma").clone(),
                bn.param("beta").clone(),
            ],
        ))
    }

    /// Folds this pass's batch statistics into the running estimates.
    pub fn update_running_stats(&mut self, cache: &ClassifierCache) {
        for (b, c) in self.blocks.iter_mut().zip(&cache.blocks) {
            b.bn.update_running(&c.bn);
        }
    }

    pub fn named_buffers(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, b) in self.blocks.iter().enumerate() {
            out.push((format!("bn{}.running_mean", i + 1), &b.bn.running_mean));
            out.push((format!("bn{}.running_var", i + 1), &b.bn.running_var));
        }
        out
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for b in &mut self.blocks {
            out.push(&mut b.bn.running_mean);
            out.push(&mut b.bn.running_var);
        }
        out
    }
}

impl Parameters for ClassifierModel {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        fn block<'a>(out: &mut Vec<(String, &'a Tensor)>, i: usize, b: &'a ConvBlock) {
            out.push((format!("conv{}.weight", i + 1), &b.weight));
            out.push((format!("bn{}.gamma", i + 1), &b.bn.gamma));
            out.push((format!("bn{}.beta", i + 1), &b.bn.beta));
        }
        let mut out: Vec<(String, &Tensor)> = Vec::new();
        for (i, b) in self.blocks.iter().take(3).enumerate() {
            block(&mut out, i, b);
        }
        if let Some(a) = &self.attention {
            for (name, c) in ["a", "b", "c"].iter().zip(&a.convs) {
                out.push((format!("attention.conv_{name}.weight"), &c.weight));
                out.push((format!("attention.conv_{name}.bias"), &c.bias));
            }
        }
        block(&mut out, 3, &self.blocks[3]);
        out.push(("fc1.weight".into(), &self.fc1_weight));
        out.push(("fc1.bias".into(), &self.fc1_bias));
        out.push(("fc2.weight".into(), &self.fc2_weight));
        out.push(("fc2.bias".into(), &self.fc2_bias));
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        let (first, last) = self.blocks.split_at_mut(3);
        for b in first {
            out.push(&mut b.weight);
            out.push(&mut b.bn.gamma);
            out.push(&mut b.bn.beta);
        }
        if let Some(a) = &mut self.attention {
            for c in &mut a.convs {
                out.push(&mut c.weight);
                out.push(&mut c.bias);
            }
        }
        out.push(&mut last[0].weight);
        out.push(&mut last[0].bn.gamma);
        out.push(&mut last[0].bn.beta);
        out.push(&mut self.fc1_weight);
        out.push(&mut self.fc1_bias);
        out.push(&mut self.fc2_weight);
        out.push(&mut self.fc2_bias);
        out
    }
}
