//! Scale-parameterized conditional generator.
//!
//! Topology: an entry stage (class embedding, then a linear projection of
//! the conditioning vector reshaped to `[C, S, S]`), `num_blocks` bottleneck
//! residual blocks, one self-attention block after a configurable block, and
//! an output stage (conditional norm, ReLU, 3x3 conv to RGB, tanh).
//!
//! Each residual block is
//!
//! ```text
//! h = conv1x1(relu(cbn1(x)))            in  -> in/4
//! h = relu(cbn2(h)); upsample h and x   (upsampling blocks only)
//! h = conv3x3(h)
//! h = conv3x3(relu(cbn3(h)))
//! h = conv1x1(relu(cbn4(h)))            in/4 -> out
//! out = h + x[..out]                    (skip by channel truncation)
//! ```
//!
//! Every conditional batch norm receives the full conditioning vector
//! `concat(z, embedding[c])`.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checkpoint::Checkpoint;
use crate::manifest::{BlockId, ParamKind, ParamSpec};
use crate::ops::{self, AttentionParams};
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("invalid graph config: {0}")]
    InvalidConfig(String),
    #[error("unknown graph config `{0}` (built-ins: tiny64, full256)")]
    UnknownConfig(String),
    #[error("cannot read graph config {path}: {message}")]
    ConfigFile { path: String, message: String },
    #[error(transparent)]
    Manifest(#[from] ManifestMismatch),
    #[error("class {class} out of range for {num_classes} classes")]
    ClassOutOfRange { class: usize, num_classes: usize },
    #[error("latent has {actual} entries, graph expects {expected}")]
    LatentLength { expected: usize, actual: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Differences between a checkpoint and the manifest it is bound to.
#[derive(Debug, Clone, Default, PartialEq, Error)]
#[error("checkpoint does not match graph manifest: {}", self.summary())]
pub struct ManifestMismatch {
    pub missing: Vec<String>,
    pub extra: Vec<String>,
    pub misshaped: Vec<(String, Vec<usize>, Vec<usize>)>,
    pub mistagged: Vec<String>,
}

impl ManifestMismatch {
    pub fn is_empty(&self) -> bool {
        self.missing.is_empty()
            && self.extra.is_empty()
            && self.misshaped.is_empty()
            && self.mistagged.is_empty()
    }

    fn summary(&self) -> String {
        let mut parts = Vec::new();
        if !self.missing.is_empty() {
            parts.push(format!("missing [{}]", self.missing.join(", ")));
        }
        if !self.extra.is_empty() {
            parts.push(format!("extra [{}]", self.extra.join(", ")));
        }
        for (name, expected, actual) in &self.misshaped {
            parts.push(format!("{name} has shape {actual:?}, expected {expected:?}"));
        }
        if !self.mistagged.is_empty() {
            parts.push(format!("wrong block/kind [{}]", self.mistagged.join(", ")));
        }
        parts.join("; ")
    }
}

fn default_bottleneck_ratio() -> usize {
    4
}
fn default_qk_divisor() -> usize {
    8
}
fn default_value_divisor() -> usize {
    2
}
fn default_bn_epsilon() -> f32 {
    1e-4
}

/// Input/output channel multipliers of one residual block, in units of
/// `base_channels`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelPair {
    pub input: usize,
    pub output: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphConfig {
    pub name: String,
    pub latent_dim: usize,
    pub num_classes: usize,
    pub embed_dim: usize,
    pub base_channels: usize,
    pub num_blocks: usize,
    /// 1-based indices of the blocks that double the spatial resolution.
    pub upsample_blocks: BTreeSet<usize>,
    pub attention_after_block: usize,
    pub channel_schedule: Vec<ChannelPair>,
    pub entry_spatial: usize,
    #[serde(default = "default_bottleneck_ratio")]
    pub bottleneck_ratio: usize,
    #[serde(default = "default_qk_divisor")]
    pub attention_qk_divisor: usize,
    #[serde(default = "default_value_divisor")]
    pub attention_value_divisor: usize,
    #[serde(default = "default_bn_epsilon")]
    pub bn_epsilon: f32,
}

fn schedule(pairs: &[(usize, usize)]) -> Vec<ChannelPair> {
    pairs
        .iter()
        .map(|&(input, output)| ChannelPair { input, output })
        .collect()
}

impl GraphConfig {
    /// Desk-scale 64x64 generator with seven blocks.
    pub fn tiny64() -> Self {
        Self {
            name: "tiny64".into(),
            latent_dim: 16,
            num_classes: 10,
            embed_dim: 16,
            base_channels: 32,
            num_blocks: 7,
            upsample_blocks: [2, 4, 6].into(),
            attention_after_block: 4,
            channel_schedule: schedule(&[
                (16, 16),
                (16, 8),
                (8, 4),
                (4, 2),
                (2, 2),
                (2, 1),
                (1, 1),
            ]),
            entry_spatial: 8,
            bottleneck_ratio: default_bottleneck_ratio(),
            attention_qk_divisor: default_qk_divisor(),
            attention_value_divisor: default_value_divisor(),
            bn_epsilon: default_bn_epsilon(),
        }
    }

    /// 256x256 generator with thirteen blocks at full width.
    pub fn full256() -> Self {
        Self {
            name: "full256".into(),
            latent_dim: 128,
            num_classes: 1000,
            embed_dim: 128,
            base_channels: 128,
            num_blocks: 13,
            upsample_blocks: [2, 4, 6, 8, 11, 13].into(),
            attention_after_block: 8,
            channel_schedule: schedule(&[
                (16, 16),
                (16, 16),
                (16, 16),
                (16, 8),
                (8, 8),
                (8, 8),
                (8, 8),
                (8, 4),
                (4, 4),
                (4, 4),
                (4, 2),
                (2, 2),
                (2, 1),
            ]),
            entry_spatial: 4,
            bottleneck_ratio: default_bottleneck_ratio(),
            attention_qk_divisor: default_qk_divisor(),
            attention_value_divisor: default_value_divisor(),
            bn_epsilon: default_bn_epsilon(),
        }
    }

    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "tiny64" => Some(Self::tiny64()),
            "full256" => Some(Self::full256()),
            _ => None,
        }
    }

    /// A built-in name, or the path of a JSON config file.
    pub fn resolve(spec: &str) -> Result<Self, GraphError> {
        if let Some(cfg) = Self::builtin(spec) {
            return Ok(cfg);
        }
        let path = Path::new(spec);
        if !path.exists() {
            return Err(GraphError::UnknownConfig(spec.to_string()));
        }
        let text = fs::read_to_string(path).map_err(|e| GraphError::ConfigFile {
            path: spec.to_string(),
            message: e.to_string(),
        })?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| GraphError::ConfigFile {
            path: spec.to_string(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn cond_dim(&self) -> usize {
        self.latent_dim + self.embed_dim
    }

    pub fn output_resolution(&self) -> usize {
        self.entry_spatial << self.upsample_blocks.len()
    }

    pub fn block_channels(&self, block: usize) -> (usize, usize) {
        let p = self.channel_schedule[block - 1];
        (p.input * self.base_channels, p.output * self.base_channels)
    }

    /// Spatial extent after block `block` (0 = entry stage).
    pub fn spatial_after(&self, block: usize) -> usize {
        let ups = self.upsample_blocks.range(..=block).count();
        self.entry_spatial << ups
    }

    pub fn attention_channels(&self) -> usize {
        self.block_channels(self.attention_after_block).1
    }

    pub fn validate(&self) -> Result<(), GraphError> {
        let bad = |m: String| Err(GraphError::InvalidConfig(m));
        for (field, v) in [
            ("latent_dim", self.latent_dim),
            ("num_classes", self.num_classes),
            ("embed_dim", self.embed_dim),
            ("base_channels", self.base_channels),
            ("num_blocks", self.num_blocks),
            ("entry_spatial", self.entry_spatial),
            ("bottleneck_ratio", self.bottleneck_ratio),
            ("attention_qk_divisor", self.attention_qk_divisor),
            ("attention_value_divisor", self.attention_value_divisor),
        ] {
            if v == 0 {
                return bad(format!("{field} must be positive"));
            }
        }
        if !(self.bn_epsilon > 0.0) {
            return bad(format!("bn_epsilon must be positive, got {}", self.bn_epsilon));
        }
        if self.channel_schedule.len() != self.num_blocks {
            return bad(format!(
                "channel_schedule has {} entries for {} blocks",
                self.channel_schedule.len(),
                self.num_blocks
            ));
        }
        if let Some(&b) = self
            .upsample_blocks
            .iter()
            .find(|&&b| b == 0 || b > self.num_blocks)
        {
            return bad(format!("upsample block {b} outside 1..={}", self.num_blocks));
        }
        if self.attention_after_block == 0 || self.attention_after_block > self.num_blocks {
            return bad(format!(
                "attention_after_block {} outside 1..={}",
                self.attention_after_block, self.num_blocks
            ));
        }
        if self.upsample_blocks.len() >= usize::BITS as usize - 8 {
            return bad("too many upsampling blocks".into());
        }
        for (i, pair) in self.channel_schedule.iter().enumerate() {
            let block = i + 1;
            if pair.input == 0 || pair.output == 0 {
                return bad(format!("block {block} has a zero channel multiplier"));
            }
            if pair.output > pair.input {
                return bad(format!(
                    "block {block} widens {} -> {}; the truncating skip path needs output <= input",
                    pair.input, pair.output
                ));
            }
            let (cin, _) = self.block_channels(block);
            if cin % self.bottleneck_ratio != 0 {
                return bad(format!(
                    "block {block} input channels {cin} not divisible by bottleneck ratio {}",
                    self.bottleneck_ratio
                ));
            }
            if let Some(next) = self.channel_schedule.get(i + 1) {
                if next.input != pair.output {
                    return bad(format!(
                        "block {block} outputs {} but block {} expects {}",
                        pair.output,
                        block + 1,
                        next.input
                    ));
                }
            }
        }
        let ca = self.attention_channels();
        if ca % self.attention_qk_divisor != 0 || ca % self.attention_value_divisor != 0 {
            return bad(format!(
                "attention channels {ca} not divisible by {} and {}",
                self.attention_qk_divisor, self.attention_value_divisor
            ));
        }
        Ok(())
    }
}

/// Concatenation of the latent `z` with the class embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditioningVector(Tensor);

impl ConditioningVector {
    pub fn new(z: &Tensor, class_embedding: &Tensor) -> Result<Self, TensorError> {
        Tensor::concat(&[z, class_embedding]).map(Self)
    }

    pub fn as_tensor(&self) -> &Tensor {
        &self.0
    }
}

/// Projection weights of one conditional batch norm.
#[derive(Debug, Clone, Copy)]
pub struct CbnProjection<'a> {
    pub gain_weight: &'a Tensor,
    pub gain_bias: &'a Tensor,
    pub bias_weight: &'a Tensor,
    pub bias_bias: &'a Tensor,
}

/// `gain = 1 + W_g·cond + b_g`, `bias = W_b·cond + b_b`.
pub fn conditional_gain_bias(
    cond: &ConditioningVector,
    proj: &CbnProjection<'_>,
) -> Result<(Tensor, Tensor), TensorError> {
    let gain = ops::linear(cond.as_tensor(), proj.gain_weight, proj.gain_bias)?.map(|g| 1.0 + g);
    let bias = ops::linear(cond.as_tensor(), proj.bias_weight, proj.bias_bias)?;
    Ok((gain, bias))
}

/// Spatial shape observed after a stage during a traced forward pass.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageTrace {
    pub block: BlockId,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct GeneratorGraph {
    config: GraphConfig,
    manifest: Vec<ParamSpec>,
}

impl GeneratorGraph {
    pub fn build(config: GraphConfig) -> Result<Self, GraphError> {
        config.validate()?;
        let manifest = build_manifest(&config);
        Ok(Self { config, manifest })
    }

    pub fn config(&self) -> &GraphConfig {
        &self.config
    }

    pub fn manifest(&self) -> &[ParamSpec] {
        &self.manifest
    }

    pub fn parameter_count(&self) -> usize {
        self.manifest.iter().map(ParamSpec::numel).sum()
    }

    pub fn trainable_parameter_count(&self) -> usize {
        self.manifest
            .iter()
            .filter(|p| p.kind.is_trainable())
            .map(ParamSpec::numel)
            .sum()
    }

    pub fn output_resolution(&self) -> usize {
        self.config.output_resolution()
    }

    /// Checks that `checkpoint` supplies exactly this manifest (by name; entry
    /// order is irrelevant) and indexes its tensors for evaluation.
    pub fn bind<'a>(&'a self, checkpoint: &'a Checkpoint) -> Result<BoundGenerator<'a>, GraphError> {
        let by_name: HashMap<&str, _> = checkpoint
            .entries()
            .iter()
            .map(|e| (e.name.as_str(), e))
            .collect();
        let mut mismatch = ManifestMismatch::default();
        let mut params = HashMap::with_capacity(self.manifest.len());
        for spec in &self.manifest {
            match by_name.get(spec.name.as_str()) {
                None => mismatch.missing.push(spec.name.clone()),
                Some(e) if e.tensor.shape() != spec.shape.as_slice() => mismatch.misshaped.push((
                    spec.name.clone(),
                    spec.shape.clone(),
                    e.tensor.shape().to_vec(),
                )),
                Some(e) if e.block != spec.block || e.kind != spec.kind => {
                    mismatch.mistagged.push(spec.name.clone())
                }
                Some(e) => {
                    params.insert(spec.name.as_str(), &e.tensor);
                }
            }
        }
        let declared: BTreeSet<&str> = self.manifest.iter().map(|s| s.name.as_str()).collect();
        mismatch.extra = checkpoint
            .entries()
            .iter()
            .filter(|e| !declared.contains(e.name.as_str()))
            .map(|e| e.name.clone())
            .collect();
        if !mismatch.is_empty() {
            return Err(mismatch.into());
        }
        Ok(BoundGenerator {
            config: &self.config,
            params,
        })
    }

    /// Binds and evaluates in one call.
    pub fn forward(
        &self,
        checkpoint: &Checkpoint,
        z: &Tensor,
        class: usize,
    ) -> Result<Tensor, GraphError> {
        self.bind(checkpoint)?.forward(z, class)
    }
}

/// A graph paired with a validated checkpoint, ready for inference.
pub struct BoundGenerator<'a> {
    config: &'a GraphConfig,
    params: HashMap<&'a str, &'a Tensor>,
}

impl<'a> BoundGenerator<'a> {
    fn p(&self, name: &str) -> &'a Tensor {
        self.params
            .get(name)
            .copied()
            .unwrap_or_else(|| panic!("bound generator lacks validated parameter {name}"))
    }

    pub fn conditioning(&self, z: &Tensor, class: usize) -> Result<ConditioningVector, GraphError> {
        let cfg = self.config;
        if z.rank() != 1 || z.numel() != cfg.latent_dim {
            return Err(GraphError::LatentLength {
                expected: cfg.latent_dim,
                actual: z.numel(),
            });
        }
        if class >= cfg.num_classes {
            return Err(GraphError::ClassOutOfRange {
                class,
                num_classes: cfg.num_classes,
            });
        }
        let table = self.p("entry.embedding").data();
        let row = &table[class * cfg.embed_dim..(class + 1) * cfg.embed_dim];
        let embedding = Tensor::vector(row.to_vec())?;
        Ok(ConditioningVector::new(z, &embedding)?)
    }

    pub fn forward(&self, z: &Tensor, class: usize) -> Result<Tensor, GraphError> {
        self.forward_traced(z, class).map(|(out, _)| out)
    }

    /// Forward pass that also records the activation shape after every stage.
    pub fn forward_traced(
        &self,
        z: &Tensor,
        class: usize,
    ) -> Result<(Tensor, Vec<StageTrace>), GraphError> {
        let cfg = self.config;
        let cond = self.conditioning(z, class)?;
        let mut trace = Vec::with_capacity(cfg.num_blocks + 3);

        let s = cfg.entry_spatial;
        let (c0, _) = cfg.block_channels(1);
        let mut x = ops::linear(
            cond.as_tensor(),
            self.p("entry.linear.weight"),
            self.p("entry.linear.bias"),
        )?
        .reshape(vec![c0, s, s])?;
        trace.push(StageTrace {
            block: BlockId::Entry,
            shape: x.shape().to_vec(),
        });

        for block in 1..=cfg.num_blocks {
            x = self.residual_block(block, &x, &cond)?;
            trace.push(StageTrace {
                block: BlockId::Block(block as u32),
                shape: x.shape().to_vec(),
            });
            if block == cfg.attention_after_block {
                x = ops::self_attention(
                    &x,
                    &AttentionParams {
                        query: self.p("attention.query.weight"),
                        key: self.p("attention.key.weight"),
                        value: self.p("attention.value.weight"),
                        out: self.p("attention.out.weight"),
                        gamma: self.p("attention.gamma").data()[0],
                    },
                )?;
                trace.push(StageTrace {
                    block: BlockId::Attention,
                    shape: x.shape().to_vec(),
                });
            }
        }

        let h = self.cbn_relu("output.bn", &x, &cond)?;
        let h = ops::conv2d(
            &h,
            self.p("output.conv.weight"),
            self.p("output.conv.bias"),
            1,
        )?;
        let out = ops::tanh(&h);
        trace.push(StageTrace {
            block: BlockId::Output,
            shape: out.shape().to_vec(),
        });
        Ok((out, trace))
    }

    fn cbn_relu(
        &self,
        prefix: &str,
        x: &Tensor,
        cond: &ConditioningVector,
    ) -> Result<Tensor, TensorError> {
        let name = |suffix: &str| format!("{prefix}.{suffix}");
        let (gain, bias) = conditional_gain_bias(
            cond,
            &CbnProjection {
                gain_weight: self.p(&name("gain.weight")),
                gain_bias: self.p(&name("gain.bias")),
                bias_weight: self.p(&name("bias.weight")),
                bias_bias: self.p(&name("bias.bias")),
            },
        )?;
        let y = ops::batch_norm_inference(
            x,
            self.p(&name("running_mean")),
            self.p(&name("running_var")),
            &gain,
            &bias,
            self.config.bn_epsilon,
        )?;
        Ok(ops::relu(&y))
    }

    fn conv(&self, prefix: &str, x: &Tensor, padding: usize) -> Result<Tensor, TensorError> {
        ops::conv2d(
            x,
            self.p(&format!("{prefix}.weight")),
            self.p(&format!("{prefix}.bias")),
            padding,
        )
    }

    fn residual_block(
        &self,
        block: usize,
        x: &Tensor,
        cond: &ConditioningVector,
    ) -> Result<Tensor, TensorError> {
        let pre = format!("blocks.{block}");
        let (_, cout) = self.config.block_channels(block);
        let upsample = self.config.upsample_blocks.contains(&block);

        let h = self.cbn_relu(&format!("{pre}.bn1"), x, cond)?;
        let h = self.conv(&format!("{pre}.conv1"), &h, 0)?;
        let mut h = self.cbn_relu(&format!("{pre}.bn2"), &h, cond)?;

        let mut skip = if x.shape()[0] == cout {
            x.clone()
        } else {
            x.truncate_channels(cout)?
        };
        if upsample {
            h = ops::upsample_nearest_2x(&h)?;
            skip = ops::upsample_nearest_2x(&skip)?;
        }

        let h = self.conv(&format!("{pre}.conv2"), &h, 1)?;
        let h = self.cbn_relu(&format!("{pre}.bn3"), &h, cond)?;
        let h = self.conv(&format!("{pre}.conv3"), &h, 1)?;
        let h = self.cbn_relu(&format!("{pre}.bn4"), &h, cond)?;
        let h = self.conv(&format!("{pre}.conv4"), &h, 0)?;
        h.add(&skip)
    }
}

struct ManifestBuilder<'c> {
    cfg: &'c GraphConfig,
    specs: Vec<ParamSpec>,
}

impl ManifestBuilder<'_> {
    fn push(&mut self, name: String, block: BlockId, kind: ParamKind, shape: Vec<usize>, fan_in: usize) {
        self.specs.push(ParamSpec {
            name,
            block,
            kind,
            shape,
            fan_in,
        });
    }

    fn cbn(&mut self, prefix: &str, block: BlockId, channels: usize) {
        let cond = self.cfg.cond_dim();
        for proj in ["gain", "bias"] {
            self.push(
                format!("{prefix}.{proj}.weight"),
                block,
                ParamKind::LinearWeight,
                vec![channels, cond],
                cond,
            );
            self.push(
                format!("{prefix}.{proj}.bias"),
                block,
                ParamKind::LinearBias,
                vec![channels],
                cond,
            );
        }
        self.push(
            format!("{prefix}.running_mean"),
            block,
            ParamKind::BnRunningMean,
            vec![channels],
            1,
        );
        self.push(
            format!("{prefix}.running_var"),
            block,
            ParamKind::BnRunningVar,
            vec![channels],
            1,
        );
    }

    fn conv(&mut self, prefix: &str, block: BlockId, out: usize, input: usize, k: usize) {
        let fan_in = input * k * k;
        self.push(
            format!("{prefix}.weight"),
            block,
            ParamKind::ConvKernel,
            vec![out, input, k, k],
            fan_in,
        );
        self.push(
            format!("{prefix}.bias"),
            block,
            ParamKind::ConvBias,
            vec![out],
            fan_in,
        );
    }
}

fn build_manifest(cfg: &GraphConfig) -> Vec<ParamSpec> {
    let mut b = ManifestBuilder {
        cfg,
        specs: Vec::new(),
    };
    let cond = cfg.cond_dim();
    let (c0, _) = cfg.block_channels(1);
    let entry_out = c0 * cfg.entry_spatial * cfg.entry_spatial;

    b.push(
        "entry.embedding".into(),
        BlockId::Entry,
        ParamKind::Embedding,
        vec![cfg.num_classes, cfg.embed_dim],
        1,
    );
    b.push(
        "entry.linear.weight".into(),
        BlockId::Entry,
        ParamKind::LinearWeight,
        vec![entry_out, cond],
        cond,
    );
    b.push(
        "entry.linear.bias".into(),
        BlockId::Entry,
        ParamKind::LinearBias,
        vec![entry_out],
        cond,
    );

    for block in 1..=cfg.num_blocks {
        let id = BlockId::Block(block as u32);
        let (cin, cout) = cfg.block_channels(block);
        let hidden = cin / cfg.bottleneck_ratio;
        let pre = format!("blocks.{block}");
        b.cbn(&format!("{pre}.bn1"), id, cin);
        b.conv(&format!("{pre}.conv1"), id, hidden, cin, 1);
        b.cbn(&format!("{pre}.bn2"), id, hidden);
        b.conv(&format!("{pre}.conv2"), id, hidden, hidden, 3);
        b.cbn(&format!("{pre}.bn3"), id, hidden);
        b.conv(&format!("{pre}.conv3"), id, hidden, hidden, 3);
        b.cbn(&format!("{pre}.bn4"), id, hidden);
        b.conv(&format!("{pre}.conv4"), id, cout, hidden, 1);

        if block == cfg.attention_after_block {
            let c = cout;
            let qk = c / cfg.attention_qk_divisor;
            let v = c / cfg.attention_value_divisor;
            for (name, out, input) in [
                ("attention.query.weight", qk, c),
                ("attention.key.weight", qk, c),
                ("attention.value.weight", v, c),
                ("attention.out.weight", c, v),
            ] {
                b.push(
                    name.into(),
                    BlockId::Attention,
                    ParamKind::ConvKernel,
                    vec![out, input, 1, 1],
                    input,
                );
            }
            b.push(
                "attention.gamma".into(),
                BlockId::Attention,
                ParamKind::ScalarGamma,
                vec![1],
                1,
            );
        }
    }

    let (_, c_last) = cfg.block_channels(cfg.num_blocks);
    b.cbn("output.bn", BlockId::Output, c_last);
    b.conv("output.conv", BlockId::Output, 3, c_last, 3);
    b.specs
}
