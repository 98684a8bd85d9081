//! Heatmap localization network: a five-level encoder, an optional pyramid
//! pooling module on the deepest level, and a transposed-convolution decoder
//! with projected skip connections back to stride 2.

use anglekit_tensor::{ConvOpts, Graph, NodeId, ParamStore, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{scaled, Act, Conv2d, ConvBn, Linear, Upsample2x};
use super::Network;
use crate::error::{Error, Result};

pub const LEVEL_STRIDES: [usize; 5] = [2, 4, 8, 16, 32];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EncoderVariant {
    /// Stride-2 stem then four conv/norm/rectifier/max-pool stages.
    Default4,
    /// Stride-2 stem then four stages of inverted-bottleneck blocks.
    ScaledMbconv,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub variant: EncoderVariant,
    /// Channels of f1..f5.
    pub stage_widths: [usize; 5],
    pub depth_mult: f64,
    pub width_mult: f64,
    /// Blocks per stage before depth scaling (scaled_mbconv).
    pub base_blocks: [usize; 4],
    pub expand_ratio: usize,
    pub se_ratio: f64,
    pub in_channels: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            variant: EncoderVariant::Default4,
            stage_widths: [32, 64, 128, 256, 512],
            depth_mult: 1.0,
            width_mult: 1.0,
            base_blocks: [2, 2, 3, 4],
            expand_ratio: 6,
            se_ratio: 0.25,
            in_channels: 1,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stage_widths.contains(&0) || self.in_channels == 0 {
            return Err(Error::Config("encoder widths must be positive".into()));
        }
        if !(self.depth_mult > 0.0 && self.width_mult > 0.0) {
            return Err(Error::Config(format!(
                "encoder multipliers must be positive, got depth {} width {}",
                self.depth_mult, self.width_mult
            )));
        }
        if self.variant == EncoderVariant::ScaledMbconv
            && (self.base_blocks.contains(&0) || self.expand_ratio == 0 || !(self.se_ratio > 0.0))
        {
            return Err(Error::Config("mbconv block counts, expansion and SE ratio must be positive".into()));
        }
        Ok(())
    }

    /// Channel counts of the five emitted levels.
    pub fn level_widths(&self) -> [usize; 5] {
        match self.variant {
            EncoderVariant::Default4 => self.stage_widths,
            EncoderVariant::ScaledMbconv => self.stage_widths.map(|w| scaled(w, self.width_mult)),
        }
    }

    pub fn blocks_per_stage(&self) -> [usize; 4] {
        self.base_blocks.map(|b| (self.depth_mult * b as f64 - 1e-9).ceil().max(1.0) as usize)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SkipMode {
    /// Add the 1x1-projected encoder level.
    Add,
    /// Concatenate the projected level before the refine conv.
    Concat,
    /// Drop skip connections entirely.
    Off,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalizerConfig {
    pub encoder: EncoderConfig,
    pub ppm_enabled: bool,
    pub ppm_bins: Vec<usize>,
    pub decoder_width: usize,
    pub input_size: usize,
    pub heatmap_stride: usize,
    pub skip_mode: SkipMode,
    /// Initial bias of the output logit, so untrained heatmaps start dim.
    pub head_bias: f32,
    pub seed: u64,
}

impl Default for LocalizerConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            ppm_enabled: true,
            ppm_bins: vec![1, 2, 3, 6],
            decoder_width: 64,
            input_size: 512,
            heatmap_stride: 2,
            skip_mode: SkipMode::Add,
            head_bias: -2.19,
            seed: 0,
        }
    }
}

impl LocalizerConfig {
    /// Narrow default4 network for synthetic-scale runs.
    pub fn desk() -> Self {
        Self {
            encoder: EncoderConfig {
                stage_widths: [8, 16, 32, 48, 64],
                ..EncoderConfig::default()
            },
            decoder_width: 16,
            input_size: 192,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.input_size == 0 || self.input_size % 32 != 0 {
            return Err(Error::Config(format!(
                "localizer input_size {} must be a positive multiple of 32",
                self.input_size
            )));
        }
        if self.ppm_bins.is_empty() || self.ppm_bins.contains(&0) || !self.ppm_bins.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Config(format!(
                "ppm_bins must be positive and strictly increasing, got {:?}",
                self.ppm_bins
            )));
        }
        if self.decoder_width == 0 {
            return Err(Error::Config("decoder_width must be positive".into()));
        }
        if self.heatmap_stride != 2 {
            return Err(Error::Config(format!(
                "four 2x decoder steps from stride 32 give heatmap stride 2, got {}",
                self.heatmap_stride
            )));
        }
        Ok(())
    }
}

struct SqueezeExcite {
    reduce: Linear,
    expand: Linear,
}

struct MbConv {
    expand: Option<ConvBn>,
    depthwise: ConvBn,
    se: SqueezeExcite,
    project: ConvBn,
    residual: bool,
}

impl MbConv {
    #[allow(clippy::too_many_arguments)]
    fn new(
        store: &mut ParamStore,
        name: &str,
        in_c: usize,
        out_c: usize,
        stride: usize,
        expand_ratio: usize,
        se_ratio: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let hidden = in_c * expand_ratio;
        let expand = if expand_ratio != 1 {
            Some(ConvBn::new(
                store,
                &format!("{name}.expand"),
                in_c,
                hidden,
                1,
                ConvOpts::default(),
                Act::Silu,
                rng,
            )?)
        } else {
            None
        };
        let depthwise = ConvBn::new(
            store,
            &format!("{name}.depthwise"),
            hidden,
            hidden,
            3,
            ConvOpts::new(stride, 1).with_groups(hidden),
            Act::Silu,
            rng,
        )?;
        let squeezed = scaled(in_c, se_ratio);
        let se = SqueezeExcite {
            reduce: Linear::new(store, &format!("{name}.se.reduce"), hidden, squeezed, rng)?,
            expand: Linear::new(store, &format!("{name}.se.expand"), squeezed, hidden, rng)?,
        };
        let project = ConvBn::new(
            store,
            &format!("{name}.project"),
            hidden,
            out_c,
            1,
            ConvOpts::default(),
            Act::None,
            rng,
        )?;
        Ok(Self {
            expand,
            depthwise,
            se,
            project,
            residual: stride == 1 && in_c == out_c,
        })
    }

    fn forward(&self, g: &mut Graph, store: &ParamStore, x: NodeId) -> Result<NodeId> {
        let mut y = match &self.expand {
            Some(e) => e.forward(g, store, x)?,
            None => x,
        };
        y = self.depthwise.forward(g, store, y)?;
        let s = g.global_avg_pool(y)?;
        let s = self.se.reduce.forward(g, store, s)?;
        let s = g.silu(s);
        let s = self.se.expand.forward(g, store, s)?;
        let s = g.sigmoid(s);
        y = g.mul_channels(y, s)?;
        y = self.project.forward(g, store, y)?;
        if self.residual {
            y = g.add(y, x)?;
        }
        Ok(y)
    }
}

enum EncoderStage {
    Plain(ConvBn),
    Mbconv(Vec<MbConv>),
}

pub struct Encoder {
    stem: ConvBn,
    stages: Vec<EncoderStage>,
    widths: [usize; 5],
}

impl Encoder {
    fn new(cfg: &EncoderConfig, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Result<Self> {
        cfg.validate()?;
        let widths = cfg.level_widths();
        let act = match cfg.variant {
            EncoderVariant::Default4 => Act::Relu,
            EncoderVariant::ScaledMbconv => Act::Silu,
        };
        let stem = ConvBn::new(
            store,
            "encoder.stem",
            cfg.in_channels,
            widths[0],
            3,
            ConvOpts::new(2, 1),
            act,
            rng,
        )?;
        let mut stages = Vec::new();
        for i in 0..4 {
            let name = format!("encoder.stages.{i}");
            let (cin, cout) = (widths[i], widths[i + 1]);
            stages.push(match cfg.variant {
                EncoderVariant::Default4 => {
                    EncoderStage::Plain(ConvBn::new(store, &name, cin, cout, 3, ConvOpts::new(1, 1), Act::Relu, rng)?)
                }
                EncoderVariant::ScaledMbconv => {
                    let n = cfg.blocks_per_stage()[i];
                    let blocks = (0..n)
                        .map(|b| {
                            let (bin, stride) = if b == 0 { (cin, 2) } else { (cout, 1) };
                            MbConv::new(
                                store,
                                &format!("{name}.blocks.{b}"),
                                bin,
                                cout,
                                stride,
                                cfg.expand_ratio,
                                cfg.se_ratio,
                                rng,
                            )
                        })
                        .collect::<Result<Vec<_>>>()?;
                    EncoderStage::Mbconv(blocks)
                }
            });
        }
        Ok(Self { stem, stages, widths })
    }

    pub fn num_blocks(&self) -> Vec<usize> {
        self.stages
            .iter()
            .map(|s| match s {
                EncoderStage::Plain(_) => 1,
                EncoderStage::Mbconv(b) => b.len(),
            })
            .collect()
    }

    pub fn widths(&self) -> [usize; 5] {
        self.widths
    }

    /// Feature levels f1..f5 at strides 2..32.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: NodeId) -> Result<[NodeId; 5]> {
        let mut levels = [x; 5];
        let mut y = self.stem.forward(g, store, x)?;
        levels[0] = y;
        for (i, stage) in self.stages.iter().enumerate() {
            y = match stage {
                EncoderStage::Plain(c) => {
                    let z = c.forward(g, store, y)?;
                    g.max_pool2d(z, 2, 2, 0)?
                }
                EncoderStage::Mbconv(blocks) => {
                    let mut z = y;
                    for b in blocks {
                        z = b.forward(g, store, z)?;
                    }
                    z
                }
            };
            levels[i + 1] = y;
        }
        Ok(levels)
    }
}

pub struct Ppm {
    pub bins: Vec<usize>,
    branches: Vec<Conv2d>,
    fuse: ConvBn,
}

impl Ppm {
    fn new(store: &mut ParamStore, channels: usize, bins: &[usize], rng: &mut ChaCha8Rng) -> Result<Self> {
        let branch_c = (channels / bins.len()).max(1);
        let branches = bins
            .iter()
            .map(|b| {
                Conv2d::new(
                    store,
                    &format!("ppm.branch{b}"),
                    channels,
                    branch_c,
                    1,
                    ConvOpts::default(),
                    true,
                    rng,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let fuse = ConvBn::new(
            store,
            "ppm.fuse",
            channels + branch_c * bins.len(),
            channels,
            3,
            ConvOpts::new(1, 1),
            Act::Relu,
            rng,
        )?;
        Ok(Self {
            bins: bins.to_vec(),
            branches,
            fuse,
        })
    }

    /// Fused map plus the pooled (pre-upsampling) node of every branch.
    pub fn forward_with_branches(&self, g: &mut Graph, store: &ParamStore, f5: NodeId) -> Result<(NodeId, Vec<NodeId>)> {
        let (h, w) = (g.shape(f5)[2], g.shape(f5)[3]);
        let mut parts = vec![f5];
        let mut pooled = Vec::new();
        for (&bin, conv) in self.bins.iter().zip(&self.branches) {
            if bin > h || bin > w {
                return Err(Error::Invalid(format!("pooling bin {bin} exceeds the {h}x{w} deepest feature map")));
            }
            let p = g.adaptive_avg_pool2d(f5, bin)?;
            pooled.push(p);
            let y = conv.forward(g, store, p)?;
            let y = g.relu(y);
            parts.push(g.upsample_bilinear(y, h, w)?);
        }
        let cat = g.concat_channels(&parts)?;
        Ok((self.fuse.forward(g, store, cat)?, pooled))
    }
}

struct DecoderStep {
    up: Upsample2x,
    project: Option<Conv2d>,
    refine: ConvBn,
}

pub struct Localizer {
    pub cfg: LocalizerConfig,
    pub store: ParamStore,
    pub encoder: Encoder,
    pub ppm: Option<Ppm>,
    steps: Vec<DecoderStep>,
    head: Conv2d,
}

impl Localizer {
    pub fn new(cfg: LocalizerConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut store = ParamStore::new();
        let encoder = Encoder::new(&cfg.encoder, &mut store, &mut rng)?;
        let widths = encoder.widths();
        let ppm = if cfg.ppm_enabled {
            Some(Ppm::new(&mut store, widths[4], &cfg.ppm_bins, &mut rng)?)
        } else {
            None
        };
        let dw = cfg.decoder_width;
        let mut steps = Vec::new();
        let mut prev = widths[4];
        for (k, level) in [3usize, 2, 1, 0].into_iter().enumerate() {
            let name = format!("decoder.{k}");
            let up = Upsample2x::new(&mut store, &format!("{name}.up"), prev, dw, &mut rng)?;
            let project = match cfg.skip_mode {
                SkipMode::Off => None,
                _ => Some(Conv2d::new(
                    &mut store,
                    &format!("{name}.skip"),
                    widths[level],
                    dw,
                    1,
                    ConvOpts::default(),
                    true,
                    &mut rng,
                )?),
            };
            let refine_in = if cfg.skip_mode == SkipMode::Concat { 2 * dw } else { dw };
            let refine = ConvBn::new(
                &mut store,
                &format!("{name}.refine"),
                refine_in,
                dw,
                3,
                ConvOpts::new(1, 1),
                Act::Relu,
                &mut rng,
            )?;
            steps.push(DecoderStep { up, project, refine });
            prev = dw;
        }
        let head = Conv2d::new(&mut store, "head", dw, 1, 1, ConvOpts::default(), true, &mut rng)?;
        store.set("head.bias", Tensor::full([1], cfg.head_bias))?;
        Ok(Self {
            cfg,
            store,
            encoder,
            ppm,
            steps,
            head,
        })
    }

    pub fn pyramid(&self, g: &mut Graph, x: NodeId) -> Result<[NodeId; 5]> {
        let shape = g.shape(x);
        if shape.len() != 4 || shape[1] != self.cfg.encoder.in_channels || shape[2] % 32 != 0 || shape[3] % 32 != 0 {
            return Err(Error::Invalid(format!(
                "localizer expects (N, {}, H, W) input with H and W divisible by 32, got {shape:?}",
                self.cfg.encoder.in_channels
            )));
        }
        self.encoder.forward(g, &self.store, x)
    }

    /// Decode a pyramid (f5 optionally replaced by the fused map) to logits at stride 2.
    pub fn decode(&self, g: &mut Graph, levels: &[NodeId; 5], fused: NodeId) -> Result<NodeId> {
        let mut y = fused;
        for (step, level) in self.steps.iter().zip([3usize, 2, 1, 0]) {
            let up = step.up.forward(g, &self.store, y)?;
            y = match &step.project {
                None => up,
                Some(p) => {
                    let skip = p.forward(g, &self.store, levels[level])?;
                    if g.shape(skip) != g.shape(up) {
                        return Err(Error::Invalid(format!(
                            "decoder step {} upsampled to {:?} but skip level is {:?}",
                            4 - level,
                            g.shape(up),
                            g.shape(skip)
                        )));
                    }
                    match self.cfg.skip_mode {
                        SkipMode::Concat => g.concat_channels(&[up, skip])?,
                        _ => g.add(up, skip)?,
                    }
                }
            };
            y = step.refine.forward(g, &self.store, y)?;
        }
        self.head.forward(g, &self.store, y)
    }

    /// Heatmap logits `(N, 1, H/2, W/2)`.
    pub fn logits(&self, g: &mut Graph, x: NodeId) -> Result<NodeId> {
        let levels = self.pyramid(g, x)?;
        let fused = match &self.ppm {
            Some(ppm) => ppm.forward_with_branches(g, &self.store, levels[4])?.0,
            None => levels[4],
        };
        self.decode(g, &levels, fused)
    }
}

impl Network for Localizer {
    fn store(&self) -> &ParamStore {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn forward(&self, g: &mut Graph, x: NodeId) -> Result<NodeId> {
        let logits = self.logits(g, x)?;
        Ok(g.sigmoid(logits))
    }
}
