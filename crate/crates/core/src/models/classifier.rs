//! Bottleneck residual classifier with the stride-swap (B) and
//! average-pool shortcut (D) downsampling tweaks.

use anglekit_tensor::{ConvOpts, Graph, NodeId, ParamStore};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{scaled, Act, BatchNorm2d, Conv2d, ConvBn, Linear};
use super::Network;
use crate::error::{Error, Result};

pub const EXPANSION: usize = 4;
const STAGE_MID: [usize; 4] = [64, 128, 256, 512];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub stage_depths: Vec<usize>,
    pub base_width: usize,
    pub tweak_b: bool,
    pub tweak_d: bool,
    pub in_channels: usize,
    pub input_size: usize,
    /// Multiplies every channel width; depths are set by `stage_depths`.
    pub scale_factor: f64,
    /// Start the last normalization of each residual path at zero scale.
    pub zero_init_residual: bool,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            stage_depths: vec![3, 8, 36, 3],
            base_width: 64,
            tweak_b: true,
            tweak_d: true,
            in_channels: 1,
            input_size: 256,
            scale_factor: 1.0,
            zero_init_residual: true,
            seed: 0,
        }
    }
}

impl ClassifierConfig {
    /// Reduced network for synthetic-scale runs.
    pub fn desk() -> Self {
        Self {
            stage_depths: vec![2, 2, 2, 2],
            scale_factor: 0.25,
            input_size: 64,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stage_depths.len() != 4 || self.stage_depths.contains(&0) {
            return Err(Error::Config(format!(
                "classifier needs 4 positive stage depths, got {:?}",
                self.stage_depths
            )));
        }
        if self.base_width == 0 || self.in_channels == 0 || !(self.scale_factor > 0.0) {
            return Err(Error::Config("classifier widths and scale_factor must be positive".into()));
        }
        if self.input_size == 0 || self.input_size % 32 != 0 {
            return Err(Error::Config(format!(
                "classifier input_size {} must be a positive multiple of 32",
                self.input_size
            )));
        }
        Ok(())
    }

    pub fn stem_width(&self) -> usize {
        scaled(self.base_width, self.scale_factor)
    }

    /// Bottleneck (inner) width of each stage.
    pub fn mid_widths(&self) -> [usize; 4] {
        let f = self.scale_factor * self.base_width as f64 / 64.0;
        STAGE_MID.map(|w| scaled(w, f))
    }
}

pub struct Bottleneck {
    pub conv1: ConvBn,
    pub conv2: ConvBn,
    pub conv3: ConvBn,
    pub shortcut: Option<Shortcut>,
    pub stride: usize,
}

pub struct Shortcut {
    /// 3x3 stride-2 average pool before a stride-1 projection.
    pub avg_pool: bool,
    pub conv: Conv2d,
    pub bn: BatchNorm2d,
}

impl Shortcut {
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: NodeId) -> Result<NodeId> {
        let x = if self.avg_pool { g.avg_pool2d(x, 3, 2, 1)? } else { x };
        let y = self.conv.forward(g, store, x)?;
        self.bn.forward(g, store, y)
    }
}

impl Bottleneck {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_c: usize,
        mid: usize,
        stride: usize,
        tweak_b: bool,
        tweak_d: bool,
        zero_init: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let out = mid * EXPANSION;
        let (s1, s2) = if tweak_b { (1, stride) } else { (stride, 1) };
        let conv1 = ConvBn::new(store, &format!("{name}.conv1"), in_c, mid, 1, ConvOpts::new(s1, 0), Act::Relu, rng)?;
        let conv2 = ConvBn::new(store, &format!("{name}.conv2"), mid, mid, 3, ConvOpts::new(s2, 1), Act::Relu, rng)?;
        let c3 = Conv2d::new(store, &format!("{name}.conv3.conv"), mid, out, 1, ConvOpts::default(), false, rng)?;
        let b3 = BatchNorm2d::new(store, &format!("{name}.conv3.bn"), out, zero_init)?;
        let conv3 = ConvBn {
            conv: c3,
            bn: b3,
            act: Act::None,
        };
        let shortcut = if stride != 1 || in_c != out {
            let avg_pool = tweak_d && stride == 2;
            let conv_stride = if avg_pool { 1 } else { stride };
            Some(Shortcut {
                avg_pool,
                conv: Conv2d::new(
                    store,
                    &format!("{name}.shortcut.conv"),
                    in_c,
                    out,
                    1,
                    ConvOpts::new(conv_stride, 0),
                    false,
                    rng,
                )?,
                bn: BatchNorm2d::new(store, &format!("{name}.shortcut.bn"), out, false)?,
            })
        } else {
            None
        };
        Ok(Self {
            conv1,
            conv2,
            conv3,
            shortcut,
            stride,
        })
    }

    pub fn residual(&self, g: &mut Graph, store: &ParamStore, x: NodeId) -> Result<NodeId> {
        let y = self.conv1.forward(g, store, x)?;
        let y = self.conv2.forward(g, store, y)?;
        self.conv3.forward(g, store, y)
    }

    pub fn identity(&self, g: &mut Graph, store: &ParamStore, x: NodeId) -> Result<NodeId> {
        match &self.shortcut {
            Some(s) => s.forward(g, store, x),
            None => Ok(x),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: NodeId) -> Result<NodeId> {
        let r = self.residual(g, store, x)?;
        let s = self.identity(g, store, x)?;
        let y = g.add(r, s)?;
        Ok(g.relu(y))
    }
}

pub struct Classifier {
    pub cfg: ClassifierConfig,
    pub store: ParamStore,
    pub stem: ConvBn,
    pub stages: Vec<Vec<Bottleneck>>,
    pub head: Linear,
}

impl Classifier {
    pub fn new(cfg: ClassifierConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut store = ParamStore::new();
        let stem_w = cfg.stem_width();
        let stem = ConvBn::new(
            &mut store,
            "stem",
            cfg.in_channels,
            stem_w,
            7,
            ConvOpts::new(2, 3),
            Act::Relu,
            &mut rng,
        )?;
        let mut in_c = stem_w;
        let mut stages = Vec::new();
        for (si, (&depth, mid)) in cfg.stage_depths.iter().zip(cfg.mid_widths()).enumerate() {
            let mut blocks = Vec::new();
            for bi in 0..depth {
                let stride = if si > 0 && bi == 0 { 2 } else { 1 };
                blocks.push(Bottleneck::new(
                    &mut store,
                    &format!("stages.{si}.blocks.{bi}"),
                    in_c,
                    mid,
                    stride,
                    cfg.tweak_b,
                    cfg.tweak_d,
                    cfg.zero_init_residual,
                    &mut rng,
                )?);
                in_c = mid * EXPANSION;
            }
            stages.push(blocks);
        }
        let head = Linear::new(&mut store, "head", in_c, 1, &mut rng)?;
        Ok(Self {
            cfg,
            store,
            stem,
            stages,
            head,
        })
    }

    pub fn num_blocks(&self) -> usize {
        self.stages.iter().map(Vec::len).sum()
    }

    /// Stem output followed by each stage output.
    pub fn features(&self, g: &mut Graph, x: NodeId) -> Result<Vec<NodeId>> {
        let shape = g.shape(x).to_vec();
        let want = [self.cfg.in_channels, self.cfg.input_size, self.cfg.input_size];
        if shape.len() != 4 || shape[1..] != want {
            return Err(Error::Invalid(format!(
                "classifier expects (N, {}, {}, {}) input, got {shape:?}",
                want[0], want[1], want[2]
            )));
        }
        let y = self.stem.forward(g, &self.store, x)?;
        let mut y = g.max_pool2d(y, 3, 2, 1)?;
        let mut out = vec![y];
        for stage in &self.stages {
            for block in stage {
                y = block.forward(g, &self.store, y)?;
            }
            out.push(y);
        }
        Ok(out)
    }

    /// Closure logits, shape `(N, 1)`.
    pub fn logits(&self, g: &mut Graph, x: NodeId) -> Result<NodeId> {
        let feats = self.features(g, x)?;
        let pooled = g.global_avg_pool(*feats.last().expect("stages present"))?;
        self.head.forward(g, &self.store, pooled)
    }
}

impl Network for Classifier {
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
