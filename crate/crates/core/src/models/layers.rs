//! Parameterized layers that register their tensors in a [`ParamStore`] and
//! replay themselves onto a [`Graph`].

use anglekit_tensor::{BatchNormCfg, ConvOpts, Graph, NodeId, ParamId, ParamKind, ParamStore, RunningStats, Tensor};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Fan-in normal init, `std = gain / sqrt(fan_in)`.
fn normal_init(shape: &[usize], fan_in: usize, gain: f64, rng: &mut impl Rng) -> Tensor {
    let std = gain / (fan_in.max(1) as f64).sqrt();
    let dist = Normal::new(0.0, std).expect("finite std");
    let n = shape.iter().product();
    let data = (0..n).map(|_| dist.sample(rng) as f32).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}

const RELU_GAIN: f64 = std::f64::consts::SQRT_2;

pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub opts: ConvOpts,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        opts: ConvOpts,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if in_channels == 0 || out_channels == 0 || kernel == 0 {
            return Err(Error::Config(format!("{name}: channels and kernel must be positive")));
        }
        if in_channels % opts.groups != 0 || out_channels % opts.groups != 0 {
            return Err(Error::Config(format!("{name}: channels not divisible by {} groups", opts.groups)));
        }
        let per_group = in_channels / opts.groups;
        let shape = [out_channels, per_group, kernel, kernel];
        let w = normal_init(&shape, per_group * kernel * kernel, RELU_GAIN, rng);
        let weight = store.add(format!("{name}.weight"), ParamKind::Weight, w)?;
        let bias = if bias {
            Some(store.add(format!("{name}.bias"), ParamKind::Weight, Tensor::zeros([out_channels]))?)
        } else {
            None
        };
        Ok(Self {
            weight,
            bias,
            opts,
            in_channels,
            out_channels,
            kernel,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: NodeId) -> Result<NodeId> {
        let w = g.param(store, self.weight);
        let b = self.bias.map(|b| g.param(store, b));
        Ok(g.conv2d(x, w, b, self.opts)?)
    }
}

pub struct BatchNorm2d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub cfg: BatchNormCfg,
}

impl BatchNorm2d {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, zero_gamma: bool) -> Result<Self> {
        let gamma_init = if zero_gamma { 0.0 } else { 1.0 };
        Ok(Self {
            gamma: store.add(format!("{name}.gamma"), ParamKind::Weight, Tensor::full([channels], gamma_init))?,
            beta: store.add(format!("{name}.beta"), ParamKind::Weight, Tensor::zeros([channels]))?,
            running_mean: store.add(format!("{name}.running_mean"), ParamKind::Buffer, Tensor::zeros([channels]))?,
            running_var: store.add(format!("{name}.running_var"), ParamKind::Buffer, Tensor::full([channels], 1.0))?,
            cfg: BatchNormCfg::default(),
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: NodeId) -> Result<NodeId> {
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        let stats = RunningStats {
            mean: store.get(self.running_mean),
            var: store.get(self.running_var),
            mean_id: self.running_mean,
            var_id: self.running_var,
        };
        Ok(g.batch_norm(x, gamma, beta, stats, self.cfg)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Act {
    None,
    Relu,
    Silu,
}

impl Act {
    pub fn apply(self, g: &mut Graph, x: NodeId) -> NodeId {
        match self {
            Act::None => x,
            Act::Relu => g.relu(x),
            Act::Silu => g.silu(x),
        }
    }
}

/// Convolution without bias, batch norm, then an activation.
pub struct ConvBn {
    pub conv: Conv2d,
    pub bn: BatchNorm2d,
    pub act: Act,
}

impl ConvBn {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        opts: ConvOpts,
        act: Act,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let conv = Conv2d::new(store, &format!("{name}.conv"), in_channels, out_channels, kernel, opts, false, rng)?;
        let bn = BatchNorm2d::new(store, &format!("{name}.bn"), out_channels, false)?;
        Ok(Self { conv, bn, act })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: NodeId) -> Result<NodeId> {
        let y = self.conv.forward(g, store, x)?;
        let y = self.bn.forward(g, store, y)?;
        Ok(self.act.apply(g, y))
    }
}

pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_features: usize,
        out_features: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let w = normal_init(&[out_features, in_features], in_features, 1.0, rng);
        Ok(Self {
            weight: store.add(format!("{name}.weight"), ParamKind::Weight, w)?,
            bias: store.add(format!("{name}.bias"), ParamKind::Weight, Tensor::zeros([out_features]))?,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: NodeId) -> Result<NodeId> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        Ok(g.linear(x, w, Some(b))?)
    }
}

/// Kernel-2 stride-2 transposed convolution with bias.
pub struct Upsample2x {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Upsample2x {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let w = normal_init(&[in_channels, out_channels, 2, 2], in_channels, RELU_GAIN, rng);
        Ok(Self {
            weight: store.add(format!("{name}.weight"), ParamKind::Weight, w)?,
            bias: store.add(format!("{name}.bias"), ParamKind::Weight, Tensor::zeros([out_channels]))?,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: NodeId) -> Result<NodeId> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        Ok(g.conv_transpose2d(x, w, Some(b), 2, 0)?)
    }
}

/// Scale a width, keeping at least one channel.
pub fn scaled(width: usize, factor: f64) -> usize {
    ((width as f64 * factor).round() as usize).max(1)
}
