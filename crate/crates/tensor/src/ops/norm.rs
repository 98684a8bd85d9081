//! Batch normalization over `(N, H, W)` per channel.

use crate::graph::{BackwardCtx, Graph, NodeId};
use crate::{ParamId, Result, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BatchNormCfg {
    pub eps: f32,
    pub momentum: f32,
}

impl Default for BatchNormCfg {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            momentum: 0.1,
        }
    }
}

/// Running statistics read from (and, in training mode, scheduled for
/// update in) a [`crate::ParamStore`].
pub struct RunningStats<'a> {
    pub mean: &'a Tensor,
    pub var: &'a Tensor,
    pub mean_id: ParamId,
    pub var_id: ParamId,
}

impl Graph {
    pub fn batch_norm(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        stats: RunningStats<'_>,
        cfg: BatchNormCfg,
    ) -> Result<NodeId> {
        let (n, c, h, w) = self.value(x).dims4()?;
        for t in [self.value(gamma), self.value(beta), stats.mean, stats.var] {
            t.expect_shape("batch_norm", &[c])?;
        }
        let hw = h * w;
        let m = n * hw;
        let xv = self.value(x).data();
        let mut pending = None;
        let (mean, var): (Vec<f32>, Vec<f32>) = if self.is_training() {
            let mut mean = vec![0.0f64; c];
            let mut sq = vec![0.0f64; c];
            for ni in 0..n {
                for ci in 0..c {
                    let plane = &xv[(ni * c + ci) * hw..(ni * c + ci + 1) * hw];
                    mean[ci] += plane.iter().map(|&v| f64::from(v)).sum::<f64>();
                }
            }
            mean.iter_mut().for_each(|v| *v /= m as f64);
            for ni in 0..n {
                for ci in 0..c {
                    let plane = &xv[(ni * c + ci) * hw..(ni * c + ci + 1) * hw];
                    sq[ci] += plane.iter().map(|&v| (f64::from(v) - mean[ci]).powi(2)).sum::<f64>();
                }
            }
            let var: Vec<f64> = sq.iter().map(|s| s / m as f64).collect();
            let unbiased = if m > 1 { m as f64 / (m - 1) as f64 } else { 1.0 };
            let mom = f64::from(cfg.momentum);
            let new_mean: Vec<f32> = stats
                .mean
                .data()
                .iter()
                .zip(&mean)
                .map(|(&r, &b)| ((1.0 - mom) * f64::from(r) + mom * b) as f32)
                .collect();
            let new_var: Vec<f32> = stats
                .var
                .data()
                .iter()
                .zip(&var)
                .map(|(&r, &b)| ((1.0 - mom) * f64::from(r) + mom * b * unbiased) as f32)
                .collect();
            pending = Some((Tensor::new([c], new_mean)?, Tensor::new([c], new_var)?));
            (
                mean.into_iter().map(|v| v as f32).collect(),
                var.into_iter().map(|v| v as f32).collect(),
            )
        } else {
            (stats.mean.data().to_vec(), stats.var.data().to_vec())
        };
        let inv_std: Vec<f32> = var.iter().map(|v| 1.0 / (v + cfg.eps).sqrt()).collect();
        let gv = self.value(gamma).data();
        let bv = self.value(beta).data();
        let mut xhat = vec![0.0f32; xv.len()];
        let mut out = vec![0.0f32; xv.len()];
        for ni in 0..n {
            for ci in 0..c {
                let base = (ni * c + ci) * hw;
                for i in base..base + hw {
                    xhat[i] = (xv[i] - mean[ci]) * inv_std[ci];
                    out[i] = gv[ci] * xhat[i] + bv[ci];
                }
            }
        }
        let training = self.is_training();
        if let Some((new_mean, new_var)) = pending {
            self.record_buffer_update(stats.mean_id, new_mean);
            self.record_buffer_update(stats.var_id, new_var);
        }
        let value = Tensor::new([n, c, h, w], out)?;
        self.push(
            value,
            vec![x, gamma, beta],
            Box::new(move |ctx: &BackwardCtx<'_>| {
                let g = ctx.grad.data();
                let gamma = ctx.inputs[1].data();
                let mut dgamma = vec![0.0f64; c];
                let mut dbeta = vec![0.0f64; c];
                for ni in 0..n {
                    for ci in 0..c {
                        let base = (ni * c + ci) * hw;
                        for i in base..base + hw {
                            dgamma[ci] += f64::from(g[i] * xhat[i]);
                            dbeta[ci] += f64::from(g[i]);
                        }
                    }
                }
                let dx = if ctx.needs[0] {
                    let mut dx = vec![0.0f32; g.len()];
                    for ni in 0..n {
                        for ci in 0..c {
                            let base = (ni * c + ci) * hw;
                            let scale = gamma[ci] * inv_std[ci];
                            if training {
                                let mean_g = (dbeta[ci] / m as f64) as f32;
                                let mean_gx = (dgamma[ci] / m as f64) as f32;
                                for i in base..base + hw {
                                    dx[i] = scale * (g[i] - mean_g - xhat[i] * mean_gx);
                                }
                            } else {
                                for i in base..base + hw {
                                    dx[i] = scale * g[i];
                                }
                            }
                        }
                    }
                    Some(Tensor::new(ctx.inputs[0].shape(), dx)?)
                } else {
                    None
                };
                let to_t = |v: Vec<f64>| Tensor::new([c], v.into_iter().map(|x| x as f32).collect());
                Ok(vec![
                    dx,
                    ctx.needs[1].then(|| to_t(dgamma)).transpose()?,
                    ctx.needs[2].then(|| to_t(dbeta)).transpose()?,
                ])
            }),
        );
        Ok(self.last())
    }
}
