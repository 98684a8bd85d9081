use anglekit_tensor::{ParamId, ParamKind, ParamStore, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub lr0: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    /// Rescale gradients whose global L2 norm exceeds this value.
    pub grad_clip: Option<f64>,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr0: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 0.0,
            grad_clip: None,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        let in_unit = |b: f64| (0.0..1.0).contains(&b);
        if !(self.lr0 > 0.0) || !in_unit(self.adam_beta1) || !in_unit(self.adam_beta2) || !(self.adam_eps > 0.0) {
            return Err(Error::Config(format!("invalid optimizer settings {self:?}")));
        }
        if self.weight_decay < 0.0 || self.grad_clip.is_some_and(|c| !(c > 0.0)) {
            return Err(Error::Config("weight_decay must be >= 0 and grad_clip > 0".into()));
        }
        Ok(())
    }
}

/// `0.5·lr0·(1 + cos(π·t/T))`.
pub fn cosine_lr(t: u64, total: u64, lr0: f64) -> Result<f64> {
    if total == 0 || t > total {
        return Err(Error::Invalid(format!("schedule step {t} outside 0..={total}")));
    }
    Ok(0.5 * lr0 * (1.0 + (std::f64::consts::PI * t as f64 / total as f64).cos()))
}

/// Adam with first/second moment buffers indexed like the parameter store.
#[derive(Clone, Debug)]
pub struct Adam {
    pub cfg: OptimConfig,
    /// Number of updates applied so far.
    pub t: u64,
    pub m: Vec<Option<Tensor>>,
    pub v: Vec<Option<Tensor>>,
}

impl Adam {
    pub fn new(cfg: OptimConfig, store: &ParamStore) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            t: 0,
            m: vec![None; store.len()],
            v: vec![None; store.len()],
        })
    }

    /// Apply one update with learning rate `lr`. Parameters without a
    /// gradient are left untouched.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[(ParamId, &Tensor)], lr: f64) -> Result<()> {
        self.t += 1;
        let scale = match self.cfg.grad_clip {
            Some(clip) => {
                let norm = grads.iter().map(|(_, g)| g.sq_norm()).sum::<f64>().sqrt();
                if norm > clip {
                    clip / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        let (b1, b2) = (self.cfg.adam_beta1, self.cfg.adam_beta2);
        let bc1 = 1.0 - b1.powi(self.t as i32);
        let bc2 = 1.0 - b2.powi(self.t as i32);
        for &(id, g) in grads {
            if store.entry(id).kind != ParamKind::Weight {
                continue;
            }
            let i = id.index();
            let w = store.get_mut(id);
            if w.shape() != g.shape() {
                return Err(Error::Invalid(format!("gradient shape {:?} != weight {:?}", g.shape(), w.shape())));
            }
            let m = self.m[i].get_or_insert_with(|| Tensor::zeros_like(g));
            let v = self.v[i].get_or_insert_with(|| Tensor::zeros_like(g));
            for (((wv, &gv), mv), vv) in w
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                let grad = f64::from(gv) * scale + self.cfg.weight_decay * f64::from(*wv);
                let mn = b1 * f64::from(*mv) + (1.0 - b1) * grad;
                let vn = b2 * f64::from(*vv) + (1.0 - b2) * grad * grad;
                *mv = mn as f32;
                *vv = vn as f32;
                let update = lr * (mn / bc1) / ((vn / bc2).sqrt() + self.cfg.adam_eps);
                *wv = (f64::from(*wv) - update) as f32;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_lr(0, 100, 0.001).unwrap(), 0.001);
        assert!(cosine_lr(100, 100, 0.001).unwrap().abs() < 1e-18);
        assert!((cosine_lr(50, 100, 0.001).unwrap() - 0.0005).abs() < 1e-18);
        assert!(cosine_lr(101, 100, 0.001).is_err());
    }

    fn store_with(values: Vec<f32>) -> (ParamStore, ParamId) {
        let mut s = ParamStore::new();
        let n = values.len();
        let id = s.add("w", ParamKind::Weight, Tensor::new([n], values).unwrap()).unwrap();
        (s, id)
    }

    #[test]
    fn zero_gradient_leaves_weights() {
        let (mut store, id) = store_with(vec![0.5, -1.0]);
        let mut adam = Adam::new(OptimConfig::default(), &store).unwrap();
        let g = Tensor::zeros([2]);
        for _ in 0..5 {
            adam.step(&mut store, &[(id, &g)], 1e-3).unwrap();
        }
        assert_eq!(store.get(id).data(), &[0.5, -1.0]);
    }

    #[test]
    fn constant_gradient_moves_against_sign() {
        let (mut store, id) = store_with(vec![0.0, 0.0, 0.0]);
        let mut adam = Adam::new(OptimConfig::default(), &store).unwrap();
        let g = Tensor::new([3], vec![2.0, -0.5, 1e-3]).unwrap();
        adam.step(&mut store, &[(id, &g)], 1e-3).unwrap();
        // First bias-corrected step is lr·sign(g).
        for (w, s) in store.get(id).data().iter().zip([-1.0f32, 1.0, -1.0]) {
            assert!((w - s * 1e-3).abs() < 1e-6, "{w}");
        }
        for _ in 0..99 {
            adam.step(&mut store, &[(id, &g)], 1e-3).unwrap();
        }
        let w = store.get(id).data();
        assert!(w[0] < 0.0 && w[1] > 0.0 && w[2] < 0.0);
    }

    #[test]
    fn clipping_bounds_the_gradient() {
        let (mut store, id) = store_with(vec![0.0]);
        let cfg = OptimConfig {
            grad_clip: Some(1.0),
            ..OptimConfig::default()
        };
        let mut adam = Adam::new(cfg, &store).unwrap();
        let g = Tensor::new([1], vec![100.0]).unwrap();
        adam.step(&mut store, &[(id, &g)], 1e-3).unwrap();
        let m = adam.m[0].as_ref().unwrap().data()[0];
        assert!((m - 0.1).abs() < 1e-6);
    }
}
