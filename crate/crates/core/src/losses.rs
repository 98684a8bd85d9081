//! Scalar training objectives with analytic gradients, evaluated in `f64`.
//!
//! Every loss returns its value together with the gradient with respect to
//! the prediction, so the caller can seed backpropagation through the network.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Clamp applied to probabilities before any logarithm.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Clone, Debug, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub grad: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FocalParams {
    pub alpha: f64,
    pub gamma: f64,
    /// Weight positives by `alpha` and negatives by `1 - alpha`.
    pub class_balanced_alpha: bool,
}

impl Default for FocalParams {
    fn default() -> Self {
        Self {
            alpha: 2.0,
            gamma: 2.0,
            class_balanced_alpha: false,
        }
    }
}

impl FocalParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0 && self.alpha > 0.0) {
            return Err(Error::Config(format!(
                "focal loss needs alpha > 0 and gamma >= 0, got alpha={} gamma={}",
                self.alpha, self.gamma
            )));
        }
        if self.class_balanced_alpha && self.alpha >= 1.0 {
            return Err(Error::Config(format!(
                "class-balanced focal alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FBetaParams {
    pub beta: f64,
    pub eps: f64,
    /// Use `1 + beta^2` in the numerator instead of `1 + beta`.
    pub conventional: bool,
}

impl Default for FBetaParams {
    fn default() -> Self {
        Self {
            beta: 2.0,
            eps: 1e-6,
            conventional: false,
        }
    }
}

impl FBetaParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.eps > 0.0) {
            return Err(Error::Config(format!(
                "f-beta loss needs beta > 0 and eps > 0, got beta={} eps={}",
                self.beta, self.eps
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HybridParams {
    pub rho1: f64,
    pub rho2: f64,
}

impl Default for HybridParams {
    fn default() -> Self {
        Self { rho1: 0.5, rho2: 0.5 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KRParams {
    pub rho3: f64,
    pub rho4: f64,
    pub eps: f64,
}

impl Default for KRParams {
    fn default() -> Self {
        Self {
            rho3: 100.0,
            rho4: 0.2,
            eps: 1e-6,
        }
    }
}

/// Heatmap objective: the full keypoint-registration loss or its MSE term alone.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum HeatmapLoss {
    Kr(KRParams),
    /// `rho3 * MSE`.
    Mse { rho3: f64 },
}

impl HeatmapLoss {
    pub fn eval(&self, pred: &[f64], target: &[f64]) -> Result<LossValue> {
        match self {
            HeatmapLoss::Kr(p) => kr_loss(pred, target, p),
            HeatmapLoss::Mse { rho3 } => {
                let kp = KRParams {
                    rho3: *rho3,
                    rho4: 0.0,
                    eps: 1.0,
                };
                kr_loss(pred, target, &kp)
            }
        }
    }

    /// Per-sample loss averaged over a batch of `batch` equal-sized heatmaps.
    pub fn eval_batch(&self, pred: &[f64], target: &[f64], batch: usize) -> Result<LossValue> {
        check_shapes("heatmap loss", pred, target)?;
        if batch == 0 || pred.len() % batch != 0 || pred.is_empty() {
            return Err(Error::Invalid(format!(
                "cannot split {} heatmap values into {batch} samples",
                pred.len()
            )));
        }
        let per = pred.len() / batch;
        let mut value = 0.0;
        let mut grad = Vec::with_capacity(pred.len());
        for (p, t) in pred.chunks(per).zip(target.chunks(per)) {
            let lv = self.eval(p, t)?;
            value += lv.value / batch as f64;
            grad.extend(lv.grad.into_iter().map(|g| g / batch as f64));
        }
        Ok(LossValue { value, grad })
    }
}

fn check_shapes(op: &str, pred: &[f64], target: &[f64]) -> Result<()> {
    if pred.len() != target.len() {
        return Err(Error::Invalid(format!(
            "{op}: prediction has {} elements, target has {}",
            pred.len(),
            target.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Invalid(format!("{op}: empty input")));
    }
    Ok(())
}

/// Mean of `-a_t (1 - p_t)^gamma log p_t`.
pub fn focal_loss(pred: &[f64], target: &[f64], p: &FocalParams) -> Result<LossValue> {
    check_shapes("focal loss", pred, target)?;
    p.validate()?;
    let n = pred.len() as f64;
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(pred.len());
    for (&yp, &y) in pred.iter().zip(target) {
        let clamped = yp.clamp(PROB_EPS, 1.0 - PROB_EPS);
        let pt = y * clamped + (1.0 - y) * (1.0 - clamped);
        let a = if p.class_balanced_alpha {
            p.alpha * y + (1.0 - p.alpha) * (1.0 - y)
        } else {
            p.alpha
        };
        let q = 1.0 - pt;
        let log_pt = pt.ln();
        value += -a * q.powf(p.gamma) * log_pt;
        let dq = if p.gamma == 0.0 {
            0.0
        } else {
            p.gamma * q.powf(p.gamma - 1.0) * log_pt
        };
        let dpt = a * (dq - q.powf(p.gamma) / pt);
        let inside = yp > PROB_EPS && yp < 1.0 - PROB_EPS;
        grad.push(if inside { dpt * (2.0 * y - 1.0) / n } else { 0.0 });
    }
    Ok(LossValue { value: value / n, grad })
}

/// One minus the soft F-beta score over all elements.
pub fn fbeta_loss(pred: &[f64], target: &[f64], p: &FBetaParams) -> Result<LossValue> {
    check_shapes("f-beta loss", pred, target)?;
    p.validate()?;
    let b2 = p.beta * p.beta;
    let c = if p.conventional { 1.0 + b2 } else { 1.0 + p.beta };
    let (mut tp, mut fp, mut fn_) = (0.0, 0.0, 0.0);
    for (&yp, &y) in pred.iter().zip(target) {
        tp += y * yp;
        fp += (1.0 - y) * yp;
        fn_ += y * (1.0 - yp);
    }
    let num = c * tp + p.eps;
    let den = c * tp + b2 * fn_ + fp + p.eps;
    let grad = target
        .iter()
        .map(|&y| {
            let dnum = c * y;
            let dden = c * y - b2 * y + (1.0 - y);
            -(dnum * den - num * dden) / (den * den)
        })
        .collect();
    Ok(LossValue {
        value: 1.0 - num / den,
        grad,
    })
}

pub fn hybrid_loss(
    pred: &[f64],
    target: &[f64],
    hp: &HybridParams,
    fp: &FocalParams,
    bp: &FBetaParams,
) -> Result<LossValue> {
    if !(hp.rho1 >= 0.0 && hp.rho2 >= 0.0) {
        return Err(Error::Config(format!(
            "hybrid weights must be nonnegative, got {} and {}",
            hp.rho1, hp.rho2
        )));
    }
    let f = focal_loss(pred, target, fp)?;
    let b = fbeta_loss(pred, target, bp)?;
    Ok(LossValue {
        value: hp.rho1 * f.value + hp.rho2 * b.value,
        grad: f
            .grad
            .iter()
            .zip(&b.grad)
            .map(|(gf, gb)| hp.rho1 * gf + hp.rho2 * gb)
            .collect(),
    })
}

/// `rho3 * MSE + rho4 * (1 - 2 sum(y y') / (sum y + sum y' + eps))` on one heatmap.
pub fn kr_loss(pred: &[f64], target: &[f64], p: &KRParams) -> Result<LossValue> {
    check_shapes("kr loss", pred, target)?;
    if !(p.rho3 >= 0.0 && p.rho4 >= 0.0 && p.eps > 0.0) {
        return Err(Error::Config(format!(
            "kr loss needs nonnegative weights and eps > 0, got rho3={} rho4={} eps={}",
            p.rho3, p.rho4, p.eps
        )));
    }
    let n = pred.len() as f64;
    let (mut sq, mut inter, mut mass) = (0.0, 0.0, p.eps);
    for (&yp, &y) in pred.iter().zip(target) {
        sq += (y - yp).powi(2);
        inter += y * yp;
        mass += y + yp;
    }
    let value = p.rho3 * sq / n + p.rho4 * (1.0 - 2.0 * inter / mass);
    let grad = pred
        .iter()
        .zip(target)
        .map(|(&yp, &y)| {
            let mse = 2.0 * (yp - y) / n;
            let overlap = -(2.0 * y * mass - 2.0 * inter) / (mass * mass);
            p.rho3 * mse + p.rho4 * overlap
        })
        .collect();
    Ok(LossValue { value, grad })
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Coordinate where the maximum was observed.
    pub worst_index: usize,
    pub passed: bool,
}

/// Finite-difference step used by [`grad_check`].
pub const FD_STEP: f64 = 1e-5;
/// Denominator floor for relative errors so vanishing gradients compare absolutely.
pub const FD_FLOOR: f64 = 1e-6;
pub const FD_MAX_ELEMENTS: usize = 64;

/// Compare an analytic gradient against central finite differences.
pub fn grad_check(loss_fn: impl Fn(&[f64]) -> Result<LossValue>, inputs: &[f64], tol: f64) -> Result<GradCheckReport> {
    if inputs.is_empty() || inputs.len() > FD_MAX_ELEMENTS {
        return Err(Error::Invalid(format!(
            "gradient check takes 1..={FD_MAX_ELEMENTS} elements, got {}",
            inputs.len()
        )));
    }
    let analytic = loss_fn(inputs)?;
    if !analytic.value.is_finite() {
        return Err(Error::Invalid("loss is not finite at the probe point".into()));
    }
    let mut x = inputs.to_vec();
    let mut worst = (0.0f64, 0usize);
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + FD_STEP;
        let up = loss_fn(&x)?.value;
        x[i] = orig - FD_STEP;
        let down = loss_fn(&x)?.value;
        x[i] = orig;
        if !(up.is_finite() && down.is_finite()) {
            return Err(Error::Invalid(format!("loss is not finite near coordinate {i}")));
        }
        let numeric = (up - down) / (2.0 * FD_STEP);
        let a = analytic.grad[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FD_FLOOR);
        if rel > worst.0 {
            worst = (rel, i);
        }
    }
    Ok(GradCheckReport {
        max_rel_error: worst.0,
        worst_index: worst.1,
        passed: worst.0 <= tol,
    })
}
