//! Activations, arithmetic, channel concatenation and dense layers.

use crate::gemm::gemm;
use crate::graph::{BackwardCtx, Graph, NodeId};
use crate::{Result, Tensor, TensorError};

pub fn sigmoid(v: f32) -> f32 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

impl Graph {
    fn unary(
        &mut self,
        x: NodeId,
        f: impl Fn(f32) -> f32,
        df: impl Fn(f32, f32) -> f32 + 'static,
    ) -> NodeId {
        let value = self.value(x).map(f);
        self.push(
            value,
            vec![x],
            Box::new(move |ctx: &BackwardCtx<'_>| {
                let data = ctx
                    .inputs[0]
                    .data()
                    .iter()
                    .zip(ctx.output.data())
                    .zip(ctx.grad.data())
                    .map(|((&x, &y), &g)| g * df(x, y))
                    .collect();
                Ok(vec![Some(Tensor::new(ctx.inputs[0].shape(), data)?)])
            }),
        )
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        self.unary(x, |v| v.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        self.unary(x, sigmoid, |_, y| y * (1.0 - y))
    }

    /// `x · sigmoid(x)`.
    pub fn silu(&mut self, x: NodeId) -> NodeId {
        self.unary(
            x,
            |v| v * sigmoid(v),
            |x, _| {
                let s = sigmoid(x);
                s * (1.0 + x * (1.0 - s))
            },
        )
    }

    pub fn scale(&mut self, x: NodeId, factor: f32) -> NodeId {
        self.unary(x, move |v| v * factor, move |_, _| factor)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::ShapeMismatch {
                op: "add",
                expected: self.shape(a).to_vec(),
                got: self.shape(b).to_vec(),
            });
        }
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b))?;
        Ok(self.push(
            value,
            vec![a, b],
            Box::new(|ctx: &BackwardCtx<'_>| {
                Ok(vec![
                    ctx.needs[0].then(|| ctx.grad.clone()),
                    ctx.needs[1].then(|| ctx.grad.clone()),
                ])
            }),
        ))
    }

    /// Scale each channel of `x: [N, C, H, W]` by `s: [N, C]`.
    pub fn mul_channels(&mut self, x: NodeId, s: NodeId) -> Result<NodeId> {
        let (n, c, h, w) = self.value(x).dims4()?;
        self.value(s).expect_shape("mul_channels", &[n, c])?;
        let hw = h * w;
        let sv = self.value(s).data();
        let data: Vec<f32> = self
            .value(x)
            .data()
            .chunks(hw)
            .zip(sv)
            .flat_map(|(plane, &k)| plane.iter().map(move |&v| v * k))
            .collect();
        let value = Tensor::new([n, c, h, w], data)?;
        Ok(self.push(
            value,
            vec![x, s],
            Box::new(move |ctx: &BackwardCtx<'_>| {
                let xv = ctx.inputs[0].data();
                let sv = ctx.inputs[1].data();
                let g = ctx.grad.data();
                let dx = ctx.needs[0].then(|| {
                    let d = g
                        .chunks(hw)
                        .zip(sv)
                        .flat_map(|(plane, &k)| plane.iter().map(move |&v| v * k))
                        .collect();
                    Tensor::new(ctx.inputs[0].shape(), d)
                });
                let ds = ctx.needs[1].then(|| {
                    let d = g
                        .chunks(hw)
                        .zip(xv.chunks(hw))
                        .map(|(gp, xp)| gp.iter().zip(xp).map(|(a, b)| a * b).sum())
                        .collect();
                    Tensor::new([n, c], d)
                });
                Ok(vec![dx.transpose()?, ds.transpose()?])
            }),
        ))
    }

    /// Concatenate `[N, Ci, H, W]` maps along the channel axis.
    pub fn concat_channels(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        let first = *xs
            .first()
            .ok_or_else(|| TensorError::invalid("concat_channels", "no inputs"))?;
        let (n, _, h, w) = self.value(first).dims4()?;
        let mut channels = Vec::with_capacity(xs.len());
        for &x in xs {
            let (xn, xc, xh, xw) = self.value(x).dims4()?;
            if (xn, xh, xw) != (n, h, w) {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_channels",
                    expected: vec![n, xc, h, w],
                    got: self.shape(x).to_vec(),
                });
            }
            channels.push(xc);
        }
        let total: usize = channels.iter().sum();
        let hw = h * w;
        let mut data = Vec::with_capacity(n * total * hw);
        for ni in 0..n {
            for (&x, &ci) in xs.iter().zip(&channels) {
                data.extend_from_slice(&self.value(x).data()[ni * ci * hw..(ni + 1) * ci * hw]);
            }
        }
        let value = Tensor::new([n, total, h, w], data)?;
        Ok(self.push(
            value,
            xs.to_vec(),
            Box::new(move |ctx: &BackwardCtx<'_>| {
                let g = ctx.grad.data();
                let mut out = Vec::with_capacity(channels.len());
                let mut offset = 0;
                for (k, &ci) in channels.iter().enumerate() {
                    if ctx.needs[k] {
                        let mut d = Vec::with_capacity(n * ci * hw);
                        for ni in 0..n {
                            let base = (ni * total + offset) * hw;
                            d.extend_from_slice(&g[base..base + ci * hw]);
                        }
                        out.push(Some(Tensor::new([n, ci, h, w], d)?));
                    } else {
                        out.push(None);
                    }
                    offset += ci;
                }
                Ok(out)
            }),
        ))
    }

    /// `x: [N, F]`, `w: [O, F]`, `b: [O]` → `x·wᵀ + b`.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> Result<NodeId> {
        let (n, f) = self.value(x).dims2()?;
        let (o, wf) = self.value(w).dims2()?;
        if wf != f {
            return Err(TensorError::ShapeMismatch {
                op: "linear",
                expected: vec![o, f],
                got: vec![o, wf],
            });
        }
        let mut out = vec![0.0f32; n * o];
        gemm(n, f, o, self.value(x).data(), false, self.value(w).data(), true, 0.0, &mut out);
        if let Some(b) = b {
            self.value(b).expect_shape("linear bias", &[o])?;
            let bv = self.value(b).data();
            for row in out.chunks_mut(o) {
                for (v, &bi) in row.iter_mut().zip(bv) {
                    *v += bi;
                }
            }
        }
        let value = Tensor::new([n, o], out)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(
            value,
            inputs,
            Box::new(move |ctx: &BackwardCtx<'_>| {
                let g = ctx.grad.data();
                let dx = ctx.needs[0].then(|| {
                    let mut d = vec![0.0f32; n * f];
                    gemm(n, o, f, g, false, ctx.inputs[1].data(), false, 0.0, &mut d);
                    Tensor::new([n, f], d)
                });
                let dw = ctx.needs[1].then(|| {
                    let mut d = vec![0.0f32; o * f];
                    gemm(o, n, f, g, true, ctx.inputs[0].data(), false, 0.0, &mut d);
                    Tensor::new([o, f], d)
                });
                let mut res = vec![dx.transpose()?, dw.transpose()?];
                if ctx.inputs.len() > 2 {
                    let db = ctx.needs[2].then(|| {
                        let mut d = vec![0.0f32; o];
                        for row in g.chunks(o) {
                            for (acc, &v) in d.iter_mut().zip(row) {
                                *acc += v;
                            }
                        }
                        Tensor::new([o], d)
                    });
                    res.push(db.transpose()?);
                }
                Ok(res)
            }),
        ))
    }

    /// Reinterpret the shape without moving data.
    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        let value = self.value(x).clone().reshape(shape.to_vec())?;
        Ok(self.push(
            value,
            vec![x],
            Box::new(|ctx: &BackwardCtx<'_>| {
                Ok(vec![Some(ctx.grad.clone().reshape(ctx.inputs[0].shape().to_vec())?)])
            }),
        ))
    }
}
