//! Bilinear resampling of feature maps (half-pixel centers, edge clamped).

use crate::graph::{BackwardCtx, Graph, NodeId};
use crate::{Result, Tensor, TensorError};

/// Source taps `(i0, i1, frac)` for each of `out` samples drawn from `input`.
pub fn bilinear_taps(input: usize, out: usize) -> Vec<(usize, usize, f32)> {
    let scale = input as f64 / out as f64;
    (0..out)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            (i0, i1, (src - i0 as f64) as f32)
        })
        .collect()
}

impl Graph {
    pub fn upsample_bilinear(&mut self, x: NodeId, oh: usize, ow: usize) -> Result<NodeId> {
        let (n, c, h, w) = self.value(x).dims4()?;
        if oh == 0 || ow == 0 || h == 0 || w == 0 {
            return Err(TensorError::invalid("upsample_bilinear", "empty extent"));
        }
        let ty = bilinear_taps(h, oh);
        let tx = bilinear_taps(w, ow);
        let xv = self.value(x).data();
        let mut out = vec![0.0f32; n * c * oh * ow];
        for plane in 0..n * c {
            let src = &xv[plane * h * w..(plane + 1) * h * w];
            let dst = &mut out[plane * oh * ow..(plane + 1) * oh * ow];
            for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                    let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
                    let bot = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
                    dst[oy * ow + ox] = top * (1.0 - fy) + bot * fy;
                }
            }
        }
        let value = Tensor::new([n, c, oh, ow], out)?;
        Ok(self.push(
            value,
            vec![x],
            Box::new(move |ctx: &BackwardCtx<'_>| {
                let mut dx = Tensor::zeros_like(ctx.inputs[0]);
                let d = dx.data_mut();
                let g = ctx.grad.data();
                for plane in 0..n * c {
                    let dst = &mut d[plane * h * w..(plane + 1) * h * w];
                    let gp = &g[plane * oh * ow..(plane + 1) * oh * ow];
                    for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                        for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                            let v = gp[oy * ow + ox];
                            dst[y0 * w + x0] += v * (1.0 - fy) * (1.0 - fx);
                            dst[y0 * w + x1] += v * (1.0 - fy) * fx;
                            dst[y1 * w + x0] += v * fy * (1.0 - fx);
                            dst[y1 * w + x1] += v * fy * fx;
                        }
                    }
                }
                Ok(vec![Some(dx)])
            }),
        ))
    }
}
