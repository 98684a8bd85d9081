//! Spatial pooling: windowed max/average, adaptive average and global average.

use crate::graph::{BackwardCtx, Graph, NodeId};
use crate::{Result, Tensor, TensorError};

fn pooled_size(input: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    if k == 0 || stride == 0 || pad * 2 > k {
        return Err(TensorError::invalid(
            "pool2d",
            format!("invalid window k={k} stride={stride} pad={pad}"),
        ));
    }
    (input + 2 * pad)
        .checked_sub(k)
        .map(|v| v / stride + 1)
        .ok_or_else(|| TensorError::invalid("pool2d", "window larger than padded input"))
}

/// Half-open input range `[start, end)` covered by adaptive bin `i` of `bins`.
pub fn adaptive_range(i: usize, bins: usize, size: usize) -> (usize, usize) {
    let start = i * size / bins;
    let end = ((i + 1) * size).div_ceil(bins);
    (start, end)
}

impl Graph {
    /// Max pooling with implicit `-inf` padding.
    pub fn max_pool2d(&mut self, x: NodeId, k: usize, stride: usize, pad: usize) -> Result<NodeId> {
        let (n, c, h, w) = self.value(x).dims4()?;
        let oh = pooled_size(h, k, stride, pad)?;
        let ow = pooled_size(w, k, stride, pad)?;
        let xv = self.value(x).data();
        let mut out = vec![0.0f32; n * c * oh * ow];
        let mut argmax = vec![0usize; out.len()];
        for plane in 0..n * c {
            let src = &xv[plane * h * w..(plane + 1) * h * w];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f32::NEG_INFINITY;
                    let mut best_i = usize::MAX;
                    for ky in 0..k {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let idx = iy as usize * w + ix as usize;
                            if src[idx] > best || best_i == usize::MAX {
                                best = src[idx];
                                best_i = idx;
                            }
                        }
                    }
                    let o = (plane * oh + oy) * ow + ox;
                    out[o] = best;
                    argmax[o] = plane * h * w + best_i;
                }
            }
        }
        let value = Tensor::new([n, c, oh, ow], out)?;
        self.push(
            value,
            vec![x],
            Box::new(move |ctx: &BackwardCtx<'_>| {
                let mut dx = Tensor::zeros_like(ctx.inputs[0]);
                let d = dx.data_mut();
                for (&src, &g) in argmax.iter().zip(ctx.grad.data()) {
                    d[src] += g;
                }
                Ok(vec![Some(dx)])
            }),
        );
        Ok(self.last())
    }

    /// Average pooling with zero padding excluded from the divisor, so a
    /// constant input pools to the same constant everywhere.
    pub fn avg_pool2d(&mut self, x: NodeId, k: usize, stride: usize, pad: usize) -> Result<NodeId> {
        let (n, c, h, w) = self.value(x).dims4()?;
        let oh = pooled_size(h, k, stride, pad)?;
        let ow = pooled_size(w, k, stride, pad)?;
        let window = move |o: usize, size: usize| {
            let lo = (o * stride) as isize - pad as isize;
            let start = lo.max(0) as usize;
            let end = ((lo + k as isize) as usize).min(size);
            (start, end)
        };
        let xv = self.value(x).data();
        let mut out = vec![0.0f32; n * c * oh * ow];
        for plane in 0..n * c {
            let src = &xv[plane * h * w..(plane + 1) * h * w];
            for oy in 0..oh {
                let (y0, y1) = window(oy, h);
                for ox in 0..ow {
                    let (x0, x1) = window(ox, w);
                    let mut s = 0.0;
                    for iy in y0..y1 {
                        s += src[iy * w + x0..iy * w + x1].iter().sum::<f32>();
                    }
                    out[(plane * oh + oy) * ow + ox] = s / ((y1 - y0) * (x1 - x0)) as f32;
                }
            }
        }
        let value = Tensor::new([n, c, oh, ow], out)?;
        self.push(
            value,
            vec![x],
            Box::new(move |ctx: &BackwardCtx<'_>| {
                let mut dx = Tensor::zeros_like(ctx.inputs[0]);
                let d = dx.data_mut();
                let g = ctx.grad.data();
                for plane in 0..n * c {
                    for oy in 0..oh {
                        let (y0, y1) = window(oy, h);
                        for ox in 0..ow {
                            let (x0, x1) = window(ox, w);
                            let share = g[(plane * oh + oy) * ow + ox] / ((y1 - y0) * (x1 - x0)) as f32;
                            for iy in y0..y1 {
                                for v in &mut d[plane * h * w + iy * w + x0..plane * h * w + iy * w + x1] {
                                    *v += share;
                                }
                            }
                        }
                    }
                }
                Ok(vec![Some(dx)])
            }),
        );
        Ok(self.last())
    }

    /// Adaptive average pooling to a `bins×bins` grid.
    pub fn adaptive_avg_pool2d(&mut self, x: NodeId, bins: usize) -> Result<NodeId> {
        let (n, c, h, w) = self.value(x).dims4()?;
        if bins == 0 || bins > h || bins > w {
            return Err(TensorError::invalid(
                "adaptive_avg_pool2d",
                format!("{bins} bins on a {h}x{w} map"),
            ));
        }
        let xv = self.value(x).data();
        let mut out = vec![0.0f32; n * c * bins * bins];
        for plane in 0..n * c {
            let src = &xv[plane * h * w..(plane + 1) * h * w];
            for by in 0..bins {
                let (y0, y1) = adaptive_range(by, bins, h);
                for bx in 0..bins {
                    let (x0, x1) = adaptive_range(bx, bins, w);
                    let mut s = 0.0;
                    for iy in y0..y1 {
                        s += src[iy * w + x0..iy * w + x1].iter().sum::<f32>();
                    }
                    out[(plane * bins + by) * bins + bx] = s / ((y1 - y0) * (x1 - x0)) as f32;
                }
            }
        }
        let value = Tensor::new([n, c, bins, bins], out)?;
        self.push(
            value,
            vec![x],
            Box::new(move |ctx: &BackwardCtx<'_>| {
                let mut dx = Tensor::zeros_like(ctx.inputs[0]);
                let d = dx.data_mut();
                let g = ctx.grad.data();
                for plane in 0..n * c {
                    for by in 0..bins {
                        let (y0, y1) = adaptive_range(by, bins, h);
                        for bx in 0..bins {
                            let (x0, x1) = adaptive_range(bx, bins, w);
                            let share = g[(plane * bins + by) * bins + bx] / ((y1 - y0) * (x1 - x0)) as f32;
                            for iy in y0..y1 {
                                for v in &mut d[plane * h * w + iy * w + x0..plane * h * w + iy * w + x1] {
                                    *v += share;
                                }
                            }
                        }
                    }
                }
                Ok(vec![Some(dx)])
            }),
        );
        Ok(self.last())
    }

    /// `[N, C, H, W] -> [N, C]` spatial mean.
    pub fn global_avg_pool(&mut self, x: NodeId) -> Result<NodeId> {
        let (n, c, h, w) = self.value(x).dims4()?;
        let hw = h * w;
        let out: Vec<f32> = self
            .value(x)
            .data()
            .chunks(hw)
            .map(|p| p.iter().sum::<f32>() / hw as f32)
            .collect();
        let value = Tensor::new([n, c], out)?;
        self.push(
            value,
            vec![x],
            Box::new(move |ctx: &BackwardCtx<'_>| {
                let mut dx = Tensor::zeros_like(ctx.inputs[0]);
                for (plane, &g) in dx.data_mut().chunks_mut(hw).zip(ctx.grad.data()) {
                    plane.fill(g / hw as f32);
                }
                Ok(vec![Some(dx)])
            }),
        );
        Ok(self.last())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Mode;

    #[test]
    fn padded_average_of_constant_is_constant() {
        let mut g = Graph::new(Mode::Eval);
        let x = g.constant(Tensor::full([1, 2, 8, 8], 3.5));
        let y = g.avg_pool2d(x, 3, 2, 1).unwrap();
        assert_eq!(g.shape(y), &[1, 2, 4, 4]);
        assert!(g.value(y).data().iter().all(|&v| (v - 3.5).abs() < 1e-6));
    }

    #[test]
    fn adaptive_ranges_cover_input() {
        for size in 1..20 {
            for bins in 1..=size {
                let mut covered = vec![false; size];
                for i in 0..bins {
                    let (a, b) = adaptive_range(i, bins, size);
                    assert!(a < b && b <= size);
                    covered[a..b].iter_mut().for_each(|c| *c = true);
                }
                assert!(covered.iter().all(|&c| c));
            }
        }
    }

    #[test]
    fn adaptive_rejects_too_many_bins() {
        let mut g = Graph::new(Mode::Eval);
        let x = g.constant(Tensor::zeros([1, 1, 4, 4]));
        assert!(g.adaptive_avg_pool2d(x, 6).is_err());
    }

    #[test]
    fn max_pool_picks_maximum() {
        let mut g = Graph::new(Mode::Eval);
        let x = g.constant(Tensor::new([1, 1, 2, 2], vec![1.0, 4.0, 3.0, 2.0]).unwrap());
        let y = g.max_pool2d(x, 2, 2, 0).unwrap();
        assert_eq!(g.value(y).data(), &[4.0]);
    }
}
