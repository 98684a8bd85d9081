//! 2-D convolution and transposed convolution via im2col + sgemm.

use crate::gemm::gemm;
use crate::graph::{BackwardCtx, Graph, NodeId};
use crate::{Result, Tensor, TensorError};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvOpts {
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl Default for ConvOpts {
    fn default() -> Self {
        Self {
            stride: 1,
            padding: 0,
            groups: 1,
        }
    }
}

impl ConvOpts {
    pub fn new(stride: usize, padding: usize) -> Self {
        Self {
            stride,
            padding,
            groups: 1,
        }
    }

    pub fn with_groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }
}

/// Geometry shared by im2col/col2im: an image of `c×h×w` read by a `kh×kw`
/// window into `oh×ow` positions.
#[derive(Clone, Copy, Debug)]
struct Patch {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl Patch {
    fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    fn im2col(&self, src: &[f32], dst: &mut [f32]) {
        let p = self.cols();
        for ci in 0..self.c {
            let plane = &src[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = (ci * self.kh + ky) * self.kw + kx;
                    let d = &mut dst[row * p..(row + 1) * p];
                    for oy in 0..self.oh {
                        let out = &mut d[oy * self.ow..(oy + 1) * self.ow];
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            out.fill(0.0);
                            continue;
                        }
                        let src_row = &plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for (ox, o) in out.iter_mut().enumerate() {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            *o = if ix < 0 || ix >= self.w as isize {
                                0.0
                            } else {
                                src_row[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`Patch::im2col`]: accumulates into `dst`.
    fn col2im(&self, src: &[f32], dst: &mut [f32]) {
        let p = self.cols();
        for ci in 0..self.c {
            let plane = &mut dst[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = (ci * self.kh + ky) * self.kw + kx;
                    let s = &src[row * p..(row + 1) * p];
                    for oy in 0..self.oh {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let dst_row = &mut plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for ox in 0..self.ow {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix >= 0 && ix < self.w as isize {
                                dst_row[ix as usize] += s[oy * self.ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

fn out_size(input: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    (input + 2 * pad).checked_sub(k).map(|v| v / stride + 1)
}

impl Graph {
    /// Cross-correlation of `x: [N, C, H, W]` with `w: [O, C/groups, kh, kw]`
    /// plus an optional per-channel `bias: [O]`.
    pub fn conv2d(&mut self, x: NodeId, w: NodeId, bias: Option<NodeId>, opts: ConvOpts) -> Result<NodeId> {
        let (n, c, h, wd) = self.value(x).dims4()?;
        let (o, cg, kh, kw) = self.value(w).dims4()?;
        let g = opts.groups;
        if g == 0 || opts.stride == 0 || c % g != 0 || o % g != 0 || cg != c / g {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                expected: vec![o, c / g.max(1), kh, kw],
                got: self.value(w).shape().to_vec(),
            });
        }
        if let Some(b) = bias {
            self.value(b).expect_shape("conv2d bias", &[o])?;
        }
        let oh = out_size(h, kh, opts.stride, opts.padding)
            .ok_or_else(|| TensorError::invalid("conv2d", "kernel larger than padded input"))?;
        let ow = out_size(wd, kw, opts.stride, opts.padding)
            .ok_or_else(|| TensorError::invalid("conv2d", "kernel larger than padded input"))?;
        let patch = Patch {
            c: cg,
            h,
            w: wd,
            kh,
            kw,
            stride: opts.stride,
            pad: opts.padding,
            oh,
            ow,
        };
        let og = o / g;
        let (k, p) = (patch.rows(), patch.cols());
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let mut out = vec![0.0f32; n * o * p];
        let mut cols = vec![0.0f32; if patch.is_pointwise() { 0 } else { k * p }];
        for ni in 0..n {
            for gi in 0..g {
                let src = &xv[(ni * c + gi * cg) * h * wd..(ni * c + (gi + 1) * cg) * h * wd];
                let col: &[f32] = if patch.is_pointwise() {
                    src
                } else {
                    patch.im2col(src, &mut cols);
                    &cols
                };
                let dst = &mut out[(ni * o + gi * og) * p..(ni * o + (gi + 1) * og) * p];
                gemm(og, k, p, &wv[gi * og * k..(gi + 1) * og * k], false, col, false, 0.0, dst);
            }
        }
        if let Some(b) = bias {
            let bv = self.value(b).data();
            for ni in 0..n {
                for (oi, &bo) in bv.iter().enumerate() {
                    for v in &mut out[(ni * o + oi) * p..(ni * o + oi + 1) * p] {
                        *v += bo;
                    }
                }
            }
        }
        let value = Tensor::new([n, o, oh, ow], out)?;
        let mut inputs = vec![x, w];
        inputs.extend(bias);
        self.push(
            value,
            inputs,
            Box::new(move |ctx: &BackwardCtx<'_>| {
                let xv = ctx.inputs[0].data();
                let wv = ctx.inputs[1].data();
                let gv = ctx.grad.data();
                let mut dx = ctx.needs[0].then(|| vec![0.0f32; xv.len()]);
                let mut dw = ctx.needs[1].then(|| vec![0.0f32; wv.len()]);
                let mut cols = vec![0.0f32; k * p];
                for ni in 0..n {
                    for gi in 0..g {
                        let go = &gv[(ni * o + gi * og) * p..(ni * o + (gi + 1) * og) * p];
                        if let Some(dw) = dw.as_mut() {
                            let src = &xv[(ni * c + gi * cg) * h * wd..(ni * c + (gi + 1) * cg) * h * wd];
                            let col: &[f32] = if patch.is_pointwise() {
                                src
                            } else {
                                patch.im2col(src, &mut cols);
                                &cols
                            };
                            // dW_g += dY_g · colsᵀ
                            gemm(og, p, k, go, false, col, true, 1.0, &mut dw[gi * og * k..(gi + 1) * og * k]);
                        }
                        if let Some(dx) = dx.as_mut() {
                            let dst = &mut dx[(ni * c + gi * cg) * h * wd..(ni * c + (gi + 1) * cg) * h * wd];
                            let wg = &wv[gi * og * k..(gi + 1) * og * k];
                            if patch.is_pointwise() {
                                gemm(k, og, p, wg, true, go, false, 1.0, dst);
                            } else {
                                gemm(k, og, p, wg, true, go, false, 0.0, &mut cols);
                                patch.col2im(&cols, dst);
                            }
                        }
                    }
                }
                let mut res = vec![
                    dx.map(|d| Tensor::new(ctx.inputs[0].shape(), d)).transpose()?,
                    dw.map(|d| Tensor::new(ctx.inputs[1].shape(), d)).transpose()?,
                ];
                if ctx.inputs.len() > 2 {
                    res.push(ctx.needs[2].then(|| channel_sums(gv, n, o, p)));
                }
                Ok(res)
            }),
        );
        Ok(self.last())
    }

    /// Transposed convolution of `x: [N, Cin, H, W]` with `w: [Cin, Cout, kh, kw]`;
    /// output spatial size is `(H - 1)·stride - 2·padding + kh`.
    pub fn conv_transpose2d(
        &mut self,
        x: NodeId,
        w: NodeId,
        bias: Option<NodeId>,
        stride: usize,
        padding: usize,
    ) -> Result<NodeId> {
        let (n, cin, h, wd) = self.value(x).dims4()?;
        let (wc, cout, kh, kw) = self.value(w).dims4()?;
        if wc != cin || stride == 0 {
            return Err(TensorError::ShapeMismatch {
                op: "conv_transpose2d",
                expected: vec![cin, cout, kh, kw],
                got: self.value(w).shape().to_vec(),
            });
        }
        if let Some(b) = bias {
            self.value(b).expect_shape("conv_transpose2d bias", &[cout])?;
        }
        let oh = ((h - 1) * stride + kh)
            .checked_sub(2 * padding)
            .ok_or_else(|| TensorError::invalid("conv_transpose2d", "padding too large"))?;
        let ow = ((wd - 1) * stride + kw)
            .checked_sub(2 * padding)
            .ok_or_else(|| TensorError::invalid("conv_transpose2d", "padding too large"))?;
        // The output plays the role of the "image" and the input the role of
        // the column grid of an ordinary convolution.
        let patch = Patch {
            c: cout,
            h: oh,
            w: ow,
            kh,
            kw,
            stride,
            pad: padding,
            oh: h,
            ow: wd,
        };
        let (k, p) = (patch.rows(), patch.cols());
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let mut out = vec![0.0f32; n * cout * oh * ow];
        let mut cols = vec![0.0f32; k * p];
        for ni in 0..n {
            let src = &xv[ni * cin * p..(ni + 1) * cin * p];
            gemm(k, cin, p, wv, true, src, false, 0.0, &mut cols);
            patch.col2im(&cols, &mut out[ni * cout * oh * ow..(ni + 1) * cout * oh * ow]);
        }
        if let Some(b) = bias {
            let bv = self.value(b).data();
            for ni in 0..n {
                for (oi, &bo) in bv.iter().enumerate() {
                    let base = (ni * cout + oi) * oh * ow;
                    for v in &mut out[base..base + oh * ow] {
                        *v += bo;
                    }
                }
            }
        }
        let value = Tensor::new([n, cout, oh, ow], out)?;
        let mut inputs = vec![x, w];
        inputs.extend(bias);
        self.push(
            value,
            inputs,
            Box::new(move |ctx: &BackwardCtx<'_>| {
                let xv = ctx.inputs[0].data();
                let wv = ctx.inputs[1].data();
                let gv = ctx.grad.data();
                let mut dx = ctx.needs[0].then(|| vec![0.0f32; xv.len()]);
                let mut dw = ctx.needs[1].then(|| vec![0.0f32; wv.len()]);
                let mut cols = vec![0.0f32; k * p];
                for ni in 0..n {
                    patch.im2col(&gv[ni * cout * oh * ow..(ni + 1) * cout * oh * ow], &mut cols);
                    if let Some(dx) = dx.as_mut() {
                        gemm(cin, k, p, wv, false, &cols, false, 0.0, &mut dx[ni * cin * p..(ni + 1) * cin * p]);
                    }
                    if let Some(dw) = dw.as_mut() {
                        gemm(cin, p, k, &xv[ni * cin * p..(ni + 1) * cin * p], false, &cols, true, 1.0, dw);
                    }
                }
                let mut res = vec![
                    dx.map(|d| Tensor::new(ctx.inputs[0].shape(), d)).transpose()?,
                    dw.map(|d| Tensor::new(ctx.inputs[1].shape(), d)).transpose()?,
                ];
                if ctx.inputs.len() > 2 {
                    res.push(ctx.needs[2].then(|| channel_sums(gv, n, cout, oh * ow)));
                }
                Ok(res)
            }),
        );
        Ok(self.last())
    }
}

/// Per-channel sums of an `[N, C, P]` gradient: the bias gradient.
fn channel_sums(g: &[f32], n: usize, c: usize, p: usize) -> Tensor {
    let mut out = vec![0.0f32; c];
    for ni in 0..n {
        for (ci, o) in out.iter_mut().enumerate() {
            *o += g[(ni * c + ci) * p..(ni * c + ci + 1) * p].iter().sum::<f32>();
        }
    }
    Tensor::new([c], out).expect("bias gradient shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Mode;

    fn direct_conv(x: &Tensor, w: &Tensor, stride: usize, pad: usize, groups: usize) -> Tensor {
        let (n, c, h, wd) = x.dims4().unwrap();
        let (o, cg, kh, kw) = w.dims4().unwrap();
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (wd + 2 * pad - kw) / stride + 1;
        let og = o / groups;
        let mut out = Tensor::zeros([n, o, oh, ow]);
        for ni in 0..n {
            for oi in 0..o {
                let gi = oi / og;
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut s = 0.0;
                        for ci in 0..cg {
                            for ky in 0..kh {
                                for kx in 0..kw {
                                    let iy = (oy * stride + ky) as isize - pad as isize;
                                    let ix = (ox * stride + kx) as isize - pad as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                        continue;
                                    }
                                    let xi = ((ni * c + gi * cg + ci) * h + iy as usize) * wd + ix as usize;
                                    let wi = ((oi * cg + ci) * kh + ky) * kw + kx;
                                    s += x.data()[xi] * w.data()[wi];
                                }
                            }
                        }
                        out.data_mut()[((ni * o + oi) * oh + oy) * ow + ox] = s;
                    }
                }
            }
        }
        out
    }

    fn ramp(shape: &[usize], scale: f32) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor::new(shape, (0..n).map(|i| ((i * 7 % 13) as f32 - 6.0) * scale).collect()).unwrap()
    }

    #[test]
    fn conv2d_matches_direct_loops() {
        for (stride, pad, groups, kh) in [(1, 1, 1, 3), (2, 1, 1, 3), (2, 0, 1, 1), (1, 0, 1, 1), (2, 1, 4, 3), (2, 3, 1, 7)] {
            let x = ramp(&[2, 4, 9, 8], 0.1);
            let w = ramp(&[8, 4 / groups, kh, kh], 0.05);
            let mut g = Graph::new(Mode::Eval);
            let xn = g.constant(x.clone());
            let wn = g.constant(w.clone());
            let y = g.conv2d(xn, wn, None, ConvOpts::new(stride, pad).with_groups(groups)).unwrap();
            let want = direct_conv(&x, &w, stride, pad, groups);
            assert_eq!(g.value(y).shape(), want.shape());
            for (a, b) in g.value(y).data().iter().zip(want.data()) {
                assert!((a - b).abs() < 1e-5, "stride {stride} pad {pad} groups {groups}");
            }
        }
    }

    #[test]
    fn transposed_conv_doubles_resolution() {
        let mut g = Graph::new(Mode::Eval);
        let x = g.constant(Tensor::full([1, 3, 4, 5], 1.0));
        let w = g.constant(Tensor::full([3, 2, 2, 2], 0.5));
        let y = g.conv_transpose2d(x, w, None, 2, 0).unwrap();
        assert_eq!(g.shape(y), &[1, 2, 8, 10]);
        assert!(g.value(y).data().iter().all(|&v| (v - 1.5).abs() < 1e-6));
    }
}
