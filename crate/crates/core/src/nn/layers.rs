//! Batched layers on channel-last (N, H, W, C) activations. Convolutions are
//! lowered to one GEMM per batch with every operand read row-contiguously.

use super::params::{Grads, ParamSet};

/// Activations laid out as (sample, row, column, channel).
#[derive(Debug, Clone, PartialEq)]
pub struct Act {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub data: Vec<f32>,
}

impl Act {
    pub fn zeros(n: usize, h: usize, w: usize, c: usize) -> Self {
        Self {
            n,
            h,
            w,
            c,
            data: vec![0.0; n * h * w * c],
        }
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    fn same_shape(&self) -> Self {
        Self::zeros(self.n, self.h, self.w, self.c)
    }
}

fn out_dim(size: usize, k: usize, stride: usize, pad: usize) -> usize {
    (size + 2 * pad - k) / stride + 1
}

unsafe fn sgemm(
    (m, k, n): (usize, usize, usize),
    a: &[f32],
    (rsa, csa): (usize, usize),
    b: &[f32],
    (rsb, csb): (usize, usize),
    beta: f32,
    c: &mut [f32],
) {
    matrixmultiply::sgemm(
        m, k, n, 1.0,
        a.as_ptr(), rsa as isize, csa as isize,
        b.as_ptr(), rsb as isize, csb as isize,
        beta,
        c.as_mut_ptr(), n as isize, 1,
    );
}

/// Bias-free 2-D convolution (every conv here feeds a normalization layer).
/// Weights are stored as (out, ky, kx, in).
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: usize,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

pub struct ConvCache {
    /// (positions x taps) patch matrix.
    patches: Vec<f32>,
    in_shape: (usize, usize, usize, usize),
    out_hw: (usize, usize),
}

impl Conv2d {
    fn taps(&self) -> usize {
        self.k * self.k * self.cin
    }

    /// Visit every in-bounds kernel row segment: for each output position and
    /// kernel row, the flat position index, the tap offset of the first valid
    /// column, the input offset of that pixel, and the segment length in
    /// floats. In channel-last layout each segment is contiguous on both sides.
    fn for_each_segment(&self, shape: (usize, usize, usize), ho: usize, wo: usize, mut f: impl FnMut(usize, usize, usize, usize)) {
        let (n, h, w) = shape;
        let (k, s, pad) = (self.k as isize, self.stride as isize, self.pad as isize);
        let cin = self.cin;
        for b in 0..n {
            for oy in 0..ho {
                for ox in 0..wo {
                    let pos = (b * ho + oy) * wo + ox;
                    let ix0 = ox as isize * s - pad;
                    let kx_lo = (-ix0).max(0);
                    let kx_hi = (w as isize - ix0).min(k);
                    if kx_lo >= kx_hi {
                        continue;
                    }
                    for ky in 0..k {
                        let iy = oy as isize * s + ky - pad;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let tap = ((ky * k + kx_lo) as usize) * cin;
                        let pix = (b * h + iy as usize) * w + (ix0 + kx_lo) as usize;
                        f(pos, tap, pix * cin, (kx_hi - kx_lo) as usize * cin);
                    }
                }
            }
        }
    }

    fn im2col(&self, x: &Act, ho: usize, wo: usize) -> Vec<f32> {
        let taps = self.taps();
        let mut patches = vec![0.0f32; x.n * ho * wo * taps];
        self.for_each_segment((x.n, x.h, x.w), ho, wo, |pos, tap, src, len| {
            let at = pos * taps + tap;
            patches[at..at + len].copy_from_slice(&x.data[src..src + len]);
        });
        patches
    }

    /// Patch matrix stored column-major, the layout matrixmultiply packs
    /// fastest as the left operand.
    fn im2col_cm(&self, x: &Act, ho: usize, wo: usize) -> Vec<f32> {
        let positions = x.n * ho * wo;
        let (k, s, pad, cin) = (self.k, self.stride, self.pad as isize, self.cin);
        let mut out = vec![0.0f32; positions * self.taps()];
        for kx in 0..k {
            // output columns whose input column is in bounds
            let off = kx as isize - pad;
            let lo = ((-off).max(0) as usize).div_ceil(s);
            let hi = (((x.w as isize - off) + s as isize - 1) / s as isize).clamp(0, wo as isize) as usize;
            if lo >= hi {
                continue;
            }
            for ky in 0..k {
                for ci in 0..cin {
                    let tap = (ky * k + kx) * cin + ci;
                    let dst_row = &mut out[tap * positions..(tap + 1) * positions];
                    for b in 0..x.n {
                        for oy in 0..ho {
                            let iy = (oy * s + ky) as isize - pad;
                            if iy < 0 || iy >= x.h as isize {
                                continue;
                            }
                            let src = &x.data[(b * x.h + iy as usize) * x.w * cin..];
                            let dst = &mut dst_row[(b * ho + oy) * wo..(b * ho + oy + 1) * wo];
                            for ox in lo..hi {
                                let ix = (ox * s) as isize + off;
                                dst[ox] = src[ix as usize * cin + ci];
                            }
                        }
                    }
                }
            }
        }
        out
    }

    fn col2im(&self, dpatches: &[f32], shape: (usize, usize, usize, usize), ho: usize, wo: usize) -> Act {
        let (n, h, w, c) = shape;
        let mut dx = Act::zeros(n, h, w, c);
        let taps = self.taps();
        self.for_each_segment((n, h, w), ho, wo, |pos, tap, dst, len| {
            let at = pos * taps + tap;
            for (d, &g) in dx.data[dst..dst + len].iter_mut().zip(&dpatches[at..at + len]) {
                *d += g;
            }
        });
        dx
    }

    pub fn forward(&self, params: &ParamSet, x: &Act) -> (Act, ConvCache) {
        assert_eq!(x.c, self.cin, "conv input channels");
        let ho = out_dim(x.h, self.k, self.stride, self.pad);
        let wo = out_dim(x.w, self.k, self.stride, self.pad);
        let patches = self.im2col_cm(x, ho, wo);
        let taps = self.taps();
        let positions = x.n * ho * wo;
        let mut y = Act::zeros(x.n, ho, wo, self.cout);
        let w = params.data(self.weight);
        // Y (positions x cout) = patches (positions x taps) . W^T
        unsafe {
            sgemm((positions, taps, self.cout), &patches, (1, positions), w, (1, taps), 0.0, &mut y.data);
        }
        let cache = ConvCache {
            patches: self.im2col(x, ho, wo),
            in_shape: (x.n, x.h, x.w, x.c),
            out_hw: (ho, wo),
        };
        (y, cache)
    }

    /// Accumulates the weight gradient; returns the input gradient when asked.
    pub fn backward(&self, params: &ParamSet, grads: &mut Grads, cache: &ConvCache, dy: &Act, need_dx: bool) -> Option<Act> {
        let (ho, wo) = cache.out_hw;
        let taps = self.taps();
        let positions = dy.n * ho * wo;
        let patches = &cache.patches;
        // dW (cout x taps) += dY^T . patches
        unsafe {
            sgemm(
                (self.cout, positions, taps),
                &dy.data,
                (1, self.cout),
                patches,
                (taps, 1),
                1.0,
                grads.get_mut(self.weight),
            );
        }
        if !need_dx {
            return None;
        }
        let mut dpatches = vec![0.0f32; positions * taps];
        // dpatches (positions x taps) = dY . W
        unsafe {
            sgemm(
                (positions, self.cout, taps),
                &dy.data,
                (self.cout, 1),
                params.data(self.weight),
                (taps, 1),
                0.0,
                &mut dpatches,
            );
        }
        Some(self.col2im(&dpatches, cache.in_shape, ho, wo))
    }
}

/// Group normalization with per-channel affine parameters. Statistics are per
/// sample, so the forward pass does not depend on batch composition.
#[derive(Debug, Clone)]
pub struct GroupNorm {
    pub gamma: usize,
    pub beta: usize,
    pub channels: usize,
    pub groups: usize,
}

pub struct NormCache {
    xhat: Act,
    inv_std: Vec<f32>,
}

const NORM_EPS: f64 = 1e-5;

impl GroupNorm {
    pub fn forward(&self, params: &ParamSet, x: &Act) -> (Act, NormCache) {
        let (c, g) = (self.channels, self.groups);
        let cpg = c / g;
        let plane = x.plane();
        let count = (cpg * plane) as f64;
        let gamma = params.data(self.gamma);
        let beta = params.data(self.beta);
        let mut xhat = x.same_shape();
        let mut y = x.same_shape();
        let mut inv_std = vec![0.0f32; x.n * g];
        let mut sum = vec![0.0f64; g];
        let mut sq = vec![0.0f64; g];
        for b in 0..x.n {
            let sample = &x.data[b * plane * c..(b + 1) * plane * c];
            sum.iter_mut().for_each(|v| *v = 0.0);
            sq.iter_mut().for_each(|v| *v = 0.0);
            for px in sample.chunks_exact(c) {
                for (gi, grp) in px.chunks_exact(cpg).enumerate() {
                    let mut s1 = 0.0f32;
                    let mut s2 = 0.0f32;
                    for &v in grp {
                        s1 += v;
                        s2 += v * v;
                    }
                    sum[gi] += s1 as f64;
                    sq[gi] += s2 as f64;
                }
            }
            let mut mean = vec![0.0f32; g];
            for gi in 0..g {
                let m = sum[gi] / count;
                let var = (sq[gi] / count - m * m).max(0.0);
                mean[gi] = m as f32;
                inv_std[b * g + gi] = (1.0 / (var + NORM_EPS).sqrt()) as f32;
            }
            let istd = &inv_std[b * g..(b + 1) * g];
            let range = b * plane * c..(b + 1) * plane * c;
            for ((px, hx), yx) in sample
                .chunks_exact(c)
                .zip(xhat.data[range.clone()].chunks_exact_mut(c))
                .zip(y.data[range].chunks_exact_mut(c))
            {
                for gi in 0..g {
                    let (m, is) = (mean[gi], istd[gi]);
                    for ch in gi * cpg..(gi + 1) * cpg {
                        let h = (px[ch] - m) * is;
                        hx[ch] = h;
                        yx[ch] = gamma[ch] * h + beta[ch];
                    }
                }
            }
        }
        (y, NormCache { xhat, inv_std })
    }

    pub fn backward(&self, params: &ParamSet, grads: &mut Grads, cache: &NormCache, dy: &Act) -> Act {
        let (c, g) = (self.channels, self.groups);
        let cpg = c / g;
        let plane = dy.plane();
        let count = (cpg * plane) as f32;
        let gamma = params.data(self.gamma);
        let mut dgamma = vec![0.0f32; c];
        let mut dbeta = vec![0.0f32; c];
        let mut dx = dy.same_shape();
        let mut mean_d = vec![0.0f32; g];
        let mut mean_dh = vec![0.0f32; g];
        for b in 0..dy.n {
            let range = b * plane * c..(b + 1) * plane * c;
            let dys = &dy.data[range.clone()];
            let hs = &cache.xhat.data[range.clone()];
            mean_d.iter_mut().for_each(|v| *v = 0.0);
            mean_dh.iter_mut().for_each(|v| *v = 0.0);
            for (dpx, hpx) in dys.chunks_exact(c).zip(hs.chunks_exact(c)) {
                for gi in 0..g {
                    let mut sd = 0.0f32;
                    let mut sdh = 0.0f32;
                    for ch in gi * cpg..(gi + 1) * cpg {
                        let d = dpx[ch];
                        let h = hpx[ch];
                        dgamma[ch] += d * h;
                        dbeta[ch] += d;
                        let dg = d * gamma[ch];
                        sd += dg;
                        sdh += dg * h;
                    }
                    mean_d[gi] += sd;
                    mean_dh[gi] += sdh;
                }
            }
            for gi in 0..g {
                mean_d[gi] /= count;
                mean_dh[gi] /= count;
            }
            let istd = &cache.inv_std[b * g..(b + 1) * g];
            for ((dpx, hpx), out) in dys.chunks_exact(c).zip(hs.chunks_exact(c)).zip(dx.data[range].chunks_exact_mut(c)) {
                for gi in 0..g {
                    let (is, md, mdh) = (istd[gi], mean_d[gi], mean_dh[gi]);
                    for ch in gi * cpg..(gi + 1) * cpg {
                        out[ch] = is * (dpx[ch] * gamma[ch] - md - hpx[ch] * mdh);
                    }
                }
            }
        }
        grads.get_mut(self.gamma).iter_mut().zip(&dgamma).for_each(|(a, b)| *a += b);
        grads.get_mut(self.beta).iter_mut().zip(&dbeta).for_each(|(a, b)| *a += b);
        dx
    }
}

pub fn relu_inplace(x: &mut Act) {
    x.data.iter_mut().for_each(|v| *v = v.max(0.0));
}

/// Zero the gradient wherever the (post-ReLU) output was not positive.
pub fn relu_backward_inplace(dy: &mut Act, out: &Act) {
    for (d, &o) in dy.data.iter_mut().zip(&out.data) {
        if o <= 0.0 {
            *d = 0.0;
        }
    }
}

/// Global average pooling, returning (sample, channel) rows.
pub fn global_avg_pool(x: &Act) -> Vec<Vec<f32>> {
    let plane = x.plane();
    (0..x.n)
        .map(|b| {
            let mut acc = vec![0.0f32; x.c];
            for px in x.data[b * plane * x.c..(b + 1) * plane * x.c].chunks_exact(x.c) {
                acc.iter_mut().zip(px).for_each(|(a, v)| *a += v);
            }
            acc.iter_mut().for_each(|a| *a /= plane as f32);
            acc
        })
        .collect()
}

pub fn global_avg_pool_backward(grad: &[Vec<f32>], h: usize, w: usize, c: usize) -> Act {
    let n = grad.len();
    let mut dx = Act::zeros(n, h, w, c);
    let plane = h * w;
    for (b, row) in grad.iter().enumerate() {
        for px in dx.data[b * plane * c..(b + 1) * plane * c].chunks_exact_mut(c) {
            px.iter_mut().zip(row).for_each(|(d, g)| *d = g / plane as f32);
        }
    }
    dx
}
