//! Layer kernels with hand-derived backward passes.
//!
//! Parameters live in one flat vector; each layer records offsets into it.
//! Backward functions accumulate into a gradient vector of the same layout.

use matrixmultiply::dgemm;

use super::stack::ChannelStack;

const NORM_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

/// `c (m x n) = beta * c + a (m x k) * b (k x n)` with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: callers pass slices sized for the given dimensions and strides;
    // matrixmultiply reads a/b and writes c strictly within those bounds.
    unsafe {
        dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Square convolution, stride 1, zero padding `k / 2`.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub w_off: usize,
    pub b_off: usize,
}

impl Conv2d {
    pub fn weight_len(&self) -> usize {
        self.cout * self.cin * self.k * self.k
    }

    fn cols(&self, x: &ChannelStack) -> Vec<f64> {
        let (h, w, k) = (x.height, x.width, self.k);
        let pad = (k / 2) as isize;
        let hw = h * w;
        let mut cols = vec![0.0; self.cin * k * k * hw];
        for ci in 0..self.cin {
            let plane = x.plane(ci);
            for ky in 0..k {
                for kx in 0..k {
                    let row0 = ((ci * k + ky) * k + kx) * hw;
                    let dy = ky as isize - pad;
                    let dx = kx as isize - pad;
                    let x0 = (-dx).max(0) as usize;
                    let x1 = (w as isize - dx).min(w as isize) as usize;
                    for y in 0..h {
                        let sy = y as isize + dy;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                        let dst = &mut cols[row0 + y * w..row0 + (y + 1) * w];
                        let sx0 = (x0 as isize + dx) as usize;
                        dst[x0..x1].copy_from_slice(&src[sx0..sx0 + (x1 - x0)]);
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &[f64], h: usize, w: usize) -> ChannelStack {
        let k = self.k;
        let pad = (k / 2) as isize;
        let hw = h * w;
        let mut gx = ChannelStack::zeros(self.cin, h, w);
        for ci in 0..self.cin {
            let plane = gx.plane_mut(ci);
            for ky in 0..k {
                for kx in 0..k {
                    let row0 = ((ci * k + ky) * k + kx) * hw;
                    let dy = ky as isize - pad;
                    let dx = kx as isize - pad;
                    let x0 = (-dx).max(0) as usize;
                    let x1 = (w as isize - dx).min(w as isize) as usize;
                    for y in 0..h {
                        let sy = y as isize + dy;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let src = &cols[row0 + y * w + x0..row0 + y * w + x1];
                        let sx0 = (x0 as isize + dx) as usize;
                        let dst = &mut plane[sy as usize * w + sx0..sy as usize * w + sx0 + (x1 - x0)];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                }
            }
        }
        gx
    }

    pub fn forward(&self, p: &[f64], x: &ChannelStack) -> ChannelStack {
        debug_assert_eq!(x.channels, self.cin);
        let hw = x.plane_len();
        let kk = self.cin * self.k * self.k;
        let mut out = ChannelStack::zeros(self.cout, x.height, x.width);
        for co in 0..self.cout {
            out.plane_mut(co).fill(p[self.b_off + co]);
        }
        let w = &p[self.w_off..self.w_off + self.weight_len()];
        if self.k == 1 {
            gemm(self.cout, kk, hw, w, (kk as isize, 1), &x.data, (hw as isize, 1), 1.0, &mut out.data);
        } else {
            let cols = self.cols(x);
            gemm(self.cout, kk, hw, w, (kk as isize, 1), &cols, (hw as isize, 1), 1.0, &mut out.data);
        }
        out
    }

    pub fn backward(&self, p: &[f64], x: &ChannelStack, gy: &ChannelStack, g: &mut [f64]) -> ChannelStack {
        let hw = x.plane_len();
        let kk = self.cin * self.k * self.k;
        for co in 0..self.cout {
            g[self.b_off + co] += gy.plane(co).iter().sum::<f64>();
        }
        let cols_owned;
        let cols: &[f64] = if self.k == 1 {
            &x.data
        } else {
            cols_owned = self.cols(x);
            &cols_owned
        };
        let wlen = self.weight_len();
        // dW += gy (cout x hw) * cols^T (hw x kk)
        gemm(
            self.cout,
            hw,
            kk,
            &gy.data,
            (hw as isize, 1),
            cols,
            (1, hw as isize),
            1.0,
            &mut g[self.w_off..self.w_off + wlen],
        );
        // dcols = W^T (kk x cout) * gy (cout x hw)
        let w = &p[self.w_off..self.w_off + wlen];
        let mut gcols = vec![0.0; kk * hw];
        gemm(kk, self.cout, hw, w, (1, kk as isize), &gy.data, (hw as isize, 1), 0.0, &mut gcols);
        if self.k == 1 {
            ChannelStack::new(self.cin, x.height, x.width, gcols).expect("1x1 gradient shape")
        } else {
            self.col2im(&gcols, x.height, x.width)
        }
    }
}

/// 2x2 stride-2 transposed convolution. Weight rows are indexed `(cout, a, b)`.
#[derive(Clone, Debug)]
pub struct ConvTranspose2x2 {
    pub cin: usize,
    pub cout: usize,
    pub w_off: usize,
    pub b_off: usize,
}

impl ConvTranspose2x2 {
    pub fn weight_len(&self) -> usize {
        self.cin * self.cout * 4
    }

    pub fn forward(&self, p: &[f64], x: &ChannelStack) -> ChannelStack {
        let (h, w) = (x.height, x.width);
        let hw = h * w;
        let mut y4 = vec![0.0; 4 * self.cout * hw];
        let wm = &p[self.w_off..self.w_off + self.weight_len()];
        gemm(4 * self.cout, self.cin, hw, wm, (self.cin as isize, 1), &x.data, (hw as isize, 1), 0.0, &mut y4);
        let mut out = ChannelStack::zeros(self.cout, 2 * h, 2 * w);
        let ow = 2 * w;
        for co in 0..self.cout {
            let bias = p[self.b_off + co];
            let plane = out.plane_mut(co);
            for ab in 0..4 {
                let (a, b) = (ab / 2, ab % 2);
                let src = &y4[(co * 4 + ab) * hw..(co * 4 + ab + 1) * hw];
                for i in 0..h {
                    for j in 0..w {
                        plane[(2 * i + a) * ow + 2 * j + b] = src[i * w + j] + bias;
                    }
                }
            }
        }
        out
    }

    pub fn backward(&self, p: &[f64], x: &ChannelStack, gy: &ChannelStack, g: &mut [f64]) -> ChannelStack {
        let (h, w) = (x.height, x.width);
        let hw = h * w;
        let ow = 2 * w;
        let mut gy4 = vec![0.0; 4 * self.cout * hw];
        for co in 0..self.cout {
            let plane = gy.plane(co);
            g[self.b_off + co] += plane.iter().sum::<f64>();
            for ab in 0..4 {
                let (a, b) = (ab / 2, ab % 2);
                let dst = &mut gy4[(co * 4 + ab) * hw..(co * 4 + ab + 1) * hw];
                for i in 0..h {
                    for j in 0..w {
                        dst[i * w + j] = plane[(2 * i + a) * ow + 2 * j + b];
                    }
                }
            }
        }
        let wlen = self.weight_len();
        // dW (4cout x cin) += gy4 (4cout x hw) * x^T (hw x cin)
        gemm(
            4 * self.cout,
            hw,
            self.cin,
            &gy4,
            (hw as isize, 1),
            &x.data,
            (1, hw as isize),
            1.0,
            &mut g[self.w_off..self.w_off + wlen],
        );
        let wm = &p[self.w_off..self.w_off + wlen];
        let mut gx = ChannelStack::zeros(self.cin, h, w);
        gemm(self.cin, 4 * self.cout, hw, wm, (1, self.cin as isize), &gy4, (hw as isize, 1), 0.0, &mut gx.data);
        gx
    }
}

/// Group normalization with per-channel affine parameters.
#[derive(Clone, Debug)]
pub struct GroupNorm {
    pub channels: usize,
    pub groups: usize,
    pub gamma_off: usize,
    pub beta_off: usize,
}

pub struct NormCache {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
}

impl GroupNorm {
    /// Channels per group is the largest divisor of `channels` not above 8.
    pub fn group_size(channels: usize) -> usize {
        let mut gs = channels.min(8);
        while !channels.is_multiple_of(gs) {
            gs -= 1;
        }
        gs
    }

    pub fn forward(&self, p: &[f64], x: &ChannelStack) -> (ChannelStack, NormCache) {
        let hw = x.plane_len();
        let per = self.channels / self.groups * hw;
        let mut xhat = vec![0.0; x.data.len()];
        let mut inv_std = Vec::with_capacity(self.groups);
        for gi in 0..self.groups {
            let seg = &x.data[gi * per..(gi + 1) * per];
            let mean = seg.iter().sum::<f64>() / per as f64;
            let var = seg.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / per as f64;
            let inv = 1.0 / (var + NORM_EPS).sqrt();
            inv_std.push(inv);
            for (o, v) in xhat[gi * per..(gi + 1) * per].iter_mut().zip(seg) {
                *o = (v - mean) * inv;
            }
        }
        let mut out = ChannelStack::zeros(x.channels, x.height, x.width);
        for c in 0..self.channels {
            let (gm, bt) = (p[self.gamma_off + c], p[self.beta_off + c]);
            for (o, v) in out.plane_mut(c).iter_mut().zip(&xhat[c * hw..(c + 1) * hw]) {
                *o = gm * v + bt;
            }
        }
        (out, NormCache { xhat, inv_std })
    }

    pub fn backward(&self, p: &[f64], cache: &NormCache, gy: &ChannelStack, g: &mut [f64]) -> ChannelStack {
        let hw = gy.plane_len();
        let cpg = self.channels / self.groups;
        let per = cpg * hw;
        let mut gxhat = vec![0.0; gy.data.len()];
        for c in 0..self.channels {
            let gm = p[self.gamma_off + c];
            let gyp = gy.plane(c);
            let xh = &cache.xhat[c * hw..(c + 1) * hw];
            let (mut sg, mut sb) = (0.0, 0.0);
            for ((d, gv), xv) in gxhat[c * hw..(c + 1) * hw].iter_mut().zip(gyp).zip(xh) {
                *d = gv * gm;
                sg += gv * xv;
                sb += gv;
            }
            g[self.gamma_off + c] += sg;
            g[self.beta_off + c] += sb;
        }
        let mut gx = ChannelStack::zeros(gy.channels, gy.height, gy.width);
        let n = per as f64;
        for gi in 0..self.groups {
            let r = gi * per..(gi + 1) * per;
            let gxh = &gxhat[r.clone()];
            let xh = &cache.xhat[r.clone()];
            let s1: f64 = gxh.iter().sum();
            let s2: f64 = gxh.iter().zip(xh).map(|(a, b)| a * b).sum();
            let inv = cache.inv_std[gi];
            for ((o, a), b) in gx.data[r].iter_mut().zip(gxh).zip(xh) {
                *o = inv / n * (n * a - s1 - b * s2);
            }
        }
        gx
    }
}

pub fn gelu(v: f64) -> f64 {
    0.5 * v * (1.0 + (GELU_C * (v + GELU_A * v * v * v)).tanh())
}

pub fn gelu_grad(v: f64) -> f64 {
    let t = (GELU_C * (v + GELU_A * v * v * v)).tanh();
    0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * v * v)
}

pub fn gelu_forward(x: &ChannelStack) -> ChannelStack {
    let mut out = x.clone();
    out.data.iter_mut().for_each(|v| *v = gelu(*v));
    out
}

pub fn gelu_backward(pre: &ChannelStack, gy: &ChannelStack) -> ChannelStack {
    let mut gx = gy.clone();
    for (g, v) in gx.data.iter_mut().zip(&pre.data) {
        *g *= gelu_grad(*v);
    }
    gx
}

/// 2x2 max pooling. Returns the pooled stack and flat argmax indices.
pub fn maxpool_forward(x: &ChannelStack) -> (ChannelStack, Vec<u32>) {
    let (h, w) = (x.height / 2, x.width / 2);
    let mut out = ChannelStack::zeros(x.channels, h, w);
    let mut arg = vec![0u32; x.channels * h * w];
    for c in 0..x.channels {
        let plane = x.plane(c);
        let base = c * x.plane_len();
        for i in 0..h {
            for j in 0..w {
                let mut best = (2 * i) * x.width + 2 * j;
                for (a, b) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = (2 * i + a) * x.width + 2 * j + b;
                    if plane[idx] > plane[best] {
                        best = idx;
                    }
                }
                out.data[(c * h + i) * w + j] = plane[best];
                arg[(c * h + i) * w + j] = (base + best) as u32;
            }
        }
    }
    (out, arg)
}

pub fn maxpool_backward(arg: &[u32], in_shape: (usize, usize, usize), gy: &ChannelStack) -> ChannelStack {
    let mut gx = ChannelStack::zeros(in_shape.0, in_shape.1, in_shape.2);
    for (g, &a) in gy.data.iter().zip(arg) {
        gx.data[a as usize] += g;
    }
    gx
}

/// Dense layer, row-major `(out, in)` weights.
#[derive(Clone, Debug)]
pub struct Linear {
    pub fan_in: usize,
    pub fan_out: usize,
    pub w_off: usize,
    pub b_off: usize,
}

impl Linear {
    pub fn forward(&self, p: &[f64], x: &[f64]) -> Vec<f64> {
        (0..self.fan_out)
            .map(|o| {
                let row = &p[self.w_off + o * self.fan_in..self.w_off + (o + 1) * self.fan_in];
                p[self.b_off + o] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect()
    }

    pub fn backward(&self, p: &[f64], x: &[f64], gy: &[f64], g: &mut [f64]) -> Vec<f64> {
        let mut gx = vec![0.0; self.fan_in];
        for (o, &go) in gy.iter().enumerate() {
            g[self.b_off + o] += go;
            let w0 = self.w_off + o * self.fan_in;
            for i in 0..self.fan_in {
                g[w0 + i] += go * x[i];
                gx[i] += go * p[w0 + i];
            }
        }
        gx
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct-loop convolution used as an independent reference.
    fn naive_conv(conv: &Conv2d, p: &[f64], x: &ChannelStack) -> ChannelStack {
        let (h, w, k) = (x.height, x.width, conv.k);
        let pad = (k / 2) as isize;
        let mut out = ChannelStack::zeros(conv.cout, h, w);
        for co in 0..conv.cout {
            for y in 0..h {
                for xx in 0..w {
                    let mut acc = p[conv.b_off + co];
                    for ci in 0..conv.cin {
                        for ky in 0..k {
                            for kx in 0..k {
                                let sy = y as isize + ky as isize - pad;
                                let sx = xx as isize + kx as isize - pad;
                                if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                    continue;
                                }
                                let wi = conv.w_off + ((co * conv.cin + ci) * k + ky) * k + kx;
                                acc += p[wi] * x.plane(ci)[sy as usize * w + sx as usize];
                            }
                        }
                    }
                    out.data[(co * h + y) * w + xx] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn im2col_conv_matches_direct_loops() {
        let conv = Conv2d {
            cin: 3,
            cout: 2,
            k: 3,
            w_off: 0,
            b_off: 54,
        };
        let p: Vec<f64> = (0..56).map(|i| ((i * 37 % 17) as f64 - 8.0) / 10.0).collect();
        let x = ChannelStack::new(3, 5, 6, (0..90).map(|i| ((i * 13 % 11) as f64) / 7.0).collect()).unwrap();
        let fast = conv.forward(&p, &x);
        let slow = naive_conv(&conv, &p, &x);
        for (a, b) in fast.data.iter().zip(&slow.data) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn gelu_derivative_matches_difference() {
        for &v in &[-3.0, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (gelu(v + h) - gelu(v - h)) / (2.0 * h);
            assert!((fd - gelu_grad(v)).abs() < 1e-8);
        }
    }

    #[test]
    fn group_size_divides_channels() {
        assert_eq!(GroupNorm::group_size(16), 8);
        assert_eq!(GroupNorm::group_size(4), 4);
        assert_eq!(GroupNorm::group_size(12), 6);
        assert_eq!(GroupNorm::group_size(1), 1);
    }
}
