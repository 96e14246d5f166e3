//! Spatial kernels: convolution, transposed convolution, pooling,
//! nearest-neighbor upsampling. All NCHW.
//!
//! The convolution loops hoist the padding bounds out of the inner loop:
//! per kernel tap, the valid output interval is computed once and the
//! inner loop runs branch-free over contiguous rows.

use super::{Scalar, Tensor};
use rayon::prelude::*;

fn conv_out_dim(input: usize, k: usize, stride: usize, pad: usize) -> usize {
    assert!(
        input + 2 * pad >= k,
        "conv kernel {k} larger than padded input {}",
        input + 2 * pad
    );
    (input + 2 * pad - k) / stride + 1
}

/// Indices i in [0, count) whose target t = i·stride + k − pad lies in
/// [0, limit); returned as [lo, hi).
#[inline]
fn tap_range(count: usize, limit: usize, stride: usize, k: usize, pad: usize) -> (usize, usize) {
    let lo = if pad > k { (pad - k).div_ceil(stride) } else { 0 };
    let max_t = limit + pad;
    let hi = if max_t > k {
        (((max_t - 1 - k) / stride) + 1).min(count)
    } else {
        0
    };
    (lo.min(hi), hi)
}

/// out_row[i] += w · src_row[i·stride + off] over [lo, hi).
#[inline]
fn axpy_gather<T: Scalar>(
    out_row: &mut [T],
    src_row: &[T],
    wv: T,
    lo: usize,
    hi: usize,
    stride: usize,
    off: isize,
) {
    if stride == 1 {
        let s0 = (lo as isize + off) as usize;
        for (o, &s) in out_row[lo..hi].iter_mut().zip(&src_row[s0..s0 + (hi - lo)]) {
            *o = *o + wv * s;
        }
    } else {
        for (i, o) in out_row[lo..hi].iter_mut().enumerate() {
            let s = ((lo + i) * stride) as isize + off;
            *o = *o + wv * src_row[s as usize];
        }
    }
}

/// out_row[i·stride + off] += w · src_row[i] over [lo, hi).
#[inline]
fn axpy_scatter<T: Scalar>(
    out_row: &mut [T],
    src_row: &[T],
    wv: T,
    lo: usize,
    hi: usize,
    stride: usize,
    off: isize,
) {
    if stride == 1 {
        let s0 = (lo as isize + off) as usize;
        for (o, &s) in out_row[s0..s0 + (hi - lo)].iter_mut().zip(&src_row[lo..hi]) {
            *o = *o + wv * s;
        }
    } else {
        for (i, &s) in src_row[lo..hi].iter().enumerate() {
            let t = ((lo + i) * stride) as isize + off;
            out_row[t as usize] = out_row[t as usize] + wv * s;
        }
    }
}

/// dot of src_a[i] · src_b[i·stride + off] over [lo, hi).
#[inline]
fn dot_gather<T: Scalar>(
    a_row: &[T],
    b_row: &[T],
    lo: usize,
    hi: usize,
    stride: usize,
    off: isize,
) -> T {
    let mut acc = T::zero();
    if stride == 1 {
        let s0 = (lo as isize + off) as usize;
        for (&a, &b) in a_row[lo..hi].iter().zip(&b_row[s0..s0 + (hi - lo)]) {
            acc = acc + a * b;
        }
    } else {
        for (i, &a) in a_row[lo..hi].iter().enumerate() {
            let s = ((lo + i) * stride) as isize + off;
            acc = acc + a * b_row[s as usize];
        }
    }
    acc
}

struct ConvGeom {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    stride: usize,
    pad: usize,
}

/// Forward convolution into `out` (already bias-initialized).
fn conv_forward<T: Scalar>(x: &[T], k: &[T], out: &mut [T], g: &ConvGeom) {
    let run = |(plane_idx, plane): (usize, &mut [T])| {
        let ni = plane_idx / g.o;
        let oi = plane_idx % g.o;
        let x_img = &x[ni * g.c * g.h * g.w..(ni + 1) * g.c * g.h * g.w];
        let filt = &k[oi * g.c * g.kh * g.kw..(oi + 1) * g.c * g.kh * g.kw];
        for ci in 0..g.c {
            let x_chan = &x_img[ci * g.h * g.w..(ci + 1) * g.h * g.w];
            for ky in 0..g.kh {
                let (oy_lo, oy_hi) = tap_range(g.ho, g.h, g.stride, ky, g.pad);
                for oy in oy_lo..oy_hi {
                    let sy = oy * g.stride + ky - g.pad;
                    let x_row = &x_chan[sy * g.w..(sy + 1) * g.w];
                    let o_row = &mut plane[oy * g.wo..(oy + 1) * g.wo];
                    for kx in 0..g.kw {
                        let wv = filt[(ci * g.kh + ky) * g.kw + kx];
                        if wv == T::zero() {
                            continue;
                        }
                        let (lo, hi) = tap_range(g.wo, g.w, g.stride, kx, g.pad);
                        axpy_gather(o_row, x_row, wv, lo, hi, g.stride, kx as isize - g.pad as isize);
                    }
                }
            }
        }
    };
    let work = g.n * g.o * g.ho * g.wo * g.c * g.kh * g.kw;
    if work >= 1 << 22 && rayon::current_num_threads() > 1 {
        out.par_chunks_mut(g.ho * g.wo).enumerate().for_each(run);
    } else {
        out.chunks_mut(g.ho * g.wo).enumerate().for_each(run);
    }
}

/// Gradient w.r.t. the convolution input.
fn conv_backward_input<T: Scalar>(grad: &[T], k: &[T], gx: &mut [T], g: &ConvGeom) {
    for ni in 0..g.n {
        for ci in 0..g.c {
            let gx_chan = &mut gx[(ni * g.c + ci) * g.h * g.w..(ni * g.c + ci + 1) * g.h * g.w];
            for oi in 0..g.o {
                let filt = &k[(oi * g.c + ci) * g.kh * g.kw..(oi * g.c + ci + 1) * g.kh * g.kw];
                let g_plane = &grad[(ni * g.o + oi) * g.ho * g.wo..(ni * g.o + oi + 1) * g.ho * g.wo];
                for ky in 0..g.kh {
                    let (oy_lo, oy_hi) = tap_range(g.ho, g.h, g.stride, ky, g.pad);
                    for oy in oy_lo..oy_hi {
                        let sy = oy * g.stride + ky - g.pad;
                        let g_row = &g_plane[oy * g.wo..(oy + 1) * g.wo];
                        let gx_row = &mut gx_chan[sy * g.w..(sy + 1) * g.w];
                        for kx in 0..g.kw {
                            let wv = filt[ky * g.kw + kx];
                            if wv == T::zero() {
                                continue;
                            }
                            let (lo, hi) = tap_range(g.wo, g.w, g.stride, kx, g.pad);
                            axpy_scatter(
                                gx_row,
                                g_row,
                                wv,
                                lo,
                                hi,
                                g.stride,
                                kx as isize - g.pad as isize,
                            );
                        }
                    }
                }
            }
        }
    }
}

/// Gradient w.r.t. the convolution kernel.
fn conv_backward_kernel<T: Scalar>(grad: &[T], x: &[T], gk: &mut [T], g: &ConvGeom) {
    for oi in 0..g.o {
        for ci in 0..g.c {
            for ky in 0..g.kh {
                let (oy_lo, oy_hi) = tap_range(g.ho, g.h, g.stride, ky, g.pad);
                for kx in 0..g.kw {
                    let (lo, hi) = tap_range(g.wo, g.w, g.stride, kx, g.pad);
                    let mut acc = T::zero();
                    for ni in 0..g.n {
                        let x_chan =
                            &x[(ni * g.c + ci) * g.h * g.w..(ni * g.c + ci + 1) * g.h * g.w];
                        let g_plane = &grad
                            [(ni * g.o + oi) * g.ho * g.wo..(ni * g.o + oi + 1) * g.ho * g.wo];
                        for oy in oy_lo..oy_hi {
                            let sy = oy * g.stride + ky - g.pad;
                            acc = acc
                                + dot_gather(
                                    &g_plane[oy * g.wo..(oy + 1) * g.wo],
                                    &x_chan[sy * g.w..(sy + 1) * g.w],
                                    lo,
                                    hi,
                                    g.stride,
                                    kx as isize - g.pad as isize,
                                );
                        }
                    }
                    gk[((oi * g.c + ci) * g.kh + ky) * g.kw + kx] = acc;
                }
            }
        }
    }
}

impl<T: Scalar> Tensor<T> {
    /// 2D convolution, zero padding. `kernel` is `[O, C, kh, kw]`,
    /// `bias` is `[O]`.
    pub fn conv2d(
        &self,
        kernel: &Tensor<T>,
        bias: Option<&Tensor<T>>,
        stride: usize,
        pad: usize,
    ) -> Tensor<T> {
        assert!(stride >= 1, "conv2d stride must be >= 1");
        let [n, c, h, w] = dims4(self.shape(), "conv2d input");
        let [o, ck, kh, kw] = dims4(kernel.shape(), "conv2d kernel");
        assert_eq!(
            c, ck,
            "conv2d channel mismatch: input has {c}, kernel expects {ck}"
        );
        if let Some(b) = bias {
            assert_eq!(b.shape(), &[o], "conv2d bias must be [{o}]");
        }
        let ho = conv_out_dim(h, kh, stride, pad);
        let wo = conv_out_dim(w, kw, stride, pad);
        let geom = ConvGeom {
            n,
            c,
            h,
            w,
            o,
            kh,
            kw,
            ho,
            wo,
            stride,
            pad,
        };

        let x_ref = self.data();
        let k_ref = kernel.data();
        let mut out = match bias {
            Some(b) => {
                let bd = b.data();
                let mut v = Vec::with_capacity(n * o * ho * wo);
                for _ in 0..n {
                    for oi in 0..o {
                        v.extend(std::iter::repeat_n(bd[oi], ho * wo));
                    }
                }
                v
            }
            None => vec![T::zero(); n * o * ho * wo],
        };
        conv_forward(&x_ref, &k_ref, &mut out, &geom);
        drop(x_ref);
        drop(k_ref);

        let mut parents = vec![self.clone(), kernel.clone()];
        if let Some(b) = bias {
            parents.push(b.clone());
        }
        Tensor::from_op(
            vec![n, o, ho, wo],
            out,
            parents,
            Box::new(move |grad, _out, parents| {
                let input = &parents[0];
                let kernel = &parents[1];
                if input.requires_grad() {
                    let kd = kernel.data();
                    let mut gx = vec![T::zero(); input.numel()];
                    conv_backward_input(grad, &kd, &mut gx, &geom);
                    drop(kd);
                    input.accumulate_grad(&gx);
                }
                if kernel.requires_grad() {
                    let xd = input.data();
                    let mut gk = vec![T::zero(); kernel.numel()];
                    conv_backward_kernel(grad, &xd, &mut gk, &geom);
                    drop(xd);
                    kernel.accumulate_grad(&gk);
                }
                if parents.len() == 3 && parents[2].requires_grad() {
                    let mut gb = vec![T::zero(); geom.o];
                    for ni in 0..geom.n {
                        for (oi, gbo) in gb.iter_mut().enumerate() {
                            let plane = &grad[(ni * geom.o + oi) * geom.ho * geom.wo
                                ..(ni * geom.o + oi + 1) * geom.ho * geom.wo];
                            for &gv in plane {
                                *gbo = *gbo + gv;
                            }
                        }
                    }
                    parents[2].accumulate_grad(&gb);
                }
            }),
        )
    }

    /// Transposed 2D convolution. `kernel` is `[C_in, C_out, kh, kw]`.
    /// Output spatial size: `(in − 1)·stride − 2·pad + k + output_pad`.
    pub fn conv_transpose2d(
        &self,
        kernel: &Tensor<T>,
        bias: Option<&Tensor<T>>,
        stride: usize,
        pad: usize,
        output_pad: usize,
    ) -> Tensor<T> {
        let [n, c, h, w] = dims4(self.shape(), "conv_transpose2d input");
        let [ck, o, kh, kw] = dims4(kernel.shape(), "conv_transpose2d kernel");
        assert_eq!(c, ck, "conv_transpose2d channel mismatch");
        if let Some(b) = bias {
            assert_eq!(b.shape(), &[o], "conv_transpose2d bias must be [{o}]");
        }
        let ho_full = (h - 1) * stride + kh + output_pad;
        let wo_full = (w - 1) * stride + kw + output_pad;
        assert!(
            ho_full > 2 * pad && wo_full > 2 * pad,
            "conv_transpose2d pad too large"
        );
        let ho = ho_full - 2 * pad;
        let wo = wo_full - 2 * pad;

        let x_ref = self.data();
        let k_ref = kernel.data();
        let x: &[T] = &x_ref;
        let k: &[T] = &k_ref;
        let mut out = match bias {
            Some(b) => {
                let bd = b.data();
                let mut v = Vec::with_capacity(n * o * ho * wo);
                for _ in 0..n {
                    for oi in 0..o {
                        v.extend(std::iter::repeat_n(bd[oi], ho * wo));
                    }
                }
                v
            }
            None => vec![T::zero(); n * o * ho * wo],
        };
        // scatter input rows into output rows; per (n, o) plane
        for ni in 0..n {
            for oi in 0..o {
                let plane = &mut out[(ni * o + oi) * ho * wo..(ni * o + oi + 1) * ho * wo];
                for ci in 0..c {
                    let x_chan = &x[(ni * c + ci) * h * w..(ni * c + ci + 1) * h * w];
                    let filt = &k[(ci * o + oi) * kh * kw..(ci * o + oi + 1) * kh * kw];
                    for ky in 0..kh {
                        let (iy_lo, iy_hi) = tap_range(h, ho, stride, ky, pad);
                        for iy in iy_lo..iy_hi {
                            let oy = iy * stride + ky - pad;
                            let x_row = &x_chan[iy * w..(iy + 1) * w];
                            let o_row = &mut plane[oy * wo..(oy + 1) * wo];
                            for kx in 0..kw {
                                let wv = filt[ky * kw + kx];
                                if wv == T::zero() {
                                    continue;
                                }
                                let (lo, hi) = tap_range(w, wo, stride, kx, pad);
                                axpy_scatter(
                                    o_row,
                                    x_row,
                                    wv,
                                    lo,
                                    hi,
                                    stride,
                                    kx as isize - pad as isize,
                                );
                            }
                        }
                    }
                }
            }
        }
        drop(x_ref);
        drop(k_ref);

        let mut parents = vec![self.clone(), kernel.clone()];
        if let Some(b) = bias {
            parents.push(b.clone());
        }
        Tensor::from_op(
            vec![n, o, ho, wo],
            out,
            parents,
            Box::new(move |grad, _out, parents| {
                let input = &parents[0];
                let kernel = &parents[1];
                if input.requires_grad() {
                    // d/dx is an ordinary correlation of the output grad
                    let kd = kernel.data();
                    let mut gx = vec![T::zero(); input.numel()];
                    for ni in 0..n {
                        for ci in 0..c {
                            let gx_chan =
                                &mut gx[(ni * c + ci) * h * w..(ni * c + ci + 1) * h * w];
                            for oi in 0..o {
                                let filt =
                                    &kd[(ci * o + oi) * kh * kw..(ci * o + oi + 1) * kh * kw];
                                let g_plane = &grad
                                    [(ni * o + oi) * ho * wo..(ni * o + oi + 1) * ho * wo];
                                for ky in 0..kh {
                                    let (iy_lo, iy_hi) = tap_range(h, ho, stride, ky, pad);
                                    for iy in iy_lo..iy_hi {
                                        let oy = iy * stride + ky - pad;
                                        let g_row = &g_plane[oy * wo..(oy + 1) * wo];
                                        let gx_row = &mut gx_chan[iy * w..(iy + 1) * w];
                                        for kx in 0..kw {
                                            let wv = filt[ky * kw + kx];
                                            if wv == T::zero() {
                                                continue;
                                            }
                                            let (lo, hi) = tap_range(w, wo, stride, kx, pad);
                                            axpy_gather(
                                                gx_row,
                                                g_row,
                                                wv,
                                                lo,
                                                hi,
                                                stride,
                                                kx as isize - pad as isize,
                                            );
                                        }
                                    }
                                }
                            }
                        }
                    }
                    drop(kd);
                    input.accumulate_grad(&gx);
                }
                if kernel.requires_grad() {
                    let xd = input.data();
                    let mut gk = vec![T::zero(); kernel.numel()];
                    for ci in 0..c {
                        for oi in 0..o {
                            for ky in 0..kh {
                                let (iy_lo, iy_hi) = tap_range(h, ho, stride, ky, pad);
                                for kx in 0..kw {
                                    let (lo, hi) = tap_range(w, wo, stride, kx, pad);
                                    let mut acc = T::zero();
                                    for ni in 0..n {
                                        let x_chan = &xd[(ni * c + ci) * h * w
                                            ..(ni * c + ci + 1) * h * w];
                                        let g_plane = &grad[(ni * o + oi) * ho * wo
                                            ..(ni * o + oi + 1) * ho * wo];
                                        for iy in iy_lo..iy_hi {
                                            let oy = iy * stride + ky - pad;
                                            acc = acc
                                                + dot_gather(
                                                    &x_chan[iy * w..(iy + 1) * w],
                                                    &g_plane[oy * wo..(oy + 1) * wo],
                                                    lo,
                                                    hi,
                                                    stride,
                                                    kx as isize - pad as isize,
                                                );
                                        }
                                    }
                                    gk[((ci * o + oi) * kh + ky) * kw + kx] = acc;
                                }
                            }
                        }
                    }
                    drop(xd);
                    kernel.accumulate_grad(&gk);
                }
                if parents.len() == 3 && parents[2].requires_grad() {
                    let mut gb = vec![T::zero(); o];
                    for ni in 0..n {
                        for (oi, gbo) in gb.iter_mut().enumerate() {
                            let g_plane =
                                &grad[(ni * o + oi) * ho * wo..(ni * o + oi + 1) * ho * wo];
                            for &gv in g_plane {
                                *gbo = *gbo + gv;
                            }
                        }
                    }
                    parents[2].accumulate_grad(&gb);
                }
            }),
        )
    }

    /// Non-overlapping k×k average pooling; spatial dims must divide k.
    pub fn avg_pool2d(&self, k: usize) -> Tensor<T> {
        let [n, c, h, w] = dims4(self.shape(), "avg_pool2d input");
        assert!(
            k >= 1 && h % k == 0 && w % k == 0,
            "avg_pool2d: spatial dims {h}x{w} not divisible by {k}"
        );
        let ho = h / k;
        let wo = w / k;
        let inv = T::from_f64(1.0 / (k * k) as f64);
        let x = self.data();
        let mut out = vec![T::zero(); n * c * ho * wo];
        for nc in 0..n * c {
            let src = &x[nc * h * w..(nc + 1) * h * w];
            let dst = &mut out[nc * ho * wo..(nc + 1) * ho * wo];
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = T::zero();
                    for dy in 0..k {
                        for dx in 0..k {
                            acc = acc + src[(oy * k + dy) * w + ox * k + dx];
                        }
                    }
                    dst[oy * wo + ox] = acc * inv;
                }
            }
        }
        drop(x);
        Tensor::from_op(
            vec![n, c, ho, wo],
            out,
            vec![self.clone()],
            Box::new(move |g, _out, parents| {
                let mut gx = vec![T::zero(); parents[0].numel()];
                for nc in 0..n * c {
                    let gsrc = &g[nc * ho * wo..(nc + 1) * ho * wo];
                    let gdst = &mut gx[nc * h * w..(nc + 1) * h * w];
                    for oy in 0..ho {
                        for ox in 0..wo {
                            let gv = gsrc[oy * wo + ox] * inv;
                            for dy in 0..k {
                                for dx in 0..k {
                                    gdst[(oy * k + dy) * w + ox * k + dx] = gv;
                                }
                            }
                        }
                    }
                }
                parents[0].accumulate_grad(&gx);
            }),
        )
    }

    /// Nearest-neighbor spatial upsampling by an integer factor.
    pub fn upsample_nearest(&self, factor: usize) -> Tensor<T> {
        let [n, c, h, w] = dims4(self.shape(), "upsample_nearest input");
        let ho = h * factor;
        let wo = w * factor;
        let x = self.data();
        let mut out = vec![T::zero(); n * c * ho * wo];
        for nc in 0..n * c {
            let src = &x[nc * h * w..(nc + 1) * h * w];
            let dst = &mut out[nc * ho * wo..(nc + 1) * ho * wo];
            for (oy, row) in dst.chunks_mut(wo).enumerate() {
                let sy = oy / factor;
                for (ox, v) in row.iter_mut().enumerate() {
                    *v = src[sy * w + ox / factor];
                }
            }
        }
        drop(x);
        Tensor::from_op(
            vec![n, c, ho, wo],
            out,
            vec![self.clone()],
            Box::new(move |g, _out, parents| {
                let mut gx = vec![T::zero(); parents[0].numel()];
                for nc in 0..n * c {
                    let gsrc = &g[nc * ho * wo..(nc + 1) * ho * wo];
                    let gdst = &mut gx[nc * h * w..(nc + 1) * h * w];
                    for oy in 0..ho {
                        for ox in 0..wo {
                            let xi = (oy / factor) * w + ox / factor;
                            gdst[xi] = gdst[xi] + gsrc[oy * wo + ox];
                        }
                    }
                }
                parents[0].accumulate_grad(&gx);
            }),
        )
    }

    /// Replicate (edge) padding on the right/bottom of the spatial axes.
    /// Not differentiated; used on network inputs only.
    pub fn pad_replicate_br(&self, pad_h: usize, pad_w: usize) -> Tensor<T> {
        let [n, c, h, w] = dims4(self.shape(), "pad_replicate_br input");
        let ho = h + pad_h;
        let wo = w + pad_w;
        let x = self.data();
        let mut out = vec![T::zero(); n * c * ho * wo];
        for nc in 0..n * c {
            let src = &x[nc * h * w..(nc + 1) * h * w];
            let dst = &mut out[nc * ho * wo..(nc + 1) * ho * wo];
            for oy in 0..ho {
                let sy = oy.min(h - 1);
                for ox in 0..wo {
                    dst[oy * wo + ox] = src[sy * w + ox.min(w - 1)];
                }
            }
        }
        drop(x);
        Tensor::from_vec(&[n, c, ho, wo], out)
    }

    /// Crops the spatial axes to `[0..h, 0..w]`.
    pub fn crop_spatial(&self, h: usize, w: usize) -> Tensor<T> {
        let [n, c, hf, wf] = dims4(self.shape(), "crop_spatial input");
        assert!(h <= hf && w <= wf, "crop larger than tensor");
        let x = self.data();
        let mut out = Vec::with_capacity(n * c * h * w);
        for nc in 0..n * c {
            let src = &x[nc * hf * wf..(nc + 1) * hf * wf];
            for y in 0..h {
                out.extend_from_slice(&src[y * wf..y * wf + w]);
            }
        }
        drop(x);
        Tensor::from_op(
            vec![n, c, h, w],
            out,
            vec![self.clone()],
            Box::new(move |g, _out, parents| {
                let mut gx = vec![T::zero(); parents[0].numel()];
                for nc in 0..n * c {
                    let gdst = &mut gx[nc * hf * wf..(nc + 1) * hf * wf];
                    for y in 0..h {
                        gdst[y * wf..y * wf + w]
                            .copy_from_slice(&g[nc * h * w + y * w..nc * h * w + y * w + w]);
                    }
                }
                parents[0].accumulate_grad(&gx);
            }),
        )
    }
}

pub(crate) fn dims4(shape: &[usize], what: &str) -> [usize; 4] {
    assert_eq!(shape.len(), 4, "{what} must be rank 4, got {shape:?}");
    [shape[0], shape[1], shape[2], shape[3]]
}
