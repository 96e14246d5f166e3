//! Windowed and shifted-window multi-head self-attention.
//!
//! A block pair runs the four-line recurrence
//!
//! ```text
//!   h = W-MHSA(LN(x)) + x
//!   x = FFN(LN(h)) + h
//!   h = SW-MHSA(LN(x)) + x
//!   x = FFN(LN(h)) + h
//! ```
//!
//! with the shifted half applying a cyclic shift of half the window and a
//! cross-region attention mask, exactly inverted afterwards.

use super::{Init, LayerNorm, Linear, ParamSet};
use crate::tensor::{Scalar, Tensor};

/// `[N,H,W,C] -> [N·(H/w)·(W/w), w·w, C]`, non-overlapping windows.
pub fn window_partition<T: Scalar>(x: &Tensor<T>, w: usize) -> Tensor<T> {
    let s = x.shape();
    assert_eq!(s.len(), 4, "window_partition needs NHWC");
    let (n, h, wd, c) = (s[0], s[1], s[2], s[3]);
    assert!(
        h % w == 0 && wd % w == 0,
        "window_partition: {h}x{wd} not divisible by window {w}"
    );
    x.reshape(&[n, h / w, w, wd / w, w, c])
        .permute(&[0, 1, 3, 2, 4, 5])
        .reshape(&[n * (h / w) * (wd / w), w * w, c])
}

/// Exact inverse of [`window_partition`].
pub fn window_merge<T: Scalar>(x: &Tensor<T>, w: usize, h: usize, wd: usize, n: usize) -> Tensor<T> {
    let c = x.shape()[2];
    assert_eq!(
        x.shape()[0],
        n * (h / w) * (wd / w),
        "window_merge count mismatch"
    );
    x.reshape(&[n, h / w, wd / w, w, w, c])
        .permute(&[0, 1, 3, 2, 4, 5])
        .reshape(&[n, h, wd, c])
}

/// Largest window size that divides both spatial dims and does not exceed
/// the configured one. Falls back to 1 (single-token windows).
pub fn effective_window(h: usize, w: usize, configured: usize) -> usize {
    for cand in (1..=configured.min(h).min(w)).rev() {
        if h % cand == 0 && w % cand == 0 {
            return cand;
        }
    }
    1
}

/// Additive attention mask for shifted windows: `[nW, T, T]` with 0 for
/// same-region pairs and -inf across regions.
pub fn build_shift_mask<T: Scalar>(h: usize, w: usize, window: usize, shift: usize) -> Tensor<T> {
    let mut region = vec![0i32; h * w];
    let mut id = 0i32;
    let spans = |dim: usize| -> Vec<(usize, usize)> {
        vec![
            (0, dim - window),
            (dim - window, dim - shift),
            (dim - shift, dim),
        ]
    };
    for (y0, y1) in spans(h) {
        for (x0, x1) in spans(w) {
            for y in y0..y1 {
                for x in x0..x1 {
                    region[y * w + x] = id;
                }
            }
            id += 1;
        }
    }
    let nw = (h / window) * (w / window);
    let t = window * window;
    let mut mask = vec![T::zero(); nw * t * t];
    let wins_x = w / window;
    for wi in 0..nw {
        let oy = (wi / wins_x) * window;
        let ox = (wi % wins_x) * window;
        let mut ids = Vec::with_capacity(t);
        for dy in 0..window {
            for dx in 0..window {
                ids.push(region[(oy + dy) * w + ox + dx]);
            }
        }
        for i in 0..t {
            for j in 0..t {
                if ids[i] != ids[j] {
                    mask[wi * t * t + i * t + j] = T::neg_infinity();
                }
            }
        }
    }
    Tensor::from_vec(&[nw, t, t], mask)
}

/// Relative-position index per (query, key) token pair of a w×w window;
/// indexes into a `(2w-1)^2`-row bias table.
fn relative_position_index(window: usize) -> Vec<usize> {
    let t = window * window;
    let span = 2 * window - 1;
    let mut index = Vec::with_capacity(t * t);
    for i in 0..t {
        let (iy, ix) = (i / window, i % window);
        for j in 0..t {
            let (jy, jx) = (j / window, j % window);
            let dy = iy as isize - jy as isize + window as isize - 1;
            let dx = ix as isize - jx as isize + window as isize - 1;
            index.push(dy as usize * span + dx as usize);
        }
    }
    index
}

/// One Swin transformer block: LN -> (S)W-MHSA -> residual -> LN -> FFN
/// -> residual.
pub struct SwinBlockParams<T: Scalar> {
    pub norm1: LayerNorm<T>,
    pub qkv: Linear<T>,
    pub proj: Linear<T>,
    pub norm2: LayerNorm<T>,
    pub ffn1: Linear<T>,
    pub ffn2: Linear<T>,
    pub rel_pos_bias: Tensor<T>, // [(2w-1)^2, heads]
    pub window: usize,
    pub shifted: bool,
    pub num_heads: usize,
    pub embed_dim: usize,
}

/// Attention weights captured at one MHSA instance, with the geometry
/// needed to map image pixels back to window tokens.
pub struct AttentionRecord<T: Scalar> {
    pub site: String,
    /// `[N·nW, heads, T, T]`
    pub attn: Tensor<T>,
    pub feat_h: usize,
    pub feat_w: usize,
    pub window: usize,
    pub shift: usize,
}

impl<T: Scalar> SwinBlockParams<T> {
    pub fn new(
        ps: &mut ParamSet<T>,
        name: &str,
        dim: usize,
        num_heads: usize,
        window: usize,
        ffn_ratio: usize,
        shifted: bool,
    ) -> Self {
        assert!(
            dim % num_heads == 0,
            "embed dim {dim} not divisible by {num_heads} heads"
        );
        let span = 2 * window - 1;
        SwinBlockParams {
            norm1: LayerNorm::new(ps, &format!("{name}.norm1"), dim),
            qkv: Linear::new(ps, &format!("{name}.qkv"), dim, 3 * dim),
            proj: Linear::new(ps, &format!("{name}.proj"), dim, dim),
            norm2: LayerNorm::new(ps, &format!("{name}.norm2"), dim),
            ffn1: Linear::new(ps, &format!("{name}.ffn1"), dim, ffn_ratio * dim),
            ffn2: Linear::new(ps, &format!("{name}.ffn2"), ffn_ratio * dim, dim),
            rel_pos_bias: ps.tensor(
                &format!("{name}.rel_pos_bias"),
                &[span * span, num_heads],
                Init::Zeros,
            ),
            window,
            shifted,
            num_heads,
            embed_dim: dim,
        }
    }

    /// Scaled dot-product attention over window token sequences.
    ///
    /// `tokens` is `[B, T, C]` with `T = window²`; `attn_mask` is
    /// `[nW, T, T]` additive (0 / -inf) with `B = N·nW`. Returns the output
    /// tokens and the attention weights `[B, heads, T, T]`.
    pub fn window_attention(
        &self,
        tokens: &Tensor<T>,
        window: usize,
        attn_mask: Option<&Tensor<T>>,
    ) -> (Tensor<T>, Tensor<T>) {
        let s = tokens.shape();
        assert_eq!(s.len(), 3, "window_attention needs [B,T,C]");
        let (b, t, c) = (s[0], s[1], s[2]);
        assert_eq!(t, window * window, "token count {t} != window²");
        assert_eq!(c, self.embed_dim, "embed dim mismatch");
        let heads = self.num_heads;
        let hd = c / heads;

        let qkv = self.qkv.forward(tokens); // [B,T,3C]
        let split = |i: usize| {
            qkv.narrow(2, i * c, c)
                .reshape(&[b, t, heads, hd])
                .permute(&[0, 2, 1, 3]) // [B,heads,T,hd]
        };
        let q = split(0);
        let k = split(1);
        let v = split(2);

        let scale = 1.0 / (hd as f64).sqrt();
        let mut logits = q
            .matmul(&k.permute(&[0, 1, 3, 2]))
            .mul_scalar(scale); // [B,heads,T,T]

        // relative position bias, gathered per (i,j) offset
        let idx = relative_position_index(window);
        let bias_idx: Vec<usize> = if window == self.window {
            idx
        } else {
            // smaller effective window still indexes the full table
            let span_full = 2 * self.window - 1;
            let span_eff = 2 * window - 1;
            idx.iter()
                .map(|&i| {
                    let dy = i / span_eff;
                    let dx = i % span_eff;
                    dy * span_full + dx
                })
                .collect()
        };
        let bias = self
            .rel_pos_bias
            .index_select_rows(&bias_idx) // [T*T, heads]
            .reshape(&[t, t, heads])
            .permute(&[2, 0, 1]); // [heads,T,T]
        logits = logits.add(&bias);

        if let Some(mask) = attn_mask {
            let nw = mask.shape()[0];
            assert_eq!(
                mask.shape(),
                &[nw, t, t],
                "attention mask shape mismatch"
            );
            assert!(b % nw == 0, "batch {b} not a multiple of window count {nw}");
            let n = b / nw;
            let mask_h = mask
                .reshape(&[nw, 1, t, t])
                .expand(&[nw, heads, t, t]);
            logits = logits
                .reshape(&[n, nw, heads, t, t])
                .add(&mask_h)
                .reshape(&[b, heads, t, t]);
        }

        let attn = logits.softmax(3); // rows sum to 1
        let out = attn
            .matmul(&v) // [B,heads,T,hd]
            .permute(&[0, 2, 1, 3])
            .reshape(&[b, t, c]);
        (self.proj.forward(&out), attn)
    }

    /// Full block on an NHWC feature map. The window is clamped to the
    /// largest divisor of the spatial dims; shift is half of that (zero
    /// when a single window covers the whole map).
    pub fn forward(&self, x: &Tensor<T>, site: &str) -> (Tensor<T>, AttentionRecord<T>) {
        let s = x.shape();
        assert_eq!(s.len(), 4, "swin block needs NHWC");
        let (n, h, w, _c) = (s[0], s[1], s[2], s[3]);
        let win = effective_window(h, w, self.window);
        let shift = if self.shifted && (h > win || w > win) {
            win / 2
        } else {
            0
        };

        let normed = self.norm1.forward(x);
        let shifted_in = if shift > 0 {
            normed.cyclic_shift(-(shift as isize), -(shift as isize))
        } else {
            normed
        };
        let tokens = window_partition(&shifted_in, win);
        let mask = if shift > 0 {
            Some(build_shift_mask::<T>(h, w, win, shift))
        } else {
            None
        };
        let (attn_out, attn) = self.window_attention(&tokens, win, mask.as_ref());
        let merged = window_merge(&attn_out, win, h, w, n);
        let unshifted = if shift > 0 {
            merged.cyclic_shift(shift as isize, shift as isize)
        } else {
            merged
        };
        let x = x.add(&unshifted);

        let ffn = self
            .ffn2
            .forward(&self.ffn1.forward(&self.norm2.forward(&x)).silu());
        let out = x.add(&ffn);
        (
            out,
            AttentionRecord {
                site: site.to_string(),
                attn,
                feat_h: h,
                feat_w: w,
                window: win,
                shift,
            },
        )
    }
}

/// The W-MHSA / SW-MHSA block pair of one stage step.
pub struct SwinBlockPair<T: Scalar> {
    pub regular: SwinBlockParams<T>,
    pub shifted: SwinBlockParams<T>,
}

impl<T: Scalar> SwinBlockPair<T> {
    pub fn new(
        ps: &mut ParamSet<T>,
        name: &str,
        dim: usize,
        num_heads: usize,
        window: usize,
        ffn_ratio: usize,
    ) -> Self {
        SwinBlockPair {
            regular: SwinBlockParams::new(
                ps,
                &format!("{name}.w"),
                dim,
                num_heads,
                window,
                ffn_ratio,
                false,
            ),
            shifted: SwinBlockParams::new(
                ps,
                &format!("{name}.sw"),
                dim,
                num_heads,
                window,
                ffn_ratio,
                true,
            ),
        }
    }

    pub fn forward(
        &self,
        x: &Tensor<T>,
        site: &str,
        trace: Option<&mut Vec<AttentionRecord<T>>>,
    ) -> Tensor<T> {
        assert!(!self.regular.shifted && self.shifted.shifted);
        assert_eq!(self.regular.window, self.shifted.window);
        let (x, rec_w) = self.regular.forward(x, &format!("{site}.w"));
        let (x, rec_sw) = self.shifted.forward(&x, &format!("{site}.sw"));
        if let Some(trace) = trace {
            trace.push(rec_w);
            trace.push(rec_sw);
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partition_merge_roundtrip() {
        let x = Tensor::<f64>::from_vec(&[1, 16, 16, 3], (0..768).map(|v| v as f64).collect());
        let wins = window_partition(&x, 8);
        assert_eq!(wins.shape(), &[4, 64, 3]);
        let back = window_merge(&wins, 8, 16, 16, 1);
        assert_eq!(back.to_vec(), x.to_vec());
    }

    #[test]
    fn whole_image_window_is_identity_reshape() {
        let x = Tensor::<f64>::from_vec(&[2, 4, 4, 2], (0..64).map(|v| v as f64).collect());
        let wins = window_partition(&x, 4);
        assert_eq!(wins.shape(), &[2, 16, 2]);
        assert_eq!(wins.to_vec(), x.to_vec());
    }

    #[test]
    fn effective_window_rules() {
        assert_eq!(effective_window(32, 32, 8), 8);
        assert_eq!(effective_window(4, 4, 8), 4);
        assert_eq!(effective_window(6, 6, 4), 3);
        assert_eq!(effective_window(2, 6, 4), 2);
        assert_eq!(effective_window(5, 7, 4), 1);
    }

    #[test]
    fn single_token_attention_is_projected_value() {
        let mut ps = ParamSet::<f64>::new(1);
        let blk = SwinBlockParams::new(&mut ps, "b", 4, 2, 1, 2, false);
        let tokens = Tensor::<f64>::from_vec(&[1, 1, 4], vec![0.3, -0.7, 1.1, 0.0]);
        let (out, attn) = blk.window_attention(&tokens, 1, None);
        assert_eq!(attn.to_vec(), vec![1.0, 1.0]); // one weight per head
        // output equals proj(v) where v is the value projection of the token
        let c = 4;
        let qkv = blk.qkv.forward(&tokens);
        let v = qkv.narrow(2, 2 * c, c);
        let expect = blk.proj.forward(&v);
        for (a, b) in out.to_vec().iter().zip(expect.to_vec()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_keys_give_uniform_attention() {
        let mut ps = ParamSet::<f64>::new(2);
        let blk = SwinBlockParams::new(&mut ps, "b", 4, 1, 2, 2, false);
        // all tokens identical -> all keys identical -> uniform rows
        let tok = vec![0.5, -0.2, 0.8, 0.1];
        let mut data = Vec::new();
        for _ in 0..4 {
            data.extend_from_slice(&tok);
        }
        let tokens = Tensor::<f64>::from_vec(&[1, 4, 4], data);
        let (_, attn) = blk.window_attention(&tokens, 2, None);
        for v in attn.to_vec() {
            assert!((v - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_rows_sum_to_one_under_shift_mask() {
        let mut ps = ParamSet::<f64>::new(3);
        let blk = SwinBlockParams::new(&mut ps, "b", 8, 2, 4, 2, true);
        let x = Tensor::<f64>::from_vec(
            &[1, 8, 8, 8],
            (0..512).map(|v| ((v * 37 % 101) as f64) / 101.0).collect(),
        );
        let (_, rec) = blk.forward(&x, "t");
        assert_eq!(rec.shift, 2);
        let attn = rec.attn.to_vec();
        let t = rec.window * rec.window;
        let rows = attn.len() / t;
        for r in 0..rows {
            let s: f64 = attn[r * t..(r + 1) * t].iter().sum();
            assert!((s - 1.0).abs() < 1e-6, "row {r} sums to {s}");
        }
        // masked entries are exactly zero
        let mask = build_shift_mask::<f64>(8, 8, 4, 2).to_vec();
        let heads = 2;
        let nw = 4;
        for wi in 0..nw {
            for i in 0..t {
                for j in 0..t {
                    if mask[wi * t * t + i * t + j] == f64::NEG_INFINITY {
                        for h in 0..heads {
                            let a = attn[((wi * heads) + h) * t * t + i * t + j];
                            assert_eq!(a, 0.0);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn zeroed_projections_make_identity_pair() {
        let mut ps = ParamSet::<f64>::new(4);
        let pair = SwinBlockPair::new(&mut ps, "p", 8, 2, 4, 2);
        for p in &ps.params {
            p.tensor.set_data(&vec![0.0; p.tensor.numel()]);
        }
        let x = Tensor::<f64>::from_vec(
            &[1, 8, 8, 8],
            (0..512).map(|v| (v as f64).cos()).collect(),
        );
        let y = pair.forward(&x, "t", None);
        assert_eq!(y.to_vec(), x.to_vec());
    }

    #[test]
    fn pair_preserves_shape() {
        let mut ps = ParamSet::<f64>::new(5);
        let pair = SwinBlockPair::new(&mut ps, "p", 32, 4, 8, 2);
        let x = Tensor::<f64>::from_vec(
            &[1, 16, 16, 32],
            (0..8192).map(|v| ((v % 13) as f64) * 0.1).collect(),
        );
        let y = pair.forward(&x, "t", None);
        assert_eq!(y.shape(), &[1, 16, 16, 32]);
    }
}
