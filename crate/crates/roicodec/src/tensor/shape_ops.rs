//! Shape manipulation: views are materialized (copies), gradients are the
//! inverse rearrangements.

use super::{numel_of, strides_of, Scalar, Tensor};

impl<T: Scalar> Tensor<T> {
    /// Zero-copy view sharing the underlying buffer.
    pub fn reshape(&self, shape: &[usize]) -> Tensor<T> {
        assert_eq!(
            numel_of(shape),
            self.numel(),
            "reshape {:?} -> {:?} changes element count",
            self.shape(),
            shape
        );
        Tensor::from_op_shared(
            shape.to_vec(),
            self.share_data(),
            vec![self.clone()],
            Box::new(move |g, _out, parents| {
                parents[0].accumulate_grad(g);
            }),
        )
    }

    pub fn permute(&self, perm: &[usize]) -> Tensor<T> {
        let rank = self.shape().len();
        assert_eq!(perm.len(), rank, "permute rank mismatch");
        let mut seen = vec![false; rank];
        for &p in perm {
            assert!(p < rank && !seen[p], "invalid permutation {perm:?}");
            seen[p] = true;
        }
        let src_shape = self.shape().to_vec();
        let out_shape: Vec<usize> = perm.iter().map(|&p| src_shape[p]).collect();
        let data = permute_data(&self.data(), &src_shape, perm);
        // inverse permutation for the gradient
        let mut inv = vec![0usize; rank];
        for (i, &p) in perm.iter().enumerate() {
            inv[p] = i;
        }
        let out_shape_clone = out_shape.clone();
        Tensor::from_op(
            out_shape,
            data,
            vec![self.clone()],
            Box::new(move |g, _out, parents| {
                let gx = permute_data(g, &out_shape_clone, &inv);
                parents[0].accumulate_grad(&gx);
            }),
        )
    }

    /// Materializing broadcast: every axis must match or be 1 in the source.
    pub fn expand(&self, target: &[usize]) -> Tensor<T> {
        let src = self.shape().to_vec();
        assert_eq!(src.len(), target.len(), "expand rank mismatch");
        for (s, t) in src.iter().zip(target) {
            assert!(s == t || *s == 1, "expand {src:?} -> {target:?} invalid");
        }
        let out = broadcast_data(&self.data(), &src, target);
        let src_clone = src.clone();
        let target_clone = target.to_vec();
        Tensor::from_op(
            target.to_vec(),
            out,
            vec![self.clone()],
            Box::new(move |g, _out, parents| {
                // sum gradient back over the expanded axes
                let mut gx = vec![T::zero(); numel_of(&src_clone)];
                let t_strides = strides_of(&target_clone);
                let s_strides = strides_of(&src_clone);
                for (flat, &gv) in g.iter().enumerate() {
                    let mut rem = flat;
                    let mut si = 0usize;
                    for d in 0..target_clone.len() {
                        let coord = rem / t_strides[d];
                        rem %= t_strides[d];
                        if src_clone[d] != 1 {
                            si += coord * s_strides[d];
                        }
                    }
                    gx[si] = gx[si] + gv;
                }
                parents[0].accumulate_grad(&gx);
            }),
        )
    }

    /// Concatenation along `axis`.
    pub fn concat(parts: &[&Tensor<T>], axis: usize) -> Tensor<T> {
        assert!(!parts.is_empty(), "concat of zero tensors");
        let rank = parts[0].shape().len();
        assert!(axis < rank, "concat axis out of range");
        for p in parts {
            assert_eq!(p.shape().len(), rank, "concat rank mismatch");
            for d in 0..rank {
                if d != axis {
                    assert_eq!(
                        p.shape()[d],
                        parts[0].shape()[d],
                        "concat shapes differ off-axis"
                    );
                }
            }
        }
        let outer: usize = parts[0].shape()[..axis].iter().product();
        let inner: usize = parts[0].shape()[axis + 1..].iter().product();
        let axis_sizes: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
        let axis_total: usize = axis_sizes.iter().sum();

        let mut shape = parts[0].shape().to_vec();
        shape[axis] = axis_total;
        let mut out = Vec::with_capacity(outer * axis_total * inner);
        for oi in 0..outer {
            for (p, &asz) in parts.iter().zip(&axis_sizes) {
                let d = p.data();
                out.extend_from_slice(&d[oi * asz * inner..(oi + 1) * asz * inner]);
            }
        }
        let parents: Vec<Tensor<T>> = parts.iter().map(|p| (*p).clone()).collect();
        Tensor::from_op(
            shape,
            out,
            parents,
            Box::new(move |g, _out, parents| {
                let mut offset = 0usize;
                for (p, &asz) in parents.iter().zip(&axis_sizes) {
                    if p.requires_grad() {
                        let mut gp = Vec::with_capacity(outer * asz * inner);
                        for oi in 0..outer {
                            let start = oi * axis_total * inner + offset * inner;
                            gp.extend_from_slice(&g[start..start + asz * inner]);
                        }
                        p.accumulate_grad(&gp);
                    }
                    offset += asz;
                }
            }),
        )
    }

    /// Contiguous slice `[start, start+len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Tensor<T> {
        let shape = self.shape().to_vec();
        assert!(axis < shape.len(), "narrow axis out of range");
        assert!(start + len <= shape[axis], "narrow out of bounds");
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let asz = shape[axis];
        let x = self.data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for oi in 0..outer {
            let base = oi * asz * inner + start * inner;
            out.extend_from_slice(&x[base..base + len * inner]);
        }
        drop(x);
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        Tensor::from_op(
            out_shape,
            out,
            vec![self.clone()],
            Box::new(move |g, _out, parents| {
                let mut gx = vec![T::zero(); parents[0].numel()];
                for oi in 0..outer {
                    let base = oi * asz * inner + start * inner;
                    gx[base..base + len * inner]
                        .copy_from_slice(&g[oi * len * inner..(oi + 1) * len * inner]);
                }
                parents[0].accumulate_grad(&gx);
            }),
        )
    }

    /// NHWC 2×2 space-to-depth: `[N,H,W,C] -> [N,H/2,W/2,4C]` with the four
    /// neighbors ordered row-major `(0,0),(0,1),(1,0),(1,1)`.
    pub fn space_to_depth2(&self) -> Tensor<T> {
        let s = self.shape();
        assert_eq!(s.len(), 4, "space_to_depth2 needs NHWC");
        let (n, h, w, c) = (s[0], s[1], s[2], s[3]);
        assert!(h % 2 == 0 && w % 2 == 0, "space_to_depth2 needs even dims");
        let (ho, wo) = (h / 2, w / 2);
        let x = self.data();
        let mut out = vec![T::zero(); n * ho * wo * 4 * c];
        for ni in 0..n {
            for oy in 0..ho {
                for ox in 0..wo {
                    for (block, (dy, dx)) in
                        [(0, 0), (0, 1), (1, 0), (1, 1)].iter().enumerate()
                    {
                        let src = ((ni * h + 2 * oy + dy) * w + 2 * ox + dx) * c;
                        let dst = ((ni * ho + oy) * wo + ox) * 4 * c + block * c;
                        out[dst..dst + c].copy_from_slice(&x[src..src + c]);
                    }
                }
            }
        }
        drop(x);
        Tensor::from_op(
            vec![n, ho, wo, 4 * c],
            out,
            vec![self.clone()],
            Box::new(move |g, _out, parents| {
                let mut gx = vec![T::zero(); parents[0].numel()];
                for ni in 0..n {
                    for oy in 0..ho {
                        for ox in 0..wo {
                            for (block, (dy, dx)) in
                                [(0, 0), (0, 1), (1, 0), (1, 1)].iter().enumerate()
                            {
                                let src = ((ni * h + 2 * oy + dy) * w + 2 * ox + dx) * c;
                                let dst = ((ni * ho + oy) * wo + ox) * 4 * c + block * c;
                                gx[src..src + c].copy_from_slice(&g[dst..dst + c]);
                            }
                        }
                    }
                }
                parents[0].accumulate_grad(&gx);
            }),
        )
    }

    /// Inverse of [`Tensor::space_to_depth2`]: `[N,H,W,4C] -> [N,2H,2W,C]`.
    pub fn depth_to_space2(&self) -> Tensor<T> {
        let s = self.shape();
        assert_eq!(s.len(), 4, "depth_to_space2 needs NHWC");
        let (n, h, w, c4) = (s[0], s[1], s[2], s[3]);
        assert!(c4 % 4 == 0, "depth_to_space2 needs channels divisible by 4");
        let c = c4 / 4;
        let (ho, wo) = (h * 2, w * 2);
        let x = self.data();
        let mut out = vec![T::zero(); n * ho * wo * c];
        for ni in 0..n {
            for iy in 0..h {
                for ix in 0..w {
                    for (block, (dy, dx)) in
                        [(0, 0), (0, 1), (1, 0), (1, 1)].iter().enumerate()
                    {
                        let src = ((ni * h + iy) * w + ix) * c4 + block * c;
                        let dst = ((ni * ho + 2 * iy + dy) * wo + 2 * ix + dx) * c;
                        out[dst..dst + c].copy_from_slice(&x[src..src + c]);
                    }
                }
            }
        }
        drop(x);
        Tensor::from_op(
            vec![n, ho, wo, c],
            out,
            vec![self.clone()],
            Box::new(move |g, _out, parents| {
                let mut gx = vec![T::zero(); parents[0].numel()];
                for ni in 0..n {
                    for iy in 0..h {
                        for ix in 0..w {
                            for (block, (dy, dx)) in
                                [(0, 0), (0, 1), (1, 0), (1, 1)].iter().enumerate()
                            {
                                let src = ((ni * h + iy) * w + ix) * c4 + block * c;
                                let dst = ((ni * ho + 2 * iy + dy) * wo + 2 * ix + dx) * c;
                                gx[src..src + c].copy_from_slice(&g[dst..dst + c]);
                            }
                        }
                    }
                }
                parents[0].accumulate_grad(&gx);
            }),
        )
    }

    /// Toroidal roll of the NHWC spatial axes: content moves down/right by
    /// `(dy, dx)`, i.e. output `(y, x)` reads input `((y - dy) mod H,
    /// (x - dx) mod W)`. `cyclic_shift(dy, dx)` then
    /// `cyclic_shift(-dy, -dx)` is an exact identity.
    pub fn cyclic_shift(&self, dy: isize, dx: isize) -> Tensor<T> {
        let s = self.shape();
        assert_eq!(s.len(), 4, "cyclic_shift needs NHWC");
        let (n, h, w, c) = (s[0], s[1], s[2], s[3]);
        let roll = |data: &[T], out: &mut [T], dy: isize, dx: isize| {
            for ni in 0..n {
                for y in 0..h {
                    let sy = (y as isize - dy).rem_euclid(h as isize) as usize;
                    for x in 0..w {
                        let sx = (x as isize - dx).rem_euclid(w as isize) as usize;
                        let src = ((ni * h + sy) * w + sx) * c;
                        let dst = ((ni * h + y) * w + x) * c;
                        out[dst..dst + c].copy_from_slice(&data[src..src + c]);
                    }
                }
            }
        };
        let mut out = vec![T::zero(); self.numel()];
        roll(&self.data(), &mut out, dy, dx);
        Tensor::from_op(
            s.to_vec(),
            out,
            vec![self.clone()],
            Box::new(move |g, _out, parents| {
                let sh = parents[0].shape();
                let (n, h, w, c) = (sh[0], sh[1], sh[2], sh[3]);
                let mut gx = vec![T::zero(); g.len()];
                // gradient is the inverse roll
                for ni in 0..n {
                    for y in 0..h {
                        let sy = (y as isize + dy).rem_euclid(h as isize) as usize;
                        for x in 0..w {
                            let sx = (x as isize + dx).rem_euclid(w as isize) as usize;
                            let src = ((ni * h + sy) * w + sx) * c;
                            let dst = ((ni * h + y) * w + x) * c;
                            for ci in 0..c {
                                gx[dst + ci] = gx[dst + ci] + g[src + ci];
                            }
                        }
                    }
                }
                parents[0].accumulate_grad(&gx);
            }),
        )
    }

    /// Row gather: `table[K, D]` indexed by `indices[L]` -> `[L, D]`.
    /// Gradient scatter-adds into the table.
    pub fn index_select_rows(&self, indices: &[usize]) -> Tensor<T> {
        let s = self.shape();
        assert_eq!(s.len(), 2, "index_select_rows needs a rank-2 table");
        let (k, d) = (s[0], s[1]);
        for &i in indices {
            assert!(i < k, "index {i} out of range for table with {k} rows");
        }
        let x = self.data();
        let mut out = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            out.extend_from_slice(&x[i * d..(i + 1) * d]);
        }
        drop(x);
        let idx = indices.to_vec();
        Tensor::from_op(
            vec![indices.len(), d],
            out,
            vec![self.clone()],
            Box::new(move |g, _out, parents| {
                let mut gx = vec![T::zero(); parents[0].numel()];
                for (r, &i) in idx.iter().enumerate() {
                    for j in 0..d {
                        gx[i * d + j] = gx[i * d + j] + g[r * d + j];
                    }
                }
                parents[0].accumulate_grad(&gx);
            }),
        )
    }
}

fn permute_data<T: Scalar>(data: &[T], src_shape: &[usize], perm: &[usize]) -> Vec<T> {
    let rank = src_shape.len();
    let out_shape: Vec<usize> = perm.iter().map(|&p| src_shape[p]).collect();
    let src_strides = strides_of(src_shape);
    // source stride of each output axis; walk the output in order with an
    // odometer so there is no division in the inner loop
    let steps: Vec<usize> = perm.iter().map(|&p| src_strides[p]).collect();
    let n = numel_of(src_shape);
    let mut out = Vec::with_capacity(n);
    if n == 0 {
        return out;
    }
    let mut coords = vec![0usize; rank];
    let mut src_idx = 0usize;
    for _ in 0..n {
        out.push(data[src_idx]);
        for d in (0..rank).rev() {
            coords[d] += 1;
            src_idx += steps[d];
            if coords[d] < out_shape[d] {
                break;
            }
            src_idx -= steps[d] * out_shape[d];
            coords[d] = 0;
        }
    }
    out
}

fn broadcast_data<T: Scalar>(data: &[T], src: &[usize], target: &[usize]) -> Vec<T> {
    let t_strides = strides_of(target);
    let s_strides = strides_of(src);
    let n = numel_of(target);
    let mut out = vec![data.first().copied().unwrap_or_default(); n];
    for (flat, item) in out.iter_mut().enumerate() {
        let mut rem = flat;
        let mut si = 0usize;
        for d in 0..target.len() {
            let coord = rem / t_strides[d];
            rem %= t_strides[d];
            if src[d] != 1 {
                si += coord * s_strides[d];
            }
        }
        *item = data[si];
    }
    out
}

#[cfg(test)]
mod tests {
    use super::super::Tensor;

    #[test]
    fn permute_roundtrip() {
        let x = Tensor::<f64>::from_vec(&[2, 3, 4], (0..24).map(|v| v as f64).collect());
        let y = x.permute(&[2, 0, 1]);
        assert_eq!(y.shape(), &[4, 2, 3]);
        let z = y.permute(&[1, 2, 0]);
        assert_eq!(z.to_vec(), x.to_vec());
    }

    #[test]
    fn cyclic_shift_row() {
        // row [1,2,3,4] shifted dx=1 -> [4,1,2,3]
        let x = Tensor::<f64>::from_vec(&[1, 1, 4, 1], vec![1., 2., 3., 4.]);
        let y = x.cyclic_shift(0, 1);
        assert_eq!(y.to_vec(), vec![4., 1., 2., 3.]);
        let back = y.cyclic_shift(0, -1);
        assert_eq!(back.to_vec(), x.to_vec());
        // zero shift is identity
        assert_eq!(x.cyclic_shift(0, 0).to_vec(), x.to_vec());
    }

    #[test]
    fn shift_then_unshift_identity_2d() {
        let x = Tensor::<f64>::from_vec(&[1, 4, 4, 2], (0..32).map(|v| v as f64).collect());
        let y = x.cyclic_shift(4, 4); // full wrap
        assert_eq!(y.to_vec(), x.to_vec());
        let z = x.cyclic_shift(1, 2).cyclic_shift(-1, -2);
        assert_eq!(z.to_vec(), x.to_vec());
    }

    #[test]
    fn space_depth_roundtrip() {
        let x = Tensor::<f64>::from_vec(&[1, 4, 4, 3], (0..48).map(|v| v as f64).collect());
        let y = x.space_to_depth2();
        assert_eq!(y.shape(), &[1, 2, 2, 12]);
        let z = y.depth_to_space2();
        assert_eq!(z.to_vec(), x.to_vec());
    }

    #[test]
    fn narrow_and_concat_inverse() {
        let x = Tensor::<f64>::from_vec(&[2, 4], (0..8).map(|v| v as f64).collect());
        let a = x.narrow(1, 0, 2);
        let b = x.narrow(1, 2, 2);
        let y = Tensor::concat(&[&a, &b], 1);
        assert_eq!(y.to_vec(), x.to_vec());
    }

    #[test]
    fn expand_sums_gradient() {
        let x = Tensor::<f64>::param(&[1, 3], vec![1., 2., 3.]);
        let y = x.expand(&[4, 3]);
        assert_eq!(y.numel(), 12);
        y.sum_all().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![4., 4., 4.]);
    }

    #[test]
    fn index_select_scatters_grad() {
        let t = Tensor::<f64>::param(&[3, 2], vec![1., 2., 3., 4., 5., 6.]);
        let y = t.index_select_rows(&[2, 0, 2]);
        assert_eq!(y.to_vec(), vec![5., 6., 1., 2., 5., 6.]);
        y.sum_all().backward().unwrap();
        assert_eq!(t.grad().unwrap(), vec![1., 1., 0., 0., 2., 2.]);
    }
}
