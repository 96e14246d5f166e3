//! Batched matrix multiplication.

use super::{numel_of, Scalar, Tensor};
use rayon::prelude::*;

/// Row-major C[m,n] += A[m,k] · B[k,n], one output row per task.
fn matmul_2d<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    let run = |(i, row): (usize, &mut [T])| {
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (c, &bv) in row.iter_mut().zip(brow) {
                *c = *c + av * bv;
            }
        }
    };
    if m * k * n >= 1 << 16 {
        out.par_chunks_mut(n).enumerate().for_each(run);
    } else {
        out.chunks_mut(n).enumerate().for_each(run);
    }
}

/// A[m,k]ᵀ · g[m,n] accumulated into gb[k,n].
fn matmul_at_g<T: Scalar>(a: &[T], g: &[T], m: usize, k: usize, n: usize, gb: &mut [T]) {
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let grow = &g[i * n..(i + 1) * n];
            let brow = &mut gb[p * n..(p + 1) * n];
            for (c, &gv) in brow.iter_mut().zip(grow) {
                *c = *c + av * gv;
            }
        }
    }
}

/// g[m,n] · B[k,n]ᵀ accumulated into ga[m,k].
fn matmul_g_bt<T: Scalar>(g: &[T], b: &[T], m: usize, k: usize, n: usize, ga: &mut [T]) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        let arow = &mut ga[i * k..(i + 1) * k];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let mut s = T::zero();
            for (gv, bv) in grow.iter().zip(brow) {
                s = s + *gv * *bv;
            }
            arow[p] = arow[p] + s;
        }
    }
}

impl<T: Scalar> Tensor<T> {
    /// Batched matrix product over the last two axes. Batch dims must be
    /// equal, or one operand may be rank 2 (shared across the batch).
    pub fn matmul(&self, other: &Tensor<T>) -> Tensor<T> {
        let sa = self.shape();
        let sb = other.shape();
        assert!(sa.len() >= 2 && sb.len() >= 2, "matmul needs rank >= 2");
        let (m, ka) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (kb, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        assert_eq!(
            ka, kb,
            "matmul inner dimension mismatch: {sa:?} x {sb:?}"
        );
        let batch_a = &sa[..sa.len() - 2];
        let batch_b = &sb[..sb.len() - 2];
        let (batch, a_shared, b_shared) = if batch_a == batch_b {
            (batch_a.to_vec(), false, false)
        } else if batch_b.is_empty() {
            (batch_a.to_vec(), false, true)
        } else if batch_a.is_empty() {
            (batch_b.to_vec(), true, false)
        } else {
            panic!("matmul batch dims mismatch: {sa:?} x {sb:?}");
        };
        let nb = numel_of(&batch);
        let k = ka;

        let a = self.data();
        let b = other.data();
        let mut out = vec![T::zero(); nb * m * n];
        for bi in 0..nb {
            let ao = if a_shared { 0 } else { bi * m * k };
            let bo = if b_shared { 0 } else { bi * k * n };
            matmul_2d(
                &a[ao..ao + m * k],
                &b[bo..bo + k * n],
                m,
                k,
                n,
                &mut out[bi * m * n..(bi + 1) * m * n],
            );
        }
        drop(a);
        drop(b);

        let mut shape = batch.clone();
        shape.push(m);
        shape.push(n);
        Tensor::from_op(
            shape,
            out,
            vec![self.clone(), other.clone()],
            Box::new(move |g, _out, parents| {
                let a = &parents[0];
                let b = &parents[1];
                if a.requires_grad() {
                    let bd = b.data();
                    let mut ga = vec![T::zero(); a.numel()];
                    for bi in 0..nb {
                        let ao = if a_shared { 0 } else { bi * m * k };
                        let bo = if b_shared { 0 } else { bi * k * n };
                        matmul_g_bt(
                            &g[bi * m * n..(bi + 1) * m * n],
                            &bd[bo..bo + k * n],
                            m,
                            k,
                            n,
                            &mut ga[ao..ao + m * k],
                        );
                    }
                    drop(bd);
                    a.accumulate_grad(&ga);
                }
                if b.requires_grad() {
                    let ad = a.data();
                    let mut gb = vec![T::zero(); b.numel()];
                    for bi in 0..nb {
                        let ao = if a_shared { 0 } else { bi * m * k };
                        let bo = if b_shared { 0 } else { bi * k * n };
                        matmul_at_g(
                            &ad[ao..ao + m * k],
                            &g[bi * m * n..(bi + 1) * m * n],
                            m,
                            k,
                            n,
                            &mut gb[bo..bo + k * n],
                        );
                    }
                    drop(ad);
                    b.accumulate_grad(&gb);
                }
            }),
        )
    }
}
