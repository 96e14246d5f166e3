//! Normalization ops: layer norm over the last axis and softmax.

use super::{Scalar, Tensor};

impl<T: Scalar> Tensor<T> {
    /// Layer normalization over the last axis with affine parameters.
    /// Uses the population variance (biased) as is conventional.
    pub fn layer_norm(&self, gamma: &Tensor<T>, beta: &Tensor<T>, eps: f64) -> Tensor<T> {
        assert!(eps > 0.0, "layer_norm eps must be positive");
        let shape = self.shape().to_vec();
        let c = *shape.last().expect("layer_norm needs rank >= 1");
        assert_eq!(gamma.shape(), &[c], "layer_norm gamma must be [{c}]");
        assert_eq!(beta.shape(), &[c], "layer_norm beta must be [{c}]");
        let rows = self.numel() / c;
        let eps_t = T::from_f64(eps);
        let inv_c = T::from_f64(1.0 / c as f64);

        let x = self.data();
        let gd = gamma.data();
        let bd = beta.data();
        let mut out = vec![T::zero(); self.numel()];
        let mut inv_std = vec![T::zero(); rows];
        let mut xhat = vec![T::zero(); self.numel()];
        for r in 0..rows {
            let row = &x[r * c..(r + 1) * c];
            let mut mean = T::zero();
            for &v in row {
                mean = mean + v;
            }
            mean = mean * inv_c;
            let mut var = T::zero();
            for &v in row {
                let d = v - mean;
                var = var + d * d;
            }
            var = var * inv_c;
            let istd = (var + eps_t).sqrt().recip();
            inv_std[r] = istd;
            for i in 0..c {
                let h = (row[i] - mean) * istd;
                xhat[r * c + i] = h;
                out[r * c + i] = gd[i] * h + bd[i];
            }
        }
        drop(x);
        drop(gd);
        drop(bd);

        Tensor::from_op(
            shape,
            out,
            vec![self.clone(), gamma.clone(), beta.clone()],
            Box::new(move |g, _out, parents| {
                let input = &parents[0];
                let gamma = &parents[1];
                let beta = &parents[2];
                let gd = gamma.data();
                if input.requires_grad() {
                    let mut gx = vec![T::zero(); input.numel()];
                    for r in 0..rows {
                        let grow = &g[r * c..(r + 1) * c];
                        let hrow = &xhat[r * c..(r + 1) * c];
                        // dxhat = g * gamma; dx = istd*(dxhat - mean(dxhat)
                        //        - xhat * mean(dxhat*xhat))
                        let mut mean_dh = T::zero();
                        let mut mean_dh_h = T::zero();
                        for i in 0..c {
                            let dh = grow[i] * gd[i];
                            mean_dh = mean_dh + dh;
                            mean_dh_h = mean_dh_h + dh * hrow[i];
                        }
                        mean_dh = mean_dh * inv_c;
                        mean_dh_h = mean_dh_h * inv_c;
                        for i in 0..c {
                            let dh = grow[i] * gd[i];
                            gx[r * c + i] =
                                inv_std[r] * (dh - mean_dh - hrow[i] * mean_dh_h);
                        }
                    }
                    input.accumulate_grad(&gx);
                }
                drop(gd);
                if gamma.requires_grad() {
                    let mut gg = vec![T::zero(); c];
                    for r in 0..rows {
                        for i in 0..c {
                            gg[i] = gg[i] + g[r * c + i] * xhat[r * c + i];
                        }
                    }
                    gamma.accumulate_grad(&gg);
                }
                if beta.requires_grad() {
                    let mut gb = vec![T::zero(); c];
                    for r in 0..rows {
                        for i in 0..c {
                            gb[i] = gb[i] + g[r * c + i];
                        }
                    }
                    beta.accumulate_grad(&gb);
                }
            }),
        )
    }

    /// Softmax along `axis`, computed with max subtraction. `-inf` inputs
    /// map to exact zeros.
    pub fn softmax(&self, axis: usize) -> Tensor<T> {
        let shape = self.shape().to_vec();
        assert!(axis < shape.len(), "softmax axis out of range");
        let lane = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let outer: usize = shape[..axis].iter().product();

        let x = self.data();
        let mut out = vec![T::zero(); self.numel()];
        // all--inf lanes would give NaN; callers guarantee at least one
        // finite logit per lane
        if inner == 1 {
            for (orow, xrow) in out.chunks_exact_mut(lane).zip(x.chunks_exact(lane)) {
                let mut max = T::neg_infinity();
                for &v in xrow {
                    max = max.max(v);
                }
                let mut sum = T::zero();
                for (o, &v) in orow.iter_mut().zip(xrow) {
                    let e = if v == T::neg_infinity() {
                        T::zero()
                    } else {
                        (v - max).exp()
                    };
                    *o = e;
                    sum = sum + e;
                }
                let inv = sum.recip();
                for o in orow.iter_mut() {
                    *o = *o * inv;
                }
            }
        } else {
            for o in 0..outer {
                for i in 0..inner {
                    let base = o * lane * inner + i;
                    let mut max = T::neg_infinity();
                    for l in 0..lane {
                        max = max.max(x[base + l * inner]);
                    }
                    let mut sum = T::zero();
                    for l in 0..lane {
                        let v = x[base + l * inner];
                        let e = if v == T::neg_infinity() {
                            T::zero()
                        } else {
                            (v - max).exp()
                        };
                        out[base + l * inner] = e;
                        sum = sum + e;
                    }
                    let inv = sum.recip();
                    for l in 0..lane {
                        out[base + l * inner] = out[base + l * inner] * inv;
                    }
                }
            }
        }
        drop(x);

        Tensor::from_op(
            shape,
            out,
            vec![self.clone()],
            Box::new(move |g, out, parents| {
                // dx = p * (g - sum(g*p))
                let mut gx = vec![T::zero(); g.len()];
                if inner == 1 {
                    for ((gxrow, grow), prow) in gx
                        .chunks_exact_mut(lane)
                        .zip(g.chunks_exact(lane))
                        .zip(out.chunks_exact(lane))
                    {
                        let mut dot = T::zero();
                        for (&gv, &p) in grow.iter().zip(prow) {
                            dot = dot + gv * p;
                        }
                        for ((o, &gv), &p) in gxrow.iter_mut().zip(grow).zip(prow) {
                            *o = p * (gv - dot);
                        }
                    }
                } else {
                    for o in 0..outer {
                        for i in 0..inner {
                            let base = o * lane * inner + i;
                            let mut dot = T::zero();
                            for l in 0..lane {
                                dot = dot + g[base + l * inner] * out[base + l * inner];
                            }
                            for l in 0..lane {
                                let p = out[base + l * inner];
                                gx[base + l * inner] = p * (g[base + l * inner] - dot);
                            }
                        }
                    }
                }
                parents[0].accumulate_grad(&gx);
            }),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::super::Tensor;

    #[test]
    fn layer_norm_unit_triple() {
        let x = Tensor::<f64>::from_vec(&[1, 3], vec![1.0, 2.0, 3.0]);
        let g = Tensor::<f64>::ones(&[3]);
        let b = Tensor::<f64>::zeros(&[3]);
        let y = x.layer_norm(&g, &b, 1e-12).to_vec();
        let e = (2.0f64 / 3.0).sqrt().recip(); // 1/sqrt(2/3)
        assert!((y[0] + e).abs() < 1e-6);
        assert!(y[1].abs() < 1e-9);
        assert!((y[2] - e).abs() < 1e-6);
        // spec's reference values
        assert!((y[0] + 1.2247).abs() < 1e-3);
        assert!((y[2] - 1.2247).abs() < 1e-3);
    }

    #[test]
    fn layer_norm_constant_row_is_zero() {
        let x = Tensor::<f64>::full(&[2, 4], 3.25);
        let g = Tensor::<f64>::ones(&[4]);
        let b = Tensor::<f64>::zeros(&[4]);
        let y = x.layer_norm(&g, &b, 1e-5);
        assert!(y.to_vec().iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn softmax_uniform_and_stability() {
        let x = Tensor::<f64>::from_vec(&[2], vec![0.0, 0.0]);
        assert_eq!(x.softmax(0).to_vec(), vec![0.5, 0.5]);

        // large logits do not overflow
        let big = Tensor::<f64>::from_vec(&[2], vec![1000.0, 0.0]);
        let p = big.softmax(0).to_vec();
        assert!((p[0] - 1.0).abs() < 1e-12);
        assert!(p[1] >= 0.0 && p[1] < 1e-300);
    }

    #[test]
    fn softmax_neg_infinity_gives_exact_zero() {
        let x = Tensor::<f64>::from_vec(&[3], vec![1.0, f64::NEG_INFINITY, 2.0]);
        let p = x.softmax(0).to_vec();
        assert_eq!(p[1], 0.0);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_rows_sum_to_one_along_axis() {
        let x = Tensor::<f64>::from_vec(&[2, 3, 2], (0..12).map(|v| (v as f64).sin()).collect());
        let p = x.softmax(1);
        let v = p.to_vec();
        for o in 0..2 {
            for i in 0..2 {
                let s: f64 = (0..3).map(|l| v[o * 6 + l * 2 + i]).sum();
                assert!((s - 1.0).abs() < 1e-6);
            }
        }
    }
}
