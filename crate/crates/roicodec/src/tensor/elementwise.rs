//! Elementwise and reduction operations.
//!
//! Binary ops broadcast over leading batch dimensions only: the smaller
//! operand's shape must be a suffix of the larger's, and is tiled along the
//! lead. Anything else needs an explicit `expand` or `reshape` first.

use super::{numel_of, Scalar, Tensor};

/// Resolves suffix broadcasting. Returns (output shape, lead_a, lead_b)
/// where `lead_x` is how many times operand x is tiled.
fn suffix_broadcast<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, op: &str) -> (Vec<usize>, usize, usize) {
    let sa = a.shape();
    let sb = b.shape();
    if sa == sb {
        return (sa.to_vec(), 1, 1);
    }
    if sa.len() > sb.len() && sa[sa.len() - sb.len()..] == *sb {
        let lead = numel_of(&sa[..sa.len() - sb.len()]);
        return (sa.to_vec(), 1, lead);
    }
    if sb.len() > sa.len() && sb[sb.len() - sa.len()..] == *sa {
        let lead = numel_of(&sb[..sb.len() - sa.len()]);
        return (sb.to_vec(), lead, 1);
    }
    panic!("{op}: shapes {sa:?} and {sb:?} are not suffix-broadcastable");
}

/// Sums tiled gradient back onto the original (suffix) shape.
fn reduce_lead<T: Scalar>(grad: &[T], small_numel: usize) -> Vec<T> {
    let mut out = vec![T::zero(); small_numel];
    for chunk in grad.chunks_exact(small_numel) {
        for (o, &g) in out.iter_mut().zip(chunk) {
            *o = *o + g;
        }
    }
    out
}

impl<T: Scalar> Tensor<T> {
    fn binary(&self, other: &Tensor<T>, op: &'static str, f: fn(T, T) -> T) -> Tensor<T> {
        let (shape, _, _) = suffix_broadcast(self, other, op);
        let a = self.data();
        let b = other.data();
        let na = a.len();
        let nb = b.len();
        let n = numel_of(&shape);
        let mut out = Vec::with_capacity(n);
        if na == nb {
            for (&av, &bv) in a.iter().zip(b.iter()) {
                out.push(f(av, bv));
            }
        } else if nb < na {
            for chunk in a.chunks_exact(nb) {
                for (&av, &bv) in chunk.iter().zip(b.iter()) {
                    out.push(f(av, bv));
                }
            }
        } else {
            for chunk in b.chunks_exact(na) {
                for (&av, &bv) in a.iter().zip(chunk.iter()) {
                    out.push(f(av, bv));
                }
            }
        }
        drop(a);
        drop(b);

        let backward: super::BackwardFn<T> = match op {
            "add" => Box::new(move |g, _out, parents| {
                scatter_binary_grad(g, parents, |_, _, gi| (gi, gi));
            }),
            "sub" => Box::new(move |g, _out, parents| {
                scatter_binary_grad(g, parents, |_, _, gi| (gi, -gi));
            }),
            "mul" => Box::new(move |g, _out, parents| {
                scatter_binary_grad(g, parents, |av, bv, gi| (gi * bv, gi * av));
            }),
            "div" => Box::new(move |g, _out, parents| {
                scatter_binary_grad(g, parents, |av, bv, gi| (gi / bv, -gi * av / (bv * bv)));
            }),
            _ => unreachable!(),
        };
        Tensor::from_op(shape, out, vec![self.clone(), other.clone()], backward)
    }

    pub fn add(&self, other: &Tensor<T>) -> Tensor<T> {
        self.binary(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor<T>) -> Tensor<T> {
        self.binary(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor<T>) -> Tensor<T> {
        self.binary(other, "mul", |a, b| a * b)
    }

    pub fn div(&self, other: &Tensor<T>) -> Tensor<T> {
        self.binary(other, "div", |a, b| a / b)
    }

    // ── Unary ops ──────────────────────────────────────────────────

    fn unary(
        &self,
        f: impl Fn(T) -> T,
        backward: impl Fn(T /*x*/, T /*y*/, T /*g*/) -> T + 'static,
    ) -> Tensor<T> {
        let data: Vec<T> = self.data().iter().map(|&v| f(v)).collect();
        let shape = self.shape().to_vec();
        Tensor::from_op(
            shape,
            data,
            vec![self.clone()],
            Box::new(move |g, out, parents| {
                let x = parents[0].data();
                let contrib: Vec<T> = g
                    .iter()
                    .zip(out.iter())
                    .zip(x.iter())
                    .map(|((&gi, &yi), &xi)| backward(xi, yi, gi))
                    .collect();
                drop(x);
                parents[0].accumulate_grad(&contrib);
            }),
        )
    }

    pub fn neg(&self) -> Tensor<T> {
        self.unary(|v| -v, |_, _, g| -g)
    }

    pub fn exp(&self) -> Tensor<T> {
        self.unary(|v| v.exp(), |_, y, g| g * y)
    }

    pub fn ln(&self) -> Tensor<T> {
        self.unary(|v| v.ln(), |x, _, g| g / x)
    }

    pub fn sqrt(&self) -> Tensor<T> {
        self.unary(
            |v| v.sqrt(),
            |_, y, g| g * T::from_f64(0.5) / y,
        )
    }

    pub fn square(&self) -> Tensor<T> {
        self.unary(|v| v * v, |x, _, g| g * T::from_f64(2.0) * x)
    }

    pub fn tanh(&self) -> Tensor<T> {
        self.unary(|v| v.tanh(), |_, y, g| g * (T::one() - y * y))
    }

    pub fn sigmoid(&self) -> Tensor<T> {
        self.unary(
            |v| T::one() / (T::one() + (-v).exp()),
            |_, y, g| g * y * (T::one() - y),
        )
    }

    /// Numerically stable ln(1 + e^x).
    pub fn softplus(&self) -> Tensor<T> {
        self.unary(
            |v| v.max(T::zero()) + (-v.abs()).exp().ln_1p(),
            |x, _, g| g / (T::one() + (-x).exp()),
        )
    }

    pub fn leaky_relu(&self, negative_slope: f64) -> Tensor<T> {
        let slope = T::from_f64(negative_slope);
        self.unary(
            move |v| if v > T::zero() { v } else { v * slope },
            move |x, _, g| if x > T::zero() { g } else { g * slope },
        )
    }

    /// Clamp with pass-through subgradient inside the interval.
    pub fn clamp(&self, lo: f64, hi: f64) -> Tensor<T> {
        let lo = T::from_f64(lo);
        let hi = T::from_f64(hi);
        self.unary(
            move |v| v.max(lo).min(hi),
            move |x, _, g| if x >= lo && x <= hi { g } else { T::zero() },
        )
    }

    pub fn clamp_min(&self, lo: f64) -> Tensor<T> {
        let lo = T::from_f64(lo);
        self.unary(
            move |v| v.max(lo),
            move |x, _, g| if x >= lo { g } else { T::zero() },
        )
    }

    pub fn add_scalar(&self, c: f64) -> Tensor<T> {
        let c = T::from_f64(c);
        self.unary(move |v| v + c, |_, _, g| g)
    }

    pub fn mul_scalar(&self, c: f64) -> Tensor<T> {
        let c = T::from_f64(c);
        self.unary(move |v| v * c, move |_, _, g| g * c)
    }

    /// Standard normal CDF Φ(x) = erfc(−x/√2)/2.
    pub fn normal_cdf(&self) -> Tensor<T> {
        let inv_sqrt2 = T::from_f64(std::f64::consts::FRAC_1_SQRT_2);
        let inv_sqrt_2pi = T::from_f64(1.0 / (2.0 * std::f64::consts::PI).sqrt());
        self.unary(
            move |v| (-(v * inv_sqrt2)).erfc() * T::from_f64(0.5),
            move |x, _, g| g * (-(x * x) * T::from_f64(0.5)).exp() * inv_sqrt_2pi,
        )
    }

    /// Exact GELU: x·Φ(x).
    pub fn gelu(&self) -> Tensor<T> {
        self.mul(&self.normal_cdf())
    }

    /// SiLU / swish: x·σ(x). Smooth and cheap; the network's pointwise
    /// nonlinearity.
    pub fn silu(&self) -> Tensor<T> {
        self.unary(
            |v| v / (T::one() + (-v).exp()),
            |x, _, g| {
                let s = T::one() / (T::one() + (-x).exp());
                g * s * (T::one() + x * (T::one() - s))
            },
        )
    }

    /// Round-half-away-from-zero with a straight-through gradient.
    pub fn round_ste(&self) -> Tensor<T> {
        self.unary(|v| v.round(), |_, _, g| g)
    }

    /// Round-half-away-from-zero, detached from the tape.
    pub fn round_detached(&self) -> Tensor<T> {
        let data: Vec<T> = self.data().iter().map(|v| v.round()).collect();
        Tensor::from_vec(self.shape(), data)
    }

    // ── Reductions ─────────────────────────────────────────────────

    pub fn sum_all(&self) -> Tensor<T> {
        let total = self
            .data()
            .iter()
            .fold(T::zero(), |acc, &v| acc + v);
        let n = self.numel();
        Tensor::from_op(
            vec![1],
            vec![total],
            vec![self.clone()],
            Box::new(move |g, _out, parents| {
                parents[0].accumulate_grad(&vec![g[0]; n]);
            }),
        )
    }

    pub fn mean_all(&self) -> Tensor<T> {
        let n = self.numel();
        self.sum_all().mul_scalar(1.0 / n as f64)
    }
}

/// Shared backward for binary elementwise ops: computes per-element
/// contributions from (a, b, g) then reduces over broadcast leads.
fn scatter_binary_grad<T: Scalar>(
    g: &[T],
    parents: &[Tensor<T>],
    f: impl Fn(T, T, T) -> (T, T),
) {
    let a = &parents[0];
    let b = &parents[1];
    let ad = a.data();
    let bd = b.data();
    let na = ad.len();
    let nb = bd.len();
    let want_a = a.requires_grad();
    let want_b = b.requires_grad();
    let mut ga = vec![T::zero(); if want_a { g.len() } else { 0 }];
    let mut gb = vec![T::zero(); if want_b { g.len() } else { 0 }];
    if na == nb {
        for (i, &gi) in g.iter().enumerate() {
            let (ca, cb) = f(ad[i], bd[i], gi);
            if want_a {
                ga[i] = ca;
            }
            if want_b {
                gb[i] = cb;
            }
        }
    } else {
        let small = na.min(nb);
        for (ci, chunk) in g.chunks_exact(small).enumerate() {
            let base = ci * small;
            for (j, &gi) in chunk.iter().enumerate() {
                let av = if na == small { ad[j] } else { ad[base + j] };
                let bv = if nb == small { bd[j] } else { bd[base + j] };
                let (ca, cb) = f(av, bv, gi);
                if want_a {
                    ga[base + j] = ca;
                }
                if want_b {
                    gb[base + j] = cb;
                }
            }
        }
    }
    drop(ad);
    drop(bd);
    if want_a {
        let ga = if ga.len() == na { ga } else { reduce_lead(&ga, na) };
        a.accumulate_grad(&ga);
    }
    if want_b {
        let gb = if gb.len() == nb { gb } else { reduce_lead(&gb, nb) };
        b.accumulate_grad(&gb);
    }
}

#[cfg(test)]
mod tests {
    use super::super::Tensor;

    #[test]
    fn suffix_broadcast_add_bias() {
        // [2,3] + [3]
        let x = Tensor::<f64>::from_vec(&[2, 3], vec![1., 2., 3., 4., 5., 6.]);
        let b = Tensor::<f64>::param(&[3], vec![10., 20., 30.]);
        let y = x.add(&b);
        assert_eq!(y.to_vec(), vec![11., 22., 33., 14., 25., 36.]);
        let loss = y.sum_all();
        loss.backward().unwrap();
        assert_eq!(b.grad().unwrap(), vec![2., 2., 2.]);
    }

    #[test]
    #[should_panic(expected = "suffix-broadcastable")]
    fn mismatched_shapes_panic() {
        let x = Tensor::<f64>::zeros(&[2, 3]);
        let y = Tensor::<f64>::zeros(&[2, 2]);
        let _ = x.add(&y);
    }

    #[test]
    fn round_ties_away_from_zero() {
        let x = Tensor::<f64>::from_vec(&[4], vec![1.4, 1.5, -1.5, -2.5]);
        assert_eq!(x.round_detached().to_vec(), vec![1.0, 2.0, -2.0, -3.0]);
    }

    #[test]
    fn normal_cdf_matches_table() {
        let x = Tensor::<f64>::from_vec(&[3], vec![0.0, 0.5, -0.5]);
        let p = x.normal_cdf().to_vec();
        assert!((p[0] - 0.5).abs() < 1e-12);
        assert!((p[1] - 0.6914624612740131).abs() < 1e-12);
        assert!((p[2] - 0.3085375387259869).abs() < 1e-12);
    }

    #[test]
    fn softplus_is_stable_for_large_inputs() {
        let x = Tensor::<f64>::from_vec(&[2], vec![800.0, -800.0]);
        let y = x.softplus().to_vec();
        assert_eq!(y[0], 800.0);
        assert_eq!(y[1], 0.0);
    }
}
