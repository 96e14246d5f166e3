//! Learned factorized prior for the hyper-latent.
//!
//! Each channel owns a small monotone network c(u): K affine stages with
//! softplus-positive matrices and bounded tanh gates, finished by a
//! sigmoid, so the composite is a valid CDF. The likelihood of an integer
//! value is c(ẑ+½) − c(ẑ−½).

use super::coder::CdfTable;
use super::gaussian::EPS_P;
use crate::nn::{Init, ParamSet};
use crate::tensor::{Scalar, Tensor};

/// Hidden widths of the per-channel CDF network (K = 4 affine stages).
pub const WIDTHS: [usize; 5] = [1, 3, 3, 3, 1];
/// Initial spread of the density in latent units.
pub const INIT_SCALE: f64 = 10.0;
/// Tail mass bound used when deriving integer coding supports.
pub const EPS_TAIL: f64 = 1e-6;
const SUPPORT_LIMIT: i64 = 1 << 14;

pub struct FactorizedPrior<T: Scalar> {
    /// Raw stage matrices `[C, w_out, w_in]`; effective = softplus(raw).
    pub matrices: Vec<Tensor<T>>,
    /// Stage biases `[C, w_out, 1]`.
    pub biases: Vec<Tensor<T>>,
    /// Gate parameters `[C, w_out, 1]` for all but the last stage;
    /// effective = tanh(raw).
    pub factors: Vec<Tensor<T>>,
    channels: usize,
}

fn softplus_inv(y: f64) -> f64 {
    y.exp_m1().ln()
}

impl<T: Scalar> FactorizedPrior<T> {
    pub fn new(ps: &mut ParamSet<T>, name: &str, channels: usize) -> Self {
        let stages = WIDTHS.len() - 1;
        let scale = INIT_SCALE.powf(1.0 / stages as f64);
        let mut matrices = Vec::with_capacity(stages);
        let mut biases = Vec::with_capacity(stages);
        let mut factors = Vec::with_capacity(stages - 1);
        for k in 0..stages {
            let (w_in, w_out) = (WIDTHS[k], WIDTHS[k + 1]);
            let m_init = softplus_inv(1.0 / (scale * w_out as f64));
            matrices.push(ps.tensor(
                &format!("{name}.m{k}"),
                &[channels, w_out, w_in],
                Init::Const(m_init),
            ));
            biases.push(ps.tensor(
                &format!("{name}.b{k}"),
                &[channels, w_out, 1],
                Init::Uniform(0.5),
            ));
            if k + 1 < stages {
                factors.push(ps.tensor(
                    &format!("{name}.a{k}"),
                    &[channels, w_out, 1],
                    Init::Zeros,
                ));
            }
        }
        FactorizedPrior {
            matrices,
            biases,
            factors,
            channels,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// CDF of every element of `u` (shape `[N,C,H,W]`), on the tape.
    pub fn cdf(&self, u: &Tensor<T>) -> Tensor<T> {
        let s = u.shape().to_vec();
        assert_eq!(s.len(), 4, "factorized prior expects NCHW");
        assert_eq!(s[1], self.channels, "channel count mismatch");
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        let m = n * h * w;
        // group by channel: [C, 1, N·H·W]
        let mut x = u
            .permute(&[1, 0, 2, 3])
            .reshape(&[c, 1, m]);
        let stages = self.matrices.len();
        for k in 0..stages {
            let w_out = WIDTHS[k + 1];
            let mat = self.matrices[k].softplus();
            x = mat.matmul(&x); // [C, w_out, M]
            x = x.add(&self.biases[k].expand(&[c, w_out, m]));
            if k + 1 < stages {
                let gate = self.factors[k].tanh().expand(&[c, w_out, m]);
                x = x.add(&gate.mul(&x.tanh()));
            }
        }
        x.sigmoid()
            .reshape(&[c, n, h, w])
            .permute(&[1, 0, 2, 3])
    }

    /// p(ẑ) = c(ẑ+½) − c(ẑ−½), floored at [`EPS_P`].
    pub fn likelihood(&self, z: &Tensor<T>) -> Tensor<T> {
        let upper = self.cdf(&z.add_scalar(0.5));
        let lower = self.cdf(&z.add_scalar(-0.5));
        upper.sub(&lower).clamp_min(EPS_P)
    }

    /// Plain (tape-free) CDF evaluation for one channel, used to build
    /// deterministic coder tables.
    pub fn cdf_scalar(&self, channel: usize, u: f64) -> f64 {
        assert!(channel < self.channels);
        let stages = self.matrices.len();
        let mut x = vec![u];
        for k in 0..stages {
            let (w_in, w_out) = (WIDTHS[k], WIDTHS[k + 1]);
            let mat = self.matrices[k].data();
            let bias = self.biases[k].data();
            let mut next = vec![0.0f64; w_out];
            for (o, nx) in next.iter_mut().enumerate() {
                let mut acc = bias[channel * w_out + o].as_f64();
                for (i, &xv) in x.iter().enumerate() {
                    let raw = mat[(channel * w_out + o) * w_in + i].as_f64();
                    // softplus
                    let sp = raw.max(0.0) + (-raw.abs()).exp().ln_1p();
                    acc += sp * xv;
                }
                *nx = acc;
            }
            if k + 1 < stages {
                let gate = self.factors[k].data();
                for (o, nx) in next.iter_mut().enumerate() {
                    let a = gate[channel * w_out + o].as_f64().tanh();
                    *nx += a * nx.tanh();
                }
            }
            x = next;
        }
        let logit = x[0];
        1.0 / (1.0 + (-logit).exp())
    }

    /// Integer support `[lo, hi]` where the channel's mass outside is below
    /// [`EPS_TAIL`] per side.
    pub fn support(&self, channel: usize) -> (i64, i64) {
        let mut lo: i64 = 0;
        while self.cdf_scalar(channel, lo as f64 - 0.5) > EPS_TAIL && lo > -SUPPORT_LIMIT {
            lo -= 1;
        }
        let mut hi: i64 = 0;
        while 1.0 - self.cdf_scalar(channel, hi as f64 + 0.5) > EPS_TAIL && hi < SUPPORT_LIMIT {
            hi += 1;
        }
        (lo, hi)
    }

    /// Per-channel quantized coder tables with their integer offsets. The
    /// extreme bins absorb the out-of-support tails.
    pub fn build_tables(&self) -> Vec<(i64, CdfTable)> {
        (0..self.channels)
            .map(|c| {
                let (lo, hi) = self.support(c);
                let n = (hi - lo + 1) as usize;
                let mut pmf = Vec::with_capacity(n);
                for k in lo..=hi {
                    let p = if k == lo {
                        self.cdf_scalar(c, k as f64 + 0.5)
                    } else if k == hi {
                        1.0 - self.cdf_scalar(c, k as f64 - 0.5)
                    } else {
                        self.cdf_scalar(c, k as f64 + 0.5)
                            - self.cdf_scalar(c, k as f64 - 0.5)
                    };
                    pmf.push(p.max(0.0));
                }
                (lo, CdfTable::from_pmf(&pmf))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prior() -> (ParamSet<f64>, FactorizedPrior<f64>) {
        let mut ps = ParamSet::<f64>::new(77);
        let p = FactorizedPrior::new(&mut ps, "prior", 3);
        (ps, p)
    }

    #[test]
    fn cdf_is_monotone_and_bounded() {
        let (_ps, prior) = prior();
        for c in 0..3 {
            let mut prev = 0.0;
            for i in 0..81 {
                let u = -20.0 + i as f64 * 0.5;
                let v = prior.cdf_scalar(c, u);
                assert!((0.0..=1.0).contains(&v));
                assert!(v >= prev, "CDF not monotone at channel {c}, u={u}");
                prev = v;
            }
            assert!(prior.cdf_scalar(c, -60.0) < 0.01);
            assert!(prior.cdf_scalar(c, 60.0) > 0.99);
            assert!(prior.cdf_scalar(c, -250.0) < 1e-6);
            assert!(prior.cdf_scalar(c, 250.0) > 1.0 - 1e-6);
        }
    }

    #[test]
    fn graph_cdf_matches_scalar_oracle() {
        let (_ps, prior) = prior();
        let zs = [-3.0, -0.5, 0.0, 0.25, 1.0, 7.5];
        for (c, &zv) in zs.iter().enumerate() {
            let ch = c % 3;
            let mut data = vec![0.0; 3];
            data[ch] = zv;
            let z = Tensor::<f64>::from_vec(&[1, 3, 1, 1], data);
            let graph = prior.cdf(&z).to_vec()[ch];
            let scalar = prior.cdf_scalar(ch, zv);
            assert!(
                (graph - scalar).abs() < 1e-12,
                "graph {graph} vs oracle {scalar}"
            );
        }
    }

    #[test]
    fn likelihood_at_zero_matches_grid_oracle() {
        let (_ps, prior) = prior();
        let z = Tensor::<f64>::zeros(&[1, 3, 1, 1]);
        let p = prior.likelihood(&z).to_vec();
        for c in 0..3 {
            let oracle = prior.cdf_scalar(c, 0.5) - prior.cdf_scalar(c, -0.5);
            assert!((p[c] - oracle.max(EPS_P)).abs() < 1e-12);
        }
    }

    #[test]
    fn integer_masses_telescope_below_one() {
        let (_ps, prior) = prior();
        for c in 0..3 {
            let mut total = 0.0;
            for k in -64..=64 {
                let p = prior.cdf_scalar(c, k as f64 + 0.5)
                    - prior.cdf_scalar(c, k as f64 - 0.5);
                assert!(p >= 0.0);
                total += p;
            }
            assert!(total <= 1.0 + 1e-6);
        }
    }

    #[test]
    fn tables_cover_support() {
        let (_ps, prior) = prior();
        for (lo, table) in prior.build_tables() {
            assert!(lo <= 0);
            assert!(table.num_symbols() as i64 + lo > 0);
        }
    }

    #[test]
    fn likelihood_gradients_flow_to_prior_params() {
        let mut ps = ParamSet::<f64>::new(5);
        let prior = FactorizedPrior::new(&mut ps, "p", 2);
        let z = Tensor::<f64>::from_vec(&[1, 2, 1, 2], vec![0.3, -1.2, 0.0, 2.0]);
        let loss = prior.likelihood(&z).ln().sum_all().neg();
        loss.backward().unwrap();
        for p in &ps.params {
            assert!(p.tensor.grad().is_some(), "no grad for {}", p.name);
        }
    }
}
