//! Patch-based down/upsampling: 2×2 neighborhood rearrangement plus a
//! learned channel map.

use super::{Linear, ParamSet};
use crate::tensor::{Scalar, Tensor};

/// `[N,H,W,C] -> [N,H/2,W/2,out]`: space-to-depth to 4C channels followed
/// by a linear map.
pub struct PatchDownsample<T: Scalar> {
    pub reduce: Linear<T>, // 4C -> out
}

impl<T: Scalar> PatchDownsample<T> {
    pub fn new(ps: &mut ParamSet<T>, name: &str, c_in: usize, c_out: usize) -> Self {
        PatchDownsample {
            reduce: Linear::new(ps, &format!("{name}.reduce"), 4 * c_in, c_out),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        let s = x.shape();
        assert!(
            s[1] % 2 == 0 && s[2] % 2 == 0,
            "patch_downsample needs even spatial dims, got {s:?}"
        );
        self.reduce.forward(&x.space_to_depth2())
    }
}

/// `[N,H,W,C] -> [N,2H,2W,out]`: linear map to 4·out channels followed by
/// depth-to-space.
pub struct PatchUpsample<T: Scalar> {
    pub expand: Linear<T>, // C -> 4*out
}

impl<T: Scalar> PatchUpsample<T> {
    pub fn new(ps: &mut ParamSet<T>, name: &str, c_in: usize, c_out: usize) -> Self {
        PatchUpsample {
            expand: Linear::new(ps, &format!("{name}.expand"), c_in, 4 * c_out),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        self.expand.forward(x).depth_to_space2()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_weights(n: usize) -> Vec<f64> {
        let mut w = vec![0.0; n * n];
        for i in 0..n {
            w[i * n + i] = 1.0;
        }
        w
    }

    #[test]
    fn down_shape() {
        let mut ps = ParamSet::<f64>::new(0);
        let down = PatchDownsample::new(&mut ps, "d", 4, 10);
        let x = Tensor::<f64>::zeros(&[1, 8, 8, 4]);
        assert_eq!(down.forward(&x).shape(), &[1, 4, 4, 10]);
    }

    #[test]
    fn up_shape() {
        let mut ps = ParamSet::<f64>::new(0);
        let up = PatchUpsample::new(&mut ps, "u", 6, 3);
        let x = Tensor::<f64>::zeros(&[1, 4, 4, 6]);
        assert_eq!(up.forward(&x).shape(), &[1, 8, 8, 3]);
    }

    #[test]
    fn identity_maps_invert() {
        // down with identity 4C->4C is a pure rearrangement; up with
        // identity undoes it
        let c = 3;
        let mut ps = ParamSet::<f64>::new(0);
        let down = PatchDownsample::new(&mut ps, "d", c, 4 * c);
        let up = PatchUpsample::new(&mut ps, "u", 4 * c, c);
        down.reduce.weight.set_data(&identity_weights(4 * c));
        down.reduce.bias.set_data(&vec![0.0; 4 * c]);
        up.expand.weight.set_data(&identity_weights(4 * c));
        up.expand.bias.set_data(&vec![0.0; 4 * c]);

        let x = Tensor::<f64>::from_vec(&[2, 4, 4, c], (0..96).map(|v| v as f64).collect());
        let y = up.forward(&down.forward(&x));
        assert_eq!(y.to_vec(), x.to_vec());
    }

    #[test]
    #[should_panic(expected = "even spatial dims")]
    fn down_rejects_odd_dims() {
        let mut ps = ParamSet::<f64>::new(0);
        let down = PatchDownsample::new(&mut ps, "d", 2, 4);
        let _ = down.forward(&Tensor::<f64>::zeros(&[1, 3, 4, 2]));
    }
}
