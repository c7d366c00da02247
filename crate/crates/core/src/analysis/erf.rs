use crate::error::{Error, Result};
use crate::harness::image_io::encode_pnm;
use crate::net::RestorationNet;
use crate::numerics::{Graph, Real, Tensor, Var};

/// A differentiable map from an `H×W×3` image to an `H×W×C` output.
pub trait ImageModel<T: Real> {
    fn forward_image(&self, g: &mut Graph<T>, image: Var) -> Result<Var>;
}

impl<T: Real> ImageModel<T> for RestorationNet<T> {
    fn forward_image(&self, g: &mut Graph<T>, image: Var) -> Result<Var> {
        let pv = self.params.bind(g, false);
        self.forward(g, &pv, image)
    }
}

/// Normalized input-gradient magnitude for one target pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct ErfMap {
    pub height: usize,
    pub width: usize,
    pub target: (usize, usize),
    /// Row-major, nonnegative, sums to 1.
    pub values: Vec<f64>,
}

impl ErfMap {
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    /// `row,col,value` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("row,col,value\n");
        for (i, v) in self.values.iter().enumerate() {
            s.push_str(&format!("{},{},{v:e}\n", i / self.width, i % self.width));
        }
        s
    }

    /// 8-bit heat image scaled so the maximum maps to 255.
    pub fn to_pgm(&self) -> Result<Vec<u8>> {
        let max = self.values.iter().cloned().fold(0.0, f64::max);
        let scale = if max > 0.0 { 1.0 / max } else { 0.0 };
        let img = Tensor::<f64>::new(
            &[self.height, self.width, 1],
            self.values.iter().map(|v| v * scale).collect(),
        )?;
        encode_pnm(&img)
    }

    /// Fraction of the off-target mass lying within `half_width_deg` of the
    /// four diagonal directions (45°, 135°, 225°, 315°) around the target.
    pub fn diagonal_cone_mass(&self, half_width_deg: f64) -> f64 {
        let (tr, tc) = self.target;
        let (mut cone, mut total) = (0.0, 0.0);
        for (i, &v) in self.values.iter().enumerate() {
            let (r, c) = (i / self.width, i % self.width);
            if (r, c) == (tr, tc) {
                continue;
            }
            let dy = r as f64 - tr as f64;
            let dx = c as f64 - tc as f64;
            let angle = dy.abs().atan2(dx.abs()).to_degrees();
            total += v;
            if (angle - 45.0).abs() <= half_width_deg {
                cone += v;
            }
        }
        if total > 0.0 {
            cone / total
        } else {
            0.0
        }
    }
}

/// Averages `|∂s/∂input|` over images, where `s` sums the output channels at
/// `target`; input channels are summed and the map normalized to unit mass.
pub fn erf_map<T: Real, M: ImageModel<T> + ?Sized>(
    model: &M,
    images: &[Tensor<T>],
    target: (usize, usize),
) -> Result<ErfMap> {
    let first = images.first().ok_or_else(|| Error::config("erf needs at least one image"))?;
    let (h, w) = match *first.shape() {
        [h, w, _] => (h, w),
        ref s => return Err(Error::dim("erf_map", format!("expected H×W×C, got {s:?}"))),
    };
    if target.0 >= h || target.1 >= w {
        return Err(Error::config(format!("target {target:?} outside {h}×{w}")));
    }
    let mut acc = vec![0.0f64; h * w];
    for img in images {
        if img.shape()[..2] != [h, w] {
            return Err(Error::dim("erf_map", "images differ in extent"));
        }
        let c_in = img.last_dim();
        let mut g = Graph::new();
        let x = g.leaf(img.clone().with_requires_grad(true));
        let y = model.forward_image(&mut g, x)?;
        let c_out = match *g.shape(y) {
            [yh, yw, c] if (yh, yw) == (h, w) => c,
            ref s => return Err(Error::dim("erf_map", format!("model output {s:?}"))),
        };
        let mut mask = Tensor::<T>::zeros(&[h, w, c_out])?;
        for ch in 0..c_out {
            mask.set(&[target.0, target.1, ch], T::one());
        }
        let m = g.constant(mask);
        let picked = g.mul(y, m)?;
        let s = g.sum(picked)?;
        g.backward(s)?;
        if let Some(grad) = g.grad(x) {
            for (a, px) in acc.iter_mut().zip(grad.chunks_exact(c_in)) {
                *a += px.iter().map(|v| v.as_f64().abs()).sum::<f64>();
            }
        }
    }
    let n = images.len() as f64;
    acc.iter_mut().for_each(|v| *v /= n);
    let total: f64 = acc.iter().sum();
    if total <= 0.0 || !total.is_finite() {
        return Err(Error::NonFinite {
            op: "erf_map",
            index: 0,
        });
    }
    acc.iter_mut().for_each(|v| *v /= total);
    Ok(ErfMap {
        height: h,
        width: w,
        target,
        values: acc,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::zero_params;
    use crate::net::{build_network, NetConfig};
    use crate::params::uniform;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct DwConvNet(Tensor<f64>);

    impl ImageModel<f64> for DwConvNet {
        fn forward_image(&self, g: &mut Graph<f64>, image: Var) -> Result<Var> {
            let k = g.constant(self.0.clone());
            g.dwconv2d(image, k, None)
        }
    }

    fn images(n: usize, h: usize, w: usize) -> Vec<Tensor<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        (0..n).map(|_| uniform(&[h, w, 3], 1.0, &mut rng).unwrap()).collect()
    }

    #[test]
    fn identity_net_gives_delta() {
        let mut net = build_network::<f64>(&NetConfig::tiny(), 0).unwrap();
        let ids = net.residual_output_params();
        zero_params(&mut net.params, &ids);
        let erf = erf_map(&net, &images(2, 16, 16), (5, 9)).unwrap();
        assert_eq!(erf.at(5, 9), 1.0);
        assert_eq!(erf.values.iter().filter(|&&v| v != 0.0).count(), 1);
    }

    #[test]
    fn dwconv_support_is_three_by_three() {
        let k: Tensor<f64> = uniform(&[3, 3, 3], 1.0, &mut ChaCha8Rng::seed_from_u64(1))
            .unwrap()
            .map(|v| v + 2.0);
        let erf = erf_map(&DwConvNet(k), &images(3, 9, 9), (4, 4)).unwrap();
        for r in 0..9usize {
            for c in 0..9usize {
                let inside = r.abs_diff(4) <= 1 && c.abs_diff(4) <= 1;
                assert_eq!(erf.at(r, c) > 0.0, inside, "({r},{c})");
            }
        }
        assert!((erf.values.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn random_net_map_is_normalized() {
        let net = build_network::<f64>(&NetConfig::tiny(), 4).unwrap();
        let erf = erf_map(&net, &images(2, 16, 16), (8, 8)).unwrap();
        assert!(erf.values.iter().all(|&v| v >= 0.0));
        assert!((erf.values.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        let pgm = erf.to_pgm().unwrap();
        assert!(pgm.starts_with(b"P5\n16 16\n255\n"));
        assert_eq!(erf.to_csv().lines().count(), 1 + 256);
    }

    #[test]
    fn empty_and_out_of_bounds_are_config_errors() {
        let net = build_network::<f64>(&NetConfig::tiny(), 0).unwrap();
        assert!(matches!(erf_map(&net, &[], (0, 0)), Err(Error::Config(_))));
        assert!(matches!(erf_map(&net, &images(1, 8, 8), (8, 0)), Err(Error::Config(_))));
    }

    #[test]
    fn cone_mass_of_diagonal_pattern() {
        let mut values = vec![0.0; 25];
        values[0] = 0.25; // (0,0) at 45°
        values[2] = 0.25; // (0,2) straight up
        values[12] = 0.5; // target itself
        let erf = ErfMap {
            height: 5,
            width: 5,
            target: (2, 2),
            values,
        };
        assert_eq!(erf.diagonal_cone_mass(10.0), 0.5);
    }
}
