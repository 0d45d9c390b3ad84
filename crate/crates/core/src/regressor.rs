//! Per-shape view-point regression.
//!
//! A point encoder summarizes the shape; an MLP maps the summary (plus the
//! normalized initial angles for the offset variants) to `2M` raw outputs,
//! squashed by `tanh` and scaled by the per-angle bound. Offset variants add
//! the result to the initial views; the direct variant uses it as is.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::diffmath::{Tensor, Value};
use crate::error::{Error, Result};
use crate::geomcam::{canonical_affine, ViewSet};
use crate::netblocks::{Bound, Mlp, NetConfig, ParamStore, PointEncoder};

pub const PREFIX: &str = "mvtn.";
pub const ELEVATION_BOUND: f64 = 90.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Absolute angles.
    Direct,
    /// Offsets from a ring of views.
    Circular,
    /// Offsets from a sphere-covering set of views.
    Spherical,
}

impl Variant {
    pub fn is_offset(self) -> bool {
        !matches!(self, Variant::Direct)
    }
}

#[derive(Clone, Debug)]
pub struct ViewRegressor {
    pub variant: Variant,
    pub views: usize,
    pub encoder: PointEncoder,
    pub mlp: Mlp,
    pub azimuth_bound: f64,
    pub elevation_bound: f64,
}

/// Regressed views, both as tape values and as plain numbers.
pub struct Regressed<'t> {
    /// Raw MLP output `[2M]`, before `tanh`.
    pub raw: Value<'t>,
    /// Canonicalized azimuths `[M]`.
    pub azimuth: Value<'t>,
    /// Canonicalized elevations `[M]`.
    pub elevation: Value<'t>,
    /// Bounded offsets (or absolute angles for the direct variant) before
    /// adding the initial views: `M` azimuths then `M` elevations.
    pub offsets: Vec<f64>,
    /// Angles before canonicalization, same layout as `offsets`.
    pub uncanonical: Vec<f64>,
    pub views: ViewSet,
}

/// Scalar parameter count of the regression MLP for point feature size `b`.
pub fn mlp_param_count(variant: Variant, m: usize, b: usize) -> usize {
    let input = if variant.is_offset() { b + 2 * m } else { b };
    let widths = [input, b, b, 5 * m, 2 * m, 2 * m];
    widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl ViewRegressor {
    pub fn new(variant: Variant, m: usize, cfg: &NetConfig) -> Result<Self> {
        if m == 0 {
            return Err(Error::Config("view regressor needs at least one view".into()));
        }
        let b = cfg.point_dim;
        let input = if variant.is_offset() { b + 2 * m } else { b };
        Ok(ViewRegressor {
            variant,
            views: m,
            encoder: PointEncoder::new("mvtn.encoder", cfg),
            mlp: Mlp::new("mvtn.mlp", &[input, b, b, 5 * m, 2 * m, 2 * m]),
            azimuth_bound: if variant.is_offset() { 180.0 / m as f64 } else { 180.0 },
            elevation_bound: ELEVATION_BOUND,
        })
    }

    /// Initializes weights; `zero_last` zeroes the final layer so the
    /// regressor starts at the initial views (offset variants) or at
    /// azimuth = elevation = 0 (direct).
    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng, zero_last: bool) {
        self.encoder.init(store, rng);
        self.mlp.init(store, rng, zero_last);
    }

    pub fn param_count(&self) -> usize {
        self.encoder.mlp.param_count() + self.mlp.param_count()
    }

    pub fn final_bias_name(&self) -> String {
        self.mlp.last().bias_name()
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, shape: &PointCloud, u0: &ViewSet) -> Result<Regressed<'t>> {
        let m = self.views;
        if u0.len() != m {
            return Err(Error::ShapeMismatch(format!("regressor predicts {m} views but got {}", u0.len())));
        }
        let feat = self.encoder.encode(p, shape)?;
        let tape = feat.tape();
        let input = if self.variant.is_offset() {
            let mut angles: Vec<f64> = u0.azimuth.iter().map(|a| a / 180.0).collect();
            angles.extend(u0.elevation.iter().map(|e| e / 90.0));
            Value::concat(&[feat, tape.constant(Tensor::vector(angles))])
        } else {
            feat
        };
        let raw = self.mlp.forward(p, input)?;
        let mut bounds = vec![self.azimuth_bound; m];
        bounds.extend(vec![self.elevation_bound; m]);
        let offsets_v = raw.tanh().mul_const(&Tensor::vector(bounds));
        let offsets = offsets_v.to_tensor().into_data();
        let (mut az, mut el) = (offsets_v.slice(0, m), offsets_v.slice(m, m));
        if self.variant.is_offset() {
            az = az.add_const(&Tensor::vector(u0.azimuth.clone()));
            el = el.add_const(&Tensor::vector(u0.elevation.clone()));
        }
        let (az_raw, el_raw) = (az.to_tensor().into_data(), el.to_tensor().into_data());
        let affine: Vec<_> = az_raw.iter().zip(&el_raw).map(|(&a, &e)| canonical_affine(a, e)).collect();
        let az_c = az.add_const(&Tensor::vector(affine.iter().map(|t| t.az_shift).collect()));
        let el_c = el
            .mul_const(&Tensor::vector(affine.iter().map(|t| t.el_sign).collect()))
            .add_const(&Tensor::vector(affine.iter().map(|t| t.el_shift).collect()));
        let views = ViewSet::new(az_c.to_tensor().into_data(), el_c.to_tensor().into_data(), u0.distance.clone())?;
        let mut uncanonical = az_raw;
        uncanonical.extend(el_raw);
        Ok(Regressed { raw, azimuth: az_c, elevation: el_c, offsets, uncanonical, views })
    }

    /// Views for one shape under frozen weights.
    pub fn regress_views(&self, store: &ParamStore, shape: &PointCloud, u0: &ViewSet) -> Result<ViewSet> {
        let tape = crate::diffmath::Tape::new();
        let p = store.bind_frozen(&tape);
        Ok(self.forward(&p, shape, u0)?.views)
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::diffmath::Tape;
    use crate::geomcam::{circular_config, spherical_config};

    fn cloud(rng: &mut ChaCha8Rng, n: usize) -> PointCloud {
        PointCloud::new((0..n).map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect())
    }

    fn setup(variant: Variant, m: usize, zero: bool, seed: u64) -> (ViewRegressor, ParamStore) {
        let reg = ViewRegressor::new(variant, m, &NetConfig::default()).unwrap();
        let mut store = ParamStore::new();
        reg.init(&mut store, &mut ChaCha8Rng::seed_from_u64(seed), zero);
        (reg, store)
    }

    #[test]
    fn zero_final_layer_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (reg, store) = setup(Variant::Circular, 6, true, 2);
        let u0 = circular_config(6, 30.0, 2.2).unwrap();
        assert_eq!(reg.regress_views(&store, &cloud(&mut rng, 100), &u0).unwrap(), u0.canonicalized());
        let (reg, store) = setup(Variant::Spherical, 5, true, 2);
        let u0 = spherical_config(5, 2.2).unwrap();
        assert_eq!(reg.regress_views(&store, &cloud(&mut rng, 100), &u0).unwrap(), u0.canonicalized());
        let (reg, store) = setup(Variant::Direct, 3, true, 2);
        let v = reg.regress_views(&store, &cloud(&mut rng, 100), &circular_config(3, 30.0, 2.2).unwrap()).unwrap();
        assert!(v.azimuth.iter().chain(&v.elevation).all(|a| *a == 0.0));
    }

    #[test]
    fn raw_output_of_one_gives_tanh_offset() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (reg, mut store) = setup(Variant::Circular, 6, true, 4);
        store.get_mut(&reg.final_bias_name()).unwrap().data_mut()[0] = 1.0;
        let u0 = circular_config(6, 30.0, 2.2).unwrap();
        let v = reg.regress_views(&store, &cloud(&mut rng, 50), &u0).unwrap();
        assert!((v.azimuth[0] - (u0.azimuth[0] + 22.847)).abs() < 1e-3);
        assert_eq!(v.azimuth[0], u0.azimuth[0] + 30.0 * 1f64.tanh());
        assert_eq!(&v.azimuth[1..], &u0.canonicalized().azimuth[1..]);
    }

    #[test]
    fn m_mismatch_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (reg, store) = setup(Variant::Circular, 4, false, 6);
        assert!(reg.regress_views(&store, &cloud(&mut rng, 10), &circular_config(3, 30.0, 2.2).unwrap()).is_err());
    }

    #[test]
    fn parameter_count_matches_widths() {
        for (variant, m) in [(Variant::Circular, 12), (Variant::Spherical, 1), (Variant::Direct, 4)] {
            let (reg, store) = setup(variant, m, false, 7);
            assert_eq!(reg.mlp.param_count(), store.count("mvtn.mlp."));
            assert_eq!(reg.param_count(), store.count(PREFIX));
            let (m, b) = (m, 40usize);
            let closed = if variant.is_offset() {
                14 * m * m + 7 * m * b + 9 * m + 2 * b * b + 2 * b
            } else {
                14 * m * m + 5 * m * b + 9 * m + 2 * b * b + 2 * b
            };
            assert_eq!(mlp_param_count(variant, m, b), closed);
        }
        assert_eq!(mlp_param_count(Variant::Circular, 12, 40), 14 * 144 + 289 * 12 + 3280);
    }

    #[test]
    fn saturated_output_has_vanishing_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (reg, mut store) = setup(Variant::Circular, 2, true, 9);
        store.get_mut(&reg.final_bias_name()).unwrap().data_mut()[0] = 25.0;
        let tape = Tape::new();
        let p = store.bind(&tape, |_| true);
        let r = reg.forward(&p, &cloud(&mut rng, 20), &circular_config(2, 30.0, 2.2).unwrap()).unwrap();
        let g = r.azimuth.slice(0, 1).sum().backward().unwrap();
        let gb = g.get(p.get(&reg.final_bias_name()).unwrap());
        assert!(gb.data()[0].abs() < 1e-6);
    }

    #[test]
    fn different_shapes_get_different_views() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for variant in [Variant::Direct, Variant::Circular, Variant::Spherical] {
            let (reg, store) = setup(variant, 4, false, 11);
            let u0 = circular_config(4, 30.0, 2.2).unwrap();
            let a = reg.regress_views(&store, &cloud(&mut rng, 64), &u0).unwrap();
            let b = reg.regress_views(&store, &cloud(&mut rng, 64), &u0).unwrap();
            assert_ne!(a, b);
        }
    }

    #[test]
    fn regressed_angles_respect_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for variant in [Variant::Direct, Variant::Circular, Variant::Spherical] {
            for trial in 0..30 {
                let m = 1 + trial % 6;
                let (reg, mut store) = setup(variant, m, false, 100 + trial as u64);
                // Large weights push the outputs toward saturation.
                for t in store.as_map_mut().values_mut() {
                    t.scale_assign(3.0);
                }
                let u0 = crate::geomcam::random_config(m, trial as u64, 2.2).unwrap();
                let tape = Tape::new();
                let p = store.bind_frozen(&tape);
                let r = reg.forward(&p, &cloud(&mut rng, 32), &u0).unwrap();
                for i in 0..m {
                    assert!(r.offsets[i].abs() <= reg.azimuth_bound);
                    assert!(r.offsets[m + i].abs() <= 90.0);
                    assert!(r.views.elevation[i].abs() <= 90.0);
                    assert!(r.views.azimuth[i] > -180.0 && r.views.azimuth[i] <= 180.0);
                }
            }
        }
    }
}
