//! Differentiable multi-view point-cloud renderer.
//!
//! Each point is drawn as a screen-space splat with opacity
//! `α = max(0, 1 − d²/r²)`, where `d` is the distance from the pixel center
//! to the projected point. Per pixel, the `K` covering splats nearest the
//! camera are composited front to back:
//!
//! ```text
//! C = Σⱼ cⱼ αⱼ Πₖ<ⱼ (1 − αₖ) + bg · Πⱼ (1 − αⱼ)
//! ```
//!
//! Compositing stops once the remaining transmittance drops below `gamma`.
//! Gradients flow to the camera azimuth and elevation through the
//! projection, the look-at frame, and the view-dependent shading; the
//! splat selection and depth order are held fixed during differentiation.
//!
//! Shading is diffuse only: each point's color is scaled by `max(0, n·l)`
//! where `n` points from the cloud centroid to the point. A point sitting
//! exactly on the centroid is treated as fully lit.

mod kernel;
mod png;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::diffmath::{Tape, Tensor, Value};
use crate::error::{Error, Result};
use crate::geomcam::ViewSet;

pub use kernel::{RenderCache, RenderKernel};
pub use png::{save_view_grid, view_grid_image};

/// Where the light comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LightMode {
    /// Random direction on the camera-facing hemisphere in training,
    /// relative light at test time.
    Random,
    /// Light placed at the camera, pointing at the object center.
    Relative,
    /// Fixed world-space direction (toward the light).
    Fixed([f64; 3]),
}

/// Object base color.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ColorMode {
    White,
    /// Uniform in the RGB cube in training, white at test time.
    Random,
    Fixed([f64; 3]),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderOptions {
    pub width: usize,
    pub height: usize,
    /// Horizontal field of view in degrees.
    pub fov: f64,
    /// Splat radius in NDC units (the shorter image side spans 2).
    pub radius: f64,
    /// Splats composited per pixel.
    pub points_per_pixel: usize,
    pub background: [f64; 3],
    /// Transmittance below which compositing stops.
    pub gamma: f64,
    pub light: LightMode,
    pub color: ColorMode,
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions {
            width: 64,
            height: 64,
            fov: 60.0,
            radius: 0.02,
            points_per_pixel: 8,
            background: [0.0; 3],
            gamma: 1e-4,
            light: LightMode::Random,
            color: ColorMode::Random,
        }
    }
}

impl RenderOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0) {
            return Err(Error::Config(format!("splat radius must be positive, got {}", self.radius)));
        }
        if self.points_per_pixel == 0 {
            return Err(Error::Config("points_per_pixel must be at least 1".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Config("image must have at least one pixel".into()));
        }
        if !(self.fov > 0.0 && self.fov < 180.0) {
            return Err(Error::Config(format!("fov must lie in (0, 180), got {}", self.fov)));
        }
        Ok(())
    }

    /// Splat radius in pixels.
    pub fn radius_px(&self) -> f64 {
        self.radius * self.width.min(self.height) as f64 / 2.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Train,
    Test,
}

/// Light direction, either fixed in the world or expressed in the camera
/// frame (right, up, back).
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Light {
    World([f64; 3]),
    Camera([f64; 3]),
}

/// Resolved per-render lighting and color.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Augmentation {
    pub light: Light,
    pub color: [f64; 3],
}

impl Augmentation {
    /// White object lit from the camera.
    pub fn test_default() -> Self {
        Augmentation { light: Light::Camera([0.0, 0.0, 1.0]), color: [1.0; 3] }
    }
}

fn unit(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    if n > 0.0 {
        v.map(|x| x / n)
    } else {
        v
    }
}

/// Draws the light and object color for one render.
pub fn sample_augmentation(opts: &RenderOptions, mode: Mode, seed: u64) -> Augmentation {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let light = match (&opts.light, mode) {
        (LightMode::Random, Mode::Train) => {
            let z: f64 = rng.gen_range(0.0..=1.0);
            let phi: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let s = (1.0 - z * z).max(0.0).sqrt();
            Light::Camera([s * phi.cos(), s * phi.sin(), z])
        }
        (LightMode::Random, Mode::Test) | (LightMode::Relative, _) => Light::Camera([0.0, 0.0, 1.0]),
        (LightMode::Fixed(d), _) => Light::World(unit(*d)),
    };
    let color = match (&opts.color, mode) {
        (ColorMode::Random, Mode::Train) => [rng.gen(), rng.gen(), rng.gen()],
        (ColorMode::Random, Mode::Test) | (ColorMode::White, _) => [1.0; 3],
        (ColorMode::Fixed(c), _) => *c,
    };
    Augmentation { light, color }
}

/// Rendered stack of views attached to a tape.
pub struct MultiViewImages<'t> {
    /// `[M, H, W, 3]`, values in `[0, 1]`.
    pub images: Value<'t>,
    pub views: ViewSet,
}

fn check_inputs(shape: &PointCloud, m: usize, distances: &[f64], opts: &RenderOptions) -> Result<()> {
    if shape.is_empty() {
        return Err(Error::InvalidArgument("cannot render an empty point cloud".into()));
    }
    if m == 0 {
        return Err(Error::InvalidArgument("no views to render".into()));
    }
    if distances.len() != m {
        return Err(Error::InvalidArgument(format!("{} distances for {m} views", distances.len())));
    }
    opts.validate()
}

/// Renders all views without recording gradients. Returns `[M, H, W, 3]`.
pub fn render_views(shape: &PointCloud, views: &ViewSet, opts: &RenderOptions, aug: &Augmentation) -> Result<Tensor> {
    check_inputs(shape, views.len(), &views.distance, opts)?;
    let kernel = RenderKernel::new(shape, opts, aug);
    let (images, _) = kernel.forward(&views.azimuth, &views.elevation, &views.distance, false);
    Ok(images)
}

/// Renders views whose azimuths and elevations (each `[M]`, degrees) live
/// on `tape`, so a loss on the images back-propagates to the angles.
pub fn render_views_on<'t>(
    shape: &PointCloud,
    azimuth: Value<'t>,
    elevation: Value<'t>,
    distances: &[f64],
    opts: &RenderOptions,
    aug: &Augmentation,
) -> Result<MultiViewImages<'t>> {
    let (az, el) = (azimuth.to_tensor().into_data(), elevation.to_tensor().into_data());
    if az.len() != el.len() {
        return Err(Error::ShapeMismatch(format!("{} azimuths vs {} elevations", az.len(), el.len())));
    }
    check_inputs(shape, az.len(), distances, opts)?;
    let views = ViewSet::new(az.clone(), el.clone(), distances.to_vec())?;
    let kernel = RenderKernel::new(shape, opts, aug);
    let track = azimuth.requires_grad() || elevation.requires_grad();
    let (images, cache) = kernel.forward(&az, &el, distances, track);
    let tape: &'t Tape = azimuth.tape();
    let images = if track {
        let cache = cache.expect("cache requested");
        tape.custom(&[azimuth, elevation], images, move |g| {
            let (ga, ge) = cache.backward(g);
            vec![Some(Tensor::vector(ga)), Some(Tensor::vector(ge))]
        })
    } else {
        tape.constant(images)
    };
    Ok(MultiViewImages { images, views })
}

/// One channel of one pixel in a rendered stack.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PixelRef {
    pub view: usize,
    pub row: usize,
    pub col: usize,
    pub channel: usize,
}

/// Analytic `∂pixel/∂(azimuth, elevation)` of each requested pixel with
/// respect to the angles of its own view.
pub fn render_gradient(
    shape: &PointCloud,
    views: &ViewSet,
    opts: &RenderOptions,
    aug: &Augmentation,
    pixels: &[PixelRef],
) -> Result<Vec<[f64; 2]>> {
    check_inputs(shape, views.len(), &views.distance, opts)?;
    let kernel = RenderKernel::new(shape, opts, aug);
    let (images, cache) = kernel.forward(&views.azimuth, &views.elevation, &views.distance, true);
    let cache = cache.expect("cache requested");
    let (h, w) = (opts.height, opts.width);
    pixels
        .iter()
        .map(|p| {
            if p.view >= views.len() || p.row >= h || p.col >= w || p.channel >= 3 {
                return Err(Error::InvalidArgument(format!("pixel {p:?} outside the rendered stack")));
            }
            let mut g = Tensor::zeros(images.shape());
            g.data_mut()[((p.view * h + p.row) * w + p.col) * 3 + p.channel] = 1.0;
            let (ga, ge) = cache.backward(&g);
            Ok([ga[p.view], ge[p.view]])
        })
        .collect()
}

#[cfg(test)]
mod tests;
