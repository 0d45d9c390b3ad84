//! Camera parameterization: view-point sets, look-at poses, projection.
//!
//! Conventions: Y is up; azimuth rotates about Y with azimuth 0 on the +Z
//! axis and azimuth 90° on +X; elevation is measured from the XZ plane
//! toward +Y. All angles are in degrees.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cloud::PointCloud;
use crate::error::{Error, Result};

/// Default camera distance from the object center.
pub const DEFAULT_DISTANCE: f64 = 2.2;
/// Default initial elevation of the circular configuration.
pub const CIRCULAR_ELEVATION: f64 = 30.0;
/// Elevations beyond this switch `look_at` to the fallback up vector.
pub const POLE_ELEVATION: f64 = 89.9;

pub(crate) type V3 = [f64; 3];

pub(crate) fn dot(a: V3, b: V3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn cross(a: V3, b: V3) -> V3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

pub(crate) fn sub(a: V3, b: V3) -> V3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn scale(a: V3, s: f64) -> V3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub(crate) fn norm(a: V3) -> f64 {
    dot(a, a).sqrt()
}

/// Per-view camera parameters. Angles in degrees.
#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct ViewSet {
    pub azimuth: Vec<f64>,
    pub elevation: Vec<f64>,
    pub distance: Vec<f64>,
}

impl ViewSet {
    pub fn new(azimuth: Vec<f64>, elevation: Vec<f64>, distance: Vec<f64>) -> Result<Self> {
        if azimuth.len() != elevation.len() || azimuth.len() != distance.len() {
            return Err(Error::InvalidArgument(format!(
                "view set lengths differ: {} azimuths, {} elevations, {} distances",
                azimuth.len(),
                elevation.len(),
                distance.len()
            )));
        }
        if let Some(d) = distance.iter().find(|d| !(**d > 0.0)) {
            return Err(Error::InvalidArgument(format!("camera distance must be positive, got {d}")));
        }
        Ok(ViewSet { azimuth, elevation, distance })
    }

    /// Views at a shared distance.
    pub fn with_distance(azimuth: Vec<f64>, elevation: Vec<f64>, distance: f64) -> Result<Self> {
        let n = azimuth.len();
        Self::new(azimuth, elevation, vec![distance; n])
    }

    /// Number of views M.
    pub fn len(&self) -> usize {
        self.azimuth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.azimuth.is_empty()
    }

    /// The 2M learnable angles, azimuths first.
    pub fn angles(&self) -> Vec<f64> {
        self.azimuth.iter().chain(&self.elevation).copied().collect()
    }

    pub fn canonicalized(&self) -> ViewSet {
        let (azimuth, elevation) = self.azimuth.iter().zip(&self.elevation).map(|(&a, &e)| canonicalize(a, e)).unzip();
        ViewSet { azimuth, elevation, distance: self.distance.clone() }
    }

    pub fn positions(&self) -> Result<Vec<V3>> {
        (0..self.len()).map(|i| camera_position(self.azimuth[i], self.elevation[i], self.distance[i])).collect()
    }
}

/// Affine map taking raw angles to canonical ones:
/// `az' = az + az_shift`, `el' = el_sign * el + el_shift`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CanonicalAffine {
    pub az_shift: f64,
    pub el_sign: f64,
    pub el_shift: f64,
}

/// Whole turns to subtract from `x` to land in `(-180, 180]`. The division
/// can round across a boundary, so the candidate is checked against the
/// value actually produced by `x - 360 k`.
fn wrap_turns(x: f64) -> f64 {
    let mut k = ((x - 180.0) / 360.0).ceil();
    if x - 360.0 * k > 180.0 {
        k += 1.0;
    } else if x - 360.0 * k <= -180.0 {
        k -= 1.0;
    }
    k
}

/// Computes the shifts that bring `(az, el)` to azimuth in `(-180, 180]` and
/// elevation in `[-90, 90]`. Elevations past a pole are reflected, which
/// turns the azimuth by 180° so the camera position is unchanged.
pub fn canonical_affine(az: f64, el: f64) -> CanonicalAffine {
    let ke = wrap_turns(el);
    let e1 = el - 360.0 * ke;
    let (el_sign, el_shift, flip) = if e1 > 90.0 {
        (-1.0, 180.0 + 360.0 * ke, 180.0)
    } else if e1 < -90.0 {
        (-1.0, -180.0 + 360.0 * ke, 180.0)
    } else {
        (1.0, -360.0 * ke, 0.0)
    };
    let ka = wrap_turns(az + flip);
    let mut az_shift = flip - 360.0 * ka;
    // `az + az_shift` rounds differently from `(az + flip) - 360 ka`.
    if az + az_shift > 180.0 {
        az_shift -= 360.0;
    } else if az + az_shift <= -180.0 {
        az_shift += 360.0;
    }
    CanonicalAffine { az_shift, el_sign, el_shift }
}

/// Canonical form of an (azimuth, elevation) pair.
pub fn canonicalize(az: f64, el: f64) -> (f64, f64) {
    let t = canonical_affine(az, el);
    (az + t.az_shift, t.el_sign * el + t.el_shift)
}

/// Unit direction from the object center toward a camera at the given angles.
pub fn view_direction(azimuth: f64, elevation: f64) -> V3 {
    let (a, e) = (azimuth.to_radians(), elevation.to_radians());
    [e.cos() * a.sin(), e.sin(), e.cos() * a.cos()]
}

/// Camera center for the given angles and distance (Y-up, azimuth 0 on +Z).
pub fn camera_position(azimuth: f64, elevation: f64, distance: f64) -> Result<V3> {
    if !(distance > 0.0) {
        return Err(Error::InvalidArgument(format!("camera distance must be positive, got {distance}")));
    }
    if !azimuth.is_finite() || !elevation.is_finite() {
        return Err(Error::InvalidArgument("camera angles must be finite".into()));
    }
    Ok(scale(view_direction(azimuth, elevation), distance))
}

/// Rigid world-to-view transform plus intrinsics.
#[derive(Clone, Debug, PartialEq)]
pub struct CameraPose {
    pub position: V3,
    pub world_to_view: [[f64; 4]; 4],
    pub fov: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraPose {
    /// Rows of the rotation part: right, up, and back (view +Z) axes.
    pub fn rotation(&self) -> [V3; 3] {
        let m = &self.world_to_view;
        [0, 1, 2].map(|r| [m[r][0], m[r][1], m[r][2]])
    }

    pub fn with_image(mut self, width: usize, height: usize, fov: f64) -> Self {
        self.width = width;
        self.height = height;
        self.fov = fov;
        self
    }

    pub fn to_view(&self, p: V3) -> V3 {
        let m = &self.world_to_view;
        [0, 1, 2].map(|r| m[r][0] * p[0] + m[r][1] * p[1] + m[r][2] * p[2] + m[r][3])
    }

    /// Inverse of `world_to_view` (transpose rotation, rotate back translation).
    pub fn view_to_world(&self) -> [[f64; 4]; 4] {
        let r = self.rotation();
        let mut inv = [[0.0; 4]; 4];
        for i in 0..3 {
            for j in 0..3 {
                inv[i][j] = r[j][i];
            }
            inv[i][3] = self.position[i];
        }
        inv[3][3] = 1.0;
        inv
    }

    /// Focal length in pixels.
    pub fn focal(&self) -> f64 {
        (self.width as f64 / 2.0) / (self.fov.to_radians() / 2.0).tan()
    }
}

/// Orthonormal camera frame: `right`, `up`, and `back` (pointing from the
/// target toward the camera).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Frame {
    pub right: V3,
    pub up: V3,
    pub back: V3,
}

fn frame_from(back: V3, up_hint: V3) -> Option<(Frame, V3, f64)> {
    let u = cross(up_hint, back);
    let n = norm(u);
    if n < 1e-12 {
        return None;
    }
    let right = scale(u, 1.0 / n);
    let up = cross(back, right);
    Some((Frame { right, up, back }, up_hint, n))
}

fn pick_up(back: V3, up: V3) -> V3 {
    let un = scale(up, 1.0 / norm(up));
    if dot(back, un).abs() > POLE_ELEVATION.to_radians().sin() {
        if dot(back, [0.0, 0.0, 1.0]).abs() > POLE_ELEVATION.to_radians().sin() {
            [1.0, 0.0, 0.0]
        } else {
            [0.0, 0.0, 1.0]
        }
    } else {
        un
    }
}

/// Pose of a camera at `position` looking at `target`. View space looks
/// down −Z with `up` projected to +Y. When the viewing axis is within 0.1°
/// of `up`, +Z is used as the up vector instead.
pub fn look_at(position: V3, target: V3, up: V3) -> Result<CameraPose> {
    let d = sub(position, target);
    let dist = norm(d);
    if !(dist > 0.0) {
        return Err(Error::InvalidArgument("camera position coincides with target".into()));
    }
    let back = scale(d, 1.0 / dist);
    let (frame, _, _) = frame_from(back, pick_up(back, up)).expect("up hint not parallel to axis");
    let rows = [frame.right, frame.up, frame.back];
    let mut m = [[0.0; 4]; 4];
    for r in 0..3 {
        m[r][..3].copy_from_slice(&rows[r]);
        m[r][3] = -dot(rows[r], position);
    }
    m[3][3] = 1.0;
    Ok(CameraPose { position, world_to_view: m, fov: 60.0, width: 64, height: 64 })
}

/// A camera frame together with its derivatives with respect to azimuth and
/// elevation (per degree).
#[derive(Clone, Copy, Debug)]
pub struct FrameJet {
    pub frame: Frame,
    pub d_azimuth: Frame,
    pub d_elevation: Frame,
}

/// Frame of a camera at `(azimuth, elevation)` aimed at the origin with +Y
/// up, identical to [`look_at`] including the pole fallback, differentiated
/// analytically.
pub fn frame_jet(azimuth: f64, elevation: f64) -> FrameJet {
    let (a, e) = (azimuth.to_radians(), elevation.to_radians());
    let (sa, ca, se, ce) = (a.sin(), a.cos(), e.sin(), e.cos());
    let k = std::f64::consts::PI / 180.0;
    let back = [ce * sa, se, ce * ca];
    let db_da = [ce * ca * k, 0.0, -ce * sa * k];
    let db_de = [-se * sa * k, ce * k, -se * ca * k];
    let up_hint = pick_up(back, [0.0, 1.0, 0.0]);
    let (frame, up_hint, n) = frame_from(back, up_hint).expect("up hint not parallel to axis");
    let diff = |db: V3| {
        let du = cross(up_hint, db);
        let dr = scale(sub(du, scale(frame.right, dot(frame.right, du))), 1.0 / n);
        let dup = {
            let p = cross(db, frame.right);
            let q = cross(frame.back, dr);
            [p[0] + q[0], p[1] + q[1], p[2] + q[2]]
        };
        Frame { right: dr, up: dup, back: db }
    };
    FrameJet { frame, d_azimuth: diff(db_da), d_elevation: diff(db_de) }
}

fn require_views(m: usize) -> Result<()> {
    if m == 0 {
        return Err(Error::InvalidArgument("view count must be at least 1".into()));
    }
    Ok(())
}

/// M views on a ring at a shared elevation, azimuths evenly spaced from 0°.
pub fn circular_config(m: usize, elevation: f64, distance: f64) -> Result<ViewSet> {
    require_views(m)?;
    let (az, el) = (0..m).map(|i| canonicalize(i as f64 * 360.0 / m as f64, elevation)).unzip();
    ViewSet::with_distance(az, el, distance)
}

/// Golden angle in degrees.
pub fn golden_angle() -> f64 {
    180.0 * (3.0 - 5f64.sqrt())
}

/// M views on a Fibonacci lattice covering the sphere.
pub fn spherical_config(m: usize, distance: f64) -> Result<ViewSet> {
    require_views(m)?;
    let g = golden_angle();
    let (az, el) = (0..m)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / m as f64;
            canonicalize(i as f64 * g, z.asin().to_degrees())
        })
        .unzip();
    ViewSet::with_distance(az, el, distance)
}

/// M views with azimuth uniform in [−180°, 180°) and elevation uniform in
/// [−90°, 90°).
pub fn random_config(m: usize, seed: u64, distance: f64) -> Result<ViewSet> {
    require_views(m)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut az = Vec::with_capacity(m);
    let mut el = Vec::with_capacity(m);
    for _ in 0..m {
        az.push(rng.gen_range(-180.0..180.0));
        el.push(rng.gen_range(-90.0..90.0));
    }
    ViewSet::with_distance(az, el, distance)
}

/// Rotates a point about the Y axis by `theta` degrees.
pub fn rotate_point_y(p: V3, theta: f64) -> V3 {
    let (s, c) = theta.to_radians().sin_cos();
    [p[0] * c + p[2] * s, p[1], -p[0] * s + p[2] * c]
}

/// Rotates every point about the Y (gravity) axis by `theta` degrees.
pub fn rotate_y(cloud: &PointCloud, theta: f64) -> PointCloud {
    PointCloud { points: cloud.points.iter().map(|&p| rotate_point_y(p, theta)).collect(), colors: cloud.colors.clone() }
}

/// Image-plane location of a view-space point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    /// Column coordinate in pixels; pixel `j` is centered at `u = j`.
    pub u: f64,
    /// Row coordinate in pixels, growing downward.
    pub v: f64,
    pub depth: f64,
    pub behind: bool,
}

/// Perspective projection. `(W/2, H/2)` is the optical axis. Points with
/// `z_view >= 0` are flagged `behind` and left unprojected.
pub fn project(view_points: &[V3], pose: &CameraPose) -> Vec<Projection> {
    let f = pose.focal();
    let (cx, cy) = (pose.width as f64 / 2.0, pose.height as f64 / 2.0);
    view_points
        .iter()
        .map(|p| {
            let depth = -p[2];
            if p[2] >= 0.0 {
                Projection { u: f64::NAN, v: f64::NAN, depth, behind: true }
            } else {
                Projection { u: cx + f * p[0] / depth, v: cy - f * p[1] / depth, depth, behind: false }
            }
        })
        .collect()
}
