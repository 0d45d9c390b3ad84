//! Procedural primitives.
//!
//! `cube` and `cube-bottom-marked` share the same surface: the marked cube
//! carries a small box stud below its bottom face, while the plain cube
//! carries the mirror image of that stud inside its volume. Both therefore
//! have equal area, point budget, and nearly equal centroid, so they differ
//! only in what a camera below the cube can see.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::manifest::{Dataset, GeneratorSpec, ManifestRecord, Sample, Split};
use super::{sample_points_with, Mesh};
use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::geomcam::rotate_point_y;
use crate::seed;

/// Cube half-size before scale jitter.
pub const CUBE_HALF: f64 = 0.55;
const STUD_HALF_WIDTH: f64 = 0.3 * CUBE_HALF;
const STUD_HEIGHT: f64 = 0.35 * CUBE_HALF;
const SEGMENTS: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShapeClass {
    Cube,
    Sphere,
    Cylinder,
    Cone,
    Torus,
    Pyramid,
    CubeBottomMarked,
}

impl ShapeClass {
    pub const ALL: [ShapeClass; 7] = [
        ShapeClass::Cube,
        ShapeClass::Sphere,
        ShapeClass::Cylinder,
        ShapeClass::Cone,
        ShapeClass::Torus,
        ShapeClass::Pyramid,
        ShapeClass::CubeBottomMarked,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ShapeClass::Cube => "cube",
            ShapeClass::Sphere => "sphere",
            ShapeClass::Cylinder => "cylinder",
            ShapeClass::Cone => "cone",
            ShapeClass::Torus => "torus",
            ShapeClass::Pyramid => "pyramid",
            ShapeClass::CubeBottomMarked => "cube-bottom-marked",
        }
    }

    pub fn from_name(name: &str) -> Result<ShapeClass> {
        ShapeClass::ALL
            .into_iter()
            .find(|c| c.name() == name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown shape class {name:?}")))
    }
}

/// Axis-aligned box; `open_top` / `open_bottom` drop the +Y / −Y face.
fn box_mesh(lo: [f64; 3], hi: [f64; 3], open_top: bool, open_bottom: bool) -> Mesh {
    let v =
        |i: usize| [if i & 1 == 0 { lo[0] } else { hi[0] }, if i & 2 == 0 { lo[1] } else { hi[1] }, if i & 4 == 0 { lo[2] } else { hi[2] }];
    let vertices = (0..8).map(v).collect();
    let mut quads = vec![[0, 1, 5, 4], [2, 6, 7, 3], [0, 4, 6, 2], [1, 3, 7, 5]];
    if !open_bottom {
        quads.push([0, 2, 3, 1]);
    }
    if !open_top {
        quads.push([4, 5, 7, 6]);
    }
    let faces = quads.iter().flat_map(|q| [[q[0], q[1], q[2]], [q[0], q[2], q[3]]]).collect();
    Mesh { vertices, faces }
}

/// Surface of revolution around Y through the given (radius, y) profile.
fn lathe(profile: &[(f64, f64)], closed: bool) -> Mesh {
    let rings = profile.len();
    let mut vertices = Vec::new();
    for &(r, y) in profile {
        for s in 0..SEGMENTS {
            let a = TAU * s as f64 / SEGMENTS as f64;
            vertices.push([r * a.cos(), y, r * a.sin()]);
        }
    }
    let mut faces = Vec::new();
    let last = if closed { rings } else { rings - 1 };
    for i in 0..last {
        let j = (i + 1) % rings;
        for s in 0..SEGMENTS {
            let t = (s + 1) % SEGMENTS;
            let (a, b, c, d) = (i * SEGMENTS + s, i * SEGMENTS + t, j * SEGMENTS + t, j * SEGMENTS + s);
            faces.push([a, b, c]);
            faces.push([a, c, d]);
        }
    }
    Mesh { vertices, faces }
}

fn disk(radius: f64, y: f64) -> Mesh {
    let mut vertices = vec![[0.0, y, 0.0]];
    vertices.extend((0..SEGMENTS).map(|s| {
        let a = TAU * s as f64 / SEGMENTS as f64;
        [radius * a.cos(), y, radius * a.sin()]
    }));
    let faces = (0..SEGMENTS).map(|s| [0, 1 + s, 1 + (s + 1) % SEGMENTS]).collect();
    Mesh { vertices, faces }
}

fn base_mesh(class: ShapeClass) -> Mesh {
    let h = CUBE_HALF;
    match class {
        ShapeClass::Cube | ShapeClass::CubeBottomMarked => {
            let mut m = box_mesh([-h; 3], [h; 3], false, false);
            let (w, t) = (STUD_HALF_WIDTH, STUD_HEIGHT);
            let stud = if class == ShapeClass::CubeBottomMarked {
                box_mesh([-w, -h - t, -w], [w, -h, w], true, false)
            } else {
                box_mesh([-w, -h, -w], [w, -h + t, w], false, true)
            };
            m.extend(&stud);
            m
        }
        ShapeClass::Cylinder => {
            let (r, hh) = (0.45, 0.55);
            let mut m = lathe(&[(r, -hh), (r, hh)], false);
            m.extend(&disk(r, hh));
            m.extend(&disk(r, -hh));
            m
        }
        ShapeClass::Cone => {
            let mut m = lathe(&[(0.55, -0.55), (0.0, 0.55)], false);
            m.extend(&disk(0.55, -0.55));
            m
        }
        ShapeClass::Torus => {
            let (big, small) = (0.45, 0.18);
            let profile: Vec<(f64, f64)> = (0..16)
                .map(|i| {
                    let a = TAU * i as f64 / 16.0;
                    (big + small * a.cos(), small * a.sin())
                })
                .collect();
            lathe(&profile, true)
        }
        ShapeClass::Pyramid => {
            let vertices = vec![[-h, -h, -h], [h, -h, -h], [h, -h, h], [-h, -h, h], [0.0, h, 0.0]];
            let faces = vec![[0, 1, 4], [1, 2, 4], [2, 3, 4], [3, 0, 4], [0, 2, 1], [0, 3, 2]];
            Mesh { vertices, faces }
        }
        ShapeClass::Sphere => unreachable!("sphere is sampled analytically"),
    }
}

/// Radius of the sphere class before jitter.
pub(crate) const SPHERE_RADIUS: f64 = 0.6;

/// One instance: jittered scale in `[0.9, 1.1]`, random turn about Y.
pub fn generate_shape(class: ShapeClass, points: usize, seed: u64) -> Result<PointCloud> {
    if points == 0 {
        return Err(Error::InvalidArgument("shapes need at least one point".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = rng.gen_range(0.9..=1.1);
    let theta = rng.gen_range(0.0..360.0);
    let cloud = if class == ShapeClass::Sphere {
        let pts = (0..points)
            .map(|_| {
                let d: [f64; 3] = [rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal)];
                let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt().max(1e-300);
                d.map(|v| v / n * SPHERE_RADIUS)
            })
            .collect();
        PointCloud::new(pts)
    } else {
        sample_points_with(&base_mesh(class), points, &mut rng)?
    };
    Ok(PointCloud::new(cloud.points.iter().map(|p| rotate_point_y(p.map(|v| v * scale), theta)).collect()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassCount {
    pub class: ShapeClass,
    pub train: usize,
    #[serde(default)]
    pub test: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    /// Labels follow list order.
    pub classes: Vec<ClassCount>,
    pub points: usize,
}

impl SyntheticSpec {
    /// Seven classes: 40 train / 10 test cubes of each kind, 24 / 8 of the
    /// others (200 train, 60 test).
    pub fn seven_class() -> Self {
        let classes = ShapeClass::ALL
            .into_iter()
            .map(|class| match class {
                ShapeClass::Cube | ShapeClass::CubeBottomMarked => ClassCount { class, train: 40, test: 10 },
                _ => ClassCount { class, train: 24, test: 8 },
            })
            .collect();
        SyntheticSpec { classes, points: 1024 }
    }
}

/// Manifest records plus the generated clouds, in the same order.
pub fn make_synthetic_dataset(spec: &SyntheticSpec, seed: u64) -> Result<(Vec<ManifestRecord>, Vec<PointCloud>)> {
    if spec.classes.len() < 2 {
        return Err(Error::InvalidArgument("a dataset needs at least two classes".into()));
    }
    for (i, c) in spec.classes.iter().enumerate() {
        if spec.classes[..i].iter().any(|d| d.class == c.class) {
            return Err(Error::InvalidArgument(format!("class {} listed twice", c.class.name())));
        }
    }
    let mut records = Vec::new();
    let mut clouds = Vec::new();
    for (label, cc) in spec.classes.iter().enumerate() {
        for (split, count) in [(Split::Train, cc.train), (Split::Test, cc.test)] {
            for i in 0..count {
                let id = format!("{}-{}-{i:04}", cc.class.name(), split.name());
                let s = seed::derive(seed, &id, 0);
                clouds.push(generate_shape(cc.class, spec.points, s)?);
                records.push(ManifestRecord { id, path: None, generator: Some(GeneratorSpec { class: cc.class, seed: s }), label, split });
            }
        }
    }
    Ok((records, clouds))
}

/// The generated dataset held in memory.
pub fn synthetic_dataset(spec: &SyntheticSpec, seed: u64) -> Result<Dataset> {
    let (records, clouds) = make_synthetic_dataset(spec, seed)?;
    let samples = records.into_iter().zip(clouds).map(|(r, cloud)| Sample { id: r.id, label: r.label, split: r.split, cloud }).collect();
    Dataset::new(samples, spec.classes.len())
}
