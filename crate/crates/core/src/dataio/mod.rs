//! Geometry ingestion: mesh and point-cloud readers, area-weighted surface
//! sampling, normalization, the procedural primitive dataset, manifests,
//! and the binary point cache.

mod manifest;
mod off;
mod ply;
mod synthetic;

use rand::distributions::WeightedIndex;
use rand::prelude::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::geomcam::{cross, norm, sub};

pub use manifest::{
    load_dataset, read_manifest, read_point_cache, write_manifest, write_point_cache, Dataset, GeneratorSpec, ManifestRecord, Sample, Split,
};
pub use off::{load_off, parse_off};
pub use ply::{load_ply, parse_ply, Geometry};
pub use synthetic::{generate_shape, make_synthetic_dataset, synthetic_dataset, ClassCount, ShapeClass, SyntheticSpec, CUBE_HALF};

/// Triangle mesh.
#[derive(Clone, Debug, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<[f64; 3]>,
    pub faces: Vec<[usize; 3]>,
}

impl Mesh {
    pub fn new(vertices: Vec<[f64; 3]>, faces: Vec<[usize; 3]>) -> Result<Self> {
        if let Some(f) = faces.iter().find(|f| f.iter().any(|&i| i >= vertices.len())) {
            return Err(Error::InvalidArgument(format!("face {f:?} references a vertex beyond {}", vertices.len())));
        }
        Ok(Mesh { vertices, faces })
    }

    pub fn face_area(&self, f: usize) -> f64 {
        let [a, b, c] = self.faces[f].map(|i| self.vertices[i]);
        0.5 * norm(cross(sub(b, a), sub(c, a)))
    }

    /// Appends another mesh, re-indexing its faces.
    pub fn extend(&mut self, other: &Mesh) {
        let off = self.vertices.len();
        self.vertices.extend_from_slice(&other.vertices);
        self.faces.extend(other.faces.iter().map(|f| f.map(|i| i + off)));
    }
}

/// Draws `count` points uniformly over the mesh surface: faces are picked
/// with probability proportional to area, then a point is placed uniformly
/// inside the triangle.
pub fn sample_points(mesh: &Mesh, count: usize, seed: u64) -> Result<PointCloud> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_points_with(mesh, count, &mut rng)
}

pub(crate) fn sample_points_with(mesh: &Mesh, count: usize, rng: &mut impl Rng) -> Result<PointCloud> {
    let areas: Vec<f64> = (0..mesh.faces.len()).map(|f| mesh.face_area(f)).collect();
    let dist = WeightedIndex::new(&areas).map_err(|_| Error::InvalidArgument("mesh has no positive-area face to sample".into()))?;
    let points = (0..count)
        .map(|_| {
            let [a, b, c] = mesh.faces[dist.sample(rng)].map(|i| mesh.vertices[i]);
            let (r1, r2): (f64, f64) = (rng.gen(), rng.gen());
            let s = r1.sqrt();
            let (wa, wb, wc) = (1.0 - s, s * (1.0 - r2), s * r2);
            [0, 1, 2].map(|k| wa * a[k] + wb * b[k] + wc * c[k])
        })
        .collect();
    Ok(PointCloud::new(points))
}

/// Centers the cloud at the origin and scales the farthest point to norm 1.
/// Coincident points are only centered.
pub fn unit_normalize(cloud: &PointCloud) -> Result<PointCloud> {
    if cloud.is_empty() {
        return Err(Error::InvalidArgument("cannot normalize an empty point cloud".into()));
    }
    let c = cloud.centroid();
    let centered: Vec<[f64; 3]> = cloud.points.iter().map(|p| sub(*p, c)).collect();
    let r = centered.iter().map(|p| norm(*p)).fold(0.0, f64::max);
    let s = if r > 0.0 { 1.0 / r } else { 1.0 };
    Ok(PointCloud { points: centered.into_iter().map(|p| p.map(|v| v * s)).collect(), colors: cloud.colors.clone() })
}

#[cfg(test)]
mod tests;
