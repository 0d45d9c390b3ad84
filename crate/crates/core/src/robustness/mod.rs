//! Test-time perturbations: cropping a shape from one side and rotating it
//! about the gravity axis.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::dataio::Dataset;
use crate::error::{Error, Result};
use crate::geomcam::rotate_y;
use crate::seed;
use crate::trainer::{evaluate, Model};

/// Side of the shape that gets cropped away.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CropDirection {
    #[serde(rename = "+x")]
    PosX,
    #[serde(rename = "-x")]
    NegX,
    #[serde(rename = "+y")]
    PosY,
    #[serde(rename = "-y")]
    NegY,
    #[serde(rename = "+z")]
    PosZ,
    #[serde(rename = "-z")]
    NegZ,
}

impl CropDirection {
    pub const ALL: [CropDirection; 6] =
        [CropDirection::PosX, CropDirection::NegX, CropDirection::PosY, CropDirection::NegY, CropDirection::PosZ, CropDirection::NegZ];

    pub fn axis(self) -> usize {
        match self {
            CropDirection::PosX | CropDirection::NegX => 0,
            CropDirection::PosY | CropDirection::NegY => 1,
            CropDirection::PosZ | CropDirection::NegZ => 2,
        }
    }

    pub fn sign(self) -> f64 {
        match self {
            CropDirection::PosX | CropDirection::PosY | CropDirection::PosZ => 1.0,
            _ => -1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CropDirection::PosX => "+x",
            CropDirection::NegX => "-x",
            CropDirection::PosY => "+y",
            CropDirection::NegY => "-y",
            CropDirection::PosZ => "+z",
            CropDirection::NegZ => "-z",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OcclusionSpec {
    pub direction: CropDirection,
    pub ratio: f64,
}

/// Number of points a crop of `ratio` removes from `p` points.
pub fn dropped_count(p: usize, ratio: f64) -> Result<usize> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::InvalidArgument(format!("occlusion ratio {ratio} outside [0, 1]")));
    }
    Ok(((ratio * p as f64).floor() as usize).min(p))
}

/// Drops the `floor(ratio·P)` points lying furthest along `direction`;
/// equal coordinates drop the later point first. Survivors keep their
/// order. An empty result is an error.
pub fn occlude(cloud: &PointCloud, spec: OcclusionSpec) -> Result<PointCloud> {
    let out = occlude_allow_empty(cloud, spec)?;
    if out.is_empty() {
        return Err(Error::InvalidArgument("empty occlusion result".into()));
    }
    Ok(out)
}

/// `occlude`, but cropping every point is allowed.
pub fn occlude_allow_empty(cloud: &PointCloud, spec: OcclusionSpec) -> Result<PointCloud> {
    if cloud.is_empty() {
        return Err(Error::InvalidArgument("cannot occlude an empty cloud".into()));
    }
    let (axis, sign) = (spec.direction.axis(), spec.direction.sign());
    if cloud.points.iter().any(|p| !p[axis].is_finite()) {
        return Err(Error::InvalidArgument("non-finite point coordinate".into()));
    }
    let drop = dropped_count(cloud.len(), spec.ratio)?;
    let key = |i: usize| sign * cloud.points[i][axis];
    let mut order: Vec<usize> = (0..cloud.len()).collect();
    // `partial_cmp` treats 0.0 and -0.0 alike, which keeps mirrored crops exact.
    order.sort_by(|&a, &b| key(a).partial_cmp(&key(b)).expect("finite").then(a.cmp(&b)));
    let mut keep = order[..cloud.len() - drop].to_vec();
    keep.sort_unstable();
    Ok(cloud.select(&keep))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RotationSpec {
    /// Rotations are drawn from `Uniform(-max_angle, max_angle)` degrees.
    pub max_angle: f64,
    pub repeats: usize,
    pub seed: u64,
}

impl Default for RotationSpec {
    fn default() -> Self {
        RotationSpec { max_angle: 180.0, repeats: 10, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RotationReport {
    pub mean: f64,
    /// Population standard deviation over repeats.
    pub std: f64,
    pub accuracies: Vec<f64>,
}

/// Correct predictions of one evaluation run.
fn correct(model: &Model, dataset: &Dataset) -> Result<usize> {
    let report = evaluate(model, dataset)?;
    Ok(report.predictions.iter().zip(dataset.labels()).filter(|(p, l)| **p == *l).count())
}

/// Accuracies of several runs over `n` shapes, with the mean taken from the
/// pooled counts so equal runs give exactly their common accuracy.
fn summarize(counts: &[usize], n: usize) -> (Vec<f64>, f64, f64) {
    let acc: Vec<f64> = counts.iter().map(|&c| c as f64 / n as f64).collect();
    let mean = counts.iter().sum::<usize>() as f64 / (n * counts.len()) as f64;
    let var = acc.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / acc.len() as f64;
    (acc, mean, var.sqrt())
}

/// Angle, in degrees, applied to shape `index` in repeat `repeat`.
pub fn rotation_angle(spec: &RotationSpec, repeat: usize, index: usize) -> f64 {
    if spec.max_angle == 0.0 {
        return 0.0;
    }
    let s = seed::derive(spec.seed, "rotation", ((repeat as u64) << 32) | index as u64);
    ChaCha8Rng::seed_from_u64(s).gen_range(-spec.max_angle..=spec.max_angle)
}

/// Overall accuracy on `dataset` with every shape rotated about Y, averaged
/// over `spec.repeats` independent draws.
pub fn rotation_robustness_eval(model: &Model, dataset: &Dataset, spec: &RotationSpec) -> Result<RotationReport> {
    if spec.repeats == 0 {
        return Err(Error::InvalidArgument("rotation robustness needs at least one repeat".into()));
    }
    if !(spec.max_angle.is_finite() && spec.max_angle >= 0.0) {
        return Err(Error::InvalidArgument(format!("bad maximum angle {}", spec.max_angle)));
    }
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("cannot evaluate on an empty dataset".into()));
    }
    let counts = (0..spec.repeats)
        .map(|r| {
            let mut rotated = dataset.clone();
            for (i, s) in rotated.samples.iter_mut().enumerate() {
                let theta = rotation_angle(spec, r, i);
                if theta != 0.0 {
                    s.cloud = rotate_y(&s.cloud, theta);
                }
            }
            correct(model, &rotated)
        })
        .collect::<Result<Vec<usize>>>()?;
    let (accuracies, mean, std) = summarize(&counts, dataset.len());
    Ok(RotationReport { mean, std, accuracies })
}

#[derive(Clone, Debug, PartialEq)]
pub struct OcclusionRow {
    pub ratio: f64,
    /// Mean of `per_direction`.
    pub mean: f64,
    /// Population standard deviation over the six directions.
    pub std: f64,
    /// Accuracy per direction, in `CropDirection::ALL` order.
    pub per_direction: [f64; 6],
}

/// Overall accuracy on `dataset` cropped from each of the six directions,
/// one row per ratio.
pub fn occlusion_robustness_eval(model: &Model, dataset: &Dataset, ratios: &[f64]) -> Result<Vec<OcclusionRow>> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("cannot evaluate on an empty dataset".into()));
    }
    ratios
        .iter()
        .map(|&ratio| {
            let counts = CropDirection::ALL
                .iter()
                .map(|&direction| {
                    let mut cropped = dataset.clone();
                    for s in &mut cropped.samples {
                        s.cloud = occlude(&s.cloud, OcclusionSpec { direction, ratio })?;
                    }
                    correct(model, &cropped)
                })
                .collect::<Result<Vec<usize>>>()?;
            let (acc, mean, std) = summarize(&counts, dataset.len());
            let per_direction: [f64; 6] = acc.try_into().expect("six directions");
            Ok(OcclusionRow { ratio, mean, std, per_direction })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct RobustnessRow {
    /// `rotation` or `occlusion`.
    pub perturbation: String,
    /// Maximum angle or crop ratio.
    pub parameter: f64,
    pub mean_acc: f64,
    pub std_acc: f64,
    /// Rotation repeats, or the number of crop directions.
    pub repeats: usize,
}

impl RobustnessRow {
    pub fn rotation(spec: &RotationSpec, r: &RotationReport) -> Self {
        RobustnessRow {
            perturbation: "rotation".into(),
            parameter: spec.max_angle,
            mean_acc: r.mean,
            std_acc: r.std,
            repeats: spec.repeats,
        }
    }

    pub fn occlusion(r: &OcclusionRow) -> Self {
        RobustnessRow { perturbation: "occlusion".into(), parameter: r.ratio, mean_acc: r.mean, std_acc: r.std, repeats: 6 }
    }
}

const HEADER: &str = "perturbation,parameter,mean_acc,std_acc,repeats";

pub fn write_robustness_csv(path: &Path, rows: &[RobustnessRow]) -> Result<()> {
    let mut out = String::from(HEADER);
    out.push('\n');
    for r in rows {
        if r.perturbation.contains([',', '\n', '"']) {
            return Err(Error::InvalidArgument(format!("perturbation name {:?} cannot be written to CSV", r.perturbation)));
        }
        let _ = writeln!(out, "{},{},{},{},{}", r.perturbation, r.parameter, r.mean_acc, r.std_acc, r.repeats);
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_robustness_csv(path: &Path) -> Result<Vec<RobustnessRow>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let err = |line: usize, msg: String| Error::Parse { path: path.to_path_buf(), line, msg };
    if lines.next().map(|(_, h)| h) != Some(HEADER) {
        return Err(err(1, format!("expected header {HEADER:?}")));
    }
    lines
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| {
            let bad = || err(i + 1, format!("malformed row {l:?}"));
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 5 {
                return Err(bad());
            }
            Ok(RobustnessRow {
                perturbation: f[0].to_string(),
                parameter: f[1].parse().map_err(|_| bad())?,
                mean_acc: f[2].parse().map_err(|_| bad())?,
                std_acc: f[3].parse().map_err(|_| bad())?,
                repeats: f[4].parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests;
