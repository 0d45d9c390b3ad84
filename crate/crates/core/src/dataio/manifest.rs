use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::synthetic::{generate_shape, ShapeClass};
use super::{load_off, load_ply, sample_points, unit_normalize, Geometry};
use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    pub class: ShapeClass,
    pub seed: u64,
}

/// One dataset entry. Exactly one of `path` and `generator` is set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorSpec>,
    pub label: usize,
    pub split: Split,
}

fn validate(records: &[ManifestRecord]) -> Result<usize> {
    if records.is_empty() {
        return Err(Error::Config("manifest has no records".into()));
    }
    let mut ids = BTreeSet::new();
    for r in records {
        if !ids.insert(r.id.as_str()) {
            return Err(Error::Config(format!("duplicate record id {:?}", r.id)));
        }
        if r.path.is_some() == r.generator.is_some() {
            return Err(Error::Config(format!("record {:?} needs exactly one of path and generator", r.id)));
        }
    }
    let labels: BTreeSet<usize> = records.iter().map(|r| r.label).collect();
    let k = labels.len();
    if labels.iter().copied().ne(0..k) {
        return Err(Error::Config(format!("labels must form 0..{k}, found {labels:?}")));
    }
    Ok(k)
}

pub fn write_manifest(path: &Path, records: &[ManifestRecord]) -> Result<()> {
    validate(records)?;
    let mut text = serde_json::to_string_pretty(records)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRecord>> {
    let records: Vec<ManifestRecord> = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    validate(&records)?;
    Ok(records)
}

const CACHE_MAGIC: &[u8; 4] = b"MVPC";
const CACHE_VERSION: u32 = 1;

/// Writes positions as little-endian `f32` triples.
pub fn write_point_cache(path: &Path, cloud: &PointCloud) -> Result<()> {
    let mut out = Vec::with_capacity(12 + 12 * cloud.len());
    out.extend_from_slice(CACHE_MAGIC);
    out.extend_from_slice(&CACHE_VERSION.to_le_bytes());
    out.extend_from_slice(&(cloud.len() as u32).to_le_bytes());
    for p in &cloud.points {
        for v in p {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_point_cache(path: &Path) -> Result<PointCloud> {
    let b = std::fs::read(path)?;
    if b.len() < 12 || &b[..4] != CACHE_MAGIC {
        return Err(Error::Format(format!("{} is not a point cache", path.display())));
    }
    let version = u32::from_le_bytes(b[4..8].try_into().unwrap());
    if version != CACHE_VERSION {
        return Err(Error::Format(format!("unsupported point cache version {version}")));
    }
    let n = u32::from_le_bytes(b[8..12].try_into().unwrap()) as usize;
    if b.len() != 12 + 12 * n {
        return Err(Error::Format(format!("point cache declares {n} points but holds {} bytes", b.len() - 12)));
    }
    let vals: Vec<f64> = b[12..].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect();
    Ok(PointCloud::new(vals.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub label: usize,
    pub split: Split,
    pub cloud: PointCloud,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub classes: usize,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>, classes: usize) -> Result<Self> {
        if let Some(s) = samples.iter().find(|s| s.label >= classes) {
            return Err(Error::InvalidArgument(format!("label {} of {:?} out of range for {classes} classes", s.label, s.id)));
        }
        Ok(Dataset { samples, classes })
    }

    pub fn split(&self, split: Split) -> Dataset {
        Dataset { samples: self.samples.iter().filter(|s| s.split == split).cloned().collect(), classes: self.classes }
    }

    /// Samples whose label is in `labels`.
    pub fn with_labels(&self, labels: &[usize]) -> Dataset {
        Dataset { samples: self.samples.iter().filter(|s| labels.contains(&s.label)).cloned().collect(), classes: self.classes }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }
}

/// Exactly `count` points: a random subset when the cloud is larger,
/// otherwise all points followed by random repeats.
fn resample(cloud: &PointCloud, count: usize, seed: u64) -> PointCloud {
    let n = cloud.len();
    if n == count {
        return cloud.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let idx: Vec<usize> = if n > count {
        let mut v = sample(&mut rng, n, count).into_vec();
        v.sort_unstable();
        v
    } else {
        (0..n).chain((n..count).map(|_| rng.gen_range(0..n))).collect()
    };
    cloud.select(&idx)
}

fn materialize(record: &ManifestRecord, base: &Path, points: usize) -> Result<PointCloud> {
    if let Some(g) = &record.generator {
        return generate_shape(g.class, points, g.seed);
    }
    let path = base.join(record.path.as_ref().expect("validated"));
    let s = seed::derive(0, &record.id, 0);
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
    let cloud = match ext.as_str() {
        "off" => sample_points(&load_off(&path)?, points, s)?,
        "ply" => match load_ply(&path)? {
            Geometry::Mesh(m) => sample_points(&m, points, s)?,
            Geometry::Points(c) if c.is_empty() => return Err(Error::InvalidArgument(format!("{} holds no points", path.display()))),
            Geometry::Points(c) => resample(&c, points, s),
        },
        _ => return Err(Error::InvalidArgument(format!("unsupported shape file {}", path.display()))),
    };
    unit_normalize(&cloud)
}

/// Loads every record with `points` points each. File-backed shapes are
/// unit-normalized; generated shapes keep their native scale. With a cache
/// directory, shapes round-trip through the `f32` cache so cached and
/// fresh loads agree exactly.
pub fn load_dataset(manifest: &Path, points: usize, cache: Option<&Path>) -> Result<Dataset> {
    if points == 0 {
        return Err(Error::Config("points per shape must be positive".into()));
    }
    let records = read_manifest(manifest)?;
    let classes = validate(&records)?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    if let Some(dir) = cache {
        std::fs::create_dir_all(dir)?;
    }
    let samples = records
        .iter()
        .map(|r| {
            let cloud = match cache {
                Some(dir) => {
                    let file = dir.join(format!("{}-{points}.mvpc", r.id));
                    if !file.exists() {
                        write_point_cache(&file, &materialize(r, base, points)?)?;
                    }
                    read_point_cache(&file)?
                }
                None => materialize(r, base, points)?,
            };
            Ok(Sample { id: r.id.clone(), label: r.label, split: r.split, cloud })
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(samples, classes)
}
