use std::path::{Path, PathBuf};

use super::Mesh;
use crate::error::{Error, Result};

/// Reads an ASCII OFF mesh. Polygons with more than three vertices are
/// fan-triangulated.
pub fn load_off(path: &Path) -> Result<Mesh> {
    let text = std::fs::read_to_string(path)?;
    parse_off(&text, path)
}

pub fn parse_off(text: &str, path: &Path) -> Result<Mesh> {
    let err = |line: usize, msg: String| Error::Parse { path: PathBuf::from(path), line, msg };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim())).filter(|(_, l)| !l.is_empty());

    let (hl, header) = lines.next().ok_or_else(|| err(1, "empty file, expected OFF header".into()))?;
    let rest = header.strip_prefix("OFF").ok_or_else(|| err(hl, format!("expected OFF header, found {header:?}")))?.trim();
    let (cl, counts) =
        if rest.is_empty() { lines.next().ok_or_else(|| err(hl + 1, "missing vertex/face counts".into()))? } else { (hl, rest) };
    let nums: Vec<usize> =
        counts.split_whitespace().map(|t| t.parse().map_err(|_| err(cl, format!("bad count {t:?}")))).collect::<Result<_>>()?;
    if nums.len() < 2 {
        return Err(err(cl, "expected vertex and face counts".into()));
    }
    let (nv, nf) = (nums[0], nums[1]);

    let mut vertices = Vec::with_capacity(nv);
    let mut last = cl;
    for i in 0..nv {
        let (ln, l) = lines.next().ok_or_else(|| err(last + 1, format!("expected {nv} vertices, found {i}")))?;
        last = ln;
        let v: Vec<f64> =
            l.split_whitespace().take(3).map(|t| t.parse().map_err(|_| err(ln, format!("bad coordinate {t:?}")))).collect::<Result<_>>()?;
        if v.len() < 3 {
            return Err(err(ln, "vertex needs three coordinates".into()));
        }
        vertices.push([v[0], v[1], v[2]]);
    }

    let mut faces = Vec::with_capacity(nf);
    for i in 0..nf {
        let (ln, l) = lines.next().ok_or_else(|| err(last + 1, format!("expected {nf} faces, found {i}")))?;
        last = ln;
        let mut toks = l.split_whitespace();
        let n: usize = toks.next().and_then(|t| t.parse().ok()).ok_or_else(|| err(ln, "face must start with its vertex count".into()))?;
        let idx: Vec<usize> =
            toks.take(n).map(|t| t.parse().map_err(|_| err(ln, format!("bad vertex index {t:?}")))).collect::<Result<_>>()?;
        if n < 3 || idx.len() != n {
            return Err(err(ln, format!("face declares {n} vertices but lists {}", idx.len())));
        }
        if let Some(bad) = idx.iter().find(|&&v| v >= nv) {
            return Err(err(ln, format!("vertex index {bad} out of range for {nv} vertices")));
        }
        for k in 1..n - 1 {
            faces.push([idx[0], idx[k], idx[k + 1]]);
        }
    }
    if let Some((ln, _)) = lines.next() {
        return Err(err(ln, format!("unexpected data after {nv} vertices and {nf} faces")));
    }
    Mesh::new(vertices, faces)
}
