use std::fmt::Write as _;
use std::path::Path;

use super::Signature;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"MVSG";
const VERSION: u32 = 1;

/// Layout: magic, version, count, dimension (u32 LE), then per record the
/// id length and UTF-8 bytes, the label (u32), and the vector (f64 LE).
pub fn write_signatures(path: &Path, sigs: &[Signature]) -> Result<()> {
    let dim = sigs.first().map_or(0, |s| s.vector.len());
    if sigs.iter().any(|s| s.vector.len() != dim) {
        return Err(Error::ShapeMismatch("signatures differ in length".into()));
    }
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    for v in [VERSION, sigs.len() as u32, dim as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for s in sigs {
        out.extend_from_slice(&(s.id.len() as u32).to_le_bytes());
        out.extend_from_slice(s.id.as_bytes());
        out.extend_from_slice(&(s.label as u32).to_le_bytes());
        for v in &s.vector {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

struct Reader<'a> {
    b: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.b.len() {
            return Err(Error::Format("signature file is truncated".into()));
        }
        self.pos += n;
        Ok(&self.b[self.pos - n..self.pos])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn read_signatures(path: &Path) -> Result<Vec<Signature>> {
    let bytes = std::fs::read(path)?;
    let mut r = Reader { b: &bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Format(format!("{} is not a signature file", path.display())));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported signature file version {version}")));
    }
    let (count, dim) = (r.u32()? as usize, r.u32()? as usize);
    let mut out = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        let len = r.u32()? as usize;
        let id = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| Error::Format("signature id is not UTF-8".into()))?;
        let label = r.u32()? as usize;
        let vector = r.take(8 * dim)?.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        out.push(Signature { id, label, vector });
    }
    if r.pos != bytes.len() {
        return Err(Error::Format("trailing bytes after the last signature".into()));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RetrievalRow {
    pub query_id: String,
    pub rank: usize,
    pub gallery_id: String,
    pub distance: f64,
    pub relevant: bool,
}

const HEADER: &str = "query_id,rank,gallery_id,distance,relevant";

fn check_id(id: &str) -> Result<()> {
    if id.contains([',', '\n', '"']) {
        return Err(Error::InvalidArgument(format!("id {id:?} cannot be written to CSV")));
    }
    Ok(())
}

pub fn write_retrieval_csv(path: &Path, rows: &[RetrievalRow]) -> Result<()> {
    let mut out = String::from(HEADER);
    out.push('\n');
    for r in rows {
        check_id(&r.query_id)?;
        check_id(&r.gallery_id)?;
        let _ = writeln!(out, "{},{},{},{},{}", r.query_id, r.rank, r.gallery_id, r.distance, r.relevant as u8);
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_retrieval_csv(path: &Path) -> Result<Vec<RetrievalRow>> {
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
            Ok(RetrievalRow {
                query_id: f[0].to_string(),
                rank: f[1].parse().map_err(|_| bad())?,
                gallery_id: f[2].to_string(),
                distance: f[3].parse().map_err(|_| bad())?,
                relevant: match f[4] {
                    "1" => true,
                    "0" => false,
                    _ => return Err(bad()),
                },
            })
        })
        .collect()
}
