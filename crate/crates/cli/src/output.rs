use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

pub const CHECKSUMS: &str = "checksums.sha256";

/// Creates `dir`, refusing to write into the directory a command reads from.
pub fn prepare(dir: &Path, inputs: &[&Path]) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir)?;
    let canon = dir.canonicalize()?;
    for input in inputs {
        if input.canonicalize().ok().as_deref() == Some(canon.as_path()) {
            return Err(crate::UsageError(format!("output directory {} is also an input", dir.display())).into());
        }
    }
    Ok(())
}

fn files(dir: &Path, rel: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    let mut entries: Vec<_> = std::fs::read_dir(dir)?.collect::<std::io::Result<_>>()?;
    entries.sort_by_key(|e| e.file_name());
    for e in entries {
        let r = rel.join(e.file_name());
        if e.file_type()?.is_dir() {
            files(&e.path(), &r, out)?;
        } else if r != Path::new(CHECKSUMS) {
            out.push(r);
        }
    }
    Ok(())
}

/// Writes `checksums.sha256` listing the SHA-256 of every other file under
/// `dir`, sorted by path.
pub fn write_checksums(dir: &Path) -> anyhow::Result<()> {
    let mut list = Vec::new();
    files(dir, Path::new(""), &mut list)?;
    let mut text = String::new();
    for rel in list {
        let digest = Sha256::digest(std::fs::read(dir.join(&rel))?);
        let name = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
        text.push_str(&format!("{}  {name}\n", hex::encode(digest)));
    }
    std::fs::write(dir.join(CHECKSUMS), text)?;
    Ok(())
}

pub fn write_json(path: &Path, value: &impl serde::Serialize) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// Rejects ids that would break a plain comma-separated row.
pub fn csv_field(s: &str) -> anyhow::Result<&str> {
    if s.contains([',', '\n', '"']) {
        anyhow::bail!("{s:?} cannot be written to CSV");
    }
    Ok(s)
}
