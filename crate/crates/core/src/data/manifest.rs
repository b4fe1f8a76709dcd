use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::Gait;

/// One manifest line: a clip, its labels and the frame ranges to keep
/// (half-open; empty means the whole clip).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub clip: PathBuf,
    pub style: String,
    pub gait: Gait,
    #[serde(default)]
    pub ranges: Vec<[usize; 2]>,
    /// Also add the left/right mirrored copy.
    #[serde(default)]
    pub mirror: bool,
}

/// Parses a line-delimited JSON manifest. Blank lines and lines starting
/// with `#` are skipped. Relative clip paths resolve against `base`.
pub fn parse_manifest(text: &str, base: &Path) -> Result<Vec<ManifestEntry>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut e: ManifestEntry = serde_json::from_str(line).map_err(|err| Error::Parse {
            line: n + 1,
            message: err.to_string(),
        })?;
        for r in &e.ranges {
            if r[0] >= r[1] {
                return Err(Error::Parse {
                    line: n + 1,
                    message: format!("empty frame range {}..{}", r[0], r[1]),
                });
            }
        }
        if e.clip.is_relative() {
            e.clip = base.join(&e.clip);
        }
        out.push(e);
    }
    if out.is_empty() {
        return Err(Error::invalid("manifest lists no clips"));
    }
    Ok(out)
}

pub fn load_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = std::fs::read_to_string(path)?;
    parse_manifest(&text, path.parent().unwrap_or(Path::new(".")))
}

pub fn write_manifest(entries: &[ManifestEntry]) -> String {
    let mut s = String::new();
    for e in entries {
        s.push_str(&serde_json::to_string(e).expect("manifest entries serialise"));
        s.push('\n');
    }
    s
}
