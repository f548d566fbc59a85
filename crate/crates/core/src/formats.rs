//! On-disk artifact formats: binary PGM images, the JSON schemas for
//! detections / ground truth / metrics / parameters, and CSV reports.
//!
//! All writers go through [`write_atomic`] (write to a temp file in the
//! same directory, then rename) so concurrent jobs never expose partial
//! files, and identical inputs always produce byte-identical artifacts.

use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::memory::PgmaParams;
use crate::numeric::Matrix;
use crate::pifr::PifrParams;
use crate::pipeline::PipelineConfig;
use crate::types::Detection;

/// Detections of one frame, the per-frame JSON artifact of `detect` and
/// `track`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameDetections {
    pub frame: u64,
    pub detections: Vec<Detection>,
}

/// The tunable parameters persisted by `tune` and consumed by every other
/// command: one refinement block per refined stage (in stage order) plus
/// the memory-attention block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsFile {
    pub pifr: Vec<PifrParams>,
    pub pgma: PgmaParams,
}

impl ParamsFile {
    /// Extract the persistable parameters from a full config.
    pub fn from_config(config: &PipelineConfig) -> Self {
        Self { pifr: config.pifr.to_vec(), pgma: config.pgma.clone() }
    }

    /// Overlay these parameters onto a config.
    pub fn apply(&self, config: &mut PipelineConfig) -> Result<()> {
        if self.pifr.len() != config.pifr.len() {
            return Err(Error::Format(format!(
                "parameter file has {} refinement blocks, pipeline expects {}",
                self.pifr.len(),
                config.pifr.len()
            )));
        }
        for (dst, src) in config.pifr.iter_mut().zip(self.pifr.iter()) {
            *dst = src.clone();
        }
        config.pgma = self.pgma.clone();
        config.validate()
    }
}

static TEMP_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Write `bytes` to `path` atomically: the content lands under a unique
/// temporary name in the target directory and is renamed into place, so
/// readers only ever see complete files.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let unique = TEMP_COUNTER.fetch_add(1, Ordering::Relaxed);
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidInput(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp-{}-{unique}", name.to_string_lossy(), std::process::id()));
    let result = (|| -> Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)?;
        Ok(())
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result
}

/// Serialize any value as pretty JSON with a trailing newline.
pub fn to_json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, &to_json_bytes(value)?)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path)?;
    Ok(serde_json::from_slice(&bytes)?)
}

/// Encode a `[0,1]` image as binary 8-bit PGM (magic `P5`, max value 255).
/// Values are clamped and mapped linearly: `byte = round(v * 255)`.
pub fn pgm_bytes(image: &Matrix) -> Vec<u8> {
    let (h, w) = (image.rows(), image.cols());
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.reserve(h * w);
    out.extend(image.data().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}

pub fn write_pgm(path: &Path, image: &Matrix) -> Result<()> {
    write_atomic(path, &pgm_bytes(image))
}

/// Decode a binary PGM produced by [`write_pgm`] back to a `[0,1]` image.
/// Accepts `#` comment lines in the header and requires max value 255.
pub fn read_pgm(path: &Path) -> Result<Matrix> {
    let bytes = fs::read(path)?;
    parse_pgm(&bytes).map_err(|msg| Error::Format(format!("{}: {msg}", path.display())))
}

fn parse_pgm(bytes: &[u8]) -> std::result::Result<Matrix, String> {
    let mut pos = 0usize;
    let mut fields = Vec::with_capacity(4);
    // header = 4 whitespace-separated tokens (comments run to end of line)
    while fields.len() < 4 {
        match bytes.get(pos) {
            None => return Err("truncated header".into()),
            Some(b'#') => {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            }
            Some(c) if c.is_ascii_whitespace() => pos += 1,
            Some(_) => {
                let start = pos;
                while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                    pos += 1;
                }
                fields.push(&bytes[start..pos]);
            }
        }
    }
    // exactly one whitespace byte separates the header from pixel data
    pos += 1;
    if fields[0] != b"P5" {
        return Err("not a binary PGM (missing P5 magic)".into());
    }
    let parse_dim = |field: &[u8], name: &str| -> std::result::Result<usize, String> {
        std::str::from_utf8(field)
            .ok()
            .and_then(|s| s.parse::<usize>().ok())
            .filter(|v| *v > 0)
            .ok_or_else(|| format!("bad {name} field"))
    };
    let w = parse_dim(fields[1], "width")?;
    let h = parse_dim(fields[2], "height")?;
    if fields[3] != b"255" {
        return Err("unsupported max value (expected 255)".into());
    }
    let data = &bytes[pos.min(bytes.len())..];
    if data.len() != h * w {
        return Err(format!("expected {} pixel bytes, found {}", h * w, data.len()));
    }
    let values = data.iter().map(|b| *b as f64 / 255.0).collect();
    Matrix::from_vec(h, w, values).map_err(|e| e.to_string())
}

/// Write a CSV report: a header row plus pre-formatted body rows. Fields
/// are joined with commas; callers keep fields comma-free.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut out = String::new();
    out.push_str(&header.join(","));
    out.push('\n');
    for row in rows {
        if row.len() != header.len() {
            return Err(Error::InvalidInput(format!(
                "csv row has {} fields, header has {}",
                row.len(),
                header.len()
            )));
        }
        out.push_str(&row.join(","));
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

/// Shortest-exact decimal form of a float, the formatting used in every
/// CSV cell so artifacts are reproducible bit-for-bit.
pub fn fmt_float(v: f64) -> String {
    format!("{v}")
}
