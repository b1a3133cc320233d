//! Artifact writers and the run manifest.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::{Format, RunConfig};
use crate::error::CliError;
use crate::svg::Plot;

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub code_version: String,
    pub verb: String,
    pub seed: u64,
    /// Flat configuration, including the reserved keys.
    pub config: std::collections::BTreeMap<String, String>,
    /// SHA-256 of the configuration (without `out`) and of every input file.
    pub inputs_sha256: String,
    pub wall_time_seconds: f64,
    pub artifacts: Vec<Artifact>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: not a run manifest: {e}", path.display())))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

/// Writes artifacts into the output directory and records their digests.
pub struct Output {
    dir: PathBuf,
    seed: u64,
    formats: Vec<Format>,
    artifacts: Vec<Artifact>,
}

impl Output {
    pub fn new(cfg: &RunConfig) -> Result<Self, CliError> {
        std::fs::create_dir_all(&cfg.out).map_err(|e| CliError::Io(format!("{}: {e}", cfg.out.display())))?;
        Ok(Self { dir: cfg.out.clone(), seed: cfg.seed, formats: cfg.formats.clone(), artifacts: Vec::new() })
    }

    pub fn tag(&self) -> String {
        format!("manifest={MANIFEST} seed={}", self.seed)
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        self.artifacts.push(Artifact { file: name.into(), sha256: sha256_hex(bytes) });
        Ok(())
    }

    /// CSV with a leading `# manifest=... seed=...` comment line.
    pub fn csv<I>(&mut self, name: &str, header: &[&str], rows: I) -> Result<(), CliError>
    where
        I: IntoIterator<Item = Vec<String>>,
    {
        if !self.formats.contains(&Format::Csv) {
            return Ok(());
        }
        let mut buf = format!("# {}\n", self.tag()).into_bytes();
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            w.write_record(header)?;
            for row in rows {
                w.write_record(&row)?;
            }
            w.flush()?;
        }
        self.write(name, &buf)
    }

    /// JSON object with `manifest` and `seed` fields added.
    pub fn json(&mut self, name: &str, value: &Value) -> Result<(), CliError> {
        if !self.formats.contains(&Format::Json) {
            return Ok(());
        }
        let mut value = value.clone();
        if let Value::Object(map) = &mut value {
            map.insert("manifest".into(), json!(MANIFEST));
            map.insert("seed".into(), json!(self.seed));
        }
        let mut text = serde_json::to_string_pretty(&value).map_err(|e| CliError::Io(e.to_string()))?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    pub fn svg(&mut self, name: &str, plot: &Plot) -> Result<(), CliError> {
        if !self.formats.contains(&Format::Svg) {
            return Ok(());
        }
        let text = plot.render(&self.tag());
        self.write(name, text.as_bytes())
    }

    pub fn finish(self, cfg: &RunConfig, inputs_sha256: String, wall_time_seconds: f64) -> Result<Manifest, CliError> {
        let manifest = Manifest {
            code_version: env!("CARGO_PKG_VERSION").into(),
            verb: cfg.verb_name(),
            seed: cfg.seed,
            config: cfg.to_map(),
            inputs_sha256,
            wall_time_seconds,
            artifacts: self.artifacts,
        };
        let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Io(e.to_string()))?;
        text.push('\n');
        let path = self.dir.join(MANIFEST);
        std::fs::write(&path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Ok(manifest)
    }
}

/// Shortest round-trip text of a float.
pub fn num(v: f64) -> String {
    v.to_string()
}

/// First differing `(line, column)`, both 1-based, or `None` when equal.
pub fn first_difference(a: &[u8], b: &[u8]) -> Option<(usize, usize)> {
    let (mut line, mut col) = (1, 1);
    for k in 0..a.len().max(b.len()) {
        match (a.get(k), b.get(k)) {
            (Some(x), Some(y)) if x == y => {
                if *x == b'\n' {
                    line += 1;
                    col = 1;
                } else {
                    col += 1;
                }
            }
            _ => return Some((line, col)),
        }
    }
    None
}
