//! Run manifests and the files a command emits.

use std::fs;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::Failure;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Serialize)]
pub struct InputDigest {
    pub name: String,
    pub sha256: String,
}

/// Provenance record carried by every output file.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_digest: String,
    pub seed: u64,
    pub tool_version: String,
    /// Output file names relative to the output directory.
    pub outputs: Vec<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub inputs: Vec<InputDigest>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl RunManifest {
    pub fn new(command: &str, config_toml: &str, seed: u64) -> Self {
        RunManifest {
            command: command.to_string(),
            config_digest: sha256_hex(config_toml.as_bytes()),
            seed,
            tool_version: TOOL_VERSION.to_string(),
            outputs: Vec::new(),
            inputs: Vec::new(),
            notes: Vec::new(),
        }
    }

    pub fn add_input(&mut self, path: &Path, bytes: &[u8]) {
        let name = path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned());
        self.inputs.push(InputDigest {
            name,
            sha256: sha256_hex(bytes),
        });
    }

    /// The manifest as `# `-prefixed comment lines for delimited files.
    fn comment_header(&self) -> String {
        let json = serde_json::to_string(self).expect("manifest serializes");
        format!("# isocov run manifest\n# {json}\n")
    }
}

enum Body {
    Table(String),
    Json(serde_json::Value),
}

/// Files produced by one command, written together once computation is done.
pub struct Artifacts {
    manifest: RunManifest,
    files: Vec<(String, Body)>,
}

impl Artifacts {
    pub fn new(manifest: RunManifest) -> Self {
        Artifacts {
            manifest,
            files: Vec::new(),
        }
    }

    pub fn manifest_mut(&mut self) -> &mut RunManifest {
        &mut self.manifest
    }

    pub fn table(&mut self, name: &str, csv: String) {
        self.files.push((name.to_string(), Body::Table(csv)));
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), Failure> {
        let v = serde_json::to_value(value).map_err(|e| Failure::usage(format!("serializing {name}: {e}")))?;
        self.files.push((name.to_string(), Body::Json(v)));
        Ok(())
    }

    /// Writes every file plus `manifest.json` into `dir`.
    pub fn write(mut self, dir: &Path) -> Result<Vec<String>, Failure> {
        fs::create_dir_all(dir).map_err(|e| Failure::io(dir, e))?;
        self.manifest.outputs = self.files.iter().map(|(n, _)| n.clone()).collect();
        self.manifest.outputs.push("manifest.json".into());
        for (name, body) in &self.files {
            let text = match body {
                Body::Table(csv) => format!("{}{csv}", self.manifest.comment_header()),
                Body::Json(v) => {
                    let doc = serde_json::json!({ "manifest": &self.manifest, "result": v });
                    let mut s = serde_json::to_string_pretty(&doc).expect("json value serializes");
                    s.push('\n');
                    s
                }
            };
            let path = dir.join(name);
            fs::write(&path, text).map_err(|e| Failure::io(&path, e))?;
        }
        let mut m = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        m.push('\n');
        let path = dir.join("manifest.json");
        fs::write(&path, m).map_err(|e| Failure::io(&path, e))?;
        Ok(self.manifest.outputs)
    }
}
