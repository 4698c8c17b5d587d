//! Run manifests: what a command was asked to do and what it produced.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::io;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: &Path) -> Result<Self> {
        Ok(FileDigest {
            path: path.to_path_buf(),
            sha256: io::file_digest(path)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub argv: Vec<String>,
    /// Every parameter after layering flags, config file and defaults.
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    pub checkpoint_id: Option<String>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    /// Command-specific results worth keeping next to the config, such as
    /// the measured fidelity.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub notes: BTreeMap<String, serde_json::Value>,
    pub wall_time_secs: f64,
}

impl RunManifest {
    /// Where the manifest for a primary output lives.
    pub fn path_for(output: &Path) -> PathBuf {
        let name = output.file_name().unwrap_or_default().to_string_lossy();
        output.with_file_name(format!("{name}.manifest.json"))
    }

    pub fn write(&self, primary_output: &Path) -> Result<PathBuf> {
        let path = Self::path_for(primary_output);
        io::write_json(&path, self)?;
        Ok(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        io::read_json(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_sits_next_to_output() {
        assert_eq!(
            RunManifest::path_for(Path::new("runs/cands.csv")),
            PathBuf::from("runs/cands.csv.manifest.json")
        );
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("x.csv");
        std::fs::write(&out, "x0,y0\n1,2\n").unwrap();
        let m = RunManifest {
            command: "gen-data".into(),
            version: "0.1.0".into(),
            argv: vec!["mango".into()],
            config: serde_json::json!({"n": 10}),
            seeds: BTreeMap::from([("seed".to_string(), 3)]),
            checkpoint_id: None,
            inputs: vec![],
            outputs: vec![FileDigest::of(&out).unwrap()],
            notes: BTreeMap::new(),
            wall_time_secs: 0.5,
        };
        let path = m.write(&out).unwrap();
        assert_eq!(RunManifest::read(&path).unwrap(), m);
    }
}
