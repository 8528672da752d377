//! Run manifests: what was run, with which configuration and seeds, and the
//! checksum of every file it produced.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{ExperimentConfig, Seeds};
use crate::error::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub file: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    pub config: ExperimentConfig,
    pub config_sha256: String,
    pub seeds: Seeds,
    pub artifacts: Vec<Artifact>,
    /// Seconds since the Unix epoch. The only field that differs between reruns.
    pub created_unix: u64,
}

impl Manifest {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })?;
        serde_json::from_str(&text).map_err(|e| CliError::Manifest { path: path.to_path_buf(), message: e.to_string() })
    }
}

/// Writes report files into one directory and remembers their checksums.
#[derive(Debug)]
pub struct ArtifactWriter {
    dir: PathBuf,
    artifacts: Vec<Artifact>,
}

impl ArtifactWriter {
    pub fn create(dir: &Path) -> CliResult<Self> {
        std::fs::create_dir_all(dir).map_err(|source| CliError::Io { path: dir.to_path_buf(), source })?;
        Ok(ArtifactWriter { dir: dir.to_path_buf(), artifacts: Vec::new() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn write(&mut self, name: &str, contents: &str) -> CliResult<()> {
        let path = self.dir.join(name);
        std::fs::write(&path, contents).map_err(|source| CliError::Io { path, source })?;
        self.artifacts.push(Artifact { file: name.to_string(), sha256: sha256_hex(contents.as_bytes()) });
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> CliResult<()> {
        let mut text = serde_json::to_string_pretty(value).expect("report types serialize");
        text.push('\n');
        self.write(name, &text)
    }

    pub fn artifacts(&self) -> &[Artifact] {
        &self.artifacts
    }

    /// Writes `manifest.json` and returns its path.
    pub fn finish(self, subcommand: &str, config: &ExperimentConfig) -> CliResult<PathBuf> {
        let created_unix = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
        let manifest = Manifest {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            subcommand: subcommand.to_string(),
            config: config.clone(),
            config_sha256: sha256_hex(config.to_toml().as_bytes()),
            seeds: config.seeds(),
            artifacts: self.artifacts,
            created_unix,
        };
        let path = self.dir.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        text.push('\n');
        std::fs::write(&path, text).map_err(|source| CliError::Io { path: path.clone(), source })?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_known_vector() {
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }

    #[test]
    fn manifest_lists_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = ArtifactWriter::create(dir.path()).unwrap();
        w.write("a.csv", "x\n1\n").unwrap();
        let cfg = ExperimentConfig::default();
        let path = w.finish("train", &cfg).unwrap();
        let m = Manifest::load(&path).unwrap();
        assert_eq!(m.artifacts, vec![Artifact { file: "a.csv".into(), sha256: sha256_hex(b"x\n1\n") }]);
        assert_eq!(m.config, cfg);
        assert_eq!(m.seeds, cfg.seeds());
    }
}
