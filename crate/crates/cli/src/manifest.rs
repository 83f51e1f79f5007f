//! Run manifest: what ran, on which inputs, producing which files.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

pub const MANIFEST_NAME: &str = "run_manifest.json";

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: &'static str,
    pub threads: Option<usize>,
    /// Effective configuration, flattened to strings.
    pub config: BTreeMap<String, String>,
    /// SHA-256 of every input file, keyed by path.
    pub inputs: BTreeMap<String, String>,
    /// Written files, relative to the output directory.
    pub outputs: Vec<String>,
    pub wall_time_s: f64,
}

impl RunManifest {
    pub fn new(command: &str, threads: Option<usize>) -> Self {
        Self {
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION"),
            threads,
            config: BTreeMap::new(),
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            wall_time_s: 0.0,
        }
    }

    pub fn hash_input(&mut self, path: &Path) -> Result<(), CliError> {
        let bytes =
            fs::read(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        self.inputs
            .insert(path.display().to_string(), sha256_hex(&bytes));
        Ok(())
    }

    /// Writes to a temporary sibling and renames it into place.
    pub fn write_atomic(&self, out_dir: &Path) -> Result<PathBuf, CliError> {
        let target = out_dir.join(MANIFEST_NAME);
        let tmp = out_dir.join(format!(".{MANIFEST_NAME}.tmp"));
        let json = serde_json::to_string_pretty(self).expect("manifest serializes") + "\n";
        let fail = |e: std::io::Error| CliError::Runtime(format!("{}: {e}", target.display()));
        fs::write(&tmp, json).map_err(fail)?;
        fs::rename(&tmp, &target).map_err(fail)?;
        Ok(target)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn atomic_write_leaves_no_temp() {
        let dir = tempfile::tempdir().unwrap();
        let m = RunManifest::new("eval", Some(1));
        let p = m.write_atomic(dir.path()).unwrap();
        assert!(p.is_file());
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
