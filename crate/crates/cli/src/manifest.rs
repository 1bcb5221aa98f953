//! Run manifest written next to every set of outputs.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use arrival_core::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST: &str = "manifest.toml";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
}

/// Record of one CLI invocation. Output paths are relative to the run
/// directory; input paths are as given on the command line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub version: String,
    pub seed: Option<u64>,
    pub config_file: Option<String>,
    pub config_sha256: Option<String>,
    /// Raw-input directory the run read, if any; later stages default to it.
    pub input_dir: Option<String>,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub inputs: Vec<FileHash>,
    pub outputs: Vec<FileHash>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|source| Error::Io { file: path.to_path_buf(), source })?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

impl RunManifest {
    pub fn new(command: &str, args: Vec<String>, started_unix: u64) -> Self {
        RunManifest {
            command: command.to_string(),
            args,
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: None,
            config_file: None,
            config_sha256: None,
            input_dir: None,
            started_unix,
            finished_unix: started_unix,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(FileHash { path: path.display().to_string(), sha256: sha256_file(path)? });
        Ok(())
    }

    /// Hashes `names` inside `dir`, then writes the manifest there,
    /// replacing any earlier one.
    pub fn finish(mut self, dir: &Path, names: &[String]) -> Result<PathBuf> {
        self.outputs = names
            .iter()
            .map(|n| Ok(FileHash { path: n.clone(), sha256: sha256_file(&dir.join(n))? }))
            .collect::<Result<_>>()?;
        self.finished_unix = unix_now();
        let path = dir.join(MANIFEST);
        let text = toml::to_string_pretty(&self).map_err(|e| Error::Validation(e.to_string()))?;
        std::fs::write(&path, text).map_err(|source| Error::Io { file: path.clone(), source })?;
        Ok(path)
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = std::fs::read_to_string(&path).map_err(|source| Error::Io { file: path.clone(), source })?;
        toml::from_str(&text).map_err(|e| Error::Validation(format!("{}: {e}", path.display())))
    }

    /// Recorded outputs whose current hash differs or that are missing.
    pub fn changed_outputs(&self, dir: &Path) -> Vec<String> {
        changed(self.outputs.iter().map(|f| (dir.join(&f.path), f)))
    }

    /// Recorded inputs whose current hash differs or that are missing.
    pub fn changed_inputs(&self) -> Vec<String> {
        changed(self.inputs.iter().map(|f| (PathBuf::from(&f.path), f)))
    }
}

fn changed<'a>(files: impl Iterator<Item = (PathBuf, &'a FileHash)>) -> Vec<String> {
    files.filter(|(p, f)| sha256_file(p).map_or(true, |h| h != f.sha256)).map(|(_, f)| f.path.clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.txt");
        std::fs::write(&p, b"abc").unwrap();
        assert_eq!(sha256_file(&p).unwrap(), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }

    #[test]
    fn round_trip_and_verification() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("out.csv"), "x\n1\n").unwrap();
        let input = dir.path().join("in.csv");
        std::fs::write(&input, "y\n").unwrap();
        let mut m = RunManifest::new("fit", vec!["fit".into()], 5);
        m.seed = Some(7);
        m.add_input(&input).unwrap();
        m.clone().finish(dir.path(), &["out.csv".into()]).unwrap();
        let back = RunManifest::read(dir.path()).unwrap();
        assert_eq!(back.seed, Some(7));
        assert_eq!(back.outputs.len(), 1);
        assert!(back.changed_outputs(dir.path()).is_empty());
        assert!(back.changed_inputs().is_empty());

        std::fs::write(dir.path().join("out.csv"), "x\n2\n").unwrap();
        assert_eq!(back.changed_outputs(dir.path()), vec!["out.csv".to_string()]);
        std::fs::remove_file(&input).unwrap();
        assert_eq!(back.changed_inputs().len(), 1);
    }
}
