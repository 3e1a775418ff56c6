//! Run manifests and output bookkeeping.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn file_hash(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    Ok(sha256_hex(&bytes))
}

/// Everything needed to rerun a command: its arguments, the resolved
/// configuration, the root seed and hashes of what went in and came out.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    /// Arguments after the program name, `--output` included.
    pub args: Vec<String>,
    pub config: String,
    pub seed: u64,
    pub inputs: BTreeMap<String, String>,
    pub checkpoint_sha256: Option<String>,
    pub outputs: BTreeMap<String, String>,
    /// Files that legitimately differ between reruns (wall-clock timings).
    pub sidecars: Vec<String>,
}

/// Files written by one command, removed again if the command fails.
pub struct OutputDir {
    dir: PathBuf,
    created_dir: bool,
    written: Vec<PathBuf>,
    pub manifest: Manifest,
}

impl OutputDir {
    pub fn create(dir: &Path, manifest: Manifest) -> Result<Self> {
        let created_dir = !dir.exists();
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            created_dir,
            written: Vec::new(),
            manifest,
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write(&mut self, name: &str, bytes: impl AsRef<[u8]>) -> Result<PathBuf> {
        let p = self.path(name);
        self.written.push(p.clone());
        fs::write(&p, bytes.as_ref()).with_context(|| format!("cannot write {}", p.display()))?;
        self.manifest.outputs.insert(name.to_string(), sha256_hex(bytes.as_ref()));
        Ok(p)
    }

    pub fn write_sidecar(&mut self, name: &str, bytes: impl AsRef<[u8]>) -> Result<()> {
        let p = self.path(name);
        self.written.push(p.clone());
        fs::write(&p, bytes.as_ref()).with_context(|| format!("cannot write {}", p.display()))?;
        self.manifest.sidecars.push(name.to_string());
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        let json = serde_json::to_string_pretty(&self.manifest)?;
        let p = self.path(MANIFEST_FILE);
        self.written.push(p.clone());
        fs::write(&p, json).with_context(|| format!("cannot write {}", p.display()))?;
        Ok(())
    }

    pub fn discard(self) {
        for p in &self.written {
            let _ = fs::remove_file(p);
        }
        if self.created_dir {
            let _ = fs::remove_dir(&self.dir);
        }
    }
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("{} is not a manifest", path.display()))
}

/// The stored arguments with `--output` pointed at `output`.
pub fn rerun_args(m: &Manifest, output: &Path) -> Vec<String> {
    let mut args = Vec::with_capacity(m.args.len());
    let mut it = m.args.iter();
    while let Some(a) = it.next() {
        if a == "--output" {
            it.next();
        } else if !a.starts_with("--output=") {
            args.push(a.clone());
        }
    }
    args.push("--output".into());
    args.push(output.display().to_string());
    args
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_is_replaced() {
        let m = Manifest {
            args: vec!["train".into(), "--output".into(), "a".into(), "--seed".into(), "3".into()],
            ..Manifest::default()
        };
        assert_eq!(rerun_args(&m, Path::new("b")), ["train", "--seed", "3", "--output", "b"]);
    }

    #[test]
    fn discard_removes_partial_outputs() {
        let root = tempfile::tempdir().unwrap();
        let dir = root.path().join("out");
        let mut o = OutputDir::create(&dir, Manifest::default()).unwrap();
        o.write("x.txt", "1").unwrap();
        o.discard();
        assert!(!dir.exists());
    }
}
