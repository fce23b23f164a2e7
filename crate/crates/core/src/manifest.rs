//! Run manifests and staged output directories.
//!
//! Output files are written into a hidden staging directory and renamed
//! into place only when the whole run succeeds, so a failed run leaves no
//! unlisted files behind. The manifest lists every output with its SHA-256
//! digest and lands last, atomically (write-then-rename).

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MANIFEST_NAME: &str = "run_manifest.json";

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FileDigest {
    pub name: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub millis: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub created_utc: String,
    pub config: BTreeMap<String, String>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub timings: Vec<StageTiming>,
    pub notes: Vec<String>,
}

impl RunManifest {
    pub fn new(command: impl Into<String>, config: BTreeMap<String, String>) -> Self {
        RunManifest {
            tool: "cdrlab".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            created_utc: chrono::Utc::now().to_rfc3339(),
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
            timings: Vec::new(),
            notes: Vec::new(),
        }
    }

    /// Record an input file with its digest.
    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(digest_file(path)?);
        Ok(())
    }

    pub fn note(&mut self, text: impl Into<String>) {
        self.notes.push(text.into());
    }

    pub fn load(path: &Path) -> Result<RunManifest> {
        let text =
            fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("bad manifest: {e}")))
    }
}

pub fn digest_file(path: &Path) -> Result<FileDigest> {
    let mut file = fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    let mut bytes = 0u64;
    loop {
        let n = file
            .read(&mut buf)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        if n == 0 {
            break;
        }
        bytes += n as u64;
        hasher.update(&buf[..n]);
    }
    let sha256 = hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect();
    let name = path
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string());
    Ok(FileDigest {
        name,
        sha256,
        bytes,
    })
}

/// A staging area for one run's outputs.
pub struct OutputStage {
    final_dir: PathBuf,
    tmp_dir: PathBuf,
    files: Vec<String>,
    timings: Vec<StageTiming>,
    committed: bool,
}

impl OutputStage {
    pub fn new(out_dir: &Path) -> Result<OutputStage> {
        fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;
        let tmp_dir = out_dir.join(format!(".staging-{}", std::process::id()));
        if tmp_dir.exists() {
            fs::remove_dir_all(&tmp_dir)
                .map_err(|e| Error::io(tmp_dir.display().to_string(), e))?;
        }
        fs::create_dir_all(&tmp_dir).map_err(|e| Error::io(tmp_dir.display().to_string(), e))?;
        Ok(OutputStage {
            final_dir: out_dir.to_path_buf(),
            tmp_dir,
            files: Vec::new(),
            timings: Vec::new(),
            committed: false,
        })
    }

    /// Open a named output for writing (buffered).
    pub fn create(&mut self, name: &str) -> Result<BufWriter<fs::File>> {
        let path = self.tmp_dir.join(name);
        let file = fs::File::create(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
        if !self.files.iter().any(|f| f == name) {
            self.files.push(name.to_string());
        }
        Ok(BufWriter::new(file))
    }

    /// Run a stage, recording its wall time into the manifest.
    pub fn time<T>(&mut self, stage: &str, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        let t0 = Instant::now();
        let out = f(self)?;
        self.timings.push(StageTiming {
            stage: stage.to_string(),
            millis: t0.elapsed().as_millis() as u64,
        });
        Ok(out)
    }

    /// Digest, move every staged file into the output directory, then write
    /// the manifest last (write-then-rename).
    pub fn commit(mut self, mut manifest: RunManifest) -> Result<PathBuf> {
        self.files.sort();
        for name in &self.files {
            let tmp = self.tmp_dir.join(name);
            manifest.outputs.push(digest_file(&tmp)?);
            let dst = self.final_dir.join(name);
            fs::rename(&tmp, &dst).map_err(|e| Error::io(dst.display().to_string(), e))?;
        }
        manifest.timings.append(&mut self.timings);

        let manifest_tmp = self.tmp_dir.join(MANIFEST_NAME);
        let text = serde_json::to_string_pretty(&manifest)
            .map_err(|e| Error::Internal(format!("manifest serialization: {e}")))?;
        {
            let mut f = fs::File::create(&manifest_tmp)
                .map_err(|e| Error::io(manifest_tmp.display().to_string(), e))?;
            f.write_all(text.as_bytes())
                .map_err(|e| Error::io(manifest_tmp.display().to_string(), e))?;
        }
        let manifest_path = self.final_dir.join(MANIFEST_NAME);
        fs::rename(&manifest_tmp, &manifest_path)
            .map_err(|e| Error::io(manifest_path.display().to_string(), e))?;

        fs::remove_dir_all(&self.tmp_dir).ok();
        self.committed = true;
        Ok(manifest_path)
    }
}

impl Drop for OutputStage {
    fn drop(&mut self) {
        if !self.committed {
            fs::remove_dir_all(&self.tmp_dir).ok();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn commit_moves_files_and_lists_digests() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("run");
        let mut stage = OutputStage::new(&out).unwrap();
        {
            let mut f = stage.create("a.csv").unwrap();
            writeln!(f, "x,y").unwrap();
        }
        let manifest = RunManifest::new("test", BTreeMap::new());
        let path = stage.commit(manifest).unwrap();

        assert!(out.join("a.csv").exists());
        let loaded = RunManifest::load(&path).unwrap();
        assert_eq!(loaded.outputs.len(), 1);
        assert_eq!(loaded.outputs[0].name, "a.csv");
        assert_eq!(loaded.outputs[0], digest_file(&out.join("a.csv")).unwrap());
        // Staging directory cleaned up.
        assert!(!out
            .join(format!(".staging-{}", std::process::id()))
            .exists());
    }

    #[test]
    fn failed_run_leaves_no_unlisted_files() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("run");
        {
            let mut stage = OutputStage::new(&out).unwrap();
            let mut f = stage.create("partial.csv").unwrap();
            writeln!(f, "junk").unwrap();
            // dropped without commit
        }
        let leftovers: Vec<_> = fs::read_dir(&out).unwrap().collect();
        assert!(leftovers.is_empty(), "leftovers: {leftovers:?}");
    }

    #[test]
    fn digests_are_stable() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.txt");
        fs::write(&p, b"hello").unwrap();
        let d = digest_file(&p).unwrap();
        assert_eq!(d.bytes, 5);
        assert_eq!(
            d.sha256,
            "2cf24dba5fb0a30e26e83b2ac5b9e29e1b161e5c1fa7425e73043362938b9824"
        );
    }
}
