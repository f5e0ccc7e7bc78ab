//! Run manifests and atomic output files.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::args::Command;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
        Ok(Self { path: path.display().to_string(), sha256: hex::encode(Sha256::digest(&bytes)) })
    }
}

/// Everything needed to repeat a run: the fully resolved command, the seed,
/// and digests of every input and output file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: Option<u64>,
    /// The parsed command with every default filled in.
    pub config: Command,
    /// Derived settings such as the sampler configuration and model spec.
    #[serde(default)]
    pub resolved: serde_json::Value,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub started_at: String,
    pub finished_at: String,
    pub exit_code: i32,
}

fn timestamp(t: DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Millis, true)
}

/// Collects inputs and outputs while a command runs.
pub struct Run {
    pub out_dir: PathBuf,
    started: DateTime<Utc>,
    inputs: Vec<FileDigest>,
    outputs: Vec<FileDigest>,
    pub resolved: serde_json::Value,
}

impl Run {
    pub fn start(out_dir: &Path) -> Result<Self> {
        fs::create_dir_all(out_dir).with_context(|| format!("cannot create {}", out_dir.display()))?;
        Ok(Self {
            out_dir: out_dir.to_path_buf(),
            started: Utc::now(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            resolved: serde_json::Value::Null,
        })
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(FileDigest::of(path)?);
        Ok(())
    }

    /// Writes `name` in the output directory through a temporary file and a
    /// rename, so readers never see a partial file.
    pub fn write(&mut self, name: &str, fill: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<PathBuf> {
        let mut buf = Vec::new();
        fill(&mut buf)?;
        let path = self.out_dir.join(name);
        write_atomic(&path, &buf)?;
        self.outputs.push(FileDigest { path: path.display().to_string(), sha256: hex::encode(Sha256::digest(&buf)) });
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf> {
        self.write(name, |buf| {
            serde_json::to_writer_pretty(&mut *buf, value)?;
            buf.push(b'\n');
            Ok(())
        })
    }

    pub fn finish(self, command: &Command, exit_code: i32) -> Result<()> {
        let manifest = RunManifest {
            command: command.name().to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: command.seed(),
            config: command.clone(),
            resolved: self.resolved,
            inputs: self.inputs,
            outputs: self.outputs,
            started_at: timestamp(self.started),
            finished_at: timestamp(Utc::now()),
            exit_code,
        };
        let mut buf = serde_json::to_vec_pretty(&manifest)?;
        buf.push(b'\n');
        write_atomic(&self.out_dir.join(MANIFEST_FILE), &buf)
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    let mut file = fs::File::create(&tmp).with_context(|| format!("cannot create {}", tmp.display()))?;
    file.write_all(bytes)?;
    file.sync_all()?;
    drop(file);
    fs::rename(&tmp, path).with_context(|| format!("cannot move {} into place", path.display()))?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<RunManifest> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("{} is not a run manifest", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::Parser;

    #[test]
    fn digest_of_known_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("abc.txt");
        fs::write(&path, b"abc").unwrap();
        let d = FileDigest::of(&path).unwrap();
        assert_eq!(d.sha256, "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
        assert!(FileDigest::of(&dir.path().join("missing")).is_err());
    }

    #[test]
    fn atomic_write_leaves_no_temporary() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.csv");
        write_atomic(&path, b"one").unwrap();
        write_atomic(&path, b"two").unwrap();
        assert_eq!(fs::read(&path).unwrap(), b"two");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("run");
        let cli =
            crate::args::Cli::parse_from(["rankmargin", "simulate", "--seed", "4", "--out", out.to_str().unwrap()]);
        let mut run = Run::start(&out).unwrap();
        run.write("x.txt", |buf| {
            buf.extend_from_slice(b"abc");
            Ok(())
        })
        .unwrap();
        run.finish(&cli.command, 0).unwrap();

        let manifest = read_manifest(&out.join(MANIFEST_FILE)).unwrap();
        assert_eq!(manifest.command, "simulate");
        assert_eq!(manifest.seed, Some(4));
        assert_eq!(manifest.outputs.len(), 1);
        assert!(manifest.outputs[0].sha256.starts_with("ba7816bf"));
        let crate::args::Command::Simulate(args) = manifest.config else { panic!("wrong command") };
        assert_eq!(args.matches, 1400);
        assert_eq!(args.sigma_y, 1.9);
    }
}
