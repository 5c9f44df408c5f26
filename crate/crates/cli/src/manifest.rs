//! Run manifest: what produced an output directory, and a checksum for
//! every file in it.

use std::io;
use std::path::{Path, PathBuf};

use isf_core::report::PHASE_BOUNDARY;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_path: String,
    pub config_sha256: String,
    pub producer_seed: Option<u64>,
    pub checkpoint_seed: Option<u64>,
    pub phase_boundary: String,
    pub exit_code: i32,
    pub files: Vec<FileEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl Manifest {
    pub fn new(command: &str, config_path: &Path, config_bytes: &[u8]) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config_path: config_path.display().to_string(),
            config_sha256: sha256_hex(config_bytes),
            producer_seed: None,
            checkpoint_seed: None,
            phase_boundary: PHASE_BOUNDARY.into(),
            exit_code: 0,
            files: Vec::new(),
        }
    }

    /// Lists every file under `dir` (except the manifest itself) with its
    /// checksum, in path order, then writes the manifest there.
    pub fn write(mut self, dir: &Path) -> io::Result<()> {
        let mut paths = Vec::new();
        collect(dir, &mut paths)?;
        paths.sort();
        self.files.clear();
        for p in paths {
            let rel = p.strip_prefix(dir).unwrap_or(&p);
            if rel == Path::new(MANIFEST_FILE) {
                continue;
            }
            let data = std::fs::read(&p)?;
            self.files.push(FileEntry {
                path: rel.to_string_lossy().replace('\\', "/"),
                bytes: data.len() as u64,
                sha256: sha256_hex(&data),
            });
        }
        let json = serde_json::to_vec_pretty(&self).map_err(io::Error::other)?;
        std::fs::write(dir.join(MANIFEST_FILE), json)
    }
}

fn collect(dir: &Path, out: &mut Vec<PathBuf>) -> io::Result<()> {
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect(&path, out)?;
        } else {
            out.push(path);
        }
    }
    Ok(())
}
