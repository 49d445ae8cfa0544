use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn build_id() -> String {
    format!("{}+g{}", env!("CARGO_PKG_VERSION"), env!("AUGC_GIT_REV"))
}

pub fn timestamp() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FileEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub build: String,
    pub started: String,
    pub finished: String,
    pub config: serde_json::Value,
    pub files: Vec<FileEntry>,
}

pub fn sha256_file(path: &Path) -> std::io::Result<(u64, String)> {
    let mut f = fs::File::open(path)?;
    let mut h = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    let mut total = 0u64;
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        total += n as u64;
        h.update(&buf[..n]);
    }
    Ok((total, hex::encode(h.finalize())))
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value, started: String) -> Self {
        RunManifest {
            command: command.into(),
            build: build_id(),
            started,
            finished: String::new(),
            config,
            files: Vec::new(),
        }
    }

    /// Digests `files` (paths listed relative to `root` where possible,
    /// duplicates dropped) and writes the manifest into `root` last.
    pub fn finish(mut self, root: &Path, files: &[PathBuf]) -> std::io::Result<PathBuf> {
        let mut seen = std::collections::BTreeSet::new();
        for p in files {
            if !seen.insert(p.clone()) {
                continue;
            }
            let (bytes, sha256) = sha256_file(p)?;
            let shown = p.strip_prefix(root).unwrap_or(p);
            self.files.push(FileEntry {
                path: shown.to_string_lossy().replace('\\', "/"),
                bytes,
                sha256,
            });
        }
        self.finished = timestamp();
        let out = root.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&self).map_err(std::io::Error::other)?;
        fs::write(&out, text + "\n")?;
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_of_known_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.txt");
        fs::write(&p, b"abc").unwrap();
        let (n, d) = sha256_file(&p).unwrap();
        assert_eq!(n, 3);
        assert_eq!(d, "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }

    #[test]
    fn lists_each_file_once_relative_to_root() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        fs::write(&p, b"1\n").unwrap();
        let m = RunManifest::new("train", serde_json::json!({"seed": 1}), timestamp());
        let out = m.finish(dir.path(), &[p.clone(), p]).unwrap();
        let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(out).unwrap()).unwrap();
        let files = v["files"].as_array().unwrap();
        assert_eq!(files.len(), 1);
        assert_eq!(files[0]["path"], "a.csv");
        assert!(v["build"].as_str().unwrap().contains("+g"));
    }
}
