//! Append-only, hash-chained JSON-lines manifests.
//!
//! Every line is `{"record": ..., "sha256": ..., "chain": ...}` where `sha256`
//! hashes the serialized record and `chain` = SHA-256(previous chain ‖ sha256),
//! starting from 32 zero bytes. The last chain value checksums the whole file.

use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Serialize, Deserialize)]
struct Line<R> {
    record: R,
    sha256: String,
    chain: String,
}

fn hex32(bytes: &[u8]) -> String {
    hex::encode(bytes)
}

fn link(chain: &[u8; 32], record_hash: &[u8]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(chain);
    h.update(record_hash);
    h.finalize().into()
}

/// SHA-256 of a file's bytes, hex encoded.
pub fn file_sha256(path: &Path) -> Result<String> {
    Ok(hex32(&Sha256::digest(std::fs::read(path)?)))
}

pub struct ManifestWriter {
    path: PathBuf,
    file: std::fs::File,
    chain: [u8; 32],
    len: usize,
}

impl ManifestWriter {
    /// Opens `path` for appending, verifying and continuing an existing chain.
    pub fn open<R: Serialize + DeserializeOwned>(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let (chain, len) = if path.exists() {
            let m = read_manifest::<R>(&path)?;
            (m.chain_bytes, m.records.len())
        } else {
            ([0u8; 32], 0)
        };
        let file = std::fs::OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Self { path, file, chain, len })
    }

    pub fn append<R: Serialize>(&mut self, record: &R) -> Result<()> {
        let value = serde_json::to_value(record)?;
        let hash = Sha256::digest(serde_json::to_vec(&value)?);
        self.chain = link(&self.chain, &hash);
        let line = Line { record: value, sha256: hex32(&hash), chain: hex32(&self.chain) };
        serde_json::to_writer(&mut self.file, &line)?;
        self.file.write_all(b"\n")?;
        self.len += 1;
        Ok(())
    }

    /// Current chain head.
    pub fn checksum(&self) -> String {
        hex32(&self.chain)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

pub struct Manifest<R> {
    pub records: Vec<R>,
    chain_bytes: [u8; 32],
}

impl<R> Manifest<R> {
    /// Chain head over all records; equal manifests have equal checksums.
    pub fn checksum(&self) -> String {
        hex32(&self.chain_bytes)
    }
}

/// Reads a manifest, verifying every record hash and chain link.
pub fn read_manifest<R: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Manifest<R>> {
    let path = path.as_ref();
    let mut chain = [0u8; 32];
    let mut records = Vec::new();
    for (i, line) in BufReader::new(std::fs::File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: Line<serde_json::Value> = serde_json::from_str(&line)?;
        let hash = Sha256::digest(serde_json::to_vec(&parsed.record)?);
        if hex32(&hash) != parsed.sha256 {
            return Err(Error::Dataset(format!("{}: record {} hash mismatch", path.display(), i + 1)));
        }
        chain = link(&chain, &hash);
        if hex32(&chain) != parsed.chain {
            return Err(Error::Dataset(format!("{}: chain broken at record {}", path.display(), i + 1)));
        }
        records.push(serde_json::from_value(parsed.record)?);
    }
    Ok(Manifest { records, chain_bytes: chain })
}
