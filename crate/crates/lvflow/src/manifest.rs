//! Run manifest: provenance record written alongside every data file.
//!
//! A manifest pins the configuration hash, root seed, and code version of
//! a run, tracks per-replica solver status, and inventories every emitted
//! data file.  It is written once before any data (with an open end
//! timestamp) and finalised after the last file, so a missing
//! `finished_unix` marks an interrupted run.  Timestamps live only here;
//! data files carry none, which keeps reruns with identical config and
//! seed byte-identical.

use crate::config::RunConfig;
use crate::{LvError, Result};

use serde::{Deserialize, Serialize};
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

/// 64-bit FNV-1a hash, the configuration fingerprint.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Solver outcome of one replica.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct ReplicaStatus {
    /// Replica index.
    pub replica: u64,
    /// `converged`, `divergent`, or `range-error`.
    pub status: String,
}

/// One emitted data file.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct FileEntry {
    /// File name relative to the output directory.
    pub name: String,
    /// Size in bytes at the time it was recorded.
    pub bytes: u64,
}

/// Provenance record of one run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    /// FNV-1a hash of the canonical config serialisation, in hex.
    pub config_hash: String,
    /// Root seed of the run.
    pub seed: u64,
    /// Crate version that produced the data.
    pub code_version: String,
    /// Start of the run, seconds since the epoch.
    pub started_unix: u64,
    /// End of the run; `None` while the run is in flight.
    pub finished_unix: Option<u64>,
    /// Per-replica solver status.
    pub replica_status: Vec<ReplicaStatus>,
    /// Every data file the run emitted.
    pub files: Vec<FileEntry>,
}

fn now_unix() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

impl RunManifest {
    /// Opens a manifest for a run of `config`.
    pub fn begin(config: &RunConfig) -> Self {
        let canonical = config.to_toml_string();
        RunManifest {
            config_hash: format!("{:016x}", fnv1a64(canonical.as_bytes())),
            seed: config.seed,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            started_unix: now_unix(),
            finished_unix: None,
            replica_status: Vec::new(),
            files: Vec::new(),
        }
    }

    /// Records the solver outcome of one replica.
    pub fn record_replica(&mut self, replica: u64, status: &str) {
        self.replica_status.push(ReplicaStatus { replica, status: status.to_string() });
    }

    /// Records an emitted data file, reading its current size.
    pub fn record_file(&mut self, dir: &Path, name: &str) -> Result<()> {
        let meta = std::fs::metadata(dir.join(name))
            .map_err(|e| LvError::Io(format!("{name}: {e}")))?;
        self.files.push(FileEntry { name: name.to_string(), bytes: meta.len() });
        Ok(())
    }

    /// Stamps the end of the run.
    pub fn finalize(&mut self) {
        self.finished_unix = Some(now_unix());
    }

    /// Writes the manifest as pretty JSON with stable key order.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| LvError::Io(e.to_string()))?;
        std::fs::write(&path, text + "\n")
            .map_err(|e| LvError::Io(format!("{}: {e}", path.display())))
    }

    /// Count of replicas whose recorded status is `converged`.
    pub fn converged_count(&self) -> usize {
        self.replica_status.iter().filter(|r| r.status == "converged").count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_matches_reference_vectors() {
        // Published FNV-1a test vectors.
        assert_eq!(fnv1a64(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a64(b"a"), 0xaf63_dc4c_8601_ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn config_hash_is_stable_and_seed_sensitive() {
        let config = RunConfig::default();
        let a = RunManifest::begin(&config);
        let b = RunManifest::begin(&config);
        assert_eq!(a.config_hash, b.config_hash);
        let mut other = config.clone();
        other.seed += 1;
        let c = RunManifest::begin(&other);
        assert_ne!(a.config_hash, c.config_hash);
    }

    #[test]
    fn manifest_lifecycle_and_inventory() {
        let dir = std::env::temp_dir().join(format!("lvflow-manifest-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let config = RunConfig::default();
        let mut manifest = RunManifest::begin(&config);
        manifest.write(&dir).unwrap();
        assert!(manifest.finished_unix.is_none());
        std::fs::write(dir.join("data.csv"), "a,b\n1,2\n").unwrap();
        manifest.record_file(&dir, "data.csv").unwrap();
        manifest.record_replica(0, "converged");
        manifest.record_replica(1, "divergent");
        manifest.finalize();
        manifest.write(&dir).unwrap();
        let text = std::fs::read_to_string(dir.join("manifest.json")).unwrap();
        let back: RunManifest = serde_json::from_str(&text).unwrap();
        assert_eq!(back.files.len(), 1);
        assert_eq!(back.files[0].bytes, 8);
        assert!(back.finished_unix.is_some());
        assert_eq!(back.converged_count(), 1);
        assert!(manifest.record_file(&dir, "missing.csv").is_err());
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
