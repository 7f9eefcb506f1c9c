//! Shared optimization memory: a content-addressed store of trained models
//! and their metrics, keyed by a SHA-256 over the canonical run identity
//! (dataset id, architecture, configuration, seed).
//!
//! Entries live as individual files under one directory; writes go through
//! a temp file plus rename so readers never observe a partial entry.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::distill::DistillConfig;
use crate::error::{Error, Result};

const ENTRY_MAGIC: &[u8; 8] = b"HPMCACHE";
const ENTRY_VERSION: u32 = 1;
const HEADER_LEN: usize = 32;

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// 64-character lowercase hex SHA-256 digest.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CacheKey(String);

impl CacheKey {
    pub fn new(digest: impl Into<String>) -> Result<Self> {
        let digest = digest.into();
        if digest.len() != 64 || !digest.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f')) {
            return Err(Error::InvalidInput(format!(
                "cache key must be 64 lowercase hex chars, got '{digest}'"
            )));
        }
        Ok(Self(digest))
    }

    pub fn digest(&self) -> &str {
        &self.0
    }
}

impl std::fmt::Display for CacheKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

/// Canonical hash string for a run identity. The fixed-precision text form
/// makes the digest portable and auditable. The seed is included because
/// cached weights depend on it.
pub fn canonical_hash_input(
    dataset_id: &str,
    arch: &[usize],
    config: &DistillConfig,
    seed: u64,
) -> String {
    let arch_str = arch
        .iter()
        .map(|s| s.to_string())
        .collect::<Vec<_>>()
        .join(",");
    format!(
        "v1|dataset={dataset_id}|arch={arch_str}|{}|seed={seed}",
        config.canonical_fragment()
    )
}

/// Digest of the canonical run identity.
pub fn config_hash(dataset_id: &str, arch: &[usize], config: &DistillConfig, seed: u64) -> CacheKey {
    CacheKey(sha256_hex(
        canonical_hash_input(dataset_id, arch, config, seed).as_bytes(),
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CacheMetrics {
    pub accuracy: f64,
    pub wall_time_seconds: f64,
    pub epochs_run: u64,
}

#[derive(Debug, Clone)]
pub struct CacheEntry {
    pub key: CacheKey,
    pub model_blob: Vec<u8>,
    pub metrics: CacheMetrics,
    pub created_at: u64,
    blob_digest: String,
}

impl CacheEntry {
    pub fn new(key: CacheKey, model_blob: Vec<u8>, metrics: CacheMetrics, created_at: u64) -> Self {
        let blob_digest = sha256_hex(&model_blob);
        Self {
            key,
            model_blob,
            metrics,
            created_at,
            blob_digest,
        }
    }

    pub fn blob_digest(&self) -> &str {
        &self.blob_digest
    }

    fn metrics_block(&self) -> String {
        format!(
            "accuracy={:.16e}\nblob_sha256={}\ncreated_at={}\nepochs_run={}\nwall_time_seconds={:.16e}\n",
            self.metrics.accuracy,
            self.blob_digest,
            self.created_at,
            self.metrics.epochs_run,
            self.metrics.wall_time_seconds,
        )
    }

    fn encode(&self) -> Vec<u8> {
        let metrics = self.metrics_block().into_bytes();
        let mut out = Vec::with_capacity(HEADER_LEN + metrics.len() + self.model_blob.len());
        out.extend_from_slice(ENTRY_MAGIC);
        out.extend_from_slice(&ENTRY_VERSION.to_le_bytes());
        out.extend_from_slice(&(metrics.len() as u64).to_le_bytes());
        out.extend_from_slice(&[0u8; HEADER_LEN - 20]); // reserved
        out.extend_from_slice(&metrics);
        out.extend_from_slice(&self.model_blob);
        out
    }

    fn decode(key: &CacheKey, bytes: &[u8]) -> Result<Self> {
        let corrupt = |reason: &str| Error::CorruptEntry {
            digest: key.digest().to_string(),
            reason: reason.to_string(),
        };
        if bytes.len() < HEADER_LEN || &bytes[..8] != ENTRY_MAGIC {
            return Err(corrupt("bad magic or truncated header"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != ENTRY_VERSION {
            return Err(corrupt("unsupported entry version"));
        }
        let metrics_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        if bytes.len() < HEADER_LEN + metrics_len {
            return Err(corrupt("truncated metrics block"));
        }
        let metrics_text = std::str::from_utf8(&bytes[HEADER_LEN..HEADER_LEN + metrics_len])
            .map_err(|_| corrupt("metrics block is not utf-8"))?;
        let mut fields: BTreeMap<&str, &str> = BTreeMap::new();
        for line in metrics_text.lines() {
            if let Some((k, v)) = line.split_once('=') {
                fields.insert(k, v);
            }
        }
        let real = |k: &str| -> Result<f64> {
            fields
                .get(k)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| corrupt(&format!("missing or bad '{k}'")))
        };
        let int = |k: &str| -> Result<u64> {
            fields
                .get(k)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| corrupt(&format!("missing or bad '{k}'")))
        };
        let declared_blob = fields
            .get("blob_sha256")
            .ok_or_else(|| corrupt("missing 'blob_sha256'"))?
            .to_string();
        let model_blob = bytes[HEADER_LEN + metrics_len..].to_vec();
        if sha256_hex(&model_blob) != declared_blob {
            return Err(corrupt("model blob digest mismatch"));
        }
        Ok(Self {
            key: key.clone(),
            metrics: CacheMetrics {
                accuracy: real("accuracy")?,
                wall_time_seconds: real("wall_time_seconds")?,
                epochs_run: int("epochs_run")?,
            },
            created_at: int("created_at")?,
            model_blob,
            blob_digest: declared_blob,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CacheStats {
    pub hits: u64,
    pub lookups: u64,
}

impl CacheStats {
    pub fn hit_rate(&self) -> f64 {
        if self.lookups == 0 {
            0.0
        } else {
            self.hits as f64 / self.lookups as f64
        }
    }
}

/// Directory-backed store; one `<digest>.entry` file per key plus an
/// append-only stats log.
#[derive(Debug)]
pub struct CacheStore {
    dir: PathBuf,
    stats: CacheStats,
    max_bytes: Option<u64>,
}

impl CacheStore {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        std::fs::create_dir_all(&dir).map_err(|e| Error::Storage {
            path: dir.clone(),
            source: e,
        })?;
        Ok(Self {
            dir,
            stats: CacheStats::default(),
            max_bytes: None,
        })
    }

    pub fn with_max_bytes(mut self, max_bytes: u64) -> Self {
        self.max_bytes = Some(max_bytes);
        self
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn stats(&self) -> &CacheStats {
        &self.stats
    }

    fn entry_path(&self, key: &CacheKey) -> PathBuf {
        self.dir.join(format!("{}.entry", key.digest()))
    }

    fn log_stat(&self, line: &str) {
        // Best-effort observability; failures must not fail the run.
        if let Ok(mut f) = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.dir.join("stats.log"))
        {
            let _ = writeln!(f, "{line}");
        }
    }

    /// Looks a key up. Corrupt entries are evicted, logged, and reported
    /// as a miss.
    pub fn get(&mut self, key: &CacheKey) -> Result<Option<CacheEntry>> {
        self.stats.lookups += 1;
        let path = self.entry_path(key);
        let bytes = match std::fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                self.log_stat(&format!("miss {}", key.digest()));
                return Ok(None);
            }
            Err(e) => return Err(Error::Storage { path, source: e }),
        };
        match CacheEntry::decode(key, &bytes) {
            Ok(entry) => {
                self.stats.hits += 1;
                self.log_stat(&format!("hit {}", key.digest()));
                Ok(Some(entry))
            }
            Err(err) => {
                let _ = std::fs::remove_file(&path);
                self.log_stat(&format!("evict-corrupt {} ({err})", key.digest()));
                Ok(None)
            }
        }
    }

    /// Persists an entry atomically; an existing entry for the same key is
    /// overwritten. Rejects entries whose declared blob digest does not
    /// match their content.
    pub fn put(&mut self, entry: &CacheEntry) -> Result<()> {
        if sha256_hex(&entry.model_blob) != entry.blob_digest {
            return Err(Error::CorruptEntry {
                digest: entry.key.digest().to_string(),
                reason: "blob digest does not match content".into(),
            });
        }
        let path = self.entry_path(&entry.key);
        let tmp = self.dir.join(format!(
            "{}.tmp-{}",
            entry.key.digest(),
            std::process::id()
        ));
        let io = |p: &Path, e: std::io::Error| Error::Storage {
            path: p.to_path_buf(),
            source: e,
        };
        {
            let mut f = std::fs::File::create(&tmp).map_err(|e| io(&tmp, e))?;
            f.write_all(&entry.encode()).map_err(|e| io(&tmp, e))?;
            f.sync_all().map_err(|e| io(&tmp, e))?;
        }
        std::fs::rename(&tmp, &path).map_err(|e| io(&path, e))?;
        if self.max_bytes.is_some() {
            self.evict_to_budget()?;
        }
        Ok(())
    }

    /// Drops oldest entries (by created_at) until total size fits the
    /// configured budget.
    fn evict_to_budget(&mut self) -> Result<()> {
        let Some(budget) = self.max_bytes else {
            return Ok(());
        };
        let mut entries: Vec<(u64, u64, PathBuf)> = Vec::new(); // (created_at, size, path)
        for dirent in std::fs::read_dir(&self.dir).map_err(|e| Error::Storage {
            path: self.dir.clone(),
            source: e,
        })? {
            let dirent = dirent.map_err(|e| Error::Storage {
                path: self.dir.clone(),
                source: e,
            })?;
            let path = dirent.path();
            if path.extension().and_then(|e| e.to_str()) != Some("entry") {
                continue;
            }
            let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
                continue;
            };
            let Ok(key) = CacheKey::new(stem.to_string()) else {
                continue;
            };
            let Ok(bytes) = std::fs::read(&path) else {
                continue;
            };
            if let Ok(entry) = CacheEntry::decode(&key, &bytes) {
                entries.push((entry.created_at, bytes.len() as u64, path));
            }
        }
        let mut total: u64 = entries.iter().map(|(_, s, _)| s).sum();
        entries.sort_by_key(|(created, _, _)| *created);
        for (_, size, path) in entries {
            if total <= budget {
                break;
            }
            if std::fs::remove_file(&path).is_ok() {
                self.log_stat(&format!("evict-size {}", path.display()));
                total -= size;
            }
        }
        Ok(())
    }
}

/// Seconds since the unix epoch; the entry timestamp.
pub fn unix_now() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}
