//! On-disk artifact cache. Each entry is a JSON envelope holding a format
//! version, the lookup key, the payload text and the SHA-256 of that text.
//! Entries whose version, key or hash do not match are treated as misses.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

/// Environment variable naming the default cache directory.
pub const CACHE_DIR_ENV: &str = "RTT_CACHE_DIR";

#[derive(Serialize, Deserialize)]
struct Envelope {
    format_version: u32,
    key: String,
    sha256: String,
    payload: String,
}

#[derive(Debug, Clone)]
pub struct ArtifactCache {
    dir: PathBuf,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl ArtifactCache {
    pub fn open<P: AsRef<Path>>(dir: P) -> Result<Self> {
        fs::create_dir_all(dir.as_ref())?;
        Ok(Self {
            dir: dir.as_ref().to_path_buf(),
        })
    }

    /// Opens the directory named by `RTT_CACHE_DIR`, if set.
    pub fn from_env() -> Result<Option<Self>> {
        match std::env::var_os(CACHE_DIR_ENV) {
            Some(d) if !d.is_empty() => Ok(Some(Self::open(d)?)),
            _ => Ok(None),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path_for(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{}.json", &sha256_hex(key.as_bytes())[..32]))
    }

    pub fn store<T: Serialize>(&self, key: &str, value: &T) -> Result<()> {
        let payload = serde_json::to_string(value)?;
        let env = Envelope {
            format_version: FORMAT_VERSION,
            key: key.to_string(),
            sha256: sha256_hex(payload.as_bytes()),
            payload,
        };
        let path = self.path_for(key);
        let tmp = path.with_extension(format!("tmp{}", std::process::id()));
        fs::write(&tmp, serde_json::to_vec(&env)?)?;
        fs::rename(tmp, path)?;
        Ok(())
    }

    /// Strict lookup: a present but damaged entry is an error.
    pub fn load_strict<T: DeserializeOwned>(&self, key: &str) -> Result<Option<T>> {
        let path = self.path_for(key);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(e.into()),
        };
        let env: Envelope = serde_json::from_slice(&bytes)?;
        if env.format_version != FORMAT_VERSION {
            return Err(Error::Artifact(format!(
                "{}: format version {} (expected {FORMAT_VERSION})",
                path.display(),
                env.format_version
            )));
        }
        if env.key != key {
            return Err(Error::Artifact(format!("{}: key mismatch", path.display())));
        }
        if sha256_hex(env.payload.as_bytes()) != env.sha256 {
            return Err(Error::Artifact(format!("{}: content hash mismatch", path.display())));
        }
        Ok(Some(serde_json::from_str(&env.payload)?))
    }

    /// Lookup that logs and ignores damaged entries.
    pub fn load<T: DeserializeOwned>(&self, key: &str) -> Option<T> {
        match self.load_strict(key) {
            Ok(v) => v,
            Err(e) => {
                log::warn!("ignoring cache entry for {key}: {e}");
                None
            }
        }
    }
}
