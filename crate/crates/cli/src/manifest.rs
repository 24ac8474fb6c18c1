//! Per-stage manifests: what went in, what came out, and content hashes for
//! cache decisions.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_DIR: &str = "manifests";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub version: String,
    pub seed: u64,
    /// Hash of the config fragment the stage depends on.
    pub config_hash: String,
    /// Upstream artifacts (path relative to the output directory -> sha256).
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn hash_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    Ok(sha256_hex(&bytes))
}

pub fn hash_json<T: Serialize>(value: &T) -> Result<String> {
    Ok(sha256_hex(&serde_json::to_vec(value)?))
}

pub fn manifest_path(out: &Path, stage: &str) -> PathBuf {
    out.join(MANIFEST_DIR).join(format!("{stage}.json"))
}

impl Manifest {
    pub fn load(out: &Path, stage: &str) -> Result<Option<Self>> {
        let path = manifest_path(out, stage);
        if !path.exists() {
            return Ok(None);
        }
        let text = fs::read_to_string(&path)?;
        let m = serde_json::from_str(&text).with_context(|| format!("corrupt manifest {}", path.display()))?;
        Ok(Some(m))
    }

    pub fn save(&self, out: &Path) -> Result<()> {
        let path = manifest_path(out, &self.stage);
        fs::create_dir_all(path.parent().expect("manifest path has a parent"))?;
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(&path, text)?;
        Ok(())
    }

    /// True when every recorded output still exists with its recorded hash.
    pub fn outputs_intact(&self, out: &Path) -> bool {
        self.outputs
            .iter()
            .all(|(rel, h)| hash_file(&out.join(rel)).map(|x| &x == h).unwrap_or(false))
    }
}
