//! Provenance sidecars. Every artifact `x` gets `x.meta.json` (a directory
//! gets `stamp.json` inside it) recording the stage, the SHA-256 of the
//! effective configuration, and the seed. Nothing time- or host-dependent
//! goes in, so reruns reproduce the sidecars byte for byte.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use hoiprior::config::PipelineConfig;
use hoiprior::dataset::{read_json, write_json};
use hoiprior::grid::SemanticTag;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stamp {
    pub tool: String,
    pub version: String,
    pub stage: String,
    pub config_hash: String,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag: Option<SemanticTag>,
}

pub fn config_hash(cfg: &PipelineConfig) -> String {
    let bytes = serde_json::to_vec(cfg).expect("config serializes");
    hex::encode(Sha256::digest(&bytes))
}

pub fn sidecar_path(artifact: &Path) -> PathBuf {
    if artifact.is_dir() {
        artifact.join("stamp.json")
    } else {
        let mut s = artifact.as_os_str().to_owned();
        s.push(".meta.json");
        PathBuf::from(s)
    }
}

pub fn write(
    artifact: &Path,
    stage: &str,
    cfg: &PipelineConfig,
    tag: Option<SemanticTag>,
) -> Result<()> {
    let stamp = Stamp {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        stage: stage.into(),
        config_hash: config_hash(cfg),
        seed: cfg.seed,
        tag,
    };
    let path = sidecar_path(artifact);
    write_json(&path, &stamp).with_context(|| format!("writing {}", path.display()))
}

/// The semantic tag recorded next to a field, if any.
pub fn read_tag(artifact: &Path) -> Option<SemanticTag> {
    let path = sidecar_path(artifact);
    if !path.exists() {
        return None;
    }
    match read_json::<Stamp>(&path) {
        Ok(s) => s.tag,
        Err(e) => {
            log::warn!("ignoring unreadable sidecar {}: {e}", path.display());
            None
        }
    }
}
