//! Model files: one header line, then a single JSON object.
//!
//! ```text
//! GAZLAB-CRF v1
//! {"config":{...},"labels":["O","B-LOC",...],"features":[...],"dense_dim":0,"params":[...]}
//! ```
//!
//! `params` uses the flat layout documented on [`CrfModel`]. Floats are
//! written in shortest round-trip form, so save/load is bit-exact and the
//! same model always serializes to the same bytes.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CrfModel, ModelConfig, TaggerError};
use crate::corpus::Tag;

pub const MODEL_HEADER: &str = "GAZLAB-CRF v1";

#[derive(Serialize)]
struct FileRef<'a> {
    config: &'a ModelConfig,
    labels: Vec<String>,
    features: &'a [String],
    dense_dim: usize,
    params: &'a [f64],
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FileOwned {
    config: ModelConfig,
    labels: Vec<String>,
    features: Vec<String>,
    dense_dim: usize,
    params: Vec<f64>,
}

pub fn to_bytes(model: &CrfModel) -> Vec<u8> {
    let body = FileRef {
        config: &model.config,
        labels: model.labels.iter().map(Tag::to_string).collect(),
        features: &model.features,
        dense_dim: model.dense_dim,
        params: &model.params,
    };
    let mut out = format!("{MODEL_HEADER}\n").into_bytes();
    serde_json::to_writer(&mut out, &body).expect("model serialization cannot fail");
    out.push(b'\n');
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<CrfModel, TaggerError> {
    let text = std::str::from_utf8(bytes).map_err(|e| TaggerError::Corrupt(e.to_string()))?;
    let (header, body) = text.split_once('\n').unwrap_or((text, ""));
    let header = header.trim_end_matches('\r');
    if header != MODEL_HEADER {
        return Err(TaggerError::Version {
            found: header.chars().take(40).collect(),
            expected: MODEL_HEADER.to_string(),
        });
    }
    let file: FileOwned =
        serde_json::from_str(body).map_err(|e| TaggerError::Corrupt(e.to_string()))?;
    let labels = file
        .labels
        .iter()
        .map(|l| {
            l.parse::<Tag>()
                .map_err(|e| TaggerError::Corrupt(e.to_string()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    if labels.is_empty() {
        return Err(TaggerError::Corrupt("empty label set".into()));
    }
    CrfModel::from_parts(
        labels,
        file.features,
        file.dense_dim,
        file.params,
        file.config,
    )
}

pub fn save_model(model: &CrfModel, path: &Path) -> Result<(), TaggerError> {
    fs::write(path, to_bytes(model))?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<CrfModel, TaggerError> {
    from_bytes(&fs::read(path)?)
}
