//! Versioned model files: a `ZLDC1` magic line followed by a JSON document
//! with kind, version, metadata and payload.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::classify::TrainedModel;
use crate::container::{read_bytes, sha256_hex, write_bytes};
use crate::error::{Error, Result};
use crate::model::{feature_names, Zone};
use crate::net::{MicroNet, NetConfig};
use crate::standardizer::StandardizationModel;

pub const MAGIC: &str = "ZLDC1";
pub const MODEL_FILE_VERSION: u32 = 1;
pub const STANDARDIZER_KIND: &str = "standardizer.v1";
pub const NET_KIND: &str = "micro_net";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMetadata {
    pub zone: Option<Zone>,
    pub seed: u64,
    pub hyperparameters: Value,
    /// Hash of the input layout the payload expects.
    pub schema_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub kind: String,
    pub version: u32,
    pub metadata: ModelMetadata,
    pub payload: Value,
}

/// Hash of an ordered list of column names.
pub fn schema_hash<S: AsRef<str>>(columns: &[S]) -> String {
    let joined: Vec<&str> = columns.iter().map(AsRef::as_ref).collect();
    sha256_hex(joined.join(",").as_bytes())
}

pub fn feature_schema_hash() -> String {
    schema_hash(feature_names())
}

fn patch_schema_hash(size: usize) -> String {
    schema_hash(&[format!("t2_patch:{size}x{size}")])
}

fn image_schema_hash() -> String {
    schema_hash(&["t2w_image"])
}

fn to_value<T: Serialize>(v: &T) -> Result<Value> {
    serde_json::to_value(v).map_err(|e| Error::format("model file", e))
}

impl ModelFile {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = format!("{MAGIC}\n").into_bytes();
        serde_json::to_writer(&mut out, self).map_err(|e| Error::format("model file", e))?;
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let body = bytes
            .strip_prefix(format!("{MAGIC}\n").as_bytes())
            .ok_or_else(|| Error::format("model file", "missing ZLDC1 magic"))?;
        let file: ModelFile = serde_json::from_slice(body).map_err(|e| Error::format("model file", e))?;
        if file.version != MODEL_FILE_VERSION {
            return Err(Error::Unsupported(format!("model file version {}", file.version)));
        }
        Ok(file)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_bytes(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_bytes(path)?)
    }

    /// Fails unless the file's schema hash equals `expected`.
    pub fn check_schema(&self, expected: &str) -> Result<()> {
        if self.metadata.schema_hash != expected {
            return Err(Error::Schema(format!(
                "{} model expects schema {}, input has {}",
                self.kind,
                &self.metadata.schema_hash[..12.min(self.metadata.schema_hash.len())],
                &expected[..12.min(expected.len())]
            )));
        }
        Ok(())
    }

    fn payload<T: DeserializeOwned>(&self, kind: &str) -> Result<T> {
        if self.kind != kind {
            return Err(Error::format("model file", format!("expected a {kind} model, found {}", self.kind)));
        }
        serde_json::from_value(self.payload.clone()).map_err(|e| Error::format("model file", e))
    }

    pub fn from_classifier(model: &TrainedModel) -> Result<Self> {
        Ok(Self {
            kind: model.kind().as_str().to_string(),
            version: MODEL_FILE_VERSION,
            metadata: ModelMetadata {
                zone: model.zone,
                seed: model.seed,
                hyperparameters: to_value(&model.spec)?,
                schema_hash: feature_schema_hash(),
            },
            payload: to_value(model)?,
        })
    }

    pub fn classifier(&self) -> Result<TrainedModel> {
        let kind: crate::classify::ModelKind = self.kind.parse()?;
        self.check_schema(&feature_schema_hash())?;
        self.payload(kind.as_str())
    }

    pub fn from_net(net: &MicroNet, config: &NetConfig, zone: Option<Zone>) -> Result<Self> {
        Ok(Self {
            kind: NET_KIND.to_string(),
            version: MODEL_FILE_VERSION,
            metadata: ModelMetadata {
                zone,
                seed: net.seed,
                hyperparameters: to_value(config)?,
                schema_hash: patch_schema_hash(net.input.1),
            },
            payload: to_value(net)?,
        })
    }

    pub fn net(&self) -> Result<MicroNet> {
        let net: MicroNet = self.payload(NET_KIND)?;
        self.check_schema(&patch_schema_hash(net.input.1))?;
        Ok(net)
    }

    pub fn from_standardizer(model: &StandardizationModel<f64>, seed: u64) -> Result<Self> {
        Ok(Self {
            kind: STANDARDIZER_KIND.to_string(),
            version: MODEL_FILE_VERSION,
            metadata: ModelMetadata {
                zone: None,
                seed,
                hyperparameters: to_value(&model.config)?,
                schema_hash: image_schema_hash(),
            },
            payload: to_value(model)?,
        })
    }

    pub fn standardizer(&self) -> Result<StandardizationModel<f64>> {
        self.check_schema(&image_schema_hash())?;
        self.payload(STANDARDIZER_KIND)
    }
}

pub fn save_model(model: &TrainedModel, path: &Path) -> Result<()> {
    ModelFile::from_classifier(model)?.save(path)
}

pub fn load_model(path: &Path) -> Result<TrainedModel> {
    ModelFile::load(path)?.classifier()
}
