//! Model files: `GGM1`, a little-endian `u32` header length, a JSON header
//! (config, input widths, tensor manifest), then one `EMB1` block per tensor
//! in manifest order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{emb, Dims};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

use super::config::GuidanceConfig;
use super::model::GuidanceModel;

pub const MODEL_MAGIC: &[u8; 4] = b"GGM1";
const FORMAT: &str = "gground-guidance";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    version: u32,
    config: GuidanceConfig,
    dims: Dims,
    tensors: Vec<TensorEntry>,
}

impl GuidanceModel<f32> {
    pub fn to_bytes(&self) -> Vec<u8> {
        let params = self.named_params();
        let header = Header {
            format: FORMAT.into(),
            version: VERSION,
            config: self.config().clone(),
            dims: self.dims(),
            tensors: params
                .iter()
                .map(|(name, p)| TensorEntry {
                    name: name.clone(),
                    rows: p.value.rows(),
                    cols: p.value.cols(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(8 + json.len());
        out.extend_from_slice(MODEL_MAGIC);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, p) in params {
            out.extend_from_slice(&emb::encode(&p.value));
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], name: &str) -> Result<Self> {
        let fmt = |field: &'static str, detail: String| Error::Format {
            path: name.to_string(),
            field,
            detail,
        };
        if bytes.len() < 8 || &bytes[..4] != MODEL_MAGIC {
            return Err(fmt("magic", "not a guidance model file".into()));
        }
        let len = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
        let json = bytes
            .get(8..8 + len)
            .ok_or_else(|| fmt("header", "header runs past end of file".into()))?;
        let header: Header =
            serde_json::from_slice(json).map_err(|e| fmt("header", e.to_string()))?;
        if header.format != FORMAT || header.version != VERSION {
            return Err(fmt(
                "version",
                format!("unsupported {} v{}", header.format, header.version),
            ));
        }
        let mut model = GuidanceModel::<f32>::new(header.config, header.dims, 0)
            .map_err(|e| fmt("config", e.to_string()))?;
        let expected: Vec<(String, (usize, usize))> = model
            .named_params()
            .iter()
            .map(|(n, p)| (n.clone(), p.value.shape()))
            .collect();
        if expected.len() != header.tensors.len() {
            return Err(fmt(
                "tensors",
                format!("expected {} tensors, found {}", expected.len(), header.tensors.len()),
            ));
        }
        let mut offset = 8 + len;
        let mut values: Vec<Matrix<f32>> = Vec::with_capacity(expected.len());
        for ((ename, eshape), t) in expected.iter().zip(&header.tensors) {
            if *ename != t.name || *eshape != (t.rows, t.cols) {
                return Err(fmt(
                    "tensors",
                    format!(
                        "manifest entry {} {}x{} does not match expected {ename} {}x{}",
                        t.name, t.rows, t.cols, eshape.0, eshape.1
                    ),
                ));
            }
            let size = 12 + 4 * t.rows * t.cols;
            let block = bytes
                .get(offset..offset + size)
                .ok_or_else(|| fmt("payload", format!("tensor {} truncated", t.name)))?;
            let m = emb::decode(block, name)?;
            if m.shape() != *eshape {
                return Err(fmt("shape", format!("tensor {} has shape {:?}", t.name, m.shape())));
            }
            values.push(m);
            offset += size;
        }
        if offset != bytes.len() {
            return Err(fmt("payload", format!("{} trailing bytes", bytes.len() - offset)));
        }
        for (p, v) in model.params_mut().into_iter().zip(values) {
            p.value = v;
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, &path.display().to_string())
    }
}
