//! JSON bodies of the `/v1` HTTP protocol.
//!
//! Pixels travel as base64 of little-endian f32 so no precision is lost;
//! logits are written with shortest round-trip f32 formatting.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::LabelMode;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictRequest {
    pub shape: Vec<usize>,
    pub pixels: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SoftResponse {
    pub logits: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HardResponse {
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaResponse {
    pub num_classes: usize,
    pub mode: LabelMode,
    pub input_shape: Vec<usize>,
}

pub fn encode_pixels(values: &[f32]) -> String {
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    STANDARD.encode(bytes)
}

pub fn decode_pixels(text: &str) -> Result<Vec<f32>, String> {
    let bytes = STANDARD
        .decode(text)
        .map_err(|e| format!("pixels are not base64: {e}"))?;
    if bytes.len() % 4 != 0 {
        return Err(format!(
            "pixel payload of {} bytes is not a multiple of 4",
            bytes.len()
        ));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect())
}

impl PredictRequest {
    pub fn from_image(image: &Tensor) -> Self {
        Self {
            shape: image.shape().to_vec(),
            pixels: encode_pixels(image.data()),
        }
    }

    pub fn to_image(&self) -> Result<Tensor, String> {
        let data = decode_pixels(&self.pixels)?;
        Tensor::new(self.shape.clone(), data).map_err(|e| e.to_string())
    }
}
