//! Binary model ("BEM1") and dataset ("BDS1") files.
//!
//! Model: `"BEM1"`, u32 LE header length, UTF-8 JSON header
//! `{"spec": .., "num_classes": .., "id": ..}`, then every parameter tensor
//! as little-endian f32 in declaration order.
//!
//! Dataset: `"BDS1"`, u32 LE `count`, `classes`, `side`, then per sample a
//! u16 LE label followed by `side * side` little-endian f32 pixels.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::nn::{Model, ModelParams, ModelSpec};
use crate::tensor::Tensor;

use super::{LabeledDataset, ZooError};

const MODEL_MAGIC: &[u8; 4] = b"BEM1";
const DATASET_MAGIC: &[u8; 4] = b"BDS1";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelHeader {
    spec: ModelSpec,
    num_classes: usize,
    id: String,
}

fn format_err(offset: usize, message: impl Into<String>) -> ZooError {
    ZooError::Format {
        offset,
        message: message.into(),
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], ZooError> {
        if self.bytes.len() - self.pos < n {
            return Err(format_err(
                self.pos,
                format!(
                    "truncated {what}: need {n} bytes, have {}",
                    self.bytes.len() - self.pos
                ),
            ));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn magic(&mut self, expected: &[u8; 4]) -> Result<(), ZooError> {
        let got = self.take(4, "magic")?;
        if got != expected {
            return Err(format_err(
                0,
                format!(
                    "bad magic {got:?}, expected {:?}",
                    std::str::from_utf8(expected).unwrap_or("?")
                ),
            ));
        }
        Ok(())
    }

    fn u32(&mut self, what: &str) -> Result<u32, ZooError> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    fn u16(&mut self, what: &str) -> Result<u16, ZooError> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes(b.try_into().expect("2 bytes")))
    }

    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>, ZooError> {
        let b = self.take(n * 4, what)?;
        Ok(b.chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }

    fn finish(&self) -> Result<(), ZooError> {
        if self.pos != self.bytes.len() {
            return Err(format_err(
                self.pos,
                format!("{} trailing bytes", self.bytes.len() - self.pos),
            ));
        }
        Ok(())
    }
}

pub fn encode_model(id: &str, model: &Model) -> Vec<u8> {
    let header = serde_json::to_vec(&ModelHeader {
        spec: model.spec().clone(),
        num_classes: model.num_classes(),
        id: id.to_string(),
    })
    .expect("model header serializes");
    let mut out = Vec::with_capacity(8 + header.len() + 4 * model.params().count());
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for t in &model.params().tensors {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Parses a BEM1 image, returning `(id, model)`.
pub fn decode_model(bytes: &[u8]) -> Result<(String, Model), ZooError> {
    let mut r = Reader { bytes, pos: 0 };
    r.magic(MODEL_MAGIC)?;
    let header_len = r.u32("header length")? as usize;
    let header_start = r.pos;
    let raw = r.take(header_len, "header")?;
    let header: ModelHeader = serde_json::from_slice(raw).map_err(|e| {
        format_err(
            header_start + e.column().saturating_sub(1),
            format!("header: {e}"),
        )
    })?;
    let shapes = header.spec.param_shapes();
    let mut tensors = Vec::with_capacity(shapes.len());
    for shape in shapes {
        let n: usize = shape.iter().product();
        let data = r.f32s(n, "parameters")?;
        tensors.push(Tensor::new(shape, data)?);
    }
    r.finish()?;
    let model = Model::new(
        header.spec,
        ModelParams {
            tensors,
            num_classes: header.num_classes,
        },
    )
    .map_err(|e| format_err(header_start, e.to_string()))?;
    Ok((header.id, model))
}

pub fn save_model(path: impl AsRef<Path>, id: &str, model: &Model) -> Result<(), ZooError> {
    fs::write(path, encode_model(id, model))?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<(String, Model), ZooError> {
    decode_model(&fs::read(path)?)
}

pub fn encode_dataset(data: &LabeledDataset) -> Result<Vec<u8>, ZooError> {
    let side = data.side().unwrap_or(0);
    let mut out = Vec::new();
    out.extend_from_slice(DATASET_MAGIC);
    out.extend_from_slice(&(data.len() as u32).to_le_bytes());
    out.extend_from_slice(&(data.num_classes as u32).to_le_bytes());
    out.extend_from_slice(&(side as u32).to_le_bytes());
    for (x, &y) in data.images.iter().zip(&data.labels) {
        if x.shape() != [1, side, side] {
            return Err(ZooError::Dataset(format!(
                "BDS1 stores single-channel square images, got {:?}",
                x.shape()
            )));
        }
        let label =
            u16::try_from(y).map_err(|_| ZooError::Dataset(format!("label {y} exceeds u16")))?;
        out.extend_from_slice(&label.to_le_bytes());
        for v in x.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_dataset(bytes: &[u8]) -> Result<LabeledDataset, ZooError> {
    let mut r = Reader { bytes, pos: 0 };
    r.magic(DATASET_MAGIC)?;
    let count = r.u32("count")? as usize;
    let classes = r.u32("class count")? as usize;
    let side = r.u32("side")? as usize;
    let mut images = Vec::with_capacity(count);
    let mut labels = Vec::with_capacity(count);
    for _ in 0..count {
        let at = r.pos;
        let y = r.u16("label")? as usize;
        if y >= classes {
            return Err(format_err(
                at,
                format!("label {y} out of range for {classes} classes"),
            ));
        }
        labels.push(y);
        images.push(Tensor::new(
            vec![1, side, side],
            r.f32s(side * side, "pixels")?,
        )?);
    }
    r.finish()?;
    LabeledDataset::new(images, labels, classes)
}

pub fn save_dataset(path: impl AsRef<Path>, data: &LabeledDataset) -> Result<(), ZooError> {
    fs::write(path, encode_dataset(data)?)?;
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<LabeledDataset, ZooError> {
    decode_dataset(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::zoo::{build_model, default_zoo_specs, make_synthetic_dataset};

    fn sample() -> (String, Model) {
        let (id, spec) = default_zoo_specs(10, 4).remove(1);
        (id, build_model(&spec, 3).unwrap())
    }

    #[test]
    fn model_round_trip_is_byte_identical() {
        let (id, m) = sample();
        let bytes = encode_model(&id, &m);
        let (id2, m2) = decode_model(&bytes).unwrap();
        assert_eq!(id, id2);
        assert_eq!(m.params(), m2.params());
        assert_eq!(bytes, encode_model(&id2, &m2));
    }

    #[test]
    fn model_file_size_matches_parameter_count() {
        let (id, m) = sample();
        let bytes = encode_model(&id, &m);
        let header_len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        assert_eq!(bytes.len(), 8 + header_len + 4 * m.spec().param_count());
    }

    #[test]
    fn corrupted_header_is_a_format_error() {
        let (id, m) = sample();
        let mut bytes = encode_model(&id, &m);
        bytes[0] = b'X';
        assert!(matches!(
            decode_model(&bytes),
            Err(ZooError::Format { offset: 0, .. })
        ));

        let mut bytes = encode_model(&id, &m);
        bytes[8] = b'#';
        assert!(matches!(decode_model(&bytes), Err(ZooError::Format { .. })));

        let bytes = encode_model(&id, &m);
        match decode_model(&bytes[..bytes.len() - 3]) {
            Err(ZooError::Format { offset, .. }) => assert!(offset > 8),
            other => panic!("expected format error, got {other:?}"),
        }
        assert!(matches!(
            decode_model(&bytes[..2]),
            Err(ZooError::Format { offset: 0, .. })
        ));
    }

    #[test]
    fn dataset_round_trip() {
        let d = make_synthetic_dataset(3, 4, 6, 5).unwrap();
        let bytes = encode_dataset(&d).unwrap();
        assert_eq!(bytes.len(), 16 + d.len() * (2 + 4 * 36));
        assert_eq!(decode_dataset(&bytes).unwrap(), d);
        let mut bad = bytes.clone();
        bad[3] = b'0';
        assert!(matches!(decode_dataset(&bad), Err(ZooError::Format { .. })));
        assert!(matches!(
            decode_dataset(&bytes[..20]),
            Err(ZooError::Format { .. })
        ));
    }
}
