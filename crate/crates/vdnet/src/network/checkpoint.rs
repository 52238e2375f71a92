//! Model serialization. The on-disk layout is:
//!
//! ```text
//! byte 0..4    magic "VDN1"
//! byte 4..8    header length, u32 little-endian
//! header       UTF-8 JSON: layers, input shape, class names,
//!              parameter names + shapes, optional extra metadata
//! payload      each parameter's f64 values, little-endian, in
//!              declaration order
//! ```
//!
//! Loading re-derives the parameter plan from the layer stack and cross-
//! checks it against the header, so a checkpoint either reproduces the
//! model bit for bit or fails loudly; there is no partially loaded state.

use super::{plan, LayerSpec, Model, Param};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

const MAGIC: &[u8; 4] = b"VDN1";

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    layers: Vec<LayerSpec>,
    input_shape: Vec<usize>,
    class_names: Vec<String>,
    params: Vec<ParamInfo>,
    #[serde(skip_serializing_if = "Option::is_none")]
    extra: Option<serde_json::Value>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ParamInfo {
    name: String,
    shape: Vec<usize>,
}

/// Write a model to `path`. The byte stream is a pure function of the
/// model's contents, so identical models produce identical files.
pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    let header = Header {
        layers: model.layers().to_vec(),
        input_shape: model.input_shape().to_vec(),
        class_names: model.class_names().to_vec(),
        params: model
            .params()
            .iter()
            .map(|p| ParamInfo { name: p.name.clone(), shape: p.tensor.shape().to_vec() })
            .collect(),
        extra: model.extra.clone(),
    };
    let header_json = serde_json::to_vec(&header)?;
    let mut bytes = Vec::with_capacity(8 + header_json.len() + 8 * model.param_count());
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&header_json);
    for p in model.params() {
        for &v in p.tensor.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, &bytes).map_err(|e| Error::io(path, e))
}

/// Read a model back. Magic, header, and payload length are all checked
/// before any tensor is built.
pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 8 {
        return Err(Error::CorruptCheckpoint(format!(
            "file is {} bytes, too short for magic and header length",
            bytes.len()
        )));
    }
    let magic = &bytes[0..4];
    if magic != MAGIC {
        if &magic[0..3] == b"VDN" {
            return Err(Error::VersionMismatch {
                found: String::from_utf8_lossy(magic).into_owned(),
                supported: "VDN1".into(),
            });
        }
        return Err(Error::CorruptCheckpoint(format!(
            "bad magic {:?}, expected \"VDN1\"",
            String::from_utf8_lossy(magic)
        )));
    }
    let header_len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let payload_start = 8 + header_len;
    if payload_start > bytes.len() {
        return Err(Error::CorruptCheckpoint(format!(
            "header claims {header_len} bytes but the file ends after {}",
            bytes.len()
        )));
    }
    let header: Header = serde_json::from_slice(&bytes[8..payload_start])
        .map_err(|e| Error::CorruptCheckpoint(format!("unreadable header: {e}")))?;

    // The header must agree with what the layer stack itself implies.
    let (param_plan, _) = plan(&header.input_shape, &header.layers)?;
    if param_plan.len() != header.params.len()
        || param_plan
            .iter()
            .zip(&header.params)
            .any(|((name, shape), info)| *name != info.name || *shape != info.shape)
    {
        return Err(Error::CorruptCheckpoint(
            "header parameter list does not match its own layer stack".into(),
        ));
    }

    let expected: usize = header.params.iter().map(|p| 8 * p.shape.iter().product::<usize>()).sum();
    let got = bytes.len() - payload_start;
    if got < expected {
        return Err(Error::TruncatedPayload { expected, got });
    }
    if got > expected {
        return Err(Error::CorruptCheckpoint(format!(
            "{} trailing bytes after the parameter payload",
            got - expected
        )));
    }

    let mut offset = payload_start;
    let mut params = Vec::with_capacity(header.params.len());
    for info in &header.params {
        let numel: usize = info.shape.iter().product();
        let data: Vec<f64> = (0..numel)
            .map(|i| {
                let at = offset + 8 * i;
                f64::from_le_bytes(bytes[at..at + 8].try_into().unwrap())
            })
            .collect();
        offset += 8 * numel;
        params.push(Param {
            name: info.name.clone(),
            tensor: Tensor::new(info.shape.clone(), data).requires_grad(),
        });
    }
    Model::from_parts(header.input_shape, header.layers, header.class_names, params, header.extra)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::classifier_spec;
    use crate::rng::SplitMix64;

    fn sample_model() -> Model {
        let mut rng = SplitMix64::new(21);
        let (input_shape, layers) = classifier_spec(16);
        let mut m = Model::new(
            input_shape,
            layers,
            vec!["background".into(), "circle".into(), "square".into(), "triangle".into()],
            &mut rng,
        )
        .unwrap();
        m.extra = Some(serde_json::json!({"note": "fixture", "stride": 8}));
        m
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let model = sample_model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&model, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();

        assert_eq!(back.layers(), model.layers());
        assert_eq!(back.input_shape(), model.input_shape());
        assert_eq!(back.class_names(), model.class_names());
        assert_eq!(back.extra, model.extra);
        for (a, b) in model.params().iter().zip(back.params()) {
            assert_eq!(a.name, b.name);
            let bits = |t: &Tensor| -> Vec<u64> { t.data().iter().map(|v| v.to_bits()).collect() };
            assert_eq!(bits(&a.tensor), bits(&b.tensor));
        }
        assert!(back.params().iter().all(|p| p.tensor.needs_grad()));
    }

    #[test]
    fn saving_twice_gives_identical_bytes() {
        let model = sample_model();
        let dir = tempfile::tempdir().unwrap();
        let (p1, p2) = (dir.path().join("a.ckpt"), dir.path().join("b.ckpt"));
        save_checkpoint(&model, &p1).unwrap();
        save_checkpoint(&load_checkpoint(&p1).unwrap(), &p2).unwrap();
        assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
    }

    #[test]
    fn future_version_magic_is_a_version_error() {
        let model = sample_model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&model, &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes[3] = b'2';
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(Error::VersionMismatch { found, .. }) if found == "VDN2"
        ));
    }

    #[test]
    fn garbage_magic_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        fs::write(&path, b"PK\x03\x04 definitely not a checkpoint").unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::CorruptCheckpoint(_))));
        fs::write(&path, b"VD").unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::CorruptCheckpoint(_))));
    }

    #[test]
    fn truncated_payload_is_rejected_without_a_partial_model() {
        let model = sample_model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&model, &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 100]).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(Error::TruncatedPayload { expected, got }) if got + 100 == expected
        ));
        // cutting into the header is also caught
        fs::write(&path, &bytes[..20]).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::CorruptCheckpoint(_))));
    }

    #[test]
    fn trailing_bytes_are_rejected() {
        let model = sample_model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&model, &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes.extend_from_slice(&[0u8; 16]);
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::CorruptCheckpoint(_))));
    }

    #[test]
    fn tampered_header_fails_the_cross_check() {
        let model = sample_model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&model, &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        // grow a conv layer without touching its parameter shapes
        let text = String::from_utf8_lossy(&bytes).into_owned();
        let patched = text.replacen("\"out_channels\":32", "\"out_channels\":16", 1);
        assert_ne!(text, patched);
        fs::write(&path, patched.as_bytes()).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::CorruptCheckpoint(_))));
    }
}
