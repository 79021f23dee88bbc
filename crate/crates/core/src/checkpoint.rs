//! Bit-exact model persistence.
//!
//! Layout: magic `SCNN`, little-endian u32 format version, little-endian
//! u32 manifest byte length, a UTF-8 textual manifest (one line per layer:
//! kind, configuration, then the name), and finally the weights as raw
//! little-endian IEEE-754 f32 values — per layer in order, kernels before
//! biases. The manifest is human-readable and the weight section is exactly
//! 4 bytes per parameter, so round trips are byte-identical.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{LayerKind, Model, ModelBuilder};

const MAGIC: &[u8; 4] = b"SCNN";
const VERSION: u32 = 1;

fn manifest_text(model: &Model) -> Result<String> {
    let mut out = String::new();
    for layer in model.layers() {
        match &layer.kind {
            LayerKind::Input => {
                let d = layer.out_shape.dims();
                out.push_str(&format!("input {} {} {}\n", d[0], d[1], d[2]));
            }
            LayerKind::Conv2d { params, relu } => {
                if params.stride != (1, 1) || params.padding != (0, 0) {
                    return Err(Error::Checkpoint(format!(
                        "layer \"{}\" uses a stride/padding combination the manifest does not encode",
                        layer.name
                    )));
                }
                out.push_str(&format!(
                    "conv2d {} {} {} {} {}\n",
                    params.kh(),
                    params.kw(),
                    params.c_out(),
                    u8::from(*relu),
                    layer.name
                ));
            }
            LayerKind::MaxPool { params } => {
                if params.stride != params.pool {
                    return Err(Error::Checkpoint(format!(
                        "layer \"{}\" uses an explicit pooling stride the manifest does not encode",
                        layer.name
                    )));
                }
                out.push_str(&format!(
                    "maxpool {} {} {}\n",
                    params.pool.0, params.pool.1, layer.name
                ));
            }
            LayerKind::Flatten => {
                out.push_str(&format!("flatten {}\n", layer.name));
            }
            LayerKind::Dense { params, relu } => {
                out.push_str(&format!(
                    "dense {} {} {}\n",
                    params.n_out(),
                    u8::from(*relu),
                    layer.name
                ));
            }
        }
    }
    Ok(out)
}

fn parse_usize(token: Option<&str>, what: &str) -> Result<usize> {
    token
        .and_then(|t| t.parse::<usize>().ok())
        .ok_or_else(|| Error::Checkpoint(format!("manifest: bad or missing {what}")))
}

fn parse_flag(token: Option<&str>, what: &str) -> Result<bool> {
    match token {
        Some("0") => Ok(false),
        Some("1") => Ok(true),
        _ => Err(Error::Checkpoint(format!("manifest: bad or missing {what}"))),
    }
}

/// Name = every token from `from` onward (names may contain spaces).
fn rest_as_name(tokens: &[&str], from: usize) -> Result<String> {
    if from >= tokens.len() {
        return Err(Error::Checkpoint("manifest: missing layer name".to_string()));
    }
    Ok(tokens[from..].join(" "))
}

fn model_from_manifest(manifest: &str) -> Result<Model> {
    let mut lines = manifest.lines();
    let first = lines
        .next()
        .ok_or_else(|| Error::Checkpoint("manifest is empty".to_string()))?;
    let t: Vec<&str> = first.split(' ').collect();
    if t.first() != Some(&"input") {
        return Err(Error::Checkpoint(
            "manifest must start with the input layer".to_string(),
        ));
    }
    let h = parse_usize(t.get(1).copied(), "input height")?;
    let w = parse_usize(t.get(2).copied(), "input width")?;
    let c = parse_usize(t.get(3).copied(), "input channels")?;
    let mut builder = ModelBuilder::input(&[h, w, c])?;

    for line in lines {
        let t: Vec<&str> = line.split(' ').collect();
        match t.first().copied() {
            Some("conv2d") => {
                let kh = parse_usize(t.get(1).copied(), "kernel height")?;
                let kw = parse_usize(t.get(2).copied(), "kernel width")?;
                let filters = parse_usize(t.get(3).copied(), "filter count")?;
                let relu = parse_flag(t.get(4).copied(), "relu flag")?;
                let name = rest_as_name(&t, 5)?;
                builder = builder.conv2d(filters, (kh, kw), relu, Some(&name))?;
            }
            Some("maxpool") => {
                let fh = parse_usize(t.get(1).copied(), "pool height")?;
                let fw = parse_usize(t.get(2).copied(), "pool width")?;
                let name = rest_as_name(&t, 3)?;
                builder = builder.maxpool((fh, fw), Some(&name))?;
            }
            Some("flatten") => {
                let name = rest_as_name(&t, 1)?;
                builder = builder.flatten(Some(&name))?;
            }
            Some("dense") => {
                let units = parse_usize(t.get(1).copied(), "unit count")?;
                let relu = parse_flag(t.get(2).copied(), "relu flag")?;
                let name = rest_as_name(&t, 3)?;
                builder = builder.dense(units, relu, Some(&name))?;
            }
            other => {
                return Err(Error::Checkpoint(format!(
                    "manifest: unknown layer kind {other:?}"
                )));
            }
        }
    }
    builder.build()
}

/// Serialize a model (architecture + weights) to checkpoint bytes.
pub fn to_bytes(model: &Model) -> Result<Vec<u8>> {
    let manifest = manifest_text(model)?;
    let mut out = Vec::with_capacity(12 + manifest.len() + model.total_params() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(manifest.len() as u32).to_le_bytes());
    out.extend_from_slice(manifest.as_bytes());
    for tensor in model.param_tensors() {
        for v in tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Rebuild a model from checkpoint bytes, validating magic, version,
/// manifest, and the exact weight byte count.
pub fn from_bytes(bytes: &[u8]) -> Result<Model> {
    if bytes.len() < 12 {
        return Err(Error::Checkpoint("file shorter than the header".to_string()));
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::Checkpoint(format!(
            "bad magic {:?} (expected \"SCNN\")",
            &bytes[0..4]
        )));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {version} (expected {VERSION})"
        )));
    }
    let manifest_len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    if bytes.len() < 12 + manifest_len {
        return Err(Error::Checkpoint(
            "file truncated inside the manifest".to_string(),
        ));
    }
    let manifest = std::str::from_utf8(&bytes[12..12 + manifest_len])
        .map_err(|_| Error::Checkpoint("manifest is not valid UTF-8".to_string()))?;
    let mut model = model_from_manifest(manifest)?;

    let weight_bytes = &bytes[12 + manifest_len..];
    let expected = model.total_params() * 4;
    if weight_bytes.len() < expected {
        return Err(Error::Checkpoint(format!(
            "weight data truncated: manifest declares {} parameters ({expected} bytes), found {} bytes",
            model.total_params(),
            weight_bytes.len()
        )));
    }
    if weight_bytes.len() > expected {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after the declared weights",
            weight_bytes.len() - expected
        )));
    }
    let mut offset = 0;
    for tensor in model.param_tensors_mut() {
        for v in tensor.data_mut() {
            *v = f32::from_le_bytes(
                weight_bytes[offset..offset + 4].try_into().expect("4 bytes"),
            );
            offset += 4;
        }
    }
    Ok(model)
}

/// Write a checkpoint file.
pub fn save(model: &Model, path: &Path) -> Result<()> {
    let bytes = to_bytes(model)?;
    fs::write(path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Read a checkpoint file.
pub fn load(path: &Path) -> Result<Model> {
    let bytes =
        fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn small_model() -> Model {
        let mut m = ModelBuilder::input(&[4, 4, 1])
            .unwrap()
            .conv2d(2, (3, 3), true, Some("feat"))
            .unwrap()
            .maxpool((2, 2), None)
            .unwrap()
            .flatten(None)
            .unwrap()
            .dense(3, false, Some("head"))
            .unwrap()
            .build()
            .unwrap();
        // Distinct values so ordering mistakes cannot cancel out.
        let mut next = 0.0f32;
        for t in m.param_tensors_mut() {
            for v in t.data_mut() {
                *v = next;
                next += 0.125;
            }
        }
        m
    }

    #[test]
    fn round_trip_reproduces_weights_and_forward() {
        let m = small_model();
        let bytes = to_bytes(&m).unwrap();
        let loaded = from_bytes(&bytes).unwrap();

        for (a, b) in m.param_tensors().iter().zip(loaded.param_tensors()) {
            assert_eq!(a.dims(), b.dims());
            assert_eq!(a.data(), b.data());
        }
        let names: Vec<&str> = loaded.layers().iter().map(|l| l.name.as_str()).collect();
        assert_eq!(names, ["input", "feat", "max_pooling2d", "flatten", "head"]);

        let batch = Tensor::new(&[1, 4, 4, 1], (0..16).map(|v| v as f32 / 15.0).collect()).unwrap();
        let (la, _) = m.forward(&batch, None).unwrap();
        let (lb, _) = loaded.forward(&batch, None).unwrap();
        assert_eq!(la.data(), lb.data());
    }

    #[test]
    fn round_trip_through_a_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.scnn");
        let m = small_model();
        save(&m, &path).unwrap();
        let loaded = load(&path).unwrap();
        assert_eq!(
            m.param_tensors()[0].data(),
            loaded.param_tensors()[0].data()
        );
    }

    #[test]
    fn weight_one_serializes_as_le_ieee754() {
        let mut m = ModelBuilder::input(&[1, 1, 1])
            .unwrap()
            .flatten(None)
            .unwrap()
            .dense(1, false, None)
            .unwrap()
            .build()
            .unwrap();
        m.param_tensors_mut()[0].data_mut()[0] = 1.0;
        let bytes = to_bytes(&m).unwrap();
        // Weight section = 2 f32 values (one weight, one bias); the weight
        // comes first.
        let weight = &bytes[bytes.len() - 8..bytes.len() - 4];
        assert_eq!(weight, &[0x00, 0x00, 0x80, 0x3F]);
        let bias = &bytes[bytes.len() - 4..];
        assert_eq!(bias, &[0x00, 0x00, 0x00, 0x00]);
    }

    #[test]
    fn bad_magic_is_rejected() {
        let mut bytes = to_bytes(&small_model()).unwrap();
        bytes[0] = b'X';
        assert!(matches!(from_bytes(&bytes).unwrap_err(), Error::Checkpoint(_)));
    }

    #[test]
    fn future_version_is_rejected() {
        let mut bytes = to_bytes(&small_model()).unwrap();
        bytes[4] = 99;
        let err = from_bytes(&bytes).unwrap_err();
        assert!(err.to_string().contains("version"));
    }

    #[test]
    fn truncated_weights_are_rejected() {
        let bytes = to_bytes(&small_model()).unwrap();
        let err = from_bytes(&bytes[..bytes.len() - 5]).unwrap_err();
        assert!(err.to_string().contains("truncated"));
    }

    #[test]
    fn trailing_bytes_are_rejected() {
        let mut bytes = to_bytes(&small_model()).unwrap();
        bytes.push(0);
        let err = from_bytes(&bytes).unwrap_err();
        assert!(err.to_string().contains("trailing"));
    }

    #[test]
    fn manifest_mismatch_is_rejected() {
        // Declare a bigger filter bank than the stored weights provide by
        // splicing one manifest onto another model's weight section.
        let small = to_bytes(&small_model()).unwrap();
        let manifest_len = u32::from_le_bytes(small[8..12].try_into().unwrap()) as usize;
        let bigger = ModelBuilder::input(&[4, 4, 1])
            .unwrap()
            .conv2d(8, (3, 3), true, Some("feat"))
            .unwrap()
            .flatten(None)
            .unwrap()
            .dense(3, false, None)
            .unwrap()
            .build()
            .unwrap();
        let big_bytes = to_bytes(&bigger).unwrap();
        let big_manifest_len = u32::from_le_bytes(big_bytes[8..12].try_into().unwrap()) as usize;
        let mut spliced = big_bytes[..12 + big_manifest_len].to_vec();
        spliced.extend_from_slice(&small[12 + manifest_len..]);
        let err = from_bytes(&spliced).unwrap_err();
        assert!(matches!(err, Error::Checkpoint(_)));
    }

    #[test]
    fn names_with_spaces_survive() {
        let m = ModelBuilder::input(&[2, 2, 1])
            .unwrap()
            .flatten(Some("flat out"))
            .unwrap()
            .dense(2, false, Some("my head"))
            .unwrap()
            .build()
            .unwrap();
        let loaded = from_bytes(&to_bytes(&m).unwrap()).unwrap();
        assert!(loaded.layer_index("my head").is_ok());
        assert!(loaded.layer_index("flat out").is_ok());
    }
}
