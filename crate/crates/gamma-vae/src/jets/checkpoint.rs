//! Checkpoint serialization for an encoder/decoder pair.
//!
//! Format (version 1): a single JSON object
//! `{"version":1,"latent_dim":m,"encoder":{"dims":[...],"weights":[...],"biases":[...]},"decoder":{...},"activation":"softplus"}`
//! where each layer's weight matrix is one flat row-major array and layers
//! run input to output.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{MlpModel, Role};
use crate::error::{Error, Result};

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct NetJson {
    dims: Vec<usize>,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointJson {
    version: u32,
    latent_dim: usize,
    encoder: NetJson,
    decoder: NetJson,
    activation: String,
}

fn net_to_json(model: &MlpModel) -> NetJson {
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for l in 0..model.num_layers() {
        let w = model.weight(l);
        let mut flat = Vec::with_capacity(w.len());
        for r in 0..w.nrows() {
            for c in 0..w.ncols() {
                flat.push(w[(r, c)]);
            }
        }
        weights.push(flat);
        biases.push(model.bias(l).iter().copied().collect());
    }
    NetJson {
        dims: model.layer_dims().to_vec(),
        weights,
        biases,
    }
}

fn net_from_json(net: &NetJson, role: Role, path: &Path) -> Result<MlpModel> {
    let parse_err = |message: String| Error::Parse {
        path: path.display().to_string(),
        line: 0,
        message,
    };
    if net.dims.len() < 2 {
        return Err(parse_err("network needs at least two dims".into()));
    }
    let layers = net.dims.len() - 1;
    if net.weights.len() != layers || net.biases.len() != layers {
        return Err(parse_err(format!(
            "expected {} weight/bias layers, got {}/{}",
            layers,
            net.weights.len(),
            net.biases.len()
        )));
    }
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for l in 0..layers {
        let (rows, cols) = (net.dims[l + 1], net.dims[l]);
        if net.weights[l].len() != rows * cols {
            return Err(parse_err(format!(
                "weight layer {} has {} entries, expected {}",
                l,
                net.weights[l].len(),
                rows * cols
            )));
        }
        weights.push(DMatrix::from_row_slice(rows, cols, &net.weights[l]));
        if net.biases[l].len() != rows {
            return Err(parse_err(format!(
                "bias layer {} has {} entries, expected {}",
                l,
                net.biases[l].len(),
                rows
            )));
        }
        biases.push(DVector::from_vec(net.biases[l].clone()));
    }
    MlpModel::new(net.dims.clone(), weights, biases, role)
}

/// Writes an encoder/decoder pair as a version-1 checkpoint.
pub fn save_checkpoint(path: impl AsRef<Path>, encoder: &MlpModel, decoder: &MlpModel) -> Result<()> {
    if encoder.role() != Role::Encoder || decoder.role() != Role::Decoder {
        return Err(Error::domain("save_checkpoint expects (encoder, decoder)"));
    }
    if encoder.latent_dim() != decoder.latent_dim() {
        return Err(Error::shape(format!(
            "encoder latent dim {} != decoder latent dim {}",
            encoder.latent_dim(),
            decoder.latent_dim()
        )));
    }
    let ckpt = CheckpointJson {
        version: CHECKPOINT_VERSION,
        latent_dim: decoder.latent_dim(),
        encoder: net_to_json(encoder),
        decoder: net_to_json(decoder),
        activation: "softplus".into(),
    };
    let json = serde_json::to_string_pretty(&ckpt)?;
    std::fs::write(path, json)?;
    Ok(())
}

/// Loads a version-1 checkpoint, returning `(encoder, decoder)`.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(MlpModel, MlpModel)> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let ckpt: CheckpointJson = serde_json::from_str(&text)?;
    let parse_err = |message: String| Error::Parse {
        path: path.display().to_string(),
        line: 0,
        message,
    };
    if ckpt.version != CHECKPOINT_VERSION {
        return Err(parse_err(format!(
            "unsupported checkpoint version {}",
            ckpt.version
        )));
    }
    if ckpt.activation != "softplus" {
        return Err(parse_err(format!(
            "unsupported activation '{}'",
            ckpt.activation
        )));
    }
    let encoder = net_from_json(&ckpt.encoder, Role::Encoder, path)?;
    let decoder = net_from_json(&ckpt.decoder, Role::Decoder, path)?;
    if decoder.latent_dim() != ckpt.latent_dim || encoder.latent_dim() != ckpt.latent_dim {
        return Err(parse_err(format!(
            "latent_dim {} does not match network dims",
            ckpt.latent_dim
        )));
    }
    Ok((encoder, decoder))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn checkpoint_roundtrip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let encoder = MlpModel::random(vec![6, 8, 4], Role::Encoder, &mut rng).unwrap();
        let decoder = MlpModel::random(vec![2, 8, 6], Role::Decoder, &mut rng).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        save_checkpoint(&path, &encoder, &decoder).unwrap();
        let (enc2, dec2) = load_checkpoint(&path).unwrap();
        assert_eq!(encoder, enc2);
        assert_eq!(decoder, dec2);
    }

    #[test]
    fn malformed_checkpoint_is_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        std::fs::write(
            &path,
            r#"{"version":1,"latent_dim":2,"encoder":{"dims":[3,4],"weights":[[1.0]],"biases":[[0.0,0.0,0.0,0.0]]},"decoder":{"dims":[2,3],"weights":[[0,0,0,0,0,0]],"biases":[[0,0,0]]},"activation":"softplus"}"#,
        )
        .unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(Error::Parse { .. })
        ));
    }
}
