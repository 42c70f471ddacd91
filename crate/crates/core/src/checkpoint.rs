//! Versioned JSON checkpoints and atomic file writes.
//!
//! Floats are written with shortest round-trip formatting, so a checkpoint
//! reloads bit-for-bit.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Standardization;
use crate::error::{Error, Result};
use crate::net::{NetworkSpec, NetworkWeights};
use crate::trainer::FittedModel;

pub const FORMAT: &str = "mogel-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LayerRecord {
    name: String,
    fan_in: usize,
    fan_out: usize,
    /// Row-major `fan_in x fan_out`.
    weights: Vec<f64>,
    biases: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    spec: NetworkSpec,
    standardization: Standardization,
    layers: Vec<LayerRecord>,
}

pub fn to_json(model: &FittedModel) -> String {
    let w = &model.weights;
    let layers = w
        .layers()
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let p = w.layer_params(i);
            let split = l.fan_in * l.fan_out;
            LayerRecord {
                name: l.name.clone(),
                fan_in: l.fan_in,
                fan_out: l.fan_out,
                weights: p[..split].to_vec(),
                biases: p[split..].to_vec(),
            }
        })
        .collect();
    let file = CheckpointFile {
        format: FORMAT.into(),
        version: VERSION,
        spec: w.spec().clone(),
        standardization: model.standardization.clone(),
        layers,
    };
    serde_json::to_string_pretty(&file).expect("checkpoint serializes")
}

pub fn from_json(text: &str) -> Result<FittedModel> {
    let file: CheckpointFile =
        serde_json::from_str(text).map_err(|e| Error::Schema(format!("checkpoint: {e}")))?;
    if file.format != FORMAT {
        return Err(Error::Schema(format!(
            "not a checkpoint (format {:?})",
            file.format
        )));
    }
    if file.version != VERSION {
        return Err(Error::Schema(format!(
            "checkpoint version {} is not supported (expected {VERSION})",
            file.version
        )));
    }
    let shell = NetworkWeights::zeros(&file.spec)?;
    if shell.layers().len() != file.layers.len() {
        return Err(Error::Schema(format!(
            "checkpoint has {} layers, the network has {}",
            file.layers.len(),
            shell.layers().len()
        )));
    }
    let mut params = Vec::with_capacity(shell.n_params());
    for (expected, got) in shell.layers().iter().zip(&file.layers) {
        let shape_ok = expected.name == got.name
            && expected.fan_in == got.fan_in
            && expected.fan_out == got.fan_out
            && got.weights.len() == got.fan_in * got.fan_out
            && got.biases.len() == got.fan_out;
        if !shape_ok {
            return Err(Error::Schema(format!(
                "checkpoint layer {} ({}x{}) does not match the network layer {} ({}x{})",
                got.name, got.fan_in, got.fan_out, expected.name, expected.fan_in, expected.fan_out
            )));
        }
        params.extend_from_slice(&got.weights);
        params.extend_from_slice(&got.biases);
    }
    let st = &file.standardization;
    if st.feature_means.len() != file.spec.input_dim || st.feature_stds.len() != file.spec.input_dim
    {
        return Err(Error::Schema(
            "checkpoint standardization does not match the input width".into(),
        ));
    }
    Ok(FittedModel {
        weights: NetworkWeights::from_params(&file.spec, params)?,
        standardization: file.standardization,
    })
}

pub fn save(model: &FittedModel, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path, to_json(model).as_bytes())
}

pub fn load(path: impl AsRef<Path>) -> Result<FittedModel> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_json(&text)
}

/// Writes to a sibling temporary file and renames it over `path`, so readers
/// never see a partial file.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    result.map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}
