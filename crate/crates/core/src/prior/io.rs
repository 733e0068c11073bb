//! Model files: pretty-printed JSON with the fields
//! `format_version, preset_name, footprint, num_filters, scales, base_variance, weights, taps`.
//! Floats are written in shortest round-trip form so a load reproduces every
//! tap and weight bit for bit.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::footprint::Footprint;
use super::model::{FilterBank, MixtureWeights, PriorModel, ScaleGrid, FORMAT_VERSION};
use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    format_version: u64,
    preset_name: Option<String>,
    footprint: Footprint,
    num_filters: usize,
    scales: Vec<f64>,
    base_variance: f64,
    weights: Vec<Vec<f64>>,
    taps: Vec<Vec<Vec<f64>>>,
}

pub fn model_to_string(model: &PriorModel) -> String {
    let bank = model.filter_bank();
    let file = ModelFile {
        format_version: model.format_version(),
        preset_name: model.preset_name().map(str::to_owned),
        footprint: model.footprint(),
        num_filters: model.num_filters(),
        scales: model.scale_grid().scales().to_vec(),
        base_variance: model.scale_grid().base_variance(),
        weights: model.mixture_weights().rows().to_vec(),
        taps: (0..bank.len()).map(|m| bank.kernel(m)).collect(),
    };
    let mut s = serde_json::to_string_pretty(&file).expect("model serializes");
    s.push('\n');
    s
}

pub fn model_from_str(text: &str, path: &Path) -> Result<PriorModel> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| Error::malformed(path, e.to_string()))?;
    let version = value
        .get("format_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::malformed(path, "missing or invalid format_version"))?;
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let file: ModelFile = serde_json::from_str(text).map_err(|e| Error::malformed(path, e.to_string()))?;
    if file.taps.len() != file.num_filters {
        return Err(Error::malformed(
            path,
            format!("num_filters is {} but {} kernels are present", file.num_filters, file.taps.len()),
        ));
    }
    let bad = |e: Error| Error::malformed(path, e.to_string());
    let filters = file
        .taps
        .iter()
        .map(|k| FilterBank::taps_from_kernel(file.footprint, k))
        .collect::<Result<Vec<_>>>()
        .map_err(bad)?;
    let bank = FilterBank::new(file.footprint, filters).map_err(bad)?;
    let grid = ScaleGrid::new(file.scales, file.base_variance).map_err(bad)?;
    let weights = MixtureWeights::new(file.weights).map_err(bad)?;
    PriorModel::new(bank, grid, weights, file.preset_name).map_err(bad)
}

pub fn save_model(model: &PriorModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, model_to_string(model)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<PriorModel> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    model_from_str(&text, path)
}
