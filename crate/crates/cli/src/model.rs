//! A trained head on disk: one FMAT file per layer plus `manifest.json`.

use std::path::Path;

use pinvhead::data::{load_features, save_features, Dtype};
use pinvhead::{FcHead, FcLayer};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const FORMAT_VERSION: u32 = 1;
const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub widths: Vec<usize>,
    pub bias: bool,
    /// Layer files relative to the model directory, input side first.
    pub layers: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_names: Option<Vec<String>>,
}

pub fn save(head: &FcHead, dir: &Path, class_names: Option<&[String]>) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::data(dir, e))?;
    let mut layers = Vec::new();
    for (i, layer) in head.layers().iter().enumerate() {
        let name = format!("layer{i}.fmat");
        save_features(layer.weights(), Dtype::F64, dir.join(&name))?;
        layers.push(name);
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        widths: head.widths(),
        bias: head.layers()[0].has_bias(),
        layers,
        class_names: class_names.map(<[String]>::to_vec),
    };
    let path = dir.join(MANIFEST);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&path, text).map_err(|e| CliError::data(&path, e))
}

pub fn load(dir: &Path) -> CliResult<(FcHead, Manifest)> {
    let path = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::data(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| CliError::data(&path, e))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(CliError::data(
            &path,
            format!(
                "unsupported model format version {}",
                manifest.format_version
            ),
        ));
    }
    if manifest.widths.len() < 2 || manifest.layers.len() != manifest.widths.len() - 1 {
        return Err(CliError::data(
            &path,
            format!(
                "{} layer files for widths {:?}",
                manifest.layers.len(),
                manifest.widths
            ),
        ));
    }
    let mut layers = Vec::with_capacity(manifest.layers.len());
    for (i, name) in manifest.layers.iter().enumerate() {
        let file = dir.join(name);
        let weights = load_features(&file)?;
        let expected = (
            manifest.widths[i + 1],
            manifest.widths[i] + usize::from(manifest.bias),
        );
        if weights.shape() != expected {
            return Err(CliError::data(
                &file,
                format!(
                    "weights are {:?}, manifest implies {expected:?}",
                    weights.shape()
                ),
            ));
        }
        layers.push(FcLayer::new(weights, manifest.bias)?);
    }
    Ok((FcHead::new(layers)?, manifest))
}
