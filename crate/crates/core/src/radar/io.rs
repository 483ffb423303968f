use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{RadarConfig, RadarModel, RepCache};
use crate::autodiff::Matrix;
use crate::error::{RadarError, Result};
use crate::hetgraph::Relation;
use crate::real::{from_le_bytes, to_le_bytes, Real};

pub const MODEL_MANIFEST: &str = "manifest.json";
const TENSOR_DIR: &str = "tensors";
const CACHE_DIR: &str = "cache";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 2],
    pub file: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub dtype: String,
    pub config: RadarConfig,
    pub node_types: Vec<String>,
    pub relations: Vec<String>,
    pub tensors: Vec<TensorEntry>,
    /// Node counts the cached tables were computed for, when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache: Option<[usize; 2]>,
}

fn tensor_file(name: &str) -> String {
    format!("{name}.bin")
}

pub(crate) fn write_matrix<T: Real>(path: &Path, m: &Matrix<T>) -> Result<()> {
    fs::write(path, to_le_bytes(m.data())).map_err(|e| RadarError::io(path, e))
}

pub(crate) fn read_matrix<T: Real>(path: &Path, shape: [usize; 2]) -> Result<Matrix<T>> {
    let bytes = fs::read(path).map_err(|e| RadarError::io(path, e))?;
    if bytes.len() != shape[0] * shape[1] * T::BYTES {
        return Err(RadarError::Invalid(format!(
            "{} holds {} bytes, expected {}",
            path.display(),
            bytes.len(),
            shape[0] * shape[1] * T::BYTES
        )));
    }
    Ok(Matrix::from_vec(shape[0], shape[1], from_le_bytes(&bytes)))
}

/// Writes `manifest.json` plus one little-endian blob per parameter in the
/// model's own precision, and optionally the per-layer representation cache.
pub fn save_model<T: Real>(model: &RadarModel<T>, dir: &Path, cache: Option<&RepCache<T>>) -> Result<()> {
    let tensors_dir = dir.join(TENSOR_DIR);
    fs::create_dir_all(&tensors_dir).map_err(|e| RadarError::io(&tensors_dir, e))?;
    let mut tensors = Vec::with_capacity(model.store.len());
    for id in model.store.ids() {
        let name = model.store.name(id);
        let value = model.store.get(id);
        let file = tensor_file(name);
        write_matrix(&tensors_dir.join(&file), value)?;
        tensors.push(TensorEntry {
            name: name.to_string(),
            shape: [value.rows(), value.cols()],
            file,
        });
    }
    let cache_counts = match cache {
        Some(c) => {
            let cache_dir = dir.join(CACHE_DIR);
            fs::create_dir_all(&cache_dir).map_err(|e| RadarError::io(&cache_dir, e))?;
            for l in 0..c.video.len() {
                write_matrix(&cache_dir.join(format!("video_{l}.bin")), &c.video[l])?;
                write_matrix(&cache_dir.join(format!("tag_{l}.bin")), &c.tag[l])?;
            }
            Some([c.video[0].rows(), c.tag[0].rows()])
        }
        None => None,
    };
    let manifest = ModelManifest {
        dtype: T::DTYPE.to_string(),
        config: model.config.clone(),
        node_types: vec!["video".into(), "tag".into()],
        relations: Relation::ALL.iter().map(|r| r.name().to_string()).collect(),
        tensors,
        cache: cache_counts,
    };
    let path = dir.join(MODEL_MANIFEST);
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| RadarError::io(&path, e))
}

pub fn read_model_manifest(dir: &Path) -> Result<ModelManifest> {
    let path = dir.join(MODEL_MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| RadarError::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Inverse of [`save_model`]. The stored dtype must match `T`.
pub fn load_model<T: Real>(dir: &Path) -> Result<(RadarModel<T>, Option<RepCache<T>>)> {
    let manifest = read_model_manifest(dir)?;
    if manifest.dtype != T::DTYPE {
        return Err(RadarError::Invalid(format!(
            "model stored as {}, requested {}",
            manifest.dtype,
            T::DTYPE
        )));
    }
    // parameter values are overwritten below; the rng only fixes shapes
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
    let mut model = RadarModel::new(manifest.config.clone(), &mut rng)?;
    let mut values = Vec::with_capacity(manifest.tensors.len());
    for t in &manifest.tensors {
        values.push((t.name.clone(), read_matrix(&dir.join(TENSOR_DIR).join(&t.file), t.shape)?));
    }
    model.load_values(values)?;
    let cache = match manifest.cache {
        Some([n_videos, n_tags]) => {
            let cache_dir = dir.join(CACHE_DIR);
            let d = manifest.config.d;
            let mut video = Vec::new();
            let mut tag = Vec::new();
            for l in 0..=manifest.config.layers {
                video.push(read_matrix(&cache_dir.join(format!("video_{l}.bin")), [n_videos, d])?);
                tag.push(read_matrix(&cache_dir.join(format!("tag_{l}.bin")), [n_tags, d])?);
            }
            Some(RepCache { video, tag })
        }
        None => None,
    };
    Ok((model, cache))
}
