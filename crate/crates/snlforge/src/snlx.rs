//! The `snlx-1` interchange format.
//!
//! A model is a JSON manifest plus a sidecar blob of little-endian `f32`
//! values. The manifest names the model, its input shape and the layer
//! list; every parameterized layer points at its kernel and bias as
//! `{offset, length}` byte ranges into the blob. Tensors are stored in
//! canonical order: Dense kernels `in x out` (row = input), Conv2D kernels
//! `kh x kw x cin x cout`.
//!
//! ```json
//! {
//!   "format": "snlx-1",
//!   "name": "tiny",
//!   "input_shape": { "layout": "flat", "dims": [4] },
//!   "blob": "tiny.bin",
//!   "layers": [
//!     { "id": 0, "name": "fc", "kind": "Dense", "params": { "units": 2 },
//!       "kernel": { "offset": 0, "length": 32 }, "bias": { "offset": 32, "length": 8 } },
//!     { "id": 1, "name": "act", "kind": "ReLU" }
//!   ]
//! }
//! ```
//!
//! Datasets use the same container with `"kind": "dataset"`, a `task`, a
//! sample `count` and a `labels` array; the blob holds the samples back to
//! back.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use snlforge_core::model::{infer_shapes, param_shape, LayerParams, Layout, Padding, WeightSet};
use snlforge_core::qsim::{Dataset, Task};
use snlforge_core::{LayerKind, LayerSpec, ModelGraph, TensorShape};
use thiserror::Error;

pub const FORMAT_VERSION: &str = "snlx-1";

#[derive(Debug, Error)]
pub enum SnlxError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: invalid manifest: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("unsupported format {0:?}, expected \"snlx-1\"")]
    Version(String),
    #[error("layer {id}: {message}")]
    Layer { id: u32, message: String },
    #[error("blob: {0}")]
    Blob(String),
    #[error("dataset: {0}")]
    Dataset(String),
    #[error(transparent)]
    Model(#[from] snlforge_core::Error),
}

type Result<T> = std::result::Result<T, SnlxError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeJson {
    pub layout: String,
    pub dims: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorRef {
    pub offset: u64,
    pub length: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamsJson {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub units: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filters: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel_size: Option<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strides: Option<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub padding: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pool_size: Option<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate: Option<f64>,
}

impl ParamsJson {
    fn is_empty(&self) -> bool {
        *self == ParamsJson::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerJson {
    pub id: u32,
    pub name: String,
    pub kind: String,
    #[serde(default, skip_serializing_if = "ParamsJson::is_empty")]
    pub params: ParamsJson,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<TensorRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias: Option<TensorRef>,
    /// Predecessor ids; only a single-predecessor chain is accepted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inputs: Option<Vec<u32>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub format: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
    pub name: String,
    pub input_shape: ShapeJson,
    pub blob: String,
    pub layers: Vec<LayerJson>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub kind: String,
    pub name: String,
    /// `classification`, `binary` or `reconstruction`.
    pub task: String,
    /// Output element scored by a `binary` task.
    #[serde(default)]
    pub score_index: usize,
    pub input_shape: ShapeJson,
    pub count: usize,
    pub blob: String,
    pub labels: Vec<f64>,
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> SnlxError + '_ {
    move |source| SnlxError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn read_manifest<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| SnlxError::Json {
        path: path.to_path_buf(),
        source,
    })
}

fn read_blob(manifest_path: &Path, blob: &str) -> Result<Vec<u8>> {
    let path = manifest_path.parent().unwrap_or(Path::new(".")).join(blob);
    fs::read(&path).map_err(io_err(&path))
}

fn shape_from_json(shape: &ShapeJson) -> Result<TensorShape> {
    let layout = match shape.layout.as_str() {
        "flat" => Layout::Flat,
        "hwc" => Layout::Hwc,
        other => return Err(SnlxError::Blob(format!("unknown input layout {other:?}"))),
    };
    TensorShape::new(shape.dims.clone(), layout).ok_or_else(|| {
        SnlxError::Blob(format!(
            "input shape {:?} is not a valid {} shape",
            shape.dims, shape.layout
        ))
    })
}

fn shape_to_json(shape: &TensorShape) -> ShapeJson {
    ShapeJson {
        layout: match shape.layout() {
            Layout::Flat => "flat",
            Layout::Hwc => "hwc",
        }
        .to_string(),
        dims: shape.dims().to_vec(),
    }
}

fn pair(id: u32, name: &str, v: Option<[usize; 2]>, default: Option<[usize; 2]>) -> Result<(usize, usize)> {
    let [a, b] = v.or(default).ok_or_else(|| SnlxError::Layer {
        id,
        message: format!("missing parameter {name}"),
    })?;
    Ok((a, b))
}

fn required(id: u32, name: &str, v: Option<usize>) -> Result<usize> {
    v.ok_or_else(|| SnlxError::Layer {
        id,
        message: format!("missing parameter {name}"),
    })
}

fn kind_from_json(layer: &LayerJson) -> Result<LayerKind> {
    let id = layer.id;
    let p = &layer.params;
    Ok(match layer.kind.as_str() {
        "Dense" => LayerKind::Dense {
            units: required(id, "units", p.units)?,
        },
        "Conv2D" => LayerKind::Conv2D {
            filters: required(id, "filters", p.filters)?,
            kernel: pair(id, "kernel_size", p.kernel_size, None)?,
            strides: pair(id, "strides", p.strides, Some([1, 1]))?,
            padding: match p.padding.as_deref().unwrap_or("valid") {
                "valid" => Padding::Valid,
                "same" => Padding::Same,
                other => {
                    return Err(SnlxError::Layer {
                        id,
                        message: format!("unknown padding {other:?}"),
                    })
                }
            },
        },
        "ReLU" => LayerKind::ReLU,
        "Softmax" => LayerKind::Softmax,
        "AveragePool2D" => {
            let pool = pair(id, "pool_size", p.pool_size, None)?;
            LayerKind::AveragePool2D {
                pool,
                strides: pair(id, "strides", p.strides, Some([pool.0, pool.1]))?,
            }
        }
        "GlobalAveragePool2D" => LayerKind::GlobalAveragePool2D,
        "Dropout" => LayerKind::Dropout {
            rate: p.rate.ok_or_else(|| SnlxError::Layer {
                id,
                message: "missing parameter rate".to_string(),
            })?,
        },
        other => {
            return Err(SnlxError::Layer {
                id,
                message: format!("unsupported layer kind {other:?}"),
            })
        }
    })
}

fn kind_to_json(kind: &LayerKind) -> (String, ParamsJson) {
    let mut p = ParamsJson::default();
    match kind {
        LayerKind::Dense { units } => p.units = Some(*units),
        LayerKind::Conv2D {
            filters,
            kernel,
            strides,
            padding,
        } => {
            p.filters = Some(*filters);
            p.kernel_size = Some([kernel.0, kernel.1]);
            p.strides = Some([strides.0, strides.1]);
            p.padding = Some(
                match padding {
                    Padding::Valid => "valid",
                    Padding::Same => "same",
                }
                .to_string(),
            );
        }
        LayerKind::AveragePool2D { pool, strides } => {
            p.pool_size = Some([pool.0, pool.1]);
            p.strides = Some([strides.0, strides.1]);
        }
        LayerKind::Dropout { rate } => p.rate = Some(*rate),
        LayerKind::ReLU | LayerKind::Softmax | LayerKind::GlobalAveragePool2D => {}
    }
    (kind.name().to_string(), p)
}

fn floats(blob: &[u8], r: TensorRef, what: &str) -> Result<Vec<f64>> {
    let end = r.offset.checked_add(r.length).filter(|&e| e <= blob.len() as u64);
    let Some(end) = end else {
        return Err(SnlxError::Blob(format!(
            "{what} range {}+{} exceeds blob size {}",
            r.offset,
            r.length,
            blob.len()
        )));
    };
    if r.length % 4 != 0 {
        return Err(SnlxError::Blob(format!(
            "{what} length {} is not a multiple of 4",
            r.length
        )));
    }
    Ok(blob[r.offset as usize..end as usize]
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
        .collect())
}

/// Build a graph from a parsed manifest and its blob.
pub fn model_from_parts(manifest: &ModelManifest, blob: &[u8]) -> Result<ModelGraph> {
    if manifest.format != FORMAT_VERSION {
        return Err(SnlxError::Version(manifest.format.clone()));
    }
    if let Some(kind) = manifest.kind.as_deref().filter(|k| *k != "model") {
        return Err(SnlxError::Blob(format!("manifest kind {kind:?} is not a model")));
    }
    let input = shape_from_json(&manifest.input_shape)?;
    let mut layers = Vec::with_capacity(manifest.layers.len());
    let mut previous: Option<u32> = None;
    for l in &manifest.layers {
        if let Some(inputs) = &l.inputs {
            let chained = match previous {
                None => inputs.is_empty(),
                Some(p) => inputs.as_slice() == [p],
            };
            if !chained {
                return Err(SnlxError::Layer {
                    id: l.id,
                    message: format!("inputs {inputs:?} do not form a linear chain"),
                });
            }
        }
        layers.push(LayerSpec::new(l.id, l.name.clone(), kind_from_json(l)?));
        previous = Some(l.id);
    }
    // Shape inference first so that parameter refs can be checked against
    // the expected layer.
    let shapes = infer_shapes(&input, &layers)?;
    let mut weights = WeightSet::new();
    for ((l, spec), shape) in manifest.layers.iter().zip(&layers).zip(&shapes) {
        match (param_shape(&spec.kind, &shape.input), l.kernel, l.bias) {
            (Some(_), Some(k), Some(b)) => {
                weights.insert(
                    l.id,
                    LayerParams {
                        kernel: floats(blob, k, &format!("layer {} kernel", l.id))?,
                        bias: floats(blob, b, &format!("layer {} bias", l.id))?,
                    },
                );
            }
            (Some(_), _, _) => {
                return Err(SnlxError::Layer {
                    id: l.id,
                    message: format!("{} needs both kernel and bias", l.kind),
                })
            }
            (None, None, None) => {}
            (None, _, _) => {
                return Err(SnlxError::Layer {
                    id: l.id,
                    message: format!("{} carries no parameters", l.kind),
                })
            }
        }
    }
    Ok(ModelGraph::new(manifest.name.clone(), input, layers, weights)?)
}

/// Load a model from its manifest path; the blob path is relative to it.
pub fn load_model(path: impl AsRef<Path>) -> Result<ModelGraph> {
    let path = path.as_ref();
    let manifest: ModelManifest = read_manifest(path)?;
    let blob = read_blob(path, &manifest.blob)?;
    model_from_parts(&manifest, &blob)
}

/// Manifest and blob bytes for a graph; `blob_name` is recorded verbatim.
pub fn model_to_parts(graph: &ModelGraph, blob_name: &str) -> (ModelManifest, Vec<u8>) {
    let mut blob = Vec::with_capacity(graph.param_count() * 4);
    let mut push = |values: &[f64]| {
        let offset = blob.len() as u64;
        for v in values {
            blob.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        TensorRef {
            offset,
            length: blob.len() as u64 - offset,
        }
    };
    let layers = graph
        .layers()
        .iter()
        .map(|l| {
            let (kind, params) = kind_to_json(&l.kind);
            let (kernel, bias) = match graph.params(l.id) {
                Some(p) => (Some(push(&p.kernel)), Some(push(&p.bias))),
                None => (None, None),
            };
            LayerJson {
                id: l.id,
                name: l.name.clone(),
                kind,
                params,
                kernel,
                bias,
                inputs: None,
            }
        })
        .collect();
    let manifest = ModelManifest {
        format: FORMAT_VERSION.to_string(),
        kind: Some("model".to_string()),
        name: graph.name().to_string(),
        input_shape: shape_to_json(graph.input_shape()),
        blob: blob_name.to_string(),
        layers,
    };
    (manifest, blob)
}

fn file_stem(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Write `<name>.snlx.json` and `<name>.bin` into `dir`; returns the
/// manifest path.
pub fn write_model(graph: &ModelGraph, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let stem = file_stem(graph.name());
    let blob_name = format!("{stem}.bin");
    let (manifest, blob) = model_to_parts(graph, &blob_name);
    let blob_path = dir.join(&blob_name);
    fs::write(&blob_path, blob).map_err(io_err(&blob_path))?;
    let path = dir.join(format!("{stem}.snlx.json"));
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text + "\n").map_err(io_err(&path))?;
    Ok(path)
}

fn task_from_json(m: &DatasetManifest) -> Result<Task> {
    match m.task.as_str() {
        "classification" => Ok(Task::Classification),
        "binary" => Ok(Task::BinaryScore { index: m.score_index }),
        "reconstruction" => Ok(Task::Reconstruction),
        other => Err(SnlxError::Dataset(format!("unknown task {other:?}"))),
    }
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let m: DatasetManifest = read_manifest(path)?;
    if m.format != FORMAT_VERSION {
        return Err(SnlxError::Version(m.format));
    }
    if m.kind != "dataset" {
        return Err(SnlxError::Dataset(format!(
            "manifest kind {:?} is not a dataset",
            m.kind
        )));
    }
    let task = task_from_json(&m)?;
    let len = shape_from_json(&m.input_shape)?.len();
    if m.labels.len() != m.count {
        return Err(SnlxError::Dataset(format!(
            "{} labels for {} samples",
            m.labels.len(),
            m.count
        )));
    }
    let blob = read_blob(path, &m.blob)?;
    let values = floats(
        &blob,
        TensorRef {
            offset: 0,
            length: blob.len() as u64,
        },
        "samples",
    )?;
    if values.len() != m.count * len {
        return Err(SnlxError::Dataset(format!(
            "blob holds {} values, expected {} samples x {len}",
            values.len(),
            m.count
        )));
    }
    let samples = values.chunks(len.max(1)).map(<[f64]>::to_vec).zip(m.labels).collect();
    Ok(Dataset { task, samples })
}

/// Write a dataset as `<name>.snlx.json` plus `<name>.bin`.
pub fn write_dataset(
    dataset: &Dataset,
    name: &str,
    input_shape: &TensorShape,
    dir: impl AsRef<Path>,
) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let stem = file_stem(name);
    let (task, score_index) = match dataset.task {
        Task::Classification => ("classification", 0),
        Task::BinaryScore { index } => ("binary", index),
        Task::Reconstruction => ("reconstruction", 0),
    };
    let mut blob = Vec::new();
    for (x, _) in &dataset.samples {
        if x.len() != input_shape.len() {
            return Err(SnlxError::Dataset(format!(
                "sample has {} values, input shape needs {}",
                x.len(),
                input_shape.len()
            )));
        }
        for v in x {
            blob.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    let manifest = DatasetManifest {
        format: FORMAT_VERSION.to_string(),
        kind: "dataset".to_string(),
        name: name.to_string(),
        task: task.to_string(),
        score_index,
        input_shape: shape_to_json(input_shape),
        count: dataset.samples.len(),
        blob: format!("{stem}.bin"),
        labels: dataset.samples.iter().map(|(_, l)| *l).collect(),
    };
    let blob_path = dir.join(&manifest.blob);
    fs::write(&blob_path, blob).map_err(io_err(&blob_path))?;
    let path = dir.join(format!("{stem}.snlx.json"));
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text + "\n").map_err(io_err(&path))?;
    Ok(path)
}
