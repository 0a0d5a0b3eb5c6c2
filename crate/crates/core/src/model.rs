//! Layer-graph intermediate representation.
//!
//! A [`ModelGraph`] is a validated linear chain of layers with weights bound
//! to every parameterized layer and shapes inferred end to end. Tensors are
//! single samples: flat vectors or height-width-channel images stored in
//! HWC order (`index = (h * W + w) * C + c`).
//!
//! Kernel element order is fixed: Dense kernels are input-major
//! (`index = i * units + j`), Conv2D kernels are `(kh, kw, cin, cout)`.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Layout {
    Flat,
    Hwc,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TensorShape {
    dims: Vec<usize>,
    layout: Layout,
}

impl TensorShape {
    pub fn flat(len: usize) -> Self {
        TensorShape {
            dims: vec![len],
            layout: Layout::Flat,
        }
    }

    pub fn hwc(height: usize, width: usize, channels: usize) -> Self {
        TensorShape {
            dims: vec![height, width, channels],
            layout: Layout::Hwc,
        }
    }

    /// Checked constructor: every extent must be at least 1 and the dim count
    /// must match the layout.
    pub fn new(dims: Vec<usize>, layout: Layout) -> Option<Self> {
        let rank = match layout {
            Layout::Flat => 1,
            Layout::Hwc => 3,
        };
        (dims.len() == rank && dims.iter().all(|&d| d >= 1)).then_some(TensorShape { dims, layout })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(height, width, channels)` for HWC shapes.
    pub fn as_hwc(&self) -> Option<(usize, usize, usize)> {
        match self.layout {
            Layout::Hwc => Some((self.dims[0], self.dims[1], self.dims[2])),
            Layout::Flat => None,
        }
    }
}

impl fmt::Display for TensorShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("(")?;
        for (i, d) in self.dims.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{d}")?;
        }
        if self.dims.len() == 1 {
            f.write_str(",")?;
        }
        f.write_str(")")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Padding {
    #[default]
    Valid,
    /// Zero padding so that `out = ceil(in / stride)`. Experimental.
    Same,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerKind {
    Dense {
        units: usize,
    },
    Conv2D {
        filters: usize,
        kernel: (usize, usize),
        strides: (usize, usize),
        padding: Padding,
    },
    ReLU,
    Softmax,
    AveragePool2D {
        pool: (usize, usize),
        strides: (usize, usize),
    },
    GlobalAveragePool2D,
    Dropout {
        rate: f64,
    },
}

impl LayerKind {
    pub fn name(&self) -> &'static str {
        match self {
            LayerKind::Dense { .. } => "Dense",
            LayerKind::Conv2D { .. } => "Conv2D",
            LayerKind::ReLU => "ReLU",
            LayerKind::Softmax => "Softmax",
            LayerKind::AveragePool2D { .. } => "AveragePool2D",
            LayerKind::GlobalAveragePool2D => "GlobalAveragePool2D",
            LayerKind::Dropout { .. } => "Dropout",
        }
    }

    pub fn has_params(&self) -> bool {
        matches!(self, LayerKind::Dense { .. } | LayerKind::Conv2D { .. })
    }

    fn validate(&self, id: u32) -> Result<()> {
        let positive = |what: &str, v: usize| {
            if v == 0 {
                Err(Error::InvalidLayer {
                    layer: id,
                    message: format!("{what} must be at least 1"),
                })
            } else {
                Ok(())
            }
        };
        match *self {
            LayerKind::Dense { units } => positive("units", units),
            LayerKind::Conv2D {
                filters,
                kernel,
                strides,
                ..
            } => {
                positive("filters", filters)?;
                positive("kernel height", kernel.0)?;
                positive("kernel width", kernel.1)?;
                positive("stride height", strides.0)?;
                positive("stride width", strides.1)
            }
            LayerKind::AveragePool2D { pool, strides } => {
                positive("pool height", pool.0)?;
                positive("pool width", pool.1)?;
                positive("stride height", strides.0)?;
                positive("stride width", strides.1)
            }
            LayerKind::Dropout { rate } if !(0.0..1.0).contains(&rate) => Err(Error::InvalidLayer {
                layer: id,
                message: format!("dropout rate {rate} outside [0, 1)"),
            }),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    pub id: u32,
    pub name: String,
    pub kind: LayerKind,
}

impl LayerSpec {
    pub fn new(id: u32, name: impl Into<String>, kind: LayerKind) -> Self {
        LayerSpec {
            id,
            name: name.into(),
            kind,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamKind {
    Kernel,
    Bias,
}

impl ParamKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ParamKind::Kernel => "kernel",
            ParamKind::Bias => "bias",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LayerParams {
    pub kernel: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LayerParams {
    pub fn get(&self, kind: ParamKind) -> &[f64] {
        match kind {
            ParamKind::Kernel => &self.kernel,
            ParamKind::Bias => &self.bias,
        }
    }

    fn get_mut(&mut self, kind: ParamKind) -> &mut Vec<f64> {
        match kind {
            ParamKind::Kernel => &mut self.kernel,
            ParamKind::Bias => &mut self.bias,
        }
    }
}

/// Parameters keyed by layer id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WeightSet {
    layers: BTreeMap<u32, LayerParams>,
}

impl WeightSet {
    pub fn new() -> Self {
        WeightSet::default()
    }

    pub fn insert(&mut self, layer: u32, params: LayerParams) {
        self.layers.insert(layer, params);
    }

    pub fn get(&self, layer: u32) -> Option<&LayerParams> {
        self.layers.get(&layer)
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, &LayerParams)> {
        self.layers.iter().map(|(&id, p)| (id, p))
    }

    pub fn param_count(&self) -> usize {
        self.layers.values().map(|p| p.kernel.len() + p.bias.len()).sum()
    }
}

/// Input and output shape of one layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerShapes {
    pub input: TensorShape,
    pub output: TensorShape,
}

/// Expected kernel and bias element counts of a parameterized layer.
pub fn param_shape(kind: &LayerKind, input: &TensorShape) -> Option<(usize, usize)> {
    match *kind {
        LayerKind::Dense { units } => Some((input.len() * units, units)),
        LayerKind::Conv2D { filters, kernel, .. } => {
            let cin = input.as_hwc().map_or(1, |(_, _, c)| c);
            Some((kernel.0 * kernel.1 * cin * filters, filters))
        }
        _ => None,
    }
}

/// Output extent and leading zero padding of one spatial dim.
pub fn window_extent(input: usize, window: usize, stride: usize, padding: Padding) -> Option<(usize, usize)> {
    match padding {
        Padding::Valid => (input >= window).then(|| ((input - window) / stride + 1, 0)),
        Padding::Same => {
            let out = input.div_ceil(stride);
            let total = ((out - 1) * stride + window).saturating_sub(input);
            Some((out, total / 2))
        }
    }
}

/// Shape of each layer's input and output along the chain.
pub fn infer_shapes(input: &TensorShape, layers: &[LayerSpec]) -> Result<Vec<LayerShapes>> {
    let mut shapes = Vec::with_capacity(layers.len());
    let mut current = input.clone();
    for layer in layers {
        let fail = |message: String| Error::ShapeInference {
            layer: layer.id,
            message,
        };
        let need_hwc = || {
            current
                .as_hwc()
                .ok_or_else(|| fail(format!("{} needs an HWC input, got {current}", layer.kind.name())))
        };
        let output = match layer.kind {
            LayerKind::Dense { units } => {
                if current.layout() != Layout::Flat {
                    return Err(fail(format!("Dense needs a flat input, got {current}")));
                }
                TensorShape::flat(units)
            }
            LayerKind::Conv2D {
                filters,
                kernel,
                strides,
                padding,
            } => {
                let (h, w, _) = need_hwc()?;
                let (oh, _) = window_extent(h, kernel.0, strides.0, padding)
                    .ok_or_else(|| fail(format!("kernel height {} exceeds input height {h}", kernel.0)))?;
                let (ow, _) = window_extent(w, kernel.1, strides.1, padding)
                    .ok_or_else(|| fail(format!("kernel width {} exceeds input width {w}", kernel.1)))?;
                TensorShape::hwc(oh, ow, filters)
            }
            LayerKind::AveragePool2D { pool, strides } => {
                let (h, w, c) = need_hwc()?;
                let (oh, _) = window_extent(h, pool.0, strides.0, Padding::Valid)
                    .ok_or_else(|| fail(format!("pool height {} exceeds input height {h}", pool.0)))?;
                let (ow, _) = window_extent(w, pool.1, strides.1, Padding::Valid)
                    .ok_or_else(|| fail(format!("pool width {} exceeds input width {w}", pool.1)))?;
                TensorShape::hwc(oh, ow, c)
            }
            LayerKind::GlobalAveragePool2D => {
                let (_, _, c) = need_hwc()?;
                TensorShape::flat(c)
            }
            LayerKind::ReLU | LayerKind::Softmax | LayerKind::Dropout { .. } => current.clone(),
        };
        shapes.push(LayerShapes {
            input: current,
            output: output.clone(),
        });
        current = output;
    }
    Ok(shapes)
}

/// A validated linear chain of layers with bound weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGraph {
    name: String,
    input: TensorShape,
    layers: Vec<LayerSpec>,
    weights: WeightSet,
    shapes: Vec<LayerShapes>,
}

impl ModelGraph {
    pub fn new(
        name: impl Into<String>,
        input: TensorShape,
        layers: Vec<LayerSpec>,
        weights: WeightSet,
    ) -> Result<Self> {
        let mut seen = BTreeMap::new();
        for layer in &layers {
            if seen.insert(layer.id, ()).is_some() {
                return Err(Error::DuplicateLayerId(layer.id));
            }
            layer.kind.validate(layer.id)?;
        }
        let shapes = infer_shapes(&input, &layers)?;
        for (layer, shape) in layers.iter().zip(&shapes) {
            let params = weights.get(layer.id);
            match (param_shape(&layer.kind, &shape.input), params) {
                (Some((kernel, bias)), Some(p)) => {
                    check_count(layer.id, "kernel", kernel, p.kernel.len())?;
                    check_count(layer.id, "bias", bias, p.bias.len())?;
                }
                (Some((kernel, _)), None) => {
                    return Err(Error::WeightCount {
                        layer: layer.id,
                        tensor: "kernel",
                        expected: kernel,
                        actual: 0,
                    })
                }
                (None, Some(_)) => {
                    return Err(Error::InvalidLayer {
                        layer: layer.id,
                        message: format!("{} layers carry no weights", layer.kind.name()),
                    })
                }
                (None, None) => {}
            }
        }
        if let Some((id, _)) = weights.iter().find(|(id, _)| !seen.contains_key(id)) {
            return Err(Error::InvalidLayer {
                layer: id,
                message: "weights bound to a layer id that is not in the graph".to_string(),
            });
        }
        Ok(ModelGraph {
            name: name.into(),
            input,
            layers,
            weights,
            shapes,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn input_shape(&self) -> &TensorShape {
        &self.input
    }

    pub fn output_shape(&self) -> &TensorShape {
        self.shapes.last().map_or(&self.input, |s| &s.output)
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn weights(&self) -> &WeightSet {
        &self.weights
    }

    pub fn params(&self, layer: u32) -> Option<&LayerParams> {
        self.weights.get(layer)
    }

    /// Per-layer input and output shapes, in chain order.
    pub fn shapes(&self) -> &[LayerShapes] {
        &self.shapes
    }

    pub fn infer_shapes(&self) -> Result<Vec<LayerShapes>> {
        infer_shapes(&self.input, &self.layers)
    }

    pub fn param_count(&self) -> usize {
        self.weights.param_count()
    }

    /// Overwrite one weight element.
    pub fn set_param(&mut self, layer: u32, kind: ParamKind, index: usize, value: f64) -> Result<()> {
        let params = self.weights.layers.get_mut(&layer).ok_or_else(|| Error::InvalidLayer {
            layer,
            message: "layer has no parameters".to_string(),
        })?;
        let tensor = params.get_mut(kind);
        let len = tensor.len();
        let slot = tensor.get_mut(index).ok_or_else(|| Error::InvalidLayer {
            layer,
            message: format!("{} index {index} out of range ({len} elements)", kind.as_str()),
        })?;
        *slot = value;
        Ok(())
    }

    /// Inference-time normalization: drops Dropout layers and a final
    /// Softmax. A Softmax anywhere else is rejected. Idempotent.
    pub fn normalize_for_hardware(&self) -> Result<ModelGraph> {
        let mut layers: Vec<LayerSpec> = self
            .layers
            .iter()
            .filter(|l| !matches!(l.kind, LayerKind::Dropout { .. }))
            .cloned()
            .collect();
        if matches!(layers.last(), Some(l) if l.kind == LayerKind::Softmax) {
            layers.pop();
        }
        if let Some(l) = layers.iter().find(|l| l.kind == LayerKind::Softmax) {
            return Err(Error::Unsupported {
                layer: Some(l.id),
                message: "Softmax is only supported as the final layer".to_string(),
            });
        }
        ModelGraph::new(self.name.clone(), self.input.clone(), layers, self.weights.clone())
    }
}

fn check_count(layer: u32, tensor: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::WeightCount {
            layer,
            tensor,
            expected,
            actual,
        })
    }
}

pub const DEFAULT_SEED: u64 = 42;

/// The four benchmark networks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Benchmark {
    Jet,
    Anomaly,
    Kws,
    Vww,
}

/// Descriptive metadata of a benchmark; the metric value is what the
/// reference training reached and is not reproduced here.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchmarkInfo {
    pub dataset: &'static str,
    pub task: &'static str,
    pub metric: &'static str,
    pub reference_value: f64,
}

impl Benchmark {
    pub const ALL: [Benchmark; 4] = [Benchmark::Jet, Benchmark::Anomaly, Benchmark::Kws, Benchmark::Vww];

    pub fn name(&self) -> &'static str {
        match self {
            Benchmark::Jet => "jet",
            Benchmark::Anomaly => "anomaly",
            Benchmark::Kws => "kws",
            Benchmark::Vww => "vww",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|b| b.name().eq_ignore_ascii_case(name))
    }

    pub fn info(&self) -> BenchmarkInfo {
        match self {
            Benchmark::Jet => BenchmarkInfo {
                dataset: "hls4ml LHC jet",
                task: "jet tagging (5 classes)",
                metric: "accuracy",
                reference_value: 0.7490,
            },
            Benchmark::Anomaly => BenchmarkInfo {
                dataset: "ToyADMOS",
                task: "anomaly detection (autoencoder)",
                metric: "AUC",
                reference_value: 0.70,
            },
            Benchmark::Kws => BenchmarkInfo {
                dataset: "Speech Commands",
                task: "keyword spotting (12 classes)",
                metric: "accuracy",
                reference_value: 0.5933,
            },
            Benchmark::Vww => BenchmarkInfo {
                dataset: "Visual Wake Words",
                task: "person detection (2 classes)",
                metric: "accuracy",
                reference_value: 0.7014,
            },
        }
    }

    pub fn input_shape(&self) -> TensorShape {
        match self {
            Benchmark::Jet => TensorShape::flat(16),
            Benchmark::Anomaly => TensorShape::flat(320),
            Benchmark::Kws => TensorShape::hwc(32, 32, 1),
            Benchmark::Vww => TensorShape::hwc(49, 10, 1),
        }
    }

    pub fn layer_kinds(&self) -> Vec<LayerKind> {
        use LayerKind::*;
        let dense = |units| Dense { units };
        let conv = |filters, k| Conv2D {
            filters,
            kernel: (k, k),
            strides: (1, 1),
            padding: Padding::Valid,
        };
        match self {
            Benchmark::Jet => vec![dense(64), ReLU, dense(32), ReLU, dense(32), ReLU, dense(5), Softmax],
            Benchmark::Anomaly => {
                let mut kinds = Vec::new();
                for units in [16, 32, 32, 8, 32, 32, 16] {
                    kinds.push(dense(units));
                    kinds.push(ReLU);
                }
                kinds.push(dense(320));
                kinds
            }
            Benchmark::Kws => vec![
                conv(16, 5),
                ReLU,
                conv(8, 3),
                ReLU,
                Dropout { rate: 0.2 },
                GlobalAveragePool2D,
                dense(12),
                Softmax,
            ],
            Benchmark::Vww => vec![
                conv(4, 3),
                ReLU,
                AveragePool2D {
                    pool: (2, 2),
                    strides: (2, 2),
                },
                conv(4, 3),
                ReLU,
                GlobalAveragePool2D,
                dense(2),
                Softmax,
            ],
        }
    }

    /// The network with weights drawn uniformly from `[-0.5, 0.5]` (rounded
    /// to `f32`) by a ChaCha8 stream seeded with `seed`, kernel then bias,
    /// layer by layer.
    pub fn graph(&self, seed: u64) -> ModelGraph {
        let input = self.input_shape();
        let mut counters = BTreeMap::<&str, usize>::new();
        let layers: Vec<LayerSpec> = self
            .layer_kinds()
            .into_iter()
            .enumerate()
            .map(|(i, kind)| {
                let prefix = match kind {
                    LayerKind::Dense { .. } => "dense",
                    LayerKind::Conv2D { .. } => "conv2d",
                    LayerKind::ReLU => "relu",
                    LayerKind::Softmax => "softmax",
                    LayerKind::AveragePool2D { .. } => "average_pooling2d",
                    LayerKind::GlobalAveragePool2D => "global_average_pooling2d",
                    LayerKind::Dropout { .. } => "dropout",
                };
                let n = counters.entry(prefix).or_default();
                *n += 1;
                LayerSpec::new(i as u32, format!("{prefix}_{n}"), kind)
            })
            .collect();
        let shapes = infer_shapes(&input, &layers).expect("builtin architectures are well-formed");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = WeightSet::new();
        for (layer, shape) in layers.iter().zip(&shapes) {
            if let Some((kernel, bias)) = param_shape(&layer.kind, &shape.input) {
                let kernel = (0..kernel).map(|_| uniform_half(&mut rng)).collect();
                let bias = (0..bias).map(|_| uniform_half(&mut rng)).collect();
                weights.insert(layer.id, LayerParams { kernel, bias });
            }
        }
        ModelGraph::new(self.name(), input, layers, weights).expect("builtin architectures are well-formed")
    }
}

impl fmt::Display for Benchmark {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn uniform_half(rng: &mut ChaCha8Rng) -> f64 {
    let unit = (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
    f64::from((unit - 0.5) as f32)
}

/// `count` inputs of `len` elements drawn uniformly from `[-1, 1]` (rounded
/// to `f32`) by a ChaCha8 stream seeded with `seed`.
pub fn sample_inputs(len: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            (0..len)
                .map(|_| f64::from((2.0 * uniform_half(&mut rng)) as f32))
                .collect()
        })
        .collect()
}

/// Jet, Anomaly, KWS and VWW with the default seed.
pub fn builtin_benchmarks() -> Vec<ModelGraph> {
    Benchmark::ALL.iter().map(|b| b.graph(DEFAULT_SEED)).collect()
}

/// Look up a built-in benchmark by name, default seed.
pub fn builtin(name: &str) -> Option<ModelGraph> {
    Benchmark::from_name(name).map(|b| b.graph(DEFAULT_SEED))
}
