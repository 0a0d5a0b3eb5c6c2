//! Reference inference: real-valued and bit-exact fixed point.
//!
//! The fixed-point path quantizes inputs, weights and biases to one data
//! format. Every dot product is summed exactly and fitted once into the
//! layer's accumulator format ([`FixedFormat::accumulator_for`]), the bias is
//! added in that format, and the result is resized back to the data format.
//! Average pooling sums its window in the accumulator format and multiplies
//! by the window reciprocal quantized at that same format.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::fixed::{self, FixedFormat, WideAccumulator};
use crate::model::{LayerKind, ModelGraph, Padding, ParamKind};
use crate::plan::Window;

fn check_input(graph: &ModelGraph, input_len: usize) -> Result<()> {
    let expected = graph.input_shape().len();
    if input_len == expected {
        Ok(())
    } else {
        Err(Error::ShapeMismatch {
            expected,
            actual: input_len,
        })
    }
}

/// Real-valued inference.
pub fn run_float(graph: &ModelGraph, input: &[f64]) -> Result<Vec<f64>> {
    check_input(graph, input.len())?;
    let mut x = input.to_vec();
    for (layer, shapes) in graph.layers().iter().zip(graph.shapes()) {
        x = match layer.kind {
            LayerKind::Dense { units } => {
                let p = graph.params(layer.id).expect("validated weights");
                (0..units)
                    .map(|j| {
                        let mut acc = p.bias[j];
                        for (i, xi) in x.iter().enumerate() {
                            acc += xi * p.kernel[i * units + j];
                        }
                        acc
                    })
                    .collect()
            }
            LayerKind::Conv2D {
                filters,
                kernel,
                strides,
                padding,
            } => {
                let p = graph.params(layer.id).expect("validated weights");
                let win = Window::new(shapes, kernel, strides, padding);
                let mut out = Vec::with_capacity(win.out_h * win.out_w * filters);
                for oh in 0..win.out_h {
                    for ow in 0..win.out_w {
                        for f in 0..filters {
                            let mut acc = p.bias[f];
                            for ky in 0..kernel.0 {
                                let Some(ih) = win.row(oh, ky) else { continue };
                                for kx in 0..kernel.1 {
                                    let Some(iw) = win.col(ow, kx) else { continue };
                                    for c in 0..win.channels {
                                        let k = ((ky * kernel.1 + kx) * win.channels + c) * filters + f;
                                        acc += x[(ih * win.in_w + iw) * win.channels + c] * p.kernel[k];
                                    }
                                }
                            }
                            out.push(acc);
                        }
                    }
                }
                out
            }
            LayerKind::AveragePool2D { pool, strides } => {
                let win = Window::new(shapes, pool, strides, Padding::Valid);
                let scale = 1.0 / (pool.0 * pool.1) as f64;
                let mut out = Vec::with_capacity(win.out_h * win.out_w * win.channels);
                for oh in 0..win.out_h {
                    for ow in 0..win.out_w {
                        for c in 0..win.channels {
                            let mut acc = 0.0;
                            for ky in 0..pool.0 {
                                for kx in 0..pool.1 {
                                    let (ih, iw) = (oh * strides.0 + ky, ow * strides.1 + kx);
                                    acc += x[(ih * win.in_w + iw) * win.channels + c];
                                }
                            }
                            out.push(acc * scale);
                        }
                    }
                }
                out
            }
            LayerKind::GlobalAveragePool2D => {
                let (h, w, c) = shapes.input.as_hwc().expect("validated HWC input");
                let mut sums = vec![0.0; c];
                for (i, v) in x.iter().enumerate() {
                    sums[i % c] += v;
                }
                let n = (h * w) as f64;
                sums.into_iter().map(|s| s / n).collect()
            }
            LayerKind::ReLU => x.into_iter().map(|v| v.max(0.0)).collect(),
            LayerKind::Softmax => softmax(&x),
            LayerKind::Dropout { .. } => x,
        };
    }
    Ok(x)
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|v| libm::exp(v - max)).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Fixed-point inference result.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedOutput {
    pub format: FixedFormat,
    pub raw: Vec<i64>,
}

impl QuantizedOutput {
    pub fn values(&self) -> Vec<f64> {
        self.raw.iter().map(|&r| fixed::raw_to_f64(r, self.format)).collect()
    }
}

/// Quantize a real tensor element-wise.
pub fn quantize_tensor(values: &[f64], format: FixedFormat) -> Vec<i64> {
    values.iter().map(|&v| fixed::quantize_raw(v, format)).collect()
}

/// Bit-exact fixed-point inference on a real input.
pub fn run_quantized(graph: &ModelGraph, input: &[f64], format: FixedFormat) -> Result<QuantizedOutput> {
    check_input(graph, input.len())?;
    run_quantized_raw(graph, &quantize_tensor(input, format), format)
}

/// Bit-exact fixed-point inference on an already quantized input.
///
/// Softmax has no fixed-point form here; normalize the graph first.
pub fn run_quantized_raw(graph: &ModelGraph, input: &[i64], format: FixedFormat) -> Result<QuantizedOutput> {
    check_input(graph, input.len())?;
    let frac = format.frac_bits();
    let mut x = input.to_vec();
    for (layer, shapes) in graph.layers().iter().zip(graph.shapes()) {
        x = match layer.kind {
            LayerKind::Dense { units } => {
                let kernel = quantized_param(graph, layer.id, ParamKind::Kernel, format);
                let bias = quantized_param(graph, layer.id, ParamKind::Bias, format);
                let acc_format = format.accumulator_for(x.len());
                (0..units)
                    .map(|j| {
                        let mut acc = WideAccumulator::new(2 * frac);
                        for (i, &xi) in x.iter().enumerate() {
                            acc.add_product(xi, kernel[i * units + j]);
                        }
                        finish_with_bias(&acc, bias[j], acc_format, format)
                    })
                    .collect()
            }
            LayerKind::Conv2D {
                filters,
                kernel: kernel_size,
                strides,
                padding,
            } => {
                let kernel = quantized_param(graph, layer.id, ParamKind::Kernel, format);
                let bias = quantized_param(graph, layer.id, ParamKind::Bias, format);
                let win = Window::new(shapes, kernel_size, strides, padding);
                let acc_format = format.accumulator_for(kernel_size.0 * kernel_size.1 * win.channels);
                let mut out = Vec::with_capacity(win.out_h * win.out_w * filters);
                for oh in 0..win.out_h {
                    for ow in 0..win.out_w {
                        for (f, &b) in bias.iter().enumerate().take(filters) {
                            let mut acc = WideAccumulator::new(2 * frac);
                            for ky in 0..kernel_size.0 {
                                let Some(ih) = win.row(oh, ky) else { continue };
                                for kx in 0..kernel_size.1 {
                                    let Some(iw) = win.col(ow, kx) else { continue };
                                    for c in 0..win.channels {
                                        let k = ((ky * kernel_size.1 + kx) * win.channels + c) * filters + f;
                                        acc.add_product(x[(ih * win.in_w + iw) * win.channels + c], kernel[k]);
                                    }
                                }
                            }
                            out.push(finish_with_bias(&acc, b, acc_format, format));
                        }
                    }
                }
                out
            }
            LayerKind::AveragePool2D { pool, strides } => {
                let win = Window::new(shapes, pool, strides, Padding::Valid);
                let averager = Averager::new(pool.0 * pool.1, format);
                let mut out = Vec::with_capacity(win.out_h * win.out_w * win.channels);
                for oh in 0..win.out_h {
                    for ow in 0..win.out_w {
                        for c in 0..win.channels {
                            let mut acc = WideAccumulator::new(frac);
                            for ky in 0..pool.0 {
                                for kx in 0..pool.1 {
                                    let (ih, iw) = (oh * strides.0 + ky, ow * strides.1 + kx);
                                    acc.add_i128(i128::from(x[(ih * win.in_w + iw) * win.channels + c]));
                                }
                            }
                            out.push(averager.apply(&acc));
                        }
                    }
                }
                out
            }
            LayerKind::GlobalAveragePool2D => {
                let (h, w, c) = shapes.input.as_hwc().expect("validated HWC input");
                let averager = Averager::new(h * w, format);
                let mut sums = vec![WideAccumulator::new(frac); c];
                for (i, &v) in x.iter().enumerate() {
                    sums[i % c].add_i128(i128::from(v));
                }
                sums.iter().map(|acc| averager.apply(acc)).collect()
            }
            LayerKind::ReLU => x.into_iter().map(|v| v.max(0)).collect(),
            LayerKind::Dropout { .. } => x,
            LayerKind::Softmax => {
                return Err(Error::Unsupported {
                    layer: Some(layer.id),
                    message: format!("{} has no fixed-point implementation", layer.kind.name()),
                })
            }
        };
    }
    Ok(QuantizedOutput { format, raw: x })
}

fn quantized_param(graph: &ModelGraph, layer: u32, kind: ParamKind, format: FixedFormat) -> Vec<i64> {
    let params = graph.params(layer).expect("validated weights");
    quantize_tensor(params.get(kind), format)
}

/// Fit an exact dot product (scaled `2F`) into the accumulator format, add
/// the bias there and resize to the data format.
fn finish_with_bias(acc: &WideAccumulator, bias: i64, acc_format: FixedFormat, format: FixedFormat) -> i64 {
    let sum = acc.finish(acc_format);
    let with_bias = fixed::fit(
        ethnum::I256::new(i128::from(sum) + i128::from(bias)),
        acc_format.frac_bits() as i32,
        acc_format,
    );
    fixed::fit(
        ethnum::I256::new(i128::from(with_bias)),
        acc_format.frac_bits() as i32,
        format,
    )
}

/// Window mean in fixed point: sum in the accumulator format, multiply by the
/// reciprocal quantized at that format, fit into the data format.
struct Averager {
    acc_format: FixedFormat,
    format: FixedFormat,
    reciprocal: i64,
}

impl Averager {
    fn new(window: usize, format: FixedFormat) -> Self {
        let acc_format = format.accumulator_for(window);
        Averager {
            acc_format,
            format,
            reciprocal: fixed::quantize_raw(1.0 / window as f64, acc_format),
        }
    }

    fn apply(&self, acc: &WideAccumulator) -> i64 {
        let sum = acc.finish(self.acc_format);
        let product = i128::from(sum) * i128::from(self.reciprocal);
        fixed::fit(
            ethnum::I256::new(product),
            2 * self.acc_format.frac_bits() as i32,
            self.format,
        )
    }
}

/// Index of the largest element; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in values.iter().enumerate() {
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i)
}

/// How a dataset's labels are scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    /// Labels are class indices; top-1 accuracy over the output argmax.
    Classification,
    /// Labels are 0/1; AUC over the output element at `index`.
    BinaryScore { index: usize },
    /// Labels are 0 (normal) / 1 (anomalous); AUC over the mean squared
    /// reconstruction error between output and input.
    Reconstruction,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub task: Task,
    pub samples: Vec<(Vec<f64>, f64)>,
}

/// Arithmetic used for an evaluation run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Numerics {
    Float,
    Fixed(FixedFormat),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalMetrics {
    pub accuracy: Option<f64>,
    pub auc: Option<f64>,
    /// Largest element-wise deviation from the real-valued reference of the
    /// normalized graph; zero for float runs.
    pub max_abs_error: f64,
}

/// Score a graph on a labelled dataset.
///
/// Fixed-point runs execute the hardware-normalized graph (no Dropout, no
/// final Softmax); argmax is unaffected by the missing Softmax.
pub fn evaluate(graph: &ModelGraph, dataset: &Dataset, numerics: Numerics) -> Result<EvalMetrics> {
    if dataset.samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let normalized = graph.normalize_for_hardware()?;
    let mut correct = 0usize;
    let mut scores = Vec::with_capacity(dataset.samples.len());
    let mut max_abs_error = 0.0f64;
    for (input, label) in &dataset.samples {
        let output = match numerics {
            Numerics::Float => run_float(graph, input)?,
            Numerics::Fixed(format) => {
                let reference = run_float(&normalized, input)?;
                let out = run_quantized(&normalized, input, format)?.values();
                for (q, r) in out.iter().zip(&reference) {
                    max_abs_error = max_abs_error.max((q - r).abs());
                }
                out
            }
        };
        match dataset.task {
            Task::Classification => {
                if argmax(&output).map(|i| i as f64) == Some(*label) {
                    correct += 1;
                }
            }
            Task::BinaryScore { index } => {
                let score = *output.get(index).ok_or(Error::ShapeMismatch {
                    expected: index + 1,
                    actual: output.len(),
                })?;
                scores.push((score, *label != 0.0));
            }
            Task::Reconstruction => {
                if output.len() != input.len() {
                    return Err(Error::ShapeMismatch {
                        expected: input.len(),
                        actual: output.len(),
                    });
                }
                let mse = output.iter().zip(input).map(|(o, i)| (o - i) * (o - i)).sum::<f64>() / input.len() as f64;
                scores.push((mse, *label != 0.0));
            }
        }
    }
    let n = dataset.samples.len() as f64;
    Ok(match dataset.task {
        Task::Classification => EvalMetrics {
            accuracy: Some(correct as f64 / n),
            auc: None,
            max_abs_error,
        },
        _ => EvalMetrics {
            accuracy: None,
            auc: auc(&scores),
            max_abs_error,
        },
    })
}

/// Mann-Whitney AUC with midranks for tied scores. `None` unless both classes
/// are present.
pub fn auc(scored: &[(f64, bool)]) -> Option<f64> {
    let positives = scored.iter().filter(|(_, p)| *p).count();
    let negatives = scored.len() - positives;
    if positives == 0 || negatives == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scored.len()).collect();
    order.sort_by(|&a, &b| scored[a].0.total_cmp(&scored[b].0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scored[order[j + 1]].0 == scored[order[i]].0 {
            j += 1;
        }
        // ranks are 1-based: positions i..=j share the mean rank
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += midrank * order[i..=j].iter().filter(|&&k| scored[k].1).count() as f64;
        i = j + 1;
    }
    let p = positives as f64;
    Some((rank_sum - p * (p + 1.0) / 2.0) / (p * negatives as f64))
}
