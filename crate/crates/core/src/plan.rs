//! Fused streaming-stage plan of a normalized graph.
//!
//! Each compute layer (Dense, Conv2D, AveragePool2D, GlobalAveragePool2D)
//! becomes one stage; a ReLU folds into the stage that produces its input.
//! A ReLU with no producer (first layer) is a stage of its own. Parameters
//! are laid out in a flat word space in layer order, kernel before bias, in
//! canonical element order: this is the register map.
//!
//! The plan has a line-based text form that is emitted with every generated
//! project and can be parsed back, so a project alone is enough to rebuild
//! and execute the pipeline.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write as _;

use ethnum::I256;

use crate::error::{Error, Result};
use crate::fixed::{self, FixedFormat, WideAccumulator};
use crate::model::{window_extent, LayerKind, LayerShapes, ModelGraph, Padding, ParamKind};

/// Geometry of a 2-D sliding window over an HWC tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Window {
    pub in_h: usize,
    pub in_w: usize,
    pub channels: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub kernel: (usize, usize),
    pub strides: (usize, usize),
    pub pad: (usize, usize),
}

impl Window {
    pub fn new(shapes: &LayerShapes, kernel: (usize, usize), strides: (usize, usize), padding: Padding) -> Self {
        let (in_h, in_w, channels) = shapes.input.as_hwc().expect("validated HWC input");
        let (out_h, pad_top) = window_extent(in_h, kernel.0, strides.0, padding).expect("validated extent");
        let (out_w, pad_left) = window_extent(in_w, kernel.1, strides.1, padding).expect("validated extent");
        Window {
            in_h,
            in_w,
            channels,
            out_h,
            out_w,
            kernel,
            strides,
            pad: (pad_top, pad_left),
        }
    }

    #[inline]
    fn source(o: usize, k: usize, stride: usize, pad: usize, extent: usize) -> Option<usize> {
        (o * stride + k).checked_sub(pad).filter(|&i| i < extent)
    }

    /// Input row for output row `oh` and kernel row `ky`; `None` inside the
    /// zero padding.
    #[inline]
    pub fn row(&self, oh: usize, ky: usize) -> Option<usize> {
        Self::source(oh, ky, self.strides.0, self.pad.0, self.in_h)
    }

    #[inline]
    pub fn col(&self, ow: usize, kx: usize) -> Option<usize> {
        Self::source(ow, kx, self.strides.1, self.pad.1, self.in_w)
    }

    pub fn in_len(&self) -> usize {
        self.in_h * self.in_w * self.channels
    }

    pub fn taps(&self) -> usize {
        self.kernel.0 * self.kernel.1
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum StageOp {
    Dense {
        inputs: usize,
        units: usize,
    },
    Conv2D {
        window: Window,
        filters: usize,
    },
    AveragePool {
        window: Window,
    },
    GlobalAveragePool {
        height: usize,
        width: usize,
        channels: usize,
    },
    Relu {
        len: usize,
    },
}

impl StageOp {
    pub fn tag(&self) -> &'static str {
        match self {
            StageOp::Dense { .. } => "dense",
            StageOp::Conv2D { .. } => "conv2d",
            StageOp::AveragePool { .. } => "avgpool",
            StageOp::GlobalAveragePool { .. } => "gap",
            StageOp::Relu { .. } => "relu",
        }
    }
}

/// A contiguous range of register words.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamSlot {
    pub base: u32,
    pub len: u32,
}

impl ParamSlot {
    pub fn end(&self) -> u32 {
        self.base + self.len
    }

    pub fn range(&self) -> core::ops::Range<usize> {
        self.base as usize..self.end() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Stage {
    pub name: String,
    /// Source layer ids: the producing layer first, then any fused ReLU.
    pub layers: Vec<u32>,
    pub op: StageOp,
    pub relu: bool,
    pub kernel: Option<ParamSlot>,
    pub bias: Option<ParamSlot>,
}

impl Stage {
    pub fn in_elems(&self) -> usize {
        match &self.op {
            StageOp::Dense { inputs, .. } => *inputs,
            StageOp::Conv2D { window, .. } | StageOp::AveragePool { window } => window.in_len(),
            StageOp::GlobalAveragePool {
                height,
                width,
                channels,
            } => height * width * channels,
            StageOp::Relu { len } => *len,
        }
    }

    pub fn out_elems(&self) -> usize {
        match &self.op {
            StageOp::Dense { units, .. } => *units,
            StageOp::Conv2D { window, filters } => window.out_h * window.out_w * filters,
            StageOp::AveragePool { window } => window.out_h * window.out_w * window.channels,
            StageOp::GlobalAveragePool { channels, .. } => *channels,
            StageOp::Relu { len } => *len,
        }
    }

    /// Terms summed per output element.
    pub fn fan_in(&self) -> usize {
        match &self.op {
            StageOp::Dense { inputs, .. } => *inputs,
            StageOp::Conv2D { window, .. } => window.taps() * window.channels,
            StageOp::AveragePool { window } => window.taps(),
            StageOp::GlobalAveragePool { height, width, .. } => height * width,
            StageOp::Relu { .. } => 1,
        }
    }

    /// Distinct weight multiplications per inference: Dense `in * out`,
    /// Conv2D `kh * kw * cin * cout` (one engine slides over all pixels).
    pub fn weight_mults(&self) -> usize {
        match &self.op {
            StageOp::Dense { inputs, units } => inputs * units,
            StageOp::Conv2D { window, filters } => window.taps() * window.channels * filters,
            _ => 0,
        }
    }

    /// Multiplies executed per inference, counting every output pixel.
    pub fn total_mults(&self) -> usize {
        match &self.op {
            StageOp::Conv2D { window, .. } => self.weight_mults() * window.out_h * window.out_w,
            StageOp::AveragePool { .. } | StageOp::GlobalAveragePool { .. } => self.out_elems(),
            _ => self.weight_mults(),
        }
    }

    pub fn param_words(&self) -> u32 {
        self.kernel.map_or(0, |s| s.len) + self.bias.map_or(0, |s| s.len)
    }

    pub fn accumulator(&self, format: FixedFormat) -> FixedFormat {
        format.accumulator_for(self.fan_in())
    }
}

/// One register-map entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RegisterEntry {
    pub layer: u32,
    pub kind: ParamKind,
    pub elements: (u32, u32),
    pub words: (u32, u32),
}

/// Register map of all parameters: one element per bus word, contiguous in
/// emission order.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RegisterMap {
    pub word_bits: u32,
    pub entries: Vec<RegisterEntry>,
}

impl RegisterMap {
    pub fn total_words(&self) -> u32 {
        self.entries.last().map_or(0, |e| e.words.1)
    }

    /// Entry containing `address`.
    pub fn locate(&self, address: u32) -> Option<&RegisterEntry> {
        let i = self.entries.partition_point(|e| e.words.1 <= address);
        self.entries.get(i).filter(|e| e.words.0 <= address)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct StagePlan {
    pub model: String,
    pub format: FixedFormat,
    pub input_len: usize,
    pub stages: Vec<Stage>,
}

impl StagePlan {
    /// Fuse a normalized graph into stages. Fails on layer kinds that have no
    /// streaming stage (Softmax, Dropout).
    pub fn build(graph: &ModelGraph, format: FixedFormat) -> Result<Self> {
        let mut stages: Vec<Stage> = Vec::new();
        let mut next_word = 0u32;
        let mut slot = |len: usize| {
            let s = ParamSlot {
                base: next_word,
                len: len as u32,
            };
            next_word += len as u32;
            s
        };
        for (layer, shapes) in graph.layers().iter().zip(graph.shapes()) {
            let op = match layer.kind {
                LayerKind::Dense { units } => StageOp::Dense {
                    inputs: shapes.input.len(),
                    units,
                },
                LayerKind::Conv2D {
                    filters,
                    kernel,
                    strides,
                    padding,
                } => StageOp::Conv2D {
                    window: Window::new(shapes, kernel, strides, padding),
                    filters,
                },
                LayerKind::AveragePool2D { pool, strides } => StageOp::AveragePool {
                    window: Window::new(shapes, pool, strides, Padding::Valid),
                },
                LayerKind::GlobalAveragePool2D => {
                    let (height, width, channels) = shapes.input.as_hwc().expect("validated HWC input");
                    StageOp::GlobalAveragePool {
                        height,
                        width,
                        channels,
                    }
                }
                LayerKind::ReLU => match stages.last_mut() {
                    Some(producer) => {
                        producer.relu = true;
                        producer.layers.push(layer.id);
                        continue;
                    }
                    None => StageOp::Relu {
                        len: shapes.input.len(),
                    },
                },
                LayerKind::Softmax | LayerKind::Dropout { .. } => {
                    return Err(Error::Unsupported {
                        layer: Some(layer.id),
                        message: format!(
                            "{} has no streaming stage; normalize the graph first",
                            layer.kind.name()
                        ),
                    })
                }
            };
            let (kernel, bias) = match graph.params(layer.id) {
                Some(p) => (Some(slot(p.kernel.len())), Some(slot(p.bias.len()))),
                None => (None, None),
            };
            stages.push(Stage {
                name: layer.name.clone(),
                layers: vec![layer.id],
                relu: matches!(op, StageOp::Relu { .. }),
                op,
                kernel,
                bias,
            });
        }
        Ok(StagePlan {
            model: graph.name().to_string(),
            format,
            input_len: graph.input_shape().len(),
            stages,
        })
    }

    pub fn total_words(&self) -> u32 {
        self.stages
            .iter()
            .flat_map(|s| [s.kernel, s.bias])
            .flatten()
            .map(|s| s.end())
            .max()
            .unwrap_or(0)
    }

    pub fn output_len(&self) -> usize {
        self.stages.last().map_or(self.input_len, Stage::out_elems)
    }

    pub fn register_map(&self) -> RegisterMap {
        let mut entries = Vec::new();
        for stage in &self.stages {
            for (kind, slot) in [(ParamKind::Kernel, stage.kernel), (ParamKind::Bias, stage.bias)] {
                if let Some(slot) = slot {
                    entries.push(RegisterEntry {
                        layer: stage.layers[0],
                        kind,
                        elements: (0, slot.len),
                        words: (slot.base, slot.end()),
                    });
                }
            }
        }
        RegisterMap {
            word_bits: self.format.bus_word_bits(),
            entries,
        }
    }

    /// Quantized register image of the graph's parameters.
    pub fn register_image(&self, graph: &ModelGraph) -> Vec<i64> {
        let mut image = vec![0; self.total_words() as usize];
        for stage in &self.stages {
            let Some(params) = graph.params(stage.layers[0]) else {
                continue;
            };
            for (kind, slot) in [(ParamKind::Kernel, stage.kernel), (ParamKind::Bias, stage.bias)] {
                if let Some(slot) = slot {
                    for (word, &v) in image[slot.range()].iter_mut().zip(params.get(kind)) {
                        *word = fixed::quantize_raw(v, self.format);
                    }
                }
            }
        }
        image
    }

    /// Text description, one stage per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "snl-stages 1");
        let _ = writeln!(out, "model {}", self.model);
        let _ = writeln!(out, "precision {}", self.format);
        let _ = writeln!(out, "input {}", self.input_len);
        let _ = writeln!(out, "words {}", self.total_words());
        for (i, s) in self.stages.iter().enumerate() {
            let _ = write!(out, "stage {i} {} name={} layers=", s.op.tag(), s.name);
            for (k, id) in s.layers.iter().enumerate() {
                let _ = write!(out, "{}{id}", if k > 0 { "," } else { "" });
            }
            match &s.op {
                StageOp::Dense { inputs, units } => {
                    let _ = write!(out, " in={inputs} out={units}");
                }
                StageOp::Conv2D { window, filters } => {
                    write_window(&mut out, window);
                    let _ = write!(out, " filters={filters}");
                }
                StageOp::AveragePool { window } => write_window(&mut out, window),
                StageOp::GlobalAveragePool {
                    height,
                    width,
                    channels,
                } => {
                    let _ = write!(out, " in={height}x{width}x{channels}");
                }
                StageOp::Relu { len } => {
                    let _ = write!(out, " in={len}");
                }
            }
            let _ = write!(out, " relu={}", u8::from(s.relu));
            if let Some(k) = s.kernel {
                let _ = write!(out, " kernel={}+{}", k.base, k.len);
            }
            if let Some(b) = s.bias {
                let _ = write!(out, " bias={}+{}", b.base, b.len);
            }
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut model = None;
        let mut format = None;
        let mut input_len = None;
        let mut words = None;
        let mut stages = Vec::new();
        let mut saw_header = false;
        for (n, line) in text.lines().enumerate() {
            let line_no = n + 1;
            let bad = |message: String| Error::MalformedPlan { line: line_no, message };
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (head, rest) = line.split_once(' ').unwrap_or((line, ""));
            match head {
                "snl-stages" if rest == "1" => saw_header = true,
                "snl-stages" => return Err(bad(format!("unsupported version `{rest}`"))),
                _ if !saw_header => return Err(bad("missing `snl-stages 1` header".to_string())),
                "model" => model = Some(rest.to_string()),
                "precision" => format = Some(rest.parse::<FixedFormat>().map_err(|e| bad(e.to_string()))?),
                "input" => input_len = Some(parse_usize(rest).map_err(bad)?),
                "words" => words = Some(parse_usize(rest).map_err(bad)?),
                "stage" => {
                    let stage = parse_stage(rest).map_err(bad)?;
                    if stage.0 != stages.len() {
                        return Err(bad(format!("stage index {} out of order", stage.0)));
                    }
                    stages.push(stage.1);
                }
                other => return Err(bad(format!("unknown directive `{other}`"))),
            }
        }
        let missing = |what: &str| Error::MalformedPlan {
            line: 0,
            message: format!("missing `{what}` line"),
        };
        let plan = StagePlan {
            model: model.ok_or_else(|| missing("model"))?,
            format: format.ok_or_else(|| missing("precision"))?,
            input_len: input_len.ok_or_else(|| missing("input"))?,
            stages,
        };
        plan.check(words.ok_or_else(|| missing("words"))?)?;
        Ok(plan)
    }

    /// Stream lengths chain up and parameter slots tile the word space.
    fn check(&self, words: usize) -> Result<()> {
        let fail = |message: String| Error::MalformedPlan { line: 0, message };
        let mut len = self.input_len;
        let mut next = 0u32;
        for (i, s) in self.stages.iter().enumerate() {
            if s.in_elems() != len {
                return Err(fail(format!(
                    "stage {i} consumes {} elements, producer emits {len}",
                    s.in_elems()
                )));
            }
            len = s.out_elems();
            let expected = match &s.op {
                StageOp::Dense { inputs, units } => Some((inputs * units, *units)),
                StageOp::Conv2D { filters, .. } => Some((s.weight_mults(), *filters)),
                _ => None,
            };
            let actual = match (s.kernel, s.bias) {
                (Some(k), Some(b)) => Some((k, b)),
                (None, None) => None,
                _ => return Err(fail(format!("stage {i} needs both kernel and bias slots or neither"))),
            };
            match (expected, actual) {
                (Some((kl, bl)), Some((k, b))) => {
                    if k.len as usize != kl || b.len as usize != bl || k.base != next || b.base != k.end() {
                        return Err(fail(format!("stage {i} parameter slots do not match its shape")));
                    }
                    next = b.end();
                }
                (None, None) => {}
                _ => return Err(fail(format!("stage {i} parameter slots do not match its kind"))),
            }
        }
        if next as usize != words {
            return Err(fail(format!("declared {words} words, slots cover {next}")));
        }
        Ok(())
    }

    /// Execute one stage on raw data words with parameters read from the
    /// register memory `regs`.
    pub fn execute_stage(&self, index: usize, input: &[i64], regs: &[i64]) -> Vec<i64> {
        let stage = &self.stages[index];
        let format = self.format;
        let frac = format.frac_bits();
        let acc_format = stage.accumulator(format);
        let word = |slot: Option<ParamSlot>, i: usize| regs[slot.expect("parameter slot").base as usize + i];
        let mut out = match &stage.op {
            StageOp::Dense { inputs, units } => {
                // Accumulate as elements stream in: input-major order.
                let mut accs = vec![WideAccumulator::new(2 * frac); *units];
                for (i, &x) in input.iter().enumerate().take(*inputs) {
                    let row = &regs[stage.kernel.expect("kernel slot").base as usize + i * units..][..*units];
                    for (acc, &w) in accs.iter_mut().zip(row) {
                        acc.add_product(x, w);
                    }
                }
                accs.iter()
                    .enumerate()
                    .map(|(j, acc)| add_bias(acc.finish(acc_format), word(stage.bias, j), acc_format, format))
                    .collect()
            }
            StageOp::Conv2D { window, filters } => {
                let mut out = Vec::with_capacity(stage.out_elems());
                let mut accs = vec![WideAccumulator::new(2 * frac); *filters];
                for oh in 0..window.out_h {
                    for ow in 0..window.out_w {
                        accs.iter_mut().for_each(|a| *a = WideAccumulator::new(2 * frac));
                        for ky in 0..window.kernel.0 {
                            let Some(ih) = window.row(oh, ky) else { continue };
                            for kx in 0..window.kernel.1 {
                                let Some(iw) = window.col(ow, kx) else { continue };
                                let pixel = &input[(ih * window.in_w + iw) * window.channels..][..window.channels];
                                for (c, &x) in pixel.iter().enumerate() {
                                    let tap = ((ky * window.kernel.1 + kx) * window.channels + c) * filters;
                                    let weights =
                                        &regs[stage.kernel.expect("kernel slot").base as usize + tap..][..*filters];
                                    for (acc, &w) in accs.iter_mut().zip(weights) {
                                        acc.add_product(x, w);
                                    }
                                }
                            }
                        }
                        for (f, acc) in accs.iter().enumerate() {
                            out.push(add_bias(
                                acc.finish(acc_format),
                                word(stage.bias, f),
                                acc_format,
                                format,
                            ));
                        }
                    }
                }
                out
            }
            StageOp::AveragePool { window } => {
                let reciprocal = fixed::quantize_raw(1.0 / window.taps() as f64, acc_format);
                let mut out = Vec::with_capacity(stage.out_elems());
                for oh in 0..window.out_h {
                    for ow in 0..window.out_w {
                        for c in 0..window.channels {
                            let mut acc = WideAccumulator::new(frac);
                            for ky in 0..window.kernel.0 {
                                for kx in 0..window.kernel.1 {
                                    let (ih, iw) = (oh * window.strides.0 + ky, ow * window.strides.1 + kx);
                                    acc.add_i128(i128::from(input[(ih * window.in_w + iw) * window.channels + c]));
                                }
                            }
                            out.push(scale_mean(acc.finish(acc_format), reciprocal, acc_format, format));
                        }
                    }
                }
                out
            }
            StageOp::GlobalAveragePool {
                height,
                width,
                channels,
            } => {
                let reciprocal = fixed::quantize_raw(1.0 / (height * width) as f64, acc_format);
                (0..*channels)
                    .map(|c| {
                        let mut acc = WideAccumulator::new(frac);
                        for v in input.iter().skip(c).step_by(*channels) {
                            acc.add_i128(i128::from(*v));
                        }
                        scale_mean(acc.finish(acc_format), reciprocal, acc_format, format)
                    })
                    .collect()
            }
            StageOp::Relu { .. } => input.to_vec(),
        };
        if stage.relu {
            out.iter_mut().for_each(|v| *v = (*v).max(0));
        }
        out
    }

    /// Run all stages back to back on a raw input.
    pub fn execute(&self, input: &[i64], regs: &[i64]) -> Result<Vec<i64>> {
        if input.len() != self.input_len {
            return Err(Error::ShapeMismatch {
                expected: self.input_len,
                actual: input.len(),
            });
        }
        if regs.len() < self.total_words() as usize {
            return Err(Error::AddressOutOfRange {
                address: regs.len() as u32,
                bound: self.total_words(),
            });
        }
        let mut x = input.to_vec();
        for i in 0..self.stages.len() {
            x = self.execute_stage(i, &x, regs);
        }
        Ok(x)
    }
}

fn add_bias(sum: i64, bias: i64, acc_format: FixedFormat, format: FixedFormat) -> i64 {
    let frac = acc_format.frac_bits() as i32;
    let acc = fixed::fit(I256::new(i128::from(sum) + i128::from(bias)), frac, acc_format);
    fixed::fit(I256::new(i128::from(acc)), frac, format)
}

fn scale_mean(sum: i64, reciprocal: i64, acc_format: FixedFormat, format: FixedFormat) -> i64 {
    let frac = 2 * acc_format.frac_bits() as i32;
    fixed::fit(I256::new(i128::from(sum) * i128::from(reciprocal)), frac, format)
}

fn write_window(out: &mut String, w: &Window) {
    let _ = write!(
        out,
        " in={}x{}x{} out={}x{} k={}x{} s={}x{} pad={}x{}",
        w.in_h,
        w.in_w,
        w.channels,
        w.out_h,
        w.out_w,
        w.kernel.0,
        w.kernel.1,
        w.strides.0,
        w.strides.1,
        w.pad.0,
        w.pad.1
    );
}

fn parse_usize(s: &str) -> core::result::Result<usize, String> {
    s.trim()
        .parse()
        .map_err(|_| format!("expected an unsigned integer, got `{s}`"))
}

fn parse_dims<const N: usize>(s: &str) -> core::result::Result<[usize; N], String> {
    let mut dims = [0; N];
    let mut parts = s.split('x');
    for d in dims.iter_mut() {
        *d = parse_usize(parts.next().ok_or_else(|| format!("expected {N} dims in `{s}`"))?)?;
    }
    if parts.next().is_some() {
        return Err(format!("expected {N} dims in `{s}`"));
    }
    Ok(dims)
}

fn parse_slot(s: &str) -> core::result::Result<ParamSlot, String> {
    let (base, len) = s
        .split_once('+')
        .ok_or_else(|| format!("expected BASE+LEN, got `{s}`"))?;
    Ok(ParamSlot {
        base: parse_usize(base)? as u32,
        len: parse_usize(len)? as u32,
    })
}

fn parse_stage(rest: &str) -> core::result::Result<(usize, Stage), String> {
    let mut tokens = rest.split_whitespace();
    let index = parse_usize(tokens.next().ok_or("missing stage index")?)?;
    let tag = tokens.next().ok_or("missing stage kind")?;
    let mut fields: Vec<(&str, &str)> = Vec::new();
    for t in tokens {
        let kv = t
            .split_once('=')
            .ok_or_else(|| format!("expected key=value, got `{t}`"))?;
        fields.push(kv);
    }
    let get = |key: &str| {
        fields
            .iter()
            .find(|(k, _)| *k == key)
            .map(|(_, v)| *v)
            .ok_or_else(|| format!("stage {index}: missing `{key}`"))
    };
    let window = || -> core::result::Result<Window, String> {
        let [in_h, in_w, channels] = parse_dims::<3>(get("in")?)?;
        let [out_h, out_w] = parse_dims::<2>(get("out")?)?;
        let k = parse_dims::<2>(get("k")?)?;
        let s = parse_dims::<2>(get("s")?)?;
        let pad = parse_dims::<2>(get("pad")?)?;
        if k.contains(&0) || s.contains(&0) || [in_h, in_w, channels, out_h, out_w].contains(&0) {
            return Err(format!("stage {index}: zero extent"));
        }
        let w = Window {
            in_h,
            in_w,
            channels,
            out_h,
            out_w,
            kernel: (k[0], k[1]),
            strides: (s[0], s[1]),
            pad: (pad[0], pad[1]),
        };
        // every output position must see at least one real input row/column
        if (w.out_h - 1) * w.strides.0 >= w.in_h + w.pad.0 || (w.out_w - 1) * w.strides.1 >= w.in_w + w.pad.1 {
            return Err(format!("stage {index}: output extent exceeds input"));
        }
        Ok(w)
    };
    let op = match tag {
        "dense" => StageOp::Dense {
            inputs: parse_usize(get("in")?)?,
            units: parse_usize(get("out")?)?,
        },
        "conv2d" => StageOp::Conv2D {
            window: window()?,
            filters: parse_usize(get("filters")?)?,
        },
        "avgpool" => {
            let w = window()?;
            if w.pad != (0, 0)
                || (w.out_h - 1) * w.strides.0 + w.kernel.0 > w.in_h
                || (w.out_w - 1) * w.strides.1 + w.kernel.1 > w.in_w
            {
                return Err(format!("stage {index}: pooling window leaves the input"));
            }
            StageOp::AveragePool { window: w }
        }
        "gap" => {
            let [height, width, channels] = parse_dims::<3>(get("in")?)?;
            StageOp::GlobalAveragePool {
                height,
                width,
                channels,
            }
        }
        "relu" => StageOp::Relu {
            len: parse_usize(get("in")?)?,
        },
        other => return Err(format!("unknown stage kind `{other}`")),
    };
    let layers = get("layers")?
        .split(',')
        .map(|s| parse_usize(s).map(|v| v as u32))
        .collect::<core::result::Result<Vec<_>, _>>()?;
    let relu = match get("relu")? {
        "0" => false,
        "1" => true,
        other => return Err(format!("relu must be 0 or 1, got `{other}`")),
    };
    let kernel = fields
        .iter()
        .find(|(k, _)| *k == "kernel")
        .map(|(_, v)| parse_slot(v))
        .transpose()?;
    let bias = fields
        .iter()
        .find(|(k, _)| *k == "bias")
        .map(|(_, v)| parse_slot(v))
        .transpose()?;
    let stage = Stage {
        name: get("name")?.to_string(),
        layers,
        op,
        relu,
        kernel,
        bias,
    };
    if stage.in_elems() == 0 || stage.out_elems() == 0 {
        return Err(format!("stage {index}: zero extent"));
    }
    Ok((index, stage))
}
