//! HLS-style project emission for the runtime-weight backend.
//!
//! Compute sources depend only on the architecture and precision. Every
//! parameter is read through `regs[BASE + index]`, so the generated kernels
//! contain no weight values; those live in `weights.dat` and are written
//! over the register interface at run time. Output is byte-for-byte
//! deterministic for a given graph and configuration.
//!
//! A project carries its own stage description (`stages.txt`) and weight
//! image, which is all [`GeneratedProject::interpret`] needs to execute it.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write as _;

use crate::digest::sha256_hex;
use crate::error::{Error, Result};
use crate::fixed::{FixedFormat, Overflow, Rounding};
use crate::model::ModelGraph;
use crate::perf::ClockPeriod;
use crate::plan::{Stage, StageOp, StagePlan, Window};
use crate::qsim::{quantize_tensor, run_quantized_raw};

pub const DEFAULT_PART: &str = "xczu9eg-ffvb1156-2-e";

pub const STAGES_FILE: &str = "stages.txt";
pub const WEIGHTS_FILE: &str = "weights.dat";
pub const REGISTER_MAP_FILE: &str = "register_map.txt";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodegenConfig {
    pub precision: FixedFormat,
    pub clock: ClockPeriod,
    pub part: String,
    /// Project name; defaults to the model name.
    pub project: Option<String>,
}

impl CodegenConfig {
    pub fn new(precision: FixedFormat) -> Self {
        CodegenConfig {
            precision,
            clock: ClockPeriod::DEFAULT,
            part: DEFAULT_PART.to_string(),
            project: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeneratedFile {
    /// Relative, `/`-separated.
    pub path: String,
    pub contents: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeneratedProject {
    pub name: String,
    /// Sorted by path.
    pub files: Vec<GeneratedFile>,
}

impl GeneratedProject {
    pub fn get(&self, path: &str) -> Option<&str> {
        self.files.iter().find(|f| f.path == path).map(|f| f.contents.as_str())
    }

    /// Files that describe hardware: everything except weight data and the
    /// manifest that hashes it.
    pub fn compute_sources(&self) -> impl Iterator<Item = &GeneratedFile> {
        self.files
            .iter()
            .filter(|f| f.path != WEIGHTS_FILE && f.path != MANIFEST_FILE)
    }

    /// Rebuild a project from files read back from disk.
    pub fn from_files(name: impl Into<String>, mut files: Vec<GeneratedFile>) -> Self {
        files.sort_by(|a, b| a.path.cmp(&b.path));
        GeneratedProject {
            name: name.into(),
            files,
        }
    }

    pub fn plan(&self) -> Result<StagePlan> {
        StagePlan::parse(self.require(STAGES_FILE)?)
    }

    pub fn weight_image(&self) -> Result<Vec<i64>> {
        parse_weights(self.require(WEIGHTS_FILE)?)
    }

    /// Execute the project on raw input words using only its stage
    /// description and weight image.
    pub fn interpret(&self, input: &[i64]) -> Result<Vec<i64>> {
        let plan = self.plan()?;
        let image = self.weight_image()?;
        if image.len() != plan.total_words() as usize {
            return Err(Error::ShapeMismatch {
                expected: plan.total_words() as usize,
                actual: image.len(),
            });
        }
        plan.execute(input, &image)
    }

    fn require(&self, path: &str) -> Result<&str> {
        self.get(path).ok_or_else(|| Error::Unsupported {
            layer: None,
            message: format!("project has no {path}"),
        })
    }
}

/// Generate a project. The graph is normalized first; a Softmax that is not
/// the last layer is rejected.
pub fn generate(graph: &ModelGraph, cfg: &CodegenConfig) -> Result<GeneratedProject> {
    let graph = graph.normalize_for_hardware()?;
    let plan = StagePlan::build(&graph, cfg.precision)?;
    let name = identifier(cfg.project.as_deref().unwrap_or(graph.name()));
    let mut files = Vec::new();
    let mut add = |path: String, contents: String| files.push(GeneratedFile { path, contents });

    add("firmware/snl_types.h".to_string(), types_header(&plan));
    add("firmware/defines.h".to_string(), defines_header(&plan));
    for (i, stage) in plan.stages.iter().enumerate() {
        add(
            format!("firmware/layers/{}.h", stage_fn(i, stage)),
            stage_source(&plan, i),
        );
    }
    add("firmware/top.cpp".to_string(), top_source(&plan, &name));
    add("build.tcl".to_string(), build_script(&name, cfg));
    add(REGISTER_MAP_FILE.to_string(), emit_register_map(&plan));
    add(STAGES_FILE.to_string(), plan.to_text());
    add(
        WEIGHTS_FILE.to_string(),
        emit_weights(&plan, &plan.register_image(&graph)),
    );

    files.sort_by(|a, b| a.path.cmp(&b.path));
    let manifest = manifest(&name, cfg, &plan, &files);
    files.push(GeneratedFile {
        path: MANIFEST_FILE.to_string(),
        contents: manifest,
    });
    files.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(GeneratedProject { name, files })
}

/// One line per parameter tensor: layer id, tensor, element range and word
/// range (half-open).
pub fn emit_register_map(plan: &StagePlan) -> String {
    let map = plan.register_map();
    let mut out = String::new();
    let _ = writeln!(out, "# word_bits {} words {}", map.word_bits, map.total_words());
    let _ = writeln!(out, "# layer tensor elem_begin elem_end word_begin word_end");
    for e in &map.entries {
        let _ = writeln!(
            out,
            "{} {} {} {} {} {}",
            e.layer,
            e.kind.as_str(),
            e.elements.0,
            e.elements.1,
            e.words.0,
            e.words.1
        );
    }
    out
}

/// Weight image: a header line, then one raw word per line in address order.
pub fn emit_weights(plan: &StagePlan, image: &[i64]) -> String {
    let mut out = String::with_capacity(image.len() * 6 + 64);
    let _ = writeln!(out, "# snl-weights {} {} {}", plan.model, plan.format, image.len());
    for v in image {
        let _ = writeln!(out, "{v}");
    }
    out
}

pub fn parse_weights(text: &str) -> Result<Vec<i64>> {
    let mut declared = None;
    let mut words = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if let Some(header) = line.strip_prefix("# snl-weights ") {
            declared = header.rsplit(' ').next().and_then(|w| w.parse::<usize>().ok());
            continue;
        }
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        words.push(line.parse::<i64>().map_err(|_| Error::MalformedPlan {
            line: n + 1,
            message: format!("weight word {line:?} is not an integer"),
        })?);
    }
    match declared {
        Some(d) if d != words.len() => Err(Error::MalformedPlan {
            line: 1,
            message: format!("header declares {d} words, file has {}", words.len()),
        }),
        _ => Ok(words),
    }
}

/// Testbench sources for a generated project: a C++ driver, the raw input
/// vectors and the expected raw outputs.
pub fn emit_testbench(graph: &ModelGraph, cfg: &CodegenConfig, inputs: &[Vec<f64>]) -> Result<Vec<GeneratedFile>> {
    let graph = graph.normalize_for_hardware()?;
    StagePlan::build(&graph, cfg.precision)?;
    let name = identifier(cfg.project.as_deref().unwrap_or(graph.name()));
    let mut input_dat = String::new();
    let mut golden_dat = String::new();
    for x in inputs {
        let raw = quantize_tensor(x, cfg.precision);
        let y = run_quantized_raw(&graph, &raw, cfg.precision)?;
        write_row(&mut input_dat, &raw);
        write_row(&mut golden_dat, &y.raw);
    }
    let tb = format!(
        r#"#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include "../firmware/defines.h"

void {name}(hls::stream<data_t>& in, hls::stream<data_t>& out, const word_t regs[N_WORDS]);

static word_t regs[N_WORDS];

static bool load_weights(const char* path) {{
    std::ifstream f(path);
    std::string line;
    int addr = 0;
    while (std::getline(f, line)) {{
        if (line.empty() || line[0] == '#') continue;
        if (addr >= N_WORDS) return false;
        regs[addr++] = word_t(std::stoll(line));
    }}
    return addr == N_WORDS;
}}

int main() {{
    if (!load_weights("../{WEIGHTS_FILE}")) {{
        std::printf("weight image does not match N_WORDS\n");
        return 2;
    }}
    std::ifstream xin("tb_input.dat"), yexp("tb_golden.dat");
    std::string xl, yl;
    int vectors = 0, mismatches = 0;
    while (std::getline(xin, xl) && std::getline(yexp, yl)) {{
        hls::stream<data_t> in("in"), out("out");
        std::istringstream xs(xl), ys(yl);
        for (int i = 0; i < N_INPUT; i++) {{
            long long r;
            xs >> r;
            in.write(raw_to_data(r));
        }}
        {name}(in, out, regs);
        for (int j = 0; j < N_OUTPUT; j++) {{
            long long expected;
            ys >> expected;
            long long got = data_to_raw(out.read());
            if (got != expected) mismatches++;
        }}
        vectors++;
    }}
    std::printf("%d vectors, %d mismatches\n", vectors, mismatches);
    return mismatches == 0 ? 0 : 1;
}}
"#
    );
    Ok([
        ("tb/tb_snl.cpp", tb),
        ("tb/tb_input.dat", input_dat),
        ("tb/tb_golden.dat", golden_dat),
    ]
    .into_iter()
    .map(|(path, contents)| GeneratedFile {
        path: path.to_string(),
        contents,
    })
    .collect())
}

fn write_row(out: &mut String, raw: &[i64]) {
    for (i, v) in raw.iter().enumerate() {
        let _ = write!(out, "{}{v}", if i > 0 { " " } else { "" });
    }
    out.push('\n');
}

/// Lowercase C identifier.
fn identifier(name: &str) -> String {
    let mut id: String = name
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() {
                c.to_ascii_lowercase()
            } else {
                '_'
            }
        })
        .collect();
    if id.is_empty() || id.starts_with(|c: char| c.is_ascii_digit()) {
        id.insert(0, 'm');
    }
    id
}

fn stage_fn(index: usize, stage: &Stage) -> String {
    format!("s{index:02}_{}", identifier(&stage.name))
}

fn ap_type(format: FixedFormat) -> String {
    let q = match format.rounding() {
        Rounding::Truncate => "AP_TRN",
        Rounding::HalfUp => "AP_RND",
    };
    let o = match format.overflow() {
        Overflow::Saturate => "AP_SAT",
        Overflow::Wrap => "AP_WRAP",
    };
    format!("ap_fixed<{}, {}, {q}, {o}>", format.total_bits(), format.integer_bits())
}

fn types_header(plan: &StagePlan) -> String {
    let format = plan.format;
    format!(
        r#"#ifndef SNL_TYPES_H
#define SNL_TYPES_H

#include <ap_fixed.h>
#include <ap_int.h>
#include <hls_stream.h>

#define DATA_W {x}
#define DATA_I {y}
#define WORD_W {word}

typedef {data} data_t;
typedef ap_int<WORD_W> word_t;

// A register word carries one raw value in its low DATA_W bits.
static inline data_t as_data(word_t w) {{
#pragma HLS INLINE
    data_t d;
    d.range(DATA_W - 1, 0) = w.range(DATA_W - 1, 0);
    return d;
}}

static inline data_t raw_to_data(long long r) {{
    data_t d;
    d.range(DATA_W - 1, 0) = ap_int<DATA_W>(r);
    return d;
}}

static inline long long data_to_raw(data_t d) {{
    ap_int<DATA_W> r = d.range(DATA_W - 1, 0);
    return r.to_int64();
}}

template <typename T>
static inline T relu(T v) {{
#pragma HLS INLINE
    return v < 0 ? T(0) : v;
}}

#endif
"#,
        x = format.total_bits(),
        y = format.integer_bits(),
        word = format.bus_word_bits(),
        data = ap_type(format),
    )
}

fn defines_header(plan: &StagePlan) -> String {
    let mut out = String::new();
    out.push_str("#ifndef SNL_DEFINES_H\n#define SNL_DEFINES_H\n\n#include \"snl_types.h\"\n\n");
    let _ = writeln!(out, "#define N_INPUT {}", plan.input_len);
    let _ = writeln!(out, "#define N_OUTPUT {}", plan.output_len());
    let _ = writeln!(out, "#define N_WORDS {}", plan.total_words().max(1));
    let _ = writeln!(out, "#define N_STAGES {}", plan.stages.len());
    for (i, s) in plan.stages.iter().enumerate() {
        let p = format!("S{i}");
        out.push('\n');
        let _ = writeln!(out, "// {} ({})", s.name, s.op.tag());
        let _ = writeln!(out, "typedef {} acc{i}_t;", ap_type(s.accumulator(plan.format)));
        let _ = writeln!(out, "#define {p}_IN {}", s.in_elems());
        let _ = writeln!(out, "#define {p}_OUT {}", s.out_elems());
        if let Some(k) = s.kernel {
            let _ = writeln!(out, "#define {p}_KERNEL_BASE {}", k.base);
        }
        if let Some(b) = s.bias {
            let _ = writeln!(out, "#define {p}_BIAS_BASE {}", b.base);
        }
        match &s.op {
            StageOp::Dense { .. } => {}
            StageOp::Conv2D { window, filters } => {
                window_defines(&mut out, &p, window);
                let _ = writeln!(out, "#define {p}_FILTERS {filters}");
            }
            StageOp::AveragePool { window } => window_defines(&mut out, &p, window),
            StageOp::GlobalAveragePool {
                height,
                width,
                channels,
            } => {
                let _ = writeln!(out, "#define {p}_PIXELS {}", height * width);
                let _ = writeln!(out, "#define {p}_C {channels}");
            }
            StageOp::Relu { .. } => {}
        }
    }
    out.push_str("\n#endif\n");
    out
}

fn window_defines(out: &mut String, p: &str, w: &Window) {
    for (key, v) in [
        ("IH", w.in_h),
        ("IW", w.in_w),
        ("C", w.channels),
        ("OH", w.out_h),
        ("OW", w.out_w),
        ("KH", w.kernel.0),
        ("KW", w.kernel.1),
        ("SH", w.strides.0),
        ("SW", w.strides.1),
        ("PT", w.pad.0),
        ("PL", w.pad.1),
    ] {
        let _ = writeln!(out, "#define {p}_{key} {v}");
    }
}

fn stage_source(plan: &StagePlan, i: usize) -> String {
    let stage = &plan.stages[i];
    let name = stage_fn(i, stage);
    let p = format!("S{i}");
    let act = if stage.relu { "relu(y)" } else { "y" };
    let guard = format!("SNL_{}_H", name.to_ascii_uppercase());
    let body = match &stage.op {
        StageOp::Dense { .. } => format!(
            r#"    acc{i}_t acc[{p}_OUT];
#pragma HLS ARRAY_PARTITION variable=acc complete
    for (int j = 0; j < {p}_OUT; j++) acc[j] = 0;
accumulate:
    for (int i = 0; i < {p}_IN; i++) {{
#pragma HLS PIPELINE II=1
        data_t x = in.read();
        for (int j = 0; j < {p}_OUT; j++) {{
            acc[j] += x * as_data(regs[{p}_KERNEL_BASE + i * {p}_OUT + j]);
        }}
    }}
emit:
    for (int j = 0; j < {p}_OUT; j++) {{
#pragma HLS PIPELINE II=1
        acc{i}_t v = acc[j] + as_data(regs[{p}_BIAS_BASE + j]);
        data_t y = v;
        out.write({act});
    }}
"#
        ),
        StageOp::Conv2D { .. } => format!(
            r#"    data_t buf[{p}_IN];
fill:
    for (int i = 0; i < {p}_IN; i++) {{
#pragma HLS PIPELINE II=1
        buf[i] = in.read();
    }}
pixels:
    for (int oh = 0; oh < {p}_OH; oh++) {{
        for (int ow = 0; ow < {p}_OW; ow++) {{
            acc{i}_t acc[{p}_FILTERS];
#pragma HLS ARRAY_PARTITION variable=acc complete
            for (int f = 0; f < {p}_FILTERS; f++) acc[f] = 0;
            for (int ky = 0; ky < {p}_KH; ky++) {{
                int ih = oh * {p}_SH + ky - {p}_PT;
                if (ih < 0 || ih >= {p}_IH) continue;
                for (int kx = 0; kx < {p}_KW; kx++) {{
                    int iw = ow * {p}_SW + kx - {p}_PL;
                    if (iw < 0 || iw >= {p}_IW) continue;
                    for (int c = 0; c < {p}_C; c++) {{
#pragma HLS PIPELINE II=1
                        data_t x = buf[(ih * {p}_IW + iw) * {p}_C + c];
                        int tap = ((ky * {p}_KW + kx) * {p}_C + c) * {p}_FILTERS;
                        for (int f = 0; f < {p}_FILTERS; f++) {{
                            acc[f] += x * as_data(regs[{p}_KERNEL_BASE + tap + f]);
                        }}
                    }}
                }}
            }}
            for (int f = 0; f < {p}_FILTERS; f++) {{
#pragma HLS PIPELINE II=1
                acc{i}_t v = acc[f] + as_data(regs[{p}_BIAS_BASE + f]);
                data_t y = v;
                out.write({act});
            }}
        }}
    }}
"#
        ),
        StageOp::AveragePool { .. } => format!(
            r#"    data_t buf[{p}_IN];
    const acc{i}_t recip = acc{i}_t(1) / ({p}_KH * {p}_KW);
fill:
    for (int i = 0; i < {p}_IN; i++) {{
#pragma HLS PIPELINE II=1
        buf[i] = in.read();
    }}
windows:
    for (int oh = 0; oh < {p}_OH; oh++) {{
        for (int ow = 0; ow < {p}_OW; ow++) {{
            for (int c = 0; c < {p}_C; c++) {{
#pragma HLS PIPELINE II=1
                acc{i}_t sum = 0;
                for (int ky = 0; ky < {p}_KH; ky++) {{
                    for (int kx = 0; kx < {p}_KW; kx++) {{
                        sum += buf[((oh * {p}_SH + ky) * {p}_IW + ow * {p}_SW + kx) * {p}_C + c];
                    }}
                }}
                data_t y = sum * recip;
                out.write({act});
            }}
        }}
    }}
"#
        ),
        StageOp::GlobalAveragePool { .. } => format!(
            r#"    acc{i}_t sum[{p}_C];
#pragma HLS ARRAY_PARTITION variable=sum complete
    const acc{i}_t recip = acc{i}_t(1) / {p}_PIXELS;
    for (int c = 0; c < {p}_C; c++) sum[c] = 0;
accumulate:
    for (int px = 0; px < {p}_PIXELS; px++) {{
        for (int c = 0; c < {p}_C; c++) {{
#pragma HLS PIPELINE II=1
            sum[c] += in.read();
        }}
    }}
emit:
    for (int c = 0; c < {p}_C; c++) {{
#pragma HLS PIPELINE II=1
        data_t y = sum[c] * recip;
        out.write({act});
    }}
"#
        ),
        StageOp::Relu { .. } => format!(
            r#"pass:
    for (int i = 0; i < {p}_IN; i++) {{
#pragma HLS PIPELINE II=1
        data_t y = in.read();
        out.write(relu(y));
    }}
"#
        ),
    };
    let regs_unused = if stage.kernel.is_none() {
        "    (void)regs;\n"
    } else {
        ""
    };
    format!(
        "#ifndef {guard}\n#define {guard}\n\n#include \"../defines.h\"\n\n\
         // {} ({}, {} -> {} elements)\n\
         static void {name}(hls::stream<data_t>& in, hls::stream<data_t>& out, const word_t regs[N_WORDS]) {{\n\
         {regs_unused}{body}}}\n\n#endif\n",
        stage.name,
        stage.op.tag(),
        stage.in_elems(),
        stage.out_elems(),
    )
}

fn top_source(plan: &StagePlan, name: &str) -> String {
    let mut out = String::new();
    out.push_str("#include \"defines.h\"\n");
    for (i, s) in plan.stages.iter().enumerate() {
        let _ = writeln!(out, "#include \"layers/{}.h\"", stage_fn(i, s));
    }
    let _ = write!(
        out,
        "\nvoid {name}(hls::stream<data_t>& in, hls::stream<data_t>& out, const word_t regs[N_WORDS]) {{\n\
         #pragma HLS INTERFACE axis port=in\n\
         #pragma HLS INTERFACE axis port=out\n\
         #pragma HLS INTERFACE s_axilite port=regs bundle=weights\n\
         #pragma HLS INTERFACE s_axilite port=return bundle=control\n\
         #pragma HLS DATAFLOW\n"
    );
    let n = plan.stages.len();
    if n == 0 {
        out.push_str("    (void)regs;\n    for (int i = 0; i < N_INPUT; i++) out.write(in.read());\n}\n");
        return out;
    }
    for i in 0..n.saturating_sub(1) {
        let _ = writeln!(out, "    hls::stream<data_t> link{i}(\"link{i}\");");
        let _ = writeln!(out, "#pragma HLS STREAM variable=link{i} depth=2");
    }
    for (i, s) in plan.stages.iter().enumerate() {
        let src = if i == 0 {
            "in".to_string()
        } else {
            format!("link{}", i - 1)
        };
        let dst = if i + 1 == n {
            "out".to_string()
        } else {
            format!("link{i}")
        };
        let _ = writeln!(out, "    {}({src}, {dst}, regs);", stage_fn(i, s));
    }
    out.push_str("}\n");
    out
}

fn build_script(name: &str, cfg: &CodegenConfig) -> String {
    format!(
        "open_project -reset {name}_prj\n\
         set_top {name}\n\
         add_files firmware/top.cpp -cflags \"-std=c++14\"\n\
         add_files -tb tb/tb_snl.cpp -cflags \"-std=c++14\"\n\
         open_solution -reset solution1\n\
         set_part {{{part}}}\n\
         create_clock -period {clock} -name default\n\
         csim_design\n\
         csynth_design\n\
         exit\n",
        part = cfg.part,
        clock = cfg.clock,
    )
}

fn json_string(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            c if (c as u32) < 0x20 => {
                let _ = write!(out, "\\u{:04x}", c as u32);
            }
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

fn manifest(name: &str, cfg: &CodegenConfig, plan: &StagePlan, files: &[GeneratedFile]) -> String {
    let mut out = String::new();
    out.push_str("{\n");
    let _ = writeln!(out, "  \"project\": {},", json_string(name));
    let _ = writeln!(out, "  \"model\": {},", json_string(&plan.model));
    let _ = writeln!(out, "  \"precision\": {},", json_string(&plan.format.to_string()));
    let _ = writeln!(out, "  \"part\": {},", json_string(&cfg.part));
    let _ = writeln!(out, "  \"clock_ns\": {},", json_string(&cfg.clock.to_string()));
    let _ = writeln!(out, "  \"stages\": {},", plan.stages.len());
    let _ = writeln!(out, "  \"words\": {},", plan.total_words());
    out.push_str("  \"files\": [\n");
    for (i, f) in files.iter().enumerate() {
        let _ = writeln!(
            out,
            "    {{\"path\": {}, \"bytes\": {}, \"sha256\": \"{}\"}}{}",
            json_string(&f.path),
            f.contents.len(),
            sha256_hex(f.contents.as_bytes()),
            if i + 1 < files.len() { "," } else { "" }
        );
    }
    out.push_str("  ]\n}\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{builtin, Benchmark, LayerKind, LayerSpec, ParamKind, TensorShape};
    use crate::qsim::run_quantized;
    use alloc::vec;

    fn f(s: &str) -> FixedFormat {
        s.parse().unwrap()
    }

    #[test]
    fn jet_project_shape() {
        let g = builtin("jet").unwrap();
        let p = generate(&g, &CodegenConfig::new(f("16:6"))).unwrap();
        let plan = p.plan().unwrap();
        assert_eq!(plan.stages.len(), 4);
        assert_eq!(plan.total_words(), 4389);
        assert_eq!(p.weight_image().unwrap().len(), 4389);
        assert_eq!(
            p.files
                .iter()
                .filter(|f| f.path.starts_with("firmware/layers/"))
                .count(),
            4
        );
        let tcl = p.get("build.tcl").unwrap();
        assert!(tcl.contains("set_part {xczu9eg-ffvb1156-2-e}"));
        assert!(tcl.contains("create_clock -period 10 "));
    }

    #[test]
    fn deterministic_output() {
        let g = builtin("kws").unwrap();
        let cfg = CodegenConfig::new(f("8:3"));
        assert_eq!(generate(&g, &cfg).unwrap(), generate(&g, &cfg).unwrap());
    }

    #[test]
    fn weights_do_not_touch_compute_sources() {
        let mut g = builtin("anomaly").unwrap();
        let cfg = CodegenConfig::new(f("16:6"));
        let a = generate(&g, &cfg).unwrap();
        g.set_param(g.layers()[0].id, ParamKind::Kernel, 3, 0.4375).unwrap();
        let b = generate(&g, &cfg).unwrap();
        let src = |p: &GeneratedProject| p.compute_sources().cloned().collect::<Vec<_>>();
        assert_eq!(src(&a), src(&b));
        assert_ne!(a.get(WEIGHTS_FILE), b.get(WEIGHTS_FILE));
    }

    #[test]
    fn no_numeric_literals_with_fraction() {
        for b in Benchmark::ALL {
            let p = generate(&b.graph(1), &CodegenConfig::new(f("16:6"))).unwrap();
            for file in p.compute_sources().filter(|f| f.path.starts_with("firmware/")) {
                let bytes = file.contents.as_bytes();
                for w in bytes.windows(3) {
                    assert!(
                        !(w[0].is_ascii_digit() && w[1] == b'.' && w[2].is_ascii_digit()),
                        "{}: fractional literal",
                        file.path
                    );
                }
            }
        }
    }

    #[test]
    fn mid_chain_softmax_rejected() {
        let layers = vec![
            LayerSpec::new(0, "d0", LayerKind::Dense { units: 4 }),
            LayerSpec::new(1, "sm", LayerKind::Softmax),
            LayerSpec::new(2, "d1", LayerKind::Dense { units: 2 }),
        ];
        let mut w = crate::model::WeightSet::new();
        w.insert(
            0,
            crate::model::LayerParams {
                kernel: vec![0.0; 12],
                bias: vec![0.0; 4],
            },
        );
        w.insert(
            2,
            crate::model::LayerParams {
                kernel: vec![0.0; 8],
                bias: vec![0.0; 2],
            },
        );
        let g = ModelGraph::new("m", TensorShape::flat(3), layers, w).unwrap();
        assert!(matches!(
            generate(&g, &CodegenConfig::new(f("8:3"))),
            Err(Error::Unsupported { .. })
        ));
    }

    #[test]
    fn interpreter_matches_qsim() {
        for b in Benchmark::ALL {
            let g = b.graph(3).normalize_for_hardware().unwrap();
            let fmt = f("16:6");
            let p = generate(&g, &CodegenConfig::new(fmt)).unwrap();
            let x: Vec<f64> = (0..g.input_shape().len()).map(|i| (i % 5) as f64 * 0.3 - 0.5).collect();
            let raw = quantize_tensor(&x, fmt);
            assert_eq!(p.interpret(&raw).unwrap(), run_quantized(&g, &x, fmt).unwrap().raw);
        }
    }

    #[test]
    fn manifest_lists_every_file() {
        let p = generate(&builtin("jet").unwrap(), &CodegenConfig::new(f("8:3"))).unwrap();
        let m = p.get(MANIFEST_FILE).unwrap();
        for file in p.files.iter().filter(|f| f.path != MANIFEST_FILE) {
            let entry = format!(
                "{{\"path\": \"{}\", \"bytes\": {}, \"sha256\": \"{}\"}}",
                file.path,
                file.contents.len(),
                sha256_hex(file.contents.as_bytes())
            );
            assert!(m.contains(&entry), "{}", file.path);
        }
    }

    #[test]
    fn testbench_golden_rows() {
        let g = builtin("jet").unwrap();
        let cfg = CodegenConfig::new(f("16:6"));
        let inputs = vec![vec![0.25; 16], vec![-0.5; 16]];
        let tb = emit_testbench(&g, &cfg, &inputs).unwrap();
        let golden = &tb.iter().find(|f| f.path == "tb/tb_golden.dat").unwrap().contents;
        assert_eq!(golden.lines().count(), 2);
        assert_eq!(golden.lines().next().unwrap().split(' ').count(), 5);
    }

    #[test]
    fn weights_text_round_trip() {
        let plan = StagePlan::build(&builtin("jet").unwrap().normalize_for_hardware().unwrap(), f("8:3")).unwrap();
        let image: Vec<i64> = (0..plan.total_words() as i64).map(|i| i % 200 - 100).collect();
        assert_eq!(parse_weights(&emit_weights(&plan, &image)).unwrap(), image);
        assert!(parse_weights("# snl-weights m 8:3 3\n1\n2\n").is_err());
    }
}
