//! Acceptance checks. One PASS/FAIL line per criterion; exits nonzero if
//! any criterion fails. Tolerances are pinned below.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::thread;
use std::time::{Duration, Instant};

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{One, ToPrimitive};
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use snlforge::bench::{run_sweep, SweepRecord, SweepSpec};
use snlforge::client::Client;
use snlforge::core::codegen::{generate, CodegenConfig};
use snlforge::core::model::{builtin, infer_shapes, param_shape, sample_inputs, Benchmark, LayerParams, WeightSet};
use snlforge::core::perf::{estimate_latency, Calibration, DesignPoint, Framework, Strategy};
use snlforge::core::plan::StagePlan;
use snlforge::core::qsim;
use snlforge::core::sim::{FifoDepth, Pipeline, WeightWrite};
use snlforge::core::{FixedFormat, FixedValue, LayerKind, LayerSpec, ModelGraph, Overflow, Rounding, TensorShape};
use snlforge::protocol::{ErrorCode, Frame, FrameType, MAGIC};
use snlforge::report;
use snlforge::server::{serve, ServerConfig};

/// Wall-clock budget for the fixed-point oracle run and for the sweep.
const TIME_BUDGET: Duration = Duration::from_secs(60);
/// Random oracle cases per operation and format.
const RANDOM_CASES: usize = 100_000;
/// Seeded inputs per model and precision in the chain check.
const CHAIN_INPUTS: usize = 20;
/// Randomized architectures in the latency check.
const LATENCY_ARCHS: usize = 40;
/// Loopback inferences in the protocol check.
const LOOPBACK_INFERENCES: usize = 1000;

type Check = Result<String, String>;

fn precisions() -> [FixedFormat; 3] {
    ["8:3", "16:6", "32:16"].map(|p| p.parse().unwrap())
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// Fixed-point oracle

/// `m * 2^-frac` fitted into `fmt` with unbounded integers.
fn oracle_fit(m: BigInt, frac: u32, fmt: FixedFormat) -> i64 {
    let target = fmt.frac_bits();
    let scaled = if target >= frac {
        m << (target - frac)
    } else {
        let d = BigInt::one() << (frac - target);
        match fmt.rounding() {
            Rounding::Truncate => m.div_floor(&d),
            Rounding::HalfUp => (m + (&d >> 1u32)).div_floor(&d),
        }
    };
    let half = BigInt::one() << (fmt.total_bits() - 1);
    let (lo, hi) = (-half.clone(), &half - 1);
    let fitted = if scaled < lo || scaled > hi {
        match fmt.overflow() {
            Overflow::Saturate if scaled > hi => hi,
            Overflow::Saturate => lo,
            Overflow::Wrap => (scaled + &half).mod_floor(&(BigInt::one() << fmt.total_bits())) - half,
        }
    } else {
        scaled
    };
    fitted.to_i64().unwrap()
}

fn modes(fmt: FixedFormat) -> [FixedFormat; 4] {
    [
        fmt,
        fmt.with_rounding(Rounding::HalfUp),
        fmt.with_overflow(Overflow::Wrap),
        fmt.with_rounding(Rounding::HalfUp).with_overflow(Overflow::Wrap),
    ]
}

fn raw_in(rng: &mut ChaCha8Rng, fmt: FixedFormat) -> i64 {
    let span = (fmt.max_raw() as i128 - fmt.min_raw() as i128 + 1) as u128;
    (fmt.min_raw() as i128 + (u128::from(rng.next_u64()) % span) as i128) as i64
}

fn fixed_point_oracle() -> Check {
    let start = Instant::now();
    let mut cases = BTreeMap::<&str, usize>::new();
    let mismatch = |op: &str, detail: String| format!("{op} mismatch: {detail}");
    let f83: FixedFormat = "8:3".parse().unwrap();
    let f166: FixedFormat = "16:6".parse().unwrap();
    for fmt in modes(f83) {
        let frac = fmt.frac_bits();
        for a in fmt.min_raw()..=fmt.max_raw() {
            let va = FixedValue::from_raw(a, fmt).unwrap();
            for b in fmt.min_raw()..=fmt.max_raw() {
                let vb = FixedValue::from_raw(b, fmt).unwrap();
                if va.add(&vb).raw() != oracle_fit(BigInt::from(a + b), frac, fmt) {
                    return Err(mismatch("add", format!("{a} + {b} in {fmt}")));
                }
                if va.mul(&vb).raw() != oracle_fit(BigInt::from(a * b), 2 * frac, fmt) {
                    return Err(mismatch("mul", format!("{a} * {b} in {fmt}")));
                }
            }
        }
        *cases.entry("add8").or_default() += 65_536;
        *cases.entry("mul8").or_default() += 65_536;
        // Every 16-bit source word into the 8-bit target.
        for src in modes(f166) {
            for r in src.min_raw()..=src.max_raw() {
                let v = FixedValue::from_raw(r, src).unwrap();
                if v.resize(fmt).raw() != oracle_fit(BigInt::from(r), src.frac_bits(), fmt) {
                    return Err(mismatch("resize", format!("{r} {src} -> {fmt}")));
                }
            }
            *cases.entry("resize8").or_default() += 65_536;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    for base in ["16:6", "32:16"] {
        let base: FixedFormat = base.parse().unwrap();
        for (i, fmt) in modes(base).into_iter().cycle().take(RANDOM_CASES).enumerate() {
            let (a, b) = (raw_in(&mut rng, fmt), raw_in(&mut rng, fmt));
            let (va, vb) = (
                FixedValue::from_raw(a, fmt).unwrap(),
                FixedValue::from_raw(b, fmt).unwrap(),
            );
            let frac = fmt.frac_bits();
            if va.add(&vb).raw() != oracle_fit(BigInt::from(a) + b, frac, fmt) {
                return Err(mismatch("add", format!("{a} + {b} in {fmt}")));
            }
            if va.mul(&vb).raw() != oracle_fit(BigInt::from(a) * b, 2 * frac, fmt) {
                return Err(mismatch("mul", format!("{a} * {b} in {fmt}")));
            }
            let target = modes(if base == f166 { "32:16" } else { "16:6" }.parse().unwrap())[i % 4];
            if va.resize(target).raw() != oracle_fit(BigInt::from(a), frac, target) {
                return Err(mismatch("resize", format!("{a} {fmt} -> {target}")));
            }
        }
        *cases.entry("random").or_default() += 3 * RANDOM_CASES;
    }
    let elapsed = start.elapsed();
    ensure(elapsed < TIME_BUDGET, || {
        format!("took {elapsed:.1?}, budget {TIME_BUDGET:?}")
    })?;
    Ok(format!(
        "0 mismatches; exhaustive <8,3> add {} mul {} resize {} (4 modes), random {} at <16,6> and <32,16>; {elapsed:.1?}",
        cases["add8"], cases["mul8"], cases["resize8"], cases["random"]
    ))
}

// Numeric chain

fn numeric_chain() -> Check {
    let mut compared = 0;
    for b in Benchmark::ALL {
        let graph = builtin(b.name()).unwrap().normalize_for_hardware().unwrap();
        let inputs = sample_inputs(graph.input_shape().len(), CHAIN_INPUTS, 11);
        for p in precisions() {
            let mut pipe = Pipeline::build(&graph, &DesignPoint::snl(p), &Calibration::default()).unwrap();
            pipe.load_graph_weights(&graph).unwrap();
            for (i, x) in inputs.iter().enumerate() {
                let sim = pipe.infer(x).unwrap().output;
                let reference = qsim::run_quantized(&graph, x, p).unwrap().raw;
                ensure(sim == reference, || {
                    format!("{b} {p} input {i}: simulator and qsim differ")
                })?;
                compared += 1;
            }
        }
    }
    Ok(format!(
        "{compared} inferences bit-identical (4 models x 3 precisions x {CHAIN_INPUTS})"
    ))
}

// Precision-error monotonicity

fn precision_monotonicity() -> Check {
    let mut summary = Vec::new();
    for b in Benchmark::ALL {
        let graph = builtin(b.name()).unwrap().normalize_for_hardware().unwrap();
        let inputs = sample_inputs(graph.input_shape().len(), CHAIN_INPUTS, 12);
        let reference: Vec<Vec<f64>> = inputs.iter().map(|x| qsim::run_float(&graph, x).unwrap()).collect();
        let errors: Vec<f64> = precisions()
            .iter()
            .map(|&p| {
                inputs
                    .iter()
                    .zip(&reference)
                    .flat_map(|(x, r)| {
                        let q = qsim::run_quantized(&graph, x, p).unwrap().values();
                        q.into_iter().zip(r.clone()).map(|(a, b)| (a - b).abs())
                    })
                    .fold(0.0, f64::max)
            })
            .collect();
        ensure(errors[0] >= errors[1] && errors[1] >= errors[2], || {
            format!(
                "{b}: max|err| 8:3 {:.3e}, 16:6 {:.3e}, 32:16 {:.3e}",
                errors[0], errors[1], errors[2]
            )
        })?;
        summary.push(format!("{b} {:.2e}>={:.2e}>={:.2e}", errors[0], errors[1], errors[2]));
    }
    Ok(summary.join(", "))
}

// Latency model

fn random_chain(rng: &mut ChaCha8Rng) -> ModelGraph {
    let below = |rng: &mut ChaCha8Rng, n: u64| (rng.next_u64() % n) as usize;
    let input = TensorShape::flat(1 + below(rng, 64));
    let n = 1 + below(rng, 8);
    let layers: Vec<LayerSpec> = (0..n)
        .map(|i| {
            let kind = if below(rng, 3) == 0 {
                LayerKind::ReLU
            } else {
                LayerKind::Dense {
                    units: 1 + below(rng, 64),
                }
            };
            LayerSpec::new(i as u32, format!("l{i}"), kind)
        })
        .collect();
    let shapes = infer_shapes(&input, &layers).unwrap();
    let mut weights = WeightSet::new();
    for (l, s) in layers.iter().zip(&shapes) {
        if let Some((k, b)) = param_shape(&l.kind, &s.input) {
            let mut draw = |n| (0..n).map(|_| (rng.next_u32() % 64) as f64 / 64.0 - 0.5).collect();
            weights.insert(
                l.id,
                LayerParams {
                    kernel: draw(k),
                    bias: draw(b),
                },
            );
        }
    }
    ModelGraph::new("chain", input, layers, weights).unwrap()
}

fn latency_consistency() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0x1a7e);
    let calib = Calibration::default();
    let p: FixedFormat = "16:6".parse().unwrap();
    let mut stalled = 0;
    for i in 0..LATENCY_ARCHS {
        let graph = random_chain(&mut rng);
        let dp = match i % 3 {
            0 => DesignPoint::snl(p),
            1 => DesignPoint::baked(p, Strategy::Latency, 1 + rng.next_u32() % 8).unwrap(),
            _ => DesignPoint::baked(p, Strategy::Resource, 2 + rng.next_u32() % 7).unwrap(),
        };
        let plan = StagePlan::build(&graph, p).unwrap();
        let closed = estimate_latency(&plan, &dp, &calib).cycles;
        let run = |depth: FifoDepth| {
            let mut pipe = Pipeline::from_plan(plan.clone(), &dp, &calib).with_fifo_depth(depth);
            pipe.load_graph_weights(&graph).unwrap();
            let x = sample_inputs(plan.input_len, 1, i as u64).remove(0);
            pipe.infer(&x).unwrap().latency_cycles
        };
        let unbounded = run(FifoDepth::UNBOUNDED);
        let shallow = run(FifoDepth::bounded(1).unwrap());
        ensure(unbounded == closed, || {
            format!(
                "arch {i} ({} layers, {}): simulated {unbounded} != closed form {closed}",
                graph.layers().len(),
                dp.label()
            )
        })?;
        ensure(shallow >= closed, || {
            format!("arch {i}: depth-1 latency {shallow} < closed form {closed}")
        })?;
        stalled += usize::from(shallow > closed);
    }
    Ok(format!(
        "{LATENCY_ARCHS} random chains: unbounded == closed form; depth 1 >= closed form ({stalled} strictly slower)"
    ))
}

// Sweep trends and structure

fn sweep() -> Result<(Vec<SweepRecord>, Duration), String> {
    let start = Instant::now();
    let records = run_sweep(&SweepSpec::default()).map_err(|e| e.to_string())?;
    Ok((records, start.elapsed()))
}

fn baked(r: &SweepRecord) -> Option<(Strategy, u32)> {
    match r.design.framework {
        Framework::Baked { strategy, reuse_factor } => Some((strategy, reuse_factor)),
        Framework::Snl => None,
    }
}

fn trends(records: &[SweepRecord], elapsed: Duration) -> Check {
    ensure(records.len() == 96, || {
        format!("sweep has {} points, expected 96", records.len())
    })?;
    ensure(elapsed < TIME_BUDGET, || {
        format!("sweep took {elapsed:.1?}, budget {TIME_BUDGET:?}")
    })?;
    let mut pairs = 0;
    for a in records {
        let Some((sa, rfa)) = baked(a) else { continue };
        for b in records {
            let Some((sb, rfb)) = baked(b) else { continue };
            if a.model == b.model && a.design.precision == b.design.precision && sa == sb && rfa < rfb {
                pairs += 1;
                let (da, db) = (a.resources.total.dsp, b.resources.total.dsp);
                ensure(db <= da, || {
                    format!("{} {}: DSP rises {da} -> {db}", a.group_key(), b.design.label())
                })?;
                let (la, lb) = (a.latency.cycles, b.latency.cycles);
                ensure(lb >= la, || {
                    format!("{} {}: latency falls {la} -> {lb}", a.group_key(), b.design.label())
                })?;
            }
        }
    }
    let mut precision_pairs = 0;
    for a in records.iter().filter(|r| r.design.precision.to_string() == "8:3") {
        let Some(pa) = baked(a) else { continue };
        let b = records
            .iter()
            .find(|b| b.model == a.model && b.design.precision.to_string() == "16:6" && baked(b) == Some(pa))
            .ok_or_else(|| format!("no 16:6 partner for {} {}", a.model, a.design.label()))?;
        precision_pairs += 1;
        ensure(a.resources.total.dsp <= b.resources.total.dsp, || {
            format!(
                "{} {}: DSP 8:3 {} > 16:6 {}",
                a.model,
                a.design.label(),
                a.resources.total.dsp,
                b.resources.total.dsp
            )
        })?;
    }
    let mut bram_pairs = 0;
    for s in records.iter().filter(|r| baked(r).is_none()) {
        for l in records.iter().filter(|r| {
            r.model == s.model
                && r.design.precision == s.design.precision
                && matches!(baked(r), Some((Strategy::Latency, _)))
        }) {
            bram_pairs += 1;
            ensure(s.resources.total.bram >= l.resources.total.bram, || {
                format!(
                    "{} SNL BRAM {} < {} BRAM {}",
                    s.group_key(),
                    s.resources.total.bram,
                    l.design.label(),
                    l.resources.total.bram
                )
            })?;
        }
    }
    Ok(format!(
        "{pairs} RF pairs, {precision_pairs} precision pairs, {bram_pairs} BRAM pairs hold; sweep {elapsed:.1?}"
    ))
}

fn benchmark_structure(records: &[SweepRecord]) -> Check {
    let rows = report::rows(records);
    let groups = report::groups(&rows);
    ensure(groups.len() == 12, || format!("{} groups, expected 12", groups.len()))?;
    let expected = ["SNL", "L-RF1", "L-RF2", "L-RF4", "L-RF8", "R-RF2", "R-RF4", "R-RF8"];
    for (key, list) in &groups {
        let labels: Vec<&str> = list.iter().map(|r| r.label.as_str()).collect();
        ensure(labels == expected, || format!("{key}: bars {labels:?}"))?;
    }
    let doc: serde_json::Value =
        serde_json::from_str(&report::to_plotdata(&rows).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let mut gaps = 0;
    for (key, list) in &groups {
        let g = &doc["groups"][key.as_str()];
        for metric in ["lut", "ff", "dsp", "bram18", "latency_us"] {
            let series = g["series"][metric]
                .as_array()
                .ok_or_else(|| format!("{key}: no {metric} series"))?;
            ensure(series.len() == 8, || format!("{key} {metric}: {} values", series.len()))?;
            for (v, r) in series.iter().zip(list) {
                ensure(v.is_null() != r.feasible, || {
                    format!("{key} {metric} {}: null/feasible mismatch", r.label)
                })?;
                gaps += usize::from(v.is_null());
            }
        }
    }
    let infeasible = rows.iter().filter(|r| !r.feasible).count();
    ensure(infeasible > 0, || {
        "no infeasible points, gap encoding untested".to_string()
    })?;
    Ok(format!(
        "12 groups x 8 bars, no R-RF1; {infeasible} infeasible points as {gaps} explicit nulls across 5 series"
    ))
}

// Runtime reload

fn runtime_reload() -> Check {
    let p: FixedFormat = "16:6".parse().unwrap();
    let graph = builtin("jet").unwrap().normalize_for_hardware().unwrap();
    let mut pipe = Pipeline::build(&graph, &DesignPoint::snl(p), &Calibration::default()).unwrap();
    pipe.load_graph_weights(&graph).unwrap();
    let plan_before = pipe.plan().clone();
    let digest = pipe.structure_digest();
    let x = sample_inputs(16, 1, 21).remove(0);
    let before = pipe.infer(&x).unwrap().output;

    // First-layer kernel word for input 0, output 0; a large value so the
    // change reaches the output.
    let address = 0u32;
    let raw = p.max_raw() / 2;
    let entry = *pipe.plan().register_map().locate(address).ok_or("address 0 unmapped")?;
    pipe.load_weights(&[WeightWrite { address, raw }])
        .map_err(|e| e.to_string())?;
    let after = pipe.infer(&x).unwrap().output;

    let mut modified = graph.clone();
    let index = (address - entry.words.0 + entry.elements.0) as usize;
    modified
        .set_param(entry.layer, entry.kind, index, raw as f64 * p.step())
        .map_err(|e| e.to_string())?;
    let reference = qsim::run_quantized(&modified, &x, p).unwrap().raw;
    ensure(after == reference, || {
        "output after reload differs from qsim with the modified weight".to_string()
    })?;
    ensure(after != before, || "weight change did not reach the output".to_string())?;
    ensure(pipe.structure_digest() == digest, || {
        "structure digest changed".to_string()
    })?;
    ensure(*pipe.plan() == plan_before, || "stage plan changed".to_string())?;
    Ok(format!(
        "1 register write changed the output, matched qsim, digest {}... unchanged",
        &digest[..12]
    ))
}

// Codegen

/// Kernel plus bias sizes of every Dense layer in a flat chain, summed by
/// hand from the layer widths.
fn dense_param_count(input: usize, widths: &[usize]) -> usize {
    let mut prev = input;
    let mut total = 0;
    for &w in widths {
        total += prev * w + w;
        prev = w;
    }
    total
}

fn has_float_literal(src: &str) -> bool {
    let b = src.as_bytes();
    (1..b.len().saturating_sub(1)).any(|i| b[i] == b'.' && b[i - 1].is_ascii_digit() && b[i + 1].is_ascii_digit())
}

fn codegen_coverage() -> Check {
    let p: FixedFormat = "16:6".parse().unwrap();
    let cfg = CodegenConfig::new(p);
    let hand = [
        ("jet", dense_param_count(16, &[64, 32, 32, 5])),
        ("anomaly", dense_param_count(320, &[16, 32, 32, 8, 32, 32, 16, 320])),
    ];
    ensure(hand[0].1 == 4389, || format!("jet hand count {}", hand[0].1))?;
    for (name, words) in hand {
        let project = generate(&builtin(name).unwrap(), &cfg).map_err(|e| e.to_string())?;
        let total = project.plan().map_err(|e| e.to_string())?.register_map().total_words() as usize;
        ensure(total == words, || {
            format!("{name}: register map {total} words, hand count {words}")
        })?;
    }
    let mut files = 0;
    for b in Benchmark::ALL {
        let a = generate(&b.graph(1), &cfg).map_err(|e| e.to_string())?;
        let again = generate(&b.graph(1), &cfg).map_err(|e| e.to_string())?;
        ensure(a.get("manifest.json") == again.get("manifest.json"), || {
            format!("{b}: manifest differs between runs")
        })?;
        ensure(a.files == again.files, || format!("{b}: project differs between runs"))?;
        // Different weights must not change a single compute byte.
        let other = generate(&b.graph(2), &cfg).map_err(|e| e.to_string())?;
        for (x, y) in a.compute_sources().zip(other.compute_sources()) {
            ensure(x == y, || format!("{b}: {} depends on weight values", x.path))?;
            ensure(!has_float_literal(&x.contents), || {
                format!("{b}: {} has a float literal", x.path)
            })?;
            files += 1;
        }
        ensure(a.get("weights.dat") != other.get("weights.dat"), || {
            format!("{b}: weight file ignores weights")
        })?;
    }
    Ok(format!(
        "manifests byte-identical; Jet {} and Anomaly {} words match hand sums; {files} compute sources weight-independent",
        hand[0].1, hand[1].1
    ))
}

// Protocol

fn protocol_round_trip() -> Check {
    let p: FixedFormat = "16:6".parse().unwrap();
    let graph = builtin("jet").unwrap().normalize_for_hardware().unwrap();
    let template = Pipeline::build(&graph, &DesignPoint::snl(p), &Calibration::default()).unwrap();
    let config = ServerConfig {
        bind: SocketAddr::from(([127, 0, 0, 1], 0)),
        frame_timeout: Duration::from_millis(150),
        ..ServerConfig::default()
    };
    let server = serve(template.clone(), "jet", config).map_err(|e| e.to_string())?;
    let addr = server.local_addr();
    let timeout = Duration::from_secs(10);
    let result = (|| -> Check {
        let mut local = template.clone();
        local.load_graph_weights(&graph).unwrap();
        let image = local.weights().to_vec();
        let mut c = Client::connect(addr, timeout).map_err(|e| e.to_string())?;
        c.load_image(&image).map_err(|e| e.to_string())?;
        for (i, x) in sample_inputs(16, LOOPBACK_INFERENCES, 31).iter().enumerate() {
            let (out, cycles) = c.infer_f64(x).map_err(|e| e.to_string())?;
            let want = local.infer(x).unwrap();
            ensure(out == want.output && cycles == want.latency_cycles, || {
                format!("inference {i} differs")
            })?;
        }

        let mut bad = b"\x00\x01junk".to_vec();
        bad.extend(Frame::new(FrameType::Ping, b"1".to_vec()).encode());
        c.send_raw(&bad).map_err(|e| e.to_string())?;
        let mut codes = Vec::new();
        loop {
            let f = c.next_frame().map_err(|e| e.to_string())?;
            match f.as_error() {
                Some((code, _)) => codes.push(code),
                None => break,
            }
        }
        let unknown = c
            .request(&Frame {
                kind: 0x7f,
                payload: Vec::new(),
            })
            .map_err(|e| e.to_string())?;
        codes.extend(unknown.as_error().map(|e| e.0));
        let mut partial = MAGIC.to_vec();
        partial.extend([FrameType::Ping as u8, 8, 0, 0, 0, 1]);
        c.send_raw(&partial).map_err(|e| e.to_string())?;
        codes.extend(c.next_frame().map_err(|e| e.to_string())?.as_error().map(|e| e.0));
        let want = [
            ErrorCode::Malformed as u16,
            ErrorCode::UnknownType as u16,
            ErrorCode::Malformed as u16,
        ];
        ensure(codes == want, || format!("error codes {codes:?}, expected {want:?}"))?;
        let x = sample_inputs(16, 1, 99).remove(0);
        ensure(
            c.infer_f64(&x).map_err(|e| e.to_string())?.0 == local.infer(&x).unwrap().output,
            || "session unusable after malformed frames".to_string(),
        )?;

        let image_b: Vec<i64> = image.iter().map(|w| (w / 2) ^ 1).collect();
        let mut local_b = template.clone();
        local_b.load_image(&image_b).unwrap();
        let inputs = sample_inputs(16, 100, 41);
        let sessions: Vec<_> = [(image, local), (image_b, local_b)]
            .into_iter()
            .map(|(img, mut reference)| {
                let inputs = inputs.clone();
                thread::spawn(move || -> Result<usize, String> {
                    let mut c = Client::connect(addr, timeout).map_err(|e| e.to_string())?;
                    c.load_image(&img).map_err(|e| e.to_string())?;
                    let mut differing = 0;
                    for x in &inputs {
                        if c.infer_f64(x).map_err(|e| e.to_string())?.0 != reference.infer(x).unwrap().output {
                            differing += 1;
                        }
                    }
                    Ok(differing)
                })
            })
            .collect();
        for s in sessions {
            let crosstalk = s.join().map_err(|_| "session thread panicked".to_string())??;
            ensure(crosstalk == 0, || {
                format!("{crosstalk} outputs disagree with the session's own weights")
            })?;
        }
        Ok(format!(
            "{LOOPBACK_INFERENCES} loopback inferences bit-exact; garbage/unknown/truncated frames -> ERROR {codes:?}, session kept; 2 concurrent sessions x 100, no cross-talk"
        ))
    })();
    server.shutdown();
    result
}

fn main() -> ExitCode {
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    let mut report = |name: &str, f: &dyn Fn() -> Check| {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS  {name:<28} {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name:<28} {detail}");
            }
        }
    };
    report("fixed-point oracle", &fixed_point_oracle);
    report("numeric chain equivalence", &numeric_chain);
    report("precision-error monotonicity", &precision_monotonicity);
    report("latency model consistency", &latency_consistency);
    let swept = sweep();
    report("trend reproduction", &|| swept.clone().and_then(|(r, t)| trends(&r, t)));
    report("runtime reload", &runtime_reload);
    report("codegen determinism", &codegen_coverage);
    report("benchmark structure", &|| {
        swept.clone().and_then(|(r, _)| benchmark_structure(&r))
    });
    report("protocol round-trip", &protocol_round_trip);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    }
}
