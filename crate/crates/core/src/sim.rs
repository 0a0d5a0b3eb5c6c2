//! Cycle-level simulation of the streaming pipeline.
//!
//! Stages are connected by bounded FIFOs (input stream, one between each
//! pair of stages, output stream). A stage is store-and-forward: it accepts
//! its input elements at most one per `II` cycles, computes for `fill`
//! cycles after the last one arrives, then emits one output per `II`
//! cycles. Within a cycle stages are visited upstream first, so an element
//! pushed in a cycle can be popped downstream in the same cycle; a push is
//! blocked when the FIFO was full at the start of the cycle. Idle spans are
//! skipped in one jump.
//!
//! Weights live in a zero-initialized word memory written through
//! [`Pipeline::load_weights`]. The memory is read when an inference starts,
//! and writes are refused while one is in flight.

use alloc::collections::VecDeque;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write as _;

use crate::digest::sha256_hex;
use crate::error::{Error, Result};
use crate::fixed::quantize_raw;
use crate::model::ModelGraph;
use crate::perf::{stage_timing, Calibration, DesignPoint, StageTiming};
use crate::plan::StagePlan;

pub const DEFAULT_FIFO_DEPTH: usize = 2;

/// FIFO capacity; `None` is unbounded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FifoDepth(pub Option<usize>);

impl FifoDepth {
    pub const UNBOUNDED: FifoDepth = FifoDepth(None);

    /// `None` for zero.
    pub fn bounded(depth: usize) -> Option<Self> {
        (depth > 0).then_some(FifoDepth(Some(depth)))
    }
}

impl Default for FifoDepth {
    fn default() -> Self {
        FifoDepth(Some(DEFAULT_FIFO_DEPTH))
    }
}

/// One word write into weight memory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct WeightWrite {
    pub address: u32,
    pub raw: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LoadAck {
    pub words: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EventKind {
    Accept,
    Emit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TraceEvent {
    pub cycle: u64,
    pub stage: usize,
    pub kind: EventKind,
    pub element: usize,
    /// Occupancy of the FIFO this event touched (the stage's input FIFO for
    /// an accept, its output FIFO for an emit), after the transfer.
    pub occupancy: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct StageStats {
    pub first_accept: u64,
    pub last_accept: u64,
    pub first_emit: u64,
    pub last_emit: u64,
    /// Cycles outputs waited on a full downstream FIFO.
    pub stall_cycles: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InferenceResult {
    pub output: Vec<i64>,
    /// From the first input accepted to the last output leaving, inclusive.
    pub latency_cycles: u64,
    pub stages: Vec<StageStats>,
    /// Peak occupancy of each FIFO, input stream first.
    pub fifo_peak: Vec<usize>,
    pub trace: Vec<TraceEvent>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Receiving,
    Computing,
    Emitting,
    Done,
}

#[derive(Debug, Clone)]
struct StageState {
    phase: Phase,
    received: Vec<i64>,
    output: Vec<i64>,
    emitted: usize,
    /// Earliest cycle for the next accept or emit.
    ready: u64,
    stats: StageStats,
}

#[derive(Debug, Clone)]
struct Run {
    cycle: u64,
    input: Vec<i64>,
    sent: usize,
    fifos: Vec<VecDeque<i64>>,
    peak: Vec<usize>,
    stages: Vec<StageState>,
    output: Vec<i64>,
    first_accept: Option<u64>,
    last_output: u64,
    regs: Vec<i64>,
    trace: Option<Vec<TraceEvent>>,
}

/// A configured pipeline instance with its own weight memory.
#[derive(Debug, Clone)]
pub struct Pipeline {
    plan: StagePlan,
    design: DesignPoint,
    timings: Vec<StageTiming>,
    depth: FifoDepth,
    regs: Vec<i64>,
    written: Vec<bool>,
    run: Option<Run>,
    trace: bool,
}

impl Pipeline {
    /// Pipeline for a normalized graph. Weight memory starts at zero.
    pub fn build(graph: &ModelGraph, design: &DesignPoint, calib: &Calibration) -> Result<Self> {
        let plan = StagePlan::build(graph, design.precision)?;
        Ok(Self::from_plan(plan, design, calib))
    }

    /// The plan's precision replaces the design point's.
    pub fn from_plan(plan: StagePlan, design: &DesignPoint, calib: &Calibration) -> Self {
        let design = DesignPoint {
            precision: plan.format,
            ..*design
        };
        let timings = plan.stages.iter().map(|s| stage_timing(s, &design, calib)).collect();
        let words = plan.total_words() as usize;
        Pipeline {
            plan,
            design,
            timings,
            depth: FifoDepth::default(),
            regs: vec![0; words],
            written: vec![false; words],
            run: None,
            trace: false,
        }
    }

    pub fn with_fifo_depth(mut self, depth: FifoDepth) -> Self {
        self.depth = depth;
        self
    }

    pub fn with_trace(mut self, trace: bool) -> Self {
        self.trace = trace;
        self
    }

    pub fn plan(&self) -> &StagePlan {
        &self.plan
    }

    pub fn design(&self) -> &DesignPoint {
        &self.design
    }

    pub fn timings(&self) -> &[StageTiming] {
        &self.timings
    }

    pub fn fifo_depth(&self) -> FifoDepth {
        self.depth
    }

    pub fn word_count(&self) -> u32 {
        self.regs.len() as u32
    }

    pub fn weights(&self) -> &[i64] {
        &self.regs
    }

    pub fn is_busy(&self) -> bool {
        self.run.is_some()
    }

    /// Every word has been written at least once.
    pub fn fully_loaded(&self) -> bool {
        self.written.iter().all(|&w| w)
    }

    /// Hash of everything that defines the hardware: stage plan, timings and
    /// FIFO depth. Weight memory contents are excluded.
    pub fn structure_digest(&self) -> String {
        let mut text = self.plan.to_text();
        let _ = writeln!(text, "fifo {:?}", self.depth.0);
        for t in &self.timings {
            let _ = writeln!(text, "timing {} {}", t.ii, t.fill);
        }
        sha256_hex(text.as_bytes())
    }

    /// Apply writes in order. The batch is checked first and rejected whole
    /// on the first bad address or out-of-range word.
    pub fn load_weights(&mut self, writes: &[WeightWrite]) -> Result<LoadAck> {
        if self.is_busy() {
            return Err(Error::Busy);
        }
        let format = self.plan.format;
        for w in writes {
            if w.address as usize >= self.regs.len() {
                return Err(Error::AddressOutOfRange {
                    address: w.address,
                    bound: self.word_count(),
                });
            }
            if !format.contains_raw(w.raw) {
                return Err(Error::RawOutOfRange {
                    value: w.raw,
                    bits: format.total_bits(),
                });
            }
        }
        for w in writes {
            self.regs[w.address as usize] = w.raw;
            self.written[w.address as usize] = true;
        }
        Ok(LoadAck { words: writes.len() })
    }

    /// Write a full register image starting at address 0.
    pub fn load_image(&mut self, image: &[i64]) -> Result<LoadAck> {
        let writes: Vec<WeightWrite> = image
            .iter()
            .enumerate()
            .map(|(i, &raw)| WeightWrite { address: i as u32, raw })
            .collect();
        self.load_weights(&writes)
    }

    /// Quantize and load the parameters of `graph`, which must match the plan.
    pub fn load_graph_weights(&mut self, graph: &ModelGraph) -> Result<LoadAck> {
        let image = self.plan.register_image(graph);
        if image.len() != self.regs.len() {
            return Err(Error::ShapeMismatch {
                expected: self.regs.len(),
                actual: image.len(),
            });
        }
        self.load_image(&image)
    }

    /// Start an inference on raw input words.
    pub fn begin(&mut self, input: &[i64]) -> Result<()> {
        if self.is_busy() {
            return Err(Error::Busy);
        }
        if input.len() != self.plan.input_len {
            return Err(Error::ShapeMismatch {
                expected: self.plan.input_len,
                actual: input.len(),
            });
        }
        let n = self.plan.stages.len();
        self.run = Some(Run {
            cycle: 0,
            input: input.to_vec(),
            sent: 0,
            fifos: vec![VecDeque::new(); n + 1],
            peak: vec![0; n + 1],
            stages: (0..n)
                .map(|_| StageState {
                    phase: Phase::Receiving,
                    received: Vec::new(),
                    output: Vec::new(),
                    emitted: 0,
                    ready: 0,
                    stats: StageStats::default(),
                })
                .collect(),
            output: Vec::new(),
            first_accept: None,
            last_output: 0,
            regs: self.regs.clone(),
            trace: self.trace.then(Vec::new),
        });
        Ok(())
    }

    /// Advance to the next cycle with activity. Returns the result once the
    /// last output has left the pipeline.
    pub fn step(&mut self) -> Result<Option<InferenceResult>> {
        let run = self.run.as_mut().ok_or(Error::EmptyPipeline)?;
        if self.plan.stages.is_empty() {
            let output = run.input.clone();
            self.run = None;
            return Ok(Some(InferenceResult {
                output,
                latency_cycles: 0,
                stages: Vec::new(),
                fifo_peak: Vec::new(),
                trace: Vec::new(),
            }));
        }
        let active = run.tick(&self.plan, &self.timings, self.depth.0);
        if run.output.len() == self.plan.output_len() {
            let run = self.run.take().expect("running");
            let first = run.first_accept.unwrap_or(0);
            return Ok(Some(InferenceResult {
                output: run.output,
                latency_cycles: run.last_output - first + 1,
                stages: run.stages.into_iter().map(|s| s.stats).collect(),
                fifo_peak: run.peak,
                trace: run.trace.unwrap_or_default(),
            }));
        }
        run.cycle = if active { run.cycle + 1 } else { run.next_event() };
        Ok(None)
    }

    pub fn simulate_inference(&mut self, input: &[i64]) -> Result<InferenceResult> {
        self.begin(input)?;
        loop {
            if let Some(result) = self.step()? {
                return Ok(result);
            }
        }
    }

    /// Quantize a real-valued input, then simulate.
    pub fn infer(&mut self, input: &[f64]) -> Result<InferenceResult> {
        let raw: Vec<i64> = input.iter().map(|&v| quantize_raw(v, self.plan.format)).collect();
        self.simulate_inference(&raw)
    }
}

impl Run {
    fn push(&mut self, fifo: usize, value: i64) {
        self.fifos[fifo].push_back(value);
        self.peak[fifo] = self.peak[fifo].max(self.fifos[fifo].len());
    }

    fn record(&mut self, stage: usize, kind: EventKind, element: usize) {
        let cycle = self.cycle;
        let fifo = match kind {
            EventKind::Accept => stage,
            EventKind::Emit => stage + 1,
        };
        let occupancy = self.fifos[fifo].len();
        if let Some(trace) = self.trace.as_mut() {
            trace.push(TraceEvent {
                cycle,
                stage,
                kind,
                element,
                occupancy,
            });
        }
    }

    /// Process one cycle; `true` if anything moved.
    fn tick(&mut self, plan: &StagePlan, timings: &[StageTiming], cap: Option<usize>) -> bool {
        let c = self.cycle;
        let start: Vec<usize> = self.fifos.iter().map(VecDeque::len).collect();
        let has_room = |fifo: usize| cap.map_or(true, |d| start[fifo] < d);
        let mut active = false;

        if self.sent < self.input.len() && has_room(0) {
            let v = self.input[self.sent];
            self.push(0, v);
            self.sent += 1;
            active = true;
        }
        for (i, timing) in timings.iter().enumerate() {
            let (ii, fill) = (timing.ii, timing.fill);
            match self.stages[i].phase {
                Phase::Receiving if c >= self.stages[i].ready => {
                    if let Some(v) = self.fifos[i].pop_front() {
                        active = true;
                        let n = self.stages[i].received.len();
                        if n == 0 {
                            self.stages[i].stats.first_accept = c;
                            if i == 0 {
                                self.first_accept = Some(c);
                            }
                        }
                        self.record(i, EventKind::Accept, n);
                        let st = &mut self.stages[i];
                        st.received.push(v);
                        st.ready = c + ii;
                        st.stats.last_accept = c;
                        if st.received.len() == plan.stages[i].in_elems() {
                            st.output = plan.execute_stage(i, &st.received, &self.regs);
                            st.phase = Phase::Computing;
                            st.ready = c + fill + 1;
                        }
                    }
                }
                Phase::Computing if c >= self.stages[i].ready => {
                    self.stages[i].phase = Phase::Emitting;
                    active |= self.emit(i, ii, has_room(i + 1));
                }
                Phase::Emitting if c >= self.stages[i].ready => {
                    active |= self.emit(i, ii, has_room(i + 1));
                }
                _ => {}
            }
        }
        let last = plan.stages.len();
        if let Some(v) = self.fifos[last].pop_front() {
            self.output.push(v);
            self.last_output = c;
            active = true;
        }
        active
    }

    fn emit(&mut self, i: usize, ii: u64, room: bool) -> bool {
        let c = self.cycle;
        if !room {
            return false;
        }
        let st = &mut self.stages[i];
        let k = st.emitted;
        let v = st.output[k];
        st.stats.stall_cycles += c - st.ready;
        if k == 0 {
            st.stats.first_emit = c;
        }
        st.stats.last_emit = c;
        st.emitted += 1;
        st.ready = c + ii;
        if st.emitted == st.output.len() {
            st.phase = Phase::Done;
            st.received = Vec::new();
        }
        self.push(i + 1, v);
        self.record(i, EventKind::Emit, k);
        true
    }

    /// Earliest future cycle at which a timer expires. Only called after an
    /// idle cycle, where every waiting stage is waiting on its timer.
    fn next_event(&self) -> u64 {
        self.stages
            .iter()
            .filter(|s| s.phase != Phase::Done && s.ready > self.cycle)
            .map(|s| s.ready)
            .min()
            .unwrap_or(self.cycle + 1)
    }
}

/// Render a trace as one line per event.
pub fn format_trace(plan: &StagePlan, trace: &[TraceEvent]) -> String {
    let mut out = String::new();
    for e in trace {
        let kind = match e.kind {
            EventKind::Accept => "accept",
            EventKind::Emit => "emit",
        };
        let _ = writeln!(
            out,
            "{:>8} {:<16} {kind:<6} {:>6} fifo={}",
            e.cycle, plan.stages[e.stage].name, e.element, e.occupancy
        );
    }
    out
}

/// Simulated latency of `graph` with all-zero weights, for timing checks.
pub fn simulated_latency(
    graph: &ModelGraph,
    design: &DesignPoint,
    calib: &Calibration,
    depth: FifoDepth,
) -> Result<u64> {
    let mut p = Pipeline::build(graph, design, calib)?.with_fifo_depth(depth);
    let input = vec![0; p.plan().input_len];
    Ok(p.simulate_inference(&input)?.latency_cycles)
}
