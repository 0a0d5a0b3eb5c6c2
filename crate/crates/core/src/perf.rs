//! Closed-form latency and resource estimates per design point.
//!
//! The model works on the fused [`StagePlan`]. Every constant lives in
//! [`Calibration`]; the defaults are estimates meant to reproduce trends
//! (reuse factor, precision, weight storage), not vendor report numbers.
//!
//! Latency follows a store-and-forward streaming model: a stage accepts one
//! input element every `II` cycles, starts its datapath after the last input
//! (fill depth `D`), then emits one output element every `II` cycles. Between
//! two stages elements move at the slower of the two rates. For a chain with
//! enough buffering this gives
//!
//! ```text
//! cycles = 1 + sum(D_s + 1) + sum((n_j - 1) * g_j)
//! ```
//!
//! over stages `s` and stream interfaces `j` (input, interior, output), where
//! `n_j` is the element count of the interface and `g_j` the larger `II` of
//! its two ends (the external source and sink run at one element per cycle
//! and never throttle).

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};
use crate::fixed::{ceil_log2, FixedFormat};
use crate::plan::{Stage, StageOp, StagePlan};

/// Bits in one 18-kilobit block RAM.
pub const BRAM18_BITS: u64 = 18 * 1024;

/// Clock period, held in picoseconds so that latency conversions are exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ClockPeriod {
    picos: u64,
}

impl ClockPeriod {
    pub const DEFAULT: ClockPeriod = ClockPeriod { picos: 10_000 };

    /// `None` for a zero period.
    pub fn from_picos(picos: u64) -> Option<Self> {
        (picos > 0).then_some(ClockPeriod { picos })
    }

    pub fn from_nanos(nanos: u64) -> Option<Self> {
        Self::from_picos(nanos.checked_mul(1000)?)
    }

    pub fn picos(&self) -> u64 {
        self.picos
    }
}

impl Default for ClockPeriod {
    fn default() -> Self {
        Self::DEFAULT
    }
}

impl fmt::Display for ClockPeriod {
    /// Nanoseconds as an exact decimal.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&exact_decimal(u128::from(self.picos), 3))
    }
}

/// `value / 10^scale` as a decimal string without trailing zeros.
pub fn exact_decimal(value: u128, scale: u32) -> String {
    let div = 10u128.pow(scale);
    let (int, frac) = (value / div, value % div);
    if frac == 0 {
        return int.to_string();
    }
    let digits = format!("{frac:0width$}", width = scale as usize);
    format!("{int}.{}", digits.trim_end_matches('0'))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Strategy {
    Latency,
    Resource,
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Latency => "latency",
            Strategy::Resource => "resource",
        }
    }

    pub fn letter(&self) -> char {
        match self {
            Strategy::Latency => 'L',
            Strategy::Resource => 'R',
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "latency" | "l" => Some(Strategy::Latency),
            "resource" | "r" => Some(Strategy::Resource),
            _ => None,
        }
    }
}

/// Hardware flavor: runtime-loaded weights, or weights baked into the fabric
/// at synthesis with a strategy and reuse factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Framework {
    Snl,
    Baked { strategy: Strategy, reuse_factor: u32 },
}

impl Framework {
    pub fn name(&self) -> &'static str {
        match self {
            Framework::Snl => "snl",
            Framework::Baked { .. } => "baked",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DesignPoint {
    pub framework: Framework,
    pub precision: FixedFormat,
    pub clock: ClockPeriod,
}

impl DesignPoint {
    pub fn snl(precision: FixedFormat) -> Self {
        DesignPoint {
            framework: Framework::Snl,
            precision,
            clock: ClockPeriod::DEFAULT,
        }
    }

    /// Rejects a zero reuse factor and the resource strategy at RF = 1.
    pub fn baked(precision: FixedFormat, strategy: Strategy, reuse_factor: u32) -> Result<Self> {
        if reuse_factor == 0 {
            return Err(Error::InvalidDesignPoint("reuse factor must be at least 1".to_string()));
        }
        if strategy == Strategy::Resource && reuse_factor == 1 {
            return Err(Error::InvalidDesignPoint(
                "the resource strategy is not used with reuse factor 1".to_string(),
            ));
        }
        Ok(DesignPoint {
            framework: Framework::Baked { strategy, reuse_factor },
            precision,
            clock: ClockPeriod::DEFAULT,
        })
    }

    pub fn with_clock(mut self, clock: ClockPeriod) -> Self {
        self.clock = clock;
        self
    }

    pub fn strategy(&self) -> Option<Strategy> {
        match self.framework {
            Framework::Snl => None,
            Framework::Baked { strategy, .. } => Some(strategy),
        }
    }

    pub fn reuse_factor(&self) -> Option<u32> {
        match self.framework {
            Framework::Snl => None,
            Framework::Baked { reuse_factor, .. } => Some(reuse_factor),
        }
    }

    /// Short bar label: `SNL`, `L-RF2`, `R-RF8`.
    pub fn label(&self) -> String {
        match self.framework {
            Framework::Snl => "SNL".to_string(),
            Framework::Baked { strategy, reuse_factor } => format!("{}-RF{reuse_factor}", strategy.letter()),
        }
    }
}

/// Estimator constants. Integer-valued keys are stored as `u64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    /// Multipliers of at most this many bits map to LUTs instead of DSPs.
    pub lut_mult_threshold: u64,
    /// LUTs per LUT-mapped multiplier, per squared operand bit.
    pub lut_per_bit: f64,
    /// Adder LUTs per multiplier lane, per operand bit.
    pub lut_per_adder_bit: f64,
    /// Control LUTs per stage.
    pub lut_per_stage: u64,
    /// LUTs per weight bit when weights are baked as constants (latency strategy).
    pub weight_lut_per_bit: f64,
    /// FFs per weight bit when weights are baked as constants (latency strategy).
    pub weight_ff_per_bit: f64,
    /// FFs per data bit per pipeline register (lanes x fill depth).
    pub ff_per_pipeline_stage: f64,
    /// Address decode and handshake FFs per parameterized layer (runtime weights only).
    pub regmap_ff_per_layer: u64,
    /// FIFOs holding more bits than this move to block RAM.
    pub fifo_lutram_threshold: u64,
    /// Pipeline depth of one multiplier.
    pub mult_latency: u64,
    /// Effective reuse factor of the runtime-weight backend (1 = fully parallel).
    pub snl_parallelism: u64,
    pub infra_lut: u64,
    pub infra_ff: u64,
    pub infra_dsp: u64,
    pub infra_bram: u64,
}

impl Default for Calibration {
    fn default() -> Self {
        Calibration {
            lut_mult_threshold: 8,
            lut_per_bit: 1.0,
            lut_per_adder_bit: 1.0,
            lut_per_stage: 150,
            weight_lut_per_bit: 0.5,
            weight_ff_per_bit: 0.25,
            ff_per_pipeline_stage: 1.0,
            regmap_ff_per_layer: 96,
            fifo_lutram_threshold: 1024,
            mult_latency: 5,
            snl_parallelism: 1,
            infra_lut: 1200,
            infra_ff: 2000,
            infra_dsp: 0,
            infra_bram: 0,
        }
    }
}

impl Calibration {
    pub const KEYS: [&'static str; 15] = [
        "lut_mult_threshold",
        "lut_per_bit",
        "lut_per_adder_bit",
        "lut_per_stage",
        "weight_lut_per_bit",
        "weight_ff_per_bit",
        "ff_per_pipeline_stage",
        "regmap_ff_per_layer",
        "fifo_lutram_threshold",
        "mult_latency",
        "snl_parallelism",
        "infra_lut",
        "infra_ff",
        "infra_dsp",
        "infra_bram",
    ];

    /// Set one constant by key. Integer keys reject fractional or negative
    /// values; all values must be finite and non-negative.
    pub fn set(&mut self, key: &str, value: f64) -> Result<()> {
        let bad = |message: &str| Error::InvalidConfig {
            key: key.to_string(),
            message: message.to_string(),
        };
        if !value.is_finite() || value < 0.0 {
            return Err(bad("must be a finite non-negative number"));
        }
        let int = || {
            if libm::trunc(value) == value && value <= u64::MAX as f64 {
                Ok(value as u64)
            } else {
                Err(bad("must be a whole number"))
            }
        };
        match key {
            "lut_mult_threshold" => self.lut_mult_threshold = int()?,
            "lut_per_bit" => self.lut_per_bit = value,
            "lut_per_adder_bit" => self.lut_per_adder_bit = value,
            "lut_per_stage" => self.lut_per_stage = int()?,
            "weight_lut_per_bit" => self.weight_lut_per_bit = value,
            "weight_ff_per_bit" => self.weight_ff_per_bit = value,
            "ff_per_pipeline_stage" => self.ff_per_pipeline_stage = value,
            "regmap_ff_per_layer" => self.regmap_ff_per_layer = int()?,
            "fifo_lutram_threshold" => self.fifo_lutram_threshold = int()?,
            "mult_latency" => self.mult_latency = int()?,
            "snl_parallelism" => {
                let v = int()?;
                if v == 0 {
                    return Err(bad("must be at least 1"));
                }
                self.snl_parallelism = v;
            }
            "infra_lut" => self.infra_lut = int()?,
            "infra_ff" => self.infra_ff = int()?,
            "infra_dsp" => self.infra_dsp = int()?,
            "infra_bram" => self.infra_bram = int()?,
            _ => return Err(bad("unknown calibration key")),
        }
        Ok(())
    }

    /// DSP blocks for one multiplier of `bits`-wide operands.
    pub fn dsp_per_mult(&self, bits: u32) -> u64 {
        if u64::from(bits) <= self.lut_mult_threshold {
            0
        } else {
            u64::from(bits.div_ceil(18)) * u64::from(bits.div_ceil(27))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Resource {
    Lut,
    Ff,
    Dsp,
    Bram,
}

impl Resource {
    pub const ALL: [Resource; 4] = [Resource::Lut, Resource::Ff, Resource::Dsp, Resource::Bram];

    pub fn name(&self) -> &'static str {
        match self {
            Resource::Lut => "LUT",
            Resource::Ff => "FF",
            Resource::Dsp => "DSP",
            Resource::Bram => "BRAM",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|r| r.name().eq_ignore_ascii_case(s))
    }
}

/// LUT/FF/DSP/BRAM counts; BRAM in 18-kilobit blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Resources {
    pub lut: u64,
    pub ff: u64,
    pub dsp: u64,
    pub bram: u64,
}

impl Resources {
    pub fn get(&self, r: Resource) -> u64 {
        match r {
            Resource::Lut => self.lut,
            Resource::Ff => self.ff,
            Resource::Dsp => self.dsp,
            Resource::Bram => self.bram,
        }
    }

    fn add(&mut self, other: &Resources) {
        self.lut += other.lut;
        self.ff += other.ff;
        self.dsp += other.dsp;
        self.bram += other.bram;
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageResources {
    pub stage: String,
    pub multipliers: u64,
    pub resources: Resources,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResourceEstimate {
    pub total: Resources,
    pub stages: Vec<StageResources>,
    /// Stream FIFOs between stages.
    pub fifos: Resources,
    pub infrastructure: Resources,
}

impl ResourceEstimate {
    /// BRAM in 36-kilobit blocks.
    pub fn bram_36k(&self) -> u64 {
        self.total.bram.div_ceil(2)
    }
}

/// Device capacity, BRAM in 18-kilobit blocks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeviceProfile {
    pub name: String,
    pub capacity: Resources,
}

impl DeviceProfile {
    /// Xilinx ZCU102 (XCZU9EG): 274,080 LUT, 548,160 FF, 2,520 DSP,
    /// 912 x 36 kb = 1,824 x 18 kb BRAM.
    pub fn zcu102() -> Self {
        DeviceProfile {
            name: "zcu102".to_string(),
            capacity: Resources {
                lut: 274_080,
                ff: 548_160,
                dsp: 2_520,
                bram: 1_824,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        for r in Resource::ALL {
            if self.capacity.get(r) == 0 {
                return Err(Error::InvalidConfig {
                    key: String::from(r.name()),
                    message: "capacity must be positive".to_string(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Exceeded {
    pub resource: Resource,
    pub used: u64,
    pub available: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Feasibility {
    Fits,
    Exceeds(Vec<Exceeded>),
}

impl Feasibility {
    pub fn fits(&self) -> bool {
        matches!(self, Feasibility::Fits)
    }
}

pub fn check_fit(estimate: &Resources, profile: &DeviceProfile) -> Feasibility {
    let exceeded: Vec<Exceeded> = Resource::ALL
        .into_iter()
        .filter_map(|r| {
            let (used, available) = (estimate.get(r), profile.capacity.get(r));
            (used > available).then_some(Exceeded {
                resource: r,
                used,
                available,
            })
        })
        .collect();
    if exceeded.is_empty() {
        Feasibility::Fits
    } else {
        Feasibility::Exceeds(exceeded)
    }
}

/// Initiation interval and fill depth of one stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StageTiming {
    pub ii: u64,
    pub fill: u64,
}

pub fn stage_timing(stage: &Stage, dp: &DesignPoint, calib: &Calibration) -> StageTiming {
    let ii = match dp.framework {
        Framework::Baked {
            strategy: Strategy::Resource,
            reuse_factor,
        } => u64::from(reuse_factor),
        _ => 1,
    };
    let fill = match stage.op {
        StageOp::Relu { .. } => 1,
        _ => calib.mult_latency + u64::from(ceil_log2(stage.fan_in())),
    };
    StageTiming { ii, fill: fill.max(1) }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageLatency {
    pub stage: String,
    pub timing: StageTiming,
    /// Cycles spent streaming this stage's input interface.
    pub input_drain: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LatencyEstimate {
    pub cycles: u64,
    pub clock: ClockPeriod,
    pub stages: Vec<StageLatency>,
    pub output_drain: u64,
}

impl LatencyEstimate {
    pub fn picoseconds(&self) -> u128 {
        u128::from(self.cycles) * u128::from(self.clock.picos())
    }

    /// Exact decimal microseconds.
    pub fn microseconds(&self) -> String {
        exact_decimal(self.picoseconds(), 6)
    }

    pub fn microseconds_f64(&self) -> f64 {
        self.picoseconds() as f64 / 1e6
    }
}

/// Closed-form chain latency; weight loading is not part of it.
pub fn estimate_latency(plan: &StagePlan, dp: &DesignPoint, calib: &Calibration) -> LatencyEstimate {
    let timings: Vec<StageTiming> = plan.stages.iter().map(|s| stage_timing(s, dp, calib)).collect();
    chain_latency(plan, &timings, dp.clock)
}

/// Latency of a chain of stages with the given timings.
pub fn chain_latency(plan: &StagePlan, timings: &[StageTiming], clock: ClockPeriod) -> LatencyEstimate {
    if plan.stages.is_empty() {
        return LatencyEstimate {
            cycles: 0,
            clock,
            stages: Vec::new(),
            output_drain: 0,
        };
    }
    let mut cycles = 1;
    let mut stages = Vec::with_capacity(plan.stages.len());
    let mut upstream_ii = 1;
    for (stage, timing) in plan.stages.iter().zip(timings) {
        let input_drain = (stage.in_elems() as u64 - 1) * upstream_ii.max(timing.ii);
        cycles += input_drain + timing.fill + 1;
        stages.push(StageLatency {
            stage: stage.name.clone(),
            timing: *timing,
            input_drain,
        });
        upstream_ii = timing.ii;
    }
    let last = plan.stages.last().expect("non-empty");
    let output_drain = (last.out_elems() as u64 - 1) * upstream_ii;
    cycles += output_drain;
    LatencyEstimate {
        cycles,
        clock,
        stages,
        output_drain,
    }
}

/// Effective reuse factor for multiplier sharing.
fn reuse(dp: &DesignPoint, calib: &Calibration) -> u64 {
    match dp.framework {
        Framework::Snl => calib.snl_parallelism.max(1),
        Framework::Baked { reuse_factor, .. } => u64::from(reuse_factor),
    }
}

fn bram_blocks(bits: u64) -> u64 {
    bits.div_ceil(BRAM18_BITS)
}

fn scaled(count: u64, factor: f64) -> u64 {
    libm::ceil(count as f64 * factor) as u64
}

/// Per-stage and total resource estimate.
pub fn estimate_resources(plan: &StagePlan, dp: &DesignPoint, calib: &Calibration) -> ResourceEstimate {
    let bits = u64::from(dp.precision.total_bits());
    let rf = reuse(dp, calib);
    let dsp_per_mult = calib.dsp_per_mult(dp.precision.total_bits());
    let mut total = Resources::default();
    let mut stages = Vec::with_capacity(plan.stages.len());
    for stage in &plan.stages {
        let timing = stage_timing(stage, dp, calib);
        let multipliers = match stage.op {
            StageOp::Dense { .. } | StageOp::Conv2D { .. } => (stage.weight_mults() as u64).div_ceil(rf),
            StageOp::AveragePool { .. } | StageOp::GlobalAveragePool { .. } => 1,
            StageOp::Relu { .. } => 0,
        };
        let params = u64::from(stage.param_words());
        let mut r = Resources {
            dsp: multipliers * dsp_per_mult,
            lut: calib.lut_per_stage + scaled(multipliers * bits, calib.lut_per_adder_bit),
            ff: scaled(multipliers.max(1) * timing.fill * bits, calib.ff_per_pipeline_stage),
            bram: 0,
        };
        if dsp_per_mult == 0 {
            r.lut += multipliers * scaled(bits * bits, calib.lut_per_bit);
        }
        if params > 0 {
            match dp.framework {
                Framework::Snl => {
                    r.bram += bram_blocks(params * bits);
                    r.ff += calib.regmap_ff_per_layer;
                }
                Framework::Baked {
                    strategy: Strategy::Resource,
                    ..
                } => r.bram += bram_blocks(params * bits),
                Framework::Baked {
                    strategy: Strategy::Latency,
                    ..
                } => {
                    r.lut += scaled(params * bits, calib.weight_lut_per_bit);
                    r.ff += scaled(params * bits, calib.weight_ff_per_bit);
                }
            }
        }
        if let StageOp::Conv2D { window, .. } = &stage.op {
            let rows = window.kernel.0.saturating_sub(1) as u64;
            r.bram += bram_blocks(rows * (window.in_w * window.channels) as u64 * bits);
        }
        total.add(&r);
        stages.push(StageResources {
            stage: stage.name.clone(),
            multipliers,
            resources: r,
        });
    }
    let mut fifos = Resources::default();
    for pair in plan.stages.windows(2) {
        let fifo_bits = pair[0].out_elems() as u64 * bits;
        if fifo_bits > calib.fifo_lutram_threshold {
            fifos.bram += bram_blocks(fifo_bits);
        } else {
            fifos.lut += fifo_bits.div_ceil(64).max(1);
        }
    }
    total.add(&fifos);
    let infrastructure = Resources {
        lut: calib.infra_lut,
        ff: calib.infra_ff,
        dsp: calib.infra_dsp,
        bram: calib.infra_bram,
    };
    total.add(&infrastructure);
    ResourceEstimate {
        total,
        stages,
        fifos,
        infrastructure,
    }
}
