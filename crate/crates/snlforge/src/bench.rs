//! Benchmark sweep over models, precisions and design points.
//!
//! Records come out in a fixed order: model, precision, framework (runtime
//! weights first), strategy (latency, then resource), reuse factor
//! ascending. The resource strategy at RF = 1 is never generated.

use rayon::prelude::*;
use snlforge_core::model::ModelGraph;
use snlforge_core::perf::{
    check_fit, estimate_latency, estimate_resources, Calibration, ClockPeriod, DesignPoint, DeviceProfile, Exceeded,
    Feasibility, LatencyEstimate, ResourceEstimate, Strategy,
};
use snlforge_core::plan::StagePlan;
use snlforge_core::sim::{FifoDepth, Pipeline};
use snlforge_core::FixedFormat;
use thiserror::Error;

use crate::config::Divergences;
use crate::resolve_model;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("model {name}: {message}")]
    Model { name: String, message: String },
    #[error("empty sweep: {0}")]
    Empty(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FrameworkKind {
    Snl,
    Baked,
}

impl FrameworkKind {
    pub fn from_name(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "snl" => Some(FrameworkKind::Snl),
            "baked" | "hls4ml" => Some(FrameworkKind::Baked),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepSpec {
    /// Builtin names or `snlx-1` manifest paths.
    pub models: Vec<String>,
    pub precisions: Vec<FixedFormat>,
    pub frameworks: Vec<FrameworkKind>,
    pub strategies: Vec<Strategy>,
    pub reuse_factors: Vec<u32>,
    pub profile: DeviceProfile,
    pub calibration: Calibration,
    pub clock: ClockPeriod,
    /// Cross-check runtime-weight latency with the cycle simulator.
    pub simulate: bool,
    pub divergences: Divergences,
}

impl Default for SweepSpec {
    /// Four builtins, three precisions, runtime weights plus seven baked
    /// variants each: 96 points.
    fn default() -> Self {
        SweepSpec {
            models: ["jet", "anomaly", "kws", "vww"].map(String::from).to_vec(),
            precisions: ["32:16", "16:6", "8:3"].map(|p| p.parse().expect("valid")).to_vec(),
            frameworks: vec![FrameworkKind::Snl, FrameworkKind::Baked],
            strategies: vec![Strategy::Latency, Strategy::Resource],
            reuse_factors: vec![1, 2, 4, 8],
            profile: DeviceProfile::zcu102(),
            calibration: Calibration::default(),
            clock: ClockPeriod::DEFAULT,
            simulate: false,
            divergences: Divergences::shipped(),
        }
    }
}

fn dedup<T: PartialEq + Clone>(items: &[T]) -> Vec<T> {
    let mut out: Vec<T> = Vec::with_capacity(items.len());
    for item in items {
        if !out.contains(item) {
            out.push(item.clone());
        }
    }
    out
}

impl SweepSpec {
    /// Ordered, duplicate-free design points for one precision.
    pub fn design_points(&self, precision: FixedFormat) -> Vec<DesignPoint> {
        let mut frameworks = dedup(&self.frameworks);
        frameworks.sort();
        let mut strategies = dedup(&self.strategies);
        strategies.sort();
        let mut rfs = dedup(&self.reuse_factors);
        rfs.sort_unstable();
        let mut points = Vec::new();
        for fw in frameworks {
            match fw {
                FrameworkKind::Snl => points.push(DesignPoint::snl(precision).with_clock(self.clock)),
                FrameworkKind::Baked => {
                    for &strategy in &strategies {
                        for &rf in &rfs {
                            if let Ok(dp) = DesignPoint::baked(precision, strategy, rf) {
                                points.push(dp.with_clock(self.clock));
                            }
                        }
                    }
                }
            }
        }
        points
    }

    /// `(model, design point)` pairs in record order.
    pub fn points(&self) -> Vec<(String, DesignPoint)> {
        let mut out = Vec::new();
        for model in dedup(&self.models) {
            for &precision in &dedup(&self.precisions) {
                for dp in self.design_points(precision) {
                    out.push((model.clone(), dp));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SweepRecord {
    pub model: String,
    pub design: DesignPoint,
    pub resources: ResourceEstimate,
    pub latency: LatencyEstimate,
    pub simulated_cycles: Option<u64>,
    pub fit: Feasibility,
    /// Known-divergence note; marks the point as failed.
    pub annotation: Option<String>,
}

impl SweepRecord {
    pub fn feasible(&self) -> bool {
        self.fit.fits() && self.annotation.is_none()
    }

    pub fn exceeded(&self) -> &[Exceeded] {
        match &self.fit {
            Feasibility::Fits => &[],
            Feasibility::Exceeds(list) => list,
        }
    }

    pub fn group_key(&self) -> String {
        group_key(&self.model, self.design.precision)
    }
}

pub fn group_key(model: &str, precision: FixedFormat) -> String {
    format!("{model}-{precision}")
}

fn load(name: &str) -> Result<ModelGraph, BenchError> {
    let err = |message: String| BenchError::Model {
        name: name.to_string(),
        message,
    };
    resolve_model(name)
        .map_err(|e| err(e.to_string()))?
        .normalize_for_hardware()
        .map_err(|e| err(e.to_string()))
}

/// Evaluate every point of the sweep; points run in parallel, output order
/// follows [`SweepSpec::points`].
pub fn run_sweep(spec: &SweepSpec) -> Result<Vec<SweepRecord>, BenchError> {
    let points = spec.points();
    if points.is_empty() {
        return Err(BenchError::Empty("no models, precisions or frameworks selected"));
    }
    let models = dedup(&spec.models);
    let graphs: Vec<(String, ModelGraph)> = models
        .par_iter()
        .map(|m| load(m).map(|g| (m.clone(), g)))
        .collect::<Result<_, _>>()?;
    let precisions = dedup(&spec.precisions);
    let plans: Vec<((String, FixedFormat), StagePlan)> = graphs
        .par_iter()
        .flat_map_iter(|(m, g)| precisions.iter().map(move |&p| (m, g, p)))
        .map(|(m, g, p)| {
            StagePlan::build(g, p)
                .map(|plan| ((m.clone(), p), plan))
                .map_err(|e| BenchError::Model {
                    name: m.clone(),
                    message: e.to_string(),
                })
        })
        .collect::<Result<_, _>>()?;
    let plan_for = |model: &str, p: FixedFormat| {
        &plans
            .iter()
            .find(|((m, q), _)| m == model && *q == p)
            .expect("plan built for every model and precision")
            .1
    };
    Ok(points
        .par_iter()
        .map(|(model, dp)| {
            let plan = plan_for(model, dp.precision);
            let resources = estimate_resources(plan, dp, &spec.calibration);
            let latency = estimate_latency(plan, dp, &spec.calibration);
            let simulated_cycles = (spec.simulate && dp.reuse_factor().is_none()).then(|| {
                let mut p =
                    Pipeline::from_plan(plan.clone(), dp, &spec.calibration).with_fifo_depth(FifoDepth::default());
                let input = vec![0; plan.input_len];
                p.simulate_inference(&input)
                    .expect("input length matches the plan")
                    .latency_cycles
            });
            SweepRecord {
                model: model.clone(),
                design: *dp,
                fit: check_fit(&resources.total, &spec.profile),
                resources,
                latency,
                simulated_cycles,
                annotation: spec.divergences.find(model, dp).map(|d| d.note.clone()),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use snlforge_core::perf::Resource;

    #[test]
    fn default_sweep_shape() {
        let spec = SweepSpec::default();
        let points = spec.points();
        assert_eq!(points.len(), 96);
        let labels: Vec<String> = spec
            .design_points("8:3".parse().unwrap())
            .iter()
            .map(|d| d.label())
            .collect();
        assert_eq!(
            labels,
            ["SNL", "L-RF1", "L-RF2", "L-RF4", "L-RF8", "R-RF2", "R-RF4", "R-RF8"]
        );
    }

    #[test]
    fn duplicates_removed() {
        let spec = SweepSpec {
            models: vec!["jet".into(), "jet".into()],
            precisions: vec!["16:6".parse().unwrap(); 2],
            frameworks: vec![FrameworkKind::Snl],
            ..SweepSpec::default()
        };
        assert_eq!(run_sweep(&spec).unwrap().len(), 1);
    }

    #[test]
    fn anomaly_32_16_latency_rf1_rf2_infeasible() {
        let spec = SweepSpec {
            models: vec!["anomaly".into()],
            precisions: vec!["32:16".parse().unwrap()],
            frameworks: vec![FrameworkKind::Baked],
            strategies: vec![Strategy::Latency],
            reuse_factors: vec![1, 2],
            ..SweepSpec::default()
        };
        let records = run_sweep(&spec).unwrap();
        assert_eq!(records.len(), 2);
        for r in records {
            assert!(!r.feasible());
            assert!(r.exceeded().iter().any(|e| e.resource == Resource::Dsp));
        }
    }

    #[test]
    fn unknown_model_is_an_error() {
        let spec = SweepSpec {
            models: vec!["nope".into()],
            ..SweepSpec::default()
        };
        assert!(matches!(run_sweep(&spec), Err(BenchError::Model { .. })));
    }

    #[test]
    fn simulation_agrees_with_closed_form() {
        let spec = SweepSpec {
            frameworks: vec![FrameworkKind::Snl],
            simulate: true,
            ..SweepSpec::default()
        };
        for r in run_sweep(&spec).unwrap() {
            assert_eq!(r.simulated_cycles, Some(r.latency.cycles), "{}", r.group_key());
        }
    }
}
