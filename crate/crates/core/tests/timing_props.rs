use proptest::prelude::*;
use snlforge_core::model::{LayerParams, Padding, WeightSet};
use snlforge_core::perf::{estimate_latency, Calibration, DesignPoint, Strategy as HlsStrategy};
use snlforge_core::plan::StagePlan;
use snlforge_core::sim::{simulated_latency, FifoDepth};
use snlforge_core::{FixedFormat, LayerKind, LayerSpec, ModelGraph, TensorShape};

#[derive(Debug, Clone)]
enum Block {
    Conv {
        filters: usize,
        k: usize,
        stride: usize,
        same: bool,
    },
    Pool,
    Relu,
}

#[derive(Debug, Clone)]
struct Arch {
    image: Option<(usize, usize, usize)>,
    flat: usize,
    blocks: Vec<Block>,
    dense: Vec<(usize, bool)>,
    leading_relu: bool,
}

fn build(arch: &Arch) -> ModelGraph {
    let mut layers = Vec::new();
    let mut id = 0;
    let mut push = |kind: LayerKind| {
        layers.push(LayerSpec::new(id, format!("l{id}"), kind));
        id += 1;
    };
    if arch.leading_relu {
        push(LayerKind::ReLU);
    }
    let input = match arch.image {
        Some((h, w, c)) => {
            for b in &arch.blocks {
                match *b {
                    Block::Conv {
                        filters,
                        k,
                        stride,
                        same,
                    } => push(LayerKind::Conv2D {
                        filters,
                        kernel: (k, k),
                        strides: (stride, stride),
                        padding: if same { Padding::Same } else { Padding::Valid },
                    }),
                    Block::Pool => push(LayerKind::AveragePool2D {
                        pool: (2, 2),
                        strides: (2, 2),
                    }),
                    Block::Relu => push(LayerKind::ReLU),
                }
            }
            push(LayerKind::GlobalAveragePool2D);
            TensorShape::hwc(h, w, c)
        }
        None => TensorShape::flat(arch.flat),
    };
    for &(units, relu) in &arch.dense {
        push(LayerKind::Dense { units });
        if relu {
            push(LayerKind::ReLU);
        }
    }
    // Shapes first with empty weights, then fill zero parameters.
    let probe = snlforge_core::model::infer_shapes(&input, &layers);
    let shapes = match probe {
        Ok(s) => s,
        Err(_) => return ModelGraph::new("x", input, Vec::new(), WeightSet::new()).unwrap(),
    };
    let mut weights = WeightSet::new();
    for (l, s) in layers.iter().zip(&shapes) {
        if let Some((k, b)) = snlforge_core::model::param_shape(&l.kind, &s.input) {
            weights.insert(
                l.id,
                LayerParams {
                    kernel: vec![0.0; k],
                    bias: vec![0.0; b],
                },
            );
        }
    }
    ModelGraph::new("random", input, layers, weights).unwrap()
}

fn block() -> impl Strategy<Value = Block> {
    prop_oneof![
        (1usize..4, 1usize..4, 1usize..3, any::<bool>()).prop_map(|(filters, k, stride, same)| Block::Conv {
            filters,
            k,
            stride,
            same
        }),
        Just(Block::Pool),
        Just(Block::Relu),
    ]
}

fn arch() -> impl Strategy<Value = Arch> {
    (
        proptest::option::of((4usize..10, 4usize..10, 1usize..4)),
        1usize..24,
        proptest::collection::vec(block(), 0..3),
        proptest::collection::vec((1usize..24, any::<bool>()), 0..4),
        any::<bool>(),
    )
        .prop_map(|(image, flat, blocks, dense, leading_relu)| Arch {
            image,
            flat,
            blocks,
            dense,
            leading_relu,
        })
}

fn design() -> impl Strategy<Value = DesignPoint> {
    let fmt: FixedFormat = "16:6".parse().unwrap();
    prop_oneof![
        Just(DesignPoint::snl(fmt)),
        (1u32..9).prop_map(move |rf| DesignPoint::baked(fmt, HlsStrategy::Latency, rf).unwrap()),
        (2u32..9).prop_map(move |rf| DesignPoint::baked(fmt, HlsStrategy::Resource, rf).unwrap()),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn unbounded_sim_matches_closed_form(a in arch(), dp in design()) {
        let g = build(&a);
        let calib = Calibration::default();
        let plan = StagePlan::build(&g, dp.precision).unwrap();
        let closed = estimate_latency(&plan, &dp, &calib).cycles;
        prop_assert_eq!(simulated_latency(&g, &dp, &calib, FifoDepth::UNBOUNDED).unwrap(), closed);
    }

    #[test]
    fn shallower_fifos_never_faster(a in arch(), dp in design()) {
        let g = build(&a);
        let calib = Calibration::default();
        let mut previous = simulated_latency(&g, &dp, &calib, FifoDepth::UNBOUNDED).unwrap();
        for depth in [8, 4, 2, 1] {
            let lat = simulated_latency(&g, &dp, &calib, FifoDepth::bounded(depth).unwrap()).unwrap();
            prop_assert!(lat >= previous, "depth {} gave {} < {}", depth, lat, previous);
            previous = lat;
        }
    }
}

#[test]
fn generator_mostly_valid() {
    use proptest::strategy::ValueTree;
    let mut runner = proptest::test_runner::TestRunner::deterministic();
    let mut stages = 0;
    let mut valid = 0;
    for _ in 0..200 {
        let a = arch().new_tree(&mut runner).unwrap().current();
        let g = build(&a);
        if !g.layers().is_empty() {
            valid += 1;
        }
        stages += StagePlan::build(&g, "8:3".parse().unwrap()).unwrap().stages.len();
    }
    assert!(valid >= 150, "only {valid} of 200 random architectures are non-empty");
    assert!(stages >= 300, "{stages}");
}
