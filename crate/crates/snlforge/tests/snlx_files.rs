use snlforge::core::model::{builtin, builtin_benchmarks};
use snlforge::core::qsim::{self, Dataset, Task};
use snlforge::core::TensorShape;
use snlforge::snlx::{self, SnlxError};

fn tiny_manifest() -> serde_json::Value {
    serde_json::json!({
        "format": "snlx-1",
        "name": "tiny",
        "input_shape": { "layout": "flat", "dims": [16] },
        "blob": "tiny.bin",
        "layers": [
            { "id": 0, "name": "fc", "kind": "Dense", "params": { "units": 64 },
              "kernel": { "offset": 0, "length": 4096 }, "bias": { "offset": 4096, "length": 256 } },
            { "id": 1, "name": "act", "kind": "ReLU" }
        ]
    })
}

fn tiny_blob() -> Vec<u8> {
    (0..16 * 64 + 64)
        .flat_map(|i| (i as f32 / 2048.0).to_le_bytes())
        .collect()
}

fn parse(v: serde_json::Value, blob: &[u8]) -> Result<snlforge::core::ModelGraph, SnlxError> {
    let manifest: snlx::ModelManifest = serde_json::from_value(v).unwrap();
    snlx::model_from_parts(&manifest, blob)
}

#[test]
fn builtins_round_trip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    for graph in builtin_benchmarks() {
        let path = snlx::write_model(&graph, dir.path()).unwrap();
        let back = snlx::load_model(&path).unwrap();
        // Weights are f32 on the wire; builtins are generated f32-exact.
        assert_eq!(back, graph, "{}", graph.name());
    }
}

#[test]
fn loaded_model_resolves_by_path() {
    let dir = tempfile::tempdir().unwrap();
    let graph = builtin("vww").unwrap();
    let path = snlx::write_model(&graph, dir.path()).unwrap();
    let resolved = snlforge::resolve_model(path.to_str().unwrap()).unwrap();
    let x = vec![0.25; graph.input_shape().len()];
    assert_eq!(
        qsim::run_float(&resolved, &x).unwrap(),
        qsim::run_float(&graph, &x).unwrap()
    );
}

#[test]
fn hand_written_manifest_loads() {
    let g = parse(tiny_manifest(), &tiny_blob()).unwrap();
    assert_eq!(g.param_count(), 16 * 64 + 64);
    assert_eq!(g.output_shape().len(), 64);
    assert_eq!(g.params(0).unwrap().bias[0], 1024.0 / 2048.0);
}

#[test]
fn bias_length_mismatch_is_rejected() {
    let mut m = tiny_manifest();
    m["layers"][0]["bias"]["length"] = (63 * 4).into();
    let err = parse(m, &tiny_blob()).unwrap_err();
    assert!(matches!(err, SnlxError::Model(_)), "{err}");
}

#[test]
fn branching_inputs_are_rejected() {
    let mut m = tiny_manifest();
    m["layers"][1]["inputs"] = serde_json::json!([0, 0]);
    assert!(matches!(parse(m, &tiny_blob()), Err(SnlxError::Layer { id: 1, .. })));

    let mut ok = tiny_manifest();
    ok["layers"][0]["inputs"] = serde_json::json!([]);
    ok["layers"][1]["inputs"] = serde_json::json!([0]);
    assert!(parse(ok, &tiny_blob()).is_ok());
}

#[test]
fn wrong_version_is_rejected() {
    let mut m = tiny_manifest();
    m["format"] = "snlx-2".into();
    assert!(matches!(parse(m, &tiny_blob()), Err(SnlxError::Version(v)) if v == "snlx-2"));
}

#[test]
fn short_blob_is_rejected() {
    let blob = tiny_blob();
    assert!(matches!(parse(tiny_manifest(), &blob[..4000]), Err(SnlxError::Blob(_))));
}

#[test]
fn missing_bias_is_rejected() {
    let mut m = tiny_manifest();
    m["layers"][0].as_object_mut().unwrap().remove("bias");
    assert!(matches!(parse(m, &tiny_blob()), Err(SnlxError::Layer { id: 0, .. })));
}

#[test]
fn unknown_kind_is_rejected() {
    let mut m = tiny_manifest();
    m["layers"][1]["kind"] = "LSTM".into();
    assert!(matches!(parse(m, &tiny_blob()), Err(SnlxError::Layer { id: 1, .. })));
}

#[test]
fn dataset_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let dataset = Dataset {
        task: Task::Classification,
        samples: (0..5).map(|i| (vec![i as f64 * 0.5; 16], (i % 3) as f64)).collect(),
    };
    let path = snlx::write_dataset(&dataset, "five", &TensorShape::flat(16), dir.path()).unwrap();
    assert_eq!(snlx::load_dataset(&path).unwrap(), dataset);
    // A dataset manifest is not a model.
    assert!(snlx::load_model(&path).is_err());
}
