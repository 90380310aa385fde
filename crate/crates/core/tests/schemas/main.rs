//! Files the tools read and write conform to the JSON schemas in `schemas/`.

use std::fs;
use std::path::{Path, PathBuf};

use jsonschema::{Registry, Validator};
use normlab::certify::{
    certify_convention_sensitivity, certify_reproduction, certify_sanction_sensitivity, classify_normative, ActionFrame,
    ConventionOptions, NormOptions, SanctionOptions,
};
use normlab::experiments::{run_experiment, ExperimentConfig, ExperimentKind};
use normlab::lmae::{Engine, EngineOptions, Scenario, Verbosity};
use normlab::seq::{ActorId, Valence};
use serde_json::Value;

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn validator(name: &str) -> Validator {
    let backend = json(&root().join("schemas/backend.schema.json"));
    let registry = Registry::new().add("urn:normlab:backend", backend).unwrap().prepare().unwrap();
    jsonschema::options()
        .with_registry(&registry)
        .build(&json(&root().join(format!("schemas/{name}.schema.json"))))
        .unwrap()
}

fn check(v: &Validator, instance: &Value, what: &str) {
    let errors: Vec<String> = v.iter_errors(instance).map(|e| format!("{} at {}", e, e.instance_path())).collect();
    assert!(errors.is_empty(), "{what}: {errors:#?}");
}

fn scenario(name: &str) -> Scenario {
    Scenario::load(&root().join("scenarios").join(name)).unwrap()
}

fn frame(name: &str) -> ActionFrame {
    serde_json::from_value(json(&root().join("scenarios").join(name))).unwrap()
}

#[test]
fn schemas_are_valid_json_schema() {
    for entry in fs::read_dir(root().join("schemas")).unwrap() {
        let path = entry.unwrap().path();
        let schema = json(&path);
        assert!(jsonschema::meta::is_valid(&schema), "{}", path.display());
    }
}

#[test]
fn bundled_scenarios_and_frames_conform() {
    let scenarios = validator("scenario");
    let frames = validator("frame");
    for entry in fs::read_dir(root().join("scenarios")).unwrap() {
        let path = entry.unwrap().path();
        let value = json(&path);
        if value.get("actors").is_some() {
            check(&scenarios, &value, &path.display().to_string());
        } else {
            check(&frames, &value, &path.display().to_string());
        }
    }
    for case in json(&root().join("assets/sanction_controls.json"))["cases"].as_array().unwrap() {
        check(&frames, &case["frame"], case["name"].as_str().unwrap());
    }
    let bad = serde_json::json!({"name": "x", "initial_state": "", "horizon": 0, "backends": {}, "actors": [], "observation_rules": []});
    assert!(!scenarios.is_valid(&bad));
}

#[test]
fn traces_conform() {
    let v = validator("trace");
    for (s, verbosity) in [
        (scenario("greeting.json"), Verbosity::Full),
        (scenario("park.json"), Verbosity::Assemblies),
        (scenario("greeting.json"), Verbosity::Actions),
    ] {
        let (trace, _) = Engine::new(&s, 1, EngineOptions { verbosity, ticks: Some(3), ..Default::default() }).unwrap().run();
        for line in trace.to_jsonl().lines() {
            check(&v, &serde_json::from_str(line).unwrap(), line);
        }
    }
    check(&v, &serde_json::json!({"tick": 2, "error": "no rule"}), "error line");
    assert!(!v.is_valid(&serde_json::json!({"format": "normlab-trace", "version": 2, "scenario": "s", "seed": 0, "horizon": 1, "actors": [], "verbosity": "full"})));
}

#[test]
fn certification_outputs_conform() {
    let v = validator("report");
    let s = scenario("greeting.json");
    let actors = s.build_actors(&s.build_backends().unwrap()).unwrap();
    let carol = actors.iter().find(|a| a.id.as_str() == "Carol").unwrap();
    let f = frame("greeting_frame.json");
    let grid = [0.25, 0.5, 0.75, 1.0];
    let opts = ConventionOptions::new(&grid, 0);
    let reports = [
        serde_json::to_value(certify_convention_sensitivity(carol, &f, &opts).unwrap()).unwrap(),
        serde_json::to_value(certify_reproduction(carol, &f, 0.5, &opts).unwrap()).unwrap(),
        serde_json::to_value(
            certify_sanction_sensitivity(
                carol,
                &f,
                &SanctionOptions {
                    sanctioner: ActorId::new("Dave").unwrap(),
                    signal: "frowns".into(),
                    valence: Valence::Negative,
                    count: 1,
                    contextual: false,
                },
                0,
            )
            .unwrap(),
        )
        .unwrap(),
    ];
    for r in &reports {
        check(&v, r, &r["kind"].to_string());
    }
    let park = scenario("park.json");
    let pop = park.build_actors(&park.build_backends().unwrap()).unwrap();
    let norm = classify_normative(&pop, &[frame("litter_frame.json")], &NormOptions::new(grid.to_vec())).unwrap();
    check(&v, &serde_json::to_value(norm).unwrap(), "norm classification");
}

#[test]
fn experiment_configs_and_metrics_conform() {
    let configs = validator("experiment");
    let rows = validator("metrics");
    for kind in [
        ExperimentKind::NormStability,
        ExperimentKind::NormAdoption,
        ExperimentKind::TippingPoint,
        ExperimentKind::ConsolidationLesion,
        ExperimentKind::Polarization,
    ] {
        let c = ExperimentConfig::new(kind);
        check(&configs, &serde_json::to_value(&c).unwrap(), kind.label());
        check(&configs, &serde_json::json!({ "kind": kind }), kind.label());
    }
    assert!(!configs.is_valid(&serde_json::json!({"kind": "norm-stability", "population": 1})));
    let c = ExperimentConfig { horizon: 2, ..ExperimentConfig::new(ExperimentKind::NormAdoption) };
    for r in run_experiment(&c, Some(1)).unwrap().rows {
        check(&rows, &serde_json::to_value(&r).unwrap(), &r.metric);
    }
}
