use std::process::{Command, Output};

use serde_json::Value;

fn tower(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tower")).args(args).output().expect("binary runs")
}

fn json_of(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn schema() -> jsonschema::Validator {
    let text =
        std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../core/schema/report.schema.json")).unwrap();
    jsonschema::validator_for(&serde_json::from_str(&text).unwrap()).unwrap()
}

fn assert_valid(v: &Value) {
    let errors: Vec<String> = schema().iter_errors(v).map(|e| format!("{} at {}", e, e.instance_path())).collect();
    assert!(errors.is_empty(), "{errors:#?}");
}

#[test]
fn build_reports_differents() {
    let out = tower(&["build", "--levels", "3"]);
    assert!(out.status.success());
    let v = json_of(&out);
    assert_valid(&v);
    assert_eq!(v["kind"], "build");
    assert_eq!(v["tower"]["max_level"], 3);
    let diffs: Vec<&str> =
        v["body"]["levels"].as_array().unwrap().iter().map(|l| l["different_over_k0"].as_str().unwrap()).collect();
    assert_eq!(diffs, ["0", "1", "2", "3"]);
}

#[test]
fn constants_report_is_byte_identical_and_valid() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    for path in [&a, &b] {
        let out =
            tower(&["constants", "--levels", "3", "--units", "50", "--seed", "9", "--out", path.to_str().unwrap()]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let (ta, tb) = (std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(ta, tb);
    let v: Value = serde_json::from_slice(&ta).unwrap();
    assert_valid(&v);
    assert_eq!(v["body"]["a"], "0");
    assert_eq!(v["body"]["b"], "0");
    assert_eq!(v["seed"], 9);
    assert_eq!(v["library"]["name"], "cyclotower");
}

#[test]
fn config_file_and_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tower.json");
    std::fs::write(&cfg, r#"{"p": 2, "s": 2, "max_level": 2, "prec": 40}"#).unwrap();
    let v = json_of(&tower(&["build", "--config", cfg.to_str().unwrap()]));
    assert_eq!(v["tower"], serde_json::json!({"p": 2, "s": 2, "max_level": 2, "prec": 40}));
    let v = json_of(&tower(&["build", "--config", cfg.to_str().unwrap(), "--levels", "1"]));
    assert_eq!(v["tower"]["max_level"], 1);
    let v = json_of(&tower(&["build", "--config", cfg.to_str().unwrap(), "--p", "5", "--levels", "1"]));
    assert_eq!((v["tower"]["p"].as_u64(), v["tower"]["s"].as_u64()), (Some(5), Some(1)));
}

#[test]
fn verify_quick_suite_passes() {
    let out = tower(&["verify", "theorem-b", "--levels", "3", "--units", "20", "--quick"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json_of(&out);
    assert_valid(&v);
    assert_eq!(v["passed"], true);
    assert_eq!(v["body"]["suites"][0]["suite"], "theorem-b");
}

#[test]
fn verify_all_quick_on_p2() {
    let out = tower(&["verify", "all", "--p", "2", "--levels", "3", "--units", "20", "--quick"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json_of(&out);
    assert_eq!(v["body"]["suites"].as_array().unwrap().len(), 12);
}

#[test]
fn unknown_suite_is_usage_error() {
    let out = tower(&["verify", "nonsense", "--levels", "1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nonsense"));
}

#[test]
fn w2_of_zeta9() {
    let out = tower(&["w2", "--levels", "2", "--element", r#"{"level":1,"coeffs":[0,1]}"#]);
    assert!(out.status.success());
    let v = json_of(&out);
    assert_valid(&v);
    assert_eq!(v["body"]["w2"], -1);
    assert_eq!(v["body"]["valuation"], "0");
}

#[test]
fn series_of_zeta9_fails_strict_membership() {
    let out = tower(&["series", "--levels", "2", "--invert", "--element", r#"{"level":1,"coeffs":[0,1]}"#]);
    assert!(out.status.success());
    let v = json_of(&out);
    assert_valid(&v);
    let body = &v["body"];
    assert_eq!(body["roundtrip"], true);
    assert_eq!(body["membership"]["strict"], false);
    assert_eq!(body["membership"]["slack"], 1);
    assert_eq!(body["membership"]["accepted"], true);
    assert_eq!(body["flatness"][0]["margin"], "1/2");
    assert_eq!(body["series"]["terms"].as_array().unwrap().len(), 1);
    assert!(body["inverse"].is_object());
}

#[test]
fn decompose_kernel_element() {
    // 27 rho_3 = 27 (zeta_81 - 1)
    let mut coeffs = vec![0i64; 54];
    coeffs[0] = -27;
    coeffs[1] = 27;
    let lit = serde_json::json!({"level": 3, "coeffs": coeffs}).to_string();
    let out = tower(&["decompose", "--levels", "3", "--n1", "2", "--element", &lit]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json_of(&out);
    assert_valid(&v);
    assert_eq!(v["body"]["exact"], true);
    assert_eq!(v["body"]["pieces"].as_array().unwrap().len(), 1);
}

#[test]
fn decompose_rejects_nonzero_differential() {
    let out = tower(&["decompose", "--levels", "2", "--n1", "0", "--element", r#"{"level":1,"coeffs":[-1,1]}"#]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_params_are_reported() {
    let out = tower(&["build", "--p", "4"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("prime"));
}
