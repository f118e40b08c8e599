//! Integration tests for the `exchsum` binary: output document schema,
//! exit codes, golden pmf values, and CSV handling.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use sha2::{Digest, Sha256};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_exchsum"))
        .args(args)
        .output()
        .expect("failed to run exchsum binary")
}

fn brassica_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/brassica.csv")
}

fn schema() -> Value {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("schema/result_document.schema.json");
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn type_ok(value: &Value, ty: &str) -> bool {
    match ty {
        "string" => value.is_string(),
        "number" => value.is_number(),
        "integer" => value.is_i64() || value.is_u64(),
        "boolean" => value.is_boolean(),
        "object" => value.is_object(),
        "array" => value.is_array(),
        "null" => value.is_null(),
        _ => false,
    }
}

fn allowed_types(prop: &Value) -> Vec<String> {
    match &prop["type"] {
        Value::String(s) => vec![s.clone()],
        Value::Array(items) => {
            items.iter().map(|v| v.as_str().unwrap().to_string()).collect()
        }
        _ => Vec::new(),
    }
}

/// Check an object against one level of the schema: required keys, no
/// extras (the schema sets additionalProperties: false), and types.
/// Recurses into sub-objects that carry their own properties.
fn validate_object(doc: &Value, node: &Value, context: &str) {
    let object = doc.as_object().unwrap_or_else(|| panic!("{context}: not an object"));
    if let Some(required) = node["required"].as_array() {
        for key in required {
            let key = key.as_str().unwrap();
            assert!(object.contains_key(key), "{context}: missing required key '{key}'");
        }
    }
    let properties = match node["properties"].as_object() {
        Some(p) => p,
        None => return,
    };
    if node["additionalProperties"] == Value::Bool(false) {
        for key in object.keys() {
            assert!(properties.contains_key(key), "{context}: unexpected key '{key}'");
        }
    }
    for (key, prop) in properties {
        let value = match object.get(key) {
            Some(v) => v,
            None => continue,
        };
        let types = allowed_types(prop);
        if !types.is_empty() {
            assert!(
                types.iter().any(|t| type_ok(value, t)),
                "{context}.{key}: value {value} not one of {types:?}"
            );
        }
        if value.is_object() && prop["properties"].is_object() {
            validate_object(value, prop, &format!("{context}.{key}"));
        }
    }
}

fn parse_document(output: &Output) -> Value {
    serde_json::from_slice(&output.stdout).unwrap_or_else(|e| {
        panic!("stdout is not JSON: {e}\n{}", String::from_utf8_lossy(&output.stdout))
    })
}

#[test]
fn fit_document_matches_schema() {
    let data = brassica_path();
    let output = run(&["fit", "--family", "bb", "--data", data.to_str().unwrap(), "--gof"]);
    assert_eq!(output.status.code(), Some(0), "{}", String::from_utf8_lossy(&output.stderr));
    let doc = parse_document(&output);
    validate_object(&doc, &schema(), "document");

    let digest = doc["input_digest"].as_str().unwrap();
    let bytes = std::fs::read(&data).unwrap();
    let expected: String = Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect();
    assert_eq!(digest, expected, "input digest must be the sha256 of the file");

    assert_eq!(doc["command"], "fit");
    assert_eq!(doc["family"], "bb");
    assert!((doc["p_hat"].as_f64().unwrap() - 0.581).abs() < 0.005);
    assert!((doc["gof"]["p_value"].as_f64().unwrap() - 0.8594).abs() < 0.002);
    assert_eq!(doc["gof"]["expected"].as_array().unwrap().len(), 4);
}

#[test]
fn semiparam_document_matches_schema() {
    // Synthetic varying-m counts proportional to one LapGam law.
    let spec = exchsum::FamilySpec::LapGam { alpha: 1.0, beta: 0.5 };
    let mut csv = String::from("m,s,count\n");
    for m in 2..=5usize {
        let pmf = exchsum::family_pmf(&spec, m).unwrap();
        for (s, &v) in pmf.mass().iter().enumerate() {
            let count = (1000.0 * v).round() as u64;
            if count > 0 {
                csv.push_str(&format!("{m},{s},{count}\n"));
            }
        }
    }
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("varying.csv");
    std::fs::write(&data, csv).unwrap();
    let out = dir.path().join("out");

    let output = run(&[
        "semiparam",
        "--family",
        "lapgam",
        "--basis",
        "intercept",
        "--data",
        data.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(0), "{}", String::from_utf8_lossy(&output.stderr));

    let doc: Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("result.json")).unwrap()).unwrap();
    validate_object(&doc, &schema(), "document");
    assert_eq!(doc["command"], "semiparam");
    assert_eq!(doc, parse_document(&output), "stdout and result.json must agree");

    let curves = std::fs::read_to_string(out.join("curves.csv")).unwrap();
    let lines: Vec<&str> = curves.lines().collect();
    assert_eq!(lines[0], "m,alpha,beta,p_hat,rho_hat,se_p,se_rho");
    assert_eq!(lines.len(), 5, "one curve row per cluster size");
    for (i, m) in (2..=5usize).enumerate() {
        assert!(lines[i + 1].starts_with(&format!("{m},")));
    }
}

fn pmf_column(args: &[&str]) -> Vec<f64> {
    let output = run(args);
    assert_eq!(output.status.code(), Some(0), "{}", String::from_utf8_lossy(&output.stderr));
    let text = String::from_utf8(output.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("s,mass"));
    lines
        .map(|line| line.split(',').nth(1).unwrap().parse::<f64>().unwrap())
        .collect()
}

#[test]
fn pmf_golden_values() {
    // LapGam alpha=1, beta=1 gives the uniform pmf on {0..m}.
    let uniform = pmf_column(&["pmf", "--family", "lapgam", "--alpha", "1", "--beta", "1", "-m", "3"]);
    for v in &uniform {
        assert!((v - 0.25).abs() < 1e-12, "expected uniform mass, got {uniform:?}");
    }

    // q-power at gamma=1 reduces to a binomial with p = 1 - q.
    let qpower = pmf_column(&["pmf", "--family", "qpower", "--q", "0.4", "--gamma", "1", "-m", "4"]);
    let binom = pmf_column(&["pmf", "--family", "binomial", "--p", "0.6", "-m", "4"]);
    for (a, b) in qpower.iter().zip(&binom) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn exit_codes() {
    // Invalid parameter value.
    let output = run(&["pmf", "--family", "binomial", "--p", "1.5", "-m", "3"]);
    assert_eq!(output.status.code(), Some(2));
    assert!(!output.stderr.is_empty());

    // Missing required family parameter.
    let output = run(&["pmf", "--family", "lapgam", "--alpha", "1", "-m", "3"]);
    assert_eq!(output.status.code(), Some(2));

    // Unreadable data file.
    let output = run(&["fit", "--family", "bb", "--data", "/nonexistent/file.csv"]);
    assert_eq!(output.status.code(), Some(1));

    // Malformed header.
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "x,y,z\n1,2,3\n").unwrap();
    let output = run(&["fit", "--family", "bb", "--data", bad.to_str().unwrap()]);
    assert_eq!(output.status.code(), Some(1));

    // GOF needs a single cluster size.
    let mixed = dir.path().join("mixed.csv");
    std::fs::write(&mixed, "m,s,count\n2,1,5\n3,1,5\n").unwrap();
    let output = run(&["fit", "--family", "bb", "--data", mixed.to_str().unwrap(), "--gof"]);
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn tally_mode_matches_counts_mode() {
    let dir = tempfile::tempdir().unwrap();
    let counts = dir.path().join("counts.csv");
    std::fs::write(&counts, "m,s,count\n3,0,2\n3,1,3\n3,2,4\n3,3,1\n").unwrap();
    let tally = dir.path().join("tally.csv");
    let mut rows = String::from("m,s\n");
    for (s, n) in [(0, 2), (1, 3), (2, 4), (3, 1)] {
        for _ in 0..n {
            rows.push_str(&format!("3,{s}\n"));
        }
    }
    std::fs::write(&tally, rows).unwrap();

    let a = parse_document(&run(&["fit", "--family", "bb", "--data", counts.to_str().unwrap()]));
    let b = parse_document(&run(&[
        "fit", "--family", "bb", "--data", tally.to_str().unwrap(), "--tally",
    ]));
    assert_eq!(a["loglik"], b["loglik"]);
    assert_eq!(a["p_hat"], b["p_hat"]);
    assert_eq!(a["params"], b["params"]);
    assert_ne!(a["input_digest"], b["input_digest"]);
}

#[test]
fn row_order_does_not_matter() {
    let dir = tempfile::tempdir().unwrap();
    let forward = dir.path().join("forward.csv");
    std::fs::write(&forward, "m,s,count\n3,0,32\n3,1,103\n3,2,122\n3,3,80\n").unwrap();
    let shuffled = dir.path().join("shuffled.csv");
    std::fs::write(&shuffled, "m,s,count\n3,2,122\n3,0,32\n3,3,80\n3,1,103\n").unwrap();

    let a = parse_document(&run(&["fit", "--family", "lapgam", "--data", forward.to_str().unwrap()]));
    let b = parse_document(&run(&["fit", "--family", "lapgam", "--data", shuffled.to_str().unwrap()]));
    assert_eq!(a["loglik"], b["loglik"]);
    assert_eq!(a["params"], b["params"]);
}

#[test]
fn simulate_counts_sum_to_n() {
    let output = run(&[
        "simulate", "--p", "0.4", "--rho", "0.15", "-m", "8", "-n", "500", "--seed", "42",
        "--generator", "beta-mixture",
    ]);
    assert_eq!(output.status.code(), Some(0));
    let text = String::from_utf8(output.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("m,s,count"));
    let mut total = 0u64;
    for line in lines {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields[0], "8");
        let s: usize = fields[1].parse().unwrap();
        assert!(s <= 8);
        total += fields[2].parse::<u64>().unwrap();
    }
    assert_eq!(total, 500);
}

#[test]
fn mc_study_grid_file() {
    let dir = tempfile::tempdir().unwrap();
    let grid = dir.path().join("grid.csv");
    std::fs::write(&grid, "p,rho,m,n\n0.3,0.1,5,50\n0.4,0.2,6,50\n").unwrap();
    let out = dir.path().join("out");
    let output = run(&[
        "mc-study", "--grid", grid.to_str().unwrap(), "--b", "3", "--seed", "9", "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(0), "{}", String::from_utf8_lossy(&output.stderr));

    let raw = std::fs::read_to_string(out.join("raw.csv")).unwrap();
    // 2 scenarios x 4 families x 3 replicates plus the header.
    assert_eq!(raw.lines().count(), 1 + 2 * 4 * 3);
    let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 1 + 2 * 4);
    assert!(summary.lines().nth(1).unwrap().starts_with("p0.3_rho0.1_m5,"));
}
