use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tfh::io::write_dataset;
use tfh::simulation::{generate_replicate, DPattern, ScenarioConfig};
use tfh::{Dataset, ModelParams};

const BIN: &str = env!("CARGO_BIN_EXE_tfh");

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

fn scratch(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("cli");
    fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// m = 30 draw under beta = (0.5, 1), A = 0.4, lambda = 0.6, pattern (a).
fn fixture() -> Dataset {
    let params = ModelParams { beta: vec![0.5, 1.0], a: 0.4, lambda: 0.6 };
    let cfg = ScenarioConfig::new("golden", 30, DPattern::A, params, 1, 20240101);
    generate_replicate(&cfg, 0).unwrap()
}

/// Compares with a committed file; `TFH_BLESS=1` rewrites it instead.
fn golden(name: &str, actual: &[u8]) {
    let path = data(name);
    if std::env::var_os("TFH_BLESS").is_some() {
        fs::write(&path, actual).unwrap();
    }
    let expected = fs::read(&path).unwrap_or_else(|_| panic!("missing golden file {name}"));
    assert!(expected == actual, "{name} differs from the committed golden file");
}

#[test]
fn bundled_dataset_is_seed_pinned() {
    let mut buf = Vec::new();
    write_dataset(&fixture(), &mut buf).unwrap();
    golden("synthetic.csv", &buf);
}

#[test]
fn fit_reproduces_golden_json() {
    let input = data("synthetic.csv");
    for est in ["ml", "reml"] {
        let out = run(&["fit", "--input", path_str(&input), "--estimator", est]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        golden(&format!("fit_{est}.json"), &out.stdout);
    }
}

#[test]
fn predict_has_table_shape() {
    let input = data("synthetic.csv");
    let out = run(&["predict", "--input", path_str(&input), "--estimator", "ml"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("area_id,D,h_y,x_beta,eta_eb,y_scale"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 30);
    for row in rows {
        let cells: Vec<&str> = row.split(',').collect();
        assert_eq!(cells.len(), 6);
        for c in &cells[1..] {
            let v: f64 = c.parse().unwrap();
            assert!(v.is_finite());
            let digits = c.trim_start_matches('-').replace('.', "");
            assert!(digits.split('e').next().unwrap().trim_start_matches('0').len() <= 6, "{c}");
        }
    }
}

#[test]
fn add_intercept_matches_explicit_column() {
    let src = fs::read_to_string(data("synthetic.csv")).unwrap();
    let stripped: String = src
        .lines()
        .map(|l| {
            let c: Vec<&str> = l.split(',').collect();
            let x2 = if c[3] == "x1" { "x1" } else { c[4] };
            format!("{},{},{},{}\n", c[0], c[1], c[2], x2)
        })
        .collect();
    let path = scratch("no_intercept.csv");
    fs::write(&path, stripped).unwrap();
    let with_flag = run(&["fit", "--input", path_str(&path), "--add-intercept", "--estimator", "ml"]);
    let explicit = run(&["fit", "--input", path_str(&data("synthetic.csv")), "--estimator", "ml"]);
    assert_eq!(with_flag.status.code(), Some(0));
    assert_eq!(with_flag.stdout, explicit.stdout);
}

#[test]
fn mse_output_is_byte_identical_for_a_fixed_seed() {
    let input = data("synthetic.csv");
    let mut outputs = Vec::new();
    for k in 0..2 {
        let path = scratch(&format!("mse_{k}.csv"));
        let out = run(&[
            "mse",
            "--input",
            path_str(&input),
            "--estimator",
            "ml",
            "--bootstrap",
            "100",
            "--seed",
            "11",
            "--output",
            path_str(&path),
        ]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        outputs.push(fs::read(&path).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    let text = String::from_utf8(outputs.remove(0)).unwrap();
    assert!(text.starts_with("area_id,D,h_y,x_beta,eta_eb,y_scale,mse\n"));
    for row in text.lines().skip(1) {
        let mse: f64 = row.rsplit(',').next().unwrap().parse().unwrap();
        assert!(mse > 0.0);
    }
}

#[test]
fn fixed_lambda_skips_estimation() {
    let out = run(&["fit", "--input", path_str(&data("synthetic.csv")), "--fixed-lambda", "0.6"]);
    assert_eq!(out.status.code(), Some(0));
    let fit: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(fit["params"]["lambda"], 0.6);
    assert_eq!(fit["lambda_fixed"], true);
}

#[test]
fn simulate_writes_identical_reports() {
    let scenario = scratch("scenario.json");
    fs::write(
        &scenario,
        r#"{"label":"cli","m":30,"d_pattern":"a","true_params":{"beta":[0.5,1.0],"A":0.4,"lambda":0.6},
            "n_replicates":40,"seed":3,"methods":["ML"]}"#,
    )
    .unwrap();
    let mut files = Vec::new();
    for k in 0..2 {
        let dir = scratch(&format!("sim_{k}"));
        let out = run(&["simulate", "--scenario", path_str(&scenario), "--output", path_str(&dir)]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        let csv = fs::read(dir.join("estimation_a_0.6.csv")).unwrap();
        let json = fs::read(dir.join("estimation_a_0.6.json")).unwrap();
        files.push((csv, json));
    }
    assert_eq!(files[0], files[1]);
}

#[test]
fn estimate_d_converges_on_a_panel() {
    let ds = fixture();
    let panel = scratch("panel.csv");
    let mut text = String::from("area_id,t,y\n");
    for (i, id) in ds.ids().iter().enumerate() {
        for t in 0..10 {
            let wiggle = 1.0 + 0.05 * (((i * 7 + t * 3) % 11) as f64 - 5.0);
            text.push_str(&format!("{id},{t},{}\n", ds.y()[i] * wiggle));
        }
    }
    fs::write(&panel, text).unwrap();
    let out = run(&[
        "estimate-d",
        "--input",
        path_str(&data("synthetic.csv")),
        "--panels",
        path_str(&panel),
        "--estimator",
        "ml",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["D"].as_array().unwrap().len(), 30);
    assert_eq!(v["converged"], true);
}

#[test]
fn exit_codes() {
    let bad = scratch("bad.csv");
    fs::write(&bad, "area_id,y,D,x1\na,1.0,0.1,1\nb,oops,0.1,1\n").unwrap();
    let out = run(&["fit", "--input", path_str(&bad)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));

    let out = run(&["fit", "--input", path_str(&data("missing.csv"))]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["fit", "--estimator", "bogus", "--input", path_str(&bad)]);
    assert_eq!(out.status.code(), Some(2));

    let tiny = scratch("tiny.csv");
    fs::write(&tiny, "area_id,y,D,x1,x2\na,1.0,0.1,1,0\nb,2.0,0.1,1,1\n").unwrap();
    let out = run(&["fit", "--input", path_str(&tiny)]);
    assert_eq!(out.status.code(), Some(4));

    let out = run(&["mse", "--input", path_str(&data("synthetic.csv")), "--bootstrap", "50"]);
    assert_eq!(out.status.code(), Some(4));

    // near-constant responses: the profile score stays positive on the grid
    let flat = scratch("flat.csv");
    let ys = [1.0, 1.01, 0.99, 1.02, 0.98, 1.0, 1.03, 0.97];
    let mut text = String::from("area_id,y,D\n");
    for (i, y) in ys.iter().enumerate() {
        text.push_str(&format!("a{i},{y},0.1\n"));
    }
    fs::write(&flat, text).unwrap();
    for cmd in ["fit", "predict"] {
        let out = run(&[cmd, "--input", path_str(&flat), "--add-intercept", "--estimator", "ml"]);
        assert_eq!(out.status.code(), Some(3));
        let stderr = String::from_utf8_lossy(&out.stderr);
        assert!(stderr.contains("\"score_grid\""), "{stderr}");
    }
}
