use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use causal_variety::coarse::{
    continuum_variety, cutoffs, discrete_acausal_variety, estimate_density, quantile_samples, rank_window_pasts,
    DensityMethod, Shell,
};
use causal_variety::{DensityModel, Grid};
use serde_json::Value;

fn cvsim(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cvsim"))
        .env("CVSIM_OUTPUT_ROOT", root)
        .args(args)
        .output()
        .expect("cvsim runs")
}

fn ok(root: &Path, args: &[&str]) -> Output {
    let out = cvsim(root, args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn json(path: impl AsRef<Path>) -> Value {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    serde_json::from_str(&text).unwrap()
}

/// Hash header, records and column names of a CSV output.
fn csv_rows(path: impl AsRef<Path>) -> (String, Vec<csv::StringRecord>, csv::StringRecord) {
    let text = std::fs::read_to_string(path).unwrap();
    let (first, rest) = text.split_once('\n').unwrap();
    let hash = first.strip_prefix("# config_hash=").expect("hash header").to_string();
    let mut reader = csv::Reader::from_reader(rest.as_bytes());
    let header = reader.headers().unwrap().clone();
    let rows = reader.records().map(Result::unwrap).collect();
    (hash, rows, header)
}

fn column(header: &csv::StringRecord, name: &str) -> usize {
    header.iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"))
}

#[test]
fn generated_histories_conserve_momentum_at_every_interior_event() {
    let tmp = tempfile::tempdir().unwrap();
    ok(tmp.path(), &["generate", "--d", "1", "--layers", "50", "--epl", "20", "--n-pre", "2", "--seed", "42"]);
    let doc = json(tmp.path().join("generate/causal_set.json"));
    let set = &doc["causal_set"];
    let n = set["events"].as_array().unwrap().len();
    assert_eq!(n, 50 * 20);

    let mut inflow = vec![0.0; n];
    let mut outflow = vec![0.0; n];
    let (mut has_in, mut has_out) = (vec![false; n], vec![false; n]);
    for link in set["links"].as_array().unwrap() {
        let src = link["src"].as_u64().unwrap() as usize;
        let dst = link["dst"].as_u64().unwrap() as usize;
        let p = link["p"][0].as_f64().unwrap();
        outflow[src] += p;
        inflow[dst] += p;
        has_out[src] = true;
        has_in[dst] = true;
    }
    let worst = (0..n)
        .filter(|&i| has_in[i] && has_out[i])
        .map(|i| (inflow[i] - outflow[i]).abs())
        .fold(0.0, f64::max);
    assert!(worst < 1e-12, "residual {worst}");

    let (_, rows, header) = csv_rows(tmp.path().join("generate/residuals.csv"));
    let (interior, residual) = (column(&header, "interior"), column(&header, "residual"));
    for (i, row) in rows.iter().enumerate() {
        if &row[interior] == "true" {
            let reported: f64 = row[residual].parse().unwrap();
            assert!((reported - (inflow[i] - outflow[i]).abs()).abs() < 1e-12);
        }
    }
    let manifest = json(tmp.path().join("generate/manifest.json"));
    assert!(manifest["metrics"]["max_interior_residual"].as_f64().unwrap() < 1e-12);
}

#[test]
fn variety_report_matches_a_direct_library_run() {
    let tmp = tempfile::tempdir().unwrap();
    ok(tmp.path(), &["variety", "--model", "gaussian", "--N", "10000", "--L", "1.0", "--d", "1", "--seed", "1"]);
    let (_, rows, header) = csv_rows(tmp.path().join("variety/variety.csv"));
    let get = |name: &str| -> f64 { rows[0][column(&header, name)].parse().unwrap() };

    let model = DensityModel::Gaussian { mu: 0.0, sigma: 1.0 };
    let samples = quantile_samples(&model, 10_000, 1).unwrap();
    let (lo, hi) = model.support();
    let grid = Grid::line(lo, hi, 4096, false).unwrap();
    let state = estimate_density(&samples, &grid, DensityMethod::Kde { bandwidth: None }).unwrap().state;
    let cut = cutoffs(&state, 1.0).unwrap();
    let report = continuum_variety(&state, &cut).unwrap();
    let window = (cut.r.round() as usize).max(1);
    let pasts = rank_window_pasts(&samples, window, None).unwrap();
    let discrete = discrete_acausal_variety(&pasts, &Shell::Unbounded).unwrap().value;

    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * b.abs().max(1.0);
    assert!(close(get("fisher_term"), report.fisher_term));
    assert!(close(get("constant_term"), report.constant_term));
    assert!(close(get("discrete"), discrete));
    // smoothing lowers the Fisher term of the unit Gaussian slightly below 1
    assert!((get("fisher_term") - 1.0).abs() < 0.05);
}

#[test]
fn identical_config_and_seed_give_identical_files() {
    let tmp = tempfile::tempdir().unwrap();
    let args = |out: &'static str| ["--out", out, "--seed", "7", "generate", "--layers", "20", "--epl", "15"];
    ok(tmp.path(), &args("a"));
    ok(tmp.path(), &args("b"));
    let ma = json(tmp.path().join("a/manifest.json"));
    let mb = json(tmp.path().join("b/manifest.json"));
    assert_eq!(ma["config_hash"], mb["config_hash"]);
    assert_eq!(ma["outputs"], mb["outputs"]);
    for name in ma["outputs"].as_array().unwrap() {
        let name = name.as_str().unwrap();
        let a = std::fs::read(tmp.path().join("a").join(name)).unwrap();
        let b = std::fs::read(tmp.path().join("b").join(name)).unwrap();
        assert!(a == b, "{name} differs between runs");
    }

    ok(tmp.path(), &["--out", "c", "--seed", "8", "generate", "--layers", "20", "--epl", "15"]);
    let c = std::fs::read(tmp.path().join("c/causal_set.json")).unwrap();
    assert!(c != std::fs::read(tmp.path().join("a/causal_set.json")).unwrap());
}

#[test]
fn every_file_names_the_manifest_hash() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("small.json");
    std::fs::write(&config, r#"{"generate": {"layers": 10, "events_per_layer": 10}}"#).unwrap();
    ok(tmp.path(), &["-c", config.to_str().unwrap(), "energy"]);
    let manifest = json(tmp.path().join("energy/manifest.json"));
    let hash = manifest["config_hash"].as_str().unwrap();
    assert_eq!(hash.len(), 64);
    for name in manifest["outputs"].as_array().unwrap() {
        let path = tmp.path().join("energy").join(name.as_str().unwrap());
        if path.extension().unwrap() == "csv" {
            assert_eq!(csv_rows(&path).0, hash);
        } else {
            assert_eq!(json(&path)["config_hash"], hash);
        }
    }
    assert_eq!(manifest["status"], "ok");
}

#[test]
fn flags_override_the_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("run.json");
    std::fs::write(&config, r#"{"seed": 3, "generate": {"layers": 12, "events_per_layer": 9}}"#).unwrap();
    let config = config.to_str().unwrap();

    ok(tmp.path(), &["-c", config, "--out", "file", "generate"]);
    ok(tmp.path(), &["-c", config, "--out", "flag", "generate", "--layers", "5"]);
    let from_file = json(tmp.path().join("file/manifest.json"));
    let from_flag = json(tmp.path().join("flag/manifest.json"));
    assert_eq!(from_file["config"]["seed"], 3);
    assert_eq!(from_file["metrics"]["events"], 12.0 * 9.0);
    assert_eq!(from_flag["config"]["generate"]["layers"], 5);
    assert_eq!(from_flag["config"]["generate"]["events_per_layer"], 9);
    assert_eq!(from_flag["metrics"]["events"], 5.0 * 9.0);
    assert_ne!(from_file["config_hash"], from_flag["config_hash"]);
}

#[test]
fn configuration_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("bad.json");
    std::fs::write(&config, r#"{"generate": {"layrs": 3}}"#).unwrap();
    let out = cvsim(tmp.path(), &["-c", config.to_str().unwrap(), "generate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("layrs"));

    let out = cvsim(tmp.path(), &["generate", "--n-pre", "0"]);
    assert_eq!(out.status.code(), Some(2));

    let out = cvsim(tmp.path(), &["evolve", "--dt", "1", "--steps", "1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn numerical_failures_exit_with_three_and_keep_a_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let out = cvsim(tmp.path(), &["evolve", "--mode", "corrected", "--prefactor", "1", "--steps", "2000"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = json(tmp.path().join("evolve/manifest.json"));
    assert_eq!(manifest["status"], "failed");
    assert_eq!(manifest["failed_stage"], "evolve");
    assert!(manifest["error"].as_str().unwrap().contains("unstable"));
}

#[test]
fn pipeline_without_g_prime_runs_classically_and_lists_its_files() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("pipeline.json");
    std::fs::write(
        &config,
        r#"{"seed": 5,
            "generate": {"layers": 30, "events_per_layer": 100},
            "madelung": {"steps": 20, "grid": {"points": 256}},
            "pipeline": {"substeps": 2}}"#,
    )
    .unwrap();
    ok(tmp.path(), &["-c", config.to_str().unwrap(), "pipeline", "--g-prime", "0"]);
    let dir = tmp.path().join("pipeline");
    let manifest = json(dir.join("manifest.json"));
    assert_eq!(manifest["status"], "ok");
    let outputs: Vec<&str> = manifest["outputs"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    for expected in ["causal_set.json", "energy.json", "embedding.csv", "density.csv", "variety.csv", "comparison.json"] {
        assert!(outputs.contains(&expected), "{expected} missing from {outputs:?}");
    }
    for name in &outputs {
        assert!(dir.join(name).is_file(), "{name} listed but absent");
    }
    assert_eq!(*outputs.last().unwrap(), "summary.csv");
    assert_eq!(json(dir.join("comparison.json"))["comparison"]["mode"], "classical");

    let (_, rows, header) = csv_rows(dir.join("summary.csv"));
    let metric = column(&header, "metric");
    assert!(rows.iter().any(|r| &r[metric] == "max_interior_residual"));
}

#[test]
fn sweep_runs_land_in_separate_directories() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("sweep.json");
    std::fs::write(&config, r#"{"generate": {"layers": 8, "events_per_layer": 6}}"#).unwrap();
    ok(
        tmp.path(),
        &["-c", config.to_str().unwrap(), "sweep", "--command", "generate", "--parameter", "/seed", "--values", "[1, 2, 3]"],
    );
    let dir = tmp.path().join("sweep");
    let runs: Vec<PathBuf> = (0..3).map(|k| dir.join(format!("run_{k:03}"))).collect();
    let mut hashes = Vec::new();
    for (k, run) in runs.iter().enumerate() {
        let manifest = json(run.join("manifest.json"));
        assert_eq!(manifest["config"]["seed"], k as u64 + 1);
        hashes.push(manifest["config_hash"].as_str().unwrap().to_string());
        assert!(run.join("causal_set.json").is_file());
    }
    hashes.sort();
    hashes.dedup();
    assert_eq!(hashes.len(), 3);

    let (_, rows, header) = csv_rows(dir.join("sweep.csv"));
    assert_eq!(rows.len(), 3);
    let status = column(&header, "status");
    assert!(rows.iter().all(|r| &r[status] == "ok"));
}

#[test]
fn schema_and_show_config_are_valid_json() {
    let tmp = tempfile::tempdir().unwrap();
    let schema: Value = serde_json::from_slice(&ok(tmp.path(), &["schema"]).stdout).unwrap();
    assert_eq!(schema["type"], "object");
    let shown: Value = serde_json::from_slice(&ok(tmp.path(), &["--seed", "11", "show-config"]).stdout).unwrap();
    assert_eq!(shown["seed"], 11);
}
