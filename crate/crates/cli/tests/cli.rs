use std::path::Path;
use std::process::{Command, Output};

const SMALL: &[&str] = &[
    "--grid", "16", "--samples", "20", "--n-max", "12", "--greedy-n-max", "6", "--training-count", "20",
];

fn nlrm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nlrm")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

/// Data rows (header excluded) and metadata pairs.
fn split(csv: &str) -> (Vec<Vec<String>>, Vec<(String, String)>) {
    let mut rows = Vec::new();
    let mut meta = Vec::new();
    for line in csv.lines().skip(1) {
        if let Some(kv) = line.strip_prefix('#') {
            let (k, v) = kv.split_once('=').expect("key=value");
            meta.push((k.to_string(), v.to_string()));
        } else {
            assert!(meta.is_empty(), "data row after metadata");
            rows.push(line.split(',').map(str::to_string).collect());
        }
    }
    (rows, meta)
}

#[test]
fn linear_compare_is_byte_identical_across_runs() {
    let args: Vec<&str> = ["linear-compare"].iter().chain(SMALL).copied().collect();
    let a = stdout(&nlrm(&args));
    let b = stdout(&nlrm(&args));
    assert_eq!(a, b);
    assert!(a.starts_with("method,n,sup_error,max_training_error\n"));
    let (rows, _) = split(&a);
    for method in ["apriori", "adaptive", "greedy"] {
        assert!(rows.iter().any(|r| r[0] == method), "{method} missing");
    }
    assert_eq!(rows.iter().filter(|r| r[0] == "adaptive").count(), 12);
}

#[test]
fn a_different_seed_changes_the_output() {
    let base: Vec<&str> = ["linear-compare"].iter().chain(SMALL).copied().collect();
    let mut other = base.clone();
    other.extend(["--seed", "7"]);
    assert_ne!(stdout(&nlrm(&base)), stdout(&nlrm(&other)));
}

#[test]
fn metadata_echoes_the_resolved_config() {
    let out = stdout(&nlrm(&["bounds", "--r", "1", "--sigma", "0.5"]));
    let (rows, meta) = split(&out);
    assert!(!rows.is_empty());
    let get = |k: &str| meta.iter().find(|(m, _)| m == k).map(|(_, v)| v.clone());
    assert_eq!(get("command").as_deref(), Some("bounds"));
    assert_eq!(get("seed").as_deref(), Some("515"));
    assert_eq!(get("r").as_deref(), Some("[1.0]"));
    assert_eq!(get("truth_grid").as_deref(), Some("64"));
    assert_eq!(get("rng_stream").as_deref(), Some("mt19937-res53-v1"));
    for key in ["s", "a_min", "q", "grid", "samples", "eps", "measurements", "lambda", "ystar", "m"] {
        assert!(get(key).is_some(), "{key} missing from metadata");
    }
    let b1 = rows.iter().find(|r| r[0] == "b_r").unwrap();
    assert_eq!(b1[7].parse::<f64>().unwrap(), 1_874_161.0);
}

#[test]
fn config_file_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "experiment = \"bounds\"\nseed = 11\nr = [2.0]\n").unwrap();
    let cfg = cfg.to_str().unwrap();
    let (_, meta) = split(&stdout(&nlrm(&["bounds", "--config", cfg, "--seed", "12"])));
    assert!(meta.contains(&("seed".into(), "12".into())));
    assert!(meta.contains(&("r".into(), "[2.0]".into())));
    let wrong = nlrm(&["state-est", "--config", cfg]);
    assert_eq!(wrong.status.code(), Some(2));
}

#[test]
fn bad_configs_exit_with_code_2_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "a_min = 1.5\n").unwrap();
    let o = nlrm(&["linear-compare", "--config", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("a_min"));

    let unknown = dir.path().join("unknown.toml");
    std::fs::write(&unknown, "smaples = 10\n").unwrap();
    let o = nlrm(&["linear-compare", "--config", unknown.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("smaples"));

    assert_eq!(nlrm(&["linear-compare", "--grid", "12"]).status.code(), Some(2));
    assert_eq!(nlrm(&["linear-compare", "--grid", "many"]).status.code(), Some(2));
    assert_eq!(nlrm(&["no-such-command"]).status.code(), Some(2));
    let missing = nlrm(&["bounds", "--config", "/nonexistent/run.toml"]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn output_file_and_truth_cache() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("nested/table.csv");
    let cache = dir.path().join("cache");
    let mut args = vec![
        "partition-table", "--grid", "16", "--cells", "1,2", "--max-terms", "12", "--samples-per-cell", "5",
        "--eps", "1e-3",
    ];
    args.extend(["--output", out.to_str().unwrap(), "--cache-dir", cache.to_str().unwrap()]);
    assert!(nlrm(&args).status.success());
    let first = std::fs::read_to_string(&out).unwrap();
    let cached = std::fs::read_dir(&cache).unwrap().count();
    assert!(cached >= 2, "{cached} cache files");
    assert!(nlrm(&args).status.success());
    assert_eq!(std::fs::read_to_string(&out).unwrap(), first);
    assert_eq!(std::fs::read_dir(&cache).unwrap().count(), cached);

    let (rows, _) = split(&first);
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0][2], "1");
    assert_eq!(rows[1][2], "2");
    for r in &rows {
        let m: usize = r[3].parse().expect("target met on a coarse grid");
        assert!((1..=12).contains(&m));
        assert!(r[4].parse::<f64>().unwrap() <= 1e-3);
    }
    assert!(!Path::new(&out).with_extension("partial").exists());
}

#[test]
fn state_estimation_rows_respect_their_bounds() {
    let out = stdout(&nlrm(&[
        "state-est", "--grid", "16", "--samples", "50", "--samples-per-cell", "20", "--measurements", "6",
        "--m", "2", "--cells", "2",
    ]));
    let (rows, meta) = split(&out);
    let home = meta.iter().find(|(k, _)| k == "ystar_cell").expect("ystar_cell noted").1.clone();
    let global: Vec<&Vec<String>> = rows.iter().filter(|r| r[0] == "global").collect();
    assert_eq!(global.len(), 6);
    assert_eq!(rows.len() - global.len(), 2);
    let mut prev = 0.0;
    for r in &rows {
        let mu: f64 = r[2].parse().unwrap();
        assert!(mu >= 1.0 - 1e-12);
        if r[0] == "global" {
            assert!(mu >= prev * (1.0 - 1e-9));
            prev = mu;
        }
        if mu.is_finite() && (r[0] == "global" || r[0] == home) {
            let bound: f64 = r[4].parse().unwrap();
            let err: f64 = r[5].parse().unwrap();
            assert!(err <= bound, "row {r:?}");
        }
    }
}

#[test]
fn finer_truth_grid_bounds_errors_below_by_the_discretization_gap() {
    let base: Vec<&str> = ["linear-compare"].iter().chain(SMALL).copied().collect();
    let mut fine = base.clone();
    fine.extend(["--truth-grid", "32"]);
    let (same, _) = split(&stdout(&nlrm(&base)));
    let (finer, meta) = split(&stdout(&nlrm(&fine)));
    assert!(meta.contains(&("truth_grid".into(), "32".into())));
    assert_eq!(same.len(), finer.len());
    let last = |rows: &[Vec<String>], method: &str| -> f64 {
        rows.iter().rfind(|r| r[0] == method).unwrap()[2].parse().unwrap()
    };
    // Against the finer truth the discretization error of the model grid
    // dominates, so both methods end near the same floor.
    let (a, g) = (last(&finer, "adaptive"), last(&finer, "greedy"));
    assert!(g > 10.0 * last(&same, "greedy"));
    assert!((a - g).abs() < 0.1 * g, "{a} vs {g}");
    assert!(a > last(&same, "adaptive"));
}
