use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use dlp_cli::config::{validate_config, ExperimentConfig, MAX_SEED};
use dlp_cli::experiments::bundled_config_dir;
use dlp_cli::output::read_table;
use proptest::prelude::*;

fn dlp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dlp")).args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL_ISING: &str = r#"
kind = "ising_sample"
name = "small"
seeds = [3, 4]

[model]
type = "ising"
rows = 3
cols = 3
a = 0.1
b = 0.2
encoding = "binary"

[[samplers]]
kind = "dmala"
alphas = [0.3, 0.6]

[[samplers]]
kind = "gibbs1"

[run]
steps = 3000
checkpoints = 5
"#;

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn bundled_configs_validate_and_round_trip() {
    for entry in fs::read_dir(bundled_config_dir()).unwrap() {
        let path = entry.unwrap().path();
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        if name.starts_with("oracle") {
            continue;
        }
        let cfg = validate_config(&fs::read_to_string(&path).unwrap()).unwrap_or_else(|e| panic!("{name}: {e:?}"));
        let canonical = cfg.to_canonical();
        let again = validate_config(&canonical).unwrap();
        assert_eq!(again, cfg, "{name}");
        assert_eq!(again.to_canonical(), canonical, "{name}");
    }
}

#[test]
fn invalid_config_exits_with_one_and_names_fields() {
    let dir = tempfile::tempdir().unwrap();
    let bad = SMALL_ISING
        .replace("alphas = [0.3, 0.6]", "alphas = [0.3, -0.1]")
        .replace("kind = \"gibbs1\"", "kind = \"metropolis\"");
    let path = write(dir.path(), "bad.toml", &bad);
    for cmd in ["validate", "run"] {
        let o = dlp(&[cmd, &path]);
        assert_eq!(o.status.code(), Some(1), "{cmd}");
        let err = stderr(&o);
        assert!(err.contains("samplers[0].alphas[1]"), "{err}");
        assert!(err.contains("stepsize must be positive"), "{err}");
        assert!(err.contains("samplers[1]") && err.contains("gibbs1"), "{err}");
    }
}

#[test]
fn oversized_seed_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = validate_config(SMALL_ISING).unwrap();
    cfg.seeds = vec![1, u64::MAX];
    let path = write(dir.path(), "big.json", &serde_json::to_string(&cfg).unwrap());
    let o = dlp(&["validate", &path]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("seeds[1]"), "{}", stderr(&o));
    let small = write(dir.path(), "small.toml", SMALL_ISING);
    let o = dlp(&["run", &small, "--seed-override", &u64::MAX.to_string()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn syntax_error_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(dir.path(), "broken.toml", "kind = \"ising_sample\"\nseeds = [1,\n[model]\n");
    let o = dlp(&["validate", &path]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line "), "{}", stderr(&o));
}

#[test]
fn validate_prints_canonical_form() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(dir.path(), "small.toml", SMALL_ISING);
    let o = dlp(&["validate", &path]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("config hash"));
    let printed = String::from_utf8(o.stdout).unwrap();
    assert_eq!(printed, validate_config(SMALL_ISING).unwrap().to_canonical());
}

#[test]
fn list_experiments_names_every_kind() {
    let o = dlp(&["list-experiments"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    for k in dlp_cli::ExperimentKind::ALL {
        assert!(text.contains(k.name()), "{text}");
        assert!(bundled_config_dir().join(k.default_config()).exists());
    }
}

fn csvs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

#[test]
fn run_is_deterministic_and_writes_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(dir.path(), "small.toml", SMALL_ISING);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let o = dlp(&["run", &path, "--out-dir", a.to_str().unwrap(), "--threads", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = dlp(&["run", &path, "--out-dir", b.to_str().unwrap(), "--threads", "3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let (ca, cb) = (csvs(&a), csvs(&b));
    assert_eq!(ca, cb);
    let names: Vec<&str> = ca.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(names, vec!["ising_metrics.csv", "ising_rmse_plot.csv", "reference.csv"]);

    let (header, rows) = read_table(&a.join("ising_metrics.csv")).unwrap();
    assert_eq!(&header[..4], &["experiment", "sampler", "seed", "alpha"]);
    assert_eq!(rows.len(), 6);
    assert_eq!(rows[0][..4], ["small", "dmala", "3", "0.3"]);
    assert_eq!(rows[5][..4], ["small", "gibbs1", "4", ""]);

    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    let cfg = validate_config(SMALL_ISING).unwrap();
    assert_eq!(manifest["config_hash"], cfg.hash());
    assert_eq!(manifest["library_version"], discrete_langevin::VERSION);
    assert_eq!(manifest["runs"].as_array().unwrap().len(), 6);
    assert!(manifest["runs"][0]["wall_seconds"].as_f64().unwrap() >= 0.0);
    assert!(manifest["runs"][0]["ess_per_sec"].as_f64().unwrap() > 0.0);
    assert_eq!(manifest["failures"], 0);
    let saved = fs::read_to_string(a.join("config.toml")).unwrap();
    assert_eq!(validate_config(&saved).unwrap(), cfg);
}

#[test]
fn seed_override_replaces_seed_list() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(dir.path(), "small.toml", SMALL_ISING);
    let out = dir.path().join("o");
    let o = dlp(&["run", &path, "--out-dir", out.to_str().unwrap(), "--seed-override", "9"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let (_, rows) = read_table(&out.join("ising_metrics.csv")).unwrap();
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r[2] == "9"));
}

#[test]
fn runtime_failure_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let text = r#"
kind = "rbm_sample"
seeds = [0]
[model]
type = "rbm"
visible = 4
hidden = 2
weights_file = "missing.txt"
[[samplers]]
kind = "rbm_block_gibbs"
"#;
    let path = write(dir.path(), "rbm.toml", text);
    let out = dir.path().join("o");
    let o = dlp(&["run", &path, "--out-dir", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn failed_runs_are_recorded_and_others_kept() {
    let dir = tempfile::tempdir().unwrap();
    // Stochastic gradients are unsupported by the plain Ising model.
    let text = SMALL_ISING.replace("alphas = [0.3, 0.6]", "alpha = 0.3").replace(
        "[[samplers]]\nkind = \"gibbs1\"",
        "[[samplers]]\nkind = \"dula\"\nalpha = 0.3\nbatch_size = 2\n\n[[samplers]]\nkind = \"gibbs1\"",
    );
    let path = write(dir.path(), "partial.toml", &text);
    let out = dir.path().join("o");
    let o = dlp(&["run", &path, "--out-dir", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let (_, rows) = read_table(&out.join("ising_metrics.csv")).unwrap();
    let samplers: Vec<&str> = rows.iter().map(|r| r[1].as_str()).collect();
    assert_eq!(samplers, vec!["dmala", "dmala", "gibbs1", "gibbs1"]);
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["failures"], 2);
    let failed: Vec<_> = manifest["runs"].as_array().unwrap().iter().filter(|r| r["ok"] == false).collect();
    assert!(failed.iter().all(|r| r["sampler"] == "dula-sg" && r["error"].is_string()));
}

#[test]
fn oracle_dumps_target_and_kernels() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = bundled_config_dir().join("oracle_ising_2x2.toml");
    let out = dir.path().join("o");
    let o = dlp(&["oracle", cfg.to_str().unwrap(), "--out-dir", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let (header, rows) = read_table(&out.join("target.csv")).unwrap();
    assert_eq!(header, vec!["index", "state", "prob"]);
    assert_eq!(rows.len(), 16);
    let total: f64 = rows.iter().map(|r| r[2].parse::<f64>().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-12);
    let (_, summary) = read_table(&out.join("oracle_summary.csv")).unwrap();
    assert_eq!(summary.len(), 4);
    for row in &summary {
        let tv: f64 = row[3].parse().unwrap();
        if row[0] == "dula" {
            assert!(tv > 1e-6, "{row:?}");
        } else {
            assert!(tv < 1e-10, "{row:?}");
        }
    }
    assert!(out.join("kernel_dmala_alpha0.5.csv").exists());
    assert!(out.join("stationary_gibbs1.csv").exists());

    let o = dlp(&["oracle", cfg.to_str().unwrap(), "--out-dir", out.to_str().unwrap(), "--state-cap", "8"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn json_config_runs_like_toml() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = validate_config(SMALL_ISING).unwrap();
    let path = write(dir.path(), "small.json", &serde_json::to_string_pretty(&cfg).unwrap());
    let o = dlp(&["validate", &path]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(String::from_utf8(o.stdout).unwrap(), cfg.to_canonical());
}

fn mutate(cfg: &ExperimentConfig, which: u8) -> ExperimentConfig {
    let mut c = cfg.clone();
    match which % 6 {
        0 => c.seeds.push(99),
        1 => c.run.steps += 1,
        2 => c.run.thin += 1,
        3 => c.samplers[0].alphas.as_mut().unwrap()[0] *= 1.5,
        4 => c.samplers[1].label = Some("g".into()),
        _ => c.name = Some("other".into()),
    }
    c
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn hash_tracks_meaningful_fields(which in 0u8..6, dir in "[a-z]{1,8}") {
        let cfg = validate_config(SMALL_ISING).unwrap();
        let mut moved = cfg.clone();
        moved.output_dir = Some(dir);
        prop_assert_eq!(moved.hash(), cfg.hash());
        prop_assert_ne!(mutate(&cfg, which).hash(), cfg.hash());
    }

    #[test]
    fn canonical_form_is_a_fixed_point(
        steps in 10usize..100_000,
        alpha in 1e-3f64..10.0,
        seeds in prop::collection::vec(0..=MAX_SEED, 1..4),
    ) {
        let mut cfg = validate_config(SMALL_ISING).unwrap();
        cfg.run.steps = steps;
        cfg.run.burn_in = Some(steps / 5);
        cfg.samplers[0].alphas = Some(vec![alpha]);
        cfg.seeds = seeds;
        let text = cfg.to_canonical();
        let parsed = validate_config(&text).unwrap();
        prop_assert_eq!(&parsed, &cfg);
        prop_assert_eq!(parsed.to_canonical(), text);
    }
}
