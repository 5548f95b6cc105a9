use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pkmdp::env::{make_environment, EnvName};
use pkmdp::model::text::read_model;

fn pkmdp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pkmdp")).args(args).output().expect("binary runs")
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("pkmdp-cli-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn small_run(out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "run",
        "--env",
        "load_unload",
        "--variant",
        "2",
        "--runs",
        "3",
        "--episodes",
        "4",
        "--horizon",
        "25",
        "--seed",
        "7",
        "--out",
    ];
    let out = out.to_str().unwrap();
    args.push(out);
    args.extend_from_slice(extra);
    pkmdp(&args)
}

#[test]
fn identical_configs_give_identical_bytes() {
    let dir = scratch("determinism");
    let (a, b) = (dir.join("a.csv"), dir.join("b.csv"));
    assert!(small_run(&a, &[]).status.success());
    assert!(small_run(&b, &[]).status.success());
    let bytes = std::fs::read(&a).unwrap();
    assert_eq!(bytes, std::fs::read(&b).unwrap());
    let text = String::from_utf8(bytes).unwrap();
    assert!(text.starts_with("episode,mean,std,run_0,run_1,run_2\n"));
    assert_eq!(text.lines().count(), 5);
    assert!(text.ends_with('\n'));
}

#[test]
fn csv_columns_are_consistent() {
    let dir = scratch("columns");
    let path = dir.join("c.csv");
    assert!(small_run(&path, &[]).status.success());
    let text = std::fs::read_to_string(&path).unwrap();
    for line in text.lines().skip(1) {
        let v: Vec<f64> = line.split(',').map(|f| f.parse().unwrap()).collect();
        let runs = &v[3..];
        let mean = runs.iter().sum::<f64>() / runs.len() as f64;
        let std = (runs.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / runs.len() as f64).sqrt();
        assert!((v[1] - mean).abs() <= 1e-12 * mean.abs().max(1.0));
        assert!((v[2] - std).abs() <= 1e-12 * std.abs().max(1.0));
        assert!(runs.iter().all(|&r| (0.0..=25.0).contains(&r)));
    }
}

#[test]
fn flags_override_config_file() {
    let dir = scratch("override");
    let config = dir.join("exp.conf");
    std::fs::write(
        &config,
        "# small experiment\nenv = load_unload\nvariant = 2\nruns = 3\nepisodes = 4\nhorizon = 25\nseed = 7\nmax_iterations = 100\n",
    )
    .unwrap();
    let from_file = dir.join("file.csv");
    let out = pkmdp(&["run", "--config", config.to_str().unwrap(), "--out", from_file.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    // Same experiment spelled entirely with flags.
    let from_flags = dir.join("flags.csv");
    assert!(small_run(&from_flags, &[]).status.success());
    assert_eq!(std::fs::read(&from_file).unwrap(), std::fs::read(&from_flags).unwrap());

    let overridden = dir.join("over.csv");
    let out =
        pkmdp(&["run", "--config", config.to_str().unwrap(), "--runs", "2", "--out", overridden.to_str().unwrap()]);
    assert!(out.status.success());
    let header = std::fs::read_to_string(&overridden).unwrap();
    assert!(header.starts_with("episode,mean,std,run_0,run_1\n"));
}

#[test]
fn all_variants_write_suffixed_files() {
    let dir = scratch("all");
    let out = dir.join("curve.csv");
    let status = pkmdp(&[
        "run",
        "--env",
        "clogged_pipe",
        "--variant",
        "all",
        "--runs",
        "2",
        "--episodes",
        "2",
        "--horizon",
        "10",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(status.status.success());
    for v in 1..=3 {
        assert!(dir.join(format!("curve_v{v}.csv")).exists());
    }
    // One policy per episode and no learning yet at episode 0: every variant
    // starts from the same uniform-policy value.
    let first: Vec<String> = (1..=3)
        .map(|v| {
            let text = std::fs::read_to_string(dir.join(format!("curve_v{v}.csv"))).unwrap();
            text.lines().nth(1).unwrap().split(',').nth(1).unwrap().to_string()
        })
        .collect();
    let values: Vec<f64> = first.iter().map(|s| s.parse().unwrap()).collect();
    assert!((values[0] - values[1]).abs() < 1e-9 && (values[1] - values[2]).abs() < 1e-9);
}

#[test]
fn bad_input_exits_nonzero() {
    assert!(!pkmdp(&["run", "--env", "nowhere"]).status.success());
    assert!(!pkmdp(&["run", "--env", "load_unload", "--runs", "0"]).status.success());
    assert!(!pkmdp(&["run", "--env", "load_unload", "--variant", "4"]).status.success());
    assert!(!pkmdp(&["run", "--env", "load_unload", "--contraction", "2"]).status.success());
    let dir = scratch("bad");
    let config = dir.join("bad.conf");
    std::fs::write(&config, "env = load_unload\nrunz = 3\n").unwrap();
    let out = pkmdp(&["run", "--config", config.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
    assert!(!pkmdp(&["run", "--config", dir.join("missing.conf").to_str().unwrap()]).status.success());
}

#[test]
fn verify_passes_and_detects_injected_fault() {
    let ok = pkmdp(&["verify"]);
    assert!(ok.status.success(), "{}", String::from_utf8_lossy(&ok.stdout));
    let text = String::from_utf8_lossy(&ok.stdout);
    assert!(text.contains("8 of 8 checks passed"));

    let tight = pkmdp(&["verify", "--tolerance", "1e-30"]);
    assert!(!tight.status.success());

    let broken = pkmdp(&["verify", "--inject-fault"]);
    assert!(!broken.status.success());
    let text = String::from_utf8_lossy(&broken.stdout);
    let line = text.lines().find(|l| l.contains("variant equivalence")).unwrap();
    assert!(line.starts_with("FAIL"));
    assert!(line.contains("load_unload variant 2"));
}

#[test]
fn exported_model_reads_back() {
    let dir = scratch("export");
    for name in EnvName::ALL {
        for variant in 1..=3u8 {
            let path = dir.join(format!("{name}_{variant}.txt"));
            let out = pkmdp(&[
                "export-model",
                "--env",
                name.as_str(),
                "--variant",
                &variant.to_string(),
                "--out",
                path.to_str().unwrap(),
            ]);
            assert!(out.status.success());
            let model = read_model(&std::fs::read_to_string(&path).unwrap()).unwrap();
            assert_eq!(model, make_environment(name, variant).unwrap().full_model);
        }
    }
    assert!(!pkmdp(&["export-model", "--env", "load_unload", "--variant", "9"]).status.success());
}
