use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn predcode(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_predcode")).args(args).output().unwrap()
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("cfg.toml");
    fs::write(&path, body).unwrap();
    path.display().to_string()
}

const SMALL: &str = "samples = 600\nworkers = 3\nrounds = 3\nlocal_steps = 5\nhidden = 8\n";

#[test]
fn zero_rounds_writes_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &SMALL.replace("rounds = 3", "rounds = 0"));
    let out = dir.path().join("out");
    let o = predcode(&["train", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("rounds.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1);
    assert!(csv.starts_with("config_hash,seed,round,"));
}

#[test]
fn same_seed_gives_byte_identical_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = predcode(&["train", "--config", &cfg, "--seed", "7", "--out", out.to_str().unwrap()]);
        assert!(o.status.success());
    }
    let csv_a = fs::read(a.join("rounds.csv")).unwrap();
    assert_eq!(csv_a, fs::read(b.join("rounds.csv")).unwrap());
    let text = String::from_utf8(csv_a).unwrap();
    assert_eq!(text.lines().count(), 4);
    let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[0].len(), 16);
    assert_eq!(row[1], "7");
    let summary = fs::read_to_string(a.join("summary.json")).unwrap();
    assert!(summary.contains(row[0]));
    let saved = fs::read_to_string(a.join("config.toml")).unwrap();
    assert!(saved.contains(&format!("# config_hash = {}", row[0])));
    assert!(saved.contains("seed = 7"));
}

#[test]
fn invalid_config_exits_1_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "local_steps = 0\n");
    let o = predcode(&["train", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("local_steps"));
    let missing = predcode(&["train", "--config", "/nonexistent/cfg.toml"]);
    assert_eq!(missing.status.code(), Some(1));
    assert_eq!(predcode(&["train"]).status.code(), Some(1));
}

#[test]
fn divergence_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{SMALL}optimizer = \"sgd\"\nlearning_rate = 1e308\n"));
    let o = predcode(&["train", "--config", &cfg, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn verify_suites() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("v");
    let out = out.to_str().unwrap();
    for suite in ["lemma1", "lemma2", "codec-roundtrip"] {
        let o = predcode(&["verify", "--suite", suite, "--out", out]);
        assert!(o.status.success(), "{suite}: {}", String::from_utf8_lossy(&o.stdout));
        assert!(String::from_utf8_lossy(&o.stdout).contains(&format!("suite {suite}: PASS")));
        assert!(Path::new(out).join(format!("verify_{suite}.json")).exists());
    }
    let curve = fs::read_to_string(Path::new(out).join("lemma1_curve.csv")).unwrap();
    let mut lines = curve.lines();
    assert_eq!(lines.next(), Some("config_hash,seed,N,mean,stddev"));
    let means: Vec<f64> = lines.map(|l| l.split(',').nth(3).unwrap().parse().unwrap()).collect();
    assert_eq!(means.len(), 6);
    assert!(means.windows(2).all(|w| w[1] < w[0]));
    assert_eq!(predcode(&["verify", "--suite", "lemma3"]).status.code(), Some(1));
}

#[test]
fn sweep_writes_one_row_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("s");
    let o = predcode(&[
        "sweep", "--config", &cfg, "--axis", "modes", "--values", "1,2,4", "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("sweep_modes.csv")).unwrap();
    let values: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').nth(3).unwrap()).collect();
    assert_eq!(values, ["1", "2", "4"]);
    let bad = predcode(&["sweep", "--config", &cfg, "--axis", "depth", "--values", "1"]);
    assert_eq!(bad.status.code(), Some(1));
}
