use std::path::Path;
use std::process::{Command, Output};

fn graphmut(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_graphmut"))
        .args(args)
        .env_remove("GRAPHMUT_ADAPTER")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_config(dir: &Path, extra: &str) -> std::path::PathBuf {
    let cfg = dir.join("campaign.toml");
    std::fs::write(
        &cfg,
        format!(
            "rng_seed = 1\nbudget = 16\nbackends = [\"faulty\", \"reference\"]\nseeds = [{{ kind = \"tiny-mlp\" }}, {{ kind = \"tiny-cnn\" }}]\n{extra}"
        ),
    )
    .unwrap();
    cfg
}

#[test]
fn fuzz_writes_artifacts_and_replays() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let out = dir.path().join("run");
    let o = graphmut(&["fuzz", "--config", path(&cfg), "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for f in [
        "lineage.jsonl",
        "reports.jsonl",
        "defects.json",
        "results.jsonl",
        "summary.json",
        "stats.txt",
        "stats.json",
        "curves.csv",
        "config.toml",
        "seeds/tiny-cnn.json",
    ] {
        assert!(out.join(f).exists(), "{f}");
    }
    let lineage = out.join("lineage.jsonl");
    let o = graphmut(&["replay", "--lineage", path(&lineage)]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert_eq!(text.lines().count(), 16);
    assert!(text.lines().all(|l| l.contains(" ok ")), "{text}");

    let o = graphmut(&["stats", path(&out)]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains('%'));
}

#[test]
fn budget_flag_overrides_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let out = dir.path().join("run");
    let o = graphmut(&["fuzz", "--config", path(&cfg), "--budget", "0", "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(std::fs::read_to_string(out.join("reports.jsonl")).unwrap(), "");
    let o = graphmut(&["stats", path(&out)]);
    assert!(stdout(&o).contains("empty"));
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "backbone_bias = 3.0\n");
    let o = graphmut(&["fuzz", "--config", path(&cfg), "--out", path(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn mutate_writes_a_model_and_reports_inapplicability() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("m.onnx");
    let o = graphmut(&[
        "mutate", "--model", "seed:tiny-cnn", "--op", "GF", "--site", "conv1", "--param", "sigma=0.5", "--out",
        path(&out),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(std::fs::metadata(&out).unwrap().len() > 0);

    // a one-node model: the first dense layer of tiny-mlp alone
    let single = dir.path().join("single.json");
    let o = graphmut(&["mutate", "--model", "seed:tiny-mlp", "--op", "GF", "--site", "dense1", "--out", path(&single)]);
    assert_eq!(o.status.code(), Some(0));
    let mut m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&single).unwrap()).unwrap();
    let first = m["nodes"][0].clone();
    m["nodes"] = serde_json::json!([first]);
    m["outputs"] = serde_json::json!([first["id"]]);
    m["regions"] = serde_json::json!({});
    std::fs::write(&single, m.to_string()).unwrap();
    let o = graphmut(&["mutate", "--model", path(&single), "--op", "LR", "--site", first["id"].as_str().unwrap()]);
    assert_ne!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stderr).contains("error"));
}

#[test]
fn exec_and_compare() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    for (backend, p) in [("reference", &a), ("optimized", &b)] {
        let o = graphmut(&["exec", "--model", "seed:tiny-cnn", "--backend", backend, "--out", path(p)]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let o = graphmut(&["compare", path(&a), path(&a)]);
    let text = stdout(&o);
    assert!(text.contains("no defect"), "{text}");
    let ds: Vec<&str> = text
        .lines()
        .skip(1)
        .take_while(|l| !l.starts_with("legality"))
        .map(|l| l.split_whitespace().nth(1).unwrap())
        .collect();
    assert!(!ds.is_empty());
    assert!(ds.iter().all(|d| *d == "0.000000e0"), "{ds:?}");

    let o = graphmut(&["compare", path(&a), path(&b), "--model", "seed:tiny-cnn"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("legality: legal"));
}

#[test]
fn exec_external_needs_a_command() {
    let o = graphmut(&["exec", "--model", "seed:tiny-mlp", "--backend", "external"]);
    assert_eq!(o.status.code(), Some(2));
}
