use std::path::Path;
use std::process::{Command, Output};

use cobweb_lab::predict::Predictor;
use cobweb_lab::protocol::ProtocolConfig;
use cobweb_lab::{CobwebTree, Instance, TreeConfig};

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cobweb-lab"))
        .args(args)
        .env_remove("COBWEB_LAB_DATA")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn tiny_tree() -> CobwebTree {
    let mut tree = CobwebTree::new(2, 2, TreeConfig::default()).unwrap();
    for (f, l) in [([0.1, 0.2], 0), ([0.15, 0.1], 0), ([0.9, 0.8], 1), ([0.85, 0.95], 1), ([0.5, 0.5], 0)] {
        tree.fit(&Instance::labeled(f.to_vec(), l)).unwrap();
    }
    tree
}

#[test]
fn fit_on_separable_clusters_is_perfect_and_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = cli(&["fit", "--model", "cobweb4v", "--data", "synth:2,2,25,0.01,3", "--fraction", "1", "--out", p(&out)]);
        assert!(o.status.success(), "{}", stderr(&o));
        assert!(o.stdout.is_empty());
        let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
        assert_eq!(summary["test_accuracy"], 1.0);
        assert_eq!(summary["size_kind"], "nodes");
        summary["checkpoint_sha256"].as_str().unwrap().to_owned()
    };
    assert_eq!(run("a"), run("b"));
}

#[test]
fn network_checkpoints_fit_and_predict() {
    let dir = tempfile::tempdir().unwrap();
    let queries = dir.path().join("q.csv");
    std::fs::write(&queries, "0.1,0.2,0.3\n0.9,0.8,0.7\n").unwrap();
    for model in ["cobwebnn-sparse", "cobwebnn-dense", "mlp-replay"] {
        let out = dir.path().join(model);
        let o = cli(&["fit", "--model", model, "--data", "synth:2,3,20,0.05,1", "--fraction", "1", "--out", p(&out)]);
        assert!(o.status.success(), "{model}: {}", stderr(&o));
        let pred = out.join("pred.csv");
        let o = cli(&["predict", "--checkpoint", p(&out.join("model.json")), "--input", p(&queries), "--out", p(&pred)]);
        assert!(o.status.success(), "{model}: {}", stderr(&o));
        let text = std::fs::read_to_string(&pred).unwrap();
        assert_eq!(text.lines().count(), 3, "{model}: {text}");
        for line in text.lines().skip(1) {
            let sum: f64 = line.split(',').skip(1).map(|v| v.parse::<f64>().unwrap()).sum();
            assert!((sum - 1.0).abs() < 1e-9);
        }
    }
}

#[test]
fn predict_matches_library_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let tree = tiny_tree();
    let ckpt = dir.path().join("tree.json");
    std::fs::write(&ckpt, tree.to_json()).unwrap();
    let x = [0.3, 0.4];
    let input = dir.path().join("x.csv");
    std::fs::write(&input, format!("{:?},{:?}\n", x[0], x[1])).unwrap();
    let out = dir.path().join("pred.csv");
    let o = cli(&["predict", "--checkpoint", p(&ckpt), "--input", p(&input), "--out", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));

    let expected = Predictor::new(&tree).predict(&x, &ProtocolConfig::default().predict).unwrap();
    let text = std::fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("argmax,p0,p1"));
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    let got: Vec<f64> = row[1..].iter().map(|v| v.parse().unwrap()).collect();
    assert_eq!(got, expected);
    let argmax = if expected[1] > expected[0] { "1" } else { "0" };
    assert_eq!(row[0], argmax);
}

#[test]
fn empty_input_gives_empty_output() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("tree.json");
    std::fs::write(&ckpt, tiny_tree().to_json()).unwrap();
    let input = dir.path().join("empty.csv");
    std::fs::write(&input, "").unwrap();
    let out = dir.path().join("pred.csv");
    let o = cli(&["predict", "--checkpoint", p(&ckpt), "--input", p(&input), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(std::fs::read(&out).unwrap(), b"");
}

#[test]
fn dimension_mismatch_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("tree.json");
    std::fs::write(&ckpt, tiny_tree().to_json()).unwrap();
    let input = dir.path().join("x.csv");
    std::fs::write(&input, "0.1,0.2,0.3\n").unwrap();
    let o = cli(&["predict", "--checkpoint", p(&ckpt), "--input", p(&input), "--out", p(&dir.path().join("o.csv"))]);
    assert_eq!(o.status.code(), Some(3));
    let err = stderr(&o);
    assert!(err.contains("D=2") && err.contains("D=3"), "{err}");
}

#[test]
fn schema_version_mismatch_names_both_versions() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("tree.json");
    let text = tiny_tree().to_json().replacen("\"version\":1", "\"version\":9", 1);
    std::fs::write(&ckpt, text).unwrap();
    let input = dir.path().join("x.csv");
    std::fs::write(&input, "0.1,0.2\n").unwrap();
    let o = cli(&["predict", "--checkpoint", p(&ckpt), "--input", p(&input), "--out", p(&dir.path().join("o.csv"))]);
    assert_eq!(o.status.code(), Some(3));
    let err = stderr(&o);
    assert!(err.contains("version 1") && err.contains("version 9"), "{err}");
}

#[test]
fn invalid_config_key_exits_2_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "[protocol.nn]\nlearnig_rate = 0.5\n").unwrap();
    let o = cli(&["fit", "--config", p(&cfg), "--out", p(dir.path()), "--dry-run"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("learnig_rate"), "{}", stderr(&o));
}

#[test]
fn usage_and_data_errors_have_distinct_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(cli(&["fit", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(cli(&["fit", "--model", "perceptron"]).status.code(), Some(2));
    assert_eq!(cli(&["fit", "--data", "imagenet", "--out", p(dir.path())]).status.code(), Some(2));
    let missing = dir.path().join("nowhere");
    let o = cli(&["fit", "--data", &format!("mnist:{}", p(&missing)), "--out", p(dir.path()), "--dry-run"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    let o = cli(&["inspect-tree", "--checkpoint", p(&missing)]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn data_directory_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_cobweb-lab"))
        .args(["fit", "--data", "mnist", "--out", p(dir.path()), "--dry-run"])
        .env("COBWEB_LAB_DATA", dir.path())
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains(p(&dir.path().join("mnist"))), "{}", stderr(&o));
}

#[test]
fn dry_run_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    for args in [
        vec!["fit", "--data", "synth:2,2,5,0.1,0"],
        vec!["experiment", "--id", "1", "--data", "synth:2,2,5,0.1,0"],
        vec!["make-splits", "--data", "synth:2,2,5,0.1,0"],
    ] {
        let mut args = args.clone();
        args.extend(["--out", p(&out), "--dry-run"]);
        let o = cli(&args);
        assert!(o.status.success(), "{args:?}: {}", stderr(&o));
    }
    assert!(!out.exists());
}

#[test]
fn experiment_outputs_and_manifest_rerun_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first");
    let common = ["--data", "synth:3,4,30,0.05,2", "--fraction", "1", "--per-class-d1", "4", "--seeds", "0,1"];
    let mut args = vec!["experiment", "--id", "1", "--out", p(&first)];
    args.extend(common);
    let o = cli(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    let metrics = std::fs::read_to_string(first.join("metrics.csv")).unwrap();
    let mut lines = metrics.lines();
    assert_eq!(lines.next(), Some("model,dataset,seed,split,chosen_acc,nonchosen_acc,overall_acc"));
    assert_eq!(lines.count(), 2 * 2 * 10);
    for f in ["timings.csv", "plot.csv", "manifest.json"] {
        assert!(first.join(f).is_file(), "{f}");
    }

    let second = dir.path().join("second");
    let o = cli(&["experiment", "--manifest", p(&first.join("manifest.json")), "--out", p(&second)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(std::fs::read(first.join("metrics.csv")).unwrap(), std::fs::read(second.join("metrics.csv")).unwrap());
    assert_eq!(std::fs::read(first.join("plot.csv")).unwrap(), std::fs::read(second.join("plot.csv")).unwrap());

    let third = dir.path().join("third");
    let mut args = vec!["experiment", "--id", "1", "--sequential", "--out", p(&third)];
    args.extend(common);
    assert!(cli(&args).status.success());
    assert_eq!(std::fs::read(first.join("metrics.csv")).unwrap(), std::fs::read(third.join("metrics.csv")).unwrap());
}

#[test]
fn make_splits_and_inspect_tree() {
    let dir = tempfile::tempdir().unwrap();
    let o = cli(&[
        "make-splits", "--data", "synth:3,2,20,0.1,5", "--fraction", "1", "--per-class-d1", "3", "--seeds", "4", "--out", p(dir.path()),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let schedule: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("schedule-seed4.json")).unwrap()).unwrap();
    let splits = schedule["splits"].as_array().unwrap();
    assert_eq!(splits.len(), 10);
    assert_eq!(splits[0].as_array().unwrap().len(), 9);
    let total: usize = splits.iter().map(|s| s.as_array().unwrap().len()).sum();
    assert_eq!(total, 60);

    let ckpt = dir.path().join("tree.json");
    std::fs::write(&ckpt, tiny_tree().to_json()).unwrap();
    let o = cli(&["inspect-tree", "--checkpoint", p(&ckpt)]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("depth histogram") && text.contains("leaf purity"), "{text}");
    let o = cli(&["inspect-tree", "--checkpoint", p(&ckpt), "--json"]);
    let s: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(s["node_count"].as_u64().unwrap() as usize, tiny_tree().node_count());
}
