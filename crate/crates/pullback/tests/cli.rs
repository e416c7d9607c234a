use std::path::Path;
use std::process::{Command, Output};

fn pullback(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pullback"))
        .args(args)
        .current_dir(dir)
        .env_remove("PULLBACK_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = pullback(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

const SMALL: &str = "epochs = 2\nflow_steps = 2\nhidden = 8\nbatch_size = 50\n";

fn pipeline(dir: &Path) {
    ok(dir, &["gen", "--dataset", "banana", "--n", "300", "--seed", "7", "--steps", "200", "--out", "data.csv"]);
    std::fs::write(dir.join("small.toml"), SMALL).unwrap();
    ok(
        dir,
        &[
            "train", "--data", "data.csv", "--variant", "ours", "--config", "small.toml", "--out", "model.json",
            "--history", "history.csv",
        ],
    );
    ok(
        dir,
        &["geodesic", "--model", "model.json", "--from", "0,-3", "--to", "0,3", "--steps", "101", "--out", "curve.csv"],
    );
}

#[test]
fn gen_train_geodesic_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    pipeline(d);

    let data = std::fs::read_to_string(d.join("data.csv")).unwrap();
    assert!(data.starts_with("x1,x2\n"));
    assert_eq!(data.lines().count(), 301);
    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("data.csv.meta.json")).unwrap()).unwrap();
    assert_eq!(meta["schema"], "pullback-dataset/1");
    assert_eq!(meta["seed"], 7);

    let history = std::fs::read_to_string(d.join("history.csv")).unwrap();
    assert!(history.starts_with("epoch,nll,vol,iso,total,lr\n"));
    assert_eq!(history.lines().count(), 3);

    let curve = std::fs::read_to_string(d.join("curve.csv")).unwrap();
    let lines: Vec<&str> = curve.lines().collect();
    assert_eq!(lines[0], "t,x_1,x_2");
    assert_eq!(lines.len(), 102);
    assert_eq!(lines[1], "0,0,-3");
    assert_eq!(lines[101], "1,0,3");
}

#[test]
fn pipeline_is_byte_identical_across_runs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    pipeline(a.path());
    pipeline(b.path());
    for f in ["data.csv", "data.csv.meta.json", "model.json", "history.csv", "curve.csv"] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        let y = std::fs::read(b.path().join(f)).unwrap();
        assert!(x == y, "{f} differs between runs");
    }
}

#[test]
fn resolved_configuration_is_printed() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    pipeline(d);
    std::fs::write(d.join("small.toml"), SMALL).unwrap();
    let out = ok(
        d,
        &["train", "--data", "data.csv", "--config", "small.toml", "--seed", "3", "--out", "m2.json"],
    );
    let err = stderr(&out);
    for key in ["variant = ours", "flow_steps = 2", "epochs = 2", "seed = 3", "lambda_iso = ", "warmup_steps = 1000"] {
        assert!(err.contains(key), "missing {key:?} in\n{err}");
    }
}

#[test]
fn ground_truth_queries() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let run = |args: &[&str]| stdout(&ok(d, args)).trim().to_string();
    assert_eq!(run(&["distance", "--gt", "banana", "--from", "0,-3", "--to", "0,3"]), "1.5");
    assert_eq!(run(&["barycentre", "--gt", "banana", "--point", "0,-3", "--point", "0,3"]), "-1,0");
    let curve = run(&["geodesic", "--gt", "banana", "--from", "0,-3", "--to", "0,3", "--steps", "3"]);
    assert_eq!(curve.lines().nth(2).unwrap(), "0.5,-1,0");
    let v = run(&["logmap", "--gt", "banana", "--from", "0,-3", "--to", "0,3"]);
    assert_eq!(run(&["expmap", "--gt", "banana", "--at", "0,-3", "--v", &v]), "0,3");
}

#[test]
fn rae_and_eval_commands() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    pipeline(d);
    let dim = stdout(&ok(d, &["rae-dim", "--model", "model.json", "--epsilon", "0.01"]));
    assert!(dim.contains("latent_dim = 2"));
    ok(d, &["rae-curve", "--model", "model.json", "--data", "data.csv", "--order", "random", "--seed", "4", "--out", "c.csv"]);
    let curve = std::fs::read_to_string(d.join("c.csv")).unwrap();
    assert!(curve.starts_with("k,mean_error,order,seed\n"));
    assert_eq!(curve.lines().count(), 4);
    assert!(curve.lines().nth(1).unwrap().ends_with(",random,4"));
    ok(d, &["rae-mesh", "--model", "model.json", "--m", "3", "--out", "mesh.csv"]);
    let mesh = std::fs::read_to_string(d.join("mesh.csv")).unwrap();
    assert!(mesh.starts_with("z_1,z_2,x_1,x_2\n"));
    assert_eq!(mesh.lines().count(), 10);

    ok(
        d,
        &[
            "eval", "--model", "model.json", "--gt", "banana", "--data", "data.csv", "--pairs", "10", "--steps", "5",
            "--out", "r.json", "--curves", "g.csv",
        ],
    );
    let g = std::fs::read_to_string(d.join("g.csv")).unwrap();
    assert!(g.starts_with("pair,t,x_1,x_2,variant\n"));
    assert_eq!(g.lines().count(), 1 + 10 * 2 * 5);
    assert!(g.lines().nth(1).unwrap().ends_with(",ours"));
    assert!(g.lines().nth(6).unwrap().ends_with(",ground_truth"));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("r.json")).unwrap()).unwrap();
    assert_eq!(report["schema"], "pullback-eval/1");
    assert_eq!(report["eval"]["pairs"], 10);
    assert_eq!(report["cells"][0]["geodesic"]["pairs"], 10);
    assert!(d.join("r.csv").exists());
}

#[test]
fn table_command_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = ok(
        d,
        &[
            "table", "--datasets", "river", "--variants", "ours,standard_nf", "--seeds", "0", "--n", "200",
            "--mcmc-steps", "50", "--epochs", "1", "--flow-steps", "2", "--hidden", "8", "--pairs", "5", "--out",
            "t.json",
        ],
    );
    assert_eq!(stdout(&out).lines().count(), 2);
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("t.json")).unwrap()).unwrap();
    assert_eq!(report["cells"].as_array().unwrap().len(), 2);
    assert_eq!(report["cells"][1]["train_config"]["variant"], "standard_nf");
    assert_eq!(report["data"]["n"], 200);
    let csv = std::fs::read_to_string(d.join("t.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn errors_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let code = |args: &[&str]| {
        let o = pullback(d, args);
        let line = stderr(&o).lines().last().unwrap_or("").to_string();
        (o.status.code().unwrap(), line)
    };

    let (c, line) = code(&["geodesic", "--model", "missing.json", "--from", "0,0", "--to", "1,1"]);
    assert_eq!(c, 2);
    assert!(line.starts_with("error[file]: "), "{line}");

    std::fs::write(d.join("old.json"), "{\"schema\": \"pullback-flow/0\"}").unwrap();
    let (c, line) = code(&["geodesic", "--model", "old.json", "--from", "0,0", "--to", "1,1"]);
    assert_eq!(c, 3);
    assert!(line.starts_with("error[schema]: "), "{line}");

    let (c, line) = code(&["distance", "--gt", "banana", "--from", "0,0,0", "--to", "1,1"]);
    assert_eq!(c, 4);
    assert!(line.starts_with("error[dimension]: "), "{line}");

    std::fs::write(d.join("bad.csv"), "x1,x2\n1,zz\n").unwrap();
    let (c, _) = code(&["train", "--data", "bad.csv", "--out", "m.json"]);
    assert_eq!(c, 2);

    let (c, line) = code(&["distance", "--gt", "banana", "--from", "0,0", "--to", "1,1", "--frobnicate"]);
    assert_eq!(c, 1);
    assert!(line.starts_with("error[usage]: "), "{line}");

    let (c, _) = code(&["distance", "--from", "0,0", "--to", "1,1"]);
    assert_eq!(c, 1);
    let (c, _) = code(&["gen", "--dataset", "moons", "--out", "x.csv"]);
    assert_eq!(c, 1);
}

#[test]
fn version_lists_schemas() {
    let dir = tempfile::tempdir().unwrap();
    let out = stdout(&ok(dir.path(), &["--version"]));
    for s in ["pullback-flow/1", "pullback-dataset/1", "pullback-eval/1"] {
        assert!(out.contains(s));
    }
}

#[test]
fn output_directory_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_pullback"))
        .args(["gen", "--dataset", "hemisphere_1_3", "--n", "20", "--out", "sub/h.csv"])
        .current_dir(dir.path())
        .env("PULLBACK_OUT_DIR", dir.path().join("outputs"))
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(dir.path().join("outputs/sub/h.csv").exists());
    assert!(dir.path().join("outputs/sub/h.csv.meta.json").exists());
}
