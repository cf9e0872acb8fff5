use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

fn hipponet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hipponet"))
        .args(args)
        .env_remove("HIPPONET_OUT")
        .output()
        .expect("binary runs")
}

fn stderr_json(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().expect("stderr has an error line");
    serde_json::from_str(line).unwrap_or_else(|e| panic!("stderr is not JSON ({e}): {text}"))
}

fn tiny_config(dir: &Path) -> Value {
    json!({
        "seed": 5,
        "roi": {"centers": {"left_hippocampus": [8, 9, 8], "right_hippocampus": [23, 9, 8]}, "size": 8},
        "network": {"conv_filter_counts": [4, 4, 4, 4], "fc_units": [8, 4]},
        "training": {"iterations": 6, "q": 4, "eval_period": 3, "resplit_period": 3,
                     "mini_group_size": 2, "top_mean_window": 3},
        "dataset": {"manifest": dir.join("data/manifest.json"), "k": 2, "test_copies": 1,
                    "test_per_class": 2, "augment": {"max_shift": 2, "max_sigma": 1.0}},
        "synth": {"subjects_per_class": {"AD": 6, "MCI": 0, "NC": 6}, "shape": [32, 18, 16],
                  "radii": [3.0, 4.0, 3.0]}
    })
}

fn write_config(dir: &Path, value: &Value) -> String {
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(value).unwrap()).unwrap();
    path.to_str().unwrap().to_string()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn synth_augment_train_evaluate_report() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let cfg = write_config(dir, &tiny_config(dir));
    let data = dir.join("data");
    let run = dir.join("run");

    assert_ok(&hipponet(&["synth", "-c", &cfg, "-o", p(&data)]));
    assert!(data.join("volumes/AD_000_sMRI.nii").exists() || std::fs::read_dir(data.join("volumes")).unwrap().count() == 24);

    let out = hipponet(&["augment", "-c", &cfg, "-o", p(&data)]);
    assert_ok(&out);
    let table = String::from_utf8_lossy(&out.stdout).to_string();
    assert!(table.lines().any(|l| l.split_whitespace().collect::<Vec<_>>() == ["AD", "4", "4", "8", "2", "2", "2"]), "{table}");
    let manifest: Value = serde_json::from_str(&std::fs::read_to_string(data.join("manifest.json")).unwrap()).unwrap();
    assert!(manifest.get("augmentation").is_some() && manifest.get("test_sets").is_some());

    assert_ok(&hipponet(&["train", "-c", &cfg, "-o", p(&run)]));
    for f in ["runlog.csv", "summary.json", "model.ckpt", "timings.json", "config.json"] {
        assert!(run.join(f).exists(), "missing {f}");
    }
    let log = std::fs::read_to_string(run.join("runlog.csv")).unwrap();
    // Evaluations at iterations 0, 3 and 6.
    assert_eq!(log.lines().count(), 4, "{log}");

    let eval_dir = dir.join("eval");
    assert_ok(&hipponet(&[
        "evaluate", "-c", &cfg, "--checkpoint", p(&run.join("model.ckpt")), "-o", p(&eval_dir),
    ]));
    let ev: Value = serde_json::from_str(&std::fs::read_to_string(eval_dir.join("evaluation.json")).unwrap()).unwrap();
    assert_eq!(ev["sets"].as_array().unwrap().len(), 3);

    let curves = dir.join("curves");
    let a = hipponet(&["report", p(&run), "--curves", p(&curves)]);
    assert_ok(&a);
    let b = hipponet(&["report", p(&run)]);
    assert_ok(&b);
    assert_eq!(a.stdout, b.stdout, "report output is reproducible");
    assert!(String::from_utf8_lossy(&a.stdout).contains("AD/NC"));
    let run_name = std::fs::read_dir(&curves).unwrap().next().unwrap().unwrap().path();
    for c in ["train_loss", "val_acc", "test0_acc", "test1_acc", "test2_acc"] {
        let text = std::fs::read_to_string(run_name.join(format!("{c}.csv"))).unwrap();
        assert!(text.starts_with("iteration,value\n"), "{c}: {text}");
    }

    // Training twice from the same config gives identical artifacts.
    let again = dir.join("again");
    assert_ok(&hipponet(&["train", "-c", &cfg, "-o", p(&again)]));
    for f in ["runlog.csv", "summary.json", "model.ckpt"] {
        assert_eq!(std::fs::read(run.join(f)).unwrap(), std::fs::read(again.join(f)).unwrap(), "{f} differs");
    }

    // A config whose ROI centers disagree with the manifest is refused.
    let mut other = tiny_config(dir);
    other["roi"]["centers"]["left_hippocampus"] = json!([9, 9, 8]);
    let other_dir = dir.join("other");
    std::fs::create_dir_all(&other_dir).unwrap();
    let other_cfg = write_config(&other_dir, &other);
    let out = hipponet(&["train", "-c", &other_cfg, "-o", p(&dir.join("refused"))]);
    assert_eq!(out.status.code(), Some(5));
    assert_eq!(stderr_json(&out)["error"]["kind"], "incompatible_options");
}

#[test]
fn missing_centers_is_a_config_error_naming_the_key() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &json!({"roi": {"size": 28}}));
    let out = hipponet(&["train", "-c", &cfg, "-o", p(&tmp.path().join("o"))]);
    assert_eq!(out.status.code(), Some(3));
    let e = stderr_json(&out);
    assert_eq!(e["error"]["key"], "roi.centers");
    assert_eq!(e["error"]["exit_code"], 3);
}

#[test]
fn unknown_key_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(tmp.path());
    cfg["optimizer"] = json!({"mu_0": 0.01});
    let cfg = write_config(tmp.path(), &cfg);
    let out = hipponet(&["synth", "-c", &cfg, "-o", p(&tmp.path().join("o"))]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(stderr_json(&out)["error"]["key"], "optimizer.mu_0");
}

#[test]
fn overrides_apply_after_the_file_and_are_echoed() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let cfg = write_config(dir, &tiny_config(dir));
    let out_dir = dir.join("o");
    let out = hipponet(&[
        "synth", "-c", &cfg, "--set", "optimizer.mu0=0.005", "--seed", "11", "-o", p(&out_dir),
    ]);
    assert_ok(&out);
    let echo: Value = serde_json::from_str(&std::fs::read_to_string(out_dir.join("config.json")).unwrap()).unwrap();
    assert_eq!(echo["optimizer"]["mu0"], 0.005);
    assert_eq!(echo["seed"], 11);
    assert!(echo["sub_seeds"].is_object());
}

#[test]
fn report_on_an_empty_log_exits_with_no_evaluations() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run");
    std::fs::create_dir_all(&run).unwrap();
    std::fs::write(
        run.join("runlog.csv"),
        "iteration,lr,train_loss,val_acc,test0_acc,test1_acc,test2_acc\n",
    )
    .unwrap();
    let out = hipponet(&["report", p(&run)]);
    assert_eq!(out.status.code(), Some(7), "{}", String::from_utf8_lossy(&out.stderr));
    let e = stderr_json(&out);
    assert!(e["error"]["message"].as_str().unwrap().contains("no evaluations recorded"));

    let out = hipponet(&["report", p(tmp.path())]);
    assert_eq!(out.status.code(), Some(7));
}

#[test]
fn missing_manifest_is_an_io_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &tiny_config(tmp.path()));
    let out = hipponet(&["train", "-c", &cfg, "-o", p(&tmp.path().join("o"))]);
    assert_eq!(out.status.code(), Some(4));
    assert_eq!(stderr_json(&out)["error"]["kind"], "io");
}

#[test]
fn bad_arguments_are_usage_errors() {
    assert_eq!(hipponet(&["train", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(hipponet(&["--version"]).status.code(), Some(0));
}

#[test]
fn gradcheck_passes_for_one_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let out = hipponet(&["gradcheck", "--seeds", "1", "--out", p(tmp.path())]);
    assert_ok(&out);
    assert!(tmp.path().join("gradcheck.json").exists());
}
