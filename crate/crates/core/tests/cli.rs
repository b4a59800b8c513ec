use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_streamlearn"))
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().unwrap();
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn gen(dir: &Path, name: &str) -> (std::path::PathBuf, std::path::PathBuf) {
    let train = dir.join(format!("{name}.fset"));
    let eval = dir.join(format!("{name}_eval.fset"));
    run_ok(bin().args(["gen", "--num-classes", "6", "--dim", "8", "--examples-per-class", "30", "--seed", "5"])
        .arg("--out").arg(&train)
        .arg("--eval-out").arg(&eval)
        .args(["--eval-per-class", "10"]));
    (train, eval)
}

#[test]
fn gen_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, ae) = gen(tmp.path(), "a");
    let (b, be) = gen(tmp.path(), "b");
    assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
    assert_eq!(std::fs::read(ae).unwrap(), std::fs::read(be).unwrap());
}

#[test]
fn missing_dataset_is_reported_by_path() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.cfg");
    std::fs::write(&cfg, "dataset = /does/not/exist.fset\neval_dataset = /does/not/exist.fset\n").unwrap();
    let out = bin().arg("run").arg("--config").arg(&cfg).args(["--set"]).arg(format!("output_dir={}", tmp.path().join("o").display())).output().unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("/does/not/exist.fset"), "{stderr}");
}

#[test]
fn bad_usage_exits_with_two() {
    let out = bin().args(["run"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn report_prints_relative_improvement() {
    let tmp = tempfile::tempdir().unwrap();
    let base = tmp.path().join("base.json");
    let cand = tmp.path().join("cand.json");
    std::fs::write(&base, r#"{"final_top1": 0.4528}"#).unwrap();
    std::fs::write(&cand, r#"{"final_top1": 0.5205}"#).unwrap();
    let out = run_ok(bin().arg("report").arg("--inputs").arg(&base).arg(&cand));
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "input,final_top1,relative_improvement_pct");
    assert!(lines[1].ends_with(",0.0000"));
    let pct: f64 = lines[2].rsplit(',').next().unwrap().parse().unwrap();
    assert!((pct - 14.95).abs() < 0.01, "{pct}");
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let tmp = tempfile::tempdir().unwrap();
    let (train, eval) = gen(tmp.path(), "d");
    let cfg = tmp.path().join("run.cfg");
    std::fs::write(
        &cfg,
        format!(
            "seed = 4\ndataset = {}\neval_dataset = {}\npretrain_classes = 2\ncheckpoint_every = 2\nlearner = remind\n\
             remind.subspaces = 4\nremind.codebook_size = 16\nremind.hidden = 16\n",
            train.display(),
            eval.display()
        ),
    )
    .unwrap();
    let dir = |n: &str| tmp.path().join(n);
    let set_out = |n: &str| format!("output_dir={}", dir(n).display());

    run_ok(bin().arg("run").arg("--config").arg(&cfg).arg("--set").arg(set_out("full")));
    let out = run_ok(bin().arg("run").arg("--config").arg(&cfg).arg("--set").arg(set_out("split")).arg("--stop-after-init"));
    assert!(String::from_utf8_lossy(&out.stdout).contains("after_init"));
    assert!(!dir("split").join("report.json").exists());
    run_ok(bin().arg("run").arg("--config").arg(&cfg).arg("--set").arg(set_out("resumed"))
        .arg("--resume").arg(dir("split").join("init.snap")));

    for f in ["report.json", "curve.csv", "plan.txt"] {
        assert_eq!(std::fs::read(dir("full").join(f)).unwrap(), std::fs::read(dir("resumed").join(f)).unwrap(), "{f}");
    }
}

#[test]
fn eval_offline_prints_accuracy() {
    let tmp = tempfile::tempdir().unwrap();
    let (train, eval) = gen(tmp.path(), "e");
    let head = tmp.path().join("head.bin");
    let out = run_ok(bin().arg("eval-offline").arg("--train").arg(&train).arg("--eval").arg(&eval)
        .args(["--epochs", "10", "--decay-epochs", "8", "--k", "5"])
        .arg("--head-out").arg(&head));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["k"], 5);
    assert_eq!(v["eval_examples"], 60);
    let acc = v["accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc) && acc > 0.9);
    assert!(head.exists());
}
