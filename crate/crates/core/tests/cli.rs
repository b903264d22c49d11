use std::process::Command;

fn stdsnn(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_stdsnn")).args(args).output().unwrap();
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

#[test]
fn default_cohort_has_21_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("data");
    let (code, stdout, _) = stdsnn(&["gen-phantom", "--dims", "1x32x32", "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0);
    assert!(stdout.lines().any(|l| l == "21 pairs"), "{stdout}");
    assert!(out.join("manifest.txt").is_file());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing");
    let (code, _, stderr) = stdsnn(&["train", "--data", missing.to_str().unwrap(), "--out", "x"]);
    assert_eq!(code, 2, "{stderr}");
    assert_eq!(stdsnn(&["train"]).0, 2);
    assert_eq!(stdsnn(&["gen-phantom", "--dims", "2x30x32", "--out", "x"]).0, 2);

    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "learning_rate = 1e-3\nmomentum = 0.9\n").unwrap();
    let (code, _, stderr) = stdsnn(&["--config", cfg.to_str().unwrap(), "gen-phantom", "--out", "x"]);
    assert_eq!(code, 2);
    assert!(stderr.contains("momentum"));
}

#[test]
fn help_documents_defaults() {
    let (code, stdout, _) = stdsnn(&["train", "--help"]);
    assert_eq!(code, 0);
    for needle in ["[default: 6]", "[default: 5e-5]", "[default: 1e-5]", "[default: 50]", "[default: 200]"] {
        assert!(stdout.contains(needle), "missing {needle}");
    }
}

#[test]
fn eval_rejects_mismatched_dims() {
    let dir = tempfile::tempdir().unwrap();
    let p = |s: &str| dir.path().join(s).to_string_lossy().into_owned();
    let ok = |args: &[&str]| assert_eq!(stdsnn(args).0, 0, "{args:?}");
    ok(&["gen-phantom", "--scan-counts", "2x2", "--dims", "1x32x32", "--out", &p("a")]);
    ok(&["gen-phantom", "--scan-counts", "2x2", "--dims", "1x48x48", "--out", &p("b")]);
    ok(&["train", "--data", &p("a"), "--epochs", "1", "--base-width", "4", "--batch-size", "2", "--out", &p("run")]);
    ok(&["eval", "--checkpoint", &p("run/model.stdw"), "--data", &p("a")]);
    let (code, _, stderr) = stdsnn(&["eval", "--checkpoint", &p("run/model.stdw"), "--data", &p("b")]);
    assert_eq!(code, 1);
    assert!(stderr.contains("shape mismatch"), "{stderr}");
}

#[test]
fn zero_epochs_writes_untrained_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let p = |s: &str| dir.path().join(s).to_string_lossy().into_owned();
    assert_eq!(stdsnn(&["gen-phantom", "--scan-counts", "2x1", "--dims", "1x32x32", "--out", &p("d")]).0, 0);
    let (code, _, _) = stdsnn(&["train", "--data", &p("d"), "--epochs", "0", "--base-width", "4", "--out", &p("r")]);
    assert_eq!(code, 0);
    assert!(dir.path().join("r/model.stdw").is_file());
    let log = std::fs::read_to_string(dir.path().join("r/train_log.csv")).unwrap();
    assert_eq!(log.trim(), "epoch,mean_loss,lr,seconds");
}
