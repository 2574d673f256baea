use std::fs;
use std::process::{Command, Output};

fn fepinn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fepinn")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn lists_presets() {
    let o = fepinn(&["presets"]);
    assert!(o.status.success());
    let s = stdout(&o);
    for p in ["burgers-desk", "burgers-full", "cylinder-desk", "cylinder-full", "inverse-desk", "inverse-full"] {
        assert!(s.lines().any(|l| l == p), "{s}");
    }
}

#[test]
fn check_passes() {
    let o = fepinn(&["check", "--draws", "8", "--seed", "5"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("8 draws"));
}

#[test]
fn export_points_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = fepinn(&["export-points", "--preset", "cylinder-desk", "--seed", "4", "--out", out]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let boundary = fs::read_to_string(dir.path().join("boundary.csv")).unwrap();
    assert_eq!(
        boundary.lines().next().unwrap(),
        "x,y,segment,u,v,p,sigma_xx,sigma_xy,sigma_yy"
    );
    assert_eq!(boundary.lines().count(), 1 + 100 + 50 + 200 + 100);
    let domain = fs::read_to_string(dir.path().join("domain.csv")).unwrap();
    assert!(domain.lines().count() > 3900);
}

#[test]
fn train_then_eval_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("plan.toml");
    fs::write(
        &cfg,
        "kind = \"single_run\"\npreset = \"burgers-desk\"\n[run]\npoints.domain = 100\n\
         phase1.max_iters = 5\nphase2.max_iters = 5\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    let o = fepinn(&["train", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("relative L2 error"));
    let trace = fs::read_to_string(out.join("fepinn-trace.csv")).unwrap();
    assert!(trace.starts_with("iteration,phase,step,total,pde,"));
    let ckpt = out.join("fepinn.ckpt");
    let o = fepinn(&["eval", ckpt.to_str().unwrap(), "--benchmark", "burgers"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("max error"));
}

#[test]
fn invalid_config_fails_with_field_name() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "kind = \"single_run\"\npreset = \"burgers-desk\"\n[run]\nlambda = -1.0\n").unwrap();
    let o = fepinn(&["sweep", "--config", cfg.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("lambda"));
    let o = fepinn(&["train", "--preset", "no-such-preset"]);
    assert!(!o.status.success());
}
