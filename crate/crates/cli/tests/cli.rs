use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
h_grid = [0.3, 0.2]
recovery_h = [0.3, 0.2]
lambda_count = 3
slice_rings = 4

[geometry]
disk_rings = 3
x1_cells = 6
"#;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_calderon")).args(args).env("CALDERON_WORKERS", "1").output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn forward_json(out: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(out.join("forward.json")).unwrap()).unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

#[test]
fn forward_is_deterministic_and_mesh_sensitive() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "small.toml", SMALL);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_eq!(code(&run(&["forward", "--config", &cfg, "--out", a.to_str().unwrap()])), 0);
    assert_eq!(code(&run(&["forward", "--config", &cfg, "--out", b.to_str().unwrap()])), 0);
    let (ja, jb) = (forward_json(&a), forward_json(&b));
    assert_eq!(ja["dn_q_hash"], jb["dn_q_hash"]);
    assert_eq!(ja["dn_0_hash"], jb["dn_0_hash"]);
    assert_ne!(ja["dn_q_hash"], ja["dn_0_hash"]);
    assert!(ja["dn_0_constant_residual"].as_f64().unwrap() < 1e-8);

    let refined = write_config(dir.path(), "refined.toml", &SMALL.replace("disk_rings = 3", "disk_rings = 4"));
    let c = dir.path().join("c");
    assert_eq!(code(&run(&["forward", "--config", &refined, "--out", c.to_str().unwrap()])), 0);
    assert_ne!(forward_json(&c)["dn_q_hash"], ja["dn_q_hash"]);
    assert_ne!(forward_json(&c)["mesh_hash"], ja["mesh_hash"]);
}

#[test]
fn validate_passes_and_detects_sabotage() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "small.toml", SMALL);
    let out = dir.path().join("v");
    let ok = run(&["validate", "--config", &cfg, "--out", out.to_str().unwrap(), "--h", "0.2"]);
    assert_eq!(code(&ok), 0, "{}", String::from_utf8_lossy(&ok.stdout));
    assert!(out.join("validate.json").exists());

    let bad = run(&["validate", "--config", &cfg, "--out", out.to_str().unwrap(), "--h", "0.2", "--zero-projection"]);
    assert_eq!(code(&bad), 1, "{}", String::from_utf8_lossy(&bad.stdout));

    let off_grid = run(&["validate", "--config", &cfg, "--out", out.to_str().unwrap(), "--h", "0.25"]);
    assert_eq!(code(&off_grid), 2);
}

#[test]
fn malformed_inputs_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let unknown = write_config(dir.path(), "bad.toml", "no_such_key = 1\n");
    assert_eq!(code(&run(&["forward", "--config", &unknown, "--out", dir.path().to_str().unwrap()])), 2);

    let cfg = write_config(dir.path(), "small.toml", SMALL);
    let out = dir.path().join("f");
    assert_eq!(code(&run(&["forward", "--config", &cfg, "--out", out.to_str().unwrap()])), 0);
    std::fs::remove_file(out.join("dn_0.bin")).unwrap();
    assert_eq!(code(&run(&["reconstruct", "--config", &cfg, "--out", out.to_str().unwrap()])), 2);

    // DN files from a different mesh.
    let refined = write_config(dir.path(), "refined.toml", &SMALL.replace("x1_cells = 6", "x1_cells = 8"));
    let other = dir.path().join("g");
    assert_eq!(code(&run(&["forward", "--config", &refined, "--out", other.to_str().unwrap()])), 0);
    assert_eq!(code(&run(&["reconstruct", "--config", &cfg, "--out", other.to_str().unwrap()])), 2);
}

#[test]
fn small_reconstruction_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "small.toml", SMALL);
    let out = dir.path().join("r");
    assert_eq!(code(&run(&["forward", "--config", &cfg, "--out", out.to_str().unwrap()])), 0);
    let r = run(&["reconstruct", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&r), 0, "{}\n{}", String::from_utf8_lossy(&r.stdout), String::from_utf8_lossy(&r.stderr));
    for f in ["report.json", "q_nodal.csv", "sinogram.csv", "slices.csv", "timings.csv"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert!(report["errors"]["relative_l2"].as_f64().unwrap().is_finite());
}
