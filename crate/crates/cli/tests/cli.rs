use std::path::Path;
use std::process::Command;

fn mvtn(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_mvtn")).arg("--threads").arg("1").args(args).output().unwrap()
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(mvtn(&["no-such-command"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let out = out.to_str().unwrap();
    assert_eq!(mvtn(&["train", "--epochs", "0", "--out", out]).status.code(), Some(2));

    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"train": {"bogus": 1}}"#).unwrap();
    assert_eq!(mvtn(&["train", "--config", cfg.to_str().unwrap(), "--out", out]).status.code(), Some(2));
}

#[test]
fn missing_run_is_usage_but_corrupt_checkpoint_is_runtime() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let out = dir.path().join("eval");
    let eval = || mvtn(&["eval", "--run", run.to_str().unwrap(), "--out", out.to_str().unwrap()]).status.code();
    assert_eq!(eval(), Some(2));

    std::fs::create_dir(&run).unwrap();
    std::fs::write(run.join("resolved_config.json"), "{}").unwrap();
    std::fs::write(run.join("model.json"), r#"{"classes": 7, "config": {}}"#).unwrap();
    std::fs::write(run.join("checkpoint.bin"), b"not a checkpoint").unwrap();
    assert_eq!(eval(), Some(1));
}

#[test]
fn render_writes_grid_and_checksums() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let o = mvtn(&[
        "render",
        "--shape",
        "cone",
        "--views",
        "spherical",
        "--m",
        "3",
        "--size",
        "16",
        "--points",
        "200",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let png = out.join("views").join("cone.png");
    let bytes = std::fs::read(&png).unwrap();
    assert_eq!(&bytes[..8], b"\x89PNG\r\n\x1a\n");
    // Width and height from the IHDR chunk: three tiles in a row.
    let w = u32::from_be_bytes(bytes[16..20].try_into().unwrap());
    let h = u32::from_be_bytes(bytes[20..24].try_into().unwrap());
    assert_eq!((w, h), (48, 16));
    let sums = std::fs::read_to_string(out.join("checksums.sha256")).unwrap();
    assert!(sums.lines().any(|l| l.ends_with("  views/cone.png")));
    assert!(Path::new(&out.join("render.json")).exists());
}
