use std::path::Path;
use std::process::Command;

fn frd(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_frd")).args(args).output().expect("spawn frd")
}

fn run_in(dir: &Path, cmd: &str, extra: &[&str]) -> std::process::Output {
    let mut args = vec![cmd, "--out", dir.to_str().unwrap()];
    args.extend_from_slice(extra);
    frd(&args)
}

#[test]
fn decompose_writes_every_scale() {
    let t = tempfile::tempdir().unwrap();
    let o = run_in(t.path(), "decompose", &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["decomposition.txt", "scale_1.txt", "scale_2.txt", "scale_3.txt", "report.csv", "report.json"] {
        assert!(t.path().join(f).exists(), "missing {f}");
    }
    let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(t.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(doc["all_pass"], true);
    let csv = std::fs::read_to_string(t.path().join("report.csv")).unwrap();
    assert!(csv.starts_with("suite,k,j,quantity,measured,bound,ratio,pass\n"));
}

#[test]
fn decompose_is_byte_identical_across_runs_and_workers() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert!(run_in(a.path(), "decompose", &["--workers", "1"]).status.success());
    assert!(run_in(b.path(), "decompose", &["--workers", "3"]).status.success());
    for f in ["decomposition.txt", "scale_2.txt", "report.csv"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn exported_file_round_trips_through_verify_config() {
    let t = tempfile::tempdir().unwrap();
    assert!(run_in(t.path(), "decompose", &[]).status.success());
    let cfg = t.path().join("c.toml");
    let exported = t.path().join("decomposition.txt");
    std::fs::write(&cfg, format!("[decomposition]\nkind = \"base\"\nn = 1\nfile = {:?}\n", exported.to_str().unwrap())).unwrap();
    let out = t.path().join("again");
    let o = frd(&["decompose", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    let csv = std::fs::read_to_string(out.join("report.csv")).unwrap();
    assert!(csv.lines().any(|l| l.starts_with("decomposition_file,") && l.ends_with(",true")));
}

#[test]
fn final_without_n_tilde_is_rejected() {
    let t = tempfile::tempdir().unwrap();
    let cfg = t.path().join("c.toml");
    std::fs::write(&cfg, "[decomposition]\nkind = \"final\"\nn = 1\n").unwrap();
    let o = frd(&["verify", "--config", cfg.to_str().unwrap(), "--out", t.path().to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("n_tilde"));
}

#[test]
fn seeds_change_sample_batches() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let c = tempfile::tempdir().unwrap();
    assert!(run_in(a.path(), "sample", &["--seed", "1"]).status.success());
    assert!(run_in(b.path(), "sample", &["--seed", "2"]).status.success());
    assert!(run_in(c.path(), "sample", &["--seed", "1"]).status.success());
    let read = |d: &Path| std::fs::read(d.join("batch.txt")).unwrap();
    assert_ne!(read(a.path()), read(b.path()));
    assert_eq!(read(a.path()), read(c.path()));
}

#[test]
fn reports_are_written_when_checks_fail() {
    let t = tempfile::tempdir().unwrap();
    // a vanishing tolerance scale makes the slope rows fail
    let o = run_in(t.path(), "verify", &["--tol-scale", "1e-30"]);
    assert_eq!(o.status.code(), Some(1));
    let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(t.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(doc["all_pass"], false);
    assert!(doc["failures"].as_u64().unwrap() > 0);
    assert!(t.path().join("report.csv").exists());
}
