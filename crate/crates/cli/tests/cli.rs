use std::process::Command;

fn xidiar(args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_xidiar")).args(args).env("RUST_LOG", "warn").output().unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn generate_run_and_score() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    let c = corpus.to_str().unwrap();
    let config = xidiar(&["gen-synth", "--out", c, "--conversations", "1", "--duration", "60", "--seed", "3"]);
    let config = config.trim();
    let table = xidiar(&["run", config, "--engine", "sd", "--threads", "1"]);
    assert!(table.contains("DER"), "{table}");

    let hyp = corpus.join("out").join("combined");
    let rttm = std::fs::read_dir(&hyp).unwrap().next().unwrap().unwrap().path();
    let uri = rttm.file_stem().unwrap().to_str().unwrap().to_string();
    let reference = corpus.join("ref").join(format!("{uri}.rttm"));
    let json = xidiar(&["score", "--ref", reference.to_str().unwrap(), "--hyp", rttm.to_str().unwrap(), "--json"]);
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert!(v.is_object(), "{json}");

    let spans = xidiar(&["segment", config, &uri, "--engine", "kaldi"]);
    assert!(spans.lines().count() > 10);
}

#[test]
fn bad_config_fails_cleanly() {
    let out = Command::new(env!("CARGO_BIN_EXE_xidiar")).args(["run", "/nonexistent/run.json"]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("run.json"));
}
