use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn semret(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_semret")).args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn fixtures(dir: &Path) {
    let o = semret(&["fixtures", "--out", dir.to_str().unwrap(), "--frames", "6"]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn exit_codes() {
    assert_eq!(semret(&["--help"]).status.code(), Some(0));
    assert_eq!(semret(&["retarget", "--bogus"]).status.code(), Some(1));
    let o = semret(&["retarget", "--out", "x.json"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--source-char"), "{}", stderr(&o));

    let dir = tempfile::tempdir().unwrap();
    fixtures(dir.path());
    let job = dir.path().join("clap/job.json");
    let out = dir.path().join("out.json");
    let o = semret(&["retarget", "--job", job.to_str().unwrap(), "--out", out.to_str().unwrap(), "--w-dist", "1e308", "--iterations", "5"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("not finite"));

    std::fs::write(dir.path().join("broken.json"), "{\"skeleton\": ").unwrap();
    let o = semret(&[
        "retarget",
        "--job",
        job.to_str().unwrap(),
        "--target-char",
        dir.path().join("broken.json").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("broken.json"), "{}", stderr(&o));
}

#[test]
fn flags_override_config_file_and_job() {
    let dir = tempfile::tempdir().unwrap();
    fixtures(dir.path());
    let d = dir.path();
    let config = d.join("config.json");
    std::fs::write(&config, r#"{"iterations": 20, "w_smooth": 3.5}"#).unwrap();
    let (out, report) = (d.join("anim.json"), d.join("report.json"));
    let o = semret(&[
        "--seed",
        "4",
        "retarget",
        "--job",
        d.join("belly/job.json").to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
        "--iterations",
        "12",
        "--out",
        out.to_str().unwrap(),
        "--report",
        report.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r = read(&report);
    assert_eq!(r["config"]["iterations"], 12);
    assert_eq!(r["config"]["w_smooth"], 3.5);
    assert_eq!(read(&out)["frames"].as_array().unwrap().len(), 6);

    let o = semret(&["conflicts", "--report", report.to_str().unwrap(), "--json"]);
    assert!(o.status.success());
    let records: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(records.is_array());
}

#[test]
fn separate_inputs_and_copy_rotations() {
    let dir = tempfile::tempdir().unwrap();
    fixtures(dir.path());
    let s = dir.path().join("clap");
    let p = |f: &str| s.join(f).to_str().unwrap().to_string();
    let out = dir.path().join("copy.json");
    let o = semret(&[
        "retarget",
        "--source-char",
        &p("source.json"),
        "--source-anim",
        &p("animation.json"),
        "--target-char",
        &p("target.json"),
        "--mapping",
        &p("mapping.json"),
        "--method",
        "copy-rotations",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(read(&out)["frames"].as_array().unwrap().len(), 6);

    let o = semret(&["metrics", "--character", &p("target.json"), "--source-character", &p("source.json"), "--source", &p("animation.json"), "--target", out.to_str().unwrap(), "--divisions", "16"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let m: Value = serde_json::from_slice(&o.stdout).unwrap();
    for key in ["jerk.mean", "selfpen.mean", "floorpen.max", "grounded.f1", "sliding.auc"] {
        assert!(m.get(key).is_some(), "missing {key}");
    }

    let desc = dir.path().join("desc.json");
    let o = semret(&["descriptors", "--character", &p("source.json"), "--animation", &p("animation.json"), "--out", desc.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let d = read(&desc);
    assert_eq!(d["labels"].as_array().unwrap().len(), 41);
    assert_eq!(d["frames"].as_array().unwrap().len(), 6);
}

#[test]
fn transfer_writes_key_vertices() {
    let dir = tempfile::tempdir().unwrap();
    fixtures(dir.path());
    let d = dir.path();
    let out = d.join("keys.json");
    let o = semret(&[
        "transfer",
        "--template",
        d.join("template.json").to_str().unwrap(),
        "--character",
        d.join("clap/target.json").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(read(&out).as_array().unwrap().len(), 41);
}
