use std::path::Path;
use std::process::{Command, Output};

fn covert_ma(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_covert-ma"))
        .args(args)
        .env_remove("COVERT_MA_THREADS")
        .output()
        .unwrap()
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("sweep.cfg");
    std::fs::write(&path, body).unwrap();
    path.to_string_lossy().into_owned()
}

const SMALL: &str = "sweep = power\nsweep_values = 0, 10\ntrials = 2\nschemes = MA-PDA, FPA-ZF\nmax_outer_iters = 5\n";

#[test]
fn run_then_verify() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("results");
    let run = covert_ma(&[
        "run",
        "--config",
        &cfg,
        "--out",
        out.to_str().unwrap(),
        "--threads",
        "2",
    ]);
    assert_eq!(run.status.code(), Some(0), "{}", String::from_utf8_lossy(&run.stderr));
    let stdout = String::from_utf8_lossy(&run.stdout);
    assert!(stdout.contains("MA-PDA"));
    for name in [
        "records.csv",
        "summary.csv",
        "timings.csv",
        "curve_MA-PDA.dat",
        "curve_FPA-ZF.dat",
    ] {
        assert!(out.join(name).exists(), "{name} missing");
    }
    let records = out.join("records.csv");
    let verify = covert_ma(&["verify", "--record", records.to_str().unwrap()]);
    assert_eq!(verify.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&verify.stdout).contains("8 of 8 records pass"));
}

#[test]
fn overrides_and_reruns_are_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for (out, threads) in [(&a, "1"), (&b, "3")] {
        let run = covert_ma(&[
            "run",
            "--config",
            &cfg,
            "--out",
            out.to_str().unwrap(),
            "--trials",
            "1",
            "--seed",
            "9",
            "--threads",
            threads,
        ]);
        assert_eq!(run.status.code(), Some(0));
    }
    let ra = std::fs::read_to_string(a.join("records.csv")).unwrap();
    let rb = std::fs::read_to_string(b.join("records.csv")).unwrap();
    assert_eq!(ra, rb);
    assert_eq!(ra.lines().count(), 5);
}

#[test]
fn tampered_record_fails_verification() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("r");
    assert_eq!(
        covert_ma(&["run", "--config", &cfg, "--out", out.to_str().unwrap()])
            .status
            .code(),
        Some(0)
    );
    let path = out.join("records.csv");
    let text = std::fs::read_to_string(&path).unwrap();
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let header = reader.headers().unwrap().clone();
    let region = header.iter().position(|h| h == "region_size").unwrap();
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(&header).unwrap();
    for row in reader.records() {
        let mut fields: Vec<String> = row.unwrap().iter().map(str::to_string).collect();
        fields[region] = "0.01".into();
        writer.write_record(&fields).unwrap();
    }
    std::fs::write(&path, writer.into_inner().unwrap()).unwrap();
    let verify = covert_ma(&["verify", "--record", path.to_str().unwrap()]);
    assert_eq!(verify.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&verify.stdout).contains("outside region"));
}

#[test]
fn configuration_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_config(dir.path(), "sweep = power\nunknown_key = 3\n");
    let run = covert_ma(&["run", "--config", &bad]);
    assert_eq!(run.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&run.stderr).contains("unknown_key"));

    let missing = dir.path().join("nope.cfg");
    assert_eq!(
        covert_ma(&["run", "--config", missing.to_str().unwrap()]).status.code(),
        Some(1)
    );
    assert_eq!(
        covert_ma(&["verify", "--record", missing.to_str().unwrap()])
            .status
            .code(),
        Some(1)
    );

    let cfg = write_config(dir.path(), SMALL);
    assert_eq!(
        covert_ma(&["run", "--config", &cfg, "--threads", "0"]).status.code(),
        Some(1)
    );
}

#[test]
fn demo_prints_trace() {
    let demo = covert_ma(&["demo", "--seed", "3"]);
    assert_eq!(demo.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&demo.stdout);
    assert!(stdout.contains("iter   0"));
    assert!(stdout.contains("antenna 3"));
}
