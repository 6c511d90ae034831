use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn greenhouse(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_greenhouse")).current_dir(dir).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn run_all_writes_one_row_per_second_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["run-all", "--duration", "600", "--seed", "42", "--out", "a.csv"];
    let first = greenhouse(dir.path(), &args);
    assert!(first.status.success(), "{}", stderr(&first));
    let a = fs::read_to_string(dir.path().join("a.csv")).unwrap();
    assert_eq!(a.lines().count(), 601);
    assert!(a.starts_with("time_s,temperature,humidity,light,soil_dry,led,heating,cooling,dehumidify,drip,humidifier,mode"));

    let second = greenhouse(dir.path(), &["run-all", "--duration", "600", "--seed", "42", "--out", "b.csv"]);
    assert!(second.status.success());
    assert_eq!(a, fs::read_to_string(dir.path().join("b.csv")).unwrap());
    assert!(dir.path().join("greenhouse-data/run-summary.json").exists());

    let status = greenhouse(dir.path(), &["status"]);
    assert!(status.status.success(), "{}", stderr(&status));
    assert!(stdout(&status).contains("records"));
}

#[test]
fn scenario_file_drives_the_run() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("s.cfg"),
        "seed = 3\nduration_s = 120\n[initial]\ntemperature = 15.0\nhumidity = 85.0\n\
         [[events]]\nat_s = 0\naction = \"setpoints\"\ntemperature = 25\nhumidity = 60\nlight_lux = 0\n",
    )
    .unwrap();
    let out = greenhouse(dir.path(), &["run-all", "--scenario", "s.cfg", "--out", "t.csv"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = fs::read_to_string(dir.path().join("t.csv")).unwrap();
    assert_eq!(csv.lines().count(), 121);
    assert!(csv.lines().last().unwrap().ends_with("automatic"));
}

#[test]
fn missing_or_invalid_scenario_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = greenhouse(dir.path(), &["run-all", "--scenario", "nope.cfg"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("scenario not found"), "{}", stderr(&out));

    fs::write(dir.path().join("bad.cfg"), "seeed = 1\n").unwrap();
    let out = greenhouse(dir.path(), &["run-all", "--scenario", "bad.cfg"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("invalid scenario"));
}

#[test]
fn frame_subcommands() {
    let dir = tempfile::tempdir().unwrap();
    let out = greenhouse(dir.path(), &["frame", "decode", "A5060730010D"]);
    assert!(out.status.success());
    assert_eq!(stdout(&out).trim(), "SensorInstruction addr=07 LED gear=1");

    let out = greenhouse(dir.path(), &["frame", "decode", "A6060730010D"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(format!("{}{}", stdout(&out), stderr(&out)).contains("BadHeader"));

    let out = greenhouse(dir.path(), &["frame", "encode", "--table3", "cool=4"]);
    assert_eq!(stdout(&out).trim(), "A5 06 07 32 04 0D");

    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/golden_vectors.txt");
    let out = greenhouse(dir.path(), &["frame", "verify", golden.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stdout(&out));
    assert!(stdout(&out).trim_end().ends_with("vectors ok"));
}

#[test]
fn export_skips_corrupt_records_with_a_warning() {
    let dir = tempfile::tempdir().unwrap();
    let run = greenhouse(dir.path(), &["run-all", "--duration", "60"]);
    assert!(run.status.success(), "{}", stderr(&run));
    let log = dir.path().join("greenhouse-data/records.log");
    let mut bytes = fs::read(&log).unwrap();
    bytes[12] ^= 0x20;
    fs::write(&log, &bytes).unwrap();

    let out = greenhouse(dir.path(), &["export-history", "--out-dir", "csv", "--class", "reading", "--buckets", "4"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stderr(&out).contains("bad CRC"), "{}", stderr(&out));
    let readings = fs::read_to_string(dir.path().join("csv/reading.csv")).unwrap();
    assert!(readings.lines().count() > 1);
    let buckets = fs::read_to_string(dir.path().join("csv/reading_buckets.csv")).unwrap();
    assert_eq!(buckets.lines().count(), 5);
}

#[test]
fn export_of_an_empty_log_writes_headers_only() {
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir(dir.path().join("data")).unwrap();
    fs::write(dir.path().join("data/records.log"), b"").unwrap();
    let out = greenhouse(dir.path(), &["export-history", "--data-dir", "data", "--out-dir", "csv", "--class", "status"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(fs::read_to_string(dir.path().join("csv/status.csv")).unwrap().lines().count(), 1);
}

#[test]
fn export_of_a_missing_log_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = greenhouse(dir.path(), &["export-history", "--data-dir", "absent"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn shipped_default_scenario_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/default.cfg");
    let out = greenhouse(dir.path(), &["run-all", "--scenario", cfg.to_str().unwrap(), "--duration", "90", "--out", "t.csv"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = fs::read_to_string(dir.path().join("t.csv")).unwrap();
    assert_eq!(csv.lines().count(), 91);
    assert!(csv.lines().last().unwrap().ends_with("automatic"));
}
