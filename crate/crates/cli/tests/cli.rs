use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::{Command, Output, Stdio};

use gqi_testkit as oracle;

fn gqi(args: &[&str], stdin: &[u8]) -> Output {
    let mut child = Command::new(env!("CARGO_BIN_EXE_gqi"))
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(stdin).unwrap();
    child.wait_with_output().unwrap()
}

fn stdout_of(args: &[&str]) -> String {
    let out = gqi(args, b"");
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn example() -> PathBuf {
    [env!("CARGO_MANIFEST_DIR"), "..", "..", "scenarios", "example.toml"]
        .iter()
        .collect()
}

fn rows(csv: &str) -> Vec<Vec<f64>> {
    csv.lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect()
}

#[test]
fn duplicate_station_id_exits_2_naming_it() {
    let src = fs::read_to_string(example()).unwrap().replacen("id = 2", "id = 1", 1);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("dup.toml");
    fs::write(&path, src).unwrap();
    let out = gqi(&["run", path.to_str().unwrap()], b"");
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("duplicate station id 1"), "{err}");
    assert!(err.contains("stations[1].id"), "{err}");
}

#[test]
fn syntax_error_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, "seed = 1\nt_end_s = \n").unwrap();
    let out = gqi(&["run", path.to_str().unwrap()], b"");
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}

#[test]
fn missing_scenario_is_config_error() {
    assert_eq!(gqi(&["run", "/nonexistent/s.toml"], b"").status.code(), Some(2));
}

#[test]
fn run_summary_conserves_qubits() {
    let trace = stdout_of(&["run", example().to_str().unwrap()]);
    let last: serde_json::Value = serde_json::from_str(trace.lines().last().unwrap()).unwrap();
    assert_eq!(last["event"], "summary");
    let p = &last["payload"];
    for key in [
        "qubits_delivered",
        "ebits_consumed",
        "pairs_attempted",
        "pairs_survived",
    ] {
        assert!(p[key].is_u64(), "{key}");
    }
    assert_eq!(p["qubits_delivered"], p["ebits_consumed"]);
    assert_eq!(p["pairs_attempted"], 10_000);
}

#[test]
fn seed_flag_overrides_scenario_seed() {
    let path = example();
    let a = stdout_of(&["run", path.to_str().unwrap()]);
    let b = stdout_of(&["--seed", "42", "run", path.to_str().unwrap()]);
    let c = stdout_of(&["--seed", "43", "run", path.to_str().unwrap()]);
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn run_csv_lists_sessions() {
    let csv = stdout_of(&["--format", "csv", "run", example().to_str().unwrap()]);
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("session_id,from,to,final_state"));
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(&row[..4], ["1", "1", "2", "Done"]);
}

#[test]
fn output_flag_writes_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("out.csv");
    let out = gqi(
        &[
            "--output",
            path.to_str().unwrap(),
            "channel-sample",
            "fixed",
            "--n",
            "3",
        ],
        b"",
    );
    assert!(out.status.success());
    assert!(out.stdout.is_empty());
    assert_eq!(fs::read_to_string(path).unwrap().lines().count(), 4);
}

#[test]
fn sweep_single_point_matches_rci_of_diffraction() {
    let csv = stdout_of(&[
        "rates-sweep",
        "--b",
        "0",
        "--distance",
        "200e3",
        "--waists",
        "0.25",
        "--rx",
        "0.25",
    ]);
    assert!(csv.starts_with("tx_waist_m,rx_radius_m,distance_m,b,mean_rate_ebits\n"));
    let r = rows(&csv);
    assert_eq!(r.len(), 1);
    let eta = oracle::diffraction_eta(0.25, 0.25, 200e3, 1.55e-6);
    assert!((eta - 0.436).abs() < 1e-3);
    assert!((r[0][4] - oracle::rci_reference(eta)).abs() < 1e-12);
    assert!((r[0][4] - 0.826).abs() < 1e-3);
}

#[test]
fn sweep_rows_are_row_major_in_waist() {
    let csv = stdout_of(&[
        "rates-sweep",
        "--samples",
        "10",
        "--waists",
        "0.1,0.2",
        "--rx",
        "0.5:1.0:3",
    ]);
    let r = rows(&csv);
    let pairs: Vec<(f64, f64)> = r.iter().map(|x| (x[0], x[1])).collect();
    assert_eq!(
        pairs,
        [(0.1, 0.5), (0.1, 0.75), (0.1, 1.0), (0.2, 0.5), (0.2, 0.75), (0.2, 1.0)]
    );
}

#[test]
fn malformed_grid_exits_2() {
    for grid in ["0.1:0.2", "x", "0.1:1:0", "-0.5"] {
        let out = gqi(&["rates-sweep", "--waists", grid], b"");
        assert_eq!(out.status.code(), Some(2), "{grid}");
    }
}

#[test]
fn downlink_without_fluctuation_is_constant() {
    let csv = stdout_of(&["channel-sample", "downlink", "--eta0", "0.3", "--b", "0", "--n", "50"]);
    let r = rows(&csv);
    assert_eq!(r.len(), 50);
    assert!(r.iter().all(|row| row[1] == 0.3));
}

#[test]
fn uplink_blocks_hold_their_value() {
    let csv = stdout_of(&[
        "channel-sample",
        "uplink",
        "--eta0",
        "0.5",
        "--beam-radius",
        "1",
        "--sigma",
        "1",
        "--dt",
        "1e-4",
        "--n",
        "100",
    ]);
    let r = rows(&csv);
    for block in r.chunks(10) {
        assert!(block.iter().all(|row| row[1] == block[0][1]));
    }
    assert_ne!(r[0][1], r[10][1]);
}

#[test]
fn uplink_calibrated_mean_loss() {
    let csv = stdout_of(&[
        "channel-sample",
        "uplink",
        "--eta0",
        "0.5",
        "--beam-radius",
        "1",
        "--target-loss-db",
        "20",
        "--n",
        "200000",
    ]);
    let r = rows(&csv);
    let mean = r.iter().map(|row| row[1]).sum::<f64>() / r.len() as f64;
    assert!((oracle::loss_db(mean) - 20.0).abs() < 0.2);
}

#[test]
fn infeasible_calibration_exits_2() {
    let out = gqi(
        &[
            "channel-sample",
            "uplink",
            "--eta0",
            "0.5",
            "--beam-radius",
            "1",
            "--target-loss-db",
            "2",
        ],
        b"",
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("below the diffraction floor"));
}

#[test]
fn jsonl_format_for_samples() {
    let out = stdout_of(&["--format", "jsonl", "channel-sample", "fixed", "--n", "2"]);
    let v: serde_json::Value = serde_json::from_str(out.lines().next().unwrap()).unwrap();
    assert_eq!(v["t"], 0.0);
    assert!(v["eta"].as_f64().unwrap() > 0.0);
}

const PACKET: &str = r#"{"header":{"flags":1,"requesting_station_id":10,"receiving_station_id":20,
"transmit_time_ns":123,"op_commence_time_ns":0,"qubit_count":2},
"qubits":[{"qubit_id":1,"entanglement_group":1,"encoding":"DV"},
{"qubit_id":2,"entanglement_group":1,"encoding":"CV_REFERENCE"}],
"trailer":{"ack_session_id":0,"error_correction":[]}}"#;

#[test]
fn packet_hex_round_trip() {
    let hex = gqi(&["packet", "encode"], PACKET.as_bytes());
    assert!(hex.status.success());
    assert_eq!(hex.stdout.len(), 2 * (42 + 9 * 2) + 1);
    let json = gqi(&["packet", "decode"], &hex.stdout);
    assert!(json.status.success());
    let a: serde_json::Value = serde_json::from_str(PACKET).unwrap();
    let b: serde_json::Value = serde_json::from_slice(&json.stdout).unwrap();
    assert_eq!(a, b);
}

#[test]
fn packet_raw_round_trip() {
    let raw = gqi(&["packet", "encode", "--raw"], PACKET.as_bytes());
    assert_eq!(raw.stdout.len(), 42 + 18);
    let json = gqi(&["packet", "decode", "--raw"], &raw.stdout);
    assert!(json.status.success());
}

#[test]
fn packet_errors_exit_2() {
    let hex = gqi(&["packet", "encode"], PACKET.as_bytes()).stdout;
    let truncated = &hex[..hex.len() - 5];
    let out = gqi(&["packet", "decode"], truncated);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(gqi(&["packet", "decode"], b"zz").status.code(), Some(2));
    let bad = PACKET.replace("\"flags\":1", "\"flags\":0");
    assert_eq!(gqi(&["packet", "encode"], bad.as_bytes()).status.code(), Some(2));
}
