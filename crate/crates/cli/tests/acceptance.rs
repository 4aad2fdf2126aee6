//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits non-zero if any failed.

use std::collections::BTreeMap;
use std::panic::{self, AssertUnwindSafe};
use std::path::PathBuf;
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use serde_json::Value;

use gqi_core::channel::{
    calibrate_uplink_sigma, db_from_eta, diffraction_transmittance, sample_uplink, BeamParams, DownlinkGaussianTail,
    OpticalChannelModel, Transmittance, UplinkPointingFade,
};
use gqi_core::engine::{stream, tags, RngStream, StreamKey};
use gqi_core::geom::{light_time, link_geometry, satellite_position, select_leo, GroundStation, Satellite, SkyView};
use gqi_core::packet::{crc32, decode, encode, Packet, QubitDescriptor, QubitEncoding};
use gqi_core::proto::{is_valid_transition_path, TRACE_SUMMARY_EVENT};
use gqi_core::rates::mean_rate_estimate;
use gqi_testkit as oracle;

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        let holds: bool = $cond;
        if !holds {
            return Err(format!($($fmt)+));
        }
    };
}

fn gqi(args: &[&str], stdin: Option<&[u8]>) -> Output {
    use std::io::Write;
    use std::process::Stdio;
    let mut child = Command::new(env!("CARGO_BIN_EXE_gqi"))
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .expect("spawn gqi");
    let mut pipe = child.stdin.take().unwrap();
    pipe.write_all(stdin.unwrap_or_default()).unwrap();
    drop(pipe);
    child.wait_with_output().expect("gqi output")
}

fn ok_stdout(args: &[&str], stdin: Option<&[u8]>) -> Result<Vec<u8>, String> {
    let out = gqi(args, stdin);
    if out.status.success() {
        Ok(out.stdout)
    } else {
        Err(format!(
            "gqi {} exited {:?}: {}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr)
        ))
    }
}

fn example_scenario() -> String {
    let p: PathBuf = [env!("CARGO_MANIFEST_DIR"), "..", "..", "scenarios", "example.toml"]
        .iter()
        .collect();
    p.to_string_lossy().into_owned()
}

fn csv_column(bytes: &[u8], name: &str) -> Result<Vec<f64>, String> {
    let text = String::from_utf8_lossy(bytes);
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().ok_or("empty csv")?.split(',').collect();
    let idx = header
        .iter()
        .position(|h| *h == name)
        .ok_or(format!("no column {name}"))?;
    lines
        .map(|l| {
            l.split(',')
                .nth(idx)
                .and_then(|v| v.parse().ok())
                .ok_or(format!("bad row `{l}`"))
        })
        .collect()
}

/// 1. GEO rate bound.
fn geo_rate_bound() -> Check {
    let start = Instant::now();
    let csv = ok_stdout(
        &[
            "rates-sweep",
            "--distance",
            "36000e3",
            "--b",
            "0.1",
            "--samples",
            "100000",
            "--seed",
            "1",
        ],
        None,
    )?;
    let elapsed = start.elapsed();
    let waists = csv_column(&csv, "tx_waist_m")?;
    let rx = csv_column(&csv, "rx_radius_m")?;
    let rates = csv_column(&csv, "mean_rate_ebits")?;
    ensure!(rates.len() == 100, "expected 100 grid points, got {}", rates.len());
    ensure!(
        waists.iter().all(|w| *w <= 1.0) && rx.iter().all(|r| *r <= 1.25),
        "grid exceeds waist 1.0 m / rx 1.25 m"
    );
    let max = rates.iter().cloned().fold(f64::MIN, f64::max);
    ensure!(max < 0.05, "max mean rate {max} >= 0.05");
    ensure!(elapsed < Duration::from_secs(60), "took {elapsed:?}");
    Ok(format!("max mean_rate {max:.5} < 0.05 over 10x10 grid, {elapsed:.2?}"))
}

/// 2. Loss-budget witnesses inside the aperture ranges.
fn loss_budget() -> Check {
    let start = Instant::now();
    let lambda = 1.55e-6;
    // (label, waist, rx radius, distance, target dB, tolerance dB)
    let witnesses = [
        ("LEO-LEO 200 km", 0.25, 0.25, 200e3, 3.0, 1.0),
        ("LEO downlink 1200 km", 0.2, 1.25, 1200e3, 5.0, 1.0),
        ("GEO 36000 km", 0.1, 0.1, 36_000e3, 60.0, 3.0),
    ];
    let mut notes = Vec::new();
    for (label, w0, rx, z, target, tol) in witnesses {
        let db = diffraction_transmittance(&BeamParams::new(w0, lambda).unwrap(), rx, z).loss_db();
        let reference = oracle::loss_db(oracle::diffraction_eta(w0, rx, z, lambda));
        ensure!(
            (db - reference).abs() < 1e-9,
            "{label}: {db} dB vs oracle {reference} dB"
        );
        ensure!(
            (db - target).abs() <= tol,
            "{label}: {db:.3} dB outside {target} +- {tol}"
        );
        notes.push(format!("{label} {db:.2} dB"));
    }
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(1), "took {elapsed:?}");
    Ok(notes.join(", "))
}

/// 3. Uplink calibration round trip and block fading.
fn uplink_calibration() -> Check {
    let start = Instant::now();
    let eta_d = Transmittance::new(0.5).unwrap();
    let w = 1.0;
    let sigma = calibrate_uplink_sigma(eta_d, w, 20.0).map_err(|e| e.to_string())?;
    // 0.5 * gamma / (gamma + 1) = 0.01  =>  sigma = W / (2 sqrt(gamma)), gamma = 1 / 49
    let analytic = w / (2.0 * (1.0f64 / 49.0).sqrt());
    ensure!((sigma - analytic).abs() < 1e-9, "sigma {sigma} vs analytic {analytic}");

    let model = UplinkPointingFade::new(eta_d, w, sigma, 1e-3).unwrap();
    let rng = stream(3, StreamKey::new(tags::UPLINK, 0, 0));
    let n = 1_000_000;
    let tau = model.fade_coherence_time;
    let mean = (0..n)
        .map(|k| sample_uplink(&model, &rng, (k as f64 + 0.5) * tau).value())
        .sum::<f64>()
        / n as f64;
    let loss = db_from_eta(Transmittance::new(mean).unwrap());
    ensure!((loss - 20.0).abs() <= 0.1, "MC mean loss {loss} dB");
    let quad = 0.5 * oracle::pointing_overlap_mean(w, sigma, 4000);
    ensure!((quad - 0.01).abs() < 1e-6, "quadrature mean {quad}");

    for k in 0..10_000u64 {
        let t0 = k as f64 * tau;
        let v = sample_uplink(&model, &rng, t0 + 1e-4 * tau);
        for frac in [0.25, 0.5, 0.75, 0.999] {
            ensure!(
                sample_uplink(&model, &rng, t0 + frac * tau) == v,
                "block {k} not constant"
            );
        }
    }
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(30), "took {elapsed:?}");
    Ok(format!(
        "sigma {sigma:.6} m, MC mean loss {loss:.4} dB over 1e6 blocks, {elapsed:.2?}"
    ))
}

/// 4. Monte-Carlo mean rate against Gauss-Legendre quadrature.
fn rci_oracle() -> Check {
    let mut notes = Vec::new();
    for (k, (eta0, b)) in [(0.3, 0.1), (0.05, 0.1), (0.3, 0.01)].into_iter().enumerate() {
        let model = OpticalChannelModel::DownlinkGaussianTail(
            DownlinkGaussianTail::new(Transmittance::new(eta0).unwrap(), b).unwrap(),
        );
        let mut rng = stream(4, StreamKey::new(tags::DOWNLINK, k as u64, 0));
        let est = mean_rate_estimate(&model, 1_000_000, &mut rng).map_err(|e| e.to_string())?;
        let quad = oracle::downlink_rci_mean(eta0, b, 4000);
        let z = (est.mean - quad).abs() / est.std_error;
        ensure!(
            z <= 3.0,
            "({eta0}, {b}): MC {} vs quadrature {quad}, {z:.2} SE",
            est.mean
        );
        notes.push(format!("({eta0},{b}) {z:.2} SE"));
    }
    Ok(notes.join(", "))
}

fn str_field<'a>(v: &'a Value, key: &str) -> &'a str {
    v[key].as_str().unwrap_or_default()
}

fn num(v: &Value, key: &str) -> f64 {
    v[key].as_f64().unwrap_or(f64::NAN)
}

/// 5. Conservation and safety, replayed from the trace alone.
fn protocol_replay() -> Check {
    let start = Instant::now();
    let trace = ok_stdout(&["run", &example_scenario()], None)?;
    let elapsed = start.elapsed();
    let records: Vec<Value> = String::from_utf8_lossy(&trace)
        .lines()
        .map(|l| serde_json::from_str(l).map_err(|e| format!("bad trace line: {e}")))
        .collect::<Result<_, _>>()?;
    let summary = records.last().ok_or("empty trace")?;
    ensure!(
        str_field(summary, "event") == TRACE_SUMMARY_EVENT,
        "last line is not the summary"
    );
    ensure!(summary["session_id"].is_null(), "summary carries a session id");
    let s = &summary["payload"];

    let mut by_session: BTreeMap<u64, Vec<&Value>> = BTreeMap::new();
    for r in &records[..records.len() - 1] {
        by_session
            .entry(r["session_id"].as_u64().ok_or("record without session")?)
            .or_default()
            .push(r);
    }
    ensure!(!by_session.is_empty(), "no sessions in trace");

    let (mut delivered, mut consumed, mut attempted, mut survived) = (0u64, 0u64, 0u64, 0u64);
    let mut expired = 0u64;
    let mut done = 0;
    let mut binomial_notes = Vec::new();
    for (id, recs) in &by_session {
        let mut path = vec!["Idle"];
        let (mut eta0_a, mut eta0_b) = (f64::NAN, f64::NAN);
        let (mut s_attempts, mut s_survivors, mut deposited, mut distilled) = (0u64, 0u64, 0u64, 0u64);
        for r in recs {
            let p = &r["payload"];
            let t = num(r, "t");
            match str_field(r, "event") {
                "transition" => {
                    ensure!(
                        str_field(p, "from") == *path.last().unwrap(),
                        "session {id}: transition chain broken"
                    );
                    path.push(str_field(p, "to"));
                }
                "yield_estimated" => {
                    eta0_a = num(p, "eta0_a");
                    eta0_b = num(p, "eta0_b");
                }
                "distribution_batch" => {
                    s_attempts += p["attempts"].as_u64().unwrap_or(0);
                    s_survivors += p["survivors"].as_u64().unwrap_or(0);
                }
                "pairs_deposited" => deposited += p["count"].as_u64().unwrap_or(0),
                "distilled" => {
                    let raw = p["raw_valid"].as_u64().unwrap_or(0);
                    let d = p["distilled"].as_u64().unwrap_or(0);
                    ensure!(
                        raw <= deposited,
                        "session {id}: distilled from {raw} > {deposited} stored pairs"
                    );
                    ensure!(
                        d == (raw as f64 * num(p, "yield_rate")).floor() as u64,
                        "session {id}: distilled {d} is not floor({raw} x yield)"
                    );
                    distilled = d;
                }
                "teleport" => {
                    let used = p["ebits_consumed"].as_u64().unwrap_or(0);
                    let requested = p["requested"].as_u64().unwrap_or(0);
                    ensure!(
                        used == requested.min(distilled),
                        "session {id}: consumed {used} ebits, expected min({requested}, {distilled})"
                    );
                    consumed += used;
                    if let Some(oldest) = p["oldest_ebit_created_at"].as_f64() {
                        if t - oldest > num(p, "coherence_time") {
                            expired += 1;
                        }
                    }
                }
                "qubits_delivered" => delivered += p["qubits"].as_u64().unwrap_or(0),
                _ => {}
            }
        }
        ensure!(is_valid_transition_path(&path), "session {id}: illegal path {path:?}");
        if path.last() == Some(&"Done") {
            done += 1;
        }
        if s_attempts > 0 {
            let f = oracle::downlink_expectation(1.0, 0.1, |e| e, 4000);
            let p = eta0_a * f * eta0_b * f;
            ensure!(
                oracle::within_binomial_sigmas(s_survivors, s_attempts, p, 3.0),
                "session {id}: {s_survivors} survivors of {s_attempts} outside 3 sigma of Binomial(p={p:.5})"
            );
            binomial_notes.push(format!("{s_survivors}/{s_attempts} vs p={p:.4}"));
        }
        attempted += s_attempts;
        survived += s_survivors;
    }

    let field = |k: &str| s[k].as_u64().unwrap_or(u64::MAX);
    ensure!(
        delivered == consumed,
        "qubits_delivered {delivered} != ebits_consumed {consumed}"
    );
    ensure!(
        field("qubits_delivered") == delivered && field("ebits_consumed") == consumed,
        "summary disagrees with replay"
    );
    ensure!(
        field("pairs_attempted") == attempted && field("pairs_survived") == survived,
        "summary pair counts disagree with replay"
    );
    ensure!(attempted == 10_000, "attempted {attempted} pairs");
    ensure!(expired == 0, "{expired} expired-pair consumptions");
    let (mu, var) = (num(s, "expected_survivors"), num(s, "survivor_variance"));
    ensure!(
        (survived as f64 - mu).abs() <= 3.0 * var.sqrt(),
        "survivors {survived} vs conditional mean {mu}"
    );
    ensure!(
        done == by_session.len(),
        "{done} of {} sessions reached Done",
        by_session.len()
    );
    ensure!(delivered > 0, "nothing delivered");
    ensure!(elapsed < Duration::from_secs(10), "took {elapsed:?}");
    Ok(format!(
        "{delivered} qubits = {consumed} ebits, 0 expired, survivors {}, {elapsed:.2?}",
        binomial_notes.join("; ")
    ))
}

/// 6. Byte-identical reruns of every subcommand; parallel sweep equals serial.
fn determinism() -> Check {
    let packet_json = r#"{"header":{"flags":3,"requesting_station_id":1,"receiving_station_id":2,
        "transmit_time_ns":5,"op_commence_time_ns":9,"qubit_count":1},
        "qubits":[{"qubit_id":4,"entanglement_group":1,"encoding":"DV"}],
        "trailer":{"ack_session_id":77,"error_correction":[1,2,3]}}"#;
    let hex = ok_stdout(&["packet", "encode"], Some(packet_json.as_bytes()))?;
    let scenario = example_scenario();
    let cases: Vec<(Vec<&str>, Option<&[u8]>)> = vec![
        (vec!["run", &scenario], None),
        (vec!["--format", "csv", "run", &scenario], None),
        (
            vec![
                "--seed",
                "9",
                "rates-sweep",
                "--samples",
                "2000",
                "--distance",
                "1200e3",
            ],
            None,
        ),
        (vec!["--seed", "9", "channel-sample", "downlink", "--n", "500"], None),
        (
            vec![
                "--seed",
                "9",
                "channel-sample",
                "uplink",
                "--eta0",
                "0.5",
                "--beam-radius",
                "1",
                "--target-loss-db",
                "20",
                "--n",
                "500",
            ],
            None,
        ),
        (vec!["channel-sample", "fixed", "--n", "10"], None),
        (vec!["packet", "encode"], Some(packet_json.as_bytes())),
        (vec!["packet", "decode"], Some(&hex)),
    ];
    for (args, stdin) in &cases {
        let a = ok_stdout(args, *stdin)?;
        let b = ok_stdout(args, *stdin)?;
        ensure!(!a.is_empty(), "gqi {} produced no output", args.join(" "));
        ensure!(a == b, "gqi {} differs between runs", args.join(" "));
    }
    let sweep = [
        "--seed",
        "5",
        "rates-sweep",
        "--samples",
        "10000",
        "--distance",
        "800e3",
    ];
    let parallel = ok_stdout(&sweep, None)?;
    let serial = ok_stdout(&[&sweep[..], &["--serial"]].concat(), None)?;
    ensure!(parallel == serial, "parallel and serial sweeps differ");
    Ok(format!(
        "{} subcommand invocations repeat byte for byte; parallel == serial",
        cases.len()
    ))
}

fn random_packet(rng: &mut RngStream) -> Packet {
    let mut below = |n: u64| (rng.uniform() * n as f64) as u64;
    let q = below(21) as u32;
    let qubits = (0..q)
        .map(|_| QubitDescriptor {
            qubit_id: below(u32::MAX as u64) as u32,
            entanglement_group: below(5) as u32,
            encoding: if below(2) == 0 {
                QubitEncoding::Dv
            } else {
                QubitEncoding::CvReference
            },
        })
        .collect();
    let ack = if below(2) == 0 {
        None
    } else {
        Some(below(u32::MAX as u64) as u32)
    };
    let ec = (0..below(65)).map(|_| below(256) as u8).collect();
    Packet::new(
        below(u32::MAX as u64) as u32,
        below(u32::MAX as u64) as u32,
        below(1 << 53),
        below(1 << 53),
        qubits,
        ack,
        ec,
    )
    .expect("generated packet is valid")
}

/// 7. Packet codec.
fn packet_codec() -> Check {
    let start = Instant::now();
    let mut rng = stream(7, StreamKey::new(tags::GENERIC, 7, 0));
    for k in 0..10_000 {
        let p = random_packet(&mut rng);
        let bytes = encode(&p).map_err(|e| format!("packet {k}: {e}"))?;
        ensure!(decode(&bytes).as_ref() == Ok(&p), "packet {k} did not round-trip");
    }
    let descriptors = (0..10)
        .map(|k| QubitDescriptor {
            qubit_id: k,
            entanglement_group: 1,
            encoding: QubitEncoding::Dv,
        })
        .collect();
    let big = encode(&Packet::new(3, 4, 10, 20, descriptors, Some(1), vec![0xAB; 68]).unwrap()).unwrap();
    ensure!(big.len() == 200, "fuzz packet is {} bytes", big.len());
    for n in 0..big.len() {
        let r = panic::catch_unwind(|| decode(&big[..n]));
        match r {
            Ok(Err(_)) => {}
            Ok(Ok(_)) => return Err(format!("prefix {n} decoded")),
            Err(_) => return Err(format!("prefix {n} panicked")),
        }
    }
    let check = crc32(b"123456789");
    ensure!(check == 0xCBF4_3926, "crc32 check word {check:#010x}");
    ensure!(oracle::crc32_bitwise(b"123456789") == check, "bitwise CRC disagrees");
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(10), "took {elapsed:?}");
    Ok(format!(
        "1e4 round trips, 200 prefixes rejected, crc {check:#010X}, {elapsed:.2?}"
    ))
}

/// 8. LEO selection against an exhaustive scan; GEO delay.
fn geometry() -> Check {
    let deg = std::f64::consts::PI / 180.0;
    let a = GroundStation::new(1, 2.0 * deg, -1.5 * deg, 1.0).unwrap();
    let b = GroundStation::new(2, -deg, 2.0 * deg, 1.0).unwrap();
    let sats: Vec<Satellite> = (0..8)
        .map(|k| {
            let incl = if k % 2 == 0 { 0.0 } else { 0.3 };
            Satellite::leo(
                20 + k,
                600e3 + 50e3 * k as f64,
                incl,
                0.05 * k as f64,
                -0.6 + 0.17 * k as f64,
                0.15,
            )
            .unwrap()
        })
        .collect();
    let view = SkyView::default();
    let mut rng = stream(8, StreamKey::new(tags::GENERIC, 8, 0));
    let (mut contested, mut empty) = (0, 0);
    for _ in 0..100 {
        let t = rng.uniform() * 900.0;
        let got = select_leo(&sats, &a, &b, t, &view);
        let cands: Vec<(u32, [f64; 3])> = sats
            .iter()
            .map(|s| {
                (
                    s.id,
                    oracle::circular_orbit_position(s.altitude, s.inclination, s.raan, s.phase_at_epoch, t),
                )
            })
            .collect();
        let sa = oracle::station_position(a.latitude, a.longitude);
        let sb = oracle::station_position(b.latitude, b.longitude);
        let want = oracle::brute_force_select(&cands, sa, sb, view.min_elevation);
        ensure!(got == want, "t={t}: selected {got:?}, exhaustive scan {want:?}");
        let visible = cands
            .iter()
            .filter(|(_, p)| oracle::elevation(sa, *p).min(oracle::elevation(sb, *p)) >= view.min_elevation)
            .count();
        if visible >= 2 {
            contested += 1;
        }
        if visible == 0 {
            empty += 1;
        }
    }
    ensure!(contested >= 20, "only {contested} epochs had two or more candidates");

    let geo = Satellite::geo(100, 0.0, 0.0, 0.0, 0.2).unwrap();
    let gs = GroundStation::new(9, 0.0, 0.0, 1.0).unwrap();
    let g = link_geometry(
        &gqi_core::geom::ground_position(&gs, 0.0, false),
        &satellite_position(&geo, 0.0),
        Some(gqi_core::geom::GroundEnd::A),
    )
    .map_err(|e| e.to_string())?;
    ensure!(
        (g.propagation_delay - 0.12008).abs() <= 1e-5,
        "GEO delay {}",
        g.propagation_delay
    );
    ensure!(
        (light_time(36_000e3) - 36_000e3 / oracle::LIGHT_SPEED).abs() < 1e-15,
        "light time"
    );
    Ok(format!(
        "100 epochs match ({contested} contested, {empty} empty), GEO delay {:.6} s",
        g.propagation_delay
    ))
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("GEO rate bound", geo_rate_bound),
        ("loss-budget witnesses", loss_budget),
        ("uplink calibration", uplink_calibration),
        ("RCI oracle equivalence", rci_oracle),
        ("protocol conservation & safety", protocol_replay),
        ("determinism", determinism),
        ("packet codec", packet_codec),
        ("geometry", geometry),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        let result = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            Err(e
                .downcast_ref::<String>()
                .cloned()
                .or(e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default())
        });
        match result {
            Ok(detail) => println!("criterion {}: PASS  {name}: {detail}", k + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {}: FAIL  {name}: {why}", k + 1);
            }
        }
    }
    let _ = panic::take_hook();
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
