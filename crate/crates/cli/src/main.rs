//! `gqi`: scenario runs, rate sweeps, channel sampling and packet coding.
//!
//! Exit status: 0 on success, 2 on a configuration or input error, 3 on a
//! runtime failure.

mod grid;

use std::fs;
use std::io::{self, Read, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use thiserror::Error;

use gqi_core::channel::{
    beam_radius, calibrate_uplink_sigma, diffraction_transmittance, BeamParams, DownlinkGaussianTail,
    OpticalChannelModel, Transmittance, UplinkPointingFade, DEFAULT_FADE_COHERENCE_TIME, DEFAULT_WAVELENGTH,
};
use gqi_core::engine::{stream, tags, StreamKey};
use gqi_core::packet::{decode, encode, Packet};
use gqi_core::proto::{write_jsonl, SessionReport, Simulation};
use gqi_core::rates::{linspace, sweep, Execution, SweepConfig};
use gqi_core::scenario::Scenario;

#[derive(Debug, Error)]
enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("runtime failure: {0}")]
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            Self::Config(_) => 2,
            Self::Runtime(_) => 3,
        }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        Self::Runtime(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Jsonl,
}

#[derive(Debug, Parser)]
#[command(name = "gqi", version, about = "GEO/LEO/ground quantum network simulator")]
struct Cli {
    /// Root seed. For `run` it overrides the scenario's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Write output here instead of standard output.
    #[arg(long, short, global = true)]
    output: Option<PathBuf>,
    /// Tabular output format. Defaults to jsonl for `run` and csv elsewhere.
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a scenario and emit its event trace.
    Run { scenario: PathBuf },
    /// Mean downlink rate over a (transmit waist, receive radius) grid.
    RatesSweep(SweepArgs),
    /// Draw transmittance samples from one channel model.
    ChannelSample(SampleArgs),
    /// Packet wire-format codec.
    #[command(subcommand)]
    Packet(PacketCommand),
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[arg(long, default_value_t = 36_000e3)]
    distance: f64,
    #[arg(long, default_value_t = 0.1)]
    b: f64,
    /// Transmit waists in metres: `start:stop:count` or a comma list.
    #[arg(long)]
    waists: Option<String>,
    /// Receive radii in metres: `start:stop:count` or a comma list.
    #[arg(long)]
    rx: Option<String>,
    #[arg(long, default_value_t = 100_000)]
    samples: usize,
    #[arg(long, default_value_t = DEFAULT_WAVELENGTH)]
    wavelength: f64,
    /// Evaluate grid cells on one thread.
    #[arg(long)]
    serial: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModelKind {
    Downlink,
    Uplink,
    Fixed,
}

#[derive(Debug, Args)]
struct SampleArgs {
    #[arg(value_enum)]
    model: ModelKind,
    #[arg(long, default_value_t = 1000)]
    n: usize,
    /// Spacing of sample times in seconds. Defaults to the fade coherence time.
    #[arg(long)]
    dt: Option<f64>,
    /// Base transmittance. Without it, diffraction over the beam geometry is used.
    #[arg(long)]
    eta0: Option<f64>,
    #[arg(long, default_value_t = 0.1)]
    b: f64,
    #[arg(long, default_value_t = 0.25)]
    tx_waist: f64,
    #[arg(long, default_value_t = 0.25)]
    rx_radius: f64,
    #[arg(long, default_value_t = 200e3)]
    distance: f64,
    #[arg(long, default_value_t = DEFAULT_WAVELENGTH)]
    wavelength: f64,
    /// Uplink beam radius at the receiver. Defaults to the diffracted radius.
    #[arg(long)]
    beam_radius: Option<f64>,
    /// Uplink wander jitter in metres.
    #[arg(long, conflicts_with = "target_loss_db")]
    sigma: Option<f64>,
    /// Calibrate the uplink jitter to this mean loss.
    #[arg(long)]
    target_loss_db: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_FADE_COHERENCE_TIME)]
    coherence_time: f64,
}

#[derive(Debug, Subcommand)]
enum PacketCommand {
    /// JSON packet on stdin, wire bytes out (hex unless --raw).
    Encode {
        #[arg(long)]
        raw: bool,
    },
    /// Wire bytes on stdin (hex unless --raw), JSON packet out.
    Decode {
        #[arg(long)]
        raw: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(bytes) => match emit(cli.output.as_ref(), &bytes) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => report(&CliError::from(e)),
        },
        Err(e) => report(&e),
    }
}

fn report(e: &CliError) -> ExitCode {
    eprintln!("gqi: {e}");
    ExitCode::from(e.exit_code())
}

fn emit(path: Option<&PathBuf>, bytes: &[u8]) -> io::Result<()> {
    match path {
        Some(p) => fs::write(p, bytes),
        None => io::stdout().lock().write_all(bytes),
    }
}

fn execute(cli: &Cli) -> Result<Vec<u8>, CliError> {
    match &cli.command {
        Command::Run { scenario } => run(scenario, cli.seed, cli.format.unwrap_or(Format::Jsonl)),
        Command::RatesSweep(args) => rates_sweep(args, cli.seed.unwrap_or(0), cli.format.unwrap_or(Format::Csv)),
        Command::ChannelSample(args) => channel_sample(args, cli.seed.unwrap_or(0), cli.format.unwrap_or(Format::Csv)),
        Command::Packet(cmd) => {
            if cli.format == Some(Format::Csv) {
                return Err(CliError::Config("packet commands have no csv output".into()));
            }
            packet(cmd)
        }
    }
}

fn config<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Config(e.to_string())
}

fn run(path: &PathBuf, seed: Option<u64>, format: Format) -> Result<Vec<u8>, CliError> {
    let src = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let mut scenario = Scenario::from_toml(&src).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    if let Some(s) = seed {
        scenario.network.seed = s;
    }
    let mut sim = Simulation::new(scenario.network).map_err(config)?;
    for req in scenario.requests {
        sim.submit(req).map_err(config)?;
    }
    let report = sim.run().map_err(|e| CliError::Runtime(e.to_string()))?;
    let mut out = Vec::new();
    match format {
        Format::Jsonl => write_jsonl(&report.trace, &mut out)?,
        Format::Csv => write_session_csv(&report.sessions, &mut out)?,
    }
    Ok(out)
}

fn write_session_csv(sessions: &[SessionReport], out: &mut Vec<u8>) -> io::Result<()> {
    writeln!(
        out,
        "session_id,from,to,final_state,failure,qubits_requested,qubits_delivered,ebits_consumed,\
         pairs_attempted,pairs_survived,pairs_deposited,ebits_distilled"
    )?;
    for s in sessions {
        let failure = s.failure.map(|f| format!("{f:?}")).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            s.id,
            s.from,
            s.to,
            s.final_state,
            failure,
            s.qubits_requested,
            s.qubits_delivered,
            s.ebits_consumed,
            s.pairs_attempted,
            s.pairs_survived,
            s.pairs_deposited,
            s.distilled
        )?;
    }
    Ok(())
}

fn rates_sweep(args: &SweepArgs, seed: u64, format: Format) -> Result<Vec<u8>, CliError> {
    let axis = |arg: &Option<String>, name: &str, default: Vec<f64>| match arg {
        Some(s) => grid::parse(s).map_err(|e| CliError::Config(format!("--{name}: {e}"))),
        None => Ok(default),
    };
    let cfg = SweepConfig {
        tx_waists: axis(&args.waists, "waists", linspace(0.05, 1.0, 10))?,
        rx_radii: axis(&args.rx, "rx", linspace(0.25, 1.25, 10))?,
        distance: args.distance,
        b: args.b,
        wavelength: args.wavelength,
        n_samples: args.samples,
        seed,
    };
    let exec = if args.serial {
        Execution::Serial
    } else {
        Execution::Parallel
    };
    let surface = sweep(&cfg, exec).map_err(config)?;
    let mut out = Vec::new();
    match format {
        Format::Csv => surface.write_csv(&mut out)?,
        Format::Jsonl => {
            for p in surface.points() {
                let row = SweepRow {
                    tx_waist_m: p.tx_waist,
                    rx_radius_m: p.rx_radius,
                    distance_m: p.distance,
                    b: p.b,
                    mean_rate_ebits: p.mean_rate,
                };
                json_line(&mut out, &row)?;
            }
        }
    }
    Ok(out)
}

#[derive(Serialize)]
struct SweepRow {
    tx_waist_m: f64,
    rx_radius_m: f64,
    distance_m: f64,
    b: f64,
    mean_rate_ebits: f64,
}

#[derive(Serialize)]
struct SampleRow {
    t: f64,
    eta: f64,
    loss_db: f64,
}

fn json_line<T: Serialize>(out: &mut Vec<u8>, row: &T) -> io::Result<()> {
    serde_json::to_writer(&mut *out, row)?;
    out.push(b'\n');
    Ok(())
}

fn build_model(args: &SampleArgs) -> Result<(OpticalChannelModel, u32), CliError> {
    let beam = BeamParams::new(args.tx_waist, args.wavelength).map_err(config)?;
    let diffraction = || -> Result<Transmittance, CliError> {
        if !(args.distance > 0.0 && args.rx_radius > 0.0) {
            return Err(CliError::Config("--distance and --rx-radius must be positive".into()));
        }
        Ok(diffraction_transmittance(&beam, args.rx_radius, args.distance))
    };
    let eta0 = match args.eta0 {
        Some(e) => Transmittance::new(e).map_err(config)?,
        None => diffraction()?,
    };
    Ok(match args.model {
        ModelKind::Fixed => (
            OpticalChannelModel::fixed(beam, args.rx_radius, args.distance).map_err(config)?,
            tags::GENERIC,
        ),
        ModelKind::Downlink => (
            OpticalChannelModel::DownlinkGaussianTail(DownlinkGaussianTail::new(eta0, args.b).map_err(config)?),
            tags::DOWNLINK,
        ),
        ModelKind::Uplink => {
            let w = args.beam_radius.unwrap_or_else(|| beam_radius(&beam, args.distance));
            let sigma = match (args.sigma, args.target_loss_db) {
                (Some(s), _) => s,
                (None, Some(target)) => calibrate_uplink_sigma(eta0, w, target).map_err(config)?,
                (None, None) => 0.0,
            };
            let m = UplinkPointingFade::new(eta0, w, sigma, args.coherence_time).map_err(config)?;
            (OpticalChannelModel::UplinkPointingFade(m), tags::UPLINK)
        }
    })
}

fn channel_sample(args: &SampleArgs, seed: u64, format: Format) -> Result<Vec<u8>, CliError> {
    let (model, tag) = build_model(args)?;
    let dt = args.dt.unwrap_or(args.coherence_time);
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(CliError::Config("--dt must be positive".into()));
    }
    let mut rng = stream(seed, StreamKey::new(tag, 0, 0));
    let mut out = Vec::new();
    if format == Format::Csv {
        writeln!(out, "t,eta,loss_db")?;
    }
    for k in 0..args.n {
        let t = k as f64 * dt;
        let eta = model.sample(&mut rng, t);
        match format {
            Format::Csv => writeln!(out, "{t},{},{}", eta.value(), eta.loss_db())?,
            Format::Jsonl => json_line(
                &mut out,
                &SampleRow {
                    t,
                    eta: eta.value(),
                    loss_db: eta.loss_db(),
                },
            )?,
        }
    }
    Ok(out)
}

fn read_stdin() -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    io::stdin().lock().read_to_end(&mut buf)?;
    Ok(buf)
}

fn packet(cmd: &PacketCommand) -> Result<Vec<u8>, CliError> {
    let input = read_stdin()?;
    match cmd {
        PacketCommand::Encode { raw } => {
            let p: Packet =
                serde_json::from_slice(&input).map_err(|e| CliError::Config(format!("packet JSON: {e}")))?;
            let bytes = encode(&p).map_err(config)?;
            Ok(if *raw {
                bytes
            } else {
                let mut s = hex::encode(bytes).into_bytes();
                s.push(b'\n');
                s
            })
        }
        PacketCommand::Decode { raw } => {
            let bytes = if *raw {
                input
            } else {
                let text: String = String::from_utf8_lossy(&input).split_whitespace().collect();
                hex::decode(text).map_err(|e| CliError::Config(format!("hex input: {e}")))?
            };
            let p = decode(&bytes).map_err(config)?;
            let mut out = serde_json::to_vec(&p).map_err(|e| CliError::Runtime(e.to_string()))?;
            out.push(b'\n');
            Ok(out)
        }
    }
}
