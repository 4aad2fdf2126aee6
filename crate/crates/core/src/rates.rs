//! Entanglement-distillation rates from the reverse coherent information of
//! the pure-loss channel, averaged over channel fluctuations, and aperture
//! sweeps built from them.

use std::f64::consts::LN_2;
use std::io::{self, Write};

use rayon::prelude::*;
use thiserror::Error;

use crate::channel::{
    diffraction_transmittance, sample_downlink, BeamParams, ChannelError, DownlinkGaussianTail, OpticalChannelModel,
    Transmittance,
};
use crate::engine::{stream, tags, RngStream, StreamKey};

/// Value returned by [`rci`] for a lossless channel (ebits per use).
pub const RCI_SATURATED: f64 = 60.0;
/// `1 - eta` below this counts as lossless.
const SATURATION_GAP: f64 = 1.0 / (1u64 << 60) as f64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RateError {
    #[error("sample count must be at least 1")]
    NoSamples,
    #[error("sweep axis `{0}` is empty")]
    EmptyAxis(&'static str),
    #[error(transparent)]
    Channel(#[from] ChannelError),
}

/// Reverse coherent information of the pure-loss channel, `-log2(1 - eta)`,
/// saturating at [`RCI_SATURATED`].
pub fn rci(eta: Transmittance) -> f64 {
    let eta = eta.value();
    if 1.0 - eta <= SATURATION_GAP {
        return RCI_SATURATED;
    }
    // ln_1p keeps the small-eta end accurate
    (-(-eta).ln_1p() / LN_2).clamp(0.0, RCI_SATURATED)
}

/// Monte-Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub samples: usize,
}

/// Mean RCI over `n_samples` draws of `model`. Fixed-diffraction links are
/// deterministic and evaluated once, leaving the stream untouched.
pub fn mean_rate(model: &OpticalChannelModel, n_samples: usize, rng: &mut RngStream) -> Result<f64, RateError> {
    Ok(mean_rate_estimate(model, n_samples, rng)?.mean)
}

pub fn mean_rate_estimate(
    model: &OpticalChannelModel,
    n_samples: usize,
    rng: &mut RngStream,
) -> Result<MeanEstimate, RateError> {
    if n_samples == 0 {
        return Err(RateError::NoSamples);
    }
    match model {
        OpticalChannelModel::FixedDiffraction { .. } => Ok(MeanEstimate {
            mean: rci(model.sample(rng, 0.0)),
            std_error: 0.0,
            samples: n_samples,
        }),
        OpticalChannelModel::DownlinkGaussianTail(m) if m.b == 0.0 => Ok(MeanEstimate {
            mean: rci(m.eta0),
            std_error: 0.0,
            samples: n_samples,
        }),
        OpticalChannelModel::DownlinkGaussianTail(_) => Ok(accumulate(n_samples, |_| rci(model.sample(rng, 0.0)))),
        OpticalChannelModel::UplinkPointingFade(m) => {
            let tau = m.fade_coherence_time;
            Ok(accumulate(
                n_samples,
                |i| rci(model.sample(rng, (i as f64 + 0.5) * tau)),
            ))
        }
    }
}

/// Mean RCI of the two-arm product channel `eta_a * eta_b`, arms drawn
/// independently.
pub fn mean_product_rate(
    arm_a: &DownlinkGaussianTail,
    arm_b: &DownlinkGaussianTail,
    n_samples: usize,
    rng: &mut RngStream,
) -> Result<MeanEstimate, RateError> {
    if n_samples == 0 {
        return Err(RateError::NoSamples);
    }
    Ok(accumulate(n_samples, |_| {
        let a = sample_downlink(arm_a, rng).value();
        let b = sample_downlink(arm_b, rng).value();
        rci(Transmittance::saturating(a * b))
    }))
}

fn accumulate<F: FnMut(usize) -> f64>(n: usize, mut draw: F) -> MeanEstimate {
    // Welford
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for i in 0..n {
        let x = draw(i);
        let delta = x - mean;
        mean += delta / (i + 1) as f64;
        m2 += delta * (x - mean);
    }
    let var = if n > 1 { m2 / (n - 1) as f64 } else { 0.0 };
    MeanEstimate {
        mean,
        std_error: (var / n as f64).sqrt(),
        samples: n,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatePoint {
    pub tx_waist: f64,
    pub rx_radius: f64,
    pub distance: f64,
    pub b: f64,
    pub mean_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub tx_waists: Vec<f64>,
    pub rx_radii: Vec<f64>,
    pub distance: f64,
    pub b: f64,
    pub wavelength: f64,
    pub n_samples: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Serial,
    Parallel,
}

/// Mean-rate grid over (transmit waist, receive radius), row-major in waist.
#[derive(Debug, Clone, PartialEq)]
pub struct RateSurface {
    pub tx_waists: Vec<f64>,
    pub rx_radii: Vec<f64>,
    pub distance: f64,
    pub b: f64,
    rates: Vec<f64>,
}

pub const CSV_HEADER: &str = "tx_waist_m,rx_radius_m,distance_m,b,mean_rate_ebits";

impl RateSurface {
    pub fn rows(&self) -> usize {
        self.tx_waists.len()
    }

    pub fn cols(&self) -> usize {
        self.rx_radii.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.rates[i * self.cols() + j]
    }

    pub fn values(&self) -> &[f64] {
        &self.rates
    }

    pub fn points(&self) -> impl Iterator<Item = RatePoint> + '_ {
        self.tx_waists.iter().enumerate().flat_map(move |(i, &w)| {
            self.rx_radii.iter().enumerate().map(move |(j, &r)| RatePoint {
                tx_waist: w,
                rx_radius: r,
                distance: self.distance,
                b: self.b,
                mean_rate: self.get(i, j),
            })
        })
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "{CSV_HEADER}")?;
        for p in self.points() {
            writeln!(
                out,
                "{},{},{},{},{}",
                p.tx_waist, p.rx_radius, p.distance, p.b, p.mean_rate
            )?;
        }
        Ok(())
    }
}

/// Substream for grid cell `(i, j)` of a sweep with `cols` receive radii.
pub fn sweep_stream(seed: u64, i: usize, j: usize, cols: usize) -> RngStream {
    stream(seed, StreamKey::new(tags::SWEEP, 0, (i * cols + j) as u64))
}

/// Evaluate the downlink mean rate at every grid cell. Each cell draws from
/// its own substream, so serial and parallel runs agree bit for bit.
pub fn sweep(cfg: &SweepConfig, exec: Execution) -> Result<RateSurface, RateError> {
    if cfg.tx_waists.is_empty() {
        return Err(RateError::EmptyAxis("tx_waists"));
    }
    if cfg.rx_radii.is_empty() {
        return Err(RateError::EmptyAxis("rx_radii"));
    }
    if cfg.n_samples == 0 {
        return Err(RateError::NoSamples);
    }
    if !(cfg.distance > 0.0 && cfg.distance.is_finite()) {
        return Err(ChannelError::NonPositive {
            name: "distance",
            value: cfg.distance,
        }
        .into());
    }
    let beams = cfg
        .tx_waists
        .iter()
        .map(|&w| BeamParams::new(w, cfg.wavelength))
        .collect::<Result<Vec<_>, _>>()?;
    for &r in &cfg.rx_radii {
        if !(r > 0.0 && r.is_finite()) {
            return Err(ChannelError::NonPositive {
                name: "receiver radius",
                value: r,
            }
            .into());
        }
    }
    DownlinkGaussianTail::new(Transmittance::ONE, cfg.b)?;

    let cols = cfg.rx_radii.len();
    let cell = |idx: usize| -> f64 {
        let (i, j) = (idx / cols, idx % cols);
        let eta0 = diffraction_transmittance(&beams[i], cfg.rx_radii[j], cfg.distance);
        let model = OpticalChannelModel::DownlinkGaussianTail(DownlinkGaussianTail { eta0, b: cfg.b });
        let mut rng = sweep_stream(cfg.seed, i, j, cols);
        mean_rate_estimate(&model, cfg.n_samples, &mut rng)
            .map(|e| e.mean)
            .unwrap_or(0.0)
    };
    let n = beams.len() * cols;
    let rates: Vec<f64> = match exec {
        Execution::Serial => (0..n).map(cell).collect(),
        Execution::Parallel => (0..n).into_par_iter().map(cell).collect(),
    };
    Ok(RateSurface {
        tx_waists: cfg.tx_waists.clone(),
        rx_radii: cfg.rx_radii.clone(),
        distance: cfg.distance,
        b: cfg.b,
        rates,
    })
}

/// `n` evenly spaced values from `start` to `stop` inclusive.
pub fn linspace(start: f64, stop: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![start],
        _ => (0..n)
            .map(|k| start + (stop - start) * k as f64 / (n - 1) as f64)
            .collect(),
    }
}
