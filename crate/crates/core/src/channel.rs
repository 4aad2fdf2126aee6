//! Optical transmittance models.
//!
//! Three link classes are covered:
//!
//! * fixed diffraction: a Gaussian beam truncated by a circular receive
//!   aperture, used for vacuum inter-satellite hops and as the baseline of the
//!   other two models;
//! * downlink: the diffraction value scaled by `clamp(1 - |G|, 0, 1)` with
//!   `G ~ N(0, b^2)`, so `b -> 0` recovers the fixed loss;
//! * uplink: block-fading pointing loss where, per coherence interval, the beam
//!   centroid is displaced by a Rayleigh-distributed radius.
//!
//! Radio links carry classical traffic only and are lossless; see
//! [`radio_delay`].

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::engine::RngStream;
use crate::geom::light_time;

pub const DEFAULT_WAVELENGTH: f64 = 1.55e-6;
pub const DEFAULT_FADE_COHERENCE_TIME: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChannelError {
    #[error("transmittance {0} outside [0, 1]")]
    Transmittance(f64),
    #[error("{name} must be positive and finite, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("{name} must be non-negative and finite, got {value}")]
    Negative { name: &'static str, value: f64 },
    #[error("loss must be >= 0 dB, got {0}")]
    NegativeLoss(f64),
    #[error("target mean loss {target_db} dB is below the diffraction floor of {floor_db} dB")]
    InfeasibleTarget { target_db: f64, floor_db: f64 },
}

fn positive(name: &'static str, value: f64) -> Result<f64, ChannelError> {
    if value > 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(ChannelError::NonPositive { name, value })
    }
}

fn non_negative(name: &'static str, value: f64) -> Result<f64, ChannelError> {
    if value >= 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(ChannelError::Negative { name, value })
    }
}

/// Power transmittance in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Transmittance(f64);

impl Transmittance {
    pub const ZERO: Self = Self(0.0);
    pub const ONE: Self = Self(1.0);

    pub fn new(eta: f64) -> Result<Self, ChannelError> {
        if (0.0..=1.0).contains(&eta) {
            Ok(Self(eta))
        } else {
            Err(ChannelError::Transmittance(eta))
        }
    }

    /// Clamps into `[0, 1]`; NaN maps to zero.
    pub fn saturating(eta: f64) -> Self {
        if eta.is_nan() {
            Self(0.0)
        } else {
            Self(eta.clamp(0.0, 1.0))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn loss_db(self) -> f64 {
        db_from_eta(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeamParams {
    /// Waist radius at the transmitter, taken equal to the aperture radius (m).
    pub waist_radius: f64,
    pub wavelength: f64,
}

impl BeamParams {
    pub fn new(waist_radius: f64, wavelength: f64) -> Result<Self, ChannelError> {
        Ok(Self {
            waist_radius: positive("waist radius", waist_radius)?,
            wavelength: positive("wavelength", wavelength)?,
        })
    }

    pub fn with_default_wavelength(waist_radius: f64) -> Result<Self, ChannelError> {
        Self::new(waist_radius, DEFAULT_WAVELENGTH)
    }

    pub fn rayleigh_range(&self) -> f64 {
        PI * self.waist_radius * self.waist_radius / self.wavelength
    }
}

/// Gaussian beam radius `w(z)` after propagating `z` metres from the waist.
pub fn beam_radius(beam: &BeamParams, z: f64) -> f64 {
    let ratio = z / beam.rayleigh_range();
    beam.waist_radius * (1.0 + ratio * ratio).sqrt()
}

/// Fraction of a centred Gaussian beam captured by a circular aperture of
/// radius `rx_radius` at range `z`.
pub fn diffraction_transmittance(beam: &BeamParams, rx_radius: f64, z: f64) -> Transmittance {
    let w = beam_radius(beam, z);
    // 1 - exp(-x) via exp_m1 keeps precision for the tiny GEO values
    let eta = -(-2.0 * rx_radius * rx_radius / (w * w)).exp_m1();
    Transmittance::saturating(eta)
}

/// `-10 log10(eta)`; zero transmittance gives `f64::INFINITY`.
pub fn db_from_eta(eta: Transmittance) -> f64 {
    if eta.0 == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * eta.0.log10()
    }
}

pub fn eta_from_db(loss_db: f64) -> Result<Transmittance, ChannelError> {
    if loss_db.is_nan() || loss_db < 0.0 {
        return Err(ChannelError::NegativeLoss(loss_db));
    }
    Ok(Transmittance::saturating(10f64.powf(-loss_db / 10.0)))
}

/// Classical radio hop: lossless, light-time delay only.
pub fn radio_delay(distance: f64) -> f64 {
    light_time(distance)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DownlinkGaussianTail {
    pub eta0: Transmittance,
    /// Standard deviation of the Gaussian deviate.
    pub b: f64,
}

impl DownlinkGaussianTail {
    pub fn new(eta0: Transmittance, b: f64) -> Result<Self, ChannelError> {
        Ok(Self {
            eta0,
            b: non_negative("b", b)?,
        })
    }
}

pub fn sample_downlink<R: Rng + ?Sized>(model: &DownlinkGaussianTail, rng: &mut R) -> Transmittance {
    if model.b == 0.0 {
        return model.eta0;
    }
    let g: f64 = StandardNormal.sample(rng);
    let factor = (1.0 - (model.b * g).abs()).clamp(0.0, 1.0);
    Transmittance(model.eta0.0 * factor)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UplinkPointingFade {
    pub eta_diffraction: Transmittance,
    pub beam_radius_at_rx: f64,
    pub sigma_wander: f64,
    pub fade_coherence_time: f64,
}

impl UplinkPointingFade {
    pub fn new(
        eta_diffraction: Transmittance,
        beam_radius_at_rx: f64,
        sigma_wander: f64,
        fade_coherence_time: f64,
    ) -> Result<Self, ChannelError> {
        Ok(Self {
            eta_diffraction,
            beam_radius_at_rx: positive("beam radius at receiver", beam_radius_at_rx)?,
            sigma_wander: non_negative("sigma_wander", sigma_wander)?,
            fade_coherence_time: positive("fade coherence time", fade_coherence_time)?,
        })
    }

    /// Index of the fading block containing `t`.
    pub fn block_index(&self, t: f64) -> u64 {
        (t / self.fade_coherence_time).floor().max(0.0) as u64
    }

    /// Transmittance for a block whose uniform draw is `u` in [0, 1).
    ///
    /// With `r = sigma sqrt(-2 ln(1 - u))`, `exp(-2 r^2 / W^2)` collapses to
    /// `(1 - u)^(4 sigma^2 / W^2)`.
    pub fn eta_for_uniform(&self, u: f64) -> Transmittance {
        if self.sigma_wander == 0.0 {
            return self.eta_diffraction;
        }
        let k = 4.0 * self.sigma_wander * self.sigma_wander / (self.beam_radius_at_rx * self.beam_radius_at_rx);
        let overlap = (k * (-u).ln_1p()).exp();
        Transmittance::saturating(self.eta_diffraction.0 * overlap)
    }

    /// `E[eta] = eta_diffraction * gamma / (gamma + 1)` with
    /// `gamma = W^2 / (4 sigma^2)`.
    pub fn mean_eta(&self) -> f64 {
        self.eta_diffraction.0 * mean_overlap(self.beam_radius_at_rx, self.sigma_wander)
    }
}

fn mean_overlap(beam_radius_at_rx: f64, sigma: f64) -> f64 {
    let k = 4.0 * sigma * sigma / (beam_radius_at_rx * beam_radius_at_rx);
    1.0 / (1.0 + k)
}

/// Block-faded uplink sample at time `t`. The value depends only on the
/// stream key and the block index, never on earlier calls.
pub fn sample_uplink(model: &UplinkPointingFade, stream: &RngStream, t: f64) -> Transmittance {
    model.eta_for_uniform(stream.uniform_at(model.block_index(t)))
}

/// Wander jitter that makes the mean uplink loss equal `target_mean_loss_db`.
///
/// Bisects the closed-form mean on `sigma`; the result reproduces the target
/// to well below 1e-6 dB.
pub fn calibrate_uplink_sigma(
    eta_diffraction: Transmittance,
    beam_radius_at_rx: f64,
    target_mean_loss_db: f64,
) -> Result<f64, ChannelError> {
    positive("beam radius at receiver", beam_radius_at_rx)?;
    let floor_db = db_from_eta(eta_diffraction);
    if !(target_mean_loss_db.is_finite() && target_mean_loss_db >= floor_db) {
        return Err(ChannelError::InfeasibleTarget {
            target_db: target_mean_loss_db,
            floor_db,
        });
    }
    if target_mean_loss_db == floor_db {
        return Ok(0.0);
    }
    let loss_at = |sigma: f64| floor_db - 10.0 * mean_overlap(beam_radius_at_rx, sigma).log10();
    let mut lo = 0.0;
    let mut hi = beam_radius_at_rx;
    while loss_at(hi) < target_mean_loss_db {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if loss_at(mid) < target_mean_loss_db {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OpticalChannelModel {
    FixedDiffraction {
        beam: BeamParams,
        rx_radius: f64,
        distance: f64,
    },
    DownlinkGaussianTail(DownlinkGaussianTail),
    UplinkPointingFade(UplinkPointingFade),
}

impl OpticalChannelModel {
    pub fn fixed(beam: BeamParams, rx_radius: f64, distance: f64) -> Result<Self, ChannelError> {
        Ok(Self::FixedDiffraction {
            beam,
            rx_radius: positive("receiver radius", rx_radius)?,
            distance: positive("distance", distance)?,
        })
    }

    /// Draw a transmittance at time `t`. Fixed links ignore the stream;
    /// downlinks advance it; uplinks read it by block index.
    pub fn sample(&self, stream: &mut RngStream, t: f64) -> Transmittance {
        match self {
            Self::FixedDiffraction {
                beam,
                rx_radius,
                distance,
            } => diffraction_transmittance(beam, *rx_radius, *distance),
            Self::DownlinkGaussianTail(m) => sample_downlink(m, stream),
            Self::UplinkPointingFade(m) => sample_uplink(m, stream, t),
        }
    }
}
