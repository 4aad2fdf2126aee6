//! Scenario files.
//!
//! A scenario is TOML. Angles are written in degrees (`*_deg`), lengths in
//! metres (`*_m`), times in seconds (`*_s`). See `scenarios/example.toml`
//! for an annotated file.

use std::collections::BTreeSet;

use serde::Deserialize;
use thiserror::Error;

use crate::channel::DEFAULT_WAVELENGTH;
use crate::geom::{
    AltitudeBounds, GroundStation, Satellite, SkyView, Tier, DEFAULT_COHERENCE_TIME, DEFAULT_MEMORY_CAPACITY,
    DEFAULT_MIN_ELEVATION, GEO_ALTITUDE,
};
use crate::proto::{NetworkConfig, ProtocolParams, Request, YieldSetting};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{field}: {message}")]
    Invalid { field: String, message: String },
}

fn invalid(field: impl Into<String>, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid {
        field: field.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    seed: u64,
    t_end_s: f64,
    #[serde(default)]
    sky: RawSky,
    #[serde(default)]
    channel: RawChannel,
    #[serde(default)]
    protocol: RawProtocol,
    #[serde(default)]
    stations: Vec<RawStation>,
    #[serde(default)]
    satellites: Vec<RawSatellite>,
    #[serde(default)]
    requests: Vec<RawRequest>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawSky {
    min_elevation_deg: f64,
    earth_rotation: bool,
    leo_min_altitude_m: f64,
    leo_max_altitude_m: f64,
}

impl Default for RawSky {
    fn default() -> Self {
        let bounds = AltitudeBounds::default();
        Self {
            min_elevation_deg: DEFAULT_MIN_ELEVATION.to_degrees(),
            earth_rotation: false,
            leo_min_altitude_m: bounds.min,
            leo_max_altitude_m: bounds.max,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawChannel {
    wavelength_m: f64,
    downlink_b: f64,
}

impl Default for RawChannel {
    fn default() -> Self {
        Self {
            wavelength_m: DEFAULT_WAVELENGTH,
            downlink_b: 0.1,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawProtocol {
    pairs_target: u64,
    source_rate_hz: f64,
    batch_size: u64,
    min_raw_pairs: u64,
    distillation_rounds: u32,
    /// Fixed distillation yield; absent means "mean rate of the product channel".
    yield_rate: Option<f64>,
    yield_samples: usize,
}

impl Default for RawProtocol {
    fn default() -> Self {
        let p = ProtocolParams::default();
        let samples = match p.yield_setting {
            YieldSetting::ProductChannelMean { samples } => samples,
            YieldSetting::Fixed(_) => 100_000,
        };
        Self {
            pairs_target: p.pairs_target,
            source_rate_hz: p.source_rate_hz,
            batch_size: p.batch_size,
            min_raw_pairs: p.min_raw_pairs,
            distillation_rounds: p.rounds,
            yield_rate: None,
            yield_samples: samples,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawStation {
    id: u32,
    lat_deg: f64,
    lon_deg: f64,
    aperture_radius_m: f64,
    #[serde(default = "default_coherence")]
    coherence_time_s: f64,
    #[serde(default = "default_capacity")]
    memory_capacity: usize,
}

fn default_coherence() -> f64 {
    DEFAULT_COHERENCE_TIME
}

fn default_capacity() -> usize {
    DEFAULT_MEMORY_CAPACITY
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSatellite {
    id: u32,
    tier: Tier,
    /// Required for LEO; GEO altitude is fixed.
    altitude_m: Option<f64>,
    #[serde(default)]
    inclination_deg: f64,
    #[serde(default)]
    raan_deg: f64,
    #[serde(default)]
    phase_deg: f64,
    aperture_radius_m: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRequest {
    from: u32,
    to: u32,
    qubits: u64,
    #[serde(default)]
    at_s: f64,
}

/// A validated scenario: network configuration plus the requests to submit.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub network: NetworkConfig,
    pub requests: Vec<Request>,
}

fn line_col(src: &str, offset: usize) -> (usize, usize) {
    let before = &src[..offset.min(src.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, column)
}

fn finite(field: String, v: f64) -> Result<f64, ScenarioError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(invalid(field, "must be finite"))
    }
}

impl Scenario {
    pub fn from_toml(src: &str) -> Result<Self, ScenarioError> {
        let raw: RawScenario = toml::from_str(src).map_err(|e| {
            let (line, column) = e.span().map_or((0, 0), |s| line_col(src, s.start));
            ScenarioError::Parse {
                line,
                column,
                message: e.message().to_string(),
            }
        })?;
        raw.validate()
    }
}

impl RawScenario {
    fn validate(self) -> Result<Scenario, ScenarioError> {
        if !(self.t_end_s.is_finite() && self.t_end_s >= 0.0) {
            return Err(invalid("t_end_s", "must be finite and >= 0"));
        }
        let sky = &self.sky;
        let min_el = finite("sky.min_elevation_deg".into(), sky.min_elevation_deg)?;
        if !(-90.0..=90.0).contains(&min_el) {
            return Err(invalid("sky.min_elevation_deg", "must lie in [-90, 90]"));
        }
        let bounds = AltitudeBounds {
            min: sky.leo_min_altitude_m,
            max: sky.leo_max_altitude_m,
        };
        if !(bounds.min > 0.0 && bounds.min <= bounds.max && bounds.max.is_finite()) {
            return Err(invalid("sky.leo_min_altitude_m", "need 0 < min <= max"));
        }

        let mut station_ids = BTreeSet::new();
        let mut stations = Vec::with_capacity(self.stations.len());
        for (k, s) in self.stations.iter().enumerate() {
            let at = |f: &str| format!("stations[{k}].{f}");
            if !station_ids.insert(s.id) {
                return Err(invalid(at("id"), format!("duplicate station id {}", s.id)));
            }
            let lat = finite(at("lat_deg"), s.lat_deg)?.to_radians();
            let lon = finite(at("lon_deg"), s.lon_deg)?.to_radians();
            let gs = GroundStation::new(s.id, lat, lon, s.aperture_radius_m)
                .and_then(|g| g.with_memory(s.coherence_time_s, s.memory_capacity))
                .map_err(|e| invalid(format!("stations[{k}]"), e.to_string()))?;
            stations.push(gs);
        }

        let mut sat_ids = BTreeSet::new();
        let mut satellites = Vec::with_capacity(self.satellites.len());
        for (k, s) in self.satellites.iter().enumerate() {
            let at = |f: &str| format!("satellites[{k}].{f}");
            if !sat_ids.insert(s.id) {
                return Err(invalid(at("id"), format!("duplicate satellite id {}", s.id)));
            }
            let altitude = match (s.tier, s.altitude_m) {
                (Tier::Leo, Some(a)) => a,
                (Tier::Leo, None) => return Err(invalid(at("altitude_m"), "required for LEO satellites")),
                (Tier::Geo, None) => GEO_ALTITUDE,
                (Tier::Geo, Some(a)) if a == GEO_ALTITUDE => a,
                (Tier::Geo, Some(a)) => {
                    return Err(invalid(
                        at("altitude_m"),
                        format!("GEO altitude is fixed at {GEO_ALTITUDE} m, got {a}"),
                    ))
                }
            };
            let sat = Satellite {
                id: s.id,
                tier: s.tier,
                altitude,
                inclination: finite(at("inclination_deg"), s.inclination_deg)?.to_radians(),
                raan: finite(at("raan_deg"), s.raan_deg)?.to_radians(),
                phase_at_epoch: finite(at("phase_deg"), s.phase_deg)?.to_radians(),
                aperture_radius: s.aperture_radius_m,
            };
            sat.validate(bounds)
                .map_err(|e| invalid(format!("satellites[{k}]"), e.to_string()))?;
            satellites.push(sat);
        }

        let c = &self.channel;
        if !(c.wavelength_m > 0.0 && c.wavelength_m.is_finite()) {
            return Err(invalid("channel.wavelength_m", "must be positive"));
        }
        if !(c.downlink_b >= 0.0 && c.downlink_b.is_finite()) {
            return Err(invalid("channel.downlink_b", "must be >= 0"));
        }

        let p = &self.protocol;
        if !(p.source_rate_hz > 0.0 && p.source_rate_hz.is_finite()) {
            return Err(invalid("protocol.source_rate_hz", "must be positive"));
        }
        if p.batch_size == 0 {
            return Err(invalid("protocol.batch_size", "must be >= 1"));
        }
        if p.distillation_rounds == 0 {
            return Err(invalid("protocol.distillation_rounds", "must be >= 1"));
        }
        let yield_setting = match p.yield_rate {
            Some(y) if (0.0..=1.0).contains(&y) => YieldSetting::Fixed(y),
            Some(_) => return Err(invalid("protocol.yield_rate", "must lie in [0, 1]")),
            None if p.yield_samples == 0 => return Err(invalid("protocol.yield_samples", "must be >= 1")),
            None => YieldSetting::ProductChannelMean {
                samples: p.yield_samples,
            },
        };

        let mut requests = Vec::with_capacity(self.requests.len());
        for (k, r) in self.requests.iter().enumerate() {
            let at = |f: &str| format!("requests[{k}].{f}");
            for (f, id) in [("from", r.from), ("to", r.to)] {
                if !station_ids.contains(&id) {
                    return Err(invalid(at(f), format!("unknown station id {id}")));
                }
            }
            if r.from == r.to {
                return Err(invalid(at("to"), "must differ from `from`"));
            }
            if r.qubits == 0 {
                return Err(invalid(at("qubits"), "must be >= 1"));
            }
            if !(r.at_s.is_finite() && r.at_s >= 0.0) {
                return Err(invalid(at("at_s"), "must be finite and >= 0"));
            }
            requests.push(Request {
                from: r.from,
                to: r.to,
                qubits: r.qubits,
                at: r.at_s,
            });
        }

        Ok(Scenario {
            network: NetworkConfig {
                stations,
                satellites,
                view: SkyView {
                    min_elevation: min_el.to_radians(),
                    earth_rotation: sky.earth_rotation,
                },
                protocol: ProtocolParams {
                    pairs_target: p.pairs_target,
                    source_rate_hz: p.source_rate_hz,
                    batch_size: p.batch_size,
                    min_raw_pairs: p.min_raw_pairs,
                    rounds: p.distillation_rounds,
                    yield_setting,
                    downlink_b: c.downlink_b,
                    wavelength: c.wavelength_m,
                },
                seed: self.seed,
                t_end: self.t_end_s,
            },
            requests,
        })
    }
}
