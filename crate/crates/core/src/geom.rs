//! Node kinematics: circular-orbit satellites, (optionally rotating) ground
//! stations, slant ranges, elevations and light-time delays.

use std::cmp::Ordering;
use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;

/// Mean Earth radius (m).
pub const EARTH_RADIUS: f64 = 6_371_000.0;
/// Earth gravitational parameter (m^3/s^2).
pub const MU_EARTH: f64 = 3.986_004_418e14;
/// Speed of light in vacuum (m/s).
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
/// Sidereal rotation rate (rad/s).
pub const EARTH_ROTATION_RATE: f64 = 7.292_115_9e-5;
/// GEO tier altitude used throughout (m).
pub const GEO_ALTITUDE: f64 = 36_000_000.0;
/// Default optical horizon mask, 10 degrees.
pub const DEFAULT_MIN_ELEVATION: f64 = 10.0 * PI / 180.0;
pub const DEFAULT_COHERENCE_TIME: f64 = 1.0;
pub const DEFAULT_MEMORY_CAPACITY: usize = 100_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeomError {
    #[error("latitude {0} rad outside [-pi/2, pi/2]")]
    Latitude(f64),
    #[error("aperture radius must be positive, got {0} m")]
    Aperture(f64),
    #[error("memory coherence time must be positive, got {0} s")]
    CoherenceTime(f64),
    #[error("LEO altitude {altitude} m outside [{min}, {max}] m")]
    LeoAltitude { altitude: f64, min: f64, max: f64 },
    #[error("GEO altitude must be {GEO_ALTITUDE} m, got {0} m")]
    GeoAltitude(f64),
    #[error("link endpoints coincide")]
    CoincidentPoints,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundStation {
    pub id: u32,
    pub latitude: f64,
    pub longitude: f64,
    pub aperture_radius: f64,
    pub memory_coherence_time: f64,
    pub memory_capacity: usize,
}

impl GroundStation {
    pub fn new(id: u32, latitude: f64, longitude: f64, aperture_radius: f64) -> Result<Self, GeomError> {
        let gs = Self {
            id,
            latitude,
            longitude,
            aperture_radius,
            memory_coherence_time: DEFAULT_COHERENCE_TIME,
            memory_capacity: DEFAULT_MEMORY_CAPACITY,
        };
        gs.validate()?;
        Ok(gs)
    }

    pub fn with_memory(mut self, coherence_time: f64, capacity: usize) -> Result<Self, GeomError> {
        self.memory_coherence_time = coherence_time;
        self.memory_capacity = capacity;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), GeomError> {
        if !self.latitude.is_finite() || !self.longitude.is_finite() {
            return Err(GeomError::NonFinite("station coordinates"));
        }
        if self.latitude.abs() > FRAC_PI_2 {
            return Err(GeomError::Latitude(self.latitude));
        }
        if !(self.aperture_radius.is_finite() && self.aperture_radius > 0.0) {
            return Err(GeomError::Aperture(self.aperture_radius));
        }
        if !(self.memory_coherence_time.is_finite() && self.memory_coherence_time > 0.0) {
            return Err(GeomError::CoherenceTime(self.memory_coherence_time));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Tier {
    Leo,
    Geo,
}

/// Altitude window accepted for LEO satellites.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AltitudeBounds {
    pub min: f64,
    pub max: f64,
}

impl Default for AltitudeBounds {
    fn default() -> Self {
        Self {
            min: 500e3,
            max: 1200e3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Satellite {
    pub id: u32,
    pub tier: Tier,
    pub altitude: f64,
    pub inclination: f64,
    pub raan: f64,
    pub phase_at_epoch: f64,
    pub aperture_radius: f64,
}

impl Satellite {
    pub fn leo(
        id: u32,
        altitude: f64,
        inclination: f64,
        raan: f64,
        phase_at_epoch: f64,
        aperture_radius: f64,
    ) -> Result<Self, GeomError> {
        let sat = Self {
            id,
            tier: Tier::Leo,
            altitude,
            inclination,
            raan,
            phase_at_epoch,
            aperture_radius,
        };
        sat.validate(AltitudeBounds::default())?;
        Ok(sat)
    }

    pub fn geo(
        id: u32,
        inclination: f64,
        raan: f64,
        phase_at_epoch: f64,
        aperture_radius: f64,
    ) -> Result<Self, GeomError> {
        let sat = Self {
            id,
            tier: Tier::Geo,
            altitude: GEO_ALTITUDE,
            inclination,
            raan,
            phase_at_epoch,
            aperture_radius,
        };
        sat.validate(AltitudeBounds::default())?;
        Ok(sat)
    }

    pub fn validate(&self, leo_bounds: AltitudeBounds) -> Result<(), GeomError> {
        if ![self.altitude, self.inclination, self.raan, self.phase_at_epoch]
            .iter()
            .all(|v| v.is_finite())
        {
            return Err(GeomError::NonFinite("satellite elements"));
        }
        if !(self.aperture_radius.is_finite() && self.aperture_radius > 0.0) {
            return Err(GeomError::Aperture(self.aperture_radius));
        }
        match self.tier {
            Tier::Leo if self.altitude < leo_bounds.min || self.altitude > leo_bounds.max => {
                Err(GeomError::LeoAltitude {
                    altitude: self.altitude,
                    min: leo_bounds.min,
                    max: leo_bounds.max,
                })
            }
            Tier::Geo if self.altitude != GEO_ALTITUDE => Err(GeomError::GeoAltitude(self.altitude)),
            _ => Ok(()),
        }
    }

    pub fn orbital_radius(&self) -> f64 {
        EARTH_RADIUS + self.altitude
    }

    /// Mean motion (rad/s) of the circular orbit.
    pub fn mean_motion(&self) -> f64 {
        let a = self.orbital_radius();
        (MU_EARTH / (a * a * a)).sqrt()
    }

    pub fn period(&self) -> f64 {
        2.0 * PI / self.mean_motion()
    }
}

/// Earth-centred inertial position of `sat` at time `t` (s after epoch).
pub fn satellite_position(sat: &Satellite, t: f64) -> Vec3 {
    let a = sat.orbital_radius();
    let u = sat.phase_at_epoch + sat.mean_motion() * t;
    let (su, cu) = u.sin_cos();
    let (si, ci) = sat.inclination.sin_cos();
    let (so, co) = sat.raan.sin_cos();
    Vec3::new(a * (co * cu - so * su * ci), a * (so * cu + co * su * ci), a * su * si)
}

pub fn ground_position(gs: &GroundStation, t: f64, earth_rotation: bool) -> Vec3 {
    let lon = if earth_rotation {
        gs.longitude + EARTH_ROTATION_RATE * t
    } else {
        gs.longitude
    };
    let (sl, cl) = gs.latitude.sin_cos();
    let (so, co) = lon.sin_cos();
    Vec3::new(EARTH_RADIUS * cl * co, EARTH_RADIUS * cl * so, EARTH_RADIUS * sl)
}

/// Which endpoint of a link sits on the ground.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroundEnd {
    A,
    B,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkGeometry {
    pub distance: f64,
    /// Only present when one end is a ground station.
    pub elevation: Option<f64>,
    pub propagation_delay: f64,
}

pub fn light_time(distance: f64) -> f64 {
    distance / SPEED_OF_LIGHT
}

pub fn link_geometry(pos_a: &Vec3, pos_b: &Vec3, ground_end: Option<GroundEnd>) -> Result<LinkGeometry, GeomError> {
    let distance = (pos_b - pos_a).norm();
    if !distance.is_finite() {
        return Err(GeomError::NonFinite("link endpoints"));
    }
    if distance == 0.0 {
        return Err(GeomError::CoincidentPoints);
    }
    let elevation = ground_end.map(|end| match end {
        GroundEnd::A => elevation(pos_a, pos_b),
        GroundEnd::B => elevation(pos_b, pos_a),
    });
    Ok(LinkGeometry {
        distance,
        elevation,
        propagation_delay: light_time(distance),
    })
}

/// Angle of `target` above the local horizon plane at `station`, with the
/// local vertical taken along the geocentric station vector.
pub fn elevation(station: &Vec3, target: &Vec3) -> f64 {
    let los = target - station;
    let sin_el = los.dot(station) / (los.norm() * station.norm());
    sin_el.clamp(-1.0, 1.0).asin()
}

/// Scenario-level visibility settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SkyView {
    pub min_elevation: f64,
    pub earth_rotation: bool,
}

impl Default for SkyView {
    fn default() -> Self {
        Self {
            min_elevation: DEFAULT_MIN_ELEVATION,
            earth_rotation: false,
        }
    }
}

impl SkyView {
    pub fn elevation_of(&self, sat: &Satellite, gs: &GroundStation, t: f64) -> f64 {
        elevation(
            &ground_position(gs, t, self.earth_rotation),
            &satellite_position(sat, t),
        )
    }

    pub fn is_visible(&self, sat: &Satellite, gs: &GroundStation, t: f64) -> bool {
        self.elevation_of(sat, gs, t) >= self.min_elevation
    }

    pub fn slant_range(&self, sat: &Satellite, gs: &GroundStation, t: f64) -> f64 {
        (satellite_position(sat, t) - ground_position(gs, t, self.earth_rotation)).norm()
    }
}

/// Pick the LEO with the highest worst-case elevation over the two stations.
///
/// Only satellites at or above `view.min_elevation` from both stations are
/// eligible; ties go to the lowest id. Non-LEO entries are ignored.
pub fn select_leo(
    candidates: &[Satellite],
    gs_a: &GroundStation,
    gs_b: &GroundStation,
    t: f64,
    view: &SkyView,
) -> Option<u32> {
    candidates
        .iter()
        .filter(|s| s.tier == Tier::Leo)
        .filter_map(|s| {
            let ea = view.elevation_of(s, gs_a, t);
            let eb = view.elevation_of(s, gs_b, t);
            (ea >= view.min_elevation && eb >= view.min_elevation).then_some((ea.min(eb), s.id))
        })
        .max_by(|(sa, ia), (sb, ib)| match sa.total_cmp(sb) {
            Ordering::Equal => ib.cmp(ia),
            o => o,
        })
        .map(|(_, id)| id)
}

/// Highest-elevation satellite of `tier` visible from `gs`, lowest id on ties.
pub fn best_visible(candidates: &[Satellite], tier: Tier, gs: &GroundStation, t: f64, view: &SkyView) -> Option<u32> {
    candidates
        .iter()
        .filter(|s| s.tier == tier)
        .map(|s| (view.elevation_of(s, gs, t), s.id))
        .filter(|(e, _)| *e >= view.min_elevation)
        .max_by(|(sa, ia), (sb, ib)| match sa.total_cmp(sb) {
            Ordering::Equal => ib.cmp(ia),
            o => o,
        })
        .map(|(_, id)| id)
}
