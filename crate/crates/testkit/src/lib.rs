//! Reference computations for the test suites.
//!
//! Everything in here is written from first principles and does not call into
//! `gqi-core`, so the tests that compare against these values exercise two
//! independent routes to the same number.

use std::f64::consts::{LN_2, PI};

pub const EARTH_RADIUS: f64 = 6_371_000.0;
pub const MU_EARTH: f64 = 3.986004418e14;
pub const LIGHT_SPEED: f64 = 299_792_458.0;

/// Nodes and weights of the n-point Gauss-Legendre rule on [-1, 1].
///
/// Roots are found by Newton iteration on the three-term recurrence, starting
/// from the Tricomi approximation.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    let nf = n as f64;
    for i in 0..m {
        let mut x = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let nf = n as f64;
    let d = nf * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Integral of `f` over `[a, b]` with an n-point Gauss-Legendre rule.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> f64 {
    let (x, w) = gauss_legendre(n);
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    x.iter().zip(&w).map(|(xi, wi)| wi * f(mid + half * xi)).sum::<f64>() * half
}

/// -log2(1 - eta) for the pure-loss channel.
pub fn rci_reference(eta: f64) -> f64 {
    if eta <= 0.0 {
        0.0
    } else {
        -(1.0 - eta).ln() / LN_2
    }
}

/// E[g(eta0 * clamp(1 - |G|, 0, 1))] for G ~ N(0, b^2), by quadrature over the
/// half-normal density of |G|. Mass beyond |G| = 1 maps to eta = 0.
pub fn downlink_expectation<F: Fn(f64) -> f64>(eta0: f64, b: f64, g: F, n: usize) -> f64 {
    assert!(b > 0.0);
    let norm = (2.0 / PI).sqrt() / b;
    let inner = integrate(
        |x| norm * (-x * x / (2.0 * b * b)).exp() * g(eta0 * (1.0 - x)),
        0.0,
        1.0,
        n,
    );
    let tail = erfc_reference(1.0 / (b * 2f64.sqrt()));
    inner + tail * g(0.0)
}

/// Mean RCI over the downlink tail distribution.
pub fn downlink_rci_mean(eta0: f64, b: f64, n: usize) -> f64 {
    downlink_expectation(eta0, b, rci_reference, n)
}

/// Second moment of the RCI over the downlink tail distribution.
pub fn downlink_rci_second_moment(eta0: f64, b: f64, n: usize) -> f64 {
    downlink_expectation(eta0, b, |e| rci_reference(e).powi(2), n)
}

/// E[exp(-2 r^2 / w^2)] for r ~ Rayleigh(sigma), by quadrature.
pub fn pointing_overlap_mean(beam_radius: f64, sigma: f64, n: usize) -> f64 {
    if sigma == 0.0 {
        return 1.0;
    }
    let upper = 40.0 * sigma;
    integrate(
        |r| {
            (-2.0 * r * r / (beam_radius * beam_radius)).exp() * r / (sigma * sigma)
                * (-r * r / (2.0 * sigma * sigma)).exp()
        },
        0.0,
        upper,
        n,
    )
}

/// Complementary error function via its continued-fraction / series split.
/// Accurate to ~1e-14, which is far below any tolerance it feeds.
pub fn erfc_reference(x: f64) -> f64 {
    if x < 0.0 {
        return 2.0 - erfc_reference(-x);
    }
    if x < 3.0 {
        // Maclaurin series of erf
        let mut term = x;
        let mut sum = x;
        let x2 = x * x;
        let mut k = 0.0;
        loop {
            k += 1.0;
            term *= -x2 / k;
            let add = term / (2.0 * k + 1.0);
            sum += add;
            if add.abs() < 1e-17 * sum.abs() {
                break;
            }
        }
        1.0 - 2.0 / PI.sqrt() * sum
    } else {
        // Lentz continued fraction
        let mut f = x;
        let mut c = x;
        let mut d = 0.0;
        for i in 1..300 {
            let a = i as f64 / 2.0;
            d = x + a * d;
            d = 1.0 / d;
            c = x + a / c;
            let delta = c * d;
            f *= delta;
            if (delta - 1.0).abs() < 1e-16 {
                break;
            }
        }
        (-x * x).exp() / (f * PI.sqrt())
    }
}

/// Gaussian-beam radius and aperture power fraction, written out directly.
pub fn diffraction_eta(waist: f64, rx_radius: f64, z: f64, wavelength: f64) -> f64 {
    let zr = PI * waist * waist / wavelength;
    let w2 = waist * waist * (1.0 + (z / zr).powi(2));
    1.0 - (-2.0 * rx_radius * rx_radius / w2).exp()
}

pub fn loss_db(eta: f64) -> f64 {
    -10.0 * eta.log10()
}

pub fn orbital_period(altitude: f64) -> f64 {
    let a = EARTH_RADIUS + altitude;
    2.0 * PI * (a * a * a / MU_EARTH).sqrt()
}

/// Bitwise (table-free) reflected CRC-32, polynomial 0xEDB88320.
pub fn crc32_bitwise(bytes: &[u8]) -> u32 {
    let mut crc = 0xFFFF_FFFFu32;
    for &byte in bytes {
        crc ^= byte as u32;
        for _ in 0..8 {
            let mask = (crc & 1).wrapping_neg();
            crc = (crc >> 1) ^ (0xEDB8_8320 & mask);
        }
    }
    !crc
}

type Vec3 = [f64; 3];

fn rot_x(v: Vec3, a: f64) -> Vec3 {
    let (s, c) = a.sin_cos();
    [v[0], c * v[1] - s * v[2], s * v[1] + c * v[2]]
}

fn rot_z(v: Vec3, a: f64) -> Vec3 {
    let (s, c) = a.sin_cos();
    [c * v[0] - s * v[1], s * v[0] + c * v[1], v[2]]
}

/// Circular orbit position built from explicit rotations of the in-plane vector.
pub fn circular_orbit_position(altitude: f64, inclination: f64, raan: f64, phase: f64, t: f64) -> Vec3 {
    let a = EARTH_RADIUS + altitude;
    let n = (MU_EARTH / (a * a * a)).sqrt();
    let u = phase + n * t;
    rot_z(rot_x([a * u.cos(), a * u.sin(), 0.0], inclination), raan)
}

pub fn station_position(lat: f64, lon: f64) -> Vec3 {
    let (sl, cl) = lat.sin_cos();
    let (so, co) = lon.sin_cos();
    [EARTH_RADIUS * cl * co, EARTH_RADIUS * cl * so, EARTH_RADIUS * sl]
}

/// Elevation as the complement of the zenith angle.
pub fn elevation(station: Vec3, target: Vec3) -> f64 {
    let los = [target[0] - station[0], target[1] - station[1], target[2] - station[2]];
    let dot = los[0] * station[0] + los[1] * station[1] + los[2] * station[2];
    let n1 = (los[0] * los[0] + los[1] * los[1] + los[2] * los[2]).sqrt();
    let n2 = (station[0] * station[0] + station[1] * station[1] + station[2] * station[2]).sqrt();
    PI / 2.0 - (dot / (n1 * n2)).clamp(-1.0, 1.0).acos()
}

/// Exhaustive max-min scan. `candidates` holds (id, position) pairs; returns
/// the id with the largest min-elevation among those visible from both
/// stations, lowest id on ties.
pub fn brute_force_select(
    candidates: &[(u32, Vec3)],
    station_a: Vec3,
    station_b: Vec3,
    min_elevation: f64,
) -> Option<u32> {
    let mut best: Option<(f64, u32)> = None;
    for &(id, pos) in candidates {
        let ea = elevation(station_a, pos);
        let eb = elevation(station_b, pos);
        if ea < min_elevation || eb < min_elevation {
            continue;
        }
        let score = ea.min(eb);
        best = match best {
            None => Some((score, id)),
            Some((s, bid)) if score > s || (score == s && id < bid) => Some((score, id)),
            other => other,
        };
    }
    best.map(|(_, id)| id)
}

/// |observed - n p| <= k * sqrt(n p (1 - p)).
pub fn within_binomial_sigmas(observed: u64, n: u64, p: f64, k: f64) -> bool {
    let mean = n as f64 * p;
    let sd = (n as f64 * p * (1.0 - p)).sqrt();
    (observed as f64 - mean).abs() <= k * sd
}
