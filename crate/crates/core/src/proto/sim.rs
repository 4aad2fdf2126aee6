use std::collections::BTreeMap;

use rand::Rng;
use serde_json::json;

use super::pool::{distill, teleport, DistillationPolicy, EbitPool};
use super::trace::{TraceRecord, TRACE_SUMMARY_EVENT};
use super::{FailureReason, ProtoError, SessionId, SessionState};
use crate::channel::{
    diffraction_transmittance, radio_delay, sample_downlink, BeamParams, DownlinkGaussianTail, DEFAULT_WAVELENGTH,
};
use crate::engine::{stream, tags, Event, EventQueue, RngStream, StreamKey};
use crate::geom::{
    best_visible, ground_position, satellite_position, select_leo, GroundStation, Satellite, SkyView, Tier,
};
use crate::rates::mean_product_rate;

/// Where the distillation yield comes from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum YieldSetting {
    Fixed(f64),
    /// Mean RCI of the two-arm product channel at distribution start,
    /// estimated from this many samples and capped at 1.
    ProductChannelMean {
        samples: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolParams {
    /// Pair emission attempts per session.
    pub pairs_target: u64,
    pub source_rate_hz: f64,
    /// Attempts emitted per distribution event.
    pub batch_size: u64,
    /// A session that loses its LEO mid-distribution survives only with at
    /// least this many deposited pairs.
    pub min_raw_pairs: u64,
    pub rounds: u32,
    pub yield_setting: YieldSetting,
    pub downlink_b: f64,
    pub wavelength: f64,
}

impl Default for ProtocolParams {
    fn default() -> Self {
        Self {
            pairs_target: 10_000,
            source_rate_hz: 1e5,
            batch_size: 100,
            min_raw_pairs: 1,
            rounds: 1,
            yield_setting: YieldSetting::ProductChannelMean { samples: 100_000 },
            downlink_b: 0.1,
            wavelength: DEFAULT_WAVELENGTH,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Request {
    pub from: u32,
    pub to: u32,
    pub qubits: u64,
    pub at: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    pub stations: Vec<GroundStation>,
    pub satellites: Vec<Satellite>,
    pub view: SkyView,
    pub protocol: ProtocolParams,
    pub seed: u64,
    pub t_end: f64,
}

/// Survivors of one burst of pair emissions.
#[derive(Debug, Clone, PartialEq)]
pub struct DistributionBatch {
    pub attempts: u64,
    /// Arrival time of each surviving pair, in emission order.
    pub created_at: Vec<f64>,
    /// Sum over attempts of the sampled `eta_a * eta_b`.
    pub expected_survivors: f64,
    /// Sum over attempts of `p (1 - p)`.
    pub survivor_variance: f64,
}

/// Emit `attempts` pairs starting at `t_start`, one every `1 / source_rate`
/// seconds. Each pair survives with probability `eta_a * eta_b`, the two arm
/// transmittances drawn independently per attempt. Survivors are stamped
/// with emission time plus the slower arm's light time.
#[allow(clippy::too_many_arguments)]
pub fn leo_distribute(
    arm_a: &DownlinkGaussianTail,
    arm_b: &DownlinkGaussianTail,
    delay_a: f64,
    delay_b: f64,
    attempts: u64,
    t_start: f64,
    source_rate: f64,
    rng: &mut RngStream,
) -> DistributionBatch {
    let lag = delay_a.max(delay_b);
    let mut created_at = Vec::new();
    let mut expected = 0.0;
    let mut variance = 0.0;
    for j in 0..attempts {
        let p = sample_downlink(arm_a, rng).value() * sample_downlink(arm_b, rng).value();
        expected += p;
        variance += p * (1.0 - p);
        if rng.random::<f64>() < p {
            created_at.push(t_start + j as f64 / source_rate + lag);
        }
    }
    DistributionBatch {
        attempts,
        created_at,
        expected_survivors: expected,
        survivor_variance: variance,
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Msg {
    RequestIssued { session: SessionId },
    RequestAtGeo { session: SessionId },
    CommandAtLeo { session: SessionId },
    EmitBatch { session: SessionId, next_attempt: u64 },
    PairsArrive { session: SessionId, created_at: Vec<f64> },
    DistillRound { session: SessionId, round: u32 },
    TeleportDelivered { session: SessionId, qubits: u64 },
}

#[derive(Debug)]
struct Session {
    id: SessionId,
    req: Request,
    state: SessionState,
    history: Vec<&'static str>,
    pool: EbitPool,
    geo: Option<u32>,
    leo: Option<u32>,
    rng: RngStream,
    policy: Option<DistillationPolicy>,
    distill_start: f64,
    round_trip: f64,
    attempted: u64,
    survived: u64,
    deposited: u64,
    dropped: u64,
    expected_survivors: f64,
    survivor_variance: f64,
    in_flight: u64,
    emission_done: bool,
    link_lost: bool,
    raw_valid: u64,
    distilled: u64,
    consumed: u64,
    delivered: u64,
    max_consumed_age: f64,
}

/// Per-session outcome, for reporting and audit replay.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionReport {
    pub id: SessionId,
    pub from: u32,
    pub to: u32,
    pub qubits_requested: u64,
    pub final_state: &'static str,
    pub failure: Option<FailureReason>,
    pub history: Vec<&'static str>,
    pub geo: Option<u32>,
    pub leo: Option<u32>,
    pub yield_rate: Option<f64>,
    pub coherence_time: f64,
    pub pairs_attempted: u64,
    pub pairs_survived: u64,
    pub pairs_deposited: u64,
    pub pairs_dropped: u64,
    pub expected_survivors: f64,
    pub survivor_variance: f64,
    pub raw_valid: u64,
    pub distilled: u64,
    pub ebits_consumed: u64,
    pub qubits_delivered: u64,
    pub max_consumed_age: f64,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct RunSummary {
    pub qubits_delivered: u64,
    pub ebits_consumed: u64,
    pub pairs_attempted: u64,
    pub pairs_survived: u64,
    pub pairs_deposited: u64,
    /// Sum of per-attempt survival probabilities.
    pub expected_survivors: f64,
    /// Sum of per-attempt `p (1 - p)`.
    pub survivor_variance: f64,
    pub ebits_distilled: u64,
    pub sessions_done: u64,
    pub sessions_failed: u64,
    pub sessions_incomplete: u64,
    pub events_processed: u64,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub trace: Vec<TraceRecord>,
    pub sessions: Vec<SessionReport>,
    pub summary: RunSummary,
}

pub struct Simulation {
    cfg: NetworkConfig,
    stations: BTreeMap<u32, GroundStation>,
    satellites: BTreeMap<u32, Satellite>,
    sessions: BTreeMap<SessionId, Session>,
    queue: EventQueue<Msg>,
    trace: Vec<TraceRecord>,
}

impl Simulation {
    pub fn new(cfg: NetworkConfig) -> Result<Self, ProtoError> {
        let stations = cfg.stations.iter().map(|s| (s.id, s.clone())).collect();
        let satellites = cfg.satellites.iter().map(|s| (s.id, s.clone())).collect();
        if let YieldSetting::Fixed(y) = cfg.protocol.yield_setting {
            DistillationPolicy::new(cfg.protocol.rounds, y)?;
        } else if cfg.protocol.rounds == 0 {
            return Err(ProtoError::InvalidPolicy("rounds must be >= 1".into()));
        }
        if !(cfg.protocol.source_rate_hz.is_finite() && cfg.protocol.source_rate_hz > 0.0)
            || cfg.protocol.batch_size == 0
        {
            return Err(ProtoError::InvalidRequest(
                "source rate and batch size must be positive".into(),
            ));
        }
        DownlinkGaussianTail::new(crate::channel::Transmittance::ONE, cfg.protocol.downlink_b)
            .map_err(|e| ProtoError::Channel(e.to_string()))?;
        Ok(Self {
            cfg,
            stations,
            satellites,
            sessions: BTreeMap::new(),
            queue: EventQueue::new(),
            trace: Vec::new(),
        })
    }

    /// Register a request; the uplink to GEO is sent at `req.at`. Invalid
    /// requests are refused before anything is scheduled.
    pub fn submit(&mut self, req: Request) -> Result<SessionId, ProtoError> {
        if req.qubits == 0 {
            return Err(ProtoError::InvalidRequest("qubits must be >= 1".into()));
        }
        if req.from == req.to {
            return Err(ProtoError::InvalidRequest("source and destination coincide".into()));
        }
        let a = self
            .stations
            .get(&req.from)
            .ok_or(ProtoError::UnknownStation(req.from))?;
        let b = self.stations.get(&req.to).ok_or(ProtoError::UnknownStation(req.to))?;
        let id = self.sessions.len() as SessionId + 1;
        let pool = EbitPool::new(
            (a.id, b.id),
            a.memory_coherence_time.min(b.memory_coherence_time),
            a.memory_capacity.min(b.memory_capacity),
        );
        self.queue.schedule(req.at, Msg::RequestIssued { session: id })?;
        self.sessions.insert(
            id,
            Session {
                id,
                req,
                state: SessionState::Idle,
                history: vec!["Idle"],
                pool,
                geo: None,
                leo: None,
                rng: stream(self.cfg.seed, StreamKey::new(tags::DISTRIBUTION, id, 0)),
                policy: None,
                distill_start: 0.0,
                round_trip: 0.0,
                attempted: 0,
                survived: 0,
                deposited: 0,
                dropped: 0,
                expected_survivors: 0.0,
                survivor_variance: 0.0,
                in_flight: 0,
                emission_done: false,
                link_lost: false,
                raw_valid: 0,
                distilled: 0,
                consumed: 0,
                delivered: 0,
                max_consumed_age: 0.0,
            },
        );
        Ok(id)
    }

    pub fn run(mut self) -> Result<RunReport, ProtoError> {
        let mut queue = std::mem::take(&mut self.queue);
        let t_end = self.cfg.t_end.max(queue.now());
        let processed = queue
            .run_until(t_end, |q, ev| self.dispatch(q, ev))
            .map_err(|e| ProtoError::Engine(e.to_string()))?;

        let sessions: Vec<SessionReport> = self.sessions.values().map(report).collect();
        let summary = RunSummary {
            qubits_delivered: sessions.iter().map(|s| s.qubits_delivered).sum(),
            ebits_consumed: sessions.iter().map(|s| s.ebits_consumed).sum(),
            pairs_attempted: sessions.iter().map(|s| s.pairs_attempted).sum(),
            pairs_survived: sessions.iter().map(|s| s.pairs_survived).sum(),
            pairs_deposited: sessions.iter().map(|s| s.pairs_deposited).sum(),
            expected_survivors: sessions.iter().map(|s| s.expected_survivors).sum(),
            survivor_variance: sessions.iter().map(|s| s.survivor_variance).sum(),
            ebits_distilled: sessions.iter().map(|s| s.distilled).sum(),
            sessions_done: sessions.iter().filter(|s| s.final_state == "Done").count() as u64,
            sessions_failed: sessions.iter().filter(|s| s.final_state == "Failed").count() as u64,
            sessions_incomplete: sessions
                .iter()
                .filter(|s| !matches!(s.final_state, "Done" | "Failed"))
                .count() as u64,
            events_processed: processed,
        };
        self.trace.push(TraceRecord {
            t: queue.now(),
            session_id: None,
            event: TRACE_SUMMARY_EVENT,
            payload: serde_json::to_value(&summary).expect("summary serializes"),
        });
        Ok(RunReport {
            trace: self.trace,
            sessions,
            summary,
        })
    }

    fn dispatch(&mut self, q: &mut EventQueue<Msg>, ev: Event<Msg>) -> Result<(), ProtoError> {
        let t = ev.time;
        let sid = match &ev.payload {
            Msg::RequestIssued { session }
            | Msg::RequestAtGeo { session }
            | Msg::CommandAtLeo { session }
            | Msg::EmitBatch { session, .. }
            | Msg::PairsArrive { session, .. }
            | Msg::DistillRound { session, .. }
            | Msg::TeleportDelivered { session, .. } => *session,
        };
        if self.session(sid)?.state.is_terminal() {
            // stale message for a finished session
            return Ok(());
        }
        match ev.payload {
            Msg::RequestIssued { session } => self.handle_request(q, session, t),
            Msg::RequestAtGeo { session } => self.geo_coordinate(q, session, t),
            Msg::CommandAtLeo { session } => self.start_distribution(q, session, t),
            Msg::EmitBatch { session, next_attempt } => self.emit_batch(q, session, next_attempt, t),
            Msg::PairsArrive { session, created_at } => self.pairs_arrive(q, session, created_at, t),
            Msg::DistillRound { session, round } => self.distill_round(q, session, round, t),
            Msg::TeleportDelivered { session, qubits } => self.teleport_delivered(session, qubits, t),
        }
    }

    fn session(&self, id: SessionId) -> Result<&Session, ProtoError> {
        self.sessions.get(&id).ok_or(ProtoError::UnknownSession(id))
    }

    fn session_mut(&mut self, id: SessionId) -> Result<&mut Session, ProtoError> {
        self.sessions.get_mut(&id).ok_or(ProtoError::UnknownSession(id))
    }

    fn record(&mut self, t: f64, session: SessionId, event: &'static str, payload: serde_json::Value) {
        self.trace.push(TraceRecord {
            t,
            session_id: Some(session),
            event,
            payload,
        });
    }

    fn transition(&mut self, id: SessionId, next: SessionState, t: f64) -> Result<(), ProtoError> {
        let s = self.session_mut(id)?;
        if !s.state.can_transition_to(&next) {
            return Err(ProtoError::IllegalTransition {
                from: s.state.name(),
                to: next.name(),
            });
        }
        let from = s.state.name();
        let to = next.name();
        let reason = match &next {
            SessionState::Failed { reason } => Some(*reason),
            _ => None,
        };
        s.history.push(to);
        s.state = next;
        let payload = match reason {
            Some(r) => json!({ "from": from, "to": to, "reason": r }),
            None => json!({ "from": from, "to": to }),
        };
        self.record(t, id, "transition", payload);
        Ok(())
    }

    fn fail(&mut self, id: SessionId, reason: FailureReason, t: f64) -> Result<(), ProtoError> {
        self.transition(id, SessionState::Failed { reason }, t)
    }

    fn station(&self, id: u32) -> Result<&GroundStation, ProtoError> {
        self.stations.get(&id).ok_or(ProtoError::UnknownStation(id))
    }

    fn satellite(&self, id: u32) -> Result<&Satellite, ProtoError> {
        self.satellites.get(&id).ok_or(ProtoError::UnknownSatellite(id))
    }

    fn station_pos(&self, gs: &GroundStation, t: f64) -> crate::geom::Vec3 {
        ground_position(gs, t, self.cfg.view.earth_rotation)
    }

    /// Step 1: the requesting station radios the best-placed GEO node.
    fn handle_request(&mut self, q: &mut EventQueue<Msg>, id: SessionId, t: f64) -> Result<(), ProtoError> {
        let req = self.session(id)?.req;
        self.transition(
            id,
            SessionState::Requested {
                a: req.from,
                b: req.to,
                t0: t,
            },
            t,
        )?;
        let gs_a = self.station(req.from)?.clone();
        let sats: Vec<Satellite> = self.satellites.values().cloned().collect();
        let Some(geo_id) = best_visible(&sats, Tier::Geo, &gs_a, t, &self.cfg.view) else {
            return self.fail(id, FailureReason::NoCoordinator, t);
        };
        let geo = self.satellite(geo_id)?;
        let delay = radio_delay((satellite_position(geo, t) - self.station_pos(&gs_a, t)).norm());
        q.schedule(t + delay, Msg::RequestAtGeo { session: id })?;
        self.session_mut(id)?.geo = Some(geo_id);
        self.record(
            t,
            id,
            "request_sent",
            json!({ "from": req.from, "to": req.to, "qubits": req.qubits, "geo": geo_id, "delay_s": delay }),
        );
        Ok(())
    }

    /// Step 2: GEO picks the LEO and commands it over radio.
    fn geo_coordinate(&mut self, q: &mut EventQueue<Msg>, id: SessionId, t: f64) -> Result<(), ProtoError> {
        let (req, geo_id) = {
            let s = self.session(id)?;
            (s.req, s.geo.expect("geo chosen before request arrives"))
        };
        self.record(t, id, "geo_request_received", json!({ "geo": geo_id }));
        let gs_a = self.station(req.from)?.clone();
        let gs_b = self.station(req.to)?.clone();
        let leos: Vec<Satellite> = self
            .satellites
            .values()
            .filter(|s| s.tier == Tier::Leo)
            .cloned()
            .collect();
        let Some(leo_id) = select_leo(&leos, &gs_a, &gs_b, t, &self.cfg.view) else {
            return self.fail(id, FailureReason::NoSatellite, t);
        };
        self.transition(id, SessionState::Coordinating { geo_id }, t)?;
        let leo = self.satellite(leo_id)?.clone();
        let geo = self.satellite(geo_id)?;
        let delay = radio_delay((satellite_position(geo, t) - satellite_position(&leo, t)).norm());
        q.schedule(t + delay, Msg::CommandAtLeo { session: id })?;
        self.session_mut(id)?.leo = Some(leo_id);
        let view = self.cfg.view;
        self.record(
            t,
            id,
            "leo_selected",
            json!({
                "leo": leo_id,
                "elevation_a_rad": view.elevation_of(&leo, &gs_a, t),
                "elevation_b_rad": view.elevation_of(&leo, &gs_b, t),
                "command_delay_s": delay,
            }),
        );
        Ok(())
    }

    fn downlink_arms(
        &self,
        leo: &Satellite,
        gs_a: &GroundStation,
        gs_b: &GroundStation,
        t: f64,
    ) -> Result<[(DownlinkGaussianTail, f64); 2], ProtoError> {
        let p = &self.cfg.protocol;
        let beam =
            BeamParams::new(leo.aperture_radius, p.wavelength).map_err(|e| ProtoError::Channel(e.to_string()))?;
        let arm = |gs: &GroundStation| {
            let range = self.cfg.view.slant_range(leo, gs, t);
            let eta0 = diffraction_transmittance(&beam, gs.aperture_radius, range);
            (DownlinkGaussianTail { eta0, b: p.downlink_b }, radio_delay(range))
        };
        Ok([arm(gs_a), arm(gs_b)])
    }

    /// The LEO acknowledges the command and starts emitting.
    fn start_distribution(&mut self, q: &mut EventQueue<Msg>, id: SessionId, t: f64) -> Result<(), ProtoError> {
        let (req, leo_id) = {
            let s = self.session(id)?;
            (s.req, s.leo.expect("leo chosen before command"))
        };
        let pairs_target = self.cfg.protocol.pairs_target;
        self.transition(id, SessionState::Distributing { leo_id, pairs_target }, t)?;
        self.record(t, id, "leo_ack", json!({ "leo": leo_id }));

        let leo = self.satellite(leo_id)?.clone();
        let gs_a = self.station(req.from)?.clone();
        let gs_b = self.station(req.to)?.clone();
        let [(arm_a, _), (arm_b, _)] = self.downlink_arms(&leo, &gs_a, &gs_b, t)?;
        let (yield_rate, std_error) = match self.cfg.protocol.yield_setting {
            YieldSetting::Fixed(y) => (y, 0.0),
            YieldSetting::ProductChannelMean { samples } => {
                let mut rng = stream(self.cfg.seed, StreamKey::new(tags::YIELD, id, 0));
                let est = mean_product_rate(&arm_a, &arm_b, samples.max(1), &mut rng)
                    .map_err(|e| ProtoError::Channel(e.to_string()))?;
                (est.mean.min(1.0), est.std_error)
            }
        };
        let policy = DistillationPolicy::new(self.cfg.protocol.rounds, yield_rate)?;
        self.session_mut(id)?.policy = Some(policy);
        self.record(
            t,
            id,
            "yield_estimated",
            json!({
                "yield_rate": yield_rate,
                "std_error": std_error,
                "eta0_a": arm_a.eta0.value(),
                "eta0_b": arm_b.eta0.value(),
            }),
        );
        if pairs_target == 0 {
            self.session_mut(id)?.emission_done = true;
            return self.finish_distribution(q, id, t);
        }
        q.schedule(
            t,
            Msg::EmitBatch {
                session: id,
                next_attempt: 0,
            },
        )?;
        Ok(())
    }

    /// Step 3: one burst of pair emissions down both arms.
    fn emit_batch(&mut self, q: &mut EventQueue<Msg>, id: SessionId, next: u64, t: f64) -> Result<(), ProtoError> {
        let (req, leo_id) = {
            let s = self.session(id)?;
            (s.req, s.leo.expect("leo chosen"))
        };
        let leo = self.satellite(leo_id)?.clone();
        let gs_a = self.station(req.from)?.clone();
        let gs_b = self.station(req.to)?.clone();
        let view = self.cfg.view;
        if !(view.is_visible(&leo, &gs_a, t) && view.is_visible(&leo, &gs_b, t)) {
            let s = self.session_mut(id)?;
            s.link_lost = true;
            s.emission_done = true;
            let in_flight = s.in_flight;
            self.record(t, id, "link_lost", json!({ "leo": leo_id, "attempted": next }));
            if in_flight == 0 {
                return self.finish_distribution(q, id, t);
            }
            return Ok(());
        }
        let [(arm_a, delay_a), (arm_b, delay_b)] = self.downlink_arms(&leo, &gs_a, &gs_b, t)?;
        let p = self.cfg.protocol.clone();
        let count = p.batch_size.min(p.pairs_target - next);
        let s = self.session_mut(id)?;
        let batch = leo_distribute(&arm_a, &arm_b, delay_a, delay_b, count, t, p.source_rate_hz, &mut s.rng);
        s.attempted += count;
        s.survived += batch.created_at.len() as u64;
        s.expected_survivors += batch.expected_survivors;
        s.survivor_variance += batch.survivor_variance;
        s.in_flight += 1;
        let arrival = t + (count - 1) as f64 / p.source_rate_hz + delay_a.max(delay_b);
        let survivors = batch.created_at.len();
        q.schedule(
            arrival,
            Msg::PairsArrive {
                session: id,
                created_at: batch.created_at,
            },
        )?;
        let following = next + count;
        if following < p.pairs_target {
            q.schedule(
                t + count as f64 / p.source_rate_hz,
                Msg::EmitBatch {
                    session: id,
                    next_attempt: following,
                },
            )?;
        } else {
            s.emission_done = true;
        }
        self.record(
            t,
            id,
            "distribution_batch",
            json!({
                "attempts": count,
                "survivors": survivors,
                "expected_survivors": batch.expected_survivors,
                "arrival_t": arrival,
            }),
        );
        Ok(())
    }

    fn pairs_arrive(
        &mut self,
        q: &mut EventQueue<Msg>,
        id: SessionId,
        created_at: Vec<f64>,
        t: f64,
    ) -> Result<(), ProtoError> {
        let s = self.session_mut(id)?;
        s.in_flight -= 1;
        let mut stored = 0u64;
        for c in &created_at {
            if s.pool.deposit_raw(*c).is_some() {
                stored += 1;
            }
        }
        let dropped = created_at.len() as u64 - stored;
        s.deposited += stored;
        s.dropped += dropped;
        let pool_size = s.pool.len();
        let finished = s.emission_done && s.in_flight == 0;
        self.record(
            t,
            id,
            "pairs_deposited",
            json!({ "count": stored, "dropped": dropped, "pool_size": pool_size }),
        );
        if finished {
            self.finish_distribution(q, id, t)?;
        }
        Ok(())
    }

    fn finish_distribution(&mut self, q: &mut EventQueue<Msg>, id: SessionId, t: f64) -> Result<(), ProtoError> {
        let (req, link_lost, attempted, survived, deposited) = {
            let s = self.session(id)?;
            (s.req, s.link_lost, s.attempted, s.survived, s.deposited)
        };
        self.record(
            t,
            id,
            "distribution_complete",
            json!({
                "attempted": attempted,
                "survived": survived,
                "deposited": deposited,
                "link_lost": link_lost,
            }),
        );
        if link_lost && deposited < self.cfg.protocol.min_raw_pairs {
            return self.fail(id, FailureReason::LinkLost, t);
        }
        let rounds = self.cfg.protocol.rounds;
        self.transition(
            id,
            SessionState::Distilling {
                raw_count: deposited,
                rounds_remaining: rounds,
            },
            t,
        )?;
        // step 4 runs over the direct ground-to-ground radio path
        let chord = {
            let a = self.station(req.from)?;
            let b = self.station(req.to)?;
            (self.station_pos(a, t) - self.station_pos(b, t)).norm()
        };
        let rtt = 2.0 * radio_delay(chord);
        let s = self.session_mut(id)?;
        s.distill_start = t;
        s.round_trip = rtt;
        q.schedule(t + rtt, Msg::DistillRound { session: id, round: 1 })?;
        Ok(())
    }

    fn distill_round(&mut self, q: &mut EventQueue<Msg>, id: SessionId, round: u32, t: f64) -> Result<(), ProtoError> {
        let s = self.session_mut(id)?;
        let remaining = match &mut s.state {
            SessionState::Distilling { rounds_remaining, .. } => {
                *rounds_remaining -= 1;
                *rounds_remaining
            }
            other => {
                return Err(ProtoError::IllegalTransition {
                    from: other.name(),
                    to: "Distilling",
                })
            }
        };
        let (start, rtt) = (s.distill_start, s.round_trip);
        self.record(
            t,
            id,
            "distill_round",
            json!({ "round": round, "rounds_remaining": remaining }),
        );
        if remaining > 0 {
            q.schedule(
                start + (round + 1) as f64 * rtt,
                Msg::DistillRound {
                    session: id,
                    round: round + 1,
                },
            )?;
            return Ok(());
        }

        let s = self.session_mut(id)?;
        let policy = s.policy.expect("policy fixed at distribution start");
        let outcome = distill(&mut s.pool, &policy, start, rtt);
        match outcome {
            Err(ProtoError::InsufficientEntanglement { raw_valid, .. }) => {
                s.raw_valid = raw_valid;
                self.record(
                    t,
                    id,
                    "distilled",
                    json!({ "raw_valid": raw_valid, "distilled": 0, "yield_rate": policy.yield_rate }),
                );
                self.fail(id, FailureReason::InsufficientEntanglement, t)
            }
            Err(e) => Err(e),
            Ok(out) => {
                s.raw_valid = out.raw_valid;
                s.distilled = out.distilled;
                self.record(
                    t,
                    id,
                    "distilled",
                    json!({
                        "raw_valid": out.raw_valid,
                        "distilled": out.distilled,
                        "yield_rate": policy.yield_rate,
                        "created_at": out.completed_at,
                    }),
                );
                self.teleport_step(q, id, t)
            }
        }
    }

    /// Step 5: teleport the requested qubits from `from` to `to`.
    fn teleport_step(&mut self, q: &mut EventQueue<Msg>, id: SessionId, t: f64) -> Result<(), ProtoError> {
        let req = self.session(id)?.req;
        self.transition(
            id,
            SessionState::Teleporting {
                qubits_remaining: req.qubits,
            },
            t,
        )?;
        let delay = {
            let a = self.station(req.from)?;
            let b = self.station(req.to)?;
            radio_delay((self.station_pos(a, t) - self.station_pos(b, t)).norm())
        };
        let s = self.session_mut(id)?;
        let out = teleport(&mut s.pool, req.qubits, t, delay);
        s.consumed += out.consumed.len() as u64;
        let oldest = out.consumed.iter().map(|e| e.created_at).fold(f64::INFINITY, f64::min);
        for e in &out.consumed {
            s.max_consumed_age = s.max_consumed_age.max(t - e.created_at);
        }
        let coherence = s.pool.coherence_time;
        self.record(
            t,
            id,
            "teleport",
            json!({
                "requested": req.qubits,
                "ebits_consumed": out.consumed.len(),
                "classical_bits": out.classical_bits,
                "oldest_ebit_created_at": if oldest.is_finite() { json!(oldest) } else { json!(null) },
                "coherence_time": coherence,
                "arrival_t": out.arrival_time,
            }),
        );
        if out.delivered == 0 {
            return self.fail(id, FailureReason::InsufficientEntanglement, t);
        }
        q.schedule(
            out.arrival_time,
            Msg::TeleportDelivered {
                session: id,
                qubits: out.delivered,
            },
        )?;
        Ok(())
    }

    fn teleport_delivered(&mut self, id: SessionId, qubits: u64, t: f64) -> Result<(), ProtoError> {
        let s = self.session_mut(id)?;
        s.delivered += qubits;
        let requested = s.req.qubits;
        self.record(t, id, "qubits_delivered", json!({ "qubits": qubits }));
        if qubits >= requested {
            self.transition(
                id,
                SessionState::Done {
                    qubits_delivered: qubits,
                },
                t,
            )
        } else {
            self.fail(id, FailureReason::InsufficientEntanglement, t)
        }
    }
}

fn report(s: &Session) -> SessionReport {
    SessionReport {
        id: s.id,
        from: s.req.from,
        to: s.req.to,
        qubits_requested: s.req.qubits,
        final_state: s.state.name(),
        failure: match s.state {
            SessionState::Failed { reason } => Some(reason),
            _ => None,
        },
        history: s.history.clone(),
        geo: s.geo,
        leo: s.leo,
        yield_rate: s.policy.map(|p| p.yield_rate),
        coherence_time: s.pool.coherence_time,
        pairs_attempted: s.attempted,
        pairs_survived: s.survived,
        pairs_deposited: s.deposited,
        pairs_dropped: s.dropped,
        expected_survivors: s.expected_survivors,
        survivor_variance: s.survivor_variance,
        raw_valid: s.raw_valid,
        distilled: s.distilled,
        ebits_consumed: s.consumed,
        qubits_delivered: s.delivered,
        max_consumed_age: s.max_consumed_age,
    }
}
