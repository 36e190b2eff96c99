//! Discrete-time microscopic simulation: insertion, car-following, signal
//! control, zipper-merge arbitration, and per-vehicle accumulators.
//!
//! A single simulation is strictly sequential and fully deterministic for a
//! fixed (network, schedule, parameters) triple; vehicles, edges and queues
//! are always iterated in a fixed order and all randomness is seeded.

pub mod following;
pub mod merge;
pub mod signal;

pub use following::{commanded_speed, krauss_safe_speed, CarFollowingParams};
pub use merge::{GateState, MergeGate};
pub use signal::{ApproachingVehicle, SignalController, SignalEvent, Stage};

use crate::demand::{Arrival, ArrivalSchedule};
use crate::energy::{accumulate, EnergyLedger, EvParams};
use crate::geom::Vec2;
use crate::metrics::{
    progress_rate_sample, speed_deviation_sample, HaltTracker, RunSeries, SeriesRow, TripRecord,
    HALT_SPEED, HALT_WINDOW,
};
use crate::net::{ConnIdx, EdgeIdx, RoadNetwork, RouteCache, RouteError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap, VecDeque};
use std::sync::Arc;
use thiserror::Error;

/// RNG stream for the σ speed perturbation.
const STREAM_DAWDLE: u64 = 10;
/// RNG stream for the trajectory-logging vehicle sample.
const STREAM_SAMPLE: u64 = 11;

/// Blocked vehicles hold this far short of a stop line, so a stopped
/// vehicle never drifts onto the line itself.
const STOP_LINE_MARGIN: f64 = 0.5;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("route planning failed: {0}")]
    Route(#[from] RouteError),
    #[error("internal consistency violation: {0}")]
    Inconsistent(String),
}

/// Engine parameters for one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimParams {
    pub cf: CarFollowingParams,
    pub ev: EvParams,
    /// Step length, s.
    pub dt: f64,
    /// Simulation horizon, s.
    pub duration: f64,
    /// Seed for the engine's own random streams (dawdling, log sampling).
    pub seed: u64,
    /// Size of the seeded vehicle sample that gets trajectory logging.
    pub log_sample: u32,
    /// Capture per-step trajectory rows for the sampled vehicles.
    pub record_trajectories: bool,
    /// Capture discrete events (insertions, merge crossings) for tests.
    pub record_events: bool,
    /// Re-plan routes against congestion-weighted costs at every edge
    /// transition. Experimental; off by default.
    pub dynamic_rerouting: bool,
    /// Halting speed threshold, m/s.
    pub halt_speed: f64,
    /// Minimum time below the halting speed that counts as a halt, s.
    pub halt_window: f64,
}

impl Default for SimParams {
    fn default() -> Self {
        SimParams {
            cf: CarFollowingParams::default(),
            ev: EvParams::default(),
            dt: 1.0,
            duration: 3600.0,
            seed: 0,
            log_sample: 1000,
            record_trajectories: false,
            record_events: false,
            dynamic_rerouting: false,
            halt_speed: HALT_SPEED,
            halt_window: HALT_WINDOW,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopCause {
    Signal,
    Queue,
    Merge,
}

/// A contiguous interval a vehicle spent stopped, tagged by what stopped it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StopInterval {
    pub vehicle: u32,
    pub start: f64,
    pub end: f64,
    pub cause: StopCause,
}

/// One completed green stage.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GreenRecord {
    pub signal: u32,
    pub phase: usize,
    pub end_time: f64,
    pub duration: f64,
    pub nominal: f64,
}

/// One green prolongation decision together with its justification.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProlongRecord {
    pub signal: u32,
    pub phase: usize,
    pub time: f64,
    pub max_time_loss: f64,
}

/// Per-step state of a sampled vehicle: position at the start of the step
/// and the speed/acceleration applied during it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub step: u64,
    pub vehicle: u32,
    pub edge: u32,
    pub offset: f64,
    pub speed: f64,
    pub accel: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SimEvent {
    Inserted { time: f64, vehicle: u32, edge: EdgeIdx },
    MergeCrossed { time: f64, zone: u32, lane: u8, vehicle: u32 },
}

/// Safety and bound counters maintained every step.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Audit {
    /// Same-lane bumper-gap violations (< 0) observed.
    pub negative_gap_events: u64,
    /// Smallest same-lane bumper gap seen, m.
    pub min_bumper_gap: f64,
    /// Largest |Δv|/dt beyond max(max_accel, max_decel) seen, m/s².
    pub worst_accel_excess: f64,
    /// Longest green stage seen, s.
    pub max_green_observed: f64,
    /// Total vehicle-steps simulated.
    pub vehicle_steps: u64,
}

impl Default for Audit {
    fn default() -> Self {
        Audit {
            negative_gap_events: 0,
            min_bumper_gap: f64::INFINITY,
            worst_accel_excess: 0.0,
            max_green_observed: 0.0,
            vehicle_steps: 0,
        }
    }
}

/// Everything a finished run produces.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub trips: Vec<TripRecord>,
    pub series: RunSeries,
    pub stops: Vec<StopInterval>,
    pub greens: Vec<GreenRecord>,
    pub prolongs: Vec<ProlongRecord>,
    pub trajectories: Vec<TrajectoryRow>,
    pub events: Vec<SimEvent>,
    pub audit: Audit,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum VehState {
    Queued,
    Active,
    Done,
}

struct Vehicle {
    id: u32,
    route: Arc<crate::net::Route>,
    cursor: usize,
    edge: EdgeIdx,
    lane: u8,
    /// Front-bumper offset along the current edge, m.
    offset: f64,
    speed: f64,
    accel: f64,
    spawn_time: f64,
    insert_time: Option<f64>,
    odometer: f64,
    time_loss: f64,
    rho_sum: f64,
    dv_sum: f64,
    steps_on_network: u32,
    halt: HaltTracker,
    ledger: EnergyLedger,
    /// Connection this vehicle may take through yellow because it could not
    /// stop when the green ended.
    committed: Option<ConnIdx>,
    stop_since: Option<(f64, StopCause)>,
    dest_point: Vec2,
    state: VehState,
    moved_stamp: u64,
    sampled: bool,
}

/// What limits a vehicle's speed this step.
struct Constraint {
    bound: f64,
    cause: Option<StopCause>,
}

impl Constraint {
    fn none() -> Self {
        Constraint { bound: f64::INFINITY, cause: None }
    }

    fn tighten(&mut self, bound: f64, cause: Option<StopCause>) {
        if bound < self.bound {
            self.bound = bound;
            self.cause = cause;
        }
    }
}

#[derive(Clone, Copy)]
struct Claim {
    /// How far the claimant's front will reach past the target edge's start.
    front_penetration: f64,
    speed: f64,
}

/// One microscopic simulation instance.
pub struct Simulation<'n> {
    net: &'n RoadNetwork,
    params: SimParams,
    clock: f64,
    step_no: u64,
    vehicles: Vec<Vehicle>,
    /// Per-edge, per-lane vehicle queues ordered front (highest offset) to
    /// back.
    occupancy: Vec<Vec<VecDeque<u32>>>,
    schedule: Vec<Arrival>,
    next_arrival: usize,
    origin_queues: BTreeMap<EdgeIdx, VecDeque<u32>>,
    queued_count: u32,
    active_count: u32,
    completed_count: u32,
    controllers: Vec<SignalController>,
    gates: Vec<MergeGate>,
    routes: RouteCache,
    rng_dawdle: ChaCha8Rng,
    sampled_arrivals: Vec<bool>,
    // Outputs.
    series_rows: Vec<SeriesRow>,
    trips: Vec<TripRecord>,
    stops: Vec<StopInterval>,
    greens: Vec<GreenRecord>,
    prolongs: Vec<ProlongRecord>,
    trajectories: Vec<TrajectoryRow>,
    events: Vec<SimEvent>,
    audit: Audit,
    // Per-step scratch buffers.
    new_speeds: Vec<f64>,
    step_causes: Vec<Option<StopCause>>,
    target_lanes: Vec<u8>,
    claims: HashMap<(EdgeIdx, u8), Claim>,
    signal_scratch: Vec<SignalEvent>,
    queue_scratch: Vec<u32>,
}

impl<'n> Simulation<'n> {
    pub fn new(
        net: &'n RoadNetwork,
        schedule: &ArrivalSchedule,
        params: SimParams,
    ) -> Result<Self, SimError> {
        assert!(params.dt > 0.0, "dt must be positive");
        let occupancy = net
            .edges
            .iter()
            .map(|e| (0..e.lane_count.max(1)).map(|_| VecDeque::new()).collect())
            .collect();
        let mut sample_rng = ChaCha8Rng::seed_from_u64(params.seed);
        sample_rng.set_stream(STREAM_SAMPLE);
        let sampled_arrivals =
            sample_indices(schedule.arrivals.len(), params.log_sample as usize, &mut sample_rng);
        let mut dawdle = ChaCha8Rng::seed_from_u64(params.seed);
        dawdle.set_stream(STREAM_DAWDLE);
        Ok(Simulation {
            net,
            clock: 0.0,
            step_no: 0,
            vehicles: Vec::with_capacity(schedule.arrivals.len()),
            occupancy,
            schedule: schedule.arrivals.clone(),
            next_arrival: 0,
            origin_queues: BTreeMap::new(),
            queued_count: 0,
            active_count: 0,
            completed_count: 0,
            controllers: vec![SignalController::new(); net.signals.len()],
            gates: vec![MergeGate::new(); net.merge_zones.len()],
            routes: RouteCache::new(),
            rng_dawdle: dawdle,
            sampled_arrivals,
            series_rows: Vec::new(),
            trips: Vec::new(),
            stops: Vec::new(),
            greens: Vec::new(),
            prolongs: Vec::new(),
            trajectories: Vec::new(),
            events: Vec::new(),
            audit: Audit::default(),
            new_speeds: Vec::new(),
            step_causes: Vec::new(),
            target_lanes: Vec::new(),
            claims: HashMap::new(),
            signal_scratch: Vec::new(),
            queue_scratch: Vec::new(),
            params,
        })
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn active_count(&self) -> u32 {
        self.active_count
    }

    pub fn queued_count(&self) -> u32 {
        self.queued_count
    }

    pub fn completed_count(&self) -> u32 {
        self.completed_count
    }

    /// Run the whole horizon and consume the simulation.
    pub fn run(mut self) -> Result<RunOutput, SimError> {
        let steps = (self.params.duration / self.params.dt).round() as u64;
        for _ in 0..steps {
            self.step()?;
        }
        Ok(self.finish())
    }

    /// Advance the simulation by one step of `params.dt` seconds.
    pub fn step(&mut self) -> Result<(), SimError> {
        let dt = self.params.dt;
        let inserted = self.process_insertions()?;
        self.update_signals(dt);
        self.update_gates(dt);
        self.decide_speeds(dt);
        let completed = self.integrate(dt)?;
        self.step_no += 1;
        self.clock += dt;
        self.series_rows.push(SeriesRow {
            step: self.step_no,
            time: self.clock,
            present: self.active_count,
            inserted,
            completed,
            queued: self.queued_count,
        });
        debug_assert_eq!(
            self.vehicles.len() as u32,
            self.active_count + self.completed_count + self.queued_count,
            "vehicle conservation violated at step {}",
            self.step_no
        );
        Ok(())
    }

    /// Flush unfinished vehicles into trip records and assemble the output.
    pub fn finish(mut self) -> RunOutput {
        let horizon = self.clock;
        for vid in 0..self.vehicles.len() {
            if self.vehicles[vid].state != VehState::Done {
                self.close_stop(vid as u32, horizon);
                let v = &self.vehicles[vid];
                let record = trip_record(v, horizon, None, self.params.halt_window);
                self.trips.push(record);
            }
        }
        self.trips.sort_by_key(|t| t.vehicle);
        RunOutput {
            trips: self.trips,
            series: RunSeries { dt: self.params.dt, rows: self.series_rows },
            stops: self.stops,
            greens: self.greens,
            prolongs: self.prolongs,
            trajectories: self.trajectories,
            events: self.events,
            audit: self.audit,
        }
    }

    // ------------------------------------------------------------------
    // Insertion
    // ------------------------------------------------------------------

    fn process_insertions(&mut self) -> Result<u32, SimError> {
        // Spawn arrivals that are due into their origin queues.
        while self.next_arrival < self.schedule.len()
            && self.schedule[self.next_arrival].time <= self.clock + 1e-9
        {
            let arrival = self.schedule[self.next_arrival];
            let route = self.routes.route(self.net, arrival.origin, arrival.dest)?;
            let dest_point = self.net.edge(route.dest()).end_point();
            let id = self.vehicles.len() as u32;
            self.vehicles.push(Vehicle {
                id,
                route,
                cursor: 0,
                edge: arrival.origin,
                lane: 0,
                offset: 0.0,
                speed: 0.0,
                accel: 0.0,
                spawn_time: arrival.time,
                insert_time: None,
                odometer: 0.0,
                time_loss: 0.0,
                rho_sum: 0.0,
                dv_sum: 0.0,
                steps_on_network: 0,
                halt: HaltTracker::default(),
                ledger: EnergyLedger::default(),
                committed: None,
                stop_since: None,
                dest_point,
                state: VehState::Queued,
                moved_stamp: 0,
                sampled: self.sampled_arrivals[self.next_arrival],
            });
            self.origin_queues.entry(arrival.origin).or_default().push_back(id);
            self.queued_count += 1;
            self.next_arrival += 1;
        }

        // Drain origin queues FIFO while insertion is feasible.
        let mut inserted = 0;
        let edges: Vec<EdgeIdx> = self.origin_queues.keys().copied().collect();
        for edge in edges {
            loop {
                let front = self.origin_queues.get(&edge).and_then(|q| q.front().copied());
                let Some(vid) = front else { break };
                if let Some(speed) = self.insertion_speed(vid) {
                    self.origin_queues.get_mut(&edge).unwrap().pop_front();
                    let lane = self.entry_lane(edge);
                    let v = &mut self.vehicles[vid as usize];
                    v.state = VehState::Active;
                    v.lane = lane;
                    v.speed = speed;
                    v.insert_time = Some(self.clock);
                    self.occupancy[edge.index()][lane as usize].push_back(vid);
                    self.queued_count -= 1;
                    self.active_count += 1;
                    inserted += 1;
                    if self.params.record_events {
                        self.events.push(SimEvent::Inserted {
                            time: self.clock,
                            vehicle: vid,
                            edge,
                        });
                    }
                } else {
                    break;
                }
            }
        }
        self.origin_queues.retain(|_, q| !q.is_empty());
        Ok(inserted)
    }

    /// Insertion feasibility: the origin edge's tail must leave at least the
    /// minimum gap, and the insertion speed is the speed limit capped by
    /// every constraint visible from the edge start.
    fn insertion_speed(&self, vid: u32) -> Option<f64> {
        let cf = self.params.cf;
        let v = &self.vehicles[vid as usize];
        let edge = self.net.edge(v.edge);
        let lane = self.entry_lane(v.edge);
        let mut speed = edge.speed_limit;
        if let Some(&tail) = self.occupancy[v.edge.index()][lane as usize].back() {
            let tv = &self.vehicles[tail as usize];
            let gap = tv.offset - cf.vehicle_length;
            if gap < cf.min_gap + 0.1 {
                return None;
            }
            speed = speed.min(krauss_safe_speed(
                tv.speed,
                gap - cf.min_gap,
                edge.speed_limit,
                &cf,
            ));
        } else {
            let constraint = self.head_constraints(v, edge.speed_limit, lane);
            speed = speed.min(constraint.bound);
        }
        if speed < 0.0 {
            return None;
        }
        Some(speed.min(edge.speed_limit).max(0.0))
    }

    /// Lane a vehicle entering `edge` will use: the lane with the most space
    /// behind its tail vehicle, ties to the lowest index.
    fn entry_lane(&self, edge: EdgeIdx) -> u8 {
        let lanes = &self.occupancy[edge.index()];
        if lanes.len() == 1 {
            return 0;
        }
        let mut best = 0u8;
        let mut best_space = f64::NEG_INFINITY;
        for (i, q) in lanes.iter().enumerate() {
            let space = match q.back() {
                None => f64::INFINITY,
                Some(&tail) => self.vehicles[tail as usize].offset,
            };
            if space > best_space {
                best_space = space;
                best = i as u8;
            }
        }
        best
    }

    // ------------------------------------------------------------------
    // Signals
    // ------------------------------------------------------------------

    fn update_signals(&mut self, dt: f64) {
        let net = self.net;
        for ci in 0..self.controllers.len() {
            let spec = &net.signals[ci];
            let approaching = if spec.mode == crate::net::SignalMode::Adaptive
                && self.controllers[ci].stage == Stage::Green
            {
                self.approaching_vehicles(ci)
            } else {
                Vec::new()
            };
            let mut events = std::mem::take(&mut self.signal_scratch);
            events.clear();
            self.controllers[ci].update(spec, &approaching, dt, &mut events);
            for event in events.drain(..) {
                match event {
                    SignalEvent::GreenEnded { phase, duration, nominal } => {
                        self.greens.push(GreenRecord {
                            signal: ci as u32,
                            phase,
                            end_time: self.clock,
                            duration,
                            nominal,
                        });
                        self.audit.max_green_observed =
                            self.audit.max_green_observed.max(duration);
                        self.commit_vehicles(ci, phase, dt);
                    }
                    SignalEvent::Prolonged { phase, max_time_loss } => {
                        self.prolongs.push(ProlongRecord {
                            signal: ci as u32,
                            phase,
                            time: self.clock,
                            max_time_loss,
                        });
                    }
                }
            }
            self.signal_scratch = events;
        }
    }

    /// Vehicles within detector range upstream of the current phase's stop
    /// lines, with their distance to the line.
    fn approaching_vehicles(&self, ci: usize) -> Vec<ApproachingVehicle> {
        let spec = &self.net.signals[ci];
        let phase = &spec.phases[self.controllers[ci].phase];
        let mut in_edges: Vec<EdgeIdx> = Vec::new();
        for &m in &phase.movements {
            let from = self.net.connection(m).from;
            if !in_edges.contains(&from) {
                in_edges.push(from);
            }
        }
        let mut out = Vec::new();
        for &e in &in_edges {
            let len = self.net.edge(e).length;
            for lane in &self.occupancy[e.index()] {
                for &vid in lane {
                    let v = &self.vehicles[vid as usize];
                    let distance = len - v.offset;
                    if distance <= spec.detector_range {
                        out.push(ApproachingVehicle { time_loss: v.time_loss, distance });
                    }
                }
            }
            // One level upstream covers detector ranges longer than the
            // approach edge itself.
            for &c in self.net.in_connections(e) {
                let pred = self.net.connection(c).from;
                let pred_len = self.net.edge(pred).length;
                for lane in &self.occupancy[pred.index()] {
                    for &vid in lane {
                        let v = &self.vehicles[vid as usize];
                        if v.next_connection(self.net) != Some(c) {
                            continue;
                        }
                        let distance = (pred_len - v.offset) + len;
                        if distance <= spec.detector_range {
                            out.push(ApproachingVehicle { time_loss: v.time_loss, distance });
                        }
                    }
                }
            }
        }
        out
    }

    /// At yellow onset, vehicles that can no longer stop before the line
    /// keep their right of way through yellow and all-red.
    fn commit_vehicles(&mut self, ci: usize, ended_phase: usize, dt: f64) {
        let cf = self.params.cf;
        let spec = &self.net.signals[ci];
        for &m in &spec.phases[ended_phase].movements {
            let from = self.net.connection(m).from;
            let len = self.net.edge(from).length;
            for lane in &self.occupancy[from.index()] {
                for &vid in lane {
                    let v = &self.vehicles[vid as usize];
                    if v.next_connection(self.net) != Some(m) {
                        continue;
                    }
                    let dist = len - v.offset;
                    if dist < v.speed * dt + v.speed * v.speed / (2.0 * cf.max_decel) {
                        self.vehicles[vid as usize].committed = Some(m);
                    }
                }
            }
        }
    }

    // ------------------------------------------------------------------
    // Merge gates
    // ------------------------------------------------------------------

    fn update_gates(&mut self, dt: f64) {
        for (zi, zone) in self.net.merge_zones.iter().enumerate() {
            let mut candidates = [None, None];
            for (i, &entry) in zone.entries.iter().enumerate() {
                // Head vehicle over all lanes of the entry edge.
                let mut head: Option<u32> = None;
                let mut head_offset = f64::NEG_INFINITY;
                for lane in &self.occupancy[entry.index()] {
                    if let Some(&vid) = lane.front() {
                        let off = self.vehicles[vid as usize].offset;
                        if off > head_offset {
                            head_offset = off;
                            head = Some(vid);
                        }
                    }
                }
                if let Some(vid) = head {
                    let v = &self.vehicles[vid as usize];
                    // Vehicles completing on the entry edge never cross.
                    if v.cursor + 1 < v.route.edges.len() {
                        let dist = self.net.edge(entry).length - v.offset;
                        if dist <= v.speed * dt + 2.0 {
                            candidates[i] = Some(vid);
                        }
                    }
                }
            }
            self.gates[zi].decide(candidates);
        }
    }

    // ------------------------------------------------------------------
    // Speed decisions
    // ------------------------------------------------------------------

    fn decide_speeds(&mut self, dt: f64) {
        let cf = self.params.cf;
        let mut speeds = std::mem::take(&mut self.new_speeds);
        let mut causes = std::mem::take(&mut self.step_causes);
        let mut lanes_out = std::mem::take(&mut self.target_lanes);
        let mut claims = std::mem::take(&mut self.claims);
        speeds.clear();
        speeds.resize(self.vehicles.len(), 0.0);
        causes.clear();
        causes.resize(self.vehicles.len(), None);
        lanes_out.clear();
        lanes_out.resize(self.vehicles.len(), 0);
        claims.clear();

        for e in 0..self.net.edge_count() {
            for lane in 0..self.occupancy[e].len() {
                let mut prev: Option<u32> = None;
                for qi in 0..self.occupancy[e][lane].len() {
                    let vid = self.occupancy[e][lane][qi];
                    let v = &self.vehicles[vid as usize];
                    let edge = self.net.edge(v.edge);
                    let mut constraint = Constraint::none();
                    match prev {
                        Some(pv) => {
                            let lv = &self.vehicles[pv as usize];
                            let gap = (lv.offset - cf.vehicle_length) - v.offset;
                            constraint.tighten(
                                krauss_safe_speed(
                                    lv.speed,
                                    (gap - cf.min_gap).max(0.0),
                                    v.speed,
                                    &cf,
                                ),
                                Some(StopCause::Queue),
                            );
                        }
                        None => {
                            let head = self.head_constraints_with_claims(
                                v,
                                v.speed,
                                &claims,
                                &mut lanes_out,
                            );
                            constraint.tighten(head.bound, head.cause);
                        }
                    }
                    let mut vn = commanded_speed(
                        constraint.bound,
                        v.speed,
                        edge.speed_limit,
                        &cf,
                        dt,
                    );
                    // Deceleration capability bound.
                    vn = vn.max(v.speed - cf.max_decel * dt).max(0.0);
                    if cf.sigma > 0.0 {
                        let u: f64 = self.rng_dawdle.gen();
                        vn = (vn - cf.sigma * cf.max_accel * dt * u).max(0.0);
                    }
                    // Hard positional cap against the in-lane leader's
                    // already-decided motion; binding only in anomalies.
                    if let Some(pv) = prev {
                        let lv = &self.vehicles[pv as usize];
                        let gap_old = (lv.offset - cf.vehicle_length) - v.offset;
                        let keep = cf.min_gap.min(gap_old).max(0.0);
                        let leader_new_front = lv.offset + speeds[pv as usize] * dt;
                        let max_disp =
                            leader_new_front - cf.vehicle_length - keep - v.offset;
                        vn = vn.min((max_disp / dt).max(0.0));
                    }
                    speeds[vid as usize] = vn;
                    causes[vid as usize] = constraint.cause;
                    // Claim the landing spot if this motion crosses over.
                    if v.cursor + 1 < v.route.edges.len() {
                        let pen = v.offset + vn * dt - edge.length;
                        if pen > 0.0 {
                            let next = v.route.edges[v.cursor + 1];
                            let tl = lanes_out[vid as usize];
                            claims.insert(
                                (next, tl),
                                Claim { front_penetration: pen, speed: vn },
                            );
                        }
                    }
                    prev = Some(vid);
                }
            }
        }

        self.new_speeds = speeds;
        self.step_causes = causes;
        self.target_lanes = lanes_out;
        self.claims = claims;
    }

    fn head_constraints(&self, v: &Vehicle, speed: f64, lane_hint: u8) -> Constraint {
        let mut lanes = vec![lane_hint; self.vehicles.len().max(v.id as usize + 1)];
        self.head_constraints_with_claims(v, speed, &HashMap::new(), &mut lanes)
    }

    /// Scan ahead of a lane-head vehicle along its route: signal stop lines,
    /// merge gates, claimed landing spots, queue tails on upcoming edges and
    /// slower speed limits, up to the braking horizon.
    fn head_constraints_with_claims(
        &self,
        v: &Vehicle,
        speed: f64,
        claims: &HashMap<(EdgeIdx, u8), Claim>,
        lanes_out: &mut [u8],
    ) -> Constraint {
        let cf = self.params.cf;
        let dt = self.params.dt;
        let mut constraint = Constraint::none();
        let mut dist = self.net.edge(v.edge).length - v.offset;
        let horizon = speed * (cf.headway + dt) + speed * speed / (2.0 * cf.max_decel) + 15.0;
        let mut k = v.cursor;
        loop {
            if k + 1 >= v.route.edges.len() {
                break;
            }
            let cur = v.route.edges[k];
            let next = v.route.edges[k + 1];
            let conn = self
                .net
                .connection_between(cur, next)
                .expect("consecutive route edges are graph-adjacent");
            // Vehicles that can still stop obey closed signals and gates;
            // those that cannot are committed through.
            let can_stop = dist >= speed * dt + speed * speed / (2.0 * cf.max_decel) - 1e-9;
            if let Some(sm) = self.net.signal_for(conn) {
                let open = (self.controllers[sm.signal as usize].open_mask() & sm.phase_mask)
                    != 0
                    || v.committed == Some(conn);
                if !open && can_stop {
                    constraint.tighten(
                        krauss_safe_speed(0.0, (dist - STOP_LINE_MARGIN).max(0.0), speed, &cf),
                        Some(StopCause::Signal),
                    );
                    return constraint;
                }
            }
            if let Some(z) = self.net.merge_for(conn) {
                let entry_lane = self.net.merge_zones[z as usize]
                    .entries
                    .iter()
                    .position(|&e| e == cur)
                    .unwrap_or(0) as u8;
                if !self.gates[z as usize].passable(v.id, entry_lane) && can_stop {
                    constraint.tighten(
                        krauss_safe_speed(0.0, (dist - STOP_LINE_MARGIN).max(0.0), speed, &cf),
                        Some(StopCause::Merge),
                    );
                    return constraint;
                }
            }
            // Landing lane on the next edge, fixed at decision time.
            let tl = if k == v.cursor {
                let tl = self.entry_lane(next);
                lanes_out[v.id as usize] = tl;
                tl
            } else {
                self.entry_lane(next)
            };
            if let Some(claim) = claims.get(&(next, tl)) {
                let gap = dist + claim.front_penetration - cf.vehicle_length;
                constraint.tighten(
                    krauss_safe_speed(claim.speed, (gap - cf.min_gap).max(0.0), speed, &cf),
                    Some(StopCause::Queue),
                );
                return constraint;
            }
            if let Some(&tail) = self.occupancy[next.index()][tl as usize].back() {
                let tv = &self.vehicles[tail as usize];
                let gap = dist + (tv.offset - cf.vehicle_length);
                constraint.tighten(
                    krauss_safe_speed(tv.speed, (gap - cf.min_gap).max(0.0), speed, &cf),
                    Some(StopCause::Queue),
                );
                return constraint;
            }
            // Slower road ahead: kinematic envelope to meet its limit.
            let next_limit = self.net.edge(next).speed_limit;
            constraint.tighten(
                (next_limit * next_limit + 2.0 * cf.max_decel * dist).sqrt(),
                None,
            );
            dist += self.net.edge(next).length;
            if dist > horizon {
                break;
            }
            k += 1;
        }
        constraint
    }

    // ------------------------------------------------------------------
    // Integration
    // ------------------------------------------------------------------

    fn integrate(&mut self, dt: f64) -> Result<u32, SimError> {
        let cf = self.params.cf;
        let stamp = self.step_no + 1;
        let end_time = self.clock + dt;
        let mut completed = 0u32;

        for e in 0..self.net.edge_count() {
            for lane in 0..self.occupancy[e].len() {
                let mut pending = std::mem::take(&mut self.queue_scratch);
                pending.clear();
                pending.extend(self.occupancy[e][lane].iter().copied());
                for &vid in &pending {
                    if self.vehicles[vid as usize].moved_stamp == stamp {
                        continue;
                    }
                    self.move_vehicle(vid, dt, stamp, end_time, &mut completed)?;
                }
                self.queue_scratch = pending;
            }
        }

        // Same-lane safety audit over the post-step state.
        for e in 0..self.net.edge_count() {
            for lane in &self.occupancy[e] {
                let mut iter = lane.iter();
                let Some(&first) = iter.next() else { continue };
                let mut front = first;
                for &behind in iter {
                    let gap = (self.vehicles[front as usize].offset - cf.vehicle_length)
                        - self.vehicles[behind as usize].offset;
                    self.audit.min_bumper_gap = self.audit.min_bumper_gap.min(gap);
                    if gap < 0.0 {
                        self.audit.negative_gap_events += 1;
                    }
                    front = behind;
                }
            }
        }
        Ok(completed)
    }

    fn move_vehicle(
        &mut self,
        vid: u32,
        dt: f64,
        stamp: u64,
        end_time: f64,
        completed: &mut u32,
    ) -> Result<(), SimError> {
        let vn = self.new_speeds[vid as usize];
        let (pos_pre, tangent_pre, limit_pre, edge_pre, offset_pre) = {
            let v = &self.vehicles[vid as usize];
            let edge = self.net.edge(v.edge);
            let (pos, tan) = edge.position_at(v.offset);
            (pos, tan, edge.speed_limit, v.edge, v.offset)
        };

        // Move, crossing edge boundaries as needed.
        let mut remaining = vn * dt;
        let mut travelled = 0.0;
        let mut finished = false;
        let mut crossings = 0u32;
        {
            let v = &mut self.vehicles[vid as usize];
            v.moved_stamp = stamp;
            if !(v.offset.is_finite() && vn.is_finite() && vn >= 0.0) {
                return Err(SimError::Inconsistent(format!(
                    "vehicle {} on edge {} offset {} speed {} commanded {}",
                    v.id,
                    self.net.edge(v.edge).id,
                    v.offset,
                    v.speed,
                    vn
                )));
            }
        }
        loop {
            let (edge_len, at_last) = {
                let v = &self.vehicles[vid as usize];
                (self.net.edge(v.edge).length, v.cursor + 1 >= v.route.edges.len())
            };
            let v_offset = self.vehicles[vid as usize].offset;
            if v_offset + remaining < edge_len - 1e-12 {
                let v = &mut self.vehicles[vid as usize];
                v.offset += remaining;
                travelled += remaining;
                break;
            }
            let to_end = edge_len - v_offset;
            travelled += to_end;
            remaining -= to_end;
            if at_last {
                finished = true;
                break;
            }
            self.cross_boundary(vid, crossings == 0)?;
            crossings += 1;
        }

        // Accumulators for the step.
        let halt_speed = self.params.halt_speed;
        let halt_window = self.params.halt_window;
        let ev = self.params.ev;
        let sampled_row = self.params.record_trajectories
            && self.vehicles[vid as usize].sampled;
        {
            let v = &mut self.vehicles[vid as usize];
            let v_old = v.speed;
            v.accel = (vn - v_old) / dt;
            v.speed = vn;
            v.odometer += travelled;
            v.time_loss += (dt * (1.0 - vn / limit_pre)).max(0.0);
            v.rho_sum += progress_rate_sample(tangent_pre * vn, pos_pre, v.dest_point, limit_pre);
            v.dv_sum += speed_deviation_sample(vn, limit_pre);
            v.halt.observe(vn, dt, halt_speed, halt_window);
            v.steps_on_network += 1;
            accumulate(&mut v.ledger, vn, v.accel, dt, &ev);
            let excess =
                v.accel.abs() - self.params.cf.max_accel.max(self.params.cf.max_decel);
            self.audit.worst_accel_excess = self.audit.worst_accel_excess.max(excess);
            self.audit.vehicle_steps += 1;
        }
        if sampled_row {
            self.trajectories.push(TrajectoryRow {
                step: self.step_no,
                vehicle: vid,
                edge: edge_pre.0,
                offset: offset_pre,
                speed: vn,
                accel: self.vehicles[vid as usize].accel,
            });
        }

        // Stop log bookkeeping.
        if vn < 0.01 {
            if self.vehicles[vid as usize].stop_since.is_none() {
                let cause = self.step_causes[vid as usize].unwrap_or(StopCause::Queue);
                self.vehicles[vid as usize].stop_since = Some((self.clock, cause));
            }
        } else {
            self.close_stop(vid, self.clock);
        }

        if finished {
            self.retire(vid, end_time);
            *completed += 1;
        }
        Ok(())
    }

    fn cross_boundary(&mut self, vid: u32, use_decided_lane: bool) -> Result<(), SimError> {
        let (old_edge, old_lane, conn, next) = {
            let v = &self.vehicles[vid as usize];
            let cur = v.route.edges[v.cursor];
            let next = v.route.edges[v.cursor + 1];
            let conn = self.net.connection_between(cur, next).ok_or_else(|| {
                SimError::Inconsistent(format!(
                    "vehicle {} route broken between {} and {}",
                    vid,
                    self.net.edge(cur).id,
                    self.net.edge(next).id
                ))
            })?;
            (v.edge, v.lane, conn, next)
        };
        let popped = self.occupancy[old_edge.index()][old_lane as usize].pop_front();
        if popped != Some(vid) {
            return Err(SimError::Inconsistent(format!(
                "vehicle {vid} crossed out of {} but was not the lane head",
                self.net.edge(old_edge).id
            )));
        }
        let new_lane = if use_decided_lane {
            self.target_lanes[vid as usize]
        } else {
            self.entry_lane(next)
        };
        let new_lane = (new_lane as usize).min(self.occupancy[next.index()].len() - 1) as u8;
        {
            let v = &mut self.vehicles[vid as usize];
            v.cursor += 1;
            v.edge = next;
            v.lane = new_lane;
            v.offset = 0.0;
            if v.committed == Some(conn) {
                v.committed = None;
            }
        }
        self.occupancy[next.index()][new_lane as usize].push_back(vid);
        if let Some(z) = self.net.merge_for(conn) {
            let entry_lane = self.net.merge_zones[z as usize]
                .entries
                .iter()
                .position(|&e| e == old_edge)
                .unwrap_or(0) as u8;
            self.gates[z as usize].record_crossing(entry_lane);
            if self.params.record_events {
                self.events.push(SimEvent::MergeCrossed {
                    time: self.clock,
                    zone: z,
                    lane: entry_lane,
                    vehicle: vid,
                });
            }
        }
        if self.params.dynamic_rerouting {
            self.reroute_live(vid)?;
        }
        Ok(())
    }

    /// Replace the remaining route using congestion-weighted costs.
    fn reroute_live(&mut self, vid: u32) -> Result<(), SimError> {
        use std::cmp::Reverse;
        use std::collections::BinaryHeap;
        let (cur, dest) = {
            let v = &self.vehicles[vid as usize];
            (v.edge, v.route.dest())
        };
        if cur == dest {
            return Ok(());
        }
        let cf = self.params.cf;
        let live_cost = |e: EdgeIdx| -> f64 {
            let edge = self.net.edge(e);
            let count: usize =
                self.occupancy[e.index()].iter().map(|q| q.len()).sum();
            let capacity = (edge.length / (cf.vehicle_length + cf.min_gap))
                .max(1.0)
                * edge.lane_count as f64;
            edge.free_flow_time() * (1.0 + 2.0 * count as f64 / capacity)
        };
        let n = self.net.edge_count();
        let mut dist = vec![f64::INFINITY; n];
        let mut prev_edge: Vec<Option<EdgeIdx>> = vec![None; n];
        let mut heap = BinaryHeap::new();
        dist[cur.index()] = live_cost(cur);
        heap.push(Reverse((ordered_float(dist[cur.index()]), cur)));
        while let Some(Reverse((d, e))) = heap.pop() {
            let d = d as f64 / COST_SCALE;
            if d > dist[e.index()] + 1e-9 {
                continue;
            }
            if e == dest {
                break;
            }
            for &c in self.net.out_connections(e) {
                let nx = self.net.connection(c).to;
                let nd = dist[e.index()] + live_cost(nx);
                if nd + 1e-12 < dist[nx.index()] {
                    dist[nx.index()] = nd;
                    prev_edge[nx.index()] = Some(e);
                    heap.push(Reverse((ordered_float(nd), nx)));
                }
            }
        }
        if dist[dest.index()].is_infinite() {
            return Ok(());
        }
        let mut edges = vec![dest];
        let mut walk = dest;
        while walk != cur {
            walk = prev_edge[walk.index()].expect("relaxed predecessor chain");
            edges.push(walk);
        }
        edges.reverse();
        let total_length = edges.iter().map(|&e| self.net.edge(e).length).sum();
        let v = &mut self.vehicles[vid as usize];
        v.route = Arc::new(crate::net::Route { edges, total_length });
        v.cursor = 0;
        Ok(())
    }

    fn retire(&mut self, vid: u32, end_time: f64) {
        self.close_stop(vid, end_time);
        let v = &mut self.vehicles[vid as usize];
        let lane = v.lane;
        let edge = v.edge;
        v.state = VehState::Done;
        // A finishing vehicle is still resident on its final edge.
        let q = &mut self.occupancy[edge.index()][lane as usize];
        if let Some(pos) = q.iter().position(|&x| x == vid) {
            q.remove(pos);
        }
        self.active_count -= 1;
        self.completed_count += 1;
        let v = &self.vehicles[vid as usize];
        let record = trip_record(v, end_time, Some(end_time), self.params.halt_window);
        self.trips.push(record);
    }

    fn close_stop(&mut self, vid: u32, time: f64) {
        if let Some((start, cause)) = self.vehicles[vid as usize].stop_since.take() {
            self.stops.push(StopInterval { vehicle: vid, start, end: time, cause });
        }
    }
}

const COST_SCALE: f64 = 1e6;

fn ordered_float(x: f64) -> u64 {
    (x * COST_SCALE) as u64
}

fn trip_record(
    v: &Vehicle,
    horizon: f64,
    finish: Option<f64>,
    halt_window: f64,
) -> TripRecord {
    let steps = v.steps_on_network.max(1) as f64;
    TripRecord {
        vehicle: v.id,
        spawn_time: v.spawn_time,
        insert_time: v.insert_time,
        finish_time: finish,
        completed: finish.is_some(),
        drive_time: (finish.unwrap_or(horizon) - v.spawn_time).max(0.0),
        distance: v.odometer,
        energy: v.ledger,
        mean_progress_rate: if v.steps_on_network == 0 { 0.0 } else { v.rho_sum / steps },
        mean_speed_deviation: if v.steps_on_network == 0 { 0.0 } else { v.dv_sum / steps },
        halts: v.halt.finish(halt_window),
        sampled: v.sampled,
    }
}

impl Vehicle {
    fn next_connection(&self, net: &RoadNetwork) -> Option<ConnIdx> {
        if self.cursor + 1 >= self.route.edges.len() {
            return None;
        }
        net.connection_between(self.route.edges[self.cursor], self.route.edges[self.cursor + 1])
    }
}

/// Choose `k` of `n` indices without replacement, deterministically.
fn sample_indices(n: usize, k: usize, rng: &mut impl Rng) -> Vec<bool> {
    let mut chosen = vec![false; n];
    if k >= n {
        chosen.iter_mut().for_each(|c| *c = true);
        return chosen;
    }
    // Partial Fisher-Yates over the index set.
    let mut indices: Vec<u32> = (0..n as u32).collect();
    for i in 0..k {
        let j = rng.gen_range(i..n);
        indices.swap(i, j);
        chosen[indices[i] as usize] = true;
    }
    chosen
}
