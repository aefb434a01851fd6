//! Per-connection state and the stroke-to-prediction pipeline. The offline
//! replay runs this same code without a socket.

use std::sync::Arc;

use kinegest::arm::{densify, follow_path, IkSettings, JointVector, KinematicChain};
use kinegest::features::features_of;
use kinegest::forest::RandomForestModel;
use kinegest::gesture::{synth_handshake, GesturePath, StyleProfile, SynthConfig};
use kinegest::seed;
use kinegest::synth::{drag_along, to_world};
use kinegest::telemetry::{samples_max_displacement, sample_trajectory, EffortModel, TimedJoints, DEFAULT_SAMPLE_RATE, JOINTS};
use nalgebra::Vector3;

use crate::protocol::{ClientMessage, Effector, ErrorCode, ServerMessage};

/// Side of the square writing area the canvas maps onto, meters.
pub const CANVAS_SIZE: f64 = 0.4;
/// Spacing of IK waypoints between consecutive stroke points, meters.
const STROKE_STEP: f64 = 0.002;
/// Arm-state cadence during a grasp cycle, milliseconds.
const GRASP_FRAME_MS: f64 = 50.0;
/// Shake period of the reference handshake, milliseconds.
const REFERENCE_PERIOD_MS: f64 = 1200.0;

/// Shared, immutable resources of the service.
#[derive(Debug, Clone)]
pub struct Engine {
    pub chain: KinematicChain,
    pub ik: IkSettings,
    pub synth: SynthConfig,
    pub effort: EffortModel,
    pub sample_rate: f64,
    /// Seed of the effort noise added to every live recording.
    pub noise_seed: u64,
    pub model: RandomForestModel,
}

impl Engine {
    pub fn new(model: RandomForestModel) -> Self {
        Engine {
            chain: KinematicChain::panda(),
            ik: IkSettings::default(),
            synth: SynthConfig::default(),
            effort: EffortModel::default(),
            sample_rate: DEFAULT_SAMPLE_RATE,
            noise_seed: 0,
            model,
        }
    }
}

/// Maps a normalized canvas point onto the vertical writing plane through
/// `origin` (base frame): `u` runs along +y, `v` downward along z.
pub fn map_canvas_to_plane(u: f64, v: f64, origin: &Vector3<f64>) -> Option<Vector3<f64>> {
    if !(0.0..=1.0).contains(&u) || !(0.0..=1.0).contains(&v) {
        return None;
    }
    Some(origin + Vector3::new(0.0, (u - 0.5) * CANVAS_SIZE, (0.5 - v) * CANVAS_SIZE))
}

pub struct Session {
    id: u64,
    engine: Arc<Engine>,
    effector: Effector,
    q: JointVector,
    last_target: Option<Vector3<f64>>,
    /// Joint configuration reached at each stroke point, with its client time.
    trail: Vec<(f64, JointVector)>,
}

impl Session {
    pub fn new(id: u64, engine: Arc<Engine>) -> Self {
        let q = engine.chain.home();
        Session {
            id,
            engine,
            effector: Effector::Knob,
            q,
            last_target: None,
            trail: Vec::new(),
        }
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn effector(&self) -> Effector {
        self.effector
    }

    pub fn stroke_len(&self) -> usize {
        self.trail.len()
    }

    fn reset(&mut self) {
        self.q = self.engine.chain.home();
        self.last_target = None;
        self.trail.clear();
    }

    fn arm_state(&self, t_ms: f64) -> ServerMessage {
        ServerMessage::ArmState {
            t_ms,
            q: to_array(&self.q),
        }
    }

    /// Reacts to one client message; replies are in emission order.
    pub fn handle(&mut self, msg: ClientMessage) -> Vec<ServerMessage> {
        match msg {
            ClientMessage::Hello { effector } => {
                self.effector = effector;
                self.reset();
                vec![self.arm_state(0.0)]
            }
            ClientMessage::Point { u, v, t_ms } => self.point(u, v, t_ms),
            ClientMessage::End => self.end(),
            ClientMessage::GraspCycle {
                amplitude,
                period_ms,
                cycles,
            } => self.grasp(amplitude, period_ms, cycles),
        }
    }

    fn point(&mut self, u: f64, v: f64, t_ms: f64) -> Vec<ServerMessage> {
        if !t_ms.is_finite() {
            return vec![ServerMessage::error(ErrorCode::OutOfRange, "t_ms must be finite")];
        }
        let Some(target) = map_canvas_to_plane(u, v, &self.engine.synth.writing_origin) else {
            return vec![ServerMessage::error(
                ErrorCode::OutOfRange,
                format!("canvas point ({u}, {v}) outside [0, 1]^2"),
            )];
        };
        if let Some((last, _)) = self.trail.last() {
            if t_ms < *last {
                return vec![ServerMessage::error(
                    ErrorCode::TimeOrder,
                    format!("t_ms {t_ms} precedes the previous point at {last}"),
                )];
            }
        }
        let e = &self.engine;
        let world = to_world(&e.chain, &target);
        let solved = match self.last_target {
            None => drag_along(&e.chain, &[world], &self.q, &e.ik),
            Some(prev) => follow_path(&e.chain, &densify(&to_world(&e.chain, &prev), &world, STROKE_STEP), &self.q, &e.ik),
        };
        match solved {
            Ok(mut qs) => {
                self.q = qs.pop().expect("at least one waypoint");
                self.last_target = Some(target);
                self.trail.push((t_ms, self.q.clone()));
                vec![self.arm_state(t_ms)]
            }
            Err(err) => {
                self.reset();
                vec![ServerMessage::error(ErrorCode::IkFailure, err.to_string())]
            }
        }
    }

    fn end(&mut self) -> Vec<ServerMessage> {
        let trail = std::mem::take(&mut self.trail);
        self.reset();
        if trail.len() < 2 {
            return vec![ServerMessage::error(
                ErrorCode::TooShort,
                format!("stroke has {} point(s); at least 2 are needed", trail.len()),
            )];
        }
        let t0 = trail[0].0;
        let mut timed: Vec<TimedJoints> = Vec::with_capacity(trail.len());
        for (t_ms, q) in &trail {
            let t = (t_ms - t0) / 1000.0;
            let q = to_array(q);
            // Points sharing a timestamp collapse to the latest one.
            match timed.last_mut() {
                Some(last) if last.t == t => last.q = q,
                _ => timed.push(TimedJoints { t, q }),
            }
        }
        vec![self.classify(&timed)]
    }

    fn grasp(&mut self, amplitude: f64, period_ms: f64, cycles: u32) -> Vec<ServerMessage> {
        if !self.trail.is_empty() {
            return vec![ServerMessage::error(ErrorCode::Busy, "finish the current stroke first")];
        }
        if !(0.0..=1.0).contains(&amplitude) || !(period_ms > 0.0 && period_ms.is_finite()) || cycles > 10 {
            return vec![ServerMessage::error(
                ErrorCode::OutOfRange,
                format!("grasp_cycle needs amplitude in [0, 1], period_ms > 0 and at most 10 cycles (got {amplitude}, {period_ms}, {cycles})"),
            )];
        }
        let e = self.engine.clone();
        let profile = StyleProfile {
            scale: 0.5 + amplitude,
            speed: (REFERENCE_PERIOD_MS / period_ms).clamp(0.5, 1.5),
            ..StyleProfile::canonical()
        };
        let path = match synth_handshake(cycles, &profile, &e.synth.grasp_origin, &e.synth) {
            Ok(p) => p,
            Err(err) => return vec![ServerMessage::error(ErrorCode::Internal, err.to_string())],
        };
        let targets: Vec<_> = path.samples.iter().map(|s| to_world(&e.chain, &s.position)).collect();
        let qs = match drag_along(&e.chain, &targets, &self.q, &e.ik) {
            Ok(qs) => qs,
            Err(err) => {
                self.reset();
                return vec![ServerMessage::error(ErrorCode::IkFailure, err.to_string())];
            }
        };
        let mut out = Vec::new();
        let mut emitted: Option<f64> = None;
        let times: Vec<f64> = path.samples.iter().map(|s| s.t * 1000.0).collect();
        for (i, q) in qs.iter().enumerate() {
            let due = match (emitted, times.get(i + 1)) {
                (Some(prev), Some(next)) => next - prev > GRASP_FRAME_MS,
                _ => true,
            };
            if due {
                out.push(ServerMessage::ArmState { t_ms: times[i], q: to_array(q) });
                emitted = Some(times[i]);
            }
        }
        let timed: Vec<TimedJoints> = path
            .samples
            .iter()
            .zip(&qs)
            .map(|(s, q)| TimedJoints { t: s.t, q: to_array(q) })
            .collect();
        self.reset();
        out.push(self.classify(&timed));
        out
    }

    fn classify(&self, timed: &[TimedJoints]) -> ServerMessage {
        let e = &self.engine;
        let mut rng = seed::rng(e.noise_seed);
        let samples = match sample_trajectory(timed, e.sample_rate, &e.effort, &mut rng) {
            Ok(s) => s,
            Err(err) => return ServerMessage::error(ErrorCode::TooShort, err.to_string()),
        };
        let prediction = match e.model.predict(features_of(&samples).as_slice()) {
            Ok(p) => p,
            Err(err) => return ServerMessage::error(ErrorCode::Internal, err.to_string()),
        };
        match samples_max_displacement(&samples, &e.chain) {
            Ok(d) => ServerMessage::prediction(&prediction, samples[samples.len() - 1].t, d),
            Err(err) => ServerMessage::error(ErrorCode::Internal, err.to_string()),
        }
    }
}

fn to_array(q: &JointVector) -> [f64; JOINTS] {
    let mut a = [0.0; JOINTS];
    a.copy_from_slice(q.as_slice());
    a
}

/// Runs `messages` through a fresh session and collects every reply.
pub fn replay(engine: Arc<Engine>, messages: impl IntoIterator<Item = ClientMessage>) -> Vec<ServerMessage> {
    let mut session = Session::new(0, engine);
    messages.into_iter().flat_map(|m| session.handle(m)).collect()
}

/// Inverse of [`map_canvas_to_plane`] for points on the writing plane.
pub fn plane_to_canvas(p: &Vector3<f64>, origin: &Vector3<f64>) -> (f64, f64) {
    (0.5 + (p.y - origin.y) / CANVAS_SIZE, 0.5 - (p.z - origin.z) / CANVAS_SIZE)
}

/// The stroke a client would send when tracing `path` (base frame) at
/// roughly `rate` points per second, ending with `end`.
pub fn stroke_from_path(path: &GesturePath, origin: &Vector3<f64>, rate: f64) -> Vec<ClientMessage> {
    let mut out = Vec::new();
    let mut next = 0.0;
    let last = path.samples.len() - 1;
    for (i, s) in path.samples.iter().enumerate() {
        if s.t + 1e-9 >= next || i == last {
            let (u, v) = plane_to_canvas(&s.position, origin);
            out.push(ClientMessage::Point {
                u,
                v,
                t_ms: s.t * 1000.0,
            });
            next += 1.0 / rate;
        }
    }
    out.push(ClientMessage::End);
    out
}
