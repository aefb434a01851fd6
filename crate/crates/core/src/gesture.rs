//! Parametric end-effector paths for the four gestures and the synthetic
//! participant population that performs them.
//!
//! Every gesture is a canonical shape over normalized time `tau in [0, 1]`,
//! sized so that its maximum distance from the first sample equals the
//! gesture's reference displacement and timed so that it lasts the
//! reference duration. A [`StyleProfile`] then scales, time-warps, tilts and
//! jitters it.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;
use std::str::FromStr;

use nalgebra::{Rotation3, Vector3};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum GestureClass {
    /// Letter "S" traced with the knob.
    LS,
    /// Letter "W" traced with the knob.
    LW,
    /// Informal handshake with the hand.
    HS,
    /// G-lock handshake with the hand.
    GL,
}

impl GestureClass {
    pub const ALL: [GestureClass; 4] = [Self::LS, Self::LW, Self::HS, Self::GL];
    pub const COUNT: usize = 4;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::LS => "LS",
            Self::LW => "LW",
            Self::HS => "HS",
            Self::GL => "GL",
        }
    }

    pub fn is_letter(self) -> bool {
        matches!(self, Self::LS | Self::LW)
    }

    /// Reference duration in seconds.
    pub fn canonical_duration(self) -> f64 {
        match self {
            Self::LS => 1.78,
            Self::LW => 1.80,
            Self::HS => 6.83,
            Self::GL => 6.68,
        }
    }

    /// Reference maximum distance from the start position in meters.
    pub fn canonical_max_displacement(self) -> f64 {
        match self {
            Self::LS => 0.34,
            Self::LW => 0.31,
            Self::HS => 0.16,
            Self::GL => 0.28,
        }
    }
}

impl fmt::Display for GestureClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("unknown gesture {0:?} (expected LS, LW, HS or GL)")]
pub struct UnknownGesture(pub String);

impl FromStr for GestureClass {
    type Err = UnknownGesture;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|g| g.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| UnknownGesture(s.to_string()))
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("origin ({x:.3}, {y:.3}, {z:.3}) outside the workspace box")]
    OriginOutsideWorkspace { x: f64, y: f64, z: f64 },
    #[error("invalid style profile: {0}")]
    InvalidProfile(String),
    #[error("invalid synthesis config: {0}")]
    InvalidConfig(String),
}

/// How one synthetic participant performs gestures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StyleProfile {
    pub participant_id: u32,
    pub scale: f64,
    pub speed: f64,
    /// RMS magnitude of the hand-tremor displacement vector, meters.
    pub jitter_amplitude: f64,
    /// Rotation of the gesture about the vertical axis, radians.
    pub plane_tilt: f64,
    pub seed: u64,
}

impl Default for StyleProfile {
    fn default() -> Self {
        StyleProfile {
            participant_id: 0,
            scale: 1.0,
            speed: 1.0,
            jitter_amplitude: 0.004,
            plane_tilt: 0.0,
            seed: 0,
        }
    }
}

impl StyleProfile {
    /// Default profile without tremor: reproduces the reference shapes exactly.
    pub fn canonical() -> Self {
        StyleProfile {
            jitter_amplitude: 0.0,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |what: &str, v: f64| Err(SynthError::InvalidProfile(format!("{what} = {v}")));
        if !(0.5..=1.5).contains(&self.scale) {
            return bad("scale", self.scale);
        }
        if !(0.5..=1.5).contains(&self.speed) {
            return bad("speed", self.speed);
        }
        if !(0.0..=0.02).contains(&self.jitter_amplitude) {
            return bad("jitter_amplitude", self.jitter_amplitude);
        }
        if !self.plane_tilt.is_finite() {
            return bad("plane_tilt", self.plane_tilt);
        }
        Ok(())
    }
}

/// Standard deviation of the per-participant speed factor before truncation
/// to [0.5, 1.5]. Tuned by simulation: 16 participants from seed 42 give an
/// LS duration IQR of 0.91 s (reference 1.05 s) with the duration median
/// within 10% of the reference.
pub const SPEED_SD: f64 = 1.25;
/// Standard deviation of the per-participant scale factor.
pub const SCALE_SD: f64 = 0.1;
/// Half-width of the uniform plane tilt, radians.
pub const TILT_RANGE: f64 = 0.15;

const PROFILE_STREAM: u64 = 0x5052_4f46;

/// Deterministic participant style from `(participant_id, base_seed)`.
pub fn make_profile(participant_id: u32, base_seed: u64) -> StyleProfile {
    let seed = seed::derive(base_seed, &[PROFILE_STREAM, participant_id as u64]);
    let mut rng = seed::rng(seed);
    let scale = truncated_normal(&mut rng, 1.0, SCALE_SD, 0.5, 1.5);
    let speed = truncated_normal(&mut rng, 1.0, SPEED_SD, 0.5, 1.5);
    let plane_tilt = rng.gen_range(-TILT_RANGE..=TILT_RANGE);
    StyleProfile {
        participant_id,
        scale,
        speed,
        jitter_amplitude: StyleProfile::default().jitter_amplitude,
        plane_tilt,
        seed,
    }
}

fn truncated_normal<R: Rng>(rng: &mut R, mean: f64, sd: f64, lo: f64, hi: f64) -> f64 {
    loop {
        let z: f64 = StandardNormal.sample(rng);
        let v = mean + sd * z;
        if (lo..=hi).contains(&v) {
            return v;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathSample {
    pub t: f64,
    pub position: Vector3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SegmentKind {
    Stroke,
    Dwell,
    Approach,
    Oscillation,
    Clasp,
    PullLock,
    Hold,
    Retreat,
}

/// A phase of a gesture covering samples `start..=end`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub kind: SegmentKind,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GesturePath {
    pub gesture: GestureClass,
    pub samples: Vec<PathSample>,
    pub segments: Vec<Segment>,
}

impl GesturePath {
    pub fn duration(&self) -> f64 {
        self.samples.last().map_or(0.0, |s| s.t) - self.samples.first().map_or(0.0, |s| s.t)
    }

    pub fn max_displacement(&self) -> f64 {
        let p0 = self.samples[0].position;
        self.samples
            .iter()
            .map(|s| (s.position - p0).norm())
            .fold(0.0, f64::max)
    }

    pub fn positions(&self) -> Vec<Vector3<f64>> {
        self.samples.iter().map(|s| s.position).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkspaceBox {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl WorkspaceBox {
    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|k| p[k] >= self.min[k] && p[k] <= self.max[k])
    }
}

/// Where and how densely gesture paths are generated. Positions are in the
/// robot base frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    /// Path samples per second.
    pub path_rate: f64,
    pub workspace: WorkspaceBox,
    /// Center of the vertical writing plane for letters.
    pub writing_origin: Vector3<f64>,
    /// Start point of handshakes.
    pub grasp_origin: Vector3<f64>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            path_rate: 500.0,
            workspace: WorkspaceBox {
                min: Vector3::new(0.2, -0.5, 0.0),
                max: Vector3::new(0.8, 0.5, 0.8),
            },
            writing_origin: Vector3::new(0.45, 0.0, 0.45),
            grasp_origin: Vector3::new(0.40, 0.0, 0.40),
        }
    }
}

impl SynthConfig {
    pub fn origin_for(&self, gesture: GestureClass) -> Vector3<f64> {
        if gesture.is_letter() {
            self.writing_origin
        } else {
            self.grasp_origin
        }
    }
}

/// Minimum-jerk blend: zero velocity and acceleration at both ends.
fn min_jerk(s: f64) -> f64 {
    let s = s.clamp(0.0, 1.0);
    s * s * s * (10.0 - 15.0 * s + 6.0 * s * s)
}

fn lerp(a: Vector3<f64>, b: Vector3<f64>, s: f64) -> Vector3<f64> {
    a + (b - a) * s
}

/// Letter coordinates `(h, v)` live in the plane `x = 0`: `h` along +y
/// (the writer's right), `v` along +z.
fn plane(h: f64, v: f64) -> Vector3<f64> {
    Vector3::new(0.0, h, v)
}

/// Phases of a gesture as (kind, share of the total duration). `cycles`
/// only affects HS.
fn phases(gesture: GestureClass, cycles: u32) -> Vec<(SegmentKind, f64)> {
    use SegmentKind::*;
    let total = base_duration(gesture, cycles);
    let secs = |list: &[(SegmentKind, f64)]| -> Vec<(SegmentKind, f64)> {
        list.iter().map(|(k, s)| (*k, s / total)).collect()
    };
    match gesture {
        GestureClass::LS => vec![(Stroke, 1.0)],
        GestureClass::LW => {
            let stroke = (total - 3.0 * LW_DWELL) / 4.0;
            secs(&[
                (Stroke, stroke),
                (Dwell, LW_DWELL),
                (Stroke, stroke),
                (Dwell, LW_DWELL),
                (Stroke, stroke),
                (Dwell, LW_DWELL),
                (Stroke, stroke),
            ])
        }
        GestureClass::HS => secs(&[
            (Approach, HS_APPROACH),
            (Oscillation, HS_CYCLE * cycles as f64),
            (Retreat, HS_RETREAT),
        ]),
        GestureClass::GL => secs(&[
            (Approach, 1.60),
            (Clasp, 0.70),
            (PullLock, 2.40),
            (Hold, 0.60),
            (Retreat, 1.38),
        ]),
    }
}

/// Stop at each interior vertex of the W, seconds at speed 1.
const LW_DWELL: f64 = 0.15;
const W_VERTICES: [(f64, f64); 5] = [(-2.0, 1.0), (-1.0, -1.0), (0.0, 0.6), (1.0, -1.0), (2.0, 1.0)];
const HS_CYCLES: u32 = 3;
/// HS phase lengths at speed 1, seconds.
const HS_APPROACH: f64 = 1.40;
const HS_CYCLE: f64 = 1.20;
const HS_RETREAT: f64 = 1.83;

/// Length at speed 1; the canonical duration except for HS with a
/// non-default cycle count.
fn base_duration(gesture: GestureClass, cycles: u32) -> f64 {
    match gesture {
        GestureClass::HS if cycles != HS_CYCLES => HS_APPROACH + HS_CYCLE * cycles as f64 + HS_RETREAT,
        _ => gesture.canonical_duration(),
    }
}

/// Point on two tangent unit circles forming an "S", by arc length `u`.
fn s_curve(u: f64) -> Vector3<f64> {
    const SWEEP: f64 = 4.0 * PI / 3.0;
    if u <= SWEEP {
        let th = PI / 6.0 + u;
        plane(th.cos(), 1.0 + th.sin())
    } else {
        let th = FRAC_PI_2 - (u - SWEEP);
        plane(th.cos(), -1.0 + th.sin())
    }
}

/// Unnormalized shape of `gesture` in phase `index` at phase progress `s`.
fn shape(gesture: GestureClass, index: usize, s: f64, cycles: u32) -> Vector3<f64> {
    match gesture {
        GestureClass::LS => s_curve(min_jerk(s) * 8.0 * PI / 3.0),
        GestureClass::LW => {
            let stroke = index / 2;
            let (a, b) = (W_VERTICES[stroke], W_VERTICES[stroke + 1]);
            let (pa, pb) = (plane(a.0, a.1), plane(b.0, b.1));
            if index % 2 == 1 {
                pb
            } else {
                lerp(pa, pb, min_jerk(s))
            }
        }
        GestureClass::HS => {
            // x toward the person, z up; oscillation starts and ends at its top.
            let grasp = Vector3::new(1.25, 0.0, 0.0);
            let amp = 0.5;
            match index {
                0 => lerp(Vector3::zeros(), grasp, min_jerk(s)),
                1 => grasp + Vector3::new(0.0, 0.0, amp * ((2.0 * PI * cycles as f64 * s).cos() - 1.0)),
                _ => lerp(grasp, Vector3::zeros(), min_jerk(s)),
            }
        }
        GestureClass::GL => {
            let clasp = Vector3::new(1.0, 0.8, -0.6);
            let pull = |s: f64| {
                clasp
                    + Vector3::new(-0.9 * s, (FRAC_PI_2 * s).sin(), 0.4 * (PI * s).sin())
            };
            match index {
                0 => lerp(Vector3::zeros(), clasp, min_jerk(s)),
                1 => clasp,
                2 => pull(min_jerk(s)),
                3 => pull(1.0),
                _ => lerp(pull(1.0), Vector3::zeros(), min_jerk(s)),
            }
        }
    }
}

/// Generates the gesture path for one performance.
pub fn synth_path(
    gesture: GestureClass,
    profile: &StyleProfile,
    origin: &Vector3<f64>,
    config: &SynthConfig,
) -> Result<GesturePath, SynthError> {
    build_path(gesture, HS_CYCLES, profile, origin, config)
}

/// A handshake with `cycles` up-and-down shakes; zero cycles gives the
/// G-lock handshake (GL), any other count an HS variant.
pub fn synth_handshake(
    cycles: u32,
    profile: &StyleProfile,
    origin: &Vector3<f64>,
    config: &SynthConfig,
) -> Result<GesturePath, SynthError> {
    match cycles {
        0 => build_path(GestureClass::GL, HS_CYCLES, profile, origin, config),
        c => build_path(GestureClass::HS, c, profile, origin, config),
    }
}

fn build_path(
    gesture: GestureClass,
    cycles: u32,
    profile: &StyleProfile,
    origin: &Vector3<f64>,
    config: &SynthConfig,
) -> Result<GesturePath, SynthError> {
    profile.validate()?;
    if !(config.path_rate > 0.0 && config.path_rate.is_finite()) {
        return Err(SynthError::InvalidConfig(format!("path_rate = {}", config.path_rate)));
    }
    if !config.workspace.contains(origin) {
        return Err(SynthError::OriginOutsideWorkspace {
            x: origin.x,
            y: origin.y,
            z: origin.z,
        });
    }

    let duration = base_duration(gesture, cycles) / profile.speed;
    let n = ((duration * config.path_rate).round() as usize).max(1);

    let phase_list = phases(gesture, cycles);
    let mut bounds = Vec::with_capacity(phase_list.len() + 1);
    bounds.push(0.0);
    let mut acc = 0.0;
    for (_, share) in &phase_list {
        acc += share;
        bounds.push(acc);
    }
    *bounds.last_mut().unwrap() = 1.0;

    let taus: Vec<f64> = (0..=n).map(|i| i as f64 / n as f64).collect();
    let mut raw = Vec::with_capacity(n + 1);
    let mut phase_of = Vec::with_capacity(n + 1);
    for &tau in &taus {
        let k = (0..phase_list.len())
            .find(|&k| tau <= bounds[k + 1])
            .unwrap_or(phase_list.len() - 1);
        let span = bounds[k + 1] - bounds[k];
        let s = if span > 0.0 { (tau - bounds[k]) / span } else { 1.0 };
        raw.push(shape(gesture, k, s, cycles));
        phase_of.push(k);
    }

    let p0 = raw[0];
    let extent = raw.iter().map(|p| (p - p0).norm()).fold(0.0, f64::max);
    let k = gesture.canonical_max_displacement() * profile.scale / extent;
    let mut local: Vec<Vector3<f64>> = raw.iter().map(|p| (p - p0) * k).collect();

    if gesture.is_letter() {
        let (mut lo, mut hi) = (local[0], local[0]);
        for p in &local {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        let center = (lo + hi) * 0.5;
        local.iter_mut().for_each(|p| *p -= center);
    }

    let rot = Rotation3::from_axis_angle(&Vector3::z_axis(), profile.plane_tilt);
    let jitter = tremor(n + 1, profile, config.path_rate);
    let samples = taus
        .iter()
        .zip(&local)
        .zip(&jitter)
        .map(|((&tau, p), j)| PathSample {
            t: tau * duration,
            position: origin + rot * p + j,
        })
        .collect();

    let mut segments = Vec::with_capacity(phase_list.len());
    let mut start = 0;
    for (k, (kind, _)) in phase_list.iter().enumerate() {
        let end = phase_of.iter().rposition(|&p| p == k).unwrap_or(start).max(start);
        segments.push(Segment {
            kind: *kind,
            start,
            end,
        });
        start = end;
    }

    Ok(GesturePath {
        gesture,
        samples,
        segments,
    })
}

/// Time constant of the tremor low-pass filter, seconds.
const TREMOR_TIME_CONSTANT: f64 = 0.05;
const TREMOR_STREAM: u64 = 0x5452_454d;

/// Low-pass-filtered Gaussian noise, zero at the first sample, scaled so the
/// stationary RMS magnitude of the 3D offset equals the jitter amplitude.
fn tremor(len: usize, profile: &StyleProfile, rate: f64) -> Vec<Vector3<f64>> {
    if profile.jitter_amplitude == 0.0 {
        return vec![Vector3::zeros(); len];
    }
    let dt = 1.0 / rate;
    let alpha = dt / (TREMOR_TIME_CONSTANT + dt);
    let gain = profile.jitter_amplitude / (3.0 * alpha / (2.0 - alpha)).sqrt();
    let mut rng = seed::rng(seed::derive(profile.seed, &[TREMOR_STREAM]));
    let mut state = Vector3::zeros();
    let mut out = Vec::with_capacity(len);
    out.push(Vector3::zeros());
    for _ in 1..len {
        let w = Vector3::new(
            StandardNormal.sample(&mut rng),
            StandardNormal.sample(&mut rng),
            StandardNormal.sample(&mut rng),
        );
        state += (w - state) * alpha;
        out.push(state * gain);
    }
    out
}

/// Speed below which the effector counts as stopped, m/s.
pub const DWELL_SPEED: f64 = 1e-3;
/// Minimum length of a stop, seconds.
pub const DWELL_MIN_DURATION: f64 = 0.08;

/// Interior stops `(t_start, t_end)`: maximal runs of inter-sample speed
/// below [`DWELL_SPEED`] lasting at least [`DWELL_MIN_DURATION`], excluding
/// runs that touch either end of the path.
pub fn detect_dwells(samples: &[PathSample]) -> Vec<(f64, f64)> {
    let slow: Vec<bool> = samples
        .windows(2)
        .map(|w| (w[1].position - w[0].position).norm() / (w[1].t - w[0].t) < DWELL_SPEED)
        .collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < slow.len() {
        if !slow[i] {
            i += 1;
            continue;
        }
        let start = i;
        while i < slow.len() && slow[i] {
            i += 1;
        }
        let (t0, t1) = (samples[start].t, samples[i].t);
        let interior = start > 0 && i < slow.len();
        if interior && t1 - t0 >= DWELL_MIN_DURATION {
            out.push((t0, t1));
        }
    }
    out
}
