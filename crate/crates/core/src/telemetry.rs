//! Joint telemetry: resampling joint trajectories, the simulated effort
//! channel, per-recording objective measures, and dataset persistence.
//!
//! A dataset directory holds `manifest.json` and one CSV per recording named
//! `p{participant:02}_{gesture}_t{trial}.csv` with the 22-column header
//! `t,q1..q7,dq1..dq7,tau1..tau7`. Numbers are written with 9 significant
//! digits; recordings produced by the synthesizer are quantized to that
//! precision, so a write/read cycle reproduces them bit-exactly.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arm::{forward_kinematics, ArmError, KinematicChain};
use crate::gesture::GestureClass;
use crate::numfmt::{format_sig, quantize};

/// Joints per sample.
pub const JOINTS: usize = 7;
pub const DEFAULT_SAMPLE_RATE: f64 = 100.0;
pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum TelemetryError {
    #[error("trajectory too short: {0}")]
    TooShort(String),
    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),
    #[error("invalid recording: {0}")]
    InvalidRecording(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: schema_version {found} not supported (expected {expected})")]
    SchemaVersion {
        path: PathBuf,
        found: u32,
        expected: u32,
    },
    #[error("{path}:{line}: {message}")]
    Malformed {
        path: PathBuf,
        line: u64,
        message: String,
    },
    #[error("missing recording {key} listed by the manifest")]
    MissingRecording { key: String },
    #[error("unexpected recording file {file} not covered by the manifest")]
    UnexpectedRecording { file: String },
    #[error("duplicate recording {key}")]
    DuplicateRecording { key: String },
    #[error(transparent)]
    Arm(#[from] ArmError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointSample {
    pub t: f64,
    pub q: [f64; JOINTS],
    pub dq: [f64; JOINTS],
    pub tau: [f64; JOINTS],
}

impl JointSample {
    fn is_finite(&self) -> bool {
        self.t.is_finite()
            && self
                .q
                .iter()
                .chain(&self.dq)
                .chain(&self.tau)
                .all(|v| v.is_finite())
    }

    fn quantized(&self) -> Self {
        JointSample {
            t: quantize(self.t),
            q: self.q.map(quantize),
            dq: self.dq.map(quantize),
            tau: self.tau.map(quantize),
        }
    }
}

/// One performed gesture: at least two samples, time starting at 0 and
/// strictly increasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recording {
    gesture: GestureClass,
    participant_id: u32,
    trial_index: u32,
    samples: Vec<JointSample>,
}

impl Recording {
    pub fn new(
        gesture: GestureClass,
        participant_id: u32,
        trial_index: u32,
        samples: Vec<JointSample>,
    ) -> Result<Self, TelemetryError> {
        if samples.len() < 2 {
            return Err(TelemetryError::InvalidRecording(format!(
                "{} samples (need at least 2)",
                samples.len()
            )));
        }
        if samples[0].t != 0.0 {
            return Err(TelemetryError::InvalidRecording(format!(
                "first sample at t = {} (must be 0)",
                samples[0].t
            )));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(TelemetryError::InvalidRecording(format!("sample {i} is not finite")));
        }
        if let Some(i) = samples.windows(2).position(|w| w[1].t <= w[0].t) {
            return Err(TelemetryError::InvalidRecording(format!(
                "time not strictly increasing at sample {}",
                i + 1
            )));
        }
        Ok(Recording {
            gesture,
            participant_id,
            trial_index,
            samples,
        })
    }

    pub fn gesture(&self) -> GestureClass {
        self.gesture
    }

    pub fn participant_id(&self) -> u32 {
        self.participant_id
    }

    pub fn trial_index(&self) -> u32 {
        self.trial_index
    }

    pub fn samples(&self) -> &[JointSample] {
        &self.samples
    }

    pub fn key(&self) -> RecordingKey {
        RecordingKey {
            participant: self.participant_id,
            gesture: self.gesture,
            trial: self.trial_index,
        }
    }

    /// Same data under another participant/trial label.
    pub fn relabeled(&self, participant_id: u32, trial_index: u32) -> Self {
        Recording {
            participant_id,
            trial_index,
            ..self.clone()
        }
    }

    /// Rounds every value to 9 significant digits (the persisted precision).
    pub fn quantized(&self) -> Self {
        Recording {
            samples: self.samples.iter().map(JointSample::quantized).collect(),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RecordingKey {
    pub participant: u32,
    pub gesture: GestureClass,
    pub trial: u32,
}

impl RecordingKey {
    pub fn file_stem(&self) -> String {
        format!("p{:02}_{}_t{}", self.participant, self.gesture, self.trial)
    }
}

impl std::fmt::Display for RecordingKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.file_stem())
    }
}

/// Simulated joint effort `tau_j = g_j cos(q_j) + b_j dq_j + noise`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffortModel {
    /// Load coefficient per joint, N m.
    pub gravity: [f64; JOINTS],
    /// Viscous coefficient per joint, N m s/rad.
    pub damping: [f64; JOINTS],
    /// Noise standard deviation per joint, N m.
    pub noise_sd: [f64; JOINTS],
}

impl Default for EffortModel {
    fn default() -> Self {
        EffortModel {
            gravity: [0.0, 35.0, 0.0, 18.0, 0.0, 2.0, 0.0],
            damping: [0.8; JOINTS],
            noise_sd: [0.05; JOINTS],
        }
    }
}

impl EffortModel {
    pub fn noiseless() -> Self {
        EffortModel {
            noise_sd: [0.0; JOINTS],
            ..Default::default()
        }
    }

    /// Draws exactly one normal variate per joint, even for zero noise, so the
    /// RNG stream does not depend on the coefficients.
    pub fn effort<R: RngCore>(
        &self,
        q: &[f64; JOINTS],
        dq: &[f64; JOINTS],
        rng: &mut R,
    ) -> [f64; JOINTS] {
        let mut tau = [0.0; JOINTS];
        for j in 0..JOINTS {
            let eps: f64 = StandardNormal.sample(rng);
            tau[j] = self.gravity[j] * q[j].cos() + self.damping[j] * dq[j] + self.noise_sd[j] * eps;
        }
        tau
    }
}

/// A joint configuration at time `t` (seconds).
#[derive(Debug, Clone, PartialEq)]
pub struct TimedJoints {
    pub t: f64,
    pub q: [f64; JOINTS],
}

/// Number of samples a `span`-second trajectory yields at `rate`.
pub fn sample_count(span: f64, rate: f64) -> usize {
    // A tiny slack keeps spans like 1.78 s at 100 Hz from losing their last
    // sample to rounding in the product.
    (span * rate + 1e-9).floor() as usize + 1
}

/// Uniform resampling at `rate` Hz: linear interpolation of joint angles,
/// central differences for velocity (one-sided at the ends) and effort from
/// `effort`.
pub fn sample_trajectory<R: RngCore>(
    trajectory: &[TimedJoints],
    rate: f64,
    effort: &EffortModel,
    rng: &mut R,
) -> Result<Vec<JointSample>, TelemetryError> {
    if !(rate > 0.0 && rate.is_finite()) {
        return Err(TelemetryError::InvalidTrajectory(format!("rate = {rate}")));
    }
    if trajectory.len() < 2 {
        return Err(TelemetryError::TooShort(format!("{} waypoints", trajectory.len())));
    }
    if let Some(i) = trajectory.windows(2).position(|w| w[1].t <= w[0].t) {
        return Err(TelemetryError::InvalidTrajectory(format!(
            "time not strictly increasing at waypoint {}",
            i + 1
        )));
    }
    let t0 = trajectory[0].t;
    let span = trajectory[trajectory.len() - 1].t - t0;
    let n = sample_count(span, rate);
    if n < 2 {
        return Err(TelemetryError::TooShort(format!(
            "{span} s span yields a single sample at {rate} Hz"
        )));
    }

    let mut qs: Vec<[f64; JOINTS]> = Vec::with_capacity(n);
    let mut seg = 0;
    for k in 0..n {
        let t = t0 + k as f64 / rate;
        while seg + 2 < trajectory.len() && trajectory[seg + 1].t < t {
            seg += 1;
        }
        let (a, b) = (&trajectory[seg], &trajectory[seg + 1]);
        let w = ((t - a.t) / (b.t - a.t)).clamp(0.0, 1.0);
        qs.push(std::array::from_fn(|j| a.q[j] + (b.q[j] - a.q[j]) * w));
    }

    let dt = 1.0 / rate;
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let (lo, hi, span) = if k == 0 {
            (0, 1, dt)
        } else if k == n - 1 {
            (n - 2, n - 1, dt)
        } else {
            (k - 1, k + 1, 2.0 * dt)
        };
        let mut dq = [0.0; JOINTS];
        for j in 0..JOINTS {
            dq[j] = (qs[hi][j] - qs[lo][j]) / span;
        }
        let tau = effort.effort(&qs[k], &dq, rng);
        out.push(JointSample {
            t: k as f64 / rate,
            q: qs[k],
            dq,
            tau,
        });
    }
    Ok(out)
}

/// Length of the recording in seconds.
pub fn duration(recording: &Recording) -> f64 {
    let s = recording.samples();
    s[s.len() - 1].t - s[0].t
}

/// Largest end-effector distance from the recording's first sample.
pub fn max_displacement(recording: &Recording, chain: &KinematicChain) -> Result<f64, TelemetryError> {
    samples_max_displacement(recording.samples(), chain)
}

/// [`max_displacement`] over a bare, non-empty sample list.
pub fn samples_max_displacement(samples: &[JointSample], chain: &KinematicChain) -> Result<f64, TelemetryError> {
    let position = |s: &JointSample| -> Result<_, TelemetryError> {
        let q = chain.clamp(&s.q)?;
        Ok(forward_kinematics(chain, &q)?.position)
    };
    let first = samples
        .first()
        .ok_or_else(|| TelemetryError::TooShort("no samples".into()))?;
    let p0 = position(first)?;
    samples.iter().try_fold(0.0_f64, |m, s| {
        Ok(m.max((position(s)? - p0).norm()))
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub n_participants: u32,
    pub trials: u32,
    pub base_seed: u64,
    pub sample_rate: f64,
}

impl Manifest {
    /// Every key the manifest promises, in canonical order.
    pub fn keys(&self) -> Vec<RecordingKey> {
        let mut keys = Vec::new();
        for participant in 0..self.n_participants {
            for gesture in GestureClass::ALL {
                for trial in 0..self.trials {
                    keys.push(RecordingKey {
                        participant,
                        gesture,
                        trial,
                    });
                }
            }
        }
        keys
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    manifest: Manifest,
    recordings: Vec<Recording>,
}

impl Dataset {
    /// Checks that the recordings are exactly the manifest's keys, and sorts
    /// them into canonical order.
    pub fn new(manifest: Manifest, mut recordings: Vec<Recording>) -> Result<Self, TelemetryError> {
        recordings.sort_by_key(Recording::key);
        if let Some(w) = recordings.windows(2).find(|w| w[0].key() == w[1].key()) {
            return Err(TelemetryError::DuplicateRecording {
                key: w[0].key().to_string(),
            });
        }
        let expected = manifest.keys();
        for key in &expected {
            if recordings.binary_search_by_key(key, Recording::key).is_err() {
                return Err(TelemetryError::MissingRecording {
                    key: key.to_string(),
                });
            }
        }
        if recordings.len() != expected.len() {
            let extra = recordings
                .iter()
                .find(|r| expected.binary_search(&r.key()).is_err())
                .expect("length mismatch implies an unexpected key");
            return Err(TelemetryError::UnexpectedRecording {
                file: extra.key().to_string(),
            });
        }
        Ok(Dataset {
            manifest,
            recordings,
        })
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn recordings(&self) -> &[Recording] {
        &self.recordings
    }
}

const CSV_HEADER_LEN: usize = 1 + 3 * JOINTS;

fn csv_header() -> Vec<String> {
    let mut h = vec!["t".to_string()];
    for prefix in ["q", "dq", "tau"] {
        h.extend((1..=JOINTS).map(|j| format!("{prefix}{j}")));
    }
    h
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TelemetryError + '_ {
    move |source| TelemetryError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes the recording as CSV (9 significant digits, UNIX newlines).
pub fn write_recording_csv<W: Write>(recording: &Recording, out: W) -> std::io::Result<()> {
    let mut w = BufWriter::new(out);
    writeln!(w, "{}", csv_header().join(","))?;
    for s in recording.samples() {
        let mut line = format_sig(s.t);
        for v in s.q.iter().chain(&s.dq).chain(&s.tau) {
            line.push(',');
            line.push_str(&format_sig(*v));
        }
        line.push('\n');
        w.write_all(line.as_bytes())?;
    }
    w.flush()
}

pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<(), TelemetryError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let manifest_path = dir.join(MANIFEST_FILE);
    let mut json = serde_json::to_string_pretty(&dataset.manifest).expect("manifest serializes");
    json.push('\n');
    fs::write(&manifest_path, json).map_err(io_err(&manifest_path))?;
    for rec in &dataset.recordings {
        let path = dir.join(format!("{}.csv", rec.key().file_stem()));
        let file = fs::File::create(&path).map_err(io_err(&path))?;
        write_recording_csv(rec, file).map_err(io_err(&path))?;
    }
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<Manifest, TelemetryError> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| TelemetryError::Malformed {
            path: path.clone(),
            line: e.line() as u64,
            message: e.to_string(),
        })?;
    let found = value
        .get("schema_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| TelemetryError::Malformed {
            path: path.clone(),
            line: 1,
            message: "missing schema_version".into(),
        })?;
    if found != SCHEMA_VERSION as u64 {
        return Err(TelemetryError::SchemaVersion {
            path,
            found: found as u32,
            expected: SCHEMA_VERSION,
        });
    }
    serde_json::from_value(value).map_err(|e| TelemetryError::Malformed {
        path,
        line: 1,
        message: e.to_string(),
    })
}

/// Parses one recording CSV. `key` supplies the labels.
pub fn read_recording_csv(path: &Path, key: RecordingKey) -> Result<Recording, TelemetryError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let malformed = |line: u64, message: String| TelemetryError::Malformed {
        path: path.to_path_buf(),
        line,
        message,
    };
    let header = reader
        .headers()
        .map_err(|e| malformed(1, e.to_string()))?
        .clone();
    if header.iter().ne(csv_header().iter().map(String::as_str)) {
        return Err(malformed(1, format!("unexpected header {:?}", header.iter().collect::<Vec<_>>())));
    }
    let mut samples = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            malformed(line, e.to_string())
        })?;
        let line = row.position().map_or(0, |p| p.line());
        if row.len() != CSV_HEADER_LEN {
            return Err(malformed(line, format!("{} fields (expected {CSV_HEADER_LEN})", row.len())));
        }
        let mut vals = [0.0; CSV_HEADER_LEN];
        for (i, field) in row.iter().enumerate() {
            vals[i] = field
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| malformed(line, format!("column {} is not a finite number: {field:?}", i + 1)))?;
        }
        let mut s = JointSample {
            t: vals[0],
            q: [0.0; JOINTS],
            dq: [0.0; JOINTS],
            tau: [0.0; JOINTS],
        };
        s.q.copy_from_slice(&vals[1..1 + JOINTS]);
        s.dq.copy_from_slice(&vals[1 + JOINTS..1 + 2 * JOINTS]);
        s.tau.copy_from_slice(&vals[1 + 2 * JOINTS..]);
        samples.push(s);
    }
    Recording::new(key.gesture, key.participant, key.trial, samples).map_err(|e| malformed(0, e.to_string()))
}

pub fn read_dataset(dir: &Path) -> Result<Dataset, TelemetryError> {
    let manifest = read_manifest(dir)?;
    let keys = manifest.keys();
    let mut recordings = Vec::with_capacity(keys.len());
    for key in &keys {
        let path = dir.join(format!("{}.csv", key.file_stem()));
        if !path.is_file() {
            return Err(TelemetryError::MissingRecording {
                key: key.to_string(),
            });
        }
        recordings.push(read_recording_csv(&path, *key)?);
    }
    let expected: std::collections::HashSet<String> =
        keys.iter().map(|k| format!("{}.csv", k.file_stem())).collect();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let entry = entry.map_err(io_err(dir))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.ends_with(".csv") && !expected.contains(&name) {
            return Err(TelemetryError::UnexpectedRecording { file: name });
        }
    }
    Dataset::new(manifest, recordings)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    fn constant_traj(q: [f64; JOINTS], span: f64) -> Vec<TimedJoints> {
        vec![TimedJoints { t: 0.0, q }, TimedJoints { t: span, q }]
    }

    #[test]
    fn constant_trajectory_has_zero_velocity() {
        let mut rng = seed::rng(1);
        let s = sample_trajectory(&constant_traj([0.3; JOINTS], 1.0), 100.0, &EffortModel::default(), &mut rng)
            .unwrap();
        assert_eq!(s.len(), 101);
        assert!(s.iter().all(|x| x.dq.iter().all(|v| *v == 0.0)));
        assert_eq!(s.last().unwrap().t, 1.0);
    }

    #[test]
    fn linear_ramp_has_exact_interior_velocity() {
        let mut end = [0.0; JOINTS];
        end[0] = 1.0;
        let traj = vec![
            TimedJoints { t: 0.0, q: [0.0; JOINTS] },
            TimedJoints { t: 1.0, q: end },
        ];
        let s = sample_trajectory(&traj, 100.0, &EffortModel::noiseless(), &mut seed::rng(0)).unwrap();
        for x in &s[1..s.len() - 1] {
            assert!((x.dq[0] - 1.0).abs() < 1e-9, "{}", x.dq[0]);
        }
    }

    #[test]
    fn sample_count_matches_floor_rule() {
        for (span, rate) in [(1.78, 100.0), (6.83, 100.0), (1.0, 100.0), (0.015, 100.0), (2.5, 40.0)] {
            let s = sample_trajectory(
                &constant_traj([0.0; JOINTS], span),
                rate,
                &EffortModel::noiseless(),
                &mut seed::rng(0),
            )
            .unwrap();
            assert_eq!(s.len(), (span * rate + 1e-9).floor() as usize + 1);
        }
        let s = sample_trajectory(&constant_traj([0.0; JOINTS], 1.78), 100.0, &EffortModel::noiseless(), &mut seed::rng(0))
            .unwrap();
        assert_eq!(s.last().unwrap().t, 1.78);
    }

    #[test]
    fn too_short_span_rejected() {
        let r = sample_trajectory(&constant_traj([0.0; JOINTS], 0.005), 100.0, &EffortModel::noiseless(), &mut seed::rng(0));
        assert!(matches!(r, Err(TelemetryError::TooShort(_))));
    }

    #[test]
    fn effort_components() {
        let q = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7];
        let model = EffortModel::noiseless();
        let tau = model.effort(&q, &[0.0; JOINTS], &mut seed::rng(0));
        for j in 0..JOINTS {
            assert_eq!(tau[j], model.gravity[j] * q[j].cos());
        }
        let viscous = EffortModel {
            gravity: [0.0; JOINTS],
            ..EffortModel::noiseless()
        };
        let dq = [1.0, -2.0, 0.5, 0.0, 3.0, 1.5, -1.0];
        let tau = viscous.effort(&q, &dq, &mut seed::rng(0));
        for j in 0..JOINTS {
            assert_eq!(tau[j], 0.8 * dq[j]);
        }
    }

    fn rec(times: &[f64]) -> Recording {
        let samples = times
            .iter()
            .map(|&t| JointSample {
                t,
                q: [0.0, -0.5, 0.0, -2.0, 0.0, 1.5, 0.7],
                dq: [0.0; JOINTS],
                tau: [0.0; JOINTS],
            })
            .collect();
        Recording::new(GestureClass::LS, 0, 0, samples).unwrap()
    }

    #[test]
    fn duration_and_displacement_of_constant_recording() {
        let r = rec(&[0.0, 0.01]);
        assert_eq!(duration(&r), 0.01);
        let times: Vec<f64> = (0..=178).map(|k| k as f64 / 100.0).collect();
        let r = rec(&times);
        assert_eq!(duration(&r), 1.78);
        assert_eq!(max_displacement(&r, &KinematicChain::panda()).unwrap(), 0.0);
        let moved = r.relabeled(9, 3);
        assert_eq!(duration(&moved), duration(&r));
    }

    #[test]
    fn recording_invariants_enforced() {
        let s = rec(&[0.0, 0.01]).samples()[0];
        assert!(Recording::new(GestureClass::LS, 0, 0, vec![s]).is_err());
        let late = JointSample { t: 0.5, ..s };
        assert!(Recording::new(GestureClass::LS, 0, 0, vec![late, JointSample { t: 1.0, ..s }]).is_err());
        assert!(Recording::new(GestureClass::LS, 0, 0, vec![s, s]).is_err());
        let nan = JointSample { t: 0.1, q: [f64::NAN; JOINTS], ..s };
        assert!(Recording::new(GestureClass::LS, 0, 0, vec![s, nan]).is_err());
    }
}
