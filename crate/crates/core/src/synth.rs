//! Synthetic study: every participant performs every gesture `trials`
//! times, the arm follows each path, and the joint trajectory is sampled
//! into a [`Recording`].

use nalgebra::Vector3;
use rayon::prelude::*;
use thiserror::Error;

use crate::arm::{densify, follow_path, forward_kinematics, ArmError, IkSettings, JointVector, KinematicChain};
use crate::gesture::{make_profile, synth_path, GestureClass, GesturePath, StyleProfile, SynthConfig, SynthError};
use crate::seed;
use crate::telemetry::{
    sample_trajectory, Dataset, EffortModel, Manifest, Recording, TelemetryError, TimedJoints,
    DEFAULT_SAMPLE_RATE, JOINTS, SCHEMA_VERSION,
};

/// Spacing of the positioning move from the home pose to a path start, m.
const POSITIONING_STEP: f64 = 0.005;
const TRIAL_STREAM: u64 = 0x5452_4941;
const EFFORT_STREAM: u64 = 0x4546_4652;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("participant {participant}, {gesture}, trial {trial}: {source}")]
    Ik {
        participant: u32,
        gesture: GestureClass,
        trial: u32,
        #[source]
        source: ArmError,
    },
    #[error("participant {participant}, {gesture}, trial {trial}: {source}")]
    Synth {
        participant: u32,
        gesture: GestureClass,
        trial: u32,
        #[source]
        source: SynthError,
    },
    #[error(transparent)]
    Telemetry(#[from] TelemetryError),
    #[error("invalid dataset request: {0}")]
    Invalid(String),
}

/// Everything besides the counts and seed that shapes a synthetic dataset.
#[derive(Debug, Clone)]
pub struct DatasetConfig {
    pub chain: KinematicChain,
    pub synth: SynthConfig,
    pub ik: IkSettings,
    pub effort: EffortModel,
    pub sample_rate: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            chain: KinematicChain::panda(),
            synth: SynthConfig::default(),
            ik: IkSettings::default(),
            effort: EffortModel::default(),
            sample_rate: DEFAULT_SAMPLE_RATE,
        }
    }
}

/// Profile for one trial: the participant's style with a fresh tremor seed.
pub fn trial_profile(profile: &StyleProfile, gesture: GestureClass, trial: u32) -> StyleProfile {
    StyleProfile {
        seed: seed::derive(profile.seed, &[TRIAL_STREAM, gesture.index() as u64, trial as u64]),
        ..*profile
    }
}

/// Lifts a base-frame point into the world frame used by forward kinematics.
pub fn to_world(chain: &KinematicChain, p: &Vector3<f64>) -> Vector3<f64> {
    Vector3::new(p.x, p.y, p.z + chain.base_height())
}

/// Moves the arm from `from` to the first point of `targets` along a
/// straight line, then tracks `targets`. Returns one joint vector per target.
pub fn drag_along(
    chain: &KinematicChain,
    targets: &[Vector3<f64>],
    from: &JointVector,
    ik: &IkSettings,
) -> Result<Vec<JointVector>, ArmError> {
    let first = targets.first().ok_or(ArmError::EmptyPath)?;
    let here = forward_kinematics(chain, from)?.position;
    let approach = densify(&here, first, POSITIONING_STEP);
    let start = follow_path(chain, &approach, from, ik)?
        .pop()
        .expect("densify yields at least one point");
    follow_path(chain, targets, &start, ik)
}

/// Runs the arm along `path` (base frame) from the home pose and samples
/// the resulting joint trajectory.
pub fn record_path(
    path: &GesturePath,
    participant: u32,
    trial: u32,
    noise_seed: u64,
    config: &DatasetConfig,
) -> Result<Recording, DatasetError> {
    let chain = &config.chain;
    let targets: Vec<Vector3<f64>> = path.samples.iter().map(|s| to_world(chain, &s.position)).collect();
    let joints = drag_along(chain, &targets, &chain.home(), &config.ik).map_err(|source| DatasetError::Ik {
        participant,
        gesture: path.gesture,
        trial,
        source,
    })?;
    let trajectory: Vec<TimedJoints> = path
        .samples
        .iter()
        .zip(&joints)
        .map(|(s, q)| {
            let mut arr = [0.0; JOINTS];
            arr.copy_from_slice(q.as_slice());
            TimedJoints { t: s.t, q: arr }
        })
        .collect();
    let mut rng = seed::rng(noise_seed);
    let samples = sample_trajectory(&trajectory, config.sample_rate, &config.effort, &mut rng)?;
    Ok(Recording::new(path.gesture, participant, trial, samples)?.quantized())
}

/// One recording of the synthetic study.
pub fn synthesize_recording(
    profile: &StyleProfile,
    gesture: GestureClass,
    trial: u32,
    config: &DatasetConfig,
) -> Result<Recording, DatasetError> {
    let participant = profile.participant_id;
    let tp = trial_profile(profile, gesture, trial);
    let origin = config.synth.origin_for(gesture);
    let path = synth_path(gesture, &tp, &origin, &config.synth).map_err(|source| DatasetError::Synth {
        participant,
        gesture,
        trial,
        source,
    })?;
    record_path(&path, participant, trial, seed::derive(tp.seed, &[EFFORT_STREAM]), config)
}

/// `n_participants x 4 x trials` recordings, deterministic in `base_seed`
/// regardless of the rayon thread count.
pub fn synthesize_dataset(
    n_participants: u32,
    trials: u32,
    base_seed: u64,
    config: &DatasetConfig,
) -> Result<Dataset, DatasetError> {
    if n_participants == 0 || trials == 0 {
        return Err(DatasetError::Invalid(format!(
            "need at least one participant and one trial (got {n_participants} x {trials})"
        )));
    }
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        n_participants,
        trials,
        base_seed,
        sample_rate: config.sample_rate,
    };
    let profiles: Vec<StyleProfile> = (0..n_participants).map(|p| make_profile(p, base_seed)).collect();
    let recordings = manifest
        .keys()
        .into_par_iter()
        .map(|key| synthesize_recording(&profiles[key.participant as usize], key.gesture, key.trial, config))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Dataset::new(manifest, recordings)?)
}

/// The reference performance of `gesture`: canonical profile, no tremor,
/// participant 0, trial 0.
pub fn canonical_recording(gesture: GestureClass, config: &DatasetConfig) -> Result<Recording, DatasetError> {
    let profile = StyleProfile::canonical();
    let origin = config.synth.origin_for(gesture);
    let path = synth_path(gesture, &profile, &origin, &config.synth).map_err(|source| DatasetError::Synth {
        participant: 0,
        gesture,
        trial: 0,
        source,
    })?;
    record_path(&path, 0, 0, seed::derive(profile.seed, &[EFFORT_STREAM]), config)
}
