//! Duration and maximum-distance measures per participant and gesture, and
//! the rank tests run over them.

use serde::{Deserialize, Serialize};

use super::stats::{friedman_test, iqr, median, pairwise_wilcoxon, StatsError, StatsResult};
use crate::arm::KinematicChain;
use crate::gesture::GestureClass;
use crate::telemetry::{duration, max_displacement, Dataset, Recording, TelemetryError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Measure {
    /// Seconds.
    Duration,
    /// Largest end-effector distance from the start, meters.
    Distance,
}

impl Measure {
    pub fn unit(self) -> &'static str {
        match self {
            Measure::Duration => "s",
            Measure::Distance => "m",
        }
    }
}

impl std::str::FromStr for Measure {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "duration" => Ok(Measure::Duration),
            "distance" => Ok(Measure::Distance),
            _ => Err(format!("unknown measure {s:?} (expected duration or distance)")),
        }
    }
}

pub fn measure(recording: &Recording, chain: &KinematicChain, m: Measure) -> Result<f64, TelemetryError> {
    match m {
        Measure::Duration => Ok(duration(recording)),
        Measure::Distance => max_displacement(recording, chain),
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ObjectiveError {
    #[error(transparent)]
    Telemetry(#[from] TelemetryError),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GestureSummary {
    pub gesture: GestureClass,
    pub median: f64,
    pub iqr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSummary {
    pub first: GestureClass,
    pub second: GestureClass,
    pub result: StatsResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveSummary {
    pub measure: Measure,
    pub participants: Vec<u32>,
    /// One row per participant, one column per gesture; each cell is the
    /// median over that participant's trials.
    pub matrix: Vec<Vec<f64>>,
    pub gestures: Vec<GestureSummary>,
    pub friedman: StatsResult,
    pub pairwise: Vec<PairSummary>,
}

/// The measure of every recording, grouped by gesture in LS, LW, HS, GL order.
pub fn by_gesture(dataset: &Dataset, chain: &KinematicChain, m: Measure) -> Result<Vec<Vec<f64>>, TelemetryError> {
    let mut out = vec![Vec::new(); GestureClass::COUNT];
    for r in dataset.recordings() {
        out[r.gesture().index()].push(measure(r, chain, m)?);
    }
    Ok(out)
}

pub fn participant_matrix(
    dataset: &Dataset,
    chain: &KinematicChain,
    m: Measure,
) -> Result<(Vec<u32>, Vec<Vec<f64>>), TelemetryError> {
    let n = dataset.manifest().n_participants;
    let mut cells = vec![vec![Vec::new(); GestureClass::COUNT]; n as usize];
    for r in dataset.recordings() {
        cells[r.participant_id() as usize][r.gesture().index()].push(measure(r, chain, m)?);
    }
    let matrix = cells
        .iter()
        .map(|row| row.iter().map(|v| median(v).expect("manifest guarantees trials")).collect())
        .collect();
    Ok(((0..n).collect(), matrix))
}

/// Medians and IQRs across participants, a Friedman test over gestures and
/// Bonferroni-corrected pairwise Wilcoxon tests.
pub fn summarize(dataset: &Dataset, chain: &KinematicChain, m: Measure) -> Result<ObjectiveSummary, ObjectiveError> {
    let (participants, matrix) = participant_matrix(dataset, chain, m)?;
    let gestures = GestureClass::ALL
        .iter()
        .map(|g| {
            let col: Vec<f64> = matrix.iter().map(|r| r[g.index()]).collect();
            GestureSummary {
                gesture: *g,
                median: median(&col).expect("non-empty"),
                iqr: iqr(&col).expect("non-empty"),
            }
        })
        .collect();
    let friedman = friedman_test(&matrix)?;
    let pairwise = pairwise_wilcoxon(&matrix)?
        .into_iter()
        .map(|p| PairSummary {
            first: GestureClass::ALL[p.first],
            second: GestureClass::ALL[p.second],
            result: p.result,
        })
        .collect();
    Ok(ObjectiveSummary {
        measure: m,
        participants,
        matrix,
        gestures,
        friedman,
        pairwise,
    })
}
