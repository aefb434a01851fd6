//! The 84-value descriptive representation of a recording: minimum,
//! maximum, mean and population standard deviation of each joint's
//! position, velocity and effort.
//!
//! Layout: `index = family * 28 + joint * 4 + stat` with families
//! position/velocity/effort and stats min/max/mean/std.

use std::io::Write;
use std::ops::Index;

use serde::{Deserialize, Serialize};

use crate::gesture::GestureClass;
use crate::telemetry::{JointSample, Recording, JOINTS};

pub const STATS_PER_CHANNEL: usize = 4;
pub const FAMILIES: usize = 3;
pub const FEATURE_COUNT: usize = FAMILIES * JOINTS * STATS_PER_CHANNEL;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Position = 0,
    Velocity = 1,
    Effort = 2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stat {
    Min = 0,
    Max = 1,
    Mean = 2,
    Std = 3,
}

pub fn feature_index(family: Family, joint: usize, stat: Stat) -> usize {
    family as usize * JOINTS * STATS_PER_CHANNEL + joint * STATS_PER_CHANNEL + stat as usize
}

pub fn feature_name(index: usize) -> String {
    let family = ["pos", "vel", "eff"][index / (JOINTS * STATS_PER_CHANNEL)];
    let joint = index % (JOINTS * STATS_PER_CHANNEL) / STATS_PER_CHANNEL + 1;
    let stat = ["min", "max", "mean", "std"][index % STATS_PER_CHANNEL];
    format!("{family}_j{joint}_{stat}")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(#[serde(with = "serde_arrays")] [f64; FEATURE_COUNT]);

mod serde_arrays {
    use super::FEATURE_COUNT;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64; FEATURE_COUNT], s: S) -> Result<S::Ok, S::Error> {
        v.as_slice().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[f64; FEATURE_COUNT], D::Error> {
        let v = Vec::<f64>::deserialize(d)?;
        v.try_into()
            .map_err(|v: Vec<f64>| serde::de::Error::invalid_length(v.len(), &"84 features"))
    }
}

impl FeatureVector {
    pub fn from_values(values: [f64; FEATURE_COUNT]) -> Self {
        FeatureVector(values)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn get(&self, family: Family, joint: usize, stat: Stat) -> f64 {
        self.0[feature_index(family, joint, stat)]
    }
}

impl Index<usize> for FeatureVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

fn channel(samples: &[JointSample], family: Family, joint: usize) -> impl Iterator<Item = f64> + '_ {
    samples.iter().map(move |s| match family {
        Family::Position => s.q[joint],
        Family::Velocity => s.dq[joint],
        Family::Effort => s.tau[joint],
    })
}

/// Stats per channel, accumulated in sample order. The mean is taken
/// relative to the first sample (`x0 + sum(x - x0) / n`), which keeps it
/// exact on constant channels; the deviation sum uses that mean.
pub fn extract_features(recording: &Recording) -> FeatureVector {
    features_of(recording.samples())
}

/// [`extract_features`] over a bare sample list, which must be non-empty.
pub fn features_of(samples: &[JointSample]) -> FeatureVector {
    let n = samples.len() as f64;
    let mut out = [0.0; FEATURE_COUNT];
    for family in [Family::Position, Family::Velocity, Family::Effort] {
        for joint in 0..JOINTS {
            let x0 = channel(samples, family, joint).next().expect("at least one sample");
            let (min, max, sum) = channel(samples, family, joint).fold(
                (f64::INFINITY, f64::NEG_INFINITY, 0.0),
                |(lo, hi, sum), x| (lo.min(x), hi.max(x), sum + (x - x0)),
            );
            let mean = x0 + sum / n;
            let ss = channel(samples, family, joint).fold(0.0, |acc, x| acc + (x - mean) * (x - mean));
            let base = feature_index(family, joint, Stat::Min);
            out[base] = min;
            out[base + 1] = max;
            out[base + 2] = mean;
            out[base + 3] = (ss / n).sqrt();
        }
    }
    FeatureVector(out)
}

/// One row of the feature table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub participant: u32,
    pub gesture: GestureClass,
    pub trial: u32,
    pub features: FeatureVector,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureTable {
    pub rows: Vec<FeatureRow>,
}

impl FeatureTable {
    pub fn from_recordings(recordings: &[Recording]) -> Self {
        use rayon::prelude::*;
        FeatureTable {
            rows: recordings
                .par_iter()
                .map(|r| FeatureRow {
                    participant: r.participant_id(),
                    gesture: r.gesture(),
                    trial: r.trial_index(),
                    features: extract_features(r),
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn participants(&self) -> Vec<u32> {
        let mut p: Vec<u32> = self.rows.iter().map(|r| r.participant).collect();
        p.sort_unstable();
        p.dedup();
        p
    }

    /// CSV with columns `participant,gesture,trial,f0..f83`; values use the
    /// shortest representation that round-trips.
    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = std::io::BufWriter::new(out);
        let mut header = String::from("participant,gesture,trial");
        for i in 0..FEATURE_COUNT {
            header.push_str(&format!(",f{i}"));
        }
        writeln!(w, "{header}")?;
        for r in &self.rows {
            write!(w, "{},{},{}", r.participant, r.gesture, r.trial)?;
            for v in r.features.as_slice() {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        w.flush()
    }

    pub fn read_csv<R: std::io::Read>(input: R) -> Result<Self, String> {
        let mut reader = csv::Reader::from_reader(input);
        let mut rows = Vec::new();
        for rec in reader.records() {
            let rec = rec.map_err(|e| e.to_string())?;
            let line = rec.position().map_or(0, |p| p.line());
            let err = |m: String| format!("line {line}: {m}");
            if rec.len() != 3 + FEATURE_COUNT {
                return Err(err(format!("{} columns (expected {})", rec.len(), 3 + FEATURE_COUNT)));
            }
            let participant = rec[0].parse().map_err(|_| err(format!("bad participant {:?}", &rec[0])))?;
            let gesture = rec[1].parse::<GestureClass>().map_err(|e| err(e.to_string()))?;
            let trial = rec[2].parse().map_err(|_| err(format!("bad trial {:?}", &rec[2])))?;
            let mut values = [0.0; FEATURE_COUNT];
            for (i, v) in values.iter_mut().enumerate() {
                *v = rec[3 + i]
                    .parse()
                    .map_err(|_| err(format!("bad value in f{i}: {:?}", &rec[3 + i])))?;
            }
            rows.push(FeatureRow {
                participant,
                gesture,
                trial,
                features: FeatureVector(values),
            });
        }
        Ok(FeatureTable { rows })
    }
}
