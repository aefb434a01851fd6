//! Kinesthetic gesture recognition toolkit: a simulated 7-DoF arm dragged
//! through gesture paths, joint telemetry, 84 descriptive features, a random
//! forest, and the evaluation protocols and rank statistics used to analyse
//! the recordings.

pub mod arm;
pub mod defaults;
pub mod evaluation;
pub mod features;
pub mod forest;
pub mod gesture;
pub mod numfmt;
pub mod seed;
pub mod synth;
pub mod telemetry;

pub use arm::{IkSettings, JointVector, KinematicChain, Pose};
pub use features::{extract_features, FeatureTable, FeatureVector};
pub use gesture::{GestureClass, StyleProfile};
pub use telemetry::{Dataset, JointSample, Recording};
