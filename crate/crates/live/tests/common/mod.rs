#![allow(dead_code)]

use std::sync::{Arc, OnceLock};

use kinegest::defaults::{DATA_SEED, MODEL_SEED, PARTICIPANTS, TRIALS};
use kinegest::evaluation::fit;
use kinegest::forest::TrainConfig;
use kinegest::gesture::synth_path;
use kinegest::synth::{synthesize_dataset, DatasetConfig};
use kinegest::{FeatureTable, GestureClass, StyleProfile};
use kinegest_live::{stroke_from_path, ClientMessage, Effector, Engine, ServerMessage};

pub fn engine() -> Arc<Engine> {
    static ENGINE: OnceLock<Arc<Engine>> = OnceLock::new();
    ENGINE
        .get_or_init(|| {
            let data = synthesize_dataset(PARTICIPANTS, TRIALS, DATA_SEED, &DatasetConfig::default()).unwrap();
            let table = FeatureTable::from_recordings(data.recordings());
            let rows: Vec<_> = table.rows.iter().collect();
            let config = TrainConfig {
                seed: MODEL_SEED,
                ..TrainConfig::default()
            };
            Arc::new(Engine::new(fit(&rows, &config).unwrap()))
        })
        .clone()
}

/// hello, the canonical path of a letter gesture traced at 100 Hz, end.
pub fn canonical_stroke(engine: &Engine, gesture: GestureClass) -> Vec<ClientMessage> {
    let origin = engine.synth.writing_origin;
    let path = synth_path(gesture, &StyleProfile::canonical(), &origin, &engine.synth).unwrap();
    let mut msgs = vec![ClientMessage::Hello {
        effector: Effector::Knob,
    }];
    msgs.extend(stroke_from_path(&path, &origin, 100.0));
    msgs
}

pub fn predictions(replies: &[ServerMessage]) -> Vec<&ServerMessage> {
    replies
        .iter()
        .filter(|m| matches!(m, ServerMessage::Prediction { .. }))
        .collect()
}

pub fn arm_state_times(replies: &[ServerMessage]) -> Vec<f64> {
    replies
        .iter()
        .filter_map(|m| match m {
            ServerMessage::ArmState { t_ms, .. } => Some(*t_ms),
            _ => None,
        })
        .collect()
}
