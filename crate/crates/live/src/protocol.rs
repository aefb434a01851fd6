//! Messages exchanged over the WebSocket, one JSON object per text frame,
//! discriminated by `type`.

use kinegest::forest::Prediction;
use kinegest::GestureClass;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Effector {
    Knob,
    Hand,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClientMessage {
    Hello {
        effector: Effector,
    },
    /// Normalized canvas position (`v = 0` at the top) with the client's
    /// monotonic timestamp.
    Point {
        u: f64,
        v: f64,
        t_ms: f64,
    },
    End,
    /// One handshake driven from the canvas. `amplitude` is the vertical
    /// drag as a fraction of the canvas height, `period_ms` the time per
    /// shake, `cycles` the number of shakes (0 performs the G-lock).
    GraspCycle {
        amplitude: f64,
        period_ms: f64,
        cycles: u32,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ServerMessage {
    ArmState {
        t_ms: f64,
        q: [f64; 7],
    },
    Prediction {
        label: GestureClass,
        votes: [u32; 4],
        duration_s: f64,
        max_displacement_m: f64,
    },
    Error {
        code: ErrorCode,
        message: String,
    },
}

impl ServerMessage {
    pub fn prediction(p: &Prediction, duration_s: f64, max_displacement_m: f64) -> Self {
        ServerMessage::Prediction {
            label: p.label,
            votes: p.votes,
            duration_s,
            max_displacement_m,
        }
    }

    pub fn error(code: ErrorCode, message: impl Into<String>) -> Self {
        ServerMessage::Error {
            code,
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    BadMessage,
    OutOfRange,
    TimeOrder,
    TooShort,
    IkFailure,
    Busy,
    Internal,
}
