//! Live loop: a client traces a stroke on a canvas, the simulated arm
//! follows it, and the finished gesture is classified by a loaded forest.

pub mod protocol;
pub mod server;
pub mod session;

pub use protocol::{ClientMessage, Effector, ServerMessage};
pub use server::{model_info, router, serve, ServiceOptions};
pub use session::{map_canvas_to_plane, plane_to_canvas, replay, stroke_from_path, Engine, Session, CANVAS_SIZE};
