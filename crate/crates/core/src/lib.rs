//! Household greenhouse stack: wire protocol, fuzzy climate controller, plant
//! model, simulated ZigBee sensor network and the serial/TCP gateway.

pub mod actuator;
pub mod fuzzy;
pub mod gateway;
pub mod link;
pub mod plant;
pub mod protocol;
pub mod sensor_net;

pub use actuator::{Actuator, ActuatorBank};
pub use protocol::{decode_frame, encode_frame, frame_stream_scan, Frame};
