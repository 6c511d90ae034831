//! Management server for the greenhouse: gateway and app listeners, the
//! WebSocket bridge, record persistence, history queries and the automatic
//! control loop.

pub mod auth;
pub mod bridge;
pub mod client;
pub mod engine;
pub mod history;
pub mod net;
pub mod store;

pub use engine::{Effects, EngineError, ServerConfig, ServerCore};
pub use net::{start, NetConfig, ServerHandle};
