//! Library side of the `greenhouse` binary: scenario files, the deterministic
//! in-process simulator, the TCP composition and the subcommand bodies.

pub mod export;
pub mod framecmd;
pub mod scenario;
pub mod sim;
pub mod tcp;
