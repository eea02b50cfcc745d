//! Scan orchestration on top of `usscan-core`: the phase machine, trace
//! recording and replay, the streaming protocol and its WebSocket service.

pub mod workflow;
pub mod trace;
pub mod protocol;
pub mod control_loop;
pub mod service;
pub mod cli;
