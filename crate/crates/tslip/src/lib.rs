//! Planar trunk spring-loaded inverted pendulum (TSLIP) running model with
//! virtual-point hip-torque control.
//!
//! The crate simulates apex-to-apex running strides of a trunk+leg model,
//! drives them to stride-periodic gaits with a two-phase convergence
//! protocol (pitch PID bootstrap, then pure virtual-point control with
//! stride-to-stride VP-angle adaptation), and analyzes the resulting gaits:
//! ground-reaction-force decompositions, trunk-oscillation metrics, duty
//! factors, and the per-stride work ledger of spring, damper, and hip.
//!
//! Modules:
//! * [`model`] - parameters, state types, force/torque laws.
//! * [`integrator`] - adaptive RK5(4) with event root-finding.
//! * [`controllers`] - leg placement, pitch PID, VP-angle adaptation, and
//!   the gait convergence protocol.
//! * [`engine`] - the hybrid flight/stance automaton and stride recording.
//! * [`analysis`] - trunk metrics, GRF decomposition, work ledger.
//! * [`sweep`] - the VP-radius x speed experiment grid with per-speed
//!   damping tuning.
//! * [`config`] - run configuration, validation, config hashing.
//! * [`io`] - CSV/plot/manifest emission and time-series reloading.

pub mod analysis;
pub mod config;
pub mod controllers;
pub mod engine;
pub mod integrator;
pub mod io;
pub mod model;
pub mod sweep;

pub use engine::{GaitRun, StrideRecord};
pub use model::{BodyState, ModelParams, VpTarget};
