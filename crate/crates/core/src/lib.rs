//! Energy-harvesting joint source-channel coding: rate models, distortion
//! bounds, variational power policies, constant tuning and an event-driven
//! simulator.

pub mod distortion;
pub mod exec;
pub mod models;
pub mod numerics;
pub mod policy;
pub mod search;
pub mod simulator;

pub use exec::Execution;
