//! Reference models: feeder power flow, PV inverter, load profiles.

mod models;
pub mod powerflow;
pub mod profile;
pub mod pv;

pub use models::{builtin_registry, profile_first_event, Gain, Monitor, PowerFlow, ProfilePlayer, PvInverter};
pub use powerflow::{bfs_powerflow, linear_feeder, GridModel, Injection, Line, PowerFlowError, PowerFlowSolution};
pub use profile::{profile_step, LoadProfile, ProfileMode, ProfilePoint, ProfileSample, Synthetic};
pub use pv::{pv_power, volt_var, PvParams};
