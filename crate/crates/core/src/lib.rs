//! Digital twin prototypes for networks of underwater sensor platforms.
//!
//! The crate models each platform's embedded stack (sensor and modem
//! emulators behind swappable byte channels, a local message bus, and a
//! shadow log of everything published) and connects the platforms to a
//! research vessel through a discrete-event acoustic medium.

pub mod adminshell;
pub mod bus;
pub mod channel;
pub mod emulators;
pub mod medium;
pub mod msgschema;
pub mod scenarios;
pub mod schemas;
pub mod shadow;
pub mod sim;
pub mod sweep;

pub use scenarios::config::SimConfig;
pub use scenarios::{run_scenario, run_scenario_with_env, ScenarioOutput, SimError, SimReport, Simulation};
