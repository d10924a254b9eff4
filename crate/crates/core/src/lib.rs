//! Finite-horizon truncation and multiplier analysis for infinite-horizon
//! discrete-time optimal control problems.

pub mod error;
pub mod families;
pub mod horizon;
pub mod hypotheses;
pub mod instances;
pub mod limits;
pub mod linalg;
pub mod lp;
pub mod model;
pub mod operator;
pub mod report;
pub mod sets;
pub mod verify;

pub use error::{Error, Result};
pub use model::{ControlSystem, Process, Schedule, StateDomain};
pub use sets::{ConeGenerators, ConvexSet};
