//! Simulation of kick-forced one-dimensional viscous conservation laws
//!
//! ```text
//! ∂t u = ∂x[κ(u) ∂x u − H(u) + V]
//! ```
//!
//! with a spatially smooth random potential `V` applied as impulses at integer times.

pub mod ergodics;
pub mod error;
pub mod field;
pub mod model;
pub mod noise;
pub mod solver;
pub mod transforms;

pub use error::{Error, Result};
pub use field::{Field, Grid};
pub use model::{builtin_model, builtin_model_by_name, ModelFamily, ModelSpec};
pub use noise::{sample_kick, KickSample, KickSpec};
pub use solver::{FluxScheme, SolverConfig, TrajectoryRecord};
