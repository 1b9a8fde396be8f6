//! Wiener chaos of fractional Brownian motion on the simplex.

pub mod chaos_mc;
pub mod error;
pub mod fbm;
pub mod grid;
pub mod holder;
pub mod integrand;
pub mod kernel;
pub mod ldp;
pub mod quad;
pub mod simplex_kernel;
pub mod skeleton_rate;
pub mod stats;

pub use error::{Error, Result};
pub use grid::TimeGrid;
pub use kernel::{HurstParams, KernelTable, Regime};
