//! Refined near-soliton profiles for radial NLS: ground states, linearized spectra,
//! resonance combinatorics, profile recursion, radiation damping and dynamics.

// `!(x > 0.0)` guards are meant to reject NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod banded;
pub mod cache;
pub mod dynamics;
pub mod error;
pub mod fgr;
pub mod grid;
pub mod groundstate;
pub mod jet;
pub mod linearization;
pub mod nonlinearity;
pub mod pipeline;
pub mod profile;
pub mod resonance;
pub mod status;

pub use error::{Error, Result};
pub use grid::{GridSpec, Parity, RadialField, RadialGrid};
pub use nonlinearity::NonlinearitySpec;
pub use groundstate::GroundState;
pub use status::Status;
pub use resonance::{MultiIndex, ResonanceStructure};
pub use pipeline::{run_pipeline, AssumptionReport, PipelineConfig};
