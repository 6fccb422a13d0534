//! Pseudospectral construction engine and verification harness for the
//! relaxed (Reynolds/magnetic stress) MHD system on the periodic box
//! `T^3 = R^3/Z^3`.
//!
//! The crate builds one stage of a glue-and-perturb iteration:
//!
//! * exact local MHD flows are glued with a temporal partition of unity,
//!   concentrating the stress errors in small overlap intervals,
//! * intermittent shear flows with temporal concentration profiles are
//!   assembled into a divergence-free perturbation that cancels the
//!   low-frequency part of the glued stresses,
//! * the stage-(q+1) stresses are reassembled from the linear and
//!   oscillation decompositions and every algebraic identity the
//!   construction rests on is checked numerically.
//!
//! All fields live on an `N^3` grid with Fourier coefficients as the
//! canonical representation; every operator of the construction is a
//! Fourier multiplier, products are formed in real space under a 2/3-rule
//! truncation, so the identity checks are exact to round-off on the kept
//! modes.

pub mod config;
pub mod error;
pub mod fft;
pub mod field;
pub mod geometry;
pub mod gluing;
pub mod grid;
pub mod mhd;
pub mod norms;
pub mod ops;
pub mod params;
pub mod perturbation;
pub mod profiles;
pub mod report;
pub mod shear;
pub mod stage;
pub mod stress;
pub mod timecut;

pub use error::Error;
pub use field::{Field, Rank, SymFlag};
pub use grid::Grid3;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
