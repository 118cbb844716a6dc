//! Leakage localization and key recovery on a simulated EM scan.
//!
//! The pipeline: measure a leakage scalar (amplitude, TVLA or SNR) at grid
//! cells through an [`instrument::Instrument`], find a strong cell with the
//! two-phase gradient [`search`], then run a correlation attack there
//! ([`attack`]). [`budget`] models what the whole thing costs against
//! attacking every cell.

pub mod attack;
pub mod budget;
pub mod calibrate;
pub mod cli;
pub mod crypto;
pub mod device;
pub mod error;
pub mod instrument;
pub mod io;
pub mod measures;
pub mod rng;
pub mod search;
pub mod stats;
pub mod trace;

pub use error::{Error, Result};
pub use trace::{Cell, Trace};
