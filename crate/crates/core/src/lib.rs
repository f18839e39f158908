//! Simulation and statistical analysis of EPR correlations between two
//! halves of a split, spin-squeezed two-component condensate.
//!
//! The pipeline prepares a squeezed collective spin ([`spin`]), splits it
//! on a 50:50 beam splitter ([`splitter`]), samples noisy shot records
//! ([`sampler`]) and evaluates the Heisenberg, EPR-steering and
//! entanglement criteria from those records ([`criteria`]). Detector
//! calibration and pulse selectivity live in [`calibration`] and [`pulses`].

pub mod calibration;
pub mod cli;
pub mod config;
pub mod criteria;
pub mod error;
pub mod experiment;
pub mod io;
pub mod linalg;
pub mod plot;
pub mod pulses;
pub mod spin;
pub mod sampler;
pub mod splitter;

pub use error::{Error, Result};
