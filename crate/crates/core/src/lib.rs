//! Random demodulator (RD) simulation and filter calibration.
//!
//! The crate models the RD front end as `Φ = B·H·P` (stride-`R` subsampler,
//! banded Toeplitz filter, diagonal ±1 chipping), derives the filter taps from
//! a doubly terminated 4th-order LC ladder, and estimates the impulse-response
//! error of a mismatched filter from measurements of a known calibration
//! signal. A Fourier-probing baseline and a Monte-Carlo harness sit on top.
//!
//! Module map:
//!
//! * [`filter`]: LC-ladder transfer functions and component tolerance draws.
//! * [`discretize`]: bilinear transform, partial fractions, impulse responses.
//! * [`rd`]: chipping, multitone signals, the forward operator and the DFT dictionary.
//! * [`solver`]: BPDN (spectral projected gradient on the Pareto curve),
//!   least squares and constrained Tikhonov.
//! * [`calibrate`]: model-based calibration and the Fourier-probing baseline.
//! * [`experiments`]: seeded Monte-Carlo studies and their CSV/JSON outputs.

pub mod calibrate;
pub mod discretize;
pub mod error;
pub mod experiments;
pub mod filter;
pub mod poly;
pub mod rd;
pub mod solver;

pub use error::{Error, Result};
