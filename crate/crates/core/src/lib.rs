//! Two-qubit polarization state tomography and device-independent QKD
//! certification.
//!
//! * [`quantum`]: density matrices, Pauli algebra, fidelity and purity.
//! * [`tomography`]: maximum-likelihood reconstruction from 36-setting
//!   coincidence counts, synthetic data and bootstrap uncertainties.
//! * [`metrics`]: CHSH parameter, Horodecki maximum, concurrence,
//!   entanglement of formation, QBER and self-testing bounds.
//! * [`keyrate`]: DIQKD key-rate bound and the daylight link model.
//! * [`car`]: coincidence-to-accidentals model and efficiency fit.
//! * [`io`]: CSV and JSON file formats.

// `!(x > 0.0)` also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod car;
pub mod error;
pub mod io;
pub mod json;
pub mod keyrate;
pub mod metrics;
pub mod quantum;
pub mod seed;
mod simplex;
pub mod tomography;

pub use error::{Error, Result};
