//! Warped cap-neck-cap metrics that make a Morse-Bott height function
//! transnormal and isoparametric, with numerical certificates.

pub mod assembly;
pub mod bundle;
pub mod chart;
pub mod conformal;
pub mod error;
pub mod interp;
pub mod io;
pub mod jet;
pub mod moser;
pub mod neck;
pub mod profile;
pub mod ode;
pub mod quadrature;
pub mod report;
pub mod scenario;
pub mod spectral;
pub mod sphere;
pub mod stats;
pub mod umbilic;
pub mod warped_disc;

pub use error::{IsoflowError, Result};
