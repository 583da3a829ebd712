//! Monte Carlo evaluation of masked (coded-aperture) and unmasked gamma-ray
//! detector arrays in roadside drive-by source search.
//!
//! The pipeline runs bottom-up through the modules:
//!
//! - [`spectra`]: quadratic energy binning, the source template and its window.
//! - [`background`]: a seeded synthetic survey and the learned per-location
//!   background model (Poisson likelihood, Gaussian prior, MAP rates).
//! - [`scene`]: drive-by geometry, inverse-square exposure, the coded mask and
//!   the prior-augmented exposure matrix.
//! - [`sensor`]: per-second observations with injected source counts.
//! - [`scoring`]: pseudoinverse decoding (masked) and censored energy
//!   windowing (unmasked).
//! - [`fusion`]: Bayesian aggregation and weighted combining onto a spatial grid.
//! - [`harness`]: replicates, ROC curves, detection probability at fixed false
//!   positive rate, localization statistics and CSV output.

pub mod background;
pub mod config;
pub mod error;
pub mod fusion;
pub mod harness;
pub mod io;
pub mod sampling;
pub mod scene;
pub mod scoring;
pub mod sensor;
pub mod spectra;

pub use error::{Error, ErrorKind, Result};
