//! Detection of bright marrow anomalies in 2D grayscale slices by mask
//! inpainting: reconstruct the bone region from its surroundings, equalize,
//! subtract, threshold with Otsu's method, and clean up morphologically.
//!
//! The toolkit is built around synthetic knee-like phantoms with exact
//! ground truth, so the whole chain is testable end to end:
//!
//! - [`image`] / [`io`]: raster types, resampling, component labeling, and
//!   exact file formats.
//! - [`phantom`]: slice generator with injectable lesions and a dataset
//!   manifest.
//! - [`augment`]: flips, multiplicative bias fields, histogram equalization.
//! - [`ffc`]: the FFC inpainting network with hand-derived gradients, its
//!   training loop, and a harmonic training-free solver.
//! - [`detect`]: difference map, Otsu thresholding, morphology, and the
//!   per-slice pipeline.
//! - [`eval`] / [`pipeline`]: pixel metrics, size stratification, and the
//!   multi-resolution sweep.

pub mod augment;
pub mod detect;
pub mod error;
pub mod eval;
pub mod ffc;
pub mod image;
pub mod io;
pub mod phantom;
pub mod pipeline;
pub mod rng;

pub use error::{Error, Result};
