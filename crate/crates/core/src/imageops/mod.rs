//! Preprocessing primitives: linear resampling, histogram mutual information,
//! translation registration and masking.

mod mi;
mod register;
mod resample;

pub use crate::raster::apply_mask;
pub use mi::{entropy, mutual_information, JointHistogram, DEFAULT_MI_BINS};
pub use register::{register_translation, register_translation_with_bins, Registration, DEFAULT_SEARCH_RADIUS};
pub use resample::{resample_linear, translate};
