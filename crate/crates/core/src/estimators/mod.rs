//! Parameter estimation: two-point Dixon decomposition, the two-point
//! exponential R2* baseline and the regularized multi-peak NLLS fit.

mod dixon;
mod map;
mod nlls;

pub use dixon::{baseline_r2star_fit, dixon_decompose, dixon_fat_fraction, dixon_fat_fraction_with_eps, FatFraction};
pub use map::{echo_channel_names, fit_map, fit_map_masked, image_epsilon, FitMethod, DIXON_CHANNELS, ECHO_CHANNEL_PREFIX};
pub use nlls::{nlls_fit_voxel, FitResult, NllsConfig, NllsSolver, NllsTrace};
