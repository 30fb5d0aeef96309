//! Quantitative water-fat MRI toolkit.
//!
//! Simulates two-point Dixon and multi-echo (IDEAL-style) liver acquisitions
//! from synthetic phantoms, fits PDFF and R2* maps with the voxel-wise
//! two-point baselines and a regularized multi-peak nonlinear least-squares
//! fit, assembles paired Dixon/target datasets and scores predicted maps.
//!
//! # Modules
//! - `signal`: forward signal models (simple Dixon, decayed two-point, multi-peak)
//! - `phantom`: synthetic abdominal slices and their rendered acquisitions
//! - `estimators`: Dixon decomposition, exponential R2* baseline, NLLS fit
//! - `raster`: the float32 raster exchange type, masks and file format
//! - `imageops`: resampling, mutual information, translation registration
//! - `pipeline`: cohort construction, MI gating, splitting, manifests
//! - `eval`: masked MAE, regional means, regression and reports

pub mod error;
pub mod estimators;
pub mod eval;
pub mod imageops;
pub mod phantom;
pub mod pipeline;
pub mod raster;
pub mod signal;
mod rng;

pub use error::{Error, Result};
pub use estimators::{
    baseline_r2star_fit, dixon_decompose, dixon_fat_fraction, fit_map, nlls_fit_voxel,
    FatFraction, FitMethod, FitResult, NllsConfig, NllsSolver,
};
pub use eval::{
    build_report, masked_mae, mean_region_value, regression_r2, MetricReport, PredictionSource, Regression,
    TruthSource,
};
pub use imageops::{mutual_information, register_translation, resample_linear, translate, Registration};
pub use phantom::{generate_phantom, render_acquisitions, PhantomConfig, PhantomSlice};
pub use pipeline::{
    build_cohort, export_ml, mi_quality_filter, simulate_subject, split_dataset, DatasetManifest, PairedSample,
    PipelineConfig, Split,
};
pub use raster::{read_raster, write_raster, BinaryMask, RasterImage, SliceGeometry};
pub use signal::{
    add_complex_noise, in_opposed_echo_times, simulate_multi_echo, simulate_simple_dixon,
    simulate_two_point_r2star, ComplexSignal, EchoSchedule, FatSpectrum, TissueParams,
};
