use num_complex::Complex64;
use rayon::prelude::*;

use super::dixon::{baseline_r2star_fit, dixon_fat_fraction_with_eps};
use super::nlls::{FitResult, NllsConfig, NllsSolver};
use crate::error::{Error, Result};
use crate::raster::{apply_mask, BinaryMask, RasterImage};
use crate::signal::{EchoSchedule, FatSpectrum};

/// Multi-echo rasters interleave `echo<k>_re`, `echo<k>_im`, k = 1..M.
pub const ECHO_CHANNEL_PREFIX: &str = "echo";

/// Dixon channel order.
pub const DIXON_CHANNELS: [&str; 4] = ["in_phase", "opposed_phase", "water", "fat"];

#[derive(Clone, Debug)]
pub enum FitMethod {
    /// Fat fraction from the water and fat Dixon channels.
    Dixon,
    /// Two-point exponential R2* from the in/opposed-phase magnitudes.
    BaselineR2s { in_phase_time: f64, opposed_time: f64 },
    /// Multi-peak NLLS over interleaved complex echo channels.
    Nlls {
        schedule: EchoSchedule,
        spectrum: FatSpectrum,
        config: NllsConfig,
    },
}

impl FitMethod {
    pub fn name(&self) -> &'static str {
        match self {
            FitMethod::Dixon => "dixon",
            FitMethod::BaselineR2s { .. } => "baseline_r2s",
            FitMethod::Nlls { .. } => "nlls",
        }
    }
}

/// `1e-6` times the 99th percentile (nearest rank) of `totals`.
pub fn image_epsilon(totals: &[f64]) -> f64 {
    if totals.is_empty() {
        return 0.0;
    }
    let mut sorted = totals.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let rank = ((0.99 * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    1e-6 * sorted[rank - 1].max(0.0)
}

/// Applies a voxel-wise estimator over a whole slice.
///
/// Output channels: `pdff` (dixon), `r2star` (baseline_r2s) or both (nlls).
/// All-zero input voxels produce zeros.
pub fn fit_map(image: &RasterImage, method: &FitMethod) -> Result<RasterImage> {
    fit_map_masked(image, method, None)
}

/// As [`fit_map`], but voxels outside `mask` are not fitted and stay 0.
pub fn fit_map_masked(image: &RasterImage, method: &FitMethod, mask: Option<&BinaryMask>) -> Result<RasterImage> {
    if let Some(m) = mask {
        m.check_against(image)?;
    }
    let out = fit_unmasked(image, method, mask)?;
    match mask {
        Some(m) => Ok(apply_mask(&out, m)?.0),
        None => Ok(out),
    }
}

fn fit_unmasked(image: &RasterImage, method: &FitMethod, mask: Option<&BinaryMask>) -> Result<RasterImage> {
    let geom = image.geometry;
    match method {
        FitMethod::Dixon => {
            image.require_channels(4)?;
            let (water, fat) = (image.plane(2), image.plane(3));
            let totals: Vec<f64> = water.iter().zip(fat).map(|(&w, &f)| w as f64 + f as f64).collect();
            let eps = image_epsilon(&totals);
            let pdff = water
                .iter()
                .zip(fat)
                .map(|(&w, &f)| dixon_fat_fraction_with_eps(w as f64, f as f64, eps).pdff)
                .collect();
            RasterImage::from_planes(geom, vec![("pdff", pdff)])
        }
        FitMethod::BaselineR2s {
            in_phase_time,
            opposed_time,
        } => {
            image.require_channels(4)?;
            let (ip, op) = (image.plane(0), image.plane(1));
            let in_first = in_phase_time < opposed_time;
            let (t1, t2) = if in_first {
                (*in_phase_time, *opposed_time)
            } else {
                (*opposed_time, *in_phase_time)
            };
            if !(t2 > t1) {
                return Err(Error::invalid("baseline R2*: echo times must differ"));
            }
            let r2 = ip
                .iter()
                .zip(op)
                .map(|(&a, &b)| {
                    let (m1, m2) = if in_first { (a, b) } else { (b, a) };
                    if m1 > 0.0 && m2 > 0.0 {
                        baseline_r2star_fit(m1 as f64, m2 as f64, t1, t2).unwrap_or(0.0)
                    } else {
                        0.0
                    }
                })
                .collect();
            RasterImage::from_planes(geom, vec![("r2star", r2)])
        }
        FitMethod::Nlls {
            schedule,
            spectrum,
            config,
        } => {
            let m = schedule.len();
            image.require_channels(2 * m)?;
            let solver = NllsSolver::new(schedule, spectrum, config)?;
            let planes: Vec<&[f32]> = (0..2 * m).map(|c| image.plane(c)).collect();
            let inside = |v: usize| mask.is_none_or(|m| m.bits()[v]);
            let fits = (0..geom.len())
                .into_par_iter()
                .map(|v| {
                    if !inside(v) {
                        return Ok(FitResult::default());
                    }
                    let echoes: Vec<Complex64> = (0..m)
                        .map(|k| Complex64::new(planes[2 * k][v] as f64, planes[2 * k + 1][v] as f64))
                        .collect();
                    solver.fit(&echoes)
                })
                .collect::<Result<Vec<_>>>()?;
            let totals: Vec<f64> = fits.iter().map(|f| f.water + f.fat).collect();
            let fitted: Vec<f64> = (0..totals.len()).filter(|&v| inside(v)).map(|v| totals[v]).collect();
            let eps = image_epsilon(&fitted);
            let mut pdff = Vec::with_capacity(fits.len());
            let mut r2 = Vec::with_capacity(fits.len());
            for (fit, total) in fits.iter().zip(&totals) {
                if fit.degenerate || *total <= eps {
                    pdff.push(0.0);
                    r2.push(0.0);
                } else {
                    pdff.push(fit.pdff);
                    r2.push(fit.r2star);
                }
            }
            RasterImage::from_planes(geom, vec![("pdff", pdff), ("r2star", r2)])
        }
    }
}

/// `echo1_re, echo1_im, ..., echoM_im`.
pub fn echo_channel_names(m: usize) -> Vec<String> {
    (1..=m)
        .flat_map(|k| [format!("{ECHO_CHANNEL_PREFIX}{k}_re"), format!("{ECHO_CHANNEL_PREFIX}{k}_im")])
        .collect()
}
