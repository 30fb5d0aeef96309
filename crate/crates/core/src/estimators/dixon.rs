use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute guard used when no image-level epsilon is available.
pub const DEFAULT_FF_EPSILON: f64 = 1e-12;

/// Water and fat from in-phase `s1` and opposed-phase `s2`.
pub fn dixon_decompose(s1: f64, s2: f64) -> (f64, f64) {
    (0.5 * (s1 + s2), 0.5 * (s1 - s2))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FatFraction {
    /// Percent, clamped to `[0, 100]`.
    pub pdff: f64,
    /// `water + fat` was at or below the guard.
    pub degenerate: bool,
}

pub fn dixon_fat_fraction(water: f64, fat: f64) -> FatFraction {
    dixon_fat_fraction_with_eps(water, fat, DEFAULT_FF_EPSILON)
}

pub fn dixon_fat_fraction_with_eps(water: f64, fat: f64, eps: f64) -> FatFraction {
    let total = water + fat;
    if total > eps {
        FatFraction {
            pdff: (100.0 * fat / total).clamp(0.0, 100.0),
            degenerate: false,
        }
    } else {
        FatFraction {
            pdff: 0.0,
            degenerate: true,
        }
    }
}

/// Mono-exponential R2* through two magnitudes. Not clamped: fat signal
/// re-phasing between the echoes drives it negative.
pub fn baseline_r2star_fit(mag1: f64, mag2: f64, t1: f64, t2: f64) -> Result<f64> {
    if !(mag1 > 0.0 && mag2 > 0.0) || !mag1.is_finite() || !mag2.is_finite() {
        return Err(Error::invalid(format!(
            "magnitudes must be positive, got {mag1} and {mag2}"
        )));
    }
    if !(t2 > t1) || !t1.is_finite() || !t2.is_finite() {
        return Err(Error::invalid(format!(
            "echo times must be increasing, got {t1} and {t2}"
        )));
    }
    Ok((mag1 / mag2).ln() / (t2 - t1))
}
