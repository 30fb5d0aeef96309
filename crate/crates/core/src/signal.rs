//! Forward signal models for water-fat imaging.
//!
//! Three models of increasing fidelity:
//! - simple two-point Dixon: `S1 = W + F`, `S2 = W - F`
//! - two-point Dixon with R2* decay: `S1 = (W + F) e^{-t1 R2*}`, `S2 = (W - F) e^{-t2 R2*}`
//! - multi-peak multi-echo: `S(t) = (W + F sum_i a_i e^{-j 2 pi f_i t}) e^{-t R2*}`

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::stream_rng;

/// Complex MR signal sample.
pub type ComplexSignal = Complex64;

/// Proton gyromagnetic ratio over 2 pi, in MHz/T.
pub const GYROMAGNETIC_RATIO_MHZ_PER_T: f64 = 42.577478;

/// Default main field strength (T).
pub const DEFAULT_FIELD_STRENGTH_T: f64 = 1.5;

/// Chemical shift of the main methylene fat peak relative to water (ppm).
pub const MAIN_FAT_PEAK_PPM: f64 = 3.4;

/// Six-peak liver fat spectrum: offsets relative to water (ppm).
pub const LIVER_FAT_PPM: [f64; 6] = [-3.80, -3.40, -2.60, -1.94, -0.39, 0.60];

/// Relative amplitudes matching [`LIVER_FAT_PPM`].
pub const LIVER_FAT_AMPLITUDES: [f64; 6] = [0.087, 0.693, 0.128, 0.004, 0.039, 0.048];

/// Ground-truth tissue composition of one voxel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TissueParams {
    pub water: f64,
    pub fat: f64,
    /// Decay rate in 1/s.
    pub r2star: f64,
}

impl TissueParams {
    pub fn new(water: f64, fat: f64, r2star: f64) -> Result<Self> {
        let p = TissueParams { water, fat, r2star };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !(ok(self.water) && ok(self.fat) && ok(self.r2star)) {
            return Err(Error::invalid(format!(
                "tissue parameters must be finite and non-negative, got {self:?}"
            )));
        }
        Ok(())
    }

    /// Fat fraction in percent, 0 for an empty voxel.
    pub fn pdff(&self) -> f64 {
        let total = self.water + self.fat;
        if total > 0.0 {
            100.0 * self.fat / total
        } else {
            0.0
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FatPeak {
    /// Offset from the water resonance in Hz.
    pub freq_hz: f64,
    pub amplitude: f64,
}

/// Relative-amplitude fat spectrum. Each species contributes `amplitude * F`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FatSpectrum {
    peaks: Vec<FatPeak>,
}

impl FatSpectrum {
    /// Amplitudes are rescaled to sum to 1 so that `F` is the total fat signal;
    /// published tables are rounded (the liver table sums to 0.999).
    pub fn new(mut peaks: Vec<FatPeak>) -> Result<Self> {
        if peaks.is_empty() {
            return Err(Error::invalid("fat spectrum needs at least one peak"));
        }
        if peaks
            .iter()
            .any(|p| !p.freq_hz.is_finite() || !p.amplitude.is_finite() || p.amplitude < 0.0)
        {
            return Err(Error::invalid(
                "fat peak frequencies must be finite and amplitudes non-negative",
            ));
        }
        let total: f64 = peaks.iter().map(|p| p.amplitude).sum();
        if !(total > 0.0) {
            return Err(Error::invalid("fat peak amplitudes sum to zero"));
        }
        if total != 1.0 {
            peaks.iter_mut().for_each(|p| p.amplitude /= total);
        }
        Ok(FatSpectrum { peaks })
    }

    /// Build from chemical shifts in ppm relative to water.
    pub fn from_ppm(ppm: &[f64], amplitudes: &[f64], field_strength_t: f64) -> Result<Self> {
        if ppm.len() != amplitudes.len() {
            return Err(Error::invalid(format!(
                "{} peak offsets but {} amplitudes",
                ppm.len(),
                amplitudes.len()
            )));
        }
        if !(field_strength_t.is_finite() && field_strength_t > 0.0) {
            return Err(Error::invalid(format!(
                "field strength must be positive, got {field_strength_t}"
            )));
        }
        let hz_per_ppm = GYROMAGNETIC_RATIO_MHZ_PER_T * field_strength_t;
        let peaks = ppm
            .iter()
            .zip(amplitudes)
            .map(|(&shift, &amplitude)| FatPeak {
                freq_hz: shift * hz_per_ppm,
                amplitude,
            })
            .collect();
        Self::new(peaks)
    }

    /// The six-peak liver spectrum at the given field strength.
    pub fn liver(field_strength_t: f64) -> Result<Self> {
        Self::from_ppm(&LIVER_FAT_PPM, &LIVER_FAT_AMPLITUDES, field_strength_t)
    }

    pub fn single_peak(freq_hz: f64) -> Result<Self> {
        Self::new(vec![FatPeak {
            freq_hz,
            amplitude: 1.0,
        }])
    }

    pub fn peaks(&self) -> &[FatPeak] {
        &self.peaks
    }

    pub fn len(&self) -> usize {
        self.peaks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.peaks.is_empty()
    }

    /// The peak with the largest relative amplitude (first on ties).
    pub fn main_peak(&self) -> FatPeak {
        self.peaks
            .iter()
            .copied()
            .fold(self.peaks[0], |best, p| if p.amplitude > best.amplitude { p } else { best })
    }

    /// Unit-fat phasor `sum_i a_i exp(-j 2 pi f_i t)`.
    pub fn phasor(&self, t: f64) -> Complex64 {
        self.peaks
            .iter()
            .map(|p| p.amplitude * Complex64::from_polar(1.0, -2.0 * PI * p.freq_hz * t))
            .sum()
    }
}

/// Acquisition echo times (s), strictly increasing and positive.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EchoSchedule {
    times: Vec<f64>,
}

impl EchoSchedule {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.len() < 2 {
            return Err(Error::invalid(format!(
                "echo schedule needs at least 2 echoes, got {}",
                times.len()
            )));
        }
        if times.iter().any(|t| !t.is_finite() || *t <= 0.0) {
            return Err(Error::invalid("echo times must be finite and positive"));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("echo times must be strictly increasing"));
        }
        Ok(EchoSchedule { times })
    }

    /// `count` echoes starting at `first` with constant `spacing`.
    pub fn uniform(first: f64, spacing: f64, count: usize) -> Result<Self> {
        Self::new((0..count).map(|k| first + spacing * k as f64).collect())
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Two-point Dixon without relaxation: `(W + F, W - F)`.
pub fn simulate_simple_dixon(p: &TissueParams) -> (f64, f64) {
    (p.water + p.fat, p.water - p.fat)
}

/// Two-point Dixon with mono-exponential decay. The second value is signed.
pub fn simulate_two_point_r2star(p: &TissueParams, t1: f64, t2: f64) -> (f64, f64) {
    (
        (p.water + p.fat) * (-t1 * p.r2star).exp(),
        (p.water - p.fat) * (-t2 * p.r2star).exp(),
    )
}

/// Multi-peak complex signal at every echo of `sched`.
pub fn simulate_multi_echo(
    p: &TissueParams,
    spec: &FatSpectrum,
    sched: &EchoSchedule,
) -> Vec<ComplexSignal> {
    sched
        .times()
        .iter()
        .map(|&t| signal_at(p, spec, t))
        .collect()
}

#[inline]
pub(crate) fn signal_at(p: &TissueParams, spec: &FatSpectrum, t: f64) -> ComplexSignal {
    (p.water + p.fat * spec.phasor(t)) * (-t * p.r2star).exp()
}

/// Opposed-phase and in-phase echo times for a water-fat shift of `delta_ppm`.
///
/// Returns `(t_opposed, t_in)` in seconds.
pub fn in_opposed_echo_times(field_strength_t: f64, delta_ppm: f64) -> Result<(f64, f64)> {
    if !(field_strength_t.is_finite() && field_strength_t > 0.0) {
        return Err(Error::invalid(format!(
            "field strength must be positive, got {field_strength_t}"
        )));
    }
    let delta_hz = (GYROMAGNETIC_RATIO_MHZ_PER_T * field_strength_t * delta_ppm).abs();
    if !(delta_hz.is_finite() && delta_hz > 0.0) {
        return Err(Error::invalid(format!(
            "chemical shift {delta_ppm} ppm gives a degenerate frequency offset"
        )));
    }
    Ok((1.0 / (2.0 * delta_hz), 1.0 / delta_hz))
}

/// Adds i.i.d. zero-mean Gaussian noise to real and imaginary parts.
pub fn add_complex_noise(
    signals: &[ComplexSignal],
    sigma: f64,
    rng_seed: u64,
) -> Result<Vec<ComplexSignal>> {
    let mut out = signals.to_vec();
    let mut rng = stream_rng(rng_seed, 0);
    add_noise_in_place(&mut out, sigma, &mut rng)?;
    Ok(out)
}

pub(crate) fn add_noise_in_place<R: Rng + ?Sized>(
    signals: &mut [ComplexSignal],
    sigma: f64,
    rng: &mut R,
) -> Result<()> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::invalid(format!(
            "noise sigma must be non-negative, got {sigma}"
        )));
    }
    if sigma == 0.0 {
        return Ok(());
    }
    let normal = Normal::new(0.0, sigma).expect("sigma validated");
    for s in signals.iter_mut() {
        s.re += normal.sample(rng);
        s.im += normal.sample(rng);
    }
    Ok(())
}
