use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::mi::{Binning, JointHistogram, DEFAULT_MI_BINS};
use super::resample::sample_bilinear;
use crate::error::{Error, Result};
use crate::raster::RasterImage;

pub const DEFAULT_SEARCH_RADIUS: usize = 20;

/// Candidates overlapping less than this fraction of the image are skipped.
const MIN_OVERLAP_FRACTION: f64 = 0.25;
/// Sub-voxel refinement samples MI on a square grid of this step (voxels)
/// spanning one voxel either side of the integer optimum.
const REFINE_STEP: f64 = 0.25;

/// Translation that maps `moving` onto `fixed`: `translate(moving, dy, dx)` aligns them.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Registration {
    pub dy: f64,
    pub dx: f64,
    /// Mutual information (nats) over the overlap at the optimum.
    pub mi: f64,
}

struct Problem<'a> {
    rows: usize,
    cols: usize,
    bins: usize,
    fixed_bins: Vec<u16>,
    moving: &'a [f32],
    moving_binning: Binning,
    moving_bins: Vec<u16>,
}

impl Problem<'_> {
    fn integer_mi(&self, dy: i64, dx: i64, hist: &mut JointHistogram) -> Option<f64> {
        let (rows, cols) = (self.rows as i64, self.cols as i64);
        let (r0, r1) = (dy.max(0), (rows + dy).min(rows));
        let (c0, c1) = (dx.max(0), (cols + dx).min(cols));
        if r1 <= r0 || c1 <= c0 {
            return None;
        }
        let overlap = ((r1 - r0) * (c1 - c0)) as f64;
        if overlap < MIN_OVERLAP_FRACTION * (rows * cols) as f64 {
            return None;
        }
        hist.clear();
        for r in r0..r1 {
            let f_row = &self.fixed_bins[(r * cols) as usize..];
            let m_row = &self.moving_bins[((r - dy) * cols) as usize..];
            for c in c0..c1 {
                hist.add(f_row[c as usize] as usize, m_row[(c - dx) as usize] as usize);
            }
        }
        Some(hist.mutual_information())
    }

    /// MI with the moving image bilinearly shifted by a fractional offset,
    /// restricted to voxels whose source position lies inside the moving extent.
    fn shifted_mi(&self, dy: f64, dx: f64) -> Option<f64> {
        let mut hist = JointHistogram::new(self.bins);
        for r in 0..self.rows {
            for c in 0..self.cols {
                if let Some(v) =
                    sample_bilinear(self.moving, self.rows, self.cols, r as f64 - dy, c as f64 - dx)
                {
                    hist.add(
                        self.fixed_bins[r * self.cols + c] as usize,
                        self.moving_binning.bin(v),
                    );
                }
            }
        }
        if (hist.total() as f64) < MIN_OVERLAP_FRACTION * (self.rows * self.cols) as f64 {
            return None;
        }
        Some(hist.mutual_information())
    }
}

/// Least-squares fit of `a + b u + c v + d u^2 + e v^2 + g u v`; returns the
/// vertex when the surface is strictly concave.
fn quadratic_vertex(samples: &[(f64, f64, f64)]) -> Option<(f64, f64)> {
    let mut ata = [[0.0f64; 7]; 6];
    for &(u, v, z) in samples {
        let basis = [1.0, u, v, u * u, v * v, u * v];
        for i in 0..6 {
            for j in 0..6 {
                ata[i][j] += basis[i] * basis[j];
            }
            ata[i][6] += basis[i] * z;
        }
    }
    // Gauss-Jordan with partial pivoting on the augmented normal equations.
    for col in 0..6 {
        let pivot = (col..6).max_by(|&a, &b| ata[a][col].abs().total_cmp(&ata[b][col].abs()))?;
        if ata[pivot][col].abs() < 1e-12 {
            return None;
        }
        ata.swap(col, pivot);
        for row in 0..6 {
            if row != col {
                let k = ata[row][col] / ata[col][col];
                for j in col..7 {
                    ata[row][j] -= k * ata[col][j];
                }
            }
        }
    }
    let coef: Vec<f64> = (0..6).map(|i| ata[i][6] / ata[i][i]).collect();
    let (b, c, d, e, g) = (coef[1], coef[2], coef[3], coef[4], coef[5]);
    let det = 4.0 * d * e - g * g;
    if !(d < 0.0 && det > 0.0) {
        return None;
    }
    Some(((g * c - 2.0 * e * b) / det, (g * b - 2.0 * d * c) / det))
}

/// Translation-only registration by mutual information.
///
/// Exhaustive integer search over `[-r, r]^2`, then sub-voxel refinement: MI
/// of bilinearly shifted images is sampled on a 0.25-voxel grid within one
/// voxel of the integer optimum and a quadratic surface is fitted; its vertex
/// (clamped to the sampled square) is the result. Fitting rather than taking
/// the best sample smooths the histogram noise of single MI evaluations. If the
/// fit is not concave the best sample is used. Integer ties go to the smallest
/// `|dy| + |dx|`, then lexicographic `(dy, dx)`.
pub fn register_translation(
    moving: &RasterImage,
    fixed: &RasterImage,
    search_radius: usize,
) -> Result<Registration> {
    register_translation_with_bins(moving, fixed, search_radius, DEFAULT_MI_BINS)
}

pub fn register_translation_with_bins(
    moving: &RasterImage,
    fixed: &RasterImage,
    search_radius: usize,
    bins: usize,
) -> Result<Registration> {
    if moving.channels() != 1 || fixed.channels() != 1 {
        return Err(Error::Channels("registration needs single-channel images".into()));
    }
    moving.require_same_grid(fixed)?;
    if bins < 2 || bins > u16::MAX as usize {
        return Err(Error::invalid(format!("unsupported bin count {bins}")));
    }
    let fixed_binning = Binning::fit(fixed.data.iter().map(|&v| v as f64), bins);
    let moving_binning = Binning::fit(moving.data.iter().map(|&v| v as f64), bins);
    let problem = Problem {
        rows: fixed.rows(),
        cols: fixed.cols(),
        bins,
        fixed_bins: fixed.data.iter().map(|&v| fixed_binning.bin(v as f64) as u16).collect(),
        moving: &moving.data,
        moving_binning,
        moving_bins: moving.data.iter().map(|&v| moving_binning.bin(v as f64) as u16).collect(),
    };

    let r = search_radius as i64;
    let candidates: Vec<(i64, i64)> = (-r..=r).flat_map(|dy| (-r..=r).map(move |dx| (dy, dx))).collect();
    let scored: Vec<(i64, i64, f64)> = candidates
        .par_iter()
        .map_init(
            || JointHistogram::new(bins),
            |hist, &(dy, dx)| problem.integer_mi(dy, dx, hist).map(|mi| (dy, dx, mi)),
        )
        .flatten()
        .collect();

    let key = |&(dy, dx, _): &(i64, i64, f64)| (dy.abs() + dx.abs(), dy, dx);
    let (dy0, dx0, mi0) = scored
        .iter()
        .copied()
        .reduce(|best, cand| {
            if cand.2 > best.2 || (cand.2 == best.2 && key(&cand) < key(&best)) {
                cand
            } else {
                best
            }
        })
        .ok_or_else(|| Error::Registration("no candidate offset had sufficient overlap".into()))?;

    let (dy0f, dx0f) = (dy0 as f64, dx0 as f64);
    let half = (1.0 / REFINE_STEP).round() as i64;
    let offsets: Vec<(f64, f64)> = (-half..=half)
        .flat_map(|i| (-half..=half).map(move |j| (i as f64 * REFINE_STEP, j as f64 * REFINE_STEP)))
        .collect();
    let samples: Vec<(f64, f64, f64)> = offsets
        .par_iter()
        .filter_map(|&(u, v)| problem.shifted_mi(dy0f + u, dx0f + v).map(|mi| (u, v, mi)))
        .collect();
    let best = samples
        .iter()
        .copied()
        .fold((0.0, 0.0, mi0), |b, s| if s.2 > b.2 { s } else { b });
    let (u, v) = match quadratic_vertex(&samples) {
        Some((u, v)) if samples.len() == offsets.len() => (u.clamp(-1.0, 1.0), v.clamp(-1.0, 1.0)),
        _ => (best.0, best.1),
    };
    let (dy, dx) = (dy0f + u, dx0f + v);
    let mi = if (u, v) == (0.0, 0.0) { mi0 } else { problem.shifted_mi(dy, dx).unwrap_or(mi0) };
    Ok(Registration { dy, dx, mi })
}
