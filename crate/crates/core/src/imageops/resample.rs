use crate::error::{Error, Result};
use crate::raster::{RasterImage, SliceGeometry};

/// Bilinear sample at fractional index `(u, v)`.
///
/// Inside the voxel-edge extent `[-0.5, n - 0.5]` indices are clamped to the
/// outermost centers; outside it the sample is 0.
#[inline]
pub(crate) fn sample_bilinear(plane: &[f32], rows: usize, cols: usize, u: f64, v: f64) -> Option<f64> {
    if !(u >= -0.5 && u <= rows as f64 - 0.5 && v >= -0.5 && v <= cols as f64 - 0.5) {
        return None;
    }
    let u = u.clamp(0.0, (rows - 1) as f64);
    let v = v.clamp(0.0, (cols - 1) as f64);
    let r0 = u.floor() as usize;
    let c0 = v.floor() as usize;
    let r1 = (r0 + 1).min(rows - 1);
    let c1 = (c0 + 1).min(cols - 1);
    let fu = u - r0 as f64;
    let fv = v - c0 as f64;
    let at = |r: usize, c: usize| plane[r * cols + c] as f64;
    let top = at(r0, c0) * (1.0 - fv) + at(r0, c1) * fv;
    let bottom = at(r1, c0) * (1.0 - fv) + at(r1, c1) * fv;
    Some(top * (1.0 - fu) + bottom * fu)
}

/// Resamples onto a new grid sharing the same physical center.
///
/// Channels are interpolated independently; target voxels whose center falls
/// outside the source extent are 0.
pub fn resample_linear(
    img: &RasterImage,
    target_rows: usize,
    target_cols: usize,
    target_spacing: [f64; 2],
) -> Result<RasterImage> {
    if img.geometry.is_empty() {
        return Err(Error::Geometry("cannot resample an empty image".into()));
    }
    let target = SliceGeometry::new(
        target_rows,
        target_cols,
        target_spacing,
        img.geometry.slice_thickness_mm,
    );
    target.validate()?;
    let src = img.geometry;
    let mut data = Vec::with_capacity(target.len() * img.channels());
    for c in 0..img.channels() {
        let plane = img.plane(c);
        for r in 0..target.rows {
            for k in 0..target.cols {
                let (y, x) = target.position(r, k);
                let (u, v) = src.index_of(y, x);
                let value = sample_bilinear(plane, src.rows, src.cols, u, v).unwrap_or(0.0);
                data.push(value as f32);
            }
        }
    }
    RasterImage::new(target, img.channel_names.clone(), data)
}

/// Shifts content by `(dy, dx)` voxels: `out(r, c) = in(r - dy, c - dx)`, zero fill.
pub fn translate(img: &RasterImage, dy: f64, dx: f64) -> RasterImage {
    let (rows, cols) = (img.rows(), img.cols());
    let mut out = img.clone();
    for c in 0..img.channels() {
        let src = img.plane(c);
        let dst = out.plane_mut(c);
        for r in 0..rows {
            for k in 0..cols {
                dst[r * cols + k] =
                    sample_bilinear(src, rows, cols, r as f64 - dy, k as f64 - dx).unwrap_or(0.0) as f32;
            }
        }
    }
    out
}
