//! 2D multi-channel float raster, binary masks and the on-disk format.
//!
//! A raster is stored as a pair of files next to each other:
//! `<name>.json` (header) and `<name>.raw` (planes concatenated channel-major,
//! row-major within a plane, little-endian f32). The header carries the
//! SHA-256 of the raw file so truncation and corruption are detected on read.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const RASTER_FORMAT_VERSION: u32 = 1;
const DTYPE: &str = "f32le";

/// In-plane matrix size and voxel dimensions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SliceGeometry {
    pub rows: usize,
    pub cols: usize,
    /// Voxel size (y, x) in mm.
    pub spacing_mm: [f64; 2],
    pub slice_thickness_mm: f64,
}

impl SliceGeometry {
    pub fn new(rows: usize, cols: usize, spacing_mm: [f64; 2], slice_thickness_mm: f64) -> Self {
        SliceGeometry {
            rows,
            cols,
            spacing_mm,
            slice_thickness_mm,
        }
    }

    /// The 232 x 256, 1.7 x 1.7 x 10 mm multi-echo slice grid.
    pub fn ideal() -> Self {
        SliceGeometry::new(232, 256, [1.7, 1.7], 10.0)
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<()> {
        let spacing_ok = self.spacing_mm.iter().all(|s| s.is_finite() && *s > 0.0);
        if self.rows == 0 || self.cols == 0 || !spacing_ok || !(self.slice_thickness_mm > 0.0) {
            return Err(Error::Geometry(format!("invalid slice geometry {self:?}")));
        }
        Ok(())
    }

    /// Physical (y, x) position in mm of a voxel center; the grid is centered on the origin.
    #[inline]
    pub fn position(&self, row: usize, col: usize) -> (f64, f64) {
        (
            (row as f64 - (self.rows as f64 - 1.0) / 2.0) * self.spacing_mm[0],
            (col as f64 - (self.cols as f64 - 1.0) / 2.0) * self.spacing_mm[1],
        )
    }

    /// Fractional (row, col) index of a physical position.
    #[inline]
    pub fn index_of(&self, y: f64, x: f64) -> (f64, f64) {
        (
            y / self.spacing_mm[0] + (self.rows as f64 - 1.0) / 2.0,
            x / self.spacing_mm[1] + (self.cols as f64 - 1.0) / 2.0,
        )
    }

    fn same_grid(&self, other: &SliceGeometry) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RasterImage {
    pub geometry: SliceGeometry,
    pub channel_names: Vec<String>,
    /// Channel-major planes, row-major within each plane.
    pub data: Vec<f32>,
}

impl RasterImage {
    pub fn new(geometry: SliceGeometry, channel_names: Vec<String>, data: Vec<f32>) -> Result<Self> {
        geometry.validate()?;
        if channel_names.is_empty() {
            return Err(Error::Channels("raster needs at least one channel".into()));
        }
        let expected = geometry.len() * channel_names.len();
        if data.len() != expected {
            return Err(Error::Geometry(format!(
                "data length {} does not match {}x{}x{} = {expected}",
                data.len(),
                geometry.rows,
                geometry.cols,
                channel_names.len()
            )));
        }
        Ok(RasterImage {
            geometry,
            channel_names,
            data,
        })
    }

    pub fn zeros<S: Into<String>>(geometry: SliceGeometry, names: impl IntoIterator<Item = S>) -> Result<Self> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        let n = geometry.len() * names.len();
        Self::new(geometry, names, vec![0.0; n])
    }

    /// Builds from f64 planes, one per channel name.
    pub fn from_planes(geometry: SliceGeometry, planes: Vec<(&str, Vec<f64>)>) -> Result<Self> {
        let mut names = Vec::with_capacity(planes.len());
        let mut data = Vec::with_capacity(planes.len() * geometry.len());
        for (name, plane) in planes {
            if plane.len() != geometry.len() {
                return Err(Error::Geometry(format!(
                    "plane {name} has {} voxels, expected {}",
                    plane.len(),
                    geometry.len()
                )));
            }
            names.push(name.to_string());
            data.extend(plane.iter().map(|&v| v as f32));
        }
        Self::new(geometry, names, data)
    }

    pub fn rows(&self) -> usize {
        self.geometry.rows
    }

    pub fn cols(&self) -> usize {
        self.geometry.cols
    }

    pub fn channels(&self) -> usize {
        self.channel_names.len()
    }

    pub fn plane(&self, channel: usize) -> &[f32] {
        let n = self.geometry.len();
        &self.data[channel * n..(channel + 1) * n]
    }

    pub fn plane_mut(&mut self, channel: usize) -> &mut [f32] {
        let n = self.geometry.len();
        &mut self.data[channel * n..(channel + 1) * n]
    }

    pub fn plane_f64(&self, channel: usize) -> Vec<f64> {
        self.plane(channel).iter().map(|&v| v as f64).collect()
    }

    pub fn channel_index(&self, name: &str) -> Option<usize> {
        self.channel_names.iter().position(|n| n == name)
    }

    /// Single-channel copy of one plane.
    pub fn channel(&self, channel: usize) -> RasterImage {
        RasterImage {
            geometry: self.geometry,
            channel_names: vec![self.channel_names[channel].clone()],
            data: self.plane(channel).to_vec(),
        }
    }

    #[inline]
    pub fn get(&self, channel: usize, row: usize, col: usize) -> f32 {
        self.data[channel * self.geometry.len() + row * self.geometry.cols + col]
    }

    pub fn require_channels(&self, expected: usize) -> Result<()> {
        if self.channels() != expected {
            return Err(Error::Channels(format!(
                "expected {expected} channels, found {} ({:?})",
                self.channels(),
                self.channel_names
            )));
        }
        Ok(())
    }

    pub fn require_same_grid(&self, other: &RasterImage) -> Result<()> {
        if !self.geometry.same_grid(&other.geometry) {
            return Err(Error::Geometry(format!(
                "{}x{} vs {}x{}",
                self.rows(),
                self.cols(),
                other.rows(),
                other.cols()
            )));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Per-voxel boolean region of interest.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    pub rows: usize,
    pub cols: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(rows: usize, cols: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != rows * cols {
            return Err(Error::Geometry(format!(
                "mask has {} voxels, expected {rows}x{cols}",
                bits.len()
            )));
        }
        Ok(BinaryMask { rows, cols, bits })
    }

    pub fn full(rows: usize, cols: usize) -> Self {
        BinaryMask {
            rows,
            cols,
            bits: vec![true; rows * cols],
        }
    }

    pub fn empty(rows: usize, cols: usize) -> Self {
        BinaryMask {
            rows,
            cols,
            bits: vec![false; rows * cols],
        }
    }

    /// Voxels where the given channel is non-zero.
    pub fn from_raster(img: &RasterImage, channel: usize) -> Self {
        BinaryMask {
            rows: img.rows(),
            cols: img.cols(),
            bits: img.plane(channel).iter().map(|&v| v != 0.0).collect(),
        }
    }

    pub fn to_raster(&self, geometry: SliceGeometry, name: &str) -> Result<RasterImage> {
        let data = self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        RasterImage::new(geometry, vec![name.to_string()], data)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn check_against(&self, img: &RasterImage) -> Result<()> {
        if self.rows != img.rows() || self.cols != img.cols() {
            return Err(Error::Geometry(format!(
                "mask {}x{} vs image {}x{}",
                self.rows,
                self.cols,
                img.rows(),
                img.cols()
            )));
        }
        Ok(())
    }
}

/// Zeroes every voxel outside `mask` in all channels; returns the mask voxel count.
pub fn apply_mask(img: &RasterImage, mask: &BinaryMask) -> Result<(RasterImage, usize)> {
    mask.check_against(img)?;
    let mut out = img.clone();
    for c in 0..out.channels() {
        for (v, &keep) in out.plane_mut(c).iter_mut().zip(mask.bits()) {
            if !keep {
                *v = 0.0;
            }
        }
    }
    Ok((out, mask.count()))
}

/// Header of the on-disk raster format.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RasterHeader {
    pub format_version: u32,
    pub rows: usize,
    pub cols: usize,
    pub channels: usize,
    pub channel_names: Vec<String>,
    pub spacing_mm: [f64; 2],
    pub slice_thickness_mm: f64,
    pub dtype: String,
    pub data_file: String,
    pub sha256: String,
}

/// Strips a `.json`/`.raw` extension so either file (or the bare stem) can name a raster.
pub fn raster_stem(path: &Path) -> PathBuf {
    match path.extension().and_then(|e| e.to_str()) {
        Some("json") | Some("raw") => path.with_extension(""),
        _ => path.to_path_buf(),
    }
}

fn with_suffix(stem: &Path, suffix: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn header_path(path: &Path) -> PathBuf {
    with_suffix(&raster_stem(path), ".json")
}

pub fn data_path(path: &Path) -> PathBuf {
    with_suffix(&raster_stem(path), ".raw")
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes `<stem>.json` and `<stem>.raw`. Non-finite data is refused.
pub fn write_raster(path: &Path, img: &RasterImage) -> Result<RasterHeader> {
    if let Some(i) = img.data.iter().position(|v| !v.is_finite()) {
        let n = img.geometry.len();
        return Err(Error::invalid(format!(
            "refusing to write non-finite value in channel {} at voxel {}",
            img.channel_names[i / n],
            i % n
        )));
    }
    let stem = raster_stem(path);
    let raw_path = data_path(&stem);
    let json_path = header_path(&stem);
    if let Some(dir) = stem.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    let mut bytes = Vec::with_capacity(img.data.len() * 4);
    for v in &img.data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let header = RasterHeader {
        format_version: RASTER_FORMAT_VERSION,
        rows: img.rows(),
        cols: img.cols(),
        channels: img.channels(),
        channel_names: img.channel_names.clone(),
        spacing_mm: img.geometry.spacing_mm,
        slice_thickness_mm: img.geometry.slice_thickness_mm,
        dtype: DTYPE.to_string(),
        data_file: raw_path
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| Error::invalid(format!("non UTF-8 raster path {}", raw_path.display())))?
            .to_string(),
        sha256: sha256_hex(&bytes),
    };
    fs::write(&raw_path, &bytes).map_err(|e| Error::io(&raw_path, e))?;
    let mut json = serde_json::to_string_pretty(&header).map_err(|e| Error::Json {
        path: json_path.clone(),
        source: e,
    })?;
    json.push('\n');
    fs::write(&json_path, json).map_err(|e| Error::io(&json_path, e))?;
    Ok(header)
}

pub fn read_raster_header(path: &Path) -> Result<RasterHeader> {
    let json_path = header_path(path);
    let text = fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::MalformedHeader {
        path: json_path.clone(),
        reason: e.to_string(),
    })?;
    // Check the version before the full schema so old/new headers get a precise error.
    let version = value
        .get("format_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::MalformedHeader {
            path: json_path.clone(),
            reason: "missing format_version".into(),
        })?;
    if version != RASTER_FORMAT_VERSION as u64 {
        return Err(Error::Version {
            path: json_path,
            found: version as u32,
            expected: RASTER_FORMAT_VERSION,
        });
    }
    let header: RasterHeader = serde_json::from_value(value).map_err(|e| Error::MalformedHeader {
        path: json_path.clone(),
        reason: e.to_string(),
    })?;
    let malformed = |reason: String| Error::MalformedHeader {
        path: json_path.clone(),
        reason,
    };
    if header.dtype != DTYPE {
        return Err(malformed(format!("unsupported dtype {}", header.dtype)));
    }
    if header.channels != header.channel_names.len() {
        return Err(malformed(format!(
            "channels = {} but {} channel names",
            header.channels,
            header.channel_names.len()
        )));
    }
    SliceGeometry::new(header.rows, header.cols, header.spacing_mm, header.slice_thickness_mm)
        .validate()
        .map_err(|e| malformed(e.to_string()))?;
    Ok(header)
}

/// Reads a raster written by [`write_raster`], validating size and checksum.
pub fn read_raster(path: &Path) -> Result<RasterImage> {
    let header = read_raster_header(path)?;
    let stem = raster_stem(path);
    let raw_path = stem
        .parent()
        .map(|d| d.join(&header.data_file))
        .unwrap_or_else(|| PathBuf::from(&header.data_file));
    let bytes = fs::read(&raw_path).map_err(|e| Error::io(&raw_path, e))?;
    let expected = header.rows * header.cols * header.channels * 4;
    if bytes.len() != expected {
        return Err(Error::Corrupt {
            path: raw_path,
            reason: format!("expected {expected} bytes, found {}", bytes.len()),
        });
    }
    if sha256_hex(&bytes) != header.sha256 {
        return Err(Error::Corrupt {
            path: raw_path,
            reason: "sha256 mismatch".into(),
        });
    }
    let data: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    if !data.iter().all(|v| v.is_finite()) {
        return Err(Error::Corrupt {
            path: raw_path,
            reason: "non-finite sample".into(),
        });
    }
    RasterImage::new(
        SliceGeometry::new(header.rows, header.cols, header.spacing_mm, header.slice_thickness_mm),
        header.channel_names,
        data,
    )
}

/// Windowed 8-bit grayscale PNG of one channel, written to
/// `<dir>/<name>_w<lo>_<hi>.png`.
pub fn export_png(
    img: &RasterImage,
    channel: usize,
    window: (f64, f64),
    dir: &Path,
    name: &str,
) -> Result<PathBuf> {
    let (lo, hi) = window;
    if !(hi > lo) {
        return Err(Error::invalid(format!("empty display window [{lo}, {hi}]")));
    }
    if channel >= img.channels() {
        return Err(Error::Channels(format!("no channel {channel}")));
    }
    let pixels: Vec<u8> = img
        .plane(channel)
        .iter()
        .map(|&v| (((v as f64 - lo) / (hi - lo)).clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let path = dir.join(format!("{name}_w{lo}_{hi}.png"));
    write_gray_png(&path, img.cols() as u32, img.rows() as u32, &pixels)?;
    Ok(path)
}

pub(crate) fn write_gray_png(path: &Path, width: u32, height: u32, pixels: &[u8]) -> Result<()> {
    fs::create_dir_all(path.parent().unwrap_or(Path::new("."))).map_err(|e| Error::io(path, e))?;
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), width, height);
    encoder.set_color(png::ColorType::Grayscale);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder.write_header()?;
    writer.write_image_data(pixels)?;
    writer.finish()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp(rows: usize, cols: usize, channels: usize) -> RasterImage {
        let geom = SliceGeometry::new(rows, cols, [1.7, 1.7], 10.0);
        let names = (0..channels).map(|c| format!("c{c}")).collect();
        let data = (0..rows * cols * channels).map(|i| i as f32 * 0.25 - 3.0).collect();
        RasterImage::new(geom, names, data).unwrap()
    }

    #[test]
    fn write_read_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let img = ramp(5, 7, 3);
        write_raster(&dir.path().join("img"), &img).unwrap();
        let back = read_raster(&dir.path().join("img.json")).unwrap();
        assert_eq!(back, img);
        assert_eq!(read_raster(&dir.path().join("img")).unwrap(), img);
    }

    #[test]
    fn truncated_data_is_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("img");
        write_raster(&stem, &ramp(4, 4, 2)).unwrap();
        let raw = data_path(&stem);
        let bytes = fs::read(&raw).unwrap();
        fs::write(&raw, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(read_raster(&stem), Err(Error::Corrupt { .. })));
    }

    #[test]
    fn flipped_byte_fails_checksum() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("img");
        write_raster(&stem, &ramp(4, 4, 1)).unwrap();
        let raw = data_path(&stem);
        let mut bytes = fs::read(&raw).unwrap();
        bytes[5] ^= 0x40;
        fs::write(&raw, &bytes).unwrap();
        assert!(matches!(read_raster(&stem), Err(Error::Corrupt { .. })));
    }

    #[test]
    fn nan_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let mut img = ramp(3, 3, 1);
        img.data[4] = f32::NAN;
        assert!(write_raster(&dir.path().join("bad"), &img).is_err());
        assert!(!dir.path().join("bad.raw").exists());
    }

    #[test]
    fn header_errors() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("img");
        write_raster(&stem, &ramp(3, 3, 1)).unwrap();
        let json = header_path(&stem);
        let text = fs::read_to_string(&json).unwrap();

        fs::write(&json, text.replace("\"format_version\": 1", "\"format_version\": 2")).unwrap();
        assert!(matches!(read_raster(&stem), Err(Error::Version { found: 2, .. })));

        fs::write(&json, text.replace("\"channels\": 1", "\"channels\": 2")).unwrap();
        assert!(matches!(read_raster(&stem), Err(Error::MalformedHeader { .. })));

        fs::write(&json, "{ not json").unwrap();
        assert!(matches!(read_raster(&stem), Err(Error::MalformedHeader { .. })));
    }

    #[test]
    fn mask_application() {
        let geom = SliceGeometry::new(2, 4, [1.0, 1.0], 1.0);
        let ones = RasterImage::new(geom, vec!["v".into()], vec![1.0; 8]).unwrap();
        let (same, n) = apply_mask(&ones, &BinaryMask::full(2, 4)).unwrap();
        assert_eq!((same, n), (ones.clone(), 8));
        let (zero, n) = apply_mask(&ones, &BinaryMask::empty(2, 4)).unwrap();
        assert!(zero.data.iter().all(|&v| v == 0.0));
        assert_eq!(n, 0);
        let half = BinaryMask::new(2, 4, vec![true, true, false, false, true, true, false, false]).unwrap();
        let (h, n) = apply_mask(&ones, &half).unwrap();
        assert_eq!(h.data.iter().sum::<f32>(), 4.0);
        assert_eq!(n, 4);
        assert!(apply_mask(&ones, &BinaryMask::full(4, 2)).is_err());
    }

    #[test]
    fn png_export_names_window() {
        let dir = tempfile::tempdir().unwrap();
        let path = export_png(&ramp(8, 8, 1), 0, (0.0, 100.0), dir.path(), "pdff").unwrap();
        assert_eq!(path.file_name().unwrap(), "pdff_w0_100.png");
        assert!(fs::metadata(&path).unwrap().len() > 0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn round_trip_arbitrary_finite(
            rows in 1usize..6, cols in 1usize..6,
            values in proptest::collection::vec(-1e30f32..1e30f32, 36 * 2)
        ) {
            let dir = tempfile::tempdir().unwrap();
            let geom = SliceGeometry::new(rows, cols, [0.5, 2.0], 3.0);
            let data = values[..rows * cols * 2].to_vec();
            let img = RasterImage::new(geom, vec!["a".into(), "b".into()], data).unwrap();
            write_raster(&dir.path().join("x"), &img).unwrap();
            prop_assert_eq!(read_raster(&dir.path().join("x")).unwrap(), img);
        }
    }
}
