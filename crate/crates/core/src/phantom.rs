//! Synthetic single-slice abdominal phantoms.
//!
//! A subject is drawn once from a [`PhantomConfig`] as a continuous object in
//! physical (mm) coordinates: a perturbed elliptical body with a subcutaneous
//! fat rim, a vertebral body, a liver blob in the upper-left image quadrant
//! with band-limited PDFF/R2* texture, and vessels that lower liver proton
//! density. The object can then be rasterized on any grid, with an in-plane
//! offset and a through-plane position, which is how the Dixon stack is
//! rendered at its own geometry.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{echo_channel_names, DIXON_CHANNELS};
use crate::raster::{BinaryMask, RasterImage, SliceGeometry};
use crate::rng::stream_rng;
use crate::signal::{add_noise_in_place, signal_at, EchoSchedule, FatSpectrum, TissueParams};

const MIN_GRID: usize = 64;
const TEXTURE_MODES: usize = 48;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomConfig {
    pub rng_seed: u64,
    pub geometry: SliceGeometry,
    /// Subject mean liver PDFF range (%).
    pub pdff_range: [f64; 2],
    /// Subject mean liver R2* range (1/s).
    pub r2star_range: [f64; 2],
    /// Correlation length of the liver texture (voxels).
    pub texture_length_vox: f64,
    /// Inclusive vessel count range.
    pub vessel_count: [usize; 2],
    /// Complex noise standard deviation, in proton-density units.
    pub noise_sigma: f64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        PhantomConfig {
            rng_seed: 0,
            geometry: SliceGeometry::ideal(),
            pdff_range: [1.0, 45.0],
            r2star_range: [20.0, 400.0],
            texture_length_vox: 8.0,
            vessel_count: [0, 6],
            noise_sigma: 0.02,
        }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<()> {
        let g = &self.geometry;
        if g.rows < MIN_GRID || g.cols < MIN_GRID {
            return Err(Error::Geometry(format!(
                "phantom grid {}x{} is too small to place organs (minimum {MIN_GRID}x{MIN_GRID})",
                g.rows, g.cols
            )));
        }
        g.validate()?;
        let range_ok = |[lo, hi]: [f64; 2]| lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo <= hi;
        if !range_ok(self.pdff_range) || self.pdff_range[1] > 100.0 {
            return Err(Error::invalid(format!("bad PDFF range {:?}", self.pdff_range)));
        }
        if !range_ok(self.r2star_range) {
            return Err(Error::invalid(format!("bad R2* range {:?}", self.r2star_range)));
        }
        if !(self.texture_length_vox > 0.0 && self.texture_length_vox.is_finite()) {
            return Err(Error::invalid("texture length must be positive"));
        }
        if self.vessel_count[0] > self.vessel_count[1] {
            return Err(Error::invalid(format!("bad vessel count range {:?}", self.vessel_count)));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::invalid("noise sigma must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
struct Tissue {
    pdff: f64,
    r2star: f64,
    density: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Shape {
    center: (f64, f64),
    semi_axes: (f64, f64),
    rotation: f64,
    /// (order, relative amplitude, phase) boundary perturbations.
    harmonics: Vec<(f64, f64, f64)>,
}

impl Shape {
    /// Normalized radius: < 1 inside.
    fn rho(&self, y: f64, x: f64, scale: f64, center_shift: (f64, f64)) -> f64 {
        let (dy, dx) = (y - self.center.0 - center_shift.0, x - self.center.1 - center_shift.1);
        let (s, c) = self.rotation.sin_cos();
        let (u, v) = (c * dy - s * dx, s * dy + c * dx);
        let (nu, nv) = (u / (self.semi_axes.0 * scale), v / (self.semi_axes.1 * scale));
        let theta = nu.atan2(nv);
        let boundary = 1.0 + self.harmonics.iter().map(|&(k, a, p)| a * (k * theta + p).cos()).sum::<f64>();
        (nu * nu + nv * nv).sqrt() / boundary
    }
}

/// Random-Fourier-feature approximation of a squared-exponential Gaussian field.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct Texture {
    modes: Vec<(f64, f64, f64)>,
    offset: f64,
    scale: f64,
}

impl Texture {
    fn draw<R: Rng>(rng: &mut R, length_mm: f64) -> Self {
        let modes = (0..TEXTURE_MODES)
            .map(|_| {
                let ky: f64 = rng.sample::<f64, _>(StandardNormal) / length_mm;
                let kx: f64 = rng.sample::<f64, _>(StandardNormal) / length_mm;
                (ky, kx, rng.random_range(0.0..2.0 * PI))
            })
            .collect();
        Texture {
            modes,
            offset: 0.0,
            scale: 1.0,
        }
    }

    fn raw(&self, y: f64, x: f64) -> f64 {
        let norm = (2.0 / self.modes.len() as f64).sqrt();
        norm * self.modes.iter().map(|&(ky, kx, p)| (ky * y + kx * x + p).cos()).sum::<f64>()
    }

    fn value(&self, y: f64, x: f64) -> f64 {
        (self.raw(y, x) - self.offset) * self.scale
    }

    /// Zero mean, unit variance over the given sample points.
    fn standardize(&mut self, points: &[(f64, f64)]) {
        if points.len() < 2 {
            return;
        }
        let vals: Vec<f64> = points.iter().map(|&(y, x)| self.raw(y, x)).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        self.offset = mean;
        self.scale = if var > 0.0 { 1.0 / var.sqrt() } else { 0.0 };
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
struct Vessel {
    center: (f64, f64),
    radius_mm: f64,
    density_reduction: f64,
}

/// Summary of the drawn subject-level parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectSummary {
    pub liver_pdff_mean: f64,
    pub liver_r2star_mean: f64,
    pub liver_area_fraction: f64,
    pub vessel_count: usize,
}

/// A drawn phantom subject as a continuous object.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PhantomSubject {
    body: Shape,
    rim_fraction: f64,
    rim: Tissue,
    visceral: Tissue,
    spine: Shape,
    marrow: Tissue,
    liver: Shape,
    liver_density: f64,
    pdff_mean: f64,
    r2star_mean: f64,
    pdff_amplitude: f64,
    r2star_amplitude: f64,
    pdff_texture: Texture,
    r2star_texture: Texture,
    vessels: Vec<Vessel>,
    summary: SubjectSummary,
}

/// Tissue maps of one rasterized slice.
#[derive(Clone, Debug, PartialEq)]
pub struct TissueMaps {
    pub geometry: SliceGeometry,
    pub pdff: Vec<f64>,
    pub r2star: Vec<f64>,
    pub density: Vec<f64>,
    pub liver: Vec<bool>,
    pub body: Vec<bool>,
}

impl TissueMaps {
    pub fn tissue(&self, voxel: usize) -> TissueParams {
        let d = self.density[voxel];
        let ff = self.pdff[voxel] / 100.0;
        TissueParams {
            water: d * (1.0 - ff),
            fat: d * ff,
            r2star: self.r2star[voxel],
        }
    }
}

fn uniform<R: Rng>(rng: &mut R, [lo, hi]: [f64; 2]) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn harmonics<R: Rng>(rng: &mut R, orders: &[f64], max_amp: f64) -> Vec<(f64, f64, f64)> {
    orders
        .iter()
        .map(|&k| (k, rng.random_range(0.0..max_amp), rng.random_range(0.0..2.0 * PI)))
        .collect()
}

impl PhantomSubject {
    pub fn draw(cfg: &PhantomConfig) -> Result<Self> {
        cfg.validate()?;
        let g = cfg.geometry;
        let mut rng = stream_rng(cfg.rng_seed, 0);
        let fov_y = g.rows as f64 * g.spacing_mm[0];
        let fov_x = g.cols as f64 * g.spacing_mm[1];

        let body = Shape {
            center: (0.0, 0.0),
            semi_axes: (fov_y * rng.random_range(0.28..0.34), fov_x * rng.random_range(0.34..0.40)),
            rotation: 0.0,
            harmonics: harmonics(&mut rng, &[2.0, 3.0, 4.0], 0.03),
        };
        let mean_axis = 0.5 * (body.semi_axes.0 + body.semi_axes.1);
        let rim_fraction = rng.random_range(12.0..24.0f64).min(0.15 * mean_axis) / mean_axis;
        let rim = Tissue {
            pdff: rng.random_range(85.0..95.0),
            r2star: rng.random_range(30.0..45.0),
            density: rng.random_range(0.9..1.0),
        };
        let visceral = Tissue {
            pdff: rng.random_range(2.0..8.0),
            r2star: rng.random_range(25.0..40.0),
            density: rng.random_range(0.55..0.75),
        };
        let spine_r = 0.09 * body.semi_axes.0.min(body.semi_axes.1);
        let spine = Shape {
            center: (0.55 * body.semi_axes.0, rng.random_range(-0.05..0.05) * body.semi_axes.1),
            semi_axes: (spine_r, spine_r * rng.random_range(1.0..1.2)),
            rotation: 0.0,
            harmonics: vec![],
        };
        let marrow = Tissue {
            pdff: rng.random_range(35.0..60.0),
            r2star: rng.random_range(80.0..150.0),
            density: rng.random_range(0.7..0.85),
        };

        let area_target = rng.random_range(0.17..0.33);
        let aspect: f64 = rng.random_range(0.75..1.25);
        let mut liver = Shape {
            center: (
                -rng.random_range(0.05..0.20) * body.semi_axes.0,
                -rng.random_range(0.25..0.40) * body.semi_axes.1,
            ),
            semi_axes: (aspect.sqrt(), 1.0 / aspect.sqrt()),
            rotation: rng.random_range(-0.4..0.4),
            harmonics: harmonics(&mut rng, &[2.0, 3.0], 0.10),
        };
        let pdff_mean = uniform(&mut rng, cfg.pdff_range);
        let r2star_mean = uniform(&mut rng, cfg.r2star_range);
        let length_mm = cfg.texture_length_vox * 0.5 * (g.spacing_mm[0] + g.spacing_mm[1]);
        let pdff_texture = Texture::draw(&mut rng, length_mm);
        let r2star_texture = Texture::draw(&mut rng, length_mm);
        let n_vessels = rng.random_range(cfg.vessel_count[0]..=cfg.vessel_count[1]);
        let vessel_draws: Vec<(f64, f64, f64)> = (0..n_vessels)
            .map(|_| (rng.random::<f64>(), rng.random_range(2.0..6.0), rng.random_range(0.6..0.9)))
            .collect();
        let liver_density = rng.random_range(0.85..1.0);

        let mut subject = PhantomSubject {
            body,
            rim_fraction,
            rim,
            visceral,
            spine,
            marrow,
            liver: liver.clone(),
            liver_density,
            pdff_mean,
            r2star_mean,
            pdff_amplitude: 0.12 * pdff_mean,
            r2star_amplitude: 0.12 * r2star_mean,
            pdff_texture,
            r2star_texture,
            vessels: vec![],
            summary: SubjectSummary {
                liver_pdff_mean: pdff_mean,
                liver_r2star_mean: r2star_mean,
                liver_area_fraction: 0.0,
                vessel_count: n_vessels,
            },
        };

        // Scale the liver until it covers the drawn fraction of the body.
        let body_area = subject.rasterize_masks(&g).1.iter().filter(|&&b| b).count() as f64;
        let mut radius = (area_target * body_area * g.spacing_mm[0] * g.spacing_mm[1] / PI).sqrt();
        let mut fraction = 0.0;
        for _ in 0..8 {
            liver.semi_axes = (radius * aspect.sqrt(), radius / aspect.sqrt());
            subject.liver = liver.clone();
            let count = subject.rasterize_masks(&g).0.iter().filter(|&&b| b).count() as f64;
            fraction = count / body_area;
            if (fraction - area_target).abs() < 0.002 || count == 0.0 {
                break;
            }
            radius *= (area_target / fraction).sqrt().clamp(0.7, 1.4);
        }
        subject.summary.liver_area_fraction = fraction;

        let liver_points: Vec<(f64, f64)> = {
            let (liver_mask, _) = subject.rasterize_masks(&g);
            liver_mask
                .iter()
                .enumerate()
                .filter(|(_, &b)| b)
                .map(|(i, _)| g.position(i / g.cols, i % g.cols))
                .collect()
        };
        subject.pdff_texture.standardize(&liver_points);
        subject.r2star_texture.standardize(&liver_points);
        if !liver_points.is_empty() {
            let voxel_mm = 0.5 * (g.spacing_mm[0] + g.spacing_mm[1]);
            subject.vessels = vessel_draws
                .iter()
                .map(|&(pick, radius_vox, reduction)| {
                    let idx = ((pick * liver_points.len() as f64) as usize).min(liver_points.len() - 1);
                    Vessel {
                        center: liver_points[idx],
                        radius_mm: radius_vox * voxel_mm,
                        density_reduction: reduction,
                    }
                })
                .collect();
        }
        Ok(subject)
    }

    pub fn summary(&self) -> SubjectSummary {
        self.summary
    }

    /// Ground-truth slice at z = 0 on `geometry`.
    pub fn slice(&self, geometry: &SliceGeometry) -> PhantomSlice {
        PhantomSlice::from_maps(self.rasterize(geometry, (0.0, 0.0), 0.0), self.summary)
    }

    fn liver_shift(z_mm: f64) -> ((f64, f64), f64) {
        ((0.4 * z_mm, 0.25 * z_mm), 1.0 + 0.01 * z_mm)
    }

    /// Region label at a physical point: None outside the body.
    fn classify(&self, y: f64, x: f64, z_mm: f64) -> Option<Region> {
        let rho = self.body.rho(y, x, 1.0 + 0.004 * z_mm, (0.0, 0.0));
        if rho >= 1.0 {
            return None;
        }
        if rho > 1.0 - self.rim_fraction {
            return Some(Region::Rim);
        }
        if self.spine.rho(y, x, 1.0, (0.0, 0.0)) < 1.0 {
            return Some(Region::Spine);
        }
        let (shift, scale) = Self::liver_shift(z_mm);
        if self.liver.rho(y, x, scale, shift) < 1.0 {
            return Some(Region::Liver);
        }
        Some(Region::Visceral)
    }

    fn rasterize_masks(&self, g: &SliceGeometry) -> (Vec<bool>, Vec<bool>) {
        let mut liver = vec![false; g.len()];
        let mut body = vec![false; g.len()];
        for i in 0..g.len() {
            let (y, x) = g.position(i / g.cols, i % g.cols);
            if let Some(region) = self.classify(y, x, 0.0) {
                body[i] = true;
                liver[i] = region == Region::Liver;
            }
        }
        (liver, body)
    }

    /// Tissue maps on `geometry` with the object displaced by `offset_mm` (y, x)
    /// and sampled at through-plane position `z_mm`.
    pub fn rasterize(&self, geometry: &SliceGeometry, offset_mm: (f64, f64), z_mm: f64) -> TissueMaps {
        let n = geometry.len();
        let mut maps = TissueMaps {
            geometry: *geometry,
            pdff: vec![0.0; n],
            r2star: vec![0.0; n],
            density: vec![0.0; n],
            liver: vec![false; n],
            body: vec![false; n],
        };
        let (shift, _) = Self::liver_shift(z_mm);
        for i in 0..n {
            let (py, px) = geometry.position(i / geometry.cols, i % geometry.cols);
            let (y, x) = (py - offset_mm.0, px - offset_mm.1);
            let Some(region) = self.classify(y, x, z_mm) else {
                continue;
            };
            maps.body[i] = true;
            let t = match region {
                Region::Rim => self.rim,
                Region::Visceral => self.visceral,
                Region::Spine => self.marrow,
                Region::Liver => {
                    maps.liver[i] = true;
                    // Texture and vessels move with the liver through the slab.
                    let (ly, lx) = (y - shift.0, x - shift.1);
                    let pdff = (self.pdff_mean + self.pdff_amplitude * self.pdff_texture.value(ly, lx)).clamp(0.0, 100.0);
                    let r2star = (self.r2star_mean + self.r2star_amplitude * self.r2star_texture.value(ly, lx)).max(0.0);
                    let mut density = self.liver_density;
                    for v in &self.vessels {
                        if (ly - v.center.0).hypot(lx - v.center.1) < v.radius_mm {
                            density *= 1.0 - v.density_reduction;
                            break;
                        }
                    }
                    Tissue { pdff, r2star, density }
                }
            };
            maps.pdff[i] = t.pdff;
            maps.r2star[i] = t.r2star;
            maps.density[i] = t.density;
        }
        maps
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Region {
    Rim,
    Visceral,
    Spine,
    Liver,
}

/// Ground-truth maps of one phantom slice.
#[derive(Clone, Debug, PartialEq)]
pub struct PhantomSlice {
    pub geometry: SliceGeometry,
    /// Percent.
    pub pdff_map: Vec<f64>,
    /// 1/s.
    pub r2star_map: Vec<f64>,
    pub density_map: Vec<f64>,
    pub liver_mask: BinaryMask,
    pub body_mask: BinaryMask,
    pub summary: SubjectSummary,
}

impl PhantomSlice {
    fn from_maps(maps: TissueMaps, summary: SubjectSummary) -> Self {
        let g = maps.geometry;
        PhantomSlice {
            geometry: g,
            liver_mask: BinaryMask::new(g.rows, g.cols, maps.liver).expect("sized"),
            body_mask: BinaryMask::new(g.rows, g.cols, maps.body).expect("sized"),
            pdff_map: maps.pdff,
            r2star_map: maps.r2star,
            density_map: maps.density,
            summary,
        }
    }

    pub fn tissue(&self, voxel: usize) -> TissueParams {
        let d = self.density_map[voxel];
        let ff = self.pdff_map[voxel] / 100.0;
        TissueParams {
            water: d * (1.0 - ff),
            fat: d * ff,
            r2star: self.r2star_map[voxel],
        }
    }

    /// Channels: pdff, r2star, density, liver, body.
    pub fn to_raster(&self) -> Result<RasterImage> {
        let flag = |m: &BinaryMask| m.bits().iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        RasterImage::from_planes(
            self.geometry,
            vec![
                ("pdff", self.pdff_map.clone()),
                ("r2star", self.r2star_map.clone()),
                ("density", self.density_map.clone()),
                ("liver", flag(&self.liver_mask)),
                ("body", flag(&self.body_mask)),
            ],
        )
    }
}

/// Draws a subject and rasterizes it on the configured grid.
pub fn generate_phantom(cfg: &PhantomConfig) -> Result<PhantomSlice> {
    Ok(PhantomSubject::draw(cfg)?.slice(&cfg.geometry))
}

/// Rendered Dixon (4 magnitude channels) and multi-echo (2M real channels) rasters.
#[derive(Clone, Debug, PartialEq)]
pub struct Acquisitions {
    pub dixon: RasterImage,
    pub ideal: RasterImage,
}

/// Identifies which of the two Dixon echoes is in phase for the main fat peak.
/// Returns `(in_phase_index, opposed_index)`.
pub fn dixon_echo_roles(spec: &FatSpectrum, sched: &EchoSchedule) -> Result<(usize, usize)> {
    if sched.len() != 2 {
        return Err(Error::invalid(format!(
            "Dixon schedule must have 2 echoes, got {}",
            sched.len()
        )));
    }
    let f = spec.main_peak().freq_hz;
    let cos = |t: f64| (2.0 * PI * f * t).cos();
    let t = sched.times();
    Ok(if cos(t[0]) > cos(t[1]) { (0, 1) } else { (1, 0) })
}

/// Dixon channels from complex in-phase and opposed-phase signals.
///
/// The opposed-phase magnitude is signed by its phase relative to the
/// in-phase echo before the sum/difference; water and fat are clipped at 0.
pub(crate) fn dixon_channels(s_in: Complex64, s_op: Complex64) -> [f64; 4] {
    let (m_in, m_op) = (s_in.norm(), s_op.norm());
    let sign = if (s_op * s_in.conj()).re < 0.0 { -1.0 } else { 1.0 };
    let (water, fat) = crate::estimators::dixon_decompose(m_in, sign * m_op);
    [m_in, m_op, water.max(0.0), fat.max(0.0)]
}

/// Forward-renders both acquisitions of a phantom slice on its own grid.
pub fn render_acquisitions(
    ph: &PhantomSlice,
    spec: &FatSpectrum,
    dixon_sched: &EchoSchedule,
    ideal_sched: &EchoSchedule,
    sigma: f64,
    seed: u64,
) -> Result<Acquisitions> {
    let (in_idx, op_idx) = dixon_echo_roles(spec, dixon_sched)?;
    if ideal_sched.len() < 3 {
        return Err(Error::invalid(format!(
            "multi-echo schedule needs at least 3 echoes, got {}",
            ideal_sched.len()
        )));
    }
    let n = ph.geometry.len();
    let m = ideal_sched.len();
    if ph.pdff_map.len() != n || ph.r2star_map.len() != n || ph.density_map.len() != n {
        return Err(Error::Geometry("phantom maps do not match their geometry".into()));
    }

    let mut ideal_rng = stream_rng(seed, 1);
    let mut dixon_rng = stream_rng(seed, 2);
    let mut ideal = vec![vec![0.0f64; n]; 2 * m];
    let mut dixon = vec![vec![0.0f64; n]; 4];
    let mut echoes = vec![Complex64::new(0.0, 0.0); m];
    let mut pair = [Complex64::new(0.0, 0.0); 2];
    for v in 0..n {
        let p = ph.tissue(v);
        for (e, &t) in echoes.iter_mut().zip(ideal_sched.times()) {
            *e = signal_at(&p, spec, t);
        }
        add_noise_in_place(&mut echoes, sigma, &mut ideal_rng)?;
        for (k, e) in echoes.iter().enumerate() {
            ideal[2 * k][v] = e.re;
            ideal[2 * k + 1][v] = e.im;
        }
        for (s, &t) in pair.iter_mut().zip(dixon_sched.times()) {
            *s = signal_at(&p, spec, t);
        }
        add_noise_in_place(&mut pair, sigma, &mut dixon_rng)?;
        for (c, value) in dixon_channels(pair[in_idx], pair[op_idx]).into_iter().enumerate() {
            dixon[c][v] = value;
        }
    }
    let names = echo_channel_names(m);
    let ideal = RasterImage::from_planes(ph.geometry, names.iter().map(String::as_str).zip(ideal).collect())?;
    let dixon = RasterImage::from_planes(ph.geometry, DIXON_CHANNELS.into_iter().zip(dixon).collect())?;
    Ok(Acquisitions { dixon, ideal })
}

/// Renders the Dixon channels of a subject on `geometry` by averaging the
/// complex signal of several thin sub-slices, then adding noise.
pub fn render_dixon_stack(
    subject: &PhantomSubject,
    geometry: &SliceGeometry,
    offset_mm: (f64, f64),
    sub_slice_z_mm: &[f64],
    spec: &FatSpectrum,
    sched: &EchoSchedule,
    sigma: f64,
    seed: u64,
) -> Result<RasterImage> {
    let (in_idx, op_idx) = dixon_echo_roles(spec, sched)?;
    if sub_slice_z_mm.is_empty() {
        return Err(Error::invalid("need at least one sub-slice"));
    }
    let n = geometry.len();
    let mut sums = vec![[Complex64::new(0.0, 0.0); 2]; n];
    for &z in sub_slice_z_mm {
        let maps = subject.rasterize(geometry, offset_mm, z);
        for (v, acc) in sums.iter_mut().enumerate() {
            if !maps.body[v] {
                continue;
            }
            let p = maps.tissue(v);
            for (a, &t) in acc.iter_mut().zip(sched.times()) {
                *a += signal_at(&p, spec, t);
            }
        }
    }
    let mut rng = stream_rng(seed, 3);
    let mut planes = vec![vec![0.0f64; n]; 4];
    let norm = 1.0 / sub_slice_z_mm.len() as f64;
    for (v, acc) in sums.iter().enumerate() {
        let mut pair = [acc[0] * norm, acc[1] * norm];
        add_noise_in_place(&mut pair, sigma, &mut rng)?;
        for (c, value) in dixon_channels(pair[in_idx], pair[op_idx]).into_iter().enumerate() {
            planes[c][v] = value;
        }
    }
    RasterImage::from_planes(*geometry, DIXON_CHANNELS.into_iter().zip(planes).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::in_opposed_echo_times;

    fn cfg(seed: u64) -> PhantomConfig {
        PhantomConfig {
            rng_seed: seed,
            ..Default::default()
        }
    }

    fn dixon_sched() -> EchoSchedule {
        let (op, ip) = in_opposed_echo_times(1.5, 3.4).unwrap();
        EchoSchedule::new(vec![op, ip]).unwrap()
    }

    fn ideal_sched() -> EchoSchedule {
        EchoSchedule::uniform(0.0012, 0.002, 6).unwrap()
    }

    #[test]
    fn deterministic_for_seed() {
        assert_eq!(generate_phantom(&cfg(5)).unwrap(), generate_phantom(&cfg(5)).unwrap());
        assert_ne!(generate_phantom(&cfg(5)).unwrap(), generate_phantom(&cfg(6)).unwrap());
    }

    #[test]
    fn degenerate_pdff_range_gives_fat_free_liver() {
        let c = PhantomConfig {
            pdff_range: [0.0, 0.0],
            ..cfg(3)
        };
        let ph = generate_phantom(&c).unwrap();
        assert!(ph.liver_mask.count() > 0);
        for (v, &inside) in ph.liver_mask.bits().iter().enumerate() {
            if inside {
                assert_eq!(ph.pdff_map[v], 0.0);
            }
        }
    }

    #[test]
    fn too_small_grid_is_rejected() {
        let c = PhantomConfig {
            geometry: SliceGeometry::new(48, 80, [1.7, 1.7], 10.0),
            ..cfg(0)
        };
        assert!(generate_phantom(&c).is_err());
        let c = PhantomConfig {
            pdff_range: [10.0, 5.0],
            ..cfg(0)
        };
        assert!(generate_phantom(&c).is_err());
    }

    #[test]
    fn structural_invariants() {
        for seed in 0..12 {
            let ph = generate_phantom(&cfg(seed)).unwrap();
            let body = ph.body_mask.count() as f64;
            let liver = ph.liver_mask.count() as f64;
            let frac = liver / body;
            assert!((0.15..=0.35).contains(&frac), "seed {seed}: liver fraction {frac}");
            let (mut ry, mut rx) = (0.0, 0.0);
            for v in 0..ph.geometry.len() {
                let (r, c) = (v / ph.geometry.cols, v % ph.geometry.cols);
                if ph.liver_mask.bits()[v] {
                    assert!(ph.density_map[v] > 0.0);
                    assert!(ph.body_mask.bits()[v]);
                    ry += r as f64;
                    rx += c as f64;
                }
                if !ph.body_mask.bits()[v] {
                    assert_eq!(ph.density_map[v], 0.0);
                }
                assert!((0.0..=100.0).contains(&ph.pdff_map[v]));
                assert!(ph.r2star_map[v] >= 0.0);
            }
            // Liver centroid in the upper-left quadrant.
            assert!(ry / liver < ph.geometry.rows as f64 / 2.0);
            assert!(rx / liver < ph.geometry.cols as f64 / 2.0);
            // Subcutaneous rim is fat-dominant.
            let rim_voxels = ph.pdff_map.iter().filter(|&&p| p >= 80.0).count();
            assert!(rim_voxels > 500);
        }
    }

    #[test]
    fn liver_mean_matches_subject_mean() {
        for seed in 0..10 {
            let ph = generate_phantom(&cfg(seed)).unwrap();
            let vals: Vec<f64> = ph
                .liver_mask
                .bits()
                .iter()
                .zip(&ph.pdff_map)
                .filter(|(b, _)| **b)
                .map(|(_, &p)| p)
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            assert!((mean - ph.summary.liver_pdff_mean).abs() < 1.0, "seed {seed}: {mean} vs {:?}", ph.summary);
        }
    }

    #[test]
    fn water_only_rendering() {
        let mut ph = generate_phantom(&cfg(1)).unwrap();
        ph.pdff_map.iter_mut().for_each(|p| *p = 0.0);
        ph.r2star_map.iter_mut().for_each(|r| *r = 0.0);
        let acq = render_acquisitions(&ph, &FatSpectrum::liver(1.5).unwrap(), &dixon_sched(), &ideal_sched(), 0.0, 0).unwrap();
        for v in 0..ph.geometry.len() {
            assert!((acq.dixon.plane(2)[v] as f64 - ph.density_map[v]).abs() < 1e-6);
            assert!(acq.dixon.plane(3)[v].abs() < 1e-6);
        }
    }

    #[test]
    fn pure_fat_voxel_single_peak() {
        let (op, _) = in_opposed_echo_times(1.5, 3.4).unwrap();
        let spec = FatSpectrum::single_peak(-1.0 / (2.0 * op)).unwrap();
        let geom = SliceGeometry::new(1, 1, [1.7, 1.7], 10.0);
        let ph = PhantomSlice {
            geometry: geom,
            pdff_map: vec![100.0],
            r2star_map: vec![0.0],
            density_map: vec![0.9],
            liver_mask: BinaryMask::full(1, 1),
            body_mask: BinaryMask::full(1, 1),
            summary: generate_phantom(&cfg(0)).unwrap().summary,
        };
        let acq = render_acquisitions(&ph, &spec, &dixon_sched(), &ideal_sched(), 0.0, 0).unwrap();
        let d: Vec<f64> = (0..4).map(|c| acq.dixon.plane(c)[0] as f64).collect();
        assert!((d[0] - 0.9).abs() < 1e-6, "{d:?}");
        assert!((d[1] - 0.9).abs() < 1e-6, "{d:?}");
        assert!(d[2].abs() < 1e-6, "{d:?}");
        assert!((d[3] - 0.9).abs() < 1e-6, "{d:?}");
    }

    #[test]
    fn single_peak_dixon_reproduces_pdff_without_decay() {
        let (op, _) = in_opposed_echo_times(1.5, 3.4).unwrap();
        let spec = FatSpectrum::single_peak(-1.0 / (2.0 * op)).unwrap();
        let mut ph = generate_phantom(&cfg(2)).unwrap();
        ph.r2star_map.iter_mut().for_each(|r| *r = 0.0);
        let acq = render_acquisitions(&ph, &spec, &dixon_sched(), &ideal_sched(), 0.0, 0).unwrap();
        for v in 0..ph.geometry.len() {
            if ph.density_map[v] > 0.0 {
                let (w, f) = (acq.dixon.plane(2)[v] as f64, acq.dixon.plane(3)[v] as f64);
                assert!((100.0 * f / (w + f) - ph.pdff_map[v]).abs() < 0.5);
            }
        }
    }

    #[test]
    fn rendering_is_deterministic_finite_and_non_negative() {
        let ph = generate_phantom(&cfg(4)).unwrap();
        let spec = FatSpectrum::liver(1.5).unwrap();
        let a = render_acquisitions(&ph, &spec, &dixon_sched(), &ideal_sched(), 0.03, 9).unwrap();
        let b = render_acquisitions(&ph, &spec, &dixon_sched(), &ideal_sched(), 0.03, 9).unwrap();
        assert_eq!(a, b);
        assert!(a.ideal.is_finite() && a.dixon.is_finite());
        assert!(a.dixon.data.iter().all(|&v| v >= 0.0));
        assert_eq!(a.ideal.channels(), 12);
        assert_eq!(a.dixon.channel_names, DIXON_CHANNELS);
    }

    #[test]
    fn schedule_mismatch_is_rejected() {
        let ph = generate_phantom(&cfg(4)).unwrap();
        let spec = FatSpectrum::liver(1.5).unwrap();
        assert!(render_acquisitions(&ph, &spec, &ideal_sched(), &ideal_sched(), 0.0, 0).is_err());
        assert!(render_acquisitions(&ph, &spec, &dixon_sched(), &dixon_sched(), 0.0, 0).is_err());
    }

    #[test]
    fn echo_roles_follow_phase() {
        let spec = FatSpectrum::liver(1.5).unwrap();
        assert_eq!(dixon_echo_roles(&spec, &dixon_sched()).unwrap(), (1, 0));
        let (op, ip) = in_opposed_echo_times(1.5, 3.4).unwrap();
        let later = EchoSchedule::new(vec![ip, ip + op]).unwrap();
        assert_eq!(dixon_echo_roles(&spec, &later).unwrap(), (0, 1));
    }

    #[test]
    fn zero_offset_stack_of_one_matches_direct_render() {
        let c = cfg(8);
        let subject = PhantomSubject::draw(&c).unwrap();
        let ph = generate_phantom(&c).unwrap();
        let spec = FatSpectrum::liver(1.5).unwrap();
        let direct = render_acquisitions(&ph, &spec, &dixon_sched(), &ideal_sched(), 0.0, 0).unwrap();
        let stack = render_dixon_stack(&subject, &c.geometry, (0.0, 0.0), &[0.0], &spec, &dixon_sched(), 0.0, 0).unwrap();
        assert_eq!(stack, direct.dixon);
    }
}
