//! Paired Dixon / PDFF-R2* dataset construction.
//!
//! Each subject is a phantom rendered twice: a six-echo acquisition on the
//! target grid, fitted with NLLS for the target maps, and a Dixon acquisition
//! on its own coarser grid, collapsed from thin sub-slices, misaligned by a
//! random translation, resampled onto the target grid and registered back.
//! Cohorts are written as raster files plus a JSON manifest, then MI-gated
//! and split.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{echo_channel_names, fit_map_masked, FitMethod, NllsConfig, DIXON_CHANNELS};
use crate::imageops::{mutual_information, register_translation_with_bins, resample_linear, translate};
use crate::phantom::{render_acquisitions, render_dixon_stack, PhantomConfig, PhantomSubject, SubjectSummary};
use crate::raster::{
    read_raster, read_raster_header, sha256_hex, write_raster, BinaryMask, RasterImage, SliceGeometry,
};
use crate::rng::{mix_seed, stream_rng};
use crate::signal::{
    in_opposed_echo_times, EchoSchedule, FatSpectrum, DEFAULT_FIELD_STRENGTH_T, LIVER_FAT_AMPLITUDES, LIVER_FAT_PPM,
    MAIN_FAT_PEAK_PPM,
};

pub const MANIFEST_FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const SPLIT_INDEX_FILE: &str = "splits.json";
pub const TARGET_CHANNELS: [&str; 2] = ["pdff", "r2star"];
pub const DEFAULT_SPLIT_FRACTIONS: [f64; 3] = [0.70, 0.20, 0.10];

const SHIFT_STREAM: u64 = 0x5348_4946;
const SPLIT_STREAM: u64 = 0x5350_4c54;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Cohort seed; subject `i` draws from `mix(seed, i)` and the phantom
    /// block's own `rng_seed` is ignored.
    pub seed: u64,
    pub n_subjects: usize,
    pub phantom: PhantomConfig,
    pub field_strength_t: f64,
    pub fat_peaks_ppm: Vec<f64>,
    pub fat_peak_amplitudes: Vec<f64>,
    /// Dixon echo times (s), any order; the in-phase echo is identified from the spectrum.
    pub dixon_echo_times_s: Vec<f64>,
    pub ideal_echo_times_s: Vec<f64>,
    /// Native Dixon grid; its thickness is the sub-slice thickness.
    pub dixon_geometry: SliceGeometry,
    pub dixon_sub_slices: usize,
    /// Injected misalignment is uniform in `[-max, max]` target voxels per axis.
    pub max_shift_vox: f64,
    pub search_radius: usize,
    pub mi_bins: usize,
    pub mi_filter_quantile: f64,
    pub split_fractions: [f64; 3],
    pub nlls: NllsConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let (t_opposed, t_in) =
            in_opposed_echo_times(DEFAULT_FIELD_STRENGTH_T, MAIN_FAT_PEAK_PPM).expect("valid default field");
        PipelineConfig {
            seed: 0,
            n_subjects: 10,
            phantom: PhantomConfig::default(),
            field_strength_t: DEFAULT_FIELD_STRENGTH_T,
            fat_peaks_ppm: LIVER_FAT_PPM.to_vec(),
            fat_peak_amplitudes: LIVER_FAT_AMPLITUDES.to_vec(),
            dixon_echo_times_s: vec![t_opposed, t_in],
            ideal_echo_times_s: (0..6).map(|k| 0.0012 + 0.002 * k as f64).collect(),
            dixon_geometry: SliceGeometry::new(224, 174, [2.232, 2.232], 3.0),
            dixon_sub_slices: 3,
            max_shift_vox: 4.0,
            search_radius: 8,
            mi_bins: 64,
            mi_filter_quantile: 0.10,
            split_fractions: DEFAULT_SPLIT_FRACTIONS,
            nlls: NllsConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn spectrum(&self) -> Result<FatSpectrum> {
        FatSpectrum::from_ppm(&self.fat_peaks_ppm, &self.fat_peak_amplitudes, self.field_strength_t)
    }

    pub fn dixon_schedule(&self) -> Result<EchoSchedule> {
        let mut t = self.dixon_echo_times_s.clone();
        t.sort_by(|a, b| a.total_cmp(b));
        EchoSchedule::new(t)
    }

    pub fn ideal_schedule(&self) -> Result<EchoSchedule> {
        EchoSchedule::new(self.ideal_echo_times_s.clone())
    }

    /// `(in_phase_time, opposed_time)` of the Dixon pair.
    pub fn dixon_roles(&self) -> Result<(f64, f64)> {
        let sched = self.dixon_schedule()?;
        let (i, o) = crate::phantom::dixon_echo_roles(&self.spectrum()?, &sched)?;
        Ok((sched.times()[i], sched.times()[o]))
    }

    pub fn nlls_method(&self) -> Result<FitMethod> {
        Ok(FitMethod::Nlls {
            schedule: self.ideal_schedule()?,
            spectrum: self.spectrum()?,
            config: self.nlls.clone(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.phantom.validate()?;
        self.spectrum()?;
        self.nlls.validate()?;
        self.dixon_geometry.validate()?;
        self.nlls_method()?;
        if self.dixon_echo_times_s.len() != 2 {
            return Err(Error::invalid("dixon_echo_times_s must hold exactly 2 times"));
        }
        self.dixon_roles()?;
        if self.ideal_echo_times_s.len() < 3 {
            return Err(Error::invalid("ideal_echo_times_s needs at least 3 echoes"));
        }
        if self.dixon_sub_slices == 0 {
            return Err(Error::invalid("dixon_sub_slices must be at least 1"));
        }
        if !(self.max_shift_vox >= 0.0 && self.max_shift_vox.is_finite()) {
            return Err(Error::invalid("max_shift_vox must be non-negative"));
        }
        if self.mi_bins < 2 {
            return Err(Error::invalid("mi_bins must be at least 2"));
        }
        check_quantile(self.mi_filter_quantile)?;
        check_fractions(self.split_fractions)?;
        Ok(())
    }

    /// sha256 of the compact JSON serialization.
    pub fn hash(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("config serializes"))
    }

    fn subject_id(&self, index: usize) -> String {
        let width = self.n_subjects.saturating_sub(1).to_string().len().max(4);
        format!("sub-{index:0width$}")
    }

    /// Through-plane centers (mm) of the Dixon sub-slices.
    fn sub_slice_positions(&self) -> Vec<f64> {
        let n = self.dixon_sub_slices;
        (0..n)
            .map(|k| (k as f64 - (n as f64 - 1.0) / 2.0) * self.dixon_geometry.slice_thickness_mm)
            .collect()
    }
}

fn check_quantile(q: f64) -> Result<()> {
    if !(0.0..1.0).contains(&q) {
        return Err(Error::invalid(format!("MI filter quantile must be in [0, 1), got {q}")));
    }
    Ok(())
}

fn check_fractions(f: [f64; 3]) -> Result<()> {
    if f.iter().any(|&x| !(x > 0.0)) || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("split fractions must be positive and sum to 1, got {f:?}")));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Split> {
        Split::ALL.into_iter().find(|x| x.name() == s)
    }
}

/// Raster stems relative to the manifest directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleFiles {
    /// in_phase, opposed_phase, water, fat on the target grid.
    pub input: String,
    /// NLLS pdff (%) and r2star (1/s).
    pub target: String,
    pub liver_mask: String,
    pub body_mask: String,
    /// Interleaved complex six-echo acquisition.
    pub ideal_echoes: String,
    /// Phantom pdff, r2star, density, liver, body.
    pub truth: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRecord {
    pub subject_id: String,
    pub seed: u64,
    pub split: Option<Split>,
    /// Nats; 0 when registration failed.
    pub mi_score: f64,
    /// Voxels (y, x) the Dixon content was moved by.
    pub injected_shift: [f64; 2],
    /// Translation applied to bring it back.
    pub registered_shift: [f64; 2],
    pub liver_pdff_mean: f64,
    pub liver_r2star_mean: f64,
    pub files: SampleFiles,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RemovedSample {
    pub subject_id: String,
    pub mi_score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MiFilterRecord {
    pub quantile: f64,
    pub removed: Vec<RemovedSample>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub config: PipelineConfig,
    pub config_hash: String,
    pub split_fractions: Option<[f64; 3]>,
    pub split_seed: Option<u64>,
    pub mi_filter: Option<MiFilterRecord>,
    pub samples: Vec<SampleRecord>,
}

impl DatasetManifest {
    pub fn sample(&self, subject_id: &str) -> Option<&SampleRecord> {
        self.samples.iter().find(|s| s.subject_id == subject_id)
    }

    pub fn split_counts(&self) -> [usize; 3] {
        let mut counts = [0; 3];
        for s in &self.samples {
            if let Some(split) = s.split {
                counts[split as usize] += 1;
            }
        }
        counts
    }

    pub fn in_split(&self, split: Split) -> impl Iterator<Item = &SampleRecord> {
        self.samples.iter().filter(move |s| s.split == Some(split))
    }
}

/// Everything produced for one subject, in memory.
#[derive(Clone, Debug)]
pub struct SubjectArtifacts {
    pub subject_id: String,
    pub seed: u64,
    pub input: RasterImage,
    pub target: RasterImage,
    pub liver_mask: BinaryMask,
    pub body_mask: BinaryMask,
    pub ideal_echoes: RasterImage,
    pub truth: RasterImage,
    pub injected_shift: [f64; 2],
    pub registered_shift: [f64; 2],
    pub mi_score: f64,
    pub summary: SubjectSummary,
}

/// A loaded (input, target, mask) training pair.
#[derive(Clone, Debug)]
pub struct PairedSample {
    pub subject_id: String,
    pub input: RasterImage,
    pub target: RasterImage,
    pub liver_mask: BinaryMask,
    pub mi_score: f64,
    pub seed: u64,
    pub config_hash: String,
}

fn magnitude_of_first_echo(ideal: &RasterImage) -> Result<RasterImage> {
    let (re, im) = (ideal.plane(0), ideal.plane(1));
    let mag = re.iter().zip(im).map(|(&a, &b)| (a as f64).hypot(b as f64)).collect();
    RasterImage::from_planes(ideal.geometry, vec![("echo1_mag", mag)])
}

/// Simulates, misaligns, registers and fits subject `index` of a cohort.
pub fn simulate_subject(cfg: &PipelineConfig, index: usize) -> Result<SubjectArtifacts> {
    let seed = mix_seed(cfg.seed, index as u64);
    let mut shift_rng = stream_rng(seed, SHIFT_STREAM);
    let m = cfg.max_shift_vox;
    let injected = if m > 0.0 {
        [shift_rng.random_range(-m..=m), shift_rng.random_range(-m..=m)]
    } else {
        [0.0, 0.0]
    };
    simulate_subject_with_shift(cfg, index, injected)
}

/// As [`simulate_subject`] with an explicit Dixon misalignment (target voxels, y/x).
pub fn simulate_subject_with_shift(cfg: &PipelineConfig, index: usize, injected: [f64; 2]) -> Result<SubjectArtifacts> {
    let seed = mix_seed(cfg.seed, index as u64);
    let spectrum = cfg.spectrum()?;
    let dixon_sched = cfg.dixon_schedule()?;
    let ideal_sched = cfg.ideal_schedule()?;
    let phantom_cfg = PhantomConfig {
        rng_seed: seed,
        ..cfg.phantom.clone()
    };
    let geom = phantom_cfg.geometry;
    let subject = PhantomSubject::draw(&phantom_cfg)?;
    let slice = subject.slice(&geom);
    let sigma = phantom_cfg.noise_sigma;
    let acq = render_acquisitions(&slice, &spectrum, &dixon_sched, &ideal_sched, sigma, seed)?;

    if injected.iter().any(|d| !d.is_finite()) {
        return Err(Error::invalid(format!("non-finite shift {injected:?}")));
    }
    let offset_mm = (injected[0] * geom.spacing_mm[0], injected[1] * geom.spacing_mm[1]);
    let native = render_dixon_stack(
        &subject,
        &cfg.dixon_geometry,
        offset_mm,
        &cfg.sub_slice_positions(),
        &spectrum,
        &dixon_sched,
        sigma,
        seed,
    )?;
    let mut resampled = resample_linear(&native, geom.rows, geom.cols, geom.spacing_mm)?;
    resampled.geometry = geom;

    let reference = magnitude_of_first_echo(&acq.ideal)?;
    let (input, registered, mi_score) =
        match register_translation_with_bins(&resampled.channel(0), &reference, cfg.search_radius, cfg.mi_bins) {
            Ok(reg) => {
                let input = translate(&resampled, reg.dy, reg.dx);
                let mi = mutual_information(&input.channel(0), &reference, cfg.mi_bins)?;
                (input, [reg.dy, reg.dx], mi)
            }
            Err(Error::Registration(_)) => (resampled, [0.0, 0.0], 0.0),
            Err(e) => return Err(e),
        };

    let target = fit_map_masked(&acq.ideal, &cfg.nlls_method()?, Some(&slice.body_mask))?;
    Ok(SubjectArtifacts {
        subject_id: cfg.subject_id(index),
        seed,
        input,
        target,
        truth: slice.to_raster()?,
        liver_mask: slice.liver_mask,
        body_mask: slice.body_mask,
        ideal_echoes: acq.ideal,
        injected_shift: injected,
        registered_shift: registered,
        mi_score,
        summary: slice.summary,
    })
}

fn rel_stem(subject_id: &str, name: &str) -> String {
    format!("subjects/{subject_id}/{name}")
}

fn write_subject(art: &SubjectArtifacts, root: &Path) -> Result<SampleRecord> {
    let id = &art.subject_id;
    let files = SampleFiles {
        input: rel_stem(id, "input"),
        target: rel_stem(id, "target"),
        liver_mask: rel_stem(id, "liver_mask"),
        body_mask: rel_stem(id, "body_mask"),
        ideal_echoes: rel_stem(id, "ideal_echoes"),
        truth: rel_stem(id, "truth"),
    };
    let geom = art.input.geometry;
    write_raster(&root.join(&files.input), &art.input)?;
    write_raster(&root.join(&files.target), &art.target)?;
    write_raster(&root.join(&files.liver_mask), &art.liver_mask.to_raster(geom, "liver")?)?;
    write_raster(&root.join(&files.body_mask), &art.body_mask.to_raster(geom, "body")?)?;
    write_raster(&root.join(&files.ideal_echoes), &art.ideal_echoes)?;
    write_raster(&root.join(&files.truth), &art.truth)?;
    Ok(SampleRecord {
        subject_id: id.clone(),
        seed: art.seed,
        split: None,
        mi_score: art.mi_score,
        injected_shift: art.injected_shift,
        registered_shift: art.registered_shift,
        liver_pdff_mean: art.summary.liver_pdff_mean,
        liver_r2star_mean: art.summary.liver_r2star_mean,
        files,
    })
}

/// Simulates `cfg.n_subjects` subjects into `out_dir` and writes the manifest.
///
/// Subjects run in parallel; the manifest is ordered by subject id, so the
/// output does not depend on the thread count.
pub fn build_cohort(cfg: &PipelineConfig, out_dir: &Path) -> Result<DatasetManifest> {
    if cfg.n_subjects == 0 {
        return Err(Error::invalid("cohort needs at least one subject"));
    }
    cfg.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut samples = (0..cfg.n_subjects)
        .into_par_iter()
        .map(|i| write_subject(&simulate_subject(cfg, i)?, out_dir))
        .collect::<Result<Vec<_>>>()?;
    samples.sort_by(|a, b| a.subject_id.cmp(&b.subject_id));
    let manifest = DatasetManifest {
        format_version: MANIFEST_FORMAT_VERSION,
        config: cfg.clone(),
        config_hash: cfg.hash(),
        split_fractions: None,
        split_seed: None,
        mi_filter: None,
        samples,
    };
    write_manifest(&out_dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

/// Drops the `floor(quantile * n)` samples with the lowest MI; among equal
/// scores the larger subject id goes first.
pub fn mi_quality_filter(manifest: &DatasetManifest, quantile: f64) -> Result<DatasetManifest> {
    check_quantile(quantile)?;
    if manifest.samples.is_empty() {
        return Err(Error::Manifest("cannot filter an empty manifest".into()));
    }
    let n = manifest.samples.len();
    let n_remove = (quantile * n as f64).floor() as usize;
    let mut order: Vec<&SampleRecord> = manifest.samples.iter().collect();
    order.sort_by(|a, b| a.mi_score.total_cmp(&b.mi_score).then_with(|| b.subject_id.cmp(&a.subject_id)));
    let removed: Vec<RemovedSample> = order[..n_remove]
        .iter()
        .map(|s| RemovedSample {
            subject_id: s.subject_id.clone(),
            mi_score: s.mi_score,
        })
        .collect();
    let gone: BTreeSet<&str> = removed.iter().map(|r| r.subject_id.as_str()).collect();

    let mut out = manifest.clone();
    out.samples.retain(|s| !gone.contains(s.subject_id.as_str()));
    let mut all_removed = manifest.mi_filter.as_ref().map(|f| f.removed.clone()).unwrap_or_default();
    all_removed.extend(removed);
    out.mi_filter = Some(MiFilterRecord {
        quantile,
        removed: all_removed,
    });
    Ok(out)
}

/// `(train, val, test)` counts: round-half-up of the first two fractions,
/// remainder to test.
pub fn split_counts(n: usize, fractions: [f64; 3]) -> [usize; 3] {
    let round = |f: f64| (f * n as f64 + 0.5).floor() as usize;
    let train = round(fractions[0]).min(n);
    let val = round(fractions[1]).min(n - train);
    [train, val, n - train - val]
}

/// Seeded shuffle of the subjects, then contiguous train/val/test assignment.
pub fn split_dataset(manifest: &DatasetManifest, fractions: [f64; 3], seed: u64) -> Result<DatasetManifest> {
    check_fractions(fractions)?;
    let n = manifest.samples.len();
    if n < 3 {
        return Err(Error::Manifest(format!("need at least 3 samples to split, have {n}")));
    }
    let mut ids: Vec<String> = manifest.samples.iter().map(|s| s.subject_id.clone()).collect();
    ids.sort();
    ids.shuffle(&mut stream_rng(seed, SPLIT_STREAM));
    let [train, val, _] = split_counts(n, fractions);
    let assignment: BTreeMap<String, Split> = ids
        .into_iter()
        .enumerate()
        .map(|(i, id)| {
            let split = if i < train {
                Split::Train
            } else if i < train + val {
                Split::Val
            } else {
                Split::Test
            };
            (id, split)
        })
        .collect();
    let mut out = manifest.clone();
    for s in &mut out.samples {
        s.split = Some(assignment[&s.subject_id]);
    }
    out.split_fractions = Some(fractions);
    out.split_seed = Some(seed);
    Ok(out)
}

pub fn write_manifest(path: &Path, manifest: &DatasetManifest) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut text = serde_json::to_string_pretty(manifest).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let m: DatasetManifest = serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    if m.format_version != MANIFEST_FORMAT_VERSION {
        return Err(Error::Version {
            path: path.to_path_buf(),
            found: m.format_version,
            expected: MANIFEST_FORMAT_VERSION,
        });
    }
    Ok(m)
}

fn expect_channels(root: &Path, stem: &str, expected: &[String], problems: &mut Vec<String>) -> Option<(usize, usize)> {
    match read_raster_header(&root.join(stem)) {
        Ok(h) if h.channel_names == expected => Some((h.rows, h.cols)),
        Ok(h) => {
            problems.push(format!("{stem}: channels {:?}, expected {expected:?}", h.channel_names));
            None
        }
        Err(e) => {
            problems.push(format!("{stem}: {e}"));
            None
        }
    }
}

/// Checks that splits are consistent and every referenced raster header has
/// the contracted channel names and a common grid.
pub fn validate_manifest(manifest: &DatasetManifest, root: &Path) -> Result<()> {
    let mut problems = Vec::new();
    let mut seen = BTreeSet::new();
    for s in &manifest.samples {
        if !seen.insert(s.subject_id.as_str()) {
            problems.push(format!("{}: duplicate subject id", s.subject_id));
        }
    }
    if let Some(f) = manifest.split_fractions {
        if let Err(e) = check_fractions(f) {
            problems.push(e.to_string());
        }
        if manifest.samples.iter().any(|s| s.split.is_none()) {
            problems.push("manifest is split but some samples have no split".into());
        }
    }
    let strings = |names: &[&str]| names.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    let (dixon, target) = (strings(&DIXON_CHANNELS), strings(&TARGET_CHANNELS));
    let echoes = echo_channel_names(manifest.config.ideal_echo_times_s.len());
    let (liver, body) = (strings(&["liver"]), strings(&["body"]));
    let truth = strings(&["pdff", "r2star", "density", "liver", "body"]);
    for s in &manifest.samples {
        let f = &s.files;
        let grids: Vec<_> = [
            expect_channels(root, &f.input, &dixon, &mut problems),
            expect_channels(root, &f.target, &target, &mut problems),
            expect_channels(root, &f.liver_mask, &liver, &mut problems),
            expect_channels(root, &f.body_mask, &body, &mut problems),
            expect_channels(root, &f.ideal_echoes, &echoes, &mut problems),
            expect_channels(root, &f.truth, &truth, &mut problems),
        ]
        .into_iter()
        .flatten()
        .collect();
        if grids.windows(2).any(|w| w[0] != w[1]) {
            problems.push(format!("{}: rasters are on different grids", s.subject_id));
        }
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(Error::Manifest(problems.join("; ")))
    }
}

/// Reads the training pair of one manifest sample.
pub fn load_sample(manifest: &DatasetManifest, root: &Path, subject_id: &str) -> Result<PairedSample> {
    let s = manifest
        .sample(subject_id)
        .ok_or_else(|| Error::Manifest(format!("unknown subject {subject_id}")))?;
    let input = read_raster(&root.join(&s.files.input))?;
    let target = read_raster(&root.join(&s.files.target))?;
    let mask = read_raster(&root.join(&s.files.liver_mask))?;
    input.require_channels(DIXON_CHANNELS.len())?;
    target.require_channels(TARGET_CHANNELS.len())?;
    input.require_same_grid(&target)?;
    input.require_same_grid(&mask)?;
    Ok(PairedSample {
        subject_id: s.subject_id.clone(),
        input,
        target,
        liver_mask: BinaryMask::from_raster(&mask, 0),
        mi_score: s.mi_score,
        seed: s.seed,
        config_hash: manifest.config_hash.clone(),
    })
}

/// One entry of the exported split index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExportedSample {
    pub subject_id: String,
    pub split: Split,
    pub mi_score: f64,
    /// Stems relative to the export directory.
    pub input: String,
    pub target: String,
    pub liver_mask: String,
}

/// `splits.json` of an ML export.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitIndex {
    pub format_version: u32,
    pub config_hash: String,
    pub mi_filtered: bool,
    pub input_channels: Vec<String>,
    pub target_channels: Vec<String>,
    pub target_units: Vec<String>,
    pub splits: BTreeMap<Split, Vec<String>>,
    pub samples: Vec<ExportedSample>,
}

pub fn load_split_index(path: &Path) -> Result<SplitIndex> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Copies each sample's input, target and liver mask into
/// `out_dir/<split>/<subject>/` and writes `splits.json`.
///
/// Refuses a manifest that has not been MI-gated unless `allow_unfiltered`.
pub fn export_ml(manifest: &DatasetManifest, root: &Path, out_dir: &Path, allow_unfiltered: bool) -> Result<SplitIndex> {
    if manifest.mi_filter.is_none() && !allow_unfiltered {
        return Err(Error::Manifest(
            "manifest has not been MI-filtered (pass --allow-unfiltered to export anyway)".into(),
        ));
    }
    if let Some(s) = manifest.samples.iter().find(|s| s.split.is_none()) {
        return Err(Error::Manifest(format!("{} has no split assignment", s.subject_id)));
    }
    validate_manifest(manifest, root)?;
    let exported = manifest
        .samples
        .par_iter()
        .map(|s| {
            let split = s.split.expect("checked above");
            let dir = format!("{}/{}", split.name(), s.subject_id);
            let copy = |from: &str, name: &str| -> Result<String> {
                let stem = format!("{dir}/{name}");
                write_raster(&out_dir.join(&stem), &read_raster(&root.join(from))?)?;
                Ok(stem)
            };
            Ok(ExportedSample {
                subject_id: s.subject_id.clone(),
                split,
                mi_score: s.mi_score,
                input: copy(&s.files.input, "input")?,
                target: copy(&s.files.target, "target")?,
                liver_mask: copy(&s.files.liver_mask, "liver_mask")?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut splits: BTreeMap<Split, Vec<String>> = Split::ALL.into_iter().map(|s| (s, vec![])).collect();
    for e in &exported {
        splits.get_mut(&e.split).expect("all splits present").push(e.subject_id.clone());
    }
    let index = SplitIndex {
        format_version: MANIFEST_FORMAT_VERSION,
        config_hash: manifest.config_hash.clone(),
        mi_filtered: manifest.mi_filter.is_some(),
        input_channels: DIXON_CHANNELS.iter().map(|s| s.to_string()).collect(),
        target_channels: TARGET_CHANNELS.iter().map(|s| s.to_string()).collect(),
        target_units: vec!["percent".into(), "1/s".into()],
        splits,
        samples: exported,
    };
    let path = out_dir.join(SPLIT_INDEX_FILE);
    let mut text = serde_json::to_string_pretty(&index).map_err(|e| Error::Json {
        path: path.clone(),
        source: e,
    })?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(index)
}

/// Resolves a manifest-relative stem.
pub fn resolve(root: &Path, stem: &str) -> PathBuf {
    root.join(stem)
}
