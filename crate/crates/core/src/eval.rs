//! Evaluation of predicted PDFF/R2* maps: masked MAE, regional means, mean-value
//! regression and report emission.
//!
//! MAE excludes voxels where the ground truth is exactly 0 (background). MAEs
//! are computed per sample and then averaged, so every subject weighs the same.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::{DatasetManifest, SampleRecord, Split};
use crate::raster::{read_raster, write_gray_png, BinaryMask, RasterImage};

/// Method name that scores the manifest's own target maps.
pub const TARGET_METHOD: &str = "target";
pub const QUANTITIES: [&str; 2] = ["pdff", "r2star"];

fn single_channel(img: &RasterImage, what: &str) -> Result<()> {
    if img.channels() != 1 {
        return Err(Error::Channels(format!("{what} must have 1 channel, has {}", img.channels())));
    }
    Ok(())
}

/// Mean |pred - truth| over voxels inside `mask` (all voxels if `None`)
/// where truth is non-zero, with the number of voxels used.
pub fn masked_mae_with_count(pred: &RasterImage, truth: &RasterImage, mask: Option<&BinaryMask>) -> Result<(f64, usize)> {
    single_channel(pred, "prediction")?;
    single_channel(truth, "truth")?;
    pred.require_same_grid(truth)?;
    if let Some(m) = mask {
        m.check_against(truth)?;
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for (v, (&p, &t)) in pred.data.iter().zip(&truth.data).enumerate() {
        if t != 0.0 && mask.is_none_or(|m| m.bits()[v]) {
            sum += (p as f64 - t as f64).abs();
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::EmptySelection("no voxel inside the mask has non-zero truth".into()));
    }
    Ok((sum / n as f64, n))
}

pub fn masked_mae(pred: &RasterImage, truth: &RasterImage, mask: Option<&BinaryMask>) -> Result<f64> {
    Ok(masked_mae_with_count(pred, truth, mask)?.0)
}

/// Arithmetic mean over the mask, zeros included.
pub fn mean_region_value(img: &RasterImage, mask: &BinaryMask) -> Result<f64> {
    single_channel(img, "image")?;
    mask.check_against(img)?;
    let (sum, n) = img
        .data
        .iter()
        .zip(mask.bits())
        .filter(|(_, &b)| b)
        .fold((0.0, 0usize), |(s, n), (&v, _)| (s + v as f64, n + 1));
    if n == 0 {
        return Err(Error::EmptySelection("empty mask".into()));
    }
    Ok(sum / n as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Regression {
    pub slope: f64,
    pub intercept: f64,
    /// Squared Pearson correlation; 0 when `ys` is constant.
    pub r_squared: f64,
}

/// Ordinary least squares of `ys` on `xs`.
pub fn regression_r2(xs: &[f64], ys: &[f64]) -> Result<Regression> {
    if xs.len() != ys.len() {
        return Err(Error::invalid(format!("{} x values but {} y values", xs.len(), ys.len())));
    }
    let n = xs.len();
    if n < 3 {
        return Err(Error::invalid(format!("regression needs at least 3 points, got {n}")));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::invalid("regression inputs must be finite"));
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx == 0.0 {
        return Err(Error::invalid("x values are constant"));
    }
    let slope = sxy / sxx;
    let r_squared = if syy == 0.0 { 0.0 } else { (sxy * sxy / (sxx * syy)).min(1.0) };
    Ok(Regression {
        slope,
        intercept: my - slope * mx,
        r_squared,
    })
}

/// Which raster serves as ground truth.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TruthSource {
    /// The NLLS target maps of the manifest.
    Target,
    /// The phantom's generating maps.
    Phantom,
}

impl TruthSource {
    pub fn name(self) -> &'static str {
        match self {
            TruthSource::Target => "target",
            TruthSource::Phantom => "phantom",
        }
    }
}

/// Prediction rasters named `<dir>/<subject>_<method>_<quantity>`.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionSource {
    pub method: String,
    pub dir: PathBuf,
}

impl PredictionSource {
    pub fn new(method: impl Into<String>, dir: impl Into<PathBuf>) -> Self {
        PredictionSource {
            method: method.into(),
            dir: dir.into(),
        }
    }

    pub fn stem(&self, subject_id: &str, quantity: &str) -> PathBuf {
        self.dir.join(prediction_name(subject_id, &self.method, quantity))
    }
}

/// `<subject>_<method>_<quantity>`.
pub fn prediction_name(subject_id: &str, method: &str, quantity: &str) -> String {
    format!("{subject_id}_{method}_{quantity}")
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MaeStat {
    pub value: f64,
    /// Samples contributing to the average.
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantityMetrics {
    pub quantity: String,
    pub slice_mae: Option<MaeStat>,
    pub liver_mae: Option<MaeStat>,
    /// Mean prediction on mean truth across samples; `None` if undefined.
    pub regression: Option<Regression>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodMetrics {
    pub method: String,
    pub quantities: Vec<QuantityMetrics>,
}

impl MethodMetrics {
    pub fn quantity(&self, q: &str) -> Option<&QuantityMetrics> {
        self.quantities.iter().find(|m| m.quantity == q)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScatterPoint {
    pub sample_id: String,
    pub method: String,
    pub quantity: String,
    pub mean_pred: f64,
    pub mean_truth: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub split: Option<Split>,
    pub truth: TruthSource,
    /// How zero-valued voxels are treated in MAE.
    pub zero_exclusion: String,
    pub aggregation: String,
    pub n_samples: usize,
    pub methods: Vec<MethodMetrics>,
    pub scatter: Vec<ScatterPoint>,
}

/// Per-sample measurements of one method and quantity.
#[derive(Clone, Debug)]
struct SampleMetrics {
    slice_mae: Option<f64>,
    liver_mae: Option<f64>,
    /// (mean_pred, mean_truth) over the truth-non-zero slice region.
    means: Option<(f64, f64)>,
}

fn non_empty(r: Result<f64>) -> Result<Option<f64>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::EmptySelection(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Metrics of one sample: slice and liver MAE and the slice means.
fn sample_metrics(pred: &RasterImage, truth: &RasterImage, liver: &BinaryMask) -> Result<SampleMetrics> {
    let region = BinaryMask::new(truth.rows(), truth.cols(), truth.data.iter().map(|&t| t != 0.0).collect())?;
    let means = match (non_empty(mean_region_value(pred, &region))?, non_empty(mean_region_value(truth, &region))?) {
        (Some(p), Some(t)) => Some((p, t)),
        _ => None,
    };
    Ok(SampleMetrics {
        slice_mae: non_empty(masked_mae(pred, truth, None))?,
        liver_mae: non_empty(masked_mae(pred, truth, Some(liver)))?,
        means,
    })
}

fn mean_stat(values: impl Iterator<Item = Option<f64>>) -> Option<MaeStat> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| MaeStat {
        value: v.iter().sum::<f64>() / v.len() as f64,
        n: v.len(),
    })
}

fn read_channel(path: &Path, channel: usize) -> Result<RasterImage> {
    let img = read_raster(path)?;
    if channel >= img.channels() {
        return Err(Error::Channels(format!("{} has no channel {channel}", path.display())));
    }
    Ok(img.channel(channel))
}

fn truth_raster(root: &Path, s: &SampleRecord, truth: TruthSource, q: usize) -> Result<RasterImage> {
    let stem = match truth {
        TruthSource::Target => &s.files.target,
        TruthSource::Phantom => &s.files.truth,
    };
    read_channel(&root.join(stem), q)
}

fn prediction_raster(root: &Path, s: &SampleRecord, src: &PredictionSource, q: usize) -> Result<RasterImage> {
    if src.method == TARGET_METHOD {
        return read_channel(&root.join(&s.files.target), q);
    }
    let img = read_raster(&src.stem(&s.subject_id, QUANTITIES[q]))?;
    if img.channels() != 1 {
        return Err(Error::Channels(format!(
            "prediction {} must have 1 channel",
            src.stem(&s.subject_id, QUANTITIES[q]).display()
        )));
    }
    Ok(img)
}

fn exists(stem: &Path) -> bool {
    crate::raster::header_path(stem).is_file()
}

/// Which quantities each method provides, failing with every missing file
/// when a method covers a quantity for only some samples (or nothing at all).
fn capabilities(samples: &[&SampleRecord], methods: &[PredictionSource]) -> Result<Vec<[bool; 2]>> {
    let mut missing = Vec::new();
    let mut caps = Vec::with_capacity(methods.len());
    for src in methods {
        if src.method == TARGET_METHOD {
            caps.push([true, true]);
            continue;
        }
        let mut cap = [false; 2];
        for (q, quantity) in QUANTITIES.iter().enumerate() {
            let present: Vec<bool> = samples.iter().map(|s| exists(&src.stem(&s.subject_id, quantity))).collect();
            if present.iter().any(|&p| p) {
                cap[q] = true;
                for (s, _) in samples.iter().zip(&present).filter(|(_, &p)| !p) {
                    missing.push(src.stem(&s.subject_id, quantity).display().to_string());
                }
            }
        }
        if cap == [false, false] {
            for s in samples {
                for quantity in QUANTITIES {
                    missing.push(src.stem(&s.subject_id, quantity).display().to_string());
                }
            }
        }
        caps.push(cap);
    }
    if missing.is_empty() {
        Ok(caps)
    } else {
        Err(Error::MissingPredictions(missing))
    }
}

/// Scores every method on the samples of `split` (all samples if `None`).
pub fn build_report(
    manifest: &DatasetManifest,
    root: &Path,
    split: Option<Split>,
    methods: &[PredictionSource],
    truth: TruthSource,
) -> Result<MetricReport> {
    let samples: Vec<&SampleRecord> = manifest
        .samples
        .iter()
        .filter(|s| split.is_none() || s.split == split)
        .collect();
    if samples.is_empty() {
        return Err(Error::EmptySelection(format!(
            "no samples in split {}",
            split.map_or("(all)", Split::name)
        )));
    }
    if methods.is_empty() {
        return Err(Error::invalid("no methods to evaluate"));
    }
    let caps = capabilities(&samples, methods)?;

    // per sample: per method: per quantity
    let per_sample: Vec<Vec<[Option<SampleMetrics>; 2]>> = samples
        .par_iter()
        .map(|s| {
            let liver = BinaryMask::from_raster(&read_raster(&root.join(&s.files.liver_mask))?, 0);
            let truths = [truth_raster(root, s, truth, 0)?, truth_raster(root, s, truth, 1)?];
            methods
                .iter()
                .zip(&caps)
                .map(|(src, cap)| {
                    let mut out = [None, None];
                    for q in 0..2 {
                        if cap[q] {
                            let pred = prediction_raster(root, s, src, q)?;
                            out[q] = Some(sample_metrics(&pred, &truths[q], &liver)?);
                        }
                    }
                    Ok(out)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    let mut report = MetricReport {
        split,
        truth,
        zero_exclusion: "voxels with truth == 0 are excluded from MAE".into(),
        aggregation: "per-sample MAE averaged over samples".into(),
        n_samples: samples.len(),
        methods: Vec::new(),
        scatter: Vec::new(),
    };
    for (m, src) in methods.iter().enumerate() {
        let mut quantities = Vec::new();
        for (q, quantity) in QUANTITIES.iter().enumerate() {
            if !caps[m][q] {
                continue;
            }
            let rows: Vec<(&SampleRecord, &SampleMetrics)> = samples
                .iter()
                .zip(&per_sample)
                .map(|(s, per)| (*s, per[m][q].as_ref().expect("capable")))
                .collect();
            let mut xs = Vec::new();
            let mut ys = Vec::new();
            for (s, r) in &rows {
                if let Some((pred, tru)) = r.means {
                    xs.push(tru);
                    ys.push(pred);
                    report.scatter.push(ScatterPoint {
                        sample_id: s.subject_id.clone(),
                        method: src.method.clone(),
                        quantity: quantity.to_string(),
                        mean_pred: pred,
                        mean_truth: tru,
                    });
                }
            }
            quantities.push(QuantityMetrics {
                quantity: quantity.to_string(),
                slice_mae: mean_stat(rows.iter().map(|(_, r)| r.slice_mae)),
                liver_mae: mean_stat(rows.iter().map(|(_, r)| r.liver_mae)),
                regression: regression_r2(&xs, &ys).ok(),
            });
        }
        report.methods.push(MethodMetrics {
            method: src.method.clone(),
            quantities,
        });
    }
    Ok(report)
}

impl MetricReport {
    /// `method,metric,region,value,n`
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,metric,region,value,n\n");
        for m in &self.methods {
            for q in &m.quantities {
                for (region, stat) in [("slice", q.slice_mae), ("liver", q.liver_mae)] {
                    if let Some(s) = stat {
                        let _ = writeln!(out, "{},{}_mae,{region},{},{}", m.method, q.quantity, s.value, s.n);
                    }
                }
                if let Some(r) = q.regression {
                    let n = self.scatter.iter().filter(|p| p.method == m.method && p.quantity == q.quantity).count();
                    for (name, v) in [("slope", r.slope), ("intercept", r.intercept), ("r_squared", r.r_squared)] {
                        let _ = writeln!(out, "{},{}_{name},slice_mean,{v},{n}", m.method, q.quantity);
                    }
                }
            }
        }
        out
    }

    /// `sample_id,method,mean_pred,mean_truth,quantity`
    pub fn scatter_csv(&self) -> String {
        let mut out = String::from("sample_id,method,mean_pred,mean_truth,quantity\n");
        for p in &self.scatter {
            let _ = writeln!(out, "{},{},{},{},{}", p.sample_id, p.method, p.mean_pred, p.mean_truth, p.quantity);
        }
        out
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Fixed-width tables, one per quantity.
    pub fn to_text(&self) -> String {
        let fmt = |s: Option<MaeStat>| s.map_or("-".to_string(), |s| format!("{:.3}", s.value));
        let width = self.methods.iter().map(|m| m.method.len()).max().unwrap_or(6).max(6);
        let mut out = format!(
            "split: {}  truth: {}  samples: {}\n",
            self.split.map_or("all", Split::name),
            self.truth.name(),
            self.n_samples
        );
        for (quantity, unit) in [("pdff", "p.p."), ("r2star", "1/s")] {
            let _ = writeln!(out, "\n{} MAE ({unit})", quantity.to_uppercase());
            let _ = writeln!(out, "{:width$}  {:>10}  {:>10}  {:>8}", "method", "slice", "liver", "R^2");
            for m in &self.methods {
                if let Some(q) = m.quantity(quantity) {
                    let r2 = q.regression.map_or("-".to_string(), |r| format!("{:.3}", r.r_squared));
                    let _ = writeln!(
                        out,
                        "{:width$}  {:>10}  {:>10}  {:>8}",
                        m.method,
                        fmt(q.slice_mae),
                        fmt(q.liver_mae),
                        r2
                    );
                }
            }
        }
        out
    }
}

/// Writes `report.csv`, `report.json`, `report.txt` and `scatter.csv`.
pub fn write_report(report: &MetricReport, out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let files = [
        ("report.csv", report.to_csv()),
        ("report.json", report.to_json()),
        ("report.txt", report.to_text()),
        ("scatter.csv", report.scatter_csv()),
    ];
    let mut written = Vec::new();
    for (name, text) in files {
        let path = out_dir.join(name);
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

const PLOT_SIZE: usize = 256;
const PLOT_MARGIN: usize = 8;

/// Grayscale scatter of mean prediction (up) against mean truth (right) for
/// one quantity, one gray level per method, with the identity line.
pub fn write_scatter_png(report: &MetricReport, quantity: &str, path: &Path) -> Result<()> {
    let points: Vec<&ScatterPoint> = report.scatter.iter().filter(|p| p.quantity == quantity).collect();
    let (lo, hi) = points
        .iter()
        .flat_map(|p| [p.mean_pred, p.mean_truth])
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let (lo, hi) = if lo < hi { (lo, hi) } else { (lo - 1.0, lo + 1.0) };
    let span = (PLOT_SIZE - 2 * PLOT_MARGIN - 1) as f64;
    let to_px = |v: f64| PLOT_MARGIN + (((v - lo) / (hi - lo)).clamp(0.0, 1.0) * span).round() as usize;
    let mut px = vec![255u8; PLOT_SIZE * PLOT_SIZE];
    for i in PLOT_MARGIN..PLOT_SIZE - PLOT_MARGIN {
        px[(PLOT_SIZE - 1 - i) * PLOT_SIZE + i] = 200;
    }
    let n_methods = report.methods.len().max(1);
    for p in points {
        let m = report.methods.iter().position(|m| m.method == p.method).unwrap_or(0);
        let shade = (160 * m / n_methods) as u8;
        let (x, y) = (to_px(p.mean_truth), PLOT_SIZE - 1 - to_px(p.mean_pred));
        for dy in 0..3 {
            for dx in 0..3 {
                let (yy, xx) = ((y + dy).saturating_sub(1), (x + dx).saturating_sub(1));
                px[yy.min(PLOT_SIZE - 1) * PLOT_SIZE + xx.min(PLOT_SIZE - 1)] = shade;
            }
        }
    }
    write_gray_png(path, PLOT_SIZE as u32, PLOT_SIZE as u32, &px)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::SliceGeometry;
    use proptest::prelude::*;

    fn img(rows: usize, cols: usize, data: Vec<f32>) -> RasterImage {
        RasterImage::new(SliceGeometry::new(rows, cols, [1.0, 1.0], 1.0), vec!["v".into()], data).unwrap()
    }

    #[test]
    fn mae_examples() {
        let t = img(1, 3, vec![1.0, 2.0, 3.0]);
        assert_eq!(masked_mae(&t, &t, None).unwrap(), 0.0);
        let p = img(1, 3, vec![3.0, 4.0, 5.0]);
        assert_eq!(masked_mae(&p, &t, None).unwrap(), 2.0);
        let truth = img(1, 3, vec![1.0, 0.0, 3.0]);
        let pred = img(1, 3, vec![2.0, 5.0, 1.0]);
        assert_eq!(masked_mae_with_count(&pred, &truth, None).unwrap(), (1.5, 2));
        let mask = BinaryMask::new(1, 3, vec![true, true, false]).unwrap();
        assert_eq!(masked_mae(&pred, &truth, Some(&mask)).unwrap(), 1.0);
    }

    #[test]
    fn mae_errors() {
        let zeros = img(1, 3, vec![0.0; 3]);
        assert!(matches!(masked_mae(&zeros, &zeros, None), Err(Error::EmptySelection(_))));
        let other = img(3, 1, vec![1.0; 3]);
        assert!(masked_mae(&other, &img(1, 3, vec![1.0; 3]), None).is_err());
        let empty = BinaryMask::empty(1, 3);
        assert!(masked_mae(&img(1, 3, vec![1.0; 3]), &img(1, 3, vec![1.0; 3]), Some(&empty)).is_err());
    }

    #[test]
    fn region_mean_examples() {
        let c = img(2, 2, vec![3.5; 4]);
        assert_eq!(mean_region_value(&c, &BinaryMask::full(2, 2)).unwrap(), 3.5);
        let half = img(2, 2, vec![0.0, 0.0, 7.0, 7.0]);
        assert_eq!(mean_region_value(&half, &BinaryMask::full(2, 2)).unwrap(), 3.5);
        assert!(mean_region_value(&half, &BinaryMask::empty(2, 2)).is_err());
    }

    #[test]
    fn regression_examples() {
        let xs = [0.0, 1.0, 2.0, 5.0];
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x + 1.0).collect();
        let r = regression_r2(&xs, &ys).unwrap();
        assert!((r.slope - 2.0).abs() < 1e-12 && (r.intercept - 1.0).abs() < 1e-12);
        assert!((r.r_squared - 1.0).abs() < 1e-12);
        assert!(regression_r2(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).is_err());
        assert!(regression_r2(&[1.0, 2.0], &[1.0, 2.0]).is_err());
        assert_eq!(regression_r2(&[1.0, 2.0, 3.0], &[4.0, 4.0, 4.0]).unwrap().r_squared, 0.0);
    }

    #[test]
    fn independent_values_have_no_explained_variance() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let xs: Vec<f64> = (0..100_000).map(|_| rng.random()).collect();
        let ys: Vec<f64> = (0..100_000).map(|_| rng.random()).collect();
        assert!(regression_r2(&xs, &ys).unwrap().r_squared < 0.01);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn mae_is_symmetric_and_permutation_invariant(
            vals in proptest::collection::vec((0.5f32..100.0, -50.0f32..50.0, any::<bool>()), 2..40),
            rot in 0usize..40
        ) {
            let n = vals.len();
            let a: Vec<f32> = vals.iter().map(|v| v.0).collect();
            let b: Vec<f32> = vals.iter().map(|v| v.0 + v.1.abs() + 0.5).collect();
            let bits: Vec<bool> = vals.iter().map(|v| v.2).collect();
            prop_assume!(bits.iter().any(|&x| x));
            let mask = BinaryMask::new(1, n, bits.clone()).unwrap();
            let ab = masked_mae(&img(1, n, a.clone()), &img(1, n, b.clone()), Some(&mask)).unwrap();
            let ba = masked_mae(&img(1, n, b.clone()), &img(1, n, a.clone()), Some(&mask)).unwrap();
            prop_assert!((ab - ba).abs() <= 1e-12 * ab.max(1.0));
            let k = rot % n;
            let (mut pa, mut pb, mut pm) = (a.clone(), b.clone(), bits.clone());
            pa.rotate_left(k);
            pb.rotate_left(k);
            pm.rotate_left(k);
            let rotated = masked_mae(&img(1, n, pa), &img(1, n, pb), Some(&BinaryMask::new(1, n, pm).unwrap())).unwrap();
            prop_assert!((rotated - ab).abs() <= 1e-9 * ab.max(1.0));
        }

        #[test]
        fn r_squared_is_affine_invariant(
            pts in proptest::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 3..50),
            a in 0.01f64..100.0, b in -100.0f64..100.0, c in 0.01f64..100.0, d in -100.0f64..100.0
        ) {
            let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
            let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
            let Ok(r) = regression_r2(&xs, &ys) else { return Ok(()); };
            let xs2: Vec<f64> = xs.iter().map(|x| a * x + b).collect();
            let ys2: Vec<f64> = ys.iter().map(|y| c * y + d).collect();
            let r2 = regression_r2(&xs2, &ys2).unwrap();
            prop_assert!((r.r_squared - r2.r_squared).abs() < 1e-9);
            prop_assert!(r.r_squared <= 1.0 && r.r_squared >= 0.0);
        }
    }
}
