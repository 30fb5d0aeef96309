//! Python bindings for the `fatfrac` core.
//!
//! Rasters cross the boundary as a `Raster` class with flat row-major lists;
//! manifests and split indices come back as plain dicts.

use std::path::{Path, PathBuf};

use fatfrac::pipeline::{self, MANIFEST_FILE};
use fatfrac::raster::SliceGeometry;
use fatfrac::{ComplexSignal, EchoSchedule, FatSpectrum, NllsConfig, PipelineConfig, RasterImage, TissueParams};
use pyo3::exceptions::{PyIOError, PyKeyError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyModule};

fn to_py(e: fatfrac::Error) -> PyErr {
    match e {
        fatfrac::Error::Io { .. } => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn json_to_py<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    PyModule::import(py, "json")?.call_method1("loads", (text,))
}

/// Single-slice float32 raster with named channels.
#[pyclass(name = "Raster", module = "fatfrac", from_py_object)]
#[derive(Clone)]
struct PyRaster {
    inner: RasterImage,
}

#[pymethods]
impl PyRaster {
    /// Builds a raster from `{name: flat row-major values}`; channel order follows the dict.
    #[new]
    #[pyo3(signature = (rows, cols, channels, spacing_mm = (1.7, 1.7), slice_thickness_mm = 10.0))]
    fn new(
        rows: usize,
        cols: usize,
        channels: Vec<(String, Vec<f64>)>,
        spacing_mm: (f64, f64),
        slice_thickness_mm: f64,
    ) -> PyResult<Self> {
        let geom = SliceGeometry::new(rows, cols, [spacing_mm.0, spacing_mm.1], slice_thickness_mm);
        let planes = channels.iter().map(|(n, v)| (n.as_str(), v.clone())).collect();
        Ok(PyRaster { inner: RasterImage::from_planes(geom, planes).map_err(to_py)? })
    }

    #[getter]
    fn rows(&self) -> usize {
        self.inner.rows()
    }

    #[getter]
    fn cols(&self) -> usize {
        self.inner.cols()
    }

    #[getter]
    fn spacing_mm(&self) -> (f64, f64) {
        let [y, x] = self.inner.geometry.spacing_mm;
        (y, x)
    }

    #[getter]
    fn slice_thickness_mm(&self) -> f64 {
        self.inner.geometry.slice_thickness_mm
    }

    #[getter]
    fn channel_names(&self) -> Vec<String> {
        self.inner.channel_names.clone()
    }

    /// Values of one channel (by name or index), row-major.
    fn channel(&self, key: &Bound<'_, PyAny>) -> PyResult<Vec<f64>> {
        let idx = if let Ok(i) = key.extract::<usize>() {
            i
        } else {
            let name: String = key.extract()?;
            self.inner.channel_index(&name).ok_or_else(|| PyKeyError::new_err(name))?
        };
        if idx >= self.inner.channels() {
            return Err(PyKeyError::new_err(format!("channel {idx} out of range")));
        }
        Ok(self.inner.plane_f64(idx))
    }

    /// Writes `<path>.json` and `<path>.raw`.
    fn write(&self, path: PathBuf) -> PyResult<()> {
        fatfrac::write_raster(&path, &self.inner).map_err(to_py)?;
        Ok(())
    }

    fn __repr__(&self) -> String {
        format!("Raster({}x{}, channels={:?})", self.inner.rows(), self.inner.cols(), self.inner.channel_names)
    }
}

#[pyfunction]
fn read_raster(path: PathBuf) -> PyResult<PyRaster> {
    Ok(PyRaster { inner: fatfrac::read_raster(&path).map_err(to_py)? })
}

/// `(in_phase, opposed_phase)` of a relaxation-free two-point acquisition.
#[pyfunction]
fn simulate_simple_dixon(water: f64, fat: f64) -> PyResult<(f64, f64)> {
    let p = TissueParams::new(water, fat, 0.0).map_err(to_py)?;
    Ok(fatfrac::simulate_simple_dixon(&p))
}

#[pyfunction]
fn dixon_decompose(in_phase: f64, opposed_phase: f64) -> (f64, f64) {
    fatfrac::dixon_decompose(in_phase, opposed_phase)
}

/// Fat fraction in percent.
#[pyfunction]
fn dixon_fat_fraction(water: f64, fat: f64) -> f64 {
    fatfrac::dixon_fat_fraction(water, fat).pdff
}

#[pyfunction]
fn baseline_r2star_fit(mag1: f64, mag2: f64, t1: f64, t2: f64) -> PyResult<f64> {
    fatfrac::baseline_r2star_fit(mag1, mag2, t1, t2).map_err(to_py)
}

fn spectrum_and_schedule(echo_times: Vec<f64>, field_strength_t: f64) -> PyResult<(FatSpectrum, EchoSchedule)> {
    Ok((
        FatSpectrum::liver(field_strength_t).map_err(to_py)?,
        EchoSchedule::new(echo_times).map_err(to_py)?,
    ))
}

/// Complex multi-peak signal at each echo time (seconds).
#[pyfunction]
#[pyo3(signature = (water, fat, r2star, echo_times, field_strength_t = 1.5))]
fn simulate_multi_echo(
    water: f64,
    fat: f64,
    r2star: f64,
    echo_times: Vec<f64>,
    field_strength_t: f64,
) -> PyResult<Vec<ComplexSignal>> {
    let (spec, sched) = spectrum_and_schedule(echo_times, field_strength_t)?;
    let p = TissueParams::new(water, fat, r2star).map_err(to_py)?;
    Ok(fatfrac::simulate_multi_echo(&p, &spec, &sched))
}

/// Regularized multi-peak fit of one voxel; returns a dict of the estimates.
#[pyfunction]
#[pyo3(signature = (echoes, echo_times, field_strength_t = 1.5))]
fn nlls_fit_voxel<'py>(
    py: Python<'py>,
    echoes: Vec<ComplexSignal>,
    echo_times: Vec<f64>,
    field_strength_t: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let (spec, sched) = spectrum_and_schedule(echo_times, field_strength_t)?;
    let fit = fatfrac::nlls_fit_voxel(&echoes, &sched, &spec, &NllsConfig::default()).map_err(to_py)?;
    json_to_py(py, &fit)
}

/// MAE over voxels with non-zero truth, optionally inside a mask raster (channel 0).
#[pyfunction]
#[pyo3(signature = (pred, truth, mask = None))]
fn masked_mae(pred: &PyRaster, truth: &PyRaster, mask: Option<&PyRaster>) -> PyResult<f64> {
    let mask = mask.map(|m| fatfrac::BinaryMask::from_raster(&m.inner, 0));
    fatfrac::masked_mae(&pred.inner, &truth.inner, mask.as_ref()).map_err(to_py)
}

/// Least-squares line `ys ~ xs`: `(slope, intercept, r_squared)`.
#[pyfunction]
fn regression_r2(xs: Vec<f64>, ys: Vec<f64>) -> PyResult<(f64, f64, f64)> {
    let r = fatfrac::regression_r2(&xs, &ys).map_err(to_py)?;
    Ok((r.slope, r.intercept, r.r_squared))
}

#[pyfunction]
#[pyo3(signature = (a, b, bins = 64))]
fn mutual_information(a: &PyRaster, b: &PyRaster, bins: usize) -> PyResult<f64> {
    fatfrac::mutual_information(&a.inner, &b.inner, bins).map_err(to_py)
}

/// `(dy, dx, mi)` such that translating `moving` by `(dy, dx)` aligns it with `fixed`.
#[pyfunction]
#[pyo3(signature = (moving, fixed, search_radius = 8))]
fn register_translation(py: Python<'_>, moving: &PyRaster, fixed: &PyRaster, search_radius: usize) -> PyResult<(f64, f64, f64)> {
    let (m, f) = (moving.inner.clone(), fixed.inner.clone());
    let r = py.detach(|| fatfrac::register_translation(&m, &f, search_radius)).map_err(to_py)?;
    Ok((r.dy, r.dx, r.mi))
}

/// Simulates a cohort into `out_dir`, MI-gates it (unless `mi_filter` is false)
/// and splits it; returns the manifest.
#[pyfunction]
#[pyo3(signature = (out_dir, n_subjects, seed = 0, noise_sigma = None, mi_filter = true))]
fn build_cohort<'py>(
    py: Python<'py>,
    out_dir: PathBuf,
    n_subjects: usize,
    seed: u64,
    noise_sigma: Option<f64>,
    mi_filter: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let mut cfg = PipelineConfig { seed, n_subjects, ..Default::default() };
    if let Some(s) = noise_sigma {
        cfg.phantom.noise_sigma = s;
    }
    let manifest = py
        .detach(|| -> fatfrac::Result<_> {
            let mut m = fatfrac::build_cohort(&cfg, &out_dir)?;
            if mi_filter {
                m = fatfrac::mi_quality_filter(&m, cfg.mi_filter_quantile)?;
            }
            if m.samples.len() >= 3 {
                m = fatfrac::split_dataset(&m, cfg.split_fractions, cfg.seed)?;
            }
            pipeline::write_manifest(&out_dir.join(MANIFEST_FILE), &m)?;
            Ok(m)
        })
        .map_err(to_py)?;
    json_to_py(py, &manifest)
}

#[pyfunction]
fn load_manifest(py: Python<'_>, path: PathBuf) -> PyResult<Bound<'_, PyAny>> {
    json_to_py(py, &pipeline::load_manifest(&path).map_err(to_py)?)
}

fn manifest_root(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

/// Writes train/val/test directories and the split index; returns the index.
#[pyfunction]
#[pyo3(signature = (manifest_path, out_dir, allow_unfiltered = false))]
fn export_ml(py: Python<'_>, manifest_path: PathBuf, out_dir: PathBuf, allow_unfiltered: bool) -> PyResult<Bound<'_, PyAny>> {
    let manifest = pipeline::load_manifest(&manifest_path).map_err(to_py)?;
    let index = fatfrac::export_ml(&manifest, &manifest_root(&manifest_path), &out_dir, allow_unfiltered).map_err(to_py)?;
    json_to_py(py, &index)
}

#[pyfunction]
fn load_split_index(py: Python<'_>, path: PathBuf) -> PyResult<Bound<'_, PyAny>> {
    json_to_py(py, &pipeline::load_split_index(&path).map_err(to_py)?)
}

/// `{"input", "target", "liver_mask", "mi_score"}` for one manifest sample.
#[pyfunction]
fn load_sample<'py>(py: Python<'py>, manifest_path: PathBuf, subject_id: &str) -> PyResult<Bound<'py, PyDict>> {
    let manifest = pipeline::load_manifest(&manifest_path).map_err(to_py)?;
    let s = pipeline::load_sample(&manifest, &manifest_root(&manifest_path), subject_id).map_err(to_py)?;
    let geom = s.input.geometry;
    let out = PyDict::new(py);
    out.set_item("input", PyRaster { inner: s.input })?;
    out.set_item("target", PyRaster { inner: s.target })?;
    out.set_item("liver_mask", PyRaster { inner: s.liver_mask.to_raster(geom, "liver").map_err(to_py)? })?;
    out.set_item("mi_score", s.mi_score)?;
    Ok(out)
}

#[pymodule]
#[pyo3(name = "fatfrac")]
fn fatfrac_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyRaster>()?;
    m.add_function(wrap_pyfunction!(read_raster, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_simple_dixon, m)?)?;
    m.add_function(wrap_pyfunction!(dixon_decompose, m)?)?;
    m.add_function(wrap_pyfunction!(dixon_fat_fraction, m)?)?;
    m.add_function(wrap_pyfunction!(baseline_r2star_fit, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_multi_echo, m)?)?;
    m.add_function(wrap_pyfunction!(nlls_fit_voxel, m)?)?;
    m.add_function(wrap_pyfunction!(masked_mae, m)?)?;
    m.add_function(wrap_pyfunction!(regression_r2, m)?)?;
    m.add_function(wrap_pyfunction!(mutual_information, m)?)?;
    m.add_function(wrap_pyfunction!(register_translation, m)?)?;
    m.add_function(wrap_pyfunction!(build_cohort, m)?)?;
    m.add_function(wrap_pyfunction!(load_manifest, m)?)?;
    m.add_function(wrap_pyfunction!(export_ml, m)?)?;
    m.add_function(wrap_pyfunction!(load_split_index, m)?)?;
    m.add_function(wrap_pyfunction!(load_sample, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
