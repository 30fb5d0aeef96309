//! Acceptance checks. Prints one PASS/FAIL line per criterion; exits non-zero on any failure.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::Instant;

use fatfrac::estimators::NllsSolver;
use fatfrac::pipeline::{simulate_subject_with_shift, MANIFEST_FILE};
use fatfrac::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

const NLLS_VOXELS: usize = 10_000;
const NLLS_PDFF_TOL: f64 = 0.1;
const NLLS_R2STAR_TOL: f64 = 0.5;
const NLLS_PASS_FRACTION: f64 = 0.999;
const NLLS_TIME_LIMIT_S: f64 = 60.0;

const DIXON_DRAWS: usize = 1_000_000;
const DIXON_MAX_ULP: f64 = 4.0;

const CONFOUND_FRACTION: f64 = 0.95;

const BASELINE_SUBJECTS: usize = 200;
const BASELINE_R2_GAP: f64 = 0.3;

const JACOBIAN_POINTS: usize = 100;
const JACOBIAN_REL_TOL: f64 = 1e-5;

const REGISTRATION_PHANTOMS: usize = 50;
const REGISTRATION_TOL_VOX: f64 = 0.5;

const METRIC_CASES: usize = 100;
const METRIC_REL_TOL: f64 = 1e-12;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn six_echoes() -> EchoSchedule {
    EchoSchedule::uniform(0.0012, 0.002, 6).unwrap()
}

fn nlls_round_trip() -> Outcome {
    let spec = FatSpectrum::liver(1.5).unwrap();
    let sched = six_echoes();
    let solver = NllsSolver::new(&sched, &spec, &NllsConfig::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let cases: Vec<TissueParams> = (0..NLLS_VOXELS)
        .map(|_| {
            let pdff = rng.random_range(0.0..=60.0);
            let r2 = rng.random_range(0.0..=400.0);
            let density = rng.random_range(0.2..=1.0);
            TissueParams::new(density * (1.0 - pdff / 100.0), density * pdff / 100.0, r2).unwrap()
        })
        .collect();
    let start = Instant::now();
    let mut ok = 0usize;
    let (mut worst_pdff, mut worst_r2) = (0.0f64, 0.0f64);
    for p in &cases {
        let fit = solver.fit(&simulate_multi_echo(p, &spec, &sched)).unwrap();
        let (e_ff, e_r2) = ((fit.pdff - p.pdff()).abs(), (fit.r2star - p.r2star).abs());
        worst_pdff = worst_pdff.max(e_ff);
        worst_r2 = worst_r2.max(e_r2);
        if e_ff <= NLLS_PDFF_TOL && e_r2 <= NLLS_R2STAR_TOL {
            ok += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let frac = ok as f64 / NLLS_VOXELS as f64;
    outcome(
        frac >= NLLS_PASS_FRACTION && secs < NLLS_TIME_LIMIT_S,
        format!("{:.4} within tolerance, worst |dPDFF| {worst_pdff:.2e} pp, worst |dR2*| {worst_r2:.2e} 1/s, {secs:.2} s", frac),
    )
}

/// Error in units of the spacing of doubles at the magnitude of the signals.
fn ulps_at_scale(err: f64, scale: f64) -> f64 {
    let scale = scale.max(f64::MIN_POSITIVE);
    err / (f64::from_bits(scale.to_bits() + 1) - scale)
}

fn dixon_inversion() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut worst = 0.0f64;
    for _ in 0..DIXON_DRAWS {
        let (w, f): (f64, f64) = (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
        let p = TissueParams::new(w, f, 0.0).unwrap();
        let (s1, s2) = simulate_simple_dixon(&p);
        let (w2, f2) = dixon_decompose(s1, s2);
        let scale = w.max(f);
        worst = worst.max(ulps_at_scale((w2 - w).abs(), scale)).max(ulps_at_scale((f2 - f).abs(), scale));
    }
    outcome(worst <= DIXON_MAX_ULP, format!("worst error {worst} ulp over {DIXON_DRAWS} draws"))
}

fn confounding_direction() -> Outcome {
    let cfg = PipelineConfig::default();
    let spec = cfg.spectrum().unwrap();
    let (mut below, mut total) = (0usize, 0usize);
    for seed in 0..4 {
        let ph = generate_phantom(&PhantomConfig {
            rng_seed: seed,
            pdff_range: [5.0, 45.0],
            r2star_range: [50.0, 300.0],
            noise_sigma: 0.0,
            ..Default::default()
        })
        .unwrap();
        let acq = render_acquisitions(&ph, &spec, &cfg.dixon_schedule().unwrap(), &cfg.ideal_schedule().unwrap(), 0.0, seed)
            .unwrap();
        let dixon = fit_map(&acq.dixon, &FitMethod::Dixon).unwrap();
        let ff = dixon.plane(0);
        for v in 0..ph.geometry.len() {
            let (pdff, r2) = (ph.pdff_map[v], ph.r2star_map[v]);
            if ph.density_map[v] > 0.0 && (5.0..=45.0).contains(&pdff) && (50.0..=300.0).contains(&r2) {
                total += 1;
                if (ff[v] as f64) < pdff {
                    below += 1;
                }
            }
        }
    }
    let frac = below as f64 / total.max(1) as f64;
    outcome(total > 0 && frac >= CONFOUND_FRACTION, format!("{below}/{total} voxels underestimated ({frac:.4})"))
}

fn fatfrac_cmd() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fatfrac"))
}

fn run_ok(cmd: &mut Command) -> Result<(), String> {
    let out = cmd.output().map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{:?} failed: {}", cmd, String::from_utf8_lossy(&out.stderr)))
    }
}

fn baseline_failure() -> Outcome {
    let result = (|| -> Result<Outcome, String> {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let cohort = dir.path().join("cohort");
        let preds = dir.path().join("preds");
        let n = BASELINE_SUBJECTS.to_string();
        run_ok(fatfrac_cmd().args(["phantom", "--seed", "2024", "-n", &n, "--no-filter", "--out"]).arg(&cohort))?;
        let manifest = cohort.join(MANIFEST_FILE);
        for method in ["baseline_r2s", "nlls"] {
            run_ok(fatfrac_cmd().args(["fit", "--method", method, "--manifest"]).arg(&manifest).arg("--out").arg(&preds))?;
        }
        let eval_dir = dir.path().join("eval");
        run_ok(
            fatfrac_cmd()
                .args(["eval", "--methods", "baseline_r2s,nlls", "--truth", "phantom", "--split", "all", "--manifest"])
                .arg(&manifest)
                .arg("--pred")
                .arg(&preds)
                .arg("--out")
                .arg(&eval_dir),
        )?;
        let report: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(eval_dir.join("report.json")).map_err(|e| e.to_string())?)
                .map_err(|e| e.to_string())?;
        let r2 = |method: &str| -> Option<f64> {
            report["methods"].as_array()?.iter().find(|m| m["method"] == method)?["quantities"]
                .as_array()?
                .iter()
                .find(|q| q["quantity"] == "r2star")?["regression"]["r_squared"]
                .as_f64()
        };
        let (base, nlls) = (r2("baseline_r2s").ok_or("no baseline R^2")?, r2("nlls").ok_or("no NLLS R^2")?);
        let samples = report["n_samples"].as_u64().unwrap_or(0);

        let mut negative = 0usize;
        for entry in fs::read_dir(&preds).map_err(|e| e.to_string())? {
            let p = entry.map_err(|e| e.to_string())?.path();
            let name = p.file_name().unwrap().to_string_lossy().into_owned();
            if name.ends_with("_baseline_r2s_r2star.json") {
                let img = read_raster(&p).map_err(|e| e.to_string())?;
                negative += img.data.iter().filter(|&&v| v < 0.0).count();
            }
        }
        Ok(outcome(
            samples as usize == BASELINE_SUBJECTS && nlls - base >= BASELINE_R2_GAP && negative > 0,
            format!("{samples} subjects: R^2 baseline {base:.3} vs NLLS {nlls:.3}; {negative} negative baseline voxels"),
        ))
    })();
    result.unwrap_or_else(|e| outcome(false, e))
}

fn jacobian_check() -> Outcome {
    let spec = FatSpectrum::liver(1.5).unwrap();
    let sched = six_echoes();
    let solver = NllsSolver::new(&sched, &spec, &NllsConfig::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut worst = 0.0f64;
    for _ in 0..JACOBIAN_POINTS {
        let truth = TissueParams::new(rng.random_range(0.0..1.0), rng.random_range(0.0..1.0), rng.random_range(0.0..400.0))
            .unwrap();
        let y = simulate_multi_echo(&truth, &spec, &sched);
        let theta = [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0), rng.random_range(0.0..500.0)];
        let analytic = solver.jacobian(theta);
        let (mut diff, mut norm) = (0.0f64, 0.0f64);
        for i in 0..3 {
            let h = 1e-5 * theta[i].abs().max(1.0);
            let (mut up, mut down) = (theta, theta);
            up[i] += h;
            down[i] -= h;
            let (ru, rd) = (solver.residuals(&y, up), solver.residuals(&y, down));
            for (row, (a, b)) in analytic.iter().zip(ru.iter().zip(&rd)) {
                let fd = (a - b) / (2.0 * h);
                diff += (row[i] - fd).powi(2);
                norm += row[i].powi(2);
            }
        }
        worst = worst.max((diff / norm).sqrt());
    }
    outcome(worst < JACOBIAN_REL_TOL, format!("worst relative error {worst:.2e} over {JACOBIAN_POINTS} points"))
}

fn registration() -> Outcome {
    let cfg = PipelineConfig { seed: 77, ..Default::default() };
    // Half-voxel steps over [-4, 4]; every other value is an integer.
    let step = |k: usize| (k % 17) as f64 * 0.5 - 4.0;
    let mut worst = 0.0f64;
    let mut bad = Vec::new();
    let mut scores = Vec::new();
    for i in 0..REGISTRATION_PHANTOMS {
        let injected = [step(3 * i), step(7 * i + 5)];
        let art = simulate_subject_with_shift(&cfg, i, injected).unwrap();
        let err = (0..2).map(|a| (art.registered_shift[a] + injected[a]).abs()).fold(0.0, f64::max);
        if err > REGISTRATION_TOL_VOX {
            bad.push(format!("{}: {injected:?} -> {:?}", art.subject_id, art.registered_shift));
        }
        worst = worst.max(err);
        scores.push(art.mi_score);
    }

    let gate = (|| -> Result<(usize, usize), String> {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let gate_cfg = PipelineConfig { seed: 78, n_subjects: REGISTRATION_PHANTOMS, ..Default::default() };
        let built = build_cohort(&gate_cfg, dir.path()).map_err(|e| e.to_string())?;
        let kept = mi_quality_filter(&built, 0.10).map_err(|e| e.to_string())?;
        Ok((built.samples.len() - kept.samples.len(), kept.mi_filter.map_or(0, |f| f.removed.len())))
    })();
    let expected = REGISTRATION_PHANTOMS / 10;
    let (gate_ok, gate_msg) = match gate {
        Ok((removed, recorded)) => (removed == expected && recorded == expected, format!("MI gate removed {removed} of {REGISTRATION_PHANTOMS}")),
        Err(e) => (false, e),
    };
    outcome(
        bad.is_empty() && gate_ok,
        format!("worst per-axis error {worst:.3} vox on {REGISTRATION_PHANTOMS} phantoms{}; {gate_msg}",
            if bad.is_empty() { String::new() } else { format!(" (failures: {})", bad.join(", ")) }),
    )
}

fn tree_digest(dir: &Path) -> BTreeMap<PathBuf, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let digest = Sha256::digest(fs::read(&p).unwrap());
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), hex::encode(digest));
            }
        }
    }
    out
}

fn pipeline_determinism() -> Outcome {
    let result = (|| -> Result<Outcome, String> {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let (a, b) = (dir.path().join("a"), dir.path().join("b"));
        for (out, jobs) in [(&a, "1"), (&b, "2")] {
            run_ok(fatfrac_cmd().args(["--jobs", jobs, "pipeline", "--seed", "5", "-n", "12", "--out"]).arg(out))?;
        }
        let (da, db) = (tree_digest(&a.join("cohort")), tree_digest(&b.join("cohort")));
        let (fa, fb) = (tree_digest(&a), tree_digest(&b));
        let rasters = da.keys().filter(|p| p.extension().is_some_and(|e| e == "raw")).count();
        Ok(outcome(
            da == db && fa == fb && rasters > 0,
            format!("{} files ({} cohort rasters) identical across runs", fa.len(), rasters),
        ))
    })();
    result.unwrap_or_else(|e| outcome(false, e))
}

fn rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

fn metrics_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut worst = 0.0f64;
    for _ in 0..METRIC_CASES {
        let (rows, cols) = (rng.random_range(2..8), rng.random_range(2..8));
        let geom = SliceGeometry::new(rows, cols, [1.0, 1.0], 1.0);
        let n = rows * cols;
        let truth: Vec<f32> = (0..n)
            .map(|_| if rng.random_bool(0.2) { 0.0 } else { rng.random_range(-50.0..100.0) })
            .collect();
        let pred: Vec<f32> = (0..n).map(|_| rng.random_range(-50.0..100.0)).collect();
        let bits: Vec<bool> = (0..n).map(|_| rng.random_bool(0.7)).collect();
        let selected: Vec<usize> = (0..n).filter(|&v| bits[v] && truth[v] != 0.0).collect();
        if !selected.is_empty() {
            let naive = selected.iter().map(|&v| (pred[v] as f64 - truth[v] as f64).abs()).sum::<f64>() / selected.len() as f64;
            let t = RasterImage::new(geom, vec!["q".into()], truth.clone()).unwrap();
            let p = RasterImage::new(geom, vec!["q".into()], pred.clone()).unwrap();
            let mask = BinaryMask::new(rows, cols, bits).unwrap();
            worst = worst.max(rel_err(masked_mae(&p, &t, Some(&mask)).unwrap(), naive));
        }

        let m = rng.random_range(3..30);
        let slope = rng.random_range(0.5..2.0);
        let xs: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..60.0)).collect();
        let ys: Vec<f64> = xs.iter().map(|x| slope * x + 3.0 + rng.random_range(-10.0..10.0)).collect();
        let (naive_slope, naive_intercept, naive_r2) = naive_regression(&xs, &ys);
        let r = regression_r2(&xs, &ys).unwrap();
        worst = worst
            .max(rel_err(r.slope, naive_slope))
            .max(rel_err(r.intercept, naive_intercept))
            .max(rel_err(r.r_squared, naive_r2));
    }
    outcome(worst <= METRIC_REL_TOL, format!("worst relative difference {worst:.2e} over {METRIC_CASES} cases"))
}

/// Least squares through the normal equations, R^2 = 1 - SSres/SStot.
fn naive_regression(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let (sx, sy) = (xs.iter().sum::<f64>(), ys.iter().sum::<f64>());
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| x * y).sum();
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    let intercept = (sy - slope * sx) / n;
    let mean_y = sy / n;
    let ss_res: f64 = xs.iter().zip(ys).map(|(x, y)| (y - slope * x - intercept).powi(2)).sum();
    let ss_tot: f64 = ys.iter().map(|y| (y - mean_y).powi(2)).sum();
    (slope, intercept, 1.0 - ss_res / ss_tot)
}

fn main() -> ExitCode {
    let checks: [(&str, fn() -> Outcome); 8] = [
        ("nlls_round_trip", nlls_round_trip),
        ("dixon_exact_inversion", dixon_inversion),
        ("dixon_confounding_direction", confounding_direction),
        ("baseline_r2star_failure", baseline_failure),
        ("jacobian_vs_finite_differences", jacobian_check),
        ("registration_and_mi_gate", registration),
        ("pipeline_determinism", pipeline_determinism),
        ("metrics_oracle", metrics_oracle),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        let start = Instant::now();
        let o = check();
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!("{tag} {name}: {} [{:.1} s]", o.detail, start.elapsed().as_secs_f64());
        failed += usize::from(!o.pass);
    }
    println!("acceptance: {} passed, {failed} failed", 8 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
