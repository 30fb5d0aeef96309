use std::path::{Path, PathBuf};

use fatfrac::eval::{build_report, write_report, write_scatter_png, PredictionSource, TruthSource, TARGET_METHOD};
use fatfrac::pipeline::{
    build_cohort, export_ml as export_dataset, load_manifest, mi_quality_filter, split_dataset, write_manifest,
    DatasetManifest, SampleRecord, MANIFEST_FILE,
};
use fatfrac::raster::{export_png, read_raster, write_raster, BinaryMask};
use fatfrac::estimators::fit_map_masked;
use fatfrac::FitMethod;
use rayon::prelude::*;

use crate::config::{resolve_out, RunConfig, RunRecord};
use crate::{CliError, ConfigArgs, EvalArgs, ExportArgs, FitArgs, MethodArg, PhantomArgs, PipelineArgs, SplitArg, TruthArg};

const PDFF_WINDOW: (f64, f64) = (0.0, 50.0);
const R2STAR_WINDOW: (f64, f64) = (0.0, 500.0);

fn manifest_root(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn load_run_config(args: &ConfigArgs, n: Option<usize>) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        cfg.pipeline.seed = seed;
    }
    if let Some(n) = n {
        cfg.pipeline.n_subjects = n;
    }
    cfg.run = None;
    Ok(cfg)
}

/// Builds, gates and splits a cohort into `out`; returns the final manifest.
fn make_cohort(cfg: &RunConfig, out: &Path) -> Result<DatasetManifest, CliError> {
    let p = &cfg.pipeline;
    if p.n_subjects == 0 {
        return Err(CliError::Usage("number of subjects must be at least 1".into()));
    }
    p.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let built = build_cohort(p, out)?;
    let gated = if cfg.export.no_filter {
        built
    } else {
        mi_quality_filter(&built, p.mi_filter_quantile)?
    };
    let manifest = if gated.samples.len() >= 3 {
        split_dataset(&gated, p.split_fractions, p.seed)?
    } else {
        eprintln!("warning: {} sample(s) is too few to split; no split assigned", gated.samples.len());
        gated
    };
    write_manifest(&out.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

fn describe(m: &DatasetManifest) -> String {
    let [train, val, test] = m.split_counts();
    let removed = m.mi_filter.as_ref().map_or(0, |f| f.removed.len());
    format!(
        "{} samples (train {train}, val {val}, test {test}); {removed} removed by MI gate",
        m.samples.len()
    )
}

pub fn phantom(a: PhantomArgs) -> Result<(), CliError> {
    let mut cfg = load_run_config(&a.cfg, a.n)?;
    if a.no_filter {
        cfg.export.no_filter = true;
    }
    let out = resolve_out(a.out, "cohort")?;
    let manifest = make_cohort(&cfg, &out)?;
    cfg.run = Some(RunRecord {
        command: "phantom".into(),
        ..Default::default()
    });
    cfg.write(&out)?;
    println!("{}: {}", out.join(MANIFEST_FILE).display(), describe(&manifest));
    Ok(())
}

fn fit_method(manifest: &DatasetManifest, method: MethodArg) -> Result<FitMethod, CliError> {
    let cfg = &manifest.config;
    Ok(match method {
        MethodArg::Dixon => FitMethod::Dixon,
        MethodArg::BaselineR2s => {
            let (in_phase_time, opposed_time) = cfg.dixon_roles()?;
            FitMethod::BaselineR2s { in_phase_time, opposed_time }
        }
        MethodArg::Nlls => cfg.nlls_method()?,
    })
}

fn selected(manifest: &DatasetManifest, split: SplitArg) -> Vec<&SampleRecord> {
    let want = split.split();
    manifest
        .samples
        .iter()
        .filter(|s| want.is_none() || s.split == want)
        .collect()
}

/// Fits one method over the selected samples; predictions are 0 outside the body.
fn fit_samples(
    manifest: &DatasetManifest,
    root: &Path,
    method: MethodArg,
    split: SplitArg,
    out: &Path,
) -> Result<usize, CliError> {
    let fm = fit_method(manifest, method)?;
    let samples = selected(manifest, split);
    samples
        .par_iter()
        .map(|s| -> fatfrac::Result<()> {
            let source = match method {
                MethodArg::Nlls => &s.files.ideal_echoes,
                _ => &s.files.input,
            };
            let img = read_raster(&root.join(source))?;
            let body = BinaryMask::from_raster(&read_raster(&root.join(&s.files.body_mask))?, 0);
            let maps = fit_map_masked(&img, &fm, Some(&body))?;
            for (c, quantity) in maps.channel_names.iter().enumerate() {
                let name = fatfrac::eval::prediction_name(&s.subject_id, method.name(), quantity);
                write_raster(&out.join(name), &maps.channel(c))?;
            }
            Ok(())
        })
        .collect::<fatfrac::Result<Vec<()>>>()?;
    Ok(samples.len())
}

fn write_named_config(cfg: &RunConfig, dir: &Path, name: &str) -> Result<(), CliError> {
    let path = dir.join(name);
    std::fs::write(&path, cfg.to_toml()?).map_err(|e| fatfrac::Error::Io { path, source: e })?;
    Ok(())
}

pub fn fit(a: FitArgs) -> Result<(), CliError> {
    let manifest = load_manifest(&a.manifest)?;
    let root = manifest_root(&a.manifest);
    let out = resolve_out(a.out, "predictions")?;
    let n = fit_samples(&manifest, &root, a.method, a.split, &out)?;
    let cfg = RunConfig {
        run: Some(RunRecord {
            command: "fit".into(),
            manifest: Some(a.manifest.display().to_string()),
            method: Some(a.method.name().into()),
            predictions: None,
        }),
        pipeline: manifest.config.clone(),
        ..Default::default()
    };
    std::fs::create_dir_all(&out).map_err(|e| fatfrac::Error::Io { path: out.clone(), source: e })?;
    write_named_config(&cfg, &out, &format!("fit_{}.toml", a.method.name()))?;
    println!("{}: {} {n} sample(s)", out.display(), a.method.name());
    Ok(())
}

struct EvalPlan {
    methods: Vec<String>,
    truth: TruthSource,
    split: SplitArg,
    png: bool,
}

fn run_eval(manifest: &DatasetManifest, root: &Path, pred: Option<&Path>, plan: &EvalPlan, out: &Path) -> Result<String, CliError> {
    if plan.methods.is_empty() {
        return Err(CliError::Usage("no methods given".into()));
    }
    let needs_dir = plan.methods.iter().any(|m| m != TARGET_METHOD);
    let pred_dir = match pred {
        Some(p) => p.to_path_buf(),
        None if !needs_dir => PathBuf::new(),
        None => return Err(CliError::Usage("--pred is required to evaluate prediction methods".into())),
    };
    let sources: Vec<PredictionSource> =
        plan.methods.iter().map(|m| PredictionSource::new(m.as_str(), &pred_dir)).collect();
    let report = build_report(manifest, root, plan.split.split(), &sources, plan.truth)?;
    write_report(&report, out)?;
    if plan.png {
        for q in fatfrac::eval::QUANTITIES {
            if report.scatter.iter().any(|p| p.quantity == q) {
                write_scatter_png(&report, q, &out.join(format!("scatter_{q}.png")))?;
            }
        }
        if let Some(first) = selected(manifest, plan.split).first() {
            let dir = out.join("maps");
            let truth_stem = match plan.truth {
                TruthSource::Target => &first.files.target,
                TruthSource::Phantom => &first.files.truth,
            };
            let truth = read_raster(&root.join(truth_stem))?;
            export_png(&truth, 0, PDFF_WINDOW, &dir, &format!("{}_truth_pdff", first.subject_id))?;
            export_png(&truth, 1, R2STAR_WINDOW, &dir, &format!("{}_truth_r2star", first.subject_id))?;
            for src in sources.iter().filter(|s| s.method != TARGET_METHOD) {
                for (q, window) in [("pdff", PDFF_WINDOW), ("r2star", R2STAR_WINDOW)] {
                    let stem = src.stem(&first.subject_id, q);
                    if fatfrac::raster::header_path(&stem).is_file() {
                        let name = fatfrac::eval::prediction_name(&first.subject_id, &src.method, q);
                        export_png(&read_raster(&stem)?, 0, window, &dir, &name)?;
                    }
                }
            }
        }
    }
    Ok(report.to_text())
}

pub fn eval(a: EvalArgs) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(a.config.as_deref())?;
    let manifest = load_manifest(&a.manifest)?;
    let root = manifest_root(&a.manifest);
    let out = resolve_out(a.out, "eval")?;
    let split = match a.split {
        Some(s) => s,
        None => SplitArg::parse_name(&cfg.eval.split)
            .ok_or_else(|| CliError::Config(format!("unknown split {:?}", cfg.eval.split)))?,
    };
    let plan = EvalPlan {
        methods: if a.methods.is_empty() { cfg.eval.methods.clone() } else { a.methods.clone() },
        truth: match a.truth {
            Some(TruthArg::Target) => TruthSource::Target,
            Some(TruthArg::Phantom) => TruthSource::Phantom,
            None => cfg.eval.truth,
        },
        split,
        png: a.png || cfg.eval.png,
    };
    let text = run_eval(&manifest, &root, a.pred.as_deref(), &plan, &out)?;
    cfg.pipeline = manifest.config.clone();
    cfg.eval.methods = plan.methods.clone();
    cfg.eval.truth = plan.truth;
    cfg.eval.split = format!("{:?}", plan.split).to_lowercase();
    cfg.eval.png = plan.png;
    cfg.run = Some(RunRecord {
        command: "eval".into(),
        manifest: Some(a.manifest.display().to_string()),
        method: None,
        predictions: a.pred.as_ref().map(|p| p.display().to_string()),
    });
    cfg.write(&out)?;
    print!("{text}");
    Ok(())
}

fn export(manifest: &DatasetManifest, root: &Path, out: &Path, allow_unfiltered: bool) -> Result<String, CliError> {
    if manifest.mi_filter.is_none() && !allow_unfiltered {
        return Err(CliError::Usage(
            "manifest has not been MI-filtered; pass --allow-unfiltered to export it anyway".into(),
        ));
    }
    let index = export_dataset(manifest, root, out, allow_unfiltered)?;
    let count = |s| index.splits.get(&s).map_or(0, Vec::len);
    Ok(format!(
        "{} samples (train {}, val {}, test {})",
        index.samples.len(),
        count(fatfrac::Split::Train),
        count(fatfrac::Split::Val),
        count(fatfrac::Split::Test)
    ))
}

pub fn export_ml(a: ExportArgs) -> Result<(), CliError> {
    let manifest = load_manifest(&a.manifest)?;
    let root = manifest_root(&a.manifest);
    let out = resolve_out(a.out, "ml")?;
    let summary = export(&manifest, &root, &out, a.allow_unfiltered)?;
    let cfg = RunConfig {
        run: Some(RunRecord {
            command: "export-ml".into(),
            manifest: Some(a.manifest.display().to_string()),
            ..Default::default()
        }),
        pipeline: manifest.config.clone(),
        export: crate::config::ExportSettings {
            allow_unfiltered: a.allow_unfiltered,
            no_filter: manifest.mi_filter.is_none(),
        },
        ..Default::default()
    };
    cfg.write(&out)?;
    println!("{}: {summary}", out.display());
    Ok(())
}

pub fn pipeline(a: PipelineArgs) -> Result<(), CliError> {
    let mut cfg = load_run_config(&a.cfg, a.n)?;
    let split = SplitArg::parse_name(&cfg.eval.split)
        .ok_or_else(|| CliError::Config(format!("unknown split {:?}", cfg.eval.split)))?;
    let root = resolve_out(a.out, "pipeline")?;
    let cohort = root.join("cohort");
    let preds = root.join("predictions");

    let manifest = make_cohort(&cfg, &cohort)?;
    println!("cohort: {}", describe(&manifest));
    for method in [MethodArg::Dixon, MethodArg::BaselineR2s, MethodArg::Nlls] {
        let n = fit_samples(&manifest, &cohort, method, SplitArg::All, &preds)?;
        println!("fit: {} on {n} sample(s)", method.name());
    }
    if selected(&manifest, split).is_empty() {
        eprintln!("warning: split {:?} is empty; skipping evaluation", cfg.eval.split);
    } else {
        let plan = EvalPlan {
            methods: cfg.eval.methods.clone(),
            truth: cfg.eval.truth,
            split,
            png: cfg.eval.png,
        };
        print!("{}", run_eval(&manifest, &cohort, Some(&preds), &plan, &root.join("eval"))?);
    }
    if manifest.samples.iter().all(|s| s.split.is_some()) {
        let summary = export(&manifest, &cohort, &root.join("ml"), cfg.export.allow_unfiltered)?;
        println!("export: {summary}");
    } else {
        eprintln!("warning: samples are not split; skipping export");
    }
    cfg.run = Some(RunRecord {
        command: "pipeline".into(),
        ..Default::default()
    });
    cfg.write(&root)?;
    Ok(())
}
