//! Subcommand implementations. Each returns the process exit code:
//! 0 success, 1 error (via `Err`), 2 case excluded.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use rayon::prelude::*;
use serde::Serialize;

use tavr_core::enrich::{
    enrich_volume, extract_annulus, fit_annulus_plane, sweep_cross_sections, CrossSectionCurve,
    EnrichConfig,
};
use tavr_core::losses::{combined_loss, softmax, LossReport, Objective};
use tavr_core::metrics::{aggregate, argmax_labels, dice_iou, render_table, MetricsReport};
use tavr_core::optim::{fit_probability_field, FitConfig};
use tavr_core::phantom::{generate, PhantomKind, PhantomSpec};
use tavr_core::skeleton::skeletons_for_volume;
use tavr_core::voxel::{class_mask, ClassId, ClassMap, LabelVolume, VoxelGrid3};

use crate::config::RunConfig;
use crate::manifest::DatasetManifest;
use crate::nifti_io::{read_labels, read_logits, write_labels, write_logits, write_text};

pub const EXIT_OK: i32 = 0;
pub const EXIT_EXCLUDED: i32 = 2;

fn load_config(path: Option<&PathBuf>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn load_volume(path: &Path, cfg: &RunConfig) -> Result<LabelVolume> {
    read_labels(path, &ClassMap::canonical_tavr(), &cfg.label_map)
}

#[derive(Serialize)]
struct EnrichReport<'a> {
    status: String,
    max_distance: Option<f64>,
    min_distance: Option<f64>,
    voxel_counts: HashMap<&'a str, usize>,
    config: &'a EnrichConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    reason: Option<String>,
}

pub fn enrich(
    input: &Path,
    out: &Path,
    config: Option<&PathBuf>,
    report: Option<&PathBuf>,
) -> Result<i32> {
    let cfg = load_config(config)?;
    let vol = load_volume(input, &cfg)?;
    match enrich_volume(&vol, &cfg.enrich) {
        Ok((enriched, root)) => {
            write_labels(out, &enriched)?;
            if let Some(report_path) = report {
                let map = enriched.class_map().clone();
                let counts: HashMap<&str, usize> = map
                    .foreground_ids()
                    .map(|c| (map.name(c).unwrap(), enriched.count(c)))
                    .collect();
                let r = EnrichReport {
                    status: root.status.to_string(),
                    max_distance: root.max_distance,
                    min_distance: root.min_distance,
                    voxel_counts: counts,
                    config: &cfg.enrich,
                    reason: None,
                };
                write_text(report_path, &serde_json::to_string_pretty(&r)?)?;
            }
            Ok(EXIT_OK)
        }
        Err(tavr_core::Error::CaseExcluded(reason)) => {
            if let Some(report_path) = report {
                let r = EnrichReport {
                    status: "excluded".into(),
                    max_distance: None,
                    min_distance: None,
                    voxel_counts: HashMap::new(),
                    config: &cfg.enrich,
                    reason: Some(reason.clone()),
                };
                write_text(report_path, &serde_json::to_string_pretty(&r)?)?;
            }
            eprintln!("{}: excluded: {reason}", input.display());
            Ok(EXIT_EXCLUDED)
        }
        Err(e) => Err(e.into()),
    }
}

fn curve_csv(curve: &CrossSectionCurve) -> String {
    let mut out = String::from("distance,raw_count,smoothed\n");
    for i in 0..curve.len() {
        let _ = writeln!(
            out,
            "{},{},{}",
            curve.distances[i], curve.raw_counts[i], curve.smoothed[i]
        );
    }
    out
}

/// Compute the cross-section curve of one case, or `None` when the case has
/// no aorta (all-zero rows).
fn case_curve(vol: &LabelVolume, cfg: &EnrichConfig) -> Result<Option<CrossSectionCurve>> {
    let aorta = class_mask(vol, ClassId(1))?;
    if aorta.count() == 0 {
        return Ok(None);
    }
    let ventricle = class_mask(vol, ClassId(2))?;
    if ventricle.count() == 0 {
        return Err(tavr_core::Error::CaseExcluded("no left ventricle labels".into()).into());
    }
    let annulus = extract_annulus(&aorta, &ventricle, cfg)?;
    let plane = fit_annulus_plane(&annulus, &aorta)?;
    Ok(Some(sweep_cross_sections(&aorta, &plane, cfg)?))
}

fn zero_curve(cfg: &EnrichConfig) -> CrossSectionCurve {
    let n = (cfg.sweep_max_distance / cfg.sweep_step).floor() as usize + 1;
    let distances = (0..n).map(|k| k as f64 * cfg.sweep_step).collect();
    CrossSectionCurve::from_raw(distances, vec![0; n], cfg.smoothing_window)
}

pub fn root_curve(
    input: Option<&PathBuf>,
    out: &Path,
    aggregate_mode: bool,
    manifest: Option<&PathBuf>,
    config: Option<&PathBuf>,
) -> Result<i32> {
    let cfg = load_config(config)?;
    if aggregate_mode {
        let manifest_path =
            manifest.context("--aggregate requires --manifest <json>")?;
        let m = DatasetManifest::load(manifest_path, false)?;
        let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
        let curves: Vec<CrossSectionCurve> = m
            .cases
            .par_iter()
            .map(|case| -> Result<CrossSectionCurve> {
                let vol = load_volume(&m.resolve(base, case), &cfg)?;
                Ok(case_curve(&vol, &cfg.enrich)?.unwrap_or_else(|| zero_curve(&cfg.enrich)))
            })
            .collect::<Result<_>>()?;
        let mut summed = vec![0u64; zero_curve(&cfg.enrich).len()];
        for c in &curves {
            for (acc, &raw) in summed.iter_mut().zip(&c.raw_counts) {
                *acc += raw;
            }
        }
        let distances = zero_curve(&cfg.enrich).distances;
        let total = CrossSectionCurve::from_raw(distances, summed, cfg.enrich.smoothing_window);
        write_text(out, &curve_csv(&total))?;
        return Ok(EXIT_OK);
    }
    let input = input.context("--in <labels> is required without --aggregate")?;
    let vol = load_volume(input, &cfg)?;
    match case_curve(&vol, &cfg.enrich) {
        Ok(Some(curve)) => {
            write_text(out, &curve_csv(&curve))?;
            Ok(EXIT_OK)
        }
        Ok(None) => {
            write_text(out, &curve_csv(&zero_curve(&cfg.enrich)))?;
            Ok(EXIT_OK)
        }
        Err(e) => match e.downcast_ref::<tavr_core::Error>() {
            Some(tavr_core::Error::CaseExcluded(reason)) => {
                eprintln!("{}: excluded: {reason}", input.display());
                Ok(EXIT_EXCLUDED)
            }
            _ => Err(e),
        },
    }
}

pub fn skeletonize(
    input: &Path,
    out: &Path,
    tube_radius: f64,
    config: Option<&PathBuf>,
) -> Result<i32> {
    let cfg = load_config(config)?;
    let vol = load_volume(input, &cfg)?;
    let skel = skeletons_for_volume(&vol, tube_radius);
    let mut out_vol = LabelVolume::background(vol.grid().clone(), vol.class_map().clone());
    for (c, mask) in skel.classes() {
        out_vol.paint(mask, *c)?;
    }
    write_labels(out, &out_vol)?;
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct BatchMetrics {
    cases: Vec<MetricsReport>,
    aggregate: MetricsReport,
}

pub fn metrics(
    pred: Option<&PathBuf>,
    truth: Option<&PathBuf>,
    out: Option<&PathBuf>,
    manifest: Option<&PathBuf>,
    pred_dir: Option<&PathBuf>,
    table: bool,
    config: Option<&PathBuf>,
) -> Result<i32> {
    let cfg = load_config(config)?;
    if let Some(manifest_path) = manifest {
        let pred_dir = pred_dir.context("--manifest mode requires --pred-dir")?;
        let m = DatasetManifest::load(manifest_path, false)?;
        let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
        let mut reports: Vec<MetricsReport> = m
            .cases
            .par_iter()
            .map(|case| -> Result<MetricsReport> {
                let truth_vol = load_volume(&m.resolve(base, case), &cfg)?;
                let pred_path = pred_dir.join(format!("{}.nii.gz", case.case_id));
                let pred_vol = load_volume(&pred_path, &cfg)?;
                let mut r = dice_iou(&pred_vol, &truth_vol)?;
                r.case_id = Some(case.case_id.clone());
                Ok(r)
            })
            .collect::<Result<_>>()?;
        reports.sort_by(|a, b| a.case_id.cmp(&b.case_id));
        let agg = aggregate(&reports)?;
        if table {
            let mut rows: Vec<(String, MetricsReport)> = reports
                .iter()
                .map(|r| (r.case_id.clone().unwrap_or_default(), r.clone()))
                .collect();
            rows.push(("Mean".into(), agg.clone()));
            println!("{}", render_table(&rows));
        }
        if let Some(out) = out {
            let batch = BatchMetrics { cases: reports, aggregate: agg };
            write_text(out, &serde_json::to_string_pretty(&batch)?)?;
        }
        return Ok(EXIT_OK);
    }
    let pred = pred.context("--pred is required without --manifest")?;
    let truth = truth.context("--truth is required without --manifest")?;
    let pred_vol = load_volume(pred, &cfg)?;
    let truth_vol = load_volume(truth, &cfg)?;
    let report = dice_iou(&pred_vol, &truth_vol)?;
    if table {
        println!("{}", render_table(&[("case".to_string(), report.clone())]));
    } else {
        println!("mean dice {:.4}  mean IoU {:.4}", report.mean_dice, report.mean_iou);
    }
    if let Some(out) = out {
        write_text(out, &serde_json::to_string_pretty(&report)?)?;
    }
    Ok(EXIT_OK)
}

pub fn loss(
    pred_logits: &Path,
    truth: &Path,
    objective: &str,
    out: Option<&PathBuf>,
    tube_radius: f64,
    config: Option<&PathBuf>,
) -> Result<i32> {
    let cfg = load_config(config)?;
    let objective = Objective::from_str(objective)
        .map_err(|e| anyhow!("{e}"))?;
    let logits = read_logits(pred_logits)?;
    let truth_vol = load_volume(truth, &cfg)?;
    let skel = skeletons_for_volume(&truth_vol, tube_radius);
    let p = softmax(&logits)?;
    let eval = combined_loss(&p, &truth_vol, &skel, objective, &cfg.loss)?;
    println!("{} = {:.6}", eval.report.objective, eval.report.total);
    if let Some(out) = out {
        write_text(out, &serde_json::to_string_pretty(&eval.report)?)?;
    }
    Ok(EXIT_OK)
}

pub fn validate_dataset(
    manifest_path: &Path,
    expect_splits: Option<&str>,
    lenient: bool,
    config: Option<&PathBuf>,
) -> Result<i32> {
    let cfg = load_config(config)?;
    let m = DatasetManifest::load(manifest_path, lenient)?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let map = ClassMap::canonical_tavr();
    let mut ok = true;

    let (train, val, test) = m.split_counts();
    println!("cases: {} (train {train} / val {val} / test {test})", m.cases.len());
    if let Some(expect) = expect_splits {
        let parts: Vec<usize> = expect
            .split(',')
            .map(|s| s.trim().parse())
            .collect::<std::result::Result<_, _>>()
            .context("--expect-splits takes train,val,test (e.g. 378,100,100)")?;
        if parts.len() != 3 {
            bail!("--expect-splits takes exactly three counts");
        }
        if (train, val, test) != (parts[0], parts[1], parts[2]) {
            println!(
                "split mismatch: expected {}/{}/{}, found {train}/{val}/{test}",
                parts[0], parts[1], parts[2]
            );
            ok = false;
        }
    }

    // Per-class presence census; cases lacking aorta or ventricle are
    // excludable and fail validation.
    let results: Vec<(String, Option<Vec<usize>>)> = m
        .cases
        .par_iter()
        .map(|case| {
            let path = m.resolve(base, case);
            let counts = load_volume(&path, &cfg).ok().map(|vol| {
                map.foreground_ids().map(|c| vol.count(c)).collect()
            });
            (case.case_id.clone(), counts)
        })
        .collect();
    let mut presence = vec![0usize; map.foreground_ids().count()];
    for (case_id, counts) in &results {
        match counts {
            None => {
                println!("{case_id}: unreadable");
                ok = false;
            }
            Some(counts) => {
                for (p, &c) in presence.iter_mut().zip(counts) {
                    if c > 0 {
                        *p += 1;
                    }
                }
                if counts[0] == 0 || counts[1] == 0 {
                    println!("{case_id}: excludable (missing aorta or left ventricle)");
                    ok = false;
                }
            }
        }
    }
    println!("class presence census ({} readable cases):", results.iter().filter(|r| r.1.is_some()).count());
    for (i, c) in map.foreground_ids().enumerate() {
        println!("  {:<20} {}", map.name(c).unwrap(), presence[i]);
    }
    Ok(if ok { EXIT_OK } else { 1 })
}

#[allow(clippy::too_many_arguments)]
pub fn phantom(
    kind: &str,
    out: &Path,
    dims: [usize; 3],
    spacing: f64,
    jitter: f64,
    seed: u64,
    tube_radius: f64,
    bulb_radius: f64,
    bulb_z: f64,
    gap: usize,
) -> Result<i32> {
    let kind = match kind {
        "box-interface" => PhantomKind::BoxInterface { gap },
        "cylinder-bulb" => PhantomKind::CylinderBulb {
            tube_radius,
            bulb_radius,
            bulb_center_z: bulb_z,
        },
        "y-bifurcation" => PhantomKind::YBifurcation {
            trunk_radius: tube_radius,
            branch_radius: (tube_radius * 0.7).max(1.0),
            split_z: dims[2] / 2,
            slope: 0.5,
        },
        "composite" => PhantomKind::SevenClassComposite,
        other => bail!("unknown phantom kind {other:?} (box-interface | cylinder-bulb | y-bifurcation | composite)"),
    };
    let mut spec = PhantomSpec::new(kind);
    if jitter > 0.0 {
        spec = spec.with_jitter(jitter, seed);
    }
    let grid = VoxelGrid3::isotropic(dims, spacing);
    let (vol, _truth) = generate(&spec, &grid)?;
    write_labels(out, &vol)?;
    Ok(EXIT_OK)
}

fn trace_csv(fit: &tavr_core::optim::FitResult) -> String {
    let mut out = String::from("iteration,total,dice_mean,dice,ce,focal,sr,focal_sr\n");
    let field = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for row in &fit.trace {
        let r: &LossReport = &row.report;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            row.iteration,
            r.total,
            row.metrics.mean_dice,
            field(r.dice),
            field(r.ce),
            field(r.focal),
            field(r.sr),
            field(r.focal_sr),
        );
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub fn fit_demo(
    input: &Path,
    objective: &str,
    iterations: usize,
    learning_rate: f64,
    record_every: usize,
    tube_radius: f64,
    trace: &Path,
    out_pred: Option<&PathBuf>,
    out_logits: Option<&PathBuf>,
    config: Option<&PathBuf>,
    seed: u64,
) -> Result<i32> {
    let cfg = load_config(config)?;
    let objective = Objective::from_str(objective).map_err(|e| anyhow!("{e}"))?;
    let truth = load_volume(input, &cfg)?;
    let skel = skeletons_for_volume(&truth, tube_radius);
    let fit_cfg = FitConfig {
        objective,
        loss: cfg.loss.clone(),
        learning_rate,
        iterations,
        record_every,
        seed,
    };
    let fit = fit_probability_field(&truth, &skel, &fit_cfg)?;
    write_text(trace, &trace_csv(&fit))?;
    let final_row = fit.trace.last().expect("trace is never empty");
    println!(
        "{}: final loss {:.6}, mean dice {:.4}",
        objective.name(),
        final_row.report.total,
        final_row.metrics.mean_dice
    );
    if let Some(out_pred) = out_pred {
        let p = softmax(&fit.logits)?;
        let pred = argmax_labels(&p, truth.class_map())?;
        write_labels(out_pred, &pred)?;
    }
    if let Some(out_logits) = out_logits {
        write_logits(out_logits, &fit.logits)?;
    }
    Ok(EXIT_OK)
}
