//! Dice and IoU evaluation per class and mean, plus report aggregation and a
//! benchmark-table renderer.
//!
//! # Example
//!
//! ```
//! use tavr_core::metrics::dice_iou;
//! use tavr_core::voxel::{ClassId, ClassMap, LabelVolume, VoxelGrid3};
//!
//! let grid = VoxelGrid3::isotropic([4, 4, 2], 1.0);
//! let map = ClassMap::canonical_tavr();
//! let mut truth = LabelVolume::background(grid.clone(), map.clone());
//! let mut pred = LabelVolume::background(grid, map);
//! for x in 0..4 { truth.set(x, 0, 0, ClassId(1)).unwrap(); }
//! for x in 0..2 { pred.set(x, 0, 0, ClassId(1)).unwrap(); }
//! // overlap 2 of (2 + 4): Dice = 2*2/6, IoU = 2/4
//! let report = dice_iou(&pred, &truth).unwrap();
//! assert!((report.classes[0].dice - 2.0 / 3.0).abs() < 1e-12);
//! assert!((report.classes[0].iou - 0.5).abs() < 1e-12);
//! ```

use serde::{Deserialize, Serialize};

use crate::voxel::{BinaryMask, ClassId, LabelVolume};
use crate::{Error, Result};

/// Scores for one foreground class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub id: u8,
    pub name: String,
    pub dice: f64,
    pub iou: f64,
    /// True when the class is empty in both prediction and truth; such
    /// classes score 1 but are excluded from aggregation.
    pub absent_in_both: bool,
}

/// Per-class and mean Dice/IoU for one case (or an aggregate).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub case_id: Option<String>,
    pub classes: Vec<ClassScore>,
    pub mean_dice: f64,
    pub mean_iou: f64,
}

fn means(classes: &[ClassScore]) -> (f64, f64) {
    let present: Vec<&ClassScore> = classes.iter().filter(|c| !c.absent_in_both).collect();
    if present.is_empty() {
        return (1.0, 1.0);
    }
    let n = present.len() as f64;
    (
        present.iter().map(|c| c.dice).sum::<f64>() / n,
        present.iter().map(|c| c.iou).sum::<f64>() / n,
    )
}

/// Per-class Dice and IoU over the foreground classes of the shared class
/// map.
///
/// When a class is empty in both volumes it scores 1 and is flagged
/// `absent_in_both`; the means skip flagged classes.
pub fn dice_iou(pred: &LabelVolume, truth: &LabelVolume) -> Result<MetricsReport> {
    pred.grid().ensure_same(truth.grid())?;
    if pred.class_map() != truth.class_map() {
        return Err(Error::ClassMapMismatch(
            "prediction and truth use different class maps".into(),
        ));
    }
    let map = pred.class_map();
    let mut classes = Vec::new();
    for c in map.foreground_ids() {
        let mut np = 0u64;
        let mut nt = 0u64;
        let mut inter = 0u64;
        for (&pv, &tv) in pred.voxels().iter().zip(truth.voxels()) {
            let in_p = pv == c.0;
            let in_t = tv == c.0;
            np += in_p as u64;
            nt += in_t as u64;
            inter += (in_p && in_t) as u64;
        }
        let union = np + nt - inter;
        let (dice, iou, absent) = if np == 0 && nt == 0 {
            (1.0, 1.0, true)
        } else {
            (
                2.0 * inter as f64 / (np + nt) as f64,
                inter as f64 / union as f64,
                false,
            )
        };
        classes.push(ClassScore {
            id: c.0,
            name: map.name(c).unwrap_or_default().to_string(),
            dice,
            iou,
            absent_in_both: absent,
        });
    }
    let (mean_dice, mean_iou) = means(&classes);
    Ok(MetricsReport { case_id: None, classes, mean_dice, mean_iou })
}

/// Per-class means over cases, excluding absent-in-both cases per class;
/// overall means recomputed from the per-class means.
pub fn aggregate(reports: &[MetricsReport]) -> Result<MetricsReport> {
    let first = reports
        .first()
        .ok_or_else(|| Error::EmptyInput("no reports to aggregate".into()))?;
    for r in reports {
        if r.classes.len() != first.classes.len()
            || r.classes
                .iter()
                .zip(&first.classes)
                .any(|(a, b)| a.id != b.id)
        {
            return Err(Error::ClassMapMismatch(
                "reports cover different class sets".into(),
            ));
        }
    }
    let mut classes = Vec::new();
    for (k, proto) in first.classes.iter().enumerate() {
        let present: Vec<&ClassScore> = reports
            .iter()
            .map(|r| &r.classes[k])
            .filter(|c| !c.absent_in_both)
            .collect();
        let (dice, iou, absent) = if present.is_empty() {
            (1.0, 1.0, true)
        } else {
            let n = present.len() as f64;
            (
                present.iter().map(|c| c.dice).sum::<f64>() / n,
                present.iter().map(|c| c.iou).sum::<f64>() / n,
                false,
            )
        };
        classes.push(ClassScore {
            id: proto.id,
            name: proto.name.clone(),
            dice,
            iou,
            absent_in_both: absent,
        });
    }
    let (mean_dice, mean_iou) = means(&classes);
    Ok(MetricsReport { case_id: None, classes, mean_dice, mean_iou })
}

/// Render labeled reports as a fixed-width text table: one row per entry,
/// one column per class plus a Mean column, scores in percent.
pub fn render_table(rows: &[(String, MetricsReport)]) -> String {
    let mut out = String::new();
    let Some((_, first)) = rows.first() else {
        return out;
    };
    let label_w = rows
        .iter()
        .map(|(l, _)| l.len())
        .max()
        .unwrap_or(0)
        .max(9);
    let col_w = first
        .classes
        .iter()
        .map(|c| c.name.len())
        .max()
        .unwrap_or(0)
        .max(6);
    out.push_str(&format!("{:label_w$}", ""));
    for c in &first.classes {
        out.push_str(&format!("  {:>col_w$}", c.name));
    }
    out.push_str(&format!("  {:>col_w$}\n", "Mean"));
    for (label, r) in rows {
        out.push_str(&format!("{label:label_w$}"));
        for c in &r.classes {
            out.push_str(&format!("  {:>col_w$.2}", c.dice * 100.0));
        }
        out.push_str(&format!("  {:>col_w$.2}\n", r.mean_dice * 100.0));
    }
    out
}

/// The Dice/IoU identity for shared sets: `d = 2j / (1 + j)`.
pub fn dice_from_iou(iou: f64) -> f64 {
    2.0 * iou / (1.0 + iou)
}

/// Dice and IoU of two raw masks; handy for single-class checks.
pub fn mask_dice_iou(pred: &BinaryMask, truth: &BinaryMask) -> Result<(f64, f64)> {
    pred.grid().ensure_same(truth.grid())?;
    let mut np = 0u64;
    let mut nt = 0u64;
    let mut inter = 0u64;
    for (&p, &t) in pred.bits().iter().zip(truth.bits()) {
        np += p as u64;
        nt += t as u64;
        inter += (p && t) as u64;
    }
    if np == 0 && nt == 0 {
        return Ok((1.0, 1.0));
    }
    Ok((
        2.0 * inter as f64 / (np + nt) as f64,
        inter as f64 / (np + nt - inter) as f64,
    ))
}

/// Argmax labels of a probability field under the given class map.
pub fn argmax_labels(
    p: &crate::losses::ProbabilityField,
    map: &crate::voxel::ClassMap,
) -> Result<LabelVolume> {
    let nvox = p.grid().len();
    let mut voxels = vec![0u8; nvox];
    for (i, v) in voxels.iter_mut().enumerate() {
        let mut best = 0usize;
        let mut best_p = f64::NEG_INFINITY;
        for c in 0..p.channels() {
            let pv = p.get(c, i);
            if pv > best_p {
                best_p = pv;
                best = c;
            }
        }
        if !map.contains(ClassId(best as u8)) {
            return Err(Error::UnknownClass(best as u8));
        }
        *v = best as u8;
    }
    LabelVolume::new(p.grid().clone(), map.clone(), voxels)
}
