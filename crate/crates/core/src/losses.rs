//! The segmentation loss family: Dice+CE, focal, skeleton recall, focal
//! skeleton recall and their combinations, as values with analytic gradients.
//!
//! Skeleton recall averages the soft recall of predictions restricted to
//! per-class skeletons:
//!
//! ```text
//! L_SR      = -(1/|C|) sum_c [ sum_i y_skel * p / sum_i y_skel ]
//! L_FocalSR = -(1/|C|) sum_c [ sum_i (1-p)^gamma * y_skel * p / sum_i y_skel ]
//! ```
//!
//! The focal factor `(1-p)^gamma` makes the focal skeleton recall loss
//! non-monotone: its per-voxel infimum sits at `p = 1/(1+gamma)`, not at
//! `p = 1`. The `coupled` gradient mode differentiates the full expression
//! (the literal formula); `detached` treats the focal factor as a constant
//! weight, restoring monotone descent toward `p = 1`. Gradients with respect
//! to logits chain through the softmax Jacobian.
//!
//! All probability clamping uses `EPS = 1e-7`, applied identically to values
//! and gradients.
//!
//! # Example
//!
//! ```
//! use tavr_core::losses::{combined_loss, softmax, LogitField, LossConfig, Objective};
//! use tavr_core::skeleton::skeletons_for_volume;
//! use tavr_core::voxel::{ClassMap, LabelVolume, VoxelGrid3};
//!
//! let grid = VoxelGrid3::isotropic([4, 4, 4], 1.0);
//! let map = ClassMap::canonical_tavr();
//! let mut labels = vec![0u8; grid.len()];
//! labels[21] = 1; // a single aorta voxel; its skeleton is itself
//! let vol = LabelVolume::new(grid.clone(), map.clone(), labels).unwrap();
//! let skel = skeletons_for_volume(&vol, 0.0);
//!
//! let p = softmax(&LogitField::zeros(grid, map.len())).unwrap();
//! let eval = combined_loss(&p, &vol, &skel, Objective::DiceCeSr, &LossConfig::default()).unwrap();
//! // Uniform probabilities over 8 classes put 1/8 on the skeleton, so SR = -1/8.
//! assert!((eval.report.sr.unwrap() + 0.125).abs() < 1e-12);
//! ```

use serde::{Deserialize, Serialize};

use crate::skeleton::SkeletonMask;
use crate::voxel::{ClassId, LabelVolume, VoxelGrid3};
use crate::{Error, Result};

/// Clamp bound applied to probabilities before logarithms.
pub const EPS: f64 = 1e-7;

/// Per-voxel, per-class probabilities; channel-major layout
/// (`values[c * nvox + i]`).
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityField {
    grid: VoxelGrid3,
    channels: usize,
    values: Vec<f64>,
    normalized: bool,
}

impl ProbabilityField {
    pub fn new(grid: VoxelGrid3, channels: usize, values: Vec<f64>, normalized: bool) -> Result<Self> {
        if values.len() != channels * grid.len() {
            return Err(Error::GridMismatch(format!(
                "value buffer {} != {} channels x {} voxels",
                values.len(),
                channels,
                grid.len()
            )));
        }
        if values.iter().any(|v| !(-1e-9..=1.0 + 1e-9).contains(v)) {
            return Err(Error::NonFinite("probability outside [0, 1]".into()));
        }
        Ok(Self { grid, channels, values, normalized })
    }

    pub fn grid(&self) -> &VoxelGrid3 {
        &self.grid
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    #[inline]
    pub fn get(&self, c: usize, voxel: usize) -> f64 {
        self.values[c * self.grid.len() + voxel]
    }
}

/// Unconstrained per-voxel, per-class scores; softmax over channels yields a
/// normalized [`ProbabilityField`].
#[derive(Debug, Clone, PartialEq)]
pub struct LogitField {
    grid: VoxelGrid3,
    channels: usize,
    values: Vec<f64>,
}

impl LogitField {
    pub fn new(grid: VoxelGrid3, channels: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != channels * grid.len() {
            return Err(Error::GridMismatch(format!(
                "value buffer {} != {} channels x {} voxels",
                values.len(),
                channels,
                grid.len()
            )));
        }
        Ok(Self { grid, channels, values })
    }

    pub fn zeros(grid: VoxelGrid3, channels: usize) -> Self {
        let values = vec![0.0; channels * grid.len()];
        Self { grid, channels, values }
    }

    pub fn grid(&self) -> &VoxelGrid3 {
        &self.grid
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
}

/// Gradient mode for the focal factor of the focal skeleton recall loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FocalSrMode {
    /// Differentiate the full `(1-p)^gamma * p` expression.
    Coupled,
    /// Treat `(1-p)^gamma` as a constant weight.
    Detached,
}

/// The five benchmark objectives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Objective {
    DiceCe,
    Focal,
    DiceCeSr,
    FocalSr,
    /// Focal skeleton recall plus focal: `L_FocalSK* = L_FocalSK + L_Focal`.
    FocalSkStar,
}

impl Objective {
    pub const ALL: [Objective; 5] = [
        Objective::DiceCe,
        Objective::Focal,
        Objective::DiceCeSr,
        Objective::FocalSr,
        Objective::FocalSkStar,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Objective::DiceCe => "DiceCE",
            Objective::Focal => "Focal",
            Objective::DiceCeSr => "DiceCE+SR",
            Objective::FocalSr => "Focal+SR",
            Objective::FocalSkStar => "FocalSK*",
        }
    }
}

impl std::str::FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "DiceCE" => Ok(Objective::DiceCe),
            "Focal" => Ok(Objective::Focal),
            "DiceCE+SR" => Ok(Objective::DiceCeSr),
            "Focal+SR" => Ok(Objective::FocalSr),
            "FocalSK*" | "FocalSKStar" => Ok(Objective::FocalSkStar),
            other => Err(Error::UnknownObjective(other.to_string())),
        }
    }
}

impl std::fmt::Display for Objective {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Loss hyper-parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub gamma: f64,
    pub dice_weight: f64,
    pub ce_weight: f64,
    pub focal_sr_mode: FocalSrMode,
    pub dice_smooth: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            gamma: 2.0,
            dice_weight: 0.25,
            ce_weight: 0.75,
            focal_sr_mode: FocalSrMode::Coupled,
            dice_smooth: 1e-5,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.gamma < 0.0 || self.dice_weight < 0.0 || self.ce_weight < 0.0 {
            return Err(Error::InvalidConfig("gamma and weights must be non-negative".into()));
        }
        if !(self.dice_smooth > 0.0) {
            return Err(Error::InvalidConfig("dice_smooth must be positive".into()));
        }
        Ok(())
    }
}

/// Value and per-term breakdown of a combined loss evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub objective: String,
    pub total: f64,
    pub dice: Option<f64>,
    pub ce: Option<f64>,
    pub focal: Option<f64>,
    pub sr: Option<f64>,
    pub focal_sr: Option<f64>,
    /// Mean predicted probability on each class skeleton.
    pub skeleton_recall_per_class: Vec<(u8, f64)>,
}

/// Combined loss value with gradients for probabilities and logits.
#[derive(Debug, Clone)]
pub struct CombinedLoss {
    pub report: LossReport,
    pub grad_p: Vec<f64>,
    pub grad_logits: Vec<f64>,
}

/// Numerically stable per-voxel softmax over channels.
pub fn softmax(logits: &LogitField) -> Result<ProbabilityField> {
    if logits.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("logits".into()));
    }
    let nvox = logits.grid.len();
    let k = logits.channels;
    let mut out = vec![0.0; k * nvox];
    for i in 0..nvox {
        let mut max = f64::NEG_INFINITY;
        for c in 0..k {
            max = max.max(logits.values[c * nvox + i]);
        }
        let mut sum = 0.0;
        for c in 0..k {
            let e = (logits.values[c * nvox + i] - max).exp();
            out[c * nvox + i] = e;
            sum += e;
        }
        for c in 0..k {
            out[c * nvox + i] /= sum;
        }
    }
    ProbabilityField::new(logits.grid.clone(), k, out, true)
}

/// Skeleton classes participating in a recall-style loss: nonempty skeleton
/// and a matching probability channel.
fn active_skeleton_classes<'a>(
    p: &ProbabilityField,
    skel: &'a SkeletonMask,
) -> Result<Vec<(ClassId, &'a crate::voxel::BinaryMask, usize)>> {
    let mut active = Vec::new();
    for (c, mask) in skel.classes() {
        p.grid.ensure_same(mask.grid())?;
        let n = mask.count();
        if n == 0 {
            continue;
        }
        if (c.0 as usize) >= p.channels {
            return Err(Error::ClassMapMismatch(format!(
                "class {c} has no probability channel (field has {})",
                p.channels
            )));
        }
        active.push((*c, mask, n));
    }
    if active.is_empty() {
        return Err(Error::NoSupervision);
    }
    Ok(active)
}

/// Skeleton recall loss: negative mean soft recall over classes with
/// nonempty skeletons. Range `[-1, 0]`.
pub fn skeleton_recall_loss(p: &ProbabilityField, skel: &SkeletonMask) -> Result<(f64, Vec<f64>)> {
    let active = active_skeleton_classes(p, skel)?;
    let k = active.len() as f64;
    let nvox = p.grid.len();
    let mut value = 0.0;
    let mut grad = vec![0.0; p.values.len()];
    for (c, mask, count) in active {
        let ch = c.0 as usize;
        let mut sum = 0.0;
        for (i, &b) in mask.bits().iter().enumerate() {
            if b {
                sum += p.values[ch * nvox + i];
                grad[ch * nvox + i] = -1.0 / (k * count as f64);
            }
        }
        value -= sum / (k * count as f64);
    }
    Ok((value, grad))
}

/// Focal skeleton recall loss with focusing exponent `gamma`.
///
/// Value range `[-gamma^gamma / (1+gamma)^(1+gamma), 0]`; the infimum per
/// skeleton voxel sits at `p = 1/(1+gamma)`.
pub fn focal_skeleton_recall_loss(
    p: &ProbabilityField,
    skel: &SkeletonMask,
    gamma: f64,
    mode: FocalSrMode,
) -> Result<(f64, Vec<f64>)> {
    if gamma < 0.0 {
        return Err(Error::InvalidConfig(format!("negative gamma {gamma}")));
    }
    let active = active_skeleton_classes(p, skel)?;
    let k = active.len() as f64;
    let nvox = p.grid.len();
    let mut value = 0.0;
    let mut grad = vec![0.0; p.values.len()];
    for (c, mask, count) in active {
        let ch = c.0 as usize;
        let norm = k * count as f64;
        for (i, &b) in mask.bits().iter().enumerate() {
            if !b {
                continue;
            }
            let pv = p.values[ch * nvox + i];
            let w = (1.0 - pv).powf(gamma);
            value -= w * pv / norm;
            grad[ch * nvox + i] = match mode {
                FocalSrMode::Detached => -w / norm,
                FocalSrMode::Coupled => {
                    // d/dp [(1-p)^g p] = (1-p)^g - g p (1-p)^(g-1)
                    let tail = if gamma == 0.0 {
                        0.0
                    } else {
                        gamma * pv * (1.0 - pv).powf(gamma - 1.0)
                    };
                    -(w - tail) / norm
                }
            };
        }
    }
    Ok((value, grad))
}

fn check_target(p: &ProbabilityField, target: &LabelVolume) -> Result<()> {
    p.grid.ensure_same(target.grid())?;
    let max = target.voxels().iter().copied().max().unwrap_or(0) as usize;
    if max >= p.channels {
        return Err(Error::ClassMapMismatch(format!(
            "label {max} has no probability channel (field has {})",
            p.channels
        )));
    }
    Ok(())
}

/// Focal loss with the multi-class convention `p* = p[target class]`,
/// averaged over voxels. `gamma = 0` reduces to cross-entropy.
pub fn focal_loss(
    p: &ProbabilityField,
    target: &LabelVolume,
    gamma: f64,
) -> Result<(f64, Vec<f64>)> {
    if !p.normalized {
        return Err(Error::Unnormalized);
    }
    check_target(p, target)?;
    let nvox = p.grid.len();
    let n = nvox as f64;
    let mut value = 0.0;
    let mut grad = vec![0.0; p.values.len()];
    for (i, &label) in target.voxels().iter().enumerate() {
        let ch = label as usize;
        let raw = p.values[ch * nvox + i];
        let ps = raw.clamp(EPS, 1.0 - EPS);
        let one_m = 1.0 - ps;
        value -= one_m.powf(gamma) * ps.ln();
        if (EPS..=1.0 - EPS).contains(&raw) {
            // d/dp [-(1-p)^g ln p] = g (1-p)^(g-1) ln p - (1-p)^g / p
            let lead = if gamma == 0.0 {
                0.0
            } else {
                gamma * one_m.powf(gamma - 1.0) * ps.ln()
            };
            grad[ch * nvox + i] = (lead - one_m.powf(gamma) / ps) / n;
        }
    }
    Ok((value / n, grad))
}

/// Soft Dice loss over all channels (background included), with smoothing
/// added to numerator and denominator.
pub fn soft_dice_loss(
    p: &ProbabilityField,
    target: &LabelVolume,
    smooth: f64,
) -> Result<(f64, Vec<f64>)> {
    if !p.normalized {
        return Err(Error::Unnormalized);
    }
    check_target(p, target)?;
    let nvox = p.grid.len();
    let k = p.channels;
    let mut value = 1.0;
    let mut grad = vec![0.0; p.values.len()];
    for c in 0..k {
        let mut inter = 0.0;
        let mut psum = 0.0;
        let mut ysum = 0.0;
        for (i, &label) in target.voxels().iter().enumerate() {
            let pv = p.values[c * nvox + i];
            psum += pv;
            if label as usize == c {
                inter += pv;
                ysum += 1.0;
            }
        }
        let num = 2.0 * inter + smooth;
        let den = psum + ysum + smooth;
        value -= num / den / k as f64;
        for (i, &label) in target.voxels().iter().enumerate() {
            let y = (label as usize == c) as u8 as f64;
            grad[c * nvox + i] = -(2.0 * y * den - num) / (den * den) / k as f64;
        }
    }
    Ok((value, grad))
}

/// Mean cross-entropy of the true-class probability.
pub fn cross_entropy_loss(p: &ProbabilityField, target: &LabelVolume) -> Result<(f64, Vec<f64>)> {
    focal_loss(p, target, 0.0)
}

/// Weighted Dice + cross-entropy: `dice_weight * softDice + ce_weight * CE`.
pub fn dice_ce_loss(
    p: &ProbabilityField,
    target: &LabelVolume,
    cfg: &LossConfig,
) -> Result<(f64, Vec<f64>)> {
    cfg.validate()?;
    let (dice, dice_grad) = soft_dice_loss(p, target, cfg.dice_smooth)?;
    let (ce, ce_grad) = cross_entropy_loss(p, target)?;
    let value = cfg.dice_weight * dice + cfg.ce_weight * ce;
    let grad = dice_grad
        .iter()
        .zip(&ce_grad)
        .map(|(d, c)| cfg.dice_weight * d + cfg.ce_weight * c)
        .collect();
    Ok((value, grad))
}

/// Chain a probability-space gradient through the softmax Jacobian.
pub fn chain_softmax(p: &ProbabilityField, grad_p: &[f64]) -> Vec<f64> {
    let nvox = p.grid.len();
    let k = p.channels;
    let mut out = vec![0.0; grad_p.len()];
    for i in 0..nvox {
        let mut dot = 0.0;
        for c in 0..k {
            dot += grad_p[c * nvox + i] * p.values[c * nvox + i];
        }
        for c in 0..k {
            let pv = p.values[c * nvox + i];
            out[c * nvox + i] = pv * (grad_p[c * nvox + i] - dot);
        }
    }
    out
}

/// Mean predicted probability on each nonempty class skeleton.
fn per_class_skeleton_recall(p: &ProbabilityField, skel: &SkeletonMask) -> Vec<(u8, f64)> {
    let nvox = p.grid.len();
    skel.classes()
        .iter()
        .filter(|(c, m)| m.count() > 0 && (c.0 as usize) < p.channels)
        .map(|(c, m)| {
            let ch = c.0 as usize;
            let mut sum = 0.0;
            let mut n = 0usize;
            for (i, &b) in m.bits().iter().enumerate() {
                if b {
                    sum += p.values[ch * nvox + i];
                    n += 1;
                }
            }
            (c.0, sum / n as f64)
        })
        .collect()
}

/// Evaluate one of the five objectives: total, per-term breakdown, and
/// gradients w.r.t. probabilities and logits.
///
/// `p` must be the softmax of the logits for `grad_logits` to be meaningful.
pub fn combined_loss(
    p: &ProbabilityField,
    target: &LabelVolume,
    skel: &SkeletonMask,
    objective: Objective,
    cfg: &LossConfig,
) -> Result<CombinedLoss> {
    cfg.validate()?;
    let mut report = LossReport {
        objective: objective.name().to_string(),
        total: 0.0,
        dice: None,
        ce: None,
        focal: None,
        sr: None,
        focal_sr: None,
        skeleton_recall_per_class: per_class_skeleton_recall(p, skel),
    };
    let mut grad_p = vec![0.0; p.values.len()];
    let add = |grad: &mut Vec<f64>, term_grad: Vec<f64>, weight: f64| {
        for (g, t) in grad.iter_mut().zip(term_grad) {
            *g += weight * t;
        }
    };

    match objective {
        Objective::DiceCe => {
            let (dice, dg) = soft_dice_loss(p, target, cfg.dice_smooth)?;
            let (ce, cg) = cross_entropy_loss(p, target)?;
            report.dice = Some(dice);
            report.ce = Some(ce);
            report.total = cfg.dice_weight * dice + cfg.ce_weight * ce;
            add(&mut grad_p, dg, cfg.dice_weight);
            add(&mut grad_p, cg, cfg.ce_weight);
        }
        Objective::Focal => {
            let (focal, fg) = focal_loss(p, target, cfg.gamma)?;
            report.focal = Some(focal);
            report.total = focal;
            add(&mut grad_p, fg, 1.0);
        }
        Objective::DiceCeSr => {
            let (dice, dg) = soft_dice_loss(p, target, cfg.dice_smooth)?;
            let (ce, cg) = cross_entropy_loss(p, target)?;
            let (sr, sg) = skeleton_recall_loss(p, skel)?;
            report.dice = Some(dice);
            report.ce = Some(ce);
            report.sr = Some(sr);
            report.total = cfg.dice_weight * dice + cfg.ce_weight * ce + sr;
            add(&mut grad_p, dg, cfg.dice_weight);
            add(&mut grad_p, cg, cfg.ce_weight);
            add(&mut grad_p, sg, 1.0);
        }
        Objective::FocalSr => {
            let (focal, fg) = focal_loss(p, target, cfg.gamma)?;
            let (sr, sg) = skeleton_recall_loss(p, skel)?;
            report.focal = Some(focal);
            report.sr = Some(sr);
            report.total = focal + sr;
            add(&mut grad_p, fg, 1.0);
            add(&mut grad_p, sg, 1.0);
        }
        Objective::FocalSkStar => {
            let (fsr, fsg) =
                focal_skeleton_recall_loss(p, skel, cfg.gamma, cfg.focal_sr_mode)?;
            let (focal, fg) = focal_loss(p, target, cfg.gamma)?;
            report.focal_sr = Some(fsr);
            report.focal = Some(focal);
            report.total = fsr + focal;
            add(&mut grad_p, fsg, 1.0);
            add(&mut grad_p, fg, 1.0);
        }
    }

    let grad_logits = chain_softmax(p, &grad_p);
    Ok(CombinedLoss { report, grad_p, grad_logits })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::voxel::{BinaryMask, ClassMap, VoxelGrid3};
    use rand::{Rng, SeedableRng};

    fn grid(n: usize) -> VoxelGrid3 {
        VoxelGrid3::isotropic([n, n, n], 1.0)
    }

    fn two_class_map() -> ClassMap {
        ClassMap::new(vec![
            (ClassId(0), "background".into()),
            (ClassId(1), "a".into()),
        ])
        .unwrap()
    }

    fn random_prob_field(g: &VoxelGrid3, k: usize, seed: u64) -> ProbabilityField {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let nvox = g.len();
        let mut v = vec![0.0; k * nvox];
        for i in 0..nvox {
            let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.05..1.0)).collect();
            let sum: f64 = raw.iter().sum();
            for c in 0..k {
                v[c * nvox + i] = raw[c] / sum;
            }
        }
        ProbabilityField::new(g.clone(), k, v, true).unwrap()
    }

    fn random_target(g: &VoxelGrid3, map: &ClassMap, k: u8, seed: u64) -> LabelVolume {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let voxels: Vec<u8> = (0..g.len()).map(|_| rng.gen_range(0..k)).collect();
        LabelVolume::new(g.clone(), map.clone(), voxels).unwrap()
    }

    /// Skeleton with one class and the given voxels set.
    fn skeleton_of(g: &VoxelGrid3, c: u8, voxels: &[[usize; 3]]) -> SkeletonMask {
        let mut m = BinaryMask::empty(g.clone());
        for &[x, y, z] in voxels {
            m.set(x, y, z, true);
        }
        SkeletonMask::new(vec![(ClassId(c), m)], 0.0)
    }

    #[test]
    fn softmax_uniform_on_zero_logits() {
        let g = grid(2);
        let p = softmax(&LogitField::zeros(g, 4)).unwrap();
        assert!(p.values().iter().all(|&v| (v - 0.25).abs() < 1e-12));
        assert!(p.is_normalized());
    }

    #[test]
    fn softmax_is_stable_for_huge_logits() {
        let g = VoxelGrid3::isotropic([1, 1, 1], 1.0);
        let l = LogitField::new(g, 2, vec![1000.0, 0.0]).unwrap();
        let p = softmax(&l).unwrap();
        assert!((p.get(0, 0) - 1.0).abs() < 1e-12);
        assert!(p.get(1, 0) < 1e-12);
    }

    #[test]
    fn softmax_matches_direct_formula() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let g = grid(2);
        let nvox = g.len();
        let k = 3;
        let vals: Vec<f64> = (0..k * nvox).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let l = LogitField::new(g, k, vals.clone()).unwrap();
        let p = softmax(&l).unwrap();
        for i in 0..nvox {
            let sum: f64 = (0..k).map(|c| vals[c * nvox + i].exp()).sum();
            for c in 0..k {
                let direct = vals[c * nvox + i].exp() / sum;
                assert!((p.get(c, i) - direct).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn softmax_rejects_non_finite() {
        let g = VoxelGrid3::isotropic([1, 1, 1], 1.0);
        let l = LogitField::new(g, 2, vec![f64::NAN, 0.0]).unwrap();
        assert!(softmax(&l).is_err());
    }

    #[test]
    fn sr_perfect_recall_is_minus_one() {
        let g = grid(3);
        let skel = skeleton_of(&g, 1, &[[0, 0, 0], [1, 1, 1], [2, 2, 2]]);
        let nvox = g.len();
        let mut v = vec![0.0; 2 * nvox];
        for i in 0..nvox {
            v[nvox + i] = 1.0;
        }
        let p = ProbabilityField::new(g, 2, v, false).unwrap();
        let (val, _) = skeleton_recall_loss(&p, &skel).unwrap();
        assert!((val + 1.0).abs() < 1e-12);
    }

    #[test]
    fn sr_two_voxel_worked_example() {
        let g = grid(3);
        let skel = skeleton_of(&g, 1, &[[0, 0, 0], [1, 0, 0]]);
        let nvox = g.len();
        let mut v = vec![0.0; 2 * nvox];
        v[nvox] = 0.5;
        v[nvox + 1] = 0.25;
        let p = ProbabilityField::new(g.clone(), 2, v, false).unwrap();
        let (val, grad) = skeleton_recall_loss(&p, &skel).unwrap();
        assert!((val + 0.375).abs() < 1e-12);
        // Gradient: -1/(1*2) on the two skeleton voxels, zero elsewhere.
        assert!((grad[nvox] + 0.5).abs() < 1e-12);
        assert!((grad[nvox + 1] + 0.5).abs() < 1e-12);
        let nonzero = grad.iter().filter(|&&gv| gv != 0.0).count();
        assert_eq!(nonzero, 2);
    }

    #[test]
    fn sr_zero_prediction_is_supremum_zero() {
        let g = grid(3);
        let skel = skeleton_of(&g, 1, &[[0, 0, 0], [1, 1, 1]]);
        let p = ProbabilityField::new(g.clone(), 2, vec![0.0; 2 * g.len()], false).unwrap();
        let (val, _) = skeleton_recall_loss(&p, &skel).unwrap();
        assert_eq!(val, 0.0);
    }

    #[test]
    fn sr_all_empty_skeletons_error() {
        let g = grid(3);
        let skel = SkeletonMask::new(vec![(ClassId(1), BinaryMask::empty(g.clone()))], 0.0);
        let p = ProbabilityField::new(g.clone(), 2, vec![0.0; 2 * g.len()], false).unwrap();
        assert!(matches!(
            skeleton_recall_loss(&p, &skel),
            Err(Error::NoSupervision)
        ));
    }

    #[test]
    fn focal_sr_perfect_prediction_is_zero_not_minus_one() {
        let g = grid(3);
        let skel = skeleton_of(&g, 1, &[[0, 0, 0], [1, 1, 1]]);
        let nvox = g.len();
        let mut v = vec![0.0; 2 * nvox];
        for i in 0..nvox {
            v[nvox + i] = 1.0;
        }
        let p = ProbabilityField::new(g, 2, v, false).unwrap();
        let (val, _) = focal_skeleton_recall_loss(&p, &skel, 2.0, FocalSrMode::Coupled).unwrap();
        assert!(val.abs() < 1e-12);
    }

    #[test]
    fn focal_sr_two_voxel_worked_example() {
        let g = grid(3);
        let skel = skeleton_of(&g, 1, &[[0, 0, 0], [1, 0, 0]]);
        let nvox = g.len();
        let mut v = vec![0.0; 2 * nvox];
        v[nvox] = 0.5;
        v[nvox + 1] = 0.25;
        let p = ProbabilityField::new(g, 2, v, false).unwrap();
        let (val, _) = focal_skeleton_recall_loss(&p, &skel, 2.0, FocalSrMode::Coupled).unwrap();
        // -(0.25*0.5 + 0.5625*0.25)/2
        assert!((val + 0.1328125).abs() < 1e-12);
    }

    #[test]
    fn focal_sr_gradient_sign_flips_at_one_over_one_plus_gamma() {
        let g = VoxelGrid3::isotropic([1, 1, 1], 1.0);
        let skel = skeleton_of(&g, 1, &[[0, 0, 0]]);
        for gamma in [1.0, 2.0, 5.0] {
            let flip = 1.0 / (1.0 + gamma);
            for (pv, expect_neg) in [(flip - 1e-3, true), (flip + 1e-3, false)] {
                let p = ProbabilityField::new(g.clone(), 2, vec![0.0, pv], false).unwrap();
                let (_, grad) =
                    focal_skeleton_recall_loss(&p, &skel, gamma, FocalSrMode::Coupled).unwrap();
                assert_eq!(grad[1] < 0.0, expect_neg, "gamma={gamma} p={pv}");
            }
        }
    }

    #[test]
    fn focal_sr_gamma_zero_degenerates_to_sr() {
        let g = grid(3);
        let skel = skeleton_of(&g, 1, &[[0, 0, 0], [1, 1, 0], [2, 1, 2]]);
        let p = random_prob_field(&g, 2, 17);
        let (a, ga) = focal_skeleton_recall_loss(&p, &skel, 0.0, FocalSrMode::Coupled).unwrap();
        let (b, gb) = skeleton_recall_loss(&p, &skel).unwrap();
        assert!((a - b).abs() < 1e-12);
        for (x, y) in ga.iter().zip(&gb) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn focal_perfect_prediction_is_zero() {
        let g = grid(2);
        let map = two_class_map();
        let target = random_target(&g, &map, 2, 3);
        let nvox = g.len();
        let mut v = vec![0.0; 2 * nvox];
        for (i, &label) in target.voxels().iter().enumerate() {
            v[label as usize * nvox + i] = 1.0;
        }
        let p = ProbabilityField::new(g, 2, v, true).unwrap();
        let (val, _) = focal_loss(&p, &target, 2.0).unwrap();
        // Clamping leaves an O(eps) residue.
        assert!(val.abs() < 1e-6);
    }

    #[test]
    fn focal_single_voxel_worked_example() {
        let g = VoxelGrid3::isotropic([1, 1, 1], 1.0);
        let map = two_class_map();
        let target = LabelVolume::new(g.clone(), map, vec![1]).unwrap();
        let p = ProbabilityField::new(g, 2, vec![0.1, 0.9], true).unwrap();
        let (val, _) = focal_loss(&p, &target, 2.0).unwrap();
        let expected = -(0.1f64.powi(2)) * 0.9f64.ln();
        assert!((val - expected).abs() < 1e-12);
        assert!((val - 1.0536e-3).abs() < 1e-6);
    }

    #[test]
    fn focal_gamma_zero_equals_cross_entropy() {
        let g = grid(3);
        let map = two_class_map();
        let target = random_target(&g, &map, 2, 5);
        let p = random_prob_field(&g, 2, 6);
        let (a, ga) = focal_loss(&p, &target, 0.0).unwrap();
        let (b, gb) = cross_entropy_loss(&p, &target).unwrap();
        assert!((a - b).abs() < 1e-12);
        assert_eq!(ga, gb);
    }

    #[test]
    fn focal_requires_normalized_field() {
        let g = grid(2);
        let map = two_class_map();
        let target = random_target(&g, &map, 2, 5);
        let p = ProbabilityField::new(g.clone(), 2, vec![0.5; 2 * g.len()], false).unwrap();
        assert!(matches!(
            focal_loss(&p, &target, 2.0),
            Err(Error::Unnormalized)
        ));
    }

    #[test]
    fn dice_ce_perfect_prediction_is_near_zero() {
        let g = grid(2);
        let map = two_class_map();
        let target = random_target(&g, &map, 2, 9);
        let nvox = g.len();
        let mut v = vec![0.0; 2 * nvox];
        for (i, &label) in target.voxels().iter().enumerate() {
            v[label as usize * nvox + i] = 1.0;
        }
        let p = ProbabilityField::new(g, 2, v, true).unwrap();
        let cfg = LossConfig::default();
        let (val, _) = dice_ce_loss(&p, &target, &cfg).unwrap();
        assert!(val.abs() < 1e-4, "value {val}");
    }

    #[test]
    fn dice_ce_single_voxel_closed_form() {
        let g = VoxelGrid3::isotropic([1, 1, 1], 1.0);
        let map = two_class_map();
        let target = LabelVolume::new(g.clone(), map, vec![0]).unwrap();
        let p = ProbabilityField::new(g, 2, vec![0.5, 0.5], true).unwrap();
        let cfg = LossConfig::default();
        let s = cfg.dice_smooth;
        let (val, _) = dice_ce_loss(&p, &target, &cfg).unwrap();
        // Class 0: (2*0.5+s)/(0.5+1+s); class 1: (0+s)/(0.5+0+s).
        let dice = 1.0 - 0.5 * ((1.0 + s) / (1.5 + s) + s / (0.5 + s));
        let ce = 2f64.ln();
        let expected = 0.25 * dice + 0.75 * ce;
        assert!((val - expected).abs() < 1e-12);
    }

    #[test]
    fn ce_uniform_four_classes_is_ln_four() {
        let g = grid(2);
        let map = ClassMap::new(vec![
            (ClassId(0), "background".into()),
            (ClassId(1), "a".into()),
            (ClassId(2), "b".into()),
            (ClassId(3), "c".into()),
        ])
        .unwrap();
        let target = random_target(&g, &map, 4, 2);
        let p = ProbabilityField::new(g.clone(), 4, vec![0.25; 4 * g.len()], true).unwrap();
        let (val, _) = cross_entropy_loss(&p, &target).unwrap();
        assert!((val - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn combined_total_recomposes_from_terms() {
        let g = grid(3);
        let map = two_class_map();
        let target = random_target(&g, &map, 2, 13);
        let skel = skeleton_of(&g, 1, &[[0, 0, 0], [1, 1, 1], [2, 0, 1]]);
        let p = random_prob_field(&g, 2, 14);
        let cfg = LossConfig::default();

        for obj in Objective::ALL {
            let out = combined_loss(&p, &target, &skel, obj, &cfg).unwrap();
            let r = &out.report;
            let recomposed = match obj {
                Objective::DiceCe => {
                    cfg.dice_weight * r.dice.unwrap() + cfg.ce_weight * r.ce.unwrap()
                }
                Objective::Focal => r.focal.unwrap(),
                Objective::DiceCeSr => {
                    cfg.dice_weight * r.dice.unwrap()
                        + cfg.ce_weight * r.ce.unwrap()
                        + r.sr.unwrap()
                }
                Objective::FocalSr => r.focal.unwrap() + r.sr.unwrap(),
                Objective::FocalSkStar => r.focal_sr.unwrap() + r.focal.unwrap(),
            };
            assert!((r.total - recomposed).abs() < 1e-12, "{obj}");
        }
    }

    #[test]
    fn combined_focal_sk_star_near_zero_on_confident_one_hot() {
        let g = grid(3);
        let map = two_class_map();
        let target = random_target(&g, &map, 2, 19);
        let skel = skeleton_of(&g, 1, &[[0, 0, 0]]);
        // Build probabilities from very confident logits.
        let nvox = g.len();
        let mut logits = LogitField::zeros(g.clone(), 2);
        for (i, &label) in target.voxels().iter().enumerate() {
            logits.values_mut()[label as usize * nvox + i] = 50.0;
        }
        let p = softmax(&logits).unwrap();
        let cfg = LossConfig::default();
        let out = combined_loss(&p, &target, &skel, Objective::FocalSkStar, &cfg).unwrap();
        assert!(out.report.total.abs() < 1e-3);
    }

    #[test]
    fn objective_names_round_trip() {
        for obj in Objective::ALL {
            assert_eq!(obj.name().parse::<Objective>().unwrap(), obj);
        }
        assert!("bogus".parse::<Objective>().is_err());
    }

    #[test]
    fn sr_bounds_and_monotonicity() {
        let g = grid(2);
        let skel = skeleton_of(&g, 1, &[[0, 0, 0], [1, 1, 1]]);
        let mut prev = f64::INFINITY;
        for step in 0..=10 {
            let pv = step as f64 / 10.0;
            let nvox = g.len();
            let mut v = vec![0.0; 2 * nvox];
            v[nvox] = pv;
            v[nvox + g.index_of([1, 1, 1])] = pv;
            let p = ProbabilityField::new(g.clone(), 2, v, false).unwrap();
            let (val, _) = skeleton_recall_loss(&p, &skel).unwrap();
            assert!((-1.0..=0.0).contains(&val));
            assert!(val <= prev + 1e-12);
            prev = val;
        }
    }

    #[test]
    fn focal_sr_bound_is_gamma_dependent() {
        // Infimum per voxel: -g^g/(1+g)^(1+g), attained at p = 1/(1+g).
        let g = VoxelGrid3::isotropic([1, 1, 1], 1.0);
        let skel = skeleton_of(&g, 1, &[[0, 0, 0]]);
        for gamma in [1.0, 2.0, 5.0] {
            let p_star = 1.0 / (1.0 + gamma);
            let p = ProbabilityField::new(g.clone(), 2, vec![0.0, p_star], false).unwrap();
            let (val, grad) =
                focal_skeleton_recall_loss(&p, &skel, gamma, FocalSrMode::Coupled).unwrap();
            let bound = -gamma.powf(gamma) / (1.0 + gamma).powf(1.0 + gamma);
            assert!((val - bound).abs() < 1e-9, "gamma={gamma}");
            assert!(grad[1].abs() < 1e-9, "stationary point, gamma={gamma}");
        }
    }

    #[test]
    fn permuting_class_channels_leaves_totals_unchanged() {
        let g = grid(3);
        let nvox = g.len();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
        let mut m1 = BinaryMask::empty(g.clone());
        let mut m2 = BinaryMask::empty(g.clone());
        for _ in 0..6 {
            m1.set(rng.gen_range(0..3), rng.gen_range(0..3), rng.gen_range(0..3), true);
            m2.set(rng.gen_range(0..3), rng.gen_range(0..3), rng.gen_range(0..3), true);
        }
        let skel = SkeletonMask::new(vec![(ClassId(1), m1.clone()), (ClassId(2), m2.clone())], 0.0);
        let skel_swapped = SkeletonMask::new(vec![(ClassId(1), m2), (ClassId(2), m1)], 0.0);
        let p = random_prob_field(&g, 3, 32);
        // Swap channels 1 and 2 of p.
        let mut v = p.values().to_vec();
        for i in 0..nvox {
            v.swap(nvox + i, 2 * nvox + i);
        }
        let p_swapped = ProbabilityField::new(g, 3, v, true).unwrap();
        let (a, _) = skeleton_recall_loss(&p, &skel).unwrap();
        let (b, _) = skeleton_recall_loss(&p_swapped, &skel_swapped).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    impl VoxelGrid3 {
        fn index_of(&self, p: [usize; 3]) -> usize {
            self.index(p[0], p[1], p[2])
        }
    }
}
