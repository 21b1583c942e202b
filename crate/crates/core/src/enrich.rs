//! Derivation of valve, annulus and aortic-root pseudo-labels from aorta and
//! left-ventricle labels.
//!
//! The valve is the aorta layer within a small distance of the ventricle, the
//! annulus is the one-voxel ventricle layer touching the aorta, and the root
//! is the aorta segment between the annulus plane and the first local minimum
//! of the cross-section curve after its first local maximum.
//!
//! # Example
//!
//! ```
//! use tavr_core::enrich::{enrich_volume, EnrichConfig, RootStatus};
//! use tavr_core::phantom::{generate, PhantomSpec};
//! use tavr_core::voxel::{ClassId, VoxelGrid3};
//!
//! let grid = VoxelGrid3::isotropic([32, 32, 48], 1.0);
//! let (vol, _truth) = generate(&PhantomSpec::cylinder_bulb(4.0, 8.0, 30.0), &grid).unwrap();
//! let (enriched, root) = enrich_volume(&vol, &EnrichConfig::default()).unwrap();
//! assert_eq!(root.status, RootStatus::Found);
//! assert!(enriched.count(ClassId(4)) > 0); // valve
//! assert!(enriched.count(ClassId(5)) > 0); // annulus
//! ```

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::voxel::{class_mask, edt, BinaryMask, ClassMap, DistanceMetric, LabelVolume};
use crate::{Error, Result};

/// Thresholds and sweep parameters for the enrichment rules.
///
/// Distances are Euclidean in voxel-index units; the defaults encode the
/// published rules: valve at distance <= 3 voxels from the ventricle, annulus
/// at distance <= 1 voxel from the aorta.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnrichConfig {
    pub valve_distance: f64,
    pub annulus_distance: f64,
    pub sweep_max_distance: f64,
    pub sweep_step: f64,
    pub slab_half_width: f64,
    pub smoothing_window: usize,
    pub metric: DistanceMetric,
}

impl Default for EnrichConfig {
    fn default() -> Self {
        Self {
            valve_distance: 3.0,
            annulus_distance: 1.0,
            sweep_max_distance: 60.0,
            sweep_step: 1.0,
            slab_half_width: 0.5,
            smoothing_window: 5,
            metric: DistanceMetric::IndexEuclidean,
        }
    }
}

impl EnrichConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.valve_distance > 0.0 && self.annulus_distance > 0.0) {
            return Err(Error::InvalidConfig("distances must be positive".into()));
        }
        if !(self.sweep_max_distance > 0.0 && self.sweep_step > 0.0 && self.slab_half_width > 0.0) {
            return Err(Error::InvalidConfig("sweep parameters must be positive".into()));
        }
        if self.smoothing_window == 0 || self.smoothing_window.is_multiple_of(2) {
            return Err(Error::InvalidConfig(format!(
                "smoothing window must be odd and positive, got {}",
                self.smoothing_window
            )));
        }
        Ok(())
    }
}

/// The least-squares annulus plane: centroid plus unit normal oriented toward
/// the aorta side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaneFrame {
    /// Annulus centroid in voxel-index coordinates.
    pub point: [f64; 3],
    /// Unit normal; mean signed distance of aorta voxels is non-negative.
    pub normal: [f64; 3],
}

impl PlaneFrame {
    /// Signed distance of a voxel-index point from the plane.
    pub fn signed_distance(&self, p: [f64; 3]) -> f64 {
        (0..3).map(|i| (p[i] - self.point[i]) * self.normal[i]).sum()
    }
}

/// Aorta voxel counts per parallel slab, raw and smoothed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossSectionCurve {
    /// Slab center distances from the annulus plane, strictly increasing.
    pub distances: Vec<f64>,
    pub raw_counts: Vec<u64>,
    /// Centered moving average of the raw counts, window shrinking
    /// symmetrically at the ends.
    pub smoothed: Vec<f64>,
}

impl CrossSectionCurve {
    pub fn len(&self) -> usize {
        self.distances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.distances.is_empty()
    }

    /// Build a curve from raw counts, smoothing with the given odd window.
    pub fn from_raw(distances: Vec<f64>, raw_counts: Vec<u64>, window: usize) -> Self {
        let smoothed = moving_average(&raw_counts, window);
        Self { distances, raw_counts, smoothed }
    }
}

/// Centered moving average with a symmetric window that shrinks at the ends.
fn moving_average(raw: &[u64], window: usize) -> Vec<f64> {
    let n = raw.len();
    let half = window / 2;
    (0..n)
        .map(|i| {
            let h = half.min(i).min(n - 1 - i);
            let lo = i - h;
            let hi = i + h;
            let sum: u64 = raw[lo..=hi].iter().sum();
            sum as f64 / (hi - lo + 1) as f64
        })
        .collect()
}

/// Outcome of the root-extent search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RootStatus {
    /// Minimum-after-maximum found on the smoothed curve.
    Found,
    /// No extremum pair; the dataset-aggregate distance of 25 voxels was
    /// substituted and flagged.
    Fallback,
    Failed,
}

impl std::fmt::Display for RootStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            RootStatus::Found => "found",
            RootStatus::Fallback => "fallback",
            RootStatus::Failed => "failed",
        };
        f.write_str(s)
    }
}

/// Distance of the substituted root end when no minimum is detected, taken
/// from the dataset-aggregate curve.
pub const FALLBACK_ROOT_DISTANCE: f64 = 25.0;

/// Result of the aortic-root extraction: the sweep curve, the detected
/// extent, and the root mask.
#[derive(Debug, Clone)]
pub struct RootResult {
    pub curve: CrossSectionCurve,
    pub plane: Option<PlaneFrame>,
    /// Distance of the first local maximum of the smoothed curve.
    pub max_distance: Option<f64>,
    /// Distance of the first local minimum after that maximum.
    pub min_distance: Option<f64>,
    pub root_mask: Option<BinaryMask>,
    pub status: RootStatus,
}

/// Aorta voxels within `valve_distance` of the ventricle.
pub fn extract_valve(
    aorta: &BinaryMask,
    ventricle: &BinaryMask,
    cfg: &EnrichConfig,
) -> Result<BinaryMask> {
    aorta.grid().ensure_same(ventricle.grid())?;
    cfg.validate()?;
    within_distance(aorta, ventricle, cfg.valve_distance, cfg.metric)
}

/// Ventricle voxels within `annulus_distance` of the aorta; with the default
/// of 1.0 this is the 6-adjacent interface layer.
pub fn extract_annulus(
    aorta: &BinaryMask,
    ventricle: &BinaryMask,
    cfg: &EnrichConfig,
) -> Result<BinaryMask> {
    aorta.grid().ensure_same(ventricle.grid())?;
    cfg.validate()?;
    within_distance(ventricle, aorta, cfg.annulus_distance, cfg.metric)
}

/// Voxels of `of` whose distance to `to` is at most `threshold` (inclusive).
fn within_distance(
    of: &BinaryMask,
    to: &BinaryMask,
    threshold: f64,
    metric: DistanceMetric,
) -> Result<BinaryMask> {
    let d = edt(to, metric);
    let t = threshold + 1e-9;
    let bits = of
        .bits()
        .iter()
        .zip(d.values())
        .map(|(&b, &dist)| b && dist <= t)
        .collect();
    BinaryMask::new(of.grid().clone(), bits)
}

/// Total-least-squares plane through the annulus voxel centers.
///
/// The normal is the eigenvector of the smallest covariance eigenvalue,
/// flipped so the mean signed distance of aorta voxels is non-negative.
pub fn fit_annulus_plane(annulus: &BinaryMask, aorta: &BinaryMask) -> Result<PlaneFrame> {
    annulus.grid().ensure_same(aorta.grid())?;
    let pts: Vec<Vector3<f64>> = annulus
        .iter_set()
        .map(|[x, y, z]| Vector3::new(x as f64, y as f64, z as f64))
        .collect();
    if pts.len() < 3 {
        return Err(Error::DegenerateAnnulus(format!(
            "only {} voxels, need at least 3",
            pts.len()
        )));
    }

    let centroid = pts.iter().sum::<Vector3<f64>>() / pts.len() as f64;
    let mut cov = Matrix3::zeros();
    for p in &pts {
        let d = p - centroid;
        cov += d * d.transpose();
    }
    cov /= pts.len() as f64;

    let eig = cov.symmetric_eigen();
    // Sort eigenpairs ascending by eigenvalue.
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
    let lam: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let scale = lam[2].max(1.0);
    if lam[1] <= 1e-9 * scale {
        return Err(Error::DegenerateAnnulus("voxels are collinear".into()));
    }
    if (lam[1] - lam[0]).abs() <= 1e-9 * scale {
        return Err(Error::NoUniquePlane);
    }

    let n = eig.eigenvectors.column(order[0]).normalize();
    let mut frame = PlaneFrame {
        point: [centroid.x, centroid.y, centroid.z],
        normal: [n.x, n.y, n.z],
    };

    let mut mean_signed = 0.0;
    let mut count = 0usize;
    for [x, y, z] in aorta.iter_set() {
        mean_signed += frame.signed_distance([x as f64, y as f64, z as f64]);
        count += 1;
    }
    if count > 0 && mean_signed < 0.0 {
        for c in &mut frame.normal {
            *c = -*c;
        }
    }
    Ok(frame)
}

/// Count aorta voxels in parallel slabs of increasing distance from the
/// annulus plane.
///
/// Slab `d` covers signed distances in `[d - slab_half_width, d +
/// slab_half_width)`.
pub fn sweep_cross_sections(
    aorta: &BinaryMask,
    plane: &PlaneFrame,
    cfg: &EnrichConfig,
) -> Result<CrossSectionCurve> {
    cfg.validate()?;
    let n_steps = (cfg.sweep_max_distance / cfg.sweep_step).floor() as usize + 1;
    let distances: Vec<f64> = (0..n_steps).map(|k| k as f64 * cfg.sweep_step).collect();
    let mut raw = vec![0u64; n_steps];
    for [x, y, z] in aorta.iter_set() {
        let s = plane.signed_distance([x as f64, y as f64, z as f64]);
        for (k, &d) in distances.iter().enumerate() {
            if s >= d - cfg.slab_half_width && s < d + cfg.slab_half_width {
                raw[k] += 1;
            }
        }
    }
    Ok(CrossSectionCurve::from_raw(distances, raw, cfg.smoothing_window))
}

/// Detected root extent on a cross-section curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RootExtent {
    pub max_distance: Option<f64>,
    pub min_distance: Option<f64>,
    pub status: RootStatus,
}

/// Locate the first local maximum of the smoothed curve and the first local
/// minimum after it. Plateaus resolve to their first index; endpoints are
/// never extrema.
pub fn detect_root_extent(curve: &CrossSectionCurve) -> Result<RootExtent> {
    let s = &curve.smoothed;
    let n = s.len();
    if n < 3 {
        return Err(Error::CurveTooShort { len: n, min: 3 });
    }

    let max_idx = (1..n - 1).find(|&i| s[i - 1] < s[i] && s[i] >= s[i + 1]);
    let Some(i) = max_idx else {
        return Ok(RootExtent { max_distance: None, min_distance: None, status: RootStatus::Failed });
    };
    let min_idx = (i + 1..n - 1).find(|&j| s[j - 1] > s[j] && s[j] <= s[j + 1]);
    let Some(j) = min_idx else {
        return Ok(RootExtent { max_distance: None, min_distance: None, status: RootStatus::Failed });
    };
    Ok(RootExtent {
        max_distance: Some(curve.distances[i]),
        min_distance: Some(curve.distances[j]),
        status: RootStatus::Found,
    })
}

/// Aorta voxels between the annulus plane and the detected root end.
pub fn extract_root(
    aorta: &BinaryMask,
    plane: &PlaneFrame,
    extent: &RootExtent,
) -> Result<BinaryMask> {
    if extent.status == RootStatus::Failed {
        return Err(Error::RootNotFound(extent.status.to_string()));
    }
    let min_d = extent
        .min_distance
        .ok_or_else(|| Error::RootNotFound(extent.status.to_string()))?;
    let mut out = BinaryMask::empty(aorta.grid().clone());
    for [x, y, z] in aorta.iter_set() {
        let s = plane.signed_distance([x as f64, y as f64, z as f64]);
        if (0.0..=min_d).contains(&s) {
            out.set(x, y, z, true);
        }
    }
    Ok(out)
}

fn required_class(map: &ClassMap, name: &str) -> Result<crate::voxel::ClassId> {
    map.id_of(name)
        .ok_or_else(|| Error::CaseExcluded(name.to_string()))
}

/// Run the full enrichment: valve, annulus, plane fit, sweep, root.
///
/// Derived classes are written into a copy of the volume with precedence
/// valve > annulus > root > original labels; every voxel keeps exactly one
/// class. Volumes lacking aorta or left-ventricle voxels are rejected as
/// excluded cases.
pub fn enrich_volume(vol: &LabelVolume, cfg: &EnrichConfig) -> Result<(LabelVolume, RootResult)> {
    cfg.validate()?;
    let map = vol.class_map();
    let aorta_id = required_class(map, "aorta")?;
    let ventricle_id = required_class(map, "left_ventricle")?;
    required_class(map, "iliac_artery_left")?;
    required_class(map, "iliac_artery_right")?;
    let root_id = required_class(map, "aortic_root")?;
    let valve_id = required_class(map, "valve")?;
    let annulus_id = required_class(map, "annulus")?;

    let aorta = class_mask(vol, aorta_id)?;
    let ventricle = class_mask(vol, ventricle_id)?;
    if aorta.is_all_clear() {
        return Err(Error::CaseExcluded("aorta".into()));
    }
    if ventricle.is_all_clear() {
        return Err(Error::CaseExcluded("left_ventricle".into()));
    }

    let valve = extract_valve(&aorta, &ventricle, cfg)?;
    let annulus = extract_annulus(&aorta, &ventricle, cfg)?;
    let plane = fit_annulus_plane(&annulus, &aorta)?;
    let curve = sweep_cross_sections(&aorta, &plane, cfg)?;
    let detected = detect_root_extent(&curve)?;
    let extent = match detected.status {
        RootStatus::Found => detected,
        _ => RootExtent {
            max_distance: None,
            min_distance: Some(FALLBACK_ROOT_DISTANCE),
            status: RootStatus::Fallback,
        },
    };
    let root = extract_root(&aorta, &plane, &extent)?;

    let mut out = vol.clone();
    // Reverse precedence order: later paints win.
    out.paint(&root, root_id)?;
    out.paint(&annulus, annulus_id)?;
    out.paint(&valve, valve_id)?;

    Ok((
        out,
        RootResult {
            curve,
            plane: Some(plane),
            max_distance: extent.max_distance,
            min_distance: extent.min_distance,
            root_mask: Some(root),
            status: extent.status,
        },
    ))
}
