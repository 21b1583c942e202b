//! Voxel grids, label volumes, exact distance transforms, morphology and
//! connected components.
//!
//! All dense arrays use x-fastest linear order: `idx = x + nx * (y + ny * z)`.
//! The exact Euclidean distance transform uses the separable lower-envelope
//! (squared-parabola) method, one pass per axis, linear time per voxel line.
//!
//! # Example
//!
//! ```
//! use tavr_core::voxel::{class_mask, ClassId, ClassMap, LabelVolume, VoxelGrid3};
//!
//! let grid = VoxelGrid3::isotropic([8, 8, 8], 1.0);
//! let map = ClassMap::canonical_tavr();
//! let mut vol = LabelVolume::background(grid, map);
//! vol.set(3, 3, 3, ClassId(1)).unwrap();
//! let aorta = class_mask(&vol, ClassId(1)).unwrap();
//! assert_eq!(aorta.count(), 1);
//! ```

use nalgebra::Matrix4;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Distance metric for transforms and morphology.
///
/// `IndexEuclidean` measures in voxel-index units regardless of spacing;
/// `WorldEuclidean` weighs each axis by the grid spacing (millimeters).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DistanceMetric {
    IndexEuclidean,
    WorldEuclidean,
}

/// A 3D voxel grid: dimensions, spacing and an affine index-to-world mapping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoxelGrid3 {
    dims: [usize; 3],
    spacing: [f64; 3],
    /// Row-major 4x4 affine mapping voxel index (x, y, z, 1) to world mm.
    affine: [[f64; 4]; 4],
}

impl VoxelGrid3 {
    /// Grid with the given spacing and an axis-aligned affine anchored at the
    /// world origin.
    pub fn new(dims: [usize; 3], spacing: [f64; 3]) -> Self {
        let affine = [
            [spacing[0], 0.0, 0.0, 0.0],
            [0.0, spacing[1], 0.0, 0.0],
            [0.0, 0.0, spacing[2], 0.0],
            [0.0, 0.0, 0.0, 1.0],
        ];
        Self::with_affine(dims, spacing, affine).expect("diagonal affine is invertible")
    }

    /// Isotropic grid with equal spacing on all axes.
    pub fn isotropic(dims: [usize; 3], spacing: f64) -> Self {
        Self::new(dims, [spacing; 3])
    }

    pub fn with_affine(dims: [usize; 3], spacing: [f64; 3], affine: [[f64; 4]; 4]) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::InvalidGrid(format!("zero dimension in {dims:?}")));
        }
        if spacing.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::InvalidGrid(format!("non-positive spacing in {spacing:?}")));
        }
        let m = Matrix4::from_fn(|r, c| affine[r][c]);
        if m.determinant().abs() < 1e-12 {
            return Err(Error::InvalidGrid("affine is not invertible".into()));
        }
        Ok(Self { dims, spacing, affine })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn affine(&self) -> [[f64; 4]; 4] {
        self.affine
    }

    /// Total number of voxels.
    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Linear index for (x, y, z), x-fastest.
    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        debug_assert!(x < self.dims[0] && y < self.dims[1] && z < self.dims[2]);
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    /// Inverse of [`index`](Self::index).
    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let x = idx % self.dims[0];
        let y = (idx / self.dims[0]) % self.dims[1];
        let z = idx / (self.dims[0] * self.dims[1]);
        [x, y, z]
    }

    /// Map a voxel index to world millimeters through the affine.
    pub fn index_to_world(&self, p: [f64; 3]) -> [f64; 3] {
        let a = &self.affine;
        let mut out = [0.0; 3];
        for (r, o) in out.iter_mut().enumerate() {
            *o = a[r][0] * p[0] + a[r][1] * p[1] + a[r][2] * p[2] + a[r][3];
        }
        out
    }

    /// Length of the grid diagonal in the given metric's units.
    pub fn diagonal(&self, metric: DistanceMetric) -> f64 {
        let w = self.axis_weights(metric);
        let d: f64 = (0..3)
            .map(|a| {
                let e = (self.dims[a].saturating_sub(1)) as f64 * w[a];
                e * e
            })
            .sum();
        d.sqrt()
    }

    /// Per-axis step length under the metric: all ones for index units,
    /// spacing for world units.
    pub fn axis_weights(&self, metric: DistanceMetric) -> [f64; 3] {
        match metric {
            DistanceMetric::IndexEuclidean => [1.0; 3],
            DistanceMetric::WorldEuclidean => self.spacing,
        }
    }

    /// Error unless `other` has identical dims, spacing and affine.
    pub fn ensure_same(&self, other: &VoxelGrid3) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!(
                "{:?} vs {:?}",
                self.dims, other.dims
            )))
        }
    }
}

/// A small non-negative class identifier; 0 is always background.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ClassId(pub u8);

impl ClassId {
    pub const BACKGROUND: ClassId = ClassId(0);
}

impl std::fmt::Display for ClassId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Registry of class ids and names. Background is always id 0.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassMap {
    entries: Vec<(ClassId, String)>,
}

impl ClassMap {
    pub fn new(entries: Vec<(ClassId, String)>) -> Result<Self> {
        let mut ids = std::collections::HashSet::new();
        let mut names = std::collections::HashSet::new();
        for (id, name) in &entries {
            if !ids.insert(*id) || !names.insert(name.clone()) {
                return Err(Error::InvalidConfig(format!(
                    "duplicate class entry ({id}, {name})"
                )));
            }
        }
        match entries.iter().find(|(id, _)| *id == ClassId::BACKGROUND) {
            Some((_, name)) if name == "background" => {}
            _ => {
                return Err(Error::InvalidConfig(
                    "class map must register id 0 as 'background'".into(),
                ))
            }
        }
        Ok(Self { entries })
    }

    /// The canonical TAVR class map: background plus the seven anatomy classes.
    pub fn canonical_tavr() -> Self {
        let names = [
            "background",
            "aorta",
            "left_ventricle",
            "aortic_root",
            "valve",
            "annulus",
            "iliac_artery_left",
            "iliac_artery_right",
        ];
        Self::new(
            names
                .iter()
                .enumerate()
                .map(|(i, n)| (ClassId(i as u8), n.to_string()))
                .collect(),
        )
        .expect("canonical map is valid")
    }

    pub fn contains(&self, id: ClassId) -> bool {
        self.entries.iter().any(|(i, _)| *i == id)
    }

    pub fn name(&self, id: ClassId) -> Option<&str> {
        self.entries
            .iter()
            .find(|(i, _)| *i == id)
            .map(|(_, n)| n.as_str())
    }

    pub fn id_of(&self, name: &str) -> Option<ClassId> {
        self.entries
            .iter()
            .find(|(_, n)| n == name)
            .map(|(i, _)| *i)
    }

    /// Number of registered classes, background included.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// All registered ids in registration order.
    pub fn ids(&self) -> impl Iterator<Item = ClassId> + '_ {
        self.entries.iter().map(|(i, _)| *i)
    }

    /// Foreground ids (everything except background) in registration order.
    pub fn foreground_ids(&self) -> impl Iterator<Item = ClassId> + '_ {
        self.ids().filter(|id| *id != ClassId::BACKGROUND)
    }

    /// Largest registered id; channel counts are `max_id + 1`.
    pub fn max_id(&self) -> u8 {
        self.entries.iter().map(|(i, _)| i.0).max().unwrap_or(0)
    }
}

/// Dense volume of class ids on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelVolume {
    grid: VoxelGrid3,
    class_map: ClassMap,
    voxels: Vec<u8>,
}

impl LabelVolume {
    pub fn new(grid: VoxelGrid3, class_map: ClassMap, voxels: Vec<u8>) -> Result<Self> {
        if voxels.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "voxel buffer length {} does not match grid {:?}",
                voxels.len(),
                grid.dims()
            )));
        }
        if let Some(&bad) = voxels.iter().find(|v| !class_map.contains(ClassId(**v))) {
            return Err(Error::UnknownClass(bad));
        }
        Ok(Self { grid, class_map, voxels })
    }

    /// All-background volume.
    pub fn background(grid: VoxelGrid3, class_map: ClassMap) -> Self {
        let voxels = vec![0; grid.len()];
        Self { grid, class_map, voxels }
    }

    pub fn grid(&self) -> &VoxelGrid3 {
        &self.grid
    }

    pub fn class_map(&self) -> &ClassMap {
        &self.class_map
    }

    pub fn voxels(&self) -> &[u8] {
        &self.voxels
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> ClassId {
        ClassId(self.voxels[self.grid.index(x, y, z)])
    }

    pub fn set(&mut self, x: usize, y: usize, z: usize, c: ClassId) -> Result<()> {
        if !self.class_map.contains(c) {
            return Err(Error::UnknownClass(c.0));
        }
        let idx = self.grid.index(x, y, z);
        self.voxels[idx] = c.0;
        Ok(())
    }

    /// Relabel every voxel currently in `mask` to class `c`.
    pub fn paint(&mut self, mask: &BinaryMask, c: ClassId) -> Result<()> {
        self.grid.ensure_same(mask.grid())?;
        if !self.class_map.contains(c) {
            return Err(Error::UnknownClass(c.0));
        }
        for (v, &b) in self.voxels.iter_mut().zip(mask.bits()) {
            if b {
                *v = c.0;
            }
        }
        Ok(())
    }

    /// Number of voxels labeled `c`.
    pub fn count(&self, c: ClassId) -> usize {
        self.voxels.iter().filter(|&&v| v == c.0).count()
    }
}

/// One bit per voxel on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMask {
    grid: VoxelGrid3,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(grid: VoxelGrid3, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "bit buffer length {} does not match grid {:?}",
                bits.len(),
                grid.dims()
            )));
        }
        Ok(Self { grid, bits })
    }

    pub fn empty(grid: VoxelGrid3) -> Self {
        let bits = vec![false; grid.len()];
        Self { grid, bits }
    }

    /// Build from a per-coordinate predicate.
    pub fn from_fn(grid: VoxelGrid3, mut f: impl FnMut(usize, usize, usize) -> bool) -> Self {
        let [nx, ny, nz] = grid.dims();
        let mut bits = Vec::with_capacity(grid.len());
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    bits.push(f(x, y, z));
                }
            }
        }
        Self { grid, bits }
    }

    pub fn grid(&self) -> &VoxelGrid3 {
        &self.grid
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> bool {
        self.bits[self.grid.index(x, y, z)]
    }

    pub fn set(&mut self, x: usize, y: usize, z: usize, v: bool) {
        let idx = self.grid.index(x, y, z);
        self.bits[idx] = v;
    }

    /// Number of set voxels.
    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn is_all_clear(&self) -> bool {
        !self.bits.iter().any(|b| *b)
    }

    /// Coordinates of set voxels in scan order.
    pub fn iter_set(&self) -> impl Iterator<Item = [usize; 3]> + '_ {
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, b)| **b)
            .map(|(i, _)| self.grid.coords(i))
    }

    /// True if `self` is a subset of `other` (same grid assumed).
    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.bits
            .iter()
            .zip(other.bits.iter())
            .all(|(a, b)| !*a || *b)
    }

    pub fn intersect(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.grid.ensure_same(&other.grid)?;
        let bits = self
            .bits
            .iter()
            .zip(&other.bits)
            .map(|(a, b)| *a && *b)
            .collect();
        BinaryMask::new(self.grid.clone(), bits)
    }

    pub fn union(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.grid.ensure_same(&other.grid)?;
        let bits = self
            .bits
            .iter()
            .zip(&other.bits)
            .map(|(a, b)| *a || *b)
            .collect();
        BinaryMask::new(self.grid.clone(), bits)
    }
}

/// Per-voxel distance to the nearest foreground voxel of a source mask.
#[derive(Debug, Clone)]
pub struct DistanceField {
    grid: VoxelGrid3,
    metric: DistanceMetric,
    values: Vec<f64>,
}

impl DistanceField {
    pub fn grid(&self) -> &VoxelGrid3 {
        &self.grid
    }

    pub fn metric(&self) -> DistanceMetric {
        self.metric
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> f64 {
        self.values[self.grid.index(x, y, z)]
    }
}

/// Binary mask of the voxels labeled `c`.
pub fn class_mask(vol: &LabelVolume, c: ClassId) -> Result<BinaryMask> {
    if !vol.class_map().contains(c) {
        return Err(Error::UnknownClass(c.0));
    }
    let bits = vol.voxels().iter().map(|&v| v == c.0).collect();
    BinaryMask::new(vol.grid().clone(), bits)
}

/// Sentinel distance used when the source mask is empty: grid diagonal + 1.
pub fn empty_mask_sentinel(grid: &VoxelGrid3, metric: DistanceMetric) -> f64 {
    grid.diagonal(metric) + 1.0
}

/// Exact Euclidean distance transform.
///
/// Separable squared-distance transform (lower envelope of parabolas), one
/// pass per axis; exact up to floating-point rounding of the final square
/// root. An empty mask yields the sentinel everywhere.
pub fn edt(mask: &BinaryMask, metric: DistanceMetric) -> DistanceField {
    let sq = edt_squared(mask, metric);
    let sentinel = empty_mask_sentinel(mask.grid(), metric);
    let values = sq
        .iter()
        .map(|&d2| if d2.is_finite() { d2.sqrt() } else { sentinel })
        .collect();
    DistanceField {
        grid: mask.grid().clone(),
        metric,
        values,
    }
}

/// Squared EDT as a flat buffer; `f64::INFINITY` where no foreground exists.
pub(crate) fn edt_squared(mask: &BinaryMask, metric: DistanceMetric) -> Vec<f64> {
    let grid = mask.grid();
    let [nx, ny, nz] = grid.dims();
    let w = grid.axis_weights(metric);
    let mut d: Vec<f64> = mask
        .bits()
        .iter()
        .map(|&b| if b { 0.0 } else { f64::INFINITY })
        .collect();

    let mut line = Vec::new();
    let mut out = Vec::new();

    // Pass along x for every (y, z) line, then y, then z.
    for z in 0..nz {
        for y in 0..ny {
            line.clear();
            line.extend((0..nx).map(|x| d[grid.index(x, y, z)]));
            envelope_1d(&line, w[0], &mut out);
            for x in 0..nx {
                d[grid.index(x, y, z)] = out[x];
            }
        }
    }
    for z in 0..nz {
        for x in 0..nx {
            line.clear();
            line.extend((0..ny).map(|y| d[grid.index(x, y, z)]));
            envelope_1d(&line, w[1], &mut out);
            for y in 0..ny {
                d[grid.index(x, y, z)] = out[y];
            }
        }
    }
    for y in 0..ny {
        for x in 0..nx {
            line.clear();
            line.extend((0..nz).map(|z| d[grid.index(x, y, z)]));
            envelope_1d(&line, w[2], &mut out);
            for z in 0..nz {
                d[grid.index(x, y, z)] = out[z];
            }
        }
    }
    d
}

/// 1D lower envelope of parabolas `f[q] + (w*(i-q))^2`.
///
/// Sites with infinite height are skipped; an all-infinite line stays
/// infinite.
fn envelope_1d(f: &[f64], weight: f64, out: &mut Vec<f64>) {
    let n = f.len();
    out.clear();
    out.resize(n, f64::INFINITY);
    let w2 = weight * weight;

    // v: site of the k-th parabola in the envelope; bound[k]: left boundary.
    let mut v = vec![0usize; n];
    let mut bound = vec![0.0f64; n + 1];
    let mut k: isize = -1;

    for q in 0..n {
        if !f[q].is_finite() {
            continue;
        }
        let qf = q as f64;
        loop {
            if k < 0 {
                k = 0;
                v[0] = q;
                bound[0] = f64::NEG_INFINITY;
                bound[1] = f64::INFINITY;
                break;
            }
            let p = v[k as usize] as f64;
            // Intersection of parabolas rooted at p and q (q > p).
            let s = ((f[q] - f[v[k as usize]]) / w2 + qf * qf - p * p) / (2.0 * (qf - p));
            if s <= bound[k as usize] {
                k -= 1;
            } else {
                k += 1;
                v[k as usize] = q;
                bound[k as usize] = s;
                bound[k as usize + 1] = f64::INFINITY;
                break;
            }
        }
    }

    if k < 0 {
        return; // no finite site on this line
    }
    let mut j = 0usize;
    for (i, o) in out.iter_mut().enumerate() {
        let fi = i as f64;
        while bound[j + 1] < fi {
            j += 1;
        }
        let dq = fi - v[j] as f64;
        *o = f[v[j]] + w2 * dq * dq;
    }
}

/// Ball dilation: every voxel whose distance to the mask is at most `radius`.
pub fn dilate(mask: &BinaryMask, radius: f64, metric: DistanceMetric) -> Result<BinaryMask> {
    if radius < 0.0 {
        return Err(Error::NegativeRadius(radius));
    }
    if radius == 0.0 {
        return Ok(mask.clone());
    }
    let sq = edt_squared(mask, metric);
    let r2 = radius * radius + 1e-9; // tolerance absorbs rounding at exact radii
    let bits = sq.iter().map(|&d2| d2 <= r2).collect();
    BinaryMask::new(mask.grid().clone(), bits)
}

/// Foreground component labels: 0 for background, 1..=count for components,
/// ids assigned in scan order of each component's first voxel.
#[derive(Debug, Clone)]
pub struct ComponentLabels {
    grid: VoxelGrid3,
    labels: Vec<u32>,
    count: usize,
}

impl ComponentLabels {
    pub fn grid(&self) -> &VoxelGrid3 {
        &self.grid
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> u32 {
        self.labels[self.grid.index(x, y, z)]
    }
}

/// Voxel connectivity: faces only, or faces + edges + corners.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Connectivity {
    Six,
    TwentySix,
}

impl Connectivity {
    fn offsets(self) -> Vec<[i32; 3]> {
        match self {
            Connectivity::Six => vec![
                [-1, 0, 0],
                [1, 0, 0],
                [0, -1, 0],
                [0, 1, 0],
                [0, 0, -1],
                [0, 0, 1],
            ],
            Connectivity::TwentySix => {
                let mut v = Vec::with_capacity(26);
                for dz in -1..=1 {
                    for dy in -1..=1 {
                        for dx in -1..=1 {
                            if dx != 0 || dy != 0 || dz != 0 {
                                v.push([dx, dy, dz]);
                            }
                        }
                    }
                }
                v
            }
        }
    }
}

/// Label the connected components of a mask via breadth-first flood fill in
/// scan order.
pub fn connected_components(mask: &BinaryMask, connectivity: Connectivity) -> ComponentLabels {
    let grid = mask.grid();
    let [nx, ny, nz] = grid.dims();
    let offsets = connectivity.offsets();
    let mut labels = vec![0u32; grid.len()];
    let mut count = 0u32;
    let mut queue = std::collections::VecDeque::new();

    for start in 0..grid.len() {
        if !mask.bits()[start] || labels[start] != 0 {
            continue;
        }
        count += 1;
        labels[start] = count;
        queue.push_back(start);
        while let Some(idx) = queue.pop_front() {
            let [x, y, z] = grid.coords(idx);
            for off in &offsets {
                let px = x as i32 + off[0];
                let py = y as i32 + off[1];
                let pz = z as i32 + off[2];
                if px < 0 || py < 0 || pz < 0 {
                    continue;
                }
                let (px, py, pz) = (px as usize, py as usize, pz as usize);
                if px >= nx || py >= ny || pz >= nz {
                    continue;
                }
                let nidx = grid.index(px, py, pz);
                if mask.bits()[nidx] && labels[nidx] == 0 {
                    labels[nidx] = count;
                    queue.push_back(nidx);
                }
            }
        }
    }

    ComponentLabels {
        grid: grid.clone(),
        labels,
        count: count as usize,
    }
}
