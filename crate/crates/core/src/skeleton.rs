//! Topology-preserving 3D thinning and tubed skeletons.
//!
//! Thinning deletes simple border points iteratively over the six face
//! directions with a deterministic sub-iteration order. A point is simple
//! when its removal changes neither the 26-connectivity of the foreground nor
//! the 6-connectivity of the background in its 3x3x3 neighborhood
//! (Malandain–Bertrand characterization: exactly one 26-component of
//! foreground neighbors and exactly one 6-component of background
//! 18-neighbors touching the center by a face). Curve endpoints (a single
//! foreground neighbor) are never deleted, so tubular masks thin to
//! centerline curves.
//!
//! # Example
//!
//! ```
//! use tavr_core::skeleton::skeletonize;
//! use tavr_core::voxel::{connected_components, BinaryMask, Connectivity, VoxelGrid3};
//!
//! let grid = VoxelGrid3::isotropic([9, 9, 25], 1.0);
//! let tube = BinaryMask::from_fn(grid, |x, y, _z| {
//!     let (dx, dy) = (x as f64 - 4.0, y as f64 - 4.0);
//!     dx * dx + dy * dy <= 9.0
//! });
//! let skel = skeletonize(&tube);
//! assert!(skel.is_subset_of(&tube));
//! assert!(skel.count() < tube.count() / 5);
//! assert_eq!(connected_components(&skel, Connectivity::TwentySix).count(), 1);
//! ```

use crate::voxel::{class_mask, dilate, BinaryMask, ClassId, DistanceMetric, LabelVolume};
use crate::{Error, Result};

/// Per-class skeleton masks on one grid, produced with a fixed tube radius.
#[derive(Debug, Clone)]
pub struct SkeletonMask {
    classes: Vec<(ClassId, BinaryMask)>,
    tube_radius: f64,
}

impl SkeletonMask {
    pub fn new(classes: Vec<(ClassId, BinaryMask)>, tube_radius: f64) -> Self {
        Self { classes, tube_radius }
    }

    pub fn tube_radius(&self) -> f64 {
        self.tube_radius
    }

    /// Per-class masks in class-registration order.
    pub fn classes(&self) -> &[(ClassId, BinaryMask)] {
        &self.classes
    }

    pub fn mask(&self, c: ClassId) -> Option<&BinaryMask> {
        self.classes.iter().find(|(id, _)| *id == c).map(|(_, m)| m)
    }
}

#[inline]
fn nb_index(dx: i32, dy: i32, dz: i32) -> usize {
    ((dx + 1) + 3 * (dy + 1) + 9 * (dz + 1)) as usize
}

/// Extract the 3x3x3 neighborhood of (x, y, z) as 27 booleans; out-of-grid
/// voxels are background.
pub(crate) fn neighborhood(mask: &BinaryMask, x: usize, y: usize, z: usize) -> [bool; 27] {
    let [nx, ny, nz] = mask.grid().dims();
    let mut nb = [false; 27];
    for dz in -1i32..=1 {
        for dy in -1i32..=1 {
            for dx in -1i32..=1 {
                let px = x as i32 + dx;
                let py = y as i32 + dy;
                let pz = z as i32 + dz;
                let inside = px >= 0
                    && py >= 0
                    && pz >= 0
                    && (px as usize) < nx
                    && (py as usize) < ny
                    && (pz as usize) < nz;
                nb[nb_index(dx, dy, dz)] =
                    inside && mask.get(px as usize, py as usize, pz as usize);
            }
        }
    }
    nb
}

fn count_fg_neighbors(nb: &[bool; 27]) -> usize {
    nb.iter()
        .enumerate()
        .filter(|&(i, &b)| i != 13 && b)
        .count()
}

/// Number of 26-connected components of foreground among the 26 neighbors.
fn fg_components_26(nb: &[bool; 27]) -> usize {
    let mut visited = [false; 27];
    let mut count = 0;
    for start in 0..27 {
        if start == 13 || !nb[start] || visited[start] {
            continue;
        }
        count += 1;
        let mut stack = vec![start];
        visited[start] = true;
        while let Some(i) = stack.pop() {
            let (ix, iy, iz) = ((i % 3) as i32, ((i / 3) % 3) as i32, (i / 9) as i32);
            for j in 0..27 {
                if j == 13 || visited[j] || !nb[j] {
                    continue;
                }
                let (jx, jy, jz) = ((j % 3) as i32, ((j / 3) % 3) as i32, (j / 9) as i32);
                if (ix - jx).abs() <= 1 && (iy - jy).abs() <= 1 && (iz - jz).abs() <= 1 {
                    visited[j] = true;
                    stack.push(j);
                }
            }
        }
    }
    count
}

/// Number of 6-connected components of background 18-neighbors that touch the
/// center by a face.
fn bg_components_6(nb: &[bool; 27]) -> usize {
    // 18-neighborhood: offsets with at most two non-zero coordinates.
    let in_n18 = |i: usize| {
        let (x, y, z) = ((i % 3) as i32 - 1, ((i / 3) % 3) as i32 - 1, (i / 9) as i32 - 1);
        i != 13 && (x.abs() + y.abs() + z.abs()) <= 2
    };
    let is_face = |i: usize| {
        let (x, y, z) = ((i % 3) as i32 - 1, ((i / 3) % 3) as i32 - 1, (i / 9) as i32 - 1);
        x.abs() + y.abs() + z.abs() == 1
    };
    let mut visited = [false; 27];
    let mut count = 0;
    for start in 0..27 {
        if !in_n18(start) || nb[start] || visited[start] || !is_face(start) {
            continue;
        }
        // Flood this background component through 6-adjacency within N18.
        count += 1;
        let mut stack = vec![start];
        visited[start] = true;
        while let Some(i) = stack.pop() {
            let (ix, iy, iz) = ((i % 3) as i32, ((i / 3) % 3) as i32, (i / 9) as i32);
            for j in 0..27 {
                if !in_n18(j) || visited[j] || nb[j] {
                    continue;
                }
                let (jx, jy, jz) = ((j % 3) as i32, ((j / 3) % 3) as i32, (j / 9) as i32);
                if (ix - jx).abs() + (iy - jy).abs() + (iz - jz).abs() == 1 {
                    visited[j] = true;
                    stack.push(j);
                }
            }
        }
    }
    count
}

/// True if deleting the point leaves foreground 26-topology and background
/// 6-topology unchanged in its neighborhood.
pub(crate) fn is_simple(nb: &[bool; 27]) -> bool {
    fg_components_26(nb) == 1 && bg_components_6(nb) == 1
}

const DIRECTIONS: [[i32; 3]; 6] = [
    [0, 0, -1],
    [0, 0, 1],
    [0, -1, 0],
    [0, 1, 0],
    [-1, 0, 0],
    [1, 0, 0],
];

/// Topology-preserving iterative thinning to a curve skeleton.
///
/// Deterministic: candidates are gathered per face direction and deleted
/// sequentially in scan order, re-checking simplicity after each deletion.
/// Re-thinning a skeleton changes nothing (fixed point).
pub fn skeletonize(mask: &BinaryMask) -> BinaryMask {
    let grid = mask.grid();
    let [nx, ny, nz] = grid.dims();
    let mut out = mask.clone();
    loop {
        let mut deleted = 0usize;
        for dir in DIRECTIONS {
            // Border points in this direction.
            let candidates: Vec<[usize; 3]> = out
                .iter_set()
                .filter(|&[x, y, z]| {
                    let px = x as i32 + dir[0];
                    let py = y as i32 + dir[1];
                    let pz = z as i32 + dir[2];
                    let inside = px >= 0
                        && py >= 0
                        && pz >= 0
                        && (px as usize) < nx
                        && (py as usize) < ny
                        && (pz as usize) < nz;
                    !(inside && out.get(px as usize, py as usize, pz as usize))
                })
                .collect();
            for [x, y, z] in candidates {
                let nb = neighborhood(&out, x, y, z);
                if count_fg_neighbors(&nb) >= 2 && is_simple(&nb) {
                    out.set(x, y, z, false);
                    deleted += 1;
                }
            }
        }
        if deleted == 0 {
            break;
        }
    }
    out
}

/// Skeleton dilated by a ball of `tube_radius`; radius 0 is the plain
/// skeleton.
pub fn tubed_skeleton(mask: &BinaryMask, tube_radius: f64) -> Result<BinaryMask> {
    if tube_radius < 0.0 {
        return Err(Error::NegativeRadius(tube_radius));
    }
    let skel = skeletonize(mask);
    dilate(&skel, tube_radius, DistanceMetric::IndexEuclidean)
}

/// Tubed skeletons for every foreground class of the volume.
pub fn skeletons_for_volume(vol: &LabelVolume, tube_radius: f64) -> SkeletonMask {
    let classes = vol
        .class_map()
        .foreground_ids()
        .map(|c| {
            let mask = class_mask(vol, c).expect("registered class");
            let skel = tubed_skeleton(&mask, tube_radius).expect("non-negative radius");
            (c, skel)
        })
        .collect();
    SkeletonMask::new(classes, tube_radius)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::voxel::{connected_components, ClassMap, Connectivity, VoxelGrid3};

    fn grid(d: [usize; 3]) -> VoxelGrid3 {
        VoxelGrid3::new(d, [1.0; 3])
    }

    #[test]
    fn thin_line_is_already_a_skeleton() {
        let g = grid([20, 7, 7]);
        let line = BinaryMask::from_fn(g, |x, y, z| y == 3 && z == 3 && (2..18).contains(&x));
        assert_eq!(skeletonize(&line), line);
    }

    #[test]
    fn empty_mask_stays_empty() {
        let m = BinaryMask::empty(grid([8, 8, 8]));
        assert_eq!(skeletonize(&m), m);
    }

    #[test]
    fn solid_cylinder_thins_to_near_axis_curve() {
        let g = grid([17, 17, 44]);
        let cyl = BinaryMask::from_fn(g, |x, y, z| {
            let dx = x as f64 - 8.0;
            let dy = y as f64 - 8.0;
            (2..42).contains(&z) && dx * dx + dy * dy <= 16.0
        });
        let skel = skeletonize(&cyl);
        assert!(skel.is_subset_of(&cyl));
        assert_eq!(connected_components(&skel, Connectivity::TwentySix).count(), 1);
        for [x, y, _] in skel.iter_set() {
            let r = ((x as f64 - 8.0).powi(2) + (y as f64 - 8.0).powi(2)).sqrt();
            assert!(r <= 1.5, "skeleton voxel {r} voxels off the axis");
        }
        // The curve must span most of the cylinder length.
        let zs: Vec<usize> = skel.iter_set().map(|[_, _, z]| z).collect();
        let (zmin, zmax) = (*zs.iter().min().unwrap(), *zs.iter().max().unwrap());
        assert!(zmax - zmin >= 30);
    }

    #[test]
    fn thinning_is_a_fixed_point() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        for seed in 0..5 {
            let g = grid([12, 12, 12]);
            let _ = seed;
            let bits: Vec<bool> = (0..g.len()).map(|_| rng.gen_bool(0.35)).collect();
            let m = BinaryMask::new(g, bits).unwrap();
            let s1 = skeletonize(&m);
            let s2 = skeletonize(&s1);
            assert_eq!(s1, s2);
        }
    }

    #[test]
    fn thinning_preserves_component_count() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(33);
        for _ in 0..10 {
            let g = grid([14, 14, 14]);
            let bits: Vec<bool> = (0..g.len()).map(|_| rng.gen_bool(0.3)).collect();
            let m = BinaryMask::new(g, bits).unwrap();
            let s = skeletonize(&m);
            assert_eq!(
                connected_components(&m, Connectivity::TwentySix).count(),
                connected_components(&s, Connectivity::TwentySix).count()
            );
            assert!(s.is_subset_of(&m));
        }
    }

    #[test]
    fn tubed_radius_zero_equals_plain_skeleton() {
        let g = grid([16, 8, 8]);
        let m = BinaryMask::from_fn(g, |x, y, z| (2..14).contains(&x) && (3..6).contains(&y) && (3..6).contains(&z));
        assert_eq!(tubed_skeleton(&m, 0.0).unwrap(), skeletonize(&m));
    }

    #[test]
    fn tubed_line_matches_brute_force_dilation() {
        let g = grid([24, 9, 9]);
        let line = BinaryMask::from_fn(g.clone(), |x, y, z| y == 4 && z == 4 && (2..22).contains(&x));
        let tube = tubed_skeleton(&line, 1.0).unwrap();
        // Brute force: every voxel within distance 1 of some line voxel.
        let pts: Vec<[usize; 3]> = line.iter_set().collect();
        let oracle = BinaryMask::from_fn(g, |x, y, z| {
            pts.iter().any(|&[px, py, pz]| {
                let d2 = (x as f64 - px as f64).powi(2)
                    + (y as f64 - py as f64).powi(2)
                    + (z as f64 - pz as f64).powi(2);
                d2 <= 1.0 + 1e-9
            })
        });
        assert_eq!(tube, oracle);
        // Interior cross profile is 5 voxels; the two line ends add one cap
        // voxel each.
        assert_eq!(tube.count(), 20 * 5 + 2);
    }

    #[test]
    fn tubed_negative_radius_errors() {
        let m = BinaryMask::empty(grid([4, 4, 4]));
        assert!(tubed_skeleton(&m, -0.5).is_err());
    }

    #[test]
    fn y_bifurcation_stays_connected() {
        let g = grid([32, 32, 32]);
        // Trunk along z, splitting into two diagonal branches.
        let m = BinaryMask::from_fn(g, |x, y, z| {
            let trunk = z < 16
                && (x as f64 - 16.0).powi(2) + (y as f64 - 16.0).powi(2) <= 9.0;
            let b1 = z >= 14 && {
                let cx = 16.0 - (z as f64 - 14.0) * 0.6;
                (x as f64 - cx).powi(2) + (y as f64 - 16.0).powi(2) <= 6.25
            };
            let b2 = z >= 14 && {
                let cx = 16.0 + (z as f64 - 14.0) * 0.6;
                (x as f64 - cx).powi(2) + (y as f64 - 16.0).powi(2) <= 6.25
            };
            trunk || b1 || b2
        });
        assert_eq!(connected_components(&m, Connectivity::TwentySix).count(), 1);
        let tube = tubed_skeleton(&m, 1.0).unwrap();
        assert_eq!(connected_components(&tube, Connectivity::TwentySix).count(), 1);
        // Both branch tips are covered.
        assert!(tube.iter_set().any(|[x, _, z]| z >= 28 && x < 12));
        assert!(tube.iter_set().any(|[x, _, z]| z >= 28 && x > 20));
    }

    #[test]
    fn skeletons_for_volume_covers_foreground_classes() {
        let g = grid([20, 20, 20]);
        let map = ClassMap::canonical_tavr();
        let mut vol = LabelVolume::background(g.clone(), map);
        let a = BinaryMask::from_fn(g.clone(), |x, y, z| x < 5 && y < 5 && z < 12);
        let b = BinaryMask::from_fn(g, |x, y, z| x > 12 && y > 12 && (4..16).contains(&z));
        vol.paint(&a, ClassId(1)).unwrap();
        vol.paint(&b, ClassId(2)).unwrap();

        let skel = skeletons_for_volume(&vol, 0.0);
        assert_eq!(skel.classes().len(), 7); // all foreground classes listed
        let s1 = skel.mask(ClassId(1)).unwrap();
        assert_eq!(s1, &tubed_skeleton(&a, 0.0).unwrap());
        for (c, m) in skel.classes() {
            let src = class_mask(&vol, *c).unwrap();
            assert_eq!(
                connected_components(m, Connectivity::TwentySix).count(),
                connected_components(&src, Connectivity::TwentySix).count()
            );
        }
    }

    #[test]
    fn all_background_volume_has_empty_skeletons() {
        let vol = LabelVolume::background(grid([8, 8, 8]), ClassMap::canonical_tavr());
        let skel = skeletons_for_volume(&vol, 0.0);
        assert!(skel.classes().iter().all(|(_, m)| m.is_all_clear()));
    }
}
