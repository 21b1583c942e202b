//! Synthetic label volumes with analytically known anatomy.
//!
//! Phantoms voxelize analytic solids by voxel-center inclusion (no
//! anti-aliasing), so every derived quantity has a closed-form oracle: the
//! interface plane of two boxes, the waist of a cylinder-with-bulb at
//! `z_bulb + sqrt(R^2 - r^2)`, the extrema of a radius profile. Optional
//! jitter toggles only simple boundary voxels, preserving topology.
//!
//! # Example
//!
//! ```
//! use tavr_core::phantom::{generate, PhantomSpec};
//! use tavr_core::voxel::VoxelGrid3;
//!
//! let grid = VoxelGrid3::isotropic([40, 40, 64], 1.0);
//! let (_vol, truth) = generate(&PhantomSpec::cylinder_bulb(5.0, 12.0, 40.0), &grid).unwrap();
//! let waist = truth.waist_z.unwrap();
//! assert!((waist - (40.0 + (144.0_f64 - 25.0).sqrt())).abs() < 1e-12);
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::enrich::PlaneFrame;
use crate::skeleton::{is_simple, neighborhood};
use crate::voxel::{connected_components, BinaryMask, ClassId, ClassMap, Connectivity, LabelVolume, VoxelGrid3};
use crate::{Error, Result};

/// Geometry of a phantom volume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PhantomKind {
    /// Ventricle box below, aorta box above, separated by `gap` empty
    /// z-slices.
    BoxInterface { gap: usize },
    /// Aorta cylinder along z with a spherical bulb; ventricle cylinder
    /// below the interface.
    CylinderBulb {
        tube_radius: f64,
        bulb_radius: f64,
        bulb_center_z: f64,
    },
    /// Aorta tube whose radius varies with z as the sampled profile.
    RadiusProfile { profile: Vec<f64> },
    /// Trunk along z splitting into two diagonal branches (iliac analog).
    YBifurcation {
        trunk_radius: f64,
        branch_radius: f64,
        split_z: usize,
        slope: f64,
    },
    /// All seven foreground classes, pairwise disjoint by construction.
    SevenClassComposite,
}

/// A phantom recipe: geometry, boundary jitter probability, RNG seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub kind: PhantomKind,
    /// Probability of deleting a simple boundary voxel; 0 disables jitter.
    pub jitter: f64,
    pub seed: u64,
}

impl PhantomSpec {
    pub fn new(kind: PhantomKind) -> Self {
        Self { kind, jitter: 0.0, seed: 0 }
    }

    pub fn cylinder_bulb(tube_radius: f64, bulb_radius: f64, bulb_center_z: f64) -> Self {
        Self::new(PhantomKind::CylinderBulb { tube_radius, bulb_radius, bulb_center_z })
    }

    pub fn with_jitter(mut self, jitter: f64, seed: u64) -> Self {
        self.jitter = jitter;
        self.seed = seed;
        self
    }
}

/// Analytic answers shipped with a generated phantom.
#[derive(Debug, Clone)]
pub struct GroundTruthRecord {
    /// First aorta z-slice (the aorta side of the interface), if the phantom
    /// has an aorta/ventricle interface.
    pub interface_z: Option<usize>,
    /// The analytic annulus plane.
    pub plane: Option<PlaneFrame>,
    /// Expected valve voxels under the distance-3 rule (brute force).
    pub expected_valve: Option<BinaryMask>,
    /// Expected annulus voxels under the distance-1 rule (brute force).
    pub expected_annulus: Option<BinaryMask>,
    /// Analytic waist position along z: `z_bulb + sqrt(R^2 - r^2)`.
    pub waist_z: Option<f64>,
    /// 26-connected component count per foreground class.
    pub component_counts: Vec<(ClassId, usize)>,
}

fn check_inside(grid: &VoxelGrid3, ok: bool, what: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidPhantom(format!(
            "{what} does not fit inside grid {:?}",
            grid.dims()
        )))
    }
}

/// Brute-force distance-rule oracle: voxels of `of` with min pairwise
/// Euclidean index distance to `to` at most `threshold`.
pub fn brute_force_within(of: &BinaryMask, to: &BinaryMask, threshold: f64) -> BinaryMask {
    let targets: Vec<[usize; 3]> = to.iter_set().collect();
    let mut out = BinaryMask::empty(of.grid().clone());
    for [x, y, z] in of.iter_set() {
        let near = targets.iter().any(|&[tx, ty, tz]| {
            let dx = x as f64 - tx as f64;
            let dy = y as f64 - ty as f64;
            let dz = z as f64 - tz as f64;
            (dx * dx + dy * dy + dz * dz).sqrt() <= threshold + 1e-9
        });
        if near {
            out.set(x, y, z, true);
        }
    }
    out
}

/// Delete simple boundary voxels with probability `p`, preserving topology.
fn jitter_mask(mask: &mut BinaryMask, p: f64, rng: &mut ChaCha8Rng) {
    if p <= 0.0 {
        return;
    }
    let boundary: Vec<[usize; 3]> = mask
        .iter_set()
        .filter(|&[x, y, z]| {
            let nb = neighborhood(mask, x, y, z);
            nb.iter().any(|&b| !b)
        })
        .collect();
    for [x, y, z] in boundary {
        if rng.gen_bool(p.min(1.0)) && is_simple(&neighborhood(mask, x, y, z)) {
            mask.set(x, y, z, false);
        }
    }
}

fn cylinder(grid: &VoxelGrid3, cx: f64, cy: f64, r: f64, zr: std::ops::Range<usize>) -> BinaryMask {
    BinaryMask::from_fn(grid.clone(), |x, y, z| {
        let dx = x as f64 - cx;
        let dy = y as f64 - cy;
        zr.contains(&z) && dx * dx + dy * dy <= r * r
    })
}

struct CompositeParts {
    aorta: BinaryMask,
    ventricle: Option<BinaryMask>,
    iliac_left: Option<BinaryMask>,
    iliac_right: Option<BinaryMask>,
    interface_z: Option<usize>,
    waist_z: Option<f64>,
}

fn build_parts(spec: &PhantomSpec, grid: &VoxelGrid3) -> Result<CompositeParts> {
    let [nx, ny, nz] = grid.dims();
    let cx = (nx / 2) as f64;
    let cy = (ny / 2) as f64;
    match &spec.kind {
        PhantomKind::BoxInterface { gap } => {
            let zs = nz / 3;
            check_inside(grid, nx >= 8 && ny >= 8 && zs >= 3 && zs + gap + 3 < nz, "boxes")?;
            let ventricle = BinaryMask::from_fn(grid.clone(), |x, y, z| {
                (2..nx - 2).contains(&x) && (2..ny - 2).contains(&y) && (2..zs).contains(&z)
            });
            let aorta = BinaryMask::from_fn(grid.clone(), |x, y, z| {
                (2..nx - 2).contains(&x)
                    && (2..ny - 2).contains(&y)
                    && (zs + gap..nz - 2).contains(&z)
            });
            Ok(CompositeParts {
                aorta,
                ventricle: Some(ventricle),
                iliac_left: None,
                iliac_right: None,
                interface_z: Some(zs + gap),
                waist_z: None,
            })
        }
        PhantomKind::CylinderBulb { tube_radius, bulb_radius, bulb_center_z } => {
            let (r, big_r, zb) = (*tube_radius, *bulb_radius, *bulb_center_z);
            if !(r > 0.0 && big_r > r) {
                return Err(Error::InvalidPhantom(
                    "need bulb_radius > tube_radius > 0".into(),
                ));
            }
            let iz = nz / 8;
            check_inside(
                grid,
                cx - big_r >= 1.0
                    && cx + big_r < (nx - 1) as f64
                    && zb + big_r < (nz - 2) as f64
                    && zb - big_r > iz as f64
                    && iz >= 3,
                "cylinder with bulb",
            )?;
            let ventricle = cylinder(grid, cx, cy, r + 4.0, 2..iz);
            let aorta = BinaryMask::from_fn(grid.clone(), |x, y, z| {
                let dx = x as f64 - cx;
                let dy = y as f64 - cy;
                let dz = z as f64 - zb;
                let in_cyl = (iz..nz - 2).contains(&z) && dx * dx + dy * dy <= r * r;
                let in_bulb = z >= iz && dx * dx + dy * dy + dz * dz <= big_r * big_r;
                in_cyl || in_bulb
            });
            Ok(CompositeParts {
                aorta,
                ventricle: Some(ventricle),
                iliac_left: None,
                iliac_right: None,
                interface_z: Some(iz),
                waist_z: Some(zb + (big_r * big_r - r * r).sqrt()),
            })
        }
        PhantomKind::RadiusProfile { profile } => {
            if profile.iter().any(|&r| !(r > 0.0)) {
                return Err(Error::InvalidPhantom("radius profile must be positive".into()));
            }
            check_inside(
                grid,
                profile.len() <= nz
                    && profile.iter().all(|&r| cx - r >= 0.0 && cx + r < nx as f64),
                "radius profile tube",
            )?;
            let profile = profile.clone();
            let aorta = BinaryMask::from_fn(grid.clone(), |x, y, z| {
                z < profile.len() && {
                    let r = profile[z];
                    let dx = x as f64 - cx;
                    let dy = y as f64 - cy;
                    dx * dx + dy * dy <= r * r
                }
            });
            Ok(CompositeParts {
                aorta,
                ventricle: None,
                iliac_left: None,
                iliac_right: None,
                interface_z: None,
                waist_z: None,
            })
        }
        PhantomKind::YBifurcation { trunk_radius, branch_radius, split_z, slope } => {
            let (rt, rb, zs, k) = (*trunk_radius, *branch_radius, *split_z, *slope);
            if !(rt > 0.0 && rb > 0.0 && k > 0.0) {
                return Err(Error::InvalidPhantom("radii and slope must be positive".into()));
            }
            let spread = k * (nz - zs) as f64;
            check_inside(
                grid,
                zs + 2 < nz && cx - spread - rb >= 0.0 && cx + spread + rb < nx as f64,
                "bifurcation",
            )?;
            let aorta = BinaryMask::from_fn(grid.clone(), |x, y, z| {
                let dy = y as f64 - cy;
                let trunk = z < zs + 2 && (x as f64 - cx).powi(2) + dy * dy <= rt * rt;
                let branch = |sign: f64| {
                    z >= zs && {
                        let bx = cx + sign * k * (z - zs) as f64;
                        (x as f64 - bx).powi(2) + dy * dy <= rb * rb
                    }
                };
                trunk || branch(-1.0) || branch(1.0)
            });
            Ok(CompositeParts {
                aorta,
                ventricle: None,
                iliac_left: None,
                iliac_right: None,
                interface_z: None,
                waist_z: None,
            })
        }
        PhantomKind::SevenClassComposite => {
            check_inside(grid, nx >= 40 && ny >= 40 && nz >= 56, "composite")?;
            let bulb = PhantomSpec::cylinder_bulb(5.0, 10.0, (nz / 3) as f64);
            let mut parts = build_parts(&bulb, grid)?;
            parts.iliac_left = Some(cylinder(grid, 6.0, cy, 1.2, 8..nz - 8));
            parts.iliac_right = Some(cylinder(grid, (nx - 7) as f64, cy, 1.2, 8..nz - 8));
            Ok(parts)
        }
    }
}

/// Generate a phantom volume with its analytic ground truth.
pub fn generate(spec: &PhantomSpec, grid: &VoxelGrid3) -> Result<(LabelVolume, GroundTruthRecord)> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut parts = build_parts(spec, grid)?;
    jitter_mask(&mut parts.aorta, spec.jitter, &mut rng);
    if let Some(v) = &mut parts.ventricle {
        jitter_mask(v, spec.jitter, &mut rng);
    }

    let map = ClassMap::canonical_tavr();
    let mut vol = LabelVolume::background(grid.clone(), map.clone());
    vol.paint(&parts.aorta, ClassId(1))?;
    if let Some(v) = &parts.ventricle {
        vol.paint(v, ClassId(2))?;
    }
    if let Some(m) = &parts.iliac_left {
        vol.paint(m, ClassId(6))?;
    }
    if let Some(m) = &parts.iliac_right {
        vol.paint(m, ClassId(7))?;
    }

    // The composite also carries the derived classes, disjoint by painting
    // order: root below the waist, annulus at the interface, valve on top.
    if matches!(spec.kind, PhantomKind::SevenClassComposite) {
        let iz = parts.interface_z.unwrap();
        let waist = parts.waist_z.unwrap();
        let root = BinaryMask::from_fn(grid.clone(), |x, y, z| {
            parts.aorta.get(x, y, z) && (z as f64) >= iz as f64 && (z as f64) <= waist
        });
        let annulus = BinaryMask::from_fn(grid.clone(), |x, y, z| {
            parts.ventricle.as_ref().is_some_and(|v| v.get(x, y, z)) && z == iz - 1
        });
        let valve = BinaryMask::from_fn(grid.clone(), |x, y, z| {
            parts.aorta.get(x, y, z) && (iz..iz + 3).contains(&z)
        });
        vol.paint(&root, ClassId(3))?;
        vol.paint(&annulus, ClassId(5))?;
        vol.paint(&valve, ClassId(4))?;
    }

    let (expected_valve, expected_annulus, plane) = match &parts.ventricle {
        Some(v) => {
            let valve = brute_force_within(&parts.aorta, v, 3.0);
            let annulus = brute_force_within(v, &parts.aorta, 1.0);
            let plane = parts.interface_z.map(|iz| PlaneFrame {
                point: [(grid.dims()[0] / 2) as f64, (grid.dims()[1] / 2) as f64, iz as f64 - 1.0],
                normal: [0.0, 0.0, 1.0],
            });
            (Some(valve), Some(annulus), plane)
        }
        None => (None, None, None),
    };

    let component_counts = map
        .foreground_ids()
        .filter_map(|c| {
            let m = crate::voxel::class_mask(&vol, c).ok()?;
            (m.count() > 0)
                .then(|| (c, connected_components(&m, Connectivity::TwentySix).count()))
        })
        .collect();

    Ok((
        vol,
        GroundTruthRecord {
            interface_z: parts.interface_z,
            plane,
            expected_valve,
            expected_annulus,
            waist_z: parts.waist_z,
            component_counts,
        },
    ))
}

/// Aorta-only tube with the sampled radius profile `r(z)`.
pub fn radius_profile_phantom(profile: &[f64], grid: &VoxelGrid3) -> Result<LabelVolume> {
    let spec = PhantomSpec::new(PhantomKind::RadiusProfile { profile: profile.to_vec() });
    generate(&spec, grid).map(|(vol, _)| vol)
}
