//! Volumetric label enrichment and loss engineering for TAVR segmentation data.
//!
//! This crate derives TAVR-relevant anatomy pseudo-labels (valve, annulus,
//! aortic root) from coarse CT segmentations, computes class skeletons, and
//! implements a family of differentiable segmentation losses built around
//! skeleton recall with focal weighting. The pipeline stages are:
//!
//! 1. **voxel** – grids, label volumes, exact Euclidean distance transforms,
//!    morphology and connected components.
//! 2. **enrich** – distance-rule extraction of valve and annulus, least-squares
//!    annulus plane, cross-section sweep and aortic-root extent detection.
//! 3. **skeleton** – topology-preserving 3D thinning, optional tubed skeletons.
//! 4. **losses** – Dice+CE, focal, skeleton recall, focal skeleton recall and
//!    combined objectives, each with analytic gradients w.r.t. probabilities
//!    and logits.
//! 5. **metrics** – per-class and mean Dice/IoU reports.
//! 6. **phantom** – synthetic label volumes with analytically known anatomy,
//!    the oracles for every geometric operation.
//! 7. **optim** – desk-scale gradient descent of a logit field against any
//!    configured loss, making the losses' behavior observable end to end.
//!
//! # Example
//!
//! Enrich a synthetic volume and evaluate a loss on it:
//!
//! ```
//! use tavr_core::enrich::{enrich_volume, EnrichConfig};
//! use tavr_core::losses::{combined_loss, softmax, LogitField, LossConfig, Objective};
//! use tavr_core::phantom::{generate, PhantomSpec};
//! use tavr_core::skeleton::skeletons_for_volume;
//! use tavr_core::voxel::VoxelGrid3;
//!
//! let grid = VoxelGrid3::isotropic([32, 32, 48], 1.0);
//! let (vol, _truth) = generate(&PhantomSpec::cylinder_bulb(4.0, 8.0, 30.0), &grid).unwrap();
//! let (enriched, root) = enrich_volume(&vol, &EnrichConfig::default()).unwrap();
//! assert!(root.min_distance.is_some());
//!
//! let skel = skeletons_for_volume(&enriched, 0.0);
//! let logits = LogitField::zeros(grid.clone(), enriched.class_map().len());
//! let p = softmax(&logits).unwrap();
//! let cfg = LossConfig::default();
//! let eval = combined_loss(&p, &enriched, &skel, Objective::FocalSkStar, &cfg).unwrap();
//! assert!(eval.report.total.is_finite());
//! ```

// Config validation uses `!(x > 0.0)` on purpose: unlike `x <= 0.0`, it also
// rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod enrich;
pub mod losses;
pub mod metrics;
pub mod optim;
pub mod phantom;
pub mod skeleton;
pub mod voxel;

mod error;

pub use error::Error;

/// Crate-wide result type.
pub type Result<T> = std::result::Result<T, Error>;
