//! NIfTI-1 reading and writing for label volumes (u8) and logit fields
//! (f32, channels as the 4th dimension).
//!
//! All files are little-endian single-file volumes (.nii / .nii.gz). Writes
//! go through a temporary file in the destination directory followed by a
//! rename, so a crash never leaves a half-written volume behind.

use std::path::Path;

use anyhow::{bail, Context, Result};
use ndarray::{Array3, Array4, ShapeBuilder};
use nifti::writer::WriterOptions;
use nifti::{IntoNdArray, NiftiHeader, NiftiObject, NiftiVolume, ReaderOptions};

use tavr_core::losses::LogitField;
use tavr_core::voxel::{ClassMap, LabelVolume, VoxelGrid3};

fn grid_from_header(header: &NiftiHeader, dims: [usize; 3]) -> Result<VoxelGrid3> {
    let spacing = [
        header.pixdim[1] as f64,
        header.pixdim[2] as f64,
        header.pixdim[3] as f64,
    ];
    let affine = if header.sform_code > 0 {
        let rows = [header.srow_x, header.srow_y, header.srow_z];
        let mut a = [[0.0f64; 4]; 4];
        for (r, row) in rows.iter().enumerate() {
            for (c, &v) in row.iter().enumerate() {
                a[r][c] = v as f64;
            }
        }
        a[3] = [0.0, 0.0, 0.0, 1.0];
        a
    } else {
        [
            [spacing[0], 0.0, 0.0, 0.0],
            [0.0, spacing[1], 0.0, 0.0],
            [0.0, 0.0, spacing[2], 0.0],
            [0.0, 0.0, 0.0, 1.0],
        ]
    };
    VoxelGrid3::with_affine(dims, spacing, affine)
        .with_context(|| "invalid grid geometry in NIfTI header")
}

fn header_for_grid(grid: &VoxelGrid3) -> NiftiHeader {
    let s = grid.spacing();
    let a = grid.affine();
    let row = |r: usize| -> [f32; 4] {
        [a[r][0] as f32, a[r][1] as f32, a[r][2] as f32, a[r][3] as f32]
    };
    let mut pixdim = [1.0f32; 8];
    pixdim[1] = s[0] as f32;
    pixdim[2] = s[1] as f32;
    pixdim[3] = s[2] as f32;
    // dim/datatype are filled in by the writer from the array itself.
    NiftiHeader {
        pixdim,
        sform_code: 1,
        qform_code: 0,
        srow_x: row(0),
        srow_y: row(1),
        srow_z: row(2),
        xyzt_units: 2, // millimeters
        ..NiftiHeader::default()
    }
}

/// Write through a sibling temp file, then rename into place.
fn atomic_write(path: &Path, write: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let tmp = match dir {
        Some(d) => tempfile::Builder::new().prefix(".tavr-tmp").tempdir_in(d)?,
        None => tempfile::Builder::new().prefix(".tavr-tmp").tempdir_in(".")?,
    };
    let file_name = path.file_name().context("output path has no file name")?;
    let tmp_path = tmp.path().join(file_name);
    write(&tmp_path)?;
    std::fs::rename(&tmp_path, path)
        .with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

/// Read a label volume, remapping source IDs through `label_map` before
/// validating against the class map.
pub fn read_labels(
    path: &Path,
    map: &ClassMap,
    label_map: &std::collections::HashMap<u8, u8>,
) -> Result<LabelVolume> {
    let obj = ReaderOptions::new()
        .read_file(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let dims = obj.volume().dim().to_vec();
    if dims.len() != 3 {
        bail!("{}: expected a 3D label volume, got {}D", path.display(), dims.len());
    }
    let dims = [dims[0] as usize, dims[1] as usize, dims[2] as usize];
    let grid = grid_from_header(obj.header(), dims)?;
    let arr = obj
        .into_volume()
        .into_ndarray::<u8>()
        .with_context(|| format!("{}: label data is not integer-valued", path.display()))?;
    // `t()` reverses axes; iterating the view row-major yields x fastest.
    let mut voxels: Vec<u8> = arr.t().iter().copied().collect();
    if !label_map.is_empty() {
        for v in voxels.iter_mut() {
            if let Some(&to) = label_map.get(v) {
                *v = to;
            }
        }
    }
    LabelVolume::new(grid, map.clone(), voxels)
        .with_context(|| format!("{}: labels outside the class map", path.display()))
}

pub fn write_labels(path: &Path, vol: &LabelVolume) -> Result<()> {
    let [nx, ny, nz] = vol.grid().dims();
    let arr = Array3::from_shape_vec((nx, ny, nz).f(), vol.voxels().to_vec())?;
    let header = header_for_grid(vol.grid());
    let compress = path.extension().is_some_and(|e| e == "gz");
    atomic_write(path, |tmp| {
        WriterOptions::new(tmp)
            .reference_header(&header)
            .compress(compress)
            .write_nifti(&arr)
            .with_context(|| format!("writing {}", path.display()))
    })
}

pub fn read_logits(path: &Path) -> Result<LogitField> {
    let obj = ReaderOptions::new()
        .read_file(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let dims = obj.volume().dim().to_vec();
    if dims.len() != 4 {
        bail!("{}: expected a 4D logit volume, got {}D", path.display(), dims.len());
    }
    let [nx, ny, nz, nc] = [
        dims[0] as usize,
        dims[1] as usize,
        dims[2] as usize,
        dims[3] as usize,
    ];
    let grid = grid_from_header(obj.header(), [nx, ny, nz])?;
    let arr = obj.into_volume().into_ndarray::<f32>()?;
    // Reversed-axes iteration puts the channel outermost, matching the
    // channel-major layout of LogitField.
    let values: Vec<f64> = arr.t().iter().map(|&v| v as f64).collect();
    LogitField::new(grid, nc, values).context("building logit field")
}

pub fn write_logits(path: &Path, logits: &LogitField) -> Result<()> {
    let [nx, ny, nz] = logits.grid().dims();
    let nc = logits.channels();
    let values: Vec<f32> = logits.values().iter().map(|&v| v as f32).collect();
    let arr = Array4::from_shape_vec((nx, ny, nz, nc).f(), values)?;
    let header = header_for_grid(logits.grid());
    let compress = path.extension().is_some_and(|e| e == "gz");
    atomic_write(path, |tmp| {
        WriterOptions::new(tmp)
            .reference_header(&header)
            .compress(compress)
            .write_nifti(&arr)
            .with_context(|| format!("writing {}", path.display()))
    })
}

/// Write any text file atomically (reports, CSV curves, traces).
pub fn write_text(path: &Path, contents: &str) -> Result<()> {
    atomic_write(path, |tmp| {
        std::fs::write(tmp, contents).with_context(|| format!("writing {}", path.display()))
    })
}
