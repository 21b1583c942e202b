//! `tavr`: command-line tools for TAVR label enrichment, class skeletons,
//! loss evaluation and segmentation metrics on NIfTI volumes.
//!
//! Exit codes: 0 success, 1 error, 2 case excluded (missing required
//! anatomy).

mod commands;
mod config;
mod manifest;
mod nifti_io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "tavr", version, about = "Volumetric label enrichment and loss tooling for TAVR anatomy")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Derive valve, annulus and aortic-root labels from a coarse aorta +
    /// left-ventricle segmentation.
    Enrich {
        /// Input coarse label volume (.nii / .nii.gz).
        #[arg(long = "in")]
        input: PathBuf,
        /// Output enriched label volume.
        #[arg(long)]
        out: PathBuf,
        /// key=value config file.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Optional JSON report (status, detected extent, voxel counts).
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Cross-section area curve of the aorta along the annulus-plane normal
    /// (CSV: distance,raw_count,smoothed).
    RootCurve {
        /// Input label volume (single-case mode).
        #[arg(long = "in")]
        input: Option<PathBuf>,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
        /// Sum raw counts over every case in --manifest before smoothing.
        #[arg(long)]
        aggregate: bool,
        /// Dataset manifest JSON (required with --aggregate).
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Topology-preserving per-class skeletons, written as a label volume.
    Skeletonize {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Dilate each skeleton back into a tube of this radius (voxels).
        #[arg(long, default_value_t = 0.0)]
        tube_radius: f64,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Per-class Dice and IoU between a prediction and ground truth.
    Metrics {
        /// Predicted label volume (single-case mode).
        #[arg(long)]
        pred: Option<PathBuf>,
        /// Ground-truth label volume (single-case mode).
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Write the report(s) as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Dataset manifest JSON for batch mode.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Directory holding <case_id>.nii.gz predictions (batch mode).
        #[arg(long)]
        pred_dir: Option<PathBuf>,
        /// Print a fixed-width score table to stdout.
        #[arg(long)]
        table: bool,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Evaluate a loss objective on a 4D logit volume against ground truth.
    Loss {
        /// 4D float NIfTI of per-class logits (channels on the 4th axis).
        #[arg(long)]
        pred_logits: PathBuf,
        /// Ground-truth label volume; its class skeletons drive the
        /// skeleton-recall terms.
        #[arg(long)]
        truth: PathBuf,
        /// DiceCE | Focal | DiceCE+SR | Focal+SR | FocalSK*
        #[arg(long)]
        objective: String,
        /// Write the loss report as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Tube radius for the skeleton-recall supervision masks.
        #[arg(long, default_value_t = 0.0)]
        tube_radius: f64,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Check a dataset manifest: unique IDs, readable files, required
    /// anatomy per case, and (optionally) split sizes.
    ValidateDataset {
        #[arg(long)]
        manifest: PathBuf,
        /// Expected train,val,test counts, e.g. 378,100,100.
        #[arg(long)]
        expect_splits: Option<String>,
        /// Downgrade missing files to warnings.
        #[arg(long)]
        lenient: bool,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Generate a synthetic phantom label volume.
    Phantom {
        /// box-interface | cylinder-bulb | y-bifurcation | composite
        #[arg(long)]
        kind: String,
        #[arg(long)]
        out: PathBuf,
        /// Grid dimensions as x,y,z.
        #[arg(long, default_value = "44,44,60", value_parser = parse_dims)]
        dims: Dims,
        /// Isotropic voxel spacing in mm.
        #[arg(long, default_value_t = 1.0)]
        spacing: f64,
        /// Boundary jitter amplitude (0 = clean shapes).
        #[arg(long, default_value_t = 0.0)]
        jitter: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Tube / trunk radius in voxels.
        #[arg(long, default_value_t = 4.0)]
        tube_radius: f64,
        /// Bulb radius for cylinder-bulb.
        #[arg(long, default_value_t = 8.0)]
        bulb_radius: f64,
        /// Bulb center z for cylinder-bulb.
        #[arg(long, default_value_t = 30.0)]
        bulb_z: f64,
        /// Interface gap for box-interface.
        #[arg(long, default_value_t = 0)]
        gap: usize,
    },
    /// Gradient-descent fit of a probability field to a label volume,
    /// recording a loss/metric trace (CSV).
    FitDemo {
        /// Target label volume.
        #[arg(long = "in")]
        input: PathBuf,
        /// DiceCE | Focal | DiceCE+SR | Focal+SR | FocalSK*
        #[arg(long)]
        objective: String,
        #[arg(long, default_value_t = 500)]
        iterations: usize,
        #[arg(long, default_value_t = 0.5)]
        learning_rate: f64,
        /// Record a trace row every N iterations.
        #[arg(long, default_value_t = 1)]
        record_every: usize,
        #[arg(long, default_value_t = 0.0)]
        tube_radius: f64,
        /// Output CSV trace path.
        #[arg(long)]
        trace: PathBuf,
        /// Optionally write the final argmax labels.
        #[arg(long)]
        out_pred: Option<PathBuf>,
        /// Optionally write the final logit field (4D float NIfTI).
        #[arg(long)]
        out_logits: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Clone)]
struct Dims([usize; 3]);

fn parse_dims(s: &str) -> Result<Dims, String> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse().map_err(|e| format!("{e}")))
        .collect::<Result<_, _>>()?;
    match parts.as_slice() {
        [x, y, z] => Ok(Dims([*x, *y, *z])),
        _ => Err("expected three comma-separated sizes, e.g. 44,44,60".into()),
    }
}

fn run(cli: Cli) -> anyhow::Result<i32> {
    match cli.command {
        Command::Enrich { input, out, config, report } => {
            commands::enrich(&input, &out, config.as_ref(), report.as_ref())
        }
        Command::RootCurve { input, out, aggregate, manifest, config } => {
            commands::root_curve(input.as_ref(), &out, aggregate, manifest.as_ref(), config.as_ref())
        }
        Command::Skeletonize { input, out, tube_radius, config } => {
            commands::skeletonize(&input, &out, tube_radius, config.as_ref())
        }
        Command::Metrics { pred, truth, out, manifest, pred_dir, table, config } => {
            commands::metrics(
                pred.as_ref(),
                truth.as_ref(),
                out.as_ref(),
                manifest.as_ref(),
                pred_dir.as_ref(),
                table,
                config.as_ref(),
            )
        }
        Command::Loss { pred_logits, truth, objective, out, tube_radius, config } => {
            commands::loss(&pred_logits, &truth, &objective, out.as_ref(), tube_radius, config.as_ref())
        }
        Command::ValidateDataset { manifest, expect_splits, lenient, config } => {
            commands::validate_dataset(&manifest, expect_splits.as_deref(), lenient, config.as_ref())
        }
        Command::Phantom {
            kind,
            out,
            dims,
            spacing,
            jitter,
            seed,
            tube_radius,
            bulb_radius,
            bulb_z,
            gap,
        } => commands::phantom(
            &kind, &out, dims.0, spacing, jitter, seed, tube_radius, bulb_radius, bulb_z, gap,
        ),
        Command::FitDemo {
            input,
            objective,
            iterations,
            learning_rate,
            record_every,
            tube_radius,
            trace,
            out_pred,
            out_logits,
            seed,
            config,
        } => commands::fit_demo(
            &input,
            &objective,
            iterations,
            learning_rate,
            record_every,
            tube_radius,
            &trace,
            out_pred.as_ref(),
            out_logits.as_ref(),
            config.as_ref(),
            seed,
        ),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
