//! Dataset manifest: the JSON index of cases and their train/val/test split.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Split::Train => write!(f, "train"),
            Split::Val => write!(f, "val"),
            Split::Test => write!(f, "test"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CaseEntry {
    pub case_id: String,
    pub label_path: PathBuf,
    pub split: Split,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub cases: Vec<CaseEntry>,
}

impl DatasetManifest {
    /// Load and structurally validate a manifest. With `lenient`, missing
    /// files are warnings on stderr instead of errors.
    pub fn load(path: &Path, lenient: bool) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading manifest {}", path.display()))?;
        let manifest: DatasetManifest =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let mut seen = HashSet::new();
        for case in &manifest.cases {
            if !seen.insert(case.case_id.as_str()) {
                bail!("duplicate case_id {:?}", case.case_id);
            }
            let resolved = manifest.resolve(base, case);
            if !resolved.exists() {
                if lenient {
                    eprintln!("warning: {}: missing {}", case.case_id, resolved.display());
                } else {
                    bail!("{}: missing label file {}", case.case_id, resolved.display());
                }
            }
        }
        Ok(manifest)
    }

    /// Label paths are interpreted relative to the manifest's directory.
    pub fn resolve(&self, base: &Path, case: &CaseEntry) -> PathBuf {
        if case.label_path.is_absolute() {
            case.label_path.clone()
        } else {
            base.join(&case.label_path)
        }
    }

    pub fn split_counts(&self) -> (usize, usize, usize) {
        let mut counts = (0, 0, 0);
        for c in &self.cases {
            match c.split {
                Split::Train => counts.0 += 1,
                Split::Val => counts.1 += 1,
                Split::Test => counts.2 += 1,
            }
        }
        counts
    }
}
