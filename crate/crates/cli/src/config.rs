//! Plain-text key=value configuration shared by the subcommands.
//!
//! Keys mirror the library config field names (`valve_distance`, `gamma`,
//! ...). `label.<class_name> = <source_id>` entries remap label IDs from a
//! source dataset encoding to the canonical class map; unmapped canonical IDs
//! pass through unchanged.

use std::collections::HashMap;
use std::path::Path;
use std::str::FromStr;

use anyhow::{bail, Context, Result};

use tavr_core::enrich::EnrichConfig;
use tavr_core::losses::{FocalSrMode, LossConfig};
use tavr_core::voxel::ClassMap;

#[derive(Debug, Clone, Default)]
pub struct RunConfig {
    pub enrich: EnrichConfig,
    pub loss: LossConfig,
    /// Source label ID -> canonical class ID.
    pub label_map: HashMap<u8, u8>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg = Self::default();
        let map = ClassMap::canonical_tavr();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!("{}:{}: expected key = value", path.display(), lineno + 1);
            };
            let (key, value) = (key.trim(), value.trim());
            cfg.set(key, value, &map)
                .with_context(|| format!("{}:{}: {key}", path.display(), lineno + 1))?;
        }
        cfg.enrich.validate()?;
        cfg.loss.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str, map: &ClassMap) -> Result<()> {
        fn parse<T: FromStr>(v: &str) -> Result<T>
        where
            T::Err: std::fmt::Display,
        {
            v.parse::<T>().map_err(|e| anyhow::anyhow!("invalid value {v:?}: {e}"))
        }
        match key {
            "valve_distance" => self.enrich.valve_distance = parse(value)?,
            "annulus_distance" => self.enrich.annulus_distance = parse(value)?,
            "sweep_max_distance" => self.enrich.sweep_max_distance = parse(value)?,
            "sweep_step" => self.enrich.sweep_step = parse(value)?,
            "slab_half_width" => self.enrich.slab_half_width = parse(value)?,
            "smoothing_window" => self.enrich.smoothing_window = parse(value)?,
            "gamma" => self.loss.gamma = parse(value)?,
            "dice_weight" => self.loss.dice_weight = parse(value)?,
            "ce_weight" => self.loss.ce_weight = parse(value)?,
            "dice_smooth" => self.loss.dice_smooth = parse(value)?,
            "focal_sr_mode" => {
                self.loss.focal_sr_mode = match value {
                    "coupled" => FocalSrMode::Coupled,
                    "detached" => FocalSrMode::Detached,
                    other => bail!("unknown focal_sr_mode {other:?} (coupled|detached)"),
                }
            }
            _ => {
                if let Some(name) = key.strip_prefix("label.") {
                    let Some(canonical) = map.id_of(name) else {
                        bail!("unknown class name {name:?}");
                    };
                    let source: u8 = parse(value)?;
                    self.label_map.insert(source, canonical.0);
                } else {
                    bail!("unknown config key");
                }
            }
        }
        Ok(())
    }

}
