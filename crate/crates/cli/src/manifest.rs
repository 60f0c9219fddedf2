//! Run metadata. `manifest.json` holds only reproducible content (config,
//! seeds, outputs, status); wall-clock timings go to `timings.json`.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::pipeline::Stage;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub version: String,
    pub status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub seeds: Option<serde_json::Value>,
    pub outputs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub program: String,
    pub version: String,
    pub config: RunConfig,
    pub stages: Vec<StageRecord>,
}

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Option<T> {
    let text = std::fs::read_to_string(path).ok()?;
    serde_json::from_str(&text).ok()
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::create_dir_all(path.parent().unwrap_or(Path::new(".")))?;
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn rank(name: &str) -> usize {
    Stage::ALL.iter().position(|s| s.name() == name).unwrap_or(usize::MAX)
}

/// Merge one stage record into `manifest.json`. Records of other stages are
/// kept when the stored config matches `config`, dropped otherwise.
pub fn record(out: &Path, config: &RunConfig, rec: StageRecord) -> Result<()> {
    let path = out.join("manifest.json");
    let mut m = read_json::<Manifest>(&path)
        .filter(|m| &m.config == config)
        .unwrap_or_else(|| Manifest {
            program: "rangequant".into(),
            version: VERSION.into(),
            config: config.clone(),
            stages: Vec::new(),
        });
    m.stages.retain(|s| s.stage != rec.stage);
    m.stages.push(rec);
    m.stages.sort_by_key(|s| rank(&s.stage));
    write_json(&path, &m)
}

/// Record a stage's wall-clock seconds in `timings.json`.
pub fn record_timing(out: &Path, stage: Stage, seconds: f64) -> Result<()> {
    let path = out.join("timings.json");
    let mut t: BTreeMap<String, f64> = read_json(&path).unwrap_or_default();
    t.insert(stage.name().to_string(), seconds);
    write_json(&path, &t)
}
