//! Dataset JSONL, model bundles and small file helpers.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use sas_core::dataset::{DatasetMeta, OfflineDataset, Trajectory};
use sas_core::lyapunov::LyapunovTable;
use sas_core::model::FittedModel;
use sas_core::occupancy::{EnergyTable, OccupancyTable};
use sas_core::world_model::{ContextPolicy, ContextPolicyDoc, LearnedKernel};

use crate::config::RunConfig;
use crate::error::{AppError, AppResult};

pub const BUNDLE_FORMAT: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MetaRecord {
    meta: DatasetMeta,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Canonical JSONL text: the meta record, then one trajectory per line.
pub fn dataset_to_string(ds: &OfflineDataset) -> String {
    let mut out = serde_json::to_string(&MetaRecord { meta: ds.meta.clone() }).expect("meta serializes");
    out.push('\n');
    for t in &ds.trajectories {
        out.push_str(&serde_json::to_string(t).expect("trajectory serializes"));
        out.push('\n');
    }
    out
}

pub fn parse_dataset(text: &str) -> AppResult<OfflineDataset> {
    let err = |line: usize, msg: String| AppError::Runtime(format!("dataset line {line}: {msg}"));
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let Some((_, first)) = lines.next() else {
        return Err(err(1, "empty file".into()));
    };
    let meta = serde_json::from_str::<MetaRecord>(first).map_err(|e| err(1, format!("bad meta record: {e}")))?.meta;
    let mut trajectories = Vec::new();
    for (n, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let t: Trajectory = serde_json::from_str(line).map_err(|e| err(n, e.to_string()))?;
        t.validate_shape().map_err(|e| err(n, e.to_string()))?;
        if t.states.iter().any(|s| *s >= meta.n_states) || t.actions.iter().any(|a| *a >= meta.n_actions) {
            return Err(err(n, "state or action index out of range".into()));
        }
        trajectories.push(t);
    }
    if trajectories.len() != meta.n_traj {
        return Err(AppError::Runtime(format!(
            "dataset declares {} trajectories but holds {}",
            meta.n_traj,
            trajectories.len()
        )));
    }
    let ds = OfflineDataset { meta, trajectories };
    ds.validate()?;
    Ok(ds)
}

/// The dataset and the digest of its file bytes.
pub fn load_dataset(path: &Path) -> AppResult<(OfflineDataset, String)> {
    let bytes = std::fs::read(path).map_err(|e| AppError::io(path, e))?;
    let text = String::from_utf8(bytes).map_err(|_| AppError::Runtime(format!("{}: not UTF-8", path.display())))?;
    let ds = parse_dataset(&text).map_err(|e| AppError::Runtime(format!("{}: {e}", path.display())))?;
    Ok((ds, sha256_hex(text.as_bytes())))
}

pub fn write_text(path: &Path, text: &str) -> AppResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| AppError::io(path, e))
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("value serializes");
    s.push('\n');
    s
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> AppResult<()> {
    write_text(path, &to_json(value))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> AppResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| AppError::Runtime(format!("{}: {e}", path.display())))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelDoc {
    pub n_states: usize,
    pub n_actions: usize,
    pub smoothing: f64,
    /// Row-major `[s][a][s']` transition counts.
    pub counts: Vec<u64>,
}

/// Everything `fit` learns, plus the provenance needed to reuse it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBundle {
    pub format: u32,
    pub config: RunConfig,
    pub dataset_digest: String,
    pub mdp_digest: String,
    pub kernel: KernelDoc,
    pub policy: ContextPolicyDoc,
    pub occupancy: OccupancyTable,
    pub energy: EnergyTable,
    pub g_ldm: LyapunovTable,
    pub g_literal: LyapunovTable,
}

impl ModelBundle {
    pub fn new(config: &RunConfig, dataset_digest: &str, mdp_digest: &str, model: &FittedModel) -> Self {
        use sas_core::env::Dynamics;
        Self {
            format: BUNDLE_FORMAT,
            config: config.clone(),
            dataset_digest: dataset_digest.to_string(),
            mdp_digest: mdp_digest.to_string(),
            kernel: KernelDoc {
                n_states: model.kernel.n_states(),
                n_actions: model.kernel.n_actions(),
                smoothing: model.kernel.smoothing(),
                counts: model.kernel.counts().to_vec(),
            },
            policy: model.policy.to_doc(),
            occupancy: model.occupancy.clone(),
            energy: model.energy.clone(),
            g_ldm: model.g_ldm.clone(),
            g_literal: model.g_literal.clone(),
        }
    }

    pub fn model(&self) -> AppResult<FittedModel> {
        let k = &self.kernel;
        Ok(FittedModel {
            kernel: LearnedKernel::from_counts(k.n_states, k.n_actions, k.counts.clone(), k.smoothing)?,
            policy: ContextPolicy::from_doc(&self.policy)?,
            occupancy: self.occupancy.clone(),
            energy: self.energy.clone(),
            g_ldm: self.g_ldm.clone(),
            g_literal: self.g_literal.clone(),
        })
    }

    pub fn load(path: &Path) -> AppResult<Self> {
        let b: ModelBundle = read_json(path)?;
        if b.format != BUNDLE_FORMAT {
            return Err(AppError::Runtime(format!("{}: unsupported bundle format {}", path.display(), b.format)));
        }
        Ok(b)
    }
}

/// Renders rows as CSV with a header.
pub fn csv_string<R: Serialize>(rows: &[R]) -> AppResult<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| AppError::Runtime(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

/// `key=value` lines, used for small human-readable summaries.
pub fn summary_lines(pairs: &[(&str, String)]) -> String {
    let mut s = String::new();
    for (k, v) in pairs {
        let _ = writeln!(s, "{k}={v}");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use sas_core::dataset::{generate, MixEntry};
    use sas_core::env::default_layouts;

    fn small() -> OfflineDataset {
        let mdp = default_layouts("corridor").unwrap();
        generate(&mdp, &[MixEntry::new("expert", 0.5), MixEntry::new("random", 0.5)], 6, 5, 3).unwrap()
    }

    #[test]
    fn dataset_round_trip_is_canonical() {
        let ds = small();
        let text = dataset_to_string(&ds);
        let back = parse_dataset(&text).unwrap();
        assert_eq!(back, ds);
        assert_eq!(dataset_to_string(&back), text);
    }

    #[test]
    fn parse_errors_name_the_line() {
        let text = dataset_to_string(&small());
        let mut lines: Vec<&str> = text.lines().collect();
        lines[3] = "{\"states\":[0],\"actions\":[],\"rewards\":[],\"costs\":[]}";
        let e = parse_dataset(&lines.join("\n")).unwrap_err().to_string();
        assert!(e.contains("line 4"), "{e}");
        lines[3] = "{\"states\":[0,1,2],\"actions\":[0],\"rewards\":[0.0],\"costs\":[0.0]}";
        let e = parse_dataset(&lines.join("\n")).unwrap_err().to_string();
        assert!(e.contains("line 4"), "{e}");
        lines[3] = "not json";
        let e = parse_dataset(&lines.join("\n")).unwrap_err().to_string();
        assert!(e.contains("line 4"), "{e}");
    }
}
