//! Run configuration: one TOML document, unknown keys rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use sas_core::bounds::{DEFAULT_COST_EPSILON, DEFAULT_COST_THRESHOLDS, DEFAULT_KAPPA};
use sas_core::dataset::MixEntry;
use sas_core::env::{self, GridLayout, TabularMdp};
use sas_core::lyapunov::GVariant;
use sas_core::model::ModelConfig;
use sas_core::sas::SasConfig;

use crate::error::{AppError, AppResult};

/// Overrides the configured output directory.
pub const OUTPUT_DIR_ENV: &str = "SAS_OUTPUT_DIR";

pub const DEFAULT_HORIZON: usize = 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LayoutSpec {
    Named(String),
    Inline(GridLayout),
}

/// A number or the word `auto`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "AutoRepr", into = "AutoRepr")]
pub enum Auto {
    Auto,
    Value(f64),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum AutoRepr {
    Number(f64),
    Word(String),
}

impl TryFrom<AutoRepr> for Auto {
    type Error = String;
    fn try_from(r: AutoRepr) -> Result<Self, String> {
        match r {
            AutoRepr::Number(v) => Ok(Auto::Value(v)),
            AutoRepr::Word(w) if w == "auto" => Ok(Auto::Auto),
            AutoRepr::Word(w) => Err(format!("expected a number or \"auto\", got \"{w}\"")),
        }
    }
}

impl From<Auto> for AutoRepr {
    fn from(a: Auto) -> Self {
        match a {
            Auto::Auto => AutoRepr::Word("auto".into()),
            Auto::Value(v) => AutoRepr::Number(v),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub mix: Vec<MixEntry>,
    pub n_traj: usize,
    pub horizon: usize,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            mix: vec![MixEntry::new("expert", 0.4), MixEntry::new("medium", 0.4), MixEntry::new("random", 0.2)],
            n_traj: 200,
            horizon: DEFAULT_HORIZON,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlignConfig {
    pub n: usize,
    pub m: usize,
    pub k: usize,
    pub horizon: usize,
    pub seed: u64,
    pub g_variant: GVariant,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self { n: 5, m: 5, k: 5, horizon: DEFAULT_HORIZON, seed: 0, g_variant: GVariant::LdmFixedPoint }
    }
}

impl AlignConfig {
    pub fn sas(&self) -> SasConfig {
        SasConfig { n: self.n, m: self.m, k: self.k, horizon: self.horizon, seed: self.seed }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoundConfig {
    pub c1: Auto,
    pub c2: Auto,
    pub kappa: f64,
    pub l: Auto,
    pub runs: usize,
    pub grid: Vec<usize>,
    pub seed: u64,
}

impl Default for BoundConfig {
    fn default() -> Self {
        Self { c1: Auto::Auto, c2: Auto::Auto, kappa: DEFAULT_KAPPA, l: Auto::Auto, runs: 500, grid: vec![1, 3, 5], seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub seeds: Vec<u64>,
    pub episodes: usize,
    pub cost_thresholds: Vec<f64>,
    pub epsilon: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { seeds: vec![0, 1, 2], episodes: 10, cost_thresholds: DEFAULT_COST_THRESHOLDS.to_vec(), epsilon: DEFAULT_COST_EPSILON }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SkillConfig {
    pub ks: Vec<usize>,
    pub n_prompts: usize,
    /// Probability each skill puts on its preferred action.
    pub strength: f64,
    pub seed: u64,
}

impl Default for SkillConfig {
    fn default() -> Self {
        Self { ks: vec![1, 5, 10, 50], n_prompts: 100, strength: 0.6, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LandscapeConfig {
    pub svg: bool,
    pub low_pct: f64,
    pub high_pct: f64,
}

impl Default for LandscapeConfig {
    fn default() -> Self {
        let (low_pct, high_pct) = sas_core::bounds::DEFAULT_REGION_PERCENTILES;
        Self { svg: true, low_pct, high_pct }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub layout: LayoutSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_max: Option<f64>,
    #[serde(default = "default_budget")]
    pub budget: f64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub sas: AlignConfig,
    #[serde(default)]
    pub bound: BoundConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub skill: SkillConfig,
    #[serde(default)]
    pub landscape: LandscapeConfig,
}

fn default_budget() -> f64 {
    0.01
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

impl RunConfig {
    pub fn for_layout(name: &str) -> Self {
        Self {
            layout: LayoutSpec::Named(name.to_string()),
            gamma: None,
            c_max: None,
            budget: default_budget(),
            output_dir: default_output_dir(),
            dataset: DatasetConfig::default(),
            model: ModelConfig::default(),
            sas: AlignConfig::default(),
            bound: BoundConfig::default(),
            eval: EvalConfig::default(),
            skill: SkillConfig::default(),
            landscape: LandscapeConfig::default(),
        }
    }

    pub fn from_toml(text: &str) -> AppResult<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| AppError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> AppResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| AppError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            AppError::Config(m) => AppError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn layout(&self) -> AppResult<GridLayout> {
        let mut layout = match &self.layout {
            LayoutSpec::Named(name) => env::layout(name).map_err(|e| AppError::Config(e.to_string()))?,
            LayoutSpec::Inline(l) => l.clone(),
        };
        if let Some(g) = self.gamma {
            layout.gamma = g;
        }
        if let Some(c) = self.c_max {
            layout.c_max = c;
        }
        Ok(layout)
    }

    pub fn mdp(&self) -> AppResult<TabularMdp> {
        TabularMdp::new(self.layout()?).map_err(|e| AppError::Config(e.to_string()))
    }

    pub fn validate(&self) -> AppResult<()> {
        let bad = |m: String| Err(AppError::Config(m));
        self.mdp()?;
        if !(self.budget > 0.0) {
            return bad(format!("budget must be positive, got {}", self.budget));
        }
        let fractions: f64 = self.dataset.mix.iter().map(|m| m.fraction).sum();
        if (fractions - 1.0).abs() > 1e-9 {
            return bad(format!("dataset.mix fractions sum to {fractions}, not 1"));
        }
        for m in &self.dataset.mix {
            sas_core::dataset::Behavior::from_name(&m.policy).map_err(|e| AppError::Config(e.to_string()))?;
        }
        if self.dataset.n_traj == 0 || self.dataset.horizon == 0 {
            return bad("dataset.n_traj and dataset.horizon must be positive".into());
        }
        self.model.validate().map_err(|e| AppError::Config(format!("model: {e}")))?;
        self.sas.sas().validate().map_err(|e| AppError::Config(format!("sas: {e}")))?;
        if !(self.bound.kappa > 0.0) || self.bound.runs == 0 || self.bound.grid.contains(&0) {
            return bad("bound: kappa and runs must be positive and grid entries at least 1".into());
        }
        if self.eval.seeds.is_empty() || self.eval.episodes == 0 || self.eval.cost_thresholds.is_empty() {
            return bad("eval: seeds, episodes and cost_thresholds must be non-empty".into());
        }
        if !(self.eval.epsilon > 0.0) || self.eval.cost_thresholds.iter().any(|k| !(*k >= 0.0)) {
            return bad("eval: epsilon must be positive and thresholds non-negative".into());
        }
        if self.skill.ks.windows(2).any(|w| w[0] > w[1]) || !(self.skill.strength > 0.0 && self.skill.strength < 1.0) {
            return bad("skill: ks must be ascending and strength in (0, 1)".into());
        }
        let (lo, hi) = (self.landscape.low_pct, self.landscape.high_pct);
        if !(0.0 <= lo && lo < hi && hi <= 100.0) {
            return bad("landscape: need 0 <= low_pct < high_pct <= 100".into());
        }
        Ok(())
    }

    /// Output directory after the environment override.
    pub fn resolved_output_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_DIR_ENV) {
            Some(dir) if !dir.is_empty() => PathBuf::from(dir),
            _ => self.output_dir.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_document_fills_defaults() {
        let cfg = RunConfig::from_toml("layout = \"corridor\"").unwrap();
        assert_eq!(cfg, RunConfig::for_layout("corridor"));
        let back = RunConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let e = RunConfig::from_toml("layout = \"corridor\"\n[sas]\nnn = 3\n").unwrap_err();
        assert!(matches!(e, AppError::Config(ref m) if m.contains("nn")), "{e}");
        assert!(RunConfig::from_toml("layout = \"corridor\"\nbudgett = 1\n").is_err());
    }

    #[test]
    fn auto_values() {
        let cfg = RunConfig::from_toml("layout = \"ring\"\n[bound]\nc1 = 0.5\nl = \"auto\"\n").unwrap();
        assert_eq!(cfg.bound.c1, Auto::Value(0.5));
        assert_eq!(cfg.bound.l, Auto::Auto);
        assert!(RunConfig::from_toml("layout = \"ring\"\n[bound]\nc1 = \"car\"\n").is_err());
    }

    #[test]
    fn inline_layout_and_overrides() {
        let text = "layout = { width = 3, height = 1, goal = [2, 0], start = [0, 0] }\ngamma = 0.9\n";
        let cfg = RunConfig::from_toml(text).unwrap();
        let mdp = cfg.mdp().unwrap();
        assert_eq!(mdp.gamma(), 0.9);
        assert_eq!(mdp.width(), 3);
    }

    #[test]
    fn invalid_values() {
        assert!(RunConfig::from_toml("layout = \"nowhere\"").is_err());
        let mix = "layout = \"corridor\"\n[dataset]\nmix = [{ policy = \"expert\", fraction = 0.5 }]\n";
        assert!(RunConfig::from_toml(mix).is_err());
        assert!(RunConfig::from_toml("layout = \"corridor\"\n[sas]\nk = 0\n").is_err());
    }
}
