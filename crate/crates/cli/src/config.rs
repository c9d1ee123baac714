//! Pipeline configuration: one TOML file, every field defaulted.

use std::path::{Path, PathBuf};

use carebi::efa::{PaCriterion, RetentionRule};
use carebi::validation::OutcomeSpec;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const STAGES: [&str; 9] = ["simulate", "prep", "corr", "efa", "cfa", "score", "classify", "validate", "report"];

/// Default `run` order; `simulate` only runs when listed.
pub const DEFAULT_RUN: [&str; 8] = ["prep", "corr", "efa", "cfa", "score", "classify", "validate", "report"];

/// Sub-seed streams derived from the master seed.
pub mod streams {
    pub const BOOTSTRAP: u64 = 1;
    pub const PARALLEL: u64 = 2;
    pub const ROTATION: u64 = 3;
    pub const SIMULATE: u64 = 4;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub stages: Vec<String>,
    pub paths: Paths,
    pub prep: PrepConfig,
    pub corr: CorrConfig,
    pub efa: EfaConfig,
    pub cfa: CfaConfig,
    pub classify: ClassifyConfig,
    pub validate: ValidateConfig,
    pub simulate: SimulateConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 2022,
            stages: DEFAULT_RUN.iter().map(|s| s.to_string()).collect(),
            paths: Paths::default(),
            prep: PrepConfig::default(),
            corr: CorrConfig::default(),
            efa: EfaConfig::default(),
            cfa: CfaConfig::default(),
            classify: ClassifyConfig::default(),
            validate: ValidateConfig::default(),
            simulate: SimulateConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    /// Raw extract; relative paths resolve against the config directory.
    pub raw: Option<PathBuf>,
    /// Codebook TOML; the bundled 18-item codebook when absent.
    pub codebook: Option<PathBuf>,
    pub out: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self { raw: None, codebook: None, out: PathBuf::from("carebi-out") }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PrepConfig {
    pub max_missing: f64,
    pub row_id_column: String,
    pub cluster_column: String,
}

impl Default for PrepConfig {
    fn default() -> Self {
        Self { max_missing: carebi::codebook::DEFAULT_MAX_MISSING, row_id_column: "row_id".into(), cluster_column: "cluster_id".into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Weights {
    Bootstrap,
    Unit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorrConfig {
    pub weights: Weights,
    pub n_boot: usize,
    pub kmo_gate: f64,
    /// Fail the stage when KMO is below the gate instead of warning.
    pub enforce_kmo: bool,
}

impl Default for CorrConfig {
    fn default() -> Self {
        Self { weights: Weights::Bootstrap, n_boot: 200, kmo_gate: 0.80, enforce_kmo: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EfaConfig {
    pub n_sims: usize,
    pub pa_criterion: PaCriterion,
    /// Factors to extract; the parallel-analysis suggestion when absent.
    pub n_factors: Option<usize>,
    pub load_min: f64,
    pub cross_max: f64,
    pub comm_min: f64,
    /// Items kept despite failing a retention criterion.
    pub overrides: Vec<String>,
    pub gamma: f64,
    pub restarts: usize,
}

impl Default for EfaConfig {
    fn default() -> Self {
        let r = RetentionRule::default();
        Self {
            n_sims: 100,
            pa_criterion: PaCriterion::Mean,
            n_factors: None,
            load_min: r.load_min,
            cross_max: r.cross_max,
            comm_min: r.comm_min,
            overrides: vec![],
            gamma: 0.0,
            restarts: 4,
        }
    }
}

impl EfaConfig {
    pub fn rule(&self) -> RetentionRule {
        RetentionRule { load_min: self.load_min, cross_max: self.cross_max, comm_min: self.comm_min }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CfaConfig {
    /// ModelSpec TOML; the six-domain CareBI bifactor model when absent.
    pub model: Option<PathBuf>,
    pub higher_order: bool,
}

impl Default for CfaConfig {
    fn default() -> Self {
        Self { model: None, higher_order: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifyConfig {
    pub k: usize,
    /// Named preset (see presets.toml) used instead of k-means.
    pub preset: Option<String>,
}

impl Default for ClassifyConfig {
    fn default() -> Self {
        Self { k: 3, preset: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ValidateConfig {
    #[serde(rename = "outcome")]
    pub outcomes: Vec<OutcomeSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    pub n: usize,
    pub missing_frac: f64,
    pub max_per_cluster: usize,
    pub cluster_sd: f64,
    /// TrueModel TOML; the 18-item fixture when absent.
    pub model: Option<PathBuf>,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        let o = carebi::simulate::CohortOptions::default();
        Self { n: o.n, missing_frac: o.missing_frac, max_per_cluster: o.max_per_cluster, cluster_sd: o.cluster_sd, model: None }
    }
}

/// Merge `key.path=value` assignments (value in TOML syntax) into a table.
pub fn apply_overrides(table: &mut toml::Table, overrides: &[String]) -> Result<()> {
    for o in overrides {
        let (key, value) =
            o.split_once('=').ok_or_else(|| CliError::Config(format!("override `{o}` is not key=value")))?;
        let parsed: toml::Table = toml::from_str(&format!("v = {}", value.trim()))
            .or_else(|_| toml::from_str(&format!("v = {:?}", value.trim())))
            .map_err(|e| CliError::Config(format!("override `{o}`: {e}")))?;
        let value = parsed["v"].clone();
        let parts: Vec<&str> = key.trim().split('.').collect();
        let mut cur = &mut *table;
        for p in &parts[..parts.len() - 1] {
            cur = cur
                .entry(p.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                .as_table_mut()
                .ok_or_else(|| CliError::Config(format!("override `{o}`: `{p}` is not a table")))?;
        }
        cur.insert(parts[parts.len() - 1].to_string(), value);
    }
    Ok(())
}

/// A loaded config plus the directory its relative paths resolve against.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub config: PipelineConfig,
    pub base: PathBuf,
    pub out: PathBuf,
}

impl Loaded {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    /// Canonical TOML rendering, hashed into the manifest.
    pub fn canonical(&self) -> String {
        toml::to_string(&self.config).expect("config serializes")
    }
}

pub fn load(path: Option<&Path>, overrides: &[String], seed: Option<u64>, out: Option<&Path>) -> Result<Loaded> {
    let (mut table, base) = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
            let t: toml::Table = toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            (t, p.parent().map(Path::to_path_buf).unwrap_or_default())
        }
        None => (toml::Table::new(), PathBuf::from(".")),
    };
    apply_overrides(&mut table, overrides)?;
    let mut config: PipelineConfig =
        toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
    if let Some(s) = seed {
        config.seed = s;
    }
    validate(&config)?;
    let out = match out {
        Some(o) => o.to_path_buf(),
        None if config.paths.out.is_absolute() => config.paths.out.clone(),
        None => base.join(&config.paths.out),
    };
    Ok(Loaded { config, base, out })
}

fn validate(c: &PipelineConfig) -> Result<()> {
    let bad = |m: String| Err(CliError::Config(m));
    for s in &c.stages {
        if !STAGES.contains(&s.as_str()) {
            return bad(format!("unknown stage `{s}` (expected one of {})", STAGES.join(", ")));
        }
    }
    if !(0.0..=1.0).contains(&c.prep.max_missing) {
        return bad("prep.max_missing must lie in [0, 1]".into());
    }
    if c.corr.weights == Weights::Bootstrap && c.corr.n_boot < carebi::polycorr::MIN_BOOT {
        return bad(format!("corr.n_boot must be at least {}", carebi::polycorr::MIN_BOOT));
    }
    if c.efa.n_sims < carebi::efa::MIN_SIMS {
        return bad(format!("efa.n_sims must be at least {}", carebi::efa::MIN_SIMS));
    }
    if c.efa.n_factors == Some(0) {
        return bad("efa.n_factors must be positive".into());
    }
    if c.classify.k < 2 {
        return bad("classify.k must be at least 2".into());
    }
    if let Some(p) = &c.classify.preset {
        if carebi::scoring::preset(p).is_none() {
            return bad(format!("unknown preset `{p}`"));
        }
        if c.classify.k != 3 {
            return bad("presets define three bands; classify.k must be 3".into());
        }
    }
    if c.simulate.n == 0 {
        return bad("simulate.n must be positive".into());
    }
    Ok(())
}
