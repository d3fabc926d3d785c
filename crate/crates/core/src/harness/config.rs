//! Run configuration: one TOML file, every key optional.
//!
//! ```toml
//! seed = 0                  # overrides synth.seed and memory_sim.seed
//! scenes = 1000
//! threads = 0               # 0 = available parallelism
//! format = "csv"            # or "json"
//! assigners = ["mcss", "iou_max", "center", "atss"]
//!
//! [assigner]                # AssignerSettings
//! iou_pos_thresh = 0.5
//! iou_neg_thresh = 0.5
//! radius_factor = 1.0
//! atss_k = 9
//!
//! [assigner.mcss]           # AssignConfig
//! k = 9
//! alpha = 0.3
//! beta = 0.6
//! s_max = 32.0
//! gamma_cap = 3.0
//! scores_are_probabilities = false
//! beta_mode = "cap"
//!
//! [synth]                   # SynthConfig
//! n_gt = 8
//! size_range = [4.0, 256.0]
//!
//! [memory_sim]              # MemorySimConfig
//! iterations = 200
//! momentum = 0.01
//! ```
//!
//! Unknown keys are rejected. Command-line flags override file values.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::assign::{AssignerKind, AssignerSettings};
use crate::error::{Error, Result};
use crate::memory::{DEFAULT_EPS, DEFAULT_MOMENTUM};
use crate::synth::SynthConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FormatName {
    Json,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MemorySimConfig {
    pub seed: u64,
    pub num_classes: usize,
    pub dim: usize,
    pub iterations: usize,
    /// Samples drawn per foreground category per iteration.
    pub per_class: usize,
    /// Negative candidates per iteration; two of them update the background row.
    pub negatives: usize,
    pub momentum: f64,
    /// Standard deviation of the cluster means around the origin.
    pub cluster_spread: f64,
    /// Within-cluster standard deviation.
    pub cluster_sigma: f64,
    pub eps: f64,
}

impl Default for MemorySimConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            num_classes: 3,
            dim: 16,
            iterations: 200,
            per_class: 16,
            negatives: 32,
            momentum: DEFAULT_MOMENTUM,
            cluster_spread: 3.0,
            cluster_sigma: 0.5,
            eps: DEFAULT_EPS,
        }
    }
}

impl MemorySimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.iterations == 0 {
            return bad("memory_sim.iterations must be at least 1");
        }
        if self.num_classes == 0 || self.dim == 0 || self.per_class == 0 {
            return bad("memory_sim.num_classes, dim and per_class must be at least 1");
        }
        if !(self.cluster_spread > 0.0 && self.cluster_spread.is_finite()) {
            return bad("memory_sim.cluster_spread must be positive");
        }
        if !(self.cluster_sigma >= 0.0 && self.cluster_sigma.is_finite()) {
            return bad("memory_sim.cluster_sigma must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.momentum) {
            return bad("memory_sim.momentum must lie in [0, 1]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarnessConfig {
    pub seed: Option<u64>,
    pub scenes: usize,
    pub threads: usize,
    pub format: FormatName,
    pub assigners: Vec<String>,
    pub assigner: AssignerSettings,
    pub synth: SynthConfig,
    pub memory_sim: MemorySimConfig,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        Self {
            seed: None,
            scenes: 1000,
            threads: 0,
            format: FormatName::Csv,
            assigners: AssignerKind::ALL.iter().map(|k| k.name().to_string()).collect(),
            assigner: AssignerSettings::default(),
            synth: SynthConfig::default(),
            memory_sim: MemorySimConfig::default(),
        }
    }
}

impl HarnessConfig {
    pub fn from_toml(text: &str, context: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse {
            context: context.to_string(),
            message: e.to_string().trim_end().replace('\n', " | "),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, &path.display().to_string())
    }

    /// Pushes a top-level seed down into the sections that consume one.
    pub fn apply_seed(&mut self, seed: u64) {
        self.seed = Some(seed);
        self.synth.seed = seed;
        self.memory_sim.seed = seed;
    }

    pub fn assigner_kinds(&self) -> Result<Vec<AssignerKind>> {
        parse_assigners(&self.assigners)
    }
}

pub fn parse_assigners(names: &[String]) -> Result<Vec<AssignerKind>> {
    if names.is_empty() {
        return Err(Error::InvalidConfig("assigner list is empty".into()));
    }
    let mut kinds = Vec::new();
    for n in names {
        let k: AssignerKind = n.trim().parse()?;
        if kinds.contains(&k) {
            return Err(Error::InvalidConfig(format!("assigner `{k}` listed twice")));
        }
        kinds.push(k);
    }
    Ok(kinds)
}
