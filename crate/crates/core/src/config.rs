//! Experiment configuration: one JSON file drives every subcommand, and a
//! config plus a build fully determines every output byte.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampler::SamplerOptions;
use crate::schedule::{LevelSchedule, ModelParams};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Lattice dimension.
    pub d: usize,
    /// Interaction strength, in (-1, 1).
    pub epsilon: f64,
    /// Halfwidth of the truncated model; absent selects the unbounded model.
    #[serde(default)]
    pub truncation: Option<f64>,
    /// Tail constant of the level schedule.
    #[serde(default)]
    pub a: Option<f64>,
    /// First level of the schedule.
    #[serde(rename = "L1", default)]
    pub l1: Option<f64>,
    #[serde(default = "default_replicas")]
    pub replicas: u32,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_budget")]
    pub budget: u64,
    #[serde(default = "default_delta_fail")]
    pub delta_fail: f64,
    /// Dependence range of the truncated factor map.
    #[serde(default = "default_l")]
    pub l: u32,
    #[serde(default)]
    pub force: bool,
}

fn default_replicas() -> u32 {
    1000
}
fn default_budget() -> u64 {
    1_000_000
}
fn default_delta_fail() -> f64 {
    1e-9
}
fn default_l() -> u32 {
    4
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn model(&self) -> Result<ModelParams> {
        ModelParams::new(self.d, self.epsilon, self.truncation)
    }

    pub fn schedule(&self) -> Result<LevelSchedule> {
        let a = self
            .a
            .ok_or_else(|| Error::Config("schedule constant `a` missing from config".into()))?;
        let l1 = self
            .l1
            .ok_or_else(|| Error::Config("schedule level `L1` missing from config".into()))?;
        LevelSchedule::new(a, l1, self.epsilon, self.d)
    }

    pub fn sampler_options(&self) -> SamplerOptions {
        SamplerOptions {
            budget: self.budget,
            node_budget: 10_000_000,
            delta_fail: self.delta_fail,
            force: self.force,
        }
    }

    /// FNV-1a hash of the canonical JSON, embedded in every report.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01B3);
        }
        format!("{h:016x}")
    }
}
