use serde::{Deserialize, Serialize};

use super::error::AlgoError;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    /// Group mean of per-trajectory token-mean clipped terms, symmetric clip.
    #[default]
    Grpo,
    /// Token-level mean with decoupled clip bounds and dynamic group filtering.
    Dapo,
}

/// Update rule applied to the surrogate gradient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    /// `W += lr · g`.
    Sgd,
    /// Adam with bias correction; ascends the objective.
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Optimization hyperparameters. Defaults: group size 8 and temperature 0.8
/// for rollouts, symmetric clip 0.2, decoupled clip (0.2, 0.28), no KL term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperParams {
    pub clip_eps: f64,
    pub clip_eps_low: f64,
    pub clip_eps_high: f64,
    pub kl_beta: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub group_size: usize,
    pub temperature: f64,
    pub var_floor: f64,
    pub learning_rate: f64,
    pub objective: ObjectiveKind,
    pub task_norm: bool,
    pub optimizer: Optimizer,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            clip_eps: 0.2,
            clip_eps_low: 0.2,
            clip_eps_high: 0.28,
            kl_beta: 0.0,
            gamma: 1.0,
            lambda: 0.95,
            group_size: 8,
            temperature: 0.8,
            var_floor: 1e-6,
            learning_rate: 0.05,
            objective: ObjectiveKind::Grpo,
            task_norm: true,
            optimizer: Optimizer::default(),
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<(), AlgoError> {
        let bad = |m: &str| Err(AlgoError::InvalidHyperParams(m.to_string()));
        if !(self.clip_eps > 0.0) {
            return bad("clip_eps must be positive");
        }
        if !(0.0 < self.clip_eps_low && self.clip_eps_low <= self.clip_eps_high) {
            return bad("need 0 < clip_eps_low <= clip_eps_high");
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.lambda) {
            return bad("gamma and lambda must lie in [0, 1]");
        }
        if self.group_size < 2 {
            return bad("group_size must be at least 2 for group-relative advantages");
        }
        if !(self.var_floor > 0.0) {
            return bad("var_floor must be positive");
        }
        if !(self.temperature >= 0.0) || !self.temperature.is_finite() {
            return bad("temperature must be finite and non-negative");
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad("learning_rate must be positive");
        }
        if !(self.kl_beta >= 0.0) {
            return bad("kl_beta must be non-negative");
        }
        Ok(())
    }
}
