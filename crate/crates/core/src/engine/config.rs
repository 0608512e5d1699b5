use serde::{Deserialize, Serialize};

use crate::comm::{topk_count, PayloadMode};
use crate::mixing::MixingMatrix;
use crate::objectives::{ObjectiveKindName, ObjectiveSpec};
use crate::trigger::TriggerConfig;

use super::EngineError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    /// Neighbor averaging every iteration (D-PSGD).
    Regular,
    /// Event-triggered neighbor averaging.
    Eventgrad,
}

/// How `gamma` in the config is interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GammaScale {
    Absolute,
    /// Effective step size is `gamma / L`.
    #[default]
    InverseLipschitz,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    #[default]
    Ring,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct MixingSpec {
    pub topology: Topology,
    /// Row-major `n x n` weights; overrides `topology` when present.
    pub custom_matrix: Option<Vec<f64>>,
}

impl MixingSpec {
    pub fn build(&self, n: usize) -> Result<MixingMatrix, EngineError> {
        match &self.custom_matrix {
            Some(w) => Ok(MixingMatrix::from_dense(n, w.clone())?),
            None => match self.topology {
                Topology::Ring => Ok(MixingMatrix::ring(n)?),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SparsifySpec {
    pub topk_percent: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    /// Zeros, except a shared Gaussian draw for the MLP.
    #[default]
    Auto,
    Zeros,
    Gaussian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitSpec {
    pub kind: InitKind,
    pub scale: f64,
    /// Draw a different Gaussian start for every PE.
    pub distinct_per_pe: bool,
}

impl Default for InitSpec {
    fn default() -> Self {
        Self {
            kind: InitKind::Auto,
            scale: 0.1,
            distinct_per_pe: false,
        }
    }
}

/// Everything needed to reproduce one simulated training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub n: usize,
    pub algorithm: Algorithm,
    pub gamma: f64,
    #[serde(default)]
    pub gamma_scale: GammaScale,
    pub iterations: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub objective: ObjectiveSpec,
    #[serde(default)]
    pub mixing: MixingSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trigger: Option<TriggerConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sparsify: Option<SparsifySpec>,
    #[serde(default)]
    pub staleness: usize,
    #[serde(default)]
    pub self_fresh: bool,
    #[serde(default)]
    pub init: InitSpec,
}

impl RunConfig {
    /// Desk-scale least-squares defaults.
    pub fn least_squares(n: usize, algorithm: Algorithm) -> Self {
        Self {
            n,
            algorithm,
            gamma: 0.05,
            gamma_scale: GammaScale::InverseLipschitz,
            iterations: 2000,
            seed: 0,
            objective: ObjectiveSpec::default(),
            mixing: MixingSpec::default(),
            trigger: match algorithm {
                Algorithm::Regular => None,
                Algorithm::Eventgrad => Some(TriggerConfig::default()),
            },
            sparsify: None,
            staleness: 0,
            self_fresh: false,
            init: InitSpec::default(),
        }
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        let bad = |m: String| Err(EngineError::Config(m));
        if self.n == 0 {
            return bad("n must be >= 1".into());
        }
        // gamma = 0 is allowed: pure consensus runs
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return bad(format!("gamma must be >= 0 (got {})", self.gamma));
        }
        if self.iterations == 0 {
            return bad("iterations must be >= 1".into());
        }
        if self.algorithm == Algorithm::Regular {
            if self.trigger.is_some() {
                return bad("regular algorithm takes no trigger section".into());
            }
            if self.sparsify.is_some() {
                return bad("regular algorithm takes no sparsify section".into());
            }
        }
        if let Some(t) = &self.trigger {
            t.validate()?;
        }
        if let Some(s) = self.sparsify {
            topk_count(1, s.topk_percent)?;
        }
        if !(self.init.scale >= 0.0) {
            return bad("init.scale must be >= 0".into());
        }
        self.objective.validate()?;
        self.mixing.build(self.n)?;
        Ok(())
    }

    pub fn trigger_config(&self) -> TriggerConfig {
        self.trigger.clone().unwrap_or_default()
    }

    pub fn payload_mode(&self) -> PayloadMode {
        match self.sparsify {
            Some(s) => PayloadMode::TopK {
                percent: s.topk_percent,
            },
            None => PayloadMode::Dense,
        }
    }

    pub(crate) fn init_kind(&self) -> InitKind {
        match (self.init.kind, self.objective.kind) {
            (InitKind::Auto, ObjectiveKindName::Mlp) => InitKind::Gaussian,
            (InitKind::Auto, _) => InitKind::Zeros,
            (k, _) => k,
        }
    }

    /// The regular arm of a comparison: same data, seed and step size.
    pub fn regular_arm(&self) -> RunConfig {
        RunConfig {
            algorithm: Algorithm::Regular,
            trigger: None,
            sparsify: None,
            ..self.clone()
        }
    }

    /// The event-triggered arm of a comparison.
    pub fn event_arm(&self) -> RunConfig {
        RunConfig {
            algorithm: Algorithm::Eventgrad,
            trigger: Some(self.trigger_config()),
            ..self.clone()
        }
    }
}
