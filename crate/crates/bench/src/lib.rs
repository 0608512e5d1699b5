//! Fixtures shared by the criterion benchmarks in `benches/`.

use eventgrad_core::engine::{Algorithm, RunConfig};
use eventgrad_core::objectives::{ObjectiveKindName, ObjectiveSpec};
use eventgrad_core::TriggerConfig;

/// Least-squares config at desk scale for `n` PEs.
pub fn least_squares(n: usize, algorithm: Algorithm, iterations: usize) -> RunConfig {
    RunConfig {
        iterations,
        ..RunConfig::least_squares(n, algorithm)
    }
}

/// Small MLP config with the adaptive trigger.
pub fn mlp_eventgrad(n: usize, iterations: usize) -> RunConfig {
    RunConfig {
        iterations,
        objective: ObjectiveSpec {
            kind: ObjectiveKindName::Mlp,
            dim: 16,
            hidden: 16,
            classes: 4,
            ..ObjectiveSpec::default()
        },
        trigger: Some(TriggerConfig::default()),
        ..RunConfig::least_squares(n, Algorithm::Eventgrad)
    }
}

/// Deterministic pseudo-random vector for sparsification inputs.
pub fn signal(len: usize) -> Vec<f64> {
    (0..len)
        .map(|i| ((i as f64) * 0.618_033_988_75).sin())
        .collect()
}
