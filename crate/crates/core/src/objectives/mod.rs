//! Stochastic gradient oracles and per-PE data shards.
//!
//! Three built-in objectives are provided:
//!
//! * `least_squares`: `f_i(x) = 1/2 ||A_i x - b_i||^2` (summed over the shard).
//!   A mini-batch `B` yields the unbiased estimate `(m/|B|) sum_{s in B} a_s (a_s^T x - b_s)`.
//! * `logistic`: softmax regression with cross-entropy, averaged over the shard.
//! * `mlp`: one tanh hidden layer followed by softmax cross-entropy, averaged
//!   over the shard. Its four blocks (`w1`, `b1`, `w2`, `b2`) exercise
//!   per-block triggering.
//!
//! For every kind, the full gradient equals the mean of the singleton
//! mini-batch gradients over the shard.

mod data;
mod kernels;
mod model;

use std::sync::Arc;

use rand::Rng;
use thiserror::Error;

pub use data::{ObjectiveKindName, ObjectiveSpec, Shard};
pub use model::{BlockSpec, ModelLayout, ModelState};

#[derive(Debug, Error)]
pub enum ObjectiveError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("model layout does not match the objective")]
    LayoutMismatch,
    #[error("model layout must contain at least one block")]
    EmptyLayout,
    #[error("parameter block `{0}` has zero length")]
    EmptyBlock(String),
    #[error("shard for PE {0} is empty")]
    EmptyShard(usize),
    #[error("invalid objective parameter: {0}")]
    InvalidParameter(String),
    #[error("class label {label} out of range for {classes} classes")]
    BadLabel { label: f64, classes: usize },
    #[error("failed to read dataset csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Which loss/gradient kernel an objective uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObjectiveKind {
    LeastSquares,
    Logistic { classes: usize },
    Mlp { hidden: usize, classes: usize },
}

impl ObjectiveKind {
    pub fn layout(&self, dim: usize) -> ModelLayout {
        let blocks = match *self {
            ObjectiveKind::LeastSquares => vec![BlockSpec::new("weight", vec![dim])],
            ObjectiveKind::Logistic { classes } => vec![
                BlockSpec::new("weight", vec![classes, dim]),
                BlockSpec::new("bias", vec![classes]),
            ],
            ObjectiveKind::Mlp { hidden, classes } => vec![
                BlockSpec::new("w1", vec![hidden, dim]),
                BlockSpec::new("b1", vec![hidden]),
                BlockSpec::new("w2", vec![classes, hidden]),
                BlockSpec::new("b2", vec![classes]),
            ],
        };
        ModelLayout::new(blocks).expect("built-in layouts are nonempty")
    }

    fn is_sum_normalized(&self) -> bool {
        matches!(self, ObjectiveKind::LeastSquares)
    }
}

/// Local objective `f_i` of one PE.
#[derive(Debug, Clone)]
pub struct Objective {
    kind: ObjectiveKind,
    shard: Shard,
    batch_size: usize,
    full_batch: bool,
    layout: Arc<ModelLayout>,
}

impl Objective {
    pub fn new(
        kind: ObjectiveKind,
        shard: Shard,
        batch_size: usize,
        layout: Arc<ModelLayout>,
    ) -> Result<Self, ObjectiveError> {
        if shard.is_empty() {
            return Err(ObjectiveError::EmptyShard(0));
        }
        if batch_size == 0 {
            return Err(ObjectiveError::InvalidParameter(
                "batch_size must be >= 1".into(),
            ));
        }
        if *layout != kind.layout(shard.dim()) {
            return Err(ObjectiveError::LayoutMismatch);
        }
        if let ObjectiveKind::Logistic { classes } | ObjectiveKind::Mlp { classes, .. } = kind {
            if let Some(&label) = shard
                .targets()
                .iter()
                .find(|&&t| t < 0.0 || t.fract() != 0.0 || t as usize >= classes)
            {
                return Err(ObjectiveError::BadLabel { label, classes });
            }
        }
        Ok(Self {
            kind,
            shard,
            batch_size,
            full_batch: false,
            layout,
        })
    }

    /// Make every mini-batch the whole shard (no sampling noise).
    pub fn with_full_batch(mut self, full_batch: bool) -> Self {
        self.full_batch = full_batch;
        self
    }

    pub fn is_full_batch(&self) -> bool {
        self.full_batch
    }

    pub fn kind(&self) -> ObjectiveKind {
        self.kind
    }

    pub fn shard(&self) -> &Shard {
        &self.shard
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn layout(&self) -> &Arc<ModelLayout> {
        &self.layout
    }

    fn check(&self, model: &ModelState) -> Result<(), ObjectiveError> {
        if **model.layout() != *self.layout {
            return Err(ObjectiveError::DimensionMismatch {
                expected: self.layout.total_dim(),
                got: model.total_dim(),
            });
        }
        Ok(())
    }

    /// Local loss over the whole shard.
    pub fn loss(&self, model: &ModelState) -> Result<f64, ObjectiveError> {
        self.check(model)?;
        let total: f64 = (0..self.shard.len())
            .map(|s| kernels::sample_loss(self.kind, model, &self.shard, s))
            .sum();
        Ok(if self.kind.is_sum_normalized() {
            total
        } else {
            total / self.shard.len() as f64
        })
    }

    /// Gradient estimate from the given sample indices (repeats allowed).
    pub fn batch_gradient(
        &self,
        model: &ModelState,
        indices: &[usize],
    ) -> Result<ModelState, ObjectiveError> {
        self.check(model)?;
        if indices.is_empty() {
            return Err(ObjectiveError::InvalidParameter("empty mini-batch".into()));
        }
        if let Some(&bad) = indices.iter().find(|&&s| s >= self.shard.len()) {
            return Err(ObjectiveError::DimensionMismatch {
                expected: self.shard.len(),
                got: bad,
            });
        }
        let scale = if self.kind.is_sum_normalized() {
            self.shard.len() as f64 / indices.len() as f64
        } else {
            1.0 / indices.len() as f64
        };
        let mut grad = ModelState::zeros(self.layout.clone());
        for &s in indices {
            kernels::accumulate_sample_gradient(self.kind, model, &self.shard, s, scale, &mut grad);
        }
        Ok(grad)
    }

    /// Exact `grad f_i(x)` over the entire shard.
    pub fn full_gradient(&self, model: &ModelState) -> Result<ModelState, ObjectiveError> {
        let all: Vec<usize> = (0..self.shard.len()).collect();
        self.batch_gradient(model, &all)
    }

    /// Uniform sampling with replacement from the local shard, or the whole
    /// shard in full-batch mode.
    pub fn sample_batch<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<usize> {
        if self.full_batch {
            return (0..self.shard.len()).collect();
        }
        (0..self.batch_size)
            .map(|_| rng.random_range(0..self.shard.len()))
            .collect()
    }

    /// `grad F_i(x; xi)` for a freshly sampled mini-batch `xi`.
    pub fn stochastic_gradient<R: Rng + ?Sized>(
        &self,
        model: &ModelState,
        rng: &mut R,
    ) -> Result<ModelState, ObjectiveError> {
        let batch = self.sample_batch(rng);
        self.batch_gradient(model, &batch)
    }
}

/// `f(x) = (1/n) sum_i f_i(x)`.
pub fn global_loss(objectives: &[Objective], model: &ModelState) -> Result<f64, ObjectiveError> {
    let mut total = 0.0;
    for o in objectives {
        total += o.loss(model)?;
    }
    Ok(total / objectives.len() as f64)
}

/// `grad f(x) = (1/n) sum_i grad f_i(x)`.
pub fn global_gradient(
    objectives: &[Objective],
    model: &ModelState,
) -> Result<ModelState, ObjectiveError> {
    let mut total = ModelState::zeros(model.layout().clone());
    for o in objectives {
        total.axpy(1.0, &o.full_gradient(model)?);
    }
    total.scale(1.0 / objectives.len() as f64);
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    fn ls_objective(rows: &[&[f64]], targets: &[f64], batch: usize) -> Objective {
        let dim = rows[0].len();
        let shard = Shard::new(dim, rows.concat(), targets.to_vec()).unwrap();
        let kind = ObjectiveKind::LeastSquares;
        Objective::new(kind, shard, batch, Arc::new(kind.layout(dim))).unwrap()
    }

    fn fd_check(obj: &Objective, model: &ModelState) {
        let analytic = obj.full_gradient(model).unwrap().flatten();
        let flat = model.flatten();
        let h = 1e-6;
        let numeric: Vec<f64> = (0..flat.len())
            .map(|j| {
                let mut p = flat.clone();
                p[j] += h;
                let mut m = flat.clone();
                m[j] -= h;
                let lp = obj
                    .loss(&ModelState::from_flat(obj.layout().clone(), &p).unwrap())
                    .unwrap();
                let lm = obj
                    .loss(&ModelState::from_flat(obj.layout().clone(), &m).unwrap())
                    .unwrap();
                (lp - lm) / (2.0 * h)
            })
            .collect();
        let diff: f64 = analytic
            .iter()
            .zip(&numeric)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let scale = analytic.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-8);
        assert!(diff / scale < 1e-5, "relative error {}", diff / scale);
    }

    #[test]
    fn least_squares_identity_minimizer() {
        let obj = ls_objective(&[&[1.0, 0.0], &[0.0, 1.0]], &[0.0, 0.0], 2);
        let x = ModelState::zeros(obj.layout().clone());
        let g = obj.batch_gradient(&x, &[0, 1]).unwrap();
        assert_eq!(g.flatten(), vec![0.0, 0.0]);
    }

    #[test]
    fn least_squares_full_gradient_is_normal_equation_residual() {
        // A = [[1,2],[3,4],[5,6]], b = [1,0,-1], x = [0.5,-0.25]
        let obj = ls_objective(
            &[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0]],
            &[1.0, 0.0, -1.0],
            1,
        );
        let x = ModelState::from_flat(obj.layout().clone(), &[0.5, -0.25]).unwrap();
        // Ax - b = [-1, 0.5, 2]; A^T r = [-1+1.5+10, -2+2+12] = [10.5, 12]
        let g = obj.full_gradient(&x).unwrap().flatten();
        assert!((g[0] - 10.5).abs() < 1e-12 && (g[1] - 12.0).abs() < 1e-12);
        fd_check(&obj, &x);
    }

    #[test]
    fn least_squares_square_system_stationary() {
        // A = [[2,1],[1,3]], b = A [1, -1] = [1, -2]
        let obj = ls_objective(&[&[2.0, 1.0], &[1.0, 3.0]], &[1.0, -2.0], 1);
        let x = ModelState::from_flat(obj.layout().clone(), &[1.0, -1.0]).unwrap();
        assert!(obj.full_gradient(&x).unwrap().norm_sq() < 1e-24);
    }

    #[test]
    fn logistic_balanced_bias_gradient_vanishes() {
        let kind = ObjectiveKind::Logistic { classes: 2 };
        let shard = Shard::new(2, vec![1.0, 1.0, -1.0, -1.0], vec![0.0, 1.0]).unwrap();
        let obj = Objective::new(kind, shard, 1, Arc::new(kind.layout(2))).unwrap();
        let g = obj
            .full_gradient(&ModelState::zeros(obj.layout().clone()))
            .unwrap();
        assert!(g.block(1).iter().all(|b| b.abs() < 1e-15));
    }

    #[test]
    fn full_gradient_is_mean_of_singletons() {
        let spec = ObjectiveSpec {
            kind: ObjectiveKindName::Mlp,
            samples_per_pe: 12,
            dim: 3,
            hidden: 4,
            classes: 3,
            ..ObjectiveSpec::default()
        };
        let objs = spec.build(2, 5).unwrap();
        let mut rng = stream_rng(5, 99);
        let layout = objs[0].layout().clone();
        let flat: Vec<f64> = (0..layout.total_dim())
            .map(|_| rng.random_range(-0.5..0.5))
            .collect();
        let x = ModelState::from_flat(layout.clone(), &flat).unwrap();
        for obj in &objs {
            let m = obj.shard().len();
            let mut mean = ModelState::zeros(layout.clone());
            for s in 0..m {
                mean.axpy(1.0 / m as f64, &obj.batch_gradient(&x, &[s]).unwrap());
            }
            let full = obj.full_gradient(&x).unwrap();
            assert!(mean.distance_sq(&full).sqrt() < 1e-12 * full.norm_sq().sqrt().max(1.0));
        }
    }

    #[test]
    fn finite_differences_all_kinds() {
        for kind in [
            ObjectiveKindName::LeastSquares,
            ObjectiveKindName::Logistic,
            ObjectiveKindName::Mlp,
        ] {
            let spec = ObjectiveSpec {
                kind,
                classes: 3,
                samples_per_pe: 16,
                dim: 4,
                ..ObjectiveSpec::default()
            };
            let objs = spec.build(1, 11).unwrap();
            let mut rng = stream_rng(11, 7);
            for _ in 0..3 {
                let layout = objs[0].layout().clone();
                let flat: Vec<f64> = (0..layout.total_dim())
                    .map(|_| rng.random_range(-1.0..1.0))
                    .collect();
                fd_check(&objs[0], &ModelState::from_flat(layout, &flat).unwrap());
            }
        }
    }

    #[test]
    fn global_loss_is_mean() {
        let a = ls_objective(&[&[1.0]], &[(2.0f64).sqrt()], 1); // loss at 0: 1
        let b = ls_objective(&[&[1.0]], &[(6.0f64).sqrt()], 1); // loss at 0: 3
        let x = ModelState::zeros(a.layout().clone());
        assert!((global_loss(&[a.clone(), b], &x).unwrap() - 2.0).abs() < 1e-12);
        assert!(
            (global_loss(&[a.clone(), a.clone()], &x).unwrap() - a.loss(&x).unwrap()).abs() < 1e-15
        );
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let obj = ls_objective(&[&[1.0, 2.0]], &[0.0], 1);
        let other = Arc::new(ObjectiveKind::LeastSquares.layout(3));
        let x = ModelState::zeros(other);
        assert!(matches!(
            obj.full_gradient(&x),
            Err(ObjectiveError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn sampling_is_deterministic() {
        let spec = ObjectiveSpec::default();
        let objs = spec.build(2, 3).unwrap();
        let x = ModelState::zeros(objs[0].layout().clone());
        let g1 = objs[1]
            .stochastic_gradient(&x, &mut stream_rng(3, 1))
            .unwrap();
        let g2 = objs[1]
            .stochastic_gradient(&x, &mut stream_rng(3, 1))
            .unwrap();
        assert_eq!(g1, g2);
    }
}
