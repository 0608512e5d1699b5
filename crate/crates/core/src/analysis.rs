//! Convergence-bound diagnostics for event-triggered decentralized SGD.
//!
//! [`theorem1_rhs`] evaluates the general bound on the weighted average of
//! squared gradient norms at the averaged model; [`corollary1_rhs`] evaluates
//! the simplified bound that holds under the step size of
//! [`corollary_step_size`] once `K` is large enough. Both depend on the
//! threshold schedule only through `G(K-1)` and `G_{1/2}(K-1)`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mixing::MixingMatrix;
use crate::objectives::{
    global_gradient, global_loss, ModelState, Objective, ObjectiveError, ObjectiveKind,
};
use crate::rng::{stream_rng, PROBE_STREAM};
use crate::trigger::{schedule_sum_g, schedule_sum_ghalf, ThresholdSchedule};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("step size too large for spectral gap (C2 = {0} <= 0)")]
    StepTooLarge(f64),
    #[error("threshold schedule is unbounded; G(K) is infinite")]
    UnboundedSchedule,
    #[error("invalid bound input: {0}")]
    InvalidInput(String),
    #[error("vectors have different lengths ({0} vs {1})")]
    DimensionMismatch(usize, usize),
}

/// Constants entering the convergence bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub gamma: f64,
    pub lipschitz: f64,
    pub sigma: f64,
    pub varsigma: f64,
    pub rho: f64,
    pub n: usize,
    pub iterations: usize,
    pub f0_minus_fstar: f64,
    pub schedule: ThresholdSchedule,
}

impl BoundInputs {
    fn validate(&self) -> Result<(), AnalysisError> {
        let bad = |m: &str| Err(AnalysisError::InvalidInput(m.into()));
        if !(0.0..1.0).contains(&self.rho) {
            return bad("rho must lie in [0, 1)");
        }
        if !(self.gamma > 0.0) {
            return bad("gamma must be > 0");
        }
        if self.n == 0 || self.iterations == 0 {
            return bad("n and K must be >= 1");
        }
        if !(self.lipschitz >= 0.0 && self.sigma >= 0.0 && self.varsigma >= 0.0)
            || !(self.f0_minus_fstar >= 0.0)
        {
            return bad("L, sigma, varsigma and f(0) - f* must be nonnegative");
        }
        Ok(())
    }

    /// `C2 = 1 - 36 gamma^2 n L^2 / (1 - sqrt(rho))^2`.
    pub fn c2(&self) -> f64 {
        let gap = 1.0 - self.rho.sqrt();
        1.0 - 36.0 * self.gamma.powi(2) * self.n as f64 * self.lipschitz.powi(2) / gap.powi(2)
    }

    /// `C1 = (1 - gamma)/2 - 72 gamma^3 L^2 / (C2 (1 - sqrt(rho))^2)`.
    pub fn c1(&self) -> f64 {
        let gap = 1.0 - self.rho.sqrt();
        (1.0 - self.gamma) / 2.0
            - 72.0 * self.gamma.powi(3) * self.lipschitz.powi(2) / (self.c2() * gap.powi(2))
    }

    /// `(G(K-1), G_{1/2}(K-1))`.
    pub fn schedule_sums(&self) -> Result<(f64, f64), AnalysisError> {
        if self.schedule == ThresholdSchedule::None {
            return Err(AnalysisError::UnboundedSchedule);
        }
        let last = self.iterations - 1;
        Ok((
            schedule_sum_g(&self.schedule, last),
            schedule_sum_ghalf(&self.schedule, last),
        ))
    }
}

/// `coef * g`, treating a vanishing schedule sum as an exact zero.
fn weighted(coef: f64, g: f64) -> f64 {
    if g == 0.0 {
        0.0
    } else {
        coef * g
    }
}

/// Right-hand side of the general convergence bound.
pub fn theorem1_rhs(inp: &BoundInputs) -> Result<f64, AnalysisError> {
    inp.validate()?;
    let c2 = inp.c2();
    if !(c2 > 0.0) {
        return Err(AnalysisError::StepTooLarge(c2));
    }
    let (g, g_half) = inp.schedule_sums()?;
    let BoundInputs {
        gamma,
        lipschitz: l,
        sigma,
        varsigma,
        rho,
        ..
    } = *inp;
    let n = inp.n as f64;
    let k = inp.iterations as f64;
    let gap = 1.0 - rho.sqrt();

    let initial = inp.f0_minus_fstar / k;
    let noise = gamma.powi(2) * l * sigma.powi(2) / (2.0 * n);
    let g_coef = 12.0 * gamma.powi(3) * n * l.powi(2) * (2.0 * l.powi(2) + 1.0) / c2
        + (3.0 * gamma * l.powi(2) + l + 1.0) / (2.0 * k)
        + 72.0 * gamma.powi(3) * l.powi(4) / (k * c2 * gap.powi(2));
    let g_half_term = weighted(gamma * rho * l.powi(2) / c2, g_half.powi(2));
    let sampling = 2.0 * n * gamma.powi(3) * sigma.powi(2) * l.powi(2) / (c2 * (1.0 - rho));
    let heterogeneity =
        18.0 * n * gamma.powi(3) * varsigma.powi(2) * l.powi(2) / (c2 * gap.powi(2));

    Ok(initial + noise + weighted(g_coef, g) + g_half_term + sampling + heterogeneity)
}

/// `gamma = 1 / (2 rho L^2 sqrt(K) + sigma sqrt(K/n))`.
pub fn corollary_step_size(
    lipschitz: f64,
    sigma: f64,
    rho: f64,
    n: usize,
    iterations: usize,
) -> f64 {
    let k = iterations as f64;
    1.0 / (2.0 * rho * lipschitz.powi(2) * k.sqrt() + sigma * (k / n as f64).sqrt())
}

/// Which of the large-`K` requirements hold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorollaryConditions {
    /// `K >= 4 n^3 L^2 / (sigma^3 (f(0) - f* + L/2)) * (sigma^2/(1-rho) + 9 varsigma^2/(1-sqrt(rho))^2)`
    pub k_ge_variance_bound: bool,
    /// `K >= 72 L^2 n^2 / (sigma^2 (1 - sqrt(rho))^2)`
    pub k_ge_c2_bound: bool,
    /// `K >= (sqrt(n) (L+1) / (2 rho L^2 sqrt(n) + sigma))^2`
    pub k_ge_step_bound: bool,
}

impl CorollaryConditions {
    pub fn all(&self) -> bool {
        self.k_ge_variance_bound && self.k_ge_c2_bound && self.k_ge_step_bound
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corollary1Report {
    pub rhs: f64,
    pub c3: f64,
    pub c4: f64,
    pub step_size: f64,
    pub conditions: CorollaryConditions,
}

pub fn corollary_conditions(inp: &BoundInputs) -> CorollaryConditions {
    let BoundInputs {
        lipschitz: l,
        sigma,
        varsigma,
        rho,
        f0_minus_fstar,
        ..
    } = *inp;
    let n = inp.n as f64;
    let k = inp.iterations as f64;
    let gap = 1.0 - rho.sqrt();
    let variance = 4.0 * n.powi(3) * l.powi(2) / (sigma.powi(3) * (f0_minus_fstar + l / 2.0))
        * (sigma.powi(2) / (1.0 - rho) + 9.0 * varsigma.powi(2) / gap.powi(2));
    let c2_bound = 72.0 * l.powi(2) * n.powi(2) / (sigma.powi(2) * gap.powi(2));
    let step = (n.sqrt() * (l + 1.0) / (2.0 * rho * l.powi(2) * n.sqrt() + sigma)).powi(2);
    CorollaryConditions {
        k_ge_variance_bound: k >= variance,
        k_ge_c2_bound: k >= c2_bound,
        k_ge_step_bound: k >= step,
    }
}

/// Right-hand side of the simplified bound under the corollary step size.
/// Inapplicability is reported in [`Corollary1Report::conditions`], not raised.
pub fn corollary1_rhs(inp: &BoundInputs) -> Result<Corollary1Report, AnalysisError> {
    inp.validate()?;
    let (g, g_half) = inp.schedule_sums()?;
    let BoundInputs {
        lipschitz: l, rho, ..
    } = *inp;
    let n = inp.n as f64;
    let k = inp.iterations as f64;
    let gap = 1.0 - rho.sqrt();
    let c3 = gap.powi(2) * (2.0 * l.powi(2) + 1.0) / (6.0 * rho * l.powi(2));
    let c4 = (7.0 * l.powi(2) + l + 1.0) / 2.0;

    let base = (2.0 * inp.f0_minus_fstar + l) * (1.0 / k + 1.0 / (k * n).sqrt());
    let rhs = base
        + weighted(2.0 * c3 / k.sqrt() + 2.0 * c4 / k, g)
        + weighted(2.0 / k.sqrt(), g_half.powi(2));
    Ok(Corollary1Report {
        rhs,
        c3,
        c4,
        step_size: corollary_step_size(l, inp.sigma, rho, inp.n, inp.iterations),
        conditions: corollary_conditions(inp),
    })
}

/// `||a + b||^2 <= 2||a||^2 + 2||b||^2`.
pub fn norm_inequality_check(a: &[f64], b: &[f64]) -> Result<bool, AnalysisError> {
    if a.len() != b.len() {
        return Err(AnalysisError::DimensionMismatch(a.len(), b.len()));
    }
    let sq = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>();
    let lhs = sq(&mut a.iter().zip(b).map(|(x, y)| x + y));
    let rhs = 2.0 * sq(&mut a.iter().copied()) + 2.0 * sq(&mut b.iter().copied());
    Ok(lhs <= rhs)
}

/// Estimated problem constants. Fields flagged `*_exact` are closed-form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstantEstimates {
    pub lipschitz: f64,
    pub lipschitz_exact: bool,
    pub sigma: f64,
    pub varsigma: f64,
    pub f0: f64,
    pub f_star: f64,
    pub f_star_exact: bool,
}

impl ConstantEstimates {
    pub fn f0_minus_fstar(&self) -> f64 {
        (self.f0 - self.f_star).max(0.0)
    }
}

fn shard_matrix(obj: &Objective) -> (DMatrix<f64>, DVector<f64>) {
    let shard = obj.shard();
    let a = DMatrix::from_fn(shard.len(), shard.dim(), |r, c| shard.features(r)[c]);
    let b = DVector::from_column_slice(shard.targets());
    (a, b)
}

/// `L` as the largest `lambda_max(A_i^T A_i)` for least squares, otherwise a
/// finite-difference probe.
pub fn lipschitz_constant(objectives: &[Objective], seed: u64) -> f64 {
    exact_lipschitz(objectives).unwrap_or_else(|| probe_lipschitz(objectives, 16, seed))
}

fn exact_lipschitz(objectives: &[Objective]) -> Option<f64> {
    if objectives[0].kind() != ObjectiveKind::LeastSquares {
        return None;
    }
    let l = objectives
        .iter()
        .map(|o| {
            let (a, _) = shard_matrix(o);
            SymmetricEigen::new(a.transpose() * &a)
                .eigenvalues
                .iter()
                .copied()
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .fold(0.0, f64::max);
    Some(l)
}

fn random_model(objectives: &[Objective], rng: &mut impl Rng, scale: f64) -> ModelState {
    let layout = objectives[0].layout().clone();
    let flat: Vec<f64> = (0..layout.total_dim())
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect();
    ModelState::from_flat(layout, &flat).expect("sized from layout")
}

fn probe_lipschitz(objectives: &[Objective], probes: usize, seed: u64) -> f64 {
    let mut rng = stream_rng(seed, PROBE_STREAM);
    let mut best: f64 = 0.0;
    for _ in 0..probes.max(1) {
        let x = random_model(objectives, &mut rng, 1.0);
        let mut y = x.clone();
        y.axpy(1.0, &random_model(objectives, &mut rng, 1e-3));
        let dist = x.distance_sq(&y).sqrt();
        for o in objectives {
            let gx = o.full_gradient(&x).expect("layout from objective");
            let gy = o.full_gradient(&y).expect("layout from objective");
            best = best.max(gx.distance_sq(&gy).sqrt() / dist);
        }
    }
    best
}

/// Exact minimum of the averaged least-squares objective.
fn least_squares_optimum(objectives: &[Objective]) -> Option<f64> {
    if objectives[0].kind() != ObjectiveKind::LeastSquares {
        return None;
    }
    let d = objectives[0].shard().dim();
    let mut h = DMatrix::<f64>::zeros(d, d);
    let mut r = DVector::<f64>::zeros(d);
    for o in objectives {
        let (a, b) = shard_matrix(o);
        h += a.transpose() * &a;
        r += a.transpose() * b;
    }
    let x = match h.clone().cholesky() {
        Some(c) => c.solve(&r),
        None => h.svd(true, true).solve(&r, 1e-12).ok()?,
    };
    let model = ModelState::from_flat(objectives[0].layout().clone(), x.as_slice()).ok()?;
    global_loss(objectives, &model).ok()
}

/// Estimate `L`, `sigma`, `varsigma`, `f(0)` and `f*` for a set of local
/// objectives. `samples` controls the number of probe points and mini-batches.
/// `f_star` overrides the optimum for objectives without a closed form
/// (default 0, a lower bound for cross-entropy).
pub fn estimate_constants(
    objectives: &[Objective],
    _mixing: &MixingMatrix,
    samples: usize,
    seed: u64,
    f_star: Option<f64>,
) -> Result<ConstantEstimates, ObjectiveError> {
    let samples = samples.max(2);
    let exact_l = exact_lipschitz(objectives);
    let lipschitz = exact_l.unwrap_or_else(|| probe_lipschitz(objectives, samples, seed));

    let mut rng = stream_rng(seed, PROBE_STREAM + 1);
    let zero = ModelState::zeros(objectives[0].layout().clone());
    let mut points = vec![zero.clone()];
    points.extend((0..4).map(|_| random_model(objectives, &mut rng, 1.0)));

    let mut sigma_sq: f64 = 0.0;
    let mut varsigma_sq: f64 = 0.0;
    for x in &points {
        let mean = global_gradient(objectives, x)?;
        let mut spread = 0.0;
        for o in objectives {
            let full = o.full_gradient(x)?;
            spread += full.distance_sq(&mean);
            let mut var = 0.0;
            for _ in 0..samples {
                var += o.stochastic_gradient(x, &mut rng)?.distance_sq(&full);
            }
            sigma_sq = sigma_sq.max(var / samples as f64);
        }
        varsigma_sq = varsigma_sq.max(spread / objectives.len() as f64);
    }

    let f0 = global_loss(objectives, &zero)?;
    let exact_star = least_squares_optimum(objectives);
    Ok(ConstantEstimates {
        lipschitz,
        lipschitz_exact: exact_l.is_some(),
        sigma: sigma_sq.sqrt(),
        varsigma: varsigma_sq.sqrt(),
        f0,
        f_star: exact_star.or(f_star).unwrap_or(0.0),
        f_star_exact: exact_star.is_some(),
    })
}

/// Full diagnostic: both bounds, the applicability flags and the constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub rhs_theorem1: Option<f64>,
    pub theorem1_note: Option<String>,
    pub rhs_corollary1: Option<f64>,
    pub conditions: BoundConditions,
    pub constants: BoundConstants,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundConditions {
    #[serde(rename = "C2_positive")]
    pub c2_positive: bool,
    pub corollary: Option<CorollaryConditions>,
    pub corollary_all: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundConstants {
    pub inputs: BoundInputs,
    #[serde(rename = "C1")]
    pub c1: f64,
    #[serde(rename = "C2")]
    pub c2: f64,
    #[serde(rename = "C3")]
    pub c3: Option<f64>,
    #[serde(rename = "C4")]
    pub c4: Option<f64>,
    #[serde(rename = "G")]
    pub g: Option<f64>,
    #[serde(rename = "G_half")]
    pub g_half: Option<f64>,
    pub corollary_step_size: f64,
}

pub fn bound_report(inp: &BoundInputs) -> Result<BoundReport, AnalysisError> {
    inp.validate()?;
    let sums = inp.schedule_sums().ok();
    let (rhs_theorem1, theorem1_note) = match theorem1_rhs(inp) {
        Ok(v) => (Some(v), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let corollary = corollary1_rhs(inp).ok();
    Ok(BoundReport {
        rhs_theorem1,
        theorem1_note,
        rhs_corollary1: corollary.as_ref().map(|c| c.rhs),
        conditions: BoundConditions {
            c2_positive: inp.c2() > 0.0,
            corollary: corollary.as_ref().map(|c| c.conditions),
            corollary_all: corollary.as_ref().is_some_and(|c| c.conditions.all()),
        },
        constants: BoundConstants {
            inputs: inp.clone(),
            c1: inp.c1(),
            c2: inp.c2(),
            c3: corollary.as_ref().map(|c| c.c3),
            c4: corollary.as_ref().map(|c| c.c4),
            g: sums.map(|s| s.0),
            g_half: sums.map(|s| s.1),
            corollary_step_size: corollary_step_size(
                inp.lipschitz,
                inp.sigma,
                inp.rho,
                inp.n,
                inp.iterations,
            ),
        },
    })
}
