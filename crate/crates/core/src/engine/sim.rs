use std::sync::Arc;
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::analysis;
use crate::comm::{CommStats, Network, PayloadMode};
use crate::mixing::MixingMatrix;
use crate::objectives::{global_gradient, global_loss, ModelLayout, ModelState, Objective};
use crate::rng::{pe_rng, stream_rng, INIT_STREAM};
use crate::trigger::{ThresholdSchedule, TriggerState};

use super::config::{Algorithm, GammaScale, InitKind, RunConfig};
use super::metrics::{MetricsRow, RunMetrics};
use super::EngineError;

/// What happened during one iteration.
#[derive(Debug, Clone)]
pub struct StepReport {
    pub row: MetricsRow,
    /// `triggered[pe][block]`
    pub triggered: Vec<Vec<bool>>,
    /// Threshold in force when each block was checked, `thresholds[pe][block]`.
    /// Empty for the regular algorithm.
    pub thresholds: Vec<Vec<f64>>,
    /// `||x_hat - x||` at the check, `drifts[pe][block]`.
    pub drifts: Vec<Vec<f64>>,
    pub epsilon_violations: u64,
}

enum Mode {
    Regular {
        stats: CommStats,
    },
    Event {
        triggers: Vec<Vec<TriggerState>>,
        network: Network,
        schedule: ThresholdSchedule,
        payload: PayloadMode,
        self_fresh: bool,
    },
}

/// Step-by-step executor for one run. Single-threaded; PEs are visited in
/// index order and puts commit at the barrier in `(src, block, dst)` order.
pub struct Simulation {
    mixing: MixingMatrix,
    objectives: Vec<Objective>,
    layout: Arc<ModelLayout>,
    gamma: f64,
    lipschitz: Option<f64>,
    states: Vec<ModelState>,
    rngs: Vec<ChaCha8Rng>,
    mode: Mode,
    k: usize,
    track_grad_norm: bool,
    grad_norm_sum: f64,
    epsilon_violations: u64,
}

impl Simulation {
    pub fn new(config: &RunConfig) -> Result<Self, EngineError> {
        config.validate()?;
        let mixing = config.mixing.build(config.n)?;
        let objectives = config.objective.build(config.n, config.seed)?;
        Self::from_parts(config, mixing, objectives)
    }

    /// Use prebuilt objectives (e.g. hand-made shards) with the rest of `config`.
    pub fn from_parts(
        config: &RunConfig,
        mixing: MixingMatrix,
        objectives: Vec<Objective>,
    ) -> Result<Self, EngineError> {
        if objectives.len() != config.n || mixing.n() != config.n {
            return Err(EngineError::Config(format!(
                "need {} objectives and a {}x{} mixing matrix",
                config.n, config.n, config.n
            )));
        }
        let layout = objectives[0].layout().clone();
        if objectives.iter().any(|o| **o.layout() != *layout) {
            return Err(EngineError::Config(
                "objectives disagree on model layout".into(),
            ));
        }

        let (gamma, lipschitz) = match config.gamma_scale {
            GammaScale::Absolute => (config.gamma, None),
            GammaScale::InverseLipschitz => {
                let l = analysis::lipschitz_constant(&objectives, config.seed);
                if !(l > 0.0) || !l.is_finite() {
                    return Err(EngineError::Config(format!(
                        "cannot scale gamma by 1/L with L = {l}"
                    )));
                }
                (config.gamma / l, Some(l))
            }
        };

        let states = initial_states(config, &layout);
        let rngs = (0..config.n).map(|i| pe_rng(config.seed, i)).collect();
        let mode = match config.algorithm {
            Algorithm::Regular => Mode::Regular {
                stats: CommStats::new(config.n, layout.num_blocks()),
            },
            Algorithm::Eventgrad => {
                let tc = config.trigger_config();
                let triggers = (0..config.n)
                    .map(|_| {
                        layout
                            .blocks()
                            .iter()
                            .map(|b| TriggerState::new(&tc, b.len()))
                            .collect()
                    })
                    .collect();
                Mode::Event {
                    triggers,
                    network: Network::new(&mixing, &layout, config.staleness),
                    schedule: tc.schedule,
                    payload: config.payload_mode(),
                    self_fresh: config.self_fresh,
                }
            }
        };

        Ok(Self {
            mixing,
            objectives,
            layout,
            gamma,
            lipschitz,
            states,
            rngs,
            mode,
            k: 0,
            track_grad_norm: false,
            grad_norm_sum: 0.0,
            epsilon_violations: 0,
        })
    }

    /// Replace the initial models. Only allowed before the first step.
    pub fn set_states(&mut self, states: Vec<ModelState>) -> Result<(), EngineError> {
        if self.k != 0 {
            return Err(EngineError::Config(
                "states can only be set before stepping".into(),
            ));
        }
        if states.len() != self.states.len() || states.iter().any(|s| **s.layout() != *self.layout)
        {
            return Err(EngineError::Config(
                "initial states do not match the model".into(),
            ));
        }
        self.states = states;
        Ok(())
    }

    /// Accumulate `||grad f(x_bar_k)||^2` before every update.
    pub fn track_grad_norm(&mut self, on: bool) {
        self.track_grad_norm = on;
    }

    pub fn iteration(&self) -> usize {
        self.k
    }

    pub fn states(&self) -> &[ModelState] {
        &self.states
    }

    pub fn mixing(&self) -> &MixingMatrix {
        &self.mixing
    }

    pub fn objectives(&self) -> &[Objective] {
        &self.objectives
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn triggers(&self) -> Option<&[Vec<TriggerState>]> {
        match &self.mode {
            Mode::Event { triggers, .. } => Some(triggers),
            Mode::Regular { .. } => None,
        }
    }

    pub fn network(&self) -> Option<&Network> {
        match &self.mode {
            Mode::Event { network, .. } => Some(network),
            Mode::Regular { .. } => None,
        }
    }

    pub fn stats(&self) -> &CommStats {
        match &self.mode {
            Mode::Regular { stats } => stats,
            Mode::Event { network, .. } => network.stats(),
        }
    }

    pub fn averaged_model(&self) -> ModelState {
        ModelState::average(&self.states)
    }

    pub fn disagreement(&self) -> f64 {
        let mean = self.averaged_model();
        self.states
            .iter()
            .map(|s| s.distance_sq(&mean))
            .sum::<f64>()
            / self.states.len() as f64
    }

    pub fn loss(&self) -> Result<f64, EngineError> {
        Ok(global_loss(&self.objectives, &self.averaged_model())?)
    }

    /// Run one iteration and report its metrics row.
    pub fn step(&mut self) -> Result<StepReport, EngineError> {
        if self.track_grad_norm {
            let g = global_gradient(&self.objectives, &self.averaged_model())?;
            self.grad_norm_sum += g.norm_sq();
        }
        let k = self.k;
        let mut report = match self.mode {
            Mode::Regular { .. } => self.step_regular()?,
            Mode::Event { .. } => self.step_eventgrad()?,
        };
        self.k += 1;
        self.epsilon_violations += report.epsilon_violations;
        let stats = self.stats();
        report.row = MetricsRow {
            iter: k + 1,
            loss: self.loss()?,
            disagreement: self.disagreement(),
            messages_cum: stats.messages_sent,
            volume_cum: stats.scalar_volume,
            events: report.triggered.iter().flatten().filter(|&&t| t).count() as u64,
        };
        Ok(report)
    }

    fn step_regular(&mut self) -> Result<StepReport, EngineError> {
        let n = self.states.len();
        let num_blocks = self.layout.num_blocks();
        let mut next = Vec::with_capacity(n);
        for i in 0..n {
            let grad =
                self.objectives[i].stochastic_gradient(&self.states[i], &mut self.rngs[i])?;
            let mut x = ModelState::zeros(self.layout.clone());
            for b in 0..num_blocks {
                let sources: Vec<&[f64]> = self.states.iter().map(|s| s.block(b)).collect();
                mix_block(
                    &self.mixing,
                    i,
                    &sources,
                    grad.block(b),
                    self.gamma,
                    x.block_mut(b),
                );
            }
            next.push(x);
        }
        if let Mode::Regular { stats } = &mut self.mode {
            for i in 0..n {
                let fanout = self.mixing.neighbors(i).len() as u64;
                for b in 0..num_blocks {
                    stats.record(i, b, self.layout.block_len(b) as u64, fanout);
                }
            }
        }
        self.states = next;
        Ok(StepReport {
            row: empty_row(),
            triggered: vec![vec![true; num_blocks]; n],
            thresholds: Vec::new(),
            drifts: Vec::new(),
            epsilon_violations: 0,
        })
    }

    #[allow(clippy::needless_range_loop)]
    fn step_eventgrad(&mut self) -> Result<StepReport, EngineError> {
        let k = self.k;
        let n = self.states.len();
        let num_blocks = self.layout.num_blocks();
        let Mode::Event {
            triggers,
            network,
            schedule,
            payload,
            self_fresh,
        } = &mut self.mode
        else {
            unreachable!("called only in event mode");
        };

        // trigger checks and staged puts
        let mut triggered = vec![vec![false; num_blocks]; n];
        let mut thresholds = vec![vec![0.0; num_blocks]; n];
        let mut drifts = vec![vec![0.0; num_blocks]; n];
        let mut violations = 0;
        for i in 0..n {
            for b in 0..num_blocks {
                let state = &mut triggers[i][b];
                let current = self.states[i].block(b);
                state.refresh(k, schedule);
                thresholds[i][b] = state.threshold();
                let fire = match state.last_sent_iter() {
                    None => {
                        state.initialize(current, k, schedule)?;
                        true
                    }
                    Some(_) => {
                        let drift = state.drift(current)?;
                        drifts[i][b] = drift;
                        if drift >= state.threshold() {
                            state.update_on_trigger(current, k, schedule)?;
                            true
                        } else {
                            if !(drift < state.threshold()) {
                                violations += 1;
                            }
                            false
                        }
                    }
                };
                if fire {
                    network.broadcast(i, b, current, *payload, k)?;
                    triggered[i][b] = true;
                }
            }
        }
        network.deliver(k);

        // x_{k+1,i} = sum_j W_ji x_hat_{k,j} - gamma grad F_i(x_hat_{k,i})
        let mut next = Vec::with_capacity(n);
        for i in 0..n {
            let own_hat;
            let own: &ModelState = if *self_fresh {
                &self.states[i]
            } else {
                own_hat = ModelState::from_blocks(
                    self.layout.clone(),
                    triggers[i]
                        .iter()
                        .map(|t| t.last_sent_value().to_vec())
                        .collect(),
                )?;
                &own_hat
            };
            let grad = self.objectives[i].stochastic_gradient(own, &mut self.rngs[i])?;
            let window = network.window(i);
            let mut x = ModelState::zeros(self.layout.clone());
            for b in 0..num_blocks {
                let sources: Vec<&[f64]> = (0..n)
                    .map(|j| {
                        if j == i {
                            own.block(b)
                        } else {
                            window.value(j, b).unwrap_or(&[])
                        }
                    })
                    .collect();
                mix_block(
                    &self.mixing,
                    i,
                    &sources,
                    grad.block(b),
                    self.gamma,
                    x.block_mut(b),
                );
            }
            next.push(x);
        }
        self.states = next;

        Ok(StepReport {
            row: empty_row(),
            triggered,
            thresholds,
            drifts,
            epsilon_violations: violations,
        })
    }

    /// Run to completion, collecting metrics.
    pub fn run(mut self, iterations: usize) -> Result<RunMetrics, EngineError> {
        let started = Instant::now();
        let initial_loss = self.loss()?;
        let initial_disagreement = self.disagreement();
        let mut rows = Vec::with_capacity(iterations);
        for _ in 0..iterations {
            rows.push(self.step()?.row);
        }
        let final_model = self.averaged_model();
        let final_loss = global_loss(&self.objectives, &final_model)?;
        let shard = self.objectives[0].shard().len() as f64;
        Ok(RunMetrics {
            rows,
            initial_loss,
            initial_disagreement,
            final_model,
            final_loss,
            stats: self.stats().clone(),
            epsilon_violations: self.epsilon_violations,
            avg_grad_norm_sq: self
                .track_grad_norm
                .then(|| self.grad_norm_sum / iterations as f64),
            rho: self.mixing.spectral_gap(),
            gamma: self.gamma,
            lipschitz: self.lipschitz,
            iterations_per_epoch: shard / self.objectives[0].batch_size() as f64,
            wall_time_secs: started.elapsed().as_secs_f64(),
        })
    }
}

fn empty_row() -> MetricsRow {
    MetricsRow {
        iter: 0,
        loss: 0.0,
        disagreement: 0.0,
        messages_cum: 0,
        volume_cum: 0,
        events: 0,
    }
}

/// `out = sum_j W_ji sources[j] - gamma * grad`, summing `j` in ascending order.
fn mix_block(
    w: &MixingMatrix,
    i: usize,
    sources: &[&[f64]],
    grad: &[f64],
    gamma: f64,
    out: &mut [f64],
) {
    for (j, src) in sources.iter().enumerate() {
        let weight = w.weight(j, i);
        if weight == 0.0 {
            continue;
        }
        for (o, s) in out.iter_mut().zip(src.iter()) {
            *o += weight * s;
        }
    }
    for (o, g) in out.iter_mut().zip(grad) {
        *o -= gamma * g;
    }
}

fn initial_states(config: &RunConfig, layout: &Arc<ModelLayout>) -> Vec<ModelState> {
    let mut rng = stream_rng(config.seed, INIT_STREAM);
    let draw = |rng: &mut ChaCha8Rng| {
        let flat: Vec<f64> = (0..layout.total_dim())
            .map(|_| config.init.scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        ModelState::from_flat(layout.clone(), &flat).expect("sized from layout")
    };
    match config.init_kind() {
        InitKind::Zeros | InitKind::Auto => vec![ModelState::zeros(layout.clone()); config.n],
        InitKind::Gaussian if config.init.distinct_per_pe => {
            (0..config.n).map(|_| draw(&mut rng)).collect()
        }
        InitKind::Gaussian => vec![draw(&mut rng); config.n],
    }
}

/// Execute `config` and return its metrics.
pub fn run(config: &RunConfig) -> Result<RunMetrics, EngineError> {
    Simulation::new(config)?.run(config.iterations)
}
