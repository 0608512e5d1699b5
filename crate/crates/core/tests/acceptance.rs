//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

use std::time::{Duration, Instant};

use eventgrad_core::analysis::{corollary1_rhs, theorem1_rhs, BoundInputs};
use eventgrad_core::comm::topk_count;
use eventgrad_core::engine::{
    compare, run, run_sweep, write_sweep_csv, Algorithm, GammaScale, InitKind, RunConfig,
    SparsifySpec, SweepGrid,
};
use eventgrad_core::objectives::{ModelState, Objective, ObjectiveKindName, ObjectiveSpec};
use eventgrad_core::trigger::{
    schedule_sum_g_closed_form, schedule_sum_ghalf_closed_form, ThresholdSchedule, TriggerConfig,
};
use eventgrad_core::{MixingMatrix, Simulation};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit_secs: f64) -> Result<(), String> {
    ensure(elapsed.as_secs_f64() < limit_secs, || {
        format!("took {:.2}s, limit {limit_secs}s", elapsed.as_secs_f64())
    })
}

fn e<E: std::fmt::Display>(err: E) -> String {
    err.to_string()
}

fn max_state_gap(a: &[ModelState], b: &[ModelState]) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| {
            x.flatten()
                .into_iter()
                .zip(y.flatten())
                .map(|(p, q)| (p - q).abs())
                .collect::<Vec<_>>()
        })
        .fold(0.0, f64::max)
}

fn event_config(n: usize, trigger: TriggerConfig) -> RunConfig {
    RunConfig {
        trigger: Some(trigger),
        ..RunConfig::least_squares(n, Algorithm::Eventgrad)
    }
}

/// Lockstep comparison of two configs, returning the worst per-coordinate gap.
fn lockstep_gap(a: &RunConfig, b: &RunConfig, iterations: usize) -> Result<f64, String> {
    let mut sa = Simulation::new(a).map_err(e)?;
    let mut sb = Simulation::new(b).map_err(e)?;
    let mut worst = 0.0f64;
    for _ in 0..iterations {
        sa.step().map_err(e)?;
        sb.step().map_err(e)?;
        worst = worst.max(max_state_gap(sa.states(), sb.states()));
    }
    Ok(worst)
}

fn zero_threshold_equivalence() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for n in [4, 8] {
        let regular = RunConfig {
            iterations: 100,
            seed: 7,
            ..RunConfig::least_squares(n, Algorithm::Regular)
        };
        let zero = TriggerConfig {
            schedule: ThresholdSchedule::ConstantCap { c: 0.0 },
            ..TriggerConfig::default()
        };
        let event = RunConfig {
            iterations: 100,
            seed: 7,
            ..event_config(n, zero)
        };
        worst = worst.max(lockstep_gap(&regular, &event, 100)?);
    }
    ensure(worst <= 1e-12, || format!("max coordinate gap {worst:e}"))?;
    within(start.elapsed(), 5.0)?;
    Ok(format!(
        "max gap {worst:e} in {:.2}s",
        start.elapsed().as_secs_f64()
    ))
}

fn lemma1_spectral() -> Outcome {
    let start = Instant::now();
    let mut checked = 0;
    for n in [4, 8, 16] {
        let w = MixingMatrix::ring(n).map_err(e)?;
        let rho = w.spectral_gap();
        for i in 0..n {
            // W^k e_i by repeated products, independent of the library routine
            let mut col = vec![0.0; n];
            col[i] = 1.0;
            for k in 0..=50 {
                let dev: f64 = col.iter().map(|c| (1.0 / n as f64 - c).powi(2)).sum();
                ensure(dev <= rho.powi(k as i32) + 1e-12, || {
                    format!("n={n} i={i} k={k}: {dev} > rho^k = {}", rho.powi(k as i32))
                })?;
                let lib = w.mix_power_deviation(k, i).map_err(e)?;
                ensure((lib - dev).abs() <= 1e-12, || {
                    format!("n={n} i={i} k={k}: library {lib} vs direct {dev}")
                })?;
                col = w.apply(&col);
                checked += 1;
            }
        }
    }
    within(start.elapsed(), 1.0)?;
    Ok(format!("{checked} (n, i, k) triples"))
}

fn epsilon_bound() -> Outcome {
    let cfg = RunConfig {
        iterations: 2000,
        ..event_config(8, TriggerConfig::default())
    };
    let mut sim = Simulation::new(&cfg).map_err(e)?;
    let mut untriggered = 0u64;
    for _ in 0..cfg.iterations {
        let k = sim.iteration();
        let rep = sim.step().map_err(e)?;
        ensure(rep.epsilon_violations == 0, || {
            format!("violation reported at k={k}")
        })?;
        for (pe, blocks) in rep.triggered.iter().enumerate() {
            for (b, &fired) in blocks.iter().enumerate() {
                if !fired {
                    untriggered += 1;
                    let (d, t) = (rep.drifts[pe][b], rep.thresholds[pe][b]);
                    ensure(d < t, || {
                        format!("k={k} pe={pe} block={b}: drift {d} >= delta {t}")
                    })?;
                }
            }
        }
    }
    Ok(format!("{untriggered} untriggered checks, 0 violations"))
}

fn convergence_parity() -> Outcome {
    let start = Instant::now();
    let cfg = RunConfig {
        gamma: 0.1,
        gamma_scale: GammaScale::InverseLipschitz,
        iterations: 2000,
        ..event_config(
            8,
            TriggerConfig {
                horizon: 1.0,
                history_len: 1,
                ..TriggerConfig::default()
            },
        )
    };
    let c = compare(&cfg).map_err(e)?;
    let r = &c.report;
    ensure(r.final_loss_rel_gap <= 0.05, || {
        format!(
            "final loss regular {} vs event {} (rel gap {:.4})",
            r.final_loss_regular, r.final_loss_event, r.final_loss_rel_gap
        )
    })?;
    ensure(r.message_pct < 100.0, || {
        format!("message percentage {}", r.message_pct)
    })?;
    within(start.elapsed(), 60.0)?;
    Ok(format!(
        "loss {:.6} vs {:.6} (rel gap {:.4}), messages {:.2}%",
        r.final_loss_regular, r.final_loss_event, r.final_loss_rel_gap, r.message_pct
    ))
}

fn mlp_spec() -> ObjectiveSpec {
    ObjectiveSpec {
        kind: ObjectiveKindName::Mlp,
        dim: 7,
        hidden: 5,
        classes: 3,
        samples_per_pe: 32,
        ..ObjectiveSpec::default()
    }
}

fn topk_accounting() -> Outcome {
    let percent = 10.0;
    let base = RunConfig {
        gamma: 0.05,
        gamma_scale: GammaScale::Absolute,
        iterations: 200,
        objective: mlp_spec(),
        ..event_config(4, TriggerConfig::default())
    };
    let sparse = RunConfig {
        sparsify: Some(SparsifySpec {
            topk_percent: percent,
        }),
        ..base.clone()
    };
    let m = run(&sparse).map_err(e)?;
    let layout = base.objective.objective_kind().layout(base.objective.dim);
    let mut expected = 0u64;
    for b in 0..layout.num_blocks() {
        let per_msg = 2 * topk_count(layout.block_len(b), percent).map_err(e)? as u64;
        let want = m.stats.block_messages[b] * per_msg;
        ensure(m.stats.block_volume[b] == want, || {
            format!("block {b}: volume {} != {want}", m.stats.block_volume[b])
        })?;
        expected += want;
    }
    let last = m.rows.last().ok_or("no rows")?;
    ensure(
        last.volume_cum == expected && m.stats.scalar_volume == expected,
        || format!("volume_cum {} != {expected}", last.volume_cum),
    )?;

    let full = RunConfig {
        sparsify: Some(SparsifySpec {
            topk_percent: 100.0,
        }),
        ..base.clone()
    };
    let gap = lockstep_gap(&full, &base, base.iterations)?;
    ensure(gap <= 1e-12, || format!("top-100% vs dense gap {gap:e}"))?;
    Ok(format!(
        "{} messages, volume {expected} exact over {} blocks; top-100% gap {gap:e}",
        m.stats.messages_sent,
        layout.num_blocks()
    ))
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

fn geometric_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for trial in 0..100 {
        let alpha = rng.random_range(0.01..10.0);
        let beta = rng.random_range(0.01..1.0);
        let big_k = rng.random_range(0..500usize);
        let sched = ThresholdSchedule::GeometricCap { alpha, beta };
        let (mut g, mut gh) = (0.0, 0.0);
        for k in 0..=big_k {
            let v = alpha * beta.powi(k as i32);
            g += v;
            gh += v.sqrt();
        }
        let cg = schedule_sum_g_closed_form(&sched, big_k).ok_or("no closed form")?;
        let ch = schedule_sum_ghalf_closed_form(&sched, big_k).ok_or("no closed form")?;
        ensure(close(cg, g, 1e-12) && close(ch, gh, 1e-12), || {
            format!("trial {trial} (alpha={alpha}, beta={beta}, K={big_k}): G {cg} vs {g}, G1/2 {ch} vs {gh}")
        })?;
    }

    let (alpha, beta) = (0.05, 0.99);
    let cfg = RunConfig {
        iterations: 500,
        ..event_config(
            8,
            TriggerConfig {
                horizon: 2.0,
                schedule: ThresholdSchedule::GeometricCap { alpha, beta },
                ..TriggerConfig::default()
            },
        )
    };
    let mut sim = Simulation::new(&cfg).map_err(e)?;
    let mut recorded = 0;
    let mut capped = 0;
    for _ in 0..cfg.iterations {
        let k = sim.iteration();
        let rep = sim.step().map_err(e)?;
        let bound = alpha * beta.powi(k as i32);
        for &t in rep.thresholds.iter().flatten() {
            recorded += 1;
            if t > 0.0 && close(t * t, bound, 1e-12) {
                capped += 1;
            }
            ensure(t * t <= bound * (1.0 + 1e-12), || {
                format!("k={k}: delta^2 = {} > alpha beta^k = {bound}", t * t)
            })?;
        }
        for row in sim.triggers().ok_or("no triggers")? {
            for t in row {
                let d = t.threshold();
                ensure(d * d <= bound * (1.0 + 1e-12), || {
                    format!("k={k}: stored delta {d}")
                })?;
            }
        }
    }
    Ok(format!(
        "100 identity trials; {recorded} thresholds ({capped} at the cap)"
    ))
}

fn finite_difference(obj: &Objective, x: &ModelState) -> Result<f64, String> {
    let analytic = obj.full_gradient(x).map_err(e)?.flatten();
    let base = x.flatten();
    let h = 1e-6;
    let mut num = Vec::with_capacity(base.len());
    for j in 0..base.len() {
        let mut p = base.clone();
        let mut m = base.clone();
        p[j] += h;
        m[j] -= h;
        let lp = obj
            .loss(&ModelState::from_flat(x.layout().clone(), &p).map_err(e)?)
            .map_err(e)?;
        let lm = obj
            .loss(&ModelState::from_flat(x.layout().clone(), &m).map_err(e)?)
            .map_err(e)?;
        num.push((lp - lm) / (2.0 * h));
    }
    let diff: f64 = analytic
        .iter()
        .zip(&num)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    let scale: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    Ok(diff / scale.max(1e-8))
}

fn gradient_oracles() -> Outcome {
    let start = Instant::now();
    let specs = [
        ObjectiveSpec {
            dim: 6,
            samples_per_pe: 20,
            ..ObjectiveSpec::default()
        },
        ObjectiveSpec {
            kind: ObjectiveKindName::Logistic,
            dim: 5,
            classes: 3,
            samples_per_pe: 20,
            ..ObjectiveSpec::default()
        },
        mlp_spec(),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for spec in &specs {
        let obj = spec.build(1, 3).map_err(e)?.remove(0);
        for _ in 0..3 {
            let flat: Vec<f64> = (0..obj.layout().total_dim())
                .map(|_| rng.random_range(-1.0..1.0))
                .collect();
            let x = ModelState::from_flat(obj.layout().clone(), &flat).map_err(e)?;
            let rel = finite_difference(&obj, &x)?;
            ensure(rel < 1e-5, || {
                format!("{:?}: relative error {rel:e}", spec.kind)
            })?;
            worst = worst.max(rel);
        }
    }
    within(start.elapsed(), 5.0)?;
    Ok(format!("worst relative error {worst:e}"))
}

fn consensus_contraction() -> Outcome {
    let mut cfg = RunConfig {
        gamma: 0.0,
        gamma_scale: GammaScale::Absolute,
        iterations: 30,
        ..RunConfig::least_squares(8, Algorithm::Regular)
    };
    cfg.init.kind = InitKind::Gaussian;
    cfg.init.scale = 1.0;
    cfg.init.distinct_per_pe = true;
    let mut sim = Simulation::new(&cfg).map_err(e)?;
    let rho = sim.mixing().spectral_gap();
    let d0 = sim.disagreement();
    ensure(d0 > 0.0, || "initial models are identical".into())?;
    let mut worst_ratio = 0.0f64;
    for k in 1..=30 {
        let d = sim.step().map_err(e)?.row.disagreement;
        let bound = rho.powi(2 * k) * d0;
        ensure(d <= bound + 1e-10, || format!("k={k}: D={d} > {bound}"))?;
        if bound > 0.0 {
            worst_ratio = worst_ratio.max(d / bound);
        }
    }
    Ok(format!(
        "D_0 = {d0:.4}, max D_k / (rho^2k D_0) = {worst_ratio:.4}"
    ))
}

fn csv_bytes(cfg: &RunConfig) -> Result<Vec<u8>, String> {
    let mut out = Vec::new();
    run(cfg).map_err(e)?.write_csv(&mut out).map_err(e)?;
    Ok(out)
}

fn sweep_bytes(base: &RunConfig, grid: &SweepGrid, threads: usize) -> Result<Vec<Vec<u8>>, String> {
    let outcomes = run_sweep(base, grid, threads).map_err(e)?;
    let mut files = Vec::new();
    let mut summary = Vec::new();
    write_sweep_csv(
        &outcomes.iter().map(|o| o.row).collect::<Vec<_>>(),
        &mut summary,
    )
    .map_err(e)?;
    files.push(summary);
    for o in &outcomes {
        let mut f = Vec::new();
        o.metrics.write_csv(&mut f).map_err(e)?;
        files.push(f);
    }
    Ok(files)
}

fn determinism() -> Outcome {
    let cfg = RunConfig {
        iterations: 300,
        seed: 11,
        objective: mlp_spec(),
        gamma: 0.05,
        gamma_scale: GammaScale::Absolute,
        sparsify: Some(SparsifySpec { topk_percent: 25.0 }),
        ..event_config(8, TriggerConfig::default())
    };
    let a = csv_bytes(&cfg)?;
    let b = csv_bytes(&cfg)?;
    ensure(a == b, || {
        "single-run metrics.csv differs between executions".into()
    })?;

    let base = RunConfig {
        iterations: 200,
        ..event_config(4, TriggerConfig::default())
    };
    let grid = SweepGrid {
        n: Some(vec![4, 8]),
        horizon: Some(vec![0.5, 1.0, 2.0]),
        ..SweepGrid::default()
    };
    let first = sweep_bytes(&base, &grid, 4)?;
    let second = sweep_bytes(&base, &grid, 4)?;
    let serial = sweep_bytes(&base, &grid, 1)?;
    ensure(first == second, || "4-thread sweeps differ".into())?;
    ensure(first == serial, || {
        "4-thread sweep differs from 1-thread sweep".into()
    })?;
    Ok(format!(
        "single run and {}-point 4-thread sweep byte-identical",
        first.len() - 1
    ))
}

/// Bound evaluators transcribed a second time, term by term.
mod reference {
    pub struct In {
        pub gamma: f64,
        pub l: f64,
        pub sigma: f64,
        pub vs: f64,
        pub rho: f64,
        pub n: f64,
        pub k: f64,
        pub f0: f64,
        pub g: f64,
        pub gh: f64,
    }

    pub fn theorem1(p: &In) -> f64 {
        let s = 1.0 - p.rho.sqrt();
        let c2 = 1.0 - (36.0 * p.gamma * p.gamma / (s * s)) * p.n * p.l * p.l;
        let inv_c2 = 1.0 / c2;
        let l2 = p.l * p.l;
        let g3 = p.gamma * p.gamma * p.gamma;
        let mut total = p.f0 / p.k;
        total += p.gamma * p.gamma * p.l * p.sigma * p.sigma / (2.0 * p.n);
        let coef = 12.0 * inv_c2 * g3 * p.n * l2 * (2.0 * l2 + 1.0)
            + (3.0 * p.gamma * l2 + p.l + 1.0) / (2.0 * p.k)
            + 72.0 * g3 * l2 * l2 / (p.k * c2 * s * s);
        total += coef * p.g;
        total += inv_c2 * p.gamma * p.rho * l2 * p.gh * p.gh;
        total += 2.0 * p.n * g3 * p.sigma * p.sigma * l2 / (c2 * (1.0 - p.rho));
        total += 18.0 * p.n * g3 * p.vs * p.vs * l2 / (c2 * s * s);
        total
    }

    pub fn corollary1(p: &In) -> f64 {
        let s = 1.0 - p.rho.sqrt();
        let l2 = p.l * p.l;
        let c3 = s * s * (2.0 * l2 + 1.0) / (6.0 * p.rho * l2);
        let c4 = (7.0 * l2 + p.l + 1.0) / 2.0;
        let rk = p.k.sqrt();
        (2.0 * p.f0 + p.l) * (1.0 / p.k + 1.0 / (p.k * p.n).sqrt())
            + (2.0 * c3 / rk + 2.0 * c4 / p.k) * p.g
            + 2.0 / rk * p.gh * p.gh
    }
}

fn bound_evaluators() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut worst = 0.0f64;
    for trial in 0..100 {
        let n = rng.random_range(2..33usize);
        let rho: f64 = rng.random_range(0.05..0.95);
        let l = rng.random_range(0.1..5.0);
        // keep C2 > 0
        let gamma =
            rng.random_range(0.05..0.95) * (1.0 - rho.sqrt()) / (6.0 * l * (n as f64).sqrt());
        let iterations = rng.random_range(1..5000usize);
        let schedule = if trial % 2 == 0 {
            ThresholdSchedule::GeometricCap {
                alpha: rng.random_range(0.01..5.0),
                beta: rng.random_range(0.1..0.99),
            }
        } else {
            ThresholdSchedule::ConstantCap {
                c: rng.random_range(0.0..0.5),
            }
        };
        let inp = BoundInputs {
            gamma,
            lipschitz: l,
            sigma: rng.random_range(0.0..3.0),
            varsigma: rng.random_range(0.0..3.0),
            rho,
            n,
            iterations,
            f0_minus_fstar: rng.random_range(0.0..10.0),
            schedule,
        };
        // schedule sums computed here by plain loops
        let (mut g, mut gh) = (0.0, 0.0);
        for k in 0..iterations {
            let gk = match schedule {
                ThresholdSchedule::GeometricCap { alpha, beta } => alpha * beta.powi(k as i32),
                ThresholdSchedule::ConstantCap { c } => c * c,
                ThresholdSchedule::None => unreachable!(),
            };
            g += gk;
            gh += gk.sqrt();
        }
        let p = reference::In {
            gamma,
            l,
            sigma: inp.sigma,
            vs: inp.varsigma,
            rho,
            n: n as f64,
            k: iterations as f64,
            f0: inp.f0_minus_fstar,
            g,
            gh,
        };
        let t_lib = theorem1_rhs(&inp).map_err(e)?;
        let t_ref = reference::theorem1(&p);
        let c_lib = corollary1_rhs(&inp).map_err(e)?.rhs;
        let c_ref = reference::corollary1(&p);
        for (what, a, b) in [("theorem", t_lib, t_ref), ("corollary", c_lib, c_ref)] {
            let rel = (a - b).abs() / a.abs().max(b.abs()).max(1.0);
            ensure(rel <= 1e-12, || format!("trial {trial} {what}: {a} vs {b}"))?;
            worst = worst.max(rel);
        }
    }

    // g = 0: hand-simplified forms
    let inp = BoundInputs {
        gamma: 0.01,
        lipschitz: 1.5,
        sigma: 0.7,
        varsigma: 0.4,
        rho: 1.0 / 3.0,
        n: 4,
        iterations: 1000,
        f0_minus_fstar: 2.5,
        schedule: ThresholdSchedule::ConstantCap { c: 0.0 },
    };
    let (gamma, l, sigma, vs, rho, n, k, f0) = (
        inp.gamma,
        inp.lipschitz,
        inp.sigma,
        inp.varsigma,
        inp.rho,
        inp.n as f64,
        inp.iterations as f64,
        inp.f0_minus_fstar,
    );
    let gap = 1.0 - rho.sqrt();
    let c2 = 1.0 - 36.0 * gamma.powi(2) * n * l.powi(2) / gap.powi(2);
    let t_hand = f0 / k
        + gamma.powi(2) * l * sigma.powi(2) / (2.0 * n)
        + 2.0 * n * gamma.powi(3) * sigma.powi(2) * l.powi(2) / (c2 * (1.0 - rho))
        + 18.0 * n * gamma.powi(3) * vs.powi(2) * l.powi(2) / (c2 * gap.powi(2));
    let c_hand = (2.0 * f0 + l) * (1.0 / k + 1.0 / (k * n).sqrt());
    let t_lib = theorem1_rhs(&inp).map_err(e)?;
    let c_lib = corollary1_rhs(&inp).map_err(e)?.rhs;
    ensure(t_lib == t_hand, || {
        format!("theorem g=0: {t_lib} vs {t_hand}")
    })?;
    ensure(c_lib == c_hand, || {
        format!("corollary g=0: {c_lib} vs {c_hand}")
    })?;
    Ok(format!(
        "100 trials, worst relative gap {worst:e}; g=0 forms exact"
    ))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("zero-threshold equivalence", zero_threshold_equivalence),
        ("mixing power deviation", lemma1_spectral),
        ("epsilon bound", epsilon_bound),
        ("convergence parity with savings", convergence_parity),
        ("top-k accounting", topk_accounting),
        ("geometric schedule", geometric_identities),
        ("gradient oracles", gradient_oracles),
        ("consensus contraction", consensus_contraction),
        ("determinism", determinism),
        ("bound evaluators", bound_evaluators),
    ];
    let mut failed = 0;
    for (idx, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", idx + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {why}", idx + 1);
            }
        }
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
