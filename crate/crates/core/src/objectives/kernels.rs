//! Per-sample losses and hand-written backprop.

use super::{ModelState, ObjectiveKind, Shard};

fn softmax_in_place(z: &mut [f64]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
    // log-sum-exp of the original logits
    max + sum.ln()
}

/// `out = W a + b` with `W` row-major `rows x a.len()`.
fn affine(w: &[f64], b: &[f64], a: &[f64], out: &mut [f64]) {
    let cols = a.len();
    for (r, o) in out.iter_mut().enumerate() {
        let row = &w[r * cols..(r + 1) * cols];
        *o = b[r] + row.iter().zip(a).map(|(x, y)| x * y).sum::<f64>();
    }
}

fn mlp_forward(
    model: &ModelState,
    a: &[f64],
    hidden: usize,
    classes: usize,
) -> (Vec<f64>, Vec<f64>) {
    let mut h = vec![0.0; hidden];
    affine(model.block(0), model.block(1), a, &mut h);
    h.iter_mut().for_each(|v| *v = v.tanh());
    let mut z = vec![0.0; classes];
    affine(model.block(2), model.block(3), &h, &mut z);
    (h, z)
}

pub(super) fn sample_loss(kind: ObjectiveKind, model: &ModelState, shard: &Shard, s: usize) -> f64 {
    let a = shard.features(s);
    let t = shard.target(s);
    match kind {
        ObjectiveKind::LeastSquares => {
            let r: f64 = model
                .block(0)
                .iter()
                .zip(a)
                .map(|(x, y)| x * y)
                .sum::<f64>()
                - t;
            0.5 * r * r
        }
        ObjectiveKind::Logistic { classes } => {
            let mut z = vec![0.0; classes];
            affine(model.block(0), model.block(1), a, &mut z);
            let zy = z[t as usize];
            softmax_in_place(&mut z) - zy
        }
        ObjectiveKind::Mlp { hidden, classes } => {
            let (_, mut z) = mlp_forward(model, a, hidden, classes);
            let zy = z[t as usize];
            softmax_in_place(&mut z) - zy
        }
    }
}

/// `grad += scale * grad loss_s(model)`.
pub(super) fn accumulate_sample_gradient(
    kind: ObjectiveKind,
    model: &ModelState,
    shard: &Shard,
    s: usize,
    scale: f64,
    grad: &mut ModelState,
) {
    let a = shard.features(s);
    let t = shard.target(s);
    match kind {
        ObjectiveKind::LeastSquares => {
            let r: f64 = model
                .block(0)
                .iter()
                .zip(a)
                .map(|(x, y)| x * y)
                .sum::<f64>()
                - t;
            for (g, x) in grad.block_mut(0).iter_mut().zip(a) {
                *g += scale * r * x;
            }
        }
        ObjectiveKind::Logistic { classes } => {
            let mut p = vec![0.0; classes];
            affine(model.block(0), model.block(1), a, &mut p);
            softmax_in_place(&mut p);
            p[t as usize] -= 1.0;
            outer_accumulate(grad.block_mut(0), &p, a, scale);
            for (g, d) in grad.block_mut(1).iter_mut().zip(&p) {
                *g += scale * d;
            }
        }
        ObjectiveKind::Mlp { hidden, classes } => {
            let (h, mut p) = mlp_forward(model, a, hidden, classes);
            softmax_in_place(&mut p);
            p[t as usize] -= 1.0;
            outer_accumulate(grad.block_mut(2), &p, &h, scale);
            for (g, d) in grad.block_mut(3).iter_mut().zip(&p) {
                *g += scale * d;
            }
            // back through w2 and tanh
            let w2 = model.block(2);
            let dpre: Vec<f64> = (0..hidden)
                .map(|j| {
                    let dh: f64 = (0..classes).map(|c| w2[c * hidden + j] * p[c]).sum();
                    dh * (1.0 - h[j] * h[j])
                })
                .collect();
            outer_accumulate(grad.block_mut(0), &dpre, a, scale);
            for (g, d) in grad.block_mut(1).iter_mut().zip(&dpre) {
                *g += scale * d;
            }
        }
    }
}

fn outer_accumulate(out: &mut [f64], u: &[f64], v: &[f64], scale: f64) {
    let cols = v.len();
    for (r, ur) in u.iter().enumerate() {
        for (o, vc) in out[r * cols..(r + 1) * cols].iter_mut().zip(v) {
            *o += scale * ur * vc;
        }
    }
}
