//! Gradient-fidelity self test: every loss term and the composed
//! objective against central finite differences on randomized small
//! instances.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::diffcore::{grad_check, max_rel_error_fd, Tape, Tensor, Var};
use crate::error::Result;
use crate::losses::{
    adversarial_loss_tape, build_objective, focal_loss_mean, js_divergence_mean, AblationFlags,
    Hyperparams,
};
use crate::model::{CoudaModel, ModelConfig};

pub const FD_STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct ComponentReport {
    pub name: &'static str,
    pub max_rel_error: f64,
}

impl ComponentReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= TOLERANCE
    }
}

fn randn(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
    Tensor { rows, cols, data }
}

fn rand_labels(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..k)).collect()
}

/// Constant 0/1 matrix picking rows lo..hi out of n.
fn selector(tape: &mut Tape, lo: usize, hi: usize, n: usize) -> Var {
    let mut t = Tensor::zeros(hi - lo, n);
    for (r, src) in (lo..hi).enumerate() {
        t.data[r * n + src] = 1.0;
    }
    tape.constant(t)
}

fn check_focal(rng: &mut ChaCha8Rng) -> Result<f64> {
    let n = rng.random_range(2..6);
    let k = rng.random_range(2..5);
    let x = randn(rng, n, k);
    let labels = rand_labels(rng, n, k);
    let gamma = [0.0, 1.0, 2.0][rng.random_range(0..3)];
    grad_check(
        |tape, logits| {
            let probs = tape.softmax_rows(logits);
            focal_loss_mean(tape, probs, &labels, gamma, &[])
        },
        &x,
        FD_STEP,
    )
}

fn check_adversarial(rng: &mut ChaCha8Rng) -> Result<f64> {
    let n_s = rng.random_range(2..5);
    let n_t = rng.random_range(2..5);
    let x = randn(rng, n_s + n_t, 1);
    let lam_s: Vec<f64> = (0..n_s).map(|_| rng.random::<f64>()).collect();
    let lam_t: Vec<f64> = (0..n_t).map(|_| rng.random::<f64>()).collect();
    grad_check(
        |tape, scores| {
            let d_all = tape.sigmoid(scores);
            let pick_s = selector(tape, 0, n_s, n_s + n_t);
            let pick_t = selector(tape, n_s, n_s + n_t, n_s + n_t);
            let d_s = tape.matmul(pick_s, d_all)?;
            let d_t = tape.matmul(pick_t, d_all)?;
            adversarial_loss_tape(tape, &[(d_s, d_t)], &lam_s, &lam_t)
        },
        &x,
        FD_STEP,
    )
}

fn check_diversity(rng: &mut ChaCha8Rng) -> Result<f64> {
    let n = rng.random_range(2..5);
    let k = rng.random_range(2..5);
    let x = randn(rng, 2 * n, k);
    grad_check(
        |tape, logits| {
            let probs = tape.softmax_rows(logits);
            let pick1 = selector(tape, 0, n, 2 * n);
            let pick2 = selector(tape, n, 2 * n, 2 * n);
            let y1 = tape.matmul(pick1, probs)?;
            let y2 = tape.matmul(pick2, probs)?;
            js_divergence_mean(tape, y1, y2)
        },
        &x,
        FD_STEP,
    )
}

/// Differentiates the noise layer weights through transition construction,
/// marginalization and the focal loss.
fn check_z_path(rng: &mut ChaCha8Rng) -> Result<f64> {
    let n = rng.random_range(2..5);
    let k = rng.random_range(2..4);
    let d_f = rng.random_range(2..5);
    let zw = randn(rng, d_f, k * k);
    let zb = randn(rng, 1, k * k);
    let f = randn(rng, n, d_f);
    let mut y_raw = randn(rng, n, k);
    // peer predictions: a fixed row-stochastic matrix
    for i in 0..n {
        let row = &mut y_raw.data[i * k..(i + 1) * k];
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = (*v - mx).exp();
            s += *v;
        }
        for v in row.iter_mut() {
            *v /= s;
        }
    }
    let labels = rand_labels(rng, n, k);
    grad_check(
        |tape, w| {
            let fc = tape.constant(f.clone());
            let bc = tape.constant(zb.clone());
            let yc = tape.constant(y_raw.clone());
            let scores = tape.matmul(fc, w)?;
            let scores = tape.add_row(scores, bc)?;
            let flat = tape.reshape(scores, n * k, k)?;
            let sm = tape.softmax_rows(flat);
            let t = tape.reshape(sm, n, k * k)?;
            let adapted = tape.chunk_vecmat(t, yc, k)?;
            focal_loss_mean(tape, adapted, &labels, 2.0, &[])
        },
        &zw,
        FD_STEP,
    )
}

fn tiny_model_cfg(rng: &mut ChaCha8Rng) -> ModelConfig {
    ModelConfig {
        d_x: 2,
        d_f: rng.random_range(2..5),
        k: rng.random_range(2..4),
        hidden: vec![rng.random_range(2..5)],
        disc_hidden: vec![rng.random_range(2..5)],
        beta_noise_init: 2.0,
    }
}

/// Full objective J over every parameter of a small model, with transfer
/// weights held fixed so the finite-difference runs see the same
/// constants as the analytic pass.
fn check_full_objective(rng: &mut ChaCha8Rng, corrupt: bool) -> Result<f64> {
    let cfg = tiny_model_cfg(rng);
    let mut model = CoudaModel::init(&cfg, rng.random());
    // jitter every parameter off its init value: zero biases put ReLU
    // preactivations exactly on the kink, where finite differences and
    // the (one-sided) analytic derivative legitimately disagree
    for (_, t) in model.named_params_mut() {
        for v in t.data.iter_mut() {
            *v += rng.random_range(-0.3..0.3);
        }
    }
    let n_s = rng.random_range(2..5);
    let n_t = rng.random_range(2..5);
    let x_s = randn(rng, n_s, cfg.d_x);
    let x_t = randn(rng, n_t, cfg.d_x);
    let labels = rand_labels(rng, n_s, cfg.k);
    let hp = Hyperparams {
        alpha: 0.7,
        eta: 0.3,
        ..Default::default()
    };
    let flags = AblationFlags::default();

    // freeze lambda from the initial parameters
    let (lam_s, lam_t) = {
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape, |_| false);
        let xs = tape.constant(x_s.clone());
        let xt = tape.constant(x_t.clone());
        let obj = build_objective(&mut tape, &bound, xs, &labels, xt, &hp, &flags, None)?;
        (obj.lambda_src, obj.lambda_tgt)
    };

    // analytic gradient over all parameters, flattened in binding order
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, |_| true);
    let xs = tape.constant(x_s.clone());
    let xt = tape.constant(x_t.clone());
    let obj = build_objective(
        &mut tape, &bound, xs, &labels, xt, &hp, &flags, Some((&lam_s, &lam_t)),
    )?;
    tape.backward(obj.j)?;
    let mut analytic: Vec<f64> = Vec::new();
    for (_, var) in &bound.params {
        analytic.extend_from_slice(tape.grad(*var).expect("all params bound with grad"));
    }
    if corrupt {
        analytic[0] += 1e-2;
    }

    let flat: Vec<f64> = model
        .named_params()
        .iter()
        .flat_map(|(_, t)| t.data.iter().copied())
        .collect();
    let base = model.clone();
    max_rel_error_fd(
        |xs_flat| {
            let mut m = base.clone();
            let mut offset = 0;
            for (_, t) in m.named_params_mut() {
                let len = t.data.len();
                t.data.copy_from_slice(&xs_flat[offset..offset + len]);
                offset += len;
            }
            let mut tape = Tape::new();
            let bound = m.bind(&mut tape, |_| false);
            let xs = tape.constant(x_s.clone());
            let xt = tape.constant(x_t.clone());
            let obj = build_objective(
                &mut tape, &bound, xs, &labels, xt, &hp, &flags, Some((&lam_s, &lam_t)),
            )?;
            Ok(tape.scalar_value(obj.j))
        },
        &flat,
        &analytic,
        FD_STEP,
    )
}

/// Run every component `instances` times with fresh random instances and
/// report the worst relative error seen per component.
pub fn run_suite(seed: u64, instances: usize, corrupt: bool) -> Result<Vec<ComponentReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reports = Vec::new();
    let run = |name: &'static str,
                   rng: &mut ChaCha8Rng,
                   f: &mut dyn FnMut(&mut ChaCha8Rng) -> Result<f64>|
     -> Result<ComponentReport> {
        let mut worst = 0.0_f64;
        for _ in 0..instances {
            worst = worst.max(f(rng)?);
        }
        Ok(ComponentReport { name, max_rel_error: worst })
    };
    reports.push(run("classification_focal", &mut rng, &mut check_focal)?);
    reports.push(run("adversarial", &mut rng, &mut check_adversarial)?);
    reports.push(run("diversity_js", &mut rng, &mut check_diversity)?);
    reports.push(run("noise_layer_z_path", &mut rng, &mut check_z_path)?);
    reports.push(run("full_objective", &mut rng, &mut |r| {
        check_full_objective(r, corrupt)
    })?);
    Ok(reports)
}
