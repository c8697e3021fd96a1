//! Loss functions: transferability weights, weighted least-squares
//! adversarial loss, focal classification loss on noise-adapted
//! predictions, JS diversity loss, and the combined minimax objective.
//!
//! Each loss exists twice: a plain-value form used for validation and
//! reporting, and a tape form used inside training passes. The tape forms
//! are checked against the value forms and against finite differences.

use serde::{Deserialize, Serialize};

use crate::diffcore::{Tape, Tensor, Var};
use crate::error::{CoudaError, Result};
use crate::model::{BoundModel, Peer};

const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct Hyperparams {
    /// Weight of the adversarial loss in the objective.
    pub alpha: f64,
    /// Weight of the diversity loss in the objective.
    pub eta: f64,
    /// Diversity is maximized only up to this JS value (nats).
    pub dis_margin: f64,
    /// Focal exponent.
    pub gamma: f64,
    /// Optional per-class focal weights; empty means unweighted.
    pub class_weights: Vec<f64>,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub beta_noise_init: f64,
}

fn default_dis_margin() -> f64 {
    0.1
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            alpha: 1.0,
            // Small diversity weight: larger values let the disagreement
            // term dominate once the classification loss has plateaued.
            eta: 0.01,
            dis_margin: default_dis_margin(),
            gamma: 2.0,
            class_weights: Vec::new(),
            lr: 1e-3,
            batch_size: 64,
            epochs: 30,
            beta_noise_init: 2.0,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        if self.alpha < 0.0 || self.eta < 0.0 || self.gamma < 0.0 {
            return Err(CoudaError::Config(
                "alpha, eta and gamma must be nonnegative".into(),
            ));
        }
        if self.dis_margin <= 0.0 {
            return Err(CoudaError::Config("dis_margin must be positive".into()));
        }
        if self.lr <= 0.0 {
            return Err(CoudaError::Config("lr must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(CoudaError::Config("batch_size must be positive".into()));
        }
        Ok(())
    }
}

/// Which parts of the objective are active for a run.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
pub struct AblationFlags {
    pub enable_adv: bool,
    pub enable_dis: bool,
    pub enable_ncl: bool,
    pub single_network: bool,
}

impl Default for AblationFlags {
    fn default() -> Self {
        AblationFlags {
            enable_adv: true,
            enable_dis: true,
            enable_ncl: true,
            single_network: false,
        }
    }
}

fn check_probability(op: &'static str, y: &[f64]) -> Result<()> {
    let s: f64 = y.iter().sum();
    if (s - 1.0).abs() > 1e-6 {
        return Err(CoudaError::domain(op, format!("sums to {}", s)));
    }
    if y.iter().any(|v| *v < 0.0) {
        return Err(CoudaError::domain(op, "negative entry"));
    }
    Ok(())
}

/// Transferability weight: 1 - cos(y1, y2), in [0, 1] for probability
/// vectors. Treated as a constant during optimization; no gradient flows
/// through it.
pub fn transfer_weight(y1: &[f64], y2: &[f64]) -> Result<f64> {
    if y1.len() != y2.len() {
        return Err(CoudaError::shape(
            "transfer_weight",
            format!("{} vs {}", y1.len(), y2.len()),
        ));
    }
    let n1 = y1.iter().map(|v| v * v).sum::<f64>().sqrt();
    let n2 = y2.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n1 == 0.0 || n2 == 0.0 {
        return Err(CoudaError::domain("transfer_weight", "zero vector"));
    }
    let dot: f64 = y1.iter().zip(y2).map(|(a, b)| a * b).sum();
    Ok((1.0 - dot / (n1 * n2)).clamp(0.0, 1.0))
}

/// Weighted least-squares adversarial loss over both peers.
/// `d_src[tau]` / `d_tgt[tau]` hold per-sample domain probabilities.
pub fn adversarial_loss(
    d_src: &[&[f64]],
    d_tgt: &[&[f64]],
    lam_src: &[f64],
    lam_tgt: &[f64],
) -> Result<f64> {
    let mut total = 0.0;
    for (ds, dt) in d_src.iter().zip(d_tgt) {
        if ds.len() != lam_src.len() || dt.len() != lam_tgt.len() {
            return Err(CoudaError::shape(
                "adversarial_loss",
                format!(
                    "weights {}/{} vs values {}/{}",
                    lam_src.len(),
                    lam_tgt.len(),
                    ds.len(),
                    dt.len()
                ),
            ));
        }
        let t: f64 = dt
            .iter()
            .zip(lam_tgt)
            .map(|(d, l)| l * (d - 1.0) * (d - 1.0))
            .sum::<f64>()
            / dt.len() as f64;
        let s: f64 = ds.iter().zip(lam_src).map(|(d, l)| l * d * d).sum::<f64>() / ds.len() as f64;
        total += t + s;
    }
    Ok(total)
}

/// Focal loss of a single noise-adapted prediction against an observed
/// label: -(1 - p)^gamma * ln(p), p floored at 1e-12.
pub fn focal_loss(z_hat: &[f64], z: usize, gamma: f64) -> Result<f64> {
    if z >= z_hat.len() {
        return Err(CoudaError::domain(
            "focal_loss",
            format!("label {} out of range for {} classes", z, z_hat.len()),
        ));
    }
    let p = z_hat[z].max(LOG_FLOOR);
    let w = if gamma == 0.0 { 1.0 } else { (1.0 - p).max(0.0).powf(gamma) };
    Ok(-w * p.ln())
}

/// Jensen-Shannon divergence between two probability vectors, natural log.
/// Zero-probability terms contribute 0; the result lies in [0, ln 2].
pub fn js_divergence(y1: &[f64], y2: &[f64]) -> Result<f64> {
    if y1.len() != y2.len() {
        return Err(CoudaError::shape(
            "js_divergence",
            format!("{} vs {}", y1.len(), y2.len()),
        ));
    }
    check_probability("js_divergence", y1)?;
    check_probability("js_divergence", y2)?;
    let mut acc = 0.0;
    for (a, b) in y1.iter().zip(y2) {
        let m = 0.5 * (a + b);
        if *a > 0.0 {
            acc += 0.5 * a * (a / m).ln();
        }
        if *b > 0.0 {
            acc += 0.5 * b * (b / m).ln();
        }
    }
    Ok(acc.max(0.0))
}

// ── tape builders ────────────────────────────────────────────────

/// Mean focal loss over a batch of predictions (n x K) and labels.
pub fn focal_loss_mean(
    tape: &mut Tape,
    z_hat: Var,
    labels: &[usize],
    gamma: f64,
    class_weights: &[f64],
) -> Result<Var> {
    let [n, k] = tape.shape(z_hat);
    if labels.len() != n {
        return Err(CoudaError::shape(
            "focal_loss",
            format!("{} labels for {} rows", labels.len(), n),
        ));
    }
    if let Some(bad) = labels.iter().find(|z| **z >= k) {
        return Err(CoudaError::domain(
            "focal_loss",
            format!("label {} out of range for {} classes", bad, k),
        ));
    }
    let p = tape.pick_per_row(z_hat, labels)?;
    let p = tape.clamp_min(p, LOG_FLOOR);
    let ones = tape.constant(Tensor { rows: n, cols: 1, data: vec![1.0; n] });
    let om = tape.sub(ones, p)?;
    let w = tape.pow_const(om, gamma);
    let lg = tape.log(p)?;
    let mut term = tape.mul(w, lg)?;
    if !class_weights.is_empty() {
        let cw: Vec<f64> = labels.iter().map(|z| class_weights[*z]).collect();
        let cwv = tape.constant(Tensor { rows: n, cols: 1, data: cw });
        term = tape.mul(term, cwv)?;
    }
    let m = tape.mean(term);
    Ok(tape.scale(m, -1.0))
}

/// Mean JS divergence between matching rows of two n x K probability
/// matrices.
pub fn js_divergence_mean(tape: &mut Tape, y1: Var, y2: Var) -> Result<Var> {
    let [n, _] = tape.shape(y1);
    let s = tape.add(y1, y2)?;
    let m = tape.scale(s, 0.5);
    let m = tape.clamp_min(m, LOG_FLOOR);
    let log_m = tape.log(m)?;
    let mut halves = Vec::with_capacity(2);
    for y in [y1, y2] {
        let yc = tape.clamp_min(y, LOG_FLOOR);
        let log_y = tape.log(yc)?;
        let diff = tape.sub(log_y, log_m)?;
        let t = tape.mul(y, diff)?;
        halves.push(tape.sum(t));
    }
    let total = tape.add(halves[0], halves[1])?;
    let total = tape.scale(total, 0.5);
    Ok(tape.scale(total, 1.0 / n as f64))
}

/// Weighted least-squares adversarial loss on the tape. `pairs` holds
/// (d_hat_source, d_hat_target) per peer, each n x 1; the weights enter as
/// constants.
pub fn adversarial_loss_tape(
    tape: &mut Tape,
    pairs: &[(Var, Var)],
    lam_src: &[f64],
    lam_tgt: &[f64],
) -> Result<Var> {
    let mut total: Option<Var> = None;
    for (d_s, d_t) in pairs {
        let n_s = tape.shape(*d_s)[0];
        let n_t = tape.shape(*d_t)[0];
        if n_s != lam_src.len() || n_t != lam_tgt.len() {
            return Err(CoudaError::shape(
                "adversarial_loss",
                format!(
                    "weights {}/{} vs values {}/{}",
                    lam_src.len(),
                    lam_tgt.len(),
                    n_s,
                    n_t
                ),
            ));
        }
        let ones = tape.constant(Tensor { rows: n_t, cols: 1, data: vec![1.0; n_t] });
        let dt1 = tape.sub(*d_t, ones)?;
        let dt2 = tape.square(dt1);
        let lt = tape.constant(Tensor { rows: n_t, cols: 1, data: lam_tgt.to_vec() });
        let wt = tape.mul(dt2, lt)?;
        let mt = tape.mean(wt);

        let ds2 = tape.square(*d_s);
        let ls = tape.constant(Tensor { rows: n_s, cols: 1, data: lam_src.to_vec() });
        let ws = tape.mul(ds2, ls)?;
        let ms = tape.mean(ws);

        let peer = tape.add(mt, ms)?;
        total = Some(match total {
            Some(t) => tape.add(t, peer)?,
            None => peer,
        });
    }
    total.ok_or_else(|| CoudaError::shape("adversarial_loss", "no peers"))
}

/// Forward pass of the full objective on one batch.
pub struct Objective {
    /// J = L^c - alpha L^adv - eta L^dis, the quantity the networks
    /// minimize and the discriminator maximizes.
    pub j: Var,
    pub lc: f64,
    pub ladv: f64,
    pub ldis: f64,
    pub lambda_src: Vec<f64>,
    pub lambda_tgt: Vec<f64>,
}

/// Per-sample transferability weights from the two peers' current
/// predictions. Read off the tape as plain values (stop-gradient).
pub fn batch_transfer_weights(tape: &Tape, y1: Var, y2: Var) -> Result<Vec<f64>> {
    let [n, k] = tape.shape(y1);
    let d1 = tape.data(y1);
    let d2 = tape.data(y2);
    (0..n)
        .map(|i| transfer_weight(&d1[i * k..(i + 1) * k], &d2[i * k..(i + 1) * k]))
        .collect()
}

/// Build J = L^c - alpha L^adv - eta L^dis on the tape for one batch.
///
/// `frozen_lambda`, when given, reuses weights computed earlier in the same
/// step; otherwise weights are computed from the current predictions. In
/// either case they enter the loss as constants.
#[allow(clippy::too_many_arguments)]
pub fn build_objective(
    tape: &mut Tape,
    bound: &BoundModel,
    x_src: Var,
    labels: &[usize],
    x_tgt: Var,
    hp: &Hyperparams,
    flags: &AblationFlags,
    frozen_lambda: Option<(&[f64], &[f64])>,
) -> Result<Objective> {
    let n_s = tape.shape(x_src)[0];
    let n_t = tape.shape(x_tgt)[0];
    let peers: &[Peer] = if flags.single_network {
        &[Peer::One]
    } else {
        &[Peer::One, Peer::Two]
    };

    let mut f_s = Vec::new();
    let mut f_t = Vec::new();
    let mut y_s = Vec::new();
    let mut y_t = Vec::new();
    for peer in peers {
        let fs = bound.features(tape, *peer, x_src)?;
        let ft = bound.features(tape, *peer, x_tgt)?;
        y_s.push(bound.classify(tape, *peer, fs)?);
        y_t.push(bound.classify(tape, *peer, ft)?);
        f_s.push(fs);
        f_t.push(ft);
    }

    let (lambda_src, lambda_tgt) = match frozen_lambda {
        Some((s, t)) => (s.to_vec(), t.to_vec()),
        None => {
            if flags.single_network {
                (vec![1.0; n_s], vec![1.0; n_t])
            } else {
                (
                    batch_transfer_weights(tape, y_s[0], y_s[1])?,
                    batch_transfer_weights(tape, y_t[0], y_t[1])?,
                )
            }
        }
    };

    // L^c: focal loss on the source batch, averaged over peers. The
    // noise co-adaptation path marginalizes predictions through Z.
    let mut lc: Option<Var> = None;
    for (i, _) in peers.iter().enumerate() {
        let pred = if flags.enable_ncl {
            let t_flat = bound.noise_transition_flat(tape, f_s[i])?;
            bound.adapt_predictions(tape, t_flat, y_s[i])?
        } else {
            y_s[i]
        };
        let l = focal_loss_mean(tape, pred, labels, hp.gamma, &hp.class_weights)?;
        lc = Some(match lc {
            Some(acc) => tape.add(acc, l)?,
            None => l,
        });
    }
    let mut lc = lc.expect("at least one peer");
    if peers.len() == 2 {
        lc = tape.scale(lc, 0.5);
    }

    let mut j = lc;
    let mut ladv_val = 0.0;
    if flags.enable_adv {
        let mut pairs = Vec::new();
        for i in 0..peers.len() {
            let d_s = bound.discriminate(tape, f_s[i])?;
            let d_t = bound.discriminate(tape, f_t[i])?;
            pairs.push((d_s, d_t));
        }
        let ladv = adversarial_loss_tape(tape, &pairs, &lambda_src, &lambda_tgt)?;
        ladv_val = tape.scalar_value(ladv);
        let scaled = tape.scale(ladv, hp.alpha);
        j = tape.sub(j, scaled)?;
    }

    let mut ldis_val = 0.0;
    if flags.enable_dis && !flags.single_network {
        let y1_all = tape.concat_rows(y_s[0], y_t[0])?;
        let y2_all = tape.concat_rows(y_s[1], y_t[1])?;
        let ldis = js_divergence_mean(tape, y1_all, y2_all)?;
        ldis_val = tape.scalar_value(ldis);
        // hinge the maximized term at dis_margin: unbounded divergence
        // pressure eventually drives one peer fully wrong once L^c
        // plateaus, with the noise layer absorbing the damage; capping
        // keeps the peers just diverse enough for informative weights
        let neg = tape.scale(ldis, -1.0);
        let capped = tape.clamp_min(neg, -hp.dis_margin);
        let scaled = tape.scale(capped, -hp.eta);
        j = tape.sub(j, scaled)?;
    }

    Ok(Objective {
        j,
        lc: tape.scalar_value(lc),
        ladv: ladv_val,
        ldis: ldis_val,
        lambda_src,
        lambda_tgt,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CoudaModel, ModelConfig};

    #[test]
    fn transfer_weight_identical_is_zero() {
        let y = [0.2, 0.3, 0.5];
        assert!(transfer_weight(&y, &y).unwrap().abs() < 1e-12);
    }

    #[test]
    fn transfer_weight_orthogonal_is_one() {
        let w = transfer_weight(&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]).unwrap();
        assert!((w - 1.0).abs() < 1e-12);
    }

    #[test]
    fn transfer_weight_half_overlap() {
        let w = transfer_weight(&[0.5, 0.5, 0.0], &[0.5, 0.0, 0.5]).unwrap();
        assert!((w - 0.5).abs() < 1e-12);
    }

    #[test]
    fn transfer_weight_zero_vector_is_error() {
        assert!(transfer_weight(&[0.0, 0.0], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn adversarial_loss_half_everywhere() {
        let d = [0.5, 0.5];
        let lam = [1.0, 1.0];
        let l = adversarial_loss(&[&d, &d], &[&d, &d], &lam, &lam).unwrap();
        assert!((l - 1.0).abs() < 1e-12);
    }

    #[test]
    fn adversarial_loss_zero_weights_is_zero() {
        let d = [0.9, 0.1, 0.4];
        let lam = [0.0; 3];
        let l = adversarial_loss(&[&d], &[&d], &lam, &lam).unwrap();
        assert_eq!(l, 0.0);
    }

    #[test]
    fn adversarial_loss_perfect_discrimination_is_zero() {
        let l = adversarial_loss(&[&[0.0][..]], &[&[1.0][..]], &[1.0], &[1.0]).unwrap();
        assert_eq!(l, 0.0);
    }

    #[test]
    fn adversarial_loss_length_mismatch_is_error() {
        assert!(adversarial_loss(&[&[0.5][..]], &[&[0.5][..]], &[1.0, 1.0], &[1.0]).is_err());
    }

    #[test]
    fn adversarial_loss_is_permutation_invariant() {
        let ds = [0.2, 0.7, 0.4];
        let dt = [0.9, 0.3];
        let ls = [0.5, 1.0, 0.25];
        let lt = [0.8, 0.1];
        let a = adversarial_loss(&[&ds], &[&dt], &ls, &lt).unwrap();
        let dsp = [0.4, 0.2, 0.7];
        let lsp = [0.25, 0.5, 1.0];
        let dtp = [0.3, 0.9];
        let ltp = [0.1, 0.8];
        let b = adversarial_loss(&[&dsp], &[&dtp], &lsp, &ltp).unwrap();
        assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn focal_gamma_zero_is_cross_entropy() {
        let z_hat = [0.1, 0.6, 0.3];
        let l = focal_loss(&z_hat, 1, 0.0).unwrap();
        assert!((l - (-0.6_f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn focal_certain_prediction_is_zero() {
        let l = focal_loss(&[0.0, 1.0], 1, 2.0).unwrap();
        assert_eq!(l, 0.0);
    }

    #[test]
    fn focal_half_gamma_two() {
        let l = focal_loss(&[0.5, 0.5], 0, 2.0).unwrap();
        let expect = 0.25 * 2.0_f64.ln();
        assert!((l - expect).abs() < 1e-12);
        assert!((l - 0.173287).abs() < 1e-6);
    }

    #[test]
    fn focal_out_of_range_label_is_error() {
        assert!(focal_loss(&[0.5, 0.5], 2, 1.0).is_err());
    }

    #[test]
    fn focal_is_monotone_decreasing_in_p() {
        let gamma = 2.0;
        let mut prev = f64::INFINITY;
        for i in 1..100 {
            let p = i as f64 / 100.0;
            let l = focal_loss(&[p, 1.0 - p], 0, gamma).unwrap();
            assert!(l < prev, "focal not decreasing at p={}", p);
            prev = l;
        }
    }

    #[test]
    fn js_identical_is_zero() {
        let y = [0.2, 0.5, 0.3];
        assert!(js_divergence(&y, &y).unwrap().abs() < 1e-15);
    }

    #[test]
    fn js_disjoint_is_ln2() {
        let d = js_divergence(&[1.0, 0.0], &[0.0, 1.0]).unwrap();
        assert!((d - 2.0_f64.ln()).abs() < 1e-12);
        assert!((d - 0.693147).abs() < 1e-6);
    }

    #[test]
    fn js_worked_example_matches_direct_kl() {
        let y1 = [0.5_f64, 0.5];
        let y2 = [0.25_f64, 0.75];
        // direct evaluation of the two KL sums as oracle
        let m = [0.375, 0.625];
        let mut oracle = 0.0;
        for i in 0..2 {
            oracle += 0.5 * y1[i] * (y1[i] / m[i]).ln();
            oracle += 0.5 * y2[i] * (y2[i] / m[i]).ln();
        }
        let d = js_divergence(&y1, &y2).unwrap();
        assert!((d - oracle).abs() < 1e-15);
        // direct evaluation gives 0.0338221, not the 0.0230305 sometimes
        // quoted for this pair; the KL-sum oracle above is authoritative
        assert!((d - 0.0338221).abs() < 1e-7);
    }

    #[test]
    fn js_rejects_unnormalized() {
        assert!(js_divergence(&[0.6, 0.6], &[0.5, 0.5]).is_err());
    }

    proptest::proptest! {
        #[test]
        fn transfer_weight_in_unit_interval(
            a in proptest::collection::vec(1e-6_f64..1.0, 4),
            b in proptest::collection::vec(1e-6_f64..1.0, 4),
        ) {
            let sa: f64 = a.iter().sum();
            let sb: f64 = b.iter().sum();
            let pa: Vec<f64> = a.iter().map(|v| v / sa).collect();
            let pb: Vec<f64> = b.iter().map(|v| v / sb).collect();
            let w = transfer_weight(&pa, &pb).unwrap();
            proptest::prop_assert!((0.0..=1.0).contains(&w));
        }

        #[test]
        fn js_is_symmetric_and_bounded(
            a in proptest::collection::vec(1e-6_f64..1.0, 3),
            b in proptest::collection::vec(1e-6_f64..1.0, 3),
        ) {
            let sa: f64 = a.iter().sum();
            let sb: f64 = b.iter().sum();
            let pa: Vec<f64> = a.iter().map(|v| v / sa).collect();
            let pb: Vec<f64> = b.iter().map(|v| v / sb).collect();
            let d1 = js_divergence(&pa, &pb).unwrap();
            let d2 = js_divergence(&pb, &pa).unwrap();
            proptest::prop_assert!((d1 - d2).abs() < 1e-12);
            proptest::prop_assert!((0.0..=2.0_f64.ln() + 1e-12).contains(&d1));
        }
    }

    // parallel probability vectors have weight exactly zero
    #[test]
    fn transfer_weight_zero_iff_parallel() {
        let y = [0.25, 0.25, 0.5];
        assert_eq!(transfer_weight(&y, &y).unwrap(), 0.0);
        let w = transfer_weight(&[0.3, 0.3, 0.4], &[0.3, 0.4, 0.3]).unwrap();
        assert!(w > 0.0);
    }

    fn tiny_model() -> CoudaModel {
        let cfg = ModelConfig {
            d_x: 2,
            d_f: 4,
            k: 3,
            hidden: vec![5],
            disc_hidden: vec![4],
            beta_noise_init: 2.0,
        };
        CoudaModel::init(&cfg, 42)
    }

    fn tiny_batch() -> (Tensor, Vec<usize>, Tensor) {
        let x_s = Tensor::new(4, 2, vec![0.5, 1.0, -1.0, 0.2, 2.0, -0.5, 0.0, 0.8]).unwrap();
        let x_t = Tensor::new(3, 2, vec![1.5, 1.2, -0.5, 0.9, 0.3, -1.1]).unwrap();
        (x_s, vec![0, 2, 1, 0], x_t)
    }

    #[test]
    fn objective_reduces_to_lc_when_weights_zero() {
        let model = tiny_model();
        let (x_s, labels, x_t) = tiny_batch();
        let hp = Hyperparams { alpha: 0.0, eta: 0.0, ..Default::default() };
        let flags = AblationFlags { enable_adv: false, enable_dis: false, ..Default::default() };
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape, |_| true);
        let xs = tape.constant(x_s);
        let xt = tape.constant(x_t);
        let obj = build_objective(&mut tape, &bound, xs, &labels, xt, &hp, &flags, None).unwrap();
        assert_eq!(tape.scalar_value(obj.j), obj.lc);
    }

    #[test]
    fn objective_matches_hand_composition() {
        let model = tiny_model();
        let (x_s, labels, x_t) = tiny_batch();
        let hp = Hyperparams { alpha: 0.7, eta: 0.3, ..Default::default() };
        let flags = AblationFlags::default();
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape, |_| true);
        let xs = tape.constant(x_s.clone());
        let xt = tape.constant(x_t.clone());
        let obj = build_objective(&mut tape, &bound, xs, &labels, xt, &hp, &flags, None).unwrap();

        // compose the three parts from the component ops independently
        let f_s1 = model.forward_features(Peer::One, &x_s).unwrap();
        let f_s2 = model.forward_features(Peer::Two, &x_s).unwrap();
        let f_t1 = model.forward_features(Peer::One, &x_t).unwrap();
        let f_t2 = model.forward_features(Peer::Two, &x_t).unwrap();
        let y_s1 = model.classify(Peer::One, &f_s1).unwrap();
        let y_s2 = model.classify(Peer::Two, &f_s2).unwrap();
        let y_t1 = model.classify(Peer::One, &f_t1).unwrap();
        let y_t2 = model.classify(Peer::Two, &f_t2).unwrap();

        let lam_s: Vec<f64> = (0..4)
            .map(|i| transfer_weight(y_s1.row_slice(i), y_s2.row_slice(i)).unwrap())
            .collect();
        let lam_t: Vec<f64> = (0..3)
            .map(|i| transfer_weight(y_t1.row_slice(i), y_t2.row_slice(i)).unwrap())
            .collect();

        let mut lc = 0.0;
        for (f, y) in [(&f_s1, &y_s1), (&f_s2, &y_s2)] {
            let mut peer_sum = 0.0;
            for i in 0..4 {
                let t = model.noise_transition(f.row_slice(i)).unwrap();
                let z_hat = crate::model::adapt_prediction(&t, y.row_slice(i)).unwrap();
                peer_sum += focal_loss(&z_hat, labels[i], hp.gamma).unwrap();
            }
            lc += peer_sum / 4.0;
        }
        lc /= 2.0;

        let d_s1 = model.discriminate(&f_s1).unwrap();
        let d_s2 = model.discriminate(&f_s2).unwrap();
        let d_t1 = model.discriminate(&f_t1).unwrap();
        let d_t2 = model.discriminate(&f_t2).unwrap();
        let ladv = adversarial_loss(
            &[&d_s1.data, &d_s2.data],
            &[&d_t1.data, &d_t2.data],
            &lam_s,
            &lam_t,
        )
        .unwrap();

        let mut ldis = 0.0;
        for i in 0..4 {
            ldis += js_divergence(y_s1.row_slice(i), y_s2.row_slice(i)).unwrap();
        }
        for i in 0..3 {
            ldis += js_divergence(y_t1.row_slice(i), y_t2.row_slice(i)).unwrap();
        }
        ldis /= 7.0;

        let j_hand = lc - hp.alpha * ladv - hp.eta * ldis;
        let j_tape = tape.scalar_value(obj.j);
        assert!(
            (j_hand - j_tape).abs() < 1e-10,
            "hand {} vs tape {}",
            j_hand,
            j_tape
        );
        assert!((obj.lc - lc).abs() < 1e-10);
        assert!((obj.ladv - ladv).abs() < 1e-10);
        assert!((obj.ldis - ldis).abs() < 1e-10);
    }

    #[test]
    fn hyperparams_validation() {
        let mut hp = Hyperparams::default();
        assert!(hp.validate().is_ok());
        hp.alpha = -0.1;
        assert!(hp.validate().is_err());
        hp.alpha = 1.0;
        hp.lr = 0.0;
        assert!(hp.validate().is_err());
    }
}
