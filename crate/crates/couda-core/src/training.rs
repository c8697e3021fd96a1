//! Alternating minimax training: one discriminator update then one
//! adaptation update per batch, with strict player isolation.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{make_batches, Dataset, DomainBatch};
use crate::diffcore::{Tape, Tensor};
use crate::error::{CoudaError, Result};
use crate::losses::{build_objective, AblationFlags, Hyperparams};
use crate::metrics::evaluate;
use crate::model::{CoudaModel, ModelConfig};

/// Adaptive moment estimation over a named parameter group.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    /// Advance the shared timestep; call once per optimizer step, before
    /// any `update` calls for that step.
    pub fn begin_step(&mut self) {
        self.t += 1;
    }

    /// Apply one gradient for the loss being minimized.
    pub fn update(&mut self, name: &str, param: &mut Tensor, grad: &[f64]) {
        debug_assert_eq!(param.data.len(), grad.len());
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let m = self
            .m
            .entry(name.to_string())
            .or_insert_with(|| vec![0.0; grad.len()]);
        let v = self
            .v
            .entry(name.to_string())
            .or_insert_with(|| vec![0.0; grad.len()]);
        for i in 0..grad.len() {
            m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * grad[i];
            v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mh = m[i] / bc1;
            let vh = v[i] / bc2;
            param.data[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

/// Scalars observed during one adaptation step, pre-update.
#[derive(Debug, Clone, Copy, Default)]
pub struct StepLosses {
    pub lc: f64,
    pub ladv: f64,
    pub ldis: f64,
    pub mean_lambda_src: f64,
    pub mean_lambda_tgt: f64,
}

pub struct TrainState {
    pub model: CoudaModel,
    pub hp: Hyperparams,
    pub flags: AblationFlags,
    pub step: u64,
    opt_networks: Adam,
    opt_disc: Adam,
    network_names: Vec<String>,
    disc_names: Vec<String>,
}

impl TrainState {
    pub fn new(model: CoudaModel, hp: Hyperparams, flags: AblationFlags) -> Self {
        let network_names = model.network_param_names(flags.single_network);
        let disc_names = model.disc_param_names();
        let lr = hp.lr;
        TrainState {
            model,
            hp,
            flags,
            step: 0,
            opt_networks: Adam::new(lr),
            opt_disc: Adam::new(lr),
            network_names,
            disc_names,
        }
    }

    fn collect_grads(
        &self,
        tape: &Tape,
        bound_params: &[(String, crate::diffcore::Var)],
        group: Group,
    ) -> Result<BTreeMap<String, Vec<f64>>> {
        let names: &[String] = match group {
            Group::Networks => &self.network_names,
            Group::Disc => &self.disc_names,
        };
        let mut grads = BTreeMap::new();
        for (name, var) in bound_params {
            if names.contains(name) {
                let g = tape
                    .grad(*var)
                    .ok_or_else(|| CoudaError::Config(format!("{} not differentiated", name)))?;
                grads.insert(name.clone(), g.to_vec());
            }
        }
        Ok(grads)
    }

    fn apply_grads(&mut self, grads: &BTreeMap<String, Vec<f64>>, group: Group) {
        let TrainState { model, opt_networks, opt_disc, .. } = self;
        let opt = match group {
            Group::Networks => opt_networks,
            Group::Disc => opt_disc,
        };
        opt.begin_step();
        for (name, t) in model.named_params_mut() {
            if let Some(g) = grads.get(&name) {
                opt.update(&name, t, g);
            }
        }
    }

    /// Discriminator update: minimizes L^adv on its own parameters only.
    /// Feature extractors see no gradient; transfer weights are computed
    /// fresh and frozen. Returns the pre-update L^adv.
    pub fn discriminator_step(&mut self, batch: &DomainBatch) -> Result<f64> {
        if !self.flags.enable_adv {
            return Ok(0.0);
        }
        let mut tape = Tape::new();
        let bound = self.model.bind(&mut tape, |name| name.starts_with("d."));
        let x_s = tape.constant(batch.x_source());
        let x_t = tape.constant(batch.x_target());
        let labels = batch.observed_labels()?;
        // only the adversarial term involves D; build it alone
        let hp = Hyperparams { alpha: 1.0, eta: 0.0, ..self.hp.clone() };
        let flags = AblationFlags {
            enable_adv: true,
            enable_dis: false,
            ..self.flags
        };
        let obj = build_objective(&mut tape, &bound, x_s, &labels, x_t, &hp, &flags, None)?;
        if !obj.ladv.is_finite() {
            return Err(CoudaError::NonFiniteLoss {
                step: self.step,
                detail: format!("discriminator loss {}", obj.ladv),
            });
        }
        // With alpha = 1 and eta = 0 the objective is L^c - L^adv, and L^c
        // does not touch D, so -grad(j) w.r.t. D is exactly grad(L^adv).
        // D minimizes L^adv, hence the sign flip.
        tape.backward(obj.j)?;
        let mut grads = self.collect_grads(&tape, &bound.params, Group::Disc)?;
        for g in grads.values_mut() {
            for v in g.iter_mut() {
                *v = -*v;
            }
        }
        self.apply_grads(&grads, Group::Disc);
        Ok(obj.ladv)
    }

    /// Adaptation update: minimizes J = L^c - alpha L^adv - eta L^dis over
    /// {P1, P2, C1, C2, Z} with D frozen. Returns the pre-update losses.
    pub fn adaptation_step(&mut self, batch: &DomainBatch) -> Result<StepLosses> {
        let mut tape = Tape::new();
        let single = self.flags.single_network;
        let bound = self.model.bind(&mut tape, |name| {
            if single {
                name.starts_with("p1.") || name.starts_with("c1.") || name.starts_with("z.")
            } else {
                !name.starts_with("d.")
            }
        });
        let x_s = tape.constant(batch.x_source());
        let x_t = tape.constant(batch.x_target());
        let labels = batch.observed_labels()?;
        let obj = build_objective(
            &mut tape, &bound, x_s, &labels, x_t, &self.hp, &self.flags, None,
        )?;
        let j = tape.scalar_value(obj.j);
        if !j.is_finite() {
            return Err(CoudaError::NonFiniteLoss {
                step: self.step,
                detail: format!(
                    "objective {} (lc {}, ladv {}, ldis {})",
                    j, obj.lc, obj.ladv, obj.ldis
                ),
            });
        }
        tape.backward(obj.j)?;
        let grads = self.collect_grads(&tape, &bound.params, Group::Networks)?;
        self.apply_grads(&grads, Group::Networks);
        self.step += 1;
        let mean = |v: &[f64]| {
            if v.is_empty() {
                0.0
            } else {
                v.iter().sum::<f64>() / v.len() as f64
            }
        };
        Ok(StepLosses {
            lc: obj.lc,
            ladv: obj.ladv,
            ldis: obj.ldis,
            mean_lambda_src: mean(&obj.lambda_src),
            mean_lambda_tgt: mean(&obj.lambda_tgt),
        })
    }
}

enum Group {
    Networks,
    Disc,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lc: f64,
    pub ladv: f64,
    pub ldis: f64,
    pub mean_lambda_src: f64,
    pub mean_lambda_tgt: f64,
    pub target_accuracy: f64,
    pub target_macro_f1: f64,
    pub noise_diag: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FitConfig {
    pub model: ModelConfig,
    pub hp: Hyperparams,
    pub flags: AblationFlags,
    pub seed: u64,
    /// Ramp alpha linearly over the first 10% of steps. On by default:
    /// full-strength adversarial pressure against randomly initialized
    /// features destabilizes early training.
    #[serde(default = "default_warmup")]
    pub warmup_alpha: bool,
}

fn default_warmup() -> bool {
    true
}

pub struct FitOutcome {
    pub model: CoudaModel,
    pub history: Vec<EpochRecord>,
    /// Set when training aborted on a numeric failure; history holds the
    /// epochs completed before the abort.
    pub aborted: Option<String>,
}

/// Train on a source set and a target training split, evaluating each
/// epoch on the held-out target split. Fully deterministic per seed.
pub fn fit(
    cfg: &FitConfig,
    source: &Dataset,
    target_train: &Dataset,
    target_test: &Dataset,
) -> Result<FitOutcome> {
    cfg.hp.validate()?;
    let mut model_cfg = cfg.model.clone();
    model_cfg.beta_noise_init = cfg.hp.beta_noise_init;
    let model = CoudaModel::init(&model_cfg, cfg.seed);
    let mut state = TrainState::new(model, cfg.hp.clone(), cfg.flags);
    let mut history = Vec::with_capacity(cfg.hp.epochs);

    let batches_per_epoch = source
        .len()
        .max(target_train.len())
        .div_ceil(cfg.hp.batch_size);
    let total_steps = (cfg.hp.epochs * batches_per_epoch) as f64;
    let warmup_steps = (total_steps * 0.1).ceil();

    for epoch in 0..cfg.hp.epochs {
        let batches = make_batches(source, target_train, cfg.hp.batch_size, cfg.seed, epoch)?;
        let mut acc = StepLosses::default();
        for batch in &batches {
            if cfg.warmup_alpha {
                let ramp = ((state.step as f64 + 1.0) / warmup_steps).min(1.0);
                state.hp.alpha = cfg.hp.alpha * ramp;
            }
            match (|| -> Result<StepLosses> {
                state.discriminator_step(batch)?;
                state.adaptation_step(batch)
            })() {
                Ok(l) => {
                    acc.lc += l.lc;
                    acc.ladv += l.ladv;
                    acc.ldis += l.ldis;
                    acc.mean_lambda_src += l.mean_lambda_src;
                    acc.mean_lambda_tgt += l.mean_lambda_tgt;
                }
                Err(e @ CoudaError::NonFiniteLoss { .. }) => {
                    return Ok(FitOutcome {
                        model: state.model,
                        history,
                        aborted: Some(e.to_string()),
                    });
                }
                Err(e) => return Err(e),
            }
        }
        let n = batches.len() as f64;
        let report = evaluate(&state.model, target_test, cfg.flags.single_network, true)?;
        history.push(EpochRecord {
            epoch,
            lc: acc.lc / n,
            ladv: acc.ladv / n,
            ldis: acc.ldis / n,
            mean_lambda_src: acc.mean_lambda_src / n,
            mean_lambda_tgt: acc.mean_lambda_tgt / n,
            target_accuracy: report.accuracy,
            target_macro_f1: report.macro_f1,
            noise_diag: report.noise_diag.unwrap_or(0.0),
        });
    }
    Ok(FitOutcome { model: state.model, history, aborted: None })
}

/// History CSV: one row per epoch, stable column order.
pub fn write_history_csv<P: AsRef<Path>>(path: P, history: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())
        .map_err(|e| CoudaError::Data(e.to_string()))?;
    w.write_record([
        "epoch",
        "lc",
        "ladv",
        "ldis",
        "mean_lambda_src",
        "mean_lambda_tgt",
        "target_accuracy",
        "target_macro_f1",
        "noise_diag",
    ])
    .map_err(|e| CoudaError::Data(e.to_string()))?;
    for r in history {
        w.write_record([
            r.epoch.to_string(),
            format!("{}", r.lc),
            format!("{}", r.ladv),
            format!("{}", r.ldis),
            format!("{}", r.mean_lambda_src),
            format!("{}", r.mean_lambda_tgt),
            format!("{}", r.target_accuracy),
            format!("{}", r.target_macro_f1),
            format!("{}", r.noise_diag),
        ])
        .map_err(|e| CoudaError::Data(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, inject_label_noise, NoiseSpec, SyntheticSpec};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn small_model_cfg() -> ModelConfig {
        ModelConfig {
            d_x: 2,
            d_f: 8,
            k: 3,
            hidden: vec![8],
            disc_hidden: vec![8],
            beta_noise_init: 2.0,
        }
    }

    fn tiny_data(seed: u64) -> (Dataset, Dataset) {
        let spec = SyntheticSpec {
            n_source: 24,
            n_target: 24,
            source_priors: vec![0.5, 0.3, 0.2],
            target_priors: vec![0.5, 0.3, 0.2],
            ..Default::default()
        };
        let (s, t) = generate_synthetic(&spec, seed).unwrap();
        let s = inject_label_noise(&s, &NoiseSpec::uniform(3, 0.2, seed)).unwrap();
        (s, t)
    }

    fn checksum(model: &CoudaModel, prefixes: &[&str]) -> Vec<u64> {
        model
            .named_params()
            .iter()
            .filter(|(n, _)| prefixes.iter().any(|p| n.starts_with(p)))
            .flat_map(|(_, t)| t.data.iter().map(|v| v.to_bits()))
            .collect()
    }

    #[test]
    fn discriminator_step_disabled_is_noop() {
        let (s, t) = tiny_data(1);
        let model = CoudaModel::init(&small_model_cfg(), 1);
        let flags = AblationFlags { enable_adv: false, ..Default::default() };
        let mut state = TrainState::new(model, Hyperparams::default(), flags);
        let before = checksum(&state.model, &["p", "c", "d", "z"]);
        let batch = &make_batches(&s, &t, 24, 1, 0).unwrap()[0];
        let l = state.discriminator_step(batch).unwrap();
        assert_eq!(l, 0.0);
        assert_eq!(before, checksum(&state.model, &["p", "c", "d", "z"]));
    }

    #[test]
    fn discriminator_step_updates_only_d() {
        let (s, t) = tiny_data(2);
        let model = CoudaModel::init(&small_model_cfg(), 2);
        let mut state = TrainState::new(model, Hyperparams::default(), AblationFlags::default());
        let batch = &make_batches(&s, &t, 24, 1, 0).unwrap()[0];
        let nets_before = checksum(&state.model, &["p1.", "p2.", "c1.", "c2.", "z."]);
        let d_before = checksum(&state.model, &["d."]);
        state.discriminator_step(batch).unwrap();
        assert_eq!(nets_before, checksum(&state.model, &["p1.", "p2.", "c1.", "c2.", "z."]));
        assert_ne!(d_before, checksum(&state.model, &["d."]));
    }

    #[test]
    fn discriminator_step_decreases_its_loss() {
        // descent property over 20 random inits, at least 18 must decrease
        let mut decreased = 0;
        for seed in 0..20 {
            let (s, t) = tiny_data(seed);
            let model = CoudaModel::init(&small_model_cfg(), seed + 100);
            let hp = Hyperparams { lr: 1e-3, ..Default::default() };
            let mut state = TrainState::new(model, hp, AblationFlags::default());
            let batch = &make_batches(&s, &t, 24, 1, 0).unwrap()[0];
            let before = state.discriminator_step(batch).unwrap();
            // re-evaluate on the same batch without updating
            let mut tape = Tape::new();
            let bound = state.model.bind(&mut tape, |_| false);
            let x_s = tape.constant(batch.x_source());
            let x_t = tape.constant(batch.x_target());
            let labels = batch.observed_labels().unwrap();
            let obj = build_objective(
                &mut tape,
                &bound,
                x_s,
                &labels,
                x_t,
                &state.hp,
                &state.flags,
                None,
            )
            .unwrap();
            if obj.ladv <= before {
                decreased += 1;
            }
        }
        assert!(decreased >= 18, "only {} of 20 decreased", decreased);
    }

    #[test]
    fn adaptation_step_updates_only_networks() {
        let (s, t) = tiny_data(3);
        let model = CoudaModel::init(&small_model_cfg(), 3);
        let mut state = TrainState::new(model, Hyperparams::default(), AblationFlags::default());
        let batch = &make_batches(&s, &t, 24, 1, 0).unwrap()[0];
        let d_before = checksum(&state.model, &["d."]);
        let nets_before = checksum(&state.model, &["p1.", "p2.", "c1.", "c2.", "z."]);
        state.adaptation_step(batch).unwrap();
        assert_eq!(d_before, checksum(&state.model, &["d."]));
        assert_ne!(nets_before, checksum(&state.model, &["p1.", "p2.", "c1.", "c2.", "z."]));
    }

    #[test]
    fn player_isolation_over_random_steps() {
        let (s, t) = tiny_data(4);
        let model = CoudaModel::init(&small_model_cfg(), 4);
        let mut state = TrainState::new(model, Hyperparams::default(), AblationFlags::default());
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for step in 0..50 {
            let epoch = rng.random_range(0..1000);
            let batch = &make_batches(&s, &t, 12, 7, epoch).unwrap()[0];
            if step % 2 == 0 {
                let nets = checksum(&state.model, &["p1.", "p2.", "c1.", "c2.", "z."]);
                state.discriminator_step(batch).unwrap();
                assert_eq!(nets, checksum(&state.model, &["p1.", "p2.", "c1.", "c2.", "z."]));
            } else {
                let d = checksum(&state.model, &["d."]);
                state.adaptation_step(batch).unwrap();
                assert_eq!(d, checksum(&state.model, &["d."]));
            }
        }
    }

    #[test]
    fn single_network_leaves_peer_two_untouched() {
        let (s, t) = tiny_data(5);
        let model = CoudaModel::init(&small_model_cfg(), 5);
        let flags = AblationFlags {
            single_network: true,
            enable_adv: true,
            enable_dis: false,
            enable_ncl: true,
        };
        let mut state = TrainState::new(model, Hyperparams::default(), flags);
        let batch = &make_batches(&s, &t, 24, 1, 0).unwrap()[0];
        let p2_before = checksum(&state.model, &["p2.", "c2."]);
        let losses = state.adaptation_step(batch).unwrap();
        assert_eq!(p2_before, checksum(&state.model, &["p2.", "c2."]));
        // lambda is pinned to 1 for the single-network variant
        assert_eq!(losses.mean_lambda_src, 1.0);
        assert_eq!(losses.mean_lambda_tgt, 1.0);
        assert_eq!(losses.ldis, 0.0);
    }

    #[test]
    fn lambda_frozen_grads_match_recomputed() {
        let (s, t) = tiny_data(6);
        let model = CoudaModel::init(&small_model_cfg(), 6);
        let hp = Hyperparams::default();
        let flags = AblationFlags::default();
        let batch = &make_batches(&s, &t, 24, 1, 0).unwrap()[0];
        let labels = batch.observed_labels().unwrap();

        let run = |frozen: Option<(&[f64], &[f64])>| -> (Vec<f64>, Vec<f64>, Vec<f64>) {
            let mut tape = Tape::new();
            let bound = model.bind(&mut tape, |n| !n.starts_with("d."));
            let x_s = tape.constant(batch.x_source());
            let x_t = tape.constant(batch.x_target());
            let obj =
                build_objective(&mut tape, &bound, x_s, &labels, x_t, &hp, &flags, frozen)
                    .unwrap();
            tape.backward(obj.j).unwrap();
            let g: Vec<f64> = bound
                .params
                .iter()
                .filter(|(n, _)| !n.starts_with("d."))
                .flat_map(|(_, v)| tape.grad(*v).unwrap().to_vec())
                .collect();
            (g, obj.lambda_src, obj.lambda_tgt)
        };
        let (g1, ls, lt) = run(None);
        let (g2, _, _) = run(Some((&ls, &lt)));
        assert!(g1.iter().zip(&g2).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert!(ls.iter().chain(&lt).all(|l| (0.0..=1.0).contains(l)));
    }

    #[test]
    fn plain_focal_training_reaches_separable_accuracy() {
        // clean labels, no shift, alpha = eta = 0: training accuracy -> 1
        let spec = SyntheticSpec {
            n_source: 90,
            n_target: 90,
            source_priors: vec![1.0 / 3.0; 3],
            target_priors: vec![1.0 / 3.0; 3],
            rotation_deg: 0.0,
            translation: vec![0.0, 0.0],
            ..Default::default()
        };
        let (s, t) = generate_synthetic(&spec, 11).unwrap();
        let model = CoudaModel::init(&small_model_cfg(), 11);
        let hp = Hyperparams {
            alpha: 0.0,
            eta: 0.0,
            lr: 5e-3,
            batch_size: 30,
            ..Default::default()
        };
        let flags = AblationFlags {
            enable_adv: false,
            enable_dis: false,
            enable_ncl: false,
            single_network: false,
        };
        let mut state = TrainState::new(model, hp, flags);
        let mut steps = 0;
        'outer: for epoch in 0..200 {
            for batch in make_batches(&s, &t, 30, 11, epoch).unwrap() {
                state.adaptation_step(&batch).unwrap();
                steps += 1;
                if steps >= 200 {
                    break 'outer;
                }
            }
        }
        let report = evaluate(&state.model, &s, false, false).unwrap();
        assert!(report.accuracy >= 0.99, "train accuracy {}", report.accuracy);
    }

    #[test]
    fn fit_zero_epochs_returns_initial_model() {
        let (s, t) = tiny_data(7);
        let (tt, te) = t.split_held_out(0.2, 7);
        let cfg = FitConfig {
            model: small_model_cfg(),
            hp: Hyperparams { epochs: 0, ..Default::default() },
            flags: AblationFlags::default(),
            seed: 7,
            warmup_alpha: false,
        };
        let out = fit(&cfg, &s, &tt, &te).unwrap();
        assert!(out.history.is_empty());
        let fresh = CoudaModel::init(&cfg.model, 7);
        assert_eq!(
            checksum(&out.model, &["p", "c", "d", "z"]),
            checksum(&fresh, &["p", "c", "d", "z"])
        );
    }

    #[test]
    fn fit_is_bitwise_deterministic() {
        let (s, t) = tiny_data(8);
        let (tt, te) = t.split_held_out(0.2, 8);
        let cfg = FitConfig {
            model: small_model_cfg(),
            hp: Hyperparams { epochs: 3, batch_size: 12, ..Default::default() },
            flags: AblationFlags::default(),
            seed: 8,
            warmup_alpha: false,
        };
        let a = fit(&cfg, &s, &tt, &te).unwrap();
        let b = fit(&cfg, &s, &tt, &te).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(
            checksum(&a.model, &["p", "c", "d", "z"]),
            checksum(&b.model, &["p", "c", "d", "z"])
        );
    }

    #[test]
    fn fit_records_finite_losses_and_bounded_lambda() {
        let (s, t) = tiny_data(9);
        let (tt, te) = t.split_held_out(0.2, 9);
        let cfg = FitConfig {
            model: small_model_cfg(),
            hp: Hyperparams { epochs: 4, batch_size: 12, ..Default::default() },
            flags: AblationFlags::default(),
            seed: 9,
            warmup_alpha: false,
        };
        let out = fit(&cfg, &s, &tt, &te).unwrap();
        assert!(out.aborted.is_none());
        assert_eq!(out.history.len(), 4);
        for r in &out.history {
            assert!(r.lc.is_finite() && r.ladv.is_finite() && r.ldis.is_finite());
            assert!((0.0..=1.0).contains(&r.mean_lambda_src));
            assert!((0.0..=1.0).contains(&r.mean_lambda_tgt));
        }
    }

    #[test]
    fn history_csv_round_trips_rows() {
        let history = vec![EpochRecord {
            epoch: 0,
            lc: 1.25,
            ladv: 0.5,
            ldis: 0.01,
            mean_lambda_src: 0.4,
            mean_lambda_tgt: 0.3,
            target_accuracy: 0.7,
            target_macro_f1: 0.65,
            noise_diag: 0.78,
        }];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("history.csv");
        write_history_csv(&p, &history).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("epoch,lc,ladv,ldis"));
        assert!(text.lines().count() == 2);
    }
}
