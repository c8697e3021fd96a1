//! Two-peer architecture: feature extractors P1/P2, classifiers C1/C2, a
//! shared domain discriminator D and a shared noise co-adaptation layer Z.
//!
//! Parameters live here as plain tensors. A training or inference pass
//! binds them onto a fresh tape (`bind`), runs forward ops there, and
//! reads gradients back by parameter name.

use std::io::{Read, Write};
use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{Tape, Tensor, Var};
use crate::error::{CoudaError, Result};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct ModelConfig {
    /// Input dimensionality.
    pub d_x: usize,
    /// Feature dimensionality produced by P.
    pub d_f: usize,
    /// Class count.
    pub k: usize,
    /// Hidden layer widths of each feature extractor.
    pub hidden: Vec<usize>,
    /// Hidden layer widths of the discriminator.
    pub disc_hidden: Vec<usize>,
    /// Diagonal logit of the noise layer at init (near-identity transition).
    pub beta_noise_init: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_x: 2,
            d_f: 16,
            k: 3,
            hidden: vec![32, 32],
            disc_hidden: vec![16],
            beta_noise_init: 2.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    /// in x out.
    pub w: Tensor,
    /// 1 x out.
    pub b: Tensor,
}

impl Linear {
    fn glorot(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Self {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data: Vec<f64> = (0..fan_in * fan_out)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        Linear {
            w: Tensor { rows: fan_in, cols: fan_out, data },
            b: Tensor::zeros(1, fan_out),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    /// ReLU after the last layer too (feature extractors yes, discriminator no).
    pub relu_output: bool,
}

impl Mlp {
    fn new(rng: &mut ChaCha8Rng, dims: &[usize], relu_output: bool) -> Self {
        let layers = dims
            .windows(2)
            .map(|w| Linear::glorot(rng, w[0], w[1]))
            .collect();
        Mlp { layers, relu_output }
    }
}

/// Shared noise co-adaptation layer. Row k of the implied K x K transition
/// is a softmax over scores w_km . f + b_km; `w` stores column (k*K + m)
/// as the d_f-vector w_km, so `w` is d_f x K^2 and `b` is 1 x K^2.
#[derive(Debug, Clone)]
pub struct NoiseLayer {
    pub w: Tensor,
    pub b: Tensor,
    pub k: usize,
}

impl NoiseLayer {
    fn near_identity(k: usize, d_f: usize, beta: f64) -> Self {
        let mut b = Tensor::zeros(1, k * k);
        for kk in 0..k {
            b.data[kk * k + kk] = beta;
        }
        NoiseLayer { w: Tensor::zeros(d_f, k * k), b, k }
    }
}

#[derive(Debug, Clone)]
pub struct CoudaModel {
    pub cfg: ModelConfig,
    pub p1: Mlp,
    pub p2: Mlp,
    pub c1: Linear,
    pub c2: Linear,
    pub d: Mlp,
    pub z: NoiseLayer,
}

/// Which peer network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Peer {
    One,
    Two,
}

impl CoudaModel {
    /// Deterministic init. The two peers share an architecture but draw
    /// from independent streams so their decision boundaries differ.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Self {
        let mut p_dims = vec![cfg.d_x];
        p_dims.extend(&cfg.hidden);
        p_dims.push(cfg.d_f);
        let mut d_dims = vec![cfg.d_f];
        d_dims.extend(&cfg.disc_hidden);
        d_dims.push(1);

        let mut rng1 = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9).wrapping_add(1));
        let mut rng2 = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9).wrapping_add(2));
        let mut rngd = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9).wrapping_add(3));

        CoudaModel {
            cfg: cfg.clone(),
            p1: Mlp::new(&mut rng1, &p_dims, true),
            c1: Linear::glorot(&mut rng1, cfg.d_f, cfg.k),
            p2: Mlp::new(&mut rng2, &p_dims, true),
            c2: Linear::glorot(&mut rng2, cfg.d_f, cfg.k),
            d: Mlp::new(&mut rngd, &d_dims, false),
            z: NoiseLayer::near_identity(cfg.k, cfg.d_f, cfg.beta_noise_init),
        }
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = Vec::new();
        for (i, l) in self.p1.layers.iter().enumerate() {
            out.push((format!("p1.l{}.w", i), &l.w));
            out.push((format!("p1.l{}.b", i), &l.b));
        }
        for (i, l) in self.p2.layers.iter().enumerate() {
            out.push((format!("p2.l{}.w", i), &l.w));
            out.push((format!("p2.l{}.b", i), &l.b));
        }
        out.push(("c1.w".into(), &self.c1.w));
        out.push(("c1.b".into(), &self.c1.b));
        out.push(("c2.w".into(), &self.c2.w));
        out.push(("c2.b".into(), &self.c2.b));
        for (i, l) in self.d.layers.iter().enumerate() {
            out.push((format!("d.l{}.w", i), &l.w));
            out.push((format!("d.l{}.b", i), &l.b));
        }
        out.push(("z.w".into(), &self.z.w));
        out.push(("z.b".into(), &self.z.b));
        out
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> = Vec::new();
        for (i, l) in self.p1.layers.iter_mut().enumerate() {
            out.push((format!("p1.l{}.w", i), &mut l.w));
            out.push((format!("p1.l{}.b", i), &mut l.b));
        }
        for (i, l) in self.p2.layers.iter_mut().enumerate() {
            out.push((format!("p2.l{}.w", i), &mut l.w));
            out.push((format!("p2.l{}.b", i), &mut l.b));
        }
        out.push(("c1.w".into(), &mut self.c1.w));
        out.push(("c1.b".into(), &mut self.c1.b));
        out.push(("c2.w".into(), &mut self.c2.w));
        out.push(("c2.b".into(), &mut self.c2.b));
        for (i, l) in self.d.layers.iter_mut().enumerate() {
            out.push((format!("d.l{}.w", i), &mut l.w));
            out.push((format!("d.l{}.b", i), &mut l.b));
        }
        out.push(("z.w".into(), &mut self.z.w));
        out.push(("z.b".into(), &mut self.z.b));
        out
    }

    /// Parameter names of the adaptation player {P1, P2, C1, C2, Z}.
    pub fn network_param_names(&self, single_network: bool) -> Vec<String> {
        self.named_params()
            .iter()
            .map(|(n, _)| n.clone())
            .filter(|n| {
                if single_network {
                    n.starts_with("p1.") || n.starts_with("c1.") || n.starts_with("z.")
                } else {
                    !n.starts_with("d.")
                }
            })
            .collect()
    }

    /// Parameter names of the discriminator player.
    pub fn disc_param_names(&self) -> Vec<String> {
        self.named_params()
            .iter()
            .map(|(n, _)| n.clone())
            .filter(|n| n.starts_with("d."))
            .collect()
    }

    /// Bind all parameters onto a tape; `needs_grad` selects which ones are
    /// differentiated in this pass.
    pub fn bind<F: Fn(&str) -> bool>(&self, tape: &mut Tape, needs_grad: F) -> BoundModel {
        let mut params = Vec::new();
        let mut bind_one = |tape: &mut Tape, name: String, t: &Tensor| -> Var {
            let v = tape.leaf(t.clone(), needs_grad(&name));
            params.push((name, v));
            v
        };
        let bind_mlp = |tape: &mut Tape,
                        prefix: &str,
                        m: &Mlp,
                        bind_one: &mut dyn FnMut(&mut Tape, String, &Tensor) -> Var|
         -> Vec<(Var, Var)> {
            m.layers
                .iter()
                .enumerate()
                .map(|(i, l)| {
                    (
                        bind_one(tape, format!("{}.l{}.w", prefix, i), &l.w),
                        bind_one(tape, format!("{}.l{}.b", prefix, i), &l.b),
                    )
                })
                .collect()
        };
        let p1 = bind_mlp(tape, "p1", &self.p1, &mut bind_one);
        let p2 = bind_mlp(tape, "p2", &self.p2, &mut bind_one);
        let c1 = (
            bind_one(tape, "c1.w".into(), &self.c1.w),
            bind_one(tape, "c1.b".into(), &self.c1.b),
        );
        let c2 = (
            bind_one(tape, "c2.w".into(), &self.c2.w),
            bind_one(tape, "c2.b".into(), &self.c2.b),
        );
        let d = bind_mlp(tape, "d", &self.d, &mut bind_one);
        let zw = bind_one(tape, "z.w".into(), &self.z.w);
        let zb = bind_one(tape, "z.b".into(), &self.z.b);
        BoundModel {
            k: self.cfg.k,
            d_f: self.cfg.d_f,
            d_x: self.cfg.d_x,
            p1,
            p2,
            c1,
            c2,
            d,
            zw,
            zb,
            params,
        }
    }

    // ── value-level forwards (inference path) ────────────────────

    /// Features of one peer for a batch, n x d_f.
    pub fn forward_features(&self, peer: Peer, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, |_| false);
        let xv = tape.constant(x.clone());
        let f = bound.features(&mut tape, peer, xv)?;
        Ok(tape.value(f))
    }

    /// Class probabilities of one peer from features, n x K.
    pub fn classify(&self, peer: Peer, f: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, |_| false);
        let fv = tape.constant(f.clone());
        let y = bound.classify(&mut tape, peer, fv)?;
        Ok(tape.value(y))
    }

    /// Domain probabilities from features via the shared discriminator, n x 1.
    pub fn discriminate(&self, f: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, |_| false);
        let fv = tape.constant(f.clone());
        let d = bound.discriminate(&mut tape, fv)?;
        Ok(tape.value(d))
    }

    /// Row-stochastic K x K transition estimated at a single feature vector.
    pub fn noise_transition(&self, f: &[f64]) -> Result<Tensor> {
        if f.len() != self.cfg.d_f {
            return Err(CoudaError::shape(
                "noise_transition",
                format!("feature length {} != d_f {}", f.len(), self.cfg.d_f),
            ));
        }
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, |_| false);
        let fv = tape.constant(Tensor::row(f.to_vec()));
        let t = bound.noise_transition_flat(&mut tape, fv)?;
        let k = self.cfg.k;
        Ok(Tensor { rows: k, cols: k, data: tape.data(t).to_vec() })
    }

    /// Test-time ensemble (y1 + y2) / 2 over the clean P -> C path. Never
    /// touches Z (audited in tests).
    pub fn ensemble_predict(&self, x: &Tensor) -> Result<Tensor> {
        let (t, v) = self.ensemble_predict_traced(x)?;
        Ok(Tensor { rows: t.shape(v)[0], cols: t.shape(v)[1], data: t.data(v).to_vec() })
    }

    /// Like `ensemble_predict` but hands back the tape so tests can audit
    /// which ops ran.
    pub fn ensemble_predict_traced(&self, x: &Tensor) -> Result<(Tape, Var)> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, |_| false);
        let xv = tape.constant(x.clone());
        let f1 = bound.features(&mut tape, Peer::One, xv)?;
        let f2 = bound.features(&mut tape, Peer::Two, xv)?;
        let y1 = bound.classify(&mut tape, Peer::One, f1)?;
        let y2 = bound.classify(&mut tape, Peer::Two, f2)?;
        let s = tape.add(y1, y2)?;
        let avg = tape.scale(s, 0.5);
        Ok((tape, avg))
    }

    /// Single-peer prediction (used by the single-network ablation).
    pub fn predict_peer(&self, peer: Peer, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, |_| false);
        let xv = tape.constant(x.clone());
        let f = bound.features(&mut tape, peer, xv)?;
        let y = bound.classify(&mut tape, peer, f)?;
        Ok(tape.value(y))
    }

    // ── checkpoint ───────────────────────────────────────────────

    /// Binary checkpoint: magic, little-endian u32 count, then per entry
    /// u32 name length, UTF-8 name, u32 rows, u32 cols, rows*cols f64 LE.
    pub fn save_checkpoint<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(MAGIC)?;
        let params = self.named_params();
        f.write_all(&(params.len() as u32).to_le_bytes())?;
        for (name, t) in params {
            f.write_all(&(name.len() as u32).to_le_bytes())?;
            f.write_all(name.as_bytes())?;
            f.write_all(&(t.rows as u32).to_le_bytes())?;
            f.write_all(&(t.cols as u32).to_le_bytes())?;
            for v in &t.data {
                f.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn load_checkpoint<P: AsRef<Path>>(cfg: &ModelConfig, path: P) -> Result<Self> {
        let mut f = std::fs::File::open(path)?;
        let mut magic = [0u8; 8];
        f.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(CoudaError::Checkpoint("bad magic".into()));
        }
        let count = read_u32(&mut f)? as usize;
        let mut model = CoudaModel::init(cfg, 0);
        let mut loaded = std::collections::BTreeMap::new();
        for _ in 0..count {
            let name_len = read_u32(&mut f)? as usize;
            let mut name = vec![0u8; name_len];
            f.read_exact(&mut name)?;
            let name = String::from_utf8(name)
                .map_err(|e| CoudaError::Checkpoint(format!("bad name: {}", e)))?;
            let rows = read_u32(&mut f)? as usize;
            let cols = read_u32(&mut f)? as usize;
            let mut data = vec![0.0; rows * cols];
            for v in &mut data {
                let mut buf = [0u8; 8];
                f.read_exact(&mut buf)?;
                *v = f64::from_le_bytes(buf);
            }
            loaded.insert(name, Tensor { rows, cols, data });
        }
        for (name, t) in model.named_params_mut() {
            let src = loaded
                .remove(&name)
                .ok_or_else(|| CoudaError::Checkpoint(format!("missing parameter {}", name)))?;
            if src.shape() != t.shape() {
                return Err(CoudaError::Checkpoint(format!(
                    "shape mismatch for {}: {:?} vs {:?}",
                    name,
                    src.shape(),
                    t.shape()
                )));
            }
            *t = src;
        }
        if !loaded.is_empty() {
            return Err(CoudaError::Checkpoint(format!(
                "unexpected parameters: {:?}",
                loaded.keys().collect::<Vec<_>>()
            )));
        }
        Ok(model)
    }
}

const MAGIC: &[u8; 8] = b"COUDACK1";

fn read_u32(f: &mut std::fs::File) -> Result<u32> {
    let mut buf = [0u8; 4];
    f.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

/// Model parameters bound onto one tape for a single forward/backward pass.
pub struct BoundModel {
    pub k: usize,
    pub d_f: usize,
    pub d_x: usize,
    p1: Vec<(Var, Var)>,
    p2: Vec<(Var, Var)>,
    c1: (Var, Var),
    c2: (Var, Var),
    d: Vec<(Var, Var)>,
    pub zw: Var,
    pub zb: Var,
    /// name -> var, for gradient readback.
    pub params: Vec<(String, Var)>,
}

impl BoundModel {
    fn mlp_forward(
        &self,
        tape: &mut Tape,
        layers: &[(Var, Var)],
        x: Var,
        relu_output: bool,
    ) -> Result<Var> {
        let mut h = x;
        let last = layers.len() - 1;
        for (i, (w, b)) in layers.iter().enumerate() {
            let z = tape.matmul(h, *w)?;
            let z = tape.add_row(z, *b)?;
            h = if i < last || relu_output { tape.relu(z) } else { z };
        }
        Ok(h)
    }

    pub fn features(&self, tape: &mut Tape, peer: Peer, x: Var) -> Result<Var> {
        if tape.shape(x)[1] != self.d_x {
            return Err(CoudaError::shape(
                "forward_features",
                format!("input width {} != d_x {}", tape.shape(x)[1], self.d_x),
            ));
        }
        let layers = match peer {
            Peer::One => &self.p1,
            Peer::Two => &self.p2,
        };
        self.mlp_forward(tape, layers, x, true)
    }

    pub fn classify(&self, tape: &mut Tape, peer: Peer, f: Var) -> Result<Var> {
        if tape.shape(f)[1] != self.d_f {
            return Err(CoudaError::shape(
                "classify",
                format!("feature width {} != d_f {}", tape.shape(f)[1], self.d_f),
            ));
        }
        let (w, b) = match peer {
            Peer::One => self.c1,
            Peer::Two => self.c2,
        };
        let logits = tape.matmul(f, w)?;
        let logits = tape.add_row(logits, b)?;
        Ok(tape.softmax_rows(logits))
    }

    pub fn discriminate(&self, tape: &mut Tape, f: Var) -> Result<Var> {
        if tape.shape(f)[1] != self.d_f {
            return Err(CoudaError::shape(
                "discriminate",
                format!("feature width {} != d_f {}", tape.shape(f)[1], self.d_f),
            ));
        }
        let logit = self.mlp_forward(tape, &self.d, f, false)?;
        Ok(tape.sigmoid(logit))
    }

    /// Batched transition estimates, n x K^2 (row i is a row-major K x K
    /// row-stochastic matrix).
    pub fn noise_transition_flat(&self, tape: &mut Tape, f: Var) -> Result<Var> {
        let n = tape.shape(f)[0];
        let k = self.k;
        let scores = tape.matmul(f, self.zw)?;
        let scores = tape.add_row(scores, self.zb)?;
        let rows = tape.reshape(scores, n * k, k)?;
        let sm = tape.softmax_rows(rows);
        tape.reshape(sm, n, k * k)
    }

    /// Marginalized noisy prediction z_hat[m] = sum_k T[k][m] y_hat[k],
    /// batched over samples.
    pub fn adapt_predictions(&self, tape: &mut Tape, t_flat: Var, y_hat: Var) -> Result<Var> {
        tape.chunk_vecmat(t_flat, y_hat, self.k)
    }
}

/// Marginalize a single prediction through an explicit transition matrix.
/// `t` must be row-stochastic within 1e-6.
pub fn adapt_prediction(t: &Tensor, y_hat: &[f64]) -> Result<Vec<f64>> {
    let k = y_hat.len();
    if t.rows != k || t.cols != k {
        return Err(CoudaError::shape(
            "adapt_prediction",
            format!("transition {}x{} vs prediction length {}", t.rows, t.cols, k),
        ));
    }
    for i in 0..k {
        let s: f64 = t.row_slice(i).iter().sum();
        if (s - 1.0).abs() > 1e-6 {
            return Err(CoudaError::domain(
                "adapt_prediction",
                format!("row {} sums to {}", i, s),
            ));
        }
    }
    let mut out = vec![0.0; k];
    for (kk, w) in y_hat.iter().enumerate() {
        for m in 0..k {
            out[m] += t.data[kk * k + m] * w;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> ModelConfig {
        ModelConfig {
            d_x: 2,
            d_f: 4,
            k: 3,
            hidden: vec![5],
            disc_hidden: vec![4],
            beta_noise_init: 2.0,
        }
    }

    #[test]
    fn zero_extractor_gives_zero_features() {
        let cfg = small_cfg();
        let mut m = CoudaModel::init(&cfg, 1);
        for (name, t) in m.named_params_mut() {
            if name.starts_with("p1.") {
                t.data.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let x = Tensor::new(2, 2, vec![1.0, -3.0, 0.5, 2.0]).unwrap();
        let f = m.forward_features(Peer::One, &x).unwrap();
        assert!(f.data.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn single_layer_relu_extractor_matches_relu() {
        let cfg = ModelConfig {
            d_x: 2,
            d_f: 2,
            k: 2,
            hidden: vec![],
            disc_hidden: vec![2],
            beta_noise_init: 0.0,
        };
        let mut m = CoudaModel::init(&cfg, 1);
        for (name, t) in m.named_params_mut() {
            if name == "p1.l0.w" {
                t.data = vec![1.0, 0.0, 0.0, 1.0];
            } else if name == "p1.l0.b" {
                t.data = vec![0.0, 0.0];
            }
        }
        let x = Tensor::new(1, 2, vec![-1.0, 2.0]).unwrap();
        let f = m.forward_features(Peer::One, &x).unwrap();
        assert_eq!(f.data, vec![0.0, 2.0]);
    }

    #[test]
    fn features_are_deterministic() {
        let cfg = small_cfg();
        let m = CoudaModel::init(&cfg, 9);
        let x = Tensor::new(3, 2, vec![0.1, -0.4, 1.5, 2.0, -3.0, 0.2]).unwrap();
        let f1 = m.forward_features(Peer::One, &x).unwrap();
        let f2 = m.forward_features(Peer::One, &x).unwrap();
        assert!(f1.data.iter().zip(&f2.data).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn zero_classifier_is_uniform() {
        let cfg = small_cfg();
        let mut m = CoudaModel::init(&cfg, 1);
        for (name, t) in m.named_params_mut() {
            if name.starts_with("c1.") {
                t.data.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let f = Tensor::new(2, 4, vec![0.3; 8]).unwrap();
        let y = m.classify(Peer::One, &f).unwrap();
        for v in &y.data {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn classify_large_logit_matches_scalar_softmax() {
        // softmax([10, 0, 0]) computed against a direct scalar evaluation.
        let e0 = 10.0_f64.exp();
        let z = e0 + 2.0;
        let expect = [e0 / z, 1.0 / z, 1.0 / z];
        let cfg = ModelConfig {
            d_x: 2,
            d_f: 3,
            k: 3,
            hidden: vec![],
            disc_hidden: vec![2],
            beta_noise_init: 0.0,
        };
        let mut m = CoudaModel::init(&cfg, 1);
        for (name, t) in m.named_params_mut() {
            if name == "c1.w" {
                // identity map from features to logits
                t.data = vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
            } else if name == "c1.b" {
                t.data = vec![0.0; 3];
            }
        }
        let f = Tensor::new(1, 3, vec![10.0, 0.0, 0.0]).unwrap();
        let y = m.classify(Peer::One, &f).unwrap();
        for (a, b) in y.data.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((expect[0] - 0.99991).abs() < 1e-5);
        assert!((expect[1] - 0.0000454).abs() < 1e-6);
    }

    #[test]
    fn classifier_rows_sum_to_one() {
        let cfg = small_cfg();
        let m = CoudaModel::init(&cfg, 3);
        let f = Tensor::new(4, 4, (0..16).map(|i| (i as f64) * 0.37 - 2.0).collect()).unwrap();
        let y = m.classify(Peer::Two, &f).unwrap();
        for row in y.data.chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_discriminator_outputs_half() {
        let cfg = small_cfg();
        let mut m = CoudaModel::init(&cfg, 1);
        for (name, t) in m.named_params_mut() {
            if name.starts_with("d.") {
                t.data.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let f = Tensor::new(3, 4, vec![1.0; 12]).unwrap();
        let d = m.discriminate(&f).unwrap();
        assert!(d.data.iter().all(|v| (*v - 0.5).abs() < 1e-15));
    }

    #[test]
    fn discriminator_output_is_open_unit_interval_and_deterministic() {
        let cfg = small_cfg();
        let m = CoudaModel::init(&cfg, 5);
        let f = Tensor::new(4, 4, (0..16).map(|i| i as f64 - 8.0).collect()).unwrap();
        let d1 = m.discriminate(&f).unwrap();
        let d2 = m.discriminate(&f).unwrap();
        assert!(d1.data.iter().all(|v| *v > 0.0 && *v < 1.0));
        assert_eq!(d1.data, d2.data);
    }

    #[test]
    fn noise_transition_uniform_when_zeroed() {
        let cfg = small_cfg();
        let mut m = CoudaModel::init(&cfg, 1);
        for (name, t) in m.named_params_mut() {
            if name.starts_with("z.") {
                t.data.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let t = m.noise_transition(&[0.5, -1.0, 2.0, 0.0]).unwrap();
        for v in &t.data {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn noise_transition_beta_init_diagonal() {
        // beta = 2, K = 3: diagonal e^2/(e^2+2), off-diagonal 1/(e^2+2).
        let cfg = small_cfg();
        let m = CoudaModel::init(&cfg, 1);
        let t = m.noise_transition(&[0.0; 4]).unwrap();
        let e2 = 2.0_f64.exp();
        let diag = e2 / (e2 + 2.0);
        let off = 1.0 / (e2 + 2.0);
        assert!((diag - 0.78699).abs() < 1e-5);
        assert!((off - 0.10651).abs() < 1e-5);
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { diag } else { off };
                assert!((t.data[i * 3 + j] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn noise_transition_rows_stochastic_for_random_inputs() {
        let cfg = small_cfg();
        let mut m = CoudaModel::init(&cfg, 11);
        for (name, t) in m.named_params_mut() {
            if name.starts_with("z.") {
                for (i, v) in t.data.iter_mut().enumerate() {
                    *v = ((i * 37 + 11) % 17) as f64 * 0.21 - 1.5;
                }
            }
        }
        let t = m.noise_transition(&[0.2, -0.7, 1.3, 0.9]).unwrap();
        for i in 0..3 {
            let s: f64 = t.row_slice(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn adapt_prediction_identity_and_uniform() {
        let eye = Tensor::new(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let y = vec![0.3, 0.7];
        assert_eq!(adapt_prediction(&eye, &y).unwrap(), y);
        let unif = Tensor::new(2, 2, vec![0.5, 0.5, 0.5, 0.5]).unwrap();
        let z = adapt_prediction(&unif, &[0.9, 0.1]).unwrap();
        assert!((z[0] - 0.5).abs() < 1e-12 && (z[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn adapt_prediction_worked_example() {
        let t = Tensor::new(2, 2, vec![0.8, 0.2, 0.3, 0.7]).unwrap();
        let z = adapt_prediction(&t, &[0.5, 0.5]).unwrap();
        // independent matrix-vector oracle: y^T T
        let oracle = [0.5 * 0.8 + 0.5 * 0.3, 0.5 * 0.2 + 0.5 * 0.7];
        assert!((z[0] - oracle[0]).abs() < 1e-15);
        assert!((z[1] - oracle[1]).abs() < 1e-15);
        assert!((z[0] - 0.55).abs() < 1e-12);
        assert!((z[1] - 0.45).abs() < 1e-12);
    }

    #[test]
    fn adapt_prediction_rejects_non_stochastic() {
        let t = Tensor::new(2, 2, vec![0.8, 0.3, 0.3, 0.7]).unwrap();
        assert!(adapt_prediction(&t, &[0.5, 0.5]).is_err());
    }

    #[test]
    fn ensemble_is_peer_symmetric_and_never_touches_z() {
        let cfg = small_cfg();
        let m = CoudaModel::init(&cfg, 21);
        let x = Tensor::new(3, 2, vec![0.4, -0.8, 2.0, 0.1, -1.0, 1.0]).unwrap();
        let y = m.ensemble_predict(&x).unwrap();

        // swap the peers and re-run
        let mut swapped = m.clone();
        std::mem::swap(&mut swapped.p1, &mut swapped.p2);
        std::mem::swap(&mut swapped.c1, &mut swapped.c2);
        let ys = swapped.ensemble_predict(&x).unwrap();
        for (a, b) in y.data.iter().zip(&ys.data) {
            assert!((a - b).abs() < 1e-15);
        }
        for row in y.data.chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }

        // evaluation path audit: no noise-layer op on the tape
        let (tape, _) = m.ensemble_predict_traced(&x).unwrap();
        assert!(!tape.used_op("chunk_vecmat"));
    }

    #[test]
    fn ensemble_averages_disagreeing_peers() {
        let cfg = ModelConfig {
            d_x: 1,
            d_f: 2,
            k: 2,
            hidden: vec![],
            disc_hidden: vec![2],
            beta_noise_init: 0.0,
        };
        let mut m = CoudaModel::init(&cfg, 1);
        for (name, t) in m.named_params_mut() {
            match name.as_str() {
                "p1.l0.w" | "p2.l0.w" => t.data = vec![1.0, 1.0],
                "p1.l0.b" | "p2.l0.b" => t.data = vec![0.0, 0.0],
                "c1.w" => t.data = vec![50.0, -50.0, 0.0, 0.0],
                "c2.w" => t.data = vec![-50.0, 50.0, 0.0, 0.0],
                "c1.b" | "c2.b" => t.data = vec![0.0, 0.0],
                _ => {}
            }
        }
        let x = Tensor::new(1, 1, vec![1.0]).unwrap();
        let y = m.ensemble_predict(&x).unwrap();
        assert!((y.data[0] - 0.5).abs() < 1e-10);
        assert!((y.data[1] - 0.5).abs() < 1e-10);
    }

    #[test]
    fn wrong_input_width_is_error() {
        let cfg = small_cfg();
        let m = CoudaModel::init(&cfg, 2);
        let x = Tensor::new(1, 3, vec![1.0, 2.0, 3.0]).unwrap();
        assert!(m.forward_features(Peer::One, &x).is_err());
        let f = Tensor::new(1, 5, vec![0.0; 5]).unwrap();
        assert!(m.classify(Peer::One, &f).is_err());
        assert!(m.discriminate(&f).is_err());
    }

    #[test]
    fn peers_share_architecture_but_differ_in_parameters() {
        let cfg = small_cfg();
        let m = CoudaModel::init(&cfg, 4);
        assert_eq!(m.p1.layers.len(), m.p2.layers.len());
        let p1w = &m.p1.layers[0].w.data;
        let p2w = &m.p2.layers[0].w.data;
        assert_ne!(p1w, p2w);
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let cfg = small_cfg();
        let m = CoudaModel::init(&cfg, 17);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        m.save_checkpoint(&path).unwrap();
        let loaded = CoudaModel::load_checkpoint(&cfg, &path).unwrap();
        for ((na, ta), (nb, tb)) in m.named_params().iter().zip(loaded.named_params()) {
            assert_eq!(*na, nb);
            assert_eq!(ta.shape(), tb.shape());
            assert!(ta.data.iter().zip(&tb.data).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn parameter_groups_are_disjoint_and_cover() {
        let cfg = small_cfg();
        let m = CoudaModel::init(&cfg, 1);
        let all: std::collections::BTreeSet<_> =
            m.named_params().iter().map(|(n, _)| n.clone()).collect();
        let nets: std::collections::BTreeSet<_> =
            m.network_param_names(false).into_iter().collect();
        let disc: std::collections::BTreeSet<_> = m.disc_param_names().into_iter().collect();
        assert!(nets.is_disjoint(&disc));
        let union: std::collections::BTreeSet<_> = nets.union(&disc).cloned().collect();
        assert_eq!(union, all);
    }
}
