//! Synthetic two-domain benchmarks with class imbalance and injected
//! class-conditional label noise, plus CSV ingestion and batching.
//!
//! The generator draws K Gaussian clusters in the plane for the source
//! domain; the target domain is the same class-conditional distribution
//! pushed through a rotation plus translation. Injected noise resamples
//! each observed label from a known row-stochastic transition matrix, so
//! recovery tests have a ground truth to compare against.

use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor;
use crate::error::{CoudaError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Source,
    Target,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub x: Vec<f64>,
    /// Observed (possibly noisy) label; source only.
    pub z: Option<usize>,
    /// Hidden true label, for evaluation and noise-recovery tests only.
    pub y_clean: usize,
    pub domain: Domain,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub d_x: usize,
    pub k: usize,
    pub examples: Vec<LabeledExample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn x_matrix(&self) -> Tensor {
        let mut data = Vec::with_capacity(self.len() * self.d_x);
        for e in &self.examples {
            data.extend_from_slice(&e.x);
        }
        Tensor { rows: self.len(), cols: self.d_x, data }
    }

    pub fn clean_labels(&self) -> Vec<usize> {
        self.examples.iter().map(|e| e.y_clean).collect()
    }

    pub fn observed_labels(&self) -> Result<Vec<usize>> {
        self.examples
            .iter()
            .map(|e| {
                e.z.ok_or_else(|| CoudaError::Data("example has no observed label".into()))
            })
            .collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.k];
        for e in &self.examples {
            counts[e.y_clean] += 1;
        }
        counts
    }

    /// Deterministic split into (rest, held_out) with `frac` held out.
    pub fn split_held_out(&self, frac: f64, seed: u64) -> (Dataset, Dataset) {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x51ed_2701).wrapping_add(77));
        idx.shuffle(&mut rng);
        let n_held = ((self.len() as f64) * frac).round() as usize;
        let (held, rest) = idx.split_at(n_held);
        let pick = |ids: &[usize]| Dataset {
            d_x: self.d_x,
            k: self.k,
            examples: {
                let mut ids = ids.to_vec();
                ids.sort_unstable();
                ids.iter().map(|i| self.examples[*i].clone()).collect()
            },
        };
        (pick(rest), pick(held))
    }
}

/// Ground-truth label corruption process.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct NoiseSpec {
    /// K x K row-stochastic transition matrix, rows = true class.
    pub t_true: Vec<Vec<f64>>,
    pub seed: u64,
}

impl NoiseSpec {
    /// Uniform off-diagonal noise at the given rate.
    pub fn uniform(k: usize, rate: f64, seed: u64) -> Self {
        let off = if k > 1 { rate / (k - 1) as f64 } else { 0.0 };
        let t_true = (0..k)
            .map(|i| {
                (0..k)
                    .map(|j| if i == j { 1.0 - rate } else { off })
                    .collect()
            })
            .collect();
        NoiseSpec { t_true, seed }
    }

    pub fn identity(k: usize, seed: u64) -> Self {
        NoiseSpec::uniform(k, 0.0, seed)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, row) in self.t_true.iter().enumerate() {
            if row.len() != self.t_true.len() {
                return Err(CoudaError::shape(
                    "inject_label_noise",
                    format!("row {} has length {}", i, row.len()),
                ));
            }
            if row.iter().any(|v| *v < 0.0) {
                return Err(CoudaError::domain(
                    "inject_label_noise",
                    format!("negative entry in row {}", i),
                ));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(CoudaError::domain(
                    "inject_label_noise",
                    format!("row {} sums to {}", i, s),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct SyntheticSpec {
    pub k: usize,
    pub d_x: usize,
    pub n_source: usize,
    pub n_target: usize,
    pub source_priors: Vec<f64>,
    pub target_priors: Vec<f64>,
    /// Cluster centers sit on a circle of this radius.
    pub radius: f64,
    /// Angular span the K centers are spread over. 360 places them on the
    /// full circle (spacing 360/K); smaller values pack them onto an arc,
    /// which makes a rotation shift cross class boundaries sooner.
    pub arc_deg: f64,
    /// Target shift: rotation in degrees plus translation.
    pub rotation_deg: f64,
    pub translation: Vec<f64>,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            k: 3,
            d_x: 2,
            n_source: 2400,
            n_target: 1200,
            // WSI source counts 36094 : 3626 : 3081 normalized
            source_priors: vec![0.843, 0.085, 0.072],
            // MSI training counts 2696 : 1042 : 1091 normalized
            target_priors: normalized(&[2696.0, 1042.0, 1091.0]),
            radius: 4.0,
            // 140-degree arc gives 70 degrees between adjacent centers, so
            // the default 30-degree shift pushes each target cluster well
            // toward the next class region and genuinely confuses a
            // source-only classifier.
            arc_deg: 140.0,
            rotation_deg: 30.0,
            translation: vec![1.0, 1.0],
        }
    }
}

fn normalized(counts: &[f64]) -> Vec<f64> {
    let s: f64 = counts.iter().sum();
    counts.iter().map(|c| c / s).collect()
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.d_x != 2 {
            return Err(CoudaError::Config("generator supports d_x = 2 only".into()));
        }
        for priors in [&self.source_priors, &self.target_priors] {
            if priors.len() != self.k {
                return Err(CoudaError::Config(format!(
                    "priors length {} != k {}",
                    priors.len(),
                    self.k
                )));
            }
            if priors.iter().any(|p| *p <= 0.0) {
                return Err(CoudaError::Config("class priors must be positive".into()));
            }
            let s: f64 = priors.iter().sum();
            if (s - 1.0).abs() > 1e-6 {
                return Err(CoudaError::Config(format!("priors sum to {}", s)));
            }
        }
        if self.n_source < self.k || self.n_target < self.k {
            return Err(CoudaError::Config("counts must be at least k".into()));
        }
        if self.translation.len() != self.d_x {
            return Err(CoudaError::Config("translation length must match d_x".into()));
        }
        if !(self.arc_deg > 0.0 && self.arc_deg <= 360.0) {
            return Err(CoudaError::Config(format!(
                "arc_deg must be in (0, 360], got {}",
                self.arc_deg
            )));
        }
        Ok(())
    }

    fn center(&self, class: usize) -> [f64; 2] {
        // On the full circle the endpoints coincide, so spacing is span/K;
        // on a partial arc the K centers span it end to end.
        let frac = if self.arc_deg >= 360.0 {
            class as f64 / self.k as f64
        } else if self.k > 1 {
            class as f64 / (self.k - 1) as f64
        } else {
            0.0
        };
        let angle = self.arc_deg.to_radians() * frac;
        [self.radius * angle.cos(), self.radius * angle.sin()]
    }
}

/// Largest-remainder apportionment of n samples over class priors.
fn class_counts(priors: &[f64], n: usize) -> Vec<usize> {
    let raw: Vec<f64> = priors.iter().map(|p| p * n as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let mut deficit = n - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..priors.len()).collect();
    order.sort_by(|a, b| {
        let ra = raw[*a] - raw[*a].floor();
        let rb = raw[*b] - raw[*b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(b))
    });
    for i in order {
        if deficit == 0 {
            break;
        }
        counts[i] += 1;
        deficit -= 1;
    }
    counts
}

/// Draw per-class unit-covariance Gaussian points around the source
/// centers. Shared by the source and target paths so the target is exactly
/// an affine image of a source-distribution draw.
fn sample_base(
    spec: &SyntheticSpec,
    priors: &[f64],
    n: usize,
    seed: u64,
) -> (Vec<[f64; 2]>, Vec<usize>) {
    let counts = class_counts(priors, n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for (class, count) in counts.iter().enumerate() {
        let c = spec.center(class);
        for _ in 0..*count {
            let dx: f64 = rng.sample(StandardNormal);
            let dy: f64 = rng.sample(StandardNormal);
            points.push([c[0] + dx, c[1] + dy]);
            labels.push(class);
        }
    }
    // deterministic interleave so class blocks don't survive into batches
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    (
        order.iter().map(|i| points[*i]).collect(),
        order.iter().map(|i| labels[*i]).collect(),
    )
}

fn affine(spec: &SyntheticSpec, p: [f64; 2]) -> [f64; 2] {
    let theta = spec.rotation_deg.to_radians();
    let (s, c) = theta.sin_cos();
    [
        c * p[0] - s * p[1] + spec.translation[0],
        s * p[0] + c * p[1] + spec.translation[1],
    ]
}

/// Generate the two domains. Source examples come out with clean observed
/// labels (`z == Some(y_clean)`); pass the source through
/// `inject_label_noise` to corrupt them. Deterministic per seed.
pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<(Dataset, Dataset)> {
    spec.validate()?;
    let (src_pts, src_labels) = sample_base(spec, &spec.source_priors, spec.n_source, seed);
    let (tgt_base, tgt_labels) =
        sample_base(spec, &spec.target_priors, spec.n_target, seed.wrapping_add(0x7a61));
    let source = Dataset {
        d_x: 2,
        k: spec.k,
        examples: src_pts
            .iter()
            .zip(&src_labels)
            .map(|(p, y)| LabeledExample {
                x: p.to_vec(),
                z: Some(*y),
                y_clean: *y,
                domain: Domain::Source,
            })
            .collect(),
    };
    let target = Dataset {
        d_x: 2,
        k: spec.k,
        examples: tgt_base
            .iter()
            .zip(&tgt_labels)
            .map(|(p, y)| LabeledExample {
                x: affine(spec, *p).to_vec(),
                z: None,
                y_clean: *y,
                domain: Domain::Target,
            })
            .collect(),
    };
    Ok((source, target))
}

/// Resample each observed label from the transition row of its clean
/// label. Returns a new dataset; never mutates the input.
pub fn inject_label_noise(dataset: &Dataset, noise: &NoiseSpec) -> Result<Dataset> {
    noise.validate()?;
    if noise.t_true.len() != dataset.k {
        return Err(CoudaError::shape(
            "inject_label_noise",
            format!("transition is {}x? for k {}", noise.t_true.len(), dataset.k),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed.wrapping_mul(0x2545_f491));
    let mut out = dataset.clone();
    for e in &mut out.examples {
        let row = &noise.t_true[e.y_clean];
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut picked = dataset.k - 1;
        for (m, p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                picked = m;
                break;
            }
        }
        e.z = Some(picked);
    }
    Ok(out)
}

// ── CSV and manifest ─────────────────────────────────────────────

/// Write a dataset as CSV. Source schema `x0..x{d-1},label,clean_label`;
/// target schema `x0..x{d-1},clean_label`.
pub fn save_csv<P: AsRef<Path>>(dataset: &Dataset, path: P) -> Result<()> {
    let is_source = dataset
        .examples
        .first()
        .map(|e| e.domain == Domain::Source)
        .unwrap_or(true);
    let mut w = csv::Writer::from_path(path.as_ref())
        .map_err(|e| CoudaError::Data(e.to_string()))?;
    let mut header: Vec<String> = (0..dataset.d_x).map(|i| format!("x{}", i)).collect();
    if is_source {
        header.push("label".into());
    }
    header.push("clean_label".into());
    w.write_record(&header).map_err(|e| CoudaError::Data(e.to_string()))?;
    for e in &dataset.examples {
        let mut rec: Vec<String> = e.x.iter().map(|v| format!("{}", v)).collect();
        if is_source {
            let z = e
                .z
                .ok_or_else(|| CoudaError::Data("source example missing observed label".into()))?;
            rec.push(z.to_string());
        }
        rec.push(e.y_clean.to_string());
        w.write_record(&rec).map_err(|e| CoudaError::Data(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Load a dataset written by `save_csv`. `k` bounds the label range.
pub fn load_csv<P: AsRef<Path>>(path: P, k: usize) -> Result<Dataset> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path.as_ref())
        .map_err(|e| CoudaError::Data(e.to_string()))?;
    let header = r
        .headers()
        .map_err(|e| CoudaError::Data(e.to_string()))?
        .clone();
    let cols: Vec<&str> = header.iter().collect();
    let has_label = cols.contains(&"label");
    if *cols.last().unwrap_or(&"") != "clean_label" {
        return Err(CoudaError::Data(
            "last column must be clean_label".into(),
        ));
    }
    let d_x = cols.len() - 1 - usize::from(has_label);
    if d_x == 0 {
        return Err(CoudaError::Data("no feature columns".into()));
    }
    let domain = if has_label { Domain::Source } else { Domain::Target };
    let mut examples = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let line = i + 2; // header is line 1
        let rec = rec.map_err(|e| CoudaError::CsvRow { line, detail: e.to_string() })?;
        if rec.len() != cols.len() {
            return Err(CoudaError::CsvRow {
                line,
                detail: format!("{} fields, expected {}", rec.len(), cols.len()),
            });
        }
        let mut x = Vec::with_capacity(d_x);
        for j in 0..d_x {
            let v: f64 = rec[j].parse().map_err(|e| CoudaError::CsvRow {
                line,
                detail: format!("bad feature {}: {}", &rec[j], e),
            })?;
            x.push(v);
        }
        let parse_label = |field: &str| -> Result<usize> {
            let v: usize = field.parse().map_err(|e| CoudaError::CsvRow {
                line,
                detail: format!("bad label {}: {}", field, e),
            })?;
            if v >= k {
                return Err(CoudaError::CsvRow {
                    line,
                    detail: format!("label {} out of range for {} classes", v, k),
                });
            }
            Ok(v)
        };
        let z = if has_label { Some(parse_label(&rec[d_x])?) } else { None };
        let y_clean = parse_label(&rec[cols.len() - 1])?;
        examples.push(LabeledExample { x, z, y_clean, domain });
    }
    if examples.is_empty() {
        return Err(CoudaError::Data(format!(
            "{} contains a header but no examples",
            path.as_ref().display()
        )));
    }
    Ok(Dataset { d_x, k, examples })
}

/// Sidecar manifest written next to generated CSVs.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Manifest {
    pub k: usize,
    pub d_x: usize,
    pub seed: u64,
    pub source_priors: Vec<f64>,
    pub target_priors: Vec<f64>,
    pub radius: f64,
    pub arc_deg: f64,
    pub rotation_deg: f64,
    pub translation: Vec<f64>,
    pub t_true: Vec<Vec<f64>>,
    pub n_source: usize,
    pub n_target_train: usize,
    pub n_target_test: usize,
}

impl Manifest {
    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let text = toml::to_string_pretty(self)
            .map_err(|e| CoudaError::Data(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| CoudaError::Data(e.to_string()))
    }
}

// ── batching ─────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct DomainBatch {
    pub source: Vec<LabeledExample>,
    pub target: Vec<LabeledExample>,
}

impl DomainBatch {
    pub fn x_source(&self) -> Tensor {
        stack(&self.source)
    }

    pub fn x_target(&self) -> Tensor {
        stack(&self.target)
    }

    pub fn observed_labels(&self) -> Result<Vec<usize>> {
        self.source
            .iter()
            .map(|e| e.z.ok_or_else(|| CoudaError::Data("missing observed label".into())))
            .collect()
    }
}

fn stack(examples: &[LabeledExample]) -> Tensor {
    let d = examples[0].x.len();
    let mut data = Vec::with_capacity(examples.len() * d);
    for e in examples {
        data.extend_from_slice(&e.x);
    }
    Tensor { rows: examples.len(), cols: d, data }
}

/// One epoch of paired batches. Each domain is shuffled independently per
/// (seed, epoch); the longer domain is covered exactly once and the
/// shorter one cycles.
pub fn make_batches(
    source: &Dataset,
    target: &Dataset,
    batch_size: usize,
    seed: u64,
    epoch: usize,
) -> Result<Vec<DomainBatch>> {
    if batch_size == 0 {
        return Err(CoudaError::Config("batch_size must be at least 1".into()));
    }
    if source.is_empty() || target.is_empty() {
        return Err(CoudaError::Data("both domains must be nonempty".into()));
    }
    let shuffled = |n: usize, tag: u64| -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(
            seed.wrapping_mul(0x9e37_79b9)
                .wrapping_add((epoch as u64) << 8)
                .wrapping_add(tag),
        );
        idx.shuffle(&mut rng);
        idx
    };
    let src_idx = shuffled(source.len(), 1);
    let tgt_idx = shuffled(target.len(), 2);
    let n_primary = source.len().max(target.len());
    let n_batches = n_primary.div_ceil(batch_size);
    let mut out = Vec::with_capacity(n_batches);
    for b in 0..n_batches {
        let lo = b * batch_size;
        let hi = ((b + 1) * batch_size).min(n_primary);
        let take = |idx: &[usize], data: &Dataset| -> Vec<LabeledExample> {
            (lo..hi)
                .map(|i| data.examples[idx[i % idx.len()]].clone())
                .collect()
        };
        out.push(DomainBatch {
            source: take(&src_idx, source),
            target: take(&tgt_idx, target),
        });
    }
    Ok(out)
}
