//! Collaborative unsupervised domain adaptation with noisy source labels.
//!
//! Two peer classifier networks are trained on a labeled source domain and
//! aligned to an unlabeled target domain by a least-squares adversarial
//! discriminator whose per-sample influence is set by transferability
//! weights; a shared noise co-adaptation layer absorbs source label
//! corruption, and a Jensen-Shannon term keeps the peers diverse. Built on
//! a small reverse-mode tape over dense 2-D f64 tensors.

pub mod config;
pub mod data;
pub mod diffcore;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod selfcheck;
pub mod training;

pub use config::{AblationVariant, ExperimentConfig};
pub use data::{generate_synthetic, inject_label_noise, Dataset, NoiseSpec, SyntheticSpec};
pub use diffcore::{grad_check, Tape, Tensor, Var};
pub use error::{CoudaError, Result};
pub use losses::{AblationFlags, Hyperparams};
pub use metrics::{evaluate, MetricsReport};
pub use model::{CoudaModel, ModelConfig, Peer};
pub use training::{fit, FitConfig, FitOutcome, TrainState};
