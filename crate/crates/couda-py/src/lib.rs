//! Python bindings: benchmark generation, training, evaluation and the
//! gradient self-test, mirroring the `couda` CLI surface.

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use couda_core::config::AblationVariant;
use couda_core::data::{
    generate_synthetic, inject_label_noise, load_csv, save_csv, Dataset, NoiseSpec, SyntheticSpec,
};
use couda_core::error::CoudaError;
use couda_core::losses::{self, Hyperparams};
use couda_core::metrics::{evaluate as evaluate_model, MetricsReport};
use couda_core::model::{CoudaModel, ModelConfig};
use couda_core::selfcheck;
use couda_core::training::{fit, FitConfig};

fn to_py_err(e: CoudaError) -> PyErr {
    match e {
        CoudaError::Io(_) => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// A labeled two-domain dataset split.
#[pyclass(name = "Dataset", from_py_object)]
#[derive(Clone)]
struct PyDataset {
    inner: Dataset,
}

#[pymethods]
impl PyDataset {
    #[getter]
    fn k(&self) -> usize {
        self.inner.k
    }

    #[getter]
    fn d_x(&self) -> usize {
        self.inner.d_x
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    /// Feature rows as a list of lists.
    fn xs(&self) -> Vec<Vec<f64>> {
        self.inner.examples.iter().map(|e| e.x.clone()).collect()
    }

    /// Ground-truth labels.
    fn clean_labels(&self) -> Vec<usize> {
        self.inner.examples.iter().map(|e| e.y_clean).collect()
    }

    /// Observed (possibly corrupted) labels; raises on unlabeled targets.
    fn observed_labels(&self) -> PyResult<Vec<usize>> {
        self.inner.observed_labels().map_err(to_py_err)
    }

    fn save_csv(&self, path: &str) -> PyResult<()> {
        save_csv(&self.inner, path).map_err(to_py_err)
    }

    #[staticmethod]
    fn load_csv(path: &str, k: usize) -> PyResult<Self> {
        Ok(PyDataset { inner: load_csv(path, k).map_err(to_py_err)? })
    }
}

/// A trained model: two peer networks, discriminator and noise layer.
#[pyclass(name = "Model")]
struct PyModel {
    inner: CoudaModel,
    single_network: bool,
}

#[pymethods]
impl PyModel {
    /// Ensemble class probabilities for feature rows.
    fn predict_proba(&self, xs: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let t = rows_to_tensor(&xs)?;
        let probs = if self.single_network {
            self.inner
                .predict_peer(couda_core::model::Peer::One, &t)
                .map_err(to_py_err)?
        } else {
            self.inner.ensemble_predict(&t).map_err(to_py_err)?
        };
        Ok((0..probs.rows).map(|i| probs.row_slice(i).to_vec()).collect())
    }

    /// Argmax class indices for feature rows.
    fn predict(&self, xs: Vec<Vec<f64>>) -> PyResult<Vec<usize>> {
        Ok(self
            .predict_proba(xs)?
            .iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (i, v)| {
                        if *v > best.1 {
                            (i, *v)
                        } else {
                            best
                        }
                    })
                    .0
            })
            .collect())
    }

    /// Estimated noise transition matrix for one feature vector.
    fn noise_transition(&self, f: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
        let t = self.inner.noise_transition(&f).map_err(to_py_err)?;
        Ok((0..t.rows).map(|i| t.row_slice(i).to_vec()).collect())
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save_checkpoint(path).map_err(to_py_err)
    }

    #[staticmethod]
    #[pyo3(signature = (path, d_x=2, d_f=16, k=3, hidden=vec![32, 32], disc_hidden=vec![16], single_network=false))]
    fn load(
        path: &str,
        d_x: usize,
        d_f: usize,
        k: usize,
        hidden: Vec<usize>,
        disc_hidden: Vec<usize>,
        single_network: bool,
    ) -> PyResult<Self> {
        let cfg = ModelConfig { d_x, d_f, k, hidden, disc_hidden, ..Default::default() };
        Ok(PyModel {
            inner: CoudaModel::load_checkpoint(&cfg, path).map_err(to_py_err)?,
            single_network,
        })
    }
}

fn rows_to_tensor(xs: &[Vec<f64>]) -> PyResult<couda_core::Tensor> {
    let rows = xs.len();
    if rows == 0 {
        return Err(PyValueError::new_err("empty input"));
    }
    let cols = xs[0].len();
    let mut data = Vec::with_capacity(rows * cols);
    for row in xs {
        if row.len() != cols {
            return Err(PyValueError::new_err("ragged rows"));
        }
        data.extend_from_slice(row);
    }
    Ok(couda_core::Tensor { rows, cols, data })
}

/// Draw the synthetic two-domain benchmark: a noisily labeled source set
/// and clean target train/test splits.
#[pyfunction]
#[pyo3(signature = (seed=0, n_source=2400, n_target=1200, noise_rate=0.3, held_out_frac=0.2, rotation_deg=30.0, translation=vec![1.0, 1.0], arc_deg=140.0))]
fn generate_benchmark(
    seed: u64,
    n_source: usize,
    n_target: usize,
    noise_rate: f64,
    held_out_frac: f64,
    rotation_deg: f64,
    translation: Vec<f64>,
    arc_deg: f64,
) -> PyResult<(PyDataset, PyDataset, PyDataset)> {
    let spec = SyntheticSpec {
        n_source,
        n_target,
        rotation_deg,
        translation,
        arc_deg,
        ..Default::default()
    };
    let (clean_source, target) = generate_synthetic(&spec, seed).map_err(to_py_err)?;
    let source = inject_label_noise(&clean_source, &NoiseSpec::uniform(spec.k, noise_rate, seed))
        .map_err(to_py_err)?;
    let (target_train, target_test) = target.split_held_out(held_out_frac, seed);
    Ok((
        PyDataset { inner: source },
        PyDataset { inner: target_train },
        PyDataset { inner: target_test },
    ))
}

/// Train on a source set and target train split; returns the model and a
/// per-epoch history of loss terms and held-out target metrics.
#[pyfunction]
#[pyo3(signature = (source, target_train, target_test, seed=0, epochs=30, alpha=1.0, eta=0.01, gamma=2.0, lr=1e-3, batch_size=64, d_f=16, hidden=vec![32, 32], variant="full", warmup_alpha=true))]
#[allow(clippy::too_many_arguments)]
fn train(
    py: Python<'_>,
    source: &PyDataset,
    target_train: &PyDataset,
    target_test: &PyDataset,
    seed: u64,
    epochs: usize,
    alpha: f64,
    eta: f64,
    gamma: f64,
    lr: f64,
    batch_size: usize,
    d_f: usize,
    hidden: Vec<usize>,
    variant: &str,
    warmup_alpha: bool,
) -> PyResult<(PyModel, Vec<Py<PyDict>>)> {
    let flags = AblationVariant::parse(variant).map_err(to_py_err)?.flags();
    let cfg = FitConfig {
        model: ModelConfig {
            d_x: source.inner.d_x,
            d_f,
            k: source.inner.k,
            hidden,
            ..Default::default()
        },
        hp: Hyperparams {
            alpha,
            eta,
            gamma,
            lr,
            batch_size,
            epochs,
            ..Default::default()
        },
        flags,
        seed,
        warmup_alpha,
    };
    let outcome = fit(&cfg, &source.inner, &target_train.inner, &target_test.inner)
        .map_err(to_py_err)?;
    if let Some(reason) = outcome.aborted {
        return Err(PyValueError::new_err(format!("training aborted: {}", reason)));
    }
    let mut history = Vec::with_capacity(outcome.history.len());
    for r in &outcome.history {
        let d = PyDict::new(py);
        d.set_item("epoch", r.epoch)?;
        d.set_item("lc", r.lc)?;
        d.set_item("ladv", r.ladv)?;
        d.set_item("ldis", r.ldis)?;
        d.set_item("mean_lambda_src", r.mean_lambda_src)?;
        d.set_item("mean_lambda_tgt", r.mean_lambda_tgt)?;
        d.set_item("target_accuracy", r.target_accuracy)?;
        d.set_item("target_macro_f1", r.target_macro_f1)?;
        d.set_item("noise_diag", r.noise_diag)?;
        history.push(d.unbind());
    }
    Ok((
        PyModel { inner: outcome.model, single_network: flags.single_network },
        history,
    ))
}

fn report_to_dict<'py>(py: Python<'py>, m: &MetricsReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("accuracy", m.accuracy)?;
    d.set_item("macro_precision", m.macro_precision)?;
    d.set_item("macro_recall", m.macro_recall)?;
    d.set_item("macro_f1", m.macro_f1)?;
    d.set_item("confusion", m.confusion.clone())?;
    if let Some(nd) = m.noise_diag {
        d.set_item("noise_diag", nd)?;
    }
    let per_class: Vec<Bound<'py, PyDict>> = m
        .per_class
        .iter()
        .map(|c| {
            let cd = PyDict::new(py);
            cd.set_item("precision", c.precision)?;
            cd.set_item("recall", c.recall)?;
            cd.set_item("f1", c.f1)?;
            cd.set_item("support", c.support)?;
            Ok(cd)
        })
        .collect::<PyResult<_>>()?;
    d.set_item("per_class", per_class)?;
    Ok(d)
}

/// Accuracy, macro precision/recall/F1, confusion matrix and the mean
/// estimated transition diagonal on a dataset with clean labels.
#[pyfunction]
#[pyo3(signature = (model, dataset, with_noise_diag=true))]
fn evaluate<'py>(
    py: Python<'py>,
    model: &PyModel,
    dataset: &PyDataset,
    with_noise_diag: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let report = evaluate_model(&model.inner, &dataset.inner, model.single_network, with_noise_diag)
        .map_err(to_py_err)?;
    report_to_dict(py, &report)
}

/// Check all loss gradients against central finite differences; returns
/// (component, max relative error) pairs.
#[pyfunction]
#[pyo3(signature = (seed=0, instances=20))]
fn gradcheck(seed: u64, instances: usize) -> PyResult<Vec<(String, f64)>> {
    let reports = selfcheck::run_suite(seed, instances, false).map_err(to_py_err)?;
    Ok(reports
        .into_iter()
        .map(|r| (r.name.to_string(), r.max_rel_error))
        .collect())
}

/// Transferability weight 1 - cos(y1, y2).
#[pyfunction]
fn transfer_weight(y1: Vec<f64>, y2: Vec<f64>) -> PyResult<f64> {
    losses::transfer_weight(&y1, &y2).map_err(to_py_err)
}

/// Jensen-Shannon divergence between probability vectors, natural log.
#[pyfunction]
fn js_divergence(y1: Vec<f64>, y2: Vec<f64>) -> PyResult<f64> {
    losses::js_divergence(&y1, &y2).map_err(to_py_err)
}

/// Focal loss -(1 - p_t)^gamma ln(p_t) for one prediction.
#[pyfunction]
#[pyo3(signature = (z_hat, z, gamma=2.0))]
fn focal_loss(z_hat: Vec<f64>, z: usize, gamma: f64) -> PyResult<f64> {
    losses::focal_loss(&z_hat, z, gamma).map_err(to_py_err)
}

#[pymodule]
fn couda(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(generate_benchmark, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    m.add_function(wrap_pyfunction!(transfer_weight, m)?)?;
    m.add_function(wrap_pyfunction!(js_divergence, m)?)?;
    m.add_function(wrap_pyfunction!(focal_loss, m)?)?;
    Ok(())
}
