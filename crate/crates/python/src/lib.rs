//! Python bindings for `calibrated_ensembles`.

use calibrated_ensembles as ce;
use ce::diversity::PromptCandidates;
use ce::model::{ComparisonTriple, Embedding};
use ce::tournament::{Decomposition, Ranking, TournamentGraph};
use ce::Error;
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(io) => PyIOError::new_err(io.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

trait IntoPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for ce::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

/// `(id, phi_a, phi_b, p, n)`.
type RecordTuple = (String, Vec<f64>, Vec<f64>, f64, u32);

fn triple(phi_a: Vec<f64>, phi_b: Vec<f64>) -> PyResult<ComparisonTriple> {
    ComparisonTriple::new(
        "q",
        Embedding::new(phi_a).py()?,
        Embedding::new(phi_b).py()?,
    )
    .py()
}

#[pyclass(
    name = "LinearRewardModel",
    module = "pycalens",
    frozen,
    skip_from_py_object
)]
#[derive(Clone)]
struct PyRewardModel {
    inner: ce::LinearRewardModel,
}

#[pymethods]
impl PyRewardModel {
    #[new]
    fn new(theta: Vec<f64>) -> PyResult<Self> {
        Ok(Self {
            inner: ce::LinearRewardModel::new(theta).py()?,
        })
    }

    #[getter]
    fn theta(&self) -> Vec<f64> {
        self.inner.theta().to_vec()
    }

    fn reward(&self, phi: Vec<f64>) -> PyResult<f64> {
        self.inner.reward(&Embedding::new(phi).py()?).py()
    }

    fn prefers(&self, phi_a: Vec<f64>, phi_b: Vec<f64>) -> PyResult<bool> {
        self.inner.prefers(&triple(phi_a, phi_b)?).py()
    }

    #[pyo3(signature = (phi_a, phi_b, beta, log_ref_ratio = 0.0))]
    fn soft_preference_prob(
        &self,
        phi_a: Vec<f64>,
        phi_b: Vec<f64>,
        beta: f64,
        log_ref_ratio: f64,
    ) -> PyResult<f64> {
        self.inner
            .soft_preference_prob(&triple(phi_a, phi_b)?, beta, log_ref_ratio)
            .py()
    }

    fn __repr__(&self) -> String {
        format!("LinearRewardModel(theta={:?})", self.inner.theta())
    }
}

#[pyclass(name = "Ensemble", module = "pycalens", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyEnsemble {
    inner: ce::Ensemble,
}

#[pymethods]
impl PyEnsemble {
    /// `thetas` is a list of parameter vectors; `weights` defaults to uniform.
    #[new]
    #[pyo3(signature = (thetas, weights = None))]
    fn new(thetas: Vec<Vec<f64>>, weights: Option<Vec<f64>>) -> PyResult<Self> {
        let models = thetas
            .into_iter()
            .map(ce::LinearRewardModel::new)
            .collect::<ce::Result<Vec<_>>>()
            .py()?;
        let inner = match weights {
            Some(w) => ce::Ensemble::new(models, w),
            None => ce::Ensemble::uniform(models),
        }
        .py()?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: ce::io::ensemble_from_json(text).py()?,
        })
    }

    fn to_json(&self) -> String {
        ce::io::ensemble_to_json(&self.inner)
    }

    #[getter]
    fn weights(&self) -> Vec<f64> {
        self.inner.weights().to_vec()
    }

    #[getter]
    fn models(&self) -> Vec<PyRewardModel> {
        self.inner
            .models()
            .iter()
            .map(|m| PyRewardModel { inner: m.clone() })
            .collect()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn preference_prob(&self, phi_a: Vec<f64>, phi_b: Vec<f64>) -> PyResult<f64> {
        self.inner.preference_prob(&triple(phi_a, phi_b)?).py()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("Ensemble(k={}, dim={})", self.inner.len(), self.inner.dim())
    }
}

#[pyclass(
    name = "PreferenceDataset",
    module = "pycalens",
    frozen,
    skip_from_py_object
)]
#[derive(Clone)]
struct PyDataset {
    inner: ce::PreferenceDataset,
}

#[pymethods]
impl PyDataset {
    #[staticmethod]
    fn from_jsonl(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: ce::io::read_dataset(text.as_bytes()).py()?,
        })
    }

    fn to_jsonl(&self) -> PyResult<String> {
        let mut buf = Vec::new();
        ce::io::write_dataset(&mut buf, &self.inner).py()?;
        Ok(String::from_utf8(buf).expect("dataset output is UTF-8"))
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn targets(&self) -> Vec<f64> {
        self.inner.targets()
    }

    /// Records as `(id, phi_a, phi_b, p, n)` tuples.
    fn records(&self) -> Vec<RecordTuple> {
        self.inner
            .records()
            .iter()
            .map(|r| {
                (
                    r.triple.id.clone(),
                    r.triple.phi_a().as_slice().to_vec(),
                    r.triple.phi_b().as_slice().to_vec(),
                    r.p,
                    r.n,
                )
            })
            .collect()
    }

    /// Splits off the last `count` records: returns `(head, tail)`.
    fn split_tail(&self, count: usize) -> (Self, Self) {
        let (head, tail) = self.inner.clone().split_tail(count);
        (Self { inner: head }, Self { inner: tail })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

#[pyclass(name = "SyntheticPopulation", module = "pycalens", frozen)]
struct PyPopulation {
    inner: ce::SyntheticPopulation,
}

#[pymethods]
impl PyPopulation {
    /// Groups with Gaussian centers; `weights` must sum to 1.
    #[new]
    #[pyo3(signature = (weights, dim, spread = 0.0, annotators_per_group = 1, seed = 0))]
    fn new(
        weights: Vec<f64>,
        dim: usize,
        spread: f64,
        annotators_per_group: usize,
        seed: u64,
    ) -> PyResult<Self> {
        let groups = ce::population::random_groups(&weights, dim, spread, seed);
        Ok(Self {
            inner: ce::population::sample_population(&groups, annotators_per_group, seed).py()?,
        })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn true_preference_fraction(&self, phi_a: Vec<f64>, phi_b: Vec<f64>) -> PyResult<f64> {
        self.inner
            .true_preference_fraction(&triple(phi_a, phi_b)?)
            .py()
    }

    fn oracle_ensemble(&self) -> PyEnsemble {
        PyEnsemble {
            inner: self.inner.oracle_ensemble(),
        }
    }

    #[pyo3(signature = (num_prompts, annotators_per_comparison, candidates_per_prompt = 2, embedding_scale = 1.0, seed = 0))]
    fn generate_dataset(
        &self,
        num_prompts: usize,
        annotators_per_comparison: u32,
        candidates_per_prompt: usize,
        embedding_scale: f64,
        seed: u64,
    ) -> PyResult<PyDataset> {
        let cfg = ce::GenerationConfig {
            num_prompts,
            candidates_per_prompt,
            annotators_per_comparison,
            embedding_dim: self.inner.dim(),
            embedding_scale,
            seed,
        };
        Ok(PyDataset {
            inner: ce::population::generate_dataset(&self.inner, &cfg).py()?,
        })
    }

    /// Population calibration MSE of `ensemble` on `count` fresh triples.
    #[pyo3(signature = (ensemble, count = 5000, seed = 0))]
    fn calibration_mse(&self, ensemble: &PyEnsemble, count: usize, seed: u64) -> PyResult<f64> {
        let triples = ce::population::sample_triples(&self.inner, count, 1.0, seed).py()?;
        ce::metrics::population_calibration_mse(&ensemble.inner, &self.inner, &triples).py()
    }
}

#[pyfunction]
#[pyo3(signature = (train, val, k_max = 8, lr = 0.5, epochs = 60, batch_size = 32, patience = 3, seed = 0))]
#[allow(clippy::too_many_arguments)]
fn fsam_train<'py>(
    py: Python<'py>,
    train: &PyDataset,
    val: &PyDataset,
    k_max: usize,
    lr: f64,
    epochs: usize,
    batch_size: usize,
    patience: usize,
    seed: u64,
) -> PyResult<(PyEnsemble, Bound<'py, PyDict>)> {
    let cfg = ce::TrainConfig {
        k_max,
        lr,
        epochs,
        batch_size,
        patience,
        seed,
        ..ce::TrainConfig::default()
    };
    let (ens, report) = py
        .detach(|| ce::fsam_train(&train.inner, &val.inner, &cfg))
        .py()?;
    let out = PyDict::new(py);
    out.set_item("best_k", report.best_k)?;
    out.set_item("stop_reason", format!("{:?}", report.stop_reason))?;
    let iterations: Vec<(usize, f64, f64, bool)> = report
        .iterations
        .iter()
        .map(|it| (it.k, it.train_mse, it.val_mse, it.accepted))
        .collect();
    out.set_item("iterations", iterations)?;
    Ok((PyEnsemble { inner: ens }, out))
}

#[pyfunction]
fn empirical_calibration_mse(ensemble: &PyEnsemble, data: &PyDataset) -> PyResult<f64> {
    ce::metrics::empirical_calibration_mse(&ensemble.inner, &data.inner).py()
}

#[pyfunction]
fn single_model_floor(data: &PyDataset) -> PyResult<f64> {
    ce::metrics::single_model_floor(&data.inner).py()
}

/// Prunes on the dataset's comparisons: returns `(pruned, removed_indices, removed_mass)`.
#[pyfunction]
fn prune(
    ensemble: &PyEnsemble,
    beta: f64,
    data: &PyDataset,
) -> PyResult<(PyEnsemble, Vec<usize>, f64)> {
    let triples: Vec<ComparisonTriple> = data.inner.triples().cloned().collect();
    let (pruned, report) = ce::prune::prune(&ensemble.inner, beta, &triples).py()?;
    Ok((
        PyEnsemble { inner: pruned },
        report.removed,
        report.removed_mass,
    ))
}

#[pyfunction]
fn kendall_tau(a: Vec<usize>, b: Vec<usize>) -> PyResult<f64> {
    ce::diversity::kendall_tau(&Ranking::new(a).py()?, &Ranking::new(b).py()?).py()
}

/// Mean Kendall tau between members; `prompts` is a list of candidate-embedding lists.
#[pyfunction]
fn tau_matrix(ensemble: &PyEnsemble, prompts: Vec<Vec<Vec<f64>>>) -> PyResult<Vec<Vec<f64>>> {
    let prompts = prompts
        .into_iter()
        .enumerate()
        .map(|(i, cands)| {
            let cands = cands
                .into_iter()
                .map(Embedding::new)
                .collect::<ce::Result<Vec<_>>>()?;
            PromptCandidates::new(format!("p{i}"), cands)
        })
        .collect::<ce::Result<Vec<_>>>()
        .py()?;
    let t = ce::diversity::tau_matrix(ensemble.inner.models(), &prompts).py()?;
    Ok((0..t.size())
        .map(|a| (0..t.size()).map(|b| t.get(a, b)).collect())
        .collect())
}

/// Returns `(verdict, support, residual)`; `support` lists `(ranking, probability)` when feasible.
#[pyfunction]
#[pyo3(signature = (m, p, tol = ce::tournament::DEFAULT_DECOMPOSE_TOL))]
#[allow(clippy::type_complexity)]
fn exact_decompose(
    m: usize,
    p: Vec<f64>,
    tol: f64,
) -> PyResult<(String, Vec<(Vec<usize>, f64)>, f64)> {
    let g = TournamentGraph::new(m, p).py()?;
    let dec = ce::tournament::exact_decompose(&g, tol).py()?;
    let verdict = dec.verdict().to_string();
    Ok(match dec {
        Decomposition::Feasible {
            distribution,
            reconstruction_error,
        } => (
            verdict,
            distribution
                .support()
                .iter()
                .map(|(r, w)| (r.order().to_vec(), *w))
                .collect(),
            reconstruction_error,
        ),
        Decomposition::Boundary { residual } | Decomposition::Infeasible { residual } => {
            (verdict, Vec::new(), residual)
        }
    })
}

#[pymodule]
fn pycalens(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyRewardModel>()?;
    m.add_class::<PyEnsemble>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyPopulation>()?;
    m.add_function(wrap_pyfunction!(fsam_train, m)?)?;
    m.add_function(wrap_pyfunction!(empirical_calibration_mse, m)?)?;
    m.add_function(wrap_pyfunction!(single_model_floor, m)?)?;
    m.add_function(wrap_pyfunction!(prune, m)?)?;
    m.add_function(wrap_pyfunction!(kendall_tau, m)?)?;
    m.add_function(wrap_pyfunction!(tau_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(exact_decompose, m)?)?;
    Ok(())
}
