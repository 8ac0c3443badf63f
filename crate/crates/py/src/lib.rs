//! Python bindings. Tables cross the boundary as nested lists indexed
//! `[s][a]`; policies as row-stochastic nested lists.

use polo_core::hard_instances::{self, HardInstanceParams};
use polo_core::harness::{self, ExperimentConfig};
use polo_core::mdp::{self, Factorization};
use polo_core::polo::{schedule_with_overrides, Overrides};
use polo_core::rng::{stream, Stream};
use polo_core::tables::{Policy, SaTable};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use std::collections::BTreeMap;
use std::path::PathBuf;

fn err(e: polo_core::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn table(rows: Vec<Vec<f64>>) -> PyResult<SaTable> {
    let n = rows.len();
    let n_a = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != n_a) {
        return Err(PyValueError::new_err("ragged table"));
    }
    SaTable::from_vec(n, n_a, rows.into_iter().flatten().collect()).map_err(err)
}

fn rows(t: &SaTable) -> Vec<Vec<f64>> {
    (0..t.n_states()).map(|s| t.row(s).to_vec()).collect()
}

fn policy(rows: Vec<Vec<f64>>) -> PyResult<Policy> {
    Policy::from_table(table(rows)?).map_err(err)
}

/// A finite MDP with `P(s'|s,a) = mu(s')^T phi(s,a)`.
#[pyclass(name = "LowRankMdp", module = "polo", frozen)]
struct PyMdp {
    inner: mdp::LowRankMdp,
}

#[pymethods]
impl PyMdp {
    /// `phi` has `S * A` rows ordered by `(s, a)`, `mu` has `S` rows.
    #[new]
    fn new(
        n_states: usize,
        n_actions: usize,
        phi: Vec<Vec<f64>>,
        mu: Vec<Vec<f64>>,
        gamma: f64,
        init_dist: Vec<f64>,
    ) -> PyResult<Self> {
        let dim = mu.first().map_or(0, Vec::len);
        let f = Factorization::new(
            n_states,
            n_actions,
            dim,
            phi.into_iter().flatten().collect(),
            mu.into_iter().flatten().collect(),
        )
        .map_err(err)?;
        Ok(PyMdp {
            inner: mdp::LowRankMdp::new(f, gamma, init_dist).map_err(err)?,
        })
    }

    #[staticmethod]
    #[pyo3(signature = (n_states, n_actions, dim, gamma, seed, concentration=1.0))]
    fn random(n_states: usize, n_actions: usize, dim: usize, gamma: f64, seed: u64, concentration: f64) -> PyResult<Self> {
        let mut rng = stream(seed, Stream::Instance);
        Ok(PyMdp {
            inner: mdp::LowRankMdp::random(n_states, n_actions, dim, gamma, concentration, &mut rng).map_err(err)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyMdp {
            inner: mdp::LowRankMdp::load(&path).map_err(err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(err)
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml()
    }

    #[getter]
    fn n_states(&self) -> usize {
        self.inner.n_states()
    }

    #[getter]
    fn n_actions(&self) -> usize {
        self.inner.n_actions()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn gamma(&self) -> f64 {
        self.inner.gamma()
    }

    #[getter]
    fn init_dist(&self) -> Vec<f64> {
        self.inner.init_dist().to_vec()
    }

    fn transition_prob(&self, s: usize, a: usize) -> PyResult<Vec<f64>> {
        self.inner.transition_prob(s, a).map_err(err)
    }

    /// `(all_passed, report_text)`.
    fn validate(&self) -> (bool, String) {
        let r = self.inner.validate();
        (r.all_passed(), r.to_string())
    }

    /// `(v, q)` of `policy` under `loss`.
    fn policy_evaluation(&self, loss: Vec<Vec<f64>>, policy_rows: Vec<Vec<f64>>) -> PyResult<(Vec<f64>, Vec<Vec<f64>>)> {
        let vt = mdp::policy_evaluation(self.inner.transitions(), &table(loss)?, &policy(policy_rows)?, self.inner.gamma())
            .map_err(err)?;
        Ok((vt.v, rows(&vt.q)))
    }

    /// `(v*, greedy policy)`.
    #[pyo3(signature = (loss, tol=1e-10))]
    fn value_iteration(&self, loss: Vec<Vec<f64>>, tol: f64) -> PyResult<(Vec<f64>, Vec<Vec<f64>>)> {
        let (vt, pi) = mdp::value_iteration(self.inner.transitions(), &table(loss)?, self.inner.gamma(), tol).map_err(err)?;
        Ok((vt.v, rows(pi.table())))
    }

    /// State-action occupancy from the initial distribution.
    fn occupancy(&self, policy_rows: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let occ = mdp::occupancy_measure(
            self.inner.transitions(),
            &policy(policy_rows)?,
            self.inner.init_dist(),
            self.inner.gamma(),
        )
        .map_err(err)?;
        Ok(rows(&occ.sa))
    }
}

/// The lower-bound instance and its loss `1 - r`.
#[pyfunction]
#[pyo3(signature = (dim, n_states, n_actions, gamma, target=None, epsilon=0.0))]
fn hard_instance(
    dim: usize,
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    target: Option<(usize, usize)>,
    epsilon: f64,
) -> PyResult<(PyMdp, Vec<Vec<f64>>)> {
    let mut p = HardInstanceParams::reference(dim, n_states, n_actions, gamma);
    if let Some((i, a)) = target {
        p = p.with_target(i, a, epsilon);
    }
    let inst = hard_instances::build(p).map_err(err)?;
    Ok((PyMdp { inner: inst.mdp }, rows(inst.loss.table())))
}

/// Perturbation size used by the lower bound at horizon `k_episodes`.
#[pyfunction]
fn lower_bound_epsilon(dim: usize, n_actions: usize, k_episodes: usize) -> PyResult<f64> {
    hard_instances::lower_bound_epsilon(dim, n_actions, k_episodes).map_err(err)
}

/// Resolved hyperparameters as a dict.
#[pyfunction]
#[pyo3(signature = (k_episodes, n_actions, dim, gamma, xi=None, epoch_len=None, eta=None, c_alpha=None, c_lambda=None))]
#[allow(clippy::too_many_arguments)]
fn schedule(
    k_episodes: usize,
    n_actions: usize,
    dim: usize,
    gamma: f64,
    xi: Option<f64>,
    epoch_len: Option<usize>,
    eta: Option<f64>,
    c_alpha: Option<f64>,
    c_lambda: Option<f64>,
) -> PyResult<BTreeMap<&'static str, f64>> {
    let ov = Overrides {
        xi,
        epoch_len,
        eta,
        c_alpha,
        c_lambda,
    };
    let s = schedule_with_overrides(k_episodes, n_actions, dim, gamma, &ov).map_err(err)?;
    let p = s.params;
    Ok(BTreeMap::from([
        ("xi", p.xi),
        ("xi_raw", s.xi_raw),
        ("epoch_len", p.epoch_len as f64),
        ("epoch_len_raw", s.epoch_len_raw),
        ("n_epochs", s.epochs.n_epochs() as f64),
        ("eta", p.eta),
        ("c_alpha", p.c_alpha),
        ("c_lambda", p.c_lambda),
        ("delta", p.delta),
        ("alpha_xi", p.alpha_xi),
    ]))
}

/// Runs a TOML experiment config. Writes the output files when `out_dir`
/// is given and returns `{algo: [final cumulative regret per seed]}`.
#[pyfunction]
#[pyo3(signature = (config, out_dir=None, jobs=None))]
fn run_experiment(
    py: Python<'_>,
    config: &str,
    out_dir: Option<PathBuf>,
    jobs: Option<usize>,
) -> PyResult<BTreeMap<String, Vec<f64>>> {
    let cfg = ExperimentConfig::from_toml(config).map_err(err)?;
    let output = py.detach(|| harness::run_experiment(&cfg, jobs)).map_err(err)?;
    if let Some(dir) = out_dir {
        output.write(&dir).map_err(err)?;
    }
    let mut finals: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in &output.records {
        finals.entry(r.algo.as_str().to_string()).or_default().push(r.final_regret());
    }
    Ok(finals)
}

#[pymodule]
fn polo(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyMdp>()?;
    m.add_function(wrap_pyfunction!(hard_instance, m)?)?;
    m.add_function(wrap_pyfunction!(lower_bound_epsilon, m)?)?;
    m.add_function(wrap_pyfunction!(schedule, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
