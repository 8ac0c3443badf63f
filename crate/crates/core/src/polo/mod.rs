//! The POLO learner: epoch-based optimistic policy optimization in learned
//! low-rank models.
//!
//! See [`learner`] for the exact ordering of the episode loop.

mod learner;
mod schedule;

pub use learner::{
    run, run_episode, EpisodeLog, EpochSnapshot, LearnerState, RunArtifact, RunOptions, RunStreams,
    TrackedMixtures,
};
pub use schedule::{
    default_schedule, schedule_with_overrides, EpochSchedule, HyperParams, Overrides, Schedule, DEFAULT_C_ALPHA,
    DEFAULT_C_LAMBDA,
};

use crate::error::{Error, Result};
use crate::linalg::SpdMatrix;
use crate::mdp::{policy_evaluation, Factorization, Transitions, ValueTables};
use crate::tables::{LossFunction, Policy, SaTable};
use nalgebra::{DMatrix, DVector};

/// `Sigma_hat = sum_{(s,a) in D} phi_hat phi_hat^T + lambda I`.
#[derive(Debug, Clone)]
pub struct CovarianceAccumulator {
    sum_outer: DMatrix<f64>,
    count: usize,
    lambda: f64,
}

impl CovarianceAccumulator {
    pub fn new(dim: usize, lambda: f64) -> Self {
        CovarianceAccumulator {
            sum_outer: DMatrix::zeros(dim, dim),
            count: 0,
            lambda,
        }
    }

    /// Builds the sum from per-pair visit counts, which equals summing over
    /// the tuples one by one.
    pub fn from_pair_counts(phi: &Factorization, counts: &SaTable, lambda: f64) -> Self {
        let mut acc = CovarianceAccumulator::new(phi.dim(), lambda);
        for s in 0..phi.n_states() {
            for a in 0..phi.n_actions() {
                let n = counts.get(s, a);
                if n > 0.0 {
                    acc.add_weighted(phi.phi(s, a), n);
                    acc.count += n as usize;
                }
            }
        }
        acc
    }

    pub fn add(&mut self, x: &[f64]) {
        self.add_weighted(x, 1.0);
        self.count += 1;
    }

    fn add_weighted(&mut self, x: &[f64], w: f64) {
        let v = DVector::from_column_slice(x);
        self.sum_outer += (&v * v.transpose()) * w;
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn sum_outer(&self) -> &DMatrix<f64> {
        &self.sum_outer
    }

    pub fn sigma(&self) -> DMatrix<f64> {
        let d = self.sum_outer.nrows();
        &self.sum_outer + DMatrix::identity(d, d) * self.lambda
    }

    pub fn spd(&self) -> Result<SpdMatrix> {
        if self.lambda <= 0.0 {
            return Err(Error::Solver(format!("lambda = {} must be positive", self.lambda)));
        }
        SpdMatrix::new(self.sigma())
    }
}

/// Exploration bonus `b_hat(s, a)`, frozen for an epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct BonusFunction {
    pub values: SaTable,
    pub alpha: f64,
}

impl BonusFunction {
    pub fn zero(n_states: usize, n_actions: usize) -> Self {
        BonusFunction {
            values: SaTable::zeros(n_states, n_actions),
            alpha: 0.0,
        }
    }
}

/// `b_hat(s, a) = min(alpha * ||phi_hat(s, a)||_{Sigma^-1}, 2) / (1 - gamma)`.
pub fn bonus_eval(cov: &SpdMatrix, phi_hat: &Factorization, alpha: f64, gamma: f64) -> Result<BonusFunction> {
    if !(alpha >= 0.0) {
        return Err(Error::InvalidArgument(format!("alpha = {alpha} must be nonnegative")));
    }
    let values = SaTable::from_fn(phi_hat.n_states(), phi_hat.n_actions(), |s, a| {
        if alpha == 0.0 {
            return 0.0;
        }
        let norm = cov.inv_quad(phi_hat.phi(s, a)).max(0.0).sqrt();
        let scaled = if norm == 0.0 { 0.0 } else { alpha * norm };
        scaled.min(2.0) / (1.0 - gamma)
    });
    Ok(BonusFunction { values, alpha })
}

/// Values of `policy` under the learned model and the optimistic loss
/// `loss - bonus`.
pub fn evaluate_q_hat(
    model: &Transitions,
    loss: &LossFunction,
    bonus: &BonusFunction,
    policy: &Policy,
    gamma: f64,
) -> Result<ValueTables> {
    let shifted = loss.table().sub(&bonus.values)?;
    let vt = policy_evaluation(model, &shifted, policy, gamma)?;
    let guard = 2.0 / (1.0 - gamma).powi(2) + 1.0 / (1.0 - gamma) + 1e-9;
    let worst = vt.q.max_abs();
    if worst > guard {
        return Err(Error::Invariant(format!("|Q_hat| = {worst} exceeds {guard}")));
    }
    Ok(vt)
}

/// Exponential-weights update `pi'(a|s) ∝ pi(a|s) exp(-eta Q(s, a))`,
/// computed in log space with per-state max subtraction.
pub fn omd_step(policy: &Policy, q: &SaTable, eta: f64) -> Result<Policy> {
    if !(eta > 0.0) {
        return Err(Error::InvalidArgument(format!("eta = {eta} must be positive")));
    }
    if !policy.table().same_shape(q) {
        return Err(Error::Shape("policy and Q differ in shape".into()));
    }
    let (n, n_a) = (policy.n_states(), policy.n_actions());
    let mut out = SaTable::zeros(n, n_a);
    let mut logits = vec![0.0; n_a];
    for s in 0..n {
        for (a, l) in logits.iter_mut().enumerate() {
            *l = policy.prob(s, a).ln() - eta * q.get(s, a);
        }
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let row = out.row_mut(s);
        let mut z = 0.0;
        for (r, l) in row.iter_mut().zip(&logits) {
            *r = (l - max).exp();
            z += *r;
        }
        row.iter_mut().for_each(|r| *r /= z);
    }
    Policy::from_table(out)
}
