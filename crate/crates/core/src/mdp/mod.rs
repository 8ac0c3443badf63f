//! Finite low-rank MDPs with factorised transitions `P(s'|s,a) = mu(s')^T phi(s,a)`.
//!
//! Everything is dense. [`Transitions`] caches the materialised kernel so the
//! dynamic-programming routines in [`dp`] never touch the factors.

mod dp;
mod io;
mod sample;
mod validate;

pub use dp::{occupancy_measure, policy_evaluation, value_iteration, OccupancyMeasure, ValueTables};
pub use sample::RollIn;
pub use validate::{mu_regularity, CheckResult, MuRegularity, ValidationReport, EXACT_VERTEX_LIMIT};

use crate::error::{check_index, Error, Result};
use crate::rng::StreamRng;
use crate::tables::{sample_index, Policy};
use rand::Rng;
use rand_distr::{Distribution, Gamma};

/// Rows whose raw mass deviates from one by more than this are not usable.
pub const MAX_ROW_DRIFT: f64 = 1e-6;
const RENORMALIZE_DRIFT: f64 = 1e-12;

/// A pair of feature tables `(mu, phi)` over a shared `(S, A, d)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Factorization {
    n_states: usize,
    n_actions: usize,
    dim: usize,
    phi: Vec<f64>,
    mu: Vec<f64>,
}

impl Factorization {
    /// `phi` is row-major `S x A x d`, `mu` is row-major `S x d`.
    pub fn new(n_states: usize, n_actions: usize, dim: usize, phi: Vec<f64>, mu: Vec<f64>) -> Result<Self> {
        if n_states == 0 || n_actions == 0 || dim == 0 {
            return Err(Error::Shape("S, A and d must be positive".into()));
        }
        if phi.len() != n_states * n_actions * dim {
            return Err(Error::Shape(format!(
                "phi has {} entries, expected S*A*d = {}",
                phi.len(),
                n_states * n_actions * dim
            )));
        }
        if mu.len() != n_states * dim {
            return Err(Error::Shape(format!(
                "mu has {} entries, expected S*d = {}",
                mu.len(),
                n_states * dim
            )));
        }
        if phi.iter().chain(&mu).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("features must be finite".into()));
        }
        Ok(Factorization {
            n_states,
            n_actions,
            dim,
            phi,
            mu,
        })
    }

    #[inline]
    pub fn n_states(&self) -> usize {
        self.n_states
    }

    #[inline]
    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn phi(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.dim;
        &self.phi[start..start + self.dim]
    }

    #[inline]
    pub fn mu(&self, s: usize) -> &[f64] {
        &self.mu[s * self.dim..(s + 1) * self.dim]
    }

    pub fn phi_flat(&self) -> &[f64] {
        &self.phi
    }

    pub fn mu_flat(&self) -> &[f64] {
        &self.mu
    }

    /// Raw inner product `mu(s')^T phi(s, a)` without clamping.
    #[inline]
    pub fn raw_prob(&self, s: usize, a: usize, s_next: usize) -> f64 {
        dot(self.mu(s_next), self.phi(s, a))
    }

    pub fn same_shape(&self, other: &Factorization) -> bool {
        self.n_states == other.n_states && self.n_actions == other.n_actions && self.dim == other.dim
    }

    pub fn transitions(&self) -> Transitions {
        let (s_n, a_n) = (self.n_states, self.n_actions);
        let mut raw = Vec::with_capacity(s_n * a_n * s_n);
        for s in 0..s_n {
            for a in 0..a_n {
                for sn in 0..s_n {
                    raw.push(self.raw_prob(s, a, sn));
                }
            }
        }
        Transitions::from_raw(s_n, a_n, raw)
    }
}

#[inline]
pub(crate) fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// A materialised transition kernel, one probability row per `(s, a)`.
///
/// Negative raw entries are clamped to zero and rows whose mass differs
/// from one by more than `1e-12` are renormalised. The largest raw drift is
/// kept so that callers can refuse kernels that were far from stochastic.
#[derive(Debug, Clone, PartialEq)]
pub struct Transitions {
    n_states: usize,
    n_actions: usize,
    probs: Vec<f64>,
    max_drift: f64,
    worst_pair: (usize, usize),
}

impl Transitions {
    /// `raw` is row-major `S x A x S`.
    pub fn from_rows(n_states: usize, n_actions: usize, raw: Vec<f64>) -> Result<Self> {
        if raw.len() != n_states * n_actions * n_states {
            return Err(Error::Shape(format!(
                "transition table has {} entries, expected {}",
                raw.len(),
                n_states * n_actions * n_states
            )));
        }
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("transition entries must be finite".into()));
        }
        Ok(Self::from_raw(n_states, n_actions, raw))
    }

    fn from_raw(n_states: usize, n_actions: usize, mut probs: Vec<f64>) -> Self {
        let mut max_drift = 0.0f64;
        let mut worst_pair = (0, 0);
        for s in 0..n_states {
            for a in 0..n_actions {
                let start = (s * n_actions + a) * n_states;
                let row = &mut probs[start..start + n_states];
                let raw_sum: f64 = row.iter().sum();
                let neg = row.iter().fold(0.0f64, |m, &p| m.max(-p));
                let drift = (raw_sum - 1.0).abs().max(neg);
                if drift > max_drift {
                    max_drift = drift;
                    worst_pair = (s, a);
                }
                row.iter_mut().for_each(|p| *p = p.max(0.0));
                let total: f64 = row.iter().sum();
                if total <= 0.0 {
                    max_drift = max_drift.max(1.0);
                    worst_pair = (s, a);
                } else if (total - 1.0).abs() > RENORMALIZE_DRIFT {
                    row.iter_mut().for_each(|p| *p /= total);
                }
            }
        }
        Transitions {
            n_states,
            n_actions,
            probs,
            max_drift,
            worst_pair,
        }
    }

    #[inline]
    pub fn n_states(&self) -> usize {
        self.n_states
    }

    #[inline]
    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    #[inline]
    pub fn row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.n_states;
        &self.probs[start..start + self.n_states]
    }

    #[inline]
    pub fn prob(&self, s: usize, a: usize, s_next: usize) -> f64 {
        self.probs[(s * self.n_actions + a) * self.n_states + s_next]
    }

    pub fn flat(&self) -> &[f64] {
        &self.probs
    }

    pub fn max_drift(&self) -> f64 {
        self.max_drift
    }

    /// Errors when any raw row drifted more than [`MAX_ROW_DRIFT`] from the simplex.
    pub fn ensure_stochastic(&self) -> Result<()> {
        if self.max_drift > MAX_ROW_DRIFT {
            let (state, action) = self.worst_pair;
            return Err(Error::NonStochastic {
                state,
                action,
                drift: self.max_drift,
            });
        }
        Ok(())
    }

    /// State-to-state kernel `P^pi(s'|s) = sum_a pi(a|s) P(s'|s,a)`, row-major.
    pub fn under_policy(&self, policy: &Policy) -> Vec<f64> {
        let n = self.n_states;
        let mut out = vec![0.0; n * n];
        for s in 0..n {
            let out_row = &mut out[s * n..(s + 1) * n];
            for (a, &p) in policy.row(s).iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                for (o, &t) in out_row.iter_mut().zip(self.row(s, a)) {
                    *o += p * t;
                }
            }
        }
        out
    }

    /// Largest entrywise distance to another kernel of the same shape.
    pub fn max_abs_diff(&self, other: &Transitions) -> f64 {
        self.probs
            .iter()
            .zip(&other.probs)
            .fold(0.0, |m, (x, y)| m.max((x - y).abs()))
    }

    /// `sum_{s'} P(s'|s,a) v(s')`.
    #[inline]
    pub fn expect(&self, s: usize, a: usize, v: &[f64]) -> f64 {
        dot(self.row(s, a), v)
    }
}

/// A finite discounted low-rank MDP.
#[derive(Debug, Clone, PartialEq)]
pub struct LowRankMdp {
    factors: Factorization,
    gamma: f64,
    init_dist: Vec<f64>,
    transitions: Transitions,
}

impl LowRankMdp {
    /// Checks shapes, the discount and the initial distribution. The
    /// low-rank conditions themselves are reported by [`LowRankMdp::validate`].
    pub fn new(factors: Factorization, gamma: f64, init_dist: Vec<f64>) -> Result<Self> {
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::InvalidArgument(format!("gamma = {gamma} not in [0, 1)")));
        }
        if init_dist.len() != factors.n_states() {
            return Err(Error::Shape(format!(
                "init_dist has {} entries for {} states",
                init_dist.len(),
                factors.n_states()
            )));
        }
        if init_dist.iter().any(|&p| !(p >= 0.0)) {
            return Err(Error::InvalidArgument("init_dist has a negative entry".into()));
        }
        let total: f64 = init_dist.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!("init_dist sums to {total}")));
        }
        let transitions = factors.transitions();
        Ok(LowRankMdp {
            factors,
            gamma,
            init_dist,
            transitions,
        })
    }

    /// A random instance whose features lie on probability simplices:
    /// every `phi(s, a)` is a Dirichlet draw over `d` coordinates and every
    /// column of `mu` is a Dirichlet draw over states. Smaller
    /// `concentration` gives peakier transitions.
    pub fn random(
        n_states: usize,
        n_actions: usize,
        dim: usize,
        gamma: f64,
        concentration: f64,
        rng: &mut StreamRng,
    ) -> Result<Self> {
        if concentration <= 0.0 {
            return Err(Error::InvalidArgument("concentration must be positive".into()));
        }
        let mut phi = Vec::with_capacity(n_states * n_actions * dim);
        for _ in 0..n_states * n_actions {
            phi.extend(dirichlet(dim, concentration, rng));
        }
        let mut mu = vec![0.0; n_states * dim];
        for j in 0..dim {
            for (s, w) in dirichlet(n_states, concentration, rng).into_iter().enumerate() {
                mu[s * dim + j] = w;
            }
        }
        let init_dist = dirichlet(n_states, 1.0, rng);
        let factors = Factorization::new(n_states, n_actions, dim, phi, mu)?;
        Self::new(factors, gamma, init_dist)
    }

    pub fn with_factors(&self, factors: Factorization) -> Result<Self> {
        Self::new(factors, self.gamma, self.init_dist.clone())
    }

    #[inline]
    pub fn n_states(&self) -> usize {
        self.factors.n_states()
    }

    #[inline]
    pub fn n_actions(&self) -> usize {
        self.factors.n_actions()
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.factors.dim()
    }

    #[inline]
    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn init_dist(&self) -> &[f64] {
        &self.init_dist
    }

    pub fn factors(&self) -> &Factorization {
        &self.factors
    }

    pub fn transitions(&self) -> &Transitions {
        &self.transitions
    }

    /// The next-state distribution at `(s, a)`.
    pub fn transition_prob(&self, s: usize, a: usize) -> Result<Vec<f64>> {
        check_index("state", s, self.n_states())?;
        check_index("action", a, self.n_actions())?;
        Ok(self.transitions.row(s, a).to_vec())
    }

    /// Draws a next state by inverse CDF.
    pub fn step_sample(&self, s: usize, a: usize, rng: &mut StreamRng) -> Result<usize> {
        check_index("state", s, self.n_states())?;
        check_index("action", a, self.n_actions())?;
        Ok(sample_index(self.transitions.row(s, a), rng.random::<f64>()))
    }

    pub fn sample_initial(&self, rng: &mut StreamRng) -> usize {
        sample_index(&self.init_dist, rng.random::<f64>())
    }

    pub fn validate(&self) -> ValidationReport {
        validate::validate_mdp(self)
    }
}

pub(crate) fn dirichlet(n: usize, alpha: f64, rng: &mut StreamRng) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("positive shape");
    loop {
        let draws: Vec<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
        let total: f64 = draws.iter().sum();
        if total > 0.0 && total.is_finite() {
            return draws.into_iter().map(|x| x / total).collect();
        }
    }
}
