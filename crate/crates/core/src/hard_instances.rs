//! The lower-bound family: a reference MDP `M0` and perturbed instances
//! `M(i*, a*)` in which a single second-level pair reaches the good state
//! with probability `1/2 + epsilon`.
//!
//! State layout (0-based):
//!
//! | index            | state                      |
//! |------------------|----------------------------|
//! | `0`              | `s_{1,1}` (initial)        |
//! | `1 ..= d-4`      | `s_{2,1} .. s_{2,d-4}`     |
//! | `d-3`            | good state `s^g`           |
//! | `d-2`            | bad state `s^b`            |
//! | `d-1`            | outlier hub `s^o`          |
//! | `d .. S-1`       | outlier states `s^o_j`     |
//!
//! Feature coordinates: `0 .. d-5` index the second-level states, `d-4` is
//! good, `d-3` is bad, `d-2` is the hub and `d-1` is the outlier block.
//! The outlier block carries its `1/(S-d)` weight in `mu` rather than in
//! `phi`; the kernel is the same and the block then satisfies the
//! `sqrt(d)` regularity bound.

use crate::error::{Error, Result};
use crate::mdp::{Factorization, LowRankMdp};
use crate::tables::{LossFunction, Policy, SaTable};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HardInstanceParams {
    pub dim: usize,
    pub n_states: usize,
    pub n_actions: usize,
    /// Episode budget, checked against `K >= 2 (d - 4) A` when present.
    pub k_episodes: Option<usize>,
    pub gamma: f64,
    pub epsilon: f64,
    /// `(i*, a*)` with `i* < d - 4` and `a* < A`; `None` builds `M0`.
    pub target: Option<(usize, usize)>,
}

impl HardInstanceParams {
    pub fn reference(dim: usize, n_states: usize, n_actions: usize, gamma: f64) -> Self {
        HardInstanceParams {
            dim,
            n_states,
            n_actions,
            k_episodes: None,
            gamma,
            epsilon: 0.0,
            target: None,
        }
    }

    pub fn with_target(mut self, i_star: usize, a_star: usize, epsilon: f64) -> Self {
        self.target = Some((i_star, a_star));
        self.epsilon = epsilon;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let (d, s, a) = (self.dim, self.n_states, self.n_actions);
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if d < 8 {
            return bad(format!("d = {d} < 8"));
        }
        if s < d + 1 {
            return bad(format!("S = {s} < d + 1 = {}", d + 1));
        }
        if a + 3 < d {
            return bad(format!("A = {a} < d - 3 = {}", d - 3));
        }
        if let Some(k) = self.k_episodes {
            if k < 2 * (d - 4) * a {
                return bad(format!("K = {k} < 2 (d - 4) A = {}", 2 * (d - 4) * a));
            }
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return bad(format!("gamma = {} not in [0, 1)", self.gamma));
        }
        if !(0.0..=0.25).contains(&self.epsilon) {
            return bad(format!("epsilon = {} not in [0, 1/4]", self.epsilon));
        }
        if let Some((i, a_star)) = self.target {
            if i >= d - 4 || a_star >= a {
                return bad(format!("target ({i}, {a_star}) outside [d-4] x [A]"));
            }
        }
        Ok(())
    }

    pub fn layout(&self) -> StateLayout {
        StateLayout {
            dim: self.dim,
            n_states: self.n_states,
        }
    }
}

/// Index map between named states of the construction and table indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StateLayout {
    dim: usize,
    n_states: usize,
}

impl StateLayout {
    pub fn initial(&self) -> usize {
        0
    }

    pub fn second_level(&self, i: usize) -> usize {
        1 + i
    }

    pub fn n_second_level(&self) -> usize {
        self.dim - 4
    }

    pub fn good(&self) -> usize {
        self.dim - 3
    }

    pub fn bad(&self) -> usize {
        self.dim - 2
    }

    pub fn hub(&self) -> usize {
        self.dim - 1
    }

    pub fn outliers(&self) -> std::ops::Range<usize> {
        self.dim..self.n_states
    }
}

/// A built instance with both the reward and the loss (`1 - r`) tables.
#[derive(Debug, Clone)]
pub struct HardInstance {
    pub params: HardInstanceParams,
    pub mdp: LowRankMdp,
    pub reward: SaTable,
    pub loss: LossFunction,
}

impl HardInstance {
    pub fn layout(&self) -> StateLayout {
        self.params.layout()
    }
}

fn unit(dim: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    v[i] = 1.0;
    v
}

pub fn build(params: HardInstanceParams) -> Result<HardInstance> {
    params.validate()?;
    let (d, n, n_a) = (params.dim, params.n_states, params.n_actions);
    let layout = params.layout();
    let n_out = n - d;
    let (good_c, bad_c, hub_c, out_c) = (d - 4, d - 3, d - 2, d - 1);

    let mut mu = vec![0.0; n * d];
    let mut set_mu = |s: usize, v: Vec<f64>| mu[s * d..(s + 1) * d].copy_from_slice(&v);
    for i in 0..d - 4 {
        set_mu(layout.second_level(i), unit(d, i));
    }
    set_mu(layout.good(), unit(d, good_c));
    set_mu(layout.bad(), unit(d, bad_c));
    set_mu(layout.hub(), unit(d, hub_c));
    for s in layout.outliers() {
        let mut v = vec![0.0; d];
        v[out_c] = 1.0 / n_out as f64;
        set_mu(s, v);
    }

    let split = |p_good: f64| {
        let mut v = vec![0.0; d];
        v[good_c] = p_good;
        v[bad_c] = 1.0 - p_good;
        v
    };
    let mut phi = Vec::with_capacity(n * n_a * d);
    for s in 0..n {
        for a in 0..n_a {
            let v = if s == layout.initial() {
                if a < d - 4 {
                    unit(d, a)
                } else {
                    unit(d, hub_c)
                }
            } else if (1..=d - 4).contains(&s) {
                match params.target {
                    Some((i, a_star)) if layout.second_level(i) == s && a == a_star => {
                        split(0.5 + params.epsilon)
                    }
                    _ => split(0.5),
                }
            } else if s == layout.good() {
                unit(d, good_c)
            } else if s == layout.bad() {
                unit(d, bad_c)
            } else {
                unit(d, out_c)
            };
            phi.extend(v);
        }
    }

    let factors = Factorization::new(n, n_a, d, phi, mu)?;
    let mut init = vec![0.0; n];
    init[layout.initial()] = 1.0;
    let mdp = LowRankMdp::new(factors, params.gamma, init)?;

    let reward = SaTable::from_fn(n, n_a, |s, _| {
        if s == layout.good() {
            1.0
        } else if layout.outliers().contains(&s) {
            0.5
        } else {
            0.0
        }
    });
    let loss = LossFunction::new(SaTable::from_fn(n, n_a, |s, a| 1.0 - reward.get(s, a)))?;
    Ok(HardInstance {
        params,
        mdp,
        reward,
        loss,
    })
}

/// The gap size used by the lower-bound argument:
/// `(1 / (2 sqrt 2)) (1 - 1/((d-4)A)) sqrt((d-4)A / K)`.
pub fn lower_bound_epsilon(dim: usize, n_actions: usize, k_episodes: usize) -> Result<f64> {
    if dim < 5 {
        return Err(Error::InvalidArgument(format!("d = {dim} leaves no second-level states")));
    }
    let m = ((dim - 4) * n_actions) as f64;
    if m <= 1.0 {
        return Err(Error::InvalidArgument(
            "(d - 4) A = 1 gives epsilon = 0: every instance coincides with M0".into(),
        ));
    }
    if (k_episodes as f64) < 2.0 * m {
        return Err(Error::InvalidArgument(format!(
            "K = {k_episodes} < 2 (d - 4) A = {}",
            2.0 * m
        )));
    }
    let eps = (1.0 - 1.0 / m) * (m / k_episodes as f64).sqrt() / (2.0 * 2f64.sqrt());
    debug_assert!(eps <= 0.25);
    Ok(eps)
}

/// Reward-space optimal value at `s_{1,1}`: `gamma^2 / (1 - gamma) (1/2 + epsilon)`.
pub fn optimal_value_closed_form(params: &HardInstanceParams) -> Result<f64> {
    if params.target.is_none() {
        return Err(Error::InvalidArgument("closed form needs a target pair".into()));
    }
    Ok(policy_value_closed_form(params, 1.0))
}

/// Reward-space value at `s_{1,1}` of a policy reaching the target pair with
/// probability `reach`: `gamma^2 / (1 - gamma) (1/2 + epsilon reach)`.
pub fn policy_value_closed_form(params: &HardInstanceParams, reach: f64) -> f64 {
    let g = params.gamma;
    g * g / (1.0 - g) * (0.5 + params.epsilon * reach)
}

/// Probability that `policy` plays `a*` at `s_{2,i*}` in the second step.
pub fn reach_probability(params: &HardInstanceParams, policy: &Policy) -> f64 {
    match params.target {
        Some((i, a_star)) => {
            let layout = params.layout();
            policy.prob(layout.initial(), i) * policy.prob(layout.second_level(i), a_star)
        }
        None => 0.0,
    }
}

/// KL divergence of the perturbed row from the reference row.
pub fn row_kl(epsilon: f64) -> f64 {
    let term = |p: f64| if p > 0.0 { p * (p / 0.5).ln() } else { 0.0 };
    term(0.5 + epsilon) + term(0.5 - epsilon)
}
