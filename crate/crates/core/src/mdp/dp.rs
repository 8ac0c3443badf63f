//! Exact dynamic programming on a materialised kernel.

use super::Transitions;
use crate::error::{Error, Result};
use crate::linalg::solve_dense;
use crate::tables::{Policy, SaTable};

const EVAL_RESIDUAL: f64 = 1e-10;

/// State values `v` and state-action values `q` of one policy.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTables {
    pub v: Vec<f64>,
    pub q: SaTable,
}

impl ValueTables {
    /// `E_{s ~ init}[v(s)]`.
    pub fn expected(&self, init_dist: &[f64]) -> f64 {
        self.v.iter().zip(init_dist).map(|(v, p)| v * p).sum()
    }
}

/// Normalised discounted visitation `d(s, a)` and its state marginal.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyMeasure {
    pub sa: SaTable,
    pub s: Vec<f64>,
}

fn check_shapes(transitions: &Transitions, table: &SaTable, policy: Option<&Policy>) -> Result<()> {
    if table.n_states() != transitions.n_states() || table.n_actions() != transitions.n_actions() {
        return Err(Error::Shape(format!(
            "table is {}x{}, kernel is {}x{}",
            table.n_states(),
            table.n_actions(),
            transitions.n_states(),
            transitions.n_actions()
        )));
    }
    if let Some(p) = policy {
        if p.n_states() != table.n_states() || p.n_actions() != table.n_actions() {
            return Err(Error::Shape("policy shape does not match the kernel".into()));
        }
    }
    Ok(())
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::InvalidArgument(format!("gamma = {gamma} not in [0, 1)")));
    }
    Ok(())
}

/// `I - gamma P^pi`, row-major.
fn resolvent_system(transitions: &Transitions, policy: &Policy, gamma: f64) -> Vec<f64> {
    let n = transitions.n_states();
    let mut m = transitions.under_policy(policy);
    m.iter_mut().for_each(|x| *x *= -gamma);
    for s in 0..n {
        m[s * n + s] += 1.0;
    }
    m
}

/// Exact evaluation of `policy` on `(transitions, loss)` by a direct solve of
/// `v = loss^pi + gamma P^pi v`. The loss may hold negative entries.
pub fn policy_evaluation(
    transitions: &Transitions,
    loss: &SaTable,
    policy: &Policy,
    gamma: f64,
) -> Result<ValueTables> {
    check_gamma(gamma)?;
    check_shapes(transitions, loss, Some(policy))?;
    transitions.ensure_stochastic()?;
    let n = transitions.n_states();
    let system = resolvent_system(transitions, policy, gamma);
    let rhs: Vec<f64> = (0..n)
        .map(|s| policy.row(s).iter().zip(loss.row(s)).map(|(p, l)| p * l).sum())
        .collect();
    let (v, _) = solve_dense(n, &system, &rhs)?;
    let q = SaTable::from_fn(n, transitions.n_actions(), |s, a| {
        loss.get(s, a) + gamma * transitions.expect(s, a, &v)
    });
    let residual = (0..n)
        .map(|s| {
            let backed: f64 = policy.row(s).iter().zip(q.row(s)).map(|(p, q)| p * q).sum();
            (v[s] - backed).abs()
        })
        .fold(0.0, f64::max);
    let scale = 1.0 + loss.max_abs() / (1.0 - gamma);
    if residual > EVAL_RESIDUAL * scale {
        return Err(Error::Solver(format!("policy evaluation residual {residual:e}")));
    }
    Ok(ValueTables { v, q })
}

fn argmin_lowest(row: &[f64]) -> usize {
    let min = row.iter().copied().fold(f64::INFINITY, f64::min);
    let tie = 1e-10 * (1.0 + min.abs());
    row.iter().position(|&q| q <= min + tie).unwrap_or(0)
}

/// Minimum-loss values to sup-norm tolerance `tol` plus the greedy policy.
///
/// Bellman iteration runs until the fixed-point error is below `tol`; the
/// greedy policy is then polished by exact policy iteration, so the
/// returned values are the exact values of the returned deterministic
/// policy. Near-ties (within `1e-10` relative) go to the lowest action.
pub fn value_iteration(
    transitions: &Transitions,
    loss: &SaTable,
    gamma: f64,
    tol: f64,
) -> Result<(ValueTables, Policy)> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tol = {tol} must be positive")));
    }
    check_gamma(gamma)?;
    check_shapes(transitions, loss, None)?;
    transitions.ensure_stochastic()?;
    let (n, n_a) = (transitions.n_states(), transitions.n_actions());

    let stop = if gamma == 0.0 { f64::INFINITY } else { tol * (1.0 - gamma) / gamma };
    let mut v = vec![0.0; n];
    let max_iter = 100_000;
    for _ in 0..max_iter {
        let next: Vec<f64> = (0..n)
            .map(|s| {
                (0..n_a)
                    .map(|a| loss.get(s, a) + gamma * transitions.expect(s, a, &v))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let delta = next.iter().zip(&v).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        v = next;
        if delta <= stop {
            break;
        }
    }

    let q_of = |v: &[f64]| SaTable::from_fn(n, n_a, |s, a| loss.get(s, a) + gamma * transitions.expect(s, a, v));
    let mut actions: Vec<usize> = (0..n).map(|s| argmin_lowest(q_of(&v).row(s))).collect();

    // Policy iteration polish: keep the incumbent action unless another is
    // strictly better beyond the tie tolerance.
    let mut tables;
    let mut rounds = 0;
    loop {
        let policy = Policy::deterministic(n_a, &actions)?;
        tables = policy_evaluation(transitions, loss, &policy, gamma)?;
        let mut changed = false;
        for s in 0..n {
            let row = tables.q.row(s);
            let min = row.iter().copied().fold(f64::INFINITY, f64::min);
            let tie = 1e-10 * (1.0 + min.abs());
            if row[actions[s]] > min + tie {
                actions[s] = argmin_lowest(row);
                changed = true;
            }
        }
        rounds += 1;
        if !changed || rounds > 10 * n + 10 {
            break;
        }
    }
    // Final tie-break toward the lowest index among near-optimal actions.
    let lowest: Vec<usize> = (0..n).map(|s| argmin_lowest(tables.q.row(s))).collect();
    if lowest != actions {
        actions = lowest;
        let policy = Policy::deterministic(n_a, &actions)?;
        tables = policy_evaluation(transitions, loss, &policy, gamma)?;
    }
    Ok((tables, Policy::deterministic(n_a, &actions)?))
}

/// Exact occupancy measure from the flow equations
/// `d^T = (1 - gamma) d0^T (I - gamma P^pi)^{-1}`.
pub fn occupancy_measure(
    transitions: &Transitions,
    policy: &Policy,
    init_dist: &[f64],
    gamma: f64,
) -> Result<OccupancyMeasure> {
    check_gamma(gamma)?;
    let n = transitions.n_states();
    if init_dist.len() != n || policy.n_states() != n || policy.n_actions() != transitions.n_actions() {
        return Err(Error::Shape("occupancy inputs disagree in shape".into()));
    }
    transitions.ensure_stochastic()?;
    let system = resolvent_system(transitions, policy, gamma);
    let mut transposed = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            transposed[j * n + i] = system[i * n + j];
        }
    }
    let rhs: Vec<f64> = init_dist.iter().map(|p| (1.0 - gamma) * p).collect();
    let (mut s, _) = solve_dense(n, &transposed, &rhs)?;
    s.iter_mut().for_each(|x| {
        if *x < 0.0 && *x > -1e-14 {
            *x = 0.0
        }
    });
    let sa = SaTable::from_fn(n, transitions.n_actions(), |st, a| s[st] * policy.prob(st, a));
    Ok(OccupancyMeasure { sa, s })
}
