//! Exact regret measurement, baselines and multi-seed experiments.
//!
//! Every value here is an expectation computed by dynamic programming; no
//! sampled returns enter the regret metric.

mod diagnostics;
mod experiment;

pub use diagnostics::{
    elliptical_potential, lemma_diagnostics, mixture_diagnostics, EllipticalPotential, EpochMixtureReport,
    LemmaReport,
};
pub use experiment::{
    algo_params, build_instance, build_world, polo_schedule, run_algorithm, run_experiment, run_sweep, summarize,
    sweep_csv, AdversarySpec, Algo, AlgoRun, ExperimentConfig, ExperimentOutput, InstanceSpec, ModelClassSpec,
    RegretRecord, ResolvedParams, SummaryRow, SweepRow, World, SWEEP_HEADER,
};

use crate::adversary::LossSequence;
use crate::error::{Error, Result};
use crate::mdp::{policy_evaluation, value_iteration, LowRankMdp, Transitions, ValueTables};
use crate::model_class::ModelClass;
use crate::polo::RunArtifact;
use crate::tables::{LossFunction, Policy, SaTable};

pub const CSV_HEADER: &str =
    "algo,seed,k,epoch,v_mixed,v_comparator,cum_regret,omd_term,optimism_term,estbias_term,max_bonus,mle_index";

/// Best fixed policy in hindsight. Values are linear in the loss and the
/// kernel is fixed, so `sum_k V_k^pi = K V^pi` under the averaged loss and
/// a deterministic optimum exists.
pub fn comparator_policy(mdp: &LowRankMdp, losses: &LossSequence) -> Result<(Policy, ValueTables)> {
    let (vt, pi) = value_iteration(mdp.transitions(), &losses.average(), mdp.gamma(), 1e-12)?;
    Ok((pi, vt))
}

/// Expected value from the initial distribution.
pub fn initial_value(
    transitions: &Transitions,
    loss: &SaTable,
    policy: &Policy,
    gamma: f64,
    init_dist: &[f64],
) -> Result<f64> {
    Ok(policy_evaluation(transitions, loss, policy, gamma)?.expected(init_dist))
}

/// `xi V^U + (1 - xi) V^{pi_tilde}` under the true model.
pub fn per_episode_value(mdp: &LowRankMdp, loss: &LossFunction, pi_tilde: &Policy, xi: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&xi) {
        return Err(Error::InvalidArgument(format!("xi = {xi} not in [0, 1]")));
    }
    let eval = |pi: &Policy| initial_value(mdp.transitions(), loss.table(), pi, mdp.gamma(), mdp.init_dist());
    let mut v = 0.0;
    if xi > 0.0 {
        v += xi * eval(&Policy::uniform(mdp.n_states(), mdp.n_actions()))?;
    }
    if xi < 1.0 {
        v += (1.0 - xi) * eval(pi_tilde)?;
    }
    Ok(v)
}

/// One CSV row.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRow {
    pub k: usize,
    pub epoch: usize,
    pub v_mixed: f64,
    pub v_comparator: f64,
    pub cum_regret: f64,
    pub omd_term: f64,
    pub optimism_term: f64,
    pub estbias_term: f64,
    pub max_bonus: f64,
    pub mle_index: i64,
    /// `V^{pi_tilde_k}` under the true model (`NaN` for the uniform baseline).
    pub v_tilde: f64,
}

impl EpisodeRow {
    pub fn to_csv(&self, algo: &str, seed: u64) -> String {
        format!(
            "{algo},{seed},{},{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{}",
            self.k,
            self.epoch,
            self.v_mixed,
            self.v_comparator,
            self.cum_regret,
            self.omd_term,
            self.optimism_term,
            self.estbias_term,
            self.max_bonus,
            self.mle_index
        )
    }
}

/// Remembers the last computed value while its key does not change.
struct ValueCache<K> {
    last: Option<(K, f64)>,
}

impl<K: PartialEq + Copy> ValueCache<K> {
    fn new() -> Self {
        ValueCache { last: None }
    }

    fn get(&mut self, key: K, compute: impl FnOnce() -> Result<f64>) -> Result<f64> {
        match self.last {
            Some((k, v)) if k == key => Ok(v),
            _ => {
                let v = compute()?;
                self.last = Some((key, v));
                Ok(v)
            }
        }
    }
}

/// Index of the first episode whose loss equals that of episode `k`, so
/// repeated losses share cached values.
fn loss_keys(losses: &LossSequence) -> Vec<usize> {
    let mut keys = Vec::with_capacity(losses.len());
    for k in 0..losses.len() {
        let key = if k > 0 && losses.get(k) == losses.get(k - 1) { keys[k - 1] } else { k };
        keys.push(key);
    }
    keys
}

/// Exact per-episode values and decomposition terms of a learner run.
pub fn evaluate_run(
    mdp: &LowRankMdp,
    class: &ModelClass,
    losses: &LossSequence,
    comparator: &Policy,
    artifact: &RunArtifact,
) -> Result<Vec<EpisodeRow>> {
    let k_total = losses.len();
    if artifact.policies.len() != k_total {
        return Err(Error::InvalidArgument("run artifact lacks per-episode policies".into()));
    }
    let (p_true, gamma, d0) = (mdp.transitions(), mdp.gamma(), mdp.init_dist());
    let xi = artifact.params.xi;
    let uniform = Policy::uniform(mdp.n_states(), mdp.n_actions());
    let keys = loss_keys(losses);
    let (mut cache_u, mut cache_star, mut cache_hat_star) = (ValueCache::new(), ValueCache::new(), ValueCache::new());
    let mut cum = 0.0;
    let mut rows = Vec::with_capacity(k_total);
    for (i, log) in artifact.logs.iter().enumerate() {
        let loss = losses.get(i).table();
        let pi = &artifact.policies[i];
        let snap = artifact.epoch_for(log.k);
        let p_hat = class.transitions(snap.model_index);
        let optimistic = loss.sub(&snap.bonus)?;

        let v_u = cache_u.get(keys[i], || initial_value(p_true, loss, &uniform, gamma, d0))?;
        let v_star = cache_star.get(keys[i], || initial_value(p_true, loss, comparator, gamma, d0))?;
        let v_hat_star =
            cache_hat_star.get((keys[i], snap.epoch), || initial_value(p_hat, &optimistic, comparator, gamma, d0))?;
        let v_tilde = initial_value(p_true, loss, pi, gamma, d0)?;
        let v_hat_tilde = initial_value(p_hat, &optimistic, pi, gamma, d0)?;

        let v_mixed = xi * v_u + (1.0 - xi) * v_tilde;
        cum += v_mixed - v_star;
        rows.push(EpisodeRow {
            k: log.k,
            epoch: log.epoch,
            v_mixed,
            v_comparator: v_star,
            cum_regret: cum,
            omd_term: v_hat_tilde - v_hat_star,
            optimism_term: v_hat_star - v_star,
            estbias_term: v_tilde - v_hat_tilde,
            max_bonus: log.max_bonus,
            mle_index: log.mle_index as i64,
            v_tilde,
        });
    }
    Ok(rows)
}

/// Rows of the uniform-policy baseline.
pub fn evaluate_uniform(mdp: &LowRankMdp, losses: &LossSequence, comparator: &Policy) -> Result<Vec<EpisodeRow>> {
    let (p_true, gamma, d0) = (mdp.transitions(), mdp.gamma(), mdp.init_dist());
    let uniform = Policy::uniform(mdp.n_states(), mdp.n_actions());
    let keys = loss_keys(losses);
    let (mut cache_u, mut cache_star) = (ValueCache::new(), ValueCache::new());
    let mut cum = 0.0;
    let mut rows = Vec::with_capacity(losses.len());
    for k in 0..losses.len() {
        let loss = losses.get(k).table();
        let v_u = cache_u.get(keys[k], || initial_value(p_true, loss, &uniform, gamma, d0))?;
        let v_star = cache_star.get(keys[k], || initial_value(p_true, loss, comparator, gamma, d0))?;
        cum += v_u - v_star;
        rows.push(EpisodeRow {
            k: k + 1,
            epoch: 1,
            v_mixed: v_u,
            v_comparator: v_star,
            cum_regret: cum,
            omd_term: f64::NAN,
            optimism_term: f64::NAN,
            estbias_term: f64::NAN,
            max_bonus: f64::NAN,
            mle_index: -1,
            v_tilde: f64::NAN,
        });
    }
    Ok(rows)
}

/// Least-squares slope of `ln(cum_regret)` against `ln(k)` over
/// `k >= k_min`. Fails when the range holds fewer than two points or any
/// nonpositive regret.
pub fn loglog_slope(ks: &[f64], cum_regret: &[f64], k_min: f64) -> Result<f64> {
    if ks.len() != cum_regret.len() {
        return Err(Error::Shape("k and regret series differ in length".into()));
    }
    let mut pts = Vec::new();
    for (&k, &r) in ks.iter().zip(cum_regret) {
        if k >= k_min {
            if !(r > 0.0) {
                return Err(Error::InvalidArgument(format!("nonpositive regret {r} at k = {k}")));
            }
            pts.push((k.ln(), r.ln()));
        }
    }
    if pts.len() < 2 {
        return Err(Error::InvalidArgument("fewer than two points in the fitted range".into()));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Ok(sxy / sxx)
}

/// Slope of a regret series over `k in [K/4, K]`.
pub fn rows_slope(rows: &[EpisodeRow]) -> Result<f64> {
    let ks: Vec<f64> = rows.iter().map(|r| r.k as f64).collect();
    let cum: Vec<f64> = rows.iter().map(|r| r.cum_regret).collect();
    loglog_slope(&ks, &cum, rows.len() as f64 / 4.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_power_laws() {
        let ks: Vec<f64> = (1..=1000).map(f64::from).collect();
        let linear: Vec<f64> = ks.iter().map(|k| 3.0 * k).collect();
        assert!((loglog_slope(&ks, &linear, 250.0).unwrap() - 1.0).abs() < 1e-9);
        let p: Vec<f64> = ks.iter().map(|k| k.powf(5.0 / 6.0)).collect();
        assert!((loglog_slope(&ks, &p, 250.0).unwrap() - 5.0 / 6.0).abs() < 1e-9);
    }

    #[test]
    fn slope_rejects_nonpositive_regret() {
        let ks = [1.0, 2.0, 3.0];
        assert!(loglog_slope(&ks, &[1.0, 0.0, 2.0], 1.0).is_err());
        assert!(loglog_slope(&ks, &[1.0, 2.0, 3.0], 3.0).is_err());
        // Regret before k_min is ignored.
        assert!(loglog_slope(&ks, &[-1.0, 2.0, 3.0], 2.0).is_ok());
    }
}
