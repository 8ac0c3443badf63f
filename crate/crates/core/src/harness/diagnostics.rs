//! Lemma-level diagnostics of a finished run, all computed exactly.

use super::EpisodeRow;
use crate::error::{Error, Result};
use crate::linalg::{min_eigenvalue, SpdMatrix};
use crate::mdp::{occupancy_measure, Factorization, LowRankMdp, Transitions};
use crate::model_class::{l1_model_error, Dataset, ModelClass};
use crate::polo::{CovarianceAccumulator, RunArtifact};
use crate::rng::StreamRng;
use crate::tables::{Policy, SaTable};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// Running sum `sum_k Tr(G_k M_{k-1}^{-1})` with `G_k = phi phi^T` over the
/// `(s, a)` pairs of `D` in collection order and `M_0 = lambda_0 I`.
#[derive(Debug, Clone, PartialEq)]
pub struct EllipticalPotential {
    pub sum: f64,
    /// `2 ln det M_K - 2 ln det M_0`.
    pub log_det_bound: f64,
    /// `2 d ln(1 + K B^2 / (d lambda_0))`.
    pub bound: f64,
    pub holds: bool,
}

pub fn elliptical_potential(phi: &Factorization, data: &Dataset, lambda0: f64) -> Result<EllipticalPotential> {
    if !(lambda0 > 0.0) {
        return Err(Error::InvalidArgument(format!("lambda_0 = {lambda0} must be positive")));
    }
    let d = phi.dim();
    let mut m_inv = DMatrix::<f64>::identity(d, d) / lambda0;
    let mut m = DMatrix::<f64>::identity(d, d) * lambda0;
    let mut sum = 0.0;
    let mut b2: f64 = 0.0;
    for t in data.tuples() {
        let x = DVector::from_column_slice(phi.phi(t.s, t.a));
        b2 = b2.max(x.norm_squared());
        let mx = &m_inv * &x;
        let q = x.dot(&mx);
        sum += q;
        // Sherman-Morrison: (M + x x^T)^{-1} = M^{-1} - M^{-1} x x^T M^{-1} / (1 + q).
        m_inv -= (&mx * mx.transpose()) / (1.0 + q);
        m += &x * x.transpose();
    }
    let k = data.len() as f64;
    let b2 = if data.is_empty() { 0.0 } else { b2.max(f64::MIN_POSITIVE) };
    let ln_det_m = SpdMatrix::new(m)?.ln_det();
    let log_det_bound = 2.0 * ln_det_m - 2.0 * d as f64 * lambda0.ln();
    let bound = 2.0 * d as f64 * (1.0 + k * b2 / (d as f64 * lambda0)).ln();
    Ok(EllipticalPotential {
        sum,
        log_det_bound,
        bound,
        holds: sum <= bound * (1.0 + 1e-12) + 1e-12,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LemmaReport {
    pub omd_sum: f64,
    /// `K sqrt(2 ln A) / (sqrt(L) (1 - gamma)^2)`.
    pub omd_bound: f64,
    pub omd_holds: bool,
    pub optimism_sum: f64,
    /// `(L + sqrt(K)) sqrt(A ln(M N / delta) / (xi (1 - gamma)^3))`; the
    /// constants are unspecified, so only the ratio is reported.
    pub optimism_bound: f64,
    pub optimism_ratio: f64,
    pub estbias_sum: f64,
    /// Largest `|omd + optimism + estbias - (V^{pi_tilde} - V^{pi*})|`.
    pub max_decomposition_residual: f64,
    /// `sum(V^{pi_tilde} - V^{pi*}) + xi K / (1 - gamma) - cum_regret(K)`,
    /// nonnegative when the exploration-cost decomposition holds.
    pub exploration_slack: f64,
    pub bonus_min: f64,
    pub bonus_max: f64,
    pub bonus_bound: f64,
    pub bonus_holds: bool,
    /// Smallest `lambda_min(Sigma_hat) - lambda` over epochs.
    pub covariance_pd_margin: f64,
    /// Smallest eigenvalue of `Sigma_{i+1} - Sigma_i`, both built with the
    /// epoch-`(i+1)` features and `lambda`.
    pub covariance_monotone_min_eig: f64,
    pub covariance_holds: bool,
    pub max_simplex_violation: f64,
    pub simplex_holds: bool,
    pub potential: EllipticalPotential,
}

/// Checks the per-run invariants of the learner against its exact rows.
pub fn lemma_diagnostics(
    artifact: &RunArtifact,
    rows: &[EpisodeRow],
    mdp: &LowRankMdp,
    class: &ModelClass,
) -> Result<LemmaReport> {
    let p = &artifact.params;
    let gamma = mdp.gamma();
    let k = rows.len() as f64;
    let n_a = mdp.n_actions() as f64;
    let omd_sum: f64 = rows.iter().map(|r| r.omd_term).sum();
    let optimism_sum: f64 = rows.iter().map(|r| r.optimism_term).sum();
    let estbias_sum: f64 = rows.iter().map(|r| r.estbias_term).sum();
    let omd_bound = k * (2.0 * n_a.ln()).sqrt() / ((p.epoch_len as f64).sqrt() * (1.0 - gamma).powi(2));
    let n_epochs = artifact.schedule.n_epochs() as f64;
    let optimism_bound = (p.epoch_len as f64 + k.sqrt())
        * (n_a * (artifact.class_size as f64 * n_epochs / p.delta).ln() / (p.alpha_xi * (1.0 - gamma).powi(3))).sqrt();
    let max_decomposition_residual = rows
        .iter()
        .map(|r| (r.omd_term + r.optimism_term + r.estbias_term - (r.v_tilde - r.v_comparator)).abs())
        .fold(0.0, f64::max);
    let tilde_gap: f64 = rows.iter().map(|r| r.v_tilde - r.v_comparator).sum();
    let exploration_slack =
        tilde_gap + p.xi * k / (1.0 - gamma) - rows.last().map_or(0.0, |r| r.cum_regret);

    let bonus_bound = 2.0 / (1.0 - gamma);
    let (mut bonus_min, mut bonus_max) = (f64::INFINITY, f64::NEG_INFINITY);
    let mut pd_margin = f64::INFINITY;
    let mut mono = f64::INFINITY;
    for (i, snap) in artifact.epochs.iter().enumerate() {
        bonus_min = bonus_min.min(snap.bonus.min());
        bonus_max = bonus_max.max(snap.bonus.max());
        pd_margin = pd_margin.min(min_eigenvalue(&snap.sigma) - snap.lambda);
        if i > 0 {
            let prev = &artifact.epochs[i - 1];
            let phi = class.candidate(snap.model_index);
            let now = CovarianceAccumulator::from_pair_counts(phi, &snap.main_pair_counts, snap.lambda).sigma();
            let before = CovarianceAccumulator::from_pair_counts(phi, &prev.main_pair_counts, snap.lambda).sigma();
            mono = mono.min(min_eigenvalue(&(now - before)));
        }
    }
    let lambda0 = artifact.epochs.first().map_or(1.0, |e| e.lambda);
    let potential = elliptical_potential(mdp.factors(), &artifact.d_main, lambda0)?;
    Ok(LemmaReport {
        omd_sum,
        omd_bound,
        omd_holds: omd_sum <= omd_bound,
        optimism_sum,
        optimism_bound,
        optimism_ratio: optimism_sum / optimism_bound,
        estbias_sum,
        max_decomposition_residual,
        exploration_slack,
        bonus_min,
        bonus_max,
        bonus_bound,
        bonus_holds: bonus_min >= 0.0 && bonus_max <= bonus_bound,
        covariance_pd_margin: pd_margin,
        covariance_monotone_min_eig: mono,
        covariance_holds: pd_margin >= -1e-9 && mono >= -1e-9,
        max_simplex_violation: artifact.max_simplex_violation,
        simplex_holds: artifact.max_simplex_violation <= 1e-12,
        potential,
    })
}

/// `w(s) pi(a|s)` as a table.
fn state_action(weights: &[f64], pi: &Policy) -> SaTable {
    SaTable::from_fn(pi.n_states(), pi.n_actions(), |s, a| weights[s] * pi.prob(s, a))
}

/// `k sum_{s,a} w(s,a) phi phi^T + lambda I`.
fn weighted_cov(phi: &Factorization, w: &SaTable, k: f64, lambda: f64) -> DMatrix<f64> {
    let d = phi.dim();
    let mut m = DMatrix::identity(d, d) * lambda;
    for s in 0..phi.n_states() {
        for a in 0..phi.n_actions() {
            let x = DVector::from_column_slice(phi.phi(s, a));
            m += (&x * x.transpose()) * (k * w.get(s, a));
        }
    }
    m
}

/// `sum_{s,a} w(s,a) ||phi(s,a)||_{M^{-1}}`.
fn mean_norm(phi: &Factorization, w: &SaTable, m: &SpdMatrix) -> f64 {
    let mut total = 0.0;
    for s in 0..phi.n_states() {
        for a in 0..phi.n_actions() {
            total += w.get(s, a) * m.inv_quad(phi.phi(s, a)).max(0.0).sqrt();
        }
    }
    total
}

/// `E_{(s~,a~)~w, s~P(.|s~,a~), a~pi(s)}[g(s, a)]`.
fn one_step(w: &SaTable, p: &Transitions, pi: &Policy, g: &SaTable) -> f64 {
    let n = p.n_states();
    let inner: Vec<f64> = (0..n).map(|s| (0..pi.n_actions()).map(|a| pi.prob(s, a) * g.get(s, a)).sum()).collect();
    let mut total = 0.0;
    for s in 0..n {
        for a in 0..p.n_actions() {
            let wsa = w.get(s, a);
            if wsa != 0.0 {
                total += wsa * p.row(s, a).iter().zip(&inner).map(|(x, y)| x * y).sum::<f64>();
            }
        }
    }
    total
}

/// Diagnostics at one epoch start that need the tracked mixtures.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochMixtureReport {
    pub epoch: usize,
    pub start: usize,
    pub model_index: usize,
    /// `E_{s~rho, a~pi_bar}[f^2]` for the fitted model.
    pub mle_error_rho: f64,
    /// `E_{s~rho', a~pi_bar}[f^2]`.
    pub mle_error_rho_prime: f64,
    /// Same under `0.5 rho + 0.5 rho'`.
    pub mle_error_mixture: f64,
    /// `ln(M / delta) / k_i`.
    pub zeta: f64,
    /// Extremes over every candidate feature map and pair of
    /// `||phi||_{Sigma_hat^{-1}} / ||phi||_{Sigma_{rho x pi_bar}^{-1}}`.
    pub concentration_min: f64,
    pub concentration_max: f64,
    /// One-step-back inequality in the true model with a random `g`.
    pub true_lhs: f64,
    pub true_rhs: f64,
    /// One-step-back inequality in the learned model with a random `g` and
    /// a random policy; meaningful when `mle_event` holds.
    pub learned_lhs: f64,
    pub learned_rhs: f64,
    pub mle_event: bool,
}

impl EpochMixtureReport {
    pub fn true_holds(&self) -> bool {
        self.true_lhs <= self.true_rhs + 1e-12
    }

    pub fn learned_holds(&self) -> bool {
        self.learned_lhs <= self.learned_rhs + 1e-12
    }
}

/// Per-epoch diagnostics from a run with tracked mixtures. Test functions
/// `g` are drawn in `[0, 1]` from `rng`.
pub fn mixture_diagnostics(
    artifact: &RunArtifact,
    mdp: &LowRankMdp,
    class: &ModelClass,
    rng: &mut StreamRng,
) -> Result<Vec<EpochMixtureReport>> {
    let p = &artifact.params;
    if p.xi <= 0.0 {
        return Err(Error::InvalidArgument("mixture diagnostics need xi > 0".into()));
    }
    let (n, n_a, d) = (mdp.n_states(), mdp.n_actions(), mdp.dim());
    let gamma = mdp.gamma();
    let p_true = mdp.transitions();
    let m = class.len() as f64;
    let b = 1.0;
    let mut out = Vec::with_capacity(artifact.epochs.len());
    for snap in &artifact.epochs {
        let mix = snap
            .mixtures
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("run did not track mixtures".into()))?;
        let ki = snap.start as f64;
        let pi_bar = &mix.avg_policy;
        let p_hat = class.transitions(snap.model_index);
        let phi_hat = class.candidate(snap.model_index);

        let f = l1_model_error(p_hat, p_true)?.l1_error;
        let f2 = SaTable::from_fn(n, n_a, |s, a| f.get(s, a).powi(2));
        let w_rho = state_action(&mix.rho, pi_bar);
        let w_rho_prime = state_action(&mix.rho_prime, pi_bar);
        let mle_error_rho = w_rho.dot(&f2);
        let mle_error_rho_prime = w_rho_prime.dot(&f2);
        let zeta = (m / p.delta).ln() / ki;

        let mut concentration_min = f64::INFINITY;
        let mut concentration_max: f64 = 0.0;
        for cand in class.candidates() {
            let emp = SpdMatrix::new(
                CovarianceAccumulator::from_pair_counts(cand, &snap.main_pair_counts, snap.lambda).sigma(),
            )?;
            let pop = SpdMatrix::new(weighted_cov(cand, &w_rho, ki, snap.lambda))?;
            for s in 0..n {
                for a in 0..n_a {
                    let x = cand.phi(s, a);
                    let (ne, np) = (emp.inv_quad(x).sqrt(), pop.inv_quad(x).sqrt());
                    if np > 0.0 {
                        let r = ne / np;
                        concentration_min = concentration_min.min(r);
                        concentration_max = concentration_max.max(r);
                    }
                }
            }
        }

        let g = SaTable::from_fn(n, n_a, |_, _| rng.random::<f64>() * b);
        let g2 = SaTable::from_fn(n, n_a, |s, a| g.get(s, a).powi(2));

        // True model, at the epoch's first episode.
        let pi_k = &artifact.policies[snap.start - 1];
        let occ = occupancy_measure(p_true, pi_k, mdp.init_dist(), gamma)?;
        let true_lhs = one_step(&occ.sa, p_true, pi_k, &g);
        let sigma_rho = SpdMatrix::new(weighted_cov(mdp.factors(), &mix.rho_sa, ki, snap.lambda))?;
        let true_rhs = mean_norm(mdp.factors(), &occ.sa, &sigma_rho)
            * (ki * n_a as f64 / (p.xi * gamma) * w_rho.dot(&g2) + snap.lambda * d as f64 * b * b).sqrt();

        // Learned model, for a random policy.
        let pi_rand = Policy::from_weights(SaTable::from_fn(n, n_a, |_, _| rng.random::<f64>() + 1e-3))?;
        let occ_hat = occupancy_measure(p_hat, &pi_rand, mdp.init_dist(), gamma)?;
        let learned_lhs = one_step(&occ_hat.sa, p_hat, &pi_rand, &g);
        let sigma_hat_pop = SpdMatrix::new(weighted_cov(phi_hat, &w_rho, ki, snap.lambda))?;
        let learned_rhs = mean_norm(phi_hat, &occ_hat.sa, &sigma_hat_pop)
            * (ki * n_a as f64 / p.xi * w_rho_prime.dot(&g2)
                + b * b * snap.lambda * d as f64
                + ki * b * b * zeta)
                .sqrt();

        out.push(EpochMixtureReport {
            epoch: snap.epoch,
            start: snap.start,
            model_index: snap.model_index,
            mle_error_rho,
            mle_error_rho_prime,
            mle_error_mixture: 0.5 * (mle_error_rho + mle_error_rho_prime),
            zeta,
            concentration_min,
            concentration_max,
            true_lhs,
            true_rhs,
            learned_lhs,
            learned_rhs,
            mle_event: mle_error_rho <= zeta,
        });
    }
    Ok(out)
}
