//! The episode loop.
//!
//! Order of operations in episode `k` (1-based):
//!
//! 1. roll in `s_k ~ d^{pi_tilde_k}` under the true kernel;
//! 2. draw `c_k ~ Bernoulli(xi)`; both post-roll-in actions come from the
//!    uniform policy when `c_k = 1` and from `pi_tilde_k` otherwise;
//! 3. take `a_k` at `s_k`, observe `s'_k`, append to `D`; take `a'_k` at
//!    `s'_k`, observe `s''_k`, append to `D'`;
//! 4. if `k` starts an epoch, refit the model by MLE on `D ∪ D'` (which
//!    already contains this episode's tuples), rebuild the covariance over
//!    `D` with the fitted features, and rebuild the bonus;
//! 5. evaluate `Q_hat` of `pi_tilde_k` under the frozen model and the loss
//!    `l_k - b_hat`, then take the exponential-weights step. When `k + 1`
//!    starts a new epoch, `pi_tilde_{k+1}` is uniform instead.

use super::schedule::{EpochSchedule, HyperParams};
use super::{bonus_eval, evaluate_q_hat, omd_step, BonusFunction, CovarianceAccumulator};
use crate::adversary::LossSequence;
use crate::error::{Error, Result};
use crate::mdp::{occupancy_measure, LowRankMdp};
use crate::model_class::{Dataset, DatasetTag, ModelClass, TransitionCounts};
use crate::rng::{stream, Stream, StreamRng};
use crate::tables::{sample_index, LossFunction, Policy, SaTable};
use nalgebra::DMatrix;
use rand::Rng;

/// Independent random streams used by one run.
#[derive(Debug, Clone)]
pub struct RunStreams {
    pub roll_in: StreamRng,
    pub bernoulli: StreamRng,
    pub actions: StreamRng,
    pub environment: StreamRng,
}

impl RunStreams {
    pub fn from_seed(seed: u64) -> Self {
        RunStreams {
            roll_in: stream(seed, Stream::RollIn),
            bernoulli: stream(seed, Stream::Bernoulli),
            actions: stream(seed, Stream::Actions),
            environment: stream(seed, Stream::Environment),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    /// Keep `pi_tilde_k` for every episode (needed for exact regret).
    pub record_policies: bool,
    /// Track `rho_k`, `rho'_k` and `pi_bar_k` exactly (one occupancy solve
    /// per episode) and snapshot them at epoch starts.
    pub track_mixtures: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            record_policies: true,
            track_mixtures: false,
        }
    }
}

/// One record per episode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeLog {
    pub k: usize,
    pub epoch: usize,
    pub c_k: bool,
    pub s: usize,
    pub a: usize,
    pub s_next: usize,
    pub a_next: usize,
    pub s_next2: usize,
    pub mle_index: usize,
    pub alpha: f64,
    pub lambda: f64,
    pub max_bonus: f64,
    pub roll_in_steps: usize,
    pub roll_in_truncated: bool,
}

impl EpisodeLog {
    pub const HEADER: &'static str = "k,epoch,c_k,s_k,a_k,s1_k,a1_k,s2_k,mle_index,alpha_k,lambda_k,max_bonus";

    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{:.16e},{:.16e},{:.16e}",
            self.k,
            self.epoch,
            u8::from(self.c_k),
            self.s,
            self.a,
            self.s_next,
            self.a_next,
            self.s_next2,
            self.mle_index,
            self.alpha,
            self.lambda,
            self.max_bonus
        )
    }
}

/// `rho_k` (state marginal averaged over `pi_tilde_1..k`), `rho'_k` (its
/// one-step push-forward under `pi_bar_k`) and `pi_bar_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackedMixtures {
    /// `(1/k) sum_i d^{pi_tilde_i}(s, a)` under the true kernel.
    pub rho_sa: SaTable,
    pub rho: Vec<f64>,
    pub rho_prime: Vec<f64>,
    pub avg_policy: Policy,
}

/// Frozen per-epoch quantities.
#[derive(Debug, Clone)]
pub struct EpochSnapshot {
    pub epoch: usize,
    pub start: usize,
    pub model_index: usize,
    pub alpha: f64,
    pub lambda: f64,
    pub sigma: DMatrix<f64>,
    pub bonus: SaTable,
    /// Visit counts of `(s, a)` in `D` at the epoch start.
    pub main_pair_counts: SaTable,
    pub mixtures: Option<TrackedMixtures>,
}

#[derive(Debug, Clone)]
pub struct RunArtifact {
    pub params: HyperParams,
    pub schedule: EpochSchedule,
    pub class_size: usize,
    pub logs: Vec<EpisodeLog>,
    /// `pi_tilde_k` for `k = 1..=K` (empty unless recorded).
    pub policies: Vec<Policy>,
    pub epochs: Vec<EpochSnapshot>,
    pub d_main: Dataset,
    pub d_aux: Dataset,
    pub avg_policy: Policy,
    /// Largest simplex violation seen over all policy updates.
    pub max_simplex_violation: f64,
}

impl RunArtifact {
    /// Snapshot of the epoch containing episode `k`.
    pub fn epoch_for(&self, k: usize) -> &EpochSnapshot {
        &self.epochs[self.schedule.epoch_of(k) - 1]
    }
}

/// Mutable state of one learner.
#[derive(Debug, Clone)]
pub struct LearnerState {
    params: HyperParams,
    schedule: EpochSchedule,
    gamma: f64,
    d_main: Dataset,
    d_aux: Dataset,
    counts: TransitionCounts,
    main_pairs: SaTable,
    model_index: usize,
    alpha: f64,
    lambda: f64,
    sigma: DMatrix<f64>,
    bonus: BonusFunction,
    policy_tilde: Policy,
    policy_sum: SaTable,
    rho_sum: SaTable,
    track_mixtures: bool,
    episode: usize,
}

impl LearnerState {
    pub fn new(mdp: &LowRankMdp, class: &ModelClass, params: HyperParams, track_mixtures: bool) -> Result<Self> {
        params.validate()?;
        let (n, n_a) = (mdp.n_states(), mdp.n_actions());
        if class.n_states() != n || class.n_actions() != n_a {
            return Err(Error::Shape("model class does not match the environment".into()));
        }
        Ok(LearnerState {
            params,
            schedule: EpochSchedule::new(params.k_episodes, params.epoch_len)?,
            gamma: mdp.gamma(),
            d_main: Dataset::new(DatasetTag::Main, n, n_a),
            d_aux: Dataset::new(DatasetTag::Aux, n, n_a),
            counts: TransitionCounts::new(n, n_a),
            main_pairs: SaTable::zeros(n, n_a),
            model_index: 0,
            alpha: 0.0,
            lambda: 0.0,
            sigma: DMatrix::zeros(class.dim(), class.dim()),
            bonus: BonusFunction::zero(n, n_a),
            policy_tilde: Policy::uniform(n, n_a),
            policy_sum: SaTable::zeros(n, n_a),
            rho_sum: SaTable::zeros(n, n_a),
            track_mixtures,
            episode: 0,
        })
    }

    pub fn params(&self) -> &HyperParams {
        &self.params
    }

    pub fn schedule(&self) -> &EpochSchedule {
        &self.schedule
    }

    /// Completed episodes.
    pub fn episode(&self) -> usize {
        self.episode
    }

    pub fn policy_tilde(&self) -> &Policy {
        &self.policy_tilde
    }

    pub fn model_index(&self) -> usize {
        self.model_index
    }

    pub fn bonus(&self) -> &BonusFunction {
        &self.bonus
    }

    pub fn d_main(&self) -> &Dataset {
        &self.d_main
    }

    pub fn d_aux(&self) -> &Dataset {
        &self.d_aux
    }

    /// `pi_bar_k = xi U + (1 - xi) (1/k) sum_{i<=k} pi_tilde_i` over the
    /// completed episodes (uniform before the first one).
    pub fn avg_policy(&self) -> Policy {
        let (n, n_a) = (self.policy_sum.n_states(), self.policy_sum.n_actions());
        if self.episode == 0 {
            return Policy::uniform(n, n_a);
        }
        let xi = self.params.xi;
        let k = self.episode as f64;
        let table = SaTable::from_fn(n, n_a, |s, a| {
            xi / n_a as f64 + (1.0 - xi) * self.policy_sum.get(s, a) / k
        });
        Policy::from_weights(table).expect("convex combination of policies")
    }

    fn mixtures(&self, mdp: &LowRankMdp) -> TrackedMixtures {
        let k = self.episode.max(1) as f64;
        let rho_sa = self.rho_sum.scale(1.0 / k);
        let rho: Vec<f64> = (0..rho_sa.n_states()).map(|s| rho_sa.row(s).iter().sum()).collect();
        let avg_policy = self.avg_policy();
        let n = mdp.n_states();
        let mut rho_prime = vec![0.0; n];
        for (s, &r) in rho.iter().enumerate() {
            for a in 0..mdp.n_actions() {
                let w = r * avg_policy.prob(s, a);
                for (rp, p) in rho_prime.iter_mut().zip(mdp.transitions().row(s, a)) {
                    *rp += w * p;
                }
            }
        }
        TrackedMixtures {
            rho_sa,
            rho,
            rho_prime,
            avg_policy,
        }
    }

    fn refresh_model(&mut self, mdp: &LowRankMdp, class: &ModelClass, k: usize) -> Result<EpochSnapshot> {
        self.model_index = class.argmax(&self.counts)?;
        let phi_hat = class.candidate(self.model_index);
        let m = class.len();
        self.lambda = self.params.lambda(k, m, class.dim());
        self.alpha = self.params.alpha(k, m, mdp.n_actions(), class.dim(), self.gamma);
        let cov = CovarianceAccumulator::from_pair_counts(phi_hat, &self.main_pairs, self.lambda);
        let spd = cov.spd()?;
        self.sigma = cov.sigma();
        self.bonus = bonus_eval(&spd, phi_hat, self.alpha, self.gamma)?;
        Ok(EpochSnapshot {
            epoch: self.schedule.epoch_of(k),
            start: k,
            model_index: self.model_index,
            alpha: self.alpha,
            lambda: self.lambda,
            sigma: self.sigma.clone(),
            bonus: self.bonus.values.clone(),
            main_pair_counts: self.main_pairs.clone(),
            mixtures: self.track_mixtures.then(|| self.mixtures(mdp)),
        })
    }
}

fn draw_action(policy: &Policy, s: usize, uniform: bool, rng: &mut StreamRng) -> usize {
    if uniform {
        rng.random_range(0..policy.n_actions())
    } else {
        sample_index(policy.row(s), rng.random::<f64>())
    }
}

/// Runs one episode; returns the log and, at epoch starts, the snapshot of
/// the refreshed model.
pub fn run_episode(
    state: &mut LearnerState,
    mdp: &LowRankMdp,
    class: &ModelClass,
    loss: &LossFunction,
    streams: &mut RunStreams,
) -> Result<(EpisodeLog, Option<EpochSnapshot>)> {
    let k = state.episode + 1;
    if k > state.params.k_episodes {
        return Err(Error::InvalidArgument(format!("episode {k} exceeds K = {}", state.params.k_episodes)));
    }
    let xi = state.params.xi;
    let pi = state.policy_tilde.clone();

    let roll = mdp.roll_in_sample(&pi, &mut streams.roll_in);
    let explore = streams.bernoulli.random::<f64>() < xi;
    let s = roll.state;
    let a = draw_action(&pi, s, explore, &mut streams.actions);
    let s_next = mdp.step_sample(s, a, &mut streams.environment)?;
    let a_next = draw_action(&pi, s_next, explore, &mut streams.actions);
    let s_next2 = mdp.step_sample(s_next, a_next, &mut streams.environment)?;

    state.d_main.push(s, a, s_next)?;
    state.d_aux.push(s_next, a_next, s_next2)?;
    let main = *state.d_main.tuples().last().expect("just pushed");
    let aux = *state.d_aux.tuples().last().expect("just pushed");
    state.counts.add(main);
    state.counts.add(aux);
    state.main_pairs.set(s, a, state.main_pairs.get(s, a) + 1.0);

    state.policy_sum = state.policy_sum.add(pi.table())?;
    if state.track_mixtures {
        let occ = occupancy_measure(mdp.transitions(), &pi, mdp.init_dist(), mdp.gamma())?;
        state.rho_sum = state.rho_sum.add(&occ.sa)?;
    }
    state.episode = k;

    let snapshot = if state.schedule.is_start(k) {
        Some(state.refresh_model(mdp, class, k)?)
    } else {
        None
    };

    let next_starts_epoch = state.schedule.is_start(k + 1);
    if k < state.params.k_episodes {
        state.policy_tilde = if next_starts_epoch {
            Policy::uniform(mdp.n_states(), mdp.n_actions())
        } else {
            let q_hat = evaluate_q_hat(
                class.transitions(state.model_index),
                loss,
                &state.bonus,
                &pi,
                state.gamma,
            )?;
            omd_step(&pi, &q_hat.q, state.params.eta)?
        };
    }

    let log = EpisodeLog {
        k,
        epoch: state.schedule.epoch_of(k),
        c_k: explore,
        s,
        a,
        s_next,
        a_next,
        s_next2,
        mle_index: state.model_index,
        alpha: state.alpha,
        lambda: state.lambda,
        max_bonus: state.bonus.values.max(),
        roll_in_steps: roll.steps,
        roll_in_truncated: roll.truncated,
    };
    Ok((log, snapshot))
}

/// Runs the learner for all `K = losses.len()` episodes.
pub fn run(
    mdp: &LowRankMdp,
    class: &ModelClass,
    losses: &LossSequence,
    params: HyperParams,
    seed: u64,
    options: RunOptions,
) -> Result<RunArtifact> {
    if losses.len() != params.k_episodes {
        return Err(Error::InvalidArgument(format!(
            "loss sequence has {} episodes, K = {}",
            losses.len(),
            params.k_episodes
        )));
    }
    let mut state = LearnerState::new(mdp, class, params, options.track_mixtures)?;
    let mut streams = RunStreams::from_seed(seed);
    let mut logs = Vec::with_capacity(params.k_episodes);
    let mut policies = Vec::with_capacity(if options.record_policies { params.k_episodes } else { 0 });
    let mut epochs = Vec::with_capacity(state.schedule.n_epochs());
    let mut max_violation: f64 = 0.0;
    for k in 0..params.k_episodes {
        if options.record_policies {
            policies.push(state.policy_tilde.clone());
        }
        let (log, snapshot) = run_episode(&mut state, mdp, class, losses.get(k), &mut streams)?;
        max_violation = max_violation.max(state.policy_tilde.simplex_violation());
        logs.push(log);
        epochs.extend(snapshot);
    }
    Ok(RunArtifact {
        params,
        schedule: state.schedule.clone(),
        class_size: class.len(),
        logs,
        policies,
        epochs,
        avg_policy: state.avg_policy(),
        d_main: state.d_main,
        d_aux: state.d_aux,
        max_simplex_violation: max_violation,
    })
}
