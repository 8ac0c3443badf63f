//! Finite realizable model classes and the maximum-likelihood oracle.
//!
//! Likelihoods are computed from transition counts in canonical
//! `(s, a, s')` order, which makes the MLE independent of dataset ordering
//! and invariant to duplicating the data.

use crate::error::{check_index, Error, Result};
use crate::mdp::{Factorization, LowRankMdp, Transitions};
use crate::rng::StreamRng;
use crate::tables::SaTable;
use rand::seq::SliceRandom;
use rand::Rng;

/// Floor applied to model probabilities inside the logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetTag {
    /// `D`: the tuple observed right after the roll-in state.
    Main,
    /// `D'`: the tuple one step further.
    Aux,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Transition {
    pub s: usize,
    pub a: usize,
    pub s_next: usize,
}

/// Append-only buffer of observed transitions.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    tag: DatasetTag,
    n_states: usize,
    n_actions: usize,
    tuples: Vec<Transition>,
}

impl Dataset {
    pub fn new(tag: DatasetTag, n_states: usize, n_actions: usize) -> Self {
        Dataset {
            tag,
            n_states,
            n_actions,
            tuples: Vec::new(),
        }
    }

    pub fn push(&mut self, s: usize, a: usize, s_next: usize) -> Result<()> {
        check_index("state", s, self.n_states)?;
        check_index("action", a, self.n_actions)?;
        check_index("next state", s_next, self.n_states)?;
        self.tuples.push(Transition { s, a, s_next });
        Ok(())
    }

    pub fn tag(&self) -> DatasetTag {
        self.tag
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn len(&self) -> usize {
        self.tuples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tuples.is_empty()
    }

    pub fn tuples(&self) -> &[Transition] {
        &self.tuples
    }

    /// One tuple per line, `s,a,s_next`.
    pub fn dump(&self) -> String {
        self.tuples
            .iter()
            .map(|t| format!("{},{},{}\n", t.s, t.a, t.s_next))
            .collect()
    }

    pub fn load(text: &str, tag: DatasetTag, n_states: usize, n_actions: usize) -> Result<Self> {
        let mut data = Dataset::new(tag, n_states, n_actions);
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let fields: Vec<usize> = line
                .split(',')
                .map(|f| f.trim().parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse(format!("line {}: {e}", i + 1)))?;
            match fields[..] {
                [s, a, s_next] => data.push(s, a, s_next)?,
                _ => return Err(Error::Parse(format!("line {}: expected 3 fields", i + 1))),
            }
        }
        Ok(data)
    }

    /// Visit counts of each `(s, a)` pair.
    pub fn pair_counts(&self) -> SaTable {
        let mut t = SaTable::zeros(self.n_states, self.n_actions);
        for tr in &self.tuples {
            t.set(tr.s, tr.a, t.get(tr.s, tr.a) + 1.0);
        }
        t
    }
}

/// Counts of `(s, a, s')` triples over one or more datasets.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionCounts {
    n_states: usize,
    n_actions: usize,
    counts: Vec<u64>,
    total: u64,
}

impl TransitionCounts {
    pub fn new(n_states: usize, n_actions: usize) -> Self {
        TransitionCounts {
            n_states,
            n_actions,
            counts: vec![0; n_states * n_actions * n_states],
            total: 0,
        }
    }

    pub fn add(&mut self, tr: Transition) {
        self.counts[(tr.s * self.n_actions + tr.a) * self.n_states + tr.s_next] += 1;
        self.total += 1;
    }

    pub fn extend(&mut self, data: &Dataset) -> Result<()> {
        if data.n_states != self.n_states || data.n_actions != self.n_actions {
            return Err(Error::Shape("dataset shape does not match the counts".into()));
        }
        data.tuples.iter().for_each(|&t| self.add(t));
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.total
    }
}

/// Per-triple log-probability table `ln max(mu(s')^T phi(s,a), floor)`.
fn log_prob_table(f: &Factorization) -> Vec<f64> {
    let (n, n_a) = (f.n_states(), f.n_actions());
    let mut out = Vec::with_capacity(n * n_a * n);
    for s in 0..n {
        for a in 0..n_a {
            for sn in 0..n {
                out.push(f.raw_prob(s, a, sn).max(PROB_FLOOR).ln());
            }
        }
    }
    out
}

fn mean_log_likelihood(log_probs: &[f64], counts: &TransitionCounts) -> Result<f64> {
    if counts.total == 0 {
        return Err(Error::EmptyDataset);
    }
    let sum: f64 = counts
        .counts
        .iter()
        .zip(log_probs)
        .filter(|(&c, _)| c > 0)
        .map(|(&c, &lp)| c as f64 * lp)
        .sum();
    Ok(sum / counts.total as f64)
}

/// Mean of `ln max(mu(s')^T phi(s,a), 1e-12)` over the dataset.
pub fn log_likelihood(model: &Factorization, data: &Dataset) -> Result<f64> {
    if data.n_states != model.n_states() || data.n_actions != model.n_actions() {
        return Err(Error::Shape("dataset shape does not match the model".into()));
    }
    let mut counts = TransitionCounts::new(data.n_states, data.n_actions);
    counts.extend(data)?;
    mean_log_likelihood(&log_prob_table(model), &counts)
}

/// A finite list of candidate factorizations over a shared `(S, A, d)`.
#[derive(Debug, Clone)]
pub struct ModelClass {
    candidates: Vec<Factorization>,
    transitions: Vec<Transitions>,
    log_probs: Vec<Vec<f64>>,
    true_index: Option<usize>,
}

impl ModelClass {
    /// Every candidate must pass low-rank validation.
    pub fn new(candidates: Vec<Factorization>, true_index: Option<usize>) -> Result<Self> {
        let first = candidates
            .first()
            .ok_or_else(|| Error::InvalidArgument("model class is empty".into()))?;
        for (i, c) in candidates.iter().enumerate() {
            if !c.same_shape(first) {
                return Err(Error::Shape(format!("candidate {i} differs in shape")));
            }
            let report = c.validate();
            if !report.all_passed() {
                return Err(Error::InvalidArgument(format!(
                    "candidate {i} fails validation:\n{report}"
                )));
            }
        }
        if let Some(t) = true_index {
            check_index("true index", t, candidates.len())?;
        }
        let transitions = candidates.iter().map(Factorization::transitions).collect();
        let log_probs = candidates.iter().map(log_prob_table).collect();
        Ok(ModelClass {
            candidates,
            transitions,
            log_probs,
            true_index,
        })
    }

    pub fn singleton(truth: &LowRankMdp) -> Result<Self> {
        Self::new(vec![truth.factors().clone()], Some(0))
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn true_index(&self) -> Option<usize> {
        self.true_index
    }

    pub fn candidate(&self, i: usize) -> &Factorization {
        &self.candidates[i]
    }

    pub fn candidates(&self) -> &[Factorization] {
        &self.candidates
    }

    pub fn transitions(&self, i: usize) -> &Transitions {
        &self.transitions[i]
    }

    pub fn n_states(&self) -> usize {
        self.candidates[0].n_states()
    }

    pub fn n_actions(&self) -> usize {
        self.candidates[0].n_actions()
    }

    pub fn dim(&self) -> usize {
        self.candidates[0].dim()
    }

    /// Mean log-likelihood of every candidate on the given counts.
    pub fn scores(&self, counts: &TransitionCounts) -> Result<Vec<f64>> {
        self.log_probs
            .iter()
            .map(|lp| mean_log_likelihood(lp, counts))
            .collect()
    }

    /// Argmax of the likelihood over the counts, lowest index on ties.
    pub fn argmax(&self, counts: &TransitionCounts) -> Result<usize> {
        let scores = self.scores(counts)?;
        let mut best = 0;
        for (i, &s) in scores.iter().enumerate().skip(1) {
            if s > scores[best] {
                best = i;
            }
        }
        Ok(best)
    }
}

/// Maximum-likelihood candidate over `d_main` and `d_aux` together.
pub fn mle_fit<'c>(class: &'c ModelClass, d_main: &Dataset, d_aux: &Dataset) -> Result<(usize, &'c Factorization)> {
    let mut counts = TransitionCounts::new(class.n_states(), class.n_actions());
    counts.extend(d_main)?;
    counts.extend(d_aux)?;
    let i = class.argmax(&counts)?;
    Ok((i, class.candidate(i)))
}

/// Builds a class holding `truth` plus `m - 1` distractors, with the truth at
/// a random position.
///
/// Each distractor permutes the `mu` rows over a random subset of states and
/// mixes every `phi` row toward a random convex combination of `phi` rows
/// with weight `perturb_scale`. Both moves keep the factorization valid; a
/// candidate that is within `1e-6` (max-norm on kernels) of an earlier one
/// is redrawn, at most 100 times per slot.
pub fn build_distractor_class(
    truth: &LowRankMdp,
    m: usize,
    rng: &mut StreamRng,
    perturb_scale: f64,
) -> Result<ModelClass> {
    if m == 0 {
        return Err(Error::InvalidArgument("class size must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&perturb_scale) {
        return Err(Error::InvalidArgument(format!(
            "perturb_scale = {perturb_scale} not in [0, 1]"
        )));
    }
    const RETRIES: usize = 100;
    let base = truth.factors();
    let (n, n_a, d) = (base.n_states(), base.n_actions(), base.dim());
    let mut accepted: Vec<Factorization> = vec![base.clone()];
    let mut kernels: Vec<Transitions> = vec![base.transitions()];
    while accepted.len() < m {
        let mut ok = false;
        for _ in 0..RETRIES {
            let mut states: Vec<usize> = (0..n).collect();
            states.shuffle(rng);
            let k = rng.random_range(2..=n.max(2)).min(n);
            let subset = &states[..k];
            let mut shuffled = subset.to_vec();
            shuffled.shuffle(rng);
            let mut mu = base.mu_flat().to_vec();
            for (&dst, &src) in subset.iter().zip(&shuffled) {
                mu[dst * d..(dst + 1) * d].copy_from_slice(base.mu(src));
            }

            let weights = crate::mdp::dirichlet(n * n_a, 1.0, rng);
            let mut target = vec![0.0; d];
            for (i, w) in weights.iter().enumerate() {
                for (t, x) in target.iter_mut().zip(&base.phi_flat()[i * d..(i + 1) * d]) {
                    *t += w * x;
                }
            }
            let phi: Vec<f64> = base
                .phi_flat()
                .iter()
                .enumerate()
                .map(|(i, &x)| (1.0 - perturb_scale) * x + perturb_scale * target[i % d])
                .collect();

            let cand = Factorization::new(n, n_a, d, phi, mu)?;
            if !cand.validate().all_passed() {
                continue;
            }
            let kernel = cand.transitions();
            if kernels.iter().any(|k| k.max_abs_diff(&kernel) < 1e-6) {
                continue;
            }
            accepted.push(cand);
            kernels.push(kernel);
            ok = true;
            break;
        }
        if !ok {
            return Err(Error::RetryBudget(RETRIES));
        }
    }
    let truth_f = accepted.remove(0);
    let pos = rng.random_range(0..m);
    accepted.insert(pos, truth_f);
    ModelClass::new(accepted, Some(pos))
}

/// Per-pair model error `f(s, a) = ||P_hat(.|s,a) - P(.|s,a)||_1` and the
/// confidence radius `zeta` that accompanies it.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelErrorDiagnostics {
    pub l1_error: SaTable,
    /// `ln(M / delta) / k`; `NaN` until the caller fills it in.
    pub zeta: f64,
}

pub fn l1_model_error(model: &Transitions, truth: &Transitions) -> Result<ModelErrorDiagnostics> {
    if model.n_states() != truth.n_states() || model.n_actions() != truth.n_actions() {
        return Err(Error::Shape("model and truth differ in shape".into()));
    }
    let l1_error = SaTable::from_fn(truth.n_states(), truth.n_actions(), |s, a| {
        model
            .row(s, a)
            .iter()
            .zip(truth.row(s, a))
            .map(|(x, y)| (x - y).abs())
            .sum()
    });
    Ok(ModelErrorDiagnostics {
        l1_error,
        zeta: f64::NAN,
    })
}

/// Mean over `(s, a)` (uniform) of `KL(P(.|s,a) || Q(.|s,a))`.
pub fn mean_kl(p: &Transitions, q: &Transitions) -> f64 {
    let (n, n_a) = (p.n_states(), p.n_actions());
    let mut total = 0.0;
    for s in 0..n {
        for a in 0..n_a {
            for (x, y) in p.row(s, a).iter().zip(q.row(s, a)) {
                if *x > 0.0 {
                    total += if *y > 0.0 { x * (x / y).ln() } else { f64::INFINITY };
                }
            }
        }
    }
    total / (n * n_a) as f64
}
