#![allow(dead_code)]

use polo_core::mdp::{occupancy_measure, policy_evaluation, LowRankMdp, Transitions};
use polo_core::rng::StreamRng;
use polo_core::tables::{Policy, SaTable};
use rand::Rng;

pub fn random_policy(n: usize, n_a: usize, rng: &mut StreamRng) -> Policy {
    Policy::from_weights(SaTable::from_fn(n, n_a, |_, _| rng.random::<f64>() + 1e-3)).unwrap()
}

pub fn random_table(n: usize, n_a: usize, lo: f64, hi: f64, rng: &mut StreamRng) -> SaTable {
    SaTable::from_fn(n, n_a, |_, _| rng.random_range(lo..hi))
}

/// A random instance with `2 <= S <= 6`, `2 <= A <= 4`, `1 <= d <= 4`.
pub fn small_instance(rng: &mut StreamRng) -> LowRankMdp {
    let n = rng.random_range(2..=6);
    let n_a = rng.random_range(2..=4);
    let d = rng.random_range(1..=4);
    let gamma = rng.random_range(0.0..0.95);
    let conc = rng.random_range(0.2..2.0);
    LowRankMdp::random(n, n_a, d, gamma, conc, rng).unwrap()
}

/// A second kernel of the same shape, on a fresh random factorization.
pub fn other_kernel(mdp: &LowRankMdp, rng: &mut StreamRng) -> Transitions {
    LowRankMdp::random(mdp.n_states(), mdp.n_actions(), mdp.dim(), mdp.gamma(), 1.0, rng)
        .unwrap()
        .transitions()
        .clone()
}

fn value(p: &Transitions, loss: &SaTable, pi: &Policy, gamma: f64, d0: &[f64]) -> (f64, Vec<f64>) {
    let vt = policy_evaluation(p, loss, pi, gamma).unwrap();
    (vt.expected(d0), vt.v)
}

/// `sum_{s'} (P'(s'|s,a) - P(s'|s,a)) v(s')`.
fn kernel_gap(p_prime: &Transitions, p: &Transitions, s: usize, a: usize, v: &[f64]) -> f64 {
    p_prime.row(s, a).iter().zip(p.row(s, a)).zip(v).map(|((x, y), z)| (x - y) * z).sum()
}

/// `|V_{P',l-b} - V_{P,l} - E_{d_{P'}}[-b + gamma (P'-P) V_{P,l}] / (1-gamma)|`.
pub fn simulation_forward_residual(
    p: &Transitions,
    p_prime: &Transitions,
    loss: &SaTable,
    bonus: &SaTable,
    pi: &Policy,
    gamma: f64,
    d0: &[f64],
) -> f64 {
    let shifted = loss.sub(bonus).unwrap();
    let (v_prime, _) = value(p_prime, &shifted, pi, gamma, d0);
    let (v, v_states) = value(p, loss, pi, gamma, d0);
    let occ = occupancy_measure(p_prime, pi, d0, gamma).unwrap();
    let mut rhs = 0.0;
    for s in 0..p.n_states() {
        for a in 0..p.n_actions() {
            rhs += occ.sa.get(s, a) * (-bonus.get(s, a) + gamma * kernel_gap(p_prime, p, s, a, &v_states));
        }
    }
    (v_prime - v - rhs / (1.0 - gamma)).abs()
}

/// Same difference, expanded along `d_P` with `V_{P',l-b}` inside.
pub fn simulation_backward_residual(
    p: &Transitions,
    p_prime: &Transitions,
    loss: &SaTable,
    bonus: &SaTable,
    pi: &Policy,
    gamma: f64,
    d0: &[f64],
) -> f64 {
    let shifted = loss.sub(bonus).unwrap();
    let (v_prime, v_prime_states) = value(p_prime, &shifted, pi, gamma, d0);
    let (v, _) = value(p, loss, pi, gamma, d0);
    let occ = occupancy_measure(p, pi, d0, gamma).unwrap();
    let mut rhs = 0.0;
    for s in 0..p.n_states() {
        for a in 0..p.n_actions() {
            rhs += occ.sa.get(s, a) * (-bonus.get(s, a) + gamma * kernel_gap(p_prime, p, s, a, &v_prime_states));
        }
    }
    (v_prime - v - rhs / (1.0 - gamma)).abs()
}

/// `E_{s~d^{pi1}, a~pi2}[g]` against
/// `gamma E_{(s~,a~)~d^{pi1}, s~P, a~pi2}[g] + (1-gamma) E_{s~d0, a~pi2}[g]`.
pub fn occupancy_decomposition_residual(
    p: &Transitions,
    pi1: &Policy,
    pi2: &Policy,
    g: &SaTable,
    gamma: f64,
    d0: &[f64],
) -> f64 {
    let n = p.n_states();
    let occ = occupancy_measure(p, pi1, d0, gamma).unwrap();
    let g_pi2: Vec<f64> = (0..n).map(|s| (0..p.n_actions()).map(|a| pi2.prob(s, a) * g.get(s, a)).sum()).collect();
    let lhs: f64 = occ.s.iter().zip(&g_pi2).map(|(w, x)| w * x).sum();
    let mut next = 0.0;
    for s in 0..n {
        for a in 0..p.n_actions() {
            next += occ.sa.get(s, a) * p.row(s, a).iter().zip(&g_pi2).map(|(q, x)| q * x).sum::<f64>();
        }
    }
    let init: f64 = d0.iter().zip(&g_pi2).map(|(w, x)| w * x).sum();
    (lhs - gamma * next - (1.0 - gamma) * init).abs()
}

/// Residual of `(V_hat^pi - V_hat^*) + (V_hat^* - V^*) + (V^pi - V_hat^pi) = V^pi - V^*`
/// with every term evaluated independently.
pub fn decomposition_residual(
    p: &Transitions,
    p_hat: &Transitions,
    loss: &SaTable,
    bonus: &SaTable,
    pi: &Policy,
    pi_star: &Policy,
    gamma: f64,
    d0: &[f64],
) -> f64 {
    let shifted = loss.sub(bonus).unwrap();
    let (v_hat_pi, _) = value(p_hat, &shifted, pi, gamma, d0);
    let (v_hat_star, _) = value(p_hat, &shifted, pi_star, gamma, d0);
    let (v_pi, _) = value(p, loss, pi, gamma, d0);
    let (v_star, _) = value(p, loss, pi_star, gamma, d0);
    ((v_hat_pi - v_hat_star) + (v_hat_star - v_star) + (v_pi - v_hat_pi) - (v_pi - v_star)).abs()
}
