//! Checks of the low-rank regularity conditions.

use super::{Factorization, LowRankMdp};
use std::fmt;

/// Largest state count for which the mu-regularity supremum is computed by
/// enumerating every vertex of `[0, 1]^S`.
pub const EXACT_VERTEX_LIMIT: usize = 20;

const NORM_TOL: f64 = 1e-12;
const ROW_SUM_TOL: f64 = 1e-9;
const NEG_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    /// The reported value is only an upper bound on the exact quantity.
    pub bound_only: bool,
    pub worst: f64,
    pub limit: f64,
    pub witness: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationReport {
    pub checks: Vec<CheckResult>,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn any_bound_only(&self) -> bool {
        self.checks.iter().any(|c| c.bound_only)
    }

    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            write!(
                f,
                "{:<14} {}  worst={:.6e} limit={:.6e}",
                c.name,
                if c.passed { "pass" } else { "FAIL" },
                c.worst,
                c.limit
            )?;
            if c.bound_only {
                write!(f, "  [bound-only]")?;
            }
            if let Some(w) = &c.witness {
                write!(f, "  witness: {w}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// The supremum of `||sum_s mu(s) g(s)||_2` over `g in [0, 1]^S`.
#[derive(Debug, Clone, PartialEq)]
pub struct MuRegularity {
    pub value: f64,
    /// Maximising vertex (bit `s` set means `g(s) = 1`); `None` for the bound.
    pub vertex: Option<u64>,
    pub exact: bool,
}

/// Exact by Gray-code vertex enumeration when `S <= 20` (a convex function
/// attains its maximum over a box at a vertex); otherwise the upper bound
/// `sqrt(sum_j (sum_s |mu_j(s)|)^2)`.
pub fn mu_regularity(f: &Factorization) -> MuRegularity {
    let (n, d) = (f.n_states(), f.dim());
    if n > EXACT_VERTEX_LIMIT {
        let bound = (0..d)
            .map(|j| (0..n).map(|s| f.mu(s)[j].abs()).sum::<f64>().powi(2))
            .sum::<f64>()
            .sqrt();
        return MuRegularity {
            value: bound,
            vertex: None,
            exact: false,
        };
    }
    let mut acc = vec![0.0; d];
    let mut best = 0.0;
    let mut best_mask = 0u64;
    let mut mask = 0u64;
    for i in 1u64..(1u64 << n) {
        // Gray code: flip the bit at the index of the lowest set bit of i.
        let bit = i.trailing_zeros() as usize;
        mask ^= 1 << bit;
        let sign = if mask & (1 << bit) != 0 { 1.0 } else { -1.0 };
        for (a, m) in acc.iter_mut().zip(f.mu(bit)) {
            *a += sign * m;
        }
        let norm2: f64 = acc.iter().map(|x| x * x).sum();
        if norm2 > best {
            best = norm2;
            best_mask = mask;
        }
    }
    // Recompute the winner from scratch so accumulated rounding does not leak.
    let value = vertex_norm(f, best_mask);
    MuRegularity {
        value,
        vertex: Some(best_mask),
        exact: true,
    }
}

fn vertex_norm(f: &Factorization, mask: u64) -> f64 {
    let mut acc = vec![0.0; f.dim()];
    for s in 0..f.n_states() {
        if mask & (1 << s) != 0 {
            for (a, m) in acc.iter_mut().zip(f.mu(s)) {
                *a += m;
            }
        }
    }
    acc.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn validate_factorization(f: &Factorization) -> ValidationReport {
    let (n, n_a, d) = (f.n_states(), f.n_actions(), f.dim());
    let mut checks = Vec::new();

    let mut worst_norm = 0.0;
    let mut norm_at = (0, 0);
    let mut worst_sum = 0.0;
    let mut sum_at = (0, 0);
    let mut most_negative = 0.0;
    let mut neg_at = (0, 0, 0);
    for s in 0..n {
        for a in 0..n_a {
            let norm = f.phi(s, a).iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > worst_norm {
                worst_norm = norm;
                norm_at = (s, a);
            }
            let mut total = 0.0;
            for sn in 0..n {
                let p = f.raw_prob(s, a, sn);
                total += p;
                if -p > most_negative {
                    most_negative = -p;
                    neg_at = (s, a, sn);
                }
            }
            let drift = (total - 1.0).abs();
            if drift > worst_sum {
                worst_sum = drift;
                sum_at = (s, a);
            }
        }
    }
    let norm_ok = worst_norm <= 1.0 + NORM_TOL;
    checks.push(CheckResult {
        name: "phi_norm",
        passed: norm_ok,
        bound_only: false,
        worst: worst_norm,
        limit: 1.0 + NORM_TOL,
        witness: (!norm_ok).then(|| format!("(s={}, a={})", norm_at.0, norm_at.1)),
    });
    let sum_ok = worst_sum <= ROW_SUM_TOL;
    checks.push(CheckResult {
        name: "row_sum",
        passed: sum_ok,
        bound_only: false,
        worst: worst_sum,
        limit: ROW_SUM_TOL,
        witness: (!sum_ok).then(|| format!("(s={}, a={})", sum_at.0, sum_at.1)),
    });
    let neg_ok = most_negative <= NEG_TOL;
    checks.push(CheckResult {
        name: "nonnegative",
        passed: neg_ok,
        bound_only: false,
        worst: -most_negative,
        limit: -NEG_TOL,
        witness: (!neg_ok).then(|| format!("(s={}, a={}, s'={})", neg_at.0, neg_at.1, neg_at.2)),
    });

    let reg = mu_regularity(f);
    let limit = (d as f64).sqrt() + NORM_TOL;
    let reg_ok = reg.value <= limit;
    let witness = match (reg_ok, reg.vertex) {
        (false, Some(mask)) => Some(format!(
            "g = 1 on states {:?}",
            (0..n).filter(|s| mask & (1 << s) != 0).collect::<Vec<_>>()
        )),
        (false, None) => Some("upper bound exceeds sqrt(d); exact check skipped".into()),
        _ => None,
    };
    checks.push(CheckResult {
        name: "mu_regularity",
        passed: reg_ok,
        bound_only: !reg.exact,
        worst: reg.value,
        limit,
        witness,
    });
    ValidationReport { checks }
}

pub(crate) fn validate_mdp(mdp: &LowRankMdp) -> ValidationReport {
    let mut report = validate_factorization(mdp.factors());
    let total: f64 = mdp.init_dist().iter().sum();
    let min = mdp.init_dist().iter().copied().fold(f64::INFINITY, f64::min);
    let drift = (total - 1.0).abs();
    report.checks.push(CheckResult {
        name: "init_dist",
        passed: drift <= 1e-12 && min >= 0.0,
        bound_only: false,
        worst: drift,
        limit: 1e-12,
        witness: None,
    });
    report
}

impl Factorization {
    pub fn validate(&self) -> ValidationReport {
        validate_factorization(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_force(f: &Factorization) -> (f64, u64) {
        let mut best = (0.0, 0);
        for mask in 0u64..(1 << f.n_states()) {
            let v = vertex_norm(f, mask);
            if v > best.0 {
                best = (v, mask);
            }
        }
        best
    }

    #[test]
    fn gray_code_matches_brute_force() {
        let mut rng = crate::rng::stream(11, crate::rng::Stream::Instance);
        for _ in 0..10 {
            let mdp = LowRankMdp::random(4, 2, 3, 0.5, 0.7, &mut rng).unwrap();
            // Mix signs into mu so the maximiser is not simply g = 1.
            let mu: Vec<f64> = mdp
                .factors()
                .mu_flat()
                .iter()
                .enumerate()
                .map(|(i, &m)| if i % 3 == 0 { -m } else { m })
                .collect();
            let f = Factorization::new(4, 2, 3, mdp.factors().phi_flat().to_vec(), mu).unwrap();
            let reg = mu_regularity(&f);
            let (value, mask) = brute_force(&f);
            assert_eq!(reg.vertex, Some(mask));
            assert!((reg.value - value).abs() < 1e-14);
        }
    }

    #[test]
    fn large_state_space_reports_bound_only() {
        let n = EXACT_VERTEX_LIMIT + 1;
        let f = Factorization::new(n, 1, 1, vec![1.0; n], vec![1.0 / n as f64; n]).unwrap();
        let reg = mu_regularity(&f);
        assert!(!reg.exact);
        assert!((reg.value - 1.0).abs() < 1e-12);
        let report = f.validate();
        assert!(report.all_passed());
        assert!(report.any_bound_only());
    }

    #[test]
    fn scaled_phi_fails_with_witness() {
        let mut phi = vec![1.0; 3 * 2];
        phi[3] = 2.0; // (s=1, a=1)
        let f = Factorization::new(3, 2, 1, phi, vec![0.2, 0.3, 0.5]).unwrap();
        let report = f.validate();
        let norm = report.check("phi_norm").unwrap();
        assert!(!norm.passed);
        assert_eq!(norm.witness.as_deref(), Some("(s=1, a=1)"));
        assert!(!report.check("row_sum").unwrap().passed);
    }
}
