use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

pub const DEFAULT_C_ALPHA: f64 = 0.5;
pub const DEFAULT_C_LAMBDA: f64 = 1.0;

/// Resolved learner hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub k_episodes: usize,
    /// Probability of the uniform exploration branch.
    pub xi: f64,
    pub epoch_len: usize,
    pub eta: f64,
    pub c_alpha: f64,
    pub c_lambda: f64,
    pub delta: f64,
    /// The mixing value used inside `alpha_k`. Equal to `xi` except when an
    /// ablation forces `xi = 0`, where `A / xi` would be undefined.
    pub alpha_xi: f64,
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.k_episodes == 0 {
            return bad("K must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.xi) {
            return bad(format!("xi = {} not in [0, 1]", self.xi));
        }
        if self.epoch_len == 0 {
            return bad("epoch length must be at least 1".into());
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return bad(format!("eta = {} must be positive", self.eta));
        }
        if !(self.c_alpha >= 0.0) || !(self.c_lambda > 0.0) {
            return bad(format!(
                "need c_alpha >= 0 and c_lambda > 0 (got {}, {})",
                self.c_alpha, self.c_lambda
            ));
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return bad(format!("delta = {} not in (0, 1]", self.delta));
        }
        if !(self.alpha_xi > 0.0 && self.alpha_xi <= 1.0) {
            return bad(format!("alpha_xi = {} not in (0, 1]", self.alpha_xi));
        }
        Ok(())
    }

    /// `ln(M k / delta)`, evaluated at an epoch start `k` (1-based). Floored
    /// at `ln 2` so that `M = k = K = 1` still gives a positive `lambda`.
    fn log_term(&self, k: usize, class_size: usize) -> f64 {
        (class_size as f64 * k as f64 / self.delta).ln().max(std::f64::consts::LN_2)
    }

    /// `alpha_k = c_alpha sqrt(gamma (A / xi + d^2) ln(M k / delta))`.
    pub fn alpha(&self, k: usize, class_size: usize, n_actions: usize, dim: usize, gamma: f64) -> f64 {
        let inner = gamma * (n_actions as f64 / self.alpha_xi + (dim * dim) as f64) * self.log_term(k, class_size);
        self.c_alpha * inner.max(0.0).sqrt()
    }

    /// `lambda_k = c_lambda d ln(M k / delta)`.
    pub fn lambda(&self, k: usize, class_size: usize, dim: usize) -> f64 {
        self.c_lambda * dim as f64 * self.log_term(k, class_size)
    }
}

/// User overrides applied on top of the default schedule. Overriding `xi`
/// re-derives `L` from the formula unless `L` is also given, and a changed
/// `L` re-derives `eta` unless `eta` is also given.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Overrides {
    pub xi: Option<f64>,
    pub epoch_len: Option<usize>,
    pub eta: Option<f64>,
    pub c_alpha: Option<f64>,
    pub c_lambda: Option<f64>,
}

/// Episode indices (1-based) at which epochs start.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochSchedule {
    starts: Vec<usize>,
    k_episodes: usize,
}

impl EpochSchedule {
    pub fn new(k_episodes: usize, epoch_len: usize) -> Result<Self> {
        if k_episodes == 0 || epoch_len == 0 {
            return Err(Error::InvalidArgument("K and L must be at least 1".into()));
        }
        Ok(EpochSchedule {
            starts: (1..=k_episodes).step_by(epoch_len).collect(),
            k_episodes,
        })
    }

    pub fn starts(&self) -> &[usize] {
        &self.starts
    }

    pub fn n_epochs(&self) -> usize {
        self.starts.len()
    }

    pub fn k_episodes(&self) -> usize {
        self.k_episodes
    }

    pub fn is_start(&self, k: usize) -> bool {
        self.starts.binary_search(&k).is_ok()
    }

    /// 1-based epoch containing episode `k`.
    pub fn epoch_of(&self, k: usize) -> usize {
        match self.starts.binary_search(&k) {
            Ok(i) => i + 1,
            Err(i) => i,
        }
    }
}

/// A resolved schedule together with the unclipped formula values.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub params: HyperParams,
    pub epochs: EpochSchedule,
    pub xi_raw: f64,
    pub epoch_len_raw: f64,
}

fn epoch_len_formula(k: usize, a: usize, d: usize, gamma: f64, xi: f64) -> (usize, f64) {
    let raw = (k as f64).sqrt() / (a as f64).sqrt() / d as f64 * xi * (1.0 - gamma);
    (raw.round().max(1.0) as usize, raw)
}

fn eta_formula(a: usize, gamma: f64, epoch_len: usize) -> f64 {
    (1.0 - gamma) * ((a as f64).ln() / (2.0 * epoch_len as f64)).sqrt()
}

/// `xi = min(1, K^{-1/6} A^{1/2} d / (1 - gamma))`,
/// `L = max(1, round(K^{1/2} A^{-1/2} d^{-1} xi (1 - gamma)))`,
/// `eta = (1 - gamma) sqrt(ln A / (2 L))`, `delta = 1 / K`.
pub fn default_schedule(
    k: usize,
    n_actions: usize,
    dim: usize,
    gamma: f64,
    c_alpha: f64,
    c_lambda: f64,
) -> Result<Schedule> {
    schedule_with_overrides(
        k,
        n_actions,
        dim,
        gamma,
        &Overrides {
            c_alpha: Some(c_alpha),
            c_lambda: Some(c_lambda),
            ..Overrides::default()
        },
    )
}

pub fn schedule_with_overrides(k: usize, n_actions: usize, dim: usize, gamma: f64, ov: &Overrides) -> Result<Schedule> {
    if k == 0 {
        return Err(Error::InvalidArgument("K must be at least 1".into()));
    }
    if n_actions < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 actions (ln A = 0 makes eta vanish), got {n_actions}"
        )));
    }
    if dim == 0 || !(0.0..1.0).contains(&gamma) {
        return Err(Error::InvalidArgument(format!("need d >= 1 and gamma in [0, 1), got d = {dim}, gamma = {gamma}")));
    }
    let xi_raw = (k as f64).powf(-1.0 / 6.0) * (n_actions as f64).sqrt() * dim as f64 / (1.0 - gamma);
    let xi_default = xi_raw.min(1.0);
    let xi = ov.xi.unwrap_or(xi_default);
    let (epoch_len_formula, epoch_len_raw) = epoch_len_formula(k, n_actions, dim, gamma, xi);
    let epoch_len = ov.epoch_len.unwrap_or(epoch_len_formula);
    let eta = ov.eta.unwrap_or_else(|| eta_formula(n_actions, gamma, epoch_len));
    let params = HyperParams {
        k_episodes: k,
        xi,
        epoch_len,
        eta,
        c_alpha: ov.c_alpha.unwrap_or(DEFAULT_C_ALPHA),
        c_lambda: ov.c_lambda.unwrap_or(DEFAULT_C_LAMBDA),
        delta: 1.0 / k as f64,
        alpha_xi: if xi > 0.0 { xi } else { xi_default },
    };
    params.validate()?;
    Ok(Schedule {
        params,
        epochs: EpochSchedule::new(k, epoch_len)?,
        xi_raw,
        epoch_len_raw,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_schedule_reference_values() {
        let s = default_schedule(46656, 2, 1, 0.0, 0.5, 1.0).unwrap();
        assert!((s.params.xi - 2f64.sqrt() / 6.0).abs() < 1e-12);
        assert!((s.params.xi - 0.23570).abs() < 1e-5);
        assert_eq!(s.params.epoch_len, 36);
        assert!((s.params.eta - (2f64.ln() / 72.0).sqrt()).abs() < 1e-15);
        assert!((s.params.eta - 0.09811).abs() < 1e-5);
        assert_eq!(s.epochs.n_epochs(), 1296);
        assert!((s.params.delta - 1.0 / 46656.0).abs() < 1e-20);
    }

    #[test]
    fn xi_is_clipped() {
        let s = default_schedule(46656, 4, 2, 0.5, 0.5, 1.0).unwrap();
        assert!((s.xi_raw - 4.0 / 3.0).abs() < 1e-12);
        assert_eq!(s.params.xi, 1.0);
    }

    #[test]
    fn single_action_is_rejected() {
        assert!(default_schedule(100, 1, 2, 0.5, 0.5, 1.0).is_err());
        assert!(default_schedule(0, 2, 2, 0.5, 0.5, 1.0).is_err());
    }

    #[test]
    fn overrides_cascade() {
        let base = default_schedule(46656, 2, 1, 0.0, 0.5, 1.0).unwrap().params;
        let ov = Overrides {
            xi: Some(0.5),
            ..Overrides::default()
        };
        let s = schedule_with_overrides(46656, 2, 1, 0.0, &ov).unwrap().params;
        assert_eq!(s.epoch_len, (216.0 / 2f64.sqrt() * 0.5f64).round() as usize);
        assert!((s.eta - (2f64.ln() / (2.0 * s.epoch_len as f64)).sqrt()).abs() < 1e-15);
        let ov = Overrides {
            xi: Some(0.0),
            epoch_len: Some(36),
            ..Overrides::default()
        };
        let s = schedule_with_overrides(46656, 2, 1, 0.0, &ov).unwrap().params;
        assert_eq!(s.xi, 0.0);
        assert_eq!(s.alpha_xi, base.xi);
        assert_eq!(s.eta, base.eta);
    }

    #[test]
    fn zero_c_alpha_gives_zero_alpha() {
        let mut p = default_schedule(1000, 3, 2, 0.9, 0.0, 1.0).unwrap().params;
        assert_eq!(p.alpha(10, 16, 3, 2, 0.9), 0.0);
        p.c_alpha = 1.0;
        let expect = (0.9 * (3.0 / p.xi + 4.0) * (16.0 * 10.0 * 1000.0f64).ln()).sqrt();
        assert!((p.alpha(10, 16, 3, 2, 0.9) - expect).abs() < 1e-12);
        assert!((p.lambda(10, 16, 2) - 2.0 * (16.0 * 10.0 * 1000.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn epoch_schedule_truncates_last_epoch() {
        let e = EpochSchedule::new(10, 4).unwrap();
        assert_eq!(e.starts(), &[1, 5, 9]);
        assert_eq!(e.epoch_of(1), 1);
        assert_eq!(e.epoch_of(4), 1);
        assert_eq!(e.epoch_of(5), 2);
        assert_eq!(e.epoch_of(10), 3);
        assert!(e.is_start(9) && !e.is_start(10));
    }
}
