use super::LowRankMdp;
use crate::rng::StreamRng;
use crate::tables::{sample_index, Policy};
use rand::Rng;

/// Outcome of one geometric roll-in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RollIn {
    pub state: usize,
    pub steps: usize,
    /// Set when the hard step cap stopped the walk.
    pub truncated: bool,
}

impl LowRankMdp {
    /// Hard cap on roll-in length: `ceil(ln(1e6) / (1 - gamma))`.
    pub fn roll_in_cap(&self) -> usize {
        (1e6f64.ln() / (1.0 - self.gamma())).ceil() as usize
    }

    /// Draws `s ~ d^pi` by walking from `s0 ~ d0` and stopping each step with
    /// probability `1 - gamma`.
    pub fn roll_in_sample(&self, policy: &Policy, rng: &mut StreamRng) -> RollIn {
        let cap = self.roll_in_cap();
        let gamma = self.gamma();
        let mut state = self.sample_initial(rng);
        let mut steps = 0;
        loop {
            if rng.random::<f64>() >= gamma {
                return RollIn {
                    state,
                    steps,
                    truncated: false,
                };
            }
            if steps >= cap {
                return RollIn {
                    state,
                    steps,
                    truncated: true,
                };
            }
            let action = sample_index(policy.row(state), rng.random::<f64>());
            state = sample_index(self.transitions().row(state, action), rng.random::<f64>());
            steps += 1;
        }
    }
}
