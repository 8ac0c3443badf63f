//! Oblivious adversaries: loss sequences generated in full before the
//! learner interacts with the environment.

use crate::error::{Error, Result};
use crate::rng::StreamRng;
use crate::tables::{LossFunction, SaTable};
use rand::Rng;
use std::fmt::Write as _;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdversaryKind {
    Fixed,
    Switching,
    Stochastic,
    /// Loaded from a dump or assembled by hand.
    Custom,
}

impl AdversaryKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AdversaryKind::Fixed => "fixed",
            AdversaryKind::Switching => "switching",
            AdversaryKind::Stochastic => "stochastic",
            AdversaryKind::Custom => "custom",
        }
    }
}

impl FromStr for AdversaryKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed" => Ok(AdversaryKind::Fixed),
            "switching" => Ok(AdversaryKind::Switching),
            "stochastic" => Ok(AdversaryKind::Stochastic),
            "custom" => Ok(AdversaryKind::Custom),
            other => Err(Error::Parse(format!("unknown adversary kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossSequence {
    losses: Vec<LossFunction>,
    kind: AdversaryKind,
    seed: Option<u64>,
}

impl LossSequence {
    pub fn new(losses: Vec<LossFunction>, kind: AdversaryKind, seed: Option<u64>) -> Result<Self> {
        let first = losses
            .first()
            .ok_or_else(|| Error::InvalidArgument("loss sequence needs K >= 1".into()))?;
        if losses.iter().any(|l| !l.table().same_shape(first.table())) {
            return Err(Error::Shape("losses differ in shape".into()));
        }
        Ok(LossSequence { losses, kind, seed })
    }

    pub fn len(&self) -> usize {
        self.losses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.losses.is_empty()
    }

    pub fn kind(&self) -> AdversaryKind {
        self.kind
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    /// Loss of episode `k`, 0-based.
    pub fn get(&self, k: usize) -> &LossFunction {
        &self.losses[k]
    }

    pub fn losses(&self) -> &[LossFunction] {
        &self.losses
    }

    pub fn n_states(&self) -> usize {
        self.losses[0].n_states()
    }

    pub fn n_actions(&self) -> usize {
        self.losses[0].n_actions()
    }

    /// `(1/K) sum_k l_k`.
    pub fn average(&self) -> SaTable {
        let mut acc = SaTable::zeros(self.n_states(), self.n_actions());
        for l in &self.losses {
            acc = acc.add(l.table()).expect("shapes checked at construction");
        }
        acc.scale(1.0 / self.len() as f64)
    }

    /// One block per episode: `S` lines of `A` comma-separated values,
    /// blocks separated by a blank line, after a `#` header line.
    pub fn dump(&self) -> String {
        let mut out = format!(
            "# kind={} seed={} K={} S={} A={}\n",
            self.kind.as_str(),
            self.seed.map_or("none".to_string(), |s| s.to_string()),
            self.len(),
            self.n_states(),
            self.n_actions()
        );
        for (k, l) in self.losses.iter().enumerate() {
            if k > 0 {
                out.push('\n');
            }
            for s in 0..l.n_states() {
                let row: Vec<String> = l.table().row(s).iter().map(|v| format!("{v:.16e}")).collect();
                let _ = writeln!(out, "{}", row.join(","));
            }
        }
        out
    }

    pub fn load(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .and_then(|h| h.strip_prefix('#'))
            .ok_or_else(|| Error::Parse("missing '#' header line".into()))?;
        let mut kind = AdversaryKind::Custom;
        let mut seed = None;
        let (mut k, mut n, mut n_a) = (None, None, None);
        for field in header.split_whitespace() {
            let (key, value) = field
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("bad header field '{field}'")))?;
            let count = || value.parse::<usize>().map_err(|e| Error::Parse(format!("{key}: {e}")));
            match key {
                "kind" => kind = value.parse()?,
                "seed" if value != "none" => {
                    seed = Some(value.parse().map_err(|e| Error::Parse(format!("seed: {e}")))?)
                }
                "seed" => {}
                "K" => k = Some(count()?),
                "S" => n = Some(count()?),
                "A" => n_a = Some(count()?),
                other => return Err(Error::Parse(format!("unknown header key '{other}'"))),
            }
        }
        let (k, n, n_a) = match (k, n, n_a) {
            (Some(k), Some(n), Some(a)) => (k, n, a),
            _ => return Err(Error::Parse("header needs K, S and A".into())),
        };
        let rows: Vec<&str> = lines.filter(|l| !l.trim().is_empty()).collect();
        if rows.len() != k * n {
            return Err(Error::Parse(format!("expected {} rows, found {}", k * n, rows.len())));
        }
        let mut losses = Vec::with_capacity(k);
        for block in rows.chunks(n) {
            let mut values = Vec::with_capacity(n * n_a);
            for row in block {
                let parsed: Vec<f64> = row
                    .split(',')
                    .map(|v| v.trim().parse::<f64>().map_err(|e| Error::Parse(format!("'{v}': {e}"))))
                    .collect::<Result<_>>()?;
                if parsed.len() != n_a {
                    return Err(Error::Parse(format!("row has {} entries, expected {n_a}", parsed.len())));
                }
                values.extend(parsed);
            }
            losses.push(LossFunction::new(SaTable::from_vec(n, n_a, values)?)?);
        }
        LossSequence::new(losses, kind, seed)
    }
}

pub fn make_fixed(base: &LossFunction, k: usize) -> Result<LossSequence> {
    LossSequence::new(vec![base.clone(); k], AdversaryKind::Fixed, None)
}

/// Blocks of `period` episodes alternating between `l_a` and `l_b`,
/// starting with `l_a`.
pub fn make_switching(l_a: &LossFunction, l_b: &LossFunction, period: usize, k: usize) -> Result<LossSequence> {
    if period == 0 {
        return Err(Error::InvalidArgument("switching period must be at least 1".into()));
    }
    let losses = (0..k)
        .map(|i| if (i / period) % 2 == 0 { l_a.clone() } else { l_b.clone() })
        .collect();
    LossSequence::new(losses, AdversaryKind::Switching, None)
}

/// `mean + U(-noise_scale, noise_scale)` entrywise and independently per
/// episode, clamped to `[0, 1]`.
pub fn make_stochastic(
    mean: &LossFunction,
    noise_scale: f64,
    k: usize,
    rng: &mut StreamRng,
    seed: Option<u64>,
) -> Result<LossSequence> {
    if !(0.0..=0.5).contains(&noise_scale) {
        return Err(Error::InvalidArgument(format!("noise_scale = {noise_scale} not in [0, 0.5]")));
    }
    let (n, n_a) = (mean.n_states(), mean.n_actions());
    let mut losses = Vec::with_capacity(k);
    for _ in 0..k {
        let table = SaTable::from_fn(n, n_a, |s, a| {
            let noise = if noise_scale > 0.0 {
                rng.random_range(-noise_scale..noise_scale)
            } else {
                0.0
            };
            (mean.get(s, a) + noise).clamp(0.0, 1.0)
        });
        losses.push(LossFunction::new(table)?);
    }
    LossSequence::new(losses, AdversaryKind::Stochastic, seed)
}

/// A loss table with i.i.d. `U(0, 1)` entries.
pub fn random_loss(n_states: usize, n_actions: usize, rng: &mut StreamRng) -> LossFunction {
    LossFunction::new(SaTable::from_fn(n_states, n_actions, |_, _| rng.random::<f64>()))
        .expect("uniform draws lie in [0, 1]")
}
