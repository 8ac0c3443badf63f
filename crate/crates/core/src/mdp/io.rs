//! Plain-text (TOML) serialization of low-rank MDPs. Floats are written
//! with 17 significant digits so every value round-trips exactly.

use super::{Factorization, LowRankMdp};
use crate::error::{Error, Result};
use serde::Deserialize;
use std::fmt::Write as _;
use std::path::Path;

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MdpDocument {
    n_states: usize,
    n_actions: usize,
    dim: usize,
    gamma: f64,
    init_dist: Vec<f64>,
    /// `S * A` rows of length `d`, ordered by `(s, a)`.
    phi: Vec<Vec<f64>>,
    /// `S` rows of length `d`.
    mu: Vec<Vec<f64>>,
}

fn float_list(values: &[f64]) -> String {
    let items: Vec<String> = values.iter().map(|v| format!("{v:.16e}")).collect();
    format!("[{}]", items.join(", "))
}

fn flatten(rows: Vec<Vec<f64>>, width: usize, what: &str) -> Result<Vec<f64>> {
    if let Some(bad) = rows.iter().position(|r| r.len() != width) {
        return Err(Error::Parse(format!("{what} row {bad} has length {}, expected {width}", rows[bad].len())));
    }
    Ok(rows.into_iter().flatten().collect())
}

impl LowRankMdp {
    pub fn to_toml(&self) -> String {
        let f = self.factors();
        let d = f.dim();
        let mut out = String::new();
        let _ = writeln!(out, "n_states = {}", f.n_states());
        let _ = writeln!(out, "n_actions = {}", f.n_actions());
        let _ = writeln!(out, "dim = {d}");
        let _ = writeln!(out, "gamma = {:.16e}", self.gamma());
        let _ = writeln!(out, "init_dist = {}", float_list(self.init_dist()));
        out.push_str("phi = [\n");
        for row in f.phi_flat().chunks(d) {
            let _ = writeln!(out, "  {},", float_list(row));
        }
        out.push_str("]\nmu = [\n");
        for row in f.mu_flat().chunks(d) {
            let _ = writeln!(out, "  {},", float_list(row));
        }
        out.push_str("]\n");
        out
    }

    /// Parses the document written by [`LowRankMdp::to_toml`]. Shape and
    /// distribution checks apply; low-rank validation is left to the caller.
    pub fn from_toml(text: &str) -> Result<Self> {
        let doc: MdpDocument = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        if doc.phi.len() != doc.n_states * doc.n_actions {
            return Err(Error::Parse(format!(
                "phi has {} rows, expected n_states * n_actions = {}",
                doc.phi.len(),
                doc.n_states * doc.n_actions
            )));
        }
        if doc.mu.len() != doc.n_states {
            return Err(Error::Parse(format!("mu has {} rows, expected {}", doc.mu.len(), doc.n_states)));
        }
        let phi = flatten(doc.phi, doc.dim, "phi")?;
        let mu = flatten(doc.mu, doc.dim, "mu")?;
        let factors = Factorization::new(doc.n_states, doc.n_actions, doc.dim, phi, mu)?;
        LowRankMdp::new(factors, doc.gamma, doc.init_dist)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    #[test]
    fn round_trip_is_exact() {
        let mut rng = stream(21, Stream::Instance);
        let mdp = LowRankMdp::random(4, 3, 2, 0.9, 0.4, &mut rng).unwrap();
        let back = LowRankMdp::from_toml(&mdp.to_toml()).unwrap();
        assert_eq!(back.factors(), mdp.factors());
        assert_eq!(back.gamma().to_bits(), mdp.gamma().to_bits());
        assert_eq!(back.init_dist(), mdp.init_dist());
    }

    #[test]
    fn shape_errors_are_reported() {
        let mut rng = stream(22, Stream::Instance);
        let text = LowRankMdp::random(2, 2, 1, 0.5, 1.0, &mut rng).unwrap().to_toml();
        let short = text.replace("n_actions = 2", "n_actions = 3");
        assert!(matches!(LowRankMdp::from_toml(&short), Err(Error::Parse(_))));
        assert!(LowRankMdp::from_toml("n_states = 1").is_err());
        assert!(LowRankMdp::from_toml(&format!("{text}extra = 1\n")).is_err());
    }
}
