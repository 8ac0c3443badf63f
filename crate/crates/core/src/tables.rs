//! Dense state-action tables, policies and loss functions.

use crate::error::{check_index, Error, Result};

const SIMPLEX_TOL: f64 = 1e-12;

/// A dense `S x A` table of reals, row-major by state.
#[derive(Debug, Clone, PartialEq)]
pub struct SaTable {
    n_states: usize,
    n_actions: usize,
    values: Vec<f64>,
}

impl SaTable {
    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        Self::filled(n_states, n_actions, 0.0)
    }

    pub fn filled(n_states: usize, n_actions: usize, value: f64) -> Self {
        SaTable {
            n_states,
            n_actions,
            values: vec![value; n_states * n_actions],
        }
    }

    pub fn from_vec(n_states: usize, n_actions: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n_states * n_actions {
            return Err(Error::Shape(format!(
                "expected {} entries for a {}x{} table, got {}",
                n_states * n_actions,
                n_states,
                n_actions,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("table entries must be finite".into()));
        }
        Ok(SaTable {
            n_states,
            n_actions,
            values,
        })
    }

    pub fn from_fn(n_states: usize, n_actions: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(n_states * n_actions);
        for s in 0..n_states {
            for a in 0..n_actions {
                values.push(f(s, a));
            }
        }
        SaTable {
            n_states,
            n_actions,
            values,
        }
    }

    #[inline]
    pub fn n_states(&self) -> usize {
        self.n_states
    }

    #[inline]
    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    #[inline]
    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[s * self.n_actions + a]
    }

    #[inline]
    pub fn set(&mut self, s: usize, a: usize, v: f64) {
        self.values[s * self.n_actions + a] = v;
    }

    #[inline]
    pub fn row(&self, s: usize) -> &[f64] {
        &self.values[s * self.n_actions..(s + 1) * self.n_actions]
    }

    #[inline]
    pub fn row_mut(&mut self, s: usize) -> &mut [f64] {
        &mut self.values[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn same_shape(&self, other: &SaTable) -> bool {
        self.n_states == other.n_states && self.n_actions == other.n_actions
    }

    fn zip_with(&self, other: &SaTable, f: impl Fn(f64, f64) -> f64) -> Result<SaTable> {
        if !self.same_shape(other) {
            return Err(Error::Shape(format!(
                "{}x{} vs {}x{}",
                self.n_states, self.n_actions, other.n_states, other.n_actions
            )));
        }
        Ok(SaTable {
            n_states: self.n_states,
            n_actions: self.n_actions,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&x, &y)| f(x, y))
                .collect(),
        })
    }

    pub fn add(&self, other: &SaTable) -> Result<SaTable> {
        self.zip_with(other, |x, y| x + y)
    }

    pub fn sub(&self, other: &SaTable) -> Result<SaTable> {
        self.zip_with(other, |x, y| x - y)
    }

    pub fn scale(&self, c: f64) -> SaTable {
        SaTable {
            n_states: self.n_states,
            n_actions: self.n_actions,
            values: self.values.iter().map(|x| x * c).collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_abs_diff(&self, other: &SaTable) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (x, y)| m.max((x - y).abs()))
    }

    /// Sum over `(s, a)` of `weights(s, a) * self(s, a)`.
    pub fn dot(&self, weights: &SaTable) -> f64 {
        self.values.iter().zip(&weights.values).map(|(x, w)| x * w).sum()
    }
}

/// A stochastic policy: one probability vector over actions per state.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    table: SaTable,
}

impl Policy {
    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Policy {
            table: SaTable::filled(n_states, n_actions, 1.0 / n_actions as f64),
        }
    }

    pub fn deterministic(n_actions: usize, actions: &[usize]) -> Result<Self> {
        let mut table = SaTable::zeros(actions.len(), n_actions);
        for (s, &a) in actions.iter().enumerate() {
            check_index("action", a, n_actions)?;
            table.set(s, a, 1.0);
        }
        Ok(Policy { table })
    }

    /// Builds a policy from a table whose rows must lie on the simplex
    /// within `1e-12`.
    pub fn from_table(table: SaTable) -> Result<Self> {
        for s in 0..table.n_states() {
            let row = table.row(s);
            if row.iter().any(|&p| p < 0.0) {
                return Err(Error::InvalidArgument(format!("negative probability in row {s}")));
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > SIMPLEX_TOL {
                return Err(Error::InvalidArgument(format!(
                    "policy row {s} sums to {total}"
                )));
            }
        }
        Ok(Policy { table })
    }

    /// Builds a policy by normalising each nonnegative row.
    pub fn from_weights(mut table: SaTable) -> Result<Self> {
        for s in 0..table.n_states() {
            let row = table.row_mut(s);
            if row.iter().any(|&w| w < 0.0 || !w.is_finite()) {
                return Err(Error::InvalidArgument(format!("bad weight in row {s}")));
            }
            let total: f64 = row.iter().sum();
            if total <= 0.0 {
                return Err(Error::InvalidArgument(format!("row {s} has zero mass")));
            }
            row.iter_mut().for_each(|w| *w /= total);
        }
        Ok(Policy { table })
    }

    #[inline]
    pub fn n_states(&self) -> usize {
        self.table.n_states()
    }

    #[inline]
    pub fn n_actions(&self) -> usize {
        self.table.n_actions()
    }

    #[inline]
    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.table.get(s, a)
    }

    #[inline]
    pub fn row(&self, s: usize) -> &[f64] {
        self.table.row(s)
    }

    pub fn table(&self) -> &SaTable {
        &self.table
    }

    /// `weight * other + (1 - weight) * self`, row by row.
    pub fn mix(&self, other: &Policy, weight: f64) -> Result<Policy> {
        let table = self
            .table
            .zip_with(&other.table, |x, y| (1.0 - weight) * x + weight * y)?;
        Ok(Policy { table })
    }

    /// Largest deviation of any row sum from one, or of any entry below zero.
    pub fn simplex_violation(&self) -> f64 {
        (0..self.n_states())
            .map(|s| {
                let row = self.row(s);
                let sum_err = (row.iter().sum::<f64>() - 1.0).abs();
                let neg = row.iter().fold(0.0f64, |m, &p| m.max(-p));
                sum_err.max(neg)
            })
            .fold(0.0, f64::max)
    }

    /// Index of the most likely action in each state (lowest index on ties).
    pub fn greedy_actions(&self) -> Vec<usize> {
        (0..self.n_states())
            .map(|s| {
                let row = self.row(s);
                let mut best = 0;
                for a in 1..row.len() {
                    if row[a] > row[best] {
                        best = a;
                    }
                }
                best
            })
            .collect()
    }
}

/// A loss function `S x A -> [0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LossFunction {
    table: SaTable,
}

impl LossFunction {
    pub fn new(table: SaTable) -> Result<Self> {
        if let Some(v) = table.values().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!("loss entry {v} outside [0, 1]")));
        }
        Ok(LossFunction { table })
    }

    pub fn constant(n_states: usize, n_actions: usize, value: f64) -> Result<Self> {
        Self::new(SaTable::filled(n_states, n_actions, value))
    }

    pub fn table(&self) -> &SaTable {
        &self.table
    }

    pub fn into_table(self) -> SaTable {
        self.table
    }

    #[inline]
    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.table.get(s, a)
    }

    pub fn n_states(&self) -> usize {
        self.table.n_states()
    }

    pub fn n_actions(&self) -> usize {
        self.table.n_actions()
    }
}

/// Samples an index from a probability vector by inverse CDF.
pub fn sample_index(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // u fell past the accumulated mass through rounding; pick the last
    // index with positive probability.
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}
