//! Edge-node posterior over a sensor's hidden battery.
//!
//! Under the battery dynamics the reachable beliefs are exactly the vectors
//! `Λ^m ρ^j`: a reset distribution `ρ^j` pinned by the last command outcome
//! (anchor `j`), propagated by `m` harvest-only slots (age `m`). The
//! [`BeliefAtlas`] tabulates them for ages `0..M`, freezing the belief at age
//! `M - 1`, so a belief is a compact [`BeliefIndex`] rather than a vector.
//!
//! Bayes check of the reset vectors: a delivered update reporting level `j`
//! means `b(t) = j`, the transmission spends one unit and the slot's arrival
//! lands afterwards, so `b(t+1)` is `j - 1` w.p. `1 - λ` and `j` w.p. `λ`. An
//! unanswered command proves `b(t) = 0`, after which `b(t+1) = e(t)`, giving
//! `ρ^0 = ρ^1`. Without a command nothing is observed about the battery and the
//! posterior simply propagates through `Λ`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::SensorParams;

/// Default L1 tolerance used to pick the truncation depth for solving.
pub const DEFAULT_TOL: f64 = 1e-6;
/// Looser tolerance acceptable for quick desk runs.
pub const DESK_TOL: f64 = 1e-4;
/// Default hard cap on the truncation depth.
pub const DEFAULT_HARD_CAP: usize = 4000;

/// Probability vector over battery levels `0..=B`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefVector(Vec<f64>);

impl BeliefVector {
    /// Validates non-negativity and unit mass (within 1e-12).
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InvalidParams("empty belief".into()));
        }
        if entries.iter().any(|&x| !(x >= 0.0)) {
            return Err(Error::InvalidParams("negative belief entry".into()));
        }
        let mass: f64 = entries.iter().sum();
        if (mass - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParams(format!("belief mass {mass} != 1")));
        }
        Ok(Self(entries))
    }

    /// Point mass at `level` in a `capacity + 1` dimensional space.
    pub fn point_mass(level: usize, capacity: usize) -> Self {
        let mut v = vec![0.0; capacity + 1];
        v[level] = 1.0;
        Self(v)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Expected battery level.
    pub fn mean(&self) -> f64 {
        self.0.iter().enumerate().map(|(j, &x)| j as f64 * x).sum()
    }

    pub fn l1_distance(&self, other: &BeliefVector) -> f64 {
        l1(&self.0, &other.0)
    }
}

fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// One harvest-only slot: multiplies the belief by the lower-bidiagonal
/// harvest matrix `Λ`.
pub fn apply_harvest(beta: &BeliefVector, lambda: f64) -> BeliefVector {
    let mut out = vec![0.0; beta.0.len()];
    harvest_into(&beta.0, lambda, &mut out);
    BeliefVector(out)
}

fn harvest_into(beta: &[f64], lambda: f64, out: &mut [f64]) {
    let top = beta.len() - 1;
    out[0] = (1.0 - lambda) * beta[0];
    for j in 1..top {
        out[j] = (1.0 - lambda) * beta[j] + lambda * beta[j - 1];
    }
    if top >= 1 {
        out[top] = beta[top] + lambda * beta[top - 1];
    } else {
        out[0] = beta[0];
    }
}

/// Belief right after a command outcome pinned the battery at `anchor`
/// (`anchor = 0` for an unanswered command).
pub fn reset_belief(anchor: usize, lambda: f64, capacity: usize) -> BeliefVector {
    let mut v = vec![0.0; capacity + 1];
    let low = anchor.max(1) - 1;
    v[low] += 1.0 - lambda;
    v[low + 1] += lambda;
    BeliefVector(v)
}

/// Compact belief handle: `Λ^age ρ^anchor`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BeliefIndex {
    pub anchor: usize,
    pub age: usize,
}

impl BeliefIndex {
    pub const fn new(anchor: usize, age: usize) -> Self {
        Self { anchor, age }
    }
}

/// Finite truncated belief space of one parameter class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefAtlas {
    params: SensorParams,
    depth: usize,
    tol: f64,
    hard_cap: usize,
    capped: bool,
    /// `(anchor * depth + age) * (B + 1) + level`.
    table: Vec<f64>,
}

impl BeliefAtlas {
    /// Tabulates `Λ^m ρ^j` for every anchor until the age-`m` belief of every
    /// anchor is within `tol` (L1) of a full battery; that age becomes the
    /// frozen age `M - 1`. Stops at `hard_cap` entries per anchor and records
    /// the fact in [`BeliefAtlas::hit_cap`].
    pub fn build(params: SensorParams, tol: f64, hard_cap: usize) -> Result<Self> {
        if !(tol > 0.0) {
            return Err(Error::InvalidParams("atlas tolerance must be positive".into()));
        }
        if hard_cap < 1 {
            return Err(Error::InvalidParams("atlas hard cap must be >= 1".into()));
        }
        let cap = params.capacity();
        let dim = cap + 1;
        let lambda = params.lambda();
        let full = BeliefVector::point_mass(cap, cap);

        // columns[j] holds the ages of anchor j as they are generated
        let mut columns: Vec<Vec<f64>> = (0..=cap)
            .map(|j| reset_belief(j, lambda, cap).into_inner())
            .collect();
        let mut depth = 1;
        let mut capped = false;
        loop {
            let worst = columns
                .iter()
                .map(|col| l1(&col[(depth - 1) * dim..depth * dim], full.as_slice()))
                .fold(0.0, f64::max);
            if worst <= tol {
                break;
            }
            if depth >= hard_cap {
                capped = true;
                log::warn!(
                    "belief atlas for lambda={} hit the hard cap M={} (residual {:.3e})",
                    lambda,
                    hard_cap,
                    worst
                );
                break;
            }
            for col in columns.iter_mut() {
                let start = (depth - 1) * dim;
                let prev: Vec<f64> = col[start..start + dim].to_vec();
                col.resize(col.len() + dim, 0.0);
                harvest_into(&prev, lambda, &mut col[start + dim..start + 2 * dim]);
            }
            depth += 1;
        }
        let table = columns.into_iter().flatten().collect();
        Ok(Self {
            params,
            depth,
            tol,
            hard_cap,
            capped,
            table,
        })
    }

    pub fn params(&self) -> &SensorParams {
        &self.params
    }

    /// Truncation depth `M`: ages run over `0..M`.
    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn tolerance(&self) -> f64 {
        self.tol
    }

    pub fn hard_cap(&self) -> usize {
        self.hard_cap
    }

    /// True when the depth was limited by the hard cap rather than `tol`.
    pub fn hit_cap(&self) -> bool {
        self.capped
    }

    /// Number of tabulated beliefs, `(B + 1) * M`.
    pub fn len(&self) -> usize {
        (self.params.capacity() + 1) * self.depth
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Dense position of an index in `0..len()`.
    #[inline]
    pub fn slot(&self, idx: BeliefIndex) -> usize {
        idx.anchor * self.depth + idx.age
    }

    #[inline]
    pub fn index_at(&self, slot: usize) -> BeliefIndex {
        BeliefIndex::new(slot / self.depth, slot % self.depth)
    }

    fn check(&self, idx: BeliefIndex) -> Result<()> {
        if idx.anchor > self.params.capacity() || idx.age >= self.depth {
            return Err(Error::IndexOutOfRange {
                anchor: idx.anchor,
                age: idx.age,
                capacity: self.params.capacity(),
                depth: self.depth,
            });
        }
        Ok(())
    }

    /// Probability entries of the indexed belief, without bounds checks
    /// beyond slice indexing.
    #[inline]
    pub fn row(&self, idx: BeliefIndex) -> &[f64] {
        let dim = self.params.capacity() + 1;
        let start = self.slot(idx) * dim;
        &self.table[start..start + dim]
    }

    /// Precomputed `Λ^age ρ^anchor`.
    pub fn belief_of_index(&self, idx: BeliefIndex) -> Result<BeliefVector> {
        self.check(idx)?;
        Ok(BeliefVector(self.row(idx).to_vec()))
    }

    /// Belief index after one slot. `report` carries the battery level of a
    /// delivered update.
    pub fn update(&self, idx: BeliefIndex, command: bool, report: Option<usize>) -> Result<BeliefIndex> {
        self.check(idx)?;
        match (command, report) {
            (false, None) => Ok(BeliefIndex::new(idx.anchor, (idx.age + 1).min(self.depth - 1))),
            (false, Some(_)) => Err(Error::Protocol("update delivered without a command".into())),
            (true, None) => Ok(BeliefIndex::new(0, 0)),
            (true, Some(level)) => {
                if level == 0 || level > self.params.capacity() {
                    return Err(Error::Protocol(format!("reported battery level {level} out of range")));
                }
                Ok(BeliefIndex::new(level, 0))
            }
        }
    }

    /// Index the controller starts from: anchor `B`, age 0.
    pub fn initial_index(&self) -> BeliefIndex {
        BeliefIndex::new(self.params.capacity(), 0)
    }
}
