//! Per-sensor Lagrangian problem over belief-states `(belief, request, AoI)`.
//!
//! The belief-state grid has `(B + 1) * M * 2 * Δmax` states. Only a fraction
//! of it can ever be entered from the controller's start state: after a
//! delivery the AoI is 1 and then grows in lock-step with the belief age, so
//! relative value iteration runs on the closed set reachable from the start
//! cell (closed under both actions) and the remaining states are filled in
//! afterwards by one backward pass in decreasing (age, AoI) order, which
//! solves their Bellman equations exactly given the gain. The request bit is
//! drawn fresh every slot, so successors are averaged over it once per cell.
//!
//! Long-run rates of a fixed policy come from the regenerative structure of
//! the closed-loop chain: every command outcome lands on an age-0 cell, and
//! an uncommanded sensor drifts deterministically towards its frozen
//! full-battery cell. The embedded chain on those entry cells is small; its
//! stationary law weighted by expected sojourn rewards gives the exact rates.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::belief::{BeliefAtlas, BeliefIndex};
use crate::chain::{limiting_distribution, SparseKernel, STATIONARY_MAX_ITERS, STATIONARY_TOL};
use crate::error::{Error, Result};
use crate::model::SensorParams;
use crate::table::ActionTable;

/// Ties `|Q0 - Q1| <= TIE_EPS` resolve to no command.
/// Per-walk probability of a jump to the reference cell used while
/// evaluating policies in policy iteration, so that a policy that never
/// commands in some region still has one recurrent class.
const PI_RESTART: f64 = 1e-9;

pub const TIE_EPS: f64 = 1e-12;

/// Relative value iteration settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RviaConfig {
    /// Span stopping threshold.
    pub theta: f64,
    pub max_sweeps: usize,
}

impl RviaConfig {
    pub const DESK: RviaConfig = RviaConfig {
        theta: 1e-4,
        max_sweeps: 100_000,
    };
    pub const RELEASE: RviaConfig = RviaConfig {
        theta: 1e-6,
        max_sweeps: 100_000,
    };
}

impl Default for RviaConfig {
    fn default() -> Self {
        Self::RELEASE
    }
}

/// Belief-state `z = (belief index, request, AoI)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GridState {
    pub belief: BeliefIndex,
    pub request: bool,
    pub aoi: usize,
}

/// Long-run per-slot averages of a policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    /// Average on-demand AoI per slot.
    pub cost: f64,
    /// Average number of commands per slot.
    pub commands: f64,
    /// False when the stationary solve hit its iteration cap.
    pub converged: bool,
}

/// Deterministic per-sensor policy over the whole belief-state grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerSensorPolicy {
    pub mu: f64,
    pub depth: usize,
    pub delta_max: usize,
    pub actions: ActionTable,
    pub rates: Rates,
}

impl PerSensorPolicy {
    #[inline]
    pub fn action(&self, belief: BeliefIndex, request: bool, aoi: usize) -> bool {
        let cell = (belief.anchor * self.depth + belief.age) * self.delta_max + aoi - 1;
        self.actions.get(cell * 2 + usize::from(request))
    }
}

/// Output of one relative value iteration solve.
#[derive(Debug, Clone)]
pub struct Solved {
    /// Optimal average cost plus Lagrange penalty per slot.
    pub gain: f64,
    pub policy: PerSensorPolicy,
    /// Relative values over the full grid, `h(z_ref) = 0`.
    pub relative: Vec<f64>,
    /// Relative values on the closed set only, reusable as a warm start.
    pub warm: Vec<f64>,
    pub sweeps: usize,
    pub converged: bool,
}

/// State enumeration and transition structure of one parameter class.
#[derive(Debug, Clone)]
pub struct SolverGrid {
    atlas: Arc<BeliefAtlas>,
    dmax: usize,
    depth: usize,
    capacity: usize,
    p: f64,
    /// Closed cells in ascending cell order.
    closed: Vec<usize>,
    /// Cell -> position in `closed`, or `u32::MAX`.
    compact: Vec<u32>,
    idle_next: Vec<u32>,
    fail_next: Vec<u32>,
    deliver: Vec<u32>,
    reference: u32,
    /// Closed cells where the embedded renewal chain is observed: every
    /// command outcome, every frozen terminal cell and the reference cell.
    entries: Vec<u32>,
    /// Closed cell -> position in `entries`, or `u32::MAX`.
    entry_id: Vec<u32>,
}

impl SolverGrid {
    pub fn new(atlas: Arc<BeliefAtlas>) -> Self {
        let params = *atlas.params();
        let dmax = params.delta_max();
        let depth = atlas.depth();
        let capacity = params.capacity();
        let cells = (capacity + 1) * depth * dmax;
        let mut grid = Self {
            atlas,
            dmax,
            depth,
            capacity,
            p: params.p(),
            closed: Vec::new(),
            compact: vec![u32::MAX; cells],
            idle_next: Vec::new(),
            fail_next: Vec::new(),
            deliver: Vec::new(),
            reference: 0,
            entries: Vec::new(),
            entry_id: Vec::new(),
        };

        let mut seen = vec![false; cells];
        let start = grid.cell(BeliefIndex::new(capacity, 0), 1);
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(c) = stack.pop() {
            let (idx, aoi) = grid.decode(c);
            let next_aoi = (aoi + 1).min(dmax);
            let mut succ = vec![
                grid.idle_cell(idx, aoi),
                grid.cell(BeliefIndex::new(0, 0), next_aoi),
            ];
            succ.extend((1..=capacity).map(|j| grid.cell(BeliefIndex::new(j, 0), 1)));
            for s in succ {
                if !seen[s] {
                    seen[s] = true;
                    stack.push(s);
                }
            }
        }
        grid.closed = (0..cells).filter(|&c| seen[c]).collect();
        for (k, &c) in grid.closed.iter().enumerate() {
            grid.compact[c] = k as u32;
        }
        grid.idle_next = grid
            .closed
            .iter()
            .map(|&c| {
                let (idx, aoi) = grid.decode(c);
                grid.compact[grid.idle_cell(idx, aoi)]
            })
            .collect();
        grid.fail_next = grid
            .closed
            .iter()
            .map(|&c| {
                let (_, aoi) = grid.decode(c);
                grid.compact[grid.cell(BeliefIndex::new(0, 0), (aoi + 1).min(dmax))]
            })
            .collect();
        grid.deliver = (1..=capacity)
            .map(|j| grid.compact[grid.cell(BeliefIndex::new(j, 0), 1)])
            .collect();
        grid.reference = grid.compact[start];

        let mut is_entry = vec![false; grid.closed.len()];
        for &k in grid.fail_next.iter().chain(&grid.deliver) {
            is_entry[k as usize] = true;
        }
        for anchor in 0..=capacity {
            let t = grid.compact[grid.cell(BeliefIndex::new(anchor, depth - 1), dmax)];
            if t != u32::MAX {
                is_entry[t as usize] = true;
            }
        }
        is_entry[grid.reference as usize] = true;
        grid.entry_id = vec![u32::MAX; grid.closed.len()];
        for k in (0..grid.closed.len()).filter(|&k| is_entry[k]) {
            grid.entry_id[k] = grid.entries.len() as u32;
            grid.entries.push(k as u32);
        }
        grid
    }

    pub fn atlas(&self) -> &BeliefAtlas {
        &self.atlas
    }

    pub fn params(&self) -> &SensorParams {
        self.atlas.params()
    }

    /// Number of belief-states, `(B + 1) * M * 2 * Δmax`.
    pub fn len(&self) -> usize {
        self.compact.len() * 2
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Number of cells in the closed set the iteration runs on.
    pub fn closed_len(&self) -> usize {
        self.closed.len()
    }

    #[inline]
    fn cell(&self, idx: BeliefIndex, aoi: usize) -> usize {
        (idx.anchor * self.depth + idx.age) * self.dmax + aoi - 1
    }

    #[inline]
    fn decode(&self, cell: usize) -> (BeliefIndex, usize) {
        let slot = cell / self.dmax;
        (
            BeliefIndex::new(slot / self.depth, slot % self.depth),
            cell % self.dmax + 1,
        )
    }

    #[inline]
    fn idle_cell(&self, idx: BeliefIndex, aoi: usize) -> usize {
        self.cell(
            BeliefIndex::new(idx.anchor, (idx.age + 1).min(self.depth - 1)),
            (aoi + 1).min(self.dmax),
        )
    }

    /// Flat index of a belief-state.
    pub fn state_index(&self, z: GridState) -> usize {
        self.cell(z.belief, z.aoi) * 2 + usize::from(z.request)
    }

    pub fn state_at(&self, index: usize) -> GridState {
        let (belief, aoi) = self.decode(index / 2);
        GridState {
            belief,
            request: index % 2 == 1,
            aoi,
        }
    }

    /// Reference state `(anchor B, age 0, r = 0, Δ = 1)`.
    pub fn reference_state(&self) -> GridState {
        GridState {
            belief: BeliefIndex::new(self.capacity, 0),
            request: false,
            aoi: 1,
        }
    }

    /// Action values of `z` against a full-grid relative value table.
    pub fn q_values(&self, z: GridState, mu: f64, h: &[f64]) -> (f64, f64) {
        let beta = self.atlas.row(z.belief);
        let next_aoi = (z.aoi + 1).min(self.dmax);
        let r = if z.request { 1.0 } else { 0.0 };
        let avg = |cell: usize| self.p * h[cell * 2 + 1] + (1.0 - self.p) * h[cell * 2];
        let idle = avg(self.idle_cell(z.belief, z.aoi));
        let mut cmd = beta[0] * avg(self.cell(BeliefIndex::new(0, 0), next_aoi));
        for (j, &b) in beta.iter().enumerate().skip(1) {
            cmd += b * avg(self.cell(BeliefIndex::new(j, 0), 1));
        }
        let q0 = r * next_aoi as f64 + idle;
        let q1 = mu + r * (beta[0] * next_aoi as f64 + (1.0 - beta[0])) + cmd;
        (q0, q1)
    }

    /// Relative value iteration for multiplier `mu`, optionally warm-started
    /// from a previous solve's closed-set values.
    pub fn rvia_solve(&self, mu: f64, cfg: &RviaConfig, warm: Option<&[f64]>) -> Result<Solved> {
        if !(cfg.theta > 0.0) {
            return Err(Error::InvalidParams("theta must be positive".into()));
        }
        let n = self.closed.len();
        let mut h = match warm {
            Some(w) if w.len() == 2 * n => w.to_vec(),
            _ => vec![0.0; 2 * n],
        };
        let mut g = vec![0.0; n];
        let beta0: Vec<f64> = self.closed.iter().map(|&c| self.belief_of_cell(c)[0]).collect();
        let aoi_next: Vec<f64> = self
            .closed
            .iter()
            .map(|&c| ((c % self.dmax + 2).min(self.dmax)) as f64)
            .collect();
        let p = self.p;
        let reference = self.reference as usize * 2;

        let mut sweeps = 0;
        let mut converged = false;
        let mut bracket = (0.0, 0.0);
        while sweeps < cfg.max_sweeps {
            sweeps += 1;
            for (k, gk) in g.iter_mut().enumerate() {
                *gk = p * h[2 * k + 1] + (1.0 - p) * h[2 * k];
            }
            let delivered: Vec<f64> = self.deliver.iter().map(|&d| g[d as usize]).collect();
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for k in 0..n {
                let beta = self.belief_of_cell(self.closed[k]);
                let b0 = beta0[k];
                let idle = g[self.idle_next[k] as usize];
                let mut cmd = b0 * g[self.fail_next[k] as usize];
                for (bj, dj) in beta[1..].iter().zip(&delivered) {
                    cmd += bj * dj;
                }
                let an = aoi_next[k];
                // r = 0
                let v0 = idle.min(mu + cmd);
                // r = 1
                let v1 = (an + idle).min(mu + b0 * an + (1.0 - b0) + cmd);
                let d0 = v0 - h[2 * k];
                let d1 = v1 - h[2 * k + 1];
                lo = lo.min(d0.min(d1));
                hi = hi.max(d0.max(d1));
                h[2 * k] = v0;
                h[2 * k + 1] = v1;
            }
            let offset = h[reference];
            h.iter_mut().for_each(|x| *x -= offset);
            bracket = (lo, hi);
            if hi - lo < cfg.theta {
                converged = true;
                break;
            }
        }
        if !converged {
            log::warn!(
                "RVIA for lambda={} mu={} stopped after {} sweeps with span {:.3e}",
                self.params().lambda(),
                mu,
                sweeps,
                bracket.1 - bracket.0
            );
        }
        let gain = 0.5 * (bracket.0 + bracket.1);
        let relative = self.extend(&h, mu, gain);
        let actions = self.greedy_actions(&relative, mu);
        let mut policy = PerSensorPolicy {
            mu,
            depth: self.depth,
            delta_max: self.dmax,
            actions,
            rates: Rates {
                cost: 0.0,
                commands: 0.0,
                converged: true,
            },
        };
        policy.rates = self.evaluate(|s| if policy.actions.get(s) { 1.0 } else { 0.0 });
        Ok(Solved {
            gain,
            policy,
            relative,
            warm: h,
            sweeps,
            converged,
        })
    }

    #[inline]
    fn belief_of_cell(&self, cell: usize) -> &[f64] {
        let slot = cell / self.dmax;
        self.atlas.row(BeliefIndex::new(slot / self.depth, slot % self.depth))
    }

    /// Lifts closed-set values to the full grid. Cells outside the closed set
    /// only lead (idle) to cells of larger age, or larger AoI at the frozen
    /// age, and (commanded) to age-0 cells inside the closed set, so a pass in
    /// decreasing cell-key order meets every successor first.
    fn extend(&self, closed_h: &[f64], mu: f64, gain: f64) -> Vec<f64> {
        let mut h = vec![f64::NAN; self.len()];
        for (k, &c) in self.closed.iter().enumerate() {
            h[2 * c] = closed_h[2 * k];
            h[2 * c + 1] = closed_h[2 * k + 1];
        }
        for age in (0..self.depth).rev() {
            for anchor in 0..=self.capacity {
                for aoi in (1..=self.dmax).rev() {
                    let idx = BeliefIndex::new(anchor, age);
                    let c = self.cell(idx, aoi);
                    if self.compact[c] != u32::MAX {
                        continue;
                    }
                    for request in [false, true] {
                        let z = GridState {
                            belief: idx,
                            request,
                            aoi,
                        };
                        let (q0, q1) = self.q_values(z, mu, &h);
                        h[2 * c + usize::from(request)] = q0.min(q1) - gain;
                    }
                }
            }
        }
        debug_assert!(h.iter().all(|x| x.is_finite()));
        h
    }

    fn greedy_actions(&self, h: &[f64], mu: f64) -> ActionTable {
        let mut actions = ActionTable::zeros(self.len());
        for s in 0..self.len() {
            let (q0, q1) = self.q_values(self.state_at(s), mu, h);
            if q1 < q0 - TIE_EPS {
                actions.set(s, true);
            }
        }
        actions
    }

    /// Embedded renewal chain on the entry cells of a policy given as the
    /// command probability of each closed state `2 * k + r`. Each row
    /// follows one walk from an entry cell until the next entry.
    fn embedded<F: Fn(usize) -> f64>(&self, command_prob: F) -> Embedded {
        let p = self.p;
        let n = self.entries.len();
        let mut out = Embedded {
            rows: Vec::with_capacity(n),
            sojourn: vec![0.0; n],
            cost: vec![0.0; n],
            commands: vec![0.0; n],
        };
        for (i, &start) in self.entries.iter().enumerate() {
            let mut row: Vec<(usize, f64)> = Vec::new();
            let mut k = start as usize;
            let mut survive = 1.0;
            loop {
                let c = self.closed[k];
                let beta = self.belief_of_cell(c);
                let an = ((c % self.dmax + 2).min(self.dmax)) as f64;
                let a0 = command_prob(2 * k);
                let a1 = command_prob(2 * k + 1);
                let q = p * a1 + (1.0 - p) * a0;
                let served = a1 * (beta[0] * an + (1.0 - beta[0])) + (1.0 - a1) * an;
                out.sojourn[i] += survive;
                out.cost[i] += survive * p * served;
                out.commands[i] += survive * q;
                if q > 0.0 {
                    row.push((self.entry_id[self.fail_next[k] as usize] as usize, survive * q * beta[0]));
                    for (bj, &d) in beta[1..].iter().zip(&self.deliver) {
                        row.push((self.entry_id[d as usize] as usize, survive * q * bj));
                    }
                }
                survive *= 1.0 - q;
                if survive <= 0.0 {
                    break;
                }
                let next = self.idle_next[k] as usize;
                if self.entry_id[next] != u32::MAX {
                    row.push((self.entry_id[next] as usize, survive));
                    break;
                }
                k = next;
            }
            // the walk's mass adds to one up to rounding
            let total: f64 = row.iter().map(|e| e.1).sum();
            row.iter_mut().for_each(|e| e.1 /= total);
            out.rows.push(row);
        }
        out
    }

    /// Long-run cost and command rates of a stationary policy given as the
    /// probability of commanding in each belief-state. Only the closed set
    /// matters: the start state lies in it and it is never left.
    pub fn evaluate<F: Fn(usize) -> f64>(&self, command_prob: F) -> Rates {
        let emb = self.embedded(|s| command_prob(2 * self.closed[s / 2] + s % 2));
        let m = self.entries.len();
        let mut kernel = SparseKernel::builder(m);
        for row in &emb.rows {
            kernel.push_row(row.iter().copied()).expect("embedded kernel row");
        }
        let kernel = kernel.finish().expect("embedded kernel");
        let mut start = vec![0.0; m];
        start[self.entry_id[self.reference as usize] as usize] = 1.0;
        let st = limiting_distribution(&kernel, &start, STATIONARY_TOL, STATIONARY_MAX_ITERS);
        let nu = &st.distribution;

        // recurrent classes reached from the start, each with its own ratio
        let reach: Vec<Vec<bool>> = (0..m)
            .map(|i| {
                let mut seen = vec![false; m];
                let mut stack = vec![i];
                seen[i] = true;
                while let Some(u) = stack.pop() {
                    for &(v, w) in &emb.rows[u] {
                        if w > 0.0 && !seen[v] {
                            seen[v] = true;
                            stack.push(v);
                        }
                    }
                }
                seen
            })
            .collect();
        let mut sums: std::collections::BTreeMap<usize, [f64; 4]> = std::collections::BTreeMap::new();
        for i in 0..m {
            // closed class: everything reachable from i reaches back
            if !(0..m).all(|j| !reach[i][j] || reach[j][i]) {
                continue;
            }
            let rep = (0..m).find(|&j| reach[i][j]).expect("i reaches itself");
            let e = sums.entry(rep).or_default();
            e[0] += nu[i];
            e[1] += nu[i] * emb.sojourn[i];
            e[2] += nu[i] * emb.cost[i];
            e[3] += nu[i] * emb.commands[i];
        }
        let mass: f64 = sums.values().map(|e| e[0]).sum();
        let (mut cost, mut commands) = (0.0, 0.0);
        for [w, length, c, j] in sums.into_values().filter(|e| e[0] > 0.0) {
            cost += c / length * w / mass;
            commands += j / length * w / mass;
        }
        Rates {
            cost,
            commands,
            converged: st.converged,
        }
    }

    /// Howard policy iteration on the closed set. Each evaluation solves the
    /// embedded renewal equations, a dense system with one unknown per entry
    /// cell plus the gain. Returns closed-set relative values normalized at
    /// the reference state, or `None` when an evaluation is singular (a
    /// policy with several recurrent classes).
    pub fn policy_iteration(&self, mu: f64, warm: Option<&[f64]>, max_iters: usize) -> Option<(f64, Vec<f64>)> {
        let n = self.closed.len();
        let m = self.entries.len();
        let p = self.p;
        let mut act = vec![true; 2 * n];
        if let Some(h) = warm.filter(|w| w.len() == 2 * n) {
            let g = self.request_average(h);
            for k in 0..n {
                for r in 0..2 {
                    let (q0, q1) = self.closed_q(k, r == 1, mu, &g);
                    act[2 * k + r] = q1 < q0 - TIE_EPS;
                }
            }
        }
        let mut h = vec![0.0; 2 * n];
        let mut gain = 0.0;
        for _ in 0..max_iters {
            let emb = self.embedded(|s| if act[s] { 1.0 } else { 0.0 });
            let mut a = nalgebra::DMatrix::<f64>::zeros(m + 1, m + 1);
            let mut b = nalgebra::DVector::<f64>::zeros(m + 1);
            let ref_id = self.entry_id[self.reference as usize] as usize;
            for (i, row) in emb.rows.iter().enumerate() {
                a[(i, i)] += 1.0;
                for &(j, w) in row {
                    a[(i, j)] -= (1.0 - PI_RESTART) * w;
                }
                a[(i, ref_id)] -= PI_RESTART;
                a[(i, m)] = emb.sojourn[i];
                b[i] = emb.cost[i] + mu * emb.commands[i];
            }
            a[(m, ref_id)] = 1.0;
            let x = a.clone().lu().solve(&b)?;
            let scale = 1.0 + b.amax() + a.amax() * x.amax();
            if !x.iter().all(|v| v.is_finite()) || (&a * &x - &b).amax() > 1e-8 * scale {
                return None;
            }
            gain = x[m];

            let mut g = vec![0.0; n];
            for (i, &k) in self.entries.iter().enumerate() {
                g[k as usize] = x[i];
            }
            for k in (0..n).rev() {
                let (q0_0, q1_0) = self.closed_q(k, false, mu, &g);
                let (q0_1, q1_1) = self.closed_q(k, true, mu, &g);
                h[2 * k] = if act[2 * k] { q1_0 } else { q0_0 } - gain;
                h[2 * k + 1] = if act[2 * k + 1] { q1_1 } else { q0_1 } - gain;
                if self.entry_id[k] == u32::MAX {
                    g[k] = p * h[2 * k + 1] + (1.0 - p) * h[2 * k];
                }
            }

            let mut changed = false;
            for k in 0..n {
                for r in 0..2 {
                    let (q0, q1) = self.closed_q(k, r == 1, mu, &g);
                    let tol = 1e-9 * (1.0 + q0.abs());
                    let keep = act[2 * k + r];
                    let next = if keep { q1 <= q0 + tol } else { q1 < q0 - tol };
                    if next != keep {
                        act[2 * k + r] = next;
                        changed = true;
                    }
                }
            }
            if !changed {
                let offset = h[2 * self.reference as usize];
                h.iter_mut().for_each(|v| *v -= offset);
                return Some((gain, h));
            }
        }
        log::debug!("policy iteration at mu={mu} hit its iteration cap");
        let offset = h[2 * self.reference as usize];
        h.iter_mut().for_each(|v| *v -= offset);
        Some((gain, h))
    }

    fn request_average(&self, h: &[f64]) -> Vec<f64> {
        (0..self.closed.len())
            .map(|k| self.p * h[2 * k + 1] + (1.0 - self.p) * h[2 * k])
            .collect()
    }

    /// Action values of closed state `(k, r)` given request-averaged
    /// relative values `g` on the closed set.
    #[inline]
    fn closed_q(&self, k: usize, request: bool, mu: f64, g: &[f64]) -> (f64, f64) {
        let c = self.closed[k];
        let beta = self.belief_of_cell(c);
        let an = ((c % self.dmax + 2).min(self.dmax)) as f64;
        let mut cmd = beta[0] * g[self.fail_next[k] as usize];
        for (bj, &d) in beta[1..].iter().zip(&self.deliver) {
            cmd += bj * g[d as usize];
        }
        let idle = g[self.idle_next[k] as usize];
        if request {
            (an + idle, mu + beta[0] * an + (1.0 - beta[0]) + cmd)
        } else {
            (idle, mu + cmd)
        }
    }

    /// Policy iteration for a starting point, then relative value iteration
    /// to the span criterion. Falls back to plain value iteration from
    /// `warm` when policy iteration cannot evaluate a policy.
    pub fn solve(&self, mu: f64, cfg: &RviaConfig, warm: Option<&[f64]>) -> Result<Solved> {
        match self.policy_iteration(mu, warm, 200) {
            Some((_, h)) => self.rvia_solve(mu, cfg, Some(&h)),
            None => self.rvia_solve(mu, cfg, warm),
        }
    }

    /// Rates of a deterministic policy.
    pub fn evaluate_policy(&self, policy: &PerSensorPolicy) -> Rates {
        self.evaluate(|s| if policy.actions.get(s) { 1.0 } else { 0.0 })
    }

    /// Rates of the per-slot mixture that follows `minus` with probability
    /// `eta` and `plus` otherwise.
    pub fn evaluate_mixture(&self, minus: &PerSensorPolicy, plus: &PerSensorPolicy, eta: f64) -> Rates {
        self.evaluate(|s| {
            let a = if minus.actions.get(s) { eta } else { 0.0 };
            let b = if plus.actions.get(s) { 1.0 - eta } else { 0.0 };
            a + b
        })
    }

    /// Closed-loop kernel over every belief-state with its own stationary
    /// solve. Reference route for checking [`SolverGrid::evaluate`]; it costs
    /// a power iteration on the full grid.
    pub fn evaluate_on_full_kernel<F: Fn(usize) -> f64>(&self, command_prob: F) -> Result<Rates> {
        let n = self.len();
        let p = self.p;
        let mut b = SparseKernel::builder(n);
        let mut cost = vec![0.0; n];
        let mut commands = vec![0.0; n];
        for s in 0..n {
            let z = self.state_at(s);
            let beta = self.atlas.row(z.belief);
            let next_aoi = (z.aoi + 1).min(self.dmax);
            let a = command_prob(s);
            let r = if z.request { 1.0 } else { 0.0 };
            cost[s] = r * (a * (beta[0] * next_aoi as f64 + 1.0 - beta[0]) + (1.0 - a) * next_aoi as f64);
            commands[s] = a;
            let mut row = Vec::new();
            let mut push = |cell: usize, w: f64| {
                row.push((cell * 2 + 1, w * p));
                row.push((cell * 2, w * (1.0 - p)));
            };
            push(self.idle_cell(z.belief, z.aoi), 1.0 - a);
            push(self.cell(BeliefIndex::new(0, 0), next_aoi), a * beta[0]);
            for (j, &bj) in beta.iter().enumerate().skip(1) {
                push(self.cell(BeliefIndex::new(j, 0), 1), a * bj);
            }
            b.push_row(row)?;
        }
        let kernel = b.finish()?;
        let mut start = vec![0.0; n];
        let reference = self.state_index(self.reference_state());
        start[reference] = 1.0 - p;
        start[reference + 1] = p;
        let st = limiting_distribution(&kernel, &start, STATIONARY_TOL, STATIONARY_MAX_ITERS);
        let dot = |v: &[f64]| st.distribution.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
        Ok(Rates {
            cost: dot(&cost),
            commands: dot(&commands),
            converged: st.converged,
        })
    }
}

struct Embedded {
    rows: Vec<Vec<(usize, f64)>>,
    /// Expected slots per walk.
    sojourn: Vec<f64>,
    /// Expected on-demand cost per walk.
    cost: Vec<f64>,
    /// Expected commands per walk.
    commands: Vec<f64>,
}

/// Builds the grid for `atlas` and solves at `mu`.
pub fn rvia_solve(atlas: Arc<BeliefAtlas>, mu: f64, cfg: &RviaConfig) -> Result<Solved> {
    SolverGrid::new(atlas).rvia_solve(mu, cfg, None)
}
