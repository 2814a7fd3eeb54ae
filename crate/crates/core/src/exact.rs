//! Exact-battery-knowledge benchmark: the per-sensor Lagrangian problem on
//! the fully observed chain `(b, r, Δ)`.

use serde::{Deserialize, Serialize};

use crate::chain::{limiting_distribution, SparseKernel, STATIONARY_MAX_ITERS, STATIONARY_TOL};
use crate::error::{Error, Result};
use crate::model::{step_aoi, step_battery, SensorParams};
use crate::solver::{Rates, RviaConfig, TIE_EPS};
use crate::table::ActionTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ExactState {
    pub battery: usize,
    pub request: bool,
    pub aoi: usize,
}

/// Deterministic policy over the `(B + 1) * 2 * Δmax` exact states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactPolicy {
    pub mu: f64,
    pub delta_max: usize,
    pub actions: ActionTable,
    pub rates: Rates,
}

impl ExactPolicy {
    #[inline]
    pub fn action(&self, battery: usize, request: bool, aoi: usize) -> bool {
        self.actions
            .get((battery * self.delta_max + aoi - 1) * 2 + usize::from(request))
    }
}

#[derive(Debug, Clone)]
pub struct ExactSolved {
    pub gain: f64,
    pub policy: ExactPolicy,
    pub relative: Vec<f64>,
    pub sweeps: usize,
    pub converged: bool,
}

/// State enumeration of the exact-knowledge chain.
#[derive(Debug, Clone)]
pub struct ExactGrid {
    params: SensorParams,
}

impl ExactGrid {
    pub fn new(params: SensorParams) -> Self {
        Self { params }
    }

    pub fn params(&self) -> &SensorParams {
        &self.params
    }

    pub fn len(&self) -> usize {
        (self.params.capacity() + 1) * 2 * self.params.delta_max()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn index(&self, s: ExactState) -> usize {
        (s.battery * self.params.delta_max() + s.aoi - 1) * 2 + usize::from(s.request)
    }

    pub fn state_at(&self, i: usize) -> ExactState {
        let cell = i / 2;
        let dmax = self.params.delta_max();
        ExactState {
            battery: cell / dmax,
            request: i % 2 == 1,
            aoi: cell % dmax + 1,
        }
    }

    /// Reference state `(b = B, r = 0, Δ = 1)`.
    pub fn reference_state(&self) -> ExactState {
        ExactState {
            battery: self.params.capacity(),
            request: false,
            aoi: 1,
        }
    }

    /// Law of the first slot's state: AoI 1, battery `B - 1` or `B` as in
    /// the simulator, and a fresh request draw.
    pub fn initial_distribution(&self) -> Vec<f64> {
        let cap = self.params.capacity();
        let (lambda, p) = (self.params.lambda(), self.params.p());
        let mut x = vec![0.0; self.len()];
        for (battery, wb) in [(cap - 1, 1.0 - lambda), (cap, lambda)] {
            for (request, wr) in [(false, 1.0 - p), (true, p)] {
                x[self.index(ExactState { battery, request, aoi: 1 })] += wb * wr;
            }
        }
        x
    }

    /// Immediate on-demand cost of `(s, a)`.
    pub fn cost(&self, s: ExactState, command: bool) -> f64 {
        let d = command && s.battery >= 1;
        if s.request {
            step_aoi(s.aoi, d, self.params.delta_max()) as f64
        } else {
            0.0
        }
    }

    /// Successor distribution of `(s, a)`; at most four entries.
    pub fn transitions(&self, s: ExactState, command: bool) -> Vec<(ExactState, f64)> {
        let p = self.params.p();
        let lambda = self.params.lambda();
        let cap = self.params.capacity();
        let d = command && s.battery >= 1;
        let aoi = step_aoi(s.aoi, d, self.params.delta_max());
        let mut out = Vec::with_capacity(4);
        for (energy, pe) in [(false, 1.0 - lambda), (true, lambda)] {
            if pe == 0.0 {
                continue;
            }
            let battery = step_battery(s.battery, energy, d, cap).expect("gated transmission");
            for (request, pr) in [(false, 1.0 - p), (true, p)] {
                if pr == 0.0 {
                    continue;
                }
                let next = ExactState {
                    battery,
                    request,
                    aoi,
                };
                match out.iter_mut().find(|(t, _)| *t == next) {
                    Some((_, w)) => *w += pe * pr,
                    None => out.push((next, pe * pr)),
                }
            }
        }
        out
    }

    pub fn q_values(&self, s: ExactState, mu: f64, h: &[f64]) -> (f64, f64) {
        let q = |a: bool| {
            let future: f64 = self
                .transitions(s, a)
                .into_iter()
                .map(|(t, w)| w * h[self.index(t)])
                .sum();
            self.cost(s, a) + if a { mu } else { 0.0 } + future
        };
        (q(false), q(true))
    }

    /// Relative value iteration from `warm`, or from zero.
    pub fn rvia_solve(&self, mu: f64, cfg: &RviaConfig, warm: Option<&[f64]>) -> Result<ExactSolved> {
        if !(cfg.theta > 0.0) {
            return Err(Error::InvalidParams("theta must be positive".into()));
        }
        let n = self.len();
        let reference = self.index(self.reference_state());
        let mut h = match warm {
            Some(w) if w.len() == n => w.to_vec(),
            _ => vec![0.0; n],
        };
        let mut next = vec![0.0; n];
        let mut sweeps = 0;
        let mut converged = false;
        let mut bracket = (0.0, 0.0);
        while sweeps < cfg.max_sweeps {
            sweeps += 1;
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for (i, v) in next.iter_mut().enumerate() {
                let (q0, q1) = self.q_values(self.state_at(i), mu, &h);
                *v = q0.min(q1);
                lo = lo.min(*v - h[i]);
                hi = hi.max(*v - h[i]);
            }
            let offset = next[reference];
            for (hi_, v) in h.iter_mut().zip(&next) {
                *hi_ = v - offset;
            }
            bracket = (lo, hi);
            if hi - lo < cfg.theta {
                converged = true;
                break;
            }
        }
        if !converged {
            log::warn!("exact RVIA at mu={mu} stopped after {sweeps} sweeps");
        }
        let mut actions = ActionTable::zeros(n);
        for i in 0..n {
            let (q0, q1) = self.q_values(self.state_at(i), mu, &h);
            if q1 < q0 - TIE_EPS {
                actions.set(i, true);
            }
        }
        let rates = self.evaluate(|i| if actions.get(i) { 1.0 } else { 0.0 })?;
        Ok(ExactSolved {
            gain: 0.5 * (bracket.0 + bracket.1),
            policy: ExactPolicy {
                mu,
                delta_max: self.params.delta_max(),
                actions,
                rates,
            },
            relative: h,
            sweeps,
            converged,
        })
    }

    /// Howard policy iteration with a dense evaluation step. Every slot
    /// restarts at the reference state with a negligible probability so
    /// that each evaluated policy has a single recurrent class. Returns the
    /// gain and relative values, or `None` if an evaluation is singular.
    pub fn policy_iteration(&self, mu: f64, max_iters: usize) -> Option<(f64, Vec<f64>)> {
        const RESTART: f64 = 1e-9;
        let n = self.len();
        let reference = self.index(self.reference_state());
        let mut act = vec![true; n];
        let mut h = vec![0.0; n];
        let mut gain = 0.0;
        for _ in 0..max_iters {
            let mut a = nalgebra::DMatrix::<f64>::zeros(n + 1, n + 1);
            let mut b = nalgebra::DVector::<f64>::zeros(n + 1);
            for i in 0..n {
                let s = self.state_at(i);
                a[(i, i)] += 1.0;
                for (t, w) in self.transitions(s, act[i]) {
                    a[(i, self.index(t))] -= (1.0 - RESTART) * w;
                }
                a[(i, reference)] -= RESTART;
                a[(i, n)] = 1.0;
                b[i] = self.cost(s, act[i]) + if act[i] { mu } else { 0.0 };
            }
            a[(n, reference)] = 1.0;
            let x = a.clone().lu().solve(&b)?;
            let scale = 1.0 + b.amax() + a.amax() * x.amax();
            if !x.iter().all(|v| v.is_finite()) || (&a * &x - &b).amax() > 1e-8 * scale {
                return None;
            }
            gain = x[n];
            h.copy_from_slice(&x.as_slice()[..n]);
            let mut changed = false;
            for (i, keep) in act.iter_mut().enumerate() {
                let (q0, q1) = self.q_values(self.state_at(i), mu, &h);
                let tol = 1e-9 * (1.0 + q0.abs());
                let next = if *keep { q1 <= q0 + tol } else { q1 < q0 - tol };
                if next != *keep {
                    *keep = next;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        Some((gain, h))
    }

    /// Policy iteration for a starting point, then relative value iteration
    /// to the span criterion.
    pub fn solve(&self, mu: f64, cfg: &RviaConfig) -> Result<ExactSolved> {
        let start = self.policy_iteration(mu, 200).map(|(_, h)| h);
        self.rvia_solve(mu, cfg, start.as_deref())
    }

    /// Long-run rates of a policy given as per-state command probabilities.
    pub fn evaluate<F: Fn(usize) -> f64>(&self, command_prob: F) -> Result<Rates> {
        let n = self.len();
        let mut b = SparseKernel::builder(n);
        let mut cost = vec![0.0; n];
        let mut commands = vec![0.0; n];
        for i in 0..n {
            let s = self.state_at(i);
            let a = command_prob(i);
            cost[i] = a * self.cost(s, true) + (1.0 - a) * self.cost(s, false);
            commands[i] = a;
            let mut row: Vec<(usize, f64)> = self
                .transitions(s, false)
                .into_iter()
                .map(|(t, w)| (self.index(t), w * (1.0 - a)))
                .collect();
            row.extend(
                self.transitions(s, true)
                    .into_iter()
                    .map(|(t, w)| (self.index(t), w * a)),
            );
            b.push_row(row)?;
        }
        let st = limiting_distribution(&b.finish()?, &self.initial_distribution(), STATIONARY_TOL, STATIONARY_MAX_ITERS);
        let dot = |v: &[f64]| st.distribution.iter().zip(v).map(|(x, y)| x * y).sum::<f64>();
        Ok(Rates {
            cost: dot(&cost),
            commands: dot(&commands),
            converged: st.converged,
        })
    }

    pub fn evaluate_mixture(&self, minus: &ExactPolicy, plus: &ExactPolicy, eta: f64) -> Result<Rates> {
        self.evaluate(|i| {
            let a = if minus.actions.get(i) { eta } else { 0.0 };
            let b = if plus.actions.get(i) { 1.0 - eta } else { 0.0 };
            a + b
        })
    }
}

/// Solves the exact-knowledge problem at multiplier `mu`.
pub fn exact_rvia_solve(params: SensorParams, mu: f64, cfg: &RviaConfig) -> Result<ExactSolved> {
    ExactGrid::new(params).rvia_solve(mu, cfg, None)
}
