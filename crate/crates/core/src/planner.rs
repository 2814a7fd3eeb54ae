//! Relaxed fleet problem: bisection on the Lagrange multiplier, mixing of
//! the two bracketing policies, and the resulting lower bound.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::belief::{BeliefAtlas, DEFAULT_HARD_CAP, DEFAULT_TOL};
use crate::cache::ArtifactCache;
use crate::error::{Error, Result};
use crate::exact::{ExactGrid, ExactPolicy};
use crate::exec;
use crate::model::SensorParams;
use crate::solver::{PerSensorPolicy, Rates, RviaConfig, SolverGrid};

/// Bumped whenever solver output for identical inputs can change.
pub const SOLVER_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerConfig {
    /// Bisection stops once `mu_plus - mu_minus < epsilon`.
    pub epsilon: f64,
    /// Target accuracy of the mixed fleet command rate.
    pub eta_tol: f64,
    pub mu_init: f64,
    pub growth: f64,
    pub mu_cap: f64,
    /// A probe within this distance of the budget ends the bisection.
    pub equality_tol: f64,
    pub theta: f64,
    pub max_sweeps: usize,
    pub belief_tol: f64,
    pub hard_cap: usize,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-3,
            eta_tol: 1e-6,
            mu_init: 1.0,
            growth: 2.0,
            mu_cap: 2f64.powi(40),
            equality_tol: 1e-6,
            theta: RviaConfig::RELEASE.theta,
            max_sweeps: RviaConfig::RELEASE.max_sweeps,
            belief_tol: DEFAULT_TOL,
            hard_cap: DEFAULT_HARD_CAP,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.epsilon,
            self.eta_tol,
            self.mu_init,
            self.equality_tol,
            self.theta,
            self.belief_tol,
        ];
        if positive.iter().any(|x| !(*x > 0.0)) || !(self.growth > 1.0) || self.hard_cap == 0 {
            return Err(Error::Config("planner tolerances must be positive".into()));
        }
        Ok(())
    }

    pub fn rvia(&self) -> RviaConfig {
        RviaConfig {
            theta: self.theta,
            max_sweeps: self.max_sweeps,
        }
    }
}

/// One solve of a class at one multiplier.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Probe<P> {
    pub mu: f64,
    pub gain: f64,
    pub converged: bool,
    pub policy: P,
    #[serde(skip)]
    pub warm: Option<Vec<f64>>,
}

/// A per-sensor problem that the planner can price.
pub trait ClassModel: Send + Sync {
    type Policy: Clone + Send + Sync + Serialize + DeserializeOwned;

    fn params(&self) -> &SensorParams;
    /// Cache key prefix; must pin down everything the solve depends on
    /// except the multiplier.
    fn key(&self) -> String;
    fn solve(&self, mu: f64, warm: Option<&[f64]>) -> Result<Probe<Self::Policy>>;
    fn rates(policy: &Self::Policy) -> Rates;
    /// Rates of the per-slot mixture using `minus` with probability `eta`.
    fn mixture(&self, minus: &Self::Policy, plus: &Self::Policy, eta: f64) -> Result<Rates>;
}

/// Partial battery knowledge: belief-state solver.
pub struct PartialModel {
    grid: SolverGrid,
    rvia: RviaConfig,
}

impl PartialModel {
    pub fn new(params: SensorParams, cfg: &PlannerConfig) -> Result<Self> {
        let atlas = BeliefAtlas::build(params, cfg.belief_tol, cfg.hard_cap)?;
        Ok(Self::from_atlas(Arc::new(atlas), cfg))
    }

    pub fn from_atlas(atlas: Arc<BeliefAtlas>, cfg: &PlannerConfig) -> Self {
        Self {
            grid: SolverGrid::new(atlas),
            rvia: cfg.rvia(),
        }
    }

    pub fn grid(&self) -> &SolverGrid {
        &self.grid
    }
}

impl ClassModel for PartialModel {
    type Policy = PerSensorPolicy;

    fn params(&self) -> &SensorParams {
        self.grid.params()
    }

    fn key(&self) -> String {
        let atlas = self.grid.atlas();
        format!(
            "partial-{}-theta{:x}-tol{:x}-M{}-v{}",
            self.params().key(),
            self.rvia.theta.to_bits(),
            atlas.tolerance().to_bits(),
            atlas.depth(),
            SOLVER_VERSION
        )
    }

    fn solve(&self, mu: f64, warm: Option<&[f64]>) -> Result<Probe<PerSensorPolicy>> {
        let s = self.grid.solve(mu, &self.rvia, warm)?;
        Ok(Probe {
            mu,
            gain: s.gain,
            converged: s.converged,
            policy: s.policy,
            warm: Some(s.warm),
        })
    }

    fn rates(policy: &PerSensorPolicy) -> Rates {
        policy.rates
    }

    fn mixture(&self, minus: &PerSensorPolicy, plus: &PerSensorPolicy, eta: f64) -> Result<Rates> {
        Ok(self.grid.evaluate_mixture(minus, plus, eta))
    }
}

/// Exact battery knowledge benchmark.
pub struct ExactModel {
    grid: ExactGrid,
    rvia: RviaConfig,
}

impl ExactModel {
    pub fn new(params: SensorParams, cfg: &PlannerConfig) -> Self {
        Self {
            grid: ExactGrid::new(params),
            rvia: cfg.rvia(),
        }
    }

    pub fn grid(&self) -> &ExactGrid {
        &self.grid
    }
}

impl ClassModel for ExactModel {
    type Policy = ExactPolicy;

    fn params(&self) -> &SensorParams {
        self.grid.params()
    }

    fn key(&self) -> String {
        format!(
            "exact-{}-theta{:x}-v{}",
            self.params().key(),
            self.rvia.theta.to_bits(),
            SOLVER_VERSION
        )
    }

    fn solve(&self, mu: f64, _warm: Option<&[f64]>) -> Result<Probe<ExactPolicy>> {
        let s = self.grid.solve(mu, &self.rvia)?;
        Ok(Probe {
            mu,
            gain: s.gain,
            converged: s.converged,
            policy: s.policy,
            warm: None,
        })
    }

    fn rates(policy: &ExactPolicy) -> Rates {
        policy.rates
    }

    fn mixture(&self, minus: &ExactPolicy, plus: &ExactPolicy, eta: f64) -> Result<Rates> {
        self.grid.evaluate_mixture(minus, plus, eta)
    }
}

/// One parameter class inside a bundle.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassEntry<P> {
    pub params: SensorParams,
    pub multiplicity: usize,
    pub minus: P,
    pub plus: P,
    /// Rates of the mixed per-sensor policy.
    pub mixed: Rates,
}

/// Relaxed fleet policy: per class, the policies at `mu_minus` and
/// `mu_plus` and the probability `eta` of following the former.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RelaxedPolicyBundle<P> {
    pub gamma: f64,
    pub mu_star: f64,
    pub mu_minus: f64,
    pub mu_plus: f64,
    pub eta: f64,
    /// The unconstrained optimum already meets the budget.
    pub inactive: bool,
    /// Mixing fell back to a grid scan.
    pub mixing_flagged: bool,
    /// All class solves met the span criterion.
    pub converged: bool,
    pub classes: Vec<ClassEntry<P>>,
    /// Fleet command rate of the mixed policy.
    pub fleet_commands: f64,
    /// Fleet cost rate of the mixed policy, a lower bound on any policy
    /// meeting the per-slot budget.
    pub lower_bound: f64,
}

impl<P> RelaxedPolicyBundle<P> {
    pub fn fleet_size(&self) -> usize {
        self.classes.iter().map(|c| c.multiplicity).sum()
    }
}

/// Lower bound on the fleet average cost carried by a bundle.
pub fn lower_bound<P>(bundle: &RelaxedPolicyBundle<P>) -> f64 {
    bundle.lower_bound
}

type Memo<P> = HashMap<(usize, u64), Arc<Probe<P>>>;

/// Solves the relaxed problem for a fixed set of parameter classes. Probes
/// are memoized per (class, multiplier), so repeated plans at different
/// budgets or fleet sizes share work.
pub struct Planner<M: ClassModel> {
    models: Vec<M>,
    cfg: PlannerConfig,
    cache: Option<ArtifactCache>,
    memo: Mutex<Memo<M::Policy>>,
}

impl<M: ClassModel> Planner<M> {
    pub fn new(models: Vec<M>, cfg: PlannerConfig, cache: Option<ArtifactCache>) -> Result<Self> {
        cfg.validate()?;
        if models.is_empty() {
            return Err(Error::InvalidParams("planner needs at least one class".into()));
        }
        Ok(Self {
            models,
            cfg,
            cache,
            memo: Mutex::new(HashMap::new()),
        })
    }

    pub fn models(&self) -> &[M] {
        &self.models
    }

    pub fn config(&self) -> &PlannerConfig {
        &self.cfg
    }

    /// Number of distinct (class, multiplier) solves held in memory.
    pub fn solves(&self) -> usize {
        self.memo.lock().unwrap().len()
    }

    fn warm_for(&self, class: usize, mu: f64) -> Option<Arc<Probe<M::Policy>>> {
        let memo = self.memo.lock().unwrap();
        memo.iter()
            .filter(|((c, _), p)| *c == class && p.warm.is_some())
            .min_by(|a, b| {
                let da = (f64::from_bits(a.0 .1) - mu).abs();
                let db = (f64::from_bits(b.0 .1) - mu).abs();
                da.total_cmp(&db)
            })
            .map(|(_, p)| p.clone())
    }

    /// Solves every class at `mu`, reusing memoized and cached results.
    pub fn probe(&self, mu: f64) -> Result<Vec<Arc<Probe<M::Policy>>>> {
        let todo: Vec<usize> = {
            let memo = self.memo.lock().unwrap();
            (0..self.models.len())
                .filter(|&c| !memo.contains_key(&(c, mu.to_bits())))
                .collect()
        };
        let solved = exec::try_map(todo, |c| -> Result<(usize, Probe<M::Policy>)> {
            let model = &self.models[c];
            let key = format!("{}-mu{:016x}", model.key(), mu.to_bits());
            if let Some(hit) = self.cache.as_ref().and_then(|cache| cache.load::<Probe<M::Policy>>(&key)) {
                return Ok((c, hit));
            }
            let warm = self.warm_for(c, mu);
            let probe = model.solve(mu, warm.as_ref().and_then(|p| p.warm.as_deref()))?;
            if let Some(cache) = &self.cache {
                cache.store(&key, &probe)?;
            }
            Ok((c, probe))
        })?;
        let mut memo = self.memo.lock().unwrap();
        for (c, p) in solved {
            memo.insert((c, mu.to_bits()), Arc::new(p));
        }
        Ok((0..self.models.len())
            .map(|c| memo[&(c, mu.to_bits())].clone())
            .collect())
    }

    fn fleet_rate(weights: &[usize], probes: &[Arc<Probe<M::Policy>>]) -> f64 {
        let k: usize = weights.iter().sum();
        weights
            .iter()
            .zip(probes)
            .map(|(&w, p)| w as f64 * M::rates(&p.policy).commands)
            .sum::<f64>()
            / k as f64
    }

    /// Fleet command rate of the deterministic policies at `mu`.
    pub fn fleet_commands(&self, weights: &[usize], mu: f64) -> Result<f64> {
        Ok(Self::fleet_rate(weights, &self.probe(mu)?))
    }

    /// Bisection on the multiplier. Returns `(mu_minus, mu_plus, inactive)`
    /// with `J(mu_minus) >= gamma >= J(mu_plus)`.
    pub fn bisect_mu(&self, weights: &[usize], gamma: f64) -> Result<(f64, f64, bool)> {
        self.check_weights(weights)?;
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::InvalidParams(format!("budget {gamma} not in (0, 1]")));
        }
        let rate = |mu: f64| self.fleet_commands(weights, mu);
        if rate(0.0)? <= gamma {
            return Ok((0.0, 0.0, true));
        }
        let (mut lo, mut hi) = (0.0, self.cfg.mu_init);
        loop {
            let j = rate(hi)?;
            if (j - gamma).abs() <= self.cfg.equality_tol {
                return Ok((hi, hi, false));
            }
            if j < gamma {
                break;
            }
            lo = hi;
            hi *= self.cfg.growth;
            if hi > self.cfg.mu_cap {
                return Err(Error::BracketOverflow { cap: self.cfg.mu_cap });
            }
        }
        while hi - lo >= self.cfg.epsilon {
            let mid = 0.5 * (lo + hi);
            let j = rate(mid)?;
            if (j - gamma).abs() <= self.cfg.equality_tol {
                return Ok((mid, mid, false));
            }
            if j > gamma {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok((lo, hi, false))
    }

    fn mixed(
        &self,
        weights: &[usize],
        minus: &[Arc<Probe<M::Policy>>],
        plus: &[Arc<Probe<M::Policy>>],
        eta: f64,
    ) -> Result<Vec<Rates>> {
        let items: Vec<usize> = (0..self.models.len()).collect();
        exec::try_map(items, |c| {
            if weights[c] == 0 {
                return Ok(M::rates(&plus[c].policy));
            }
            if eta == 0.0 {
                return Ok(M::rates(&plus[c].policy));
            }
            if eta == 1.0 {
                return Ok(M::rates(&minus[c].policy));
            }
            self.models[c].mixture(&minus[c].policy, &plus[c].policy, eta)
        })
    }

    fn fleet_of(weights: &[usize], rates: &[Rates], pick: impl Fn(&Rates) -> f64) -> f64 {
        let k: usize = weights.iter().sum();
        weights.iter().zip(rates).map(|(&w, r)| w as f64 * pick(r)).sum::<f64>() / k as f64
    }

    /// Mixing factor making the fleet command rate meet `gamma`; the flag
    /// reports a fallback grid scan.
    pub fn find_mixing(
        &self,
        weights: &[usize],
        minus: &[Arc<Probe<M::Policy>>],
        plus: &[Arc<Probe<M::Policy>>],
        gamma: f64,
    ) -> Result<(f64, bool)> {
        let j = |eta: f64| -> Result<f64> {
            Ok(Self::fleet_of(weights, &self.mixed(weights, minus, plus, eta)?, |r| r.commands))
        };
        let (j_lo, j_hi) = (Self::fleet_rate(weights, plus), Self::fleet_rate(weights, minus));
        if (j_hi - gamma).abs() <= self.cfg.eta_tol || j_hi == j_lo {
            return Ok((1.0, false));
        }
        if (j_lo - gamma).abs() <= self.cfg.eta_tol {
            return Ok((0.0, false));
        }
        let (mut a, mut b) = (0.0, 1.0);
        let (mut ja, mut jb) = (j_lo, j_hi);
        for _ in 0..200 {
            let mid = 0.5 * (a + b);
            let jm = j(mid)?;
            if (jm - gamma).abs() <= self.cfg.eta_tol {
                return Ok((mid, false));
            }
            if jm < ja - 1e-12 || jm > jb + 1e-12 {
                break;
            }
            if jm < gamma {
                a = mid;
                ja = jm;
            } else {
                b = mid;
                jb = jm;
            }
        }
        log::warn!("mixing search fell back to a grid scan at gamma={gamma}");
        let mut best = (1.0, f64::INFINITY);
        for i in 0..=100 {
            let eta = i as f64 / 100.0;
            let ji = j(eta)?;
            if ji <= gamma && gamma - ji < best.1 {
                best = (eta, gamma - ji);
            }
        }
        Ok((best.0, true))
    }

    /// Plans the relaxed policy for a fleet whose class `c` has
    /// `weights[c]` sensors, at normalized budget `gamma`.
    pub fn plan(&self, weights: &[usize], gamma: f64) -> Result<RelaxedPolicyBundle<M::Policy>> {
        let (mu_minus, mu_plus, inactive) = self.bisect_mu(weights, gamma)?;
        let minus = self.probe(mu_minus)?;
        let plus = self.probe(mu_plus)?;
        let (eta, mixing_flagged) = if inactive || mu_minus == mu_plus {
            (1.0, false)
        } else {
            self.find_mixing(weights, &minus, &plus, gamma)?
        };
        let mixed = self.mixed(weights, &minus, &plus, eta)?;
        let converged = minus
            .iter()
            .chain(&plus)
            .all(|p| p.converged && M::rates(&p.policy).converged)
            && mixed.iter().all(|r| r.converged);
        let classes = self
            .models
            .iter()
            .enumerate()
            .map(|(c, m)| ClassEntry {
                params: *m.params(),
                multiplicity: weights[c],
                minus: minus[c].policy.clone(),
                plus: plus[c].policy.clone(),
                mixed: mixed[c],
            })
            .collect();
        Ok(RelaxedPolicyBundle {
            gamma,
            mu_star: mu_plus,
            mu_minus,
            mu_plus,
            eta,
            inactive,
            mixing_flagged,
            converged,
            classes,
            fleet_commands: Self::fleet_of(weights, &mixed, |r| r.commands),
            lower_bound: Self::fleet_of(weights, &mixed, |r| r.cost),
        })
    }

    fn check_weights(&self, weights: &[usize]) -> Result<()> {
        if weights.len() != self.models.len() || weights.iter().sum::<usize>() == 0 {
            return Err(Error::InvalidParams("class multiplicities do not match the classes".into()));
        }
        Ok(())
    }
}

/// Groups a fleet into parameter classes in order of first appearance.
/// Returns the distinct classes, their multiplicities and each sensor's
/// class.
pub fn group_classes(fleet: &[SensorParams]) -> (Vec<SensorParams>, Vec<usize>, Vec<usize>) {
    let mut index: HashMap<SensorParams, usize> = HashMap::new();
    let mut classes = Vec::new();
    let mut weights = Vec::new();
    let assignment = fleet
        .iter()
        .map(|p| {
            let c = *index.entry(*p).or_insert_with(|| {
                classes.push(*p);
                weights.push(0);
                classes.len() - 1
            });
            weights[c] += 1;
            c
        })
        .collect();
    (classes, weights, assignment)
}

/// Plans the partial-knowledge relaxed policy for an explicit fleet.
pub fn plan(
    fleet: &[SensorParams],
    gamma: f64,
    cfg: &PlannerConfig,
    cache: Option<ArtifactCache>,
) -> Result<RelaxedPolicyBundle<PerSensorPolicy>> {
    if fleet.is_empty() {
        return Err(Error::InvalidParams("empty fleet".into()));
    }
    let (classes, weights, _) = group_classes(fleet);
    let models = exec::try_map(classes, |p| PartialModel::new(p, cfg))?;
    Planner::new(models, *cfg, cache)?.plan(&weights, gamma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn cfg() -> PlannerConfig {
        PlannerConfig {
            theta: 1e-6,
            belief_tol: 1e-4,
            ..PlannerConfig::default()
        }
    }

    fn params(lambda: f64) -> SensorParams {
        SensorParams::new(lambda, 0.8, 3, 16).unwrap()
    }

    #[test]
    fn full_budget_is_inactive() {
        let b = plan(&[params(0.2), params(0.4)], 1.0, &cfg(), None).unwrap();
        assert!(b.inactive);
        assert_eq!(b.mu_star, 0.0);
        assert_eq!(b.eta, 1.0);
    }

    #[test]
    fn mixed_budget_is_met() {
        let fleet: Vec<_> = [0.05, 0.1, 0.3].iter().map(|&l| params(l)).collect();
        let b = plan(&fleet, 0.06, &cfg(), None).unwrap();
        assert!(!b.inactive);
        assert!(b.mu_plus - b.mu_minus < 1e-3 || b.mu_plus == b.mu_minus);
        assert_abs_diff_eq!(b.fleet_commands, 0.06, epsilon = 1e-6);
        assert!(b.eta >= 0.0 && b.eta <= 1.0);
    }

    #[test]
    fn one_solve_per_class_per_probe() {
        let fleet: Vec<_> = (0..20).map(|k| params([0.05, 0.1][k % 2])).collect();
        let (classes, weights, assignment) = group_classes(&fleet);
        assert_eq!(classes.len(), 2);
        assert_eq!(weights, vec![10, 10]);
        assert_eq!(assignment[3], 1);
        let models = classes.into_iter().map(|p| PartialModel::new(p, &cfg()).unwrap()).collect();
        let planner = Planner::new(models, cfg(), None).unwrap();
        planner.probe(0.5).unwrap();
        assert_eq!(planner.solves(), 2);
        planner.probe(0.5).unwrap();
        assert_eq!(planner.solves(), 2);
    }

    #[test]
    fn cached_plan_is_identical() {
        let dir = tempfile::tempdir().unwrap();
        let fleet: Vec<_> = [0.05, 0.2].iter().map(|&l| params(l)).collect();
        let cache = ArtifactCache::open(dir.path()).unwrap();
        let a = plan(&fleet, 0.05, &cfg(), Some(cache.clone())).unwrap();
        let b = plan(&fleet, 0.05, &cfg(), Some(cache)).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }
}
