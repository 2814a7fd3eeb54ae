//! Slot-level fleet simulation and experiment aggregation.
//!
//! Randomness is split into independent ChaCha8 streams. The seed of a
//! stream is derived from `(base seed, episode, purpose)` and the stream
//! number selects the sensor, so every policy kind sees the same request
//! and energy sequences for a given base seed.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::belief::BeliefAtlas;
use crate::cache::ArtifactCache;
use crate::config::{ExperimentConfig, PolicyKind};
use crate::controller::{decide_relaxed, greedy_decide, observe_one, truncate, ControllerState, Outcome};
use crate::error::{Error, Result};
use crate::exact::ExactPolicy;
use crate::exec;
use crate::model::{initial_truth, sample_exogenous, SensorParams, SensorTruth};
use crate::planner::{ExactModel, PartialModel, Planner, PlannerConfig, RelaxedPolicyBundle};
use crate::report::Row;
use crate::solver::PerSensorPolicy;

pub const STREAM_ENVIRONMENT: u64 = 0;
pub const STREAM_MIXING: u64 = 1;
pub const STREAM_TRUNCATION: u64 = 2;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the `purpose` streams of one episode.
pub fn derive_seed(base: u64, episode: u64, purpose: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(base) ^ episode) ^ purpose)
}

/// Stream `index` of the `purpose` family of one episode.
pub fn stream(base: u64, episode: u64, purpose: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(base, episode, purpose));
    rng.set_stream(index);
    rng
}

/// Per-episode accumulators.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub seed: u64,
    pub sensors: usize,
    pub slots: u64,
    /// Sum of on-demand AoI over sensors and slots.
    pub cost_sum: u64,
    /// Number of commands issued.
    pub commands: u64,
    /// Slot counts by size of the pre-truncation candidate set.
    pub candidates: Vec<u64>,
    pub max_commanded: usize,
}

impl EpisodeMetrics {
    pub fn avg_cost(&self) -> f64 {
        self.cost_sum as f64 / (self.sensors as f64 * self.slots as f64)
    }

    pub fn avg_commands(&self) -> f64 {
        self.commands as f64 / (self.sensors as f64 * self.slots as f64)
    }

    pub fn candidate_stats(&self) -> CandidateStats {
        CandidateStats::from_histogram(&self.candidates)
    }
}

/// Moments of the candidate-set size `|X(t)|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateStats {
    pub slots: u64,
    pub mean: f64,
    /// Sample standard deviation.
    pub std: f64,
    /// Mean absolute deviation from the sample mean.
    pub mad: f64,
}

impl CandidateStats {
    pub fn from_histogram(hist: &[u64]) -> Self {
        let n: u64 = hist.iter().sum();
        let nf = n as f64;
        let mean = hist.iter().enumerate().map(|(x, &c)| x as f64 * c as f64).sum::<f64>() / nf;
        let ss: f64 = hist
            .iter()
            .enumerate()
            .map(|(x, &c)| c as f64 * (x as f64 - mean).powi(2))
            .sum();
        let mad = hist
            .iter()
            .enumerate()
            .map(|(x, &c)| c as f64 * (x as f64 - mean).abs())
            .sum::<f64>()
            / nf;
        Self {
            slots: n,
            mean,
            std: if n > 1 { (ss / (nf - 1.0)).sqrt() } else { 0.0 },
            mad,
        }
    }
}

/// How commands are chosen in an episode.
#[derive(Clone, Copy)]
pub enum Driver<'a> {
    Partial {
        bundle: &'a RelaxedPolicyBundle<PerSensorPolicy>,
        truncate: bool,
    },
    Exact {
        bundle: &'a RelaxedPolicyBundle<ExactPolicy>,
        truncate: bool,
    },
    Greedy,
}

impl Driver<'_> {
    fn truncates(&self) -> bool {
        match self {
            Driver::Partial { truncate, .. } | Driver::Exact { truncate, .. } => *truncate,
            Driver::Greedy => true,
        }
    }
}

/// Fleet layout shared by all episodes of an experiment.
pub struct EpisodeSpec<'a> {
    pub atlases: Vec<&'a BeliefAtlas>,
    pub assignment: &'a [usize],
    pub budget: usize,
    /// Abort when more than `budget` commands are issued in a slot.
    pub enforce: bool,
    pub slots: u64,
    pub seed: u64,
}

/// Simulates one episode.
pub fn run_episode(spec: &EpisodeSpec<'_>, driver: Driver<'_>, episode: u64) -> Result<EpisodeMetrics> {
    let k = spec.assignment.len();
    let params: Vec<SensorParams> = spec.assignment.iter().map(|&c| *spec.atlases[c].params()).collect();
    let mut env: Vec<ChaCha8Rng> = (0..k)
        .map(|i| stream(spec.seed, episode, STREAM_ENVIRONMENT, i as u64))
        .collect();
    let mut mix: Vec<ChaCha8Rng> = (0..k)
        .map(|i| stream(spec.seed, episode, STREAM_MIXING, i as u64))
        .collect();
    let mut trunc = stream(spec.seed, episode, STREAM_TRUNCATION, 0);
    let mut truths: Vec<SensorTruth> = params
        .iter()
        .zip(env.iter_mut())
        .map(|(p, r)| initial_truth(p, r))
        .collect();
    let mut state = ControllerState::new(&spec.atlases, spec.assignment.to_vec(), spec.budget);

    let mut metrics = EpisodeMetrics {
        seed: derive_seed(spec.seed, episode, STREAM_ENVIRONMENT),
        sensors: k,
        slots: spec.slots,
        cost_sum: 0,
        commands: 0,
        candidates: vec![0; k + 1],
        max_commanded: 0,
    };
    let mut draws = Vec::with_capacity(k);
    let mut batteries = vec![0usize; k];
    let mut chosen = Vec::with_capacity(k);
    let mut mask = vec![false; k];
    let do_truncate = driver.truncates();

    for slot in 0..spec.slots {
        draws.clear();
        for i in 0..k {
            let d = sample_exogenous(&params[i], &mut env[i]);
            state.trackers[i].request = d.request;
            batteries[i] = truths[i].battery;
            draws.push(d);
        }
        match driver {
            Driver::Partial { bundle, .. } => decide_relaxed(bundle, &state, &batteries, &mut mix, &mut chosen),
            Driver::Exact { bundle, .. } => decide_relaxed(bundle, &state, &batteries, &mut mix, &mut chosen),
            Driver::Greedy => greedy_decide(&state, &mut chosen),
        }
        metrics.candidates[chosen.len()] += 1;
        if do_truncate {
            truncate(&mut chosen, spec.budget, &mut trunc);
        }
        if spec.enforce && chosen.len() > spec.budget {
            return Err(Error::BudgetViolation {
                slot,
                commanded: chosen.len(),
                budget: spec.budget,
            });
        }
        metrics.max_commanded = metrics.max_commanded.max(chosen.len());
        metrics.commands += chosen.len() as u64;
        for &i in &chosen {
            mask[i] = true;
        }
        for i in 0..k {
            let out = truths[i].step(&params[i], mask[i], draws[i])?;
            metrics.cost_sum += out.cost as u64;
            let atlas = spec.atlases[spec.assignment[i]];
            observe_one(
                atlas,
                &mut state.trackers[i],
                Outcome {
                    commanded: mask[i],
                    delivered: out.reported,
                },
            )?;
            mask[i] = false;
        }
    }
    Ok(metrics)
}

/// Planner state shared by experiments over the same parameter classes.
pub struct Workbench {
    classes: Vec<SensorParams>,
    cfg: PlannerConfig,
    cache: Option<ArtifactCache>,
    partial: Planner<PartialModel>,
    exact: OnceLock<Planner<ExactModel>>,
    partial_bundles: Mutex<HashMap<(Vec<usize>, u64), Arc<RelaxedPolicyBundle<PerSensorPolicy>>>>,
    exact_bundles: Mutex<HashMap<(Vec<usize>, u64), Arc<RelaxedPolicyBundle<ExactPolicy>>>>,
}

impl Workbench {
    pub fn new(cfg: &ExperimentConfig, cache: Option<ArtifactCache>) -> Result<Self> {
        cfg.validate()?;
        let classes = cfg.classes()?;
        let models = exec::try_map(classes.clone(), |p| PartialModel::new(p, &cfg.planner))?;
        Ok(Self {
            partial: Planner::new(models, cfg.planner, cache.clone())?,
            classes,
            cfg: cfg.planner,
            cache,
            exact: OnceLock::new(),
            partial_bundles: Mutex::new(HashMap::new()),
            exact_bundles: Mutex::new(HashMap::new()),
        })
    }

    /// Whether `cfg` uses the classes and planner settings of this bench.
    pub fn serves(&self, cfg: &ExperimentConfig) -> bool {
        cfg.planner == self.cfg && cfg.classes().map(|c| c == self.classes).unwrap_or(false)
    }

    pub fn classes(&self) -> &[SensorParams] {
        &self.classes
    }

    pub fn atlases(&self) -> Vec<&BeliefAtlas> {
        self.partial.models().iter().map(|m| m.grid().atlas()).collect()
    }

    pub fn partial_planner(&self) -> &Planner<PartialModel> {
        &self.partial
    }

    pub fn exact_planner(&self) -> Result<&Planner<ExactModel>> {
        if self.exact.get().is_none() {
            let models = self.classes.iter().map(|p| ExactModel::new(*p, &self.cfg)).collect();
            let planner = Planner::new(models, self.cfg, self.cache.clone())?;
            let _ = self.exact.set(planner);
        }
        Ok(self.exact.get().expect("initialized"))
    }

    pub fn partial_bundle(&self, weights: &[usize], gamma: f64) -> Result<Arc<RelaxedPolicyBundle<PerSensorPolicy>>> {
        let key = (weights.to_vec(), gamma.to_bits());
        if let Some(b) = self.partial_bundles.lock().unwrap().get(&key) {
            return Ok(b.clone());
        }
        let b = Arc::new(self.partial.plan(weights, gamma)?);
        self.partial_bundles.lock().unwrap().insert(key, b.clone());
        Ok(b)
    }

    pub fn exact_bundle(&self, weights: &[usize], gamma: f64) -> Result<Arc<RelaxedPolicyBundle<ExactPolicy>>> {
        let key = (weights.to_vec(), gamma.to_bits());
        if let Some(b) = self.exact_bundles.lock().unwrap().get(&key) {
            return Ok(b.clone());
        }
        let b = Arc::new(self.exact_planner()?.plan(weights, gamma)?);
        self.exact_bundles.lock().unwrap().insert(key, b.clone());
        Ok(b)
    }
}

/// Aggregate of one experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub experiment: String,
    pub policy: PolicyKind,
    pub k: usize,
    pub gamma: f64,
    pub budget: usize,
    pub seed: u64,
    pub slots: u64,
    pub episodes: Vec<EpisodeMetrics>,
    pub avg_cost: f64,
    pub ci95: f64,
    pub avg_commands: f64,
    pub commands_ci95: f64,
    /// Analytic lower bound and command rate of the planned relaxed policy,
    /// when one was planned.
    pub planned_cost: Option<f64>,
    pub planned_commands: Option<f64>,
    pub wall_seconds: f64,
}

impl ExperimentSummary {
    pub fn to_row(&self) -> Row {
        Row {
            experiment: self.experiment.clone(),
            policy: self.policy.to_string(),
            k: self.k,
            gamma: self.gamma,
            n: self.budget,
            avg_cost: self.avg_cost,
            ci95: self.ci95,
            avg_commands: self.avg_commands,
            commands_ci95: self.commands_ci95,
            episodes: self.episodes.len(),
            slots: self.slots,
            seed: self.seed,
            wall_seconds: self.wall_seconds,
        }
    }

    /// Candidate-set statistics pooled over episodes.
    pub fn candidate_stats(&self) -> CandidateStats {
        let mut hist = vec![0u64; self.k + 1];
        for e in &self.episodes {
            for (h, c) in hist.iter_mut().zip(&e.candidates) {
                *h += c;
            }
        }
        CandidateStats::from_histogram(&hist)
    }
}

/// Mean and 95% Student-t half-width; zero width for one sample.
pub fn mean_ci95(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .expect("valid degrees of freedom")
        .inverse_cdf(0.975);
    (mean, t * (var / n as f64).sqrt())
}

/// Plans (if needed) and simulates one configuration.
pub fn run_experiment(cfg: &ExperimentConfig, bench: &Workbench) -> Result<ExperimentSummary> {
    if !bench.serves(cfg) {
        return Err(Error::Config("workbench was built for different classes".into()));
    }
    let start = Instant::now();
    let weights = cfg.weights()?;
    let assignment = cfg.assignment()?;
    let kind = cfg.policy;
    let budget = if kind == PolicyKind::Unconstrained { cfg.k } else { cfg.budget() };
    let gamma = cfg.planning_gamma();

    let partial;
    let exact;
    let (driver, planned) = match kind {
        PolicyKind::RelaxTruncate | PolicyKind::Relaxed | PolicyKind::RelaxedLowerBound => {
            partial = bench.partial_bundle(&weights, gamma)?;
            let d = Driver::Partial {
                bundle: &partial,
                truncate: kind == PolicyKind::RelaxTruncate,
            };
            (d, Some((partial.lower_bound, partial.fleet_commands)))
        }
        PolicyKind::Unconstrained => {
            partial = bench.partial_bundle(&weights, 1.0)?;
            let d = Driver::Partial {
                bundle: &partial,
                truncate: false,
            };
            (d, Some((partial.lower_bound, partial.fleet_commands)))
        }
        PolicyKind::ExactRelaxTruncate => {
            exact = bench.exact_bundle(&weights, gamma)?;
            let d = Driver::Exact {
                bundle: &exact,
                truncate: true,
            };
            (d, Some((exact.lower_bound, exact.fleet_commands)))
        }
        PolicyKind::Greedy => (Driver::Greedy, None),
    };

    let mut summary = ExperimentSummary {
        experiment: cfg.experiment.clone(),
        policy: kind,
        k: cfg.k,
        gamma: cfg.nominal_gamma(),
        budget,
        seed: cfg.seed,
        slots: 0,
        episodes: Vec::new(),
        avg_cost: 0.0,
        ci95: 0.0,
        avg_commands: 0.0,
        commands_ci95: 0.0,
        planned_cost: planned.map(|p| p.0),
        planned_commands: planned.map(|p| p.1),
        wall_seconds: 0.0,
    };
    if kind == PolicyKind::RelaxedLowerBound {
        let (c, j) = planned.expect("planned");
        summary.avg_cost = c;
        summary.avg_commands = j;
        summary.wall_seconds = start.elapsed().as_secs_f64();
        return Ok(summary);
    }

    let spec = EpisodeSpec {
        atlases: bench.atlases(),
        assignment: &assignment,
        budget: if kind.constrained() { budget } else { cfg.k },
        enforce: kind.constrained(),
        slots: cfg.slots,
        seed: cfg.seed,
    };
    let episodes = exec::try_map((0..cfg.episodes as u64).collect(), |e| run_episode(&spec, driver, e))?;
    let costs: Vec<f64> = episodes.iter().map(|e| e.avg_cost()).collect();
    let cmds: Vec<f64> = episodes.iter().map(|e| e.avg_commands()).collect();
    (summary.avg_cost, summary.ci95) = mean_ci95(&costs);
    (summary.avg_commands, summary.commands_ci95) = mean_ci95(&cmds);
    summary.slots = cfg.slots;
    summary.episodes = episodes;
    summary.wall_seconds = start.elapsed().as_secs_f64();
    Ok(summary)
}

/// Sweep axis.
#[derive(Debug, Clone, PartialEq)]
pub enum Axis {
    K(Vec<usize>),
    Gamma(Vec<f64>),
}

impl Axis {
    pub fn len(&self) -> usize {
        match self {
            Axis::K(v) => v.len(),
            Axis::Gamma(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One summary per (axis point, policy kind), in that nesting order.
pub fn sweep(
    base: &ExperimentConfig,
    axis: &Axis,
    kinds: &[PolicyKind],
    bench: &Workbench,
) -> Result<Vec<ExperimentSummary>> {
    if axis.is_empty() || kinds.is_empty() {
        return Err(Error::Config("sweep needs axis points and policy kinds".into()));
    }
    let mut out = Vec::with_capacity(axis.len() * kinds.len());
    for i in 0..axis.len() {
        let mut cfg = base.clone();
        match axis {
            Axis::K(v) => cfg.k = v[i],
            Axis::Gamma(v) => {
                cfg.gamma = v[i];
                cfg.n = None;
            }
        }
        for &kind in kinds {
            cfg.policy = kind;
            cfg.validate()?;
            log::info!("{} k={} gamma={} {}", cfg.experiment, cfg.k, cfg.gamma, kind);
            out.push(run_experiment(&cfg, bench)?);
        }
    }
    Ok(out)
}

/// Candidate-set concentration of the untruncated relaxed policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationReport {
    pub k: usize,
    pub stats: CandidateStats,
    /// `sqrt(K)`.
    pub std_bound: f64,
    pub std_ok: bool,
    pub mad_ok: bool,
}

impl ConcentrationReport {
    pub fn passed(&self) -> bool {
        self.std_ok && self.mad_ok
    }
}

/// Runs the relaxed policy without truncation and checks
/// `MAD <= STD <= sqrt(K)` on the candidate-set size.
pub fn verify_concentration(cfg: &ExperimentConfig, bench: &Workbench) -> Result<ConcentrationReport> {
    let mut c = cfg.clone();
    c.policy = PolicyKind::Relaxed;
    let summary = run_experiment(&c, bench)?;
    let stats = summary.candidate_stats();
    let std_bound = (cfg.k as f64).sqrt();
    Ok(ConcentrationReport {
        k: cfg.k,
        stats,
        std_bound,
        std_ok: stats.std <= std_bound,
        mad_ok: stats.mad <= stats.std,
    })
}
