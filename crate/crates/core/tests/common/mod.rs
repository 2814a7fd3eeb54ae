#![allow(dead_code)]

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rtt_core::belief::BeliefAtlas;
use rtt_core::config::{ExperimentConfig, PolicyKind};
use rtt_core::exact::{ExactGrid, ExactState};
use rtt_core::model::{initial_truth, sample_exogenous, SensorParams};
use rtt_core::sim::{run_experiment, verify_concentration, ExperimentSummary, Workbench};
use rtt_core::solver::{PerSensorPolicy, Rates, RviaConfig, SolverGrid};
use rtt_core::table::ActionTable;

/// Result of one acceptance check.
#[derive(Debug, Clone)]
pub struct Check {
    pub id: usize,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(id: usize, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            id,
            passed,
            detail: detail.into(),
        }
    }

    pub fn line(&self) -> String {
        format!(
            "criterion {:>2}: {} {}",
            self.id,
            if self.passed { "PASS" } else { "FAIL" },
            self.detail
        )
    }
}

pub fn reference_config() -> ExperimentConfig {
    ExperimentConfig::default()
}

/// Average of `cost + mu * command` from the initial distribution, for a
/// deterministic policy on the exact chain. The lazy chain `(I + P) / 2`
/// has the Cesaro limit of `P` as its limit, so power iteration converges
/// even for periodic or multichain policies.
pub fn exact_policy_gain(grid: &ExactGrid, actions: &[bool], mu: f64) -> f64 {
    let n = grid.len();
    let params = *grid.params();
    let cap = params.capacity();
    let mut x = vec![0.0; n];
    for (battery, wb) in [(cap - 1, 1.0 - params.lambda()), (cap, params.lambda())] {
        for (request, wr) in [(false, 1.0 - params.p()), (true, params.p())] {
            x[grid.index(ExactState {
                battery,
                request,
                aoi: 1,
            })] += wb * wr;
        }
    }
    let rows: Vec<Vec<(usize, f64)>> = (0..n)
        .map(|i| {
            grid.transitions(grid.state_at(i), actions[i])
                .into_iter()
                .map(|(t, w)| (grid.index(t), w))
                .collect()
        })
        .collect();
    let cost: Vec<f64> = (0..n)
        .map(|i| grid.cost(grid.state_at(i), actions[i]) + if actions[i] { mu } else { 0.0 })
        .collect();
    let mut next = vec![0.0; n];
    for _ in 0..200_000 {
        next.iter_mut().zip(&x).for_each(|(y, v)| *y = 0.5 * v);
        for (i, row) in rows.iter().enumerate() {
            for &(j, w) in row {
                next[j] += 0.5 * x[i] * w;
            }
        }
        let diff: f64 = next.iter().zip(&x).map(|(a, b)| (a - b).abs()).sum();
        std::mem::swap(&mut x, &mut next);
        if diff < 1e-15 {
            break;
        }
    }
    x.iter().zip(&cost).map(|(a, c)| a * c).sum()
}

/// Exhaustive enumeration against exact RVIA on the 8-state chain, plus the
/// partial-knowledge optimum bounded below by the exact one.
pub fn solver_oracle() -> Check {
    let theta = 1e-6;
    let params = SensorParams::new(0.5, 0.5, 1, 2).unwrap();
    let grid = ExactGrid::new(params);
    let n = grid.len();
    assert_eq!(1usize << n, 256);
    let cfg = RviaConfig::RELEASE;
    let atlas = Arc::new(BeliefAtlas::build(params, 1e-9, 4000).unwrap());
    let partial = SolverGrid::new(atlas);
    let mut worst: f64 = 0.0;
    let mut info_ok = true;
    let mut notes = Vec::new();
    for mu in [0.0, 0.3, 1.0, 5.0] {
        let best = (0u32..256)
            .map(|mask| {
                let actions: Vec<bool> = (0..n).map(|i| mask >> i & 1 == 1).collect();
                exact_policy_gain(&grid, &actions, mu)
            })
            .fold(f64::INFINITY, f64::min);
        let rvia = grid.rvia_solve(mu, &cfg, None).unwrap();
        let pomdp = partial.rvia_solve(mu, &cfg, None).unwrap();
        worst = worst.max((rvia.gain - best).abs());
        info_ok &= pomdp.gain >= rvia.gain - theta;
        notes.push(format!("mu={mu}: brute {best:.7} rvia {:.7} pomdp {:.7}", rvia.gain, pomdp.gain));
    }
    Check::new(
        4,
        worst <= theta && info_ok,
        format!("max |rvia - brute| = {worst:.2e}; {}", notes.join("; ")),
    )
}

/// Maximum total-variation distance between the atlas belief and the
/// rejection-sampled posterior over `settings` random `(lambda, B)` pairs.
pub fn filtering_oracle(settings: usize, samples: usize, seed: u64) -> (f64, Vec<String>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut notes = Vec::new();
    let mut done = 0;
    while done < settings {
        let lambda = rng.random_range(0.05..0.95);
        let cap = rng.random_range(1..=4usize);
        let params = SensorParams::new(lambda, 0.5, cap, 16).unwrap();
        let atlas = BeliefAtlas::build(params, 1e-9, 4000).unwrap();

        // one observed history from a hidden-battery run
        let horizon = rng.random_range(3..=10usize);
        let commands: Vec<bool> = (0..horizon).map(|_| rng.random_bool(0.35)).collect();
        let mut truth = initial_truth(&params, &mut rng);
        let mut reports = Vec::with_capacity(horizon);
        for &c in &commands {
            let draw = sample_exogenous(&params, &mut rng);
            reports.push(truth.step(&params, c, draw).unwrap().reported);
        }
        let mut idx = atlas.initial_index();
        for (&c, &r) in commands.iter().zip(&reports) {
            idx = atlas.update(idx, c, r).unwrap();
        }

        let mut counts = vec![0u64; cap + 1];
        let mut accepted = 0;
        let mut tries = 0u64;
        while accepted < samples && tries < 200 * samples as u64 {
            tries += 1;
            let mut t = initial_truth(&params, &mut rng);
            let ok = commands.iter().zip(&reports).all(|(&c, &r)| {
                let draw = sample_exogenous(&params, &mut rng);
                t.step(&params, c, draw).unwrap().reported == r
            });
            if ok {
                counts[t.battery] += 1;
                accepted += 1;
            }
        }
        if accepted < samples {
            // history too unlikely for plain rejection; draw another one
            continue;
        }
        let tv: f64 = 0.5
            * atlas
                .row(idx)
                .iter()
                .zip(&counts)
                .map(|(b, &c)| (b - c as f64 / accepted as f64).abs())
                .sum::<f64>();
        worst = worst.max(tv);
        notes.push(format!("lambda={lambda:.3} B={cap} T={horizon} tv={tv:.4}"));
        done += 1;
    }
    (worst, notes)
}

pub fn filtering_check() -> Check {
    let (worst, _) = filtering_oracle(20, 100_000, 2024);
    Check::new(3, worst <= 0.02, format!("max TV over 20 settings = {worst:.4}"))
}

/// Commands with a random density, and always in the frozen corner so no
/// idle cell loops on itself forever.
pub fn random_policy(grid: &SolverGrid, rng: &mut ChaCha8Rng) -> PerSensorPolicy {
    let density = rng.random_range(0.1..0.9);
    let frozen = grid.atlas().depth() - 1;
    let mut actions = ActionTable::zeros(grid.len());
    for i in 0..grid.len() {
        let z = grid.state_at(i);
        if rng.random_bool(density) || (z.belief.age == frozen && z.aoi == grid.params().delta_max()) {
            actions.set(i, true);
        }
    }
    PerSensorPolicy {
        mu: 0.0,
        depth: grid.atlas().depth(),
        delta_max: grid.params().delta_max(),
        actions,
        rates: Rates {
            cost: f64::NAN,
            commands: f64::NAN,
            converged: false,
        },
    }
}

/// Long single-sensor run of a belief-state policy: `(cost, commands)` per
/// slot.
pub fn simulate_single(atlas: &BeliefAtlas, policy: &PerSensorPolicy, slots: u64, seed: u64) -> (f64, f64) {
    let params = *atlas.params();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut truth = initial_truth(&params, &mut rng);
    let mut idx = atlas.initial_index();
    let (mut cost, mut commands) = (0u64, 0u64);
    for _ in 0..slots {
        let draw = sample_exogenous(&params, &mut rng);
        let a = policy.action(idx, draw.request, truth.aoi);
        let out = truth.step(&params, a, draw).unwrap();
        idx = atlas.update(idx, a, out.reported).unwrap();
        cost += out.cost as u64;
        commands += u64::from(a);
    }
    (cost as f64 / slots as f64, commands as f64 / slots as f64)
}

pub fn chain_vs_simulation(policies: usize, slots: u64, seed: u64) -> (f64, Vec<String>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut notes = Vec::new();
    for i in 0..policies {
        let lambda = rng.random_range(0.05..0.5);
        let params = SensorParams::new(lambda, 0.8, 3, 16).unwrap();
        let atlas = Arc::new(BeliefAtlas::build(params, 1e-6, 4000).unwrap());
        let grid = SolverGrid::new(atlas.clone());
        let policy = random_policy(&grid, &mut rng);
        let chain = grid.evaluate_policy(&policy);
        let (c, j) = simulate_single(&atlas, &policy, slots, seed + i as u64);
        let rc = (c - chain.cost).abs() / chain.cost;
        let rj = (j - chain.commands).abs() / chain.commands;
        worst = worst.max(rc).max(rj);
        notes.push(format!(
            "lambda={lambda:.3}: chain ({:.4}, {:.4}) sim ({c:.4}, {j:.4})",
            chain.cost, chain.commands
        ));
    }
    (worst, notes)
}

pub fn chain_check() -> Check {
    let (worst, _) = chain_vs_simulation(5, 10_000_000, 99);
    Check::new(5, worst <= 0.01, format!("max relative error over 5 policies = {worst:.4}"))
}

pub fn analytic_anchors() -> Check {
    let silent = ExperimentConfig {
        experiment: "anchor-p0".into(),
        k: 10,
        p: 0.0,
        ..reference_config()
    };
    let bench = Workbench::new(&silent, None).unwrap();
    let a = run_experiment(&silent, &bench).unwrap();

    let fresh = ExperimentConfig {
        experiment: "anchor-l1".into(),
        k: 10,
        gamma: 1.0,
        lambdas: vec![1.0],
        ..reference_config()
    };
    let bench = Workbench::new(&fresh, None).unwrap();
    let b = run_experiment(&fresh, &bench).unwrap();
    Check::new(
        2,
        a.avg_cost == 0.0 && (b.avg_cost - fresh.p).abs() <= 0.005,
        format!("p=0 cost {}; lambda=1 cost {:.5} (p = {})", a.avg_cost, b.avg_cost, fresh.p),
    )
}

/// Per-class `J(mu)` non-increasing and `C(mu)` non-decreasing.
pub fn monotonicity(bench: &Workbench) -> Check {
    let grid = [0.0, 0.5, 1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0, 200.0, 500.0, 1000.0];
    let probes: Vec<_> = grid.iter().map(|&mu| bench.partial_planner().probe(mu).unwrap()).collect();
    let slack = 1e-9;
    let mut violations = 0;
    for c in 0..bench.classes().len() {
        for w in probes.windows(2) {
            let (a, b) = (&w[0][c].policy.rates, &w[1][c].policy.rates);
            if b.commands > a.commands + slack {
                violations += 1;
            }
            if b.cost < a.cost - slack {
                violations += 1;
            }
        }
    }
    Check::new(
        6,
        violations == 0,
        format!("{violations} violations over 12 multipliers x {} classes", bench.classes().len()),
    )
}

/// Re-evaluates the mixed policy of every class and compares the fleet
/// command rate to the budget.
pub fn budget_certificate(bench: &Workbench, cfg: &ExperimentConfig) -> Check {
    let weights = cfg.weights().unwrap();
    let mut ok = true;
    let mut notes = Vec::new();
    for gamma in [0.02, 0.15] {
        let bundle = bench.partial_bundle(&weights, gamma).unwrap();
        let k: usize = weights.iter().sum();
        let fleet: f64 = bundle
            .classes
            .iter()
            .zip(bench.partial_planner().models())
            .map(|(c, m)| {
                let r = m.grid().evaluate_mixture(&c.minus, &c.plus, bundle.eta);
                r.commands * c.multiplicity as f64
            })
            .sum::<f64>()
            / k as f64;
        let pass = bundle.inactive || (fleet - gamma).abs() <= 1e-6;
        ok &= pass;
        notes.push(format!(
            "gamma={gamma}: fleet J {fleet:.9} mu* {:.4} eta {:.4} inactive {}",
            bundle.mu_star, bundle.eta, bundle.inactive
        ));
    }
    Check::new(7, ok, notes.join("; "))
}

/// `(summary, lower bound)` pair of a relax-truncate run.
pub struct TrendPoint {
    pub k: usize,
    pub gamma: f64,
    pub rt: ExperimentSummary,
    pub lower: f64,
}

impl TrendPoint {
    pub fn gap(&self) -> f64 {
        self.rt.avg_cost - self.lower
    }
}

pub fn trend_points(bench: &Workbench, base: &ExperimentConfig, ks: &[usize], gammas: &[f64]) -> Vec<TrendPoint> {
    let mut out = Vec::new();
    for &gamma in gammas {
        for &k in ks {
            let cfg = ExperimentConfig {
                experiment: "k-sweep".into(),
                k,
                gamma,
                policy: PolicyKind::RelaxTruncate,
                ..base.clone()
            };
            let rt = run_experiment(&cfg, bench).unwrap();
            let lower = rt.planned_cost.expect("planned");
            out.push(TrendPoint { k, gamma, rt, lower });
        }
    }
    out
}

pub fn trend_check(points: &[TrendPoint], delta_max: usize) -> Check {
    let mut ok = true;
    let mut notes = Vec::new();
    let mut gammas: Vec<f64> = points.iter().map(|p| p.gamma).collect();
    gammas.dedup();
    for gamma in gammas {
        let row: Vec<&TrendPoint> = points.iter().filter(|p| p.gamma == gamma).collect();
        for w in row.windows(2) {
            if w[1].gap() > w[0].gap() + w[0].rt.ci95 + w[1].rt.ci95 {
                ok = false;
            }
        }
        for p in &row {
            let bound = delta_max as f64 / (gamma * (p.k as f64).sqrt());
            ok &= p.gap() <= bound;
            notes.push(format!("G={gamma} K={}: gap {:.4} (ci {:.4})", p.k, p.gap(), p.rt.ci95));
        }
    }
    if let Some(p) = points.iter().find(|p| p.k == 200 && p.gamma == 0.15) {
        let rel = p.gap() / p.lower;
        ok &= rel <= 0.05;
        notes.push(format!("relative gap K=200 G=0.15 {:.4}", rel));
    }
    Check::new(8, ok, notes.join("; "))
}

pub fn greedy_check(bench: &Workbench, base: &ExperimentConfig, rt: &ExperimentSummary) -> (Check, ExperimentSummary) {
    let cfg = ExperimentConfig {
        experiment: "greedy-gap".into(),
        k: 100,
        gamma: 0.02,
        policy: PolicyKind::Greedy,
        ..base.clone()
    };
    let greedy = run_experiment(&cfg, bench).unwrap();
    let reduction = 1.0 - rt.avg_cost / greedy.avg_cost;
    (
        Check::new(
            9,
            (0.20..=0.40).contains(&reduction),
            format!(
                "relax-truncate {:.4} vs greedy {:.4}: {:.1}% lower",
                rt.avg_cost,
                greedy.avg_cost,
                100.0 * reduction
            ),
        ),
        greedy,
    )
}

/// Budget grid 0.02, 0.03, ..., 0.25.
pub fn gamma_grid() -> Vec<f64> {
    (2..=25).map(|i| i as f64 / 100.0).collect()
}

/// First grid budget at which the planned fleet command rate stops
/// increasing, i.e. the relaxed constraint becomes inactive.
pub fn saturation(rates: &[(f64, f64, bool)]) -> Option<f64> {
    rates.iter().find(|r| r.2).map(|r| r.0)
}

/// Costs at every budget from `from` on agree pairwise within their CIs.
pub fn plateau(runs: &[ExperimentSummary]) -> bool {
    runs.iter()
        .all(|a| runs.iter().all(|b| (a.avg_cost - b.avg_cost).abs() <= a.ci95 + b.ci95))
}

pub fn concentration(bench: &Workbench, cfgs: &[ExperimentConfig]) -> Check {
    let mut violations = 0;
    let mut worst: f64 = 0.0;
    for cfg in cfgs {
        let r = verify_concentration(cfg, bench).unwrap();
        worst = worst.max(r.stats.std / r.std_bound);
        if !r.passed() {
            violations += 1;
        }
    }
    Check::new(
        11,
        violations == 0,
        format!(
            "{violations} violations over {} configs; max STD/sqrt(K) = {worst:.3}",
            cfgs.len()
        ),
    )
}
