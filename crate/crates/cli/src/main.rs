use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use rtt_core::cache::{ArtifactCache, CACHE_DIR_ENV};
use rtt_core::config::{ExperimentConfig, PolicyKind};
use rtt_core::report::{write_csv, Row};
use rtt_core::sim::{run_experiment, sweep, verify_concentration, Axis, Workbench};
use rtt_core::Error;

/// Exit status when an invariant check fails.
const EXIT_INVARIANT: u8 = 2;

#[derive(Parser)]
#[command(name = "rtt", version, about = "Relax-then-truncate planning and simulation")]
struct Cli {
    #[command(flatten)]
    common: Common,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Base seed, overriding the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output file; stdout when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Directory for solved-policy artifacts.
    #[arg(long, global = true, env = CACHE_DIR_ENV)]
    cache_dir: Option<PathBuf>,

    #[arg(long, global = true)]
    k: Option<usize>,

    #[arg(long, global = true)]
    gamma: Option<f64>,

    #[arg(long, global = true)]
    episodes: Option<usize>,

    #[arg(long, global = true)]
    slots: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Plan the relaxed policy and print its certificate as JSON.
    Solve {
        /// Also plan the exact-knowledge benchmark.
        #[arg(long)]
        exact: bool,
    },
    /// Simulate one configuration with one policy kind.
    Simulate {
        #[arg(long)]
        policy: Option<PolicyKind>,
    },
    /// Sweep fleet size or budget and write CSV rows.
    Sweep {
        #[arg(long, value_enum)]
        axis: AxisKind,
        /// Axis points, comma separated; the reference grid when omitted.
        #[arg(long, value_delimiter = ',')]
        values: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        policies: Vec<PolicyKind>,
    },
    /// Every policy kind on the same configuration and seeds.
    Compare,
    /// Budget certificate, hard constraint and concentration checks.
    Verify,
}

#[derive(Clone, Copy, ValueEnum)]
enum AxisKind {
    K,
    Gamma,
}

fn load_config(c: &Common) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(path) => ExperimentConfig::load(path).with_context(|| format!("reading {}", path.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(k) = c.k {
        cfg.k = k;
    }
    if let Some(g) = c.gamma {
        cfg.gamma = g;
        cfg.n = None;
    }
    if let Some(e) = c.episodes {
        cfg.episodes = e;
    }
    if let Some(s) = c.slots {
        cfg.slots = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn open_cache(c: &Common) -> anyhow::Result<Option<ArtifactCache>> {
    Ok(match &c.cache_dir {
        Some(dir) => Some(ArtifactCache::open(dir)?),
        None => None,
    })
}

fn output(path: Option<&Path>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(std::fs::File::create(p).with_context(|| format!("creating {}", p.display()))?),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn emit_rows(rows: &[Row], path: Option<&Path>) -> anyhow::Result<()> {
    write_csv(rows, output(path)?)?;
    Ok(())
}

fn solve(cfg: &ExperimentConfig, bench: &Workbench, exact: bool) -> anyhow::Result<serde_json::Value> {
    let weights = cfg.weights()?;
    let gamma = cfg.planning_gamma();
    let b = bench.partial_bundle(&weights, gamma)?;
    let mut out = json!({
        "k": cfg.k,
        "budget": cfg.budget(),
        "gamma": gamma,
        "partial": {
            "mu_star": b.mu_star,
            "mu_minus": b.mu_minus,
            "mu_plus": b.mu_plus,
            "eta": b.eta,
            "inactive": b.inactive,
            "mixing_flagged": b.mixing_flagged,
            "converged": b.converged,
            "fleet_commands": b.fleet_commands,
            "lower_bound": b.lower_bound,
        },
    });
    if exact {
        let e = bench.exact_bundle(&weights, gamma)?;
        out["exact"] = json!({
            "mu_star": e.mu_star,
            "eta": e.eta,
            "inactive": e.inactive,
            "fleet_commands": e.fleet_commands,
            "lower_bound": e.lower_bound,
        });
    }
    Ok(out)
}

/// Returns the failed checks.
fn verify(cfg: &ExperimentConfig, bench: &Workbench, out: &mut dyn Write) -> anyhow::Result<usize> {
    let mut failed = 0;
    let weights = cfg.weights()?;
    let gamma = cfg.planning_gamma();
    let b = bench.partial_bundle(&weights, gamma)?;
    let budget_ok = b.inactive || (b.fleet_commands - gamma).abs() <= 1e-6;
    failed += usize::from(!budget_ok);
    writeln!(
        out,
        "budget certificate: {} (fleet J {:.9}, gamma {gamma}, inactive {})",
        if budget_ok { "ok" } else { "FAILED" },
        b.fleet_commands,
        b.inactive
    )?;

    let rt = ExperimentConfig {
        policy: PolicyKind::RelaxTruncate,
        ..cfg.clone()
    };
    match run_experiment(&rt, bench) {
        Ok(s) => {
            let worst = s.episodes.iter().map(|e| e.max_commanded).max().unwrap_or(0);
            writeln!(out, "hard constraint: ok (max {worst} commands, N = {})", s.budget)?;
        }
        Err(e @ Error::BudgetViolation { .. }) => {
            failed += 1;
            writeln!(out, "hard constraint: FAILED ({e})")?;
        }
        Err(e) => return Err(e.into()),
    }

    let c = verify_concentration(cfg, bench)?;
    failed += usize::from(!c.passed());
    writeln!(
        out,
        "concentration: {} (std {:.4} <= sqrt(K) {:.4}: {}, mad {:.4} <= std: {})",
        if c.passed() { "ok" } else { "FAILED" },
        c.stats.std,
        c.std_bound,
        c.std_ok,
        c.stats.mad,
        c.mad_ok
    )?;
    Ok(failed)
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    let cfg = load_config(&cli.common)?;
    let cache = open_cache(&cli.common)?;
    let out_path = cli.common.out.as_deref();
    let bench = Workbench::new(&cfg, cache)?;
    match cli.command {
        Command::Solve { exact } => {
            let v = solve(&cfg, &bench, exact)?;
            let mut w = output(out_path)?;
            serde_json::to_writer_pretty(&mut w, &v)?;
            writeln!(w)?;
        }
        Command::Simulate { policy } => {
            let mut c = cfg.clone();
            if let Some(p) = policy {
                c.policy = p;
            }
            let s = run_experiment(&c, &bench)?;
            emit_rows(&[s.to_row()], out_path)?;
        }
        Command::Sweep { axis, values, policies } => {
            let axis = match axis {
                AxisKind::K if values.is_empty() => Axis::K(vec![10, 50, 100, 200]),
                AxisKind::K => {
                    if values.iter().any(|v| v.fract() != 0.0 || *v < 1.0) {
                        bail!("K values must be positive integers");
                    }
                    Axis::K(values.iter().map(|&v| v as usize).collect())
                }
                AxisKind::Gamma if values.is_empty() => Axis::Gamma((2..=25).map(|i| i as f64 / 100.0).collect()),
                AxisKind::Gamma => Axis::Gamma(values),
            };
            let kinds = if policies.is_empty() {
                vec![PolicyKind::RelaxTruncate, PolicyKind::Greedy, PolicyKind::RelaxedLowerBound]
            } else {
                policies
            };
            let rows: Vec<Row> = sweep(&cfg, &axis, &kinds, &bench)?.iter().map(|s| s.to_row()).collect();
            emit_rows(&rows, out_path)?;
        }
        Command::Compare => {
            let mut rows = Vec::new();
            for kind in PolicyKind::ALL {
                let c = ExperimentConfig {
                    policy: kind,
                    ..cfg.clone()
                };
                rows.push(run_experiment(&c, &bench)?.to_row());
            }
            emit_rows(&rows, out_path)?;
        }
        Command::Verify => {
            let failed = verify(&cfg, &bench, &mut *output(out_path)?)?;
            if failed > 0 {
                log::error!("{failed} invariant checks failed");
                return Ok(ExitCode::from(EXIT_INVARIANT));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            match e.downcast_ref::<Error>() {
                Some(Error::BudgetViolation { .. }) => ExitCode::from(EXIT_INVARIANT),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
