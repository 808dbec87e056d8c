use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use crowdrisk::fixtures;
use crowdrisk::geom::Vec2;
use crowdrisk::planner::Profile;
use crowdrisk::policy::{default_max_iter, default_tolerance, CacheStatus, PolicyCache};
use crowdrisk::prediction::{Cov2, GaussianState};
use crowdrisk::render::{render_speed_plot, render_tick};
use crowdrisk::risk::{collision_probability_flagged, mc_collision_probability, EgoBox};
use crowdrisk::scenario::{load_scenario, rasterize, Scenario};
use crowdrisk::simloop::{self, summarize, summary_csv, write_atomic, RunConfig, Simulation, Termination, Trace};

/// Crowd simulation with risk-aware trajectory planning.
#[derive(Debug, Parser)]
#[command(name = "crowdrisk", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build (or reuse) pedestrian policy fields for a scenario's goals.
    Policy(PolicyArgs),
    /// Run one closed-loop simulation and write its trace and metrics.
    Run(RunArgs),
    /// Run every profile over many derived seeds and write a summary.
    Batch(BatchArgs),
    /// Compare the analytic collision probability with a Monte Carlo estimate.
    RiskCheck(RiskCheckArgs),
    /// Draw SVG snapshots or a speed plot from a trace.
    Render(RenderArgs),
}

#[derive(Debug, Args)]
struct Common {
    /// Scenario JSON file, or one of: straight_road, crosswalk, sidewalk_200.
    #[arg(long)]
    scenario: String,
    /// Run configuration JSON; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory for cached policy fields.
    #[arg(long)]
    policy_cache: Option<PathBuf>,
    /// Omit wall-clock timings from output.
    #[arg(long)]
    deterministic: bool,
}

#[derive(Debug, Args)]
struct PolicyArgs {
    #[command(flatten)]
    common: Common,
    /// Goal indices to build (default: all goals).
    #[arg(long = "goal")]
    goals: Vec<usize>,
    /// Number of discrete actions.
    #[arg(long)]
    actions: Option<usize>,
    /// Grid cell size in meters.
    #[arg(long)]
    cell_size: Option<f64>,
    /// Output directory for the policy files (default: --policy-cache).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    /// Planner profile: risk-aware, aggressive or baseline.
    #[arg(long)]
    profile: Option<Profile>,
    /// Random seed for pedestrian spawning.
    #[arg(long)]
    seed: Option<u64>,
    /// Maximum number of ticks.
    #[arg(long)]
    max_ticks: Option<usize>,
    /// Output directory for trace.ndjson and metrics.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct BatchArgs {
    #[command(flatten)]
    common: Common,
    /// Profiles to run (default: all three).
    #[arg(long = "profile")]
    profiles: Vec<Profile>,
    /// Master seed from which per-run seeds are derived.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of seeds per profile.
    #[arg(long, default_value_t = 10)]
    runs: usize,
    /// Maximum number of ticks per run.
    #[arg(long)]
    max_ticks: Option<usize>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
    /// Output directory for summary.csv and runs.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct RiskCheckArgs {
    /// Predicted mean as `x,y`.
    #[arg(long, value_parser = parse_floats::<2>, allow_hyphen_values = true)]
    mean: [f64; 2],
    /// Covariance as `xx,yy,xy`.
    #[arg(long, value_parser = parse_floats::<3>, allow_hyphen_values = true)]
    cov: [f64; 3],
    /// Box as `cx,cy,heading,half_length,half_width`.
    #[arg(long = "box", value_parser = parse_floats::<5>, allow_hyphen_values = true)]
    bx: [f64; 5],
    /// Monte Carlo sample count.
    #[arg(long, default_value_t = 1_000_000)]
    samples: usize,
    /// Monte Carlo seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct RenderArgs {
    /// Trace file written by `run`.
    #[arg(long)]
    trace: PathBuf,
    /// Tick to draw (0 is the initial state).
    #[arg(long, conflicts_with_all = ["range", "speed_plot"])]
    tick: Option<usize>,
    /// Inclusive tick range `a..b`; one file per tick.
    #[arg(long, value_parser = parse_range, conflicts_with = "speed_plot")]
    range: Option<(usize, usize)>,
    /// Draw ego speed over time instead of a snapshot.
    #[arg(long)]
    speed_plot: bool,
    /// Output SVG file for one tick or the plot, or a directory for a range.
    #[arg(long)]
    out: PathBuf,
}

fn parse_floats<const N: usize>(s: &str) -> Result<[f64; N], String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("`{p}`: {e}")))
        .collect::<Result<_, _>>()?;
    parts
        .try_into()
        .map_err(|v: Vec<f64>| format!("expected {N} comma-separated numbers, got {}", v.len()))
}

fn parse_range(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once("..").ok_or("expected `a..b`")?;
    let a: usize = a.parse().map_err(|e| format!("{e}"))?;
    let b: usize = b.parse().map_err(|e| format!("{e}"))?;
    if b < a {
        return Err("range end precedes start".into());
    }
    Ok((a, b))
}

/// Completed commands; a collision exits with status 2.
enum Outcome {
    Ok,
    Collision,
}

fn load_scenario_arg(arg: &str) -> Result<Scenario> {
    let text = match arg {
        "straight_road" => fixtures::STRAIGHT_ROAD.to_string(),
        "crosswalk" => fixtures::CROSSWALK.to_string(),
        "sidewalk_200" => fixtures::SIDEWALK_200.to_string(),
        path => std::fs::read_to_string(path).with_context(|| format!("reading scenario {path}"))?,
    };
    load_scenario(&text).with_context(|| format!("scenario {arg}"))
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    let cfg = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            RunConfig::from_json(&text).with_context(|| format!("config {}", p.display()))?
        }
        None => RunConfig::default(),
    };
    Ok(cfg)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    write_atomic(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn cmd_policy(args: PolicyArgs) -> Result<Outcome> {
    let scenario = load_scenario_arg(&args.common.scenario)?;
    scenario.validate()?;
    let mut settings = load_config(args.common.config.as_deref())?.policy;
    if let Some(n) = args.actions {
        settings.actions = n;
    }
    if let Some(c) = args.cell_size {
        settings.cell_size = c;
    }
    let dir = args
        .out
        .or(args.common.policy_cache)
        .context("policy needs --out or --policy-cache")?;
    let goals: Vec<usize> = if args.goals.is_empty() {
        (0..scenario.goals.len()).collect()
    } else {
        args.goals
    };
    if let Some(&g) = goals.iter().find(|&&g| g >= scenario.goals.len()) {
        bail!("goal index {g} out of range (scenario has {} goals)", scenario.goals.len());
    }
    let grid = rasterize(&scenario, settings.cell_size, &settings.state_costs)?;
    let tol = settings.tolerance.unwrap_or_else(|| default_tolerance(&grid));
    let max_iter = settings.max_iterations.unwrap_or_else(|| default_max_iter(&grid));
    let cache = PolicyCache::new(&dir);
    for g in goals {
        let goal = scenario.goals[g];
        let start = Instant::now();
        let (_, status) = cache.load_or_build(&grid, goal, settings.actions, tol, max_iter)?;
        let status = match status {
            CacheStatus::Hit => "hit",
            CacheStatus::Built => "built",
        };
        let path = cache.path_for(&grid, goal, settings.actions, tol);
        if args.common.deterministic {
            println!("goal {g} ({}, {}): {status} {}", goal.x, goal.y, path.display());
        } else {
            println!(
                "goal {g} ({}, {}): {status} {} in {:.3} s",
                goal.x,
                goal.y,
                path.display(),
                start.elapsed().as_secs_f64()
            );
        }
    }
    Ok(Outcome::Ok)
}

fn cmd_run(args: RunArgs) -> Result<Outcome> {
    let scenario = load_scenario_arg(&args.common.scenario)?;
    let mut cfg = load_config(args.common.config.as_deref())?;
    if let Some(p) = args.profile {
        cfg.profile = p;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(m) = args.max_ticks {
        cfg.max_ticks = m;
    }
    let cache = args.common.policy_cache.map(PolicyCache::new);
    let start = Instant::now();
    let sim = Simulation::new(scenario, cfg.clone(), cache.as_ref())?;
    let (trace, metrics) = sim.run_seed(cfg.seed, true);
    let trace = trace.expect("trace requested");

    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    write_file(&args.out.join("trace.ndjson"), trace.to_ndjson().as_bytes())?;
    let mut summary = serde_json::json!({
        "profile": cfg.profile.name(),
        "seed": cfg.seed,
        "termination": trace.end.termination,
        "metrics": metrics,
    });
    if !args.common.deterministic {
        summary["elapsed_s"] = start.elapsed().as_secs_f64().into();
    }
    let mut text = serde_json::to_string_pretty(&summary)?;
    text.push('\n');
    write_file(&args.out.join("metrics.json"), text.as_bytes())?;
    println!(
        "{}: {} ticks, {:.2} m, max risk {:.4}, {:?}",
        cfg.profile.name(),
        metrics.ticks,
        metrics.traveled_distance,
        metrics.risk.max,
        trace.end.termination
    );
    Ok(match trace.end.termination {
        Termination::Collision => Outcome::Collision,
        _ => Outcome::Ok,
    })
}

fn cmd_batch(args: BatchArgs) -> Result<Outcome> {
    let scenario = load_scenario_arg(&args.common.scenario)?;
    let mut cfg = load_config(args.common.config.as_deref())?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(m) = args.max_ticks {
        cfg.max_ticks = m;
    }
    let profiles = if args.profiles.is_empty() {
        Profile::ALL.to_vec()
    } else {
        args.profiles
    };
    let cache = args.common.policy_cache.map(PolicyCache::new);
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(j) = args.jobs {
        if j == 0 {
            bail!("--jobs must be at least 1");
        }
        pool = pool.num_threads(j);
    }
    let pool = pool.build()?;
    let results = pool.install(|| simloop::batch(&scenario, &cfg, &profiles, args.runs, cache.as_ref()))?;
    let rows = summarize(&results);

    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let csv = summary_csv(&rows);
    write_file(&args.out.join("summary.csv"), csv.as_bytes())?;
    let seeds = simloop::derive_seeds(cfg.seed, args.runs);
    let runs: Vec<_> = results
        .iter()
        .map(|(p, metrics)| {
            serde_json::json!({
                "profile": p.name(),
                "runs": seeds.iter().zip(metrics).map(|(s, m)| serde_json::json!({"seed": s, "metrics": m})).collect::<Vec<_>>(),
            })
        })
        .collect();
    let mut text = serde_json::to_string_pretty(&runs)?;
    text.push('\n');
    write_file(&args.out.join("runs.json"), text.as_bytes())?;
    print!("{csv}");
    let collided = rows.iter().any(|r| r.collisions > 0);
    Ok(if collided { Outcome::Collision } else { Outcome::Ok })
}

fn cmd_risk_check(args: RiskCheckArgs) -> Result<Outcome> {
    let [xx, yy, xy] = args.cov;
    let cov = Cov2::new(xx, yy, xy);
    if !cov.is_psd(1e-12) {
        bail!("covariance must be positive semi-definite");
    }
    let [cx, cy, heading, hl, hw] = args.bx;
    if !(hl >= 0.0 && hw >= 0.0) {
        bail!("box half extents must be non-negative");
    }
    if args.samples == 0 {
        bail!("--samples must be at least 1");
    }
    let g = GaussianState {
        t: 0.0,
        mean: Vec2::new(args.mean[0], args.mean[1]),
        cov,
    };
    let ego = EgoBox {
        center: Vec2::new(cx, cy),
        heading,
        half_length: hl,
        half_width: hw,
        inflation: 0.0,
    };
    let analytic = collision_probability_flagged(&g, &ego);
    let mc = mc_collision_probability(&g, &ego, args.samples, args.seed);
    let n = args.samples as f64;
    let bound = 3.0 * (analytic.p * (1.0 - analytic.p) / n).sqrt();
    println!("analytic    {:.9}", analytic.p);
    println!("monte_carlo {:.9} (n = {}, seed = {})", mc, args.samples, args.seed);
    println!("difference  {:.3e} (3-sigma bound {:.3e})", (analytic.p - mc).abs(), bound);
    if analytic.degenerate {
        println!("note: near-singular covariance, degenerate formula used");
    }
    Ok(Outcome::Ok)
}

fn cmd_render(args: RenderArgs) -> Result<Outcome> {
    let text = std::fs::read_to_string(&args.trace).with_context(|| format!("reading {}", args.trace.display()))?;
    let trace = Trace::from_ndjson(&text).with_context(|| format!("trace {}", args.trace.display()))?;
    let last = trace.ticks.len();
    if args.speed_plot {
        write_file(&args.out, render_speed_plot(&trace).as_bytes())?;
        return Ok(Outcome::Ok);
    }
    if let Some((a, b)) = args.range {
        if b > last {
            bail!("range end {b} beyond last tick {last}");
        }
        std::fs::create_dir_all(&args.out)?;
        for k in a..=b {
            let svg = render_tick(&trace, k).expect("tick in range");
            write_file(&args.out.join(format!("tick_{k:05}.svg")), svg.as_bytes())?;
        }
        return Ok(Outcome::Ok);
    }
    let k = args.tick.unwrap_or(0);
    let svg = render_tick(&trace, k).with_context(|| format!("tick {k} beyond last tick {last}"))?;
    write_file(&args.out, svg.as_bytes())?;
    Ok(Outcome::Ok)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Policy(a) => cmd_policy(a),
        Command::Run(a) => cmd_run(a),
        Command::Batch(a) => cmd_batch(a),
        Command::RiskCheck(a) => cmd_risk_check(a),
        Command::Render(a) => cmd_render(a),
    };
    match result {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::Collision) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
