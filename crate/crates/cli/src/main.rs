use std::fmt::Write as _;
use std::io::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use objsearch_core::llm_gateway::{Gateway, GatewayConfig};
use objsearch_core::metrics::FailurePe;
use objsearch_core::planner::DistanceNormalizer;
use objsearch_core::report;
use objsearch_core::runner::{MethodRun, Runner, Scorers};
use objsearch_core::scenario::{load_scenario_file, Scenario, ScorerKind};
use objsearch_core::Method;

#[derive(Parser, Debug)]
#[command(name = "objsearch", version, about = "Language-guided object search on waypoint graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print the affinity distribution over seen labels for a target.
    Score(Common),
    /// Print the search plan from a start waypoint.
    Plan {
        #[command(flatten)]
        common: Common,
        /// Start waypoint (defaults to the first declared waypoint).
        #[arg(long)]
        start: Option<String>,
        #[arg(long, default_value = "losae")]
        method: String,
    },
    /// Run seeded trials of one method and write CSV reports.
    Run {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        trials: TrialArgs,
        #[arg(long, default_value = "losae")]
        method: String,
    },
    /// Paired comparison of several methods over the same trials.
    Bench {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        trials: TrialArgs,
        /// Comma-separated method names.
        #[arg(long, default_value = "losae,room_search,hottest_object,hottest_waypoint")]
        method: String,
    },
}

#[derive(Args, Debug)]
struct Common {
    #[arg(long)]
    scenario: PathBuf,
    /// Target label; defaults to the scenario's ground truth.
    #[arg(long)]
    target: Option<String>,
    #[arg(long, value_enum)]
    scorer: Option<ScorerArg>,
    /// Score weight in the path cost.
    #[arg(long)]
    lambda: Option<f64>,
    /// Largest scored-waypoint count planned exhaustively.
    #[arg(long)]
    exhaustive_limit: Option<usize>,
    /// Leg normalizer: max_pairwise or none.
    #[arg(long)]
    normalizer: Option<String>,
    /// PE credited to failed episodes: zero or traversed.
    #[arg(long, default_value = "zero")]
    failure_pe: FailurePe,
    /// Response cache file for the llm scorer.
    #[arg(long)]
    cache: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrialArgs {
    #[arg(long, default_value_t = 15)]
    trials: usize,
    /// Sampling seed; defaults to the scenario's seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum ScorerArg {
    Llm,
    Table,
}

struct Loaded {
    scenario: Scenario,
    scorers: Scorers,
    target: Option<String>,
    lambda: Option<f64>,
    exhaustive_limit: Option<usize>,
    normalizer: Option<DistanceNormalizer>,
    failure_pe: FailurePe,
}

impl Loaded {
    fn runner(&self) -> Result<Runner<'_>> {
        let mut runner = Runner::new(&self.scenario, &self.scorers);
        if let Some(t) = &self.target {
            runner.target = t.clone();
        }
        if let Some(l) = self.lambda {
            runner.planner.score_weight = l;
        }
        if let Some(n) = self.exhaustive_limit {
            runner.planner.exhaustive_limit = n;
        }
        if let Some(n) = self.normalizer {
            runner.planner.distance_normalizer = n;
        }
        runner.failure_pe = self.failure_pe;
        runner.planner.validate()?;
        Ok(runner)
    }
}

fn load(common: &Common) -> Result<Loaded> {
    let scenario = load_scenario_file(&common.scenario)
        .with_context(|| format!("loading {}", common.scenario.display()))?;
    let kind = match common.scorer {
        Some(ScorerArg::Llm) => ScorerKind::Llm,
        Some(ScorerArg::Table) => ScorerKind::Table,
        None => scenario.scorer_kind,
    };
    let gateway = if kind == ScorerKind::Llm {
        let mut cfg = GatewayConfig::from_env();
        cfg.cache_path = common.cache.clone();
        if cfg.api_key.is_none() {
            bail!(objsearch_core::llm_gateway::GatewayError::MissingCredential);
        }
        Some(Arc::new(Gateway::new(cfg)))
    } else {
        None
    };
    let scorers = Scorers::for_scenario(&scenario, kind, gateway)?;
    let normalizer = match common.normalizer.as_deref() {
        None => None,
        Some("max_pairwise") => Some(DistanceNormalizer::MaxPairwise),
        Some("none") => Some(DistanceNormalizer::None),
        Some(other) => bail!("unknown normalizer `{other}` (expected max_pairwise or none)"),
    };
    Ok(Loaded {
        scenario,
        scorers,
        target: common.target.clone(),
        lambda: common.lambda,
        exhaustive_limit: common.exhaustive_limit,
        normalizer,
        failure_pe: common.failure_pe,
    })
}

/// Writes to stdout, treating a closed pipe (e.g. `| head`) as success.
fn say(text: &str) -> Result<()> {
    let mut stdout = std::io::stdout().lock();
    match stdout.write_all(text.as_bytes()).and_then(|_| stdout.flush()) {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        other => Ok(other?),
    }
}

fn parse_methods(list: &str) -> Result<Vec<Method>> {
    let mut out = Vec::new();
    for name in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let m: Method = name.parse()?;
        if !out.contains(&m) {
            out.push(m);
        }
    }
    if out.is_empty() {
        bail!("no methods given");
    }
    Ok(out)
}

fn cmd_score(common: &Common) -> Result<()> {
    let loaded = load(common)?;
    let runner = loaded.runner()?;
    let dist = runner.distribution()?;
    let mut out = format!("target: {}\n", dist.target_label);
    if dist.uniform_fallback {
        out.push_str("note: all raw scores below floor; uniform fallback\n");
    }
    let _ = writeln!(out, "{:<24} {:>12} {:>12}", "label", "probability", "raw");
    for (label, p) in dist.ranked() {
        let raw = dist.raw.get(label).copied().unwrap_or(f64::NAN);
        let _ = writeln!(out, "{label:<24} {p:>12.6} {raw:>12.6}");
    }
    say(&out)
}

fn cmd_plan(common: &Common, start: Option<&str>, method: &str) -> Result<()> {
    let loaded = load(common)?;
    let runner = loaded.runner()?;
    let method: Method = method.parse()?;
    let start = match start {
        Some(s) => s.to_string(),
        None => loaded.scenario.env.waypoints()[0].id.clone(),
    };
    let prepared = runner.prepare(&[method])?;
    let plan = runner.plan(&prepared, method, &start)?;
    let mut out = format!("target: {}  start: {}  mode: {}\n", runner.target, plan.start, plan.mode.as_str());
    let _ = writeln!(
        out,
        "{:>4} {:<20} {:>10} {:>10} {:>10} {:>11}",
        "#", "waypoint", "leg_m", "leg_cost", "score", "cumulative"
    );
    for (i, s) in plan.steps.iter().enumerate() {
        let _ = writeln!(
            out,
            "{:>4} {:<20} {:>10.3} {:>10.4} {:>10.4} {:>11.4}",
            i + 1,
            s.waypoint,
            s.leg_meters,
            s.leg_cost,
            s.score,
            s.cumulative
        );
    }
    let _ = writeln!(out, "travel: {:.3} m  cost: {:.6}", plan.travel_meters(), plan.cost);
    say(&out)
}

fn emit(runs: &[MethodRun], out: Option<&PathBuf>) -> Result<bool> {
    let mut text = format!("{}\n{}", report::pe_table(runs), report::success_table(runs));
    for run in runs {
        let s = &run.report.summary;
        if s.pe_excluded > 0 {
            let _ = writeln!(text, "{}: {} episode(s) with zero ideal length excluded from PE", run.method, s.pe_excluded);
        }
        if s.errors > 0 {
            let _ = writeln!(text, "{}: {} episode(s) errored", run.method, s.errors);
        }
    }
    say(&text)?;
    if let Some(dir) = out {
        report::write_all(dir, runs).with_context(|| format!("writing reports to {}", dir.display()))?;
    }
    Ok(runs.iter().any(MethodRun::has_errors))
}

fn cmd_bench(common: &Common, trials: &TrialArgs, methods: &str) -> Result<bool> {
    let methods = parse_methods(methods)?;
    if trials.trials == 0 {
        bail!("--trials must be at least 1");
    }
    let loaded = load(common)?;
    let runner = loaded.runner()?;
    let seed = trials.seed.unwrap_or(loaded.scenario.params.seed);
    let runs = runner.bench(&methods, trials.trials, seed)?;
    emit(&runs, trials.out.as_ref())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Score(c) => cmd_score(c).map(|_| false),
        Command::Plan { common, start, method } => cmd_plan(common, start.as_deref(), method).map(|_| false),
        Command::Run { common, trials, method } => {
            match parse_methods(method) {
                Ok(m) if m.len() == 1 => cmd_bench(common, trials, method),
                Ok(_) => Err(anyhow::anyhow!("run takes a single --method; use bench for several")),
                Err(e) => Err(e),
            }
        }
        Command::Bench { common, trials, method } => cmd_bench(common, trials, method),
    };
    match result {
        Ok(false) => ExitCode::SUCCESS,
        Ok(true) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
