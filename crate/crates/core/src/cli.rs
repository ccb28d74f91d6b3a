//! Command-line entry points.
//!
//! Exit codes: 0 success, 1 infeasible model, 2 input error, 3 internal
//! failure.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use crate::domain::{validate_catalog, CampaignId, Catalog, Frame};
use crate::engine::{DeliveryPlan, Diagnostics, EngineState, HistoryProjector, Projector, Schedule};
use crate::error::{Error, Result};
use crate::io::{self, ConfigMap, ProjectionRow, RunConfig, CONFIG_ENV};
use crate::model::Budget;
use crate::projection::{HistoryLog, ProfitProjector};
use crate::sim::{self, PolicyKind, Replay, RunReport, SimOptions, World};

#[derive(Debug, Parser)]
#[command(name = "adplan", version, about = "Plan ad-impression delivery with linear programming")]
struct Cli {
    /// Configuration file of `key = value` lines.
    #[arg(long, global = true, env = CONFIG_ENV)]
    config: Option<PathBuf>,
    /// Override a configuration key; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// More log output; repeatable.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Default)]
struct InputArgs {
    #[arg(long)]
    history: Option<String>,
    #[arg(long)]
    schedule: Option<String>,
    #[arg(long)]
    campaigns: Option<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load every input and report what was found.
    Validate {
        #[command(flatten)]
        inputs: InputArgs,
    },
    /// Run one optimization cycle and write the next frame's plan.
    Plan {
        #[command(flatten)]
        inputs: InputArgs,
        /// Frame to plan.
        #[arg(long)]
        frame: Option<String>,
        /// Plan CSV to write.
        #[arg(long)]
        out: Option<String>,
    },
    /// Run the rolling-horizon loop against a replayed log or a synthetic world.
    Run {
        #[command(flatten)]
        inputs: InputArgs,
        /// Traffic log to replay; without it the configured world is used.
        #[arg(long)]
        replay: Option<String>,
        #[arg(long)]
        seed: Option<String>,
        /// Report CSV to write.
        #[arg(long)]
        out: Option<String>,
        /// Delivery log to write when replaying.
        #[arg(long)]
        delivered: Option<String>,
    },
    /// Simulate one policy on the configured world.
    Simulate {
        #[arg(long)]
        policy: Option<String>,
        #[arg(long)]
        seed: Option<String>,
        #[arg(long)]
        out: Option<String>,
    },
    /// Compare policies over several seeds.
    Compare {
        /// Comma-separated policy names.
        #[arg(long)]
        policies: Option<String>,
        /// Seeds such as `1-20` or `1,5,9`.
        #[arg(long)]
        seeds: Option<String>,
        #[arg(long)]
        out: Option<String>,
    },
    /// Dump supply and profit projections for the remaining schedule.
    Project {
        #[command(flatten)]
        inputs: InputArgs,
        #[arg(long)]
        frame: Option<String>,
        #[arg(long)]
        out: Option<String>,
    },
}

/// Process exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Infeasible => 1,
        Error::Argument(_) | Error::Parse { .. } | Error::Io(_) => 2,
        _ => 3,
    }
}

/// Parses `args` (program name first), runs the command and returns the exit
/// code. Normal output goes to `out`, errors to standard error.
pub fn run(args: impl IntoIterator<Item = impl Into<OsString> + Clone>, out: &mut dyn Write) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        2 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    let _ = env_logger::Builder::new().filter_level(level).format_timestamp(None).try_init();
    match dispatch(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn config(cli: &Cli, flags: &[(&str, &Option<String>)]) -> Result<RunConfig> {
    let mut map = match &cli.config {
        Some(p) => ConfigMap::load(p).map_err(|e| match e {
            Error::Io(io) => Error::Argument(format!("cannot read config {}: {io}", p.display())),
            e => e,
        })?,
        None => ConfigMap::default(),
    };
    for o in &cli.overrides {
        map.set_pair(o)?;
    }
    for (key, value) in flags {
        if let Some(v) = value {
            map.set(key, v.as_str(), &format!("--{key}"));
        }
    }
    RunConfig::from_map(&map)
}

fn input_flags(i: &InputArgs) -> [(&'static str, &Option<String>); 3] {
    [("history", &i.history), ("schedule", &i.schedule), ("campaigns", &i.campaigns)]
}

struct Inputs {
    budgets: Vec<(CampaignId, Budget)>,
    catalog: Catalog,
    schedule: Schedule,
    history: HistoryLog,
}

fn load_inputs(cfg: &RunConfig) -> Result<Inputs> {
    let campaigns = io::config::existing(&cfg.paths.campaigns, "campaigns")?;
    let schedule_path = io::config::existing(&cfg.paths.schedule, "schedule")?;
    let budgets = io::load_campaigns(&campaigns)?;
    let rows = io::read_schedule_rows(&schedule_path)?;
    let catalog = io::catalog_from(&schedule_path, &budgets, &rows, cfg.clock, cfg.frames)?;
    let schedule = io::schedule_from_rows(&schedule_path, &rows, &catalog)?;
    let history = match &cfg.paths.history {
        Some(_) => io::load_history(io::config::existing(&cfg.paths.history, "history")?)?,
        None => HistoryLog::new(),
    };
    Ok(Inputs {
        budgets,
        catalog,
        schedule,
        history,
    })
}

/// Engine positioned at `frame`, with spend read off the log records logged
/// since the epoch.
fn engine_at(cfg: &RunConfig, inputs: &Inputs, frame: Frame) -> Result<EngineState> {
    let mut state = EngineState::new(
        frame,
        inputs.budgets.iter().cloned().collect(),
        inputs.history.clone(),
        cfg.clock,
        cfg.engine.clone(),
    )?;
    let start = cfg.clock.start(frame);
    for r in inputs.history.records() {
        if let Some(i) = r.campaign() {
            if r.timestamp >= cfg.clock.epoch && r.timestamp < start {
                *state.spent.entry(i.clone()).or_insert(0.0) += r.profit;
            }
        }
    }
    Ok(state)
}

/// Loads the configured inputs and runs one optimization cycle at
/// `cfg.frame`.
pub fn plan_once(cfg: &RunConfig) -> Result<(DeliveryPlan, Diagnostics)> {
    let inp = load_inputs(cfg)?;
    let state = engine_at(cfg, &inp, Frame(cfg.frame))?;
    state.plan_cycle(&inp.schedule, &projector(cfg))
}

fn projector(cfg: &RunConfig) -> HistoryProjector {
    HistoryProjector::new(cfg.engine.projection.clone(), cfg.engine.supply_method)
}

fn sim_options(cfg: &RunConfig) -> SimOptions {
    SimOptions {
        engine: cfg.engine.clone(),
        greedy: cfg.sim.greedy,
        perfect_projections: cfg.sim.perfect_projections,
        frames: cfg.sim.frames,
        seed: cfg.sim.seed,
    }
}

fn io_err(e: std::io::Error) -> Error {
    Error::Io(e)
}

fn print_report(out: &mut dyn Write, r: &RunReport) -> Result<()> {
    let over = r.overshoot().values().copied().fold(0.0, f64::max);
    writeln!(
        out,
        "{} seed {}: revenue {:.6}, impressions {}, max overshoot {:.6}, supply violations {}, probability violations {}",
        r.policy, r.seed, r.revenue, r.impressions, over, r.supply_violations, r.probability_violations
    )
    .map_err(io_err)?;
    if let Some(reason) = &r.aborted {
        writeln!(out, "  aborted: {reason}").map_err(io_err)?;
    }
    Ok(())
}

fn dispatch(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match &cli.command {
        Command::Validate { inputs } => {
            let cfg = config(&cli, &input_flags(inputs))?;
            let inp = load_inputs(&cfg)?;
            let unbounded = inp.budgets.iter().filter(|(_, b)| b.is_unbounded()).count();
            let creatives: usize = inp.catalog.campaigns().iter().map(|c| inp.catalog.creatives(&c.id).len()).sum();
            writeln!(out, "campaigns {} ({unbounded} unbounded)", inp.budgets.len()).map_err(io_err)?;
            writeln!(
                out,
                "creatives {creatives}, locations {}, frames {}",
                inp.catalog.locations().len(),
                inp.catalog.frame_count()
            )
            .map_err(io_err)?;
            writeln!(
                out,
                "schedule {} quads, {} new triples",
                inp.schedule.admissible.len(),
                inp.schedule.new.len()
            )
            .map_err(io_err)?;
            let span = match (inp.history.records().first(), inp.history.records().last()) {
                (Some(a), Some(b)) => format!(
                    " from {} to {}",
                    io::format_timestamp(a.timestamp),
                    io::format_timestamp(b.timestamp)
                ),
                _ => String::new(),
            };
            writeln!(out, "history {} records{span}", inp.history.len()).map_err(io_err)?;
            let violations = validate_catalog(&inp.catalog, &inp.schedule.admissible);
            for v in &violations {
                writeln!(out, "violation {}: {}", v.quad, v.reason).map_err(io_err)?;
            }
            if !violations.is_empty() {
                return Err(Error::Argument(format!("{} schedule violations", violations.len())));
            }
            writeln!(out, "ok").map_err(io_err)?;
            Ok(())
        }
        Command::Plan { inputs, frame, out: path } => {
            let mut flags = input_flags(inputs).to_vec();
            flags.push(("frame", frame));
            flags.push(("plan_out", path));
            let cfg = config(&cli, &flags)?;
            let (plan, diag) = plan_once(&cfg)?;
            io::emit_plan(&plan, &cfg.paths.plan_out)?;
            writeln!(out, "objective {}", diag.objective).map_err(io_err)?;
            writeln!(
                out,
                "frame {}: {} plan rows, {} variables, {} pivots{}",
                diag.frame,
                plan.len(),
                diag.variables,
                diag.iterations,
                if diag.secondary_dropped { ", secondary rows dropped" } else { "" }
            )
            .map_err(io_err)?;
            let levels: Vec<String> = diag.levels.iter().map(|(l, n)| format!("{l}:{n}")).collect();
            if !levels.is_empty() {
                writeln!(out, "profit levels {}", levels.join(" ")).map_err(io_err)?;
            }
            writeln!(out, "plan written to {}", cfg.paths.plan_out.display()).map_err(io_err)?;
            Ok(())
        }
        Command::Run {
            inputs,
            replay,
            seed,
            out: path,
            delivered,
        } => {
            let mut flags = input_flags(inputs).to_vec();
            flags.extend([
                ("replay", replay),
                ("seed", seed),
                ("report_out", path),
                ("delivered_out", delivered),
            ]);
            let cfg = config(&cli, &flags)?;
            let report = if cfg.paths.replay.is_some() {
                let inp = load_inputs(&cfg)?;
                let traffic = io::load_history(io::config::existing(&cfg.paths.replay, "replay")?)?;
                let traffic = Replay::from_log(&traffic, &cfg.clock);
                let state = engine_at(&cfg, &inp, Frame(cfg.frame))?;
                let last = Frame(inp.catalog.frame_count());
                let run = sim::replay(state, &inp.schedule, &projector(&cfg), &traffic, last, cfg.sim.seed)?;
                if let Some(p) = &cfg.paths.delivered_out {
                    io::emit_history(&run.delivered, p)?;
                }
                let dropped = run.diagnostics.iter().filter(|d| d.secondary_dropped).count();
                writeln!(out, "replayed {} frames, secondary rows dropped in {dropped}", run.diagnostics.len())
                    .map_err(io_err)?;
                run.report
            } else {
                let world = Arc::new(World::generate(cfg.world.build()?)?);
                sim::run_policy(&world, PolicyKind::LpEngine, &sim_options(&cfg))?
            };
            print_report(out, &report)?;
            io::emit_reports(std::slice::from_ref(&report), &cfg.paths.report_out)?;
            Ok(())
        }
        Command::Simulate { policy, seed, out: path } => {
            let cfg = config(&cli, &[("policy", policy), ("seed", seed), ("report_out", path)])?;
            let world = Arc::new(World::generate(cfg.world.build()?)?);
            let report = sim::run_policy(&world, cfg.sim.policy, &sim_options(&cfg))?;
            print_report(out, &report)?;
            io::emit_reports(std::slice::from_ref(&report), &cfg.paths.report_out)?;
            Ok(())
        }
        Command::Compare {
            policies,
            seeds,
            out: path,
        } => {
            let cfg = config(&cli, &[("policies", policies), ("seeds", seeds), ("report_out", path)])?;
            let world = cfg.world.build()?;
            let cmp = sim::compare(&world, &cfg.sim.policies, &cfg.sim.seeds, &sim_options(&cfg))?;
            for s in &cmp.summaries {
                writeln!(
                    out,
                    "{:<10} revenue {:.6} ± {:.6} over {} seeds",
                    s.policy.to_string(),
                    s.mean,
                    s.std,
                    s.revenues.len()
                )
                .map_err(io_err)?;
            }
            if let (Some((m, sd)), Some(p)) = (cmp.uplift, cmp.sign_p) {
                writeln!(
                    out,
                    "uplift of lp-engine over greedy {:.2}% ± {:.2}%, sign test p = {p:.3e}",
                    100.0 * m,
                    100.0 * sd
                )
                .map_err(io_err)?;
            }
            let unsafe_runs = cmp.reports.iter().filter(|r| !r.budget_safe()).count();
            let violations: usize = cmp
                .reports
                .iter()
                .map(|r| r.supply_violations + r.probability_violations)
                .sum();
            writeln!(out, "runs {}, budget overshoots {unsafe_runs}, violations {violations}", cmp.reports.len())
                .map_err(io_err)?;
            io::emit_reports(&cmp.reports, &cfg.paths.report_out)?;
            Ok(())
        }
        Command::Project {
            inputs,
            frame,
            out: path,
        } => {
            let mut flags = input_flags(inputs).to_vec();
            flags.push(("frame", frame));
            flags.push(("projections_out", path));
            let cfg = config(&cli, &flags)?;
            let inp = load_inputs(&cfg)?;
            let k0 = Frame(cfg.frame);
            let window = inp.schedule.admissible.filter(|q| q.frame >= k0);
            let proj = projector(&cfg).project(&inp.history, &window, &cfg.clock, k0)?;
            let profits = ProfitProjector::new(&inp.history, &cfg.engine.projection, cfg.clock, cfg.clock.start(k0));
            let rows: Vec<ProjectionRow> = window
                .iter()
                .map(|q| ProjectionRow {
                    quad: q.clone(),
                    supply: proj.supply.get(&q.slot()).copied().unwrap_or(0.0),
                    profit: proj.profit.get(q).copied().unwrap_or(0.0),
                    level: profits.project(q).level,
                })
                .collect();
            io::emit_projections(&rows, &cfg.paths.projections_out)?;
            let mut levels: BTreeMap<String, usize> = BTreeMap::new();
            for r in &rows {
                *levels.entry(r.level.to_string()).or_default() += 1;
            }
            let levels: Vec<String> = levels.iter().map(|(l, n)| format!("{l}:{n}")).collect();
            writeln!(out, "{} quads projected, levels {}", rows.len(), levels.join(" ")).map_err(io_err)?;
            writeln!(out, "projections written to {}", cfg.paths.projections_out.display()).map_err(io_err)?;
            Ok(())
        }
    }
}
