use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use gridward::attack::{compute_initial_attack, validate_attack, AttackOptions, InitialAttackSolution};
use gridward::defense::{voltage_change_score, Detector};
use gridward::grid::{Network, OperatingPoint};
use gridward::io::{attack_flows, parse_case, write_reports, AttackConfig, DefenseKind, ReportBundle, ScenarioConfig};
use gridward::sim::{run_scenario, voltage_experiments};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(name = "gridward", version, about = "Grid attack synthesis and injection-based detection")]
struct Cli {
    /// Overrides the scenario seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Feasibility tolerance for attack synthesis and validation, in p.u.
    #[arg(long, global = true, default_value_t = 1e-6)]
    tolerance: f64,
    #[arg(long, short, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum DefenseArg {
    Pairs,
    Covariance,
    Criteria,
}

impl From<DefenseArg> for DefenseKind {
    fn from(d: DefenseArg) -> Self {
        DefenseKind::from(match d {
            DefenseArg::Pairs => Detector::Pairs,
            DefenseArg::Covariance => Detector::Covariance,
            DefenseArg::Criteria => Detector::Criteria,
        })
    }
}

#[derive(Subcommand)]
enum Command {
    /// Computes and validates an initial attack.
    Attack {
        case: PathBuf,
        spec: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Runs a scenario with its configured defense and writes reports.
    Simulate {
        scenario: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Runs a scenario under one defense and prints its metrics.
    Detect {
        scenario: PathBuf,
        #[arg(long, value_enum)]
        defense: DefenseArg,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Scores how far random redispatches move load-bus voltages.
    ScoreVoltage {
        case: PathBuf,
        #[arg(long, default_value_t = 10)]
        experiments: usize,
    },
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<gridward::Error>() {
        Some(gridward::Error::AttackInfeasible { .. }) => 2,
        Some(e) if e.is_divergence() => 3,
        _ => 1,
    }
}

fn rejected(network: &Network, sol: &InitialAttackSolution) -> gridward::Error {
    let limit = network.lines[sol.spec.target].s_max * (1.0 + sol.spec.overload_margin);
    gridward::Error::AttackInfeasible {
        best_objective: sol.objective,
        required: limit * limit,
    }
}

fn attack_options(cli: &Cli) -> AttackOptions {
    AttackOptions {
        tolerance: cli.tolerance,
        ..AttackOptions::default()
    }
}

fn load_scenario(cli: &Cli, path: &PathBuf) -> anyhow::Result<ScenarioConfig> {
    let mut cfg = ScenarioConfig::load(path).with_context(|| format!("reading {}", path.display()))?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn run_built(cli: &Cli, cfg: &ScenarioConfig, kind: Option<DefenseKind>) -> anyhow::Result<ReportBundle> {
    let built = cfg.build(kind, &attack_options(cli))?;
    let mut bundle = ReportBundle::default();
    if let (Some(sol), Some(report)) = (&built.attack, &built.validation) {
        if !report.all_passed() {
            return Err(rejected(&built.scenario.network, sol).into());
        }
        bundle.flows = attack_flows(&built.scenario.network, sol)?;
        bundle.checks = report.checks.clone();
    }
    let outcome = run_scenario(&built.scenario)?;
    bundle.metrics.push(outcome.metrics);
    bundle.reports.extend(outcome.report);
    Ok(bundle)
}

fn print_metrics(bundle: &ReportBundle) {
    for m in &bundle.metrics {
        let first = m.time_to_first_flag.map_or("-".to_string(), |t| t.to_string());
        println!(
            "{}: precision {:.3} recall {:.3} first flag {first} flagged buses {:?} lines {:?}",
            m.detector, m.precision, m.recall, m.flagged_buses, m.flagged_lines
        );
    }
    for r in &bundle.reports {
        for note in &r.notes {
            println!("note ({}): {note}", r.detector.name());
        }
    }
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    match &cli.command {
        Command::Attack { case, spec, out } => {
            let network = parse_case(case).with_context(|| format!("reading {}", case.display()))?;
            let spec = AttackConfig::load(spec)
                .with_context(|| format!("reading {}", spec.display()))?
                .resolve(&network)?;
            let base = OperatingPoint::solve(&network)?;
            let sol = compute_initial_attack(&network, &spec, &base, &attack_options(cli))?;
            let report = validate_attack(&network, &spec, &sol, cli.tolerance);
            let bundle = ReportBundle {
                flows: attack_flows(&network, &sol)?,
                checks: report.checks.clone(),
                ..ReportBundle::default()
            };
            write_reports(&bundle, out)?;
            if !cli.quiet {
                println!("{report}");
                let line = &network.lines[spec.target];
                println!(
                    "target {}-{}: true |S| {:.4} p.u., limit {:.4} p.u.",
                    line.from,
                    line.to,
                    sol.objective.sqrt(),
                    line.s_max
                );
            }
            if !report.all_passed() {
                return Err(rejected(&network, &sol).into());
            }
        }
        Command::Simulate { scenario, out } => {
            let cfg = load_scenario(cli, scenario)?;
            let bundle = run_built(cli, &cfg, None)?;
            write_reports(&bundle, out)?;
            if !cli.quiet {
                print_metrics(&bundle);
            }
        }
        Command::Detect { scenario, defense, out } => {
            let cfg = load_scenario(cli, scenario)?;
            let bundle = run_built(cli, &cfg, Some((*defense).into()))?;
            if let Some(out) = out {
                write_reports(&bundle, out)?;
            }
            if !cli.quiet {
                print_metrics(&bundle);
            }
        }
        Command::ScoreVoltage { case, experiments } => {
            let network = parse_case(case).with_context(|| format!("reading {}", case.display()))?;
            let base = OperatingPoint::solve(&network)?;
            let mut rng = ChaCha8Rng::seed_from_u64(cli.seed.unwrap_or(0));
            let states = voltage_experiments(&network, &base, *experiments, &mut rng)?;
            let score = voltage_change_score(&network, &base.state, &states)?;
            if !cli.quiet {
                println!("load buses: {}", score.per_bus.len());
                println!("min: {:.2}%", 100.0 * score.min);
                println!("mean: {:.2}%", 100.0 * score.mean);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = if cli.quiet { "error" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
