//! `catelab` - run Monte Carlo cells of the CATE estimator laboratory,
//! re-summarize finished runs, and inspect the built-in scenario fixtures.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use catelab_core::harness::{run_plan, summarize_dir, EngineConfig, RunArtifacts, RunPlan};
use catelab_core::metrics::StudySummary;
use catelab_core::sim::fixtures;
use catelab_core::{Scenario, ScenarioSpec, Setting};

#[derive(Parser)]
#[command(
    name = "catelab",
    version,
    about = "Monte Carlo laboratory for CATE estimators under unmeasured confounding",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulation cell and write replication, summary, plot, and
    /// manifest files into the output directory.
    Run(RunArgs),
    /// Recompute the summary and plot files from a run directory's
    /// replications.csv and print the summary table.
    Summarize(SummarizeArgs),
    /// Inspect the scenario fixtures compiled into the binary.
    Fixtures(FixturesArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Scenario of the built-in fixture to run: hte | nohte
    #[arg(long, value_name = "NAME", conflicts_with = "config")]
    scenario: Option<String>,
    /// Setting of the built-in fixture to run:
    /// primary | weak-confounding | small-n | relaxed-nco
    #[arg(long, value_name = "NAME", conflicts_with = "config")]
    setting: Option<String>,
    /// Load the scenario specification from a TOML file instead of a fixture
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Replications to run (default: the scenario's own value)
    #[arg(long, value_name = "N")]
    reps: Option<u64>,
    /// Master seed (default: the scenario's own value)
    #[arg(long, value_name = "S")]
    seed: Option<u64>,
    /// Worker threads; 0 uses every core. Outputs are byte-identical for
    /// every thread count.
    #[arg(long, value_name = "T", default_value_t = 0)]
    threads: usize,
    /// Output directory (created if missing)
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Plug the generating coefficients into the oracle instead of refitting
    /// it per replication
    #[arg(long = "oracle-plugin-coefs")]
    oracle_plugin_coefs: bool,
    /// Trees per causal forest (default 4000)
    #[arg(long, value_name = "N")]
    trees: Option<usize>,
    /// Random tuning candidates per forest beyond the default parameters;
    /// 0 skips tuning (default 50)
    #[arg(long, value_name = "N")]
    tune_draws: Option<usize>,
    /// Trees per tuning pilot forest (default 200)
    #[arg(long, value_name = "N")]
    pilot_trees: Option<usize>,
    /// Trees per nuisance regression forest (default 500)
    #[arg(long, value_name = "N")]
    nuisance_trees: Option<usize>,
}

#[derive(Args)]
struct SummarizeArgs {
    /// Run directory containing replications.csv
    #[arg(long = "in", value_name = "DIR")]
    input: PathBuf,
}

#[derive(Args)]
struct FixturesArgs {
    #[command(subcommand)]
    command: FixturesCommand,
}

#[derive(Subcommand)]
enum FixturesCommand {
    /// List every built-in scenario fixture
    List,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Summarize(args) => cmd_summarize(args),
        Command::Fixtures(args) => match args.command {
            FixturesCommand::List => cmd_fixtures_list(),
        },
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn load_spec(args: &RunArgs) -> Result<ScenarioSpec, catelab_core::Error> {
    if let Some(path) = &args.config {
        return ScenarioSpec::from_path(path);
    }
    match (&args.scenario, &args.setting) {
        (Some(sc), Some(set)) => fixtures::load(Scenario::parse(sc)?, Setting::parse(set)?),
        _ => Err(catelab_core::Error::config(
            "pass both --scenario and --setting, or --config FILE",
        )),
    }
}

fn cmd_run(args: RunArgs) -> Result<(), catelab_core::Error> {
    let spec = load_spec(&args)?;

    let mut engine = EngineConfig::default();
    if let Some(v) = args.trees {
        engine.forest_trees = v;
    }
    if let Some(v) = args.tune_draws {
        engine.tune_draws = v;
    }
    if let Some(v) = args.pilot_trees {
        engine.pilot_trees = v;
    }
    if let Some(v) = args.nuisance_trees {
        engine.nuisance_trees = v;
    }
    engine.oracle_plugin = args.oracle_plugin_coefs;

    let seed = args.seed.unwrap_or(spec.master_seed);
    let reps = args.reps.unwrap_or(spec.replications as u64);
    let cell = spec.cell_id();

    let mut plan = RunPlan::new(vec![spec], args.out.clone(), seed);
    plan.replications = reps;
    plan.threads = args.threads;
    plan.engine = engine;

    eprintln!("running {cell}: {reps} replications, seed {seed}");
    let arts = run_plan(&plan)?;
    report_run(&arts, &args.out);
    Ok(())
}

fn report_run(arts: &RunArtifacts, out: &Path) {
    println!(
        "wrote {} result rows to {}",
        arts.results.len(),
        out.display()
    );
    println!("  files: replications.csv summary.csv nco_plot.csv manifest.json");
    if !arts.failures.is_empty() {
        println!(
            "  WARNING: {} replication cells failed; see manifest.json",
            arts.failures.len()
        );
    }
    print_summary(&arts.summary);
}

fn cmd_summarize(args: SummarizeArgs) -> Result<(), catelab_core::Error> {
    let summary = summarize_dir(&args.input)?;
    println!(
        "rewrote summary.csv and nco_plot.csv in {}",
        args.input.display()
    );
    print_summary(&summary);
    Ok(())
}

fn print_summary(summary: &StudySummary) {
    println!(
        "\n{:<6} {:<16} {:<14} {:<10} {:>5} {:>24} {:>10} {:>8}",
        "scen", "setting", "estimator", "regime", "reps", "ate median [2.5, 97.5]", "rmse", "cfb"
    );
    for cell in &summary.cells {
        let rmse = cell
            .rmse
            .as_ref()
            .map(|s| format!("{:.4}", s.median))
            .unwrap_or_else(|| "-".to_string());
        let cfb = cell
            .c_for_benefit
            .as_ref()
            .map(|s| format!("{:.3}", s.median))
            .unwrap_or_else(|| "-".to_string());
        println!(
            "{:<6} {:<16} {:<14} {:<10} {:>5} {:>8.4} [{:+.4}, {:+.4}] {:>10} {:>8}",
            cell.scenario.as_str(),
            cell.setting.as_str(),
            cell.estimator.as_str(),
            cell.regime.as_str(),
            cell.replications,
            cell.ate.median,
            cell.ate.lo,
            cell.ate.hi,
            rmse,
            cfb,
        );
    }
}

fn cmd_fixtures_list() -> Result<(), catelab_core::Error> {
    println!(
        "{:<6} {:<16} {:>7} {:>6} {:>10}  {:<30}",
        "scen", "setting", "n", "reps", "seed", "covariates"
    );
    for spec in fixtures::load_all()? {
        let names: Vec<&str> = spec.covariates.iter().map(|c| c.name.as_str()).collect();
        println!(
            "{:<6} {:<16} {:>7} {:>6} {:>10}  {}",
            spec.scenario.as_str(),
            spec.setting.as_str(),
            spec.n,
            spec.replications,
            spec.master_seed,
            names.join(","),
        );
    }
    Ok(())
}
