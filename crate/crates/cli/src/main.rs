use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use evfleet::adp::PolicyKind;
use evfleet::error::{Error, Result};
use evfleet::simio::commands;
use evfleet::simio::config::{PricingModeName, RunConfig};

#[derive(Parser)]
#[command(name = "evfleet", version, about = "Electric ride-sharing fleet simulator and learner")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Run seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory; overrides the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[arg(long, global = true, value_enum)]
    policy: Option<Policy>,

    /// Use level-0 estimates only.
    #[arg(long, global = true)]
    no_hier_agg: bool,

    /// Skip the monotonicity projections.
    #[arg(long, global = true)]
    no_monotone: bool,

    /// Learn surge prices.
    #[arg(long, global = true)]
    pricing: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Train a value table and write the revenue series.
    Train,
    /// Run paired evaluation episodes of a policy.
    Evaluate,
    /// Learn prices in isolated zones against hidden true curves.
    PriceSim,
    /// Sweep fleet size and battery tier for lifetime profit.
    Economics,
    /// Write the configured trip data as CSV.
    Synth,
    /// Solve a single-car instance exactly and print its value tables.
    Oracle,
}

#[derive(Clone, Copy, ValueEnum)]
enum Policy {
    Myopic,
    Vfa,
}

fn config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        // Relative to the working directory, not the config file.
        cfg.output.dir = std::env::current_dir()?.join(out);
    }
    if let Some(p) = cli.policy {
        cfg.policy.kind = match p {
            Policy::Myopic => PolicyKind::Myopic,
            Policy::Vfa => PolicyKind::Vfa,
        };
    }
    if cli.no_hier_agg {
        cfg.vfa.hierarchical = false;
    }
    if cli.no_monotone {
        cfg.vfa.monotone = false;
    }
    if cli.pricing {
        cfg.pricing.mode = PricingModeName::Learn;
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = config(cli)?;
    match cli.command {
        Command::Train => {
            let r = commands::train(&cfg)?;
            println!(
                "trained {} iterations: revenue {:.2} -> {:.2}, {} table cells",
                r.iterations, r.first_revenue, r.last_revenue, r.table_cells
            );
        }
        Command::Evaluate => {
            let s = commands::evaluate(&cfg)?;
            println!(
                "{} over {} episodes: revenue {:.2}, per car {:.2}, coverage {:.2}%",
                s.policy, s.episodes, s.revenue, s.revenue_per_car, s.coverage_percent
            );
            let a = s.activity_percent;
            println!(
                "activity: idle {:.1}% on trip {:.1}% repositioning {:.1}% recharging {:.1}%",
                a.idle, a.on_trip, a.repositioning, a.recharging
            );
        }
        Command::PriceSim => {
            let r = commands::price_sim(&cfg)?;
            println!(
                "learned {:.4} vs oracle {:.4} per offer (expected ratio {:.4}); fixed price {:.4}",
                r.learned_revenue, r.oracle_revenue, r.expected_ratio, r.fixed_price_revenue
            );
        }
        Command::Economics => {
            let r = commands::economics(&cfg)?;
            for (n, tier) in &r.best_tiers {
                println!("fleet {n}: best battery tier {tier}");
            }
        }
        Command::Synth => {
            let r = commands::synth(&cfg)?;
            println!(
                "{} trips, mean {:.2} mi (p5 {:.2}, p95 {:.2})",
                r.summary.count, r.summary.mean_distance, r.summary.p5_distance, r.summary.p95_distance
            );
        }
        Command::Oracle => {
            let r = commands::oracle(&cfg)?;
            print!("{}", r.rendered);
            println!("optimal value from zone {} battery {}: {:.4}", r.start.zone, r.start.battery, r.value);
        }
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) | Error::TooLarge(_) => 2,
        e if e.is_data_error() => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("evfleet: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
