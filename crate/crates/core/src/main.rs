//! Command-line front end: generate instances, solve them with any method,
//! compare root relaxations, and drive resumable experiment batches.
//!
//! Exit codes: 0 success, 1 usage/configuration/validation error, 2 solver
//! or backend failure, 3 structurally infeasible instance.  The MILP/LP
//! backend is chosen by the `LSNDP_BACKEND` environment variable (default
//! `highs`).

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use lsndp::bench::{
    aggregate_reports, run_experiment, root_study, run_method, BenchError, ExperimentConfig,
    Method,
};
use lsndp::generator::{generate, generate_exact_aggregatable, GeneratorParams};
use lsndp::instance::{load_instance, save_instance};
use lsndp::metapbd::{events_to_jsonl, MetaError, MetaParams, WallClock};
use lsndp::solver::backend_from_env;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "lsndp",
    version,
    about = "Logistics service network design: instance generation, partial-decomposition solvers, and benchmarking",
    after_help = "Backend selection: set LSNDP_BACKEND (default `highs`)."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a deterministic random instance as JSON.
    Generate {
        /// Generator parameters as a JSON file; flags below override fields.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        n_nodes: Option<usize>,
        #[arg(long)]
        n_products: Option<usize>,
        #[arg(long)]
        n_families: Option<usize>,
        #[arg(long)]
        days: Option<u32>,
        #[arg(long)]
        periods_per_day: Option<u32>,
        /// Probability that a supplier offers each product of its families.
        #[arg(long)]
        supply_probability: Option<f64>,
        /// Expected demands per customer-day.
        #[arg(long)]
        demand_density: Option<f64>,
        /// Make offers all-or-nothing so this many family-aligned subsets
        /// aggregate exactly.
        #[arg(long)]
        exact_aggregatable: Option<usize>,
        /// Output file (default: stdout).
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Solve one instance with one method.
    Solve {
        instance: PathBuf,
        /// One of: direct, single, families, random, meta_pbd, phase1_only,
        /// phase2_only.
        #[arg(long, default_value = "meta_pbd")]
        method: String,
        /// Total time budget in seconds (phases split it internally).
        #[arg(long, default_value_t = 600.0)]
        time_limit: f64,
        /// Stop at this proven relative gap.
        #[arg(long, default_value_t = 0.01)]
        gap: f64,
        /// Largest aggregation level the adaptive search may visit.
        #[arg(long, default_value_t = 10)]
        k_max: usize,
        /// Seed for partition construction and the random method.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the run record as JSON here.
        #[arg(long, short)]
        out: Option<PathBuf>,
        /// Write the line-oriented event log here.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Compare aggregated-master root relaxations against the full model's.
    RootStudy {
        instance: PathBuf,
        /// Aggregation levels to test, comma-separated (e.g. 1,2,4,7).
        #[arg(long, value_delimiter = ',', required = true)]
        k: Vec<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write rows as JSON here (default: print a table).
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Run an experiment config (instances × methods); resumable by cell.
    Bench {
        /// Experiment configuration (JSON).
        config: PathBuf,
        /// Output directory for cells, logs, and reports.
        #[arg(long, short, default_value = "bench_out")]
        out: PathBuf,
    },
    /// Re-aggregate reports from existing cells without running anything.
    Report {
        /// Experiment configuration (JSON).
        config: PathBuf,
        #[arg(long, short, default_value = "bench_out")]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn exit_code_for(e: &BenchError) -> u8 {
    match e {
        BenchError::Meta(MetaError::Infeasible) => 3,
        BenchError::Meta(_) | BenchError::Solver(_) | BenchError::Model(_) | BenchError::Solve(_) => 2,
        BenchError::Instance(_)
        | BenchError::Generator(_)
        | BenchError::Partition(_)
        | BenchError::Io(_)
        | BenchError::Json(_)
        | BenchError::Csv(_)
        | BenchError::Config(_)
        | BenchError::EmptyBatch
        | BenchError::MismatchedBatch(_)
        | BenchError::UnknownMethod(_) => 1,
    }
}

fn dispatch(cli: Cli) -> Result<(), BenchError> {
    match cli.command {
        Command::Generate {
            config,
            seed,
            n_nodes,
            n_products,
            n_families,
            days,
            periods_per_day,
            supply_probability,
            demand_density,
            exact_aggregatable,
            out,
        } => {
            let mut params: GeneratorParams = match config {
                Some(path) => serde_json::from_str(&fs::read_to_string(path)?)?,
                None => GeneratorParams::default(),
            };
            if let Some(v) = seed {
                params.seed = v;
            }
            if let Some(v) = n_nodes {
                params.n_nodes = v;
            }
            if let Some(v) = n_products {
                params.n_products = v;
            }
            if let Some(v) = n_families {
                params.n_families = v;
            }
            if let Some(v) = days {
                params.days = v;
            }
            if let Some(v) = periods_per_day {
                params.periods_per_day = v;
            }
            if let Some(v) = supply_probability {
                params.supply_probability = v;
            }
            if let Some(v) = demand_density {
                params.demand_density = v;
            }
            let inst = match exact_aggregatable {
                Some(k) => generate_exact_aggregatable(&params, k)?,
                None => generate(&params)?,
            };
            match out {
                Some(path) => save_instance(&inst, path)?,
                None => println!("{}", serde_json::to_string_pretty(&inst)?),
            }
            Ok(())
        }
        Command::Solve { instance, method, time_limit, gap, k_max, seed, out, log } => {
            let inst = load_instance(&instance)?;
            let method: Method = method.parse()?;
            let params = MetaParams { gap, k_max, seed, ..MetaParams::with_time_limit(time_limit) };
            let backend = backend_from_env()?;
            let clock = WallClock::new();
            let id = instance
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "instance".into());
            let (record, events) =
                run_method(&inst, &id, method, &params, backend.as_ref(), &clock)?;
            println!(
                "method={} ub={} lb={} gap={:.6} wall={:.3}s cuts={} masters={} subproblems={} trajectory=[{}]",
                record.method,
                record.ub,
                record.lb,
                record.gap,
                record.wall_seconds,
                record.n_cuts,
                record.n_master_solutions,
                record.n_subproblems,
                record
                    .k_trajectory
                    .iter()
                    .map(|k| k.to_string())
                    .collect::<Vec<_>>()
                    .join(",")
            );
            if let Some(path) = out {
                fs::write(path, serde_json::to_string_pretty(&record)?)?;
            }
            if let Some(path) = log {
                fs::write(path, events_to_jsonl(&events))?;
            }
            Ok(())
        }
        Command::RootStudy { instance, k, seed, out } => {
            let inst = load_instance(&instance)?;
            let backend = backend_from_env()?;
            let rows = root_study(&inst, &k, seed, backend.as_ref())?;
            for row in &rows {
                println!(
                    "K={} master_root={} full_root={} lb_root_gap={:.6} time_ratio={:.4}",
                    row.k, row.master_root, row.lsndp_root, row.lb_root_gap, row.root_time_ratio
                );
            }
            if let Some(path) = out {
                fs::write(path, serde_json::to_string_pretty(&rows)?)?;
            }
            Ok(())
        }
        Command::Bench { config, out } => {
            let config = ExperimentConfig::from_json_file(config)?;
            let report = run_experiment(&config, &out)?;
            print_report_summary(&report);
            Ok(())
        }
        Command::Report { config, out } => {
            let config = ExperimentConfig::from_json_file(config)?;
            let report = aggregate_reports(&config, &out)?;
            print_report_summary(&report);
            Ok(())
        }
    }
}

fn print_report_summary(report: &lsndp::bench::ExperimentReport) {
    println!("records={} failures={}", report.records.len(), report.failures.len());
    for m in &report.method_summaries {
        println!(
            "method={} mean_gap_ub={:.6} mean_gap_lb={:.6} nb_ub_best={} nb_lb_best={} n={}",
            m.method, m.mean_gap_ub, m.mean_gap_lb, m.nb_ub_best, m.nb_lb_best, m.n_records
        );
    }
    for f in &report.failures {
        eprintln!("failed: {} {}: {}", f.instance, f.method, f.error);
    }
}
