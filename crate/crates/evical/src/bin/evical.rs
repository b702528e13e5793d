//! Experiment runner, gradient checker, and synthetic-data generator.
//!
//! Exit codes: 0 success, 2 configuration/parameter error, 3 data error,
//! 1 runtime failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use evical::config::{ConfigError, ExperimentConfig};
use evical::data;
use evical::engine::{run_experiment, AblationFlags, EngineError};
use evical::gradcheck;
use evical::network::{save_checkpoint, MlpSpec, ModelParams};
use evical::reporting::{
    emit_csv, emit_test_rows_csv, metrics_from_reports, summary_table, write_manifest,
};

const EXIT_RUNTIME: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_DATA: u8 = 3;

#[derive(Parser)]
#[command(name = "evical", version, about = "Evidential active-learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the active-learning experiment described by a JSON config.
    Run(RunArgs),
    /// Verify every analytic gradient against finite differences.
    Gradcheck(GradcheckArgs),
    /// Generate a synthetic dataset.
    Datagen {
        #[command(subcommand)]
        kind: DatagenKind,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Path to the JSON experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Output directory for metrics, selections, and checkpoints.
    #[arg(long)]
    out: PathBuf,
    /// Base random seed.
    #[arg(long)]
    seed: u64,
    /// Override the config's selection strategy.
    #[arg(long)]
    strategy: Option<String>,
    /// Override the config's ablation (one-hot by name).
    #[arg(long)]
    ablation: Option<String>,
    /// Repeat the run with seeds seed, seed+1, ..., seed+N-1.
    #[arg(long, default_value_t = 1)]
    repeats: u32,
    /// Write into a non-empty output directory.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Random instances per suite.
    #[arg(long, default_value_t = 100)]
    trials: usize,
    /// Seed for instance generation.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Negative control: inject a wrong-sign gradient into each suite.
    #[arg(long, hide = true)]
    sabotage: bool,
}

#[derive(Subcommand)]
enum DatagenKind {
    /// Gaussian blobs on a circle, one cluster per class.
    Blobs {
        /// Number of classes.
        #[arg(long)]
        k: usize,
        /// Samples per class.
        #[arg(long)]
        n: usize,
        /// Cluster standard deviation.
        #[arg(long, default_value_t = 1.0)]
        spread: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Destination CSV path.
        #[arg(long)]
        out: PathBuf,
    },
}

fn init_threads() -> Result<(), String> {
    let Ok(raw) = std::env::var("EVICAL_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .parse()
        .map_err(|_| format!("EVICAL_THREADS: expected a positive integer, got {raw:?}"))?;
    if n == 0 {
        return Err("EVICAL_THREADS: must be positive".to_string());
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| format!("EVICAL_THREADS: {e}"))
}

fn main() -> ExitCode {
    if let Err(msg) = init_threads() {
        eprintln!("error: {msg}");
        return ExitCode::from(EXIT_CONFIG);
    }
    let cli = Cli::parse();
    match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Gradcheck(args) => cmd_gradcheck(args),
        Command::Datagen { kind } => cmd_datagen(kind),
    }
}

fn engine_exit(e: &EngineError) -> u8 {
    match e {
        EngineError::Data(_) => EXIT_DATA,
        _ => EXIT_RUNTIME,
    }
}

fn cmd_run(args: RunArgs) -> ExitCode {
    let mut cfg = match ExperimentConfig::load(&args.config) {
        Ok(c) => c,
        Err(ConfigError::Io { path, source }) => {
            eprintln!("error: {}: {source}", path.display());
            return ExitCode::from(EXIT_DATA);
        }
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    if let Some(s) = &args.strategy {
        cfg.al.strategy = s.clone();
        if let Err(e) = cfg.strategy() {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    }
    if let Some(name) = &args.ablation {
        match AblationFlags::parse(name) {
            Ok(flags) => cfg.al.ablation = flags,
            Err(msg) => {
                eprintln!("error: --ablation: {msg}");
                return ExitCode::from(EXIT_CONFIG);
            }
        }
    }
    if args.repeats == 0 {
        eprintln!("error: --repeats: must be positive");
        return ExitCode::from(EXIT_CONFIG);
    }

    if args.out.exists() {
        let occupied = std::fs::read_dir(&args.out)
            .map(|mut d| d.next().is_some())
            .unwrap_or(false);
        if occupied && !args.force {
            eprintln!(
                "error: output directory {} is not empty (pass --force to overwrite)",
                args.out.display()
            );
            return ExitCode::from(EXIT_CONFIG);
        }
    } else if let Err(e) = std::fs::create_dir_all(&args.out) {
        eprintln!("error: {}: {e}", args.out.display());
        return ExitCode::from(EXIT_RUNTIME);
    }

    let (train, test) = match cfg.load_dataset() {
        Ok(pair) => pair,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_DATA);
        }
    };
    let input_dim = train.features.cols;
    let num_classes = train.num_classes;

    let seeds: Vec<u64> = (0..args.repeats as u64).map(|i| args.seed + i).collect();
    let mut reports = Vec::with_capacity(seeds.len());
    for &seed in &seeds {
        let (al, spec, weights) = match cfg.build(seed, input_dim, num_classes) {
            Ok(t) => t,
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(EXIT_CONFIG);
            }
        };
        let report = match run_experiment(&al, &spec, &weights, &train, &test) {
            Ok(r) => r,
            Err(e) => {
                eprintln!("error: seed {seed}: {e}");
                return ExitCode::from(engine_exit(&e));
            }
        };
        println!(
            "seed {seed} strategy {} final accuracy {:.4}",
            report.strategy,
            report.cycles.last().map(|c| c.test_accuracy).unwrap_or(0.0)
        );
        if let Err(code) = write_run_artifacts(&args.out, &report) {
            return code;
        }
        reports.push(report);
    }

    let metrics = metrics_from_reports(&reports);
    if let Err(e) = emit_csv(&metrics, &args.out.join("metrics.csv")) {
        eprintln!("error: {e}");
        return ExitCode::from(EXIT_RUNTIME);
    }
    match summary_table(&reports) {
        Ok(table) => {
            if let Err(e) = std::fs::write(args.out.join("summary.csv"), table.render()) {
                eprintln!("error: summary.csv: {e}");
                return ExitCode::from(EXIT_RUNTIME);
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_RUNTIME);
        }
    }
    let config_json = serde_json::to_value(&cfg).expect("config serializes");
    if let Err(e) = write_manifest(&args.out, config_json, &seeds) {
        eprintln!("error: {e}");
        return ExitCode::from(EXIT_RUNTIME);
    }
    println!("wrote {}", args.out.join("metrics.csv").display());
    ExitCode::SUCCESS
}

/// Per-seed artifacts: selected indices per cycle, final test rows, and the
/// final parameter checkpoint.
fn write_run_artifacts(
    out: &std::path::Path,
    report: &evical::engine::ExperimentReport,
) -> Result<(), ExitCode> {
    let runtime = |e: String| {
        eprintln!("error: {e}");
        ExitCode::from(EXIT_RUNTIME)
    };
    let seed = report.seed;
    for rec in &report.cycles {
        if rec.selected.is_empty() {
            continue;
        }
        let mut body = String::from("rank,index\n");
        for (rank, idx) in rec.selected.iter().enumerate() {
            body.push_str(&format!("{rank},{idx}\n"));
        }
        let path = out.join(format!("selected_cycle{}_seed{}.csv", rec.cycle, seed));
        std::fs::write(&path, body).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
    }
    emit_test_rows_csv(
        &report.final_test_rows,
        &out.join(format!("test_rows_seed{seed}.csv")),
    )
    .map_err(|e| runtime(e.to_string()))?;

    let spec = MlpSpec {
        layer_sizes: report.layer_sizes.clone(),
        input_noise_std: 0.0,
        rng_seed: 0,
    };
    let mut params = ModelParams::init(&spec).map_err(|e| runtime(e.to_string()))?;
    params
        .unflatten_into(&report.final_params)
        .map_err(|e| runtime(e.to_string()))?;
    save_checkpoint(
        &params,
        &out.join(format!("params_seed{seed}.bin")),
        &out.join(format!("params_seed{seed}.manifest.json")),
    )
    .map_err(|e| runtime(e.to_string()))?;
    Ok(())
}

fn cmd_gradcheck(args: GradcheckArgs) -> ExitCode {
    if args.trials == 0 {
        eprintln!("error: --trials: must be positive");
        return ExitCode::from(EXIT_CONFIG);
    }
    let reports = gradcheck::run_all(args.trials, args.seed, args.sabotage);
    let mut ok = true;
    for r in &reports {
        let status = if r.passed() { "PASS" } else { "FAIL" };
        println!(
            "{status} {:<26} trials {:<5} worst rel err {:.3e}",
            r.name, r.trials, r.worst_rel_err
        );
        if !r.passed() {
            ok = false;
            eprintln!("  failing instance: {}", r.worst_case);
        }
    }
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_RUNTIME)
    }
}

fn cmd_datagen(kind: DatagenKind) -> ExitCode {
    match kind {
        DatagenKind::Blobs {
            k,
            n,
            spread,
            seed,
            out,
        } => {
            let dataset = match data::make_blobs(k, n, spread, seed) {
                Ok(d) => d,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(EXIT_CONFIG);
                }
            };
            if let Err(e) = data::write_csv(&dataset, &out) {
                eprintln!("error: {e}");
                return ExitCode::from(EXIT_RUNTIME);
            }
            println!("wrote {} rows to {}", dataset.len(), out.display());
            ExitCode::SUCCESS
        }
    }
}
