//! Command-line front end: baselines, training, checkpoint evaluation,
//! model linearization, and trace metrics.

use clap::{Parser, Subcommand, ValueEnum};
use maglev::agents::AgentKind;
use maglev::config::Config;
use maglev::harness::{
    self, run_baseline, BaselineAlgo, EvalRun,
};
use maglev::plant::{self, PlantParams};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "maglev",
    about = "Simulation and learning workbench for maglev air-gap regulation",
    version
)]
struct Cli {
    /// Configuration file (key = value lines); defaults apply otherwise.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the configured seed list with this one seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for traces, curves and checkpoints.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum BaselineArg {
    Pid,
    Lqi,
}

#[derive(Clone, Copy, ValueEnum)]
enum AlgoArg {
    Ddpg,
    Td3,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a classical controller on the nonlinear plant and report metrics.
    Baseline {
        #[arg(long, value_enum)]
        algo: BaselineArg,
    },
    /// Train a learning controller across the configured seeds.
    Train {
        #[arg(long, value_enum)]
        algo: AlgoArg,
        /// Logged-controller CSV used to seed the replay buffer.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Roll out a saved policy without exploration noise.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Episode count; defaults to the configured evaluation episodes.
        #[arg(long)]
        episodes: Option<u32>,
    },
    /// Print the linearized model and compare it to the reference entries.
    Linearize,
    /// Compute control-quality metrics of an existing trace CSV.
    Metrics {
        #[arg(long)]
        trace: PathBuf,
    },
}

fn load_config(cli: &Cli) -> maglev::Result<Config> {
    let mut cfg = match &cli.config {
        Some(path) => Config::from_file(path)?,
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seeds = vec![seed];
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_metrics(label: &str, m: &harness::TraceMetrics) {
    println!("{label}:");
    print!("{}", harness::metrics_to_text(m));
}

fn cmd_baseline(cli: &Cli, algo: BaselineArg) -> maglev::Result<()> {
    let cfg = load_config(cli)?;
    let algo = match algo {
        BaselineArg::Pid => BaselineAlgo::Pid,
        BaselineArg::Lqi => BaselineAlgo::Lqi,
    };
    let seed = cfg.seeds[0];
    let res = run_baseline(&cfg, algo, seed)?;
    let dir = cli.out.join(format!("baseline_{}", algo.name()));
    std::fs::create_dir_all(&dir)?;
    harness::write_trace_csv(&dir.join("trace.csv"), &res.rows)?;
    std::fs::write(dir.join("metrics.txt"), harness::metrics_to_text(&res.metrics))?;
    if let Some(report) = &res.report {
        std::fs::write(dir.join("synthesis.txt"), report)?;
    }
    println!("baseline {} (seed {seed}) -> {}", algo.name(), dir.display());
    print_metrics("metrics", &res.metrics);
    if !res.metrics.episode_return.is_finite() {
        return Err(maglev::Error::Solver("baseline run diverged".into()));
    }
    Ok(())
}

fn cmd_train(cli: &Cli, algo: AlgoArg, dataset: Option<&PathBuf>) -> maglev::Result<()> {
    let cfg = load_config(cli)?;
    let kind = match algo {
        AlgoArg::Ddpg => AgentKind::Ddpg,
        AlgoArg::Td3 => AgentKind::Td3,
    };
    // Dataset problems must abort before any training starts.
    let seeded = match dataset {
        Some(path) => {
            let (_, transitions, report) = harness::load_dataset(path, &cfg)?;
            println!("{}", report.render());
            Some(transitions)
        }
        None => None,
    };
    let run_dir = cli.out.join(format!("train_{}", kind.name()));
    let report = harness::train(&cfg, kind, seeded.as_deref(), &run_dir)?;
    let mut summary = String::new();
    for s in &report.seeds {
        let line = format!(
            "seed {}: {} evals, first post-warmup return {}, best {}, {} episodes, {} seeded\n",
            s.seed,
            s.curve.len(),
            s.first_post_warmup_return.map_or("n/a".into(), |v| format!("{v:.3}")),
            s.best_return.map_or("n/a".into(), |v| format!("{v:.3}")),
            s.episodes_completed,
            s.seeded_transitions,
        );
        print!("{line}");
        summary.push_str(&line);
    }
    std::fs::write(run_dir.join("summary.txt"), summary)?;
    println!("artifacts -> {}", run_dir.display());
    Ok(())
}

fn cmd_eval(cli: &Cli, checkpoint: &PathBuf, episodes: Option<u32>) -> maglev::Result<()> {
    let cfg = load_config(cli)?;
    let seed = cfg.seeds[0];
    let n = episodes.unwrap_or(cfg.eval_episodes);
    let run: EvalRun = harness::evaluate_checkpoint(&cfg, checkpoint, seed, n)?;
    let dir = cli.out.join("eval");
    std::fs::create_dir_all(&dir)?;
    let mut mean = harness::TraceMetrics {
        settling_time_s: None,
        overshoot_fraction: 0.0,
        steady_state_error_m: 0.0,
        episode_return: 0.0,
    };
    let mut settled = 0usize;
    let mut settle_sum = 0.0;
    for (i, (m, rows)) in run.per_episode.iter().zip(run.traces.iter()).enumerate() {
        harness::write_trace_csv(&dir.join(format!("episode_{i}.csv")), rows)?;
        print_metrics(&format!("episode {i}"), m);
        mean.overshoot_fraction += m.overshoot_fraction / n as f64;
        mean.steady_state_error_m += m.steady_state_error_m / n as f64;
        mean.episode_return += m.episode_return / n as f64;
        if let Some(t) = m.settling_time_s {
            settled += 1;
            settle_sum += t;
        }
    }
    if settled == run.per_episode.len() && settled > 0 {
        mean.settling_time_s = Some(settle_sum / settled as f64);
    }
    std::fs::write(dir.join("metrics.txt"), harness::metrics_to_text(&mean))?;
    print_metrics("mean", &mean);
    println!("traces -> {}", dir.display());
    Ok(())
}

/// Printed linearization entries and their nominal reference values, as
/// (row, col, value) over A and the input column B.
const A_REFERENCE: [(usize, usize, f64); 4] =
    [(1, 0, 2450.0), (1, 2, -1.1558), (2, 1, 2119.7), (2, 2, -3.1438)];
const B3_REFERENCE: f64 = 2.6198;

fn cmd_linearize(cli: &Cli) -> maglev::Result<()> {
    let cfg = load_config(cli)?;
    let p = PlantParams::from_config(&cfg)?;
    let (a, b, c) = plant::linearize(&p);
    println!("operating point: gap {} m, current {:.6} A, voltage {:.6} V", p.x_eq, p.i_eq, p.u_eq);
    println!("A =");
    for row in &a {
        println!("  [{:14.6} {:14.6} {:14.6}]", row[0], row[1], row[2]);
    }
    println!("B = [{:.6} {:.6} {:.6}]^T", b[0], b[1], b[2]);
    println!("C = [{} {} {}]", c[0], c[1], c[2]);
    println!("comparison with the nominal reference entries:");
    let mut worst: f64 = 0.0;
    for &(i, j, expect) in &A_REFERENCE {
        let got = a[i][j];
        let rel = ((got - expect) / expect).abs();
        worst = worst.max(rel);
        println!("  a[{}][{}] = {got:12.5}  reference {expect:12.5}  rel err {rel:.2e}", i + 1, j + 1);
    }
    let rel = ((b[2] - B3_REFERENCE) / B3_REFERENCE).abs();
    worst = worst.max(rel);
    println!("  b[3]    = {:12.5}  reference {B3_REFERENCE:12.5}  rel err {rel:.2e}", b[2]);
    if worst > 1e-3 {
        return Err(maglev::Error::Parameter(format!(
            "linearization deviates from the reference by {worst:.2e} (> 0.1%)"
        )));
    }
    if c != [1.0, 0.0, 0.0] {
        return Err(maglev::Error::Parameter("output matrix must select the gap".into()));
    }
    println!("all entries within 0.1%");
    Ok(())
}

fn cmd_metrics(cli: &Cli, trace: &PathBuf) -> maglev::Result<()> {
    let cfg = load_config(cli)?;
    let rows = harness::read_trace_csv(trace)?;
    let m = harness::compute_metrics(&rows, cfg.target_gap_m)?;
    print_metrics(&trace.display().to_string(), &m);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Cmd::Baseline { algo } => cmd_baseline(&cli, *algo),
        Cmd::Train { algo, dataset } => cmd_train(&cli, *algo, dataset.as_ref()),
        Cmd::Eval { checkpoint, episodes } => cmd_eval(&cli, checkpoint, *episodes),
        Cmd::Linearize => cmd_linearize(&cli),
        Cmd::Metrics { trace } => cmd_metrics(&cli, trace),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
