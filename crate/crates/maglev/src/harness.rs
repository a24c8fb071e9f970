//! Run orchestration: closed-loop baselines, RL training with periodic
//! evaluation and checkpointing, dataset ingestion for replay seeding,
//! control-quality metrics, and the CSV plumbing between them.
//!
//! Every run is deterministic given the master seed. Purpose-specific RNG
//! streams (net init, environment, agent noise/sampling, each evaluation)
//! are derived from it with a splitmix hash, so adding or removing one
//! consumer never shifts the draws seen by another.

use crate::agents::{seed_from_dataset, Agent, AgentKind, Transition};
use crate::config::Config;
use crate::env::{MaglevEnv, ResetMode, Terminal};
use crate::linctrl::{
    lqi_control, lqi_gain, lqi_report, lqi_weights, pid_control, LinearModel, LqiState, PidGains,
    PidState,
};
use crate::plant::{self, PlantParams};
use crate::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

pub const TRACE_HEADER: &str = "step,time_s,gap_m,gap_rate_mps,current_A,voltage_V,cost,terminal";
pub const DATASET_HEADER: &str = "time_s,gap_m,gap_rate_mps,current_A,voltage_V";

// Stream tags for derive_seed; distinct consumers, distinct tags.
const STREAM_INIT: u64 = 0;
const STREAM_ENV: u64 = 1;
const STREAM_AGENT: u64 = 2;
const STREAM_BASELINE: u64 = 3;
const STREAM_EVAL_CLI: u64 = 4;
const STREAM_DATASET: u64 = 5;
const STREAM_EVAL_BASE: u64 = 1000;

/// Splitmix64 finalizer over (master, stream): cheap, well-mixed, and
/// stable across releases — curve reproducibility depends on it.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut z = master
        .wrapping_add(stream.wrapping_mul(0x9e37_79b9_7f4a_7c15))
        .wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn stream_rng(master: u64, stream: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(derive_seed(master, stream))
}

// ---------------------------------------------------------------------------
// Traces and metrics
// ---------------------------------------------------------------------------

/// One logged sample of a closed-loop run, in absolute physical units.
/// The final row of a trace describes the state the run ended in: its
/// voltage is the controller's output there (never executed) and its cost
/// is zero, so summing the cost column gives the executed return.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub step: u64,
    pub time_s: f64,
    pub gap_m: f64,
    pub gap_rate_mps: f64,
    pub current_a: f64,
    pub voltage_v: f64,
    pub cost: f64,
    pub terminal: Terminal,
}

fn terminal_str(t: Terminal) -> &'static str {
    match t {
        Terminal::No => "no",
        Terminal::Bound => "bound",
        Terminal::Horizon => "horizon",
    }
}

fn parse_terminal(s: &str) -> Result<Terminal> {
    match s {
        "no" => Ok(Terminal::No),
        "bound" => Ok(Terminal::Bound),
        "horizon" => Ok(Terminal::Horizon),
        other => Err(Error::Parse(format!("unknown terminal flag '{other}'"))),
    }
}

pub fn write_trace_csv(path: &Path, rows: &[TraceRow]) -> Result<()> {
    let mut out = String::with_capacity(rows.len() * 64 + 64);
    out.push_str(TRACE_HEADER);
    out.push('\n');
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.step,
            r.time_s,
            r.gap_m,
            r.gap_rate_mps,
            r.current_a,
            r.voltage_v,
            r.cost,
            terminal_str(r.terminal)
        )
        .expect("string write");
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_trace_csv(path: &Path) -> Result<Vec<TraceRow>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == TRACE_HEADER => {}
        _ => {
            return Err(Error::Parse(format!(
                "{}: expected trace header '{TRACE_HEADER}'",
                path.display()
            )))
        }
    }
    let mut rows = Vec::new();
    for (n, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 8 {
            return Err(Error::Parse(format!("trace line {}: 8 fields required", n + 2)));
        }
        let num = |s: &str| -> Result<f64> {
            s.trim()
                .parse()
                .map_err(|_| Error::Parse(format!("trace line {}: bad number '{s}'", n + 2)))
        };
        rows.push(TraceRow {
            step: f[0]
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("trace line {}: bad step", n + 2)))?,
            time_s: num(f[1])?,
            gap_m: num(f[2])?,
            gap_rate_mps: num(f[3])?,
            current_a: num(f[4])?,
            voltage_v: num(f[5])?,
            cost: num(f[6])?,
            terminal: parse_terminal(f[7].trim())?,
        });
    }
    Ok(rows)
}

/// Step-response quality figures for one trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceMetrics {
    /// First time after which the gap stays inside the 2% band for the
    /// rest of the trace; `None` if it never does.
    pub settling_time_s: Option<f64>,
    /// Largest excursion past the setpoint on the far side of the
    /// approach, relative to the initial error magnitude.
    pub overshoot_fraction: f64,
    /// Mean |gap − setpoint| over the final fifth of the trace.
    pub steady_state_error_m: f64,
    /// Sum of the executed per-step costs.
    pub episode_return: f64,
}

pub fn compute_metrics(rows: &[TraceRow], x_eq: f64) -> Result<TraceMetrics> {
    if rows.is_empty() {
        return Err(Error::Parameter("cannot compute metrics of an empty trace".into()));
    }
    let x0 = rows[0].gap_m;
    let initial_err = (x0 - x_eq).abs();
    let band = 0.02 * initial_err;

    // Settling: locate the last out-of-band sample; the run settles at the
    // next sample, provided one exists.
    let last_violation = rows.iter().rposition(|r| (r.gap_m - x_eq).abs() > band);
    let settling_time_s = match last_violation {
        None => Some(rows[0].time_s),
        Some(i) if i + 1 < rows.len() => Some(rows[i + 1].time_s),
        Some(_) => None,
    };

    let overshoot_fraction = if initial_err == 0.0 {
        0.0
    } else {
        let side = (x0 - x_eq).signum();
        let worst = rows
            .iter()
            .map(|r| side * (x_eq - r.gap_m))
            .fold(0.0_f64, f64::max);
        worst / initial_err
    };

    let tail = rows.len().div_ceil(5);
    let steady_state_error_m = rows[rows.len() - tail..]
        .iter()
        .map(|r| (r.gap_m - x_eq).abs())
        .sum::<f64>()
        / tail as f64;

    Ok(TraceMetrics {
        settling_time_s,
        overshoot_fraction,
        steady_state_error_m,
        episode_return: rows.iter().map(|r| r.cost).sum(),
    })
}

/// Mean |gap − setpoint| over the trailing `window_s` seconds of the trace.
pub fn sse_over_final(rows: &[TraceRow], x_eq: f64, window_s: f64) -> f64 {
    let end = rows.last().map_or(0.0, |r| r.time_s);
    let cut = end - window_s;
    let (mut sum, mut n) = (0.0, 0usize);
    for r in rows.iter().filter(|r| r.time_s >= cut) {
        sum += (r.gap_m - x_eq).abs();
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

pub fn metrics_to_text(m: &TraceMetrics) -> String {
    let settling = match m.settling_time_s {
        Some(t) => format!("{t}"),
        None => "null".into(),
    };
    format!(
        "{{\n  \"settled\": {},\n  \"settling_time_s\": {},\n  \"overshoot_fraction\": {},\n  \"steady_state_error_m\": {},\n  \"episode_return\": {}\n}}\n",
        m.settling_time_s.is_some(),
        settling,
        m.overshoot_fraction,
        m.steady_state_error_m,
        m.episode_return
    )
}

// ---------------------------------------------------------------------------
// Baselines
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineAlgo {
    Pid,
    Lqi,
}

impl BaselineAlgo {
    pub fn name(self) -> &'static str {
        match self {
            BaselineAlgo::Pid => "pid",
            BaselineAlgo::Lqi => "lqi",
        }
    }
}

#[derive(Debug, Clone)]
pub struct BaselineResult {
    pub rows: Vec<TraceRow>,
    pub metrics: TraceMetrics,
    /// Synthesis report (gain, closed-loop eigenvalues, residual) for LQI.
    pub report: Option<String>,
}

enum BaselineController {
    Pid(PidGains, PidState),
    Lqi(crate::linctrl::LqiGain, LqiState, f64),
}

impl BaselineController {
    /// Voltage deviation command at the current state. The LQI integrator
    /// advances with the pre-step gap error after the command is formed.
    fn command(&mut self, z: &[f64; 3], dt: f64) -> f64 {
        match self {
            BaselineController::Pid(gains, state) => pid_control(gains, state, z[0], dt),
            BaselineController::Lqi(gain, state, limit) => {
                let v = lqi_control(gain, z, state.eps);
                state.integrate(z[0], dt, *limit);
                v
            }
        }
    }
}

/// Closed nonlinear loop from the configured evaluation gap for the
/// configured duration. Baseline controllers command raw voltage with no
/// saturation; a bound strike clamps the state (the train rests on the
/// mechanical stop) and the run continues.
pub fn run_baseline(cfg: &Config, algo: BaselineAlgo, seed: u64) -> Result<BaselineResult> {
    let p = PlantParams::from_config(cfg)?;
    let env = MaglevEnv::new(cfg)?; // cost bookkeeping only
    let mut rng = stream_rng(seed, STREAM_BASELINE);
    let dt = cfg.dt_s;
    let steps = (cfg.baseline_duration_s / dt).round() as u64;

    let mut ctrl = match algo {
        BaselineAlgo::Pid => {
            BaselineController::Pid(PidGains::from_config(cfg), PidState::default())
        }
        BaselineAlgo::Lqi => {
            let model = LinearModel::from_plant(&p);
            let (q, r) = lqi_weights(cfg);
            let gain = lqi_gain(&model, &q, r)?;
            BaselineController::Lqi(gain, LqiState::default(), cfg.lqi_integral_limit)
        }
    };
    let report = match (&ctrl, algo) {
        (BaselineController::Lqi(gain, _, _), BaselineAlgo::Lqi) => {
            let model = LinearModel::from_plant(&p);
            let (q, r) = lqi_weights(cfg);
            Some(lqi_report(&model, &q, r, gain))
        }
        _ => None,
    };

    let mut z = [cfg.eval_gap_m - p.x_eq, 0.0, 0.0];
    let mut terminal = Terminal::No;
    let mut rows = Vec::with_capacity(steps as usize + 1);
    for k in 0..steps {
        let v = ctrl.command(&z, dt);
        let u_abs = p.u_eq + v;
        rows.push(TraceRow {
            step: k,
            time_s: k as f64 * dt,
            gap_m: p.gap(&z),
            gap_rate_mps: z[1],
            current_a: p.current(&z),
            voltage_v: u_abs,
            cost: env.cost(&z, u_abs),
            terminal,
        });
        let f = plant::sample_disturbance(&p, &mut rng);
        let out = plant::step(&p, &z, v, f)?;
        z = out.z;
        terminal = if out.hit_bound { Terminal::Bound } else { Terminal::No };
    }
    let v = ctrl.command(&z, dt);
    rows.push(TraceRow {
        step: steps,
        time_s: steps as f64 * dt,
        gap_m: p.gap(&z),
        gap_rate_mps: z[1],
        current_a: p.current(&z),
        voltage_v: p.u_eq + v,
        cost: 0.0,
        terminal,
    });

    let metrics = compute_metrics(&rows, p.x_eq)?;
    Ok(BaselineResult { rows, metrics, report })
}

// ---------------------------------------------------------------------------
// Policy evaluation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct EvalRun {
    pub per_episode: Vec<TraceMetrics>,
    pub traces: Vec<Vec<TraceRow>>,
    pub mean_return: f64,
}

/// Noise-free policy rollouts: episodes start from the fixed evaluation
/// gap and actions come from the deterministic actor — never with
/// exploration noise. Plant disturbances follow the configuration.
pub fn evaluate_policy<R: Rng + ?Sized>(
    cfg: &Config,
    agent: &Agent,
    rng: &mut R,
    episodes: u32,
) -> Result<EvalRun> {
    let mut env = MaglevEnv::new(cfg)?;
    let p = env.plant.clone();
    let dt = cfg.dt_s;
    let mut per_episode = Vec::with_capacity(episodes as usize);
    let mut traces = Vec::with_capacity(episodes as usize);
    for _ in 0..episodes {
        let mut obs = env.reset(rng, ResetMode::Fixed(cfg.eval_gap_m));
        let mut rows = Vec::with_capacity(cfg.horizon_steps as usize + 1);
        let mut step = 0u64;
        loop {
            let a = agent.eval_action(&obs);
            let u_abs = env.scale_action(a);
            rows.push(TraceRow {
                step,
                time_s: step as f64 * dt,
                gap_m: p.gap(&obs),
                gap_rate_mps: obs[1],
                current_a: p.current(&obs),
                voltage_v: u_abs,
                cost: env.cost(&obs, u_abs),
                terminal: Terminal::No,
            });
            let (obs2, _, term) = env.step(rng, a)?;
            obs = obs2;
            step += 1;
            if term.is_terminal() {
                let a_end = agent.eval_action(&obs);
                rows.push(TraceRow {
                    step,
                    time_s: step as f64 * dt,
                    gap_m: p.gap(&obs),
                    gap_rate_mps: obs[1],
                    current_a: p.current(&obs),
                    voltage_v: env.scale_action(a_end),
                    cost: 0.0,
                    terminal: term,
                });
                break;
            }
        }
        per_episode.push(compute_metrics(&rows, p.x_eq)?);
        traces.push(rows);
    }
    let mean_return =
        per_episode.iter().map(|m| m.episode_return).sum::<f64>() / per_episode.len() as f64;
    Ok(EvalRun { per_episode, traces, mean_return })
}

/// Load a checkpoint and evaluate it.
pub fn evaluate_checkpoint(cfg: &Config, ckpt: &Path, seed: u64, episodes: u32) -> Result<EvalRun> {
    let agent = Agent::load_checkpoint(ckpt, cfg)?;
    let mut rng = stream_rng(seed, STREAM_EVAL_CLI);
    evaluate_policy(cfg, &agent, &mut rng, episodes)
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct SeedOutcome {
    pub seed: u64,
    pub dir: PathBuf,
    /// (env step, mean evaluation return) per periodic evaluation.
    pub curve: Vec<(u64, f64)>,
    /// Mean return of the first evaluation past the warmup phase.
    pub first_post_warmup_return: Option<f64>,
    pub best_return: Option<f64>,
    pub initial_checkpoint: PathBuf,
    pub best_checkpoint: Option<PathBuf>,
    pub final_checkpoint: Option<PathBuf>,
    pub episodes_completed: u64,
    pub seeded_transitions: usize,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub out_dir: PathBuf,
    pub seeds: Vec<SeedOutcome>,
}

/// Full training study: for every seed, run `episodes × horizon` env steps
/// with warmup, update once per post-warmup step, evaluate the
/// deterministic policy every `eval_interval_steps` steps, and keep the
/// checkpoint with the lowest mean evaluation return. With
/// `episodes = 0`, only the initial checkpoint is emitted.
///
/// When `dataset` transitions are supplied, the replay buffer is seeded
/// before interaction starts and updates begin immediately — logged
/// experience substitutes for the data the warmup would otherwise have to
/// gather, which is the entire point of seeding.
pub fn train(
    cfg: &Config,
    kind: AgentKind,
    dataset: Option<&[Transition]>,
    out_dir: &Path,
) -> Result<TrainReport> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join("config.txt"), cfg.snapshot())?;
    let mut seeds = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        seeds.push(train_one_seed(cfg, kind, dataset, out_dir, seed)?);
    }
    Ok(TrainReport { out_dir: out_dir.to_path_buf(), seeds })
}

fn train_one_seed(
    cfg: &Config,
    kind: AgentKind,
    dataset: Option<&[Transition]>,
    out_dir: &Path,
    seed: u64,
) -> Result<SeedOutcome> {
    let dir = out_dir.join(format!("seed_{seed}"));
    std::fs::create_dir_all(&dir)?;
    let mut init_rng = stream_rng(seed, STREAM_INIT);
    let mut env_rng = stream_rng(seed, STREAM_ENV);
    let mut agent_rng = stream_rng(seed, STREAM_AGENT);
    let mut env = MaglevEnv::new(cfg)?;
    let mut agent = Agent::new(cfg, kind, &mut init_rng)?;
    let seeded = match dataset {
        Some(ts) => seed_from_dataset(&mut agent.buffer, &env, ts, cfg.dataset_cap),
        None => 0,
    };

    let initial_checkpoint = dir.join("checkpoint_initial.ckpt");
    agent.save_checkpoint(&initial_checkpoint)?;

    let budget = cfg.episodes as u64 * cfg.horizon_steps as u64;
    let mut curve: Vec<(u64, f64)> = Vec::new();
    let mut diagnostics = String::from(
        "iteration,episode,env_step,mean_abs_td,mean_q,critic_grad_norm,actor_grad_norm,eval_return\n",
    );
    let mut first_post_warmup_return = None;
    let mut best_return: Option<f64> = None;
    let best_checkpoint = dir.join("checkpoint_best.ckpt");
    let mut best_saved = false;
    let mut episodes_completed = 0u64;
    let mut eval_idx = 0u64;

    let mut obs = env.reset(&mut env_rng, ResetMode::Randomized);
    for k in 1..=budget {
        let a = agent.select_action(&mut agent_rng, &obs, true);
        let (obs2, c, term) = env.step(&mut env_rng, a)?;
        // The environment has no absorbing states (rail contact continues,
        // horizon end is truncation, not absorption), so targets always
        // bootstrap.
        agent.remember(Transition {
            s: obs,
            u: a,
            c,
            s2: obs2,
            done: false,
        });
        obs = if term.is_terminal() {
            episodes_completed += 1;
            env.reset(&mut env_rng, ResetMode::Randomized)
        } else {
            obs2
        };

        if seeded > 0 || !agent.in_warmup() {
            if let Some(d) = agent.update(&mut agent_rng)? {
                if agent.update_count % 1000 == 0 {
                    writeln!(
                        diagnostics,
                        "{},{},{},{},{},{},{},",
                        agent.update_count,
                        episodes_completed,
                        k,
                        d.mean_abs_td,
                        d.mean_q,
                        d.critic_grad_norm,
                        d.actor_grad_norm.map_or(String::new(), |g| g.to_string()),
                    )
                    .expect("string write");
                }
            }
        }

        if k % cfg.eval_interval_steps == 0 {
            eval_idx += 1;
            let mut eval_rng = stream_rng(seed, STREAM_EVAL_BASE + eval_idx);
            let run = evaluate_policy(cfg, &agent, &mut eval_rng, cfg.eval_episodes)?;
            curve.push((k, run.mean_return));
            if first_post_warmup_return.is_none() && k > cfg.warmup_steps {
                first_post_warmup_return = Some(run.mean_return);
            }
            if best_return.is_none_or(|b| run.mean_return < b) {
                best_return = Some(run.mean_return);
                agent.save_checkpoint(&best_checkpoint)?;
                best_saved = true;
            }
            writeln!(
                diagnostics,
                "{},{},{},,,,,{}",
                agent.update_count, episodes_completed, k, run.mean_return
            )
            .expect("string write");
        }
    }

    let final_checkpoint = if budget > 0 {
        let p = dir.join("checkpoint_final.ckpt");
        agent.save_checkpoint(&p)?;
        Some(p)
    } else {
        None
    };
    let mut curve_csv = String::from("env_step,eval_return\n");
    for (k, ret) in &curve {
        writeln!(curve_csv, "{k},{ret}").expect("string write");
    }
    std::fs::write(dir.join("curve.csv"), curve_csv)?;
    std::fs::write(dir.join("diagnostics.csv"), diagnostics)?;

    Ok(SeedOutcome {
        seed,
        dir,
        curve,
        first_post_warmup_return,
        best_return,
        initial_checkpoint,
        best_checkpoint: best_saved.then_some(best_checkpoint),
        final_checkpoint,
        episodes_completed,
        seeded_transitions: seeded,
    })
}

/// Parse a `curve.csv` written by [`train`].
pub fn read_curve_csv(path: &Path) -> Result<Vec<(u64, f64)>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some("env_step,eval_return") => {}
        _ => return Err(Error::Parse(format!("{}: bad curve header", path.display()))),
    }
    let mut curve = Vec::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let (a, b) = line
            .split_once(',')
            .ok_or_else(|| Error::Parse("curve row needs 2 fields".into()))?;
        curve.push((
            a.parse().map_err(|_| Error::Parse(format!("bad env_step '{a}'")))?,
            b.parse().map_err(|_| Error::Parse(format!("bad eval_return '{b}'")))?,
        ));
    }
    Ok(curve)
}

// ---------------------------------------------------------------------------
// Datasets
// ---------------------------------------------------------------------------

/// One logged controller sample in absolute units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetRow {
    pub time_s: f64,
    pub gap_m: f64,
    pub gap_rate_mps: f64,
    pub current_a: f64,
    pub voltage_v: f64,
}

/// Ingestion summary, including a gap-error histogram so an operator can
/// judge how balanced the logged distribution is before seeding.
#[derive(Debug, Clone)]
pub struct DatasetReport {
    pub rows_used: usize,
    pub rows_skipped: usize,
    pub clipped_actions: usize,
    pub segments: usize,
    pub transitions: usize,
    /// (bin label, transition count) over the gap error of each s.
    pub balance: Vec<(String, usize)>,
}

impl DatasetReport {
    pub fn render(&self) -> String {
        let mut s = String::new();
        writeln!(s, "dataset rows used: {}", self.rows_used).unwrap();
        writeln!(s, "rows skipped (malformed): {}", self.rows_skipped).unwrap();
        writeln!(s, "actions clipped to the voltage range: {}", self.clipped_actions).unwrap();
        writeln!(s, "trajectory segments: {}", self.segments).unwrap();
        writeln!(s, "transitions: {}", self.transitions).unwrap();
        writeln!(s, "gap-error balance:").unwrap();
        for (label, count) in &self.balance {
            writeln!(s, "  {label:>12}: {count}").unwrap();
        }
        s
    }
}

const BALANCE_EDGES_MM: [f64; 7] = [-4.0, -2.0, -1.0, 0.0, 1.0, 2.0, 4.0];

fn balance_histogram(transitions: &[Transition]) -> Vec<(String, usize)> {
    let mut counts = vec![0usize; BALANCE_EDGES_MM.len() + 1];
    for t in transitions {
        let err_mm = t.s[0] * 1000.0;
        let bin = BALANCE_EDGES_MM.iter().position(|&e| err_mm < e).unwrap_or(counts.len() - 1);
        counts[bin] += 1;
    }
    let mut out = Vec::with_capacity(counts.len());
    for (i, &c) in counts.iter().enumerate() {
        let label = if i == 0 {
            format!("< {} mm", BALANCE_EDGES_MM[0])
        } else if i == counts.len() - 1 {
            format!(">= {} mm", BALANCE_EDGES_MM[i - 1])
        } else {
            format!("[{}, {}) mm", BALANCE_EDGES_MM[i - 1], BALANCE_EDGES_MM[i])
        };
        out.push((label, c));
    }
    out
}

/// Read a logged-controller CSV and derive replay transitions.
///
/// Consecutive rows form a transition unless their time gap exceeds twice
/// the nominal sample period (a segment break). Malformed rows — wrong
/// field count, unparseable or non-finite numbers, non-increasing time —
/// are skipped and counted. Costs are left at zero here; replay seeding
/// recomputes them from (s, u).
pub fn load_dataset(
    path: &Path,
    cfg: &Config,
) -> Result<(Vec<DatasetRow>, Vec<Transition>, DatasetReport)> {
    let p = PlantParams::from_config(cfg)?;
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == DATASET_HEADER => {}
        _ => {
            return Err(Error::Parse(format!(
                "{}: expected dataset header '{DATASET_HEADER}'",
                path.display()
            )))
        }
    }

    let mut rows: Vec<DatasetRow> = Vec::new();
    let mut skipped = 0usize;
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        let parsed: Option<Vec<f64>> = if f.len() == 5 {
            f.iter().map(|s| s.trim().parse::<f64>().ok()).collect()
        } else {
            None
        };
        let Some(v) = parsed.filter(|v| v.iter().all(|x| x.is_finite())) else {
            skipped += 1;
            continue;
        };
        if rows.last().is_some_and(|prev| v[0] <= prev.time_s) {
            skipped += 1;
            continue;
        }
        rows.push(DatasetRow {
            time_s: v[0],
            gap_m: v[1],
            gap_rate_mps: v[2],
            current_a: v[3],
            voltage_v: v[4],
        });
    }

    let break_gap = 2.0 * cfg.dataset_period_s;
    let mut transitions = Vec::new();
    let mut clipped = 0usize;
    let mut segments = if rows.is_empty() { 0 } else { 1 };
    let to_obs = |r: &DatasetRow| [r.gap_m - p.x_eq, r.gap_rate_mps, r.current_a - p.i_eq];
    for w in rows.windows(2) {
        if w[1].time_s - w[0].time_s > break_gap {
            segments += 1;
            continue;
        }
        let raw = (w[0].voltage_v - p.u_eq) / cfg.v_max;
        if raw.abs() > 1.0 {
            clipped += 1;
        }
        transitions.push(Transition {
            s: to_obs(&w[0]),
            u: raw.clamp(-1.0, 1.0),
            c: 0.0,
            s2: to_obs(&w[1]),
            done: false,
        });
    }
    if transitions.is_empty() {
        return Err(Error::Parse(format!(
            "{}: no usable transitions ({} rows, {} skipped)",
            path.display(),
            rows.len(),
            skipped
        )));
    }
    let report = DatasetReport {
        rows_used: rows.len(),
        rows_skipped: skipped,
        clipped_actions: clipped,
        segments,
        transitions: transitions.len(),
        balance: balance_histogram(&transitions),
    };
    Ok((rows, transitions, report))
}

/// Simulate the PID baseline over several disturbed episodes and log it at
/// the dataset sample period, producing a seeding corpus in the dataset
/// CSV format. Episodes are separated by a time jump large enough to form
/// segment breaks on load. Returns the number of rows written.
pub fn generate_pid_dataset(
    cfg: &Config,
    path: &Path,
    target_rows: usize,
    seed: u64,
) -> Result<usize> {
    let p = PlantParams::from_config(cfg)?;
    let gains = PidGains::from_config(cfg);
    let mut rng = stream_rng(seed, STREAM_DATASET);
    let dt = cfg.dt_s;
    let sample_every = (cfg.dataset_period_s / dt).round().max(1.0) as u64;
    // 40 logged rows per episode keeps several initial conditions in even
    // a small corpus.
    let episode_steps = 40 * sample_every;
    let mut out = String::from(DATASET_HEADER);
    out.push('\n');
    let mut written = 0usize;
    let mut time_base = 0.0;
    while written < target_rows {
        let gap0 = rng.random_range(cfg.reset_gap_min_m..=cfg.reset_gap_max_m);
        let mut z = [gap0 - p.x_eq, 0.0, 0.0];
        let mut pid = PidState::default();
        for k in 0..episode_steps {
            let v = pid_control(&gains, &mut pid, z[0], dt);
            if k % sample_every == 0 {
                writeln!(
                    out,
                    "{},{},{},{},{}",
                    time_base + k as f64 * dt,
                    p.gap(&z),
                    z[1],
                    p.current(&z),
                    p.u_eq + v
                )
                .expect("string write");
                written += 1;
                if written >= target_rows {
                    break;
                }
            }
            let f = plant::sample_disturbance(&p, &mut rng);
            z = plant::step(&p, &z, v, f)?.z;
        }
        // Jump well past the break threshold between episodes.
        time_base += episode_steps as f64 * dt + 10.0 * cfg.dataset_period_s;
    }
    std::fs::write(path, out)?;
    Ok(written)
}
