//! Run configuration: one flat struct covering plant physics, controller
//! gains, MDP shaping, learner hyperparameters and harness settings.
//!
//! Configs are plain `key = value` text files. Unknown keys are rejected so
//! typos surface immediately; `#` starts a comment.

use crate::{Error, Result};
use std::fmt::Write as _;
use std::path::Path;

/// Where batch normalization sits inside the actor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnPlacement {
    /// Normalize the input of every affine layer (state and both hidden
    /// activations). This is the default.
    Input,
    /// Normalize the output of every affine layer, before its nonlinearity.
    Output,
    /// No normalization anywhere (ablation switch).
    Off,
}

/// Whether the stage cost penalizes the absolute coil voltage or the
/// deviation from the equilibrium voltage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CostInput {
    Absolute,
    Deviation,
}

/// Gradient method used for network updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    /// Literal steepest step: `theta <- theta -/+ alpha * grad`.
    Plain,
    /// Adam with bias correction.
    Adam,
}

#[derive(Debug, Clone)]
pub struct Config {
    // Plant physics.
    pub mass_kg: f64,
    pub coil_turns: f64,
    pub pole_area_m2: f64,
    pub coil_resistance_ohm: f64,
    pub permeability: f64,
    pub gravity: f64,
    pub target_gap_m: f64,
    pub disturbance_variance: f64,
    pub gap_min_m: f64,
    pub gap_max_m: f64,
    pub dt_s: f64,
    /// Integrator substeps per control period (1 = plain Euler at `dt_s`).
    pub substeps: u32,

    // MDP shaping.
    pub rho1: f64,
    pub rho2: f64,
    pub rho3: f64,
    /// Control-voltage authority: the action maps to `u_eq ± v_max` volts.
    /// The default must leave enough margin to rebuild coil flux before a
    /// falling vehicle reaches the gap stop; at 700 kg / 0.38 H anything
    /// below ~120 V cannot catch the train from the 15 mm release point.
    pub v_max: f64,
    pub horizon_steps: u32,
    pub reset_gap_min_m: f64,
    pub reset_gap_max_m: f64,
    pub eval_gap_m: f64,
    pub cost_input: CostInput,

    // PID baseline.
    pub pid_kp: f64,
    pub pid_ki: f64,
    pub pid_kd: f64,
    pub pid_integral_limit: f64,

    // LQI baseline.
    pub lqi_q1: f64,
    pub lqi_q2: f64,
    pub lqi_q3: f64,
    pub lqi_q4: f64,
    pub lqi_r: f64,
    pub lqi_integral_limit: f64,

    // Networks / learners.
    pub bn_placement: BnPlacement,
    pub gamma: f64,
    pub tau: f64,
    pub batch_size: usize,
    pub warmup_steps: u64,
    pub buffer_capacity: usize,
    pub explore_sigma: f64,
    pub smooth_sigma: f64,
    pub smooth_clip: f64,
    pub policy_delay: u64,
    pub lr_critic: f64,
    pub lr_actor: f64,
    pub optimizer: OptimizerKind,

    // Harness.
    pub episodes: u32,
    pub eval_interval_steps: u64,
    pub eval_episodes: u32,
    pub seeds: Vec<u64>,
    pub baseline_duration_s: f64,
    pub dataset_cap: usize,
    pub dataset_period_s: f64,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            mass_kg: 700.0,
            coil_turns: 450.0,
            pole_area_m2: 0.024,
            coil_resistance_ohm: 1.2,
            permeability: 4.0e-7 * std::f64::consts::PI,
            gravity: 9.8,
            target_gap_m: 0.008,
            disturbance_variance: 2.5e5,
            gap_min_m: 0.001,
            gap_max_m: 0.020,
            dt_s: 1.0e-3,
            substeps: 1,

            rho1: 1.0e6,
            rho2: 1.0,
            rho3: 1.0e-4,
            v_max: 200.0,
            horizon_steps: 500,
            reset_gap_min_m: 0.003,
            reset_gap_max_m: 0.015,
            eval_gap_m: 0.015,
            cost_input: CostInput::Absolute,

            pid_kp: 3100.0,
            pid_ki: 300.0,
            pid_kd: 310.0,
            pid_integral_limit: 10.0,

            lqi_q1: 1.0e3,
            lqi_q2: 1.0,
            lqi_q3: 1.0e-8,
            lqi_q4: 1.0,
            lqi_r: 1.0e-8,
            lqi_integral_limit: 1.0,

            bn_placement: BnPlacement::Input,
            gamma: 0.99,
            tau: 0.005,
            batch_size: 100,
            warmup_steps: 10_000,
            buffer_capacity: 1_000_000,
            explore_sigma: 0.1,
            smooth_sigma: 0.2,
            smooth_clip: 0.5,
            policy_delay: 2,
            lr_critic: 1.0e-3,
            lr_actor: 1.0e-5,
            optimizer: OptimizerKind::Adam,

            episodes: 300,
            eval_interval_steps: 5_000,
            eval_episodes: 10,
            seeds: vec![1, 2, 3, 4, 5],
            baseline_duration_s: 10.0,
            dataset_cap: 10_000,
            dataset_period_s: 0.1,
        }
    }
}

fn parse_f64(key: &str, value: &str) -> Result<f64> {
    value
        .parse::<f64>()
        .map_err(|_| Error::Parse(format!("key `{key}`: `{value}` is not a number")))
}

fn parse_u64(key: &str, value: &str) -> Result<u64> {
    value
        .parse::<u64>()
        .map_err(|_| Error::Parse(format!("key `{key}`: `{value}` is not an integer")))
}

impl Config {
    /// Load a config file on top of the defaults.
    pub fn from_file(path: &Path) -> Result<Self> {
        let mut cfg = Config::default();
        cfg.merge_file(path)?;
        Ok(cfg)
    }

    /// Apply every assignment in `path` to `self`.
    pub fn merge_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Parse(format!(
                    "{}:{}: expected `key = value`, got `{raw}`",
                    path.display(),
                    lineno + 1
                ))
            })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Set a single key from its text form. Unknown keys are an error.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "mass_kg" => self.mass_kg = parse_f64(key, value)?,
            "coil_turns" => self.coil_turns = parse_f64(key, value)?,
            "pole_area_m2" => self.pole_area_m2 = parse_f64(key, value)?,
            "coil_resistance_ohm" => self.coil_resistance_ohm = parse_f64(key, value)?,
            "permeability" => self.permeability = parse_f64(key, value)?,
            "gravity" => self.gravity = parse_f64(key, value)?,
            "target_gap_m" => self.target_gap_m = parse_f64(key, value)?,
            "disturbance_variance" => self.disturbance_variance = parse_f64(key, value)?,
            "gap_min_m" => self.gap_min_m = parse_f64(key, value)?,
            "gap_max_m" => self.gap_max_m = parse_f64(key, value)?,
            "dt_s" => self.dt_s = parse_f64(key, value)?,
            "substeps" => self.substeps = parse_u64(key, value)? as u32,

            "rho1" => self.rho1 = parse_f64(key, value)?,
            "rho2" => self.rho2 = parse_f64(key, value)?,
            "rho3" => self.rho3 = parse_f64(key, value)?,
            "v_max" => self.v_max = parse_f64(key, value)?,
            "horizon_steps" => self.horizon_steps = parse_u64(key, value)? as u32,
            "reset_gap_min_m" => self.reset_gap_min_m = parse_f64(key, value)?,
            "reset_gap_max_m" => self.reset_gap_max_m = parse_f64(key, value)?,
            "eval_gap_m" => self.eval_gap_m = parse_f64(key, value)?,
            "cost_input" => {
                self.cost_input = match value {
                    "absolute" => CostInput::Absolute,
                    "deviation" => CostInput::Deviation,
                    _ => {
                        return Err(Error::Parse(format!(
                            "cost_input must be `absolute` or `deviation`, got `{value}`"
                        )))
                    }
                }
            }

            "pid_kp" => self.pid_kp = parse_f64(key, value)?,
            "pid_ki" => self.pid_ki = parse_f64(key, value)?,
            "pid_kd" => self.pid_kd = parse_f64(key, value)?,
            "pid_integral_limit" => self.pid_integral_limit = parse_f64(key, value)?,

            "lqi_q1" => self.lqi_q1 = parse_f64(key, value)?,
            "lqi_q2" => self.lqi_q2 = parse_f64(key, value)?,
            "lqi_q3" => self.lqi_q3 = parse_f64(key, value)?,
            "lqi_q4" => self.lqi_q4 = parse_f64(key, value)?,
            "lqi_r" => self.lqi_r = parse_f64(key, value)?,
            "lqi_integral_limit" => self.lqi_integral_limit = parse_f64(key, value)?,

            "bn_placement" => {
                self.bn_placement = match value {
                    "input" => BnPlacement::Input,
                    "output" => BnPlacement::Output,
                    "off" => BnPlacement::Off,
                    _ => {
                        return Err(Error::Parse(format!(
                            "bn_placement must be `input`, `output` or `off`, got `{value}`"
                        )))
                    }
                }
            }
            "gamma" => self.gamma = parse_f64(key, value)?,
            "tau" => self.tau = parse_f64(key, value)?,
            "batch_size" => self.batch_size = parse_u64(key, value)? as usize,
            "warmup_steps" => self.warmup_steps = parse_u64(key, value)?,
            "buffer_capacity" => self.buffer_capacity = parse_u64(key, value)? as usize,
            "explore_sigma" => self.explore_sigma = parse_f64(key, value)?,
            "smooth_sigma" => self.smooth_sigma = parse_f64(key, value)?,
            "smooth_clip" => self.smooth_clip = parse_f64(key, value)?,
            "policy_delay" => self.policy_delay = parse_u64(key, value)?,
            "lr_critic" => self.lr_critic = parse_f64(key, value)?,
            "lr_actor" => self.lr_actor = parse_f64(key, value)?,
            "optimizer" => {
                self.optimizer = match value {
                    "plain" => OptimizerKind::Plain,
                    "adam" => OptimizerKind::Adam,
                    _ => {
                        return Err(Error::Parse(format!(
                            "optimizer must be `plain` or `adam`, got `{value}`"
                        )))
                    }
                }
            }

            "episodes" => self.episodes = parse_u64(key, value)? as u32,
            "eval_interval_steps" => self.eval_interval_steps = parse_u64(key, value)?,
            "eval_episodes" => self.eval_episodes = parse_u64(key, value)? as u32,
            "seeds" => {
                let mut seeds = Vec::new();
                for part in value.split(',') {
                    seeds.push(parse_u64(key, part.trim())?);
                }
                self.seeds = seeds;
            }
            "baseline_duration_s" => self.baseline_duration_s = parse_f64(key, value)?,
            "dataset_cap" => self.dataset_cap = parse_u64(key, value)? as usize,
            "dataset_period_s" => self.dataset_period_s = parse_f64(key, value)?,

            _ => return Err(Error::Parse(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Check mutual consistency of all settings.
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("mass_kg", self.mass_kg),
            ("coil_turns", self.coil_turns),
            ("pole_area_m2", self.pole_area_m2),
            ("permeability", self.permeability),
            ("gravity", self.gravity),
            ("target_gap_m", self.target_gap_m),
            ("dt_s", self.dt_s),
            ("v_max", self.v_max),
            ("lr_critic", self.lr_critic),
            ("lr_actor", self.lr_actor),
            ("baseline_duration_s", self.baseline_duration_s),
            ("dataset_period_s", self.dataset_period_s),
            ("rho1", self.rho1),
            ("rho2", self.rho2),
            ("rho3", self.rho3),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Parameter(format!("{name} must be positive, got {v}")));
            }
        }
        let nonneg = [
            ("coil_resistance_ohm", self.coil_resistance_ohm),
            ("disturbance_variance", self.disturbance_variance),
            ("explore_sigma", self.explore_sigma),
            ("smooth_sigma", self.smooth_sigma),
            ("smooth_clip", self.smooth_clip),
            ("pid_integral_limit", self.pid_integral_limit),
            ("lqi_integral_limit", self.lqi_integral_limit),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Parameter(format!(
                    "{name} must be non-negative, got {v}"
                )));
            }
        }
        if !(self.gap_min_m > 0.0
            && self.gap_min_m < self.target_gap_m
            && self.target_gap_m < self.gap_max_m)
        {
            return Err(Error::Parameter(format!(
                "need 0 < gap_min_m < target_gap_m < gap_max_m, got {} / {} / {}",
                self.gap_min_m, self.target_gap_m, self.gap_max_m
            )));
        }
        if !(self.reset_gap_min_m >= self.gap_min_m
            && self.reset_gap_min_m <= self.reset_gap_max_m
            && self.reset_gap_max_m <= self.gap_max_m)
        {
            return Err(Error::Parameter(
                "reset gap range must lie inside the plant gap bounds".into(),
            ));
        }
        if self.eval_gap_m <= self.gap_min_m || self.eval_gap_m >= self.gap_max_m {
            return Err(Error::Parameter(
                "eval_gap_m must lie strictly inside the plant gap bounds".into(),
            ));
        }
        if self.substeps < 1 {
            return Err(Error::Parameter("substeps must be >= 1".into()));
        }
        if !(self.gamma >= 0.0 && self.gamma < 1.0) {
            return Err(Error::Parameter(format!(
                "gamma must be in [0, 1), got {}",
                self.gamma
            )));
        }
        if !(self.tau >= 0.0 && self.tau <= 1.0) {
            return Err(Error::Parameter(format!(
                "tau must be in [0, 1], got {}",
                self.tau
            )));
        }
        if self.batch_size < 2 {
            return Err(Error::Parameter(
                "batch_size must be >= 2 (train-mode normalization needs a batch)".into(),
            ));
        }
        if self.buffer_capacity < self.batch_size {
            return Err(Error::Parameter(
                "buffer_capacity must be >= batch_size".into(),
            ));
        }
        if self.policy_delay < 1 {
            return Err(Error::Parameter("policy_delay must be >= 1".into()));
        }
        if self.horizon_steps < 1 {
            return Err(Error::Parameter("horizon_steps must be >= 1".into()));
        }
        // episodes = 0 is legal: train then emits the initial checkpoint only.
        if self.eval_episodes < 1 || self.eval_interval_steps < 1 {
            return Err(Error::Parameter(
                "eval_episodes and eval_interval_steps must be >= 1".into(),
            ));
        }
        if self.seeds.is_empty() {
            return Err(Error::Parameter("seeds must be nonempty".into()));
        }
        if self.lqi_r <= 0.0 {
            return Err(Error::Parameter("lqi_r must be positive".into()));
        }
        for (name, v) in [
            ("lqi_q1", self.lqi_q1),
            ("lqi_q2", self.lqi_q2),
            ("lqi_q3", self.lqi_q3),
            ("lqi_q4", self.lqi_q4),
        ] {
            if !(v >= 0.0) {
                return Err(Error::Parameter(format!(
                    "{name} must be non-negative, got {v}"
                )));
            }
        }
        Ok(())
    }

    /// Render the full configuration as a loadable `key = value` snapshot.
    pub fn snapshot(&self) -> String {
        let mut s = String::new();
        let cost_input = match self.cost_input {
            CostInput::Absolute => "absolute",
            CostInput::Deviation => "deviation",
        };
        let bn = match self.bn_placement {
            BnPlacement::Input => "input",
            BnPlacement::Output => "output",
            BnPlacement::Off => "off",
        };
        let opt = match self.optimizer {
            OptimizerKind::Plain => "plain",
            OptimizerKind::Adam => "adam",
        };
        let seeds = self
            .seeds
            .iter()
            .map(|s| s.to_string())
            .collect::<Vec<_>>()
            .join(",");
        let _ = write!(
            s,
            "mass_kg = {}\n\
             coil_turns = {}\n\
             pole_area_m2 = {}\n\
             coil_resistance_ohm = {}\n\
             permeability = {}\n\
             gravity = {}\n\
             target_gap_m = {}\n\
             disturbance_variance = {}\n\
             gap_min_m = {}\n\
             gap_max_m = {}\n\
             dt_s = {}\n\
             substeps = {}\n\
             rho1 = {}\n\
             rho2 = {}\n\
             rho3 = {}\n\
             v_max = {}\n\
             horizon_steps = {}\n\
             reset_gap_min_m = {}\n\
             reset_gap_max_m = {}\n\
             eval_gap_m = {}\n\
             cost_input = {}\n\
             pid_kp = {}\n\
             pid_ki = {}\n\
             pid_kd = {}\n\
             pid_integral_limit = {}\n\
             lqi_q1 = {}\n\
             lqi_q2 = {}\n\
             lqi_q3 = {}\n\
             lqi_q4 = {}\n\
             lqi_r = {}\n\
             lqi_integral_limit = {}\n\
             bn_placement = {}\n\
             gamma = {}\n\
             tau = {}\n\
             batch_size = {}\n\
             warmup_steps = {}\n\
             buffer_capacity = {}\n\
             explore_sigma = {}\n\
             smooth_sigma = {}\n\
             smooth_clip = {}\n\
             policy_delay = {}\n\
             lr_critic = {}\n\
             lr_actor = {}\n\
             optimizer = {}\n\
             episodes = {}\n\
             eval_interval_steps = {}\n\
             eval_episodes = {}\n\
             seeds = {}\n\
             baseline_duration_s = {}\n\
             dataset_cap = {}\n\
             dataset_period_s = {}\n",
            self.mass_kg,
            self.coil_turns,
            self.pole_area_m2,
            self.coil_resistance_ohm,
            self.permeability,
            self.gravity,
            self.target_gap_m,
            self.disturbance_variance,
            self.gap_min_m,
            self.gap_max_m,
            self.dt_s,
            self.substeps,
            self.rho1,
            self.rho2,
            self.rho3,
            self.v_max,
            self.horizon_steps,
            self.reset_gap_min_m,
            self.reset_gap_max_m,
            self.eval_gap_m,
            cost_input,
            self.pid_kp,
            self.pid_ki,
            self.pid_kd,
            self.pid_integral_limit,
            self.lqi_q1,
            self.lqi_q2,
            self.lqi_q3,
            self.lqi_q4,
            self.lqi_r,
            self.lqi_integral_limit,
            bn,
            self.gamma,
            self.tau,
            self.batch_size,
            self.warmup_steps,
            self.buffer_capacity,
            self.explore_sigma,
            self.smooth_sigma,
            self.smooth_clip,
            self.policy_delay,
            self.lr_critic,
            self.lr_actor,
            opt,
            self.episodes,
            self.eval_interval_steps,
            self.eval_episodes,
            seeds,
            self.baseline_duration_s,
            self.dataset_cap,
            self.dataset_period_s,
        );
        s
    }
}
