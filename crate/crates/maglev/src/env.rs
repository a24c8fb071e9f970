//! MDP wrapper around the plant: episode lifecycle, quadratic stage cost
//! and normalized-action scaling.
//!
//! The agent sees the raw deviation state as its observation and emits a
//! normalized action in [-1, 1], which maps affinely to an absolute coil
//! voltage around the equilibrium. Each step draws a fresh force
//! disturbance, holds it for one control period, and charges the quadratic
//! cost of the state/voltage pair that was executed. Episodes are fixed
//! length: the gap stops are part of the dynamics (the vehicle can rest on
//! and recover from them), not absorbing states, which keeps truncation
//! from ever looking cheaper than regulation to a cost-minimizing learner.

use crate::config::{Config, CostInput};
use crate::plant::{self, PlantParams, State};
use crate::{Error, Result};
use rand::Rng;

/// Observation = plant deviation state, bit for bit.
pub type Observation = State;

/// Stage-cost weights; all strictly positive.
#[derive(Debug, Clone, Copy)]
pub struct CostWeights {
    pub rho1: f64,
    pub rho2: f64,
    pub rho3: f64,
}

/// How an episode starts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ResetMode {
    /// Start at a given gap with zero rate and zero current error.
    Fixed(f64),
    /// Gap drawn uniformly from the configured training range.
    Randomized,
}

/// Per-step event marker. Episodes run a fixed horizon; striking a gap
/// stop clamps the state (mechanical contact) but does not end the
/// episode, so a bad policy keeps paying the error cost instead of
/// escaping it by truncation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Terminal {
    No,
    /// The gap struck a mechanical stop during the step; episode continues.
    Bound,
    /// The step counter reached the episode horizon; episode over.
    Horizon,
}

impl Terminal {
    pub fn is_terminal(self) -> bool {
        self == Terminal::Horizon
    }
}

#[derive(Debug, Clone)]
pub struct MaglevEnv {
    pub plant: PlantParams,
    pub weights: CostWeights,
    pub v_max: f64,
    pub horizon: u32,
    pub gamma: f64,
    pub reset_gap_min: f64,
    pub reset_gap_max: f64,
    pub eval_gap: f64,
    cost_input: CostInput,
    state: State,
    steps_taken: u32,
    active: bool,
}

impl MaglevEnv {
    pub fn new(cfg: &Config) -> Result<Self> {
        let plant = PlantParams::from_config(cfg)?;
        for (name, v) in [("rho1", cfg.rho1), ("rho2", cfg.rho2), ("rho3", cfg.rho3)] {
            if !(v > 0.0) {
                return Err(Error::Parameter(format!(
                    "cost weight {name} must be strictly positive, got {v}"
                )));
            }
        }
        Ok(MaglevEnv {
            plant,
            weights: CostWeights {
                rho1: cfg.rho1,
                rho2: cfg.rho2,
                rho3: cfg.rho3,
            },
            v_max: cfg.v_max,
            horizon: cfg.horizon_steps,
            gamma: cfg.gamma,
            reset_gap_min: cfg.reset_gap_min_m,
            reset_gap_max: cfg.reset_gap_max_m,
            eval_gap: cfg.eval_gap_m,
            cost_input: cfg.cost_input,
            state: [0.0; 3],
            steps_taken: 0,
            active: false,
        })
    }

    pub fn observation(&self) -> Observation {
        self.state
    }

    pub fn steps_taken(&self) -> u32 {
        self.steps_taken
    }

    pub fn is_active(&self) -> bool {
        self.active
    }

    /// Start a fresh episode; the gap begins at rest with no current error.
    pub fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R, mode: ResetMode) -> Observation {
        let gap = match mode {
            ResetMode::Fixed(g) => g.clamp(self.plant.gap_min, self.plant.gap_max),
            ResetMode::Randomized => rng.random_range(self.reset_gap_min..=self.reset_gap_max),
        };
        self.state = [gap - self.plant.x_eq, 0.0, 0.0];
        self.steps_taken = 0;
        self.active = true;
        self.state
    }

    /// Map a normalized action to an absolute coil voltage.
    pub fn scale_action(&self, a: f64) -> f64 {
        self.plant.u_eq + a.clamp(-1.0, 1.0) * self.v_max
    }

    /// Quadratic stage cost of observing `s` while applying absolute
    /// voltage `u`.
    pub fn cost(&self, s: &Observation, u: f64) -> f64 {
        let u_pen = match self.cost_input {
            CostInput::Absolute => u,
            CostInput::Deviation => u - self.plant.u_eq,
        };
        self.weights.rho1 * s[0] * s[0]
            + self.weights.rho2 * s[1] * s[1]
            + self.weights.rho3 * u_pen * u_pen
    }

    /// Execute one control period with normalized action `a`.
    ///
    /// Returns the next observation, the cost of the (state, voltage) pair
    /// that was just executed, and the step event. Striking a gap stop
    /// clamps the state but carries no extra penalty and does not end the
    /// episode; the quadratic cost is the sole signal and only the horizon
    /// terminates.
    pub fn step<R: Rng + ?Sized>(
        &mut self,
        rng: &mut R,
        a: f64,
    ) -> Result<(Observation, f64, Terminal)> {
        if !self.active {
            return Err(Error::Lifecycle(
                "step called on a finished episode; call reset first".into(),
            ));
        }
        let u = self.scale_action(a);
        let v = u - self.plant.u_eq;
        let cost = self.cost(&self.state, u);
        let f = plant::sample_disturbance(&self.plant, rng);
        let out = plant::step(&self.plant, &self.state, v, f)?;
        self.state = out.z;
        self.steps_taken += 1;
        let terminal = if self.steps_taken >= self.horizon {
            Terminal::Horizon
        } else if out.hit_bound {
            Terminal::Bound
        } else {
            Terminal::No
        };
        if terminal.is_terminal() {
            self.active = false;
        }
        Ok((self.state, cost, terminal))
    }
}
