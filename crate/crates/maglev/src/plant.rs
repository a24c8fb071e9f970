//! Nonlinear single-point suspension model.
//!
//! The plant is one electromagnet of an EMS vehicle holding a levitated mass
//! below a rail. With gap `x` (m), gap rate `xdot` (m/s) and coil current `i`
//! (A), the magnet force is `mu0*N^2*A/4 * (i/x)^2` and the coil obeys the
//! usual variable-inductance circuit law. Everything here works in deviation
//! coordinates around the force-balance equilibrium at the target gap:
//!
//! ```text
//! z = (x - x_eq, xdot, i - i_eq),   input v = u - u_eq (coil volts)
//! ```
//!
//! so the origin is the operating point and a regulator's job is to drive
//! `z` to zero. `f` is a vertical force disturbance on the vehicle (N).

use crate::config::Config;
use crate::{Error, Result};
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Deviation state `(gap - x_eq, gap rate, current - i_eq)`.
pub type State = [f64; 3];

/// Physical parameters plus derived equilibrium constants.
#[derive(Debug, Clone)]
pub struct PlantParams {
    pub mass: f64,
    pub turns: f64,
    pub area: f64,
    pub resistance: f64,
    pub mu0: f64,
    pub gravity: f64,
    /// Target (equilibrium) air gap, m.
    pub x_eq: f64,
    pub gap_min: f64,
    pub gap_max: f64,
    pub dt: f64,
    pub substeps: u32,
    /// Variance of the Gaussian force disturbance, N^2.
    pub disturbance_variance: f64,

    // Derived constants.
    /// `4*m*g / (mu0*N^2*A)`; the squared current/gap ratio at force balance.
    pub kappa: f64,
    pub sqrt_kappa: f64,
    pub i_eq: f64,
    pub u_eq: f64,
}

impl PlantParams {
    pub fn from_config(cfg: &Config) -> Result<Self> {
        cfg.validate()?;
        let kappa =
            4.0 * cfg.mass_kg * cfg.gravity / (cfg.permeability * cfg.coil_turns.powi(2) * cfg.pole_area_m2);
        let sqrt_kappa = kappa.sqrt();
        let i_eq = sqrt_kappa * cfg.target_gap_m;
        let u_eq = cfg.coil_resistance_ohm * i_eq;
        Ok(PlantParams {
            mass: cfg.mass_kg,
            turns: cfg.coil_turns,
            area: cfg.pole_area_m2,
            resistance: cfg.coil_resistance_ohm,
            mu0: cfg.permeability,
            gravity: cfg.gravity,
            x_eq: cfg.target_gap_m,
            gap_min: cfg.gap_min_m,
            gap_max: cfg.gap_max_m,
            dt: cfg.dt_s,
            substeps: cfg.substeps,
            disturbance_variance: cfg.disturbance_variance,
            kappa,
            sqrt_kappa,
            i_eq,
            u_eq,
        })
    }

    /// Steady current and voltage that hold the mass at the target gap.
    pub fn equilibrium(&self) -> (f64, f64) {
        (self.i_eq, self.u_eq)
    }

    /// Absolute gap for a deviation state.
    pub fn gap(&self, z: &State) -> f64 {
        z[0] + self.x_eq
    }

    /// Absolute coil current for a deviation state.
    pub fn current(&self, z: &State) -> f64 {
        z[2] + self.i_eq
    }
}

/// Time derivative of the deviation state under voltage deviation `v` and
/// force disturbance `f`.
///
/// Fails if the instantaneous gap is non-positive, where the magnet model
/// has a singularity.
pub fn derivative(p: &PlantParams, z: &State, v: f64, f: f64) -> Result<[f64; 3]> {
    let gap = z[0] + p.x_eq;
    if gap <= 0.0 {
        return Err(Error::Singularity(format!(
            "air gap {gap:.6} m is non-positive; magnet force is undefined"
        )));
    }
    let gap2 = gap * gap;
    let dz1 = z[1];
    // Written so both force terms vanish identically at the origin.
    let dz2 = p.gravity * (2.0 * p.x_eq + z[0]) * z[0] / gap2
        - p.gravity * (2.0 * p.sqrt_kappa * p.x_eq + z[2]) * z[2] / (p.kappa * gap2)
        + f / p.mass;
    let dz3 = (z[2] + p.sqrt_kappa * p.x_eq) / gap * z[1]
        + p.kappa * gap / (2.0 * p.mass * p.gravity) * (v - p.resistance * z[2]);
    Ok([dz1, dz2, dz3])
}

/// One unclamped forward-Euler step of length `dt`.
pub fn euler_step(p: &PlantParams, z: &State, v: f64, f: f64, dt: f64) -> Result<State> {
    let d = derivative(p, z, v, f)?;
    Ok([z[0] + dt * d[0], z[1] + dt * d[1], z[2] + dt * d[2]])
}

/// Result of a bounded control-period step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub z: State,
    /// True if the gap left `[gap_min, gap_max]` during the step. The state
    /// is then clamped to the violated bound with the gap rate zeroed,
    /// modeling contact with a mechanical stop.
    pub hit_bound: bool,
}

/// Advance one control period `dt` (split into `substeps` Euler substeps)
/// holding `v` and `f` constant, enforcing the physical limits: the gap is
/// confined to `[gap_min, gap_max]` by mechanical stops (contact zeroes the
/// gap rate), and the coil current cannot reverse — the chopper freewheels
/// it down to zero but a diode blocks negative flow, so the attraction
/// force bottoms out at zero instead of returning for reversed current.
/// Integration continues after a clamp: a vehicle resting on a stop keeps
/// its current dynamics and can pull free once the force recovers.
pub fn step(p: &PlantParams, z: &State, v: f64, f: f64) -> Result<StepOutcome> {
    let h = p.dt / p.substeps as f64;
    let mut cur = *z;
    let mut hit_bound = false;
    for _ in 0..p.substeps {
        cur = euler_step(p, &cur, v, f, h)?;
        if cur[2] + p.i_eq < 0.0 {
            cur[2] = -p.i_eq;
        }
        let gap = cur[0] + p.x_eq;
        if gap < p.gap_min {
            cur = [p.gap_min - p.x_eq, 0.0, cur[2]];
            hit_bound = true;
        } else if gap > p.gap_max {
            cur = [p.gap_max - p.x_eq, 0.0, cur[2]];
            hit_bound = true;
        }
    }
    Ok(StepOutcome { z: cur, hit_bound })
}

/// Draw one force disturbance, held constant over the next control period.
///
/// Zero variance short-circuits to exactly `0.0` without consuming
/// randomness, so noise-free runs are bit-reproducible regardless of how
/// the generator is shared.
pub fn sample_disturbance<R: Rng + ?Sized>(p: &PlantParams, rng: &mut R) -> f64 {
    if p.disturbance_variance == 0.0 {
        return 0.0;
    }
    let normal = Normal::new(0.0, p.disturbance_variance.sqrt()).expect("finite std");
    normal.sample(rng)
}

/// Jacobian linearization at the origin: `zdot ≈ A z + B v`, `y = C z`.
pub fn linearize(p: &PlantParams) -> ([[f64; 3]; 3], [f64; 3], [f64; 3]) {
    let a21 = 2.0 * p.gravity / p.x_eq;
    let a23 = -2.0 * p.gravity / (p.sqrt_kappa * p.x_eq);
    let a32 = p.sqrt_kappa;
    let a33 = -p.kappa * p.x_eq * p.resistance / (2.0 * p.mass * p.gravity);
    let b3 = p.kappa * p.x_eq / (2.0 * p.mass * p.gravity);
    (
        [[0.0, 1.0, 0.0], [a21, 0.0, a23], [0.0, a32, a33]],
        [0.0, 0.0, b3],
        [1.0, 0.0, 0.0],
    )
}
