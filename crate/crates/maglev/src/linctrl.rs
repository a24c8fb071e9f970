//! Classical regulators for the linearized suspension model: a discrete PID
//! and an LQI (LQR with output-error integrator) whose gain comes from a
//! Newton–Kleinman solve of the continuous algebraic Riccati equation.
//!
//! All synthesis works on small dense matrices (the augmented model is 4x4),
//! so the Lyapunov inner solves use straight Kronecker vectorization and LU.

use crate::config::Config;
use crate::plant::{self, PlantParams};
use crate::{Error, Result};
use nalgebra::{DMatrix, DVector};

/// Gains of the parallel-form PID `u = kp e + ki ∫e + kd de/dt`.
#[derive(Debug, Clone, Copy)]
pub struct PidGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    /// Anti-windup clamp on the error integral, m*s.
    pub integral_limit: f64,
}

impl PidGains {
    pub fn from_config(cfg: &Config) -> Self {
        PidGains {
            kp: cfg.pid_kp,
            ki: cfg.pid_ki,
            kd: cfg.pid_kd,
            integral_limit: cfg.pid_integral_limit,
        }
    }
}

/// Mutable controller memory: error integral and previous error.
#[derive(Debug, Clone, Copy, Default)]
pub struct PidState {
    pub integral: f64,
    pub prev_error: f64,
}

impl PidState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Clear all memory. The next call will see a zero previous error, so a
    /// nonzero error produces the full backward-difference derivative kick;
    /// the reference is a constant setpoint, which makes that acceptable.
    pub fn reset(&mut self) {
        *self = Self::default();
    }
}

/// One step of the discrete PID: rectangle-rule integral (accumulated before
/// the output is formed) and backward-difference derivative.
///
/// Returns the voltage deviation; the caller adds `u_eq`.
pub fn pid_control(gains: &PidGains, state: &mut PidState, error: f64, dt: f64) -> f64 {
    state.integral =
        (state.integral + error * dt).clamp(-gains.integral_limit, gains.integral_limit);
    let derivative = (error - state.prev_error) / dt;
    state.prev_error = error;
    gains.kp * error + gains.ki * state.integral + gains.kd * derivative
}

/// Linearized model `zdot = A z + B v`, `y = C z` at the operating point.
#[derive(Debug, Clone)]
pub struct LinearModel {
    pub a: [[f64; 3]; 3],
    pub b: [f64; 3],
    pub c: [f64; 3],
}

impl LinearModel {
    pub fn from_plant(p: &PlantParams) -> Self {
        let (a, b, c) = plant::linearize(p);
        LinearModel { a, b, c }
    }
}

/// True if every eigenvalue of `m` has a strictly negative real part.
pub fn is_hurwitz(m: &DMatrix<f64>) -> bool {
    m.clone()
        .complex_eigenvalues()
        .iter()
        .all(|l| l.re < 0.0)
}

/// Solve `Aᵀ P + P A + Q = 0` for Hurwitz `A` by vectorizing into an
/// n²×n² linear system `(I ⊗ Aᵀ + Aᵀ ⊗ I) vec(P) = -vec(Q)`.
pub fn solve_lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if a.ncols() != n || q.nrows() != n || q.ncols() != n {
        return Err(Error::Shape(format!(
            "lyapunov operands must be square and matching, got {}x{} and {}x{}",
            a.nrows(),
            a.ncols(),
            q.nrows(),
            q.ncols()
        )));
    }
    if n == 0 || n > 8 {
        return Err(Error::Shape(format!(
            "lyapunov solver handles 1..=8 states, got {n}"
        )));
    }
    if !is_hurwitz(a) {
        return Err(Error::Solver(
            "lyapunov left-hand matrix is not Hurwitz".into(),
        ));
    }
    let at = a.transpose();
    let eye = DMatrix::<f64>::identity(n, n);
    let m = eye.kronecker(&at) + at.kronecker(&eye);
    let rhs = DVector::from_column_slice(q.as_slice()).scale(-1.0);
    let vec_p = m
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Solver("singular Kronecker system in lyapunov solve".into()))?;
    let p_raw = DMatrix::from_column_slice(n, n, vec_p.as_slice());
    let p = (&p_raw + p_raw.transpose()).scale(0.5);

    let resid = (&at * &p + &p * a + q).norm();
    if resid > 1e-10 * (1.0 + q.norm()) {
        return Err(Error::Solver(format!(
            "lyapunov residual {resid:.3e} exceeds tolerance"
        )));
    }
    Ok(p)
}

/// Find an initial stabilizing feedback row `k0` (so `A - B k0` is Hurwitz)
/// by the pole-shifting construction: for the smallest `beta` in
/// {2, 4, 8, ...} making the shifted matrix usable, solve the Lyapunov
/// equation `(A + beta I) Z + Z (A + beta I)ᵀ = 2 B Bᵀ` and take
/// `k0 = Bᵀ Z⁻¹`. Any `Z`-based candidate that fails the Hurwitz check
/// falls through to the next rung of the ladder.
fn stabilizing_init(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    let two_bbt = (b * b.transpose()).scale(2.0);
    for exp in 1..=30u32 {
        let beta = f64::from(2u32.pow(exp.min(30)));
        let shifted = a + eye.scale(beta);
        // Gramian-form equation via the transposed-negated matrix, which is
        // Hurwitz exactly when every eigenvalue of A exceeds -beta.
        let lhs = shifted.scale(-1.0).transpose();
        let z = match solve_lyapunov(&lhs, &two_bbt) {
            Ok(z) => z,
            Err(_) => continue,
        };
        let k0 = match z.clone().lu().solve(b) {
            Some(y) => DMatrix::from_row_slice(1, n, y.as_slice()),
            None => continue,
        };
        let acl = a - b * &k0;
        if is_hurwitz(&acl) {
            return Ok(k0);
        }
    }
    Err(Error::Synthesis(
        "no stabilizing initial gain found on the shift ladder".into(),
    ))
}

/// Solve the continuous algebraic Riccati equation
/// `Aᵀ P + P A - P B r⁻¹ Bᵀ P + Q = 0` for the stabilizing `P` by
/// Newton–Kleinman iteration, to an absolute residual of 1e-9 (Frobenius).
pub fn solve_care(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    q: &DMatrix<f64>,
    r: f64,
) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if a.ncols() != n || b.nrows() != n || q.nrows() != n || q.ncols() != n {
        return Err(Error::Shape("CARE operand shapes do not match".into()));
    }
    if !(r > 0.0) || !r.is_finite() {
        return Err(Error::Parameter(format!("CARE weight r must be positive, got {r}")));
    }

    let k0 = stabilizing_init(a, b)?;
    let acl0 = a - b * &k0;
    let q0 = q + (k0.transpose() * &k0).scale(r);
    let mut p = solve_lyapunov(&acl0, &q0)?;

    let tol = 1e-9;
    let mut prev_rn = f64::INFINITY;
    for it in 0..100 {
        let pb = &p * b;
        let resid = a.transpose() * &p + &p * a - (&pb * pb.transpose()).scale(1.0 / r) + q;
        let rn = resid.norm();
        if rn <= tol {
            return Ok((&p + p.transpose()).scale(0.5));
        }
        if it > 3 && rn >= 0.5 * prev_rn {
            return Err(Error::Solver(format!(
                "Riccati iteration stagnated at residual {rn:.3e}"
            )));
        }
        prev_rn = rn;
        let k = pb.transpose().scale(1.0 / r);
        let acl = a - b * &k;
        let dp = solve_lyapunov(&acl, &resid)?;
        p += (&dp + dp.transpose()).scale(0.5);
    }
    Err(Error::Solver(
        "Riccati iteration did not converge within 100 steps".into(),
    ))
}

/// Output-integral LQ gain. Control law: `u = k_z · z + k_eps · eps` where
/// `eps` integrates the output error `(y_ref - y)`. The negative-feedback
/// sign from the Riccati synthesis is absorbed into the stored gains, so the
/// law is applied exactly as written.
#[derive(Debug, Clone, Copy)]
pub struct LqiGain {
    pub k_z: [f64; 3],
    pub k_eps: f64,
}

/// Augment the model with the output-error integrator and solve for the
/// optimal gain: `A_aug = [[A, 0], [-C, 0]]`, `B_aug = [B; 0]`,
/// `K = r⁻¹ B_augᵀ P`.
pub fn lqi_gain(model: &LinearModel, q: &DMatrix<f64>, r: f64) -> Result<LqiGain> {
    if q.nrows() != 4 || q.ncols() != 4 {
        return Err(Error::Shape("LQI weight Q must be 4x4".into()));
    }
    let (a_aug, b_aug) = augment(model);
    let p = solve_care(&a_aug, &b_aug, q, r)?;
    let k_raw = (b_aug.transpose() * &p).scale(1.0 / r);
    let acl = &a_aug - &b_aug * &k_raw;
    if !is_hurwitz(&acl) {
        return Err(Error::Synthesis(
            "synthesized LQI gain does not stabilize the augmented model".into(),
        ));
    }
    Ok(LqiGain {
        k_z: [-k_raw[(0, 0)], -k_raw[(0, 1)], -k_raw[(0, 2)]],
        k_eps: -k_raw[(0, 3)],
    })
}

/// Build the integrator-augmented state matrices.
pub fn augment(model: &LinearModel) -> (DMatrix<f64>, DVector<f64>) {
    let mut a_aug = DMatrix::<f64>::zeros(4, 4);
    for i in 0..3 {
        for j in 0..3 {
            a_aug[(i, j)] = model.a[i][j];
        }
        a_aug[(3, i)] = -model.c[i];
    }
    let mut b_aug = DVector::<f64>::zeros(4);
    for i in 0..3 {
        b_aug[i] = model.b[i];
    }
    (a_aug, b_aug)
}

/// Read the LQI weights from config as (Q, r).
pub fn lqi_weights(cfg: &Config) -> (DMatrix<f64>, f64) {
    let q = DMatrix::from_diagonal(&DVector::from_column_slice(&[
        cfg.lqi_q1, cfg.lqi_q2, cfg.lqi_q3, cfg.lqi_q4,
    ]));
    (q, cfg.lqi_r)
}

/// Evaluate the LQI law for deviation state `z` and error integral `eps`.
pub fn lqi_control(gain: &LqiGain, z: &[f64; 3], eps: f64) -> f64 {
    gain.k_z[0] * z[0] + gain.k_z[1] * z[1] + gain.k_z[2] * z[2] + gain.k_eps * eps
}

/// Integrator memory for the LQI loop.
#[derive(Debug, Clone, Copy, Default)]
pub struct LqiState {
    pub eps: f64,
}

impl LqiState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Accumulate `(y_ref - y) * dt` with an anti-windup clamp. In deviation
    /// coordinates the reference is zero, so `y` is just the gap deviation.
    pub fn integrate(&mut self, y: f64, dt: f64, limit: f64) {
        self.eps = (self.eps - y * dt).clamp(-limit, limit);
    }

    pub fn reset(&mut self) {
        self.eps = 0.0;
    }
}

/// Human-readable synthesis report: model, gain, closed-loop eigenvalues and
/// the achieved Riccati residual.
pub fn lqi_report(model: &LinearModel, q: &DMatrix<f64>, r: f64, gain: &LqiGain) -> String {
    use std::fmt::Write as _;
    let (a_aug, b_aug) = augment(model);
    let k_raw = DMatrix::from_row_slice(
        1,
        4,
        &[-gain.k_z[0], -gain.k_z[1], -gain.k_z[2], -gain.k_eps],
    );
    let acl = &a_aug - &b_aug * &k_raw;
    let eigs = acl.complex_eigenvalues();
    let mut s = String::new();
    let _ = writeln!(s, "augmented model A_aug =");
    for i in 0..4 {
        let _ = writeln!(
            s,
            "  [{:+.6e} {:+.6e} {:+.6e} {:+.6e}]",
            a_aug[(i, 0)],
            a_aug[(i, 1)],
            a_aug[(i, 2)],
            a_aug[(i, 3)]
        );
    }
    let _ = writeln!(
        s,
        "B_aug = [{:+.6e} {:+.6e} {:+.6e} {:+.6e}]ᵀ",
        b_aug[0], b_aug[1], b_aug[2], b_aug[3]
    );
    let _ = writeln!(
        s,
        "weights: Q diag = [{:e} {:e} {:e} {:e}], r = {:e}",
        q[(0, 0)],
        q[(1, 1)],
        q[(2, 2)],
        q[(3, 3)],
        r
    );
    let _ = writeln!(
        s,
        "gain: k_z = [{:+.9e} {:+.9e} {:+.9e}], k_eps = {:+.9e}",
        gain.k_z[0], gain.k_z[1], gain.k_z[2], gain.k_eps
    );
    let _ = writeln!(s, "closed-loop eigenvalues:");
    for l in eigs.iter() {
        let _ = writeln!(s, "  {:+.6} {:+.6}i", l.re, l.im);
    }
    if let Ok(p) = solve_care(&a_aug, &b_aug, q, r) {
        let pb = &p * &b_aug;
        let resid =
            a_aug.transpose() * &p + &p * &a_aug - (&pb * pb.transpose()).scale(1.0 / r) + q;
        let _ = writeln!(s, "riccati residual (frobenius): {:.3e}", resid.norm());
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn default_model() -> LinearModel {
        let p = PlantParams::from_config(&Config::default()).unwrap();
        LinearModel::from_plant(&p)
    }

    #[test]
    fn pid_zero_error_gives_zero_output() {
        let gains = PidGains::from_config(&Config::default());
        let mut st = PidState::new();
        for _ in 0..50 {
            assert_eq!(pid_control(&gains, &mut st, 0.0, 1e-3), 0.0);
        }
    }

    #[test]
    fn pid_second_step_matches_hand_evaluation() {
        let gains = PidGains::from_config(&Config::default());
        let mut st = PidState::new();
        let u1 = pid_control(&gains, &mut st, 1.0, 1e-3);
        // First step carries the full derivative kick from prev_error = 0.
        assert!((u1 - (3100.0 + 0.3 + 310_000.0)).abs() < 1e-9);
        let u2 = pid_control(&gains, &mut st, 1.0, 1e-3);
        assert!((u2 - 3100.6).abs() < 1e-9);
    }

    #[test]
    fn pid_output_linear_in_gains() {
        let cfg = Config::default();
        let g1 = PidGains::from_config(&cfg);
        let g3 = PidGains {
            kp: 3.0 * g1.kp,
            ki: 3.0 * g1.ki,
            kd: 3.0 * g1.kd,
            integral_limit: g1.integral_limit,
        };
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let errors: Vec<f64> = (0..100).map(|_| rng.random_range(-1e-3..1e-3)).collect();
        let (mut s1, mut s3) = (PidState::new(), PidState::new());
        for &e in &errors {
            let u1 = pid_control(&g1, &mut s1, e, 1e-3);
            let u3 = pid_control(&g3, &mut s3, e, 1e-3);
            assert!((u3 - 3.0 * u1).abs() <= 1e-9 * (1.0 + u1.abs()));
        }
    }

    #[test]
    fn pid_integral_clamps() {
        let gains = PidGains {
            kp: 0.0,
            ki: 1.0,
            kd: 0.0,
            integral_limit: 0.5,
        };
        let mut st = PidState::new();
        let mut u = 0.0;
        for _ in 0..2000 {
            u = pid_control(&gains, &mut st, 1.0, 1e-3);
        }
        assert_eq!(u, 0.5);
        assert_eq!(st.integral, 0.5);
    }

    #[test]
    fn lyapunov_identity_example() {
        let a = DMatrix::<f64>::identity(3, 3).scale(-1.0);
        let q = DMatrix::<f64>::identity(3, 3).scale(2.0);
        let p = solve_lyapunov(&a, &q).unwrap();
        assert!((p - DMatrix::<f64>::identity(3, 3)).norm() < 1e-12);
    }

    #[test]
    fn lyapunov_scalar_example() {
        let a = DMatrix::from_row_slice(1, 1, &[-2.0]);
        let q = DMatrix::from_row_slice(1, 1, &[4.0]);
        let p = solve_lyapunov(&a, &q).unwrap();
        assert!((p[(0, 0)] - 1.0).abs() < 1e-13);
    }

    #[test]
    fn lyapunov_rejects_unstable_a() {
        let a = DMatrix::from_row_slice(1, 1, &[0.5]);
        let q = DMatrix::from_row_slice(1, 1, &[1.0]);
        assert!(matches!(
            solve_lyapunov(&a, &q).unwrap_err(),
            Error::Solver(_)
        ));
    }

    #[test]
    fn lyapunov_rejects_oversized_system() {
        let a = DMatrix::<f64>::identity(9, 9).scale(-1.0);
        let q = DMatrix::<f64>::identity(9, 9);
        assert!(matches!(
            solve_lyapunov(&a, &q).unwrap_err(),
            Error::Shape(_)
        ));
    }

    fn random_stable(rng: &mut ChaCha12Rng, n: usize) -> DMatrix<f64> {
        let raw = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let max_re = raw
            .clone()
            .complex_eigenvalues()
            .iter()
            .map(|l| l.re)
            .fold(f64::NEG_INFINITY, f64::max);
        &raw - DMatrix::identity(n, n).scale(max_re + 0.5)
    }

    fn random_psd(rng: &mut ChaCha12Rng, n: usize) -> DMatrix<f64> {
        let g = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        &g * g.transpose()
    }

    #[test]
    fn lyapunov_residual_bound_on_random_systems() {
        let mut rng = ChaCha12Rng::seed_from_u64(2024);
        for trial in 0..120 {
            let n = 1 + (trial % 4);
            let a = random_stable(&mut rng, n);
            let q = random_psd(&mut rng, n);
            let p = solve_lyapunov(&a, &q).unwrap();
            let resid = (a.transpose() * &p + &p * &a + &q).norm();
            assert!(
                resid <= 1e-10 * (1.0 + q.norm()),
                "trial {trial}: residual {resid:.3e}"
            );
            assert!((&p - p.transpose()).norm() <= 1e-12 * (1.0 + p.norm()));
        }
    }

    #[test]
    fn care_zero_q_gives_zero_p() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let a = random_stable(&mut rng, 3);
        let b = DVector::from_column_slice(&[0.3, -1.1, 0.7]);
        let q = DMatrix::<f64>::zeros(3, 3);
        let p = solve_care(&a, &b, &q, 2.0).unwrap();
        assert!(p.norm() < 1e-8);
        let gain = (b.transpose() * &p).scale(1.0 / 2.0);
        assert!(gain.norm() < 1e-8);
    }

    #[test]
    fn care_scalar_example() {
        let a = DMatrix::from_row_slice(1, 1, &[0.0]);
        let b = DVector::from_column_slice(&[1.0]);
        let q = DMatrix::from_row_slice(1, 1, &[1.0]);
        let p = solve_care(&a, &b, &q, 1.0).unwrap();
        assert!((p[(0, 0)] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn care_rejects_bad_r() {
        let a = DMatrix::from_row_slice(1, 1, &[-1.0]);
        let b = DVector::from_column_slice(&[1.0]);
        let q = DMatrix::from_row_slice(1, 1, &[1.0]);
        assert!(matches!(
            solve_care(&a, &b, &q, 0.0).unwrap_err(),
            Error::Parameter(_)
        ));
    }

    #[test]
    fn care_unstabilizable_pair_fails_synthesis() {
        // Unstable mode completely decoupled from the input.
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        let b = DVector::from_column_slice(&[0.0, 1.0]);
        let q = DMatrix::<f64>::identity(2, 2);
        let err = solve_care(&a, &b, &q, 1.0).unwrap_err();
        assert!(matches!(err, Error::Synthesis(_) | Error::Solver(_)));
    }

    #[test]
    fn care_residual_bound_on_random_systems() {
        let mut rng = ChaCha12Rng::seed_from_u64(77);
        let mut done = 0;
        while done < 100 {
            let n = 1 + (done % 4);
            let a = random_stable(&mut rng, n) + DMatrix::identity(n, n).scale(0.3);
            let b = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0f64));
            if b.norm() < 0.3 {
                continue;
            }
            let q = random_psd(&mut rng, n);
            let p = match solve_care(&a, &b, &q, 1.0) {
                Ok(p) => p,
                // Rare near-unstabilizable draws are allowed to error out.
                Err(Error::Synthesis(_)) | Err(Error::Solver(_)) => continue,
                Err(e) => panic!("unexpected error {e}"),
            };
            let pb = &p * &b;
            let resid = a.transpose() * &p + &p * &a - &pb * pb.transpose() + &q;
            assert!(resid.norm() <= 1e-9, "residual {:.3e}", resid.norm());
            assert!((&p - p.transpose()).norm() <= 1e-12 * (1.0 + p.norm()));
            // Stabilizing solution: closed loop must be Hurwitz.
            let acl = &a - &b * pb.transpose();
            assert!(is_hurwitz(&acl));
            done += 1;
        }
    }

    #[test]
    fn lqi_gain_matches_frozen_synthesis() {
        let cfg = Config::default();
        let model = default_model();
        let (q, r) = lqi_weights(&cfg);
        let gain = lqi_gain(&model, &q, r).unwrap();
        // Frozen from an independent high-precision Riccati solve of the
        // default model and weights.
        assert!((gain.k_z[0] / 5.39787770e5 - 1.0).abs() < 1e-5);
        assert!((gain.k_z[1] / 1.25571413e4 - 1.0).abs() < 1e-5);
        assert!((gain.k_z[2] / -1.04073685e2 - 1.0).abs() < 1e-5);
        assert!((gain.k_eps / -1.0e4 - 1.0).abs() < 1e-7);
    }

    #[test]
    fn lqi_gain_scale_invariance() {
        let cfg = Config::default();
        let model = default_model();
        let (q, r) = lqi_weights(&cfg);
        let g1 = lqi_gain(&model, &q, r).unwrap();
        let c = 100.0;
        let g2 = lqi_gain(&model, &q.scale(c), r * c).unwrap();
        for i in 0..3 {
            assert!((g2.k_z[i] / g1.k_z[i] - 1.0).abs() <= 1e-8);
        }
        assert!((g2.k_eps / g1.k_eps - 1.0).abs() <= 1e-8);
    }

    #[test]
    fn lqi_control_arithmetic() {
        let gain = LqiGain {
            k_z: [1.0, 2.0, 3.0],
            k_eps: 4.0,
        };
        assert_eq!(lqi_control(&gain, &[0.0, 0.0, 0.0], 0.0), 0.0);
        assert_eq!(lqi_control(&gain, &[1.0, 1.0, 1.0], 2.0), 14.0);
    }

    #[test]
    fn lqi_linear_loop_settles_fast() {
        let cfg = Config::default();
        let model = default_model();
        let (q, r) = lqi_weights(&cfg);
        let gain = lqi_gain(&model, &q, r).unwrap();
        let (a_aug, b_aug) = augment(&model);
        let k_raw = DMatrix::from_row_slice(
            1,
            4,
            &[-gain.k_z[0], -gain.k_z[1], -gain.k_z[2], -gain.k_eps],
        );
        let acl = &a_aug - &b_aug * &k_raw;
        // Forward Euler on the closed linear system from a 15 mm gap.
        let dt = 1e-5;
        let mut x = DVector::from_column_slice(&[0.007, 0.0, 0.0, 0.0]);
        let band = 0.02 * 0.007;
        let mut last_violation = 0.0;
        let steps = (0.5 / dt) as usize;
        for k in 0..steps {
            x = &x + (&acl * &x).scale(dt);
            if x[0].abs() > band {
                last_violation = (k + 1) as f64 * dt;
            }
        }
        assert!(x[0].abs() <= band, "loop did not settle at all");
        assert!(
            last_violation <= 0.2,
            "2% settling took {last_violation:.3} s"
        );
    }

    #[test]
    fn lqi_integrator_clamps() {
        let mut st = LqiState::new();
        for _ in 0..3000 {
            st.integrate(-1.0, 1e-3, 1.0);
        }
        assert_eq!(st.eps, 1.0);
        st.reset();
        assert_eq!(st.eps, 0.0);
    }

    #[test]
    fn pid_nonlinear_loop_is_lightly_damped() {
        // Closed nonlinear loop, no disturbance, from a 15 mm gap. At the
        // stock gains the linearized loop's dominant poles carry a damping
        // ratio of only ≈ 0.04, so the faithful loop rings: overshoot near
        // e^(−πζ/√(1−ζ²)) ≈ 87% and no 2% settling within 10 s. This test
        // pins that measured behaviour (the acceptance gate reports the
        // envelope shortfall separately); it also checks the ringing stays
        // clear of the gap stops.
        let cfg = Config::default();
        let p = PlantParams::from_config(&cfg).unwrap();
        let gains = PidGains::from_config(&cfg);
        let mut st = PidState::new();
        let mut z = [0.007, 0.0, 0.0];
        let dt = p.dt;
        let steps = (10.0 / dt) as usize;
        let band = 0.02 * 0.007;
        let mut min_z1 = f64::INFINITY;
        let mut last_viol_t = 0.0;
        for k in 0..steps {
            let u_dev = pid_control(&gains, &mut st, z[0], dt);
            let out = plant::step(&p, &z, u_dev, 0.0).unwrap();
            z = out.z;
            min_z1 = min_z1.min(z[0]);
            if z[0].abs() > band {
                last_viol_t = (k + 1) as f64 * dt;
            }
            assert!(!out.hit_bound, "PID ringing struck a gap stop at step {k}");
        }
        let overshoot = (-min_z1).max(0.0) / 0.007;
        assert!(
            last_viol_t > 9.0,
            "PID loop unexpectedly held the 2% band from {last_viol_t:.2} s on"
        );
        assert!(
            (0.80..=0.95).contains(&overshoot),
            "PID overshoot {:.1}% outside the lightly-damped range [80%, 95%]",
            overshoot * 100.0
        );
    }

    #[test]
    fn report_mentions_gain_and_eigenvalues() {
        let cfg = Config::default();
        let model = default_model();
        let (q, r) = lqi_weights(&cfg);
        let gain = lqi_gain(&model, &q, r).unwrap();
        let report = lqi_report(&model, &q, r, &gain);
        assert!(report.contains("closed-loop eigenvalues"));
        assert!(report.contains("riccati residual"));
    }
}
