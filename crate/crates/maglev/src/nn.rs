//! Small fixed-architecture networks with hand-written forward and reverse
//! passes in f64.
//!
//! Two network kinds exist: a critic `q(s,u)` that takes the 3-dim state in
//! its first layer and concatenates the scalar action into its second, and a
//! tanh-bounded actor `mu(s)` with batch normalization. Parameters live in
//! one flat `Vec<f64>` per network (layout fixed by the architecture), which
//! keeps optimizers, soft updates and checkpoints trivial and bit-exact.
//!
//! Everything is deterministic given the RNG seed; there is no threading and
//! no hidden global state.

use crate::config::BnPlacement;
use crate::{Error, Result};
use rand::Rng;

pub const STATE_DIM: usize = 3;
pub const HIDDEN: usize = 40;
const DIMS: [usize; 4] = [STATE_DIM, HIDDEN, HIDDEN, 1];

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.99;
/// Final-layer init range; keeps the initial policy and Q near zero.
const FINAL_INIT: f64 = 3e-3;

fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// Derivative convention: exactly-zero pre-activations count as inactive.
fn relu_mask(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        0.0
    }
}

fn uniform_init<R: Rng + ?Sized>(rng: &mut R, out: &mut [f64], bound: f64) {
    for w in out {
        *w = rng.random_range(-bound..=bound);
    }
}

/// `y[j] = W x[j] + b` over a row-major batch.
fn affine_batch(
    batch: usize,
    in_dim: usize,
    out_dim: usize,
    w: &[f64],
    b: &[f64],
    x: &[f64],
    y: &mut [f64],
) {
    for j in 0..batch {
        let xr = &x[j * in_dim..(j + 1) * in_dim];
        let yr = &mut y[j * out_dim..(j + 1) * out_dim];
        for o in 0..out_dim {
            let row = &w[o * in_dim..(o + 1) * in_dim];
            let dot: f64 = row.iter().zip(xr.iter()).map(|(a, c)| a * c).sum();
            yr[o] = dot + b[o];
        }
    }
}

// ---------------------------------------------------------------------------
// Critic
// ---------------------------------------------------------------------------

/// Q-network: state → 40 (relu), [hidden ++ action] → 40 (relu), 40 → 1
/// (linear). No normalization layers.
///
/// Flat parameter layout: `w1 (40x3), b1 (40), w2 (40x41), b2 (40),
/// w3 (1x40), b3 (1)`.
#[derive(Debug, Clone)]
pub struct CriticNet {
    pub params: Vec<f64>,
}

const C_W1: usize = 0;
const C_B1: usize = C_W1 + HIDDEN * STATE_DIM;
const C_W2: usize = C_B1 + HIDDEN;
const C_B2: usize = C_W2 + HIDDEN * (HIDDEN + 1);
const C_W3: usize = C_B2 + HIDDEN;
const C_B3: usize = C_W3 + HIDDEN;
pub const CRITIC_PARAMS: usize = C_B3 + 1;

/// Reusable forward-pass cache for a batch.
#[derive(Debug, Clone, Default)]
pub struct CriticTrace {
    batch: usize,
    s: Vec<f64>,
    u: Vec<f64>,
    y1: Vec<f64>,
    a1: Vec<f64>,
    y2: Vec<f64>,
    a2: Vec<f64>,
}

impl CriticTrace {
    /// Smallest |relu input| recorded in this batch (∞ when empty).
    /// Finite-difference checks resample batches whose forward pass grazes
    /// a relu kink, where one-sided slopes make the comparison meaningless.
    pub fn min_abs_relu_preactivation(&self) -> f64 {
        self.y1
            .iter()
            .chain(self.y2.iter())
            .fold(f64::INFINITY, |m, y| m.min(y.abs()))
    }
}

impl CriticNet {
    /// Random init: weights uniform in ±1/√fan_in, final layer ±3e-3,
    /// biases zero. Draw order is fixed (w1, w2, w3 row-major).
    pub fn new<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let mut params = vec![0.0; CRITIC_PARAMS];
        uniform_init(
            rng,
            &mut params[C_W1..C_B1],
            1.0 / (STATE_DIM as f64).sqrt(),
        );
        uniform_init(
            rng,
            &mut params[C_W2..C_B2],
            1.0 / ((HIDDEN + 1) as f64).sqrt(),
        );
        uniform_init(rng, &mut params[C_W3..C_B3], FINAL_INIT);
        CriticNet { params }
    }

    pub fn zeroed() -> Self {
        CriticNet {
            params: vec![0.0; CRITIC_PARAMS],
        }
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Batch forward, caching everything the backward pass needs.
    pub fn forward_batch(&self, s: &[[f64; 3]], u: &[f64], trace: &mut CriticTrace) -> Vec<f64> {
        let b = s.len();
        assert_eq!(u.len(), b, "state/action batch mismatch");
        let p = &self.params;
        trace.batch = b;
        trace.s.clear();
        trace.s.extend(s.iter().flatten());
        trace.u.clear();
        trace.u.extend_from_slice(u);
        trace.y1.resize(b * HIDDEN, 0.0);
        trace.a1.resize(b * HIDDEN, 0.0);
        trace.y2.resize(b * HIDDEN, 0.0);
        trace.a2.resize(b * HIDDEN, 0.0);

        affine_batch(
            b,
            STATE_DIM,
            HIDDEN,
            &p[C_W1..C_B1],
            &p[C_B1..C_W2],
            &trace.s,
            &mut trace.y1,
        );
        for (a, y) in trace.a1.iter_mut().zip(trace.y1.iter()) {
            *a = relu(*y);
        }

        // Layer 2 sees [a1 ++ u]; the action weight is the last column.
        let w2 = &p[C_W2..C_B2];
        let b2 = &p[C_B2..C_W3];
        for j in 0..b {
            let h = &trace.a1[j * HIDDEN..(j + 1) * HIDDEN];
            let yr = &mut trace.y2[j * HIDDEN..(j + 1) * HIDDEN];
            for o in 0..HIDDEN {
                let row = &w2[o * (HIDDEN + 1)..o * (HIDDEN + 1) + HIDDEN];
                let dot: f64 = row.iter().zip(h.iter()).map(|(a, c)| a * c).sum();
                yr[o] = dot + w2[o * (HIDDEN + 1) + HIDDEN] * u[j] + b2[o];
            }
        }
        for (a, y) in trace.a2.iter_mut().zip(trace.y2.iter()) {
            *a = relu(*y);
        }

        let w3 = &p[C_W3..C_B3];
        let b3 = p[C_B3];
        (0..b)
            .map(|j| {
                let h = &trace.a2[j * HIDDEN..(j + 1) * HIDDEN];
                let dot: f64 = w3.iter().zip(h.iter()).map(|(a, c)| a * c).sum();
                dot + b3
            })
            .collect()
    }

    /// Single-pair convenience forward.
    pub fn forward_one(&self, s: &[f64; 3], u: f64) -> f64 {
        let p = &self.params;
        let mut h1 = [0.0; HIDDEN];
        for o in 0..HIDDEN {
            let row = &p[C_W1 + o * STATE_DIM..C_W1 + (o + 1) * STATE_DIM];
            h1[o] = relu(row[0] * s[0] + row[1] * s[1] + row[2] * s[2] + p[C_B1 + o]);
        }
        let mut h2 = [0.0; HIDDEN];
        for o in 0..HIDDEN {
            let row = &p[C_W2 + o * (HIDDEN + 1)..C_W2 + o * (HIDDEN + 1) + HIDDEN];
            let dot: f64 = row.iter().zip(h1.iter()).map(|(a, c)| a * c).sum();
            h2[o] = relu(dot + p[C_W2 + o * (HIDDEN + 1) + HIDDEN] * u + p[C_B2 + o]);
        }
        let dot: f64 = p[C_W3..C_B3].iter().zip(h2.iter()).map(|(a, c)| a * c).sum();
        dot + p[C_B3]
    }

    /// Gradients of `(1/B) Σ_j coeff_j · q_j` with respect to every
    /// parameter, accumulated into `grads` (resized and zeroed here).
    pub fn backward_into(&self, trace: &CriticTrace, coeffs: &[f64], grads: &mut Vec<f64>) {
        let b = trace.batch;
        assert_eq!(coeffs.len(), b, "coefficient batch mismatch");
        let p = &self.params;
        grads.clear();
        grads.resize(CRITIC_PARAMS, 0.0);
        let inv_b = 1.0 / b as f64;

        let w2 = &p[C_W2..C_B2];
        let w3 = &p[C_W3..C_B3];
        let mut dy2 = vec![0.0; HIDDEN];
        let mut dy1 = vec![0.0; HIDDEN];
        for j in 0..b {
            let dq = coeffs[j] * inv_b;
            if dq == 0.0 {
                continue;
            }
            let a2 = &trace.a2[j * HIDDEN..(j + 1) * HIDDEN];
            let y2 = &trace.y2[j * HIDDEN..(j + 1) * HIDDEN];
            let a1 = &trace.a1[j * HIDDEN..(j + 1) * HIDDEN];
            let y1 = &trace.y1[j * HIDDEN..(j + 1) * HIDDEN];
            let s = &trace.s[j * STATE_DIM..(j + 1) * STATE_DIM];
            let u = trace.u[j];

            // Output layer.
            for o in 0..HIDDEN {
                grads[C_W3 + o] += dq * a2[o];
                dy2[o] = dq * w3[o] * relu_mask(y2[o]);
            }
            grads[C_B3] += dq;

            // Hidden layer 2 and its action column.
            for i in 0..HIDDEN {
                dy1[i] = 0.0;
            }
            for o in 0..HIDDEN {
                let d = dy2[o];
                if d == 0.0 {
                    continue;
                }
                let wrow = &w2[o * (HIDDEN + 1)..o * (HIDDEN + 1) + HIDDEN];
                let grow = &mut grads[C_W2 + o * (HIDDEN + 1)..C_W2 + o * (HIDDEN + 1) + HIDDEN];
                for i in 0..HIDDEN {
                    grow[i] += d * a1[i];
                    dy1[i] += d * wrow[i];
                }
                grads[C_W2 + o * (HIDDEN + 1) + HIDDEN] += d * u;
                grads[C_B2 + o] += d;
            }

            // Hidden layer 1.
            for o in 0..HIDDEN {
                let d = dy1[o] * relu_mask(y1[o]);
                if d == 0.0 {
                    continue;
                }
                let grow = &mut grads[C_W1 + o * STATE_DIM..C_W1 + (o + 1) * STATE_DIM];
                grow[0] += d * s[0];
                grow[1] += d * s[1];
                grow[2] += d * s[2];
                grads[C_B1 + o] += d;
            }
        }
    }

    pub fn backward(&self, trace: &CriticTrace, coeffs: &[f64]) -> Vec<f64> {
        let mut g = Vec::new();
        self.backward_into(trace, coeffs, &mut g);
        g
    }

    /// `∂q/∂u` for one (s, u) pair.
    pub fn grad_action(&self, s: &[f64; 3], u: f64) -> f64 {
        let p = &self.params;
        let mut h1 = [0.0; HIDDEN];
        for o in 0..HIDDEN {
            let row = &p[C_W1 + o * STATE_DIM..C_W1 + (o + 1) * STATE_DIM];
            h1[o] = relu(row[0] * s[0] + row[1] * s[1] + row[2] * s[2] + p[C_B1 + o]);
        }
        let mut mask2 = [0.0; HIDDEN];
        for o in 0..HIDDEN {
            let row = &p[C_W2 + o * (HIDDEN + 1)..C_W2 + o * (HIDDEN + 1) + HIDDEN];
            let dot: f64 = row.iter().zip(h1.iter()).map(|(a, c)| a * c).sum();
            mask2[o] = relu_mask(dot + p[C_W2 + o * (HIDDEN + 1) + HIDDEN] * u + p[C_B2 + o]);
        }
        let mut g = 0.0;
        for o in 0..HIDDEN {
            g += p[C_W3 + o] * mask2[o] * p[C_W2 + o * (HIDDEN + 1) + HIDDEN];
        }
        g
    }
}

// ---------------------------------------------------------------------------
// Actor
// ---------------------------------------------------------------------------

/// Where each normalization block sits, per layer index 0..3:
/// `Input` normalizes the input of affine `l`; `Output` normalizes its
/// output before the nonlinearity; `Off` has no blocks.
#[derive(Debug, Clone, Copy)]
struct ActorLayout {
    placement: BnPlacement,
    w: [usize; 3],
    b: [usize; 3],
    bn_gamma: [usize; 3],
    bn_beta: [usize; 3],
    bn_size: [usize; 3],
    param_len: usize,
    bn_mean: [usize; 3],
    bn_var: [usize; 3],
    stats_len: usize,
}

impl ActorLayout {
    fn new(placement: BnPlacement) -> Self {
        let bn_size = match placement {
            BnPlacement::Input => [DIMS[0], DIMS[1], DIMS[2]],
            BnPlacement::Output => [DIMS[1], DIMS[2], DIMS[3]],
            BnPlacement::Off => [0, 0, 0],
        };
        let (mut w, mut b) = ([0; 3], [0; 3]);
        let (mut gamma, mut beta) = ([0; 3], [0; 3]);
        let mut off = 0;
        for l in 0..3 {
            if placement == BnPlacement::Input {
                gamma[l] = off;
                off += bn_size[l];
                beta[l] = off;
                off += bn_size[l];
            }
            w[l] = off;
            off += DIMS[l + 1] * DIMS[l];
            b[l] = off;
            off += DIMS[l + 1];
            if placement == BnPlacement::Output {
                gamma[l] = off;
                off += bn_size[l];
                beta[l] = off;
                off += bn_size[l];
            }
        }
        let (mut mean, mut var) = ([0; 3], [0; 3]);
        let mut soff = 0;
        for l in 0..3 {
            mean[l] = soff;
            soff += bn_size[l];
            var[l] = soff;
            soff += bn_size[l];
        }
        ActorLayout {
            placement,
            w,
            b,
            bn_gamma: gamma,
            bn_beta: beta,
            bn_size,
            param_len: off,
            bn_mean: mean,
            bn_var: var,
            stats_len: soff,
        }
    }
}

/// Policy network: 3 → 40 → 40 → 1 with relu hidden activations and a tanh
/// output, plus batch-normalization scale/shift parameters and running
/// statistics per block (placement configurable).
#[derive(Debug, Clone)]
pub struct ActorNet {
    /// Trainable parameters (affine weights/biases and BN scale/shift).
    pub params: Vec<f64>,
    /// Non-trainable running statistics (mean, then variance, per block).
    pub stats: Vec<f64>,
    layout: ActorLayout,
}

/// Forward cache for one train-mode batch. Holds per-layer inputs and
/// pre-activations plus per-block normalized values and batch statistics.
#[derive(Debug, Clone, Default)]
pub struct ActorTrace {
    batch: usize,
    /// Input to affine `l` (post-normalization under `Input` placement).
    inputs: [Vec<f64>; 3],
    /// Activation-function input of layer `l` (post-normalization under
    /// `Output` placement).
    preacts: [Vec<f64>; 3],
    /// tanh outputs, one per row.
    pub out: Vec<f64>,
    bn_xhat: [Vec<f64>; 3],
    bn_inv_std: [Vec<f64>; 3],
    bn_mean: [Vec<f64>; 3],
    bn_var_unbiased: [Vec<f64>; 3],
}

impl ActorTrace {
    /// Normalized values of block `l` (testing/diagnostics).
    pub fn normalized(&self, l: usize) -> &[f64] {
        &self.bn_xhat[l]
    }

    pub fn batch_len(&self) -> usize {
        self.batch
    }

    /// Smallest |relu input| (layers 0 and 1; the tanh layer is smooth)
    /// recorded in this batch, ∞ when empty. See
    /// [`CriticTrace::min_abs_relu_preactivation`].
    pub fn min_abs_relu_preactivation(&self) -> f64 {
        self.preacts[0]
            .iter()
            .chain(self.preacts[1].iter())
            .fold(f64::INFINITY, |m, y| m.min(y.abs()))
    }
}

impl ActorNet {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, placement: BnPlacement) -> Self {
        let layout = ActorLayout::new(placement);
        let mut net = ActorNet {
            params: vec![0.0; layout.param_len],
            stats: vec![0.0; layout.stats_len],
            layout,
        };
        net.reset_bn();
        // Weight draw order is independent of placement: w1, w2, w3.
        for l in 0..3 {
            let bound = if l == 2 {
                FINAL_INIT
            } else {
                1.0 / (DIMS[l] as f64).sqrt()
            };
            let w = layout.w[l];
            uniform_init(rng, &mut net.params[w..w + DIMS[l + 1] * DIMS[l]], bound);
        }
        net
    }

    /// All affine weights and biases zero; BN at identity scale. Output is
    /// exactly tanh(0) = 0 everywhere.
    pub fn zeroed(placement: BnPlacement) -> Self {
        let layout = ActorLayout::new(placement);
        let mut net = ActorNet {
            params: vec![0.0; layout.param_len],
            stats: vec![0.0; layout.stats_len],
            layout,
        };
        net.reset_bn();
        net
    }

    fn reset_bn(&mut self) {
        for l in 0..3 {
            let n = self.layout.bn_size[l];
            for k in 0..n {
                self.params[self.layout.bn_gamma[l] + k] = 1.0;
                self.params[self.layout.bn_beta[l] + k] = 0.0;
                self.stats[self.layout.bn_mean[l] + k] = 0.0;
                self.stats[self.layout.bn_var[l] + k] = 1.0;
            }
        }
    }

    pub fn placement(&self) -> BnPlacement {
        self.layout.placement
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn stats_count(&self) -> usize {
        self.stats.len()
    }

    fn bn_eval(&self, l: usize, x: &mut [f64]) {
        let n = self.layout.bn_size[l];
        for f in 0..n {
            let m = self.stats[self.layout.bn_mean[l] + f];
            let v = self.stats[self.layout.bn_var[l] + f];
            let g = self.params[self.layout.bn_gamma[l] + f];
            let bet = self.params[self.layout.bn_beta[l] + f];
            for row in x.chunks_exact_mut(n) {
                row[f] = g * (row[f] - m) / (v + BN_EPS).sqrt() + bet;
            }
        }
    }

    /// Inference-mode action for one state: uses running statistics only,
    /// so the result is a pure function of (params, stats, input).
    pub fn forward_eval(&self, s: &[f64; 3]) -> f64 {
        let mut cur = s.to_vec();
        for l in 0..3 {
            if self.layout.placement == BnPlacement::Input {
                self.bn_eval(l, &mut cur);
            }
            let w = &self.params[self.layout.w[l]..self.layout.w[l] + DIMS[l + 1] * DIMS[l]];
            let b = &self.params[self.layout.b[l]..self.layout.b[l] + DIMS[l + 1]];
            let mut next = vec![0.0; DIMS[l + 1]];
            affine_batch(1, DIMS[l], DIMS[l + 1], w, b, &cur, &mut next);
            if self.layout.placement == BnPlacement::Output {
                self.bn_eval(l, &mut next);
            }
            if l < 2 {
                for v in next.iter_mut() {
                    *v = relu(*v);
                }
            } else {
                next[0] = next[0].tanh();
            }
            cur = next;
        }
        cur[0]
    }

    fn bn_train(&self, l: usize, x: &[f64], batch: usize, trace: &mut ActorTrace) -> Vec<f64> {
        let n = self.layout.bn_size[l];
        let bf = batch as f64;
        trace.bn_mean[l].resize(n, 0.0);
        trace.bn_var_unbiased[l].resize(n, 0.0);
        trace.bn_inv_std[l].resize(n, 0.0);
        trace.bn_xhat[l].resize(batch * n, 0.0);
        let mut out = vec![0.0; batch * n];
        for f in 0..n {
            let mut sum = 0.0;
            for j in 0..batch {
                sum += x[j * n + f];
            }
            let mean = sum / bf;
            let mut ss = 0.0;
            for j in 0..batch {
                let d = x[j * n + f] - mean;
                ss += d * d;
            }
            // Biased variance normalizes; the unbiased one feeds the
            // running estimate.
            let var_b = ss / bf;
            let inv_std = 1.0 / (var_b + BN_EPS).sqrt();
            trace.bn_mean[l][f] = mean;
            trace.bn_var_unbiased[l][f] = if batch > 1 { ss / (bf - 1.0) } else { 0.0 };
            trace.bn_inv_std[l][f] = inv_std;
            let g = self.params[self.layout.bn_gamma[l] + f];
            let bet = self.params[self.layout.bn_beta[l] + f];
            for j in 0..batch {
                let xh = (x[j * n + f] - mean) * inv_std;
                trace.bn_xhat[l][j * n + f] = xh;
                out[j * n + f] = g * xh + bet;
            }
        }
        out
    }

    /// Train-mode batch forward using batch statistics; pure (running
    /// statistics are untouched — call [`ActorNet::absorb_batch_stats`]
    /// afterwards to fold the cached batch statistics in).
    ///
    /// Returns the tanh outputs and fills the trace for `backward_dpg`.
    pub fn forward_train(&self, s: &[[f64; 3]], trace: &mut ActorTrace) -> Result<Vec<f64>> {
        let batch = s.len();
        if batch < 2 {
            return Err(Error::Shape(format!(
                "train-mode forward needs a batch of at least 2, got {batch}"
            )));
        }
        trace.batch = batch;
        let mut cur: Vec<f64> = s.iter().flatten().copied().collect();
        for l in 0..3 {
            if self.layout.placement == BnPlacement::Input {
                cur = self.bn_train(l, &cur, batch, trace);
            }
            trace.inputs[l].clear();
            trace.inputs[l].extend_from_slice(&cur);
            let w = &self.params[self.layout.w[l]..self.layout.w[l] + DIMS[l + 1] * DIMS[l]];
            let b = &self.params[self.layout.b[l]..self.layout.b[l] + DIMS[l + 1]];
            let mut next = vec![0.0; batch * DIMS[l + 1]];
            affine_batch(batch, DIMS[l], DIMS[l + 1], w, b, &cur, &mut next);
            if self.layout.placement == BnPlacement::Output {
                next = self.bn_train(l, &next, batch, trace);
            }
            trace.preacts[l].clear();
            trace.preacts[l].extend_from_slice(&next);
            if l < 2 {
                for v in next.iter_mut() {
                    *v = relu(*v);
                }
            }
            cur = next;
        }
        trace.out.clear();
        trace.out.extend(cur.iter().map(|y| y.tanh()));
        Ok(trace.out.clone())
    }

    /// Fold the batch statistics cached in `trace` into the running
    /// statistics: `running <- momentum*running + (1-momentum)*batch`.
    pub fn absorb_batch_stats(&mut self, trace: &ActorTrace) {
        for l in 0..3 {
            let n = self.layout.bn_size[l];
            for f in 0..n {
                let m = self.stats[self.layout.bn_mean[l] + f];
                self.stats[self.layout.bn_mean[l] + f] =
                    BN_MOMENTUM * m + (1.0 - BN_MOMENTUM) * trace.bn_mean[l][f];
                let v = self.stats[self.layout.bn_var[l] + f];
                self.stats[self.layout.bn_var[l] + f] =
                    BN_MOMENTUM * v + (1.0 - BN_MOMENTUM) * trace.bn_var_unbiased[l][f];
            }
        }
    }

    fn bn_backward(
        &self,
        l: usize,
        trace: &ActorTrace,
        d_out: &[f64],
        grads: &mut [f64],
        d_in: &mut [f64],
    ) {
        let n = self.layout.bn_size[l];
        let batch = trace.batch;
        let bf = batch as f64;
        for f in 0..n {
            let mut sum_dy = 0.0;
            let mut sum_dy_xh = 0.0;
            for j in 0..batch {
                let dy = d_out[j * n + f];
                sum_dy += dy;
                sum_dy_xh += dy * trace.bn_xhat[l][j * n + f];
            }
            grads[self.layout.bn_gamma[l] + f] += sum_dy_xh;
            grads[self.layout.bn_beta[l] + f] += sum_dy;
            let g = self.params[self.layout.bn_gamma[l] + f];
            let inv_std = trace.bn_inv_std[l][f];
            let k1 = sum_dy / bf;
            let k2 = sum_dy_xh / bf;
            for j in 0..batch {
                let xh = trace.bn_xhat[l][j * n + f];
                d_in[j * n + f] = g * inv_std * (d_out[j * n + f] - k1 - xh * k2);
            }
        }
    }

    /// Gradients of `(1/B) Σ_j coeff_j · mu(s_j)` with respect to every
    /// trainable parameter, with the exact cross-row coupling through batch
    /// statistics. `trace` must come from `forward_train` on the same batch.
    pub fn backward_dpg_into(&self, trace: &ActorTrace, coeffs: &[f64], grads: &mut Vec<f64>) {
        let batch = trace.batch;
        assert_eq!(coeffs.len(), batch, "coefficient batch mismatch");
        grads.clear();
        grads.resize(self.layout.param_len, 0.0);
        let inv_b = 1.0 / batch as f64;

        // Through the tanh.
        let mut d: Vec<f64> = (0..batch)
            .map(|j| coeffs[j] * inv_b * (1.0 - trace.out[j] * trace.out[j]))
            .collect();

        for l in (0..3).rev() {
            if l < 2 {
                // d currently holds dL/d(activation); apply relu mask from
                // the stored activation input.
                for (dv, y) in d.iter_mut().zip(trace.preacts[l].iter()) {
                    *dv *= relu_mask(*y);
                }
            }
            if self.layout.placement == BnPlacement::Output {
                let mut d_in = vec![0.0; d.len()];
                self.bn_backward(l, trace, &d, grads, &mut d_in);
                d = d_in;
            }
            // Affine backward.
            let (in_d, out_d) = (DIMS[l], DIMS[l + 1]);
            let w = &self.params[self.layout.w[l]..self.layout.w[l] + out_d * in_d];
            let x = &trace.inputs[l];
            let mut d_x = vec![0.0; batch * in_d];
            for j in 0..batch {
                let dr = &d[j * out_d..(j + 1) * out_d];
                let xr = &x[j * in_d..(j + 1) * in_d];
                let dxr = &mut d_x[j * in_d..(j + 1) * in_d];
                for o in 0..out_d {
                    let dv = dr[o];
                    if dv == 0.0 {
                        continue;
                    }
                    let wrow = &w[o * in_d..(o + 1) * in_d];
                    let gw = &mut grads
                        [self.layout.w[l] + o * in_d..self.layout.w[l] + (o + 1) * in_d];
                    for i in 0..in_d {
                        gw[i] += dv * xr[i];
                        dxr[i] += dv * wrow[i];
                    }
                    grads[self.layout.b[l] + o] += dv;
                }
            }
            d = d_x;
            if self.layout.placement == BnPlacement::Input {
                let mut d_in = vec![0.0; d.len()];
                self.bn_backward(l, trace, &d, grads, &mut d_in);
                d = d_in;
            }
        }
    }

    pub fn backward_dpg(&self, trace: &ActorTrace, coeffs: &[f64]) -> Vec<f64> {
        let mut g = Vec::new();
        self.backward_dpg_into(trace, coeffs, &mut g);
        g
    }
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

pub use crate::config::OptimizerKind;

/// Which way to move along the gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Descend,
    /// Gradient *ascent*, for update rules written with a plus sign.
    Ascend,
}

/// Per-network optimizer state. Plain mode applies `params -/+ alpha*grad`
/// literally; Adam mode keeps first/second moments with bias correction
/// (beta = 0.9/0.999, eps = 1e-8).
#[derive(Debug, Clone)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub alpha: f64,
    pub step_count: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl Optimizer {
    pub fn new(kind: OptimizerKind, alpha: f64, n_params: usize) -> Self {
        Optimizer {
            kind,
            alpha,
            step_count: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], dir: Direction) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "optimizer shape mismatch: {} params, {} grads, {} moments",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        self.step_count += 1;
        let sign = match dir {
            Direction::Descend => 1.0,
            Direction::Ascend => -1.0,
        };
        match self.kind {
            OptimizerKind::Plain => {
                for (p, g) in params.iter_mut().zip(grads.iter()) {
                    *p -= self.alpha * sign * g;
                }
            }
            OptimizerKind::Adam => {
                let t = self.step_count as i32;
                let bc1 = 1.0 - ADAM_BETA1.powi(t);
                let bc2 = 1.0 - ADAM_BETA2.powi(t);
                for i in 0..params.len() {
                    let g = sign * grads[i];
                    self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * g;
                    self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * g * g;
                    let mh = self.m[i] / bc1;
                    let vh = self.v[i] / bc2;
                    params[i] -= self.alpha * mh / (vh.sqrt() + ADAM_EPS);
                }
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Binary blob helpers (checkpoint plumbing)
// ---------------------------------------------------------------------------

pub fn blob_put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub fn blob_get_u64(bytes: &[u8], pos: &mut usize) -> Result<u64> {
    let end = *pos + 8;
    if end > bytes.len() {
        return Err(Error::Checkpoint("truncated blob (u64)".into()));
    }
    let v = u64::from_le_bytes(bytes[*pos..end].try_into().unwrap());
    *pos = end;
    Ok(v)
}

pub fn blob_put_f64s(out: &mut Vec<u8>, v: &[f64]) {
    blob_put_u64(out, v.len() as u64);
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

pub fn blob_get_f64s(bytes: &[u8], pos: &mut usize) -> Result<Vec<f64>> {
    let n = blob_get_u64(bytes, pos)? as usize;
    let end = *pos + 8 * n;
    if end > bytes.len() {
        return Err(Error::Checkpoint("truncated blob (f64 array)".into()));
    }
    let mut v = Vec::with_capacity(n);
    for k in 0..n {
        let off = *pos + 8 * k;
        v.push(f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap()));
    }
    *pos = end;
    Ok(v)
}

impl CriticNet {
    pub fn serialize_into(&self, out: &mut Vec<u8>) {
        blob_put_f64s(out, &self.params);
    }

    pub fn deserialize(bytes: &[u8], pos: &mut usize) -> Result<Self> {
        let params = blob_get_f64s(bytes, pos)?;
        if params.len() != CRITIC_PARAMS {
            return Err(Error::Checkpoint(format!(
                "critic blob has {} parameters, architecture needs {}",
                params.len(),
                CRITIC_PARAMS
            )));
        }
        Ok(CriticNet { params })
    }
}

impl ActorNet {
    pub fn serialize_into(&self, out: &mut Vec<u8>) {
        blob_put_f64s(out, &self.params);
        blob_put_f64s(out, &self.stats);
    }

    pub fn deserialize(placement: BnPlacement, bytes: &[u8], pos: &mut usize) -> Result<Self> {
        let layout = ActorLayout::new(placement);
        let params = blob_get_f64s(bytes, pos)?;
        let stats = blob_get_f64s(bytes, pos)?;
        if params.len() != layout.param_len || stats.len() != layout.stats_len {
            return Err(Error::Checkpoint(format!(
                "actor blob sizes {}/{} do not match architecture {}/{}",
                params.len(),
                stats.len(),
                layout.param_len,
                layout.stats_len
            )));
        }
        Ok(ActorNet {
            params,
            stats,
            layout,
        })
    }
}

impl Optimizer {
    pub fn serialize_into(&self, out: &mut Vec<u8>) {
        out.push(match self.kind {
            OptimizerKind::Plain => 0,
            OptimizerKind::Adam => 1,
        });
        out.extend_from_slice(&self.alpha.to_le_bytes());
        blob_put_u64(out, self.step_count);
        blob_put_f64s(out, &self.m);
        blob_put_f64s(out, &self.v);
    }

    pub fn deserialize(bytes: &[u8], pos: &mut usize) -> Result<Self> {
        if *pos + 9 > bytes.len() {
            return Err(Error::Checkpoint("truncated optimizer blob".into()));
        }
        let kind = match bytes[*pos] {
            0 => OptimizerKind::Plain,
            1 => OptimizerKind::Adam,
            k => {
                return Err(Error::Checkpoint(format!("unknown optimizer tag {k}")));
            }
        };
        *pos += 1;
        let alpha = f64::from_le_bytes(bytes[*pos..*pos + 8].try_into().unwrap());
        *pos += 8;
        let step_count = blob_get_u64(bytes, pos)?;
        let m = blob_get_f64s(bytes, pos)?;
        let v = blob_get_f64s(bytes, pos)?;
        if m.len() != v.len() {
            return Err(Error::Checkpoint("optimizer moment size mismatch".into()));
        }
        Ok(Optimizer {
            kind,
            alpha,
            step_count,
            m,
            v,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn rng(seed: u64) -> ChaCha12Rng {
        ChaCha12Rng::seed_from_u64(seed)
    }

    fn random_states<R: Rng>(r: &mut R, n: usize) -> Vec<[f64; 3]> {
        (0..n)
            .map(|_| {
                [
                    r.random_range(-1.0..1.0),
                    r.random_range(-1.0..1.0),
                    r.random_range(-1.0..1.0),
                ]
            })
            .collect()
    }

    #[test]
    fn parameter_counts() {
        let c = CriticNet::new(&mut rng(0));
        assert_eq!(c.param_count(), 1881);
        let a = ActorNet::new(&mut rng(0), BnPlacement::Input);
        assert_eq!(a.param_count(), 2007);
        assert_eq!(a.stats_count(), 166);
        let a = ActorNet::new(&mut rng(0), BnPlacement::Output);
        assert_eq!(a.param_count(), 2003);
        assert_eq!(a.stats_count(), 162);
        let a = ActorNet::new(&mut rng(0), BnPlacement::Off);
        assert_eq!(a.param_count(), 1841);
        assert_eq!(a.stats_count(), 0);
    }

    #[test]
    fn seeded_init_is_reproducible() {
        let a1 = ActorNet::new(&mut rng(7), BnPlacement::Input);
        let a2 = ActorNet::new(&mut rng(7), BnPlacement::Input);
        assert_eq!(a1.params, a2.params);
        let c1 = CriticNet::new(&mut rng(7));
        let c2 = CriticNet::new(&mut rng(7));
        assert_eq!(c1.params, c2.params);
        let a3 = ActorNet::new(&mut rng(8), BnPlacement::Input);
        assert_ne!(a1.params, a3.params);
    }

    #[test]
    fn init_ranges_and_zero_biases() {
        let c = CriticNet::new(&mut rng(3));
        let b1 = 1.0 / (STATE_DIM as f64).sqrt();
        assert!(c.params[C_W1..C_B1].iter().all(|w| w.abs() <= b1));
        assert!(c.params[C_B1..C_W2].iter().all(|&b| b == 0.0));
        assert!(c.params[C_W3..C_B3].iter().all(|w| w.abs() <= 3e-3));
        assert_eq!(c.params[C_B3], 0.0);
    }

    #[test]
    fn zero_nets_output_zero() {
        let a = ActorNet::zeroed(BnPlacement::Input);
        assert_eq!(a.forward_eval(&[0.4, -2.0, 13.0]), 0.0);
        let c = CriticNet::zeroed();
        assert_eq!(c.forward_one(&[1.0, 2.0, 3.0], -0.5), 0.0);
        let mut tr = ActorTrace::default();
        let out = a
            .forward_train(&[[1.0, 0.0, 0.0], [0.0, 2.0, 0.0]], &mut tr)
            .unwrap();
        assert_eq!(out, vec![0.0, 0.0]);
    }

    #[test]
    fn critic_hand_built_single_path() {
        // Only one unit per layer active, all weights on the path = 1:
        // s=(1,0,0), u=1 → h1=relu(1)=1, h2=relu(1+1)=2, q=2.
        let mut c = CriticNet::zeroed();
        c.params[C_W1] = 1.0; // w1[0][0]
        c.params[C_W2] = 1.0; // w2[0][0] (hidden 0)
        c.params[C_W2 + HIDDEN] = 1.0; // w2[0][40] (action column)
        c.params[C_W3] = 1.0; // w3[0]
        assert_eq!(c.forward_one(&[1.0, 0.0, 0.0], 1.0), 2.0);
        // Hand chain for the action derivative: w3[0]*relu'(2)*w2[0][40].
        assert_eq!(c.grad_action(&[1.0, 0.0, 0.0], 1.0), 1.0);
    }

    #[test]
    fn doubling_final_layer_doubles_q() {
        let mut c = CriticNet::new(&mut rng(4));
        let s = [0.3, -0.7, 0.2];
        let q1 = c.forward_one(&s, 0.5);
        for w in &mut c.params[C_W3..=C_B3] {
            *w *= 2.0;
        }
        let q2 = c.forward_one(&s, 0.5);
        assert!((q2 - 2.0 * q1).abs() < 1e-15 * (1.0 + q1.abs()));
    }

    #[test]
    fn batch_and_single_forward_agree() {
        let c = CriticNet::new(&mut rng(5));
        let mut r = rng(6);
        let s = random_states(&mut r, 7);
        let u: Vec<f64> = (0..7).map(|_| r.random_range(-1.0..1.0)).collect();
        let mut tr = CriticTrace::default();
        let q = c.forward_batch(&s, &u, &mut tr);
        for j in 0..7 {
            assert_eq!(q[j], c.forward_one(&s[j], u[j]));
        }
    }

    #[test]
    fn actor_output_strictly_inside_unit_interval() {
        for placement in [BnPlacement::Input, BnPlacement::Output, BnPlacement::Off] {
            let a = ActorNet::new(&mut rng(9), placement);
            let mut r = rng(10);
            for s in random_states(&mut r, 50) {
                let big = [s[0] * 100.0, s[1] * 100.0, s[2] * 100.0];
                let out = a.forward_eval(&big);
                assert!(out > -1.0 && out < 1.0);
            }
        }
    }

    #[test]
    fn eval_mode_is_batch_independent() {
        // Same state evaluated alone or alongside different rows gives the
        // same action: running stats only.
        let a = ActorNet::new(&mut rng(11), BnPlacement::Input);
        let s = [0.2, -0.1, 0.5];
        let alone = a.forward_eval(&s);
        let with_rows = a.forward_eval(&[9.0, 9.0, 9.0]); // unrelated state
        let again = a.forward_eval(&s);
        assert_eq!(alone, again);
        let _ = with_rows;
    }

    #[test]
    fn train_mode_rejects_batch_of_one() {
        let a = ActorNet::new(&mut rng(12), BnPlacement::Input);
        let mut tr = ActorTrace::default();
        let err = a.forward_train(&[[0.0, 0.0, 0.0]], &mut tr).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
    }

    #[test]
    fn train_mode_normalizes_each_block() {
        let a = ActorNet::new(&mut rng(13), BnPlacement::Input);
        let mut r = rng(14);
        let s: Vec<[f64; 3]> = (0..64)
            .map(|_| {
                [
                    5.0 + r.random_range(-1.0..1.0),
                    -3.0 + r.random_range(-0.5..0.5),
                    r.random_range(-2.0..2.0),
                ]
            })
            .collect();
        let mut tr = ActorTrace::default();
        a.forward_train(&s, &mut tr).unwrap();
        for l in 0..3 {
            let n = [3, 40, 40][l];
            let xh = tr.normalized(l);
            for f in 0..n {
                let vals: Vec<f64> = (0..64).map(|j| xh[j * n + f]).collect();
                let mean: f64 = vals.iter().sum::<f64>() / 64.0;
                let var: f64 = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 64.0;
                assert!(mean.abs() <= 1e-6, "block {l} feature {f} mean {mean:e}");
                // x̂ has variance v/(v+eps) = 1 - eps·inv_std² exactly.
                let expect = 1.0 - BN_EPS * tr.bn_inv_std[l][f] * tr.bn_inv_std[l][f];
                assert!(
                    (var - expect).abs() <= 1e-9,
                    "block {l} feature {f} var {var} expected {expect}"
                );
            }
        }
    }

    #[test]
    fn running_stats_converge_to_population_values() {
        let mut a = ActorNet::new(&mut rng(15), BnPlacement::Input);
        let mu = [2.0, -1.0, 5.0];
        let sd = 0.1;
        let mut r = rng(16);
        let normal = rand_distr::Normal::new(0.0, sd).unwrap();
        let mut tr = ActorTrace::default();
        let batch = 512;
        let mut s = vec![[0.0; 3]; batch];
        for _ in 0..10_000 {
            for row in s.iter_mut() {
                for (k, cell) in row.iter_mut().enumerate() {
                    *cell = mu[k] + rand_distr::Distribution::sample(&normal, &mut r);
                }
            }
            a.forward_train(&s, &mut tr).unwrap();
            a.absorb_batch_stats(&tr);
        }
        for f in 0..3 {
            let rm = a.stats[f];
            let rv = a.stats[3 + f];
            assert!(
                (rm - mu[f]).abs() <= 0.01 * mu[f].abs().max(sd),
                "running mean {rm} vs {mu:?}"
            );
            assert!(
                (rv - sd * sd).abs() <= 0.01 * sd * sd,
                "running var {rv} vs {}",
                sd * sd
            );
        }
    }

    /// Max pre-activation magnitude below which we resample, keeping finite
    /// differences away from relu kinks.
    const KINK_MARGIN: f64 = 1e-4;

    fn critic_batch_away_from_kinks(
        c: &CriticNet,
        r: &mut ChaCha12Rng,
        n: usize,
    ) -> (Vec<[f64; 3]>, Vec<f64>) {
        loop {
            let s = random_states(r, n);
            let u: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
            let mut tr = CriticTrace::default();
            c.forward_batch(&s, &u, &mut tr);
            let near = tr
                .y1
                .iter()
                .chain(tr.y2.iter())
                .any(|y| y.abs() < KINK_MARGIN);
            if !near {
                return (s, u);
            }
        }
    }

    #[test]
    fn critic_gradients_match_finite_differences() {
        let mut r = rng(17);
        for trial in 0..3 {
            let mut c = CriticNet::new(&mut r);
            // Lift hidden weights so activations are well away from zero.
            for w in c.params[C_W3..C_B3].iter_mut() {
                *w *= 50.0;
            }
            let (s, u) = critic_batch_away_from_kinks(&c, &mut r, 5);
            let coeffs: Vec<f64> = (0..5).map(|_| r.random_range(-2.0..2.0)).collect();
            let mut tr = CriticTrace::default();
            c.forward_batch(&s, &u, &mut tr);
            let grads = c.backward(&tr, &coeffs);

            let loss = |net: &CriticNet| -> f64 {
                let mut t = CriticTrace::default();
                let q = net.forward_batch(&s, &u, &mut t);
                q.iter().zip(coeffs.iter()).map(|(qi, ci)| qi * ci).sum::<f64>() / 5.0
            };
            let h = 1e-5;
            for k in (0..CRITIC_PARAMS).step_by(13) {
                let mut cp = c.clone();
                cp.params[k] += h;
                let up = loss(&cp);
                cp.params[k] -= 2.0 * h;
                let dn = loss(&cp);
                let fd = (up - dn) / (2.0 * h);
                let an = grads[k];
                assert!(
                    (fd - an).abs() <= 1e-4 * an.abs().max(fd.abs()) + 1e-10,
                    "trial {trial} param {k}: fd {fd:e} analytic {an:e}"
                );
            }
        }
    }

    #[test]
    fn zero_td_errors_zero_gradients() {
        let c = CriticNet::new(&mut rng(18));
        let mut r = rng(19);
        let s = random_states(&mut r, 4);
        let u = vec![0.1, -0.2, 0.3, 0.0];
        let mut tr = CriticTrace::default();
        c.forward_batch(&s, &u, &mut tr);
        let grads = c.backward(&tr, &[0.0; 4]);
        assert!(grads.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn batch_gradient_is_mean_of_row_gradients() {
        let c = CriticNet::new(&mut rng(20));
        let mut r = rng(21);
        let s = random_states(&mut r, 6);
        let u: Vec<f64> = (0..6).map(|_| r.random_range(-1.0..1.0)).collect();
        let coeffs: Vec<f64> = (0..6).map(|_| r.random_range(-1.0..1.0)).collect();
        let mut tr = CriticTrace::default();
        c.forward_batch(&s, &u, &mut tr);
        let full = c.backward(&tr, &coeffs);

        let mut acc = vec![0.0; CRITIC_PARAMS];
        for j in 0..6 {
            let mut t = CriticTrace::default();
            c.forward_batch(&s[j..j + 1], &u[j..j + 1], &mut t);
            let g = c.backward(&t, &coeffs[j..j + 1]);
            for (a, v) in acc.iter_mut().zip(g.iter()) {
                *a += v / 6.0;
            }
        }
        for (f, a) in full.iter().zip(acc.iter()) {
            assert!((f - a).abs() <= 1e-12 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn grad_action_matches_finite_difference() {
        let mut r = rng(22);
        for _ in 0..5 {
            let c = CriticNet::new(&mut r);
            let s = [
                r.random_range(-1.0..1.0),
                r.random_range(-1.0..1.0),
                r.random_range(-1.0..1.0),
            ];
            let u: f64 = r.random_range(-0.9..0.9);
            let h = 1e-6;
            let fd = (c.forward_one(&s, u + h) - c.forward_one(&s, u - h)) / (2.0 * h);
            let an = c.grad_action(&s, u);
            assert!(
                (fd - an).abs() <= 1e-6 * an.abs().max(fd.abs()) + 1e-12,
                "fd {fd:e} analytic {an:e}"
            );
        }
    }

    #[test]
    fn actor_dpg_gradients_match_finite_differences_all_placements() {
        for placement in [BnPlacement::Input, BnPlacement::Output, BnPlacement::Off] {
            let mut r = rng(23);
            let a = ActorNet::new(&mut r, placement);
            let s = random_states(&mut r, 5);
            let coeffs: Vec<f64> = (0..5).map(|_| r.random_range(-2.0..2.0)).collect();
            let mut tr = ActorTrace::default();
            a.forward_train(&s, &mut tr).unwrap();
            let grads = a.backward_dpg(&tr, &coeffs);

            let loss = |net: &ActorNet| -> f64 {
                let mut t = ActorTrace::default();
                let out = net.forward_train(&s, &mut t).unwrap();
                out.iter().zip(coeffs.iter()).map(|(o, c)| o * c).sum::<f64>() / 5.0
            };
            let h = 1e-5;
            for k in (0..a.param_count()).step_by(11) {
                let mut ap = a.clone();
                ap.params[k] += h;
                let up = loss(&ap);
                ap.params[k] -= 2.0 * h;
                let dn = loss(&ap);
                let fd = (up - dn) / (2.0 * h);
                let an = grads[k];
                assert!(
                    (fd - an).abs() <= 1e-4 * an.abs().max(fd.abs()) + 1e-9,
                    "{placement:?} param {k}: fd {fd:e} analytic {an:e}"
                );
            }
        }
    }

    #[test]
    fn zero_dq_du_zero_actor_gradients() {
        let a = ActorNet::new(&mut rng(24), BnPlacement::Input);
        let mut r = rng(25);
        let s = random_states(&mut r, 3);
        let mut tr = ActorTrace::default();
        a.forward_train(&s, &mut tr).unwrap();
        let g = a.backward_dpg(&tr, &[0.0; 3]);
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bn_off_matches_plain_mlp_backprop() {
        // Independent plain-MLP implementation of the same loss.
        let a = ActorNet::new(&mut rng(26), BnPlacement::Off);
        let mut r = rng(27);
        let s = random_states(&mut r, 4);
        let coeffs: Vec<f64> = (0..4).map(|_| r.random_range(-1.0..1.0)).collect();
        let mut tr = ActorTrace::default();
        a.forward_train(&s, &mut tr).unwrap();
        let got = a.backward_dpg(&tr, &coeffs);

        let layout = ActorLayout::new(BnPlacement::Off);
        let mut expect = vec![0.0; a.param_count()];
        for (j, sj) in s.iter().enumerate() {
            // Forward.
            let mut x: Vec<Vec<f64>> = vec![sj.to_vec()];
            let mut pre: Vec<Vec<f64>> = Vec::new();
            for l in 0..3 {
                let (in_d, out_d) = (DIMS[l], DIMS[l + 1]);
                let w = &a.params[layout.w[l]..layout.w[l] + out_d * in_d];
                let b = &a.params[layout.b[l]..layout.b[l] + out_d];
                let mut y = vec![0.0; out_d];
                for o in 0..out_d {
                    y[o] = b[o]
                        + (0..in_d).map(|i| w[o * in_d + i] * x[l][i]).sum::<f64>();
                }
                pre.push(y.clone());
                let act: Vec<f64> = if l < 2 {
                    y.iter().map(|v| relu(*v)).collect()
                } else {
                    vec![y[0].tanh()]
                };
                x.push(act);
            }
            // Backward for coeff_j * mu_j / B.
            let mut d = vec![coeffs[j] / 4.0 * (1.0 - x[3][0] * x[3][0])];
            for l in (0..3).rev() {
                let (in_d, out_d) = (DIMS[l], DIMS[l + 1]);
                let w = &a.params[layout.w[l]..layout.w[l] + out_d * in_d];
                let mut dx = vec![0.0; in_d];
                for o in 0..out_d {
                    expect[layout.b[l] + o] += d[o];
                    for i in 0..in_d {
                        expect[layout.w[l] + o * in_d + i] += d[o] * x[l][i];
                        dx[i] += d[o] * w[o * in_d + i];
                    }
                }
                if l > 0 {
                    for i in 0..in_d {
                        dx[i] *= relu_mask(pre[l - 1][i]);
                    }
                }
                d = dx;
            }
        }
        for (g, e) in got.iter().zip(expect.iter()) {
            assert!((g - e).abs() <= 1e-12 * (1.0 + e.abs()), "{g} vs {e}");
        }
    }

    #[test]
    fn optimizer_plain_and_adam_examples() {
        // Plain descend: 0 - 0.1*1 = -0.1.
        let mut opt = Optimizer::new(OptimizerKind::Plain, 0.1, 1);
        let mut p = [0.0];
        opt.step(&mut p, &[1.0], Direction::Descend).unwrap();
        assert!((p[0] + 0.1).abs() < 1e-15);
        // Plain ascend moves the other way.
        let mut opt = Optimizer::new(OptimizerKind::Plain, 0.1, 1);
        let mut p = [0.0];
        opt.step(&mut p, &[1.0], Direction::Ascend).unwrap();
        assert!((p[0] - 0.1).abs() < 1e-15);
        // Zero gradient: unchanged, any mode.
        let mut opt = Optimizer::new(OptimizerKind::Adam, 0.1, 2);
        let mut p = [1.5, -2.5];
        opt.step(&mut p, &[0.0, 0.0], Direction::Descend).unwrap();
        assert_eq!(p, [1.5, -2.5]);
        // Adam first step has magnitude ~alpha regardless of |g|.
        for g in [1e-4, 1.0, 1e4] {
            let mut opt = Optimizer::new(OptimizerKind::Adam, 0.01, 1);
            let mut p = [0.0];
            opt.step(&mut p, &[g], Direction::Descend).unwrap();
            assert!(
                (p[0] + 0.01).abs() < 1e-5,
                "grad {g}: step {p:?}"
            );
        }
    }

    #[test]
    fn optimizer_shape_mismatch_rejected() {
        let mut opt = Optimizer::new(OptimizerKind::Plain, 0.1, 3);
        let mut p = [0.0; 2];
        assert!(matches!(
            opt.step(&mut p, &[1.0, 1.0], Direction::Descend).unwrap_err(),
            Error::Shape(_)
        ));
    }

    #[test]
    fn blobs_round_trip_bit_exact() {
        let mut r = rng(30);
        let a = ActorNet::new(&mut r, BnPlacement::Input);
        let c = CriticNet::new(&mut r);
        let mut opt = Optimizer::new(OptimizerKind::Adam, 1e-3, c.param_count());
        let mut cp = c.clone();
        let g: Vec<f64> = (0..c.param_count()).map(|_| r.random_range(-1.0..1.0)).collect();
        opt.step(&mut cp.params, &g, Direction::Ascend).unwrap();

        let mut blob = Vec::new();
        a.serialize_into(&mut blob);
        cp.serialize_into(&mut blob);
        opt.serialize_into(&mut blob);

        let mut pos = 0;
        let a2 = ActorNet::deserialize(BnPlacement::Input, &blob, &mut pos).unwrap();
        let c2 = CriticNet::deserialize(&blob, &mut pos).unwrap();
        let o2 = Optimizer::deserialize(&blob, &mut pos).unwrap();
        assert_eq!(pos, blob.len());
        assert_eq!(a2.params, a.params);
        assert_eq!(a2.stats, a.stats);
        assert_eq!(c2.params, cp.params);
        assert_eq!(o2.m, opt.m);
        assert_eq!(o2.v, opt.v);
        assert_eq!(o2.step_count, opt.step_count);

        // Architecture mismatch: actor blob read as critic.
        let mut blob2 = Vec::new();
        a.serialize_into(&mut blob2);
        let mut pos2 = 0;
        assert!(matches!(
            CriticNet::deserialize(&blob2, &mut pos2).unwrap_err(),
            Error::Checkpoint(_)
        ));
    }
}
