//! Off-policy actor-critic learners on the cost-minimization convention:
//! the critic estimates discounted cost-to-go, so the "pessimistic" member
//! of a critic pair is the one reporting the *larger* value, and the actor
//! descends its policy gradient.
//!
//! One [`Agent`] owns its networks, optimizers and replay buffer; RNGs are
//! passed in by the caller so determinism is entirely the caller's seeding
//! discipline. Two algorithms share one update path: DDPG runs a single
//! critic with no target smoothing and an actor update every iteration,
//! TD3 runs twin critics, smoothed target actions and a delayed actor.

use crate::config::{BnPlacement, Config};
use crate::env::MaglevEnv;
use crate::nn::{
    blob_get_u64, blob_put_u64, ActorNet, ActorTrace, CriticNet, CriticTrace, Direction,
    Optimizer,
};
use crate::{Error, Result};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use std::path::Path;

/// One replay experience. `u` is the normalized action in [−1, 1]; `done`
/// is set only for genuine failures (bound violations), never for horizon
/// expiry, so value bootstrapping continues across episode boundaries.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub s: [f64; 3],
    pub u: f64,
    pub c: f64,
    pub s2: [f64; 3],
    pub done: bool,
}

/// Fixed-capacity ring. Once full, the oldest entry is overwritten.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    data: Vec<Transition>,
    capacity: usize,
    cursor: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Parameter("replay capacity must be positive".into()));
        }
        Ok(ReplayBuffer {
            data: Vec::new(),
            capacity,
            cursor: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, t: Transition) {
        if self.data.len() < self.capacity {
            self.data.push(t);
        } else {
            self.data[self.cursor] = t;
            self.cursor = (self.cursor + 1) % self.capacity;
        }
    }

    pub fn get(&self, i: usize) -> &Transition {
        &self.data[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.data.iter()
    }

    /// `n` indices drawn uniformly with replacement over current contents.
    pub fn sample_indices<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Result<Vec<usize>> {
        if self.data.is_empty() {
            return Err(Error::Shape("cannot sample from an empty buffer".into()));
        }
        Ok((0..n).map(|_| rng.random_range(0..self.data.len())).collect())
    }
}

/// Pre-fill the buffer from logged transitions, at most `max_count` of
/// them. Rows with non-finite fields or gaps outside the physical range
/// are skipped; costs are recomputed from (s, u) with the environment's
/// own cost function, so seeded and generated experiences share one cost
/// scale exactly. Returns the number inserted.
pub fn seed_from_dataset(
    buffer: &mut ReplayBuffer,
    env: &MaglevEnv,
    transitions: &[Transition],
    max_count: usize,
) -> usize {
    let mut inserted = 0;
    for t in transitions {
        if inserted >= max_count {
            break;
        }
        let finite = t.s.iter().chain(t.s2.iter()).all(|v| v.is_finite())
            && t.u.is_finite()
            && (-1.0..=1.0).contains(&t.u);
        let gap_ok = |s: &[f64; 3]| {
            let gap = env.plant.gap(s);
            gap >= env.plant.gap_min && gap <= env.plant.gap_max
        };
        if !finite || !gap_ok(&t.s) || !gap_ok(&t.s2) {
            continue;
        }
        let cost = env.cost(&t.s, env.scale_action(t.u));
        buffer.push(Transition { c: cost, ..*t });
        inserted += 1;
    }
    inserted
}

/// Elementwise `target <- tau*online + (1-tau)*target`.
pub fn soft_update(target: &mut [f64], online: &[f64], tau: f64) -> Result<()> {
    if target.len() != online.len() {
        return Err(Error::Shape(format!(
            "soft update shape mismatch: {} vs {}",
            target.len(),
            online.len()
        )));
    }
    for (t, o) in target.iter_mut().zip(online.iter()) {
        *t = tau * o + (1.0 - tau) * *t;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AgentKind {
    Ddpg,
    Td3,
}

impl AgentKind {
    pub fn name(self) -> &'static str {
        match self {
            AgentKind::Ddpg => "ddpg",
            AgentKind::Td3 => "td3",
        }
    }
}

/// Per-update logging payload.
#[derive(Debug, Clone, Copy)]
pub struct UpdateDiagnostics {
    /// Mean |TD error| of the first critic over the minibatch.
    pub mean_abs_td: f64,
    /// Mean first-critic value over the minibatch.
    pub mean_q: f64,
    /// L2 norm of the first critic's parameter gradient.
    pub critic_grad_norm: f64,
    /// L2 norm of the actor gradient; `None` on delayed iterations.
    pub actor_grad_norm: Option<f64>,
}

#[derive(Debug, Clone, Default)]
struct UpdateScratch {
    s: Vec<[f64; 3]>,
    u: Vec<f64>,
    y: Vec<f64>,
    delta: Vec<f64>,
    coeffs: Vec<f64>,
    ctrace: CriticTrace,
    atrace: ActorTrace,
    grads: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Agent {
    pub kind: AgentKind,
    pub actor: ActorNet,
    pub actor_target: ActorNet,
    pub critics: Vec<CriticNet>,
    pub critic_targets: Vec<CriticNet>,
    pub opt_actor: Optimizer,
    pub opt_critics: Vec<Optimizer>,
    pub buffer: ReplayBuffer,
    pub update_count: u64,
    /// Exploratory interaction steps taken so far (drives warmup).
    pub env_steps: u64,
    gamma: f64,
    tau: f64,
    batch_size: usize,
    warmup_steps: u64,
    explore_sigma: f64,
    smooth_sigma: f64,
    smooth_clip: f64,
    policy_delay: u64,
    scratch: UpdateScratch,
}

impl Agent {
    /// Initialization draw order is fixed: actor first, then critics in
    /// index order; targets start as exact copies of their online nets.
    pub fn new<R: Rng + ?Sized>(cfg: &Config, kind: AgentKind, rng: &mut R) -> Result<Self> {
        if !(cfg.tau > 0.0 && cfg.tau <= 1.0) {
            return Err(Error::Parameter(format!(
                "tau must lie in (0, 1], got {}",
                cfg.tau
            )));
        }
        if cfg.smooth_clip <= 0.0 {
            return Err(Error::Parameter(format!(
                "smoothing clip bound must be positive, got {}",
                cfg.smooth_clip
            )));
        }
        if cfg.policy_delay < 1 {
            return Err(Error::Parameter("policy delay must be at least 1".into()));
        }
        if cfg.buffer_capacity < cfg.batch_size {
            return Err(Error::Parameter(format!(
                "buffer capacity {} is smaller than the batch size {}",
                cfg.buffer_capacity, cfg.batch_size
            )));
        }
        let n_critics = match kind {
            AgentKind::Ddpg => 1,
            AgentKind::Td3 => 2,
        };
        let actor = ActorNet::new(rng, cfg.bn_placement);
        let critics: Vec<CriticNet> = (0..n_critics).map(|_| CriticNet::new(rng)).collect();
        let opt_critics = critics
            .iter()
            .map(|c| Optimizer::new(cfg.optimizer, cfg.lr_critic, c.param_count()))
            .collect();
        Ok(Agent {
            kind,
            actor_target: actor.clone(),
            opt_actor: Optimizer::new(cfg.optimizer, cfg.lr_actor, actor.param_count()),
            actor,
            critic_targets: critics.clone(),
            critics,
            opt_critics,
            buffer: ReplayBuffer::new(cfg.buffer_capacity)?,
            update_count: 0,
            env_steps: 0,
            gamma: cfg.gamma,
            tau: cfg.tau,
            batch_size: cfg.batch_size,
            warmup_steps: cfg.warmup_steps,
            explore_sigma: cfg.explore_sigma,
            smooth_sigma: cfg.smooth_sigma,
            smooth_clip: cfg.smooth_clip,
            // Alg. 1 has no delayed updates: DDPG always refreshes the
            // actor and targets every iteration.
            policy_delay: match kind {
                AgentKind::Ddpg => 1,
                AgentKind::Td3 => cfg.policy_delay,
            },
            scratch: UpdateScratch::default(),
        })
    }

    pub fn in_warmup(&self) -> bool {
        self.env_steps < self.warmup_steps
    }

    /// Deterministic policy action (no noise, no counter side effects).
    pub fn eval_action(&self, s: &[f64; 3]) -> f64 {
        self.actor.forward_eval(s)
    }

    /// Behavior action. With `explore`, warmup steps draw Uniform[−1, 1];
    /// afterwards Gaussian exploration noise is added and the result is
    /// clipped. A zero noise scale draws nothing from the RNG, so noisy
    /// and noise-free runs consume identical RNG streams otherwise.
    pub fn select_action<R: Rng + ?Sized>(&mut self, rng: &mut R, s: &[f64; 3], explore: bool) -> f64 {
        if !explore {
            return self.eval_action(s);
        }
        let a = if self.in_warmup() {
            rng.random_range(-1.0..=1.0)
        } else {
            let mut a = self.eval_action(s);
            if self.explore_sigma > 0.0 {
                let noise = Normal::new(0.0, self.explore_sigma).unwrap().sample(rng);
                a = (a + noise).clamp(-1.0, 1.0);
            }
            a
        };
        self.env_steps += 1;
        a
    }

    pub fn remember(&mut self, t: Transition) {
        self.buffer.push(t);
    }

    /// Regression target for one row: bootstrapped cost-to-go, taking the
    /// worst (largest) of the target critics, with TD3's smoothed target
    /// action. Terminal rows never bootstrap.
    fn target_value<R: Rng + ?Sized>(&self, rng: &mut R, c: f64, s2: &[f64; 3], done: bool) -> f64 {
        if done {
            return c;
        }
        let mut a2 = self.actor_target.forward_eval(s2);
        if self.kind == AgentKind::Td3 && self.smooth_sigma > 0.0 {
            let eps = Normal::new(0.0, self.smooth_sigma)
                .unwrap()
                .sample(rng)
                .clamp(-self.smooth_clip, self.smooth_clip);
            a2 = (a2 + eps).clamp(-1.0, 1.0);
        }
        let q_worst = self
            .critic_targets
            .iter()
            .map(|ct| ct.forward_one(s2, a2))
            .fold(f64::NEG_INFINITY, f64::max);
        c + self.gamma * q_worst
    }

    /// One learning iteration: sample a minibatch, regress every critic on
    /// the shared target, and on non-delayed iterations step the actor
    /// along the first critic's action gradient and recenter all targets.
    /// Returns `None` without touching anything while the buffer is still
    /// smaller than one batch.
    pub fn update<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<Option<UpdateDiagnostics>> {
        let b = self.batch_size;
        if self.buffer.len() < b {
            return Ok(None);
        }
        let idx = self.buffer.sample_indices(rng, b)?;
        // Split scratch off to keep the borrow checker happy below.
        let mut scratch = std::mem::take(&mut self.scratch);
        scratch.s.clear();
        scratch.u.clear();
        scratch.y.clear();
        for &i in &idx {
            let t = *self.buffer.get(i);
            scratch.s.push(t.s);
            scratch.u.push(t.u);
            scratch.y.push(self.target_value(rng, t.c, &t.s2, t.done));
        }

        let mut diag = UpdateDiagnostics {
            mean_abs_td: 0.0,
            mean_q: 0.0,
            critic_grad_norm: 0.0,
            actor_grad_norm: None,
        };
        for k in 0..self.critics.len() {
            let q = self.critics[k].forward_batch(&scratch.s, &scratch.u, &mut scratch.ctrace);
            scratch.delta.clear();
            scratch
                .delta
                .extend(scratch.y.iter().zip(q.iter()).map(|(y, qi)| y - qi));
            self.critics[k].backward_into(&scratch.ctrace, &scratch.delta, &mut scratch.grads);
            if k == 0 {
                diag.mean_abs_td =
                    scratch.delta.iter().map(|d| d.abs()).sum::<f64>() / b as f64;
                diag.mean_q = q.iter().sum::<f64>() / b as f64;
                diag.critic_grad_norm =
                    scratch.grads.iter().map(|g| g * g).sum::<f64>().sqrt();
            }
            // The critic climbs (1/B) Σ δ_j q_j — gradient ascent on the
            // correlation between TD error and value.
            self.opt_critics[k].step(
                &mut self.critics[k].params,
                &scratch.grads,
                Direction::Ascend,
            )?;
        }

        self.update_count += 1;
        if self.update_count % self.policy_delay == 0 {
            self.actor.forward_train(&scratch.s, &mut scratch.atrace)?;
            scratch.coeffs.clear();
            scratch.coeffs.extend(
                scratch
                    .s
                    .iter()
                    .zip(scratch.atrace.out.iter())
                    .map(|(s, &a)| self.critics[0].grad_action(s, a)),
            );
            self.actor
                .backward_dpg_into(&scratch.atrace, &scratch.coeffs, &mut scratch.grads);
            diag.actor_grad_norm =
                Some(scratch.grads.iter().map(|g| g * g).sum::<f64>().sqrt());
            self.opt_actor
                .step(&mut self.actor.params, &scratch.grads, Direction::Descend)?;
            self.actor.absorb_batch_stats(&scratch.atrace);
            self.soft_update_targets()?;
        }
        self.scratch = scratch;
        Ok(Some(diag))
    }

    /// Recenter every target toward its online net; the actor's running
    /// statistics track the online statistics by the same proportion.
    fn soft_update_targets(&mut self) -> Result<()> {
        soft_update(&mut self.actor_target.params, &self.actor.params, self.tau)?;
        soft_update(&mut self.actor_target.stats, &self.actor.stats, self.tau)?;
        for (t, o) in self.critic_targets.iter_mut().zip(self.critics.iter()) {
            soft_update(&mut t.params, &o.params, self.tau)?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

const CKPT_MAGIC: &[u8; 8] = b"MGLVCKPT";
const CKPT_VERSION: u64 = 1;

fn placement_tag(p: BnPlacement) -> u8 {
    match p {
        BnPlacement::Input => 0,
        BnPlacement::Output => 1,
        BnPlacement::Off => 2,
    }
}

fn placement_from_tag(t: u8) -> Result<BnPlacement> {
    match t {
        0 => Ok(BnPlacement::Input),
        1 => Ok(BnPlacement::Output),
        2 => Ok(BnPlacement::Off),
        _ => Err(Error::Checkpoint(format!("unknown normalization tag {t}"))),
    }
}

impl Agent {
    /// Serialize networks, optimizers and counters (not the replay buffer)
    /// as a little-endian blob. Loading restores every stored f64 bit for
    /// bit.
    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        out.extend_from_slice(CKPT_MAGIC);
        blob_put_u64(&mut out, CKPT_VERSION);
        out.push(match self.kind {
            AgentKind::Ddpg => 0,
            AgentKind::Td3 => 1,
        });
        out.push(placement_tag(self.actor.placement()));
        blob_put_u64(&mut out, self.update_count);
        blob_put_u64(&mut out, self.env_steps);
        self.actor.serialize_into(&mut out);
        self.actor_target.serialize_into(&mut out);
        blob_put_u64(&mut out, self.critics.len() as u64);
        for c in &self.critics {
            c.serialize_into(&mut out);
        }
        for c in &self.critic_targets {
            c.serialize_into(&mut out);
        }
        self.opt_actor.serialize_into(&mut out);
        for o in &self.opt_critics {
            o.serialize_into(&mut out);
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    /// Rebuild an agent from a checkpoint. Architecture choices (algorithm,
    /// normalization placement) come from the file; hyperparameters and
    /// buffer capacity come from `cfg`. The buffer starts empty.
    pub fn load_checkpoint(path: &Path, cfg: &Config) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        if bytes.len() < 8 || &bytes[..8] != CKPT_MAGIC {
            return Err(Error::Checkpoint(format!(
                "{} is not a checkpoint file",
                path.display()
            )));
        }
        let mut pos = 8;
        let version = blob_get_u64(&bytes, &mut pos)?;
        if version != CKPT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        if pos + 2 > bytes.len() {
            return Err(Error::Checkpoint("truncated checkpoint header".into()));
        }
        let kind = match bytes[pos] {
            0 => AgentKind::Ddpg,
            1 => AgentKind::Td3,
            k => return Err(Error::Checkpoint(format!("unknown algorithm tag {k}"))),
        };
        let placement = placement_from_tag(bytes[pos + 1])?;
        pos += 2;
        let update_count = blob_get_u64(&bytes, &mut pos)?;
        let env_steps = blob_get_u64(&bytes, &mut pos)?;
        let actor = ActorNet::deserialize(placement, &bytes, &mut pos)?;
        let actor_target = ActorNet::deserialize(placement, &bytes, &mut pos)?;
        let n_critics = blob_get_u64(&bytes, &mut pos)? as usize;
        let expected = match kind {
            AgentKind::Ddpg => 1,
            AgentKind::Td3 => 2,
        };
        if n_critics != expected {
            return Err(Error::Checkpoint(format!(
                "checkpoint stores {n_critics} critics, {} needs {expected}",
                kind.name()
            )));
        }
        let mut critics = Vec::with_capacity(n_critics);
        for _ in 0..n_critics {
            critics.push(CriticNet::deserialize(&bytes, &mut pos)?);
        }
        let mut critic_targets = Vec::with_capacity(n_critics);
        for _ in 0..n_critics {
            critic_targets.push(CriticNet::deserialize(&bytes, &mut pos)?);
        }
        let opt_actor = Optimizer::deserialize(&bytes, &mut pos)?;
        let mut opt_critics = Vec::with_capacity(n_critics);
        for _ in 0..n_critics {
            opt_critics.push(Optimizer::deserialize(&bytes, &mut pos)?);
        }
        if pos != bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes after checkpoint payload",
                bytes.len() - pos
            )));
        }
        Ok(Agent {
            kind,
            actor,
            actor_target,
            critics,
            critic_targets,
            opt_actor,
            opt_critics,
            buffer: ReplayBuffer::new(cfg.buffer_capacity)?,
            update_count,
            env_steps,
            gamma: cfg.gamma,
            tau: cfg.tau,
            batch_size: cfg.batch_size,
            warmup_steps: cfg.warmup_steps,
            explore_sigma: cfg.explore_sigma,
            smooth_sigma: cfg.smooth_sigma,
            smooth_clip: cfg.smooth_clip,
            policy_delay: match kind {
                AgentKind::Ddpg => 1,
                AgentKind::Td3 => cfg.policy_delay,
            },
            scratch: UpdateScratch::default(),
        })
    }
}
