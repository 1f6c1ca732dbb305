//! Goal-conditioned DDPG: actor/critic pair with target networks, Gaussian
//! plus epsilon-uniform exploration, rollout collection, and the per-epoch
//! train/evaluate loop that drives the mask curriculum.

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::curriculum::{
    self, estimate_mask_success, mask_weights, record_evaluation, sample_mask, CurriculumConfig,
    GoalMask, SuccessTracker,
};
use crate::env::{
    achieved_goal, reset, step, subgoal_success, Action, EnvConfig, EnvTag, Observation, Policy,
};
use crate::error::{Error, Result};
use crate::nn::{
    adam_step, forward, init_network, polyak_update, Activation, AdamState, Gradients, Network,
    Workspace,
};
use crate::replay::{
    sample_batch, store_episode, EpisodeRecord, HERConfig, ReplayBuffer, SampledTransition,
    Transition,
};
use crate::rng::{self, role};

pub const DEFAULT_GAMMA: f64 = 0.98;
pub const DEFAULT_TAU: f64 = 0.05;
pub const DEFAULT_LEARNING_RATE: f64 = 1e-3;
pub const DEFAULT_HIDDEN: [usize; 2] = [64, 64];
pub const DEFAULT_SIGMA: f64 = 0.2;
pub const DEFAULT_RANDOM_RATE: f64 = 0.3;
pub const DEFAULT_PARALLEL_ROLLOUTS: usize = 4;
pub const DEFAULT_ROLLOUT_CYCLES: usize = 64;
pub const DEFAULT_OPT_STEPS: usize = 40;
pub const DEFAULT_BATCH_SIZE: usize = 128;
pub const DEFAULT_BUFFER_CAPACITY: usize = 1_000_000;
pub const DEFAULT_HER_K: u32 = 6;
pub const DEFAULT_EVAL_EPISODES: usize = 10;
pub const DEFAULT_TRACKER_WINDOW: usize = 10;
pub const DEFAULT_NORMALIZER_CLIP: f64 = 5.0;

/// Gaussian action noise plus an epsilon chance of a fully random action.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExplorationConfig {
    pub sigma: f64,
    pub random_rate: f64,
}

impl Default for ExplorationConfig {
    fn default() -> Self {
        ExplorationConfig { sigma: DEFAULT_SIGMA, random_rate: DEFAULT_RANDOM_RATE }
    }
}

/// Rollout and optimization schedule of one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RolloutConfig {
    pub n_parallel: usize,
    pub n_cycles: usize,
    pub opt_steps: usize,
    pub batch_size: usize,
    pub gamma: f64,
    pub tau: f64,
    pub lr_actor: f64,
    pub lr_critic: f64,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        RolloutConfig {
            n_parallel: DEFAULT_PARALLEL_ROLLOUTS,
            n_cycles: DEFAULT_ROLLOUT_CYCLES,
            opt_steps: DEFAULT_OPT_STEPS,
            batch_size: DEFAULT_BATCH_SIZE,
            gamma: DEFAULT_GAMMA,
            tau: DEFAULT_TAU,
            lr_actor: DEFAULT_LEARNING_RATE,
            lr_critic: DEFAULT_LEARNING_RATE,
        }
    }
}

impl RolloutConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_parallel == 0 || self.n_cycles == 0 || self.opt_steps == 0 || self.batch_size == 0
        {
            return Err(Error::Config("rollout counts must all be positive".into()));
        }
        if !(0.0 < self.gamma && self.gamma < 1.0) {
            return Err(Error::Config(format!("gamma must be in (0, 1), got {}", self.gamma)));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::Config(format!("tau must be in [0, 1], got {}", self.tau)));
        }
        if self.lr_actor <= 0.0 || self.lr_critic <= 0.0 {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        Ok(())
    }
}

/// Running mean/std over input vectors; normalized values are clipped to
/// +/- `clip` standard deviations.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    count: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
    clip: f64,
}

impl Normalizer {
    pub fn new(dim: usize, clip: f64) -> Normalizer {
        Normalizer { count: 0.0, mean: vec![0.0; dim], m2: vec![0.0; dim], clip }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn update(&mut self, x: &[f64]) {
        self.count += 1.0;
        for i in 0..self.mean.len() {
            let delta = x[i] - self.mean[i];
            self.mean[i] += delta / self.count;
            self.m2[i] += delta * (x[i] - self.mean[i]);
        }
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(x.len());
        self.normalize_into(x, &mut out);
        out
    }

    /// Appends the normalized values of `x` to `out`.
    pub fn normalize_into(&self, x: &[f64], out: &mut Vec<f64>) {
        if self.count < 2.0 {
            out.extend(x.iter().map(|v| v.clamp(-self.clip, self.clip)));
            return;
        }
        out.extend(x.iter().enumerate().map(|(i, v)| {
            let var = (self.m2[i] / self.count).max(1e-8);
            ((v - self.mean[i]) / var.sqrt()).clamp(-self.clip, self.clip)
        }));
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        use std::io::Write;
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        w.write_all(b"GMNRM1")?;
        w.write_all(&(self.mean.len() as u64).to_le_bytes())?;
        w.write_all(&self.count.to_le_bytes())?;
        w.write_all(&self.clip.to_le_bytes())?;
        for v in self.mean.iter().chain(&self.m2) {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Normalizer> {
        use std::io::Read;
        let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 6];
        r.read_exact(&mut magic)?;
        if &magic != b"GMNRM1" {
            return Err(Error::Parse(format!("bad normalizer magic in {path:?}")));
        }
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8)?;
        let dim = u64::from_le_bytes(b8) as usize;
        let mut next = || -> Result<f64> {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            Ok(f64::from_le_bytes(b))
        };
        let count = next()?;
        let clip = next()?;
        let mut mean = Vec::with_capacity(dim);
        for _ in 0..dim {
            mean.push(next()?);
        }
        let mut m2 = Vec::with_capacity(dim);
        for _ in 0..dim {
            m2.push(next()?);
        }
        Ok(Normalizer { count, mean, m2, clip })
    }
}

/// Actor and critic with their target copies, Adam states, and input
/// normalizers.
#[derive(Debug, Clone)]
pub struct ActorCritic {
    pub actor: Network,
    pub critic: Network,
    pub actor_target: Network,
    pub critic_target: Network,
    pub actor_adam: AdamState,
    pub critic_adam: AdamState,
    pub obs_norm: Normalizer,
    pub goal_norm: Normalizer,
    action_dim: usize,
}

impl ActorCritic {
    pub fn new(
        obs_dim: usize,
        goal_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        seed: u64,
    ) -> Result<ActorCritic> {
        if hidden.is_empty() {
            return Err(Error::Config("need at least one hidden layer".into()));
        }
        let mut actor_sizes = vec![obs_dim + goal_dim];
        actor_sizes.extend_from_slice(hidden);
        actor_sizes.push(action_dim);
        let mut actor_acts = vec![Activation::Relu; hidden.len()];
        actor_acts.push(Activation::Tanh);

        let mut critic_sizes = vec![obs_dim + goal_dim + action_dim];
        critic_sizes.extend_from_slice(hidden);
        critic_sizes.push(1);
        let mut critic_acts = vec![Activation::Relu; hidden.len()];
        critic_acts.push(Activation::Linear);

        let actor = init_network(&actor_sizes, &actor_acts, rng::subseed(seed, &[role::NET_INIT, 0]))?;
        let critic = init_network(&critic_sizes, &critic_acts, rng::subseed(seed, &[role::NET_INIT, 1]))?;
        let actor_target = actor.clone();
        let critic_target = critic.clone();
        let actor_adam = AdamState::for_network(&actor);
        let critic_adam = AdamState::for_network(&critic);
        Ok(ActorCritic {
            actor,
            critic,
            actor_target,
            critic_target,
            actor_adam,
            critic_adam,
            obs_norm: Normalizer::new(obs_dim, DEFAULT_NORMALIZER_CLIP),
            goal_norm: Normalizer::new(goal_dim, DEFAULT_NORMALIZER_CLIP),
            action_dim,
        })
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    fn actor_input(&self, obs: &Observation, goal: &[f64]) -> Vec<f64> {
        let mut v = self.obs_norm.normalize(&obs.to_vec());
        v.extend(self.goal_norm.normalize(goal));
        v
    }

    /// Deterministic policy output (tanh head keeps components in [-1, 1]).
    pub fn policy_action(&self, obs: &Observation, goal: &[f64]) -> Action {
        let out = forward(&self.actor, &self.actor_input(obs, goal)).expect("actor forward");
        Action::from_slice(&out).expect("actor output dimension")
    }

    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.actor.save(&dir.join("actor.bin"))?;
        self.critic.save(&dir.join("critic.bin"))?;
        self.actor_target.save(&dir.join("actor_target.bin"))?;
        self.critic_target.save(&dir.join("critic_target.bin"))?;
        self.actor_adam.save(&dir.join("actor_adam.bin"))?;
        self.critic_adam.save(&dir.join("critic_adam.bin"))?;
        self.obs_norm.save(&dir.join("obs_norm.bin"))?;
        self.goal_norm.save(&dir.join("goal_norm.bin"))?;
        Ok(())
    }

    pub fn load_dir(dir: &Path) -> Result<ActorCritic> {
        let actor = Network::load(&dir.join("actor.bin"))?;
        let critic = Network::load(&dir.join("critic.bin"))?;
        let actor_target = Network::load(&dir.join("actor_target.bin"))?;
        let critic_target = Network::load(&dir.join("critic_target.bin"))?;
        let actor_adam = AdamState::load(&dir.join("actor_adam.bin"))?;
        let critic_adam = AdamState::load(&dir.join("critic_adam.bin"))?;
        let obs_norm = Normalizer::load(&dir.join("obs_norm.bin"))?;
        let goal_norm = Normalizer::load(&dir.join("goal_norm.bin"))?;
        let action_dim = actor.output_dim();
        Ok(ActorCritic {
            actor,
            critic,
            actor_target,
            critic_target,
            actor_adam,
            critic_adam,
            obs_norm,
            goal_norm,
            action_dim,
        })
    }
}

impl Policy for ActorCritic {
    fn act(&self, obs: &Observation, goal: &[f64]) -> Action {
        self.policy_action(obs, goal)
    }
}

/// Training-mode action selection, reporting whether the uniform-random
/// branch fired.
pub fn select_action_traced<P: Policy>(
    policy: &P,
    obs: &Observation,
    goal: &[f64],
    expl: &ExplorationConfig,
    train_mode: bool,
    rng: &mut ChaCha8Rng,
) -> (Action, bool) {
    if !train_mode {
        return (policy.act(obs, goal), false);
    }
    if expl.random_rate > 0.0 && rng.gen::<f64>() < expl.random_rate {
        let a = Action {
            delta: [
                rng.gen_range(-1.0..=1.0),
                rng.gen_range(-1.0..=1.0),
                rng.gen_range(-1.0..=1.0),
            ],
            grasp: rng.gen_range(-1.0..=1.0),
        };
        return (a, true);
    }
    let mut a = policy.act(obs, goal);
    if expl.sigma > 0.0 {
        let normal = Normal::new(0.0, expl.sigma).expect("sigma >= 0");
        for d in a.delta.iter_mut() {
            *d += normal.sample(rng);
        }
        a.grasp += normal.sample(rng);
    }
    (a.clamped(), false)
}

/// Exploration policy: with probability `random_rate` a uniform random
/// action, otherwise the policy output plus Gaussian noise, clamped. In
/// evaluation mode the raw deterministic policy output.
pub fn select_action<P: Policy>(
    policy: &P,
    obs: &Observation,
    goal: &[f64],
    expl: &ExplorationConfig,
    train_mode: bool,
    rng: &mut ChaCha8Rng,
) -> Action {
    select_action_traced(policy, obs, goal, expl, train_mode, rng).0
}

/// Runs one full-horizon training episode under a fixed goal mask.
///
/// The goal stored with each transition is the masked goal at that step:
/// unmasked dimensions come from the sampled goal, masked dimensions from the
/// currently achieved goal. Terminal success is recorded per dimension
/// against the unmasked goal.
#[allow(clippy::too_many_arguments)]
pub fn rollout_episode<P: Policy>(
    tag: EnvTag,
    env_cfg: &EnvConfig,
    env_seed: u64,
    policy: &P,
    mask: &GoalMask,
    expl: &ExplorationConfig,
    train_mode: bool,
    rng: &mut ChaCha8Rng,
) -> Result<EpisodeRecord> {
    if mask.len() != tag.goal_dim() {
        return Err(Error::Shape(format!(
            "mask has {} dims, {} has goal dimension {}",
            mask.len(),
            tag.name(),
            tag.goal_dim()
        )));
    }
    let (mut state, goal) = reset(tag, env_seed, env_cfg);
    let mut transitions = Vec::with_capacity(env_cfg.horizon as usize);
    for t in 0..env_cfg.horizon {
        let obs = state.obs;
        let masked_goal = curriculum::apply_mask(&goal, &achieved_goal(&obs, tag), mask)?;
        let action = select_action(policy, &obs, &masked_goal, expl, train_mode, rng);
        step(&mut state, &action)?;
        transitions.push(Transition {
            obs,
            goal: masked_goal,
            mask: mask.clone(),
            action,
            obs_next: state.obs,
            episode_id: 0,
            t,
        });
    }
    let terminal_success = subgoal_success(
        &achieved_goal(&state.obs, tag),
        &goal,
        env_cfg.epsilon_success,
    )?;
    Ok(EpisodeRecord { tag, transitions, terminal_success })
}

fn bellman_target(reward: f64, q_next: f64, gamma: f64) -> f64 {
    (reward + gamma * q_next).clamp(-1.0 / (1.0 - gamma), 0.0)
}

/// One optimization step on a sampled batch: critic regression toward the
/// clipped Bellman target, actor ascent through the critic's action
/// gradient, one Adam step each, then Polyak updates of both targets.
///
/// All passes run through reusable workspaces; per-sample gradients
/// accumulate directly into flat batch buffers.
pub fn train_batch(
    ac: &mut ActorCritic,
    batch: &[SampledTransition],
    cfg: &RolloutConfig,
) -> Result<(f64, f64)> {
    if batch.is_empty() {
        return Err(Error::Validation("empty training batch".into()));
    }
    let n = batch.len() as f64;
    let mut ws_actor = Workspace::for_network(&ac.actor);
    let mut ws_actor_t = Workspace::for_network(&ac.actor_target);
    let mut ws_critic = Workspace::for_network(&ac.critic);
    let mut ws_critic_t = Workspace::for_network(&ac.critic_target);
    let mut critic_grads = Gradients::zeros_like(&ac.critic);
    let mut actor_grads = Gradients::zeros_like(&ac.actor);
    let critic_in_dim = ac.critic.input_dim();
    let mut critic_input_grad = vec![0.0; critic_in_dim];
    let mut buf_actor_in = Vec::with_capacity(ac.actor.input_dim());
    let mut buf_critic_in = Vec::with_capacity(critic_in_dim);
    let mut buf_upstream = vec![0.0; ac.action_dim];
    let mut critic_loss = 0.0;
    let mut actor_objective = 0.0;

    for item in batch {
        let tr = &item.transition;

        // target: y = clip(r + gamma * Q'(o', g, pi'(o', g)))
        buf_actor_in.clear();
        ac.obs_norm.normalize_into(&tr.obs_next.to_vec(), &mut buf_actor_in);
        ac.goal_norm.normalize_into(&tr.goal, &mut buf_actor_in);
        ac.actor_target.forward_ws(&buf_actor_in, &mut ws_actor_t)?;
        buf_critic_in.clear();
        buf_critic_in.extend_from_slice(&buf_actor_in);
        buf_critic_in.extend_from_slice(ws_actor_t.output());
        ac.critic_target.forward_ws(&buf_critic_in, &mut ws_critic_t)?;
        let q_next = ws_critic_t.output()[0];
        let y = bellman_target(item.reward, q_next, cfg.gamma);

        // critic gradient of mean squared TD error
        buf_actor_in.clear();
        ac.obs_norm.normalize_into(&tr.obs.to_vec(), &mut buf_actor_in);
        ac.goal_norm.normalize_into(&tr.goal, &mut buf_actor_in);
        buf_critic_in.clear();
        buf_critic_in.extend_from_slice(&buf_actor_in);
        buf_critic_in.extend_from_slice(&tr.action.to_vec());
        ac.critic.forward_ws(&buf_critic_in, &mut ws_critic)?;
        let q = ws_critic.output()[0];
        let err = q - y;
        critic_loss += err * err / n;
        ac.critic.backward_ws(&mut ws_critic, &[2.0 * err / n], Some(&mut critic_grads.params), None)?;

        // actor gradient: ascend mean Q(o, g, pi(o, g)) through the critic input
        ac.actor.forward_ws(&buf_actor_in, &mut ws_actor)?;
        buf_critic_in.clear();
        buf_critic_in.extend_from_slice(&buf_actor_in);
        buf_critic_in.extend_from_slice(ws_actor.output());
        ac.critic.forward_ws(&buf_critic_in, &mut ws_critic)?;
        actor_objective += ws_critic.output()[0] / n;
        ac.critic.backward_ws(&mut ws_critic, &[1.0], None, Some(&mut critic_input_grad))?;
        for (u, d) in buf_upstream
            .iter_mut()
            .zip(&critic_input_grad[critic_in_dim - ac.action_dim..])
        {
            *u = -d / n;
        }
        ac.actor.backward_ws(&mut ws_actor, &buf_upstream, Some(&mut actor_grads.params), None)?;
    }

    if !critic_grads.is_finite() || !actor_grads.is_finite() {
        return Err(Error::Numeric(format!(
            "non-finite gradients in train_batch (critic_loss={critic_loss}, actor_objective={actor_objective})"
        )));
    }
    adam_step(&mut ac.critic, &critic_grads, &mut ac.critic_adam, cfg.lr_critic)?;
    adam_step(&mut ac.actor, &actor_grads, &mut ac.actor_adam, cfg.lr_actor)?;
    polyak_update(&mut ac.critic_target, &ac.critic, cfg.tau)?;
    polyak_update(&mut ac.actor_target, &ac.actor, cfg.tau)?;
    Ok((critic_loss, actor_objective))
}

/// Deterministic evaluation: unmasked goals, no exploration. Returns the
/// episode success rate (all dimensions within eps at the final step) and
/// the per-episode, per-dimension success matrix.
pub fn evaluate<P: Policy>(
    tag: EnvTag,
    env_cfg: &EnvConfig,
    policy: &P,
    n_eval: usize,
    run_seed: u64,
    epoch: usize,
) -> Result<(f64, Vec<Vec<bool>>)> {
    if n_eval == 0 {
        return Err(Error::Config("n_eval must be > 0".into()));
    }
    let mut per_dim = Vec::with_capacity(n_eval);
    let mut successes = 0usize;
    for i in 0..n_eval {
        let env_seed = rng::subseed(run_seed, &[role::EVAL, epoch as u64, i as u64]);
        let (mut state, goal) = reset(tag, env_seed, env_cfg);
        for _ in 0..env_cfg.horizon {
            let a = policy.act(&state.obs, &goal);
            step(&mut state, &a)?;
        }
        let row = subgoal_success(
            &achieved_goal(&state.obs, tag),
            &goal,
            env_cfg.epsilon_success,
        )?;
        if row.iter().all(|&b| b) {
            successes += 1;
        }
        per_dim.push(row);
    }
    Ok((successes as f64 / n_eval as f64, per_dim))
}

/// Per-epoch record of evaluation quality, curriculum state, and losses.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub eval_success_rate: f64,
    /// Tracker rates per goal dimension, after this epoch's evaluation.
    pub per_dim_rates: Vec<f64>,
    /// Estimated c_m per mask, aligned with the learner's mask list.
    pub mask_estimates: Vec<f64>,
    /// Fraction of this epoch's training episodes per mask that achieved
    /// their masked goal; None when the mask was never sampled.
    pub mask_train_success: Vec<Option<f64>>,
    /// How often each mask was sampled for this epoch's rollouts.
    pub mask_histogram: Vec<usize>,
    pub critic_loss: f64,
    pub actor_objective: f64,
}

/// Everything one training run owns.
pub struct Learner {
    pub tag: EnvTag,
    pub env_cfg: EnvConfig,
    pub ac: ActorCritic,
    pub buffer: ReplayBuffer,
    pub tracker: SuccessTracker,
    pub masks: Vec<GoalMask>,
    /// Mask sampling weights, frozen for the coming epoch.
    pub weights: Vec<f64>,
    pub curriculum: CurriculumConfig,
    pub cgm_enabled: bool,
    pub her: HERConfig,
    pub expl: ExplorationConfig,
    pub rollout: RolloutConfig,
    pub n_eval: usize,
    pub run_seed: u64,
    pub epoch: usize,
}

impl Learner {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        tag: EnvTag,
        env_cfg: EnvConfig,
        hidden: &[usize],
        curriculum: CurriculumConfig,
        cgm_enabled: bool,
        her: HERConfig,
        expl: ExplorationConfig,
        rollout: RolloutConfig,
        buffer_capacity: usize,
        tracker_window: usize,
        n_eval: usize,
        run_seed: u64,
    ) -> Result<Learner> {
        rollout.validate()?;
        curriculum.validate()?;
        let goal_dim = tag.goal_dim();
        let ac = ActorCritic::new(Observation::DIM, goal_dim, Action::DIM, hidden, run_seed)?;
        let masks = curriculum::enumerate_masks(goal_dim, curriculum.include_zero_mask)?;
        let tracker = SuccessTracker::new(goal_dim, tracker_window);
        let weights = mask_weights(&tracker, &masks, &curriculum)?;
        Ok(Learner {
            tag,
            env_cfg,
            ac,
            buffer: ReplayBuffer::new(buffer_capacity),
            tracker,
            masks,
            weights,
            curriculum,
            cgm_enabled,
            her,
            expl,
            rollout,
            n_eval,
            run_seed,
            epoch: 0,
        })
    }

    fn full_mask_index(&self) -> usize {
        self.masks
            .iter()
            .position(|m| m.bits().iter().all(|&b| b))
            .expect("mask enumeration always contains the all-ones mask")
    }
}

/// One epoch: n_cycles of (n_parallel rollouts under sampled masks, then
/// opt_steps batches), followed by evaluation, tracker update, and weight
/// recomputation for the next epoch.
pub fn run_epoch(learner: &mut Learner) -> Result<EpochStats> {
    let epoch = learner.epoch;
    let n_masks = learner.masks.len();
    let mut histogram = vec![0usize; n_masks];
    let mut train_hits = vec![0usize; n_masks];
    let mut critic_loss_sum = 0.0;
    let mut actor_obj_sum = 0.0;
    let mut n_opt = 0usize;
    let full_idx = learner.full_mask_index();

    for cycle in 0..learner.rollout.n_cycles {
        // one mask per rollout, drawn from the epoch's frozen weight vector
        let mask_indices: Vec<usize> = (0..learner.rollout.n_parallel)
            .map(|worker| {
                if !learner.cgm_enabled {
                    return Ok(full_idx);
                }
                let mut mrng = rng::stream(
                    learner.run_seed,
                    &[role::MASK_SAMPLE, epoch as u64, cycle as u64, worker as u64],
                );
                let m = sample_mask(&learner.weights, &learner.masks, &mut mrng)?;
                Ok(learner.masks.iter().position(|x| x == m).unwrap())
            })
            .collect::<Result<_>>()?;

        // rollouts are independent; results are ingested in worker order
        let episodes: Vec<Result<EpisodeRecord>> = mask_indices
            .par_iter()
            .enumerate()
            .map(|(worker, &mi)| {
                let env_seed = rng::subseed(
                    learner.run_seed,
                    &[role::ENV_RESET, epoch as u64, cycle as u64, worker as u64],
                );
                let mut explore_rng = rng::stream(
                    learner.run_seed,
                    &[role::EXPLORE, epoch as u64, cycle as u64, worker as u64],
                );
                rollout_episode(
                    learner.tag,
                    &learner.env_cfg,
                    env_seed,
                    &learner.ac,
                    &learner.masks[mi],
                    &learner.expl,
                    true,
                    &mut explore_rng,
                )
            })
            .collect();

        for (episode, &mi) in episodes.into_iter().zip(&mask_indices) {
            let episode = episode?;
            histogram[mi] += 1;
            let masked_ok = episode
                .terminal_success
                .iter()
                .zip(learner.masks[mi].bits())
                .all(|(&s, &unmasked)| !unmasked || s);
            if masked_ok {
                train_hits[mi] += 1;
            }
            for tr in &episode.transitions {
                learner.ac.obs_norm.update(&tr.obs.to_vec());
                learner.ac.goal_norm.update(&tr.goal);
            }
            store_episode(&mut learner.buffer, episode)?;
        }

        for opt in 0..learner.rollout.opt_steps {
            let mut brng = rng::stream(
                learner.run_seed,
                &[role::BATCH, epoch as u64, cycle as u64, opt as u64],
            );
            let batch = sample_batch(
                &learner.buffer,
                learner.rollout.batch_size,
                &learner.her,
                learner.env_cfg.epsilon_success,
                &mut brng,
            )?;
            let (cl, ao) = train_batch(&mut learner.ac, &batch, &learner.rollout)?;
            critic_loss_sum += cl;
            actor_obj_sum += ao;
            n_opt += 1;
        }
    }

    let (eval_rate, per_dim) = evaluate(
        learner.tag,
        &learner.env_cfg,
        &learner.ac,
        learner.n_eval,
        learner.run_seed,
        epoch,
    )?;
    for row in &per_dim {
        record_evaluation(&mut learner.tracker, row)?;
    }

    let mask_estimates: Vec<f64> = learner
        .masks
        .iter()
        .map(|m| estimate_mask_success(&learner.tracker, m))
        .collect::<Result<_>>()?;
    let mask_train_success: Vec<Option<f64>> = histogram
        .iter()
        .zip(&train_hits)
        .map(|(&n, &hits)| if n > 0 { Some(hits as f64 / n as f64) } else { None })
        .collect();

    if learner.cgm_enabled {
        learner.weights = mask_weights(&learner.tracker, &learner.masks, &learner.curriculum)?;
    }
    learner.epoch += 1;

    Ok(EpochStats {
        epoch,
        eval_success_rate: eval_rate,
        per_dim_rates: learner.tracker.rates(),
        mask_estimates,
        mask_train_success,
        mask_histogram: histogram,
        critic_loss: critic_loss_sum / n_opt.max(1) as f64,
        actor_objective: actor_obj_sum / n_opt.max(1) as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::ScriptedPolicy;
    use crate::nn::backward;

    fn small_env() -> EnvConfig {
        EnvConfig::default()
    }

    #[test]
    fn eval_mode_is_deterministic() {
        let ac = ActorCritic::new(Observation::DIM, 3, Action::DIM, &[8], 7).unwrap();
        let (state, goal) = reset(EnvTag::LiftWorld, 1, &small_env());
        let mut r1 = rng::stream(0, &[role::EXPLORE]);
        let mut r2 = rng::stream(999, &[role::EXPLORE]);
        let expl = ExplorationConfig::default();
        let a1 = select_action(&ac, &state.obs, &goal, &expl, false, &mut r1);
        let a2 = select_action(&ac, &state.obs, &goal, &expl, false, &mut r2);
        assert_eq!(a1, a2);
    }

    #[test]
    fn noise_free_train_mode_equals_eval() {
        let ac = ActorCritic::new(Observation::DIM, 3, Action::DIM, &[8], 11).unwrap();
        let (state, goal) = reset(EnvTag::LiftWorld, 2, &small_env());
        let expl = ExplorationConfig { sigma: 0.0, random_rate: 0.0 };
        let mut r = rng::stream(5, &[role::EXPLORE]);
        let train = select_action(&ac, &state.obs, &goal, &expl, true, &mut r);
        let eval = select_action(&ac, &state.obs, &goal, &expl, false, &mut r);
        assert_eq!(train, eval);
    }

    #[test]
    fn random_action_rate_matches_epsilon() {
        let ac = ActorCritic::new(Observation::DIM, 3, Action::DIM, &[8], 3).unwrap();
        let (state, goal) = reset(EnvTag::LiftWorld, 3, &small_env());
        let expl = ExplorationConfig { sigma: 0.2, random_rate: 0.3 };
        let mut r = rng::stream(17, &[role::EXPLORE]);
        let n = 100_000;
        let mut randoms = 0usize;
        for _ in 0..n {
            let (_, was_random) = select_action_traced(&ac, &state.obs, &goal, &expl, true, &mut r);
            if was_random {
                randoms += 1;
            }
        }
        let frac = randoms as f64 / n as f64;
        assert!((frac - 0.3).abs() < 0.01, "random fraction {frac}");
    }

    #[test]
    fn actions_stay_in_bounds_under_noise() {
        let ac = ActorCritic::new(Observation::DIM, 3, Action::DIM, &[8], 4).unwrap();
        let (state, goal) = reset(EnvTag::LiftWorld, 4, &small_env());
        let expl = ExplorationConfig { sigma: 1.5, random_rate: 0.2 };
        let mut r = rng::stream(23, &[role::EXPLORE]);
        for _ in 0..2000 {
            let a = select_action(&ac, &state.obs, &goal, &expl, true, &mut r);
            for c in a.to_vec() {
                assert!((-1.0..=1.0).contains(&c));
            }
        }
    }

    #[test]
    fn rollout_has_exactly_horizon_transitions() {
        let ac = ActorCritic::new(Observation::DIM, 3, Action::DIM, &[8], 5).unwrap();
        let mut r = rng::stream(1, &[role::EXPLORE]);
        let ep = rollout_episode(
            EnvTag::LiftWorld,
            &small_env(),
            42,
            &ac,
            &GoalMask::all_ones(3),
            &ExplorationConfig::default(),
            true,
            &mut r,
        )
        .unwrap();
        assert_eq!(ep.len(), small_env().horizon as usize);
    }

    #[test]
    fn all_zero_mask_is_trivially_rewarded() {
        let ac = ActorCritic::new(Observation::DIM, 3, Action::DIM, &[8], 6).unwrap();
        let mut r = rng::stream(2, &[role::EXPLORE]);
        let ep = rollout_episode(
            EnvTag::LiftWorld,
            &small_env(),
            43,
            &ac,
            &GoalMask::all_zeros(3),
            &ExplorationConfig::default(),
            true,
            &mut r,
        )
        .unwrap();
        let r0 = crate::replay::recompute_reward(&ep.transitions[0], small_env().epsilon_success)
            .unwrap();
        assert_eq!(r0, 0.0);
    }

    #[test]
    fn scripted_rollout_succeeds_on_all_dimensions() {
        let sp = ScriptedPolicy::new(EnvTag::LiftWorld, &small_env());
        let mut r = rng::stream(3, &[role::EXPLORE]);
        let ep = rollout_episode(
            EnvTag::LiftWorld,
            &small_env(),
            44,
            &sp,
            &GoalMask::all_ones(3),
            &ExplorationConfig { sigma: 0.0, random_rate: 0.0 },
            true,
            &mut r,
        )
        .unwrap();
        assert!(ep.terminal_success.iter().all(|&b| b));
    }

    #[test]
    fn bellman_target_clips_to_reward_range() {
        let gamma = 0.98;
        // a target at the floor -1/(1-gamma) stays clipped to it exactly
        let floor = -1.0 / (1.0 - gamma);
        assert_eq!(bellman_target(-1.0, floor, gamma), floor);
        assert_eq!(bellman_target(0.0, 0.0, gamma), 0.0);
        // positive leakage clips to 0
        assert_eq!(bellman_target(0.0, 5.0, gamma), 0.0);
        let mid = bellman_target(-1.0, -10.0, gamma);
        assert!((mid - (-1.0 - 9.8)).abs() < 1e-12);
    }

    fn toy_batch(n: usize, seed: u64) -> Vec<SampledTransition> {
        let cfg = small_env();
        let sp = ScriptedPolicy::new(EnvTag::LiftWorld, &cfg);
        let mut r = rng::stream(seed, &[role::EXPLORE]);
        let ep = rollout_episode(
            EnvTag::LiftWorld,
            &cfg,
            seed,
            &sp,
            &GoalMask::all_ones(3),
            &ExplorationConfig { sigma: 0.3, random_rate: 0.3 },
            true,
            &mut r,
        )
        .unwrap();
        (0..n)
            .map(|i| {
                let tr = ep.transitions[i % ep.len()].clone();
                let reward = crate::replay::recompute_reward(&tr, cfg.epsilon_success).unwrap();
                SampledTransition { transition: tr, reward, relabeled: false }
            })
            .collect()
    }

    #[test]
    fn train_batch_reduces_critic_loss_on_fixed_batch() {
        let mut ac = ActorCritic::new(Observation::DIM, 3, Action::DIM, &[16], 8).unwrap();
        let batch = toy_batch(16, 9);
        let cfg = RolloutConfig { batch_size: 16, ..RolloutConfig::default() };
        let (first_loss, _) = train_batch(&mut ac, &batch, &cfg).unwrap();
        let mut last_loss = first_loss;
        for _ in 0..150 {
            let (l, _) = train_batch(&mut ac, &batch, &cfg).unwrap();
            last_loss = l;
        }
        assert!(last_loss < first_loss * 0.2, "critic loss {first_loss} -> {last_loss}");
    }

    #[test]
    fn actor_gradient_matches_finite_differences_through_critic() {
        // composite d/dtheta_actor of Q(o, g, pi(o, g)) on a frozen critic
        let ac = ActorCritic::new(6, 2, 3, &[8], 10).unwrap();
        let obs_vec = [0.3, 0.4, 0.1, 0.5, 0.5, 0.0];
        let goal = [0.2, 0.7];

        let q_of_actor = |actor: &Network| -> f64 {
            let mut input = obs_vec.to_vec();
            input.extend_from_slice(&goal);
            let a = forward(actor, &input).unwrap();
            let mut cin = input.clone();
            cin.extend_from_slice(&a);
            forward(&ac.critic, &cin).unwrap()[0]
        };

        // our composite gradient
        let mut input = obs_vec.to_vec();
        input.extend_from_slice(&goal);
        let pi = forward(&ac.actor, &input).unwrap();
        let mut cin = input.clone();
        cin.extend_from_slice(&pi);
        let dq = backward(&ac.critic, &cin, &[1.0]).unwrap();
        let dq_da = &dq.input[dq.input.len() - 3..];
        let ours = backward(&ac.actor, &input, dq_da).unwrap();

        let h = 1e-6;
        for i in 0..ac.actor.params().len() {
            let mut plus = ac.actor.clone();
            plus.params_mut()[i] += h;
            let mut minus = ac.actor.clone();
            minus.params_mut()[i] -= h;
            let fd = (q_of_actor(&plus) - q_of_actor(&minus)) / (2.0 * h);
            let got = ours.params[i];
            let tol = 1e-6f64.max(1e-3 * fd.abs());
            assert!((got - fd).abs() <= tol, "param {i}: {got} vs {fd}");
        }
    }

    #[test]
    fn evaluate_scripted_is_perfect_and_untrained_is_poor() {
        let cfg = small_env();
        let sp = ScriptedPolicy::new(EnvTag::LiftWorld, &cfg);
        let (rate, per_dim) = evaluate(EnvTag::LiftWorld, &cfg, &sp, 10, 0, 0).unwrap();
        assert_eq!(rate, 1.0);
        assert_eq!(per_dim.len(), 10);
        assert_eq!(per_dim[0].len(), 3);

        let ac = ActorCritic::new(Observation::DIM, 3, Action::DIM, &[16, 16], 12).unwrap();
        let (rate, _) = evaluate(EnvTag::LiftWorld, &cfg, &ac, 20, 1, 0).unwrap();
        assert!(rate <= 0.2, "untrained policy rate {rate}");
    }

    #[test]
    fn evaluate_does_not_mutate_learner_state() {
        let cfg = small_env();
        let ac = ActorCritic::new(Observation::DIM, 3, Action::DIM, &[8], 13).unwrap();
        let before = ac.clone();
        let _ = evaluate(EnvTag::LiftWorld, &cfg, &ac, 5, 2, 0).unwrap();
        assert_eq!(ac.actor.params(), before.actor.params());
        assert_eq!(ac.critic.params(), before.critic.params());
    }

    fn tiny_learner(cgm: bool, seed: u64) -> Learner {
        Learner::new(
            EnvTag::LiftWorld,
            small_env(),
            &[8],
            CurriculumConfig::default(),
            cgm,
            HERConfig { k: 6 },
            ExplorationConfig::default(),
            RolloutConfig {
                n_parallel: 2,
                n_cycles: 3,
                opt_steps: 2,
                batch_size: 8,
                ..RolloutConfig::default()
            },
            10_000,
            10,
            4,
            seed,
        )
        .unwrap()
    }

    #[test]
    fn epoch_transition_count_identity() {
        let mut learner = tiny_learner(true, 21);
        let stats = run_epoch(&mut learner).unwrap();
        let expected =
            learner.rollout.n_cycles * learner.rollout.n_parallel * learner.env_cfg.horizon as usize;
        assert_eq!(learner.buffer.len(), expected);
        assert_eq!(
            stats.mask_histogram.iter().sum::<usize>(),
            learner.rollout.n_cycles * learner.rollout.n_parallel
        );
        assert_eq!(learner.tracker.samples(), learner.n_eval);
    }

    #[test]
    fn cgm_disabled_uses_only_full_mask() {
        let mut learner = tiny_learner(false, 22);
        let stats = run_epoch(&mut learner).unwrap();
        let full = learner.masks.iter().position(|m| m.bits().iter().all(|&b| b)).unwrap();
        for (i, &count) in stats.mask_histogram.iter().enumerate() {
            if i == full {
                assert_eq!(count, learner.rollout.n_cycles * learner.rollout.n_parallel);
            } else {
                assert_eq!(count, 0);
            }
        }
    }

    #[test]
    fn epochs_are_bit_reproducible() {
        let mut a = tiny_learner(true, 23);
        let mut b = tiny_learner(true, 23);
        for _ in 0..2 {
            let sa = run_epoch(&mut a).unwrap();
            let sb = run_epoch(&mut b).unwrap();
            assert_eq!(sa, sb);
        }
        assert_eq!(a.ac.actor.params(), b.ac.actor.params());
        assert_eq!(a.ac.critic.params(), b.ac.critic.params());
        assert_eq!(a.weights, b.weights);
    }

    #[test]
    fn checkpoint_directory_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let mut learner = tiny_learner(true, 24);
        run_epoch(&mut learner).unwrap();
        learner.ac.save_dir(dir.path()).unwrap();
        let loaded = ActorCritic::load_dir(dir.path()).unwrap();
        assert_eq!(loaded.actor, learner.ac.actor);
        assert_eq!(loaded.critic, learner.ac.critic);
        assert_eq!(loaded.actor_target, learner.ac.actor_target);
        assert_eq!(loaded.critic_target, learner.ac.critic_target);
        assert_eq!(loaded.actor_adam, learner.ac.actor_adam);
        assert_eq!(loaded.critic_adam, learner.ac.critic_adam);
        assert_eq!(loaded.obs_norm, learner.ac.obs_norm);
        assert_eq!(loaded.goal_norm, learner.ac.goal_norm);
    }
}
