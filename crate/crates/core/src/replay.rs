//! Off-policy episode store with hindsight goal substitution (future
//! strategy) and mask-aware reward recomputation.

use std::collections::VecDeque;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::curriculum::GoalMask;
use crate::env::{self, Action, EnvTag, Goal, Observation};
use crate::error::{Error, Result};

/// One stored step. The goal is the masked goal the policy was conditioned on
/// at rollout time; rewards are recomputed at sample time, not stored.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Observation,
    pub goal: Goal,
    pub mask: GoalMask,
    pub action: Action,
    pub obs_next: Observation,
    pub episode_id: u64,
    pub t: u32,
}

/// All transitions of one episode plus its terminal per-dimension success
/// against the unmasked goal.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub tag: EnvTag,
    pub transitions: Vec<Transition>,
    pub terminal_success: Vec<bool>,
}

impl EpisodeRecord {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn mask(&self) -> &GoalMask {
        &self.transitions[0].mask
    }

    fn validate(&self) -> Result<()> {
        if self.transitions.is_empty() {
            return Err(Error::Validation("empty episode".into()));
        }
        let first = &self.transitions[0];
        let dim = first.goal.len();
        if first.mask.len() != dim {
            return Err(Error::Validation("mask length differs from goal length".into()));
        }
        if self.terminal_success.len() != dim {
            return Err(Error::Validation(
                "terminal success vector length differs from goal length".into(),
            ));
        }
        for (i, tr) in self.transitions.iter().enumerate() {
            if tr.t as usize != i {
                return Err(Error::Validation(format!(
                    "step indices not contiguous: transition {i} has t={}",
                    tr.t
                )));
            }
            if tr.episode_id != first.episode_id {
                return Err(Error::Validation("mixed episode ids in one episode".into()));
            }
            if tr.mask != first.mask {
                return Err(Error::Validation("mask changes within an episode".into()));
            }
            if tr.goal.len() != dim {
                return Err(Error::Validation("goal length changes within an episode".into()));
            }
        }
        Ok(())
    }

    /// Trajectory dump: one CSV row per step
    /// (t, gripper xyz, block xyz, grasp, action, reward).
    pub fn trajectory_csv(&self, eps: f64) -> String {
        let mut out = String::from(
            "t,grip_x,grip_y,grip_z,block_x,block_y,block_z,grasp,a_dx,a_dy,a_dz,a_grasp,reward\n",
        );
        for tr in &self.transitions {
            let r = recompute_reward(tr, eps).unwrap_or(f64::NAN);
            let o = &tr.obs;
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                tr.t,
                o.gripper[0],
                o.gripper[1],
                o.gripper[2],
                o.block[0],
                o.block[1],
                o.block[2],
                o.grasp,
                tr.action.delta[0],
                tr.action.delta[1],
                tr.action.delta[2],
                tr.action.grasp,
                r
            ));
        }
        out
    }
}

/// Hindsight configuration: on average k of k+1 sampled transitions get a
/// future achieved goal substituted (the future strategy).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HERConfig {
    pub k: u32,
}

impl HERConfig {
    pub fn substitution_probability(&self) -> f64 {
        self.k as f64 / (self.k as f64 + 1.0)
    }
}

/// Bounded FIFO store of whole episodes; capacity counts transitions and
/// eviction drops oldest episodes first.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    episodes: VecDeque<EpisodeRecord>,
    /// Absolute cumulative transition count at the end of each stored episode.
    cum_ends: VecDeque<u64>,
    base: u64,
    capacity: usize,
    stored: usize,
    next_id: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> ReplayBuffer {
        ReplayBuffer {
            episodes: VecDeque::new(),
            cum_ends: VecDeque::new(),
            base: 0,
            capacity,
            stored: 0,
            next_id: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.stored
    }

    pub fn is_empty(&self) -> bool {
        self.stored == 0
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn num_episodes(&self) -> usize {
        self.episodes.len()
    }

    pub fn episodes(&self) -> impl Iterator<Item = &EpisodeRecord> {
        self.episodes.iter()
    }

    pub fn oldest_episode_id(&self) -> Option<u64> {
        self.episodes.front().map(|e| e.transitions[0].episode_id)
    }

    fn locate(&self, global_index: u64) -> (usize, usize) {
        // binary search over cumulative ends
        let target = self.base + global_index;
        let (mut lo, mut hi) = (0usize, self.cum_ends.len());
        while lo < hi {
            let mid = (lo + hi) / 2;
            if self.cum_ends[mid] <= target {
                lo = mid + 1;
            } else {
                hi = mid;
            }
        }
        let ep_start = if lo == 0 { self.base } else { self.cum_ends[lo - 1] };
        (lo, (target - ep_start) as usize)
    }
}

/// Validates and appends one episode, assigning it the next sequential id and
/// evicting oldest episodes while over capacity.
pub fn store_episode(buffer: &mut ReplayBuffer, mut episode: EpisodeRecord) -> Result<u64> {
    episode.validate()?;
    let id = buffer.next_id;
    buffer.next_id += 1;
    for tr in &mut episode.transitions {
        tr.episode_id = id;
    }
    buffer.stored += episode.len();
    let last_end = buffer.cum_ends.back().copied().unwrap_or(buffer.base);
    buffer.cum_ends.push_back(last_end + episode.len() as u64);
    buffer.episodes.push_back(episode);
    while buffer.stored > buffer.capacity {
        let dropped = buffer.episodes.pop_front().expect("stored > 0 implies episodes");
        buffer.cum_ends.pop_front();
        buffer.base += dropped.len() as u64;
        buffer.stored -= dropped.len();
    }
    Ok(id)
}

/// Copy of transition `t` with the goal replaced by the achieved goal of a
/// uniformly drawn strictly-later observation of the same episode. The mask
/// is preserved.
pub fn her_substitute(episode: &EpisodeRecord, t: usize, rng: &mut ChaCha8Rng) -> Result<Transition> {
    let len = episode.transitions.len();
    if t >= len {
        return Err(Error::Index(format!("t={t} in an episode of length {len}")));
    }
    let l = rng.gen_range(1..=(len - t) as u32) as usize;
    // o_{t+l} is the post-step observation of transition t+l-1
    let future = &episode.transitions[t + l - 1].obs_next;
    let mut out = episode.transitions[t].clone();
    out.goal = env::achieved_goal(future, episode.tag);
    Ok(out)
}

/// Sparse masked reward of a transition, always evaluated against `obs_next`.
pub fn recompute_reward(transition: &Transition, eps: f64) -> Result<f64> {
    let achieved: Vec<f64> = transition.obs_next.block[..transition.goal.len()].to_vec();
    env::reward(&achieved, &transition.goal, &transition.mask, eps)
}

/// One sampled batch element: the (possibly relabeled) transition and its
/// recomputed reward.
#[derive(Debug, Clone)]
pub struct SampledTransition {
    pub transition: Transition,
    pub reward: f64,
    pub relabeled: bool,
}

/// Uniformly samples transitions; each is independently hindsight-relabeled
/// with probability k/(k+1). Every reward is recomputed, relabeled or not.
pub fn sample_batch(
    buffer: &ReplayBuffer,
    batch_size: usize,
    her: &HERConfig,
    eps: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<SampledTransition>> {
    if buffer.is_empty() {
        return Err(Error::EmptyBuffer);
    }
    if batch_size == 0 {
        return Err(Error::Validation("batch_size must be > 0".into()));
    }
    let p_sub = her.substitution_probability();
    let mut out = Vec::with_capacity(batch_size);
    for _ in 0..batch_size {
        let idx = rng.gen_range(0..buffer.stored as u64);
        let (ep_idx, t) = buffer.locate(idx);
        let episode = &buffer.episodes[ep_idx];
        let relabeled = p_sub > 0.0 && rng.gen::<f64>() < p_sub;
        let transition = if relabeled {
            her_substitute(episode, t, rng)?
        } else {
            episode.transitions[t].clone()
        };
        let reward = recompute_reward(&transition, eps)?;
        out.push(SampledTransition { transition, reward, relabeled });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Snapshot file (resumable runs). Same numeric encoding as the network
// checkpoints: integers and f64 little-endian.
// ---------------------------------------------------------------------------

const BUF_MAGIC: &[u8; 6] = b"GMBUF1";

fn write_f64s<W: Write>(w: &mut W, xs: &[f64]) -> Result<()> {
    for x in xs {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn write_obs<W: Write>(w: &mut W, o: &Observation) -> Result<()> {
    write_f64s(w, &o.gripper)?;
    write_f64s(w, &o.block)?;
    write_f64s(w, &o.gripper_vel)?;
    write_f64s(w, &o.block_vel)?;
    write_f64s(w, &[o.grasp])
}

fn read_obs(r: &mut impl Read) -> Result<Observation> {
    let mut vals = [0.0f64; 13];
    for v in vals.iter_mut() {
        *v = read_f64(r)?;
    }
    Ok(Observation {
        gripper: [vals[0], vals[1], vals[2]],
        block: [vals[3], vals[4], vals[5]],
        gripper_vel: [vals[6], vals[7], vals[8]],
        block_vel: [vals[9], vals[10], vals[11]],
        grasp: vals[12],
    })
}

impl ReplayBuffer {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(BUF_MAGIC)?;
        w.write_all(&(self.capacity as u64).to_le_bytes())?;
        w.write_all(&self.next_id.to_le_bytes())?;
        w.write_all(&(self.episodes.len() as u64).to_le_bytes())?;
        for ep in &self.episodes {
            w.write_all(&[match ep.tag {
                EnvTag::PlanarPush => 0u8,
                EnvTag::LiftWorld => 1u8,
            }])?;
            let dim = ep.terminal_success.len() as u64;
            w.write_all(&dim.to_le_bytes())?;
            for &s in &ep.terminal_success {
                w.write_all(&[s as u8])?;
            }
            w.write_all(&(ep.transitions.len() as u64).to_le_bytes())?;
            for tr in &ep.transitions {
                write_obs(&mut w, &tr.obs)?;
                write_f64s(&mut w, &tr.goal)?;
                for &b in tr.mask.bits() {
                    w.write_all(&[b as u8])?;
                }
                write_f64s(&mut w, &tr.action.to_vec())?;
                write_obs(&mut w, &tr.obs_next)?;
                w.write_all(&tr.episode_id.to_le_bytes())?;
                w.write_all(&tr.t.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<ReplayBuffer> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 6];
        r.read_exact(&mut magic)?;
        if &magic != BUF_MAGIC {
            return Err(Error::Parse(format!("bad buffer snapshot magic in {path:?}")));
        }
        let capacity = read_u64(&mut r)? as usize;
        let next_id = read_u64(&mut r)?;
        let n_episodes = read_u64(&mut r)? as usize;
        let mut buffer = ReplayBuffer::new(capacity);
        let mut b1 = [0u8; 1];
        for _ in 0..n_episodes {
            r.read_exact(&mut b1)?;
            let tag = match b1[0] {
                0 => EnvTag::PlanarPush,
                1 => EnvTag::LiftWorld,
                other => return Err(Error::Parse(format!("bad env tag {other} in snapshot"))),
            };
            let dim = read_u64(&mut r)? as usize;
            let mut terminal = Vec::with_capacity(dim);
            for _ in 0..dim {
                r.read_exact(&mut b1)?;
                terminal.push(b1[0] != 0);
            }
            let n_tr = read_u64(&mut r)? as usize;
            let mut transitions = Vec::with_capacity(n_tr);
            for _ in 0..n_tr {
                let obs = read_obs(&mut r)?;
                let mut goal = Vec::with_capacity(dim);
                for _ in 0..dim {
                    goal.push(read_f64(&mut r)?);
                }
                let mut bits = Vec::with_capacity(dim);
                for _ in 0..dim {
                    r.read_exact(&mut b1)?;
                    bits.push(b1[0] != 0);
                }
                let mut act = [0.0f64; 4];
                for a in act.iter_mut() {
                    *a = read_f64(&mut r)?;
                }
                let obs_next = read_obs(&mut r)?;
                let episode_id = read_u64(&mut r)?;
                let mut b4 = [0u8; 4];
                r.read_exact(&mut b4)?;
                let t = u32::from_le_bytes(b4);
                transitions.push(Transition {
                    obs,
                    goal,
                    mask: GoalMask::from_bits(&bits),
                    action: Action { delta: [act[0], act[1], act[2]], grasp: act[3] },
                    obs_next,
                    episode_id,
                    t,
                });
            }
            let ep = EpisodeRecord { tag, transitions, terminal_success: terminal };
            ep.validate()
                .map_err(|e| Error::Parse(format!("invalid episode in snapshot: {e}")))?;
            buffer.stored += ep.len();
            let last_end = buffer.cum_ends.back().copied().unwrap_or(buffer.base);
            buffer.cum_ends.push_back(last_end + ep.len() as u64);
            buffer.episodes.push_back(ep);
        }
        buffer.next_id = next_id;
        Ok(buffer)
    }
}
