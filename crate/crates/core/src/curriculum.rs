//! Goal-mask curriculum: mask enumeration, masking, per-subgoal success
//! tracking, product-form difficulty estimation, and difficulty-targeted
//! mask sampling.

use std::collections::VecDeque;
use std::fmt;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::env::Goal;
use crate::error::{Error, Result};

/// Binary vector selecting which goal dimensions must be achieved. A 1 bit
/// means the dimension counts; a 0 bit treats it as already achieved.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GoalMask(Vec<bool>);

impl GoalMask {
    pub fn from_bits(bits: &[bool]) -> GoalMask {
        GoalMask(bits.to_vec())
    }

    pub fn all_ones(n: usize) -> GoalMask {
        GoalMask(vec![true; n])
    }

    pub fn all_zeros(n: usize) -> GoalMask {
        GoalMask(vec![false; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn bits(&self) -> &[bool] {
        &self.0
    }

    pub fn is_all_zero(&self) -> bool {
        self.0.iter().all(|&b| !b)
    }

    /// Bit-string form, dimension 0 first: `(1,1,0)` prints as `"110"`.
    pub fn bit_string(&self) -> String {
        self.0.iter().map(|&b| if b { '1' } else { '0' }).collect()
    }

    pub fn from_bit_string(s: &str) -> Result<GoalMask> {
        let bits: Result<Vec<bool>> = s
            .chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(Error::Parse(format!("bad mask character {other:?} in {s:?}"))),
            })
            .collect();
        Ok(GoalMask(bits?))
    }
}

impl fmt::Display for GoalMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.bit_string())
    }
}

/// All 2^n masks in binary counting order (the bit-string of mask k is k in
/// binary), optionally without the all-zero mask.
pub fn enumerate_masks(n: usize, include_zero: bool) -> Result<Vec<GoalMask>> {
    if n == 0 || n > 16 {
        return Err(Error::Config(format!("mask dimension must be in 1..=16, got {n}")));
    }
    let start = if include_zero { 0u32 } else { 1u32 };
    let mut masks = Vec::with_capacity((1usize << n) - start as usize);
    for k in start..(1u32 << n) {
        let bits: Vec<bool> = (0..n).map(|i| (k >> (n - 1 - i)) & 1 == 1).collect();
        masks.push(GoalMask(bits));
    }
    Ok(masks)
}

/// Masked goal: keeps goal elements where the mask is 1 and substitutes the
/// currently achieved value where it is 0. Pure.
pub fn apply_mask(goal: &[f64], achieved: &[f64], mask: &GoalMask) -> Result<Goal> {
    if goal.len() != achieved.len() || goal.len() != mask.len() {
        return Err(Error::Shape(format!(
            "apply_mask lengths disagree: goal {}, achieved {}, mask {}",
            goal.len(),
            achieved.len(),
            mask.len()
        )));
    }
    Ok(goal
        .iter()
        .zip(achieved)
        .zip(mask.bits())
        .map(|((g, a), &keep)| if keep { *g } else { *a })
        .collect())
}

/// Sliding window of per-dimension evaluation successes.
#[derive(Debug, Clone)]
pub struct SuccessTracker {
    window: usize,
    buffers: Vec<VecDeque<bool>>,
}

impl SuccessTracker {
    pub fn new(dims: usize, window: usize) -> SuccessTracker {
        SuccessTracker {
            window,
            buffers: (0..dims).map(|_| VecDeque::with_capacity(window)).collect(),
        }
    }

    pub fn dims(&self) -> usize {
        self.buffers.len()
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn samples(&self) -> usize {
        self.buffers.first().map_or(0, |b| b.len())
    }

    /// Success rate of one dimension over the stored window; 0 when empty.
    pub fn rate(&self, dim: usize) -> f64 {
        let b = &self.buffers[dim];
        if b.is_empty() {
            0.0
        } else {
            b.iter().filter(|&&s| s).count() as f64 / b.len() as f64
        }
    }

    pub fn rates(&self) -> Vec<f64> {
        (0..self.dims()).map(|d| self.rate(d)).collect()
    }
}

/// Pushes one evaluation outcome per dimension, evicting beyond the window.
pub fn record_evaluation(tracker: &mut SuccessTracker, per_dim_success: &[bool]) -> Result<()> {
    if per_dim_success.len() != tracker.dims() {
        return Err(Error::Shape(format!(
            "recorded {} dims into a {}-dim tracker",
            per_dim_success.len(),
            tracker.dims()
        )));
    }
    for (buf, &s) in tracker.buffers.iter_mut().zip(per_dim_success) {
        if buf.len() == tracker.window {
            buf.pop_front();
        }
        buf.push_back(s);
    }
    Ok(())
}

/// Estimated success chance of a mask: product of the per-dimension rates
/// over unmasked dimensions (conditional-independence assumption). The empty
/// product, i.e. the all-zero mask, is 1.
pub fn estimate_mask_success(tracker: &SuccessTracker, mask: &GoalMask) -> Result<f64> {
    if mask.len() != tracker.dims() {
        return Err(Error::Shape(format!(
            "mask has {} dims, tracker has {}",
            mask.len(),
            tracker.dims()
        )));
    }
    Ok(mask
        .bits()
        .iter()
        .enumerate()
        .filter(|(_, &unmasked)| unmasked)
        .map(|(i, _)| tracker.rate(i))
        .product())
}

/// How raw sampling weights are computed from |c_m - c_g|.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplingForm {
    /// w = (1 - |c_m - c_g|)^kappa: concentrates on masks whose estimated
    /// success is near the target. Default.
    Proximity,
    /// w = |c_m - c_g|^kappa: the formula taken literally, which favors
    /// masks far from the target as kappa grows. Kept for comparison runs.
    Literal,
}

impl SamplingForm {
    pub fn parse(s: &str) -> Result<SamplingForm> {
        match s {
            "proximity" => Ok(SamplingForm::Proximity),
            "literal" => Ok(SamplingForm::Literal),
            other => Err(Error::Config(format!(
                "unknown sampling form {other:?} (expected proximity or literal)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SamplingForm::Proximity => "proximity",
            SamplingForm::Literal => "literal",
        }
    }
}

/// Mask-sampling parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurriculumConfig {
    /// Target success chance c_g in [0, 1].
    pub target_success: f64,
    /// Sharpness exponent kappa > 0 (0 degenerates to uniform).
    pub sharpness: f64,
    pub form: SamplingForm,
    pub include_zero_mask: bool,
}

impl Default for CurriculumConfig {
    fn default() -> Self {
        CurriculumConfig {
            target_success: 0.1,
            sharpness: 32.0,
            form: SamplingForm::Proximity,
            include_zero_mask: false,
        }
    }
}

impl CurriculumConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.target_success) {
            return Err(Error::Config(format!(
                "target success chance must be in [0, 1], got {}",
                self.target_success
            )));
        }
        if self.sharpness < 0.0 || !self.sharpness.is_finite() {
            return Err(Error::Config(format!(
                "sharpness must be finite and >= 0, got {}",
                self.sharpness
            )));
        }
        Ok(())
    }
}

/// Normalized sampling weights for the given masks. Falls back to uniform
/// when every raw weight underflows.
pub fn mask_weights(
    tracker: &SuccessTracker,
    masks: &[GoalMask],
    cfg: &CurriculumConfig,
) -> Result<Vec<f64>> {
    if masks.is_empty() {
        return Err(Error::Config("mask_weights needs at least one mask".into()));
    }
    cfg.validate()?;
    let mut raw = Vec::with_capacity(masks.len());
    for m in masks {
        let c_m = estimate_mask_success(tracker, m)?;
        let gap = (c_m - cfg.target_success).abs();
        let w = match cfg.form {
            SamplingForm::Proximity => (1.0 - gap).powf(cfg.sharpness),
            SamplingForm::Literal => gap.powf(cfg.sharpness),
        };
        raw.push(w);
    }
    if raw.iter().all(|&w| w < 1e-12) {
        return Ok(vec![1.0 / masks.len() as f64; masks.len()]);
    }
    let sum: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|w| w / sum).collect())
}

/// Categorical draw over masks by normalized weights.
pub fn sample_mask<'a>(
    weights: &[f64],
    masks: &'a [GoalMask],
    rng: &mut ChaCha8Rng,
) -> Result<&'a GoalMask> {
    if weights.len() != masks.len() {
        return Err(Error::Shape(format!(
            "{} weights for {} masks",
            weights.len(),
            masks.len()
        )));
    }
    if masks.is_empty() {
        return Err(Error::Config("sample_mask needs at least one mask".into()));
    }
    let u: f64 = rng.gen();
    let mut cum = 0.0;
    for (w, m) in weights.iter().zip(masks) {
        cum += w;
        if u < cum {
            return Ok(m);
        }
    }
    Ok(masks.last().unwrap())
}
