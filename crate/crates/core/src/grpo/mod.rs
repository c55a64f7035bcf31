//! Group-relative clipped policy optimisation.
//!
//! For a group of `G` trajectories sampled for the same query,
//!
//! ```text
//! J = 1/G · Σ_i 1/T_i · Σ_t min(ρ_it · Â_i, clip(ρ_it, 1-ε, 1+ε) · Â_i)
//! ρ_it = π_θ(a_it | s_it) / π_old(a_it | s_it)
//! Â_i  = (r_i - mean r) / std r        (population std)
//! ```
//!
//! There is no KL term. Advantages are constants with respect to θ. The
//! per-trajectory `1/T_i` weighting can be swapped for a flat mean over all
//! tokens of the group with [`Aggregation::TokenMean`].
//!
//! [`ToyPolicy`] is a tabular softmax policy whose gradient is available in
//! closed form; it exists so the objective can be checked against finite
//! differences and exercised in [`toy`] training runs.

pub mod toy;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GrpoError {
    #[error("a group needs at least 2 trajectories, got {0}")]
    GroupTooSmall(usize),
    #[error("length mismatch: {new} new log-probs vs {old} old log-probs")]
    LengthMismatch { new: usize, old: usize },
    #[error("trajectory {0} has no tokens")]
    EmptyTrajectory(usize),
    #[error("non-finite value in trajectory {trajectory}: {what}")]
    NonFinite { trajectory: usize, what: &'static str },
    #[error("token ({context}, {token}) is outside the policy table")]
    OutOfRange { context: usize, token: usize },
    #[error("invalid clip config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// `1/G Σ_i 1/T_i Σ_t`: each trajectory weighs the same.
    #[default]
    SequenceMean,
    /// `1/Σ T_i Σ_i Σ_t`: each token weighs the same.
    TokenMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClipConfig {
    pub epsilon: f64,
    pub std_floor: f64,
    #[serde(default)]
    pub aggregation: Aggregation,
}

impl Default for ClipConfig {
    fn default() -> Self {
        Self { epsilon: 0.2, std_floor: 1e-8, aggregation: Aggregation::SequenceMean }
    }
}

impl ClipConfig {
    pub fn check(&self) -> Result<(), GrpoError> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(GrpoError::Config(format!("epsilon {} not in (0, 1)", self.epsilon)));
        }
        if self.std_floor.is_nan() || self.std_floor < 0.0 {
            return Err(GrpoError::Config("std_floor must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Z-scores of the group rewards. A group whose population standard
/// deviation is below `std_floor` carries no signal and gets all zeros.
pub fn normalize_advantages(rewards: &[f64], std_floor: f64) -> Result<Vec<f64>, GrpoError> {
    if rewards.len() < 2 {
        return Err(GrpoError::GroupTooSmall(rewards.len()));
    }
    if let Some(i) = rewards.iter().position(|r| !r.is_finite()) {
        return Err(GrpoError::NonFinite { trajectory: i, what: "reward" });
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < std_floor || std == 0.0 {
        return Ok(vec![0.0; rewards.len()]);
    }
    Ok(rewards.iter().map(|r| (r - mean) / std).collect())
}

pub fn token_ratios(logp_new: &[f64], logp_old: &[f64]) -> Result<Vec<f64>, GrpoError> {
    if logp_new.len() != logp_old.len() {
        return Err(GrpoError::LengthMismatch { new: logp_new.len(), old: logp_old.len() });
    }
    Ok(logp_new.iter().zip(logp_old).map(|(n, o)| (n - o).exp()).collect())
}

/// `min(ρ·A, clip(ρ, 1-ε, 1+ε)·A)` for one token.
pub fn clipped_surrogate(ratio: f64, advantage: f64, epsilon: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - epsilon, 1.0 + epsilon);
    (ratio * advantage).min(clipped * advantage)
}

/// Whether the unclipped branch is the active one, i.e. the token passes
/// gradient. Zero advantages never do.
pub fn unclipped_active(ratio: f64, advantage: f64, epsilon: f64) -> bool {
    if advantage > 0.0 {
        ratio <= 1.0 + epsilon
    } else if advantage < 0.0 {
        ratio >= 1.0 - epsilon
    } else {
        false
    }
}

/// Tabular softmax policy: one row of logits per context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyPolicy {
    pub contexts: usize,
    pub vocab: usize,
    /// Row-major `contexts × vocab` logits.
    pub theta: Vec<f64>,
}

impl ToyPolicy {
    pub fn zeros(contexts: usize, vocab: usize) -> Self {
        Self { contexts, vocab, theta: vec![0.0; contexts * vocab] }
    }

    pub fn random(contexts: usize, vocab: usize, scale: f64, rng: &mut impl Rng) -> Self {
        let theta = (0..contexts * vocab).map(|_| rng.random_range(-scale..scale)).collect();
        Self { contexts, vocab, theta }
    }

    pub fn row(&self, context: usize) -> &[f64] {
        &self.theta[context * self.vocab..(context + 1) * self.vocab]
    }

    pub fn log_probs(&self, context: usize) -> Vec<f64> {
        let row = self.row(context);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        row.iter().map(|x| x - lse).collect()
    }

    pub fn probs(&self, context: usize) -> Vec<f64> {
        self.log_probs(context).into_iter().map(f64::exp).collect()
    }

    pub fn log_prob(&self, context: usize, token: usize) -> f64 {
        self.log_probs(context)[token]
    }

    pub fn sample(&self, context: usize, rng: &mut impl Rng) -> usize {
        let p = self.probs(context);
        let mut u: f64 = rng.random();
        for (i, pi) in p.iter().enumerate() {
            if u < *pi {
                return i;
            }
            u -= pi;
        }
        self.vocab - 1
    }

    pub fn argmax(&self, context: usize) -> usize {
        let row = self.row(context);
        (0..self.vocab).fold(0, |best, i| if row[i] > row[best] { i } else { best })
    }

    fn check(&self, context: usize, token: usize) -> Result<(), GrpoError> {
        if context >= self.contexts || token >= self.vocab {
            return Err(GrpoError::OutOfRange { context, token });
        }
        Ok(())
    }
}

/// One sampled trajectory: its reward and the (context, token) decisions
/// with their log-probabilities under the sampling policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub reward: f64,
    pub steps: Vec<(usize, usize)>,
    pub logp_old: Vec<f64>,
}

impl Trajectory {
    pub fn sampled_from(policy: &ToyPolicy, reward: f64, steps: Vec<(usize, usize)>) -> Self {
        let logp_old = steps.iter().map(|&(c, t)| policy.log_prob(c, t)).collect();
        Self { reward, steps, logp_old }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveOutput {
    pub value: f64,
    /// Same layout as [`ToyPolicy::theta`].
    pub gradient: Vec<f64>,
    pub advantages: Vec<f64>,
    /// Fraction of tokens whose clipped branch was active.
    pub clip_fraction: f64,
}

/// Objective and exact gradient at `policy` for a group sampled from an
/// older policy.
pub fn grpo_objective(group: &[Trajectory], policy: &ToyPolicy, clip: &ClipConfig) -> Result<ObjectiveOutput, GrpoError> {
    let rewards: Vec<f64> = group.iter().map(|t| t.reward).collect();
    let advantages = normalize_advantages(&rewards, clip.std_floor)?;
    objective_with_advantages(group, &advantages, policy, clip)
}

/// Same as [`grpo_objective`] with advantages supplied by the caller.
pub fn objective_with_advantages(
    group: &[Trajectory],
    advantages: &[f64],
    policy: &ToyPolicy,
    clip: &ClipConfig,
) -> Result<ObjectiveOutput, GrpoError> {
    clip.check()?;
    if group.len() < 2 {
        return Err(GrpoError::GroupTooSmall(group.len()));
    }
    let total_tokens: usize = group.iter().map(|t| t.steps.len()).sum();
    let mut value = 0.0;
    let mut gradient = vec![0.0; policy.theta.len()];
    let mut clipped = 0usize;
    let cached: Vec<Vec<f64>> = (0..policy.contexts).map(|c| policy.log_probs(c)).collect();

    for (i, (traj, &adv)) in group.iter().zip(advantages).enumerate() {
        if traj.steps.is_empty() {
            return Err(GrpoError::EmptyTrajectory(i));
        }
        if traj.logp_old.len() != traj.steps.len() {
            return Err(GrpoError::LengthMismatch { new: traj.steps.len(), old: traj.logp_old.len() });
        }
        let weight = match clip.aggregation {
            Aggregation::SequenceMean => 1.0 / (group.len() as f64 * traj.steps.len() as f64),
            Aggregation::TokenMean => 1.0 / total_tokens as f64,
        };
        for (&(c, tok), &old) in traj.steps.iter().zip(&traj.logp_old) {
            policy.check(c, tok)?;
            if !old.is_finite() {
                return Err(GrpoError::NonFinite { trajectory: i, what: "old log-prob" });
            }
            let ratio = (cached[c][tok] - old).exp();
            if !ratio.is_finite() {
                return Err(GrpoError::NonFinite { trajectory: i, what: "ratio" });
            }
            value += weight * clipped_surrogate(ratio, adv, clip.epsilon);
            if unclipped_active(ratio, adv, clip.epsilon) {
                // d ρ / d θ[c, k] = ρ · (1[k = tok] - π(k | c))
                let scale = weight * adv * ratio;
                let row = &mut gradient[c * policy.vocab..(c + 1) * policy.vocab];
                for (k, g) in row.iter_mut().enumerate() {
                    let indicator = if k == tok { 1.0 } else { 0.0 };
                    *g += scale * (indicator - cached[c][k].exp());
                }
            } else if adv != 0.0 {
                clipped += 1;
            }
        }
    }
    Ok(ObjectiveOutput {
        value,
        gradient,
        advantages: advantages.to_vec(),
        clip_fraction: if total_tokens == 0 { 0.0 } else { clipped as f64 / total_tokens as f64 },
    })
}
