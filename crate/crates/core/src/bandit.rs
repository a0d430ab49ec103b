//! Contextual bandit with explicit propensities and doubly-robust updates.
//!
//! A [`BanditCore`] owns one or more per-arm reward scorers
//! ([`PolicyModel`]), a seeded exploration stream, and a selection
//! strategy. Two strategies are provided:
//!
//! - **epsilon-greedy** — exploit the argmax of the base scorer with
//!   probability `1 - ε`, otherwise pick uniformly; the reported
//!   propensity is `1 - ε + ε/k` for the greedy arm and `ε/k` otherwise.
//! - **cover** — maintain `m` scorers trained toward diversified targets;
//!   with probability `1 - ε` follow a uniformly chosen policy's argmax.
//!   The propensity of arm `a` is `ε/k + (1 - ε)·|{j : argmax_j = a}|/m`,
//!   so every arm keeps the `ε/k` floor.
//!
//! Updates are off-policy regressions toward doubly-robust targets
//! ([`dr_targets`]): the taken arm's target inflates the residual by the
//! inverse propensity, all other arms regress toward their own current
//! prediction and therefore receive zero gradient. Gradient steps are
//! normalised by `max(1, ‖c‖²)` so large contexts cannot destabilise the
//! constant learning rate.
//!
//! Determinism: selection consumes draws only from the core's own stream,
//! model initialisation uses a separate derived stream, and
//! [`BanditCore::snapshot`] captures weights plus the exact stream
//! position as canonical bytes — `load` resumes bit-for-bit.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::context::ContextVector;
use crate::rng::{RngCheckpoint, SeededStream};

/// Hidden width of the optional MLP scorer.
pub const MLP_HIDDEN: usize = 16;

/// Reward bonus numerator used by cover's diversity targets.
const COVER_BONUS: f64 = 0.1;

/// Snapshot schema emitted by this version of the core.
pub const SNAPSHOT_SCHEMA: u32 = 1;

/// Stream-id perturbation for weight-initialisation draws, keeping them
/// off the decision stream.
const INIT_STREAM_XOR: u64 = 0x9e37_79b9_7f4a_7c15;

// ───────────────────────── errors ─────────────────────────

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BanditError {
    #[error("context dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("action index {index} out of range for {arms} arms")]
    ActionOutOfRange { index: usize, arms: usize },
    #[error("propensity must lie in (0, 1], got {0}")]
    InvalidPropensity(f64),
    #[error("reward must be finite, got {0}")]
    NonFiniteReward(f64),
    #[error("invalid bandit configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SnapshotError {
    #[error("unsupported snapshot schema {got}, this build reads schema {expected}")]
    SchemaMismatch { expected: u32, got: u32 },
    #[error("corrupt snapshot payload: {0}")]
    Corrupt(String),
    #[error("snapshot weights do not match the declared configuration")]
    ShapeMismatch,
}

// ───────────────────────── configuration ─────────────────────────

/// Which per-arm scorer the bandit trains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScorerKind {
    /// Per-arm linear model (dot product, no bias term). Zero-initialised.
    Linear,
    /// Per-arm one-hidden-layer ReLU network with [`MLP_HIDDEN`] units.
    /// Weights start uniform in [-0.05, 0.05] from a seeded stream.
    Mlp,
}

/// Exploration strategy plus its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "snake_case")]
pub enum ExplorationConfig {
    EpsilonGreedy { epsilon: f64 },
    Cover { policies: usize, epsilon: f64 },
}

impl ExplorationConfig {
    pub fn epsilon(&self) -> f64 {
        match *self {
            ExplorationConfig::EpsilonGreedy { epsilon } => epsilon,
            ExplorationConfig::Cover { epsilon, .. } => epsilon,
        }
    }

    /// Number of scorers the strategy maintains (1 unless covering).
    pub fn policy_count(&self) -> usize {
        match *self {
            ExplorationConfig::EpsilonGreedy { .. } => 1,
            ExplorationConfig::Cover { policies, .. } => policies,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BanditConfig {
    /// Number of arms `k`.
    pub arms: usize,
    /// Context dimension `n`.
    pub dim: usize,
    pub scorer: ScorerKind,
    /// Constant learning rate for every gradient step.
    pub learning_rate: f64,
    pub exploration: ExplorationConfig,
    /// Seed shared by the decision and initialisation streams.
    pub seed: u64,
    /// Stream id of the decision stream.
    pub stream: u64,
}

impl BanditConfig {
    fn validate(&self) -> Result<(), BanditError> {
        if self.arms == 0 {
            return Err(BanditError::InvalidConfig("arms must be >= 1".into()));
        }
        if self.dim == 0 {
            return Err(BanditError::InvalidConfig("dim must be >= 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(BanditError::InvalidConfig(format!(
                "learning rate must be finite and positive, got {}",
                self.learning_rate
            )));
        }
        let eps = self.exploration.epsilon();
        if !(eps.is_finite() && (0.0..=1.0).contains(&eps)) {
            return Err(BanditError::InvalidConfig(format!(
                "epsilon must lie in [0, 1], got {eps}"
            )));
        }
        if self.exploration.policy_count() == 0 {
            return Err(BanditError::InvalidConfig(
                "cover needs at least one policy".into(),
            ));
        }
        Ok(())
    }
}

// ───────────────────────── observations ─────────────────────────

/// Index of one arm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActionId(pub usize);

/// One unit of feedback: the context seen, the arm taken, the reward
/// received, and the propensity with which the selector took that arm.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub context: ContextVector,
    pub action: ActionId,
    pub reward: f64,
    pub propensity: f64,
}

/// Outcome of a selection: the arm plus the probability the configured
/// strategy had of picking exactly that arm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Selection {
    pub action: ActionId,
    pub propensity: f64,
}

// ───────────────────────── scorers ─────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct MlpArm {
    /// Hidden weights, row-major `[MLP_HIDDEN] × [dim]`.
    w1: Vec<f64>,
    b1: Vec<f64>,
    /// Output weights, length [`MLP_HIDDEN`].
    w2: Vec<f64>,
    b2: f64,
}

impl MlpArm {
    fn forward(&self, c: &[f64], hidden: &mut [f64]) -> f64 {
        let dim = c.len();
        let mut out = self.b2;
        for h in 0..MLP_HIDDEN {
            let row = &self.w1[h * dim..(h + 1) * dim];
            let mut pre = self.b1[h];
            for (w, x) in row.iter().zip(c) {
                pre += w * x;
            }
            let act = if pre > 0.0 { pre } else { 0.0 };
            hidden[h] = act;
            out += self.w2[h] * act;
        }
        out
    }
}

/// Per-arm weights of one policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Weights {
    /// `arms[a]` is arm `a`'s weight vector (length = context dimension).
    Linear { arms: Vec<Vec<f64>> },
    Mlp { arms: Vec<MlpArm> },
}

/// One reward scorer: predicts a score per arm and takes normalised
/// gradient steps toward supplied per-arm targets.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyModel {
    dim: usize,
    learning_rate: f64,
    weights: Weights,
}

impl PolicyModel {
    /// Zero-initialised linear scorer.
    pub fn new_linear(arms: usize, dim: usize, learning_rate: f64) -> Self {
        Self {
            dim,
            learning_rate,
            weights: Weights::Linear {
                arms: vec![vec![0.0; dim]; arms],
            },
        }
    }

    /// Linear scorer with explicit weights (one vector per arm).
    pub fn with_linear_weights(
        arms: Vec<Vec<f64>>,
        learning_rate: f64,
    ) -> Result<Self, BanditError> {
        let dim = arms.first().map(Vec::len).unwrap_or(0);
        if dim == 0 || arms.iter().any(|w| w.len() != dim) {
            return Err(BanditError::InvalidConfig(
                "linear weights must be non-empty and uniform in length".into(),
            ));
        }
        Ok(Self {
            dim,
            learning_rate,
            weights: Weights::Linear { arms },
        })
    }

    /// MLP scorer with hidden weights drawn uniformly from
    /// [-0.05, 0.05] off `init`; biases start at zero.
    fn new_mlp(arms: usize, dim: usize, learning_rate: f64, init: &mut SeededStream) -> Self {
        let mut make_arm = |_| MlpArm {
            w1: (0..MLP_HIDDEN * dim)
                .map(|_| init.rng().random_range(-0.05..=0.05))
                .collect(),
            b1: vec![0.0; MLP_HIDDEN],
            w2: (0..MLP_HIDDEN)
                .map(|_| init.rng().random_range(-0.05..=0.05))
                .collect(),
            b2: 0.0,
        };
        Self {
            dim,
            learning_rate,
            weights: Weights::Mlp {
                arms: (0..arms).map(&mut make_arm).collect(),
            },
        }
    }

    pub fn arms(&self) -> usize {
        match &self.weights {
            Weights::Linear { arms } => arms.len(),
            Weights::Mlp { arms } => arms.len(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Scores every arm on `context`.
    pub fn predict(&self, context: &ContextVector) -> Result<Vec<f64>, BanditError> {
        let c = context.values();
        if c.len() != self.dim {
            return Err(BanditError::DimensionMismatch {
                expected: self.dim,
                got: c.len(),
            });
        }
        Ok(match &self.weights {
            Weights::Linear { arms } => arms
                .iter()
                .map(|w| w.iter().zip(c).map(|(wi, xi)| wi * xi).sum())
                .collect(),
            Weights::Mlp { arms } => {
                let mut hidden = [0.0; MLP_HIDDEN];
                arms.iter().map(|a| a.forward(c, &mut hidden)).collect()
            }
        })
    }

    /// One gradient step per arm toward `targets`; arms whose residual is
    /// already zero are left untouched. Steps are scaled by
    /// `learning_rate / max(1, ‖c‖²)`.
    fn step_toward(&mut self, context: &ContextVector, targets: &[f64]) {
        let c = context.values();
        let norm_sq: f64 = c.iter().map(|x| x * x).sum();
        let scale = self.learning_rate / norm_sq.max(1.0);
        match &mut self.weights {
            Weights::Linear { arms } => {
                for (w, &target) in arms.iter_mut().zip(targets) {
                    let pred: f64 = w.iter().zip(c).map(|(wi, xi)| wi * xi).sum();
                    let residual = target - pred;
                    if residual == 0.0 {
                        continue;
                    }
                    let step = scale * residual;
                    for (wi, xi) in w.iter_mut().zip(c) {
                        *wi += step * xi;
                    }
                }
            }
            Weights::Mlp { arms } => {
                let mut hidden = [0.0; MLP_HIDDEN];
                for (arm, &target) in arms.iter_mut().zip(targets) {
                    let pred = arm.forward(c, &mut hidden);
                    let residual = target - pred;
                    if residual == 0.0 {
                        continue;
                    }
                    let out_step = scale * residual;
                    for h in 0..MLP_HIDDEN {
                        if hidden[h] > 0.0 {
                            let dh = out_step * arm.w2[h];
                            let row = &mut arm.w1[h * self.dim..(h + 1) * self.dim];
                            for (wi, xi) in row.iter_mut().zip(c) {
                                *wi += dh * xi;
                            }
                            arm.b1[h] += dh;
                        }
                        arm.w2[h] += out_step * hidden[h];
                    }
                    arm.b2 += out_step;
                }
            }
        }
    }
}

/// Index of the highest score; ties resolve to the lowest index.
fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

// ───────────────────────── doubly-robust targets ─────────────────────────

/// Builds the per-arm regression targets for one observation.
///
/// The taken arm's target is `prediction + (reward - prediction) /
/// propensity`; every other arm's target is its own current prediction,
/// so only the taken arm produces a gradient. With propensity 1 the taken
/// arm's target is exactly the observed reward.
pub fn dr_targets(obs: &Observation, predicted: &[f64]) -> Result<Vec<f64>, BanditError> {
    if !(obs.propensity > 0.0 && obs.propensity <= 1.0) {
        return Err(BanditError::InvalidPropensity(obs.propensity));
    }
    if !obs.reward.is_finite() {
        return Err(BanditError::NonFiniteReward(obs.reward));
    }
    let a = obs.action.0;
    if a >= predicted.len() {
        return Err(BanditError::ActionOutOfRange {
            index: a,
            arms: predicted.len(),
        });
    }
    let mut targets = predicted.to_vec();
    targets[a] = if obs.propensity == 1.0 {
        obs.reward
    } else {
        predicted[a] + (obs.reward - predicted[a]) / obs.propensity
    };
    Ok(targets)
}

// ───────────────────────── the core ─────────────────────────

/// Snapshot document: everything needed to resume a [`BanditCore`]
/// bit-for-bit, in a self-describing schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BanditSnapshot {
    schema: u32,
    config: BanditConfig,
    rng: RngCheckpoint,
    policies: Vec<PolicySnapshot>,
}

impl BanditSnapshot {
    pub fn config(&self) -> &BanditConfig {
        &self.config
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PolicySnapshot {
    weights: Weights,
}

/// A contextual bandit: scorers + exploration stream + strategy.
#[derive(Debug, Clone)]
pub struct BanditCore {
    config: BanditConfig,
    policies: Vec<PolicyModel>,
    rng: SeededStream,
}

impl BanditCore {
    /// Builds a fresh core: zero linear weights or seeded MLP weights,
    /// exploration stream at position zero.
    pub fn new(config: BanditConfig) -> Result<Self, BanditError> {
        config.validate()?;
        let mut init = SeededStream::new(config.seed, config.stream ^ INIT_STREAM_XOR);
        let policies = (0..config.exploration.policy_count())
            .map(|_| match config.scorer {
                ScorerKind::Linear => {
                    PolicyModel::new_linear(config.arms, config.dim, config.learning_rate)
                }
                ScorerKind::Mlp => {
                    PolicyModel::new_mlp(config.arms, config.dim, config.learning_rate, &mut init)
                }
            })
            .collect();
        Ok(Self {
            rng: SeededStream::new(config.seed, config.stream),
            config,
            policies,
        })
    }

    pub fn config(&self) -> &BanditConfig {
        &self.config
    }

    pub fn arms(&self) -> usize {
        self.config.arms
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    /// The base policy's scores for `context`.
    pub fn predictions(&self, context: &ContextVector) -> Result<Vec<f64>, BanditError> {
        self.policies[0].predict(context)
    }

    /// Arm the base policy would exploit (ties → lowest index).
    pub fn greedy_action(&self, context: &ContextVector) -> Result<ActionId, BanditError> {
        Ok(ActionId(argmax(&self.policies[0].predict(context)?)))
    }

    /// Picks an arm under the configured strategy and reports the exact
    /// probability of that pick.
    pub fn select(&mut self, context: &ContextVector) -> Result<Selection, BanditError> {
        match self.config.exploration {
            ExplorationConfig::EpsilonGreedy { epsilon } => {
                self.select_epsilon_greedy(context, epsilon)
            }
            ExplorationConfig::Cover { epsilon, .. } => self.select_cover(context, epsilon),
        }
    }

    fn select_epsilon_greedy(
        &mut self,
        context: &ContextVector,
        epsilon: f64,
    ) -> Result<Selection, BanditError> {
        let k = self.config.arms;
        let greedy = argmax(&self.policies[0].predict(context)?);
        let explore = epsilon > 0.0 && self.rng.rng().random::<f64>() < epsilon;
        let chosen = if explore {
            self.rng.rng().random_range(0..k)
        } else {
            greedy
        };
        let kf = k as f64;
        // `min(1.0)` guards the one-ulp overshoot the sum can produce for
        // adversarial ε; it is inert for the usual ε values.
        let propensity = if chosen == greedy {
            (1.0 - epsilon + epsilon / kf).min(1.0)
        } else {
            epsilon / kf
        };
        Ok(Selection {
            action: ActionId(chosen),
            propensity,
        })
    }

    fn select_cover(
        &mut self,
        context: &ContextVector,
        epsilon: f64,
    ) -> Result<Selection, BanditError> {
        let k = self.config.arms;
        let m = self.policies.len();
        let mut greedy_arms = Vec::with_capacity(m);
        for policy in &self.policies {
            greedy_arms.push(argmax(&policy.predict(context)?));
        }
        let explore = epsilon > 0.0 && self.rng.rng().random::<f64>() < epsilon;
        let chosen = if explore {
            self.rng.rng().random_range(0..k)
        } else {
            greedy_arms[self.rng.rng().random_range(0..m)]
        };
        let votes = greedy_arms.iter().filter(|&&g| g == chosen).count();
        // As above: the chosen arm always has at least one vote, so the sum
        // is positive, but it can round one ulp past 1 when every policy
        // agrees; clamp rather than hand `update` an impossible propensity.
        let propensity = (epsilon / k as f64
            + (1.0 - epsilon) * votes as f64 / m as f64)
            .min(1.0);
        Ok(Selection {
            action: ActionId(chosen),
            propensity,
        })
    }

    /// Applies one observation to every policy.
    ///
    /// Policy 0 regresses toward the plain doubly-robust targets. Each
    /// later cover policy `j` additionally adds `0.1 / propensity` to the
    /// targets of arms *not* preferred by any earlier policy (greedy arms
    /// evaluated on this context before any weights move), which pushes
    /// the cover apart.
    pub fn update(&mut self, obs: &Observation) -> Result<(), BanditError> {
        let c = &obs.context;
        if c.len() != self.config.dim {
            return Err(BanditError::DimensionMismatch {
                expected: self.config.dim,
                got: c.len(),
            });
        }
        if obs.action.0 >= self.config.arms {
            return Err(BanditError::ActionOutOfRange {
                index: obs.action.0,
                arms: self.config.arms,
            });
        }
        let m = self.policies.len();
        let mut greedy_arms = Vec::with_capacity(m);
        if m > 1 {
            for policy in &self.policies {
                greedy_arms.push(argmax(&policy.predict(c)?));
            }
        }
        let bonus = COVER_BONUS / obs.propensity;
        for j in 0..m {
            let predicted = self.policies[j].predict(c)?;
            let mut targets = dr_targets(obs, &predicted)?;
            if j > 0 {
                let earlier = &greedy_arms[..j];
                for (a, t) in targets.iter_mut().enumerate() {
                    if !earlier.contains(&a) {
                        *t += bonus;
                    }
                }
            }
            self.policies[j].step_toward(c, &targets);
        }
        Ok(())
    }

    /// Current position of the decision stream.
    pub fn rng_checkpoint(&self) -> RngCheckpoint {
        self.rng.checkpoint()
    }

    /// Structured snapshot of configuration, weights, and stream position.
    pub fn to_snapshot(&self) -> BanditSnapshot {
        BanditSnapshot {
            schema: SNAPSHOT_SCHEMA,
            config: self.config,
            rng: self.rng.checkpoint(),
            policies: self
                .policies
                .iter()
                .map(|p| PolicySnapshot {
                    weights: p.weights.clone(),
                })
                .collect(),
        }
    }

    /// Canonical snapshot bytes (JSON with fixed field order).
    pub fn snapshot(&self) -> Vec<u8> {
        serde_json::to_vec(&self.to_snapshot()).expect("bandit snapshot serialises")
    }

    /// Rebuilds a core from a structured snapshot, verifying schema and
    /// weight shapes against the embedded configuration.
    pub fn from_snapshot(doc: BanditSnapshot) -> Result<Self, SnapshotError> {
        if doc.schema != SNAPSHOT_SCHEMA {
            return Err(SnapshotError::SchemaMismatch {
                expected: SNAPSHOT_SCHEMA,
                got: doc.schema,
            });
        }
        let config = doc.config;
        config
            .validate()
            .map_err(|e| SnapshotError::Corrupt(format!("{e}")))?;
        if doc.policies.len() != config.exploration.policy_count() {
            return Err(SnapshotError::ShapeMismatch);
        }
        let mut policies = Vec::with_capacity(doc.policies.len());
        for p in doc.policies {
            let ok = match (&p.weights, config.scorer) {
                (Weights::Linear { arms }, ScorerKind::Linear) => {
                    arms.len() == config.arms && arms.iter().all(|w| w.len() == config.dim)
                }
                (Weights::Mlp { arms }, ScorerKind::Mlp) => {
                    arms.len() == config.arms
                        && arms.iter().all(|a| {
                            a.w1.len() == MLP_HIDDEN * config.dim
                                && a.b1.len() == MLP_HIDDEN
                                && a.w2.len() == MLP_HIDDEN
                        })
                }
                _ => false,
            };
            if !ok {
                return Err(SnapshotError::ShapeMismatch);
            }
            policies.push(PolicyModel {
                dim: config.dim,
                learning_rate: config.learning_rate,
                weights: p.weights,
            });
        }
        Ok(Self {
            rng: SeededStream::restore(&doc.rng),
            config,
            policies,
        })
    }

    /// Rebuilds a core from canonical snapshot bytes.
    pub fn load(bytes: &[u8]) -> Result<Self, SnapshotError> {
        let doc: BanditSnapshot = serde_json::from_slice(bytes)
            .map_err(|e| SnapshotError::Corrupt(format!("{e}")))?;
        Self::from_snapshot(doc)
    }

    #[cfg(test)]
    pub(crate) fn policy_mut(&mut self, j: usize) -> &mut PolicyModel {
        &mut self.policies[j]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn ctx(values: &[f64]) -> ContextVector {
        ContextVector::new(values.to_vec()).unwrap()
    }

    fn eps_config(arms: usize, dim: usize, epsilon: f64, lr: f64, seed: u64) -> BanditConfig {
        BanditConfig {
            arms,
            dim,
            scorer: ScorerKind::Linear,
            learning_rate: lr,
            exploration: ExplorationConfig::EpsilonGreedy { epsilon },
            seed,
            stream: 0,
        }
    }

    #[test]
    fn zero_linear_model_predicts_zero() {
        let core = BanditCore::new(eps_config(3, 2, 0.1, 0.05, 1)).unwrap();
        assert_eq!(core.predictions(&ctx(&[1.0, -2.0])).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn linear_predict_is_plain_dot_product() {
        // Hand value: w = (1, 2), c = (3, 4) → 1·3 + 2·4 = 11, no bias.
        let model =
            PolicyModel::with_linear_weights(vec![vec![1.0, 2.0], vec![0.5, -1.0]], 0.05).unwrap();
        let scores = model.predict(&ctx(&[3.0, 4.0])).unwrap();
        assert_eq!(scores, vec![11.0, -2.5]);
    }

    #[test]
    fn predict_rejects_wrong_dimension() {
        let core = BanditCore::new(eps_config(3, 2, 0.1, 0.05, 1)).unwrap();
        assert_eq!(
            core.predictions(&ctx(&[1.0, 2.0, 3.0])),
            Err(BanditError::DimensionMismatch {
                expected: 2,
                got: 3
            })
        );
    }

    #[test]
    fn dr_target_hand_values() {
        // predicted 0.2 on the taken arm, reward 1, propensity 0.5
        // → target 0.2 + (1 − 0.2)/0.5 = 1.8; other arms keep their own
        // predictions.
        let obs = Observation {
            context: ctx(&[1.0]),
            action: ActionId(1),
            reward: 1.0,
            propensity: 0.5,
        };
        let targets = dr_targets(&obs, &[0.7, 0.2, -0.4]).unwrap();
        assert_eq!(targets, vec![0.7, 1.8, -0.4]);
    }

    #[test]
    fn dr_target_with_unit_propensity_is_exactly_the_reward() {
        for pred in [0.1, 0.3, 1e-9, 123.456, -7.25] {
            let obs = Observation {
                context: ctx(&[1.0]),
                action: ActionId(0),
                reward: 1.0,
                propensity: 1.0,
            };
            let targets = dr_targets(&obs, &[pred, 0.5]).unwrap();
            assert_eq!(targets[0], 1.0);
            assert_eq!(targets[1], 0.5);
        }
    }

    #[test]
    fn dr_targets_reject_bad_inputs() {
        let obs = |prop: f64, reward: f64, a: usize| Observation {
            context: ctx(&[1.0]),
            action: ActionId(a),
            reward,
            propensity: prop,
        };
        assert_eq!(
            dr_targets(&obs(0.0, 1.0, 0), &[0.0]),
            Err(BanditError::InvalidPropensity(0.0))
        );
        assert_eq!(
            dr_targets(&obs(1.5, 1.0, 0), &[0.0]),
            Err(BanditError::InvalidPropensity(1.5))
        );
        // NaN payloads never compare equal, so match on the variant.
        assert!(matches!(
            dr_targets(&obs(0.5, f64::NAN, 0), &[0.0]),
            Err(BanditError::NonFiniteReward(r)) if r.is_nan()
        ));
        assert_eq!(
            dr_targets(&obs(0.5, 1.0, 3), &[0.0, 0.0]),
            Err(BanditError::ActionOutOfRange { index: 3, arms: 2 })
        );
    }

    #[test]
    fn sgd_fixed_point_matches_scalar_recurrence() {
        // Constant context [1.0], reward 1, propensity 1: the single
        // weight follows p ← p + lr·(1 − p) exactly (‖c‖² = 1, so the
        // normaliser is inert).
        let lr = 0.05;
        let mut expected = 0.0;
        for _ in 0..1000 {
            expected += lr * (1.0 - expected);
        }

        let mut core = BanditCore::new(eps_config(2, 1, 0.0, lr, 3)).unwrap();
        let c = ctx(&[1.0]);
        for _ in 0..1000 {
            core.update(&Observation {
                context: c.clone(),
                action: ActionId(0),
                reward: 1.0,
                propensity: 1.0,
            })
            .unwrap();
        }
        let p = core.predictions(&c).unwrap()[0];
        assert_eq!(p, expected);
        // The float recurrence stalls a few ulp below 1.0 once the step
        // underflows relative to ulp(1); a 1e-12 band is ample proof of
        // convergence without chasing that fixed point.
        assert!((p - 1.0).abs() < 1e-12, "converged prediction, got {p}");
    }

    #[test]
    fn update_moves_prediction_monotonically_toward_reward() {
        let mut core = BanditCore::new(eps_config(4, 1, 0.0, 0.1, 5)).unwrap();
        let c = ctx(&[1.0]);
        let mut last = core.predictions(&c).unwrap()[3];
        for _ in 0..200 {
            core.update(&Observation {
                context: c.clone(),
                action: ActionId(3),
                reward: 1.0,
                propensity: 1.0,
            })
            .unwrap();
            let now = core.predictions(&c).unwrap()[3];
            assert!(now > last && now <= 1.0, "expected monotone rise");
            last = now;
        }
        assert!((last - 1.0).abs() < 1e-8);
    }

    #[test]
    fn zero_residual_update_leaves_weights_untouched() {
        let mut core = BanditCore::new(eps_config(3, 2, 0.1, 0.05, 7)).unwrap();
        let c = ctx(&[0.5, -0.25]);
        core.update(&Observation {
            context: c.clone(),
            action: ActionId(1),
            reward: 0.75,
            propensity: 1.0,
        })
        .unwrap();
        let before = core.snapshot();
        // Reward equal to the current prediction with propensity 1 makes
        // every residual zero.
        let reward = core.predictions(&c).unwrap()[1];
        core.update(&Observation {
            context: c,
            action: ActionId(1),
            reward,
            propensity: 1.0,
        })
        .unwrap();
        // The decision stream was not touched either, so snapshots match
        // byte for byte.
        assert_eq!(before, core.snapshot());
    }

    #[test]
    fn epsilon_zero_always_exploits_with_propensity_one() {
        let mut core = BanditCore::new(eps_config(5, 2, 0.0, 0.05, 11)).unwrap();
        *core.policy_mut(0) = PolicyModel::with_linear_weights(
            vec![
                vec![0.1, 0.0],
                vec![0.0, 0.1],
                vec![0.9, 0.9],
                vec![0.2, 0.2],
                vec![0.0, 0.0],
            ],
            0.05,
        )
        .unwrap();
        let c = ctx(&[1.0, 1.0]);
        for _ in 0..100 {
            let sel = core.select(&c).unwrap();
            assert_eq!(sel.action, ActionId(2));
            assert_eq!(sel.propensity, 1.0);
        }
    }

    #[test]
    fn epsilon_one_is_uniform_with_propensity_one_over_k() {
        let k = 7;
        let mut core = BanditCore::new(eps_config(k, 1, 1.0, 0.05, 13)).unwrap();
        let c = ctx(&[1.0]);
        let n = 70_000usize;
        let mut counts = vec![0usize; k];
        for _ in 0..n {
            let sel = core.select(&c).unwrap();
            assert_eq!(sel.propensity, 1.0 / k as f64);
            counts[sel.action.0] += 1;
        }
        for &count in &counts {
            let freq = count as f64 / n as f64;
            assert!(
                (freq - 1.0 / k as f64).abs() < 0.01,
                "uniform draw off: {freq}"
            );
        }
    }

    #[test]
    fn epsilon_greedy_propensities_match_observed_frequencies() {
        // k = 7, ε = 0.1: greedy arm should appear with 1 − ε + ε/k,
        // every other arm with ε/k; the reported propensity must agree.
        let k = 7;
        let eps = 0.1;
        let mut core = BanditCore::new(eps_config(k, 1, eps, 0.05, 17)).unwrap();
        *core.policy_mut(0) = PolicyModel::with_linear_weights(
            (0..k).map(|a| vec![if a == 4 { 1.0 } else { 0.1 }]).collect(),
            0.05,
        )
        .unwrap();
        let c = ctx(&[1.0]);
        let greedy_prop = 1.0 - eps + eps / k as f64;
        let other_prop = eps / k as f64;

        let n = 100_000usize;
        let mut counts = vec![0usize; k];
        for _ in 0..n {
            let sel = core.select(&c).unwrap();
            let expected = if sel.action.0 == 4 { greedy_prop } else { other_prop };
            assert_eq!(sel.propensity, expected);
            counts[sel.action.0] += 1;
        }
        for (a, &count) in counts.iter().enumerate() {
            let p = if a == 4 { greedy_prop } else { other_prop };
            let se = (p * (1.0 - p) / n as f64).sqrt();
            let freq = count as f64 / n as f64;
            assert!(
                (freq - p).abs() <= 3.0 * se,
                "arm {a}: freq {freq} vs stated {p} (3se = {})",
                3.0 * se
            );
        }
    }

    #[test]
    fn cover_single_policy_zero_epsilon_degenerates_to_greedy() {
        let weights = vec![vec![0.3, -0.1], vec![0.5, 0.2], vec![-0.4, 0.9]];
        let mut cover = BanditCore::new(BanditConfig {
            arms: 3,
            dim: 2,
            scorer: ScorerKind::Linear,
            learning_rate: 0.05,
            exploration: ExplorationConfig::Cover {
                policies: 1,
                epsilon: 0.0,
            },
            seed: 19,
            stream: 0,
        })
        .unwrap();
        let mut greedy = BanditCore::new(eps_config(3, 2, 0.0, 0.05, 19)).unwrap();
        *cover.policy_mut(0) = PolicyModel::with_linear_weights(weights.clone(), 0.05).unwrap();
        *greedy.policy_mut(0) = PolicyModel::with_linear_weights(weights, 0.05).unwrap();
        for raw in [[1.0, 0.0], [0.25, 0.5], [-1.0, 2.0], [3.0, -0.5]] {
            let c = ctx(&raw);
            let a = cover.select(&c).unwrap();
            let b = greedy.select(&c).unwrap();
            assert_eq!(a.action, b.action);
            assert_eq!(a.propensity, 1.0);
            assert_eq!(b.propensity, 1.0);
        }
    }

    /// Builds a cover core whose three policies prefer arms 0, 0 and 4 on
    /// the all-ones context.
    fn cover_core_with_votes(epsilon: f64, seed: u64) -> (BanditCore, ContextVector) {
        let k = 7;
        let mut core = BanditCore::new(BanditConfig {
            arms: k,
            dim: 1,
            scorer: ScorerKind::Linear,
            learning_rate: 0.05,
            exploration: ExplorationConfig::Cover {
                policies: 3,
                epsilon,
            },
            seed,
            stream: 0,
        })
        .unwrap();
        let prefer = |arm: usize| {
            PolicyModel::with_linear_weights(
                (0..k).map(|a| vec![if a == arm { 1.0 } else { 0.0 }]).collect(),
                0.05,
            )
            .unwrap()
        };
        *core.policy_mut(0) = prefer(0);
        *core.policy_mut(1) = prefer(0);
        *core.policy_mut(2) = prefer(4);
        (core, ctx(&[1.0]))
    }

    #[test]
    fn cover_propensity_counts_policy_votes_exactly() {
        // ε = 0, policies prefer {0, 0, 4} → arm 0 has propensity 2/3 and
        // arm 4 has 1/3; nothing else can be selected.
        let (mut core, c) = cover_core_with_votes(0.0, 23);
        let mut seen = [0usize; 7];
        for _ in 0..30_000 {
            let sel = core.select(&c).unwrap();
            match sel.action.0 {
                0 => assert_eq!(sel.propensity, 2.0 / 3.0),
                4 => assert_eq!(sel.propensity, 1.0 / 3.0),
                other => panic!("unexpected arm {other} with ε = 0"),
            }
            seen[sel.action.0] += 1;
        }
        let f0 = seen[0] as f64 / 30_000.0;
        assert!((f0 - 2.0 / 3.0).abs() < 0.01, "vote split off: {f0}");
    }

    #[test]
    fn cover_propensities_match_observed_frequencies() {
        // ε = 0.1, votes {0, 0, 4}: arm 0 → ε/k + 0.9·(2/3), arm 4 →
        // ε/k + 0.9·(1/3), all others exactly the ε/k floor.
        let (mut core, c) = cover_core_with_votes(0.1, 29);
        let k = 7;
        let floor = 0.1 / k as f64;
        let stated = |a: usize| match a {
            0 => floor + 0.9 * 2.0 / 3.0,
            4 => floor + 0.9 / 3.0,
            _ => floor,
        };
        let n = 100_000usize;
        let mut counts = vec![0usize; k];
        for _ in 0..n {
            let sel = core.select(&c).unwrap();
            assert_eq!(sel.propensity, stated(sel.action.0));
            counts[sel.action.0] += 1;
        }
        for (a, &count) in counts.iter().enumerate() {
            let p = stated(a);
            let se = (p * (1.0 - p) / n as f64).sqrt();
            let freq = count as f64 / n as f64;
            assert!(
                (freq - p).abs() <= 3.0 * se,
                "arm {a}: freq {freq} vs stated {p}"
            );
        }
    }

    #[test]
    fn cover_diversity_spreads_greedy_arms() {
        // Feed identical feedback favouring arm 1; the later cover
        // policies see a +0.1/propensity bonus on unclaimed arms, so at
        // least one should end up preferring something other than arm 1.
        let mut core = BanditCore::new(BanditConfig {
            arms: 4,
            dim: 1,
            scorer: ScorerKind::Linear,
            learning_rate: 0.05,
            exploration: ExplorationConfig::Cover {
                policies: 3,
                epsilon: 0.1,
            },
            seed: 31,
            stream: 0,
        })
        .unwrap();
        let c = ctx(&[1.0]);
        for _ in 0..500 {
            let sel = core.select(&c).unwrap();
            let reward = if sel.action.0 == 1 { 1.0 } else { 0.2 };
            core.update(&Observation {
                context: c.clone(),
                action: sel.action,
                reward,
                propensity: sel.propensity,
            })
            .unwrap();
        }
        assert_eq!(core.greedy_action(&c).unwrap(), ActionId(1));
        let later_greedy: Vec<usize> = (1..3)
            .map(|j| argmax(&core.policies[j].predict(&c).unwrap()))
            .collect();
        assert!(
            later_greedy.iter().any(|&g| g != 1),
            "cover collapsed onto one arm: {later_greedy:?}"
        );
    }

    #[test]
    fn snapshot_roundtrip_is_byte_identical_and_self_describing() {
        let mut core = BanditCore::new(BanditConfig {
            arms: 7,
            dim: 3,
            scorer: ScorerKind::Linear,
            learning_rate: 0.05,
            exploration: ExplorationConfig::Cover {
                policies: 3,
                epsilon: 0.1,
            },
            seed: 37,
            stream: 2,
        })
        .unwrap();
        let c = ctx(&[0.2, -0.7, 1.4]);
        for i in 0..50 {
            let sel = core.select(&c).unwrap();
            core.update(&Observation {
                context: c.clone(),
                action: sel.action,
                reward: if i % 3 == 0 { 1.0 } else { 0.0 },
                propensity: sel.propensity,
            })
            .unwrap();
        }
        let bytes = core.snapshot();
        let reloaded = BanditCore::load(&bytes).unwrap();
        assert_eq!(bytes, reloaded.snapshot(), "snapshot → load → snapshot");

        let doc: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
        assert_eq!(doc["schema"], 1);
        assert_eq!(doc["config"]["arms"], 7);
        assert_eq!(doc["config"]["dim"], 3);
        assert_eq!(doc["config"]["scorer"], "linear");
        assert_eq!(doc["config"]["exploration"]["strategy"], "cover");
        assert_eq!(doc["config"]["exploration"]["policies"], 3);
        assert_eq!(doc["config"]["exploration"]["epsilon"], 0.1);
    }

    #[test]
    fn loaded_twin_tracks_original_exactly() {
        let mut original = BanditCore::new(eps_config(5, 2, 0.2, 0.05, 41)).unwrap();
        let contexts = [[1.0, 0.5], [0.0, 1.0], [0.7, 0.7], [0.1, 0.9]];
        for (i, raw) in contexts.iter().cycle().take(200).enumerate() {
            let c = ctx(raw);
            let sel = original.select(&c).unwrap();
            original
                .update(&Observation {
                    context: c,
                    action: sel.action,
                    reward: (i % 2) as f64,
                    propensity: sel.propensity,
                })
                .unwrap();
        }
        let mut twin = BanditCore::load(&original.snapshot()).unwrap();
        for (i, raw) in contexts.iter().cycle().take(300).enumerate() {
            let c = ctx(raw);
            let a = original.select(&c).unwrap();
            let b = twin.select(&c).unwrap();
            assert_eq!(a, b, "selection diverged at step {i}");
            let obs = |action, propensity| Observation {
                context: ctx(raw),
                action,
                reward: ((i * 7) % 3) as f64 / 2.0,
                propensity,
            };
            original.update(&obs(a.action, a.propensity)).unwrap();
            twin.update(&obs(b.action, b.propensity)).unwrap();
        }
        assert_eq!(original.snapshot(), twin.snapshot());
    }

    #[test]
    fn snapshot_rejects_wrong_schema_and_corrupt_payload() {
        let core = BanditCore::new(eps_config(2, 1, 0.1, 0.05, 43)).unwrap();
        let mut doc: serde_json::Value = serde_json::from_slice(&core.snapshot()).unwrap();
        doc["schema"] = serde_json::json!(99);
        let bytes = serde_json::to_vec(&doc).unwrap();
        assert_eq!(
            BanditCore::load(&bytes).err(),
            Some(SnapshotError::SchemaMismatch {
                expected: SNAPSHOT_SCHEMA,
                got: 99
            })
        );
        assert!(matches!(
            BanditCore::load(b"not json"),
            Err(SnapshotError::Corrupt(_))
        ));

        // Truncate a weight vector → shape mismatch.
        let mut doc: serde_json::Value = serde_json::from_slice(&core.snapshot()).unwrap();
        doc["policies"][0]["weights"]["linear"]["arms"][0] = serde_json::json!([]);
        let bytes = serde_json::to_vec(&doc).unwrap();
        assert_eq!(
            BanditCore::load(&bytes).err(),
            Some(SnapshotError::ShapeMismatch)
        );
    }

    #[test]
    fn mlp_initialisation_is_seeded_and_bounded() {
        let config = BanditConfig {
            arms: 3,
            dim: 4,
            scorer: ScorerKind::Mlp,
            learning_rate: 0.01,
            exploration: ExplorationConfig::EpsilonGreedy { epsilon: 0.1 },
            seed: 47,
            stream: 0,
        };
        let a = BanditCore::new(config).unwrap();
        let b = BanditCore::new(config).unwrap();
        assert_eq!(a.snapshot(), b.snapshot(), "same seed, same init");
        let other = BanditCore::new(BanditConfig { seed: 48, ..config }).unwrap();
        assert_ne!(a.snapshot(), other.snapshot(), "different seed differs");

        let doc: serde_json::Value = serde_json::from_slice(&a.snapshot()).unwrap();
        let w1 = doc["policies"][0]["weights"]["mlp"]["arms"][0]["w1"]
            .as_array()
            .unwrap();
        assert_eq!(w1.len(), MLP_HIDDEN * 4);
        assert!(w1
            .iter()
            .all(|v| v.as_f64().unwrap().abs() <= 0.05));
    }

    #[test]
    fn mlp_learns_a_simple_reward() {
        let mut core = BanditCore::new(BanditConfig {
            arms: 2,
            dim: 2,
            scorer: ScorerKind::Mlp,
            learning_rate: 0.05,
            exploration: ExplorationConfig::EpsilonGreedy { epsilon: 0.0 },
            seed: 53,
            stream: 0,
        })
        .unwrap();
        let c = ctx(&[1.0, 0.5]);
        for _ in 0..2000 {
            core.update(&Observation {
                context: c.clone(),
                action: ActionId(1),
                reward: 1.0,
                propensity: 1.0,
            })
            .unwrap();
        }
        let p = core.predictions(&c).unwrap();
        assert!((p[1] - 1.0).abs() < 0.05, "MLP failed to fit: {p:?}");
        assert!(p[0].abs() < 0.2, "untouched arm drifted: {p:?}");
    }

    #[test]
    fn bernoulli_feedback_converges_to_best_arm_across_seeds() {
        // Seven arms paying Bernoulli rewards with distinct means; after
        // 10 000 rounds of ε-greedy the base scorer's argmax on the
        // constant context should be the best arm in at least 9 of 10
        // seeds. The learning rate matters here: the inverse-propensity
        // targets on explored arms have variance ~1/propensity, so the
        // rate must be small enough that neighbouring arms' estimates
        // separate. 0.0003 found the best arm in 50/50 seeds in a wider
        // sweep (0.002 managed only 31/50).
        let means = [0.1046, 0.0307, 0.5106, 0.1213, 0.3633, 0.4043, 0.3070];
        let best = 2;
        let mut hits = 0;
        for seed in 0..10u64 {
            let mut core = BanditCore::new(eps_config(7, 1, 0.1, 0.0003, seed)).unwrap();
            let mut reward_rng = ChaCha12Rng::seed_from_u64(seed ^ 0xfeed);
            let c = ctx(&[1.0]);
            for _ in 0..10_000 {
                let sel = core.select(&c).unwrap();
                let reward = if reward_rng.random::<f64>() < means[sel.action.0] {
                    1.0
                } else {
                    0.0
                };
                core.update(&Observation {
                    context: c.clone(),
                    action: sel.action,
                    reward,
                    propensity: sel.propensity,
                })
                .unwrap();
            }
            if core.greedy_action(&c).unwrap() == ActionId(best) {
                hits += 1;
            }
        }
        assert!(hits >= 9, "best arm found in only {hits}/10 seeds");
    }

    proptest! {
        #[test]
        fn prop_epsilon_greedy_propensity_is_valid_and_stated(
            seed in 0u64..500,
            eps in 0.0f64..=1.0,
            k in 1usize..10,
            raw in proptest::collection::vec(-10.0f64..10.0, 1..6),
        ) {
            let dim = raw.len();
            let mut core = BanditCore::new(eps_config(k, dim, eps, 0.05, seed)).unwrap();
            let c = ctx(&raw);
            let sel = core.select(&c).unwrap();
            prop_assert!(sel.action.0 < k);
            prop_assert!(sel.propensity > 0.0 && sel.propensity <= 1.0);
            let floor = eps / k as f64;
            let greedy = core.greedy_action(&c).unwrap();
            let expected = if sel.action == greedy {
                1.0 - eps + floor
            } else {
                floor
            };
            prop_assert_eq!(sel.propensity, expected);
        }

        #[test]
        fn prop_cover_propensity_keeps_floor_and_sums_to_one(
            seed in 0u64..500,
            eps in 0.0f64..=1.0,
            k in 1usize..8,
            m in 1usize..5,
            steps in 0usize..30,
        ) {
            let mut core = BanditCore::new(BanditConfig {
                arms: k,
                dim: 1,
                scorer: ScorerKind::Linear,
                learning_rate: 0.05,
                exploration: ExplorationConfig::Cover { policies: m, epsilon: eps },
                seed,
                stream: 0,
            }).unwrap();
            let c = ctx(&[1.0]);
            // Walk the core into an arbitrary reachable state first.
            for i in 0..steps {
                let sel = core.select(&c).unwrap();
                core.update(&Observation {
                    context: c.clone(),
                    action: sel.action,
                    reward: (i % 2) as f64,
                    propensity: sel.propensity,
                }).unwrap();
            }
            let sel = core.select(&c).unwrap();
            prop_assert!(sel.propensity >= eps / k as f64 - 1e-15);
            prop_assert!(sel.propensity <= 1.0 + 1e-15);
            // Propensities over all arms sum to 1: ε covers the uniform
            // part, votes distribute the rest.
            let greedy: Vec<usize> = (0..m)
                .map(|j| argmax(&core.policies[j].predict(&c).unwrap()))
                .collect();
            let total: f64 = (0..k)
                .map(|a| {
                    let votes = greedy.iter().filter(|&&g| g == a).count();
                    eps / k as f64 + (1.0 - eps) * votes as f64 / m as f64
                })
                .sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
        }

        #[test]
        fn prop_updates_keep_weights_finite(
            seed in 0u64..200,
            rewards in proptest::collection::vec(0.0f64..10_000.0, 1..50),
        ) {
            let mut core = BanditCore::new(eps_config(4, 3, 0.3, 0.05, seed)).unwrap();
            let c = ctx(&[4.0, -3.0, 2.5]);
            for r in rewards {
                let sel = core.select(&c).unwrap();
                core.update(&Observation {
                    context: c.clone(),
                    action: sel.action,
                    reward: r,
                    propensity: sel.propensity,
                }).unwrap();
                for s in core.predictions(&c).unwrap() {
                    prop_assert!(s.is_finite());
                }
            }
        }

        #[test]
        fn prop_snapshot_roundtrip_any_state(
            seed in 0u64..200,
            steps in 0usize..40,
            mlp in proptest::bool::ANY,
        ) {
            let mut core = BanditCore::new(BanditConfig {
                arms: 3,
                dim: 2,
                scorer: if mlp { ScorerKind::Mlp } else { ScorerKind::Linear },
                learning_rate: 0.05,
                exploration: ExplorationConfig::EpsilonGreedy { epsilon: 0.25 },
                seed,
                stream: 1,
            }).unwrap();
            let c = ctx(&[0.5, 1.5]);
            for i in 0..steps {
                let sel = core.select(&c).unwrap();
                core.update(&Observation {
                    context: c.clone(),
                    action: sel.action,
                    reward: (i % 3) as f64,
                    propensity: sel.propensity,
                }).unwrap();
            }
            let bytes = core.snapshot();
            let reloaded = BanditCore::load(&bytes).unwrap();
            prop_assert_eq!(bytes, reloaded.snapshot());
        }
    }
}
