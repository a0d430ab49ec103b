//! Two-level bandit hierarchy over the relation registry.
//!
//! The *main* bandit picks one of the seven relations from the shared
//! context vector; for rotation and shear a per-relation *parameter*
//! bandit (same context) picks the angle from the relation's grid.
//! Rewards differ by level:
//!
//! - main: 1 for a violated verdict, 0 for a pass — relation-agnostic;
//! - parameter: on a violation, `10000 / 2^(s−1)` where `s = |φ|/5` is
//!   the angle's step count — ±5° pays 10 000, each further 5° halves
//!   the payout, so the bandit is pushed toward the *smallest* angle
//!   that still breaks the system. Passes pay 0.
//!
//! A hierarchy snapshot embeds all three bandit snapshots plus a hash of
//! the relation registry (names, order, and parameter grids); loading
//! against a registry with a different hash is refused, since arm
//! indices would silently mean different things.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::bandit::{
    ActionId, BanditConfig, BanditCore, BanditError, BanditSnapshot, ExplorationConfig,
    Observation, ScorerKind, SnapshotError,
};
use crate::context::ContextVector;
use crate::relations::{grid_index, param_grid, MrKind, ALL_MRS, MR_COUNT};
use crate::verdicts::Verdict;

/// Base payout for a violation at the smallest grid step.
const PARAM_BASE_REWARD: f64 = 10_000.0;

/// Snapshot schema emitted by this version of the hierarchy.
pub const HIERARCHY_SCHEMA: u32 = 1;

// Stream ids for the three decision streams, fixed so a seed alone
// pins every draw.
const MAIN_STREAM: u64 = 10;
const ROTATION_STREAM: u64 = 11;
const SHEAR_STREAM: u64 = 12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HierarchyError {
    #[error(transparent)]
    Bandit(#[from] BanditError),
    #[error("{mr} has no parameter bandit")]
    NotParameterized { mr: MrKind },
    #[error("parameter {param} is not on the {mr} grid")]
    OffGrid { mr: MrKind, param: i32 },
    #[error("choice for {mr} carries no parameter")]
    MissingParam { mr: MrKind },
    #[error("main bandit returned unknown relation index {0}")]
    UnknownRelation(usize),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HierarchySnapshotError {
    #[error(transparent)]
    Snapshot(#[from] SnapshotError),
    #[error("unsupported hierarchy schema {got}, this build reads schema {expected}")]
    SchemaMismatch { expected: u32, got: u32 },
    #[error("snapshot was taken against registry {snapshot}, this build is {current}")]
    RegistryMismatch { snapshot: String, current: String },
    #[error("corrupt hierarchy snapshot: {0}")]
    Corrupt(String),
}

/// Hash of the relation registry: names in order plus parameter grids.
/// Lowercase hex, 16 chars (truncated SHA-256).
pub fn registry_hash() -> String {
    let mut hasher = Sha256::new();
    for mr in ALL_MRS {
        hasher.update(mr.name().as_bytes());
        hasher.update(b"(");
        if let Some(grid) = param_grid(mr) {
            for v in grid {
                hasher.update(v.to_le_bytes());
            }
        }
        hasher.update(b");");
    }
    let digest = hasher.finalize();
    let mut out = String::with_capacity(16);
    for byte in &digest[..8] {
        let hi = byte >> 4;
        let lo = byte & 0xf;
        for nibble in [hi, lo] {
            out.push(char::from_digit(nibble as u32, 16).expect("nibble"));
        }
    }
    out
}

/// Settings shared by the hierarchy's bandits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HierarchyConfig {
    /// Context dimension for every level.
    pub dim: usize,
    pub scorer: ScorerKind,
    pub exploration: ExplorationConfig,
    /// Learning rate of the relation-level bandit.
    pub main_learning_rate: f64,
    /// Learning rate of the parameter bandits.
    pub param_learning_rate: f64,
    pub seed: u64,
}

/// One selected relation (with parameter where applicable) and the
/// propensities behind the selection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelationChoice {
    pub mr: MrKind,
    pub param: Option<i32>,
    pub main_propensity: f64,
    pub param_propensity: Option<f64>,
}

/// Reward for the relation-level bandit: violations pay 1, passes 0.
pub fn main_reward(verdict: Verdict) -> f64 {
    match verdict {
        Verdict::Violated => 1.0,
        Verdict::Pass => 0.0,
    }
}

/// Reward for a parameter bandit: on a violation, `10000 / 2^(s−1)` for
/// an angle `s` grid steps from zero (sign-symmetric); passes pay 0.
pub fn param_reward(mr: MrKind, param: i32, verdict: Verdict) -> Result<f64, HierarchyError> {
    if grid_index(mr, param).is_none() {
        return Err(HierarchyError::OffGrid { mr, param });
    }
    Ok(match verdict {
        Verdict::Pass => 0.0,
        Verdict::Violated => {
            let steps = param.unsigned_abs() / 5;
            PARAM_BASE_REWARD / (1u64 << (steps - 1)) as f64
        }
    })
}

/// Snapshot document for the whole hierarchy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierarchySnapshot {
    schema: u32,
    registry: String,
    config: HierarchyConfig,
    main: BanditSnapshot,
    rotation: BanditSnapshot,
    shear: BanditSnapshot,
}

impl HierarchySnapshot {
    pub fn config(&self) -> &HierarchyConfig {
        &self.config
    }

    pub fn registry(&self) -> &str {
        &self.registry
    }
}

/// The two-level bandit state: one relation-level core plus a parameter
/// core per parameterized relation.
#[derive(Debug, Clone)]
pub struct HierarchyState {
    config: HierarchyConfig,
    main: BanditCore,
    rotation: BanditCore,
    shear: BanditCore,
}

impl HierarchyState {
    pub fn new(config: HierarchyConfig) -> Result<Self, HierarchyError> {
        let bandit = |arms: usize, learning_rate: f64, stream: u64| {
            BanditCore::new(BanditConfig {
                arms,
                dim: config.dim,
                scorer: config.scorer,
                learning_rate,
                exploration: config.exploration,
                seed: config.seed,
                stream,
            })
        };
        let rotation_arms = param_grid(MrKind::Rotation).expect("rotation grid").len();
        let shear_arms = param_grid(MrKind::Shear).expect("shear grid").len();
        Ok(Self {
            config,
            main: bandit(MR_COUNT, config.main_learning_rate, MAIN_STREAM)?,
            rotation: bandit(rotation_arms, config.param_learning_rate, ROTATION_STREAM)?,
            shear: bandit(shear_arms, config.param_learning_rate, SHEAR_STREAM)?,
        })
    }

    pub fn config(&self) -> &HierarchyConfig {
        &self.config
    }

    pub fn main(&self) -> &BanditCore {
        &self.main
    }

    /// The parameter bandit for `mr`, if it has one.
    pub fn param_bandit(&self, mr: MrKind) -> Option<&BanditCore> {
        match mr {
            MrKind::Rotation => Some(&self.rotation),
            MrKind::Shear => Some(&self.shear),
            _ => None,
        }
    }

    fn param_bandit_mut(&mut self, mr: MrKind) -> Option<&mut BanditCore> {
        match mr {
            MrKind::Rotation => Some(&mut self.rotation),
            MrKind::Shear => Some(&mut self.shear),
            _ => None,
        }
    }

    /// Full two-level selection: relation first, then its parameter if
    /// it takes one.
    pub fn select_relation(
        &mut self,
        context: &ContextVector,
    ) -> Result<RelationChoice, HierarchyError> {
        let main_sel = self.main.select(context)?;
        let mr = MrKind::from_index(main_sel.action.0)
            .ok_or(HierarchyError::UnknownRelation(main_sel.action.0))?;
        let mut choice = RelationChoice {
            mr,
            param: None,
            main_propensity: main_sel.propensity,
            param_propensity: None,
        };
        if let Some(bandit) = self.param_bandit_mut(mr) {
            let param_sel = bandit.select(context)?;
            let grid = param_grid(mr).expect("parameterized");
            choice.param = Some(grid[param_sel.action.0]);
            choice.param_propensity = Some(param_sel.propensity);
        }
        Ok(choice)
    }

    /// Boundary-mode selection: the relation is fixed by the caller (its
    /// propensity is 1), only the parameter bandit draws.
    pub fn select_boundary(
        &mut self,
        mr: MrKind,
        context: &ContextVector,
    ) -> Result<RelationChoice, HierarchyError> {
        let bandit = self
            .param_bandit_mut(mr)
            .ok_or(HierarchyError::NotParameterized { mr })?;
        let param_sel = bandit.select(context)?;
        let grid = param_grid(mr).expect("parameterized");
        Ok(RelationChoice {
            mr,
            param: Some(grid[param_sel.action.0]),
            main_propensity: 1.0,
            param_propensity: Some(param_sel.propensity),
        })
    }

    /// Feeds one verdict back into both levels: the main bandit learns
    /// from every iteration, the parameter bandit only when its relation
    /// was the one played.
    pub fn apply_feedback(
        &mut self,
        context: &ContextVector,
        choice: &RelationChoice,
        verdict: Verdict,
    ) -> Result<(), HierarchyError> {
        self.main.update(&Observation {
            context: context.clone(),
            action: ActionId(choice.mr.index()),
            reward: main_reward(verdict),
            propensity: choice.main_propensity,
        })?;
        self.apply_param_feedback(context, choice, verdict)
    }

    /// Boundary-mode feedback: only the parameter bandit learns.
    pub fn apply_param_feedback(
        &mut self,
        context: &ContextVector,
        choice: &RelationChoice,
        verdict: Verdict,
    ) -> Result<(), HierarchyError> {
        if !choice.mr.parameterized() {
            return Ok(());
        }
        let param = choice.param.ok_or(HierarchyError::MissingParam { mr: choice.mr })?;
        let index = grid_index(choice.mr, param).ok_or(HierarchyError::OffGrid {
            mr: choice.mr,
            param,
        })?;
        let reward = param_reward(choice.mr, param, verdict)?;
        let propensity = choice
            .param_propensity
            .ok_or(HierarchyError::MissingParam { mr: choice.mr })?;
        let observation = Observation {
            context: context.clone(),
            action: ActionId(index),
            reward,
            propensity,
        };
        self.param_bandit_mut(choice.mr)
            .expect("parameterized")
            .update(&observation)?;
        Ok(())
    }

    /// Structured snapshot embedding all three bandits plus the registry
    /// hash.
    pub fn to_snapshot(&self) -> HierarchySnapshot {
        HierarchySnapshot {
            schema: HIERARCHY_SCHEMA,
            registry: registry_hash(),
            config: self.config,
            main: self.main.to_snapshot(),
            rotation: self.rotation.to_snapshot(),
            shear: self.shear.to_snapshot(),
        }
    }

    /// Canonical snapshot bytes.
    pub fn snapshot(&self) -> Vec<u8> {
        serde_json::to_vec(&self.to_snapshot()).expect("hierarchy snapshot serialises")
    }

    /// Rebuilds a hierarchy from a structured snapshot, refusing foreign
    /// schemas and registries and checking the per-bandit documents
    /// against the hierarchy-level configuration.
    pub fn from_snapshot(doc: HierarchySnapshot) -> Result<Self, HierarchySnapshotError> {
        if doc.schema != HIERARCHY_SCHEMA {
            return Err(HierarchySnapshotError::SchemaMismatch {
                expected: HIERARCHY_SCHEMA,
                got: doc.schema,
            });
        }
        let current = registry_hash();
        if doc.registry != current {
            return Err(HierarchySnapshotError::RegistryMismatch {
                snapshot: doc.registry,
                current,
            });
        }
        let config = doc.config;
        let expect = |snapshot: &BanditSnapshot,
                      arms: usize,
                      learning_rate: f64,
                      stream: u64,
                      level: &str|
         -> Result<(), HierarchySnapshotError> {
            let c = snapshot.config();
            if c.arms != arms
                || c.dim != config.dim
                || c.scorer != config.scorer
                || c.exploration != config.exploration
                || c.learning_rate != learning_rate
                || c.seed != config.seed
                || c.stream != stream
            {
                return Err(HierarchySnapshotError::Corrupt(alloc::format!(
                    "{level} bandit disagrees with the hierarchy configuration"
                )));
            }
            Ok(())
        };
        expect(&doc.main, MR_COUNT, config.main_learning_rate, MAIN_STREAM, "main")?;
        expect(
            &doc.rotation,
            param_grid(MrKind::Rotation).expect("rotation grid").len(),
            config.param_learning_rate,
            ROTATION_STREAM,
            "rotation",
        )?;
        expect(
            &doc.shear,
            param_grid(MrKind::Shear).expect("shear grid").len(),
            config.param_learning_rate,
            SHEAR_STREAM,
            "shear",
        )?;
        Ok(Self {
            config,
            main: BanditCore::from_snapshot(doc.main)?,
            rotation: BanditCore::from_snapshot(doc.rotation)?,
            shear: BanditCore::from_snapshot(doc.shear)?,
        })
    }

    /// Rebuilds a hierarchy from canonical snapshot bytes.
    pub fn load(bytes: &[u8]) -> Result<Self, HierarchySnapshotError> {
        let doc: HierarchySnapshot = serde_json::from_slice(bytes)
            .map_err(|e| HierarchySnapshotError::Corrupt(alloc::format!("{e}")))?;
        Self::from_snapshot(doc)
    }
}
