//! Campaign orchestration.
//!
//! The loop modes (`amt`, `random`, `boundary`) run the same iteration
//! skeleton — draw a source, pick a relation, transform, execute the
//! cached source and the fresh follow-up, judge, log — and differ only
//! in who picks and who learns. `baseline` instead sweeps every
//! relation/parameter combination over every source and emits a
//! violation-rate table.
//!
//! Determinism contract: all randomness flows through fixed seeded
//! streams (source draws on stream 1, random-mode exploration on
//! stream 2, the oracle's Bernoulli draws on stream 3, the bandits on
//! streams 10–12), so one config + seed fixes every artifact byte.
//! Each log record carries the post-iteration word positions of those
//! streams, and snapshots persist them so a resumed campaign continues
//! the exact sequences. Logs hold no wall-clock data — timing goes to a
//! sidecar meta file that replay ignores.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use morphic_core::context::ContextVector;
use morphic_core::features::extract_builtin;
use morphic_core::hierarchy::{
    main_reward, param_reward, registry_hash, HierarchyConfig, HierarchySnapshot, HierarchyState,
    RelationChoice,
};
use morphic_core::oracle::OracleSut;
use morphic_core::relations::{
    apply_mr, param_grid, transform_boxes, MrKind, RasterImage, ALL_MRS, MR_COUNT,
};
use morphic_core::rng::{RngCheckpoint, SeededStream};
use morphic_core::sut::{AppliedMr, Sut, SutError, SutOutput, SutRequest, Task};
use morphic_core::verdicts::{
    classification_verdict, detection_verdict, map_score, GroundTruth, MapConfig, Verdict,
};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{FeatureSource, Mode, ResolvedConfig, Sampling, SutBackendSpec};
use crate::external::ExternalSut;
use crate::formats::manifest::ManifestEntry;
use crate::formats::ppm::read_ppm;

/// Stream id for source draws.
const SOURCE_STREAM: u64 = 1;
/// Stream id for random-mode relation/parameter draws.
const EXPLORE_STREAM: u64 = 2;

/// Schema tag of [`CampaignSnapshot`] documents.
pub const CAMPAIGN_SNAPSHOT_SCHEMA: u32 = 1;

#[derive(Debug, Error)]
pub enum CampaignError {
    /// Validation problems: bad snapshots, mismatched settings. Usage
    /// errors for exit-code purposes.
    #[error("{0}")]
    Invalid(String),
    /// Filesystem failures around corpus images and artifacts.
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    /// SUT failures that prevent the campaign from starting at all.
    #[error("SUT: {0}")]
    Sut(String),
    /// Bugs: states the campaign should never reach.
    #[error("internal: {0}")]
    Internal(String),
}

impl CampaignError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        CampaignError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// Whether this is a validation (usage) failure rather than a
    /// runtime one.
    pub fn is_usage(&self) -> bool {
        matches!(self, CampaignError::Invalid(_))
    }
}

// ───────────────────────── log records ─────────────────────────

/// The source execution's answer, as recorded in the log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceOutput {
    /// Classification label.
    Label(u32),
    /// Detection mAP of the source output against its own truths.
    MapScore(f64),
}

/// Post-iteration word positions of every live RNG stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngTrace {
    pub source_pos: u128,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explore_pos: Option<u128>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub main_pos: Option<u128>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rotation_pos: Option<u128>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shear_pos: Option<u128>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle_pos: Option<u128>,
}

/// One iteration of a loop-mode campaign.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    /// 1-based, strictly increasing across resumes.
    pub iteration: u64,
    pub source_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_class: Option<u32>,
    /// Absent when the source execution itself failed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_output: Option<SourceOutput>,
    pub mr: MrKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub param: Option<i32>,
    pub main_propensity: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub param_propensity: Option<f64>,
    /// True when a SUT execution failed; such iterations never update
    /// any bandit and carry no verdict or rewards.
    pub failed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<Verdict>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub main_reward: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub param_reward: Option<f64>,
    /// Violated records over non-failed records, from the start of the
    /// campaign through this iteration.
    pub cumulative_violation_rate: f64,
    /// Relation-registry hash; reports refuse to mix registries.
    pub registry: String,
    pub rng: RngTrace,
}

/// Resumable campaign state: counters, stream positions, and the whole
/// bandit hierarchy.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CampaignSnapshot {
    schema: u32,
    mode: Mode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    boundary_mr: Option<MrKind>,
    iterations_done: u64,
    violations: u64,
    scored: u64,
    source_rng: RngCheckpoint,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    oracle_rng: Option<RngCheckpoint>,
    hierarchy: HierarchySnapshot,
}

/// Timing sidecar written next to the main artifact. Kept out of the
/// log so replays stay byte-comparable.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunMeta {
    pub iterations: u64,
    pub wall_ms_total: f64,
    pub wall_ms_per_iteration: f64,
    /// Everything except SUT execution: selection, transforms,
    /// verdicts, updates, logging.
    pub overhead_ms_per_iteration: f64,
}

/// What a finished run did, for the one-line CLI summary.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub mode: Mode,
    /// Iterations executed in this invocation (not counting a resumed
    /// prefix).
    pub iterations: u64,
    pub violations: u64,
    pub scored: u64,
    pub failed: u64,
    pub violation_rate: f64,
    pub log_path: Option<PathBuf>,
    pub table_path: Option<PathBuf>,
    pub snapshot_path: Option<PathBuf>,
    pub meta: RunMeta,
}

// ───────────────────────── SUT backends ─────────────────────────

enum Backend {
    Oracle(OracleSut),
    External(ExternalSut),
}

impl Backend {
    fn build(resolved: &ResolvedConfig) -> Result<Backend, CampaignError> {
        match &resolved.sut {
            SutBackendSpec::Oracle(spec) => OracleSut::new(spec.clone())
                .map(Backend::Oracle)
                .map_err(|e| CampaignError::Invalid(format!("oracle spec: {e}"))),
            SutBackendSpec::External {
                command,
                timeout_secs,
            } => {
                let mut sut = ExternalSut::new(command.clone(), *timeout_secs)
                    .map_err(|e| CampaignError::Sut(format!("{e}")))?;
                // Fail now, not on iteration 1, if the command cannot run.
                sut.ensure_running()
                    .map_err(|e| CampaignError::Sut(format!("{e}")))?;
                Ok(Backend::External(sut))
            }
        }
    }

    fn execute(&mut self, request: &SutRequest<'_>) -> Result<SutOutput, SutError> {
        match self {
            Backend::Oracle(o) => o.execute(request),
            Backend::External(e) => e.execute(request),
        }
    }

    fn oracle_checkpoint(&self) -> Option<RngCheckpoint> {
        match self {
            Backend::Oracle(o) => Some(o.rng_checkpoint()),
            Backend::External(_) => None,
        }
    }

    fn restore_oracle(&mut self, checkpoint: &RngCheckpoint) -> Result<(), CampaignError> {
        match self {
            Backend::Oracle(o) => {
                if checkpoint.seed != o.spec().seed {
                    return Err(CampaignError::Invalid(format!(
                        "snapshot oracle stream was seeded with {}, spec says {}",
                        checkpoint.seed,
                        o.spec().seed
                    )));
                }
                o.restore_rng(checkpoint);
                Ok(())
            }
            Backend::External(_) => Err(CampaignError::Invalid(
                "snapshot carries an oracle stream but the SUT is external".into(),
            )),
        }
    }
}

// ───────────────────────── source cache ─────────────────────────

/// Lazily loaded, memoised per-source state: pixels, context vector,
/// and the source execution's outcome — one SUT call per distinct
/// source no matter how often it is drawn.
struct SourceStore<'a> {
    entries: &'a [ManifestEntry],
    task: Task,
    images: Vec<Option<RasterImage>>,
    contexts: Vec<Option<ContextVector>>,
    outputs: Vec<Option<SourceOutput>>,
}

impl<'a> SourceStore<'a> {
    fn new(entries: &'a [ManifestEntry], task: Task) -> Self {
        SourceStore {
            entries,
            task,
            images: vec![None; entries.len()],
            contexts: vec![None; entries.len()],
            outputs: vec![None; entries.len()],
        }
    }

    /// Loads pixels and features for source `idx` if not yet present.
    fn ensure(&mut self, idx: usize, features: &FeatureSource) -> Result<(), CampaignError> {
        if self.images[idx].is_none() {
            let image = read_ppm(&self.entries[idx].image)
                .map_err(|e| CampaignError::Invalid(format!("{e}")))?;
            self.images[idx] = Some(image);
        }
        if self.contexts[idx].is_none() {
            let context = match features {
                FeatureSource::Builtin => {
                    extract_builtin(self.images[idx].as_ref().expect("just loaded"))
                }
                FeatureSource::Sidecar(side) => side
                    .get(&self.entries[idx].id)
                    .expect("sidecar coverage validated")
                    .clone(),
            };
            self.contexts[idx] = Some(context);
        }
        Ok(())
    }

    fn image(&self, idx: usize) -> &RasterImage {
        self.images[idx].as_ref().expect("ensured")
    }

    fn context(&self, idx: usize) -> &ContextVector {
        self.contexts[idx].as_ref().expect("ensured")
    }

    /// The source execution's outcome, cached on first success.
    ///
    /// The outer error aborts the campaign; the inner one marks this
    /// iteration failed. Failures are not cached, so a flaky external
    /// SUT gets another chance at the same source later.
    fn source_output(
        &mut self,
        idx: usize,
        backend: &mut Backend,
        sut_time: &mut Duration,
    ) -> Result<Result<SourceOutput, SutError>, CampaignError> {
        if let Some(cached) = self.outputs[idx] {
            return Ok(Ok(cached));
        }
        let entry = &self.entries[idx];
        let request = SutRequest {
            source_id: &entry.id,
            task: self.task,
            image: self.images[idx].as_ref().expect("ensured"),
            truths: entry.truths.as_deref(),
            class_hint: entry.class,
            applied: None,
        };
        let started = Instant::now();
        let answer = backend.execute(&request);
        *sut_time += started.elapsed();
        let output = match answer {
            Err(e) => return Ok(Err(e)),
            Ok(SutOutput::Label(label)) => SourceOutput::Label(label),
            Ok(SutOutput::Detections(detections)) => {
                let truths = entry.truths.as_deref().unwrap_or(&[]);
                SourceOutput::MapScore(map_score(&detections, truths, &MapConfig::default()))
            }
        };
        self.outputs[idx] = Some(output);
        Ok(Ok(output))
    }
}

/// Transports ground truths through a relation one box at a time so
/// each surviving box keeps its class.
fn transform_truths(
    mr: MrKind,
    param: Option<i32>,
    truths: &[GroundTruth],
    width: u32,
    height: u32,
) -> Result<Vec<GroundTruth>, CampaignError> {
    let mut out = Vec::with_capacity(truths.len());
    for t in truths {
        let boxes = transform_boxes(mr, param, std::slice::from_ref(&t.bbox), width, height)
            .map_err(|e| CampaignError::Internal(format!("{e}")))?;
        if let Some(bbox) = boxes.first() {
            out.push(GroundTruth {
                bbox: *bbox,
                class_id: t.class_id,
            });
        }
    }
    Ok(out)
}

// ───────────────────────── the runner ─────────────────────────

/// Runs the configured campaign to completion.
pub fn run(resolved: &ResolvedConfig) -> Result<RunSummary, CampaignError> {
    let mut backend = Backend::build(resolved)?;
    let mut store = SourceStore::new(&resolved.manifest.entries, resolved.manifest.task);
    match resolved.mode {
        Mode::Baseline => run_baseline(resolved, &mut backend, &mut store),
        Mode::Amt | Mode::Random | Mode::Boundary => {
            run_loop(resolved, &mut backend, &mut store)
        }
    }
}

fn hierarchy_config(resolved: &ResolvedConfig) -> HierarchyConfig {
    HierarchyConfig {
        dim: resolved.features.dim(),
        scorer: resolved.scorer,
        exploration: resolved.exploration,
        main_learning_rate: resolved.main_learning_rate,
        param_learning_rate: resolved.param_learning_rate,
        seed: resolved.seed,
    }
}

/// Restores a resumable campaign from its snapshot file.
fn resume(
    resolved: &ResolvedConfig,
    path: &Path,
    backend: &mut Backend,
) -> Result<(HierarchyState, SeededStream, u64, u64, u64), CampaignError> {
    let bytes = fs::read(path).map_err(|e| CampaignError::io(path, e))?;
    let snapshot: CampaignSnapshot = serde_json::from_slice(&bytes)
        .map_err(|e| CampaignError::Invalid(format!("{}: {e}", path.display())))?;
    if snapshot.schema != CAMPAIGN_SNAPSHOT_SCHEMA {
        return Err(CampaignError::Invalid(format!(
            "{}: snapshot schema {} unsupported",
            path.display(),
            snapshot.schema
        )));
    }
    if snapshot.mode != resolved.mode || snapshot.boundary_mr != resolved.boundary_mr {
        return Err(CampaignError::Invalid(format!(
            "{}: snapshot belongs to a {} campaign, config runs {}",
            path.display(),
            snapshot.mode,
            resolved.mode
        )));
    }
    if snapshot.source_rng.seed != resolved.seed {
        return Err(CampaignError::Invalid(format!(
            "{}: snapshot was seeded with {}, config says {}",
            path.display(),
            snapshot.source_rng.seed,
            resolved.seed
        )));
    }
    let hierarchy = HierarchyState::from_snapshot(snapshot.hierarchy)
        .map_err(|e| CampaignError::Invalid(format!("{}: {e}", path.display())))?;
    if *hierarchy.config() != hierarchy_config(resolved) {
        return Err(CampaignError::Invalid(format!(
            "{}: snapshot bandit settings differ from the config",
            path.display()
        )));
    }
    match &snapshot.oracle_rng {
        Some(checkpoint) => backend.restore_oracle(checkpoint)?,
        None => {
            if matches!(backend, Backend::Oracle(_)) {
                return Err(CampaignError::Invalid(format!(
                    "{}: snapshot carries no oracle stream but the SUT is an oracle",
                    path.display()
                )));
            }
        }
    }
    Ok((
        hierarchy,
        SeededStream::restore(&snapshot.source_rng),
        snapshot.iterations_done,
        snapshot.violations,
        snapshot.scored,
    ))
}

fn create_artifact(path: &Path) -> Result<BufWriter<fs::File>, CampaignError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| CampaignError::io(parent, e))?;
        }
    }
    Ok(BufWriter::new(
        fs::File::create(path).map_err(|e| CampaignError::io(path, e))?,
    ))
}

fn write_meta(artifact: &Path, meta: &RunMeta) -> Result<PathBuf, CampaignError> {
    let mut os = artifact.as_os_str().to_os_string();
    os.push(".meta.json");
    let path = PathBuf::from(os);
    let mut bytes = serde_json::to_vec(meta).expect("meta serialises");
    bytes.push(b'\n');
    fs::write(&path, bytes).map_err(|e| CampaignError::io(&path, e))?;
    Ok(path)
}

fn run_loop(
    resolved: &ResolvedConfig,
    backend: &mut Backend,
    store: &mut SourceStore<'_>,
) -> Result<RunSummary, CampaignError> {
    let registry = registry_hash();
    let sources = store.entries.len();
    let mut explore_rng = matches!(resolved.mode, Mode::Random)
        .then(|| SeededStream::new(resolved.seed, EXPLORE_STREAM));

    let (mut hierarchy, mut source_rng, start, mut violations, mut scored) =
        match (&resolved.snapshot_in, resolved.mode.learns()) {
            (Some(path), true) => {
                let (h, s, done, v, ok) = resume(resolved, path, backend)?;
                (Some(h), s, done, v, ok)
            }
            _ => {
                let hierarchy = resolved
                    .mode
                    .learns()
                    .then(|| HierarchyState::new(hierarchy_config(resolved)))
                    .transpose()
                    .map_err(|e| CampaignError::Invalid(format!("{e}")))?;
                (
                    hierarchy,
                    SeededStream::new(resolved.seed, SOURCE_STREAM),
                    0,
                    0,
                    0,
                )
            }
        };

    let log_path = resolved
        .log_path
        .as_ref()
        .ok_or_else(|| CampaignError::Internal("loop mode without log path".into()))?;
    let mut log = create_artifact(log_path)?;
    let mut failed = 0u64;
    let mut sut_time = Duration::ZERO;
    let wall_start = Instant::now();

    for iteration in start + 1..=start + resolved.iterations {
        let idx = match resolved.sampling {
            Sampling::Uniform => source_rng.rng().random_range(0..sources),
            Sampling::Sequential => ((iteration - 1) % sources as u64) as usize,
        };
        store.ensure(idx, &resolved.features)?;
        let entry = &store.entries[idx];

        let choice = match (resolved.mode, hierarchy.as_mut()) {
            (Mode::Amt, Some(h)) => h
                .select_relation(store.context(idx))
                .map_err(|e| CampaignError::Internal(format!("{e}")))?,
            (Mode::Boundary, Some(h)) => {
                let mr = resolved.boundary_mr.expect("validated");
                h.select_boundary(mr, store.context(idx))
                    .map_err(|e| CampaignError::Internal(format!("{e}")))?
            }
            (Mode::Random, None) => {
                let rng = explore_rng.as_mut().expect("random mode").rng();
                let mr = ALL_MRS[rng.random_range(0..MR_COUNT)];
                let (param, param_propensity) = match param_grid(mr) {
                    Some(grid) => (
                        Some(grid[rng.random_range(0..grid.len())]),
                        Some(1.0 / grid.len() as f64),
                    ),
                    None => (None, None),
                };
                RelationChoice {
                    mr,
                    param,
                    main_propensity: 1.0 / MR_COUNT as f64,
                    param_propensity,
                }
            }
            _ => return Err(CampaignError::Internal("mode/hierarchy mismatch".into())),
        };

        // The source side: cached after the first success.
        let source = store.source_output(idx, backend, &mut sut_time)?;

        let mut record = LogRecord {
            iteration,
            source_id: entry.id.clone(),
            source_class: entry.class,
            source_output: None,
            mr: choice.mr,
            param: choice.param,
            main_propensity: choice.main_propensity,
            param_propensity: choice.param_propensity,
            failed: true,
            verdict: None,
            main_reward: None,
            param_reward: None,
            cumulative_violation_rate: 0.0,
            registry: registry.clone(),
            rng: RngTrace {
                source_pos: 0,
                explore_pos: None,
                main_pos: None,
                rotation_pos: None,
                shear_pos: None,
                oracle_pos: None,
            },
        };

        if let Ok(source_output) = source {
            record.source_output = Some(source_output);
            // Follow-up: transform the image (and truths), run the SUT,
            // judge the pair.
            let image = store.image(idx);
            let follow_image = apply_mr(choice.mr, choice.param, image)
                .map_err(|e| CampaignError::Internal(format!("{e}")))?;
            let follow_truths = match &entry.truths {
                Some(truths) => Some(transform_truths(
                    choice.mr,
                    choice.param,
                    truths,
                    image.width(),
                    image.height(),
                )?),
                None => None,
            };
            let request = SutRequest {
                source_id: &entry.id,
                task: store.task,
                image: &follow_image,
                truths: follow_truths.as_deref(),
                class_hint: entry.class,
                applied: Some(AppliedMr {
                    mr: choice.mr,
                    param: choice.param,
                }),
            };
            let started = Instant::now();
            let answer = backend.execute(&request);
            sut_time += started.elapsed();

            if let Ok(output) = answer {
                let verdict = match (source_output, output) {
                    (SourceOutput::Label(source_label), SutOutput::Label(follow_label)) => {
                        classification_verdict(source_label, follow_label)
                    }
                    (SourceOutput::MapScore(source_map), SutOutput::Detections(detections)) => {
                        let truths = follow_truths.as_deref().unwrap_or(&[]);
                        let follow_map =
                            map_score(&detections, truths, &MapConfig::default());
                        detection_verdict(source_map, follow_map, &MapConfig::default())
                    }
                    _ => {
                        return Err(CampaignError::Internal(
                            "SUT answered the wrong task".into(),
                        ))
                    }
                };
                let main = main_reward(verdict);
                let param = choice
                    .param
                    .map(|p| param_reward(choice.mr, p, verdict))
                    .transpose()
                    .map_err(|e| CampaignError::Internal(format!("{e}")))?;
                if let Some(h) = hierarchy.as_mut() {
                    let context = store.context(idx);
                    match resolved.mode {
                        Mode::Amt => h
                            .apply_feedback(context, &choice, verdict)
                            .map_err(|e| CampaignError::Internal(format!("{e}")))?,
                        Mode::Boundary => h
                            .apply_param_feedback(context, &choice, verdict)
                            .map_err(|e| CampaignError::Internal(format!("{e}")))?,
                        _ => {}
                    }
                }
                scored += 1;
                if verdict == Verdict::Violated {
                    violations += 1;
                }
                record.failed = false;
                record.verdict = Some(verdict);
                record.main_reward = Some(main);
                record.param_reward = param;
            } else {
                failed += 1;
            }
        } else {
            failed += 1;
        }

        record.cumulative_violation_rate = if scored == 0 {
            0.0
        } else {
            violations as f64 / scored as f64
        };
        record.rng = RngTrace {
            source_pos: source_rng.checkpoint().word_pos,
            explore_pos: explore_rng.as_ref().map(|s| s.checkpoint().word_pos),
            main_pos: hierarchy
                .as_ref()
                .map(|h| h.main().rng_checkpoint().word_pos),
            rotation_pos: hierarchy
                .as_ref()
                .and_then(|h| h.param_bandit(MrKind::Rotation))
                .map(|b| b.rng_checkpoint().word_pos),
            shear_pos: hierarchy
                .as_ref()
                .and_then(|h| h.param_bandit(MrKind::Shear))
                .map(|b| b.rng_checkpoint().word_pos),
            oracle_pos: backend.oracle_checkpoint().map(|c| c.word_pos),
        };

        serde_json::to_writer(&mut log, &record)
            .map_err(|e| CampaignError::Io {
                path: log_path.display().to_string(),
                source: std::io::Error::other(e),
            })?;
        log.write_all(b"\n")
            .and_then(|_| log.flush())
            .map_err(|e| CampaignError::io(log_path, e))?;
    }

    let wall = wall_start.elapsed();
    let snapshot_path = match (&resolved.snapshot_out, hierarchy.as_ref()) {
        (Some(path), Some(h)) => {
            let snapshot = CampaignSnapshot {
                schema: CAMPAIGN_SNAPSHOT_SCHEMA,
                mode: resolved.mode,
                boundary_mr: resolved.boundary_mr,
                iterations_done: start + resolved.iterations,
                violations,
                scored,
                source_rng: source_rng.checkpoint(),
                oracle_rng: backend.oracle_checkpoint(),
                hierarchy: h.to_snapshot(),
            };
            let mut bytes = serde_json::to_vec(&snapshot).expect("snapshot serialises");
            bytes.push(b'\n');
            if let Some(parent) = path.parent() {
                if !parent.as_os_str().is_empty() {
                    fs::create_dir_all(parent).map_err(|e| CampaignError::io(parent, e))?;
                }
            }
            fs::write(path, bytes).map_err(|e| CampaignError::io(path, e))?;
            Some(path.clone())
        }
        _ => None,
    };

    let meta = finish_meta(resolved.iterations, wall, sut_time);
    write_meta(log_path, &meta)?;
    Ok(RunSummary {
        mode: resolved.mode,
        iterations: resolved.iterations,
        violations,
        scored,
        failed,
        violation_rate: if scored == 0 {
            0.0
        } else {
            violations as f64 / scored as f64
        },
        log_path: Some(log_path.clone()),
        table_path: None,
        snapshot_path,
        meta,
    })
}

fn finish_meta(iterations: u64, wall: Duration, sut_time: Duration) -> RunMeta {
    let wall_ms = wall.as_secs_f64() * 1e3;
    let overhead_ms = wall.saturating_sub(sut_time).as_secs_f64() * 1e3;
    RunMeta {
        iterations,
        wall_ms_total: wall_ms,
        wall_ms_per_iteration: wall_ms / iterations as f64,
        overhead_ms_per_iteration: overhead_ms / iterations as f64,
    }
}

// ───────────────────────── baseline ─────────────────────────

/// Every (relation, parameter) combination, registry order: plain
/// relations first by index, grids ascending.
pub fn baseline_rows() -> Vec<(MrKind, Option<i32>)> {
    let mut rows = Vec::new();
    for mr in ALL_MRS {
        match param_grid(mr) {
            None => rows.push((mr, None)),
            Some(grid) => rows.extend(grid.iter().map(|&p| (mr, Some(p)))),
        }
    }
    rows
}

fn run_baseline(
    resolved: &ResolvedConfig,
    backend: &mut Backend,
    store: &mut SourceStore<'_>,
) -> Result<RunSummary, CampaignError> {
    let class_count = match (&resolved.sut, resolved.manifest.task) {
        (SutBackendSpec::Oracle(spec), _) => spec.class_count as usize,
        (_, Task::Classification) => {
            store
                .entries
                .iter()
                .filter_map(|e| e.class)
                .max()
                .map(|c| c as usize + 1)
                .unwrap_or(1)
        }
        (_, Task::Detection) => 1,
    };
    let rows = baseline_rows();
    // (violations, executions) per (row, class) cell.
    let mut cells = vec![vec![(0u64, 0u64); class_count]; rows.len()];
    let mut failed = 0u64;
    let mut sut_time = Duration::ZERO;
    let wall_start = Instant::now();

    for idx in 0..store.entries.len() {
        store.ensure(idx, &resolved.features)?;
        let source = store.source_output(idx, backend, &mut sut_time)?;
        let source_output = match source {
            Ok(output) => output,
            Err(_) => {
                // No reference output, so none of this source's 59
                // cells can be judged.
                failed += 1;
                continue;
            }
        };
        let entry = &store.entries[idx];
        let class = entry.class.unwrap_or(0) as usize;
        let image = store.image(idx);
        for (row, &(mr, param)) in rows.iter().enumerate() {
            let follow_image = apply_mr(mr, param, image)
                .map_err(|e| CampaignError::Internal(format!("{e}")))?;
            let follow_truths = match &entry.truths {
                Some(truths) => Some(transform_truths(
                    mr,
                    param,
                    truths,
                    image.width(),
                    image.height(),
                )?),
                None => None,
            };
            let request = SutRequest {
                source_id: &entry.id,
                task: store.task,
                image: &follow_image,
                truths: follow_truths.as_deref(),
                class_hint: entry.class,
                applied: Some(AppliedMr { mr, param }),
            };
            let started = Instant::now();
            let answer = backend.execute(&request);
            sut_time += started.elapsed();
            let output = match answer {
                Ok(output) => output,
                Err(_) => {
                    failed += 1;
                    continue;
                }
            };
            let verdict = match (source_output, output) {
                (SourceOutput::Label(s), SutOutput::Label(f)) => classification_verdict(s, f),
                (SourceOutput::MapScore(s), SutOutput::Detections(detections)) => {
                    let truths = follow_truths.as_deref().unwrap_or(&[]);
                    detection_verdict(
                        s,
                        map_score(&detections, truths, &MapConfig::default()),
                        &MapConfig::default(),
                    )
                }
                _ => {
                    return Err(CampaignError::Internal(
                        "SUT answered the wrong task".into(),
                    ))
                }
            };
            cells[row][class].1 += 1;
            if verdict == Verdict::Violated {
                cells[row][class].0 += 1;
            }
        }
    }

    let table_path = resolved
        .table_path
        .as_ref()
        .ok_or_else(|| CampaignError::Internal("baseline without table path".into()))?;
    write_baseline_table(table_path, &rows, &cells, class_count)?;

    let scored: u64 = cells.iter().flatten().map(|c| c.1).sum();
    let violations: u64 = cells.iter().flatten().map(|c| c.0).sum();
    let executions = store.entries.len() as u64 * rows.len() as u64;
    let wall = wall_start.elapsed();
    let meta = finish_meta(executions, wall, sut_time);
    write_meta(table_path, &meta)?;
    Ok(RunSummary {
        mode: Mode::Baseline,
        iterations: executions,
        violations,
        scored,
        failed,
        violation_rate: if scored == 0 {
            0.0
        } else {
            violations as f64 / scored as f64
        },
        log_path: None,
        table_path: Some(table_path.clone()),
        snapshot_path: None,
        meta,
    })
}

/// The baseline table: one row per (relation, parameter), one column
/// per source class, cells = violation rate. Classes with no
/// executions leave the cell empty; `avg` is the unweighted mean over
/// populated cells.
fn write_baseline_table(
    path: &Path,
    rows: &[(MrKind, Option<i32>)],
    cells: &[Vec<(u64, u64)>],
    class_count: usize,
) -> Result<(), CampaignError> {
    let mut writer = csv::Writer::from_writer(create_artifact(path)?);
    let mut header = vec!["mr".to_string(), "param".to_string()];
    header.extend((0..class_count).map(|c| format!("class_{c}")));
    header.push("avg".into());
    writer
        .write_record(&header)
        .map_err(|e| CampaignError::Io {
            path: path.display().to_string(),
            source: std::io::Error::other(e),
        })?;
    for (row, &(mr, param)) in rows.iter().enumerate() {
        let mut record = vec![
            mr.name().to_string(),
            param.map(|p| p.to_string()).unwrap_or_default(),
        ];
        let mut sum = 0.0;
        let mut populated = 0u64;
        for &(violations, total) in &cells[row] {
            if total == 0 {
                record.push(String::new());
            } else {
                let rate = violations as f64 / total as f64;
                sum += rate;
                populated += 1;
                record.push(format!("{rate}"));
            }
        }
        record.push(if populated == 0 {
            String::new()
        } else {
            format!("{}", sum / populated as f64)
        });
        writer
            .write_record(&record)
            .map_err(|e| CampaignError::Io {
                path: path.display().to_string(),
                source: std::io::Error::other(e),
            })?;
    }
    writer.flush().map_err(|e| CampaignError::io(path, e))?;
    Ok(())
}
