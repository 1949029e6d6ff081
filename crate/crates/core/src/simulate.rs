//! The end-to-end learning loop, one robot, fixed rounds:
//! stream -> sample into the bounded cache -> upload -> annotate -> grow the
//! cloud dataset -> split -> retrain -> adapt thresholds -> evaluate on the
//! held-out final test set. Within a round every decision uses the frozen
//! model from the previous retrain.
//!
//! Also here: deterministic multi-policy/multi-seed comparison, run-log
//! replay (reconstructs every threshold and metric from logged decisions),
//! and the savings accounting.

use std::collections::HashSet;
use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::cloud::{
    adapt_thresholds, annotate, dataset_update, initial_params, split, AdaptOptions, CloudDataset,
    DatasetState, ThresholdRow,
};
use crate::data::{Dataset, SensorSample, StreamManifest};
use crate::error::{Error, Result};
use crate::perception::{LabeledExample, PerceptionModel, TrainingParams};
use crate::sampler::{
    argmax_decide, confidence_decide, embedding_decide, median_exemplar_distance,
    nonadaptive_decide, oracle_select, priority_offer, random_offer, target_confidence, Cache,
    Decision, DistanceWindow, SamplerParams, ScoreMode, TargetSpec,
};
use crate::util::{auc, mix_seed, splitmix64, SimRng};

/// Every sampling policy the simulator knows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    HarvestConf,
    HarvestEmb,
    HarvestPqConf,
    HarvestPqEmb,
    Random,
    NonadaptiveConf,
    NonadaptiveEmb,
    Argmax,
    Oracle,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 9] = [
        PolicyKind::HarvestConf,
        PolicyKind::HarvestEmb,
        PolicyKind::HarvestPqConf,
        PolicyKind::HarvestPqEmb,
        PolicyKind::Random,
        PolicyKind::NonadaptiveConf,
        PolicyKind::NonadaptiveEmb,
        PolicyKind::Argmax,
        PolicyKind::Oracle,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            PolicyKind::HarvestConf => "harvest_conf",
            PolicyKind::HarvestEmb => "harvest_emb",
            PolicyKind::HarvestPqConf => "harvest_pq_conf",
            PolicyKind::HarvestPqEmb => "harvest_pq_emb",
            PolicyKind::Random => "random",
            PolicyKind::NonadaptiveConf => "nonadaptive_conf",
            PolicyKind::NonadaptiveEmb => "nonadaptive_emb",
            PolicyKind::Argmax => "argmax",
            PolicyKind::Oracle => "oracle",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .find(|p| p.name() == name)
            .copied()
            .ok_or_else(|| Error::UnknownPolicy {
                name: name.to_string(),
                valid: Self::ALL
                    .iter()
                    .map(|p| p.name())
                    .collect::<Vec<_>>()
                    .join(", "),
            })
    }

    /// HarvestNet variants receive cloud threshold feedback each round.
    pub fn adapts_thresholds(&self) -> bool {
        matches!(
            self,
            PolicyKind::HarvestConf
                | PolicyKind::HarvestEmb
                | PolicyKind::HarvestPqConf
                | PolicyKind::HarvestPqEmb
        )
    }

    /// Embedding-distance policies need the on-robot exemplar set.
    pub fn uses_exemplars(&self) -> bool {
        matches!(
            self,
            PolicyKind::HarvestEmb | PolicyKind::HarvestPqEmb | PolicyKind::NonadaptiveEmb
        )
    }
}

fn default_val_fraction() -> f64 {
    0.15
}
fn default_oracle_reps() -> usize {
    5
}
fn default_true() -> bool {
    true
}

/// Simulation settings. `rounds`/`steps_per_round` may be omitted and are
/// then taken from the manifest; when given they must agree with it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(default)]
    pub rounds: Option<usize>,
    #[serde(default)]
    pub steps_per_round: Option<usize>,
    pub cache_size: usize,
    pub policy: PolicyKind,
    #[serde(default)]
    pub training: TrainingParams,
    #[serde(default)]
    pub adapt: AdaptOptions,
    #[serde(default = "default_val_fraction")]
    pub val_fraction: f64,
    #[serde(default)]
    pub seed: u64,
    /// Independent selections averaged for the oracle's accuracy curve.
    #[serde(default = "default_oracle_reps")]
    pub oracle_reps: usize,
    /// Append cloud-confirmed target embeddings to the exemplar set after
    /// each round (off: the exemplar set stays the seed targets).
    #[serde(default)]
    pub refresh_exemplars: bool,
    /// Record wall-clock columns (retrain_ms, decide_us_median). Disable
    /// for byte-identical metrics files across runs.
    #[serde(default = "default_true")]
    pub record_timing: bool,
    /// Internal sub-stream selector for oracle repetitions.
    #[serde(skip)]
    pub rng_stream: u64,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cache_size == 0 {
            return Err(Error::InvalidConfig("cache_size must be >= 1".into()));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "val_fraction must be in (0,1), got {}",
                self.val_fraction
            )));
        }
        if let Some(r) = self.rounds {
            if r == 0 {
                return Err(Error::InvalidConfig("rounds must be >= 1".into()));
            }
        }
        if self.oracle_reps == 0 {
            return Err(Error::InvalidConfig("oracle_reps must be >= 1".into()));
        }
        Ok(())
    }
}

/// One row of the per-round metrics table. Field order is the CSV column
/// order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub policy: String,
    pub seed: u64,
    pub round: u32,
    pub test_accuracy: f64,
    pub test_loss: f64,
    pub val_accuracy: f64,
    pub cache_size: u32,
    pub cache_precision: f64,
    pub cache_recall: f64,
    pub cumulative_sampled: u64,
    pub conf_thresh: f64,
    pub emb_thresh: f64,
    pub retrain_ms: f64,
    pub decide_us_median: f64,
}

/// One run-log record per stream timestep: the policy's raw decision and
/// any evicted id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub round: u32,
    pub t: u32,
    pub id: u64,
    pub score: f64,
    pub a: u8,
    pub evicted: Option<u64>,
}

/// Everything a simulation produces.
#[derive(Debug, Clone)]
pub struct SimOutcome {
    pub metrics: Vec<RoundMetrics>,
    pub log: Vec<LogRecord>,
    /// The pre-trained model before round 0 (f^0).
    pub initial_model: PerceptionModel,
    /// The model after the final round.
    pub final_model: PerceptionModel,
    /// Thresholds after each adaptation, including the round-0 init.
    pub thresholds: Vec<ThresholdRow>,
    /// Cloud dataset audit checkpoint at the end of the run.
    pub final_state: DatasetState,
}

struct RunContext<'a> {
    dataset: &'a Dataset,
    manifest: &'a StreamManifest,
    cfg: &'a SimConfig,
    test_examples: Vec<LabeledExample<'a>>,
    split_seed: u64,
}

struct SimState {
    model: PerceptionModel,
    params: SamplerParams,
    cloud: CloudDataset,
    targets: TargetSpec,
    window: DistanceWindow,
    cumulative_sampled: u64,
    rng: SimRng,
    thresholds: Vec<ThresholdRow>,
}

fn labeled<'a>(cloud: &'a CloudDataset, idx: &[usize]) -> Vec<LabeledExample<'a>> {
    idx.iter()
        .map(|&i| {
            let ex = &cloud.examples()[i];
            LabeledExample {
                embedding: &ex.embedding,
                label: ex.label,
            }
        })
        .collect()
}

fn setup<'a>(
    dataset: &'a Dataset,
    manifest: &'a StreamManifest,
    cfg: &'a SimConfig,
) -> Result<(RunContext<'a>, SimState)> {
    cfg.validate()?;
    manifest.validate(dataset)?;
    if manifest.rounds.is_empty() {
        return Err(Error::InvalidConfig("manifest has no rounds".into()));
    }
    if manifest.test_ids.is_empty() {
        return Err(Error::InvalidConfig("manifest has no final test set".into()));
    }
    if manifest.seed_ids.is_empty() {
        return Err(Error::InvalidConfig("manifest has no seed set".into()));
    }
    if let Some(r) = cfg.rounds {
        if r != manifest.rounds.len() {
            return Err(Error::InvalidConfig(format!(
                "config rounds = {r} but manifest has {} rounds",
                manifest.rounds.len()
            )));
        }
    }
    for (i, ids) in manifest.rounds.iter().enumerate() {
        if let Some(t) = cfg.steps_per_round {
            if ids.len() != t {
                return Err(Error::InvalidConfig(format!(
                    "config steps_per_round = {t} but manifest round {i} has {} steps",
                    ids.len()
                )));
            }
        }
        if cfg.cache_size > ids.len() {
            return Err(Error::InvalidConfig(format!(
                "cache_size {} exceeds round {i} length {}",
                cfg.cache_size,
                ids.len()
            )));
        }
    }

    let header = &dataset.header;
    let exemplars: Vec<Vec<f32>> = if cfg.policy.uses_exemplars() {
        manifest
            .seed_ids
            .iter()
            .map(|&id| dataset.get(id).expect("validated"))
            .filter(|s| header.is_target(s.true_label))
            .map(|s| s.embedding.clone())
            .collect()
    } else {
        Vec::new()
    };
    let targets = TargetSpec {
        target_classes: header.target_classes.clone(),
        target_exemplars: exemplars,
    };

    let test_examples: Vec<LabeledExample> = manifest
        .test_ids
        .iter()
        .map(|&id| {
            let s = dataset.get(id).expect("validated");
            LabeledExample {
                embedding: &s.embedding,
                label: s.true_label,
            }
        })
        .collect();

    // D^0: the pre-annotated seed set.
    let mut cloud = CloudDataset::new(manifest.test_ids.iter().copied());
    for &id in &manifest.seed_ids {
        let s = dataset.get(id).expect("validated");
        cloud.insert(id, s.embedding.clone(), s.true_label, 0)?;
    }

    let split_seed = mix_seed(cfg.seed, "split");
    let (train_idx, _) = split(&cloud, cfg.val_fraction, split_seed)?;
    if train_idx.is_empty() {
        return Err(Error::InvalidConfig(
            "seed set too small: the train split is empty".into(),
        ));
    }
    // Pre-train f^0 from scratch on the seed set.
    let cold = TrainingParams {
        warm_start: false,
        ..cfg.training.clone()
    };
    let model =
        PerceptionModel::zeros(header.dim, header.class_count).retrain(&labeled(&cloud, &train_idx), &cold)?;

    // Round-0 threshold init, then one adaptation pass on D^0 under f^0.
    let params = adapt_thresholds(&cloud, &model, &targets, initial_params(&targets), &cfg.adapt);
    let thresholds = vec![ThresholdRow {
        round: 0,
        conf_thresh: params.conf_thresh,
        emb_thresh: params.emb_thresh,
    }];

    let rng = SimRng::seed_from_u64(splitmix64(
        mix_seed(cfg.seed, "policy") ^ splitmix64(cfg.rng_stream),
    ));
    let ctx = RunContext {
        dataset,
        manifest,
        cfg,
        test_examples,
        split_seed,
    };
    let state = SimState {
        model,
        params,
        cloud,
        targets,
        window: DistanceWindow::new(),
        cumulative_sampled: 0,
        rng,
        thresholds,
    };
    Ok((ctx, state))
}

/// Cloud half of a round, shared by the live run and log replay:
/// annotate the cache, union into the dataset, split, retrain (skipped
/// when nothing new arrived, leaving the weights untouched), adapt
/// thresholds, evaluate.
fn finish_round(
    state: &mut SimState,
    ctx: &RunContext<'_>,
    round: u32,
    cache: &Cache,
    decide_us_median: f64,
) -> Result<RoundMetrics> {
    let cfg = ctx.cfg;
    let annotated = annotate(cache, ctx.dataset)?;
    let added = dataset_update(&mut state.cloud, &annotated, ctx.dataset, round)?;
    let (train_idx, val_idx) = split(&state.cloud, cfg.val_fraction, ctx.split_seed)?;

    let retrain_start = Instant::now();
    if added > 0 {
        let train = labeled(&state.cloud, &train_idx);
        let mut next = state.model.retrain(&train, &cfg.training)?;
        next.round_trained = round + 1;
        state.model = next;
    }
    let retrain_ms = if cfg.record_timing {
        retrain_start.elapsed().as_secs_f64() * 1e3
    } else {
        0.0
    };

    if cfg.refresh_exemplars && cfg.policy.uses_exemplars() {
        for &(id, label) in &annotated {
            if state.targets.is_target(label) {
                let s = ctx.dataset.get(id).expect("annotated id resolves");
                state.targets.target_exemplars.push(s.embedding.clone());
            }
        }
    }

    if cfg.policy.adapts_thresholds() {
        state.params =
            adapt_thresholds(&state.cloud, &state.model, &state.targets, state.params, &cfg.adapt);
    }
    state.thresholds.push(ThresholdRow {
        round: round + 1,
        conf_thresh: state.params.conf_thresh,
        emb_thresh: state.params.emb_thresh,
    });

    let test_eval = state.model.evaluate(&ctx.test_examples)?;
    let val_accuracy = if val_idx.is_empty() {
        0.0
    } else {
        state.model.evaluate(&labeled(&state.cloud, &val_idx))?.accuracy
    };

    let header = &ctx.dataset.header;
    let cached_targets = cache
        .entries()
        .iter()
        .filter(|e| header.is_target(ctx.dataset.get(e.id).expect("cached id resolves").true_label))
        .count();
    let stream_targets = ctx.manifest.rounds[round as usize]
        .iter()
        .filter(|&&id| header.is_target(ctx.dataset.get(id).expect("validated").true_label))
        .count();
    let cache_precision = if cache.is_empty() {
        0.0
    } else {
        cached_targets as f64 / cache.len() as f64
    };
    let cache_recall = if stream_targets == 0 {
        1.0
    } else {
        cached_targets as f64 / stream_targets as f64
    };
    state.cumulative_sampled += cache.len() as u64;

    Ok(RoundMetrics {
        policy: cfg.policy.name().to_string(),
        seed: cfg.seed,
        round,
        test_accuracy: test_eval.accuracy,
        test_loss: test_eval.loss,
        val_accuracy,
        cache_size: cache.len() as u32,
        cache_precision,
        cache_recall,
        cumulative_sampled: state.cumulative_sampled,
        conf_thresh: state.params.conf_thresh,
        emb_thresh: state.params.emb_thresh,
        retrain_ms,
        decide_us_median,
    })
}

fn run_round(
    state: &mut SimState,
    ctx: &RunContext<'_>,
    round: u32,
    log: &mut Vec<LogRecord>,
) -> Result<RoundMetrics> {
    let cfg = ctx.cfg;
    let ids = &ctx.manifest.rounds[round as usize];
    let mut cache = Cache::new(cfg.cache_size);

    // The oracle picks its true-target subset up front (cloud privilege);
    // every other policy decides per step from the frozen model's output.
    let oracle_pick: HashSet<u64> = if cfg.policy == PolicyKind::Oracle {
        let samples: Vec<&SensorSample> = ids
            .iter()
            .map(|&id| ctx.dataset.get(id).expect("validated"))
            .collect();
        oracle_select(&samples, &state.targets, cfg.cache_size, &mut state.rng)
            .into_iter()
            .collect()
    } else {
        HashSet::new()
    };

    let mut decide_ns: Vec<u64> = Vec::with_capacity(ids.len());
    for (t, &id) in ids.iter().enumerate() {
        let sample = ctx.dataset.get(id).expect("validated");
        let out = state.model.predict(&sample.embedding)?;
        let started = cfg.record_timing.then(Instant::now);
        let decision = match cfg.policy {
            PolicyKind::HarvestConf => confidence_decide(&out, &state.targets, &state.params),
            PolicyKind::HarvestEmb => embedding_decide(&out, &state.targets, &state.params)?,
            PolicyKind::HarvestPqConf => {
                let score = target_confidence(&out.conf, &state.targets);
                priority_offer(&mut cache, id, score, ScoreMode::Confidence)
            }
            PolicyKind::HarvestPqEmb => {
                let score = median_exemplar_distance(&out.emb, &state.targets.target_exemplars)?;
                priority_offer(&mut cache, id, score, ScoreMode::Embedding)
            }
            PolicyKind::Random => random_offer(&mut cache, id, t as u64, &mut state.rng)?,
            PolicyKind::NonadaptiveConf => nonadaptive_decide(
                &out,
                &state.targets,
                ScoreMode::Confidence,
                &mut state.window,
                &mut state.rng,
            )?,
            PolicyKind::NonadaptiveEmb => nonadaptive_decide(
                &out,
                &state.targets,
                ScoreMode::Embedding,
                &mut state.window,
                &mut state.rng,
            )?,
            PolicyKind::Argmax => argmax_decide(&out, &state.targets),
            PolicyKind::Oracle => Decision {
                store: oracle_pick.contains(&id),
                score: if oracle_pick.contains(&id) { 1.0 } else { 0.0 },
                evicted: None,
            },
        };
        if let Some(start) = started {
            decide_ns.push(start.elapsed().as_nanos() as u64);
        }
        // Threshold-style policies fill the cache in arrival order and
        // drop once it is full; the offer-style policies (random, PQ)
        // already inserted themselves above.
        match cfg.policy {
            PolicyKind::Random | PolicyKind::HarvestPqConf | PolicyKind::HarvestPqEmb => {}
            _ => {
                if decision.store {
                    cache.push_if_room(id, decision.score, t as u64)?;
                }
            }
        }
        log.push(LogRecord {
            round,
            t: t as u32,
            id,
            score: decision.score,
            a: decision.store as u8,
            evicted: decision.evicted,
        });
    }

    let decide_us_median = if decide_ns.is_empty() {
        0.0
    } else {
        decide_ns.sort_unstable();
        decide_ns[decide_ns.len() / 2] as f64 / 1e3
    };
    finish_round(state, ctx, round, &cache, decide_us_median)
}

/// Run the full loop over every round in the manifest. Deterministic:
/// identical (dataset, manifest, config) produce identical outcomes.
pub fn run_simulation(
    dataset: &Dataset,
    manifest: &StreamManifest,
    cfg: &SimConfig,
) -> Result<SimOutcome> {
    let (ctx, mut state) = setup(dataset, manifest, cfg)?;
    let initial_model = state.model.clone();
    let mut metrics = Vec::with_capacity(manifest.rounds.len());
    let mut log = Vec::new();
    for round in 0..manifest.rounds.len() as u32 {
        metrics.push(run_round(&mut state, &ctx, round, &mut log)?);
    }
    let final_state = DatasetState::capture(
        &state.cloud,
        cfg.val_fraction,
        ctx.split_seed,
        state.thresholds.clone(),
    )?;
    Ok(SimOutcome {
        metrics,
        log,
        initial_model,
        final_model: state.model,
        thresholds: state.thresholds,
        final_state,
    })
}

/// Re-run the cloud side from a recorded run log: caches are rebuilt from
/// the logged decisions (honoring capacity and evictions), then annotated,
/// unioned, retrained, and adapted exactly as the live run does. Wall-clock
/// columns are zeroed. A faithful log reproduces every threshold, weight,
/// and metric of the original run.
pub fn replay_simulation(
    dataset: &Dataset,
    manifest: &StreamManifest,
    cfg: &SimConfig,
    log: &[LogRecord],
) -> Result<SimOutcome> {
    let quiet = SimConfig {
        record_timing: false,
        ..cfg.clone()
    };
    let (ctx, mut state) = setup(dataset, manifest, &quiet)?;
    let initial_model = state.model.clone();
    let mut metrics = Vec::with_capacity(manifest.rounds.len());
    for round in 0..manifest.rounds.len() as u32 {
        let mut members: Vec<(u64, f64, u64)> = Vec::new();
        for rec in log.iter().filter(|r| r.round == round) {
            if let Some(evicted) = rec.evicted {
                members.retain(|&(id, _, _)| id != evicted);
            }
            if rec.a == 1 && members.len() < cfg.cache_size {
                members.push((rec.id, rec.score, rec.t as u64));
            }
        }
        let mut cache = Cache::new(cfg.cache_size);
        for (id, score, arrival) in members {
            cache.push_if_room(id, score, arrival)?;
        }
        metrics.push(finish_round(&mut state, &ctx, round, &cache, 0.0)?);
    }
    let final_state = DatasetState::capture(
        &state.cloud,
        quiet.val_fraction,
        ctx.split_seed,
        state.thresholds.clone(),
    )?;
    Ok(SimOutcome {
        metrics,
        log: log.to_vec(),
        initial_model,
        final_model: state.model,
        thresholds: state.thresholds,
        final_state,
    })
}

/// AUC of the target-class confidence separating true targets from
/// non-targets on a probe set. `None` if the probe lacks either class.
pub fn target_score_auc(
    model: &PerceptionModel,
    dataset: &Dataset,
    probe_ids: &[u64],
    targets: &TargetSpec,
) -> Result<Option<f64>> {
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for &id in probe_ids {
        let s = dataset.get(id).ok_or(Error::UnknownId(id))?;
        let out = model.predict(&s.embedding)?;
        let score = target_confidence(&out.conf, targets);
        if targets.is_target(s.true_label) {
            pos.push(score);
        } else {
            neg.push(score);
        }
    }
    Ok(auc(&pos, &neg))
}

// ---------------------------------------------------------------------------
// Savings accounting
// ---------------------------------------------------------------------------

/// Sampling savings: costs scale linearly with the number of sampled
/// images, so the cost reduction is one minus the sampled fraction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SavingsSummary {
    pub cumulative_sampled: u64,
    pub total_stream: u64,
    pub sampled_fraction: f64,
    pub reduction: f64,
}

pub fn savings_report(metrics: &[RoundMetrics], total_stream: u64) -> SavingsSummary {
    let cumulative_sampled = metrics.last().map_or(0, |m| m.cumulative_sampled);
    let sampled_fraction = if total_stream == 0 {
        0.0
    } else {
        cumulative_sampled as f64 / total_stream as f64
    };
    SavingsSummary {
        cumulative_sampled,
        total_stream,
        sampled_fraction,
        reduction: 1.0 - sampled_fraction,
    }
}

// ---------------------------------------------------------------------------
// Policy comparison
// ---------------------------------------------------------------------------

/// Per-(policy, seed) outcome of a comparison.
#[derive(Debug, Clone, Serialize)]
pub struct CompareRow {
    pub policy: String,
    pub seed: u64,
    pub final_accuracy: f64,
    pub sampled_fraction: f64,
}

/// Aggregate over seeds for one policy.
#[derive(Debug, Clone, Serialize)]
pub struct PolicySummary {
    pub policy: String,
    pub mean_final_accuracy: f64,
    pub std_final_accuracy: f64,
    pub mean_sampled_fraction: f64,
    pub mean_reduction: f64,
}

/// Full comparison output. `curves` hold the per-round mean test accuracy
/// per policy; `metrics` hold every per-round row, sorted by
/// (policy, seed, round).
#[derive(Debug, Clone)]
pub struct Comparison {
    pub rows: Vec<CompareRow>,
    pub summaries: Vec<PolicySummary>,
    pub curves: Vec<(String, Vec<f64>)>,
    pub metrics: Vec<RoundMetrics>,
}

/// Compare policies over shared seeds (paired): seed k of every policy
/// runs with `base.seed + k` and therefore identical data and stream. The
/// oracle's accuracy is additionally averaged over `base.oracle_reps`
/// independent selections (its logged metrics come from the first
/// repetition). Jobs run in parallel; results merge deterministically.
pub fn compare_policies<F>(
    make_data: &F,
    base: &SimConfig,
    policies: &[PolicyKind],
    n_seeds: u64,
    jobs: usize,
) -> Result<Comparison>
where
    F: Fn(u64) -> Result<(Arc<Dataset>, Arc<StreamManifest>)> + Sync,
{
    if n_seeds == 0 {
        return Err(Error::InvalidConfig("n_seeds must be >= 1".into()));
    }
    // Materialize the per-seed data once, shared across policies.
    let data: Vec<(Arc<Dataset>, Arc<StreamManifest>)> = (0..n_seeds)
        .map(|k| make_data(base.seed + k))
        .collect::<Result<_>>()?;

    struct Task {
        policy: PolicyKind,
        seed_offset: u64,
    }
    let tasks: Vec<Task> = policies
        .iter()
        .flat_map(|&policy| (0..n_seeds).map(move |seed_offset| Task { policy, seed_offset }))
        .collect();

    let run_task = |task: &Task| -> Result<(Vec<RoundMetrics>, f64, f64)> {
        let (dataset, manifest) = &data[task.seed_offset as usize];
        let cfg = SimConfig {
            policy: task.policy,
            seed: base.seed + task.seed_offset,
            ..base.clone()
        };
        let reps = if task.policy == PolicyKind::Oracle {
            cfg.oracle_reps
        } else {
            1
        };
        let mut first_metrics = None;
        let mut finals = Vec::with_capacity(reps);
        let mut fractions = Vec::with_capacity(reps);
        let total_stream = manifest.total_stream_len() as u64;
        for rep in 0..reps {
            let rep_cfg = SimConfig {
                rng_stream: rep as u64,
                ..cfg.clone()
            };
            let outcome = run_simulation(dataset, manifest, &rep_cfg)?;
            finals.push(outcome.metrics.last().expect("rounds >= 1").test_accuracy);
            fractions.push(savings_report(&outcome.metrics, total_stream).sampled_fraction);
            if first_metrics.is_none() {
                first_metrics = Some(outcome.metrics);
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        Ok((first_metrics.expect("reps >= 1"), mean(&finals), mean(&fractions)))
    };

    let jobs = jobs.max(1);
    let outcomes: Vec<Result<(Vec<RoundMetrics>, f64, f64)>> = if jobs == 1 {
        tasks.iter().map(run_task).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
        pool.install(|| {
            use rayon::prelude::*;
            tasks.par_iter().map(run_task).collect()
        })
    };

    let mut rows = Vec::with_capacity(tasks.len());
    let mut metrics = Vec::new();
    let mut curves = Vec::new();
    let mut summaries = Vec::new();
    for (pi, &policy) in policies.iter().enumerate() {
        let mut finals = Vec::with_capacity(n_seeds as usize);
        let mut fractions = Vec::with_capacity(n_seeds as usize);
        let mut curve_sum: Vec<f64> = Vec::new();
        for k in 0..n_seeds as usize {
            let idx = pi * n_seeds as usize + k;
            let (run_metrics, final_acc, fraction) = match &outcomes[idx] {
                Ok(v) => v.clone(),
                Err(e) => {
                    return Err(Error::InvalidConfig(format!(
                        "simulation {} seed {} failed: {e}",
                        policy.name(),
                        base.seed + k as u64
                    )))
                }
            };
            if curve_sum.is_empty() {
                curve_sum = vec![0.0; run_metrics.len()];
            }
            for (acc, m) in curve_sum.iter_mut().zip(&run_metrics) {
                *acc += m.test_accuracy;
            }
            rows.push(CompareRow {
                policy: policy.name().to_string(),
                seed: base.seed + k as u64,
                final_accuracy: final_acc,
                sampled_fraction: fraction,
            });
            finals.push(final_acc);
            fractions.push(fraction);
            metrics.extend(run_metrics);
        }
        let n = finals.len() as f64;
        let mean = finals.iter().sum::<f64>() / n;
        let var = if finals.len() > 1 {
            finals.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        let mean_fraction = fractions.iter().sum::<f64>() / n;
        summaries.push(PolicySummary {
            policy: policy.name().to_string(),
            mean_final_accuracy: mean,
            std_final_accuracy: var.sqrt(),
            mean_sampled_fraction: mean_fraction,
            mean_reduction: 1.0 - mean_fraction,
        });
        curves.push((
            policy.name().to_string(),
            curve_sum.into_iter().map(|s| s / n).collect(),
        ));
    }
    Ok(Comparison {
        rows,
        summaries,
        curves,
        metrics,
    })
}

// ---------------------------------------------------------------------------
// CSV encoding
// ---------------------------------------------------------------------------

/// Serialize metric rows with the pinned column order:
/// policy,seed,round,test_accuracy,test_loss,val_accuracy,cache_size,
/// cache_precision,cache_recall,cumulative_sampled,conf_thresh,emb_thresh,
/// retrain_ms,decide_us_median
pub fn metrics_to_csv(rows: &[RoundMetrics]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row).expect("metrics serialize");
    }
    String::from_utf8(w.into_inner().expect("csv flush")).expect("csv utf8")
}

pub fn metrics_from_csv(text: &str) -> Result<Vec<RoundMetrics>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    r.deserialize()
        .map(|rec| {
            rec.map_err(|e| Error::Parse {
                path: "metrics csv".into(),
                reason: e.to_string(),
            })
        })
        .collect()
}

pub fn log_to_csv(records: &[LogRecord]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for rec in records {
        w.serialize(rec).expect("log serializes");
    }
    String::from_utf8(w.into_inner().expect("csv flush")).expect("csv utf8")
}

pub fn log_from_csv(text: &str) -> Result<Vec<LogRecord>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    r.deserialize()
        .map(|rec| {
            rec.map_err(|e| Error::Parse {
                path: "run log csv".into(),
                reason: e.to_string(),
            })
        })
        .collect()
}
