//! Cloud-side steps of the learning loop: annotation, dataset growth,
//! train/val splitting, and threshold adaptation.
//!
//! Threshold adaptation scores every annotated example under the freshly
//! retrained model (target-class confidence, and median exemplar distance
//! when exemplars exist), labels each example target/non-target by ground
//! truth, fits a one-dimensional logistic regression per score type with
//! the same gradient-descent core used for the perception head, and takes
//! the 0.5-probability boundary as the new threshold.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::perception::{gradient_descent, LabeledExample, PerceptionModel};
use crate::sampler::{
    median_exemplar_distance, target_confidence, Cache, SamplerParams, TargetSpec,
};
use crate::util::{median, stable_fraction};

/// One annotated example in the cloud dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct CloudExample {
    pub id: u64,
    pub embedding: Vec<f32>,
    pub label: u32,
    pub round_added: u32,
}

/// The growing cloud dataset. Ids never leave; the held-out final test set
/// is fixed at construction and can never be inserted.
#[derive(Debug, Clone)]
pub struct CloudDataset {
    examples: Vec<CloudExample>,
    index: HashMap<u64, usize>,
    final_test: HashSet<u64>,
}

impl CloudDataset {
    pub fn new(final_test: impl IntoIterator<Item = u64>) -> Self {
        CloudDataset {
            examples: Vec::new(),
            index: HashMap::new(),
            final_test: final_test.into_iter().collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn contains(&self, id: u64) -> bool {
        self.index.contains_key(&id)
    }

    /// Examples in insertion order.
    pub fn examples(&self) -> &[CloudExample] {
        &self.examples
    }

    pub fn final_test_ids(&self) -> &HashSet<u64> {
        &self.final_test
    }

    /// Insert one annotated example. Re-inserting a known id is a no-op
    /// (set union); inserting a final-test id is rejected to preserve test
    /// independence. Returns whether the id was new.
    pub fn insert(&mut self, id: u64, embedding: Vec<f32>, label: u32, round: u32) -> Result<bool> {
        if self.final_test.contains(&id) {
            return Err(Error::TestSetCollision(id));
        }
        if self.index.contains_key(&id) {
            return Ok(false);
        }
        self.index.insert(id, self.examples.len());
        self.examples.push(CloudExample {
            id,
            embedding,
            label,
            round_added: round,
        });
        Ok(true)
    }
}

/// Resolves an id to its ground-truth label. The full sample store is the
/// usual oracle; tests can substitute a map.
pub trait LabelOracle {
    fn label_of(&self, id: u64) -> Option<u32>;
}

impl LabelOracle for Dataset {
    fn label_of(&self, id: u64) -> Option<u32> {
        self.get(id).map(|s| s.true_label)
    }
}

impl LabelOracle for HashMap<u64, u32> {
    fn label_of(&self, id: u64) -> Option<u32> {
        self.get(&id).copied()
    }
}

/// Annotate every cached id with its ground-truth label, in cache order.
/// Ground truth may well disagree with the robot's prediction; that is the
/// point of annotation.
pub fn annotate(cache: &Cache, truth: &impl LabelOracle) -> Result<Vec<(u64, u32)>> {
    cache
        .entries()
        .iter()
        .map(|e| {
            truth
                .label_of(e.id)
                .map(|label| (e.id, label))
                .ok_or(Error::UnknownId(e.id))
        })
        .collect()
}

/// Union the annotated cache into the dataset (embeddings resolved from
/// the sample store). Returns the number of previously unseen ids.
pub fn dataset_update(
    d: &mut CloudDataset,
    annotated: &[(u64, u32)],
    store: &Dataset,
    round: u32,
) -> Result<usize> {
    let mut added = 0;
    for &(id, label) in annotated {
        let sample = store.get(id).ok_or(Error::UnknownId(id))?;
        if d.insert(id, sample.embedding.clone(), label, round)? {
            added += 1;
        }
    }
    Ok(added)
}

/// Deterministic train/val split: assignment is a pure function of
/// (id, seed), so an example never migrates between splits as the dataset
/// grows. Returns indices into `d.examples()`.
pub fn split(d: &CloudDataset, val_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "val_fraction must be in (0,1), got {val_fraction}"
        )));
    }
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (i, ex) in d.examples().iter().enumerate() {
        if stable_fraction(ex.id, seed) < val_fraction {
            val.push(i);
        } else {
            train.push(i);
        }
    }
    Ok((train, val))
}

/// Gradient-descent settings for the 1-D logistic threshold fits. The
/// defaults are unregularized; scores are standardized internally so one
/// step size serves both confidence and distance scales.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdaptOptions {
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
    /// Weight examples inversely to class frequency (targets are rare
    /// early on).
    pub class_weight: bool,
    /// Fit only on examples added in the last `window_rounds` rounds;
    /// `None` fits on the whole dataset.
    pub window_rounds: Option<u32>,
}

impl Default for AdaptOptions {
    fn default() -> Self {
        AdaptOptions {
            epochs: 500,
            learning_rate: 0.5,
            l2: 0.0,
            class_weight: false,
            window_rounds: None,
        }
    }
}

/// Fit a 1-D logistic regression on (score, is_target) pairs and return
/// the 0.5-probability boundary in score units. `None` when the fit is
/// degenerate (constant scores, divergence, or a slope whose sign says the
/// scores are not oriented the way `targets_higher` expects).
fn fit_boundary(
    scores: &[f64],
    is_target: &[bool],
    targets_higher: bool,
    opts: &AdaptOptions,
) -> Option<f64> {
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    if !sd.is_finite() || sd < 1e-12 {
        return None;
    }
    let z: Vec<Vec<f32>> = scores
        .iter()
        .map(|s| vec![((s - mean) / sd) as f32])
        .collect();
    let examples: Vec<LabeledExample> = z
        .iter()
        .zip(is_target)
        .map(|(e, &t)| LabeledExample {
            embedding: e,
            label: t as u32,
        })
        .collect();
    let weights = if opts.class_weight {
        let n_pos = is_target.iter().filter(|&&t| t).count() as f64;
        let n_neg = n - n_pos;
        Some(
            is_target
                .iter()
                .map(|&t| if t { n / (2.0 * n_pos) } else { n / (2.0 * n_neg) })
                .collect::<Vec<f64>>(),
        )
    } else {
        None
    };
    let mut model = PerceptionModel::zeros(1, 2);
    gradient_descent(
        &mut model,
        &examples,
        weights.as_deref(),
        opts.epochs,
        opts.learning_rate,
        opts.l2,
    )
    .ok()?;
    // Class-1 log-odds as a function of z: (w1 - w0) z + (b1 - b0).
    let slope = model.weights[1] - model.weights[0];
    let intercept = model.bias[1] - model.bias[0];
    if !slope.is_finite() || slope.abs() < 1e-9 {
        return None;
    }
    let oriented = if targets_higher {
        slope > 0.0
    } else {
        slope < 0.0
    };
    if !oriented {
        log::warn!(
            "threshold fit slope has the wrong sign ({slope:.3e}); keeping previous threshold"
        );
        return None;
    }
    let z_star = -intercept / slope;
    Some(mean + sd * z_star)
}

/// Adapt the sampler thresholds from the annotated dataset and the freshly
/// retrained model. Falls back to `prev` (per score type) when the dataset
/// has fewer than two examples of either class or a fit degenerates.
/// Never touches the final test set.
pub fn adapt_thresholds(
    d: &CloudDataset,
    model: &PerceptionModel,
    targets: &TargetSpec,
    prev: SamplerParams,
    opts: &AdaptOptions,
) -> SamplerParams {
    let newest_round = d
        .examples()
        .iter()
        .map(|e| e.round_added)
        .max()
        .unwrap_or(0);
    let in_window = |e: &&CloudExample| match opts.window_rounds {
        Some(w) => e.round_added + w > newest_round,
        None => true,
    };
    let considered: Vec<&CloudExample> = d.examples().iter().filter(in_window).collect();

    let is_target: Vec<bool> = considered
        .iter()
        .map(|e| targets.is_target(e.label))
        .collect();
    let n_pos = is_target.iter().filter(|&&t| t).count();
    let n_neg = considered.len() - n_pos;
    if n_pos < 2 || n_neg < 2 {
        return prev;
    }

    let mut conf_scores = Vec::with_capacity(considered.len());
    for e in &considered {
        match model.predict(&e.embedding) {
            Ok(out) => conf_scores.push(target_confidence(&out.conf, targets)),
            Err(_) => return prev,
        }
    }
    let conf_thresh = fit_boundary(&conf_scores, &is_target, true, opts)
        .map(|t| t.clamp(0.0, 1.0))
        .unwrap_or(prev.conf_thresh);

    let emb_thresh = if targets.target_exemplars.is_empty() {
        prev.emb_thresh
    } else {
        let dist_scores: Result<Vec<f64>> = considered
            .iter()
            .map(|e| median_exemplar_distance(&e.embedding, &targets.target_exemplars))
            .collect();
        match dist_scores {
            Ok(scores) => fit_boundary(&scores, &is_target, false, opts)
                .map(|t| t.max(0.0))
                .unwrap_or(prev.emb_thresh),
            Err(_) => prev.emb_thresh,
        }
    };

    SamplerParams {
        conf_thresh,
        emb_thresh,
    }
}

/// Round-0 initialization: the pre-adaptation parameters are a 0.5
/// confidence threshold and the median pairwise distance among the target
/// exemplars (1.0 when fewer than two exemplars exist).
pub fn initial_params(targets: &TargetSpec) -> SamplerParams {
    let ex = &targets.target_exemplars;
    let mut pairwise = Vec::new();
    for i in 0..ex.len() {
        for j in (i + 1)..ex.len() {
            if let Ok(d) = crate::perception::embedding_distance(&ex[i], &ex[j]) {
                pairwise.push(d);
            }
        }
    }
    SamplerParams {
        conf_thresh: 0.5,
        emb_thresh: if pairwise.is_empty() {
            1.0
        } else {
            median(&pairwise)
        },
    }
}

// ---------------------------------------------------------------------------
// State checkpoint (resume/audit)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateExampleRow {
    pub id: u64,
    pub label: u32,
    pub round_added: u32,
    pub split: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRow {
    pub round: u32,
    pub conf_thresh: f64,
    pub emb_thresh: f64,
}

/// Audit/resume checkpoint of the cloud state: every id with its label,
/// the round it arrived, its current split, and the per-round thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct DatasetState {
    pub examples: Vec<StateExampleRow>,
    pub thresholds: Vec<ThresholdRow>,
}

impl DatasetState {
    pub fn capture(
        d: &CloudDataset,
        val_fraction: f64,
        split_seed: u64,
        thresholds: Vec<ThresholdRow>,
    ) -> Result<Self> {
        let (_, val) = split(d, val_fraction, split_seed)?;
        let val: HashSet<usize> = val.into_iter().collect();
        let examples = d
            .examples()
            .iter()
            .enumerate()
            .map(|(i, e)| StateExampleRow {
                id: e.id,
                label: e.label,
                round_added: e.round_added,
                split: if val.contains(&i) { "val" } else { "train" }.to_string(),
            })
            .collect();
        Ok(DatasetState {
            examples,
            thresholds,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string(self).expect("state serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        toml::from_str(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            reason: e.to_string(),
        })
    }

    /// Rebuild a cloud dataset from a checkpoint, resolving embeddings
    /// from the sample store.
    pub fn restore(
        &self,
        store: &Dataset,
        final_test: impl IntoIterator<Item = u64>,
    ) -> Result<CloudDataset> {
        let mut d = CloudDataset::new(final_test);
        for row in &self.examples {
            let s = store.get(row.id).ok_or(Error::UnknownId(row.id))?;
            d.insert(row.id, s.embedding.clone(), row.label, row.round_added)?;
        }
        Ok(d)
    }
}
