//! Synthetic embedding datasets and streams, plus the dataset file formats.
//!
//! The generator produces a universe of samples (seed set, held-out final
//! test set, and a per-round stream) from isotropic Gaussian class clusters.
//! Class means sit on scaled one-hot directions; target-class means may
//! drift a fixed distance per round to model a changing domain. The stream
//! manifest records which sample ids belong to which round, in order.

use std::collections::HashMap;
use std::collections::HashSet;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::SimRng;

/// One stream observation. `true_label` is ground truth known only to the
/// cloud annotator and the oracle sampler; sampling policies never see it.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorSample {
    pub id: u64,
    pub round: u32,
    pub t: u32,
    pub embedding: Vec<f32>,
    pub true_label: u32,
}

/// Dataset-wide metadata: embedding dimension, classes, and which classes
/// the fleet operator wants more examples of.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub dim: usize,
    pub class_count: usize,
    pub class_names: Vec<String>,
    pub target_classes: Vec<u32>,
}

impl DatasetHeader {
    pub fn validate(&self) -> Result<()> {
        if self.class_names.len() != self.class_count {
            return Err(Error::InvalidConfig(format!(
                "class_names has {} entries, expected {}",
                self.class_names.len(),
                self.class_count
            )));
        }
        if self.target_classes.is_empty() {
            return Err(Error::InvalidConfig("target_classes is empty".into()));
        }
        if let Some(&c) = self
            .target_classes
            .iter()
            .find(|&&c| c as usize >= self.class_count)
        {
            return Err(Error::InvalidConfig(format!(
                "target class {c} out of range (class_count {})",
                self.class_count
            )));
        }
        Ok(())
    }

    pub fn is_target(&self, label: u32) -> bool {
        self.target_classes.contains(&label)
    }
}

/// A dataset with an id index. Invariants (checked by [`Dataset::new`]):
/// unique ids, embedding dimension equal to the header's, labels < K.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub header: DatasetHeader,
    samples: Vec<SensorSample>,
    by_id: HashMap<u64, usize>,
}

impl Dataset {
    pub fn new(header: DatasetHeader, samples: Vec<SensorSample>) -> Result<Self> {
        header.validate()?;
        let mut by_id = HashMap::with_capacity(samples.len());
        for (i, s) in samples.iter().enumerate() {
            if s.embedding.len() != header.dim {
                return Err(Error::dim(
                    header.dim,
                    s.embedding.len(),
                    &format!("sample id {}", s.id),
                ));
            }
            if s.true_label as usize >= header.class_count {
                return Err(Error::InvalidConfig(format!(
                    "sample id {} has label {} >= class_count {}",
                    s.id, s.true_label, header.class_count
                )));
            }
            if by_id.insert(s.id, i).is_some() {
                return Err(Error::DuplicateId(s.id));
            }
        }
        Ok(Dataset {
            header,
            samples,
            by_id,
        })
    }

    pub fn get(&self, id: u64) -> Option<&SensorSample> {
        self.by_id.get(&id).map(|&i| &self.samples[i])
    }

    pub fn samples(&self) -> &[SensorSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Per-round stream order plus the seed and held-out test id lists.
/// The three id sets are pairwise disjoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamManifest {
    pub rounds: Vec<Vec<u64>>,
    pub seed_ids: Vec<u64>,
    pub test_ids: Vec<u64>,
}

impl StreamManifest {
    /// Check that every id resolves and the stream/seed/test sets are
    /// pairwise disjoint.
    pub fn validate(&self, dataset: &Dataset) -> Result<()> {
        let mut seen = HashSet::new();
        let all = self
            .rounds
            .iter()
            .flatten()
            .chain(self.seed_ids.iter())
            .chain(self.test_ids.iter());
        for &id in all {
            if dataset.get(id).is_none() {
                return Err(Error::UnknownId(id));
            }
            if !seen.insert(id) {
                return Err(Error::DuplicateId(id));
            }
        }
        Ok(())
    }

    pub fn total_stream_len(&self) -> usize {
        self.rounds.iter().map(Vec::len).sum()
    }
}

fn default_n_per_class() -> usize {
    18
}
fn default_test_size() -> usize {
    1000
}
fn default_test_target_fraction() -> f64 {
    0.5
}
fn default_cluster_spread() -> f64 {
    1.0
}
fn default_class_margin() -> f64 {
    3.0
}
fn default_stride() -> usize {
    1
}
fn default_target_classes() -> Vec<u32> {
    vec![0]
}

/// Configuration for the synthetic generator.
///
/// `n_per_class` is the seed-set size per class (the cloud's initial
/// examples; target-class seeds double as the on-robot exemplar set).
/// `stride` documents the simulated sub-sampling interval between emitted
/// steps; the generator always emits `steps_per_round` post-stride steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub dim: usize,
    pub class_count: usize,
    #[serde(default = "default_target_classes")]
    pub target_classes: Vec<u32>,
    #[serde(default = "default_n_per_class")]
    pub n_per_class: usize,
    #[serde(default = "default_test_size")]
    pub test_size: usize,
    #[serde(default = "default_test_target_fraction")]
    pub test_target_fraction: f64,
    pub target_prevalence: f64,
    #[serde(default = "default_cluster_spread")]
    pub cluster_spread: f64,
    #[serde(default = "default_class_margin")]
    pub class_margin: f64,
    #[serde(default)]
    pub drift_per_round: f64,
    pub rounds: usize,
    pub steps_per_round: usize,
    #[serde(default = "default_stride")]
    pub stride: usize,
    pub seed: u64,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfig(msg));
        if self.dim == 0 {
            return fail("dim must be >= 1".into());
        }
        if self.class_count < 2 {
            return fail("class_count must be >= 2".into());
        }
        if self.dim < self.class_count {
            return fail(format!(
                "dim {} must be >= class_count {} (one-hot class geometry)",
                self.dim, self.class_count
            ));
        }
        if self.target_classes.is_empty() {
            return fail("target_classes must be nonempty".into());
        }
        if self
            .target_classes
            .iter()
            .any(|&c| c as usize >= self.class_count)
        {
            return fail("target_classes entries must be < class_count".into());
        }
        if self.target_classes.len() >= self.class_count {
            return fail("target_classes must leave at least one non-target class".into());
        }
        if !(self.target_prevalence > 0.0 && self.target_prevalence < 1.0) {
            return fail(format!(
                "target_prevalence must be in (0,1), got {}",
                self.target_prevalence
            ));
        }
        if !(self.test_target_fraction >= 0.0 && self.test_target_fraction <= 1.0) {
            return fail(format!(
                "test_target_fraction must be in [0,1], got {}",
                self.test_target_fraction
            ));
        }
        if self.n_per_class == 0 {
            return fail("n_per_class must be >= 1".into());
        }
        if self.rounds == 0 {
            return fail("rounds must be >= 1".into());
        }
        if self.steps_per_round == 0 {
            return fail("steps_per_round must be >= 1 (T >= 1)".into());
        }
        if self.stride == 0 {
            return fail("stride must be >= 1".into());
        }
        if self.cluster_spread < 0.0 {
            return fail("cluster_spread must be >= 0".into());
        }
        if self.class_margin <= 0.0 {
            return fail("class_margin must be > 0".into());
        }
        if self.drift_per_round < 0.0 {
            return fail("drift_per_round must be >= 0".into());
        }
        // Reject totals that cannot be assigned unique 64-bit ids.
        self.total_samples().ok_or_else(|| {
            Error::InvalidConfig("requested sample counts overflow the id space".into())
        })?;
        Ok(())
    }

    fn total_samples(&self) -> Option<u64> {
        let seed = (self.class_count as u64).checked_mul(self.n_per_class as u64)?;
        let stream = (self.rounds as u64).checked_mul(self.steps_per_round as u64)?;
        seed.checked_add(self.test_size as u64)?.checked_add(stream)
    }

    fn non_targets(&self) -> Vec<u32> {
        (0..self.class_count as u32)
            .filter(|c| !self.target_classes.contains(c))
            .collect()
    }
}

/// Class mean for class `c`: the scaled one-hot direction `margin * e_c`.
fn class_mean(c: usize, dim: usize, margin: f64) -> Vec<f64> {
    let mut m = vec![0.0; dim];
    m[c] = margin;
    m
}

/// Unit drift direction for a target class: toward the mean of the first
/// non-target class, so drifted targets become genuinely confusable.
fn drift_direction(target: usize, first_non_target: usize, dim: usize, margin: f64) -> Vec<f64> {
    let from = class_mean(target, dim, margin);
    let to = class_mean(first_non_target, dim, margin);
    let diff: Vec<f64> = to.iter().zip(&from).map(|(a, b)| a - b).collect();
    let norm = diff.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff.into_iter().map(|x| x / norm).collect()
}

struct ClusterSampler {
    means: Vec<Vec<f64>>,
    drift_dirs: Vec<Option<Vec<f64>>>,
    spread: f64,
    drift_per_round: f64,
    normal: Normal<f64>,
}

impl ClusterSampler {
    fn new(cfg: &SynthConfig) -> Self {
        let first_nt = cfg.non_targets()[0] as usize;
        let means = (0..cfg.class_count)
            .map(|c| class_mean(c, cfg.dim, cfg.class_margin))
            .collect();
        let drift_dirs = (0..cfg.class_count)
            .map(|c| {
                if cfg.target_classes.contains(&(c as u32)) && cfg.drift_per_round > 0.0 {
                    Some(drift_direction(c, first_nt, cfg.dim, cfg.class_margin))
                } else {
                    None
                }
            })
            .collect();
        ClusterSampler {
            means,
            drift_dirs,
            spread: cfg.cluster_spread,
            drift_per_round: cfg.drift_per_round,
            normal: Normal::new(0.0, 1.0).expect("unit normal"),
        }
    }

    fn draw(&self, class: u32, round: u32, rng: &mut SimRng) -> Vec<f32> {
        let mean = &self.means[class as usize];
        let dir = self.drift_dirs[class as usize].as_deref();
        let offset = round as f64 * self.drift_per_round;
        mean.iter()
            .enumerate()
            .map(|(j, &m)| {
                let drift = dir.map_or(0.0, |d| offset * d[j]);
                (m + drift + self.spread * self.normal.sample(rng)) as f32
            })
            .collect()
    }
}

/// Generate a synthetic dataset: seed set, held-out final test set, and a
/// per-round stream, all as one id-unique universe plus a manifest.
///
/// Deterministic: identical configs (including seed) produce identical
/// samples and manifests.
pub fn gen_synthetic(cfg: &SynthConfig) -> Result<(Dataset, StreamManifest)> {
    cfg.validate()?;
    let mut rng = SimRng::seed_from_u64(cfg.seed);
    let clusters = ClusterSampler::new(cfg);
    let non_targets = cfg.non_targets();
    let k = cfg.class_count;

    let total = cfg.total_samples().expect("validated") as usize;
    let mut samples: Vec<SensorSample> = Vec::with_capacity(total);
    let push = |samples: &mut Vec<SensorSample>,
                    round: u32,
                    t: u32,
                    label: u32,
                    emb: Vec<f32>| {
        let id = samples.len() as u64;
        samples.push(SensorSample {
            id,
            round,
            t,
            embedding: emb,
            true_label: label,
        });
        id
    };

    // Seed set: n_per_class undrifted examples of every class.
    let mut seed_ids = Vec::with_capacity(k * cfg.n_per_class);
    for c in 0..k as u32 {
        for _ in 0..cfg.n_per_class {
            let emb = clusters.draw(c, 0, &mut rng);
            seed_ids.push(push(&mut samples, 0, 0, c, emb));
        }
    }

    // Held-out final test set, biased toward target classes by
    // test_target_fraction. Target test samples are spread uniformly over
    // round positions so a drifting target stays represented end to end.
    let n_target_test = (cfg.test_size as f64 * cfg.test_target_fraction).round() as usize;
    let mut test_ids = Vec::with_capacity(cfg.test_size);
    for i in 0..cfg.test_size {
        let (label, round) = if i < n_target_test {
            let c = cfg.target_classes[rng.random_range(0..cfg.target_classes.len())];
            (c, rng.random_range(0..cfg.rounds as u32))
        } else {
            (non_targets[rng.random_range(0..non_targets.len())], 0)
        };
        let emb = clusters.draw(label, round, &mut rng);
        test_ids.push(push(&mut samples, round, 0, label, emb));
    }

    // Stream: rounds x steps, each step a target with target_prevalence.
    let mut rounds = Vec::with_capacity(cfg.rounds);
    for round in 0..cfg.rounds as u32 {
        let mut ids = Vec::with_capacity(cfg.steps_per_round);
        for t in 0..cfg.steps_per_round as u32 {
            let label = if rng.random::<f64>() < cfg.target_prevalence {
                cfg.target_classes[rng.random_range(0..cfg.target_classes.len())]
            } else {
                non_targets[rng.random_range(0..non_targets.len())]
            };
            let emb = clusters.draw(label, round, &mut rng);
            ids.push(push(&mut samples, round, t, label, emb));
        }
        rounds.push(ids);
    }

    let header = DatasetHeader {
        dim: cfg.dim,
        class_count: k,
        class_names: (0..k).map(|c| format!("class_{c}")).collect(),
        target_classes: cfg.target_classes.clone(),
    };
    let dataset = Dataset::new(header, samples)?;
    let manifest = StreamManifest {
        rounds,
        seed_ids,
        test_ids,
    };
    manifest.validate(&dataset)?;
    Ok((dataset, manifest))
}

// ---------------------------------------------------------------------------
// File formats
// ---------------------------------------------------------------------------

const MAGIC: &[u8; 4] = b"HVST";
const VERSION: u16 = 1;

/// Write the binary dataset format: magic "HVST", version, header, then
/// fixed-size records (u64 id, u32 label, d x f32 embedding), little-endian.
pub fn write_dataset_binary(dataset: &Dataset, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e: std::io::Error| Error::io(path.display().to_string(), e);
    let h = &dataset.header;
    w.write_all(MAGIC).map_err(io_err)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(io_err)?;
    w.write_all(&(h.dim as u32).to_le_bytes()).map_err(io_err)?;
    w.write_all(&(h.class_count as u32).to_le_bytes())
        .map_err(io_err)?;
    w.write_all(&(h.target_classes.len() as u32).to_le_bytes())
        .map_err(io_err)?;
    for &c in &h.target_classes {
        w.write_all(&c.to_le_bytes()).map_err(io_err)?;
    }
    for name in &h.class_names {
        w.write_all(&(name.len() as u32).to_le_bytes())
            .map_err(io_err)?;
        w.write_all(name.as_bytes()).map_err(io_err)?;
    }
    w.write_all(&(dataset.len() as u64).to_le_bytes())
        .map_err(io_err)?;
    for s in dataset.samples() {
        w.write_all(&s.id.to_le_bytes()).map_err(io_err)?;
        w.write_all(&s.true_label.to_le_bytes()).map_err(io_err)?;
        for &x in &s.embedding {
            w.write_all(&x.to_le_bytes()).map_err(io_err)?;
        }
    }
    w.flush().map_err(io_err)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::DatasetFormat {
                offset: self.pos as u64,
                reason: format!("unexpected end of file reading {what}"),
            });
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }
    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
    fn f32(&mut self, what: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

fn load_dataset_binary(bytes: &[u8]) -> Result<Dataset> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    let magic = c.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::DatasetFormat {
            offset: 0,
            reason: format!("bad magic {magic:?}, expected {MAGIC:?}"),
        });
    }
    let version = c.u16("version")?;
    if version != VERSION {
        return Err(Error::DatasetFormat {
            offset: 4,
            reason: format!("unsupported version {version}, expected {VERSION}"),
        });
    }
    let dim = c.u32("dim")? as usize;
    let class_count = c.u32("class_count")? as usize;
    let n_targets = c.u32("n_targets")? as usize;
    let mut target_classes = Vec::with_capacity(n_targets);
    for _ in 0..n_targets {
        target_classes.push(c.u32("target class")?);
    }
    let mut class_names = Vec::with_capacity(class_count);
    for i in 0..class_count {
        let len = c.u32("class name length")? as usize;
        let name_off = c.pos as u64;
        let raw = c.take(len, "class name")?;
        let name = std::str::from_utf8(raw).map_err(|_| Error::DatasetFormat {
            offset: name_off,
            reason: format!("class name {i} is not valid UTF-8"),
        })?;
        class_names.push(name.to_string());
    }
    let n = c.u64("record count")? as usize;
    let mut samples = Vec::with_capacity(n);
    let mut seen = HashSet::with_capacity(n);
    for rec in 0..n {
        let rec_off = c.pos as u64;
        let id = c.u64("record id")?;
        if !seen.insert(id) {
            return Err(Error::DatasetFormat {
                offset: rec_off,
                reason: format!("duplicate id {id} at record {rec}"),
            });
        }
        let label = c.u32("record label")?;
        let mut embedding = Vec::with_capacity(dim);
        for j in 0..dim {
            let v = c.f32("embedding value").map_err(|_| Error::DatasetFormat {
                offset: rec_off,
                reason: format!(
                    "record {rec} truncated at embedding element {j} (dimension mismatch with header d={dim}?)"
                ),
            })?;
            embedding.push(v);
        }
        samples.push(SensorSample {
            id,
            round: 0,
            t: 0,
            embedding,
            true_label: label,
        });
    }
    if c.pos != bytes.len() {
        return Err(Error::DatasetFormat {
            offset: c.pos as u64,
            reason: format!(
                "{} trailing bytes after {n} records (dimension mismatch with header d={dim}?)",
                bytes.len() - c.pos
            ),
        });
    }
    let header = DatasetHeader {
        dim,
        class_count,
        class_names,
        target_classes,
    };
    Dataset::new(header, samples)
}

/// Sidecar metadata for the CSV format (class names and target classes do
/// not fit the flat CSV layout).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CsvSidecar {
    dim: usize,
    class_count: usize,
    class_names: Vec<String>,
    target_classes: Vec<u32>,
}

fn sidecar_path(csv_path: &Path) -> std::path::PathBuf {
    let mut os = csv_path.as_os_str().to_owned();
    os.push(".meta.toml");
    std::path::PathBuf::from(os)
}

/// Write the CSV dataset format: `id,label,e0,...,e{d-1}` plus a
/// `<file>.meta.toml` sidecar with class names and targets.
pub fn write_dataset_csv(dataset: &Dataset, path: &Path) -> Result<()> {
    let h = &dataset.header;
    let file = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e: std::io::Error| Error::io(path.display().to_string(), e);
    let mut header = String::from("id,label");
    for j in 0..h.dim {
        header.push_str(&format!(",e{j}"));
    }
    writeln!(w, "{header}").map_err(io_err)?;
    for s in dataset.samples() {
        let mut line = format!("{},{}", s.id, s.true_label);
        for &x in &s.embedding {
            line.push(',');
            line.push_str(&format!("{x}"));
        }
        writeln!(w, "{line}").map_err(io_err)?;
    }
    w.flush().map_err(io_err)?;

    let sidecar = CsvSidecar {
        dim: h.dim,
        class_count: h.class_count,
        class_names: h.class_names.clone(),
        target_classes: h.target_classes.clone(),
    };
    let text = toml::to_string(&sidecar).expect("sidecar serializes");
    std::fs::write(sidecar_path(path), text)
        .map_err(|e| Error::io(sidecar_path(path).display().to_string(), e))
}

fn load_dataset_csv(text: &str, path: &Path) -> Result<Dataset> {
    let side_path = sidecar_path(path);
    let side_text = std::fs::read_to_string(&side_path)
        .map_err(|e| Error::io(side_path.display().to_string(), e))?;
    let side: CsvSidecar = toml::from_str(&side_text).map_err(|e| Error::Parse {
        path: side_path.display().to_string(),
        reason: e.to_string(),
    })?;

    let parse_err = |line: usize, reason: String| Error::Parse {
        path: path.display().to_string(),
        reason: format!("line {}: {reason}", line + 1),
    };
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(0, "empty file".into()))?;
    let expected_cols = 2 + side.dim;
    if header.split(',').count() != expected_cols {
        return Err(parse_err(
            0,
            format!(
                "header has {} columns, expected {expected_cols} (d={})",
                header.split(',').count(),
                side.dim
            ),
        ));
    }
    let mut samples = Vec::new();
    let mut seen = HashSet::new();
    for (lineno, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != expected_cols {
            return Err(parse_err(
                lineno,
                format!(
                    "record has {} columns, expected {expected_cols} (dimension mismatch)",
                    fields.len()
                ),
            ));
        }
        let id: u64 = fields[0]
            .trim()
            .parse()
            .map_err(|_| parse_err(lineno, format!("bad id {:?}", fields[0])))?;
        if !seen.insert(id) {
            return Err(parse_err(lineno, format!("duplicate id {id}")));
        }
        let label: u32 = fields[1]
            .trim()
            .parse()
            .map_err(|_| parse_err(lineno, format!("bad label {:?}", fields[1])))?;
        let mut embedding = Vec::with_capacity(side.dim);
        for f in &fields[2..] {
            let v: f32 = f
                .trim()
                .parse()
                .map_err(|_| parse_err(lineno, format!("bad embedding value {f:?}")))?;
            embedding.push(v);
        }
        samples.push(SensorSample {
            id,
            round: 0,
            t: 0,
            embedding,
            true_label: label,
        });
    }
    let header = DatasetHeader {
        dim: side.dim,
        class_count: side.class_count,
        class_names: side.class_names,
        target_classes: side.target_classes,
    };
    Dataset::new(header, samples)
}

/// Load a dataset file, sniffing the format from the leading magic bytes.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut r = BufReader::new(file);
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    if bytes.starts_with(MAGIC) {
        load_dataset_binary(&bytes)
    } else {
        let text = String::from_utf8(bytes).map_err(|_| Error::Parse {
            path: path.display().to_string(),
            reason: "not a HVST binary file and not valid UTF-8 text".into(),
        })?;
        load_dataset_csv(&text, path)
    }
}

pub fn write_manifest(manifest: &StreamManifest, path: &Path) -> Result<()> {
    let text = toml::to_string(manifest).expect("manifest serializes");
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn load_manifest(path: &Path) -> Result<StreamManifest> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    toml::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        reason: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> SynthConfig {
        SynthConfig {
            dim: 8,
            class_count: 3,
            target_classes: vec![2],
            n_per_class: 4,
            test_size: 20,
            test_target_fraction: 0.5,
            target_prevalence: 0.1,
            cluster_spread: 0.5,
            class_margin: 3.0,
            drift_per_round: 0.0,
            rounds: 3,
            steps_per_round: 50,
            stride: 1,
            seed: 7,
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = small_cfg();
        let (d1, m1) = gen_synthetic(&cfg).unwrap();
        let (d2, m2) = gen_synthetic(&cfg).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(d1.samples(), d2.samples());
    }

    #[test]
    fn id_sets_are_disjoint_and_complete() {
        let cfg = small_cfg();
        let (d, m) = gen_synthetic(&cfg).unwrap();
        m.validate(&d).unwrap();
        let total =
            cfg.class_count * cfg.n_per_class + cfg.test_size + cfg.rounds * cfg.steps_per_round;
        assert_eq!(d.len(), total);
        assert_eq!(m.seed_ids.len(), cfg.class_count * cfg.n_per_class);
        assert_eq!(m.test_ids.len(), cfg.test_size);
        assert_eq!(m.total_stream_len(), cfg.rounds * cfg.steps_per_round);
    }

    #[test]
    fn target_prevalence_matches_binomial_band() {
        // Per-round target counts must sit inside a 3-sigma band of
        // Binomial(T, p) for essentially all of 100 seeds.
        let mut cfg = small_cfg();
        cfg.target_prevalence = 0.02;
        cfg.steps_per_round = 1000;
        cfg.rounds = 1;
        let p = cfg.target_prevalence;
        let t = cfg.steps_per_round as f64;
        let sigma = (t * p * (1.0 - p)).sqrt();
        let mut within = 0;
        let n_seeds = 100;
        for seed in 0..n_seeds {
            cfg.seed = seed;
            let (d, m) = gen_synthetic(&cfg).unwrap();
            let count = m.rounds[0]
                .iter()
                .filter(|&&id| d.header.is_target(d.get(id).unwrap().true_label))
                .count() as f64;
            if (count - t * p).abs() <= 3.0 * sigma {
                within += 1;
            }
        }
        // 3 sigma covers ~99.7%; allow a couple of outliers.
        assert!(within >= n_seeds - 3, "only {within}/{n_seeds} in band");
    }

    #[test]
    fn degenerate_clusters_are_nearest_centroid_separable() {
        let mut cfg = small_cfg();
        cfg.class_count = 2;
        cfg.target_classes = vec![1];
        cfg.cluster_spread = 1e-9;
        let (d, _) = gen_synthetic(&cfg).unwrap();
        for s in d.samples() {
            let best = (0..cfg.class_count)
                .min_by(|&a, &b| {
                    let da = dist_to_mean(&s.embedding, a, cfg.dim, cfg.class_margin);
                    let db = dist_to_mean(&s.embedding, b, cfg.dim, cfg.class_margin);
                    da.partial_cmp(&db).unwrap()
                })
                .unwrap();
            assert_eq!(best as u32, s.true_label);
        }
    }

    fn dist_to_mean(emb: &[f32], class: usize, dim: usize, margin: f64) -> f64 {
        let mean = class_mean(class, dim, margin);
        emb.iter()
            .zip(&mean)
            .map(|(&x, &m)| (x as f64 - m).powi(2))
            .sum()
    }

    #[test]
    fn static_target_means_are_round_independent() {
        let mut cfg = small_cfg();
        cfg.steps_per_round = 400;
        cfg.rounds = 4;
        cfg.target_prevalence = 0.5;
        let (d, m) = gen_synthetic(&cfg).unwrap();
        let per_round_means: Vec<(Vec<f64>, usize)> = m
            .rounds
            .iter()
            .map(|ids| {
                let targets: Vec<&SensorSample> = ids
                    .iter()
                    .map(|&id| d.get(id).unwrap())
                    .filter(|s| d.header.is_target(s.true_label))
                    .collect();
                let n = targets.len();
                let mut mean = vec![0.0; cfg.dim];
                for s in &targets {
                    for (j, &x) in s.embedding.iter().enumerate() {
                        mean[j] += x as f64 / n as f64;
                    }
                }
                (mean, n)
            })
            .collect();
        for w in per_round_means.windows(2) {
            let (m0, n0) = &w[0];
            let (m1, n1) = &w[1];
            let bound = 2.0 * (4.0 * cfg.cluster_spread / (*n0.min(n1) as f64).sqrt());
            for j in 0..cfg.dim {
                assert!((m0[j] - m1[j]).abs() < bound, "coordinate {j} drifted");
            }
        }
    }

    #[test]
    fn drift_displaces_target_mean() {
        let mut cfg = small_cfg();
        cfg.drift_per_round = 1.0;
        cfg.steps_per_round = 500;
        cfg.target_prevalence = 0.5;
        cfg.cluster_spread = 0.05;
        cfg.rounds = 3;
        let (d, m) = gen_synthetic(&cfg).unwrap();
        let mean_of = |ids: &[u64]| {
            let targets: Vec<&SensorSample> = ids
                .iter()
                .map(|&id| d.get(id).unwrap())
                .filter(|s| d.header.is_target(s.true_label))
                .collect();
            let n = targets.len() as f64;
            let mut mean = vec![0.0; cfg.dim];
            for s in &targets {
                for (j, &x) in s.embedding.iter().enumerate() {
                    mean[j] += x as f64 / n;
                }
            }
            mean
        };
        let m0 = mean_of(&m.rounds[0]);
        let m2 = mean_of(&m.rounds[2]);
        let shift: f64 = m0
            .iter()
            .zip(&m2)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!((shift - 2.0).abs() < 0.1, "expected ~2.0 shift, got {shift}");
    }

    #[test]
    fn binary_round_trip_is_bit_exact() {
        let cfg = small_cfg();
        let (d, _) = gen_synthetic(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.hvst");
        write_dataset_binary(&d, &path).unwrap();
        let loaded = load_dataset(&path).unwrap();
        assert_eq!(loaded.header, d.header);
        assert_eq!(loaded.len(), d.len());
        for (a, b) in loaded.samples().iter().zip(d.samples()) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.true_label, b.true_label);
            assert_eq!(a.embedding, b.embedding);
        }
        // Byte determinism: writing the loaded dataset reproduces the file.
        let path2 = dir.path().join("data2.hvst");
        write_dataset_binary(&loaded, &path2).unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(&path2).unwrap()
        );
    }

    #[test]
    fn csv_round_trip_preserves_f32_values() {
        let cfg = small_cfg();
        let (d, _) = gen_synthetic(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        write_dataset_csv(&d, &path).unwrap();
        let loaded = load_dataset(&path).unwrap();
        assert_eq!(loaded.header, d.header);
        for (a, b) in loaded.samples().iter().zip(d.samples()) {
            assert_eq!(a.embedding, b.embedding, "f32 shortest print round-trips");
        }
    }

    #[test]
    fn dimension_mismatch_reports_record() {
        // Header says d=3 but the single record carries 4 floats.
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.hvst");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"HVST");
        bytes.extend_from_slice(&1u16.to_le_bytes());
        bytes.extend_from_slice(&3u32.to_le_bytes()); // d = 3
        bytes.extend_from_slice(&2u32.to_le_bytes()); // K = 2
        bytes.extend_from_slice(&1u32.to_le_bytes()); // one target
        bytes.extend_from_slice(&0u32.to_le_bytes());
        for name in ["a", "b"] {
            bytes.extend_from_slice(&(name.len() as u32).to_le_bytes());
            bytes.extend_from_slice(name.as_bytes());
        }
        bytes.extend_from_slice(&1u64.to_le_bytes()); // one record
        bytes.extend_from_slice(&7u64.to_le_bytes());
        bytes.extend_from_slice(&0u32.to_le_bytes());
        for _ in 0..4 {
            bytes.extend_from_slice(&1.5f32.to_le_bytes());
        }
        std::fs::write(&path, &bytes).unwrap();
        let err = load_dataset(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("dimension mismatch"), "got: {msg}");
    }

    #[test]
    fn bad_magic_and_version_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.hvst");
        std::fs::write(&path, b"HVSTxx").unwrap();
        let err = load_dataset(&path).unwrap_err();
        assert!(err.to_string().contains("version") || err.to_string().contains("end of file"));
    }

    #[test]
    fn csv_duplicate_id_names_the_id() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dup.csv");
        std::fs::write(&path, "id,label,e0\n5,0,1.0\n5,1,2.0\n").unwrap();
        let side = CsvSidecar {
            dim: 1,
            class_count: 2,
            class_names: vec!["a".into(), "b".into()],
            target_classes: vec![1],
        };
        std::fs::write(sidecar_path(&path), toml::to_string(&side).unwrap()).unwrap();
        let err = load_dataset(&path).unwrap_err();
        assert!(err.to_string().contains("duplicate id 5"), "{err}");
    }

    #[test]
    fn invalid_config_names_offending_key() {
        let mut cfg = small_cfg();
        cfg.target_prevalence = 1.5;
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("target_prevalence"));
    }
}
