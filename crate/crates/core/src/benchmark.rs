//! Tabular architecture-evaluation oracle.
//!
//! A [`BenchmarkTable`] stands in for training networks: every architecture of
//! a space has a log-likelihood proxy `ln p(D | ŵ, α)` (computed on the
//! validation split) and class-probability matrices for the validation and
//! test splits. Tables are either generated synthetically or loaded from a
//! `.qbench` file:
//!
//! ```text
//! "QBNC1" | u32 LE header length | JSON header
//!         | f64 LE log-evidence[N]
//!         | f64 LE val predictions[N][n_val][C]
//!         | f64 LE test predictions[N][n_test][C]
//!         | u16 LE val labels[n_val] | u16 LE test labels[n_test]
//! ```
//!
//! Architectures appear in the order listed by the header's `archs` array.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::archspace::{ArchitectureId, SpaceConfig};
use crate::error::{Error, Result};
use crate::rng::{mix, seeded, stream};

pub const MAGIC: &[u8; 5] = b"QBNC1";
pub const FORMAT_VERSION: u32 = 1;

/// Probability floor used wherever a log of a predicted probability is taken.
pub const PROB_FLOOR: f64 = 1e-12;

const SIMPLEX_TOL: f64 = 1e-9;

/// Row-major examples × classes matrix of class probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionMatrix {
    n_rows: usize,
    n_classes: usize,
    data: Vec<f64>,
}

impl PredictionMatrix {
    /// Checks that every row lies on the probability simplex.
    pub fn new(n_rows: usize, n_classes: usize, data: Vec<f64>) -> Result<Self> {
        let m = Self::from_raw(n_rows, n_classes, data)?;
        for i in 0..n_rows {
            let row = m.row(i);
            let sum: f64 = row.iter().sum();
            if row.iter().any(|&p| !(p >= 0.0)) || (sum - 1.0).abs() > SIMPLEX_TOL {
                return Err(Error::Input(format!(
                    "prediction row {i} is not on the simplex (sum {sum})"
                )));
            }
        }
        Ok(m)
    }

    pub(crate) fn from_raw(n_rows: usize, n_classes: usize, data: Vec<f64>) -> Result<Self> {
        if n_classes == 0 || data.len() != n_rows * n_classes {
            return Err(Error::Shape(format!(
                "{} values for a {n_rows}×{n_classes} prediction matrix",
                data.len()
            )));
        }
        Ok(PredictionMatrix {
            n_rows,
            n_classes,
            data,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_classes = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_classes) {
            return Err(Error::Shape("ragged prediction rows".into()));
        }
        Self::new(rows.len(), n_classes, rows.concat())
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_classes..(i + 1) * self.n_classes]
    }

    pub fn get(&self, i: usize, c: usize) -> f64 {
        self.data[i * self.n_classes + c]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Probability assigned to each row's label.
    pub fn label_probs(&self, labels: &[u16]) -> Vec<f64> {
        labels
            .iter()
            .enumerate()
            .map(|(i, &y)| self.get(i, y as usize))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkRecord {
    pub arch: ArchitectureId,
    /// `ln p(D | ŵ, α)` on the validation split.
    pub log_evidence_proxy: f64,
    pub val_predictions: PredictionMatrix,
    pub test_predictions: PredictionMatrix,
}

/// Parameters of the synthetic benchmark generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticGenConfig {
    pub space: SpaceConfig,
    pub n_val: usize,
    pub n_test: usize,
    pub n_classes: usize,
    /// Number of likelihood peaks.
    pub n_modes: usize,
    /// Decay rate of quality with Hamming distance from the nearest peak.
    pub peak_sharpness: f64,
    /// Scale of the per-example probability that an architecture backs a wrong class.
    pub label_noise: f64,
    pub seed: u64,
}

impl Default for SyntheticGenConfig {
    /// A 4096-architecture cell space (4 nodes, 6 edges, 4 operations).
    fn default() -> Self {
        SyntheticGenConfig {
            space: SpaceConfig::cell_with_ops(
                4,
                &["none", "skip_connect", "nor_conv_1x1", "nor_conv_3x3"],
            ),
            n_val: 100,
            n_test: 100,
            n_classes: 10,
            n_modes: 3,
            peak_sharpness: 0.5,
            label_noise: 0.2,
            seed: 0,
        }
    }
}

impl SyntheticGenConfig {
    pub fn validate(&self) -> Result<()> {
        self.space.validate()?;
        if self.n_modes == 0 || self.n_val == 0 || self.n_test == 0 || self.n_classes == 0 {
            return Err(Error::Config("synthetic counts must be ≥ 1".into()));
        }
        if self.n_classes > u16::MAX as usize {
            return Err(Error::Config("too many classes".into()));
        }
        if !(self.peak_sharpness > 0.0) {
            return Err(Error::Config("peak_sharpness must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.label_noise) {
            return Err(Error::Config("label_noise must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    space: SpaceConfig,
    n_archs: usize,
    n_val: usize,
    n_test: usize,
    n_classes: usize,
    query_cost_units: f64,
    archs: Vec<ArchitectureId>,
}

/// The oracle. Read-only apart from the query counter.
#[derive(Debug)]
pub struct BenchmarkTable {
    space: SpaceConfig,
    labels_val: Vec<u16>,
    labels_test: Vec<u16>,
    records: Vec<BenchmarkRecord>,
    index: HashMap<ArchitectureId, usize>,
    query_cost_units: f64,
    queries: AtomicU64,
}

impl BenchmarkTable {
    pub fn new(
        space: SpaceConfig,
        labels_val: Vec<u16>,
        labels_test: Vec<u16>,
        records: Vec<BenchmarkRecord>,
        query_cost_units: f64,
    ) -> Result<Self> {
        space.validate()?;
        let n_classes = records
            .first()
            .map(|r| r.val_predictions.n_classes())
            .unwrap_or(1);
        let mut index = HashMap::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            if !space.contains(&r.arch) {
                return Err(Error::Input(format!("{} is not in the space", r.arch)));
            }
            if r.val_predictions.n_rows() != labels_val.len()
                || r.test_predictions.n_rows() != labels_test.len()
                || r.val_predictions.n_classes() != n_classes
                || r.test_predictions.n_classes() != n_classes
            {
                return Err(Error::Shape(format!("record {} has inconsistent shape", r.arch)));
            }
            if !r.log_evidence_proxy.is_finite() {
                return Err(Error::Input(format!("non-finite log evidence for {}", r.arch)));
            }
            if index.insert(r.arch.clone(), i).is_some() {
                return Err(Error::Input(format!("duplicate record for {}", r.arch)));
            }
        }
        if labels_val
            .iter()
            .chain(&labels_test)
            .any(|&y| y as usize >= n_classes)
        {
            return Err(Error::Input("label outside the class range".into()));
        }
        Ok(BenchmarkTable {
            space,
            labels_val,
            labels_test,
            records,
            index,
            query_cost_units,
            queries: AtomicU64::new(0),
        })
    }

    pub fn space(&self) -> &SpaceConfig {
        &self.space
    }

    pub fn labels_val(&self) -> &[u16] {
        &self.labels_val
    }

    pub fn labels_test(&self) -> &[u16] {
        &self.labels_test
    }

    pub fn n_classes(&self) -> usize {
        self.records
            .first()
            .map(|r| r.val_predictions.n_classes())
            .unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn query_cost_units(&self) -> f64 {
        self.query_cost_units
    }

    /// All records in table order. Does not touch the query counter.
    pub fn records(&self) -> &[BenchmarkRecord] {
        &self.records
    }

    /// Looks up a record without charging a query.
    pub fn peek(&self, id: &ArchitectureId) -> Result<&BenchmarkRecord> {
        self.index
            .get(id)
            .map(|&i| &self.records[i])
            .ok_or_else(|| Error::MissingRecord(id.to_string()))
    }

    /// The oracle call: returns the record and charges one query.
    pub fn query(&self, id: &ArchitectureId) -> Result<&BenchmarkRecord> {
        let r = self.peek(id)?;
        self.queries.fetch_add(1, Ordering::Relaxed);
        Ok(r)
    }

    pub fn queries_made(&self) -> u64 {
        self.queries.load(Ordering::Relaxed)
    }

    /// Total cost charged so far, `queries × query_cost_units`.
    pub fn cost_consumed(&self) -> f64 {
        self.queries_made() as f64 * self.query_cost_units
    }

    /// Stable content hash, used to refuse mixing results from different benchmarks.
    pub fn fingerprint(&self) -> String {
        use std::hash::Hasher;
        let mut h = fnv::FnvHasher::default();
        h.write(serde_json::to_string(&self.space).unwrap_or_default().as_bytes());
        h.write_usize(self.records.len());
        h.write_usize(self.labels_val.len());
        h.write_usize(self.labels_test.len());
        for r in &self.records {
            h.write(r.arch.as_str().as_bytes());
            h.write_u64(r.log_evidence_proxy.to_bits());
        }
        for y in self.labels_val.iter().chain(&self.labels_test) {
            h.write_u16(*y);
        }
        format!("{:016x}", h.finish())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let n_classes = self.n_classes();
        let header = Header {
            version: FORMAT_VERSION,
            space: self.space.clone(),
            n_archs: self.records.len(),
            n_val: self.labels_val.len(),
            n_test: self.labels_test.len(),
            n_classes,
            query_cost_units: self.query_cost_units,
            archs: self.records.iter().map(|r| r.arch.clone()).collect(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut buf = Vec::with_capacity(
            MAGIC.len()
                + 4
                + json.len()
                + 8 * self.records.len()
                    * (1 + (header.n_val + header.n_test) * n_classes)
                + 2 * (header.n_val + header.n_test),
        );
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
        buf.extend_from_slice(&json);
        for r in &self.records {
            buf.extend_from_slice(&r.log_evidence_proxy.to_le_bytes());
        }
        for r in &self.records {
            for v in r.val_predictions.as_slice() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        for r in &self.records {
            for v in r.test_predictions.as_slice() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        for y in self.labels_val.iter().chain(&self.labels_test) {
            buf.extend_from_slice(&y.to_le_bytes());
        }
        let mut f = fs::File::create(path)?;
        f.write_all(&buf)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = fs::read(path)?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 4 || &bytes[..MAGIC.len()] != MAGIC {
            return Err(Error::Format("missing QBNC1 magic".into()));
        }
        let mut pos = MAGIC.len();
        let header_len = u32::from_le_bytes(bytes[pos..pos + 4].try_into().unwrap()) as usize;
        pos += 4;
        let header_bytes = bytes
            .get(pos..pos + header_len)
            .ok_or_else(|| Error::Format("truncated header".into()))?;
        let header: Header = serde_json::from_slice(header_bytes)
            .map_err(|e| Error::Format(format!("bad header: {e}")))?;
        pos += header_len;
        if header.version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported version {} (expected {FORMAT_VERSION})",
                header.version
            )));
        }
        if header.archs.len() != header.n_archs {
            return Err(Error::Format(format!(
                "header declares {} architectures but lists {}",
                header.n_archs,
                header.archs.len()
            )));
        }
        let n = header.n_archs;
        let c = header.n_classes;
        let val_len = header.n_val * c;
        let test_len = header.n_test * c;
        let n_floats = n + n * val_len + n * test_len;
        let expected = n_floats * 8 + 2 * (header.n_val + header.n_test);
        let payload = &bytes[pos..];
        if payload.len() != expected {
            return Err(Error::Format(format!(
                "payload is {} bytes, header implies {expected}",
                payload.len()
            )));
        }
        let floats: Vec<f64> = payload[..n_floats * 8]
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        let labels: Vec<u16> = payload[n_floats * 8..]
            .chunks_exact(2)
            .map(|b| u16::from_le_bytes(b.try_into().unwrap()))
            .collect();
        let (labels_val, labels_test) = labels.split_at(header.n_val);

        let log_ev = &floats[..n];
        let val_block = &floats[n..n + n * val_len];
        let test_block = &floats[n + n * val_len..];
        let mut records = Vec::with_capacity(n);
        for (i, arch) in header.archs.into_iter().enumerate() {
            let val = PredictionMatrix::new(
                header.n_val,
                c,
                val_block[i * val_len..(i + 1) * val_len].to_vec(),
            )
            .map_err(|e| Error::Format(format!("{arch}: {e}")))?;
            let test = PredictionMatrix::new(
                header.n_test,
                c,
                test_block[i * test_len..(i + 1) * test_len].to_vec(),
            )
            .map_err(|e| Error::Format(format!("{arch}: {e}")))?;
            records.push(BenchmarkRecord {
                arch,
                log_evidence_proxy: log_ev[i],
                val_predictions: val,
                test_predictions: test,
            });
        }
        BenchmarkTable::new(
            header.space,
            labels_val.to_vec(),
            labels_test.to_vec(),
            records,
            header.query_cost_units,
        )
        .map_err(|e| match e {
            Error::Format(_) => e,
            other => Error::Format(other.to_string()),
        })
    }
}

/// Latent quality of every enumerated architecture: max over anchors of
/// `exp(-sharpness · hamming)`.
pub fn latent_quality(config: &SyntheticGenConfig) -> Result<Vec<(ArchitectureId, f64)>> {
    let (ids, quality) = quality_surface(config)?;
    Ok(ids.into_iter().zip(quality).collect())
}

fn quality_surface(config: &SyntheticGenConfig) -> Result<(Vec<ArchitectureId>, Vec<f64>)> {
    config.validate()?;
    let space = &config.space;
    let ids = space.enumerate()?;
    let archs: Vec<Vec<u16>> = ids
        .iter()
        .map(|id| space.decode(id).map(|a| a.choices().to_vec()))
        .collect::<Result<_>>()?;
    let mut rng = seeded(config.seed, stream::SYNTH_ANCHORS);
    let anchors: Vec<usize> = (0..config.n_modes)
        .map(|_| rng.random_range(0..ids.len()))
        .collect();
    let quality = archs
        .iter()
        .map(|a| {
            anchors
                .iter()
                .map(|&k| {
                    let d = a.iter().zip(&archs[k]).filter(|(x, y)| x != y).count();
                    if d == 0 {
                        1.0
                    } else {
                        (-config.peak_sharpness * d as f64).exp()
                    }
                })
                .fold(0.0, f64::max)
        })
        .collect();
    Ok((ids, quality))
}

/// Builds a synthetic table whose likelihood surface has `n_modes` narrow peaks.
///
/// Each prediction row blends a one-hot vector with weight `q` (the latent
/// quality) and a fresh Dirichlet(1) draw with weight `1 - q`. The one-hot
/// points at the true label, except with probability `label_noise · (1 - q)`
/// where it points at a uniformly chosen wrong class.
pub fn generate_synthetic(config: &SyntheticGenConfig) -> Result<BenchmarkTable> {
    let (ids, quality) = quality_surface(config)?;
    let c = config.n_classes;
    let mut label_rng = seeded(config.seed, stream::SYNTH_LABELS);
    let labels_val: Vec<u16> = (0..config.n_val)
        .map(|_| label_rng.random_range(0..c) as u16)
        .collect();
    let labels_test: Vec<u16> = (0..config.n_test)
        .map(|_| label_rng.random_range(0..c) as u16)
        .collect();

    let mut records = Vec::with_capacity(ids.len());
    for (i, (id, &q)) in ids.iter().zip(&quality).enumerate() {
        let mut rng = seeded(mix(config.seed, i as u64), stream::SYNTH_ARCH);
        let mut rows = |labels: &[u16]| -> Vec<f64> {
            let mut data = Vec::with_capacity(labels.len() * c);
            for &y in labels {
                let mut target = y as usize;
                if c > 1 && rng.random::<f64>() < config.label_noise * (1.0 - q) {
                    let wrong = rng.random_range(0..c - 1);
                    target = if wrong >= target { wrong + 1 } else { wrong };
                }
                let draws: Vec<f64> = (0..c).map(|_| Exp1.sample(&mut rng)).collect();
                let total: f64 = draws.iter().sum();
                for (k, e) in draws.iter().enumerate() {
                    let hot = if k == target { q } else { 0.0 };
                    data.push(hot + (1.0 - q) * e / total);
                }
            }
            data
        };
        let val = rows(&labels_val);
        let test = rows(&labels_test);
        let val = PredictionMatrix::new(config.n_val, c, val)?;
        let test = PredictionMatrix::new(config.n_test, c, test)?;
        let log_evidence_proxy = val
            .label_probs(&labels_val)
            .iter()
            .map(|p| p.max(PROB_FLOOR).ln())
            .sum();
        records.push(BenchmarkRecord {
            arch: id.clone(),
            log_evidence_proxy,
            val_predictions: val,
            test_predictions: test,
        });
    }
    BenchmarkTable::new(config.space.clone(), labels_val, labels_test, records, 1.0)
}
