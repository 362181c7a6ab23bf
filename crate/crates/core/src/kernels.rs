//! Positive-semidefinite kernels over architectures.
//!
//! Cells use a normalized Weisfeiler-Lehman subtree kernel. Edge labels are
//! lifted onto nodes first: a node's initial label is the sorted multiset of
//! its incident edge operations, each tagged with its direction (`i` for an
//! incoming edge, `o` for an outgoing one). Ordinal architectures use an RBF
//! kernel over the level vectors.
//!
//! Kernel evaluation works on [`Embedding`]s, which are computed once per
//! architecture (and, for WL, cached per depth in a [`FeatureCache`]).

use std::collections::HashMap;
use std::hash::Hasher;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, RwLock};

use fnv::FnvHasher;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::archspace::{Architecture, ArchitectureId, CellArchitecture, OrdinalArchitecture, SpaceConfig, SpaceKind};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    /// Weisfeiler-Lehman subtree kernel for cells.
    Wl,
    /// Squared-exponential kernel for ordinal vectors.
    Rbf,
}

impl KernelKind {
    /// The default kernel family for a space.
    pub fn for_space(kind: SpaceKind) -> Self {
        match kind {
            SpaceKind::Cell => KernelKind::Wl,
            SpaceKind::Ordinal => KernelKind::Rbf,
        }
    }

    fn space_kind(self) -> SpaceKind {
        match self {
            KernelKind::Wl => SpaceKind::Cell,
            KernelKind::Rbf => SpaceKind::Ordinal,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelHyperparams {
    pub signal_variance: f64,
    /// WL depth `h`.
    pub depth: usize,
    /// RBF lengthscales; a single entry is shared by every dimension.
    pub lengthscales: Vec<f64>,
    pub noise_variance: f64,
}

/// Observation-noise floor used for conditioning deterministic table lookups.
pub const DEFAULT_NOISE: f64 = 1e-6;

impl Default for KernelHyperparams {
    fn default() -> Self {
        KernelHyperparams {
            signal_variance: 1.0,
            depth: 1,
            lengthscales: vec![1.0],
            noise_variance: DEFAULT_NOISE,
        }
    }
}

impl KernelHyperparams {
    pub fn validate(&self) -> Result<()> {
        if !(self.signal_variance > 0.0) || !self.signal_variance.is_finite() {
            return Err(Error::Input("signal_variance must be positive".into()));
        }
        if self.lengthscales.is_empty() || self.lengthscales.iter().any(|l| !(*l > 0.0)) {
            return Err(Error::Input("lengthscales must be positive".into()));
        }
        if !(self.noise_variance >= 0.0) {
            return Err(Error::Input("noise_variance must be ≥ 0".into()));
        }
        Ok(())
    }

    fn lengthscale(&self, dim: usize) -> f64 {
        if self.lengthscales.len() == 1 {
            self.lengthscales[0]
        } else {
            self.lengthscales[dim]
        }
    }
}

/// Sparse WL histogram: `(iteration, label hash) → count`, sorted by key.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WlFeatureVector {
    entries: Vec<((usize, u64), u32)>,
}

impl WlFeatureVector {
    pub fn entries(&self) -> &[((usize, u64), u32)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dot(&self, other: &WlFeatureVector) -> f64 {
        let (mut i, mut j, mut acc) = (0, 0, 0.0);
        while i < self.entries.len() && j < other.entries.len() {
            let (ka, ca) = self.entries[i];
            let (kb, cb) = other.entries[j];
            match ka.cmp(&kb) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    acc += ca as f64 * cb as f64;
                    i += 1;
                    j += 1;
                }
            }
        }
        acc
    }

    fn normalized(&self) -> UnitFeatures {
        let mut keys = Vec::with_capacity(self.entries.len());
        let mut counts = Vec::with_capacity(self.entries.len());
        for &((it, h), c) in &self.entries {
            let mut hasher = FnvHasher::default();
            hasher.write_usize(it);
            hasher.write_u64(h);
            keys.push(hasher.finish());
            counts.push(c as f64);
        }
        // the combined key may reorder entries
        let mut order: Vec<usize> = (0..keys.len()).collect();
        order.sort_by_key(|&i| keys[i]);
        UnitFeatures {
            keys: order.iter().map(|&i| keys[i]).collect(),
            counts: order.iter().map(|&i| counts[i]).collect(),
            norm_sq: self.dot(self),
        }
    }
}

fn hash_tokens<I: IntoIterator<Item = u64>>(tag: u64, tokens: I) -> u64 {
    let mut h = FnvHasher::default();
    h.write_u64(tag);
    for t in tokens {
        h.write_u64(t);
    }
    h.finish()
}

/// WL subtree features for iterations `0..=depth`.
pub fn wl_features(cell: &CellArchitecture, depth: usize) -> WlFeatureVector {
    let n = cell.node_count;
    // incident-edge tokens: direction bit in the low position, op above it
    let mut incident: Vec<Vec<u64>> = vec![Vec::new(); n];
    let mut in_neighbours: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (&(s, t), &op) in cell.edges.iter().zip(&cell.ops) {
        incident[s].push(((op as u64) << 1) | 1);
        incident[t].push((op as u64) << 1);
        in_neighbours[t].push(s);
    }
    let mut labels: Vec<u64> = incident
        .iter_mut()
        .map(|toks| {
            toks.sort_unstable();
            hash_tokens(0, toks.iter().copied())
        })
        .collect();

    let mut counts: HashMap<(usize, u64), u32> = HashMap::new();
    for it in 0..=depth {
        if it > 0 {
            labels = (0..n)
                .map(|v| {
                    let mut nb: Vec<u64> = in_neighbours[v].iter().map(|&u| labels[u]).collect();
                    nb.sort_unstable();
                    hash_tokens(labels[v], nb)
                })
                .collect();
        }
        for &l in &labels {
            *counts.entry((it, l)).or_default() += 1;
        }
    }
    let mut entries: Vec<_> = counts.into_iter().collect();
    entries.sort_unstable();
    WlFeatureVector { entries }
}

/// WL features keyed by a combined hash, normalized lazily.
///
/// Counts stay integral so that `⟨a, a⟩ / sqrt(‖a‖² ‖a‖²)` is exactly one and
/// Cauchy–Schwarz holds without rounding slack.
#[derive(Debug)]
pub struct UnitFeatures {
    keys: Vec<u64>,
    counts: Vec<f64>,
    norm_sq: f64,
}

impl UnitFeatures {
    /// Cosine similarity.
    fn dot(&self, other: &UnitFeatures) -> f64 {
        self.raw_dot(other) / (self.norm_sq * other.norm_sq).sqrt()
    }

    fn raw_dot(&self, other: &UnitFeatures) -> f64 {
        let (mut i, mut j, mut acc) = (0, 0, 0.0);
        while i < self.keys.len() && j < other.keys.len() {
            match self.keys[i].cmp(&other.keys[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    acc += self.counts[i] * other.counts[j];
                    i += 1;
                    j += 1;
                }
            }
        }
        acc
    }
}

/// Kernel-ready representation of an architecture.
#[derive(Clone, Debug)]
pub enum Embedding {
    Wl(Arc<UnitFeatures>),
    Ordinal(Arc<[f64]>),
}

/// Memoizes WL features per `(architecture, depth)`.
#[derive(Debug, Default)]
pub struct FeatureCache {
    map: RwLock<HashMap<(Vec<u16>, usize), Arc<UnitFeatures>>>,
    computed: AtomicUsize,
}

impl FeatureCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of feature vectors computed (cache misses) so far.
    pub fn computed(&self) -> usize {
        self.computed.load(Ordering::Relaxed)
    }

    fn get(&self, cell: &CellArchitecture, depth: usize) -> Arc<UnitFeatures> {
        let key = (cell.ops.clone(), depth);
        if let Some(f) = self.map.read().unwrap().get(&key) {
            return f.clone();
        }
        let mut map = self.map.write().unwrap();
        map.entry(key)
            .or_insert_with(|| {
                self.computed.fetch_add(1, Ordering::Relaxed);
                Arc::new(wl_features(cell, depth).normalized())
            })
            .clone()
    }
}

/// A kernel family with fixed hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    pub kind: KernelKind,
    pub params: KernelHyperparams,
}

impl Kernel {
    pub fn new(kind: KernelKind, params: KernelHyperparams) -> Self {
        Kernel { kind, params }
    }

    pub fn signal_variance(&self) -> f64 {
        self.params.signal_variance
    }

    pub fn embed(&self, arch: &Architecture, cache: &FeatureCache) -> Result<Embedding> {
        match (self.kind, arch) {
            (KernelKind::Wl, Architecture::Cell(c)) => Ok(Embedding::Wl(cache.get(c, self.params.depth))),
            (KernelKind::Rbf, Architecture::Ordinal(o)) => {
                if self.params.lengthscales.len() != 1
                    && self.params.lengthscales.len() != o.levels.len()
                {
                    return Err(Error::Shape(format!(
                        "{} lengthscales for {} dimensions",
                        self.params.lengthscales.len(),
                        o.levels.len()
                    )));
                }
                Ok(Embedding::Ordinal(o.levels.iter().map(|&l| l as f64).collect()))
            }
            (k, a) => Err(Error::KernelKind(format!(
                "{k:?} kernel cannot embed a {:?} architecture",
                a.kind()
            ))),
        }
    }

    pub fn embed_ids(
        &self,
        space: &SpaceConfig,
        ids: &[ArchitectureId],
        cache: &FeatureCache,
    ) -> Result<Vec<Embedding>> {
        if space.kind() != self.kind.space_kind() {
            return Err(Error::KernelKind(format!(
                "{:?} kernel over a {:?} space",
                self.kind,
                space.kind()
            )));
        }
        ids.iter()
            .map(|id| {
                let arch = space.decode(id).map_err(|e| match e {
                    Error::InvalidArchitecture(m) if !id.as_str().starts_with(prefix(space)) => {
                        Error::KernelKind(m)
                    }
                    other => other,
                })?;
                self.embed(&arch, cache)
            })
            .collect()
    }

    #[inline]
    pub fn eval(&self, a: &Embedding, b: &Embedding) -> f64 {
        match (a, b) {
            (Embedding::Wl(fa), Embedding::Wl(fb)) => self.params.signal_variance * fa.dot(fb),
            (Embedding::Ordinal(xa), Embedding::Ordinal(xb)) => {
                let mut r2 = 0.0;
                for (d, (p, q)) in xa.iter().zip(xb.iter()).enumerate() {
                    let z = (p - q) / self.params.lengthscale(d);
                    r2 += z * z;
                }
                self.params.signal_variance * (-0.5 * r2).exp()
            }
            _ => panic!("kernel evaluated on embeddings of different kinds"),
        }
    }

    /// `k(a, x)` for every `x` in `xs`.
    pub fn row(&self, a: &Embedding, xs: &[Embedding]) -> Vec<f64> {
        xs.iter().map(|x| self.eval(a, x)).collect()
    }

    pub fn gram(&self, xs: &[Embedding], ys: &[Embedding]) -> DMatrix<f64> {
        DMatrix::from_fn(xs.len(), ys.len(), |i, j| self.eval(&xs[i], &ys[j]))
    }

    /// Symmetric Gram matrix; fills the upper triangle and mirrors it.
    pub fn gram_sym(&self, xs: &[Embedding]) -> DMatrix<f64> {
        let n = xs.len();
        let mut k = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v = self.eval(&xs[i], &xs[j]);
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
        k
    }

    /// `Σ_a Σ_b w_a w_b k(a, b)`.
    ///
    /// WL kernels are explicit feature maps, so this collapses to a squared
    /// norm in O(Σ nnz); RBF falls back to the pairwise sum.
    pub fn weighted_double_sum(&self, pts: &[Embedding], weights: &[f64]) -> f64 {
        assert_eq!(pts.len(), weights.len());
        if let KernelKind::Wl = self.kind {
            let mut acc: HashMap<u64, f64> = HashMap::new();
            for (p, &w) in pts.iter().zip(weights) {
                if let Embedding::Wl(f) = p {
                    let scale = w / f.norm_sq.sqrt();
                    for (k, c) in f.keys.iter().zip(&f.counts) {
                        *acc.entry(*k).or_default() += scale * c;
                    }
                }
            }
            let mut keys: Vec<_> = acc.into_iter().collect();
            keys.sort_unstable_by_key(|(k, _)| *k);
            return self.params.signal_variance * keys.iter().map(|(_, v)| v * v).sum::<f64>();
        }
        let mut total = 0.0;
        for i in 0..pts.len() {
            let mut row = 0.0;
            for j in (i + 1)..pts.len() {
                row += weights[j] * self.eval(&pts[i], &pts[j]);
            }
            total += weights[i] * (2.0 * row + weights[i] * self.eval(&pts[i], &pts[i]));
        }
        total
    }
}

fn prefix(space: &SpaceConfig) -> &'static str {
    match space.kind() {
        SpaceKind::Cell => "c:",
        SpaceKind::Ordinal => "o:",
    }
}

/// Normalized WL kernel between two cells.
pub fn wl_kernel(a: &CellArchitecture, b: &CellArchitecture, params: &KernelHyperparams) -> f64 {
    let fa = wl_features(a, params.depth);
    let fb = wl_features(b, params.depth);
    params.signal_variance * (fa.dot(&fb) / (fa.dot(&fa) * fb.dot(&fb)).sqrt())
}

pub fn ordinal_rbf(a: &OrdinalArchitecture, b: &OrdinalArchitecture, params: &KernelHyperparams) -> Result<f64> {
    if a.levels.len() != b.levels.len() {
        return Err(Error::Shape(format!(
            "ordinal dimensions differ: {} vs {}",
            a.levels.len(),
            b.levels.len()
        )));
    }
    if params.lengthscales.len() != 1 && params.lengthscales.len() != a.levels.len() {
        return Err(Error::Shape("lengthscale count does not match dimensions".into()));
    }
    let r2: f64 = a
        .levels
        .iter()
        .zip(&b.levels)
        .enumerate()
        .map(|(d, (&x, &y))| ((x as f64 - y as f64) / params.lengthscale(d)).powi(2))
        .sum();
    Ok(params.signal_variance * (-0.5 * r2).exp())
}

/// Gram matrix between two id lists.
pub fn gram(
    kernel: &Kernel,
    space: &SpaceConfig,
    xs: &[ArchitectureId],
    ys: &[ArchitectureId],
    cache: &FeatureCache,
) -> Result<DMatrix<f64>> {
    let ex = kernel.embed_ids(space, xs, cache)?;
    let ey = kernel.embed_ids(space, ys, cache)?;
    Ok(kernel.gram(&ex, &ey))
}
