//! Candidate-set selection.
//!
//! Every strategy queries the benchmark oracle exactly `n_total` times without
//! repeats, and returns the queried architectures with their log-likelihoods
//! and a per-iteration trace.

use std::collections::HashSet;

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::archspace::{ArchitectureId, SpaceConfig};
use crate::benchmark::BenchmarkTable;
use crate::error::{Error, Result};
use crate::kernels::{KernelHyperparams, KernelKind};
use crate::quadrature::{wsabi_evidence, EvidenceEstimate, KernelMeanConfig};
use crate::rng::{mix, seeded, stream};
use crate::surrogate::{fit_gp, fit_wsabi_optimized, optimize_hypers, Domain, GpState, HyperSearch, WsabiState};
use crate::kernels::Kernel;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Init,
    Acquired,
    Evolved,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub archs: Vec<ArchitectureId>,
    pub log_likelihoods: Vec<f64>,
    pub provenance: Vec<Provenance>,
    /// Oracle queries charged by this strategy.
    pub queries: u64,
    pub cost: f64,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.archs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.archs.is_empty()
    }

    /// Indices of the `k` best log-likelihoods, ties by id.
    pub fn top(&self, k: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&a, &b| {
            self.log_likelihoods[b]
                .total_cmp(&self.log_likelihoods[a])
                .then_with(|| self.archs[a].cmp(&self.archs[b]))
        });
        idx.truncate(k);
        idx
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchBudget {
    pub n_init: usize,
    pub n_total: usize,
    pub pool_size: usize,
    pub seed: u64,
}

impl Default for SearchBudget {
    fn default() -> Self {
        SearchBudget {
            n_init: 10,
            n_total: 150,
            pool_size: 512,
            seed: 0,
        }
    }
}

impl SearchBudget {
    pub fn validate(&self) -> Result<()> {
        if self.n_init > self.n_total {
            return Err(Error::Config(format!(
                "n_init {} exceeds n_total {}",
                self.n_init, self.n_total
            )));
        }
        if self.pool_size == 0 || self.n_total == 0 {
            return Err(Error::Config("pool_size and n_total must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// One oracle query.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    pub arch: ArchitectureId,
    pub provenance: Provenance,
    pub log_likelihood: f64,
    pub acq_value: Option<f64>,
    /// Tournament winner that was mutated (evolution only).
    pub parent: Option<ArchitectureId>,
    pub mu_z: Option<f64>,
    pub log_evidence: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct SearchOutcome {
    pub candidates: CandidateSet,
    pub trace: Vec<TraceRecord>,
}

/// Oracle wrapper that refuses repeat queries and keeps the ledger.
struct Ledger<'a> {
    table: &'a BenchmarkTable,
    seen: HashSet<ArchitectureId>,
    set: CandidateSet,
    trace: Vec<TraceRecord>,
}

impl<'a> Ledger<'a> {
    fn new(table: &'a BenchmarkTable) -> Self {
        Ledger {
            table,
            seen: HashSet::new(),
            set: CandidateSet {
                archs: Vec::new(),
                log_likelihoods: Vec::new(),
                provenance: Vec::new(),
                queries: 0,
                cost: 0.0,
            },
            trace: Vec::new(),
        }
    }

    fn contains(&self, id: &ArchitectureId) -> bool {
        self.seen.contains(id)
    }

    fn query(&mut self, id: ArchitectureId, provenance: Provenance) -> Result<&mut TraceRecord> {
        if self.seen.contains(&id) {
            return Err(Error::Protocol(format!("{id} queried twice")));
        }
        let ll = self.table.query(&id)?.log_evidence_proxy;
        self.seen.insert(id.clone());
        self.set.archs.push(id.clone());
        self.set.log_likelihoods.push(ll);
        self.set.provenance.push(provenance);
        self.set.queries += 1;
        self.set.cost += self.table.query_cost_units();
        self.trace.push(TraceRecord {
            iteration: self.trace.len(),
            arch: id,
            provenance,
            log_likelihood: ll,
            acq_value: None,
            parent: None,
            mu_z: None,
            log_evidence: None,
        });
        Ok(self.trace.last_mut().unwrap())
    }

    fn finish(self) -> SearchOutcome {
        SearchOutcome {
            candidates: self.set,
            trace: self.trace,
        }
    }
}

/// Draws `n` distinct architectures not yet in `seen`.
fn distinct_prior<R: Rng>(
    space: &SpaceConfig,
    rng: &mut R,
    n: usize,
    seen: &dyn Fn(&ArchitectureId) -> bool,
) -> Result<Vec<ArchitectureId>> {
    let size = space.size();
    let mut out = Vec::with_capacity(n);
    let mut taken: HashSet<ArchitectureId> = HashSet::new();
    // dense regime: permute the unseen remainder instead of rejecting
    if size <= 4 * (n as u128 + 64) && size <= crate::archspace::DEFAULT_ENUMERATION_CAP {
        let rest: Vec<ArchitectureId> = space.enumerate()?.into_iter().filter(|id| !seen(id)).collect();
        if rest.len() < n {
            return Err(Error::Exhausted(format!(
                "{} unqueried architectures, {n} requested",
                rest.len()
            )));
        }
        return Ok(sample_indices(rng, rest.len(), n)
            .into_iter()
            .map(|i| rest[i].clone())
            .collect());
    }
    while out.len() < n {
        let id = space.sample_one(rng);
        if !seen(&id) && taken.insert(id.clone()) {
            out.push(id);
        }
    }
    Ok(out)
}

/// `Σ(x,x) μ(x)² π(x)²` at each id, in scaled-f space.
pub fn acq_us(state: &WsabiState, ids: &[ArchitectureId], prior_mass: f64) -> Result<Vec<f64>> {
    let xs = state.domain().embed(state.kernel(), ids)?;
    let m = state.base().marginals_embedded(&xs);
    Ok(m.0
        .iter()
        .zip(&m.1)
        .map(|(mu, var)| var * mu * mu * prior_mass * prior_mass)
        .collect())
}

/// Closed-form expected improvement `E[max(f − y*, 0)]` for `f ~ N(m, s²)`.
pub fn expected_improvement(mean: f64, sd: f64, best: f64) -> f64 {
    let d = mean - best;
    if !(sd > 0.0) {
        return d.max(0.0);
    }
    let n = Normal::standard();
    let u = d / sd;
    (d * n.cdf(u) + sd * n.pdf(u)).max(0.0)
}

pub fn acq_ei(gp: &GpState, ids: &[ArchitectureId], best_y: f64) -> Result<Vec<f64>> {
    let (m, v) = gp.marginals(ids)?;
    Ok(m.iter()
        .zip(&v)
        .map(|(mi, vi)| expected_improvement(*mi, vi.sqrt(), best_y))
        .collect())
}

/// Acquisition pool: half prior samples, half single-step mutations of the
/// ten best queried architectures, none already queried.
///
/// When no more than `pool_size` architectures remain unqueried, the pool is
/// all of them.
pub fn propose_pool(
    space: &SpaceConfig,
    current: &CandidateSet,
    pool_size: usize,
    seed: u64,
) -> Result<Vec<ArchitectureId>> {
    if pool_size == 0 {
        return Err(Error::Input("pool_size must be ≥ 1".into()));
    }
    let queried: HashSet<&ArchitectureId> = current.archs.iter().collect();
    let size = space.size();
    if size <= current.len() as u128 + pool_size as u128 {
        let rest: Vec<ArchitectureId> = space
            .enumerate()?
            .into_iter()
            .filter(|id| !queried.contains(id))
            .collect();
        if rest.len() <= pool_size {
            return Ok(rest);
        }
    }
    let mut rng = seeded(seed, stream::POOL);
    let mut pool = Vec::with_capacity(pool_size);
    let mut taken: HashSet<ArchitectureId> = HashSet::new();
    let mut push = |id: ArchitectureId, pool: &mut Vec<ArchitectureId>| {
        if !queried.contains(&id) && taken.insert(id.clone()) {
            pool.push(id);
        }
    };

    let parents = current.top(10);
    let n_mut = if parents.is_empty() { 0 } else { pool_size / 2 };
    let mut attempts = 0;
    while pool.len() < n_mut && attempts < 20 * pool_size {
        let p = &current.archs[parents[attempts % parents.len()]];
        if let Ok(child) = space.mutate_with(p, &mut rng) {
            push(child, &mut pool);
        }
        attempts += 1;
    }
    attempts = 0;
    while pool.len() < pool_size && attempts < 50 * pool_size {
        push(space.sample_one(&mut rng), &mut pool);
        attempts += 1;
    }
    Ok(pool)
}

/// Index of the maximum, ties to the smallest id.
fn argmax(values: &[f64], ids: &[ArchitectureId]) -> Option<usize> {
    (0..values.len()).max_by(|&a, &b| {
        values[a]
            .total_cmp(&values[b])
            .then_with(|| ids[b].cmp(&ids[a]))
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolStrategy {
    /// Prior samples plus mutations, see [`propose_pool`].
    Sampled,
    /// Every unqueried architecture (enumerable spaces only).
    Exhaustive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BqConfig {
    /// Defaults to WL for cells and RBF for ordinal spaces.
    pub kernel: Option<KernelKind>,
    pub initial: KernelHyperparams,
    pub hypers: HyperSearch,
    pub kernel_mean: KernelMeanConfig,
    pub pool: PoolStrategy,
    /// Record the evidence estimate in the trace every this many acquisitions (0 = never).
    pub trace_evidence_every: usize,
}

impl Default for BqConfig {
    fn default() -> Self {
        BqConfig {
            kernel: None,
            initial: KernelHyperparams::default(),
            hypers: HyperSearch {
                n_starts: 2,
                max_evals: 40,
                ..HyperSearch::default()
            },
            kernel_mean: KernelMeanConfig::default(),
            pool: PoolStrategy::Sampled,
            trace_evidence_every: 10,
        }
    }
}

impl BqConfig {
    pub fn kernel_kind(&self, space: &SpaceConfig) -> KernelKind {
        self.kernel.unwrap_or_else(|| KernelKind::for_space(space.kind()))
    }
}

fn initial_queries(ledger: &mut Ledger, space: &SpaceConfig, budget: &SearchBudget) -> Result<()> {
    let mut rng = seeded(budget.seed, stream::PRIOR);
    for id in distinct_prior(space, &mut rng, budget.n_init, &|_| false)? {
        ledger.query(id, Provenance::Init)?;
    }
    Ok(())
}

fn acquisition_pool(
    space: &SpaceConfig,
    ledger: &Ledger,
    budget: &SearchBudget,
    strategy: PoolStrategy,
    step: usize,
) -> Result<Vec<ArchitectureId>> {
    let pool = match strategy {
        PoolStrategy::Sampled => propose_pool(space, &ledger.set, budget.pool_size, mix(budget.seed, step as u64))?,
        PoolStrategy::Exhaustive => space.enumerate()?.into_iter().filter(|id| !ledger.contains(id)).collect(),
    };
    if pool.is_empty() {
        return Err(Error::Exhausted("no unqueried architecture left to acquire".into()));
    }
    Ok(pool)
}

/// Fits WSABI-L with θ optimized from `warm`.
pub fn fit_candidates(
    domain: &Domain,
    set: &CandidateSet,
    kind: KernelKind,
    warm: &KernelHyperparams,
    hypers: &HyperSearch,
) -> Result<WsabiState> {
    fit_wsabi_optimized(domain, &set.archs, &set.log_likelihoods, kind, warm, hypers)
}

/// Candidate selection by WSABI-L uncertainty sampling.
///
/// After `n_init` prior draws, each step refits the surrogate (hyperparameters
/// warm-started from the previous optimum), scores the pool with [`acq_us`]
/// and queries the exact argmax, until `n_total` queries have been made.
pub fn select_candidates_bq(
    table: &BenchmarkTable,
    budget: &SearchBudget,
    config: &BqConfig,
) -> Result<SearchOutcome> {
    budget.validate()?;
    let space = table.space();
    let domain = Domain::new(space.clone());
    let kind = config.kernel_kind(space);
    let prior = space.prior_mass();
    let mut ledger = Ledger::new(table);
    initial_queries(&mut ledger, space, budget)?;
    let mut theta = config.initial.clone();
    let mut step = 0;
    while ledger.set.len() < budget.n_total {
        let iteration = ledger.set.len();
        let run = || -> Result<(ArchitectureId, f64, Option<EvidenceEstimate>, KernelHyperparams)> {
            let hypers = HyperSearch {
                seed: mix(budget.seed, iteration as u64),
                ..config.hypers.clone()
            };
            let state = fit_candidates(&domain, &ledger.set, kind, &theta, &hypers)?;
            let ev = if config.trace_evidence_every > 0 && step % config.trace_evidence_every == 0 {
                Some(wsabi_evidence(&state, &config.kernel_mean)?)
            } else {
                None
            };
            let pool = acquisition_pool(space, &ledger, budget, config.pool, step)?;
            let scores = acq_us(&state, &pool, prior)?;
            let best = argmax(&scores, &pool).expect("non-empty pool");
            Ok((pool[best].clone(), scores[best], ev, state.kernel().params.clone()))
        };
        let (id, acq, ev, fitted) = run().map_err(|e| e.at_iteration(iteration))?;
        theta = fitted;
        let rec = ledger.query(id, Provenance::Acquired)?;
        rec.acq_value = Some(acq);
        if let Some(ev) = ev {
            rec.mu_z = Some(ev.mu_z);
            rec.log_evidence = ev.log_evidence();
        }
        step += 1;
    }
    Ok(ledger.finish())
}

/// WSABI-L fit and evidence for an already-queried candidate set.
pub fn candidate_evidence(
    table: &BenchmarkTable,
    set: &CandidateSet,
    config: &BqConfig,
    seed: u64,
) -> Result<(WsabiState, EvidenceEstimate)> {
    let domain = Domain::new(table.space().clone());
    let kind = config.kernel_kind(table.space());
    let hypers = HyperSearch {
        seed,
        ..config.hypers.clone()
    };
    let state = fit_candidates(&domain, set, kind, &config.initial, &hypers)?;
    let km = KernelMeanConfig {
        seed,
        ..config.kernel_mean.clone()
    };
    let ev = wsabi_evidence(&state, &km)?;
    Ok((state, ev))
}

/// Candidate selection by expected improvement on standardized log-likelihoods.
pub fn select_candidates_ei(
    table: &BenchmarkTable,
    budget: &SearchBudget,
    config: &BqConfig,
) -> Result<SearchOutcome> {
    budget.validate()?;
    let space = table.space();
    let domain = Domain::new(space.clone());
    let kind = config.kernel_kind(space);
    let mut ledger = Ledger::new(table);
    initial_queries(&mut ledger, space, budget)?;
    let mut theta = config.initial.clone();
    let mut step = 0;
    while ledger.set.len() < budget.n_total {
        let iteration = ledger.set.len();
        let run = || -> Result<(ArchitectureId, f64, KernelHyperparams)> {
            let ll = &ledger.set.log_likelihoods;
            let n = ll.len() as f64;
            let mean = ll.iter().sum::<f64>() / n;
            let sd = (ll.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
            let sd = if sd > 0.0 { sd } else { 1.0 };
            let y: Vec<f64> = ll.iter().map(|v| (v - mean) / sd).collect();
            let params = if y.len() >= 2 {
                let hypers = HyperSearch {
                    seed: mix(budget.seed, iteration as u64),
                    ..config.hypers.clone()
                };
                optimize_hypers(&domain, &ledger.set.archs, &y, kind, &theta, &hypers)?
            } else {
                theta.clone()
            };
            let gp = fit_gp(&domain, &ledger.set.archs, &y, &Kernel::new(kind, params.clone()))?;
            let best_y = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let pool = acquisition_pool(space, &ledger, budget, config.pool, step)?;
            let scores = acq_ei(&gp, &pool, best_y)?;
            let best = argmax(&scores, &pool).expect("non-empty pool");
            Ok((pool[best].clone(), scores[best], params))
        };
        let (id, acq, fitted) = run().map_err(|e| e.at_iteration(iteration))?;
        theta = fitted;
        ledger.query(id, Provenance::Acquired)?.acq_value = Some(acq);
        step += 1;
    }
    Ok(ledger.finish())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReConfig {
    pub population_size: usize,
    pub tournament_size: usize,
    /// Mutation retries before falling back to a random unqueried architecture.
    pub max_mutation_retries: usize,
}

impl ReConfig {
    pub fn validate(&self, n_total: usize) -> Result<()> {
        let p = self.population_size;
        if p == 0 || p > n_total {
            return Err(Error::Config(format!("population size {p} must lie in 1..={n_total}")));
        }
        if self.tournament_size == 0 || self.tournament_size > p {
            return Err(Error::Config("tournament size must lie in 1..=population size".into()));
        }
        Ok(())
    }
}

impl Default for ReConfig {
    fn default() -> Self {
        ReConfig {
            population_size: 50,
            tournament_size: 10,
            max_mutation_retries: 50,
        }
    }
}

/// Regularised (ageing) evolution.
pub fn select_candidates_re(
    table: &BenchmarkTable,
    budget: &SearchBudget,
    config: &ReConfig,
) -> Result<SearchOutcome> {
    budget.validate()?;
    config.validate(budget.n_total)?;
    let p = config.population_size;
    let space = table.space();
    let mut ledger = Ledger::new(table);
    let mut rng = seeded(budget.seed, stream::PRIOR);
    let mut population = std::collections::VecDeque::with_capacity(p);
    for id in distinct_prior(space, &mut rng, p, &|_| false)? {
        let ll = ledger.query(id.clone(), Provenance::Init)?.log_likelihood;
        population.push_back((id, ll));
    }
    let mut t_rng = seeded(budget.seed, stream::TOURNAMENT);
    let mut m_rng = seeded(budget.seed, stream::MUTATE);
    while ledger.set.len() < budget.n_total {
        let iteration = ledger.set.len();
        let picks = sample_indices(&mut t_rng, population.len(), config.tournament_size);
        let parent = picks
            .into_iter()
            .map(|i| &population[i])
            .max_by(|a, b| a.1.total_cmp(&b.1).then_with(|| b.0.cmp(&a.0)))
            .map(|(id, _)| id.clone())
            .expect("non-empty tournament");
        let mut child = None;
        for _ in 0..=config.max_mutation_retries {
            match space.mutate_with(&parent, &mut m_rng) {
                Ok(c) if !ledger.contains(&c) => {
                    child = Some(c);
                    break;
                }
                Ok(_) => {}
                Err(e) => return Err(e.at_iteration(iteration)),
            }
        }
        let child = match child {
            Some(c) => c,
            None => distinct_prior(space, &mut m_rng, 1, &|id| ledger.contains(id))
                .map_err(|e| e.at_iteration(iteration))?
                .remove(0),
        };
        let rec = ledger.query(child.clone(), Provenance::Evolved)?;
        rec.parent = Some(parent);
        let ll = rec.log_likelihood;
        population.push_back((child, ll));
        population.pop_front();
    }
    Ok(ledger.finish())
}

/// `n_total` distinct uniform draws.
pub fn select_candidates_random(table: &BenchmarkTable, budget: &SearchBudget) -> Result<SearchOutcome> {
    if budget.n_total == 0 {
        return Err(Error::Config("n_total must be ≥ 1".into()));
    }
    let space = table.space();
    if space.size() < budget.n_total as u128 {
        return Err(Error::Exhausted(format!(
            "space has {} architectures, {} requested",
            space.size(),
            budget.n_total
        )));
    }
    let mut rng = seeded(budget.seed, stream::RANDOM_SEARCH);
    let mut ledger = Ledger::new(table);
    for id in distinct_prior(space, &mut rng, budget.n_total, &|_| false)? {
        ledger.query(id, Provenance::Init)?;
    }
    Ok(ledger.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmark::{generate_synthetic, SyntheticGenConfig};

    fn small_table(seed: u64) -> BenchmarkTable {
        generate_synthetic(&SyntheticGenConfig {
            space: SpaceConfig::cell_with_ops(3, &["a", "b", "c", "d"]),
            n_val: 30,
            n_test: 20,
            n_classes: 4,
            n_modes: 1,
            seed,
            ..Default::default()
        })
        .unwrap()
    }

    fn quick_bq() -> BqConfig {
        BqConfig {
            hypers: HyperSearch {
                n_starts: 1,
                max_evals: 10,
                depths: vec![1],
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn ei_closed_forms() {
        assert!((expected_improvement(0.0, 1.0, 0.0) - 0.398_942_280_401_432_7).abs() < 1e-12);
        assert_eq!(expected_improvement(-1.0, 0.0, 0.0), 0.0);
        assert_eq!(expected_improvement(2.0, 0.0, 0.5), 1.5);
    }

    #[test]
    fn ei_matches_monte_carlo() {
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = seeded(9, 0);
        for _ in 0..20 {
            let m: f64 = rng.random_range(-2.0..2.0);
            let s: f64 = rng.random_range(0.1..2.0);
            let best: f64 = rng.random_range(-1.0..1.0);
            let n = 1_000_000;
            let mut sum = 0.0;
            let mut sq = 0.0;
            for _ in 0..n {
                let z: f64 = StandardNormal.sample(&mut rng);
                let v = (m + s * z - best).max(0.0);
                sum += v;
                sq += v * v;
            }
            let mean = sum / n as f64;
            let se = ((sq / n as f64 - mean * mean) / n as f64).sqrt();
            let closed = expected_improvement(m, s, best);
            assert!((closed - mean).abs() <= 3.0 * se + 1e-12, "{closed} vs {mean} ± {se}");
        }
    }

    #[test]
    fn pool_cases() {
        let space = SpaceConfig::cell_with_ops(3, &["a", "b", "c", "d"]);
        let empty = CandidateSet {
            archs: vec![],
            log_likelihoods: vec![],
            provenance: vec![],
            queries: 0,
            cost: 0.0,
        };
        let pool = propose_pool(&space, &empty, 16, 1).unwrap();
        assert_eq!(pool.len(), 16);
        assert_eq!(pool, propose_pool(&space, &empty, 16, 1).unwrap());

        let all = space.enumerate().unwrap();
        let current = CandidateSet {
            archs: all[..60].to_vec(),
            log_likelihoods: (0..60).map(|i| -(i as f64)).collect(),
            provenance: vec![Provenance::Init; 60],
            queries: 60,
            cost: 60.0,
        };
        let pool = propose_pool(&space, &current, 32, 1).unwrap();
        assert_eq!(pool, all[60..].to_vec());

        let current = CandidateSet {
            archs: all[..20].to_vec(),
            log_likelihoods: (0..20).map(|i| -(i as f64)).collect(),
            provenance: vec![Provenance::Init; 20],
            queries: 20,
            cost: 20.0,
        };
        let pool = propose_pool(&space, &current, 30, 4).unwrap();
        let queried: HashSet<_> = current.archs.iter().collect();
        assert!(pool.iter().all(|id| !queried.contains(id)));
        let unique: HashSet<_> = pool.iter().collect();
        assert_eq!(unique.len(), pool.len());
    }

    #[test]
    fn us_acquisition_vanishes_at_training_points() {
        let table = small_table(1);
        let domain = Domain::new(table.space().clone());
        let ids = table.space().sample_prior(2, 8);
        let ll: Vec<f64> = ids.iter().map(|id| table.peek(id).unwrap().log_evidence_proxy).collect();
        let k = Kernel::new(
            KernelKind::Wl,
            KernelHyperparams {
                noise_variance: 0.0,
                ..Default::default()
            },
        );
        let state = crate::surrogate::fit_wsabi(&domain, &ids, &ll, &k).unwrap();
        let a = acq_us(&state, state.base().train_inputs(), 1.0 / 64.0).unwrap();
        assert!(a.iter().all(|v| v.abs() < 1e-12), "{a:?}");
    }

    #[test]
    fn bq_boundary_is_pure_random() {
        let table = small_table(2);
        let budget = SearchBudget {
            n_init: 6,
            n_total: 6,
            pool_size: 8,
            seed: 3,
        };
        let out = select_candidates_bq(&table, &budget, &quick_bq()).unwrap();
        assert_eq!(out.candidates.len(), 6);
        assert!(out.candidates.provenance.iter().all(|p| *p == Provenance::Init));
    }

    #[test]
    fn bq_acquires_the_exact_argmax() {
        let table = small_table(4);
        let budget = SearchBudget {
            n_init: 5,
            n_total: 12,
            pool_size: 16,
            seed: 5,
        };
        let cfg = quick_bq();
        let out = select_candidates_bq(&table, &budget, &cfg).unwrap();
        let set = &out.candidates;
        assert_eq!(set.queries, 12);
        let unique: HashSet<_> = set.archs.iter().collect();
        assert_eq!(unique.len(), 12);
        // replay one step and recheck the argmax against the pool
        let domain = Domain::new(table.space().clone());
        let mut theta = cfg.initial.clone();
        for step in 0..(12 - 5) {
            let n = 5 + step;
            let partial = CandidateSet {
                archs: set.archs[..n].to_vec(),
                log_likelihoods: set.log_likelihoods[..n].to_vec(),
                provenance: set.provenance[..n].to_vec(),
                queries: n as u64,
                cost: n as f64,
            };
            let hypers = HyperSearch {
                seed: mix(budget.seed, n as u64),
                ..cfg.hypers.clone()
            };
            let state = fit_candidates(&domain, &partial, KernelKind::Wl, &theta, &hypers).unwrap();
            theta = state.kernel().params.clone();
            let pool = propose_pool(table.space(), &partial, 16, mix(budget.seed, step as u64)).unwrap();
            let scores = acq_us(&state, &pool, 1.0 / 64.0).unwrap();
            let best = argmax(&scores, &pool).unwrap();
            assert_eq!(pool[best], set.archs[n]);
        }
    }

    #[test]
    fn re_limit_case_mutates_the_best() {
        let table = small_table(6);
        let budget = SearchBudget {
            n_init: 4,
            n_total: 20,
            pool_size: 1,
            seed: 1,
        };
        let cfg = ReConfig {
            population_size: 4,
            tournament_size: 4,
            ..Default::default()
        };
        let out = select_candidates_re(&table, &budget, &cfg).unwrap();
        assert_eq!(out.candidates.len(), 20);
        let mut pop: std::collections::VecDeque<(ArchitectureId, f64)> = out.trace[..4]
            .iter()
            .map(|r| (r.arch.clone(), r.log_likelihood))
            .collect();
        for rec in &out.trace[4..] {
            let best = pop
                .iter()
                .max_by(|a, b| a.1.total_cmp(&b.1).then_with(|| b.0.cmp(&a.0)))
                .unwrap();
            assert_eq!(rec.parent.as_ref(), Some(&best.0));
            pop.push_back((rec.arch.clone(), rec.log_likelihood));
            pop.pop_front();
            assert_eq!(pop.len(), 4);
        }
    }

    #[test]
    fn random_search_cases() {
        let table = small_table(7);
        let full = SearchBudget {
            n_init: 0,
            n_total: 64,
            pool_size: 1,
            seed: 2,
        };
        let out = select_candidates_random(&table, &full).unwrap();
        let mut got = out.candidates.archs.clone();
        got.sort();
        assert_eq!(got, table.space().enumerate().unwrap());
        let b = SearchBudget { n_total: 10, ..full.clone() };
        assert_eq!(
            select_candidates_random(&table, &b).unwrap().candidates,
            select_candidates_random(&table, &b).unwrap().candidates
        );
        let too_many = SearchBudget { n_total: 65, ..full };
        assert!(matches!(select_candidates_random(&table, &too_many), Err(Error::Exhausted(_))));
    }

    #[test]
    fn random_inclusion_rate() {
        let table = generate_synthetic(&SyntheticGenConfig {
            space: SpaceConfig::ordinal(2, 32),
            n_val: 2,
            n_test: 2,
            n_classes: 2,
            ..Default::default()
        })
        .unwrap();
        let ids = table.space().enumerate().unwrap();
        let mut hits = vec![0usize; ids.len()];
        for seed in 0..200 {
            let b = SearchBudget {
                n_init: 0,
                n_total: 16,
                pool_size: 1,
                seed,
            };
            for id in select_candidates_random(&table, &b).unwrap().candidates.archs {
                hits[ids.binary_search(&id).unwrap()] += 1;
            }
        }
        let rate = 16.0 / 1024.0;
        for h in hits {
            assert!((h as f64 / 200.0 - rate).abs() <= 0.05, "{h}");
        }
    }

    #[test]
    fn ei_search_runs_without_repeats() {
        let table = small_table(9);
        let budget = SearchBudget {
            n_init: 4,
            n_total: 10,
            pool_size: 16,
            seed: 1,
        };
        let out = select_candidates_ei(&table, &budget, &quick_bq()).unwrap();
        let unique: HashSet<_> = out.candidates.archs.iter().collect();
        assert_eq!(unique.len(), 10);
        assert!(out.trace[4..].iter().all(|r| r.acq_value.unwrap() >= 0.0));
    }
}
