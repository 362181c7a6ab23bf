//! GP regression and the WSABI-L warped surrogate.
//!
//! Both models use a zero prior mean. The Gram matrix is regularized with the
//! observation noise plus a jitter that starts at `1e-10·σ²` and grows tenfold
//! until the Cholesky factorization succeeds or `1e-4·σ²` is exceeded.
//!
//! WSABI-L models likelihoods on a rescaled axis, `f = exp(ℓ - max ℓ)`, so that
//! log-likelihoods in the thousands do not underflow. The model places a GP
//! on `g = sqrt(2(f - β))` and linearizes back to `f`.

use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::archspace::{ArchitectureId, SpaceConfig};
use crate::benchmark::BenchmarkTable;
use crate::error::{Error, Result};
use crate::kernels::{Embedding, FeatureCache, Kernel, KernelHyperparams, KernelKind};
use crate::rng::{seeded, stream};

const JITTER_START: f64 = 1e-10;
const JITTER_MAX: f64 = 1e-4;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// The space a surrogate lives on, with a shared WL feature cache.
#[derive(Clone, Debug)]
pub struct Domain {
    space: Arc<SpaceConfig>,
    cache: Arc<FeatureCache>,
}

impl Domain {
    pub fn new(space: SpaceConfig) -> Self {
        Domain {
            space: Arc::new(space),
            cache: Arc::new(FeatureCache::new()),
        }
    }

    pub fn space(&self) -> &SpaceConfig {
        &self.space
    }

    pub fn cache(&self) -> &FeatureCache {
        &self.cache
    }

    pub fn embed(&self, kernel: &Kernel, ids: &[ArchitectureId]) -> Result<Vec<Embedding>> {
        kernel.embed_ids(&self.space, ids, &self.cache)
    }
}

/// Cholesky factor of `K + (noise + jitter)·I` with the escalation described
/// in the module docs. Returns the factor and the jitter used.
pub fn regularized_cholesky(
    k: &DMatrix<f64>,
    noise: f64,
    signal_variance: f64,
) -> Result<(Cholesky<f64, Dyn>, f64)> {
    let n = k.nrows();
    let mut jitter = JITTER_START * signal_variance;
    while jitter <= JITTER_MAX * signal_variance * (1.0 + 1e-12) {
        let mut a = k.clone();
        for i in 0..n {
            a[(i, i)] += noise + jitter;
        }
        if let Some(c) = Cholesky::new(a) {
            return Ok((c, jitter));
        }
        jitter *= 10.0;
    }
    Err(Error::Conditioning(format!(
        "{n}×{n} Gram not positive definite with jitter up to {:e}",
        JITTER_MAX * signal_variance
    )))
}

fn log_marginal(chol: &Cholesky<f64, Dyn>, y: &DVector<f64>) -> (DVector<f64>, f64) {
    let alpha = chol.solve(y);
    let log_det_half: f64 = chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum();
    let n = y.len() as f64;
    (alpha.clone(), -0.5 * y.dot(&alpha) - log_det_half - 0.5 * n * LN_2PI)
}

/// Averages targets of repeated inputs, keeping first-occurrence order.
fn merge_duplicates(x: &[ArchitectureId], y: &[f64]) -> (Vec<ArchitectureId>, Vec<f64>) {
    let mut slot: HashMap<&ArchitectureId, usize> = HashMap::new();
    let mut ids = Vec::new();
    let mut sums: Vec<(f64, usize)> = Vec::new();
    for (id, &v) in x.iter().zip(y) {
        match slot.get(id) {
            Some(&i) => {
                sums[i].0 += v;
                sums[i].1 += 1;
            }
            None => {
                slot.insert(id, ids.len());
                ids.push(id.clone());
                sums.push((v, 1));
            }
        }
    }
    (ids, sums.into_iter().map(|(s, c)| s / c as f64).collect())
}

/// A fitted zero-mean GP. Immutable; refitting builds a new state.
#[derive(Clone, Debug)]
pub struct GpState {
    domain: Domain,
    kernel: Kernel,
    train_inputs: Vec<ArchitectureId>,
    train_targets: DVector<f64>,
    embeddings: Vec<Embedding>,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    jitter: f64,
    log_marginal: f64,
}

/// Fits a GP with fixed hyperparameters. Duplicate inputs are merged by
/// averaging their targets.
pub fn fit_gp(domain: &Domain, x: &[ArchitectureId], y: &[f64], kernel: &Kernel) -> Result<GpState> {
    if x.is_empty() || x.len() != y.len() {
        return Err(Error::Input(format!("{} inputs, {} targets", x.len(), y.len())));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("non-finite GP target".into()));
    }
    kernel.params.validate()?;
    let (ids, targets) = merge_duplicates(x, y);
    let embeddings = domain.embed(kernel, &ids)?;
    let k = kernel.gram_sym(&embeddings);
    let (chol, jitter) =
        regularized_cholesky(&k, kernel.params.noise_variance, kernel.params.signal_variance)?;
    let targets = DVector::from_vec(targets);
    let (alpha, log_marginal) = log_marginal(&chol, &targets);
    Ok(GpState {
        domain: domain.clone(),
        kernel: kernel.clone(),
        train_inputs: ids,
        train_targets: targets,
        embeddings,
        chol,
        alpha,
        jitter,
        log_marginal,
    })
}

impl GpState {
    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn train_inputs(&self) -> &[ArchitectureId] {
        &self.train_inputs
    }

    pub fn train_targets(&self) -> &DVector<f64> {
        &self.train_targets
    }

    pub fn embeddings(&self) -> &[Embedding] {
        &self.embeddings
    }

    /// Lower-triangular factor of the regularized Gram.
    pub fn chol_factor(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    /// Jitter added on top of the noise variance.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Total diagonal regularization, noise plus jitter.
    pub fn regularization(&self) -> f64 {
        self.kernel.params.noise_variance + self.jitter
    }

    pub fn log_marginal_likelihood(&self) -> f64 {
        self.log_marginal
    }

    /// `(K + σ²I)⁻¹ v`.
    pub fn solve(&self, v: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(v)
    }

    /// `L⁻¹ K_X*` for the given query embeddings.
    fn whitened_cross(&self, xs: &[Embedding]) -> (DMatrix<f64>, DMatrix<f64>) {
        let kxs = self.kernel.gram(&self.embeddings, xs);
        let mut v = kxs.clone();
        self.chol.l_dirty().solve_lower_triangular_mut(&mut v);
        (kxs, v)
    }

    /// Posterior mean and full covariance at embedded points.
    pub fn posterior_embedded(&self, xs: &[Embedding]) -> (DVector<f64>, DMatrix<f64>) {
        let (kxs, v) = self.whitened_cross(xs);
        let mean = kxs.transpose() * &self.alpha;
        let mut cov = self.kernel.gram_sym(xs) - v.transpose() * &v;
        let n = xs.len();
        for i in 0..n {
            for j in (i + 1)..n {
                let s = 0.5 * (cov[(i, j)] + cov[(j, i)]);
                cov[(i, j)] = s;
                cov[(j, i)] = s;
            }
            if cov[(i, i)] < 0.0 {
                cov[(i, i)] = 0.0;
            }
        }
        (mean, cov)
    }

    /// Posterior mean and marginal variance, skipping the full covariance.
    pub fn marginals_embedded(&self, xs: &[Embedding]) -> (Vec<f64>, Vec<f64>) {
        let (kxs, v) = self.whitened_cross(xs);
        let mean = kxs.transpose() * &self.alpha;
        let var = xs
            .iter()
            .enumerate()
            .map(|(j, x)| {
                let prior = self.kernel.eval(x, x);
                (prior - v.column(j).norm_squared()).max(0.0)
            })
            .collect();
        (mean.iter().copied().collect(), var)
    }

    pub fn posterior(&self, ids: &[ArchitectureId]) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let xs = self.domain.embed(&self.kernel, ids)?;
        Ok(self.posterior_embedded(&xs))
    }

    pub fn marginals(&self, ids: &[ArchitectureId]) -> Result<(Vec<f64>, Vec<f64>)> {
        let xs = self.domain.embed(&self.kernel, ids)?;
        Ok(self.marginals_embedded(&xs))
    }
}

/// `gp_posterior`: mean and covariance at `ids`.
pub fn gp_posterior(state: &GpState, ids: &[ArchitectureId]) -> Result<(DVector<f64>, DMatrix<f64>)> {
    state.posterior(ids)
}

/// Strategy for [`optimize_hypers`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperSearch {
    /// WL depths tried on a grid.
    pub depths: Vec<usize>,
    pub signal_variance_bounds: (f64, f64),
    pub lengthscale_bounds: (f64, f64),
    /// One lengthscale per ordinal dimension instead of a shared one.
    pub ard: bool,
    /// Coordinate-search starts, the first being the initial θ.
    pub n_starts: usize,
    /// Objective evaluations per start.
    pub max_evals: usize,
    pub seed: u64,
}

impl Default for HyperSearch {
    fn default() -> Self {
        HyperSearch {
            depths: vec![0, 1, 2, 3],
            signal_variance_bounds: (1e-6, 1e4),
            lengthscale_bounds: (0.05, 50.0),
            ard: false,
            n_starts: 3,
            max_evals: 60,
            seed: 0,
        }
    }
}

/// Precomputed pieces that make a Gram matrix cheap to rebuild for new θ.
enum GramBasis {
    /// Unit-diagonal WL Gram per depth.
    Wl(Vec<(usize, DMatrix<f64>)>),
    /// Squared distances, shared lengthscale.
    RbfIso(DMatrix<f64>),
    /// Per-dimension squared distances.
    RbfArd(Vec<DMatrix<f64>>),
}

struct Objective<'a> {
    y: &'a DVector<f64>,
    noise: f64,
}

impl Objective<'_> {
    fn eval(&self, k: &DMatrix<f64>, sv: f64) -> f64 {
        match regularized_cholesky(k, self.noise, sv) {
            Ok((c, _)) => log_marginal(&c, self.y).1,
            Err(_) => f64::NEG_INFINITY,
        }
    }
}

fn coordinate_search<F: FnMut(&[f64]) -> f64>(
    x0: Vec<f64>,
    lo: &[f64],
    hi: &[f64],
    max_evals: usize,
    mut f: F,
) -> (Vec<f64>, f64) {
    let mut x = x0;
    let mut fx = f(&x);
    let mut evals = 1;
    let mut step = 1.0;
    while step > 1e-3 && evals < max_evals {
        let mut improved = false;
        'dims: for i in 0..x.len() {
            for dir in [1.0, -1.0] {
                let v = (x[i] + dir * step).clamp(lo[i], hi[i]);
                if v == x[i] {
                    continue;
                }
                let mut cand = x.clone();
                cand[i] = v;
                let fc = f(&cand);
                evals += 1;
                if fc > fx {
                    x = cand;
                    fx = fc;
                    improved = true;
                    break 'dims;
                }
                if evals >= max_evals {
                    break 'dims;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    (x, fx)
}

/// Maximizes the log marginal likelihood over θ.
///
/// Continuous parameters (log signal variance, log lengthscales) use a
/// multi-start coordinate search; the WL depth is searched on a grid. The
/// noise variance is held fixed. The initial θ is always evaluated, so the
/// result never scores below it.
pub fn optimize_hypers(
    domain: &Domain,
    x: &[ArchitectureId],
    y: &[f64],
    kind: KernelKind,
    initial: &KernelHyperparams,
    search: &HyperSearch,
) -> Result<KernelHyperparams> {
    if x.len() < 2 || x.len() != y.len() {
        return Err(Error::Input(format!(
            "hyperparameter search needs ≥ 2 paired points, got {} inputs and {} targets",
            x.len(),
            y.len()
        )));
    }
    initial.validate()?;
    let (ids, targets) = merge_duplicates(x, y);
    let y = DVector::from_vec(targets);
    let obj = Objective {
        y: &y,
        noise: initial.noise_variance,
    };
    let (sv_lo, sv_hi) = (
        search.signal_variance_bounds.0.ln(),
        search.signal_variance_bounds.1.ln(),
    );
    let (ls_lo, ls_hi) = (search.lengthscale_bounds.0.ln(), search.lengthscale_bounds.1.ln());
    let mut rng = seeded(search.seed, stream::HYPERS);

    let basis = match kind {
        KernelKind::Wl => {
            let mut depths = search.depths.clone();
            if !depths.contains(&initial.depth) {
                depths.insert(0, initial.depth);
            }
            let mut mats = Vec::new();
            for h in depths {
                let unit = Kernel::new(
                    kind,
                    KernelHyperparams {
                        signal_variance: 1.0,
                        depth: h,
                        ..initial.clone()
                    },
                );
                let e = domain.embed(&unit, &ids)?;
                mats.push((h, unit.gram_sym(&e)));
            }
            GramBasis::Wl(mats)
        }
        KernelKind::Rbf => {
            let probe = Kernel::new(
                kind,
                KernelHyperparams {
                    lengthscales: vec![1.0],
                    ..initial.clone()
                },
            );
            let e = domain.embed(&probe, &ids)?;
            let pts: Vec<&[f64]> = e
                .iter()
                .map(|p| match p {
                    Embedding::Ordinal(v) => &v[..],
                    Embedding::Wl(_) => unreachable!(),
                })
                .collect();
            let n = pts.len();
            let dims = pts[0].len();
            if search.ard {
                let mut per = vec![DMatrix::zeros(n, n); dims];
                for i in 0..n {
                    for j in 0..n {
                        for d in 0..dims {
                            per[d][(i, j)] = (pts[i][d] - pts[j][d]).powi(2);
                        }
                    }
                }
                GramBasis::RbfArd(per)
            } else {
                let d2 = DMatrix::from_fn(n, n, |i, j| {
                    pts[i].iter().zip(pts[j]).map(|(a, b)| (a - b).powi(2)).sum()
                });
                GramBasis::RbfIso(d2)
            }
        }
    };

    let mut best: Option<(f64, KernelHyperparams)> = None;
    let mut consider = |score: f64, theta: KernelHyperparams| {
        if score.is_finite() && best.as_ref().is_none_or(|(b, _)| score > *b) {
            best = Some((score, theta));
        }
    };

    let random_start = |rng: &mut rand_chacha::ChaCha8Rng, dims: usize| -> Vec<f64> {
        let mut v = vec![rng.random_range(sv_lo..sv_hi)];
        v.extend((0..dims).map(|_| rng.random_range(ls_lo..ls_hi)));
        v
    };

    match &basis {
        GramBasis::Wl(mats) => {
            // depth of the initial θ first so it is scored as given
            let mut order: Vec<&(usize, DMatrix<f64>)> = mats.iter().collect();
            order.sort_by_key(|(h, _)| *h != initial.depth);
            for (h, unit) in order {
                for s in 0..search.n_starts.max(1) {
                    let x0 = if s == 0 {
                        vec![initial.signal_variance.ln()]
                    } else {
                        random_start(&mut rng, 0)
                    };
                    let (xs, fx) = coordinate_search(x0, &[sv_lo], &[sv_hi], search.max_evals, |t| {
                        let sv = t[0].exp();
                        obj.eval(&(unit * sv), sv)
                    });
                    consider(
                        fx,
                        KernelHyperparams {
                            signal_variance: xs[0].exp(),
                            depth: *h,
                            ..initial.clone()
                        },
                    );
                }
            }
        }
        GramBasis::RbfIso(d2) => {
            for s in 0..search.n_starts.max(1) {
                let x0 = if s == 0 {
                    let ls = initial.lengthscales.iter().map(|l| l.ln()).sum::<f64>()
                        / initial.lengthscales.len() as f64;
                    vec![initial.signal_variance.ln(), ls]
                } else {
                    random_start(&mut rng, 1)
                };
                let mut eval = |t: &[f64]| {
                    let (sv, ls2) = (t[0].exp(), (2.0 * t[1]).exp());
                    obj.eval(&d2.map(|d| sv * (-0.5 * d / ls2).exp()), sv)
                };
                if s == 0 && initial.lengthscales.len() > 1 {
                    // the initial θ is anisotropic; score it exactly as given
                    let k = Kernel::new(kind, initial.clone());
                    let e = domain.embed(&k, &ids)?;
                    consider(obj.eval(&k.gram_sym(&e), initial.signal_variance), initial.clone());
                }
                let (xs, fx) = coordinate_search(x0, &[sv_lo, ls_lo], &[sv_hi, ls_hi], search.max_evals, &mut eval);
                consider(
                    fx,
                    KernelHyperparams {
                        signal_variance: xs[0].exp(),
                        lengthscales: vec![xs[1].exp()],
                        ..initial.clone()
                    },
                );
            }
        }
        GramBasis::RbfArd(per) => {
            let dims = per.len();
            let n = y.len();
            for s in 0..search.n_starts.max(1) {
                let x0 = if s == 0 {
                    let mut v = vec![initial.signal_variance.ln()];
                    v.extend((0..dims).map(|d| {
                        let l = if initial.lengthscales.len() == 1 {
                            initial.lengthscales[0]
                        } else {
                            initial.lengthscales[d]
                        };
                        l.ln()
                    }));
                    v
                } else {
                    random_start(&mut rng, dims)
                };
                let mut lo = vec![sv_lo];
                lo.extend(std::iter::repeat_n(ls_lo, dims));
                let mut hi = vec![sv_hi];
                hi.extend(std::iter::repeat_n(ls_hi, dims));
                let (xs, fx) = coordinate_search(x0, &lo, &hi, search.max_evals, |t| {
                    let sv = t[0].exp();
                    let mut r2 = DMatrix::zeros(n, n);
                    for (d, m) in per.iter().enumerate() {
                        r2 += m * (-2.0 * t[d + 1]).exp();
                    }
                    obj.eval(&r2.map(|v| sv * (-0.5 * v).exp()), sv)
                });
                consider(
                    fx,
                    KernelHyperparams {
                        signal_variance: xs[0].exp(),
                        lengthscales: xs[1..].iter().map(|l| l.exp()).collect(),
                        ..initial.clone()
                    },
                );
            }
        }
    }
    best.map(|(_, t)| t)
        .ok_or_else(|| Error::Conditioning("every hyperparameter candidate failed to factorize".into()))
}

/// Log marginal likelihood of `y` under a kernel, as used by [`optimize_hypers`].
pub fn log_marginal_likelihood(
    domain: &Domain,
    x: &[ArchitectureId],
    y: &[f64],
    kernel: &Kernel,
) -> Result<f64> {
    Ok(fit_gp(domain, x, y, kernel)?.log_marginal_likelihood())
}

/// WSABI-L state: a GP on `g = sqrt(2(f - β))`.
#[derive(Clone, Debug)]
pub struct WsabiState {
    base: GpState,
    beta: f64,
    log_scale: f64,
    scaled: Vec<f64>,
    log_likelihoods: Vec<f64>,
}

/// `(f, β, log_scale)` for a set of log-likelihoods.
pub fn warp_targets(log_likelihoods: &[f64]) -> Result<(Vec<f64>, f64, f64)> {
    if log_likelihoods.is_empty() {
        return Err(Error::Input("no likelihood observations".into()));
    }
    if log_likelihoods.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("non-finite log-likelihood".into()));
    }
    let log_scale = log_likelihoods.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let f: Vec<f64> = log_likelihoods.iter().map(|l| (l - log_scale).exp()).collect();
    let beta = 0.8 * f.iter().copied().fold(f64::INFINITY, f64::min);
    Ok((f, beta, log_scale))
}

fn warped(f: &[f64], beta: f64) -> Vec<f64> {
    f.iter().map(|v| (2.0 * (v - beta)).max(0.0).sqrt()).collect()
}

/// Fits WSABI-L with fixed hyperparameters.
pub fn fit_wsabi(
    domain: &Domain,
    x: &[ArchitectureId],
    log_likelihoods: &[f64],
    kernel: &Kernel,
) -> Result<WsabiState> {
    if x.len() != log_likelihoods.len() {
        return Err(Error::Input(format!(
            "{} inputs, {} log-likelihoods",
            x.len(),
            log_likelihoods.len()
        )));
    }
    let (f, beta, log_scale) = warp_targets(log_likelihoods)?;
    let g = warped(&f, beta);
    let base = fit_gp(domain, x, &g, kernel)?;
    Ok(WsabiState {
        base,
        beta,
        log_scale,
        scaled: f,
        log_likelihoods: log_likelihoods.to_vec(),
    })
}

/// Fits WSABI-L after optimizing θ on the warped targets.
pub fn fit_wsabi_optimized(
    domain: &Domain,
    x: &[ArchitectureId],
    log_likelihoods: &[f64],
    kind: KernelKind,
    initial: &KernelHyperparams,
    search: &HyperSearch,
) -> Result<WsabiState> {
    let params = if x.len() >= 2 {
        let (f, beta, _) = warp_targets(log_likelihoods)?;
        optimize_hypers(domain, x, &warped(&f, beta), kind, initial, search)?
    } else {
        initial.clone()
    };
    fit_wsabi(domain, x, log_likelihoods, &Kernel::new(kind, params))
}

impl WsabiState {
    pub fn base(&self) -> &GpState {
        &self.base
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn log_scale(&self) -> f64 {
        self.log_scale
    }

    /// Observed `f` values, aligned with the inputs passed to the fit.
    pub fn scaled_likelihoods(&self) -> &[f64] {
        &self.scaled
    }

    pub fn log_likelihoods(&self) -> &[f64] {
        &self.log_likelihoods
    }

    pub fn kernel(&self) -> &Kernel {
        self.base.kernel()
    }

    pub fn domain(&self) -> &Domain {
        self.base.domain()
    }

    /// `β + ½g²`.
    pub fn unwarp(&self, g: f64) -> f64 {
        self.beta + 0.5 * g * g
    }

    /// Linearized moments in scaled-f space:
    /// `m(x) = β + ½μ(x)²`, `k(x, x') = μ(x) Σ(x, x') μ(x')`.
    pub fn moments_embedded(&self, xs: &[Embedding]) -> (DVector<f64>, DMatrix<f64>) {
        let (mu, sigma) = self.base.posterior_embedded(xs);
        let mean = mu.map(|m| self.unwarp(m));
        let n = xs.len();
        let cov = DMatrix::from_fn(n, n, |i, j| mu[i] * sigma[(i, j)] * mu[j]);
        (mean, cov)
    }

    /// Marginal mean and variance in scaled-f space, plus the base-GP mean and variance.
    pub fn marginals_embedded(&self, xs: &[Embedding]) -> WsabiMarginals {
        let (mu, var) = self.base.marginals_embedded(xs);
        let mean = mu.iter().map(|&m| self.unwarp(m)).collect();
        let f_var = mu.iter().zip(&var).map(|(m, v)| m * m * v).collect();
        WsabiMarginals {
            mean,
            var: f_var,
            base_mean: mu,
            base_var: var,
        }
    }

    pub fn moments(&self, ids: &[ArchitectureId]) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let xs = self.domain().embed(self.kernel(), ids)?;
        Ok(self.moments_embedded(&xs))
    }
}

#[derive(Clone, Debug)]
pub struct WsabiMarginals {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub base_mean: Vec<f64>,
    pub base_var: Vec<f64>,
}

/// `wsabi_moments`: linearized mean and covariance at `ids`.
pub fn wsabi_moments(state: &WsabiState, ids: &[ArchitectureId]) -> Result<(DVector<f64>, DMatrix<f64>)> {
    state.moments(ids)
}

/// A surrogate over scaled likelihoods, for the held-out evaluation protocol.
#[derive(Clone, Debug)]
pub enum Surrogate {
    /// Plain GP fitted directly on `f = exp(ℓ - log_scale)`.
    Gp { state: GpState, log_scale: f64 },
    Wsabi(WsabiState),
}

impl Surrogate {
    pub fn train_inputs(&self) -> &[ArchitectureId] {
        match self {
            Surrogate::Gp { state, .. } => state.train_inputs(),
            Surrogate::Wsabi(w) => w.base().train_inputs(),
        }
    }

    pub fn log_scale(&self) -> f64 {
        match self {
            Surrogate::Gp { log_scale, .. } => *log_scale,
            Surrogate::Wsabi(w) => w.log_scale(),
        }
    }

    pub fn noise_variance(&self) -> f64 {
        match self {
            Surrogate::Gp { state, .. } => state.kernel().params.noise_variance,
            Surrogate::Wsabi(w) => w.kernel().params.noise_variance,
        }
    }

    /// Predictive mean and latent variance of `f` at `ids`.
    pub fn predict(&self, ids: &[ArchitectureId]) -> Result<(Vec<f64>, Vec<f64>)> {
        match self {
            Surrogate::Gp { state, .. } => state.marginals(ids),
            Surrogate::Wsabi(w) => {
                let xs = w.domain().embed(w.kernel(), ids)?;
                let m = w.marginals_embedded(&xs);
                Ok((m.mean, m.var))
            }
        }
    }
}

/// Fits a plain GP on scaled likelihoods, optimizing θ first.
pub fn fit_scaled_gp(
    domain: &Domain,
    x: &[ArchitectureId],
    log_likelihoods: &[f64],
    kind: KernelKind,
    initial: &KernelHyperparams,
    search: &HyperSearch,
) -> Result<Surrogate> {
    let (f, _, log_scale) = warp_targets(log_likelihoods)?;
    let params = if x.len() >= 2 {
        optimize_hypers(domain, x, &f, kind, initial, search)?
    } else {
        initial.clone()
    };
    let state = fit_gp(domain, x, &f, &Kernel::new(kind, params))?;
    Ok(Surrogate::Gp { state, log_scale })
}

/// RMSE and mean negative log predictive density.
///
/// NLPD uses the predictive variance `var + noise`.
pub fn rmse_nlpd(mean: &[f64], var: &[f64], y: &[f64], noise: f64) -> (f64, f64) {
    let n = y.len() as f64;
    let mut se = 0.0;
    let mut nlpd = 0.0;
    for ((m, v), t) in mean.iter().zip(var).zip(y) {
        let r = t - m;
        se += r * r;
        let s2 = v + noise;
        nlpd += 0.5 * (LN_2PI + s2.ln() + r * r / s2);
    }
    ((se / n).sqrt(), nlpd / n)
}

/// Test set of the held-out protocol: every `stride`-th architecture when the
/// table is ranked by validation log-likelihood (best first, ranks counted
/// from one), minus `exclude`.
pub fn protocol_test_set(
    table: &BenchmarkTable,
    stride: usize,
    exclude: &[ArchitectureId],
) -> Result<Vec<ArchitectureId>> {
    if stride == 0 {
        return Err(Error::Protocol("stride must be ≥ 1".into()));
    }
    let mut ranked: Vec<_> = table
        .records()
        .iter()
        .map(|r| (r.log_evidence_proxy, &r.arch))
        .collect();
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
    let skip: std::collections::HashSet<&ArchitectureId> = exclude.iter().collect();
    let test: Vec<_> = ranked
        .into_iter()
        .skip(stride - 1)
        .step_by(stride)
        .map(|(_, id)| id)
        .filter(|id| !skip.contains(id))
        .cloned()
        .collect();
    if test.is_empty() {
        return Err(Error::Protocol("held-out test set is empty".into()));
    }
    Ok(test)
}

/// Held-out RMSE and NLPD of a surrogate on scaled likelihoods.
pub fn evaluate_surrogate(state: &Surrogate, table: &BenchmarkTable, stride: usize) -> Result<(f64, f64)> {
    let test = protocol_test_set(table, stride, state.train_inputs())?;
    evaluate_on(state, table, &test)
}

/// As [`evaluate_surrogate`] but on an explicit test set. Targets are in
/// the surrogate's own units, `exp(ℓ - log_scale)`.
pub fn evaluate_on(state: &Surrogate, table: &BenchmarkTable, test: &[ArchitectureId]) -> Result<(f64, f64)> {
    if test.is_empty() {
        return Err(Error::Protocol("held-out test set is empty".into()));
    }
    let y: Vec<f64> = test
        .iter()
        .map(|id| Ok((table.peek(id)?.log_evidence_proxy - state.log_scale()).exp()))
        .collect::<Result<_>>()?;
    let (mean, var) = state.predict(test)?;
    Ok(rmse_nlpd(&mean, &var, &y, state.noise_variance()))
}
