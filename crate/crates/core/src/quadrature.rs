//! Evidence estimation by Bayesian quadrature.
//!
//! All estimators here use *weighted* kernel means under the uniform prior π:
//!
//! ```text
//! z_i = E_π[w(α) k(α, x_i)]      zz = E_π E_π[w(α) k(α, α') w(α')]
//! ```
//!
//! With `w ≡ 1` these are the ordinary kernel means of vanilla BQ. For WSABI-L
//! the weight is the warped GP mean `μ(α)`. The linearized integrand then has
//! covariance `μ(x)Σ(x, x')μ(x')`, and its integral has mean
//! `β + ½ zᵀ(K + σ²I)⁻¹g` and variance `zz − zᵀ(K + σ²I)⁻¹z`. Both are computed
//! from the kernel means above.
//!
//! Kernel means are computed exactly by enumeration when the space has no more
//! architectures than the Monte-Carlo sample budget. Otherwise they are
//! estimated from prior samples. All entries of `z` share one sample set.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::archspace::ArchitectureId;
use crate::error::{Error, Result};
use crate::kernels::{Embedding, Kernel};
use crate::rng::{seeded, stream};
use crate::surrogate::{Domain, GpState, WsabiState};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelMeanMode {
    /// Exact when `|A| ≤ n_samples`, Monte Carlo otherwise.
    Auto,
    Exact,
    MonteCarlo,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelMeanConfig {
    pub n_samples: usize,
    pub mode: KernelMeanMode,
    pub seed: u64,
}

impl Default for KernelMeanConfig {
    fn default() -> Self {
        KernelMeanConfig {
            n_samples: 4096,
            mode: KernelMeanMode::Auto,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct KernelMeanEstimate {
    pub z: Vec<f64>,
    pub zz: f64,
    /// Number of prior samples, or `|A|` in exact mode.
    pub n_samples: usize,
    /// Standard error of each `z_i` (zero in exact mode).
    pub standard_errors: Vec<f64>,
    pub zz_standard_error: f64,
    pub exact: bool,
    /// Per-sample terms `w(α_s) k(α_s, x_i)` (Monte Carlo only).
    samples: Option<DMatrix<f64>>,
}

impl KernelMeanEstimate {
    /// Standard error of `zᵀv` induced by the Monte-Carlo noise in `z`.
    pub fn projected_standard_error(&self, v: &DVector<f64>) -> f64 {
        match &self.samples {
            None => 0.0,
            Some(rows) => {
                let per = rows * v;
                let s = per.len() as f64;
                if s < 2.0 {
                    return 0.0;
                }
                let mean = per.mean();
                let var = per.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (s - 1.0);
                (var / s).sqrt()
            }
        }
    }
}

/// The points and weights a kernel-mean estimate sums over.
struct Quadrature {
    points: Vec<Embedding>,
    /// `π(α)` in exact mode, `1/S` in Monte Carlo.
    mass: f64,
    exact: bool,
}

fn sample_points(
    domain: &Domain,
    kernel: &Kernel,
    config: &KernelMeanConfig,
    pairs: bool,
) -> Result<Quadrature> {
    if config.n_samples == 0 {
        return Err(Error::Input("n_samples must be ≥ 1".into()));
    }
    let space = domain.space();
    let exact = match config.mode {
        KernelMeanMode::Exact => true,
        KernelMeanMode::MonteCarlo => false,
        KernelMeanMode::Auto => space.size() <= config.n_samples as u128,
    };
    if exact && !pairs {
        let ids = space.enumerate()?;
        return Ok(Quadrature {
            points: domain.embed(kernel, &ids)?,
            mass: space.prior_mass(),
            exact,
        });
    }
    let stream = if pairs { stream::KERNEL_MEAN_PAIRS } else { stream::KERNEL_MEAN };
    let mut rng = seeded(config.seed, stream);
    let ids: Vec<ArchitectureId> = (0..config.n_samples).map(|_| space.sample_one(&mut rng)).collect();
    Ok(Quadrature {
        points: domain.embed(kernel, &ids)?,
        mass: 1.0 / config.n_samples as f64,
        exact,
    })
}

fn mean_and_se(values: impl Iterator<Item = f64>, n: usize) -> (f64, f64) {
    let v: Vec<f64> = values.collect();
    let mean = v.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    (mean, (var / n as f64).sqrt())
}

/// Weighted kernel means at `xs`; `weight` maps query embeddings to `w(α)`.
fn weighted_kernel_mean(
    domain: &Domain,
    kernel: &Kernel,
    xs: &[Embedding],
    config: &KernelMeanConfig,
    weight: &dyn Fn(&DMatrix<f64>) -> DVector<f64>,
) -> Result<KernelMeanEstimate> {
    let q = sample_points(domain, kernel, config, false)?;
    let n = xs.len();
    // rows: sample points, columns: observed inputs
    let g = kernel.gram(&q.points, xs);
    let w = weight(&g);
    let mut rows = g;
    for (mut r, wp) in rows.row_iter_mut().zip(w.iter()) {
        r *= *wp;
    }
    if q.exact {
        let z = (0..n).map(|i| q.mass * rows.column(i).sum()).collect();
        let zz = q.mass * q.mass * kernel.weighted_double_sum(&q.points, w.as_slice());
        return Ok(KernelMeanEstimate {
            z,
            zz,
            n_samples: q.points.len(),
            standard_errors: vec![0.0; n],
            zz_standard_error: 0.0,
            exact: true,
            samples: None,
        });
    }
    let s = q.points.len();
    let mut z = Vec::with_capacity(n);
    let mut se = Vec::with_capacity(n);
    for i in 0..n {
        let (m, e) = mean_and_se(rows.column(i).iter().copied(), s);
        z.push(m);
        se.push(e);
    }
    // independent second sample for the double integral
    let q2 = sample_points(domain, kernel, config, true)?;
    let w2 = weight(&kernel.gram(&q2.points, xs));
    let (zz, zz_se) = mean_and_se(
        (0..s).map(|p| w[p] * kernel.eval(&q.points[p], &q2.points[p]) * w2[p]),
        s,
    );
    Ok(KernelMeanEstimate {
        z,
        zz,
        n_samples: s,
        standard_errors: se,
        zz_standard_error: zz_se,
        exact: false,
        samples: Some(rows),
    })
}

/// Plain kernel means `z_i = E_π[k(x_i, α)]`, `zz = E_π E_π[k(α, α')]`.
pub fn kernel_mean_mc(
    domain: &Domain,
    kernel: &Kernel,
    x: &[ArchitectureId],
    config: &KernelMeanConfig,
) -> Result<KernelMeanEstimate> {
    let xs = domain.embed(kernel, x)?;
    weighted_kernel_mean(domain, kernel, &xs, config, &|g| DVector::from_element(g.nrows(), 1.0))
}

/// Kernel means of the WSABI-L induced kernel: `w(α) = μ(α)`.
pub fn wsabi_kernel_mean(state: &WsabiState, config: &KernelMeanConfig) -> Result<KernelMeanEstimate> {
    let base = state.base();
    let alpha = base.alpha().clone();
    weighted_kernel_mean(
        state.domain(),
        state.kernel(),
        base.embeddings(),
        config,
        &move |g| g * &alpha,
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvidenceEstimate {
    /// Posterior mean of the evidence, in scaled units.
    pub mu_z: f64,
    /// Posterior variance of the evidence, clipped at zero.
    pub sigma_z: f64,
    /// Add to `ln(mu_z)` for the log evidence.
    pub log_scale: f64,
    /// Quadrature weights over the observed inputs.
    pub quad_weights: Vec<f64>,
    /// Mass the prior mean contributes, so that `mu_z = ⟨quad_weights, f⟩ + prior_offset`.
    pub prior_offset: f64,
    /// Monte-Carlo standard error of `mu_z` (zero in exact mode).
    pub mu_z_standard_error: f64,
    /// `sigma_z` before clipping.
    pub raw_sigma_z: f64,
    /// Set when the raw variance fell below `-1e-8`.
    pub conditioning_warning: bool,
}

impl EvidenceEstimate {
    pub fn log_evidence(&self) -> Option<f64> {
        (self.mu_z > 0.0).then(|| self.mu_z.ln() + self.log_scale)
    }
}

/// Quadrature under a GP with zero prior mean: returns
/// `(zᵀ(K+σ²I)⁻¹y, zz − zᵀ(K+σ²I)⁻¹z, (K+σ²I)⁻¹z)`.
pub fn bq_moments(
    k_xx: &DMatrix<f64>,
    noise: f64,
    z: &[f64],
    zz: f64,
    y: &[f64],
) -> Result<(f64, f64, Vec<f64>)> {
    let n = k_xx.nrows();
    if z.len() != n || y.len() != n || k_xx.ncols() != n {
        return Err(Error::Shape("quadrature inputs disagree in length".into()));
    }
    let sv = (0..n).map(|i| k_xx[(i, i)]).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let (chol, _) = crate::surrogate::regularized_cholesky(k_xx, noise, sv)?;
    let z = DVector::from_column_slice(z);
    let c = chol.solve(&z);
    let mu = c.dot(&DVector::from_column_slice(y));
    Ok((mu, zz - z.dot(&c), c.iter().copied().collect()))
}

fn clip_variance(raw: f64) -> (f64, bool) {
    (raw.max(0.0), raw < -1e-8)
}

/// Vanilla BQ evidence from a GP fitted directly on (scaled) likelihoods.
pub fn evidence_gp(gp: &GpState, km: &KernelMeanEstimate, log_scale: f64) -> Result<EvidenceEstimate> {
    let n = gp.train_inputs().len();
    if km.z.len() != n {
        return Err(Error::Shape(format!("{} kernel means for {n} inputs", km.z.len())));
    }
    let z = DVector::from_column_slice(&km.z);
    let c = gp.solve(&z);
    let mu = c.dot(gp.train_targets());
    let (sigma, warn) = clip_variance(km.zz - z.dot(&c));
    Ok(EvidenceEstimate {
        mu_z: mu,
        sigma_z: sigma,
        log_scale,
        quad_weights: c.iter().copied().collect(),
        prior_offset: 0.0,
        mu_z_standard_error: km.projected_standard_error(gp.alpha()),
        raw_sigma_z: km.zz - z.dot(&c),
        conditioning_warning: warn,
    })
}

/// WSABI-L evidence from the warped model and its weighted kernel means.
pub fn evidence_posterior(state: &WsabiState, km: &KernelMeanEstimate) -> Result<EvidenceEstimate> {
    let base = state.base();
    let n = base.train_inputs().len();
    if km.z.len() != n {
        return Err(Error::Shape(format!("{} kernel means for {n} inputs", km.z.len())));
    }
    let z = DVector::from_column_slice(&km.z);
    let c = base.solve(&z);
    let g = base.train_targets();
    let beta = state.beta();
    let mu = beta + 0.5 * c.dot(g);
    let raw = km.zz - z.dot(&c);
    let (sigma, warn) = clip_variance(raw);
    // f_i - β = ½g_i², so c_i g_i / 2 = (c_i / g_i)(f_i - β)
    let quad_weights: Vec<f64> = c
        .iter()
        .zip(g.iter())
        .map(|(ci, gi)| if *gi > 0.0 { ci / gi } else { 0.0 })
        .collect();
    let prior_offset = beta * (1.0 - quad_weights.iter().sum::<f64>());
    Ok(EvidenceEstimate {
        mu_z: mu,
        sigma_z: sigma,
        log_scale: state.log_scale(),
        quad_weights,
        prior_offset,
        mu_z_standard_error: 0.5 * km.projected_standard_error(base.alpha()),
        raw_sigma_z: raw,
        conditioning_warning: warn,
    })
}

/// Scaled likelihoods aligned with the quadrature weights.
pub fn quadrature_targets(state: &WsabiState) -> Vec<f64> {
    state.base().train_targets().iter().map(|&g| state.unwarp(g)).collect()
}

/// Kernel means plus WSABI-L evidence in one call.
pub fn wsabi_evidence(state: &WsabiState, config: &KernelMeanConfig) -> Result<EvidenceEstimate> {
    let km = wsabi_kernel_mean(state, config)?;
    evidence_posterior(state, &km)
}

/// A probability measure on finitely many architectures.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscreteMeasure {
    pub support: Vec<ArchitectureId>,
    pub weights: Vec<f64>,
}

impl DiscreteMeasure {
    pub fn new(support: Vec<ArchitectureId>, weights: Vec<f64>) -> Result<Self> {
        if support.len() != weights.len() || support.is_empty() {
            return Err(Error::Shape(format!(
                "{} support points, {} weights",
                support.len(),
                weights.len()
            )));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::DegenerateMeasure("negative or NaN weight".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::DegenerateMeasure(format!("weights sum to {total}")));
        }
        Ok(DiscreteMeasure { support, weights })
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }
}

/// Posterior over the candidates, `∝ exp(ℓ_i − max ℓ) · p(α_i)`, renormalized
/// to sum to one on the support.
pub fn posterior_measure(
    archs: &[ArchitectureId],
    log_likelihoods: &[f64],
    prior_mass: &[f64],
) -> Result<DiscreteMeasure> {
    if archs.len() != log_likelihoods.len() || archs.len() != prior_mass.len() {
        return Err(Error::Shape("posterior inputs disagree in length".into()));
    }
    if archs.is_empty() {
        return Err(Error::DegenerateMeasure("empty support".into()));
    }
    let top = log_likelihoods.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !top.is_finite() {
        return Err(Error::DegenerateMeasure("no finite log-likelihood".into()));
    }
    let raw: Vec<f64> = log_likelihoods
        .iter()
        .zip(prior_mass)
        .map(|(l, p)| (l - top).exp() * p)
        .collect();
    let total: f64 = raw.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::DegenerateMeasure(format!("unnormalizable weights (total {total})")));
    }
    Ok(DiscreteMeasure {
        support: archs.to_vec(),
        weights: raw.iter().map(|w| w / total).collect(),
    })
}
