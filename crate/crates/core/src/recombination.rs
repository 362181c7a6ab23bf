//! Posterior recombination.
//!
//! The posterior over candidates is reduced to at most `M` points while the
//! expectations of `M − 1` Nyström test functions and the total mass stay
//! fixed. The reduction is Carathéodory's: repeatedly move along a null
//! direction of the moment matrix until a weight hits zero.

use nalgebra::{DMatrix, DVector, SymmetricEigen, SVD};

use crate::archspace::ArchitectureId;
use crate::ensemble::WeightedEnsemble;
use crate::error::{Error, Result};
use crate::quadrature::DiscreteMeasure;

/// Relative cut-off for Nyström eigenvalues.
const EIG_CUTOFF: f64 = 1e-10;
/// Moment tolerance, relative to `‖φ_t‖_∞`.
const MOMENT_TOL: f64 = 1e-8;

/// Greedy pivoted-Cholesky landmark selection.
///
/// Each step pivots on the point whose elimination removes the most
/// Frobenius mass from the residual `R`: for column `r = R e_j` with diagonal
/// `d`, that is `2 rᵀRr / d − ‖r‖⁴ / d²`. Picking the largest diagonal instead
/// behaves like farthest-point sampling on stationary kernels and loses to
/// random subsets. Points with no residual left are only taken once nothing
/// else remains; ties go to the smallest index.
pub fn select_nystrom_subset(k: &DMatrix<f64>, m: usize) -> Result<Vec<usize>> {
    let n = k.nrows();
    if k.ncols() != n {
        return Err(Error::Shape("Gram matrix must be square".into()));
    }
    if m > n {
        return Err(Error::Input(format!("subset of {m} from {n} points")));
    }
    let scale = (0..n).map(|i| k[(i, i)].abs()).fold(0.0, f64::max);
    let tol = 1e-12 * scale;
    let mut residual = k.clone();
    let mut used = vec![false; n];
    let mut chosen = Vec::with_capacity(m);
    for _ in 0..m {
        let squared = &residual * &residual;
        let mut pivot = None;
        let mut best = f64::NEG_INFINITY;
        for j in (0..n).filter(|&j| !used[j]) {
            let d = residual[(j, j)];
            let score = if d > tol {
                let r = residual.column(j);
                let rr = r.norm_squared();
                2.0 * r.dot(&squared.column(j)) / d - rr * rr / (d * d)
            } else {
                f64::NEG_INFINITY
            };
            if pivot.is_none() || score > best {
                pivot = Some(j);
                best = score;
            }
        }
        let p = pivot.expect("m ≤ n");
        used[p] = true;
        chosen.push(p);
        let d = residual[(p, p)];
        if d > tol {
            let r = residual.column(p).clone_owned();
            residual -= &r * r.transpose() / d;
        }
    }
    Ok(chosen)
}

/// Rows are test functions evaluated at each support point.
#[derive(Clone, Debug)]
pub struct TestFunctionMatrix {
    pub phi: DMatrix<f64>,
    pub subset: Vec<usize>,
    pub eigenvalues: Vec<f64>,
    /// Columns are the retained eigenvectors of `k(S, S)`.
    pub eigenvectors: DMatrix<f64>,
}

impl TestFunctionMatrix {
    /// Wraps explicit function values, with no Nyström provenance.
    pub fn from_values(phi: DMatrix<f64>) -> Self {
        let t = phi.nrows();
        TestFunctionMatrix {
            phi,
            subset: Vec::new(),
            eigenvalues: vec![1.0; t],
            eigenvectors: DMatrix::zeros(0, t),
        }
    }

    pub fn n_functions(&self) -> usize {
        self.phi.nrows()
    }
}

/// `φ_t(·) = u_tᵀ k(S, ·)` for the eigenpairs of `k(S, S)` above the cut-off,
/// largest eigenvalue first.
pub fn build_test_functions(k: &DMatrix<f64>, subset: &[usize]) -> Result<TestFunctionMatrix> {
    let n = k.nrows();
    if subset.iter().any(|&s| s >= n) {
        return Err(Error::Shape("subset index out of range".into()));
    }
    if subset.is_empty() {
        return Ok(TestFunctionMatrix {
            phi: DMatrix::zeros(0, n),
            subset: Vec::new(),
            eigenvalues: Vec::new(),
            eigenvectors: DMatrix::zeros(0, 0),
        });
    }
    let s = subset.len();
    let kss = DMatrix::from_fn(s, s, |i, j| k[(subset[i], subset[j])]);
    let eig = SymmetricEigen::new(kss.clone());
    let trace = kss.trace();
    let mut order: Vec<usize> = (0..s).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let keep: Vec<usize> = order
        .into_iter()
        .filter(|&i| eig.eigenvalues[i] > EIG_CUTOFF * trace)
        .collect();
    if keep.is_empty() {
        return Err(Error::DegenerateKernel(format!(
            "all {s} Nyström eigenvalues below {EIG_CUTOFF:e}·trace"
        )));
    }
    let u = DMatrix::from_fn(s, keep.len(), |i, t| eig.eigenvectors[(i, keep[t])]);
    let ksx = DMatrix::from_fn(s, n, |i, j| k[(subset[i], j)]);
    Ok(TestFunctionMatrix {
        phi: u.transpose() * ksx,
        subset: subset.to_vec(),
        eigenvalues: keep.iter().map(|&i| eig.eigenvalues[i]).collect(),
        eigenvectors: u,
    })
}

/// Reduces `measure` to at most `m` points with the same mass and the same
/// expectation of every row of `phi`.
pub fn recombine(measure: &DiscreteMeasure, phi: &TestFunctionMatrix, m: usize) -> Result<WeightedEnsemble> {
    let n = measure.len();
    let t = phi.n_functions();
    if phi.phi.ncols() != n {
        return Err(Error::Shape(format!(
            "test functions cover {} points, measure has {n}",
            phi.phi.ncols()
        )));
    }
    if m == 0 || t + 1 > m {
        return Err(Error::Input(format!("{t} test functions need a support of at least {}", t + 1)));
    }
    if n <= m {
        return Ok(WeightedEnsemble {
            members: measure.support.clone(),
            weights: measure.weights.clone(),
        });
    }
    let mut w = measure.weights.clone();
    let mut active: Vec<usize> = (0..n).filter(|&i| w[i] > 0.0).collect();
    let mut steps = 0;
    while active.len() > m {
        let cols = &active[..t + 2];
        let k = t + 2;
        // square system [Φ; 1] padded with a zero row
        let a = DMatrix::from_fn(k, k, |r, c| {
            if r < t {
                phi.phi[(r, cols[c])]
            } else if r == t {
                1.0
            } else {
                0.0
            }
        });
        let svd = SVD::new(a.clone(), false, true);
        let v_t = svd
            .v_t
            .as_ref()
            .ok_or_else(|| Error::Recombination("SVD produced no right singular vectors".into()))?;
        let smallest = (0..k)
            .min_by(|&x, &y| svd.singular_values[x].total_cmp(&svd.singular_values[y]))
            .unwrap();
        let v: DVector<f64> = v_t.row(smallest).transpose();
        let scale = a.abs().max().max(1.0);
        let resid = (&a * &v).abs().max();
        if !(resid <= 1e-9 * scale) || v.abs().max() == 0.0 {
            return Err(Error::Recombination(format!(
                "no null direction at step {steps}: residual {resid:e}, support {}",
                active.len()
            )));
        }
        // candidate steps along ±v: the first weight to reach zero
        let mut plus: Option<(f64, usize)> = None;
        let mut minus: Option<(f64, usize)> = None;
        for (j, &c) in cols.iter().enumerate() {
            if v[j] > 0.0 {
                let s = w[c] / v[j];
                if plus.is_none_or(|(b, _)| s < b) {
                    plus = Some((s, j));
                }
            } else if v[j] < 0.0 {
                let s = w[c] / -v[j];
                if minus.is_none_or(|(b, _)| s < b) {
                    minus = Some((s, j));
                }
            }
        }
        let (step, hit) = match (plus, minus) {
            (Some(p), Some(q)) if q.0 < p.0 => (-q.0, q.1),
            (Some(p), _) => (p.0, p.1),
            (None, Some(q)) => (-q.0, q.1),
            (None, None) => unreachable!("null vector is non-zero"),
        };
        for (j, &c) in cols.iter().enumerate() {
            w[c] -= step * v[j];
            if w[c] < 0.0 {
                w[c] = 0.0;
            }
        }
        w[cols[hit]] = 0.0;
        let before = active.len();
        active.retain(|&i| w[i] > 0.0);
        debug_assert!(active.len() < before);
        steps += 1;
    }

    // moment check against the input measure
    for r in 0..t {
        let row = phi.phi.row(r);
        let target: f64 = (0..n).map(|i| measure.weights[i] * row[i]).sum();
        let got: f64 = active.iter().map(|&i| w[i] * row[i]).sum();
        let norm = row.abs().max().max(f64::MIN_POSITIVE);
        if (target - got).abs() > MOMENT_TOL * norm {
            return Err(Error::Recombination(format!(
                "test function {r} drifted by {:e} (‖φ‖∞ = {norm:e}) after {steps} steps",
                (target - got).abs()
            )));
        }
    }
    let mass: f64 = active.iter().map(|&i| w[i]).sum();
    Ok(WeightedEnsemble {
        members: active.iter().map(|&i| measure.support[i].clone()).collect(),
        weights: active.iter().map(|&i| w[i] / mass).collect(),
    })
}

/// Nyström subset of size `m − 1`, test functions, then recombination.
pub fn posterior_recombination(
    measure: &DiscreteMeasure,
    gram: &DMatrix<f64>,
    m: usize,
) -> Result<(WeightedEnsemble, TestFunctionMatrix)> {
    let n = measure.len();
    if gram.nrows() != n || gram.ncols() != n {
        return Err(Error::Shape(format!("{}×{} Gram for {n} points", gram.nrows(), gram.ncols())));
    }
    if m == 0 {
        return Err(Error::Input("ensemble size must be ≥ 1".into()));
    }
    let subset = select_nystrom_subset(gram, (m - 1).min(n))?;
    let phi = build_test_functions(gram, &subset)?;
    let ens = recombine(measure, &phi, m)?;
    Ok((ens, phi))
}

/// Members of `ens` as indices into `support`.
pub fn member_indices(support: &[ArchitectureId], ens: &WeightedEnsemble) -> Vec<usize> {
    ens.members
        .iter()
        .filter_map(|m| support.iter().position(|s| s == m))
        .collect()
}
