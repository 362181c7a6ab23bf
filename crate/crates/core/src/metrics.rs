//! Ensemble prediction and evaluation metrics.

use serde::{Deserialize, Serialize};

use crate::benchmark::{PredictionMatrix, PROB_FLOOR};
use crate::ensemble::WeightedEnsemble;
use crate::error::{Error, Result};

pub const DEFAULT_ECE_BINS: usize = 15;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    /// Summed over examples.
    pub log_likelihood: f64,
    pub ece: f64,
    pub n_examples: usize,
    pub n_bins: usize,
}

/// Rowwise mixture `Σ_m w_m p_m(c | x)`.
pub fn mixture(weights: &[f64], preds: &[&PredictionMatrix]) -> Result<PredictionMatrix> {
    if weights.len() != preds.len() || preds.is_empty() {
        return Err(Error::Shape(format!(
            "{} weights for {} prediction matrices",
            weights.len(),
            preds.len()
        )));
    }
    let (rows, classes) = (preds[0].n_rows(), preds[0].n_classes());
    if preds.iter().any(|p| p.n_rows() != rows || p.n_classes() != classes) {
        return Err(Error::Shape("member prediction matrices differ in shape".into()));
    }
    let mut data = vec![0.0; rows * classes];
    for (&w, p) in weights.iter().zip(preds) {
        if w == 0.0 {
            continue;
        }
        for (out, v) in data.iter_mut().zip(p.as_slice()) {
            *out += w * v;
        }
    }
    PredictionMatrix::from_raw(rows, classes, data)
}

/// Combines member predictions with the ensemble weights.
pub fn ensemble_predict(
    ensemble: &WeightedEnsemble,
    preds: &[&PredictionMatrix],
) -> Result<PredictionMatrix> {
    if preds.len() != ensemble.members.len() {
        return Err(Error::Shape(format!(
            "{} members but {} prediction matrices",
            ensemble.members.len(),
            preds.len()
        )));
    }
    mixture(&ensemble.weights, preds)
}

fn check_labels(preds: &PredictionMatrix, labels: &[u16]) -> Result<()> {
    if preds.n_rows() != labels.len() {
        return Err(Error::Shape(format!(
            "{} rows but {} labels",
            preds.n_rows(),
            labels.len()
        )));
    }
    if labels.iter().any(|&y| y as usize >= preds.n_classes()) {
        return Err(Error::Input("label outside the class range".into()));
    }
    Ok(())
}

/// Index and value of the row maximum; ties go to the smallest index.
fn top(row: &[f64]) -> (usize, f64) {
    let mut best = (0, row[0]);
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > best.1 {
            best = (i, v);
        }
    }
    best
}

pub fn accuracy(preds: &PredictionMatrix, labels: &[u16]) -> Result<f64> {
    check_labels(preds, labels)?;
    if labels.is_empty() {
        return Ok(0.0);
    }
    let hits = labels
        .iter()
        .enumerate()
        .filter(|(i, &y)| top(preds.row(*i)).0 == y as usize)
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

/// `Σ_rows ln max(p(true label), 1e-12)`.
///
/// Each term is evaluated as `-ln(1/p)`, which for `p = 1/C` recovers `C`
/// exactly in most cases, and the sum uses Neumaier compensation so that n
/// equal terms give `n · term` to the last bit.
pub fn log_likelihood(preds: &PredictionMatrix, labels: &[u16]) -> Result<f64> {
    check_labels(preds, labels)?;
    let mut sum = 0.0f64;
    let mut carry = 0.0f64;
    for p in preds.label_probs(labels) {
        let x = -(1.0 / p.max(PROB_FLOOR)).ln();
        let t = sum + x;
        carry += if sum.abs() >= x.abs() { (sum - t) + x } else { (x - t) + sum };
        sum = t;
    }
    Ok(sum + carry)
}

/// Top-label expected calibration error over `n_bins` equal-width bins on (0, 1].
pub fn ece(preds: &PredictionMatrix, labels: &[u16], n_bins: usize) -> Result<f64> {
    check_labels(preds, labels)?;
    if n_bins == 0 {
        return Err(Error::Input("n_bins must be ≥ 1".into()));
    }
    if labels.is_empty() {
        return Ok(0.0);
    }
    let mut count = vec![0usize; n_bins];
    let mut conf = vec![0.0; n_bins];
    let mut hits = vec![0.0; n_bins];
    for (i, &y) in labels.iter().enumerate() {
        let (cls, p) = top(preds.row(i));
        let b = ((p * n_bins as f64).ceil() as usize).clamp(1, n_bins) - 1;
        count[b] += 1;
        conf[b] += p;
        if cls == y as usize {
            hits[b] += 1.0;
        }
    }
    let n = labels.len() as f64;
    let total: f64 = (0..n_bins)
        .filter(|&b| count[b] > 0)
        .map(|b| (hits[b] - conf[b]).abs() / n)
        .sum();
    Ok(total.clamp(0.0, 1.0))
}

pub fn evaluate(preds: &PredictionMatrix, labels: &[u16], n_bins: usize) -> Result<EvalReport> {
    Ok(EvalReport {
        accuracy: accuracy(preds, labels)?,
        log_likelihood: log_likelihood(preds, labels)?,
        ece: ece(preds, labels, n_bins)?,
        n_examples: labels.len(),
        n_bins,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::archspace::ArchitectureId;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn onehot(labels: &[u16], c: usize) -> PredictionMatrix {
        let rows: Vec<Vec<f64>> = labels
            .iter()
            .map(|&y| (0..c).map(|k| if k == y as usize { 1.0 } else { 0.0 }).collect())
            .collect();
        PredictionMatrix::from_rows(&rows).unwrap()
    }

    fn random_preds(rng: &mut ChaCha8Rng, n: usize, c: usize) -> PredictionMatrix {
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let r: Vec<f64> = (0..c).map(|_| rng.random::<f64>() + 1e-3).collect();
                let s: f64 = r.iter().sum();
                r.iter().map(|v| v / s).collect()
            })
            .collect();
        PredictionMatrix::from_rows(&rows).unwrap()
    }

    fn ens(weights: Vec<f64>) -> WeightedEnsemble {
        let members = (0..weights.len())
            .map(|i| ArchitectureId::from(format!("o:{i}").as_str()))
            .collect();
        WeightedEnsemble { members, weights }
    }

    #[test]
    fn single_member_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = random_preds(&mut rng, 20, 4);
        let out = ensemble_predict(&ens(vec![1.0]), &[&p]).unwrap();
        assert_eq!(out, p);
    }

    #[test]
    fn midpoint_of_two_members() {
        let a = PredictionMatrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let b = PredictionMatrix::from_rows(&[vec![0.0, 1.0]]).unwrap();
        let out = ensemble_predict(&ens(vec![0.5, 0.5]), &[&a, &b]).unwrap();
        assert_eq!(out.row(0), &[0.5, 0.5]);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let a = PredictionMatrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let b = PredictionMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert!(matches!(
            ensemble_predict(&ens(vec![0.5, 0.5]), &[&a, &b]),
            Err(Error::Shape(_))
        ));
        assert!(matches!(ensemble_predict(&ens(vec![1.0]), &[&a, &a]), Err(Error::Shape(_))));
    }

    #[test]
    fn accuracy_cases() {
        let labels = [0u16, 3, 2, 1];
        assert_eq!(accuracy(&onehot(&labels, 4), &labels).unwrap(), 1.0);
        let uniform = PredictionMatrix::from_rows(&vec![vec![0.25; 4]; 4]).unwrap();
        assert_eq!(accuracy(&uniform, &[0, 0, 0, 0]).unwrap(), 1.0);
        assert_eq!(accuracy(&uniform, &[1, 0, 0, 0]).unwrap(), 0.75);

        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = random_preds(&mut rng, 10_000, 10);
        let y: Vec<u16> = (0..10_000).map(|_| rng.random_range(0..10)).collect();
        let acc = accuracy(&p, &y).unwrap();
        assert!((acc - 0.1).abs() < 0.02, "{acc}");
    }

    #[test]
    fn log_likelihood_cases() {
        let labels = [1u16, 0, 2];
        assert_eq!(log_likelihood(&onehot(&labels, 3), &labels).unwrap(), 0.0);
        let p = PredictionMatrix::from_rows(&[vec![0.5, 0.5]]).unwrap();
        assert!((log_likelihood(&p, &[1]).unwrap() - 0.5f64.ln()).abs() < 1e-15);
        // a zero probability is floored rather than -inf
        let zero = onehot(&[0], 2);
        assert_eq!(log_likelihood(&zero, &[1]).unwrap(), PROB_FLOOR.ln());
    }

    #[test]
    fn uniform_predictor_log_likelihood() {
        for n in [1usize, 37, 100, 1000] {
            for c in 2usize..=100 {
                let p = PredictionMatrix::from_rows(&vec![vec![1.0 / c as f64; c]; n]).unwrap();
                let y: Vec<u16> = (0..n).map(|i| (i % c) as u16).collect();
                let ll = log_likelihood(&p, &y).unwrap();
                let expected = -(n as f64) * (c as f64).ln();
                if 1.0 / (1.0 / c as f64) == c as f64 {
                    assert_eq!(ll, expected, "n={n} c={c}");
                } else {
                    // 1/49 and friends do not round-trip; one ulp per term
                    assert!((ll - expected).abs() <= 4.0 * f64::EPSILON * expected.abs(), "n={n} c={c}");
                }
            }
        }
    }

    #[test]
    fn ece_cases() {
        let labels = [0u16, 1, 2, 2];
        assert_eq!(ece(&onehot(&labels, 3), &labels, 15).unwrap(), 0.0);
        let p = PredictionMatrix::from_rows(&[vec![0.8, 0.2]]).unwrap();
        assert!((ece(&p, &[1], 15).unwrap() - 0.8).abs() < 1e-15);
        assert!(matches!(ece(&p, &[1], 0), Err(Error::Input(_))));
    }

    #[test]
    fn ece_of_constant_predictor_vanishes() {
        // argmax of a constant row is class 0; labels hit class 0 at rate 1/C
        let (n, c) = (100_000usize, 10usize);
        let p = PredictionMatrix::from_rows(&vec![vec![1.0 / c as f64; c]; n]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let y: Vec<u16> = (0..n).map(|_| rng.random_range(0..c as u16)).collect();
        assert!(ece(&p, &y, 15).unwrap() < 0.02);
    }

    #[test]
    fn evaluate_bundles_metrics() {
        let labels = [0u16, 1];
        let r = evaluate(&onehot(&labels, 2), &labels, DEFAULT_ECE_BINS).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.log_likelihood, 0.0);
        assert_eq!(r.ece, 0.0);
        assert_eq!((r.n_examples, r.n_bins), (2, 15));
    }

    proptest! {
        #[test]
        fn rows_stay_on_simplex(seed in any::<u64>(), m in 1usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let preds: Vec<_> = (0..m).map(|_| random_preds(&mut rng, 8, 5)).collect();
            let mut w: Vec<f64> = (0..m).map(|_| rng.random::<f64>() + 1e-6).collect();
            let s: f64 = w.iter().sum();
            w.iter_mut().for_each(|v| *v /= s);
            let refs: Vec<_> = preds.iter().collect();
            let out = ensemble_predict(&ens(w), &refs).unwrap();
            for i in 0..out.n_rows() {
                prop_assert!((out.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn prediction_is_affine_in_weights(seed in any::<u64>(), lambda in 0.0f64..1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let preds: Vec<_> = (0..3).map(|_| random_preds(&mut rng, 6, 4)).collect();
            let refs: Vec<_> = preds.iter().collect();
            let w = [0.2, 0.5, 0.3];
            let v = [0.6, 0.1, 0.3];
            let mix: Vec<f64> = w.iter().zip(&v).map(|(a, b)| lambda * a + (1.0 - lambda) * b).collect();
            let pw = mixture(&w, &refs).unwrap();
            let pv = mixture(&v, &refs).unwrap();
            let pm = mixture(&mix, &refs).unwrap();
            for ((a, b), c) in pw.as_slice().iter().zip(pv.as_slice()).zip(pm.as_slice()) {
                prop_assert!((lambda * a + (1.0 - lambda) * b - c).abs() < 1e-12);
            }
        }

        #[test]
        fn metrics_ignore_row_order(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = random_preds(&mut rng, 30, 4);
            let y: Vec<u16> = (0..30).map(|_| rng.random_range(0..4)).collect();
            let perm: Vec<usize> = (0..30).rev().collect();
            let rows: Vec<Vec<f64>> = perm.iter().map(|&i| p.row(i).to_vec()).collect();
            let q = PredictionMatrix::from_rows(&rows).unwrap();
            let z: Vec<u16> = perm.iter().map(|&i| y[i]).collect();
            prop_assert_eq!(accuracy(&p, &y).unwrap(), accuracy(&q, &z).unwrap());
            prop_assert!((log_likelihood(&p, &y).unwrap() - log_likelihood(&q, &z).unwrap()).abs() < 1e-10);
            prop_assert!((ece(&p, &y, 15).unwrap() - ece(&q, &z, 15).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn log_likelihood_is_additive(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_preds(&mut rng, 5, 3);
            let b = random_preds(&mut rng, 7, 3);
            let ya: Vec<u16> = (0..5).map(|_| rng.random_range(0..3)).collect();
            let yb: Vec<u16> = (0..7).map(|_| rng.random_range(0..3)).collect();
            let mut rows: Vec<Vec<f64>> = (0..5).map(|i| a.row(i).to_vec()).collect();
            rows.extend((0..7).map(|i| b.row(i).to_vec()));
            let ab = PredictionMatrix::from_rows(&rows).unwrap();
            let yab: Vec<u16> = ya.iter().chain(&yb).copied().collect();
            let lhs = log_likelihood(&ab, &yab).unwrap();
            let rhs = log_likelihood(&a, &ya).unwrap() + log_likelihood(&b, &yb).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-10);
        }
    }
}
