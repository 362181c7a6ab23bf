//! Ensemble selection from validation predictions: weighted stacking (WS),
//! re-weighted stacking (RS) and beam search (BS).
//!
//! Every tie is broken by the lexicographically smaller architecture id.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::archspace::ArchitectureId;
use crate::benchmark::{PredictionMatrix, PROB_FLOOR};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightedEnsemble {
    pub members: Vec<ArchitectureId>,
    pub weights: Vec<f64>,
}

impl WeightedEnsemble {
    pub fn new(members: Vec<ArchitectureId>, weights: Vec<f64>) -> Result<Self> {
        if members.len() != weights.len() || members.is_empty() {
            return Err(Error::Shape(format!(
                "{} members, {} weights",
                members.len(),
                weights.len()
            )));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::DegenerateWeights("negative or NaN weight".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::DegenerateWeights(format!("weights sum to {total}")));
        }
        let mut sorted: Vec<&ArchitectureId> = members.iter().collect();
        sorted.sort();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Input("duplicate ensemble member".into()));
        }
        Ok(WeightedEnsemble { members, weights })
    }

    /// `M` members with weight `1/M` each.
    pub fn equal(members: Vec<ArchitectureId>) -> Result<Self> {
        let m = members.len();
        Self::new(members, vec![1.0 / m.max(1) as f64; m])
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StackingConfig {
    pub iterations: usize,
    pub step: f64,
    pub tolerance: f64,
}

impl Default for StackingConfig {
    fn default() -> Self {
        StackingConfig {
            iterations: 500,
            step: 0.5,
            tolerance: 1e-8,
        }
    }
}

/// Probability each candidate assigns to each row's label, candidates × rows.
fn label_prob_matrix(preds: &[&PredictionMatrix], labels: &[u16]) -> Result<DMatrix<f64>> {
    if preds.is_empty() {
        return Err(Error::Input("no candidates".into()));
    }
    let rows = labels.len();
    for p in preds {
        if p.n_rows() != rows {
            return Err(Error::Shape(format!("{} prediction rows, {rows} labels", p.n_rows())));
        }
        if labels.iter().any(|&y| y as usize >= p.n_classes()) {
            return Err(Error::Input("label outside the class range".into()));
        }
    }
    let mut out = DMatrix::zeros(preds.len(), rows);
    for (i, p) in preds.iter().enumerate() {
        for (r, v) in p.label_probs(labels).into_iter().enumerate() {
            out[(i, r)] = v;
        }
    }
    Ok(out)
}

/// Mean validation NLL of the mixture with weights `w`.
fn mixture_nll(p: &DMatrix<f64>, w: &[f64]) -> f64 {
    let rows = p.ncols();
    let mut total = 0.0;
    for r in 0..rows {
        let mix: f64 = w.iter().enumerate().map(|(i, wi)| wi * p[(i, r)]).sum();
        total -= mix.max(PROB_FLOOR).ln();
    }
    total / rows.max(1) as f64
}

/// Mean validation NLL of the mixture `Σ ω_i p_i`.
pub fn stacking_loss(preds: &[&PredictionMatrix], labels: &[u16], weights: &[f64]) -> Result<f64> {
    if preds.len() != weights.len() {
        return Err(Error::Shape("one weight per candidate".into()));
    }
    Ok(mixture_nll(&label_prob_matrix(preds, labels)?, weights))
}

/// Simplex weights minimizing the mixture's mean validation NLL, by
/// exponentiated gradient from the uniform point. The best iterate is
/// returned, so the loss never exceeds the uniform mixture's.
pub fn optimize_stacking(
    preds: &[&PredictionMatrix],
    labels: &[u16],
    config: &StackingConfig,
) -> Result<Vec<f64>> {
    let p = label_prob_matrix(preds, labels)?;
    let n = preds.len();
    let rows = labels.len().max(1) as f64;
    let mut w = vec![1.0 / n as f64; n];
    let mut best = (mixture_nll(&p, &w), w.clone());
    let mut log_w: Vec<f64> = w.iter().map(|v| v.ln()).collect();
    for _ in 0..config.iterations {
        let mix: Vec<f64> = (0..p.ncols())
            .map(|r| (0..n).map(|i| w[i] * p[(i, r)]).sum::<f64>().max(PROB_FLOOR))
            .collect();
        for i in 0..n {
            let grad = -(0..p.ncols()).map(|r| p[(i, r)] / mix[r]).sum::<f64>() / rows;
            log_w[i] -= config.step * grad;
        }
        let top = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let unnorm: Vec<f64> = log_w.iter().map(|l| (l - top).exp()).collect();
        let total: f64 = unnorm.iter().sum();
        let next: Vec<f64> = unnorm.iter().map(|u| u / total).collect();
        let delta = next
            .iter()
            .zip(&w)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        w = next;
        // keep log weights bounded
        for (l, v) in log_w.iter_mut().zip(&w) {
            *l = v.max(f64::MIN_POSITIVE).ln();
        }
        let loss = mixture_nll(&p, &w);
        if loss < best.0 {
            best = (loss, w.clone());
        }
        if delta < config.tolerance {
            break;
        }
    }
    Ok(best.1)
}

/// Candidate indices sorted by descending `ω`, ties by id.
fn ranked(omega: &[f64], ids: &[ArchitectureId]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..omega.len()).collect();
    idx.sort_by(|&a, &b| omega[b].total_cmp(&omega[a]).then_with(|| ids[a].cmp(&ids[b])));
    idx
}

fn check_selection(omega: &[f64], ids: &[ArchitectureId], m: usize) -> Result<()> {
    if omega.len() != ids.len() {
        return Err(Error::Shape(format!("{} weights for {} candidates", omega.len(), ids.len())));
    }
    if m == 0 || m > ids.len() {
        return Err(Error::Input(format!("ensemble size {m} for {} candidates", ids.len())));
    }
    if omega.iter().any(|w| !(*w >= 0.0)) {
        return Err(Error::DegenerateWeights("negative or NaN stacking weight".into()));
    }
    Ok(())
}

/// Top-`m` members by `ω`, renormalized.
pub fn select_ws(omega: &[f64], ids: &[ArchitectureId], m: usize) -> Result<WeightedEnsemble> {
    check_selection(omega, ids, m)?;
    let top: Vec<usize> = ranked(omega, ids).into_iter().take(m).collect();
    let mass: f64 = top.iter().map(|&i| omega[i]).sum();
    if !(mass > 0.0) {
        return Err(Error::DegenerateWeights("selected members carry no weight".into()));
    }
    Ok(WeightedEnsemble {
        members: top.iter().map(|&i| ids[i].clone()).collect(),
        weights: top.iter().map(|&i| omega[i] / mass).collect(),
    })
}

/// Top-`m` members by `ω`, with every excluded candidate's weight handed to
/// the members in proportion to kernel similarity. An excluded candidate
/// with zero similarity to all members is split evenly.
pub fn select_rs(omega: &[f64], ids: &[ArchitectureId], m: usize, gram: &DMatrix<f64>) -> Result<WeightedEnsemble> {
    check_selection(omega, ids, m)?;
    let n = ids.len();
    if gram.nrows() != n || gram.ncols() != n {
        return Err(Error::Shape(format!("{}×{} Gram for {n} candidates", gram.nrows(), gram.ncols())));
    }
    let order = ranked(omega, ids);
    let (kept, excluded) = order.split_at(m);
    let mut w: Vec<f64> = kept.iter().map(|&i| omega[i]).collect();
    for &l in excluded {
        let sims: Vec<f64> = kept.iter().map(|&i| gram[(i, l)]).collect();
        if sims.iter().any(|s| *s < 0.0) {
            return Err(Error::Input("re-weighting needs non-negative kernel values".into()));
        }
        let total: f64 = sims.iter().sum();
        if total > 0.0 {
            for (wm, s) in w.iter_mut().zip(&sims) {
                *wm += s / total * omega[l];
            }
        } else {
            for wm in w.iter_mut() {
                *wm += omega[l] / m as f64;
            }
        }
    }
    if !(w.iter().sum::<f64>() > 0.0) {
        return Err(Error::DegenerateWeights("all stacking weights are zero".into()));
    }
    Ok(WeightedEnsemble {
        members: kept.iter().map(|&i| ids[i].clone()).collect(),
        weights: w,
    })
}

/// Greedy equal-weight ensemble growth on validation NLL.
pub fn beam_search(
    preds: &[&PredictionMatrix],
    labels: &[u16],
    ids: &[ArchitectureId],
    m: usize,
) -> Result<WeightedEnsemble> {
    if preds.len() != ids.len() {
        return Err(Error::Shape("one prediction matrix per candidate".into()));
    }
    if m == 0 || m > ids.len() {
        return Err(Error::Input(format!("ensemble size {m} for {} candidates", ids.len())));
    }
    let p = label_prob_matrix(preds, labels)?;
    let rows = p.ncols();
    let mut chosen: Vec<usize> = Vec::with_capacity(m);
    let mut sum = vec![0.0; rows];
    let mut used = vec![false; ids.len()];
    for k in 1..=m {
        let mut best: Option<(f64, usize)> = None;
        for c in (0..ids.len()).filter(|&c| !used[c]) {
            let loss = -(0..rows)
                .map(|r| ((sum[r] + p[(c, r)]) / k as f64).max(PROB_FLOOR).ln())
                .sum::<f64>()
                / rows.max(1) as f64;
            let better = match best {
                None => true,
                Some((b, bi)) => loss < b || (loss == b && ids[c] < ids[bi]),
            };
            if better {
                best = Some((loss, c));
            }
        }
        let (_, c) = best.expect("m ≤ candidates");
        used[c] = true;
        chosen.push(c);
        for (r, s) in sum.iter_mut().enumerate() {
            *s += p[(c, r)];
        }
    }
    WeightedEnsemble::equal(chosen.iter().map(|&i| ids[i].clone()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ids(n: usize) -> Vec<ArchitectureId> {
        (0..n).map(|i| ArchitectureId::from(format!("o:{i}").as_str())).collect()
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

    #[test]
    fn single_candidate_stacking() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = random_preds(&mut rng, 10, 3);
        let y: Vec<u16> = (0..10).map(|i| (i % 3) as u16).collect();
        assert_eq!(optimize_stacking(&[&p], &y, &Default::default()).unwrap(), vec![1.0]);
    }

    #[test]
    fn identical_candidates_keep_single_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = random_preds(&mut rng, 20, 4);
        let y: Vec<u16> = (0..20).map(|i| (i % 4) as u16).collect();
        let w = optimize_stacking(&[&p, &p], &y, &Default::default()).unwrap();
        let single = stacking_loss(&[&p], &y, &[1.0]).unwrap();
        let pair = stacking_loss(&[&p, &p], &y, &w).unwrap();
        assert!((single - pair).abs() < 1e-12);
    }

    #[test]
    fn stacking_finds_the_calibrated_member() {
        // good member: 0.9 on the label; adversaries: 0.9 on a wrong class
        let c = 3;
        let y: Vec<u16> = (0..60).map(|i| (i % c) as u16).collect();
        let row = |hot: usize| -> Vec<f64> { (0..c).map(|k| if k == hot { 0.9 } else { 0.05 }).collect() };
        let good = PredictionMatrix::from_rows(&y.iter().map(|&t| row(t as usize)).collect::<Vec<_>>()).unwrap();
        let bad1 = PredictionMatrix::from_rows(&y.iter().map(|&t| row((t as usize + 1) % c)).collect::<Vec<_>>()).unwrap();
        let bad2 = PredictionMatrix::from_rows(&y.iter().map(|&t| row((t as usize + 2) % c)).collect::<Vec<_>>()).unwrap();
        let preds = [&good, &bad1, &bad2];
        let w = optimize_stacking(&preds, &y, &Default::default()).unwrap();
        assert!(w[0] > 0.95, "{w:?}");
        // grid oracle over the simplex
        let mut grid_best = f64::INFINITY;
        let steps = 200;
        for a in 0..=steps {
            for b in 0..=(steps - a) {
                let wa = a as f64 / steps as f64;
                let wb = b as f64 / steps as f64;
                let l = stacking_loss(&preds, &y, &[wa, wb, 1.0 - wa - wb]).unwrap();
                grid_best = grid_best.min(l);
            }
        }
        assert!(stacking_loss(&preds, &y, &w).unwrap() <= grid_best + 1e-6);
    }

    #[test]
    fn ws_cases() {
        let id = ids(3);
        let e = select_ws(&[0.5, 0.3, 0.2], &id, 2).unwrap();
        assert_eq!(e.members, id[..2].to_vec());
        assert!((e.weights[0] - 0.625).abs() < 1e-15 && (e.weights[1] - 0.375).abs() < 1e-15);
        let full = select_ws(&[0.5, 0.3, 0.2], &id, 3).unwrap();
        assert_eq!(full.weights, vec![0.5, 0.3, 0.2]);
        assert!(matches!(select_ws(&[0.0; 3], &id, 2), Err(Error::DegenerateWeights(_))));
        // ties go to the smaller id
        let t = select_ws(&[0.25; 4], &ids(4), 1).unwrap();
        assert_eq!(t.members, vec![ids(4)[0].clone()]);
    }

    #[test]
    fn rs_hand_cases() {
        let id = ids(3);
        let omega = [0.5, 0.3, 0.2];
        let k = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 1.0, 0.0, 1.0, 1.0, 1.0, 1.0, 1.0]);
        let e = select_rs(&omega, &id, 2, &k).unwrap();
        assert_eq!(e.weights, vec![0.6, 0.4]);
        let k = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        let e = select_rs(&omega, &id, 2, &k).unwrap();
        assert_eq!(e.weights, vec![0.7, 0.3]);
        let full = select_rs(&omega, &id, 3, &k).unwrap();
        assert_eq!(full.weights, omega.to_vec());
        // zero similarity column: even split
        let k = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let e = select_rs(&omega, &id, 2, &k).unwrap();
        assert_eq!(e.weights, vec![0.6, 0.4]);
    }

    #[test]
    fn beam_search_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let preds: Vec<_> = (0..6).map(|_| random_preds(&mut rng, 25, 3)).collect();
        let refs: Vec<_> = preds.iter().collect();
        let y: Vec<u16> = (0..25).map(|_| rng.random_range(0..3)).collect();
        let id = ids(6);
        let one = beam_search(&refs, &y, &id, 1).unwrap();
        let singles: Vec<f64> = refs.iter().map(|p| stacking_loss(&[p], &y, &[1.0]).unwrap()).collect();
        let best = (0..6).min_by(|&a, &b| singles[a].total_cmp(&singles[b])).unwrap();
        assert_eq!(one.members, vec![id[best].clone()]);

        let three = beam_search(&refs, &y, &id, 3).unwrap();
        assert_eq!(three.weights, vec![1.0 / 3.0; 3]);
        // step 3 is the best single addition to the first two
        let two: Vec<usize> = three.members[..2].iter().map(|m| id.iter().position(|x| x == m).unwrap()).collect();
        let chosen = id.iter().position(|x| *x == three.members[2]).unwrap();
        let loss_of = |c: usize| {
            let sel = [refs[two[0]], refs[two[1]], refs[c]];
            stacking_loss(&sel, &y, &[1.0 / 3.0; 3]).unwrap()
        };
        for c in (0..6).filter(|c| !two.contains(c)) {
            assert!(loss_of(chosen) <= loss_of(c) + 1e-12);
        }

        let same: Vec<_> = (0..4).map(|_| refs[0]).collect();
        let e = beam_search(&same, &y, &ids(4), 3).unwrap();
        let l = stacking_loss(&[refs[0], refs[0], refs[0]], &y, &e.weights).unwrap();
        assert!((l - singles[0]).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn selections_are_simplex_and_consistent(seed in any::<u64>(), m in 1usize..8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 8;
            let raw: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            let s: f64 = raw.iter().sum();
            let omega: Vec<f64> = raw.iter().map(|v| v / s).collect();
            let a = DMatrix::from_fn(n, 3, |_, _| rng.random::<f64>());
            let k = &a * a.transpose();
            let id = ids(n);
            let ws = select_ws(&omega, &id, m).unwrap();
            let rs = select_rs(&omega, &id, m, &k).unwrap();
            prop_assert_eq!(&ws.members, &rs.members);
            for e in [&ws, &rs] {
                prop_assert!((e.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                prop_assert!(e.weights.iter().all(|w| *w >= 0.0));
                prop_assert!(WeightedEnsemble::new(e.members.clone(), e.weights.clone()).is_ok());
            }
        }

        #[test]
        fn stacking_beats_uniform(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let preds: Vec<_> = (0..4).map(|_| random_preds(&mut rng, 15, 3)).collect();
            let refs: Vec<_> = preds.iter().collect();
            let y: Vec<u16> = (0..15).map(|_| rng.random_range(0..3)).collect();
            let w = optimize_stacking(&refs, &y, &Default::default()).unwrap();
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let opt = stacking_loss(&refs, &y, &w).unwrap();
            let uni = stacking_loss(&refs, &y, &[0.25; 4]).unwrap();
            prop_assert!(opt <= uni + 1e-15);
        }
    }
}
