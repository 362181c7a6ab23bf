//! Invariants checked over generated inputs.

use bqnes::benchmark::generate_synthetic;
use bqnes::kernels::{gram, wl_kernel};
use bqnes::quadrature::posterior_measure;
use bqnes::recombination::posterior_recombination;
use bqnes::search::{select_candidates_random, select_candidates_re, ReConfig, SearchBudget};
use bqnes::archspace::CellArchitecture;
use bqnes::*;
use nalgebra::SymmetricEigen;
use proptest::prelude::*;
use std::collections::HashSet;
use std::sync::OnceLock;

fn cell_space() -> SpaceConfig {
    SpaceConfig::cell_with_ops(4, &["none", "skip_connect", "nor_conv_1x1", "nor_conv_3x3", "avg_pool_3x3"])
}

fn cell(id: &ArchitectureId) -> CellArchitecture {
    match cell_space().decode(id).unwrap() {
        Architecture::Cell(c) => c,
        Architecture::Ordinal(_) => unreachable!(),
    }
}

fn small_table() -> &'static BenchmarkTable {
    static TABLE: OnceLock<BenchmarkTable> = OnceLock::new();
    TABLE.get_or_init(|| {
        generate_synthetic(&SyntheticGenConfig {
            space: SpaceConfig::cell_with_ops(3, &["a", "b", "c", "d", "e", "f"]),
            n_val: 20,
            n_test: 20,
            ..Default::default()
        })
        .unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn wl_is_normalized(seed in any::<u64>(), depth in 0usize..4, sv in 1e-3f64..1e3) {
        let ids = cell_space().sample_prior(seed, 2);
        let (a, b) = (cell(&ids[0]), cell(&ids[1]));
        let p = KernelHyperparams { signal_variance: sv, depth, ..Default::default() };
        prop_assert_eq!(wl_kernel(&a, &a, &p), sv);
        let k = wl_kernel(&a, &b, &p);
        prop_assert!(k.abs() <= sv, "{} > {}", k, sv);
        prop_assert_eq!(k, wl_kernel(&b, &a, &p));
    }

    #[test]
    fn gram_is_psd(seed in any::<u64>(), depth in 0usize..4, n in 2usize..40) {
        let space = cell_space();
        let ids = space.sample_prior(seed, n);
        let p = KernelHyperparams { depth, ..Default::default() };
        let kernel = Kernel::new(KernelKind::Wl, p);
        let k = gram(&kernel, &space, &ids, &ids, &FeatureCache::default()).unwrap();
        let min = SymmetricEigen::new(k).eigenvalues.min();
        prop_assert!(min >= -1e-8, "{}", min);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn recombination_preserves_moments(seed in any::<u64>(), n in 12usize..60, m in 1usize..11, spread in 0.1f64..50.0) {
        let table = small_table();
        let mut seen = HashSet::new();
        let ids: Vec<_> = table.space().sample_prior(seed, 4 * n).into_iter().filter(|i| seen.insert(i.clone())).take(n).collect();
        let n = ids.len();
        let ll: Vec<f64> = ids.iter().map(|id| table.peek(id).unwrap().log_evidence_proxy / spread).collect();
        let prior = vec![table.space().prior_mass(); n];
        let measure = posterior_measure(&ids, &ll, &prior).unwrap();
        let kernel = Kernel::new(KernelKind::Wl, KernelHyperparams::default());
        let k = gram(&kernel, table.space(), &ids, &ids, &FeatureCache::default()).unwrap();
        let (ens, phi) = posterior_recombination(&measure, &k, m).unwrap();

        prop_assert!(ens.members.len() <= m);
        prop_assert!(ens.weights.iter().all(|&w| w >= 0.0));
        prop_assert!((ens.weights.iter().sum::<f64>() - 1.0).abs() <= 1e-10);
        let distinct: HashSet<_> = ens.members.iter().collect();
        prop_assert_eq!(distinct.len(), ens.members.len());
        for t in 0..phi.n_functions() {
            let row = phi.phi.row(t);
            let before: f64 = (0..n).map(|i| measure.weights[i] * row[i]).sum();
            let after: f64 = ens
                .members
                .iter()
                .zip(&ens.weights)
                .map(|(a, w)| w * row[ids.iter().position(|x| x == a).unwrap()])
                .sum();
            let scale = row.abs().max().max(f64::MIN_POSITIVE);
            prop_assert!((before - after).abs() <= 1e-8 * scale, "function {}: {} vs {}", t, before, after);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn strategies_are_pure_and_never_repeat(seed in any::<u64>(), n_total in 20usize..120) {
        let table = small_table();
        let budget = SearchBudget { n_init: 10, n_total, pool_size: 128, seed };
        let re = ReConfig { population_size: 10, tournament_size: 3, ..Default::default() };

        let a = select_candidates_re(table, &budget, &re).unwrap();
        let b = select_candidates_re(table, &budget, &re).unwrap();
        prop_assert_eq!(&a.candidates.archs, &b.candidates.archs);
        let r = select_candidates_random(table, &budget).unwrap();
        prop_assert_eq!(&r.candidates.archs, &select_candidates_random(table, &budget).unwrap().candidates.archs);

        for out in [&a, &r] {
            prop_assert_eq!(out.candidates.archs.len(), n_total);
            let distinct: HashSet<_> = out.candidates.archs.iter().collect();
            prop_assert_eq!(distinct.len(), n_total);
        }
    }
}
