//! Randomized invariants.

use lfdr_core::basis::BasisSpec;
use lfdr_core::density::fit_mixture_density;
use lfdr_core::fdr::{local_fdr, q_values};
use lfdr_core::ingest::{bin_z_values, BinOptions, BinnedCounts, ZSample};
use lfdr_core::null::central_matching;
use lfdr_core::simulate::{generate, SimModel};
use lfdr_core::special::t_to_z;
use proptest::prelude::*;

fn sample(seed: u64) -> Vec<f64> {
    generate(&SimModel::exact_null(), seed).unwrap().values().to_vec()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn binning_conserves_cases(seed in 0u64..1000, k in 20usize..150, lo in -4.0f64..-2.0, hi in 3.0f64..6.0) {
        let z = ZSample::new(sample(seed)).unwrap();
        let h = bin_z_values(&z, &BinOptions { k_bins: k, range: Some((lo, hi)), clip: false }).unwrap();
        prop_assert_eq!(h.counts.len(), k);
        prop_assert_eq!(h.n_total as usize + h.n_excluded, z.len());
        let clipped = bin_z_values(&z, &BinOptions { k_bins: k, range: Some((lo, hi)), clip: true }).unwrap();
        prop_assert_eq!(clipped.n_total as usize, z.len());
    }

    #[test]
    fn fdr_is_invariant_to_case_order(seed in 0u64..1000, shuffle_seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let z = sample(seed);
        let mut perm: Vec<usize> = (0..z.len()).collect();
        perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(shuffle_seed));
        let zp: Vec<f64> = perm.iter().map(|&i| z[i]).collect();
        let opts = BinOptions::default();
        let run = |v: &[f64]| {
            let h = bin_z_values(&ZSample::new(v.to_vec()).unwrap(), &opts).unwrap();
            let f = fit_mixture_density(&h, BasisSpec::default()).unwrap();
            let n = central_matching(&f, 0.25).unwrap();
            local_fdr(&f, &n, v).1
        };
        let (a, b) = (run(&z), run(&zp));
        for (j, &i) in perm.iter().enumerate() {
            prop_assert_eq!(a[i], b[j]);
        }
    }

    #[test]
    fn t_to_z_is_monotone_and_odd(t1 in -30.0f64..30.0, t2 in -30.0f64..30.0, df in 1u32..200) {
        let (z1, z2) = (t_to_z(t1, df).unwrap(), t_to_z(t2, df).unwrap());
        if t1 < t2 {
            prop_assert!(z1 <= z2);
        }
        prop_assert_eq!(t_to_z(-t1, df).unwrap(), -z1);
        // Heavier tails pull z toward zero.
        prop_assert!(z1.abs() <= t1.abs() + 1e-12);
    }

    #[test]
    fn central_matching_shifts_with_the_data(seed in 0u64..1000, steps in -10i32..10) {
        let h = bin_z_values(&ZSample::new(sample(seed)).unwrap(), &BinOptions::default()).unwrap();
        let a = steps as f64 * h.width;
        let shifted = BinnedCounts::from_counts(h.centers[0] + a, h.width, h.counts.clone()).unwrap();
        let (f, fs) = (
            fit_mixture_density(&h, BasisSpec::default()).unwrap(),
            fit_mixture_density(&shifted, BasisSpec::default()).unwrap(),
        );
        let (n, ns) = (central_matching(&f, 0.25).unwrap(), central_matching(&fs, 0.25).unwrap());
        prop_assert!((ns.delta0 - n.delta0 - a).abs() < 1e-7);
        prop_assert!((ns.sigma0 - n.sigma0).abs() < 1e-7);
        prop_assert!((ns.p0 - n.p0).abs() < 1e-7);
    }

    #[test]
    fn q_values_never_exceed_tail_fdr(v in prop::collection::vec((-5.0f64..5.0, 0.0f64..1.0, 0.0f64..1.0), 1..60)) {
        let z: Vec<f64> = v.iter().map(|t| t.0).collect();
        let left: Vec<f64> = v.iter().map(|t| t.1).collect();
        let right: Vec<f64> = v.iter().map(|t| t.2).collect();
        let q = q_values(&z, &left, &right);
        for i in 0..z.len() {
            let own = if z[i] < 0.0 { left[i] } else { right[i] };
            prop_assert!(q[i] <= own + 1e-15);
            for j in 0..z.len() {
                // Further from zero on the same side never gets a smaller q.
                if z[i] >= 0.0 && z[j] >= z[i] {
                    prop_assert!(q[j] <= q[i] + 1e-15);
                }
                if z[i] < 0.0 && z[j] <= z[i] {
                    prop_assert!(q[j] <= q[i] + 1e-15);
                }
            }
        }
    }
}
