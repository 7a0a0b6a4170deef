//! Cross-module properties of the public API.

use proptest::prelude::*;
use sofic_core::model::{count_with, empirical_distribution, enumerate_good_models, Configuration, GoodModelTest};
use sofic_core::process::Process;
use sofic_core::{GroupSpec, SoficMap};

fn config(bits: u64, len: usize, q: usize) -> Configuration {
    Configuration::from_index(bits % (q as u64).pow(len as u32), len, q)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // The membership test visits only occupied patterns on large windows; it
    // must agree with the dense empirical TV.
    #[test]
    fn membership_tv_matches_empirical(seed in 0u64..1000, v in 2usize..10, radius in 0usize..3, bits: u64, a in 0.1f64..0.9) {
        let f2 = GroupSpec::free(2);
        let sigma = SoficMap::random_uniform(&f2, v, seed).unwrap();
        let mu = Process::bernoulli(&f2, vec![a, 1.0 - a]).unwrap();
        let window = f2.ball(radius);
        let test = GoodModelTest::new(&sigma, &mu, &window, 0.5).unwrap();
        let target = mu.marginal_on(window.elements()).unwrap();
        let mut scratch = test.scratch();
        for shift in 0..3 {
            let x = config(bits.rotate_left(shift * 7), v, 2);
            let dense = empirical_distribution(&sigma, &x, &window, 2).unwrap().tv(&target).unwrap();
            prop_assert!((test.tv_with(&x.0, &mut scratch) - dense).abs() < 1e-9);
        }
    }

    #[test]
    fn count_equals_enumeration(seed in 0u64..1000, v in 2usize..9, eps in 0.05f64..0.95) {
        let f2 = GroupSpec::free(2);
        let sigma = SoficMap::random_uniform(&f2, v, seed).unwrap();
        let mu = Process::tree_markov(&f2, vec![vec![0.8, 0.2], vec![0.2, 0.8]], vec![0.5, 0.5]).unwrap();
        let window = f2.ball(1);
        let test = GoodModelTest::new(&sigma, &mu, &window, eps).unwrap();
        let models = enumerate_good_models(&sigma, &mu, &window, eps, 1 << 20).unwrap();
        prop_assert_eq!(count_with(&test, 1 << 20).unwrap(), models.len() as u64);
        prop_assert!(models.iter().all(|x| test.is_good(x)));
    }
}
