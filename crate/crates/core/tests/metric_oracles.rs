mod common;

use common::oracles::{auprc as auprc_oracle, auroc as auroc_oracle, for_each_multiset};

use grnlink_core::metrics::{auprc, auroc};
use proptest::prelude::*;
use rand::Rng;

#[test]
fn exhaustive_grid_matches_oracles() {
    let mut cases = 0u64;
    for_each_multiset(8, &mut |s, l| {
        let pos = l.iter().filter(|&&x| x == 1).count();
        if pos > 0 {
            let a = auprc(s, l).unwrap();
            assert!((a - auprc_oracle(s, l)).abs() < 1e-12, "{s:?} {l:?}");
        } else {
            assert!(auprc(s, l).is_err());
        }
        if pos > 0 && pos < l.len() {
            assert_eq!(auroc(s, l).unwrap(), auroc_oracle(s, l), "{s:?} {l:?}");
            cases += 1;
        } else {
            assert!(auroc(s, l).is_err());
        }
    });
    assert!(cases > 1_000_000);
}

fn scores_and_labels() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
    (2usize..40).prop_flat_map(|n| {
        (
            proptest::collection::vec((0i32..200).prop_map(|k| k as f64 / 100.0 - 1.0), n),
            proptest::collection::vec(0u8..2, n),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn strictly_increasing_transforms_leave_metrics_unchanged((s, l) in scores_and_labels()) {
        let p = l.iter().filter(|&&x| x == 1).count();
        prop_assume!(p > 0 && p < l.len());
        let transforms: [fn(f64) -> f64; 3] = [|x| (3.0 * x).exp(), |x| x * x * x + x, |x| 10.0 * x - 4.0];
        for t in transforms {
            let u: Vec<f64> = s.iter().map(|&x| t(x)).collect();
            prop_assert_eq!(auroc(&s, &l).unwrap(), auroc(&u, &l).unwrap());
            prop_assert_eq!(auprc(&s, &l).unwrap(), auprc(&u, &l).unwrap());
        }
    }

    #[test]
    fn swapping_labels_mirrors_auroc(n in 2usize..40, seed in any::<u64>()) {
        let mut r = common::rng(seed);
        let mut s: Vec<f64> = (0..n).map(|i| i as f64 + 0.25).collect();
        for i in (1..n).rev() {
            s.swap(i, r.gen_range(0..=i));
        }
        let l: Vec<u8> = (0..n).map(|_| r.gen_range(0..2)).collect();
        let p = l.iter().filter(|&&x| x == 1).count();
        prop_assume!(p > 0 && p < n);
        let flipped: Vec<u8> = l.iter().map(|x| 1 - x).collect();
        let total = auroc(&s, &l).unwrap() + auroc(&s, &flipped).unwrap();
        prop_assert!((total - 1.0).abs() < 1e-12);
    }
}

#[test]
fn random_scores_give_chance_auroc() {
    let mut r = common::rng(5);
    let labels: Vec<u8> = (0..200).map(|i| (i % 2) as u8).collect();
    let mean: f64 = (0..50)
        .map(|_| {
            let s: Vec<f64> = (0..200).map(|_| r.gen()).collect();
            auroc(&s, &labels).unwrap()
        })
        .sum::<f64>()
        / 50.0;
    assert!((mean - 0.5).abs() < 0.1, "{mean}");
}
