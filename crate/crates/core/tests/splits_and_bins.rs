mod common;

use common::oracles::toy_network;

use std::collections::HashSet;

use grnlink_core::data::{
    bin_expression, make_splits, ExpressionMatrix, GeneVocabulary, SamplingPlan, Split,
};
use grnlink_core::{Error, Tensor};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn splits_follow_the_protocol(
        seed in any::<u64>(),
        n_genes in 12usize..40,
        n_tfs in 1usize..6,
        edge_p in 0.02f64..0.12,
        d_step in 1usize..6,
        hard in prop_oneof![Just(0.0), Just(0.5), Just(1.0)],
    ) {
        let toy = toy_network(seed, n_genes, n_tfs, edge_p);
        prop_assume!(toy.is_some());
        let (vocab, net) = toy.unwrap();
        let d = d_step as f64 / 10.0;
        let plan = SamplingPlan::new(d, hard).unwrap();
        let splits = match make_splits(&net, &vocab, &plan, seed) {
            Ok(s) => s,
            Err(Error::InsufficientNegatives { needed, available, deficit }) => {
                let candidates = n_tfs * (n_genes - 1) - net.len();
                prop_assert_eq!(available, candidates);
                prop_assert_eq!(deficit, needed - available);
                return Ok(());
            }
            Err(e) => return Err(TestCaseError::fail(e.to_string())),
        };
        splits.validate(&vocab).unwrap();

        let mut seen = HashSet::new();
        for s in Split::ALL {
            for p in splits.get(s) {
                prop_assert!(seen.insert((p.tf, p.target)), "pair in two splits");
                prop_assert!(vocab.is_tf(p.tf));
                prop_assert_ne!(p.tf, p.target);
                prop_assert_eq!(p.label == 1, net.contains(p.tf, p.target));
            }
        }
        let total = net.len() as f64;
        let (tp, _) = splits.counts(Split::Train);
        let (vp, _) = splits.counts(Split::Validation);
        let (sp, _) = splits.counts(Split::Test);
        prop_assert_eq!(tp + vp + sp, net.len());
        prop_assert!(((tp + vp) as f64 - total * 2.0 / 3.0).abs() <= 1.0);
        prop_assert!((sp as f64 - total / 3.0).abs() <= 1.0);
        prop_assert!((vp as f64 - 0.1 * (tp + vp) as f64).abs() <= 1.0);
        for s in Split::ALL {
            let (p, n) = splits.counts(s);
            prop_assert!((n as f64 - p as f64 * (1.0 - d) / d).abs() <= 1.0, "{:?}: {} pos {} neg", s, p, n);
        }
    }

    #[test]
    fn binning_is_monotone(
        vals in proptest::collection::vec(prop_oneof![Just(0.0), 0.0f64..1e4], 4..60),
        bins in 2usize..60,
    ) {
        prop_assume!(vals.iter().any(|&v| v > 0.0));
        let t = vals.len();
        let vocab = GeneVocabulary::new(&(0..t).map(|i| format!("G{i}")).collect::<Vec<_>>()).unwrap();
        let x = ExpressionMatrix::new(Tensor::matrix(1, t, vals.clone()).unwrap(), vocab, vec!["c".into()]).unwrap();
        let b = bin_expression(&x, bins).unwrap();
        for i in 0..t {
            prop_assert!(b.get(0, i) < bins);
            prop_assert_eq!(b.get(0, i) == 0, vals[i] == 0.0);
            for j in 0..t {
                if vals[i] <= vals[j] {
                    prop_assert!(b.get(0, i) <= b.get(0, j));
                }
            }
        }
    }
}
