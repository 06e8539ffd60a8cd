mod common;

use common::{mlp, normal_matrix, rng, six_gene_dataset, small_config, synth_dataset, tiny_config};
use grnlink_core::autodiff::{Binding, Graph};
use grnlink_core::checkpoint::Checkpoint;
use grnlink_core::data::Split;
use grnlink_core::encoder::AttentionMode;
use grnlink_core::model::{Model, ModelConfig};
use grnlink_core::train::{evaluate, predict_edges, rank_all_pairs, train, TrainConfig};
use grnlink_core::{Error, Tensor};

fn toy_config() -> ModelConfig {
    let mut c = tiny_config(AttentionMode::Performer);
    c.encoder.embed_dim = 8;
    c.encoder.ff_dim = 12;
    c.gat.widths = vec![8, 6];
    c.head.hidden = 8;
    c.head.output = 6;
    c
}

fn cfg(iterations: usize, learning_rate: f64, seed: u64) -> TrainConfig {
    TrainConfig {
        iterations,
        learning_rate,
        seed,
    }
}

#[test]
fn same_seed_gives_identical_runs() {
    let data = synth_dataset(40, 5, 20, 0.1, 3, 5);
    let a = train(&data, &toy_config(), &cfg(6, 0.01, 9)).unwrap();
    let b = train(&data, &toy_config(), &cfg(6, 0.01, 9)).unwrap();
    assert_eq!(a.history_csv(None), b.history_csv(None));
    assert_eq!(a.history.len(), 6);
    for id in a.model.store.ids() {
        assert_eq!(a.model.store.get(id), b.model.store.get(id));
    }
    let c = train(&data, &toy_config(), &cfg(6, 0.01, 10)).unwrap();
    assert_ne!(a.history[0].train_loss, c.history[0].train_loss);
}

#[test]
fn zero_learning_rate_freezes_everything() {
    let data = synth_dataset(40, 5, 20, 0.1, 4, 5);
    let t = train(&data, &toy_config(), &cfg(4, 0.0, 2)).unwrap();
    let fresh = Model::new(&toy_config(), data.n_genes(), data.n_cells(), 2).unwrap();
    for r in &t.history[1..] {
        assert_eq!(r.train_loss.to_bits(), t.history[0].train_loss.to_bits());
        assert_eq!(r.val_auroc.to_bits(), t.history[0].val_auroc.to_bits());
        assert_eq!(r.val_auprc.to_bits(), t.history[0].val_auprc.to_bits());
    }
    for id in fresh.store.ids() {
        assert_eq!(fresh.store.get(id).data(), t.model.store.get(id).data());
    }
}

#[test]
fn training_lowers_loss_on_planted_network() {
    let data = synth_dataset(200, 20, 150, 0.05, 1, 51);
    let t = train(&data, &small_config(), &cfg(12, 0.003, 1)).unwrap();
    let first = t.history[0].train_loss;
    let last = t.history.last().unwrap().train_loss;
    assert!(last < first, "{first} -> {last}");
}

#[test]
fn trained_toy_model_separates_training_pairs() {
    let data = synth_dataset(40, 5, 20, 0.1, 6, 5);
    let t = train(&data, &toy_config(), &cfg(40, 0.01, 1)).unwrap();
    let pairs: Vec<(usize, usize)> = data.splits.train.iter().map(|p| (p.tf, p.target)).collect();
    let s = predict_edges(&t.model, &data, &pairs, true).unwrap();
    let mean = |label: u8| {
        let v: Vec<f64> = data.splits.train.iter().zip(&s).filter(|(p, _)| p.label == label).map(|(_, s)| *s).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    assert!(mean(1) > mean(0), "{} vs {}", mean(1), mean(0));
}

#[test]
fn prediction_contracts() {
    let data = six_gene_dataset(5);
    let model = Model::new(&tiny_config(AttentionMode::Exact), 6, 3, 1).unwrap();
    assert!(predict_edges(&model, &data, &[], true).unwrap().is_empty());
    let all = rank_all_pairs(|p| predict_edges(&model, &data, p, true), data.vocab.tf_flags()).unwrap();
    assert_eq!(all.len(), 2 * 5);
    assert!(all.iter().all(|(_, s)| *s > 0.0 && *s < 1.0));
    assert!(all.windows(2).all(|w| w[0].1 >= w[1].1));
    assert!(matches!(predict_edges(&model, &data, &[(3, 0)], true), Err(Error::Contract(_))));
    assert!(predict_edges(&model, &data, &[(3, 0)], false).is_ok());
}

#[test]
fn evaluation_is_repeatable_and_rejects_leakage() {
    let data = six_gene_dataset(5);
    let model = Model::new(&tiny_config(AttentionMode::Performer), 6, 3, 1).unwrap();
    let a = evaluate(&model, &data, Split::Test, "h").unwrap();
    let b = evaluate(&model, &data, Split::Test, "h").unwrap();
    assert_eq!(a, b);
    assert_eq!((a.positives, a.negatives), (1, 1));
    let mut leaky = data.clone();
    leaky.splits.test.push(leaky.splits.train[0]);
    assert!(evaluate(&model, &leaky, Split::Test, "h").is_err());
}

fn fused_rows(model: &Model, data: &grnlink_core::model::Dataset) -> Tensor {
    let cells = model.encode_cells(data).unwrap();
    let mut g = Graph::new();
    let mut b = Binding::new(&model.store);
    let z = cells.map(|c| g.constant(c.pooled));
    let f = model.fuse(&mut g, &mut b, z, data).unwrap();
    g.value(f).clone()
}

#[test]
fn pair_scores_follow_the_channel_formula() {
    let data = six_gene_dataset(5);
    let mut model = Model::new(&tiny_config(AttentionMode::Exact), 6, 3, 5).unwrap();
    for id in model.store.ids().collect::<Vec<_>>() {
        if model.store.name(id).starts_with("head.target") {
            let t = model.store.get(id);
            let r = normal_matrix(&mut rng(id.index() as u64), t.rows(), t.cols(), 0.5);
            model.store.assign(id, r).unwrap();
        }
    }
    let fused = fused_rows(&model, &data);
    let w = model.config.fused_width();
    assert_eq!(fused.cols(), w);
    let (i, j) = (0, 4);
    let a = mlp(&model.store, "head.tf", fused.row(i));
    let b = mlp(&model.store, "head.target", fused.row(j));
    let z: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
    let want = 1.0 / (1.0 + (-z).exp());
    let got = model.score_pair(fused.row(i), fused.row(j)).unwrap();
    assert!((got - want).abs() < 1e-14);
    let ch = model.channel_outputs(&data).unwrap();
    let batch = model.score_pairs(&ch, &[(i, j), (j, i)]).unwrap();
    assert!((batch[0] - want).abs() < 1e-14);
    assert!((batch[0] - batch[1]).abs() > 1e-9, "direction should matter");

    for name in ["head.tf.1.weight", "head.tf.1.bias"] {
        let id = model.store.find(name).unwrap();
        let shape = model.store.get(id).shape().to_vec();
        model.store.assign(id, Tensor::zeros(&shape)).unwrap();
    }
    assert_eq!(model.score_pair(fused.row(i), fused.row(j)).unwrap(), 0.5);
}

#[test]
fn untrained_channels_start_identical() {
    let model = Model::new(&tiny_config(AttentionMode::Exact), 6, 3, 5).unwrap();
    for suffix in ["0.weight", "0.bias", "1.weight", "1.bias"] {
        let a = model.store.get(model.store.find(&format!("head.tf.{suffix}")).unwrap());
        let b = model.store.get(model.store.find(&format!("head.target.{suffix}")).unwrap());
        assert_eq!(a, b);
    }
}

#[test]
fn ablated_blocks_are_zero() {
    let data = six_gene_dataset(5);
    let mut cfg = tiny_config(AttentionMode::Exact);
    cfg.ablation.no_gnn = true;
    let m = Model::new(&cfg, 6, 3, 1).unwrap();
    let f = fused_rows(&m, &data);
    let d = cfg.encoder.embed_dim;
    assert!((0..6).all(|r| f.row(r)[d..].iter().all(|v| *v == 0.0)));
    assert!(f.data().iter().any(|v| *v != 0.0));
    cfg.ablation.no_encoder = true;
    let m = Model::new(&cfg, 6, 3, 1).unwrap();
    let f = fused_rows(&m, &data);
    assert!(f.data().iter().all(|v| *v == 0.0));
    assert_eq!(f.cols(), cfg.fused_width());
}

#[test]
fn checkpoint_restores_the_model() {
    let data = six_gene_dataset(5);
    let t = train(&data, &tiny_config(AttentionMode::Performer), &cfg(3, 0.01, 2)).unwrap();
    let ch = t.model.channel_outputs(&data).unwrap();
    let ck = Checkpoint::from_model(&t.model, &data.vocab, &ch, &Default::default());
    let bytes = ck.encode().unwrap();
    let back = Checkpoint::decode(&bytes).unwrap();
    let (model, vocab, stored) = back.to_model().unwrap();
    assert_eq!(vocab.symbols(), data.vocab.symbols());
    assert_eq!(vocab.tf_flags(), data.vocab.tf_flags());
    assert_eq!(stored, ch);
    assert_eq!(model.channel_outputs(&data).unwrap(), ch);
    let pairs = [(0, 2), (1, 5)];
    assert_eq!(model.score_pairs(&stored, &pairs).unwrap(), t.model.score_pairs(&ch, &pairs).unwrap());
    assert_eq!(Checkpoint::decode(&bytes).unwrap().encode().unwrap(), bytes);

    let mut missing = back.clone();
    missing.tensors.retain(|(n, _)| n != "head.tf.0.weight");
    assert!(matches!(missing.to_model(), Err(Error::Checkpoint(_))));
    let mut wrong = back;
    wrong.meta.insert("encoder.embed_dim".into(), "6".into());
    assert!(matches!(wrong.to_model(), Err(Error::Checkpoint(_))));
}

#[test]
fn non_finite_loss_is_reported() {
    let data = six_gene_dataset(5);
    let r = train(&data, &tiny_config(AttentionMode::Exact), &cfg(3, 1e300, 1));
    match r {
        Err(Error::NonFiniteLoss { iteration, norms }) => {
            assert!(iteration >= 1);
            assert!(norms.contains("head.tf.0.weight="));
        }
        Ok(t) => panic!("expected failure, history {:?}", t.history),
        Err(e) => panic!("unexpected {e}"),
    }
}
