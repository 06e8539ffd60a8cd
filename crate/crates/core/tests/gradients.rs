mod common;

use common::gradcheck::{dense_layer_errors, encoder_errors, end_to_end_errors, graph_attention_error, op_errors, TOL};
use common::{six_gene_dataset, tiny_config};
use grnlink_core::autodiff::{Binding, Graph};
use grnlink_core::encoder::AttentionMode;
use grnlink_core::model::{Model, Variant};

fn assert_all(errors: Vec<(String, f64)>) {
    for (name, err) in errors {
        assert!(err < TOL, "{name}: relative error {err:e}");
    }
}

#[test]
fn every_graph_op_passes_grad_check() {
    assert_all(op_errors());
}

#[test]
fn dense_layers_pass_grad_check() {
    assert_all(dense_layer_errors());
}

#[test]
fn encoder_blocks_pass_grad_check() {
    assert_all(encoder_errors());
}

#[test]
fn graph_attention_passes_grad_check() {
    let err = graph_attention_error();
    assert!(err < TOL, "graph attention: {err:e}");
}

#[test]
fn end_to_end_loss_passes_grad_check() {
    assert_all(end_to_end_errors());
}

#[test]
fn two_phase_gradients_match_single_tape() {
    let data = six_gene_dataset(5);
    for mode in [AttentionMode::Exact, AttentionMode::Performer] {
        for v in Variant::ALL {
            let mut cfg = tiny_config(mode);
            cfg.ablation = v.ablation();
            let model = Model::new(&cfg, 6, 3, 4).unwrap();
            let split = model.loss_and_grads(&data, &data.splits.train, &data.splits.validation).unwrap();
            let mut g = Graph::new();
            let mut b = Binding::new(&model.store);
            let loss = model.loss_graph(&mut g, &mut b, &data, &data.splits.train).unwrap();
            assert!((g.value(loss).item() - split.loss).abs() < 1e-12, "{mode}/{v}");
            let mut whole = g.backward(loss).unwrap();
            whole.fill_missing(&model.store);
            for id in model.store.ids() {
                let a = split.grads.get(id).unwrap();
                let b = whole.get(id).unwrap();
                let scale = b.data().iter().fold(1.0_f64, |m, x| m.max(x.abs()));
                assert!(a.max_abs_diff(b) < 1e-10 * scale, "{mode}/{v} {}", model.store.name(id));
            }
        }
    }
}
