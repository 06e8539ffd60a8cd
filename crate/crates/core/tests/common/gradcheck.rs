use std::sync::Arc;

use grnlink_core::autodiff::{grad_check, Binding, Graph, Initializer, ParamId, ParamStore, Stabilizer, Var};
use grnlink_core::data::NodeType;
use grnlink_core::encoder::{AttentionMode, Encoder, EncoderConfig};
use grnlink_core::gat::{gat_forward, GatConfig, GatParams, MessageGraph};
use grnlink_core::model::{Combiner, Model};
use grnlink_core::nn::{LayerNorm, Linear, Mlp2};
use grnlink_core::{Result, Tensor};

use super::{normal_matrix, rng, six_gene_dataset, tiny_config};

pub const EPS: f64 = 1e-5;
pub const TOL: f64 = 1e-3;

type OpFn = Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>;

/// Registers one random parameter per shape, then checks `sum(f(..) * W)`
/// for a fixed random weighting `W`.
pub fn check_op(seed: u64, shapes: &[(usize, usize)], f: impl Fn(&mut Graph, &[Var]) -> Result<Var>) -> f64 {
    let mut r = rng(seed);
    let mut store = ParamStore::new();
    let ids: Vec<ParamId> = shapes
        .iter()
        .enumerate()
        .map(|(i, &(a, b))| store.register(format!("p{i}"), normal_matrix(&mut r, a, b, 1.0)).unwrap())
        .collect();
    let probe = {
        let mut g = Graph::new();
        let vars: Vec<Var> = ids.iter().map(|&id| g.param(&store, id)).collect();
        let out = f(&mut g, &vars).unwrap();
        g.value(out).shape().to_vec()
    };
    let weights = if probe.is_empty() {
        Tensor::scalar(1.0)
    } else {
        normal_matrix(&mut r, probe[0], probe.iter().skip(1).product(), 1.0)
    };
    grad_check(&mut store, &ids, EPS, |g, s| {
        let vars: Vec<Var> = ids.iter().map(|&id| g.param(s, id)).collect();
        let out = f(g, &vars)?;
        if g.value(out).shape().is_empty() {
            return Ok(out);
        }
        let w = g.constant(Tensor::new(g.value(out).shape().to_vec(), weights.data().to_vec())?);
        let p = g.mul(out, w)?;
        Ok(g.sum_all(p))
    })
    .unwrap()
}

pub fn op_cases() -> Vec<(&'static str, Vec<(usize, usize)>, OpFn)> {
    let idx: Arc<[usize]> = Arc::from(vec![2, 0, 2, 1]);
    let seg: Arc<[usize]> = Arc::from(vec![0, 0, 1, 2, 2, 2]);
    let omega = Arc::new(normal_matrix(&mut rng(99), 3, 5, 1.0));
    let labels: Arc<[f64]> = Arc::from(vec![1.0, 0.0, 1.0, 0.0]);
    vec![
        ("matmul", vec![(3, 4), (4, 2)], Box::new(|g, v| g.matmul(v[0], v[1]))),
        ("matmul_nt", vec![(3, 4), (2, 4)], Box::new(|g, v| g.matmul_nt(v[0], v[1]))),
        ("matmul_tn", vec![(4, 3), (4, 2)], Box::new(|g, v| g.matmul_tn(v[0], v[1]))),
        ("add", vec![(3, 2), (3, 2)], Box::new(|g, v| g.add(v[0], v[1]))),
        ("sub", vec![(3, 2), (3, 2)], Box::new(|g, v| g.sub(v[0], v[1]))),
        ("mul", vec![(3, 2), (3, 2)], Box::new(|g, v| g.mul(v[0], v[1]))),
        ("add_row_bias", vec![(3, 2), (1, 2)], Box::new(|g, v| g.add_row_bias(v[0], v[1]))),
        ("scale", vec![(3, 2)], Box::new(|g, v| Ok(g.scale(v[0], -1.7)))),
        ("gelu", vec![(3, 3)], Box::new(|g, v| Ok(g.gelu(v[0])))),
        ("sigmoid", vec![(3, 3)], Box::new(|g, v| Ok(g.sigmoid(v[0])))),
        ("exp", vec![(3, 3)], Box::new(|g, v| Ok(g.exp(v[0])))),
        ("log", vec![(3, 3)], Box::new(|g, v| {
            let p = g.sigmoid(v[0]);
            g.log(p)
        })),
        ("softmax_rows", vec![(3, 4)], Box::new(|g, v| g.softmax_rows(v[0]))),
        ("layer_norm_rows", vec![(3, 4), (1, 4), (1, 4)], Box::new(|g, v| g.layer_norm_rows(v[0], v[1], v[2], 1e-5))),
        ("concat_cols", vec![(3, 2), (3, 1)], Box::new(|g, v| g.concat_cols(&[v[0], v[1], v[0]]))),
        ("slice_cols", vec![(3, 5)], Box::new(|g, v| g.slice_cols(v[0], 1, 3))),
        ("gather_rows", vec![(3, 2)], Box::new({
            let idx = idx.clone();
            move |g, v| g.gather_rows(v[0], idx.clone())
        })),
        ("scatter_add_rows", vec![(4, 2)], Box::new({
            let idx = idx.clone();
            move |g, v| g.scatter_add_rows(v[0], idx.clone(), 3)
        })),
        ("scale_rows", vec![(3, 2), (3, 1)], Box::new(|g, v| g.scale_rows(v[0], v[1]))),
        ("div_rows", vec![(3, 2), (3, 1)], Box::new(|g, v| {
            let d = g.exp(v[1]);
            g.div_rows(v[0], d)
        })),
        ("row_dot", vec![(3, 4), (3, 4)], Box::new(|g, v| g.row_dot(v[0], v[1]))),
        ("segment_softmax", vec![(6, 1)], Box::new({
            let seg = seg.clone();
            move |g, v| g.segment_softmax(v[0], seg.clone())
        })),
        ("positive_features", vec![(4, 3)], Box::new({
            let omega = omega.clone();
            move |g, v| g.positive_features(v[0], omega.clone(), 0.7, Stabilizer::None)
        })),
        ("sum_all", vec![(3, 2)], Box::new(|g, v| Ok(g.sum_all(v[0])))),
        ("mean_all", vec![(3, 2)], Box::new(|g, v| Ok(g.mean_all(v[0])))),
        ("add_n", vec![(2, 2), (2, 2), (2, 2)], Box::new(|g, v| g.add_n(&[v[0], v[1], v[2]]))),
        ("bce_with_logits", vec![(4, 1)], Box::new({
            let labels = labels.clone();
            move |g, v| g.bce_with_logits(v[0], labels.clone())
        })),
    ]
}

pub fn op_errors() -> Vec<(String, f64)> {
    op_cases()
        .iter()
        .enumerate()
        .map(|(i, (name, shapes, f))| (name.to_string(), check_op(i as u64, shapes, f)))
        .collect()
}

pub fn check_store(store: &mut ParamStore, f: impl FnMut(&mut Graph, &ParamStore) -> Result<Var>) -> f64 {
    let ids: Vec<ParamId> = store.ids().collect();
    grad_check(store, &ids, EPS, f).unwrap()
}

pub fn weighted_sum(g: &mut Graph, out: Var, seed: u64) -> Result<Var> {
    let s = g.value(out).shape().to_vec();
    let w = g.constant(normal_matrix(&mut rng(seed), s[0], s[1], 1.0));
    let p = g.mul(out, w)?;
    Ok(g.sum_all(p))
}

pub fn dense_layer_errors() -> Vec<(String, f64)> {
    let init = Initializer::new(3);
    let x = normal_matrix(&mut rng(1), 4, 3, 1.0);
    let mut out = Vec::new();

    let mut store = ParamStore::new();
    let lin = Linear::register(&mut store, &init, "lin", 3, 2, true).unwrap();
    let mut bias = store.get(lin.bias.unwrap()).clone();
    bias.data_mut().iter_mut().enumerate().for_each(|(i, b)| *b = 0.1 * i as f64 - 0.05);
    store.assign(lin.bias.unwrap(), bias).unwrap();
    out.push((
        "linear".to_string(),
        check_store(&mut store, |g, s| {
            let mut b = Binding::new(s);
            let xv = g.constant(x.clone());
            let y = lin.forward(g, &mut b, xv)?;
            weighted_sum(g, y, 7)
        }),
    ));

    let mut store = ParamStore::new();
    let mlp = Mlp2::register(&mut store, &init, "mlp", 3, 5, 2).unwrap();
    out.push((
        "mlp".to_string(),
        check_store(&mut store, |g, s| {
            let mut b = Binding::new(s);
            let xv = g.constant(x.clone());
            let y = mlp.forward(g, &mut b, xv)?;
            weighted_sum(g, y, 8)
        }),
    ));

    let mut store = ParamStore::new();
    let ln = LayerNorm::register(&mut store, "ln", 3).unwrap();
    let xs = store.register("x", x.clone()).unwrap();
    out.push((
        "layer norm".to_string(),
        check_store(&mut store, |g, s| {
            let mut b = Binding::new(s);
            let xv = b.var(g, xs);
            let y = ln.forward(g, &mut b, xv)?;
            weighted_sum(g, y, 9)
        }),
    ));
    out
}

pub fn encoder_config(mode: AttentionMode, layers: usize) -> EncoderConfig {
    EncoderConfig {
        embed_dim: 4,
        layers,
        heads: 2,
        ff_dim: 6,
        mode,
        features: 8,
        bin_count: 5,
        raw_normalization: false,
        feature_seed: 11,
    }
}

pub fn encoder_errors() -> Vec<(String, f64)> {
    let bins = [0, 3, 1, 4, 2, 1];
    [AttentionMode::Exact, AttentionMode::Performer]
        .into_iter()
        .map(|mode| {
            let mut store = ParamStore::new();
            let init = Initializer::new(5);
            let enc = Encoder::new(encoder_config(mode, 2), 6, &mut store, &init).unwrap();
            let err = check_store(&mut store, |g, s| {
                let mut b = Binding::new(s);
                let st = enc.forward(g, &mut b, &bins)?;
                weighted_sum(g, st.output(), 4)
            });
            (format!("{mode} encoder"), err)
        })
        .collect()
}

pub fn graph_attention_error() -> f64 {
    let types = [NodeType::Tf, NodeType::Tf, NodeType::Gene, NodeType::Gene, NodeType::Gene];
    let mg = MessageGraph::new(&types, &[(0, 2), (0, 3), (1, 3), (1, 4), (0, 1)]).unwrap();
    let cfg = GatConfig {
        widths: vec![4, 3],
        type_dim: 2,
        relation_dim: 2,
        relation_hidden: 3,
    };
    let mut store = ParamStore::new();
    let p = GatParams::register(&mut store, &Initializer::new(2), &cfg, 3).unwrap();
    let x = normal_matrix(&mut rng(6), 5, 3, 1.0);
    check_store(&mut store, |g, s| {
        let mut b = Binding::new(s);
        let xv = g.constant(x.clone());
        let out = gat_forward(g, &mut b, &p, xv, &mg)?;
        weighted_sum(g, out.output(), 12)
    })
}

pub fn end_to_end_errors() -> Vec<(String, f64)> {
    let data = six_gene_dataset(5);
    let mut out = Vec::new();
    for mode in [AttentionMode::Exact, AttentionMode::Performer] {
        for combiner in [Combiner::Dot, Combiner::Mlp] {
            let mut cfg = tiny_config(mode);
            cfg.head.combiner = combiner;
            let model = Model::new(&cfg, 6, 3, 21).unwrap();
            let mut store = model.store.clone();
            let err = check_store(&mut store, |g, s| {
                let mut b = Binding::new(s);
                model.loss_graph(g, &mut b, &data, &data.splits.train)
            });
            out.push((format!("{mode}/{combiner} loss"), err));
        }
    }
    out
}
