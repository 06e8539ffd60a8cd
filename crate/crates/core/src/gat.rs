//! Relational graph attention over the prior network: typed messages,
//! relation embeddings from node types, scaled dot-product attention over each
//! node's in-neighbourhood plus itself, and residual MLP updates.

use std::sync::Arc;

use crate::autodiff::{Binding, Graph, Initializer, ParamId, ParamStore, Var};
use crate::data::{ExpressionMatrix, NodeType, Relation};
use crate::error::{Error, Result};
use crate::nn::{Linear, Mlp2};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct GatConfig {
    /// Output width of each layer; the node features are first projected to
    /// `widths[0]`.
    pub widths: Vec<usize>,
    pub type_dim: usize,
    pub relation_dim: usize,
    pub relation_hidden: usize,
}

impl Default for GatConfig {
    fn default() -> Self {
        GatConfig {
            widths: vec![256, 128],
            type_dim: 16,
            relation_dim: 16,
            relation_hidden: 32,
        }
    }
}

impl GatConfig {
    pub fn layers(&self) -> usize {
        self.widths.len()
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().expect("validated")
    }

    /// `(input, output)` width of layer `l`.
    pub fn layer_widths(&self, l: usize) -> (usize, usize) {
        let w_in = if l == 0 { self.widths[0] } else { self.widths[l - 1] };
        (w_in, self.widths[l])
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(Error::validation("graph layers need at least one positive width"));
        }
        if self.type_dim == 0 || self.relation_dim == 0 || self.relation_hidden == 0 {
            return Err(Error::validation("type and relation embedding widths must be positive"));
        }
        Ok(())
    }
}

/// Every `(relation, source type, target type)` combination, in id order.
pub fn relation_combos() -> Vec<(Relation, NodeType, NodeType)> {
    let mut out = Vec::with_capacity(Relation::COUNT * NodeType::COUNT * NodeType::COUNT);
    for r in [Relation::Regulates, Relation::Reverse, Relation::SelfLoop] {
        for s in [NodeType::Tf, NodeType::Gene] {
            for t in [NodeType::Tf, NodeType::Gene] {
                out.push((r, s, t));
            }
        }
    }
    out
}

fn combo_id(r: Relation, s: NodeType, t: NodeType) -> usize {
    (r.id() * NodeType::COUNT + s.id()) * NodeType::COUNT + t.id()
}

/// Message-passing edges: each structure edge `s -> t` contributes a
/// `Regulates` message to `t` and a `Reverse` message to `s`, and every node
/// has a `SelfLoop`. Edges are ordered by `(target, source, relation)`.
#[derive(Clone, Debug, PartialEq)]
pub struct MessageGraph {
    pub n_nodes: usize,
    pub node_types: Vec<NodeType>,
    pub src: Arc<[usize]>,
    pub dst: Arc<[usize]>,
    pub relation: Vec<Relation>,
    pub combo: Arc<[usize]>,
}

impl MessageGraph {
    pub fn new(node_types: &[NodeType], structure: &[(usize, usize)]) -> Result<Self> {
        let n = node_types.len();
        let mut e: Vec<(usize, usize, Relation)> = Vec::with_capacity(2 * structure.len() + n);
        for &(s, t) in structure {
            if s >= n || t >= n {
                return Err(Error::contract(format!("edge ({s}, {t}) outside {n} nodes")));
            }
            if s == t {
                continue;
            }
            e.push((t, s, Relation::Regulates));
            e.push((s, t, Relation::Reverse));
        }
        for v in 0..n {
            e.push((v, v, Relation::SelfLoop));
        }
        e.sort();
        e.dedup();
        let dst: Vec<usize> = e.iter().map(|x| x.0).collect();
        let src: Vec<usize> = e.iter().map(|x| x.1).collect();
        let relation: Vec<Relation> = e.iter().map(|x| x.2).collect();
        let combo: Vec<usize> = e
            .iter()
            .map(|&(t, s, r)| combo_id(r, node_types[s], node_types[t]))
            .collect();
        Ok(MessageGraph {
            n_nodes: n,
            node_types: node_types.to_vec(),
            src: src.into(),
            dst: dst.into(),
            relation,
            combo: combo.into(),
        })
    }

    pub fn n_edges(&self) -> usize {
        self.src.len()
    }

    /// Same nodes with every structure edge reversed.
    pub fn reversed(&self) -> Result<Self> {
        let structure: Vec<(usize, usize)> = (0..self.n_edges())
            .filter(|&e| self.relation[e] == Relation::Regulates)
            .map(|e| (self.dst[e], self.src[e]))
            .collect();
        MessageGraph::new(&self.node_types, &structure)
    }
}

#[derive(Clone, Debug)]
pub struct GatLayerParams {
    pub msg_node: Linear,
    pub msg_type: Linear,
    pub msg_relation: Linear,
    pub query_node: Linear,
    pub query_type: Linear,
    pub key_node: Linear,
    pub key_type: Linear,
    pub key_relation: Linear,
    pub update: Mlp2,
    pub residual: Option<Linear>,
    pub key_width: usize,
}

#[derive(Clone, Debug)]
pub struct GatParams {
    pub config: GatConfig,
    pub node_types: ParamId,
    pub relations: ParamId,
    pub relation_mlp: Mlp2,
    pub input: Linear,
    pub layers: Vec<GatLayerParams>,
}

impl GatParams {
    pub fn register(store: &mut ParamStore, init: &Initializer, config: &GatConfig, n_features: usize) -> Result<Self> {
        config.validate()?;
        let (du, dr) = (config.type_dim, config.relation_dim);
        let node_types = store.register("gat.node_types", init.normal("gat.node_types", &[NodeType::COUNT, du], 1.0))?;
        let relations = store.register("gat.relations", init.normal("gat.relations", &[Relation::COUNT, dr], 1.0))?;
        let relation_mlp = Mlp2::register(store, init, "gat.relation_mlp", dr + 2 * du, config.relation_hidden, dr)?;
        let input = Linear::register(store, init, "gat.input", n_features, config.widths[0], true)?;
        let mut layers = Vec::with_capacity(config.layers());
        for l in 0..config.layers() {
            let (w_in, w_out) = config.layer_widths(l);
            let p = format!("gat.layer{l}");
            let lin = |store: &mut ParamStore, name: &str, a: usize, b: usize, bias: bool| {
                Linear::register(store, init, &format!("{p}.{name}"), a, b, bias)
            };
            layers.push(GatLayerParams {
                msg_node: lin(store, "message.node", w_in, w_out, false)?,
                msg_type: lin(store, "message.type", du, w_out, false)?,
                msg_relation: lin(store, "message.relation", dr, w_out, true)?,
                query_node: lin(store, "query.node", w_in, w_out, true)?,
                query_type: lin(store, "query.type", du, w_out, false)?,
                key_node: lin(store, "key.node", w_in, w_out, false)?,
                key_type: lin(store, "key.type", du, w_out, false)?,
                key_relation: lin(store, "key.relation", dr, w_out, true)?,
                update: Mlp2::register(store, init, &format!("{p}.update"), w_out, w_out, w_out)?,
                residual: if w_in != w_out {
                    Some(lin(store, "residual", w_in, w_out, false)?)
                } else {
                    None
                },
                key_width: w_out,
            });
        }
        Ok(GatParams {
            config: config.clone(),
            node_types,
            relations,
            relation_mlp,
            input,
            layers,
        })
    }
}

/// `r = f_r([r~, u_s, u_t])` for each requested combination, one row each.
pub fn relation_embed(
    g: &mut Graph,
    bind: &mut Binding<'_>,
    p: &GatParams,
    combos: &[(Relation, NodeType, NodeType)],
) -> Result<Var> {
    let rel = bind.var(g, p.relations);
    let types = bind.var(g, p.node_types);
    let r_ids: Arc<[usize]> = combos.iter().map(|c| c.0.id()).collect();
    let s_ids: Arc<[usize]> = combos.iter().map(|c| c.1.id()).collect();
    let t_ids: Arc<[usize]> = combos.iter().map(|c| c.2.id()).collect();
    let r = g.gather_rows(rel, r_ids)?;
    let us = g.gather_rows(types, s_ids)?;
    let ut = g.gather_rows(types, t_ids)?;
    let x = g.concat_cols(&[r, us, ut])?;
    p.relation_mlp.forward(g, bind, x)
}

/// `m = f_m([v_s, u_s, r_st])` for row-aligned inputs, evaluated as one
/// linear map of the concatenation.
pub fn message(g: &mut Graph, bind: &mut Binding<'_>, layer: &GatLayerParams, v_s: Var, u_s: Var, r_st: Var) -> Result<Var> {
    let a = layer.msg_node.forward(g, bind, v_s)?;
    let b = layer.msg_type.forward(g, bind, u_s)?;
    let c = layer.msg_relation.forward(g, bind, r_st)?;
    g.add_n(&[a, b, c])
}

/// Softmax of per-edge scores over each target's incoming edges.
pub fn neighborhood_attention(g: &mut Graph, scores: Var, mg: &MessageGraph) -> Result<Var> {
    g.segment_softmax(scores, mg.dst.clone())
}

pub struct GatLayerOutput {
    pub states: Var,
    pub attention: Var,
}

pub fn gat_layer(
    g: &mut Graph,
    bind: &mut Binding<'_>,
    p: &GatParams,
    l: usize,
    v: Var,
    relations: Var,
    mg: &MessageGraph,
) -> Result<GatLayerOutput> {
    let layer = &p.layers[l];
    let types = bind.var(g, p.node_types);
    let combos = relation_combos();
    let combo_src: Arc<[usize]> = combos.iter().map(|c| c.1.id()).collect();
    let combo_dst: Arc<[usize]> = combos.iter().map(|c| c.2.id()).collect();
    let node_type_ids: Arc<[usize]> = mg.node_types.iter().map(|t| t.id()).collect();

    // Messages: node part gathered at the source, the rest per combination.
    let m_node = layer.msg_node.forward(g, bind, v)?;
    let m_type = layer.msg_type.forward(g, bind, types)?;
    let m_type = g.gather_rows(m_type, combo_src.clone())?;
    let m_rel = layer.msg_relation.forward(g, bind, relations)?;
    let m_combo = g.add(m_type, m_rel)?;
    let m_e = g.gather_rows(m_node, mg.src.clone())?;
    let m_c = g.gather_rows(m_combo, mg.combo.clone())?;
    let msg = g.add(m_e, m_c)?;

    // q_s = f_q(v_s, u_s), k_t = f_k(v_t, u_t, r_st).
    let q_node = layer.query_node.forward(g, bind, v)?;
    let q_type = layer.query_type.forward(g, bind, types)?;
    let q_type = g.gather_rows(q_type, node_type_ids)?;
    let q = g.add(q_node, q_type)?;
    let q_e = g.gather_rows(q, mg.src.clone())?;
    let k_node = layer.key_node.forward(g, bind, v)?;
    let k_type = layer.key_type.forward(g, bind, types)?;
    let k_type = g.gather_rows(k_type, combo_dst)?;
    let k_rel = layer.key_relation.forward(g, bind, relations)?;
    let k_combo = g.add(k_type, k_rel)?;
    let k_e = g.gather_rows(k_node, mg.dst.clone())?;
    let k_c = g.gather_rows(k_combo, mg.combo.clone())?;
    let k = g.add(k_e, k_c)?;

    let gamma = g.row_dot(q_e, k)?;
    let gamma = g.scale(gamma, 1.0 / (layer.key_width as f64).sqrt());
    let alpha = neighborhood_attention(g, gamma, mg)?;
    let weighted = g.scale_rows(msg, alpha)?;
    let agg = g.scatter_add_rows(weighted, mg.dst.clone(), mg.n_nodes)?;
    let upd = layer.update.forward(g, bind, agg)?;
    let res = match &layer.residual {
        Some(r) => r.forward(g, bind, v)?,
        None => v,
    };
    Ok(GatLayerOutput {
        states: g.add(upd, res)?,
        attention: alpha,
    })
}

pub struct GatOutput {
    /// `v^0` (projected features) then each layer's states.
    pub states: Vec<Var>,
    pub attention: Vec<Var>,
}

impl GatOutput {
    pub fn output(&self) -> Var {
        *self.states.last().expect("input states always present")
    }
}

pub fn gat_forward(g: &mut Graph, bind: &mut Binding<'_>, p: &GatParams, features: Var, mg: &MessageGraph) -> Result<GatOutput> {
    if g.shape(features)[0] != mg.n_nodes {
        return Err(Error::shape(
            "gat_forward",
            format!("{} feature rows for {} nodes", g.shape(features)[0], mg.n_nodes),
        ));
    }
    let relations = relation_embed(g, bind, p, &relation_combos())?;
    let mut v = p.input.forward(g, bind, features)?;
    let mut out = GatOutput {
        states: vec![v],
        attention: Vec::new(),
    };
    for l in 0..p.layers.len() {
        let o = gat_layer(g, bind, p, l, v, relations, mg)?;
        v = o.states;
        out.states.push(v);
        out.attention.push(o.attention);
    }
    Ok(out)
}

/// `T x N` node features: log1p counts per gene, standardised across cells.
/// Constant genes become zero rows.
pub fn node_features(x: &ExpressionMatrix) -> Tensor {
    let (n, t) = (x.n_cells(), x.n_genes());
    let mut out = Tensor::zeros(&[t, n]);
    for gi in 0..t {
        let col: Vec<f64> = (0..n).map(|c| x.get(c, gi).ln_1p()).collect();
        let mean = col.iter().sum::<f64>() / n as f64;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        let sd = var.sqrt();
        let row = out.row_mut(gi);
        if sd > 1e-12 {
            for (r, v) in row.iter_mut().zip(&col) {
                *r = (v - mean) / sd;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn self_loops_are_always_present() {
        let mg = MessageGraph::new(&[NodeType::Tf, NodeType::Gene, NodeType::Gene], &[]).unwrap();
        assert_eq!(mg.n_edges(), 3);
        assert!(mg.relation.iter().all(|&r| r == Relation::SelfLoop));
    }

    #[test]
    fn structure_edges_yield_both_directions() {
        let mg = MessageGraph::new(&[NodeType::Tf, NodeType::Gene], &[(0, 1)]).unwrap();
        let e: Vec<(usize, usize, Relation)> = (0..mg.n_edges()).map(|i| (mg.src[i], mg.dst[i], mg.relation[i])).collect();
        assert_eq!(
            e,
            vec![
                (0, 0, Relation::SelfLoop),
                (1, 0, Relation::Reverse),
                (0, 1, Relation::Regulates),
                (1, 1, Relation::SelfLoop),
            ]
        );
        assert_eq!(mg.combo[2], combo_id(Relation::Regulates, NodeType::Tf, NodeType::Gene));
    }

    #[test]
    fn combos_are_enumerated_in_id_order() {
        for (i, &(r, s, t)) in relation_combos().iter().enumerate() {
            assert_eq!(combo_id(r, s, t), i);
        }
    }
}
