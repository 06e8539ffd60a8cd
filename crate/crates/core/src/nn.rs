//! Small parameterised layers shared by the encoder, graph network and head.

use crate::autodiff::{Binding, Graph, Initializer, ParamId, ParamStore, Var};
use crate::error::Result;
use crate::tensor::Tensor;

/// `x W (+ b)` with `W: fan_in x fan_out` and an optional `1 x fan_out` bias.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn register(
        store: &mut ParamStore,
        init: &Initializer,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        with_bias: bool,
    ) -> Result<Self> {
        Self::register_with_stream(store, init, name, name, fan_in, fan_out, with_bias)
    }

    /// Like [`Linear::register`], but initial values are drawn from the
    /// stream of `stream` rather than `name`.
    pub fn register_with_stream(
        store: &mut ParamStore,
        init: &Initializer,
        name: &str,
        stream: &str,
        fan_in: usize,
        fan_out: usize,
        with_bias: bool,
    ) -> Result<Self> {
        let weight = store.register(format!("{name}.weight"), init.fan_in_uniform(&format!("{stream}.weight"), fan_in, fan_out))?;
        let bias = if with_bias {
            Some(store.register(format!("{name}.bias"), Tensor::zeros(&[1, fan_out]))?)
        } else {
            None
        };
        Ok(Linear {
            weight,
            bias,
            fan_in,
            fan_out,
        })
    }

    pub fn forward(&self, g: &mut Graph, bind: &mut Binding<'_>, x: Var) -> Result<Var> {
        let w = bind.var(g, self.weight);
        let y = g.matmul(x, w)?;
        match self.bias {
            Some(b) => {
                let b = bind.var(g, b);
                g.add_row_bias(y, b)
            }
            None => Ok(y),
        }
    }
}

/// Two linear layers with GELU between them.
#[derive(Clone, Debug)]
pub struct Mlp2 {
    pub first: Linear,
    pub second: Linear,
}

impl Mlp2 {
    pub fn register(
        store: &mut ParamStore,
        init: &Initializer,
        name: &str,
        input: usize,
        hidden: usize,
        output: usize,
    ) -> Result<Self> {
        Self::register_with_stream(store, init, name, name, input, hidden, output)
    }

    pub fn register_with_stream(
        store: &mut ParamStore,
        init: &Initializer,
        name: &str,
        stream: &str,
        input: usize,
        hidden: usize,
        output: usize,
    ) -> Result<Self> {
        Ok(Mlp2 {
            first: Linear::register_with_stream(store, init, &format!("{name}.0"), &format!("{stream}.0"), input, hidden, true)?,
            second: Linear::register_with_stream(store, init, &format!("{name}.1"), &format!("{stream}.1"), hidden, output, true)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, bind: &mut Binding<'_>, x: Var) -> Result<Var> {
        let h = self.first.forward(g, bind, x)?;
        let h = g.gelu(h);
        self.second.forward(g, bind, h)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub eps: f64,
}

impl LayerNorm {
    pub const EPS: f64 = 1e-5;

    pub fn register(store: &mut ParamStore, name: &str, width: usize) -> Result<Self> {
        Ok(LayerNorm {
            gamma: store.register(format!("{name}.gamma"), Tensor::full(&[1, width], 1.0))?,
            beta: store.register(format!("{name}.beta"), Tensor::zeros(&[1, width]))?,
            eps: Self::EPS,
        })
    }

    pub fn forward(&self, g: &mut Graph, bind: &mut Binding<'_>, x: Var) -> Result<Var> {
        let gamma = bind.var(g, self.gamma);
        let beta = bind.var(g, self.beta);
        g.layer_norm_rows(x, gamma, beta, self.eps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_matches_hand_product() {
        let mut store = ParamStore::new();
        let init = Initializer::new(0);
        let lin = Linear::register(&mut store, &init, "l", 2, 1, true).unwrap();
        store.assign(lin.weight, Tensor::matrix(2, 1, vec![2.0, -1.0]).unwrap()).unwrap();
        store.assign(lin.bias.unwrap(), Tensor::matrix(1, 1, vec![0.5]).unwrap()).unwrap();
        let mut g = Graph::new();
        let mut bind = Binding::new(&store);
        let x = g.constant(Tensor::matrix(2, 2, vec![1.0, 1.0, 3.0, 4.0]).unwrap());
        let y = lin.forward(&mut g, &mut bind, x).unwrap();
        assert_eq!(g.value(y).data(), &[1.5, 2.5]);
    }
}
