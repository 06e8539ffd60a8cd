use super::params::{GradientMap, ParamStore};
use crate::error::{Error, Result};

/// Adam with bias-corrected moments. Moment buffers are laid out in
/// parameter registration order.
#[derive(Clone, Debug)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(learning_rate: f64, store: &ParamStore) -> Result<Self> {
        if !(learning_rate >= 0.0 && learning_rate.is_finite()) {
            return Err(Error::contract(format!(
                "learning rate must be finite and nonnegative, got {learning_rate}"
            )));
        }
        let zeros: Vec<Vec<f64>> = store.iter().map(|(_, _, t)| vec![0.0; t.numel()]).collect();
        Ok(Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        })
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, index: usize) -> &[f64] {
        &self.first[index]
    }

    pub fn second_moment(&self, index: usize) -> &[f64] {
        &self.second[index]
    }

    /// One update of every registered parameter. All gradients are validated
    /// before anything is modified.
    pub fn step(&mut self, store: &mut ParamStore, grads: &GradientMap) -> Result<()> {
        if store.len() != self.first.len() {
            return Err(Error::contract(format!(
                "optimizer tracks {} parameters, store has {}",
                self.first.len(),
                store.len()
            )));
        }
        for (id, name, t) in store.iter() {
            match grads.get(id) {
                None => {
                    return Err(Error::contract(format!("missing gradient for parameter {name:?}")))
                }
                Some(g) if g.shape() != t.shape() => {
                    return Err(Error::shape(
                        "adam",
                        format!("{name}: gradient {:?} vs parameter {:?}", g.shape(), t.shape()),
                    ))
                }
                Some(_) => {}
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let g = grads.get(id).expect("validated above").data();
            let m = &mut self.first[id.index()];
            let v = &mut self.second[id.index()];
            let p = store.get_mut(id).data_mut();
            for j in 0..p.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                p[j] -= self.learning_rate * mhat / (vhat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}
