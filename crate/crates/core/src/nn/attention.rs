use rand::Rng;

use super::{Bindings, ParamId, ParamStore};
use crate::tensor::{Real, Tape, TensorError, Var};

/// Additive attention: score(x) = uᵀ·tanh(W·x + b), weights = softmax over items.
#[derive(Clone, Debug)]
pub struct Attention {
    pub weight: ParamId,
    pub bias: ParamId,
    pub context: ParamId,
    pub dim: usize,
    pub context_size: usize,
}

impl Attention {
    pub fn new<F: Real, R: Rng>(store: &mut ParamStore<F>, name: &str, dim: usize, context_size: usize, rng: &mut R) -> Self {
        let weight = store.add_uniform(format!("{name}.weight"), &[context_size, dim], dim, rng);
        let bias = store.add_zeros(format!("{name}.bias"), &[context_size]);
        let context = store.add_uniform(format!("{name}.context"), &[context_size], context_size, rng);
        Attention {
            weight,
            bias,
            context,
            dim,
            context_size,
        }
    }

    pub fn param_count(&self) -> usize {
        self.context_size * self.dim + 2 * self.context_size
    }

    /// Attention weights over the middle axis of `items [batch × n × dim]`,
    /// returned as `[batch × n]`.
    pub fn weights<F: Real>(&self, tape: &mut Tape<F>, params: &Bindings, items: Var) -> Result<Var, TensorError> {
        let shape = tape.shape(items).to_vec();
        if shape.len() != 3 || shape[2] != self.dim {
            return Err(TensorError::Shape {
                op: "attention",
                lhs: shape,
                rhs: vec![self.context_size, self.dim],
            });
        }
        let (batch, n) = (shape[0], shape[1]);
        if n == 0 {
            return Err(TensorError::Contract("attention over zero items".into()));
        }
        let flat = tape.reshape(items, &[batch * n, self.dim])?;
        let h = tape.matmul_t(flat, params.var(self.weight), false, true)?;
        let h = tape.add(h, params.var(self.bias))?;
        let h = tape.tanh(h)?;
        let u = tape.reshape(params.var(self.context), &[self.context_size, 1])?;
        let scores = tape.matmul(h, u)?;
        let scores = tape.reshape(scores, &[batch, n])?;
        tape.softmax(scores, 1)
    }

    /// Convex combination of `values [batch × n × d]` under `weights [batch × n]`.
    pub fn combine<F: Real>(tape: &mut Tape<F>, weights: Var, values: Var) -> Result<Var, TensorError> {
        let ws = tape.shape(weights).to_vec();
        let vs = tape.shape(values).to_vec();
        if ws.len() != 2 || vs.len() != 3 || ws[0] != vs[0] || ws[1] != vs[1] {
            return Err(TensorError::Shape {
                op: "attention_combine",
                lhs: ws,
                rhs: vs,
            });
        }
        let w = tape.reshape(weights, &[ws[0], 1, ws[1]])?;
        let out = tape.bmm(w, values)?;
        tape.reshape(out, &[vs[0], vs[2]])
    }

    /// Pools `items [batch × n × dim]` to `[batch × dim]`; also returns the weights.
    pub fn pool<F: Real>(&self, tape: &mut Tape<F>, params: &Bindings, items: Var) -> Result<(Var, Var), TensorError> {
        let w = self.weights(tape, params, items)?;
        let out = Self::combine(tape, w, items)?;
        Ok((out, w))
    }
}
