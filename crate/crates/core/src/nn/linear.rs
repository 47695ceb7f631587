use rand::Rng;

use super::{Bindings, ParamId, ParamStore};
use crate::tensor::{Real, Tape, TensorError, Var};

/// Affine map `x·Wᵀ + b` along the last dimension.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_features: usize,
    pub out_features: usize,
}

impl Linear {
    pub fn new<F: Real, R: Rng>(store: &mut ParamStore<F>, name: &str, in_features: usize, out_features: usize, rng: &mut R) -> Self {
        let weight = store.add_uniform(format!("{name}.weight"), &[out_features, in_features], in_features, rng);
        let bias = store.add_zeros(format!("{name}.bias"), &[out_features]);
        Linear {
            weight,
            bias,
            in_features,
            out_features,
        }
    }

    pub fn param_count(&self) -> usize {
        self.out_features * self.in_features + self.out_features
    }

    pub fn forward<F: Real>(&self, tape: &mut Tape<F>, params: &Bindings, x: Var) -> Result<Var, TensorError> {
        let shape = tape.shape(x).to_vec();
        if shape.last() != Some(&self.in_features) {
            return Err(TensorError::Shape {
                op: "linear",
                lhs: shape,
                rhs: vec![self.out_features, self.in_features],
            });
        }
        let rows = shape[..shape.len() - 1].iter().product::<usize>();
        let flat = tape.reshape(x, &[rows, self.in_features])?;
        let y = tape.matmul_t(flat, params.var(self.weight), false, true)?;
        let y = tape.add(y, params.var(self.bias))?;
        let mut out_shape = shape;
        *out_shape.last_mut().unwrap() = self.out_features;
        tape.reshape(y, &out_shape)
    }
}
