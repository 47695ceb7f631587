use rand::Rng;

use crate::tensor::{Real, Tape, Tensor, TensorError, Var};

/// Inverted dropout: in training each element is zeroed with probability `p`
/// and survivors are scaled by 1/(1−p); otherwise the input passes through.
pub fn dropout<F: Real, R: Rng + ?Sized>(tape: &mut Tape<F>, x: Var, p: f64, train: bool, rng: &mut R) -> Result<Var, TensorError> {
    if !(0.0..1.0).contains(&p) {
        return Err(TensorError::Contract(format!(
            "dropout probability {p} outside [0, 1)"
        )));
    }
    if !train || p == 0.0 {
        return Ok(x);
    }
    let keep = F::of(1.0 / (1.0 - p));
    let shape = tape.shape(x).to_vec();
    let mask = Tensor::from_fn(&shape, |_| {
        if rng.random::<f64>() < p {
            F::zero()
        } else {
            keep
        }
    });
    let m = tape.constant(mask);
    tape.mul(x, m)
}
