use crate::tensor::{Real, Tape, TensorError, Var};

/// Sequence cross-entropy over `probs [rows × classes]`: the mean negative
/// log-probability of the reference class over rows whose label is `Some`.
/// Masked rows neither contribute nor count.
pub fn cross_entropy<F: Real>(tape: &mut Tape<F>, probs: Var, labels: &[Option<usize>]) -> Result<Var, TensorError> {
    tape.nll(probs, labels)
}

/// Hypnogram codes (−1 for unscored) to optional class indices.
pub fn mask_labels(codes: &[i8]) -> Vec<Option<usize>> {
    codes
        .iter()
        .map(|&c| if c >= 0 { Some(c as usize) } else { None })
        .collect()
}
