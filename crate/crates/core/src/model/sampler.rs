use rand::seq::index;
use rand::Rng;

use super::ModelError;

/// P(C_batch = n) = 1 / (n · H_cmax) for n in 1..=cmax.
pub fn channel_count_probabilities(c_max: usize) -> Result<Vec<f64>, ModelError> {
    if c_max < 1 {
        return Err(ModelError::Contract("channel count sampler needs C_max ≥ 1".into()));
    }
    let harmonic: f64 = (1..=c_max).map(|c| 1.0 / c as f64).sum();
    Ok((1..=c_max).map(|n| 1.0 / (n as f64 * harmonic)).collect())
}

/// Draws a per-batch channel count, favouring small montages.
pub fn sample_channel_count<R: Rng + ?Sized>(c_max: usize, rng: &mut R) -> Result<usize, ModelError> {
    let probs = channel_count_probabilities(c_max)?;
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return Ok(i + 1);
        }
    }
    Ok(c_max)
}

/// `count` channel indices out of `available`: without replacement when
/// `count ≤ available`, otherwise with replacement.
pub fn select_channels<R: Rng + ?Sized>(available: usize, count: usize, rng: &mut R) -> Result<Vec<usize>, ModelError> {
    if available == 0 {
        return Err(ModelError::Contract("record has no channels".into()));
    }
    if count <= available {
        Ok(index::sample(rng, available, count).into_vec())
    } else {
        Ok((0..count).map(|_| rng.random_range(0..available)).collect())
    }
}
