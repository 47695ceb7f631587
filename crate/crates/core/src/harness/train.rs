use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::predict::window_accuracy;
use super::{HarnessError, PreparedRecord};
use crate::data::{window_batches, Window, WindowMode};
use crate::model::{sample_channel_count, select_channels, Model, NUM_CLASSES};
use crate::nn::{cross_entropy, Adam};
use crate::tensor::{Real, Tape, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Upper bound on passes over the training set.
    pub max_epochs: usize,
    /// Stop after this many passes without a strictly better validation
    /// accuracy.
    pub patience: usize,
    /// Share of subjects held out for validation.
    pub validation_fraction: f64,
    /// Draw a channel count per batch and a channel subset per window.
    /// `None` lets the setting decide (on for direct transfer).
    pub channel_sampling: Option<bool>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 32,
            max_epochs: 100,
            patience: 5,
            validation_fraction: 0.3,
            channel_sampling: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if !(self.learning_rate > 0.0) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.max_epochs == 0 || self.patience >= self.max_epochs {
            return bad(format!("need 0 < patience < max_epochs, got {} and {}", self.patience, self.max_epochs));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return bad(format!("validation_fraction must lie in (0, 1), got {}", self.validation_fraction));
        }
        Ok(())
    }
}

/// Patience bookkeeping: only a strictly better score resets the counter.
#[derive(Clone, Debug, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best: f64,
    pub best_pass: usize,
    pub pass: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: f64::NEG_INFINITY,
            best_pass: 0,
            pass: 0,
        }
    }

    /// Records the score of the next pass (1-based). Returns whether it is
    /// a new best.
    pub fn observe(&mut self, score: f64) -> bool {
        self.pass += 1;
        if score > self.best {
            self.best = score;
            self.best_pass = self.pass;
            true
        } else {
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.pass - self.best_pass >= self.patience
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PassStats {
    pub pass: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
    pub steps: usize,
    pub seconds: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Weights from the pass with the best validation accuracy.
    pub model: Model,
    pub history: Vec<PassStats>,
    pub best_pass: usize,
    pub best_val_accuracy: f64,
    pub first_batch_loss: f64,
}

struct Item<'a> {
    record: &'a PreparedRecord,
    window: Window,
}

/// One pass worth of batches. Each group (source dataset) keeps its own
/// shuffled window stream; every batch comes from a single group chosen
/// uniformly at random. Only full-length windows are used.
fn plan_pass<'a, R: Rng>(groups: &[Vec<&'a PreparedRecord>], t: usize, batch: usize, rng: &mut R) -> Result<Vec<Vec<Item<'a>>>, HarnessError> {
    let mut streams: Vec<Vec<Item<'a>>> = Vec::with_capacity(groups.len());
    for g in groups {
        let mut items = Vec::new();
        for &r in g {
            if r.epochs() < t || r.scored() == 0 {
                continue;
            }
            for w in window_batches(&r.labels, t, WindowMode::Train, rng)? {
                items.push(Item { record: r, window: w });
            }
        }
        items.shuffle(rng);
        if !items.is_empty() {
            streams.push(items);
        }
    }
    let total: usize = streams.iter().map(Vec::len).sum();
    if total == 0 {
        return Err(HarnessError::Contract(format!("no training record spans a full {t}-epoch window")));
    }
    if streams.len() == 1 {
        let items = streams.pop().expect("one stream");
        let mut out = Vec::new();
        let mut it = items.into_iter().peekable();
        while it.peek().is_some() {
            out.push(it.by_ref().take(batch).collect());
        }
        return Ok(out);
    }
    let n_batches = total.div_ceil(batch);
    let mut cursors = vec![0usize; streams.len()];
    let mut out = Vec::with_capacity(n_batches);
    for _ in 0..n_batches {
        let g = rng.random_range(0..streams.len());
        let mut b = Vec::with_capacity(batch);
        for _ in 0..batch {
            if cursors[g] == streams[g].len() {
                streams[g].shuffle(rng);
                cursors[g] = 0;
            }
            let it = &streams[g][cursors[g]];
            b.push(Item {
                record: it.record,
                window: it.window.clone(),
            });
            cursors[g] += 1;
        }
        out.push(b);
    }
    Ok(out)
}

/// Adam on the masked sequence cross-entropy, one validation pass after
/// each training pass, early stopping on validation accuracy.
///
/// `groups` holds the training records split by source dataset. `on_pass`
/// sees every pass as it finishes.
pub fn train_model(
    init: Model,
    groups: &[Vec<&PreparedRecord>],
    validation: &[&PreparedRecord],
    cfg: &TrainConfig,
    channel_sampling: bool,
    on_pass: &mut dyn FnMut(&PassStats),
) -> Result<TrainOutcome, HarnessError> {
    cfg.validate()?;
    if groups.iter().all(Vec::is_empty) {
        return Err(HarnessError::Contract("empty training set".into()));
    }
    if validation.is_empty() {
        return Err(HarnessError::Contract("empty validation set".into()));
    }
    let t = init.config().t;
    let c_max = groups.iter().flatten().map(|r| r.channels()).max().unwrap_or(1);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = init;
    let mut best = model.params.clone();
    let mut adam = Adam::new(cfg.learning_rate);
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut history = Vec::new();
    let mut first_batch_loss = f64::NAN;

    for _ in 0..cfg.max_epochs {
        let start = Instant::now();
        let batches = plan_pass(groups, t, cfg.batch_size, &mut rng)?;
        let mut loss_sum = 0.0;
        for items in &batches {
            let c_batch = if channel_sampling {
                sample_channel_count(c_max, &mut rng)?
            } else {
                items.iter().map(|i| i.record.channels()).min().unwrap_or(1)
            };
            let mut data = Vec::new();
            let mut targets = Vec::with_capacity(items.len() * t);
            for it in items {
                let chans = select_channels(it.record.channels(), c_batch, &mut rng)?;
                data.extend(it.record.stack.window::<f32>(&chans, it.window.start, t));
                targets.extend(it.window.targets.iter().copied());
            }
            let stack = &items[0].record.stack;
            let x = Tensor::new(&[items.len(), t, c_batch, stack.frames, stack.bins], data)?;

            let mut tape = Tape::new();
            let bindings = model.params.bind(&mut tape, true);
            let xv = tape.constant(x);
            let probs = model.net.forward(&mut tape, &bindings, xv, true, &mut rng)?;
            let probs = tape.reshape(probs, &[items.len() * t, NUM_CLASSES])?;
            let loss = cross_entropy(&mut tape, probs, &targets)?;
            let value = tape.value(loss).item()?.as_f64();
            if !value.is_finite() {
                return Err(HarnessError::NonFinite(format!("training loss became {value} at pass {}", stopper.pass + 1)));
            }
            if first_batch_loss.is_nan() {
                first_batch_loss = value;
            }
            tape.backward(loss)?;
            model.params.zero_grad();
            model.params.absorb_grads(&tape, &bindings)?;
            adam.step(&mut model.params)?;
            loss_sum += value;
        }
        if !model.params.all_finite() {
            return Err(HarnessError::NonFinite(format!("weights became non-finite at pass {}", stopper.pass + 1)));
        }
        let val_accuracy = window_accuracy(&model, validation)?;
        if stopper.observe(val_accuracy) {
            best = model.params.clone();
        }
        let stats = PassStats {
            pass: stopper.pass,
            train_loss: loss_sum / batches.len() as f64,
            val_accuracy,
            steps: batches.len(),
            seconds: start.elapsed().as_secs_f64(),
        };
        on_pass(&stats);
        history.push(stats);
        if stopper.should_stop() {
            break;
        }
    }
    model.params = best;
    Ok(TrainOutcome {
        model,
        history,
        best_pass: stopper.best_pass,
        best_val_accuracy: stopper.best,
        first_batch_loss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn early_stop_arithmetic() {
        let mut s = EarlyStopping::new(5);
        let mut stopped_after = None;
        for acc in [0.5, 0.6, 0.6, 0.6, 0.6, 0.6, 0.6, 0.6] {
            s.observe(acc);
            if s.should_stop() {
                stopped_after = Some(s.pass);
                break;
            }
        }
        assert_eq!(stopped_after, Some(7));
        assert_eq!(s.best_pass, 2);
    }

    #[test]
    fn config_checks() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { patience: 100, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { validation_fraction: 1.0, ..Default::default() }.validate().is_err());
    }
}
