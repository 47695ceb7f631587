use rand::Rng;

use super::{ModelConfig, ModelError};
use crate::nn::{dropout, Attention, Bindings, Gru, Linear, ParamStore};
use crate::tensor::{Real, Tape, TensorError, Var};

/// Layer layout of the classifier. Parameters live in a separate
/// [`ParamStore`]; this struct only records which entries belong where.
///
/// Parameter count at the default configuration is 180,143:
///
/// | block                                   | count  |
/// |-----------------------------------------|--------|
/// | frequency reduction 65→32               |  2,112 |
/// | 4 recombination heads (K1=30, d=32)     |  4,080 |
/// | epoch GRU, 128→64, bidirectional        | 74,496 |
/// | projection 128→50                       |  6,450 |
/// | temporal attention (K2=25, d=50)        |  1,300 |
/// | sequence GRU 1, 50→50, bidirectional    | 30,600 |
/// | sequence GRU 2, 150→50, bidirectional   | 60,600 |
/// | classifier 100→5                        |    505 |
///
/// GRUs keep separate input and recurrent biases. The skip connection feeds
/// the second sequence layer with `[input ‖ output]` of the first; the
/// classifier reads the second layer's output, so Q = 2·H2.
#[derive(Clone, Debug)]
pub struct SleepNet {
    pub config: ModelConfig,
    pub freq: Linear,
    pub heads: Vec<Attention>,
    pub epoch_gru: Gru,
    pub project: Linear,
    pub temporal: Attention,
    pub seq1: Gru,
    pub seq2: Gru,
    pub classifier: Linear,
}

/// Per-block parameter counts, in forward order.
pub type Breakdown = Vec<(&'static str, usize)>;

impl SleepNet {
    pub fn new<F: Real, R: Rng>(config: &ModelConfig, rng: &mut R) -> Result<(SleepNet, ParamStore<F>), ModelError> {
        config.validate()?;
        let c = config;
        let mut store = ParamStore::new();
        let freq = Linear::new(&mut store, "freq", c.f_fft(), c.f_red, rng);
        let heads = (0..c.n_heads)
            .map(|h| Attention::new(&mut store, &format!("head{h}"), c.f_red, c.k1, rng))
            .collect();
        let epoch_gru = Gru::new(&mut store, "epoch_gru", c.n_heads * c.f_red, c.h1, true, rng);
        let project = Linear::new(&mut store, "project", 2 * c.h1, c.p, rng);
        let temporal = Attention::new(&mut store, "temporal", c.p, c.k2, rng);
        let seq1 = Gru::new(&mut store, "seq_gru1", c.p, c.h2, true, rng);
        let seq2 = Gru::new(&mut store, "seq_gru2", c.p + 2 * c.h2, c.h2, true, rng);
        let classifier = Linear::new(&mut store, "classifier", c.q(), c.classes, rng);
        let net = SleepNet {
            config: c.clone(),
            freq,
            heads,
            epoch_gru,
            project,
            temporal,
            seq1,
            seq2,
            classifier,
        };
        debug_assert_eq!(net.count_parameters(), store.count());
        Ok((net, store))
    }

    pub fn breakdown(&self) -> Breakdown {
        vec![
            ("frequency reduction", self.freq.param_count()),
            ("recombination heads", self.heads.iter().map(Attention::param_count).sum()),
            ("epoch GRU", self.epoch_gru.param_count()),
            ("projection", self.project.param_count()),
            ("temporal attention", self.temporal.param_count()),
            ("sequence GRU 1", self.seq1.param_count()),
            ("sequence GRU 2", self.seq2.param_count()),
            ("classifier", self.classifier.param_count()),
        ]
    }

    /// Number of trainable scalars.
    pub fn count_parameters(&self) -> usize {
        self.breakdown().iter().map(|(_, n)| n).sum()
    }

    /// Recombines `x [N × C × L_fft × F_red]` into `[N × L_fft × heads·F_red]`.
    /// Head `h` occupies columns `h·F_red..(h+1)·F_red`; each is a convex
    /// combination of the C channels with one weight per channel, scored
    /// from the channel's time-averaged spectrum.
    pub fn channel_recombine<F: Real>(&self, tape: &mut Tape<F>, params: &Bindings, x: Var) -> Result<Var, TensorError> {
        let shape = tape.shape(x).to_vec();
        let c = &self.config;
        if shape.len() != 4 || shape[3] != c.f_red {
            return Err(TensorError::Shape {
                op: "channel_recombine",
                lhs: shape,
                rhs: vec![c.f_red],
            });
        }
        let (n, ch, lf) = (shape[0], shape[1], shape[2]);
        if ch == 0 {
            return Err(TensorError::Contract("channel_recombine: no channels".into()));
        }
        let per_channel = tape.reshape(x, &[n * ch, lf, c.f_red])?;
        let descriptor = tape.mean_axis(per_channel, 1)?;
        let descriptor = tape.reshape(descriptor, &[n, ch, c.f_red])?;
        let values = tape.reshape(x, &[n, ch, lf * c.f_red])?;
        let mut outs = Vec::with_capacity(self.heads.len());
        for head in &self.heads {
            let w = head.weights(tape, params, descriptor)?;
            let mixed = Attention::combine(tape, w, values)?;
            outs.push(tape.reshape(mixed, &[n, lf, c.f_red])?);
        }
        if outs.len() == 1 {
            Ok(outs[0])
        } else {
            tape.concat(&outs, 2)
        }
    }

    /// Encodes `spec [N × C × L_fft × F_fft]` (normalised) into `[N × P]`.
    pub fn epoch_encode<F: Real, R: Rng>(
        &self,
        tape: &mut Tape<F>,
        params: &Bindings,
        spec: Var,
        train: bool,
        rng: &mut R,
    ) -> Result<Var, TensorError> {
        let c = &self.config;
        let shape = tape.shape(spec).to_vec();
        if shape.len() != 4 || shape[3] != c.f_fft() {
            return Err(TensorError::Shape {
                op: "epoch_encode",
                lhs: shape,
                rhs: vec![c.f_fft()],
            });
        }
        let (n, lf) = (shape[0], shape[2]);
        let reduced = self.freq.forward(tape, params, spec)?;
        let flat = self.channel_recombine(tape, params, reduced)?;
        let flat = dropout(tape, flat, c.p1, train, rng)?;
        let seq = tape.permute(flat, &[1, 0, 2])?;
        let hidden = self.epoch_gru.forward(tape, params, seq)?;
        let hidden = dropout(tape, hidden, c.p1, train, rng)?;
        let hidden = tape.permute(hidden, &[1, 0, 2])?;
        let projected = self.project.forward(tape, params, hidden)?;
        debug_assert_eq!(tape.shape(projected), &[n, lf, c.p]);
        let (features, _) = self.temporal.pool(tape, params, projected)?;
        Ok(features)
    }

    /// Stage probabilities `[B × T × 5]` for normalised spectrogram windows
    /// `x [B × T × C × L_fft × F_fft]`.
    pub fn forward<F: Real, R: Rng>(
        &self,
        tape: &mut Tape<F>,
        params: &Bindings,
        x: Var,
        train: bool,
        rng: &mut R,
    ) -> Result<Var, TensorError> {
        let c = &self.config;
        let shape = tape.shape(x).to_vec();
        if shape.len() != 5 || shape[4] != c.f_fft() {
            return Err(TensorError::Shape {
                op: "forward",
                lhs: shape,
                rhs: vec![c.f_fft()],
            });
        }
        let (b, t) = (shape[0], shape[1]);
        let epochs = tape.reshape(x, &[b * t, shape[2], shape[3], shape[4]])?;
        let features = self.epoch_encode(tape, params, epochs, train, rng)?;
        let features = tape.reshape(features, &[b, t, c.p])?;
        let z = tape.permute(features, &[1, 0, 2])?;

        let s1 = self.seq1.forward(tape, params, z)?;
        let s1 = dropout(tape, s1, c.p2, train, rng)?;
        let skip = tape.concat(&[z, s1], 2)?;
        let s2 = self.seq2.forward(tape, params, skip)?;
        let s2 = dropout(tape, s2, c.p2, train, rng)?;

        let logits = self.classifier.forward(tape, params, s2)?;
        let logits = tape.permute(logits, &[1, 0, 2])?;
        tape.softmax(logits, 2)
    }
}
