//! Finite-difference checks of every differentiable piece, from single tape
//! operations up to the whole network at a reduced size, in 64-bit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ModelConfig, ModelError, SleepNet};
use crate::nn::{cross_entropy, Attention, Gru, Linear, ParamStore};
use crate::tensor::{gradient_check, GradCheckReport, Tape, Tensor, TensorError, Var};

pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
const EPS: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct GradCheckEntry {
    pub name: String,
    pub report: GradCheckReport,
}

/// Small enough that every weight can be perturbed one at a time.
pub fn reduced_config() -> ModelConfig {
    ModelConfig {
        t: 3,
        l: 120,
        n_fft: 32,
        n_stride: 16,
        f_red: 4,
        n_heads: 2,
        k1: 5,
        h1: 3,
        p: 5,
        k2: 4,
        h2: 3,
        ..ModelConfig::default()
    }
}

fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// Scalar read-out with a generic gradient: sum(tanh(y ∘ w)).
fn readout(tape: &mut Tape<f64>, y: Var, w: &Tensor<f64>) -> Result<Var, TensorError> {
    let w = tape.constant(w.clone());
    let p = tape.mul(y, w)?;
    let p = tape.tanh(p)?;
    Ok(tape.sum(p))
}

struct Suite {
    rng: ChaCha8Rng,
    entries: Vec<GradCheckEntry>,
}

impl Suite {
    fn check<G>(&mut self, name: &str, x: &Tensor<f64>, f: G) -> Result<(), TensorError>
    where
        G: Fn(&mut Tape<f64>, Var) -> Result<Var, TensorError>,
    {
        let report = gradient_check(f, x, EPS, GRADCHECK_TOLERANCE)?;
        self.entries.push(GradCheckEntry { name: name.into(), report });
        Ok(())
    }

    /// `op` maps the probed input (and fixed partners) to a tensor of
    /// `out_shape`, which is reduced with a random read-out.
    fn op<G>(&mut self, name: &str, shape: &[usize], out_shape: &[usize], lo: f64, op: G) -> Result<(), TensorError>
    where
        G: Fn(&mut Tape<f64>, Var) -> Result<Var, TensorError>,
    {
        let x = uniform(shape, lo, 1.0, &mut self.rng);
        let w = uniform(out_shape, -1.0, 1.0, &mut self.rng);
        self.check(name, &x, |tape, v| {
            let y = op(tape, v)?;
            readout(tape, y, &w)
        })
    }

    fn ops(&mut self) -> Result<(), TensorError> {
        let b = uniform(&[4, 5], -1.0, 1.0, &mut self.rng);
        let row = uniform(&[5], -1.0, 1.0, &mut self.rng);
        let m = uniform(&[5, 3], -1.0, 1.0, &mut self.rng);
        let bm = uniform(&[2, 5, 3], -1.0, 1.0, &mut self.rng);
        let other = uniform(&[4, 2], -1.0, 1.0, &mut self.rng);
        let gh = uniform(&[2, 9], -1.0, 1.0, &mut self.rng);
        let h = uniform(&[2, 3], -1.0, 1.0, &mut self.rng);

        self.op("op/matmul", &[4, 5], &[4, 3], -1.0, |t, x| {
            let m = t.constant(m.clone());
            t.matmul(x, m)
        })?;
        self.op("op/matmul_t", &[3, 4], &[4, 4], -1.0, |t, x| t.matmul_t(x, x, true, false))?;
        self.op("op/bmm", &[2, 4, 5], &[2, 4, 3], -1.0, |t, x| {
            let m = t.constant(bm.clone());
            t.bmm(x, m)
        })?;
        self.op("op/add_broadcast", &[5], &[4, 5], -1.0, |t, x| {
            let b = t.constant(b.clone());
            t.add(b, x)
        })?;
        self.op("op/sub", &[4, 5], &[4, 5], -1.0, |t, x| {
            let r = t.constant(row.clone());
            t.sub(x, r)
        })?;
        self.op("op/mul", &[4, 5], &[4, 5], -1.0, |t, x| t.mul(x, x))?;
        self.op("op/scale", &[4, 5], &[4, 5], -1.0, |t, x| Ok(t.scale(x, -2.5)))?;
        self.op("op/tanh", &[4, 5], &[4, 5], -1.0, |t, x| t.tanh(x))?;
        self.op("op/sigmoid", &[4, 5], &[4, 5], -1.0, |t, x| t.sigmoid(x))?;
        self.op("op/exp", &[4, 5], &[4, 5], -1.0, |t, x| t.exp(x))?;
        self.op("op/log", &[4, 5], &[4, 5], 0.2, |t, x| t.log(x))?;
        self.op("op/softmax_last", &[4, 5], &[4, 5], -1.0, |t, x| t.softmax(x, 1))?;
        self.op("op/softmax_inner", &[2, 4, 3], &[2, 4, 3], -1.0, |t, x| t.softmax(x, 1))?;
        self.op("op/mean_axis", &[2, 4, 3], &[2, 3], -1.0, |t, x| t.mean_axis(x, 1))?;
        self.op("op/reshape", &[4, 6], &[2, 3, 4], -1.0, |t, x| t.reshape(x, &[2, 3, 4]))?;
        self.op("op/permute", &[2, 3, 4], &[4, 2, 3], -1.0, |t, x| t.permute(x, &[2, 0, 1]))?;
        self.op("op/concat", &[4, 3], &[4, 5], -1.0, |t, x| {
            let o = t.constant(other.clone());
            t.concat(&[x, o], 1)
        })?;
        self.op("op/stack", &[4, 3], &[2, 4, 3], -1.0, |t, x| {
            let y = t.tanh(x)?;
            t.stack(&[x, y])
        })?;
        self.op("op/select", &[3, 4, 2], &[4, 2], -1.0, |t, x| t.select(x, 1))?;
        self.op("op/gru_cell", &[2, 9], &[2, 3], -1.0, |t, x| {
            let gh = t.constant(gh.clone());
            let h = t.constant(h.clone());
            t.gru_cell(x, gh, h)
        })?;
        let targets = [Some(1), None, Some(4), Some(0)];
        let probs = uniform(&[4, 5], 0.05, 1.0, &mut self.rng);
        self.check("op/nll", &probs, |t, x| t.nll(x, &targets))?;
        Ok(())
    }

    fn layers(&mut self) -> Result<(), TensorError> {
        let mut store = ParamStore::<f64>::new();
        let lin = Linear::new(&mut store, "lin", 6, 4, &mut self.rng);
        let att = Attention::new(&mut store, "att", 6, 5, &mut self.rng);
        let gru = Gru::new(&mut store, "gru", 6, 3, true, &mut self.rng);
        let w_lin = uniform(&[3, 4], -1.0, 1.0, &mut self.rng);
        let w_att = uniform(&[2, 6], -1.0, 1.0, &mut self.rng);
        let w_gru = uniform(&[4, 2, 6], -1.0, 1.0, &mut self.rng);
        let x_lin = uniform(&[3, 6], -1.0, 1.0, &mut self.rng);
        let x_att = uniform(&[2, 4, 6], -1.0, 1.0, &mut self.rng);
        let x_gru = uniform(&[4, 2, 6], -1.0, 1.0, &mut self.rng);

        self.check("layer/linear", &x_lin, |t, x| {
            let b = store.bind(t, false);
            let y = lin.forward(t, &b, x)?;
            readout(t, y, &w_lin)
        })?;
        self.check("layer/attention", &x_att, |t, x| {
            let b = store.bind(t, false);
            let (y, _) = att.pool(t, &b, x)?;
            readout(t, y, &w_att)
        })?;
        self.check("layer/gru_bidirectional", &x_gru, |t, x| {
            let b = store.bind(t, false);
            let y = gru.forward(t, &b, x)?;
            readout(t, y, &w_gru)
        })?;
        // weights of each layer, one tensor at a time
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let name = format!("layer/param/{}", store.name(id));
            let value = store.get(id).clone();
            self.check(&name, &value, |t, v| {
                let mut b = store.bind(t, false);
                b.replace(id, v);
                let x = t.constant(x_lin.clone());
                let y1 = lin.forward(t, &b, x)?;
                let a = t.constant(x_att.clone());
                let (y2, _) = att.pool(t, &b, a)?;
                let g = t.constant(x_gru.clone());
                let y3 = gru.forward(t, &b, g)?;
                let s1 = readout(t, y1, &w_lin)?;
                let s2 = readout(t, y2, &w_att)?;
                let s3 = readout(t, y3, &w_gru)?;
                let s = t.add(s1, s2)?;
                t.add(s, s3)
            })?;
        }
        let labels = [Some(2), Some(0), None];
        let logits = uniform(&[3, 5], -1.0, 1.0, &mut self.rng);
        self.check("layer/cross_entropy", &logits, |t, x| {
            let p = t.softmax(x, 1)?;
            cross_entropy(t, p, &labels)
        })?;
        Ok(())
    }

    fn network(&mut self, config: &ModelConfig) -> Result<(), ModelError> {
        let (net, mut store) = SleepNet::new::<f64, _>(config, &mut self.rng)?;
        // biases start at zero; move them off it so every path is exercised
        let ids: Vec<_> = store.ids().collect();
        for &id in &ids {
            for v in store.get_mut(id).data_mut() {
                *v += self.rng.random_range(-0.1..0.1);
            }
        }
        let (b, c) = (2, 2);
        let shape = [b, config.t, c, config.l_fft(), config.f_fft()];
        let x = uniform(&shape, -1.5, 1.5, &mut self.rng);
        let mut labels: Vec<Option<usize>> = (0..b * config.t).map(|_| Some(self.rng.random_range(0..5))).collect();
        labels[1] = None;
        let loss = |t: &mut Tape<f64>, probs: Var| -> Result<Var, TensorError> {
            let flat = t.reshape(probs, &[b * config.t, 5])?;
            cross_entropy(t, flat, &labels)
        };
        let report = gradient_check(
            |t, v| {
                let p = store.bind(t, false);
                let probs = net.forward(t, &p, v, false, &mut ChaCha8Rng::seed_from_u64(0))?;
                loss(t, probs)
            },
            &x,
            EPS,
            GRADCHECK_TOLERANCE,
        )?;
        self.entries.push(GradCheckEntry {
            name: "model/input".into(),
            report,
        });
        for &id in &ids {
            let value = store.get(id).clone();
            let report = gradient_check(
                |t, v| {
                    let mut p = store.bind(t, false);
                    p.replace(id, v);
                    let xv = t.constant(x.clone());
                    let probs = net.forward(t, &p, xv, false, &mut ChaCha8Rng::seed_from_u64(0))?;
                    loss(t, probs)
                },
                &value,
                EPS,
                GRADCHECK_TOLERANCE,
            )?;
            self.entries.push(GradCheckEntry {
                name: format!("model/param/{}", store.name(id)),
                report,
            });
        }
        Ok(())
    }
}

fn run<E>(seed: u64, f: impl FnOnce(&mut Suite) -> Result<(), E>) -> Result<Vec<GradCheckEntry>, E> {
    let mut suite = Suite {
        rng: ChaCha8Rng::seed_from_u64(seed),
        entries: Vec::new(),
    };
    f(&mut suite)?;
    Ok(suite.entries)
}

/// Every tape operation on inputs drawn from `seed` (`op/…` entries).
pub fn operation_checks(seed: u64) -> Result<Vec<GradCheckEntry>, TensorError> {
    run(seed, Suite::ops)
}

/// Linear, attention, bidirectional GRU and cross-entropy, with respect to
/// inputs and to every weight (`layer/…` entries).
pub fn layer_checks(seed: u64) -> Result<Vec<GradCheckEntry>, TensorError> {
    run(seed, Suite::layers)
}

/// The whole network at `config`, with respect to its input and to every
/// weight tensor (`model/…` entries).
pub fn network_checks(config: &ModelConfig, seed: u64) -> Result<Vec<GradCheckEntry>, ModelError> {
    config.validate()?;
    run(seed, |s| s.network(config))
}

/// All of the above.
pub fn gradient_suite(config: &ModelConfig, seed: u64) -> Result<Vec<GradCheckEntry>, ModelError> {
    let mut out = operation_checks(seed)?;
    out.extend(layer_checks(seed)?);
    out.extend(network_checks(config, seed)?);
    Ok(out)
}
