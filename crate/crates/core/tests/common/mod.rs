//! Helpers shared by the integration tests and the acceptance suite.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sleepnet::harness::{macro_f1, GeometricAggregator, PROB_FLOOR};
use sleepnet::model::{ModelConfig, SleepNet};
use sleepnet::nn::ParamStore;
use sleepnet::tensor::{Tape, Tensor};

/// Random normalised windows `[B × T × C × L_fft × F_fft]`.
pub fn random_windows(cfg: &ModelConfig, b: usize, t: usize, c: usize, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(&[b, t, c, cfg.l_fft(), cfg.f_fft()], |_| rng.random_range(-2.0..2.0))
}

/// Reorders (or repeats) axis 2 of a 5-d window tensor.
pub fn pick_channels(x: &Tensor<f64>, channels: &[usize]) -> Tensor<f64> {
    let s = x.shape();
    let plane = s[3] * s[4];
    let mut data = Vec::with_capacity(s[0] * s[1] * channels.len() * plane);
    for bt in 0..s[0] * s[1] {
        for &c in channels {
            let start = (bt * s[2] + c) * plane;
            data.extend_from_slice(&x.data()[start..start + plane]);
        }
    }
    Tensor::new(&[s[0], s[1], channels.len(), s[3], s[4]], data).unwrap()
}

/// Inference-mode probabilities in 64-bit.
pub fn forward64(net: &SleepNet, params: &ParamStore<f64>, x: Tensor<f64>) -> Vec<f64> {
    let mut tape = Tape::new();
    let bindings = params.bind(&mut tape, false);
    let input = tape.constant(x);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let probs = net.forward(&mut tape, &bindings, input, false, &mut rng).unwrap();
    tape.value(probs).data().to_vec()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Largest output change under a random channel permutation and under
/// duplicating the whole montage, for one random input with `c` channels.
pub fn montage_deviation(net: &SleepNet, params: &ParamStore<f64>, t: usize, c: usize, rng: &mut ChaCha8Rng) -> (f64, f64) {
    let x = random_windows(&net.config, 1, t, c, rng);
    let base = forward64(net, params, x.clone());
    let mut perm: Vec<usize> = (0..c).collect();
    rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), rng);
    let permuted = forward64(net, params, pick_channels(&x, &perm));
    let doubled: Vec<usize> = (0..c).flat_map(|i| [i, i]).collect();
    let duplicated = forward64(net, params, pick_channels(&x, &doubled));
    (max_abs_diff(&base, &permuted), max_abs_diff(&base, &duplicated))
}

/// Brute-force macro-F1: per class, count by scanning all pairs again.
pub fn oracle_macro_f1(pred: &[usize], reference: &[i8]) -> Option<f64> {
    let mut scores = Vec::new();
    for k in 0..5 {
        let (mut tp, mut fp, mut fneg) = (0.0, 0.0, 0.0);
        for (&p, &r) in pred.iter().zip(reference) {
            if r < 0 {
                continue;
            }
            let (p, r) = (p == k, r as usize == k);
            if p && r {
                tp += 1.0;
            } else if p {
                fp += 1.0;
            } else if r {
                fneg += 1.0;
            }
        }
        if tp + fp + fneg > 0.0 {
            scores.push(2.0 * tp / (2.0 * tp + fp + fneg));
        }
    }
    if scores.is_empty() {
        None
    } else {
        Some(scores.iter().sum::<f64>() / scores.len() as f64)
    }
}

/// Geometric mean of probability rows, floored, renormalised: the oracle
/// works in the linear domain with explicit products.
pub fn oracle_geometric(rows: &[Vec<f64>], floor: f64) -> Vec<f64> {
    let n = rows.len() as f64;
    let mut g: Vec<f64> = (0..5)
        .map(|k| rows.iter().map(|r| r[k].max(floor)).product::<f64>().powf(1.0 / n))
        .collect();
    let s: f64 = g.iter().sum();
    g.iter_mut().for_each(|v| *v /= s);
    g
}

/// A random probability row; about one entry in twenty is tiny, to
/// exercise the floor.
pub fn random_probs(rng: &mut ChaCha8Rng) -> Vec<f64> {
    let raw: Vec<f64> = (0..5).map(|_| if rng.random_bool(0.05) { 1e-15 } else { rng.random::<f64>() }).collect();
    let s: f64 = raw.iter().sum();
    raw.iter().map(|v| v / s).collect()
}

/// Largest deviation between the stride-1 aggregator and the oracle over
/// `trials` random records.
pub fn geometric_max_error(trials: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let n = rng.random_range(1..30);
        let t = rng.random_range(1..10usize).min(n);
        let windows: Vec<Vec<Vec<f64>>> = (0..=n - t).map(|_| (0..t).map(|_| random_probs(&mut rng)).collect()).collect();
        let mut agg = GeometricAggregator::new(n);
        for (s, w) in windows.iter().enumerate() {
            agg.add(s, &w.concat());
        }
        let got = agg.finish().unwrap();
        for (e, row) in got.iter().enumerate() {
            let covering: Vec<Vec<f64>> = windows
                .iter()
                .enumerate()
                .filter(|(s, _)| *s <= e && e < s + t)
                .map(|(s, w)| w[e - s].clone())
                .collect();
            worst = worst.max(max_abs_diff(row, &oracle_geometric(&covering, PROB_FLOOR)));
        }
    }
    worst
}

/// Largest macro-F1 deviation from the oracle over `trials` random label
/// sequences; `None` if the two ever disagree on whether a score exists.
pub fn f1_max_error(trials: usize, seed: u64) -> Option<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let n = rng.random_range(1..200);
        // skewed label sets so that some classes go missing
        let classes = rng.random_range(1..=5);
        let reference: Vec<i8> = (0..n)
            .map(|_| if rng.random_bool(0.1) { -1 } else { rng.random_range(0..classes) as i8 })
            .collect();
        let predicted: Vec<usize> = (0..n).map(|_| rng.random_range(0..5)).collect();
        match (macro_f1(&predicted, &reference), oracle_macro_f1(&predicted, &reference)) {
            (Ok(r), Some(o)) => worst = worst.max((r.macro_f1 - o).abs()),
            (Err(_), None) => {}
            _ => return None,
        }
    }
    Some(worst)
}
