mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{forward64, montage_deviation, random_windows};
use sleepnet::dsp::PreprocessConfig;
use sleepnet::model::{
    channel_count_probabilities, network_checks, reduced_config, sample_channel_count, Model, ModelConfig, SleepNet,
    NUM_CLASSES,
};
use sleepnet::nn::ParamStore;
use sleepnet::tensor::Tensor;

fn small() -> (SleepNet, ParamStore<f64>) {
    SleepNet::new::<f64, _>(&reduced_config(), &mut ChaCha8Rng::seed_from_u64(3)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn outputs_ignore_channel_order_and_whole_montage_duplication(c in 1usize..=8, t in 1usize..5, seed in any::<u64>()) {
        let (net, params) = small();
        let (perm, dup) = montage_deviation(&net, &params, t, c, &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert!(perm <= 1e-6, "permutation moved outputs by {perm:e}");
        prop_assert!(dup <= 1e-6, "duplication moved outputs by {dup:e}");
    }

    #[test]
    fn outputs_are_distributions(c in 1usize..=4, t in 1usize..5, b in 1usize..3, seed in any::<u64>()) {
        let (net, params) = small();
        let x = random_windows(&net.config, b, t, c, &mut ChaCha8Rng::seed_from_u64(seed));
        let probs = forward64(&net, &params, x);
        prop_assert_eq!(probs.len(), b * t * NUM_CLASSES);
        for row in probs.chunks(NUM_CLASSES) {
            prop_assert!(row.iter().all(|p| (0.0..=1.0).contains(p)));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}

#[test]
fn default_model_is_montage_invariant() {
    let (net, params) = SleepNet::new::<f64, _>(&ModelConfig::default(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for c in [1, 3, 8] {
        let (perm, dup) = montage_deviation(&net, &params, 2, c, &mut rng);
        assert!(perm <= 1e-6 && dup <= 1e-6, "C={c}: {perm:e} {dup:e}");
    }
}

#[test]
fn same_seed_same_weights_and_outputs() {
    let (cfg, pre) = (ModelConfig::default(), PreprocessConfig::default());
    let a = Model::new(&cfg, &pre, 11).unwrap();
    let b = Model::new(&cfg, &pre, 11).unwrap();
    let c = Model::new(&cfg, &pre, 12).unwrap();
    let x = random_windows(&cfg, 1, 3, 2, &mut ChaCha8Rng::seed_from_u64(5));
    let x32 = Tensor::from_fn(x.shape(), |i| x.data()[i] as f32);
    let (pa, pb, pc) = (
        a.predict(x32.clone()).unwrap(),
        b.predict(x32.clone()).unwrap(),
        c.predict(x32).unwrap(),
    );
    assert_eq!(pa, pb);
    assert_ne!(pa, pc);
}

#[test]
fn reduced_network_passes_gradient_checks() {
    for e in network_checks(&reduced_config(), 9).unwrap() {
        assert!(e.report.passed, "{}: {:.3e} at {}", e.name, e.report.max_rel_error, e.report.worst_index);
    }
}

#[test]
fn sampler_frequencies_match_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for c_max in [2, 4, 8] {
        let expected = channel_count_probabilities(c_max).unwrap();
        let draws = 100_000;
        let mut counts = vec![0usize; c_max];
        for _ in 0..draws {
            counts[sample_channel_count(c_max, &mut rng).unwrap() - 1] += 1;
        }
        for (n, (&k, p)) in counts.iter().zip(&expected).enumerate() {
            let freq = k as f64 / draws as f64;
            assert!((freq - p).abs() < 0.005, "C_max={c_max} n={}: {freq} vs {p}", n + 1);
        }
    }
}

#[test]
fn harmonic_probabilities_sum_to_one() {
    for c_max in 1..=16 {
        let p = channel_count_probabilities(c_max).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.windows(2).all(|w| w[0] > w[1]));
    }
}
