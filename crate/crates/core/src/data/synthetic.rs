use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{save_record, ChannelEntry, DataError, HypnogramEntry, Modality, Record, RecordManifest};
use crate::dsp::EPOCH_SECONDS;

/// A band of oscillatory activity: a few sinusoids with random frequencies
/// in `[low, high]` Hz, total amplitude `amplitude`. With `bursts` set, the
/// band appears only inside Gaussian-windowed bursts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Band {
    pub low: f64,
    pub high: f64,
    pub amplitude: f64,
    #[serde(default)]
    pub bursts: Option<Bursts>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bursts {
    /// Mean burst count per epoch (Poisson, at least one).
    pub per_epoch: f64,
    /// Seconds.
    pub duration: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageRecipe {
    pub bands: Vec<Band>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub name: String,
    pub records: usize,
    /// Records per subject; consecutive records share a subject id.
    pub records_per_subject: usize,
    pub channels: usize,
    /// One rate per channel, or a single rate for all.
    pub sampling_rates: Vec<f64>,
    /// One modality per channel, or a single one for all.
    pub modalities: Vec<Modality>,
    pub epochs: usize,
    /// Row-stochastic stage transition matrix (W, N1, N2, N3, REM).
    pub transition: [[f64; 5]; 5],
    pub recipes: [StageRecipe; 5],
    /// Standard deviation of white noise added per channel.
    pub noise: f64,
    /// Per-channel gains are drawn uniformly from this range.
    pub gain_range: (f64, f64),
    /// Weight of channel-private activity relative to the shared signal.
    pub private_mix: f64,
    /// Probability that an epoch is left unscored (−1).
    pub unscored: f64,
    pub seed: u64,
}

fn band(low: f64, high: f64, amplitude: f64) -> Band {
    Band {
        low,
        high,
        amplitude,
        bursts: None,
    }
}

pub fn default_transition() -> [[f64; 5]; 5] {
    [
        [0.85, 0.10, 0.03, 0.00, 0.02],
        [0.08, 0.62, 0.25, 0.00, 0.05],
        [0.03, 0.04, 0.83, 0.06, 0.04],
        [0.02, 0.00, 0.10, 0.88, 0.00],
        [0.04, 0.04, 0.04, 0.00, 0.88],
    ]
}

pub fn default_recipes() -> [StageRecipe; 5] {
    [
        // Wake: alpha
        StageRecipe { bands: vec![band(8.0, 12.0, 1.0)] },
        // N1: theta with a weak alpha residue
        StageRecipe { bands: vec![band(4.0, 7.0, 0.8), band(8.0, 12.0, 0.3)] },
        // N2: theta plus sigma spindles
        StageRecipe {
            bands: vec![
                band(4.0, 7.0, 0.8),
                Band {
                    low: 12.0,
                    high: 14.0,
                    amplitude: 1.5,
                    bursts: Some(Bursts { per_epoch: 3.0, duration: 1.0 }),
                },
            ],
        },
        // N3: high-amplitude delta
        StageRecipe { bands: vec![band(0.5, 2.0, 3.0)] },
        // REM: low-amplitude theta
        StageRecipe { bands: vec![band(4.0, 8.0, 0.4)] },
    ]
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            name: "synth".into(),
            records: 10,
            records_per_subject: 1,
            channels: 2,
            sampling_rates: vec![100.0],
            modalities: vec![Modality::Eeg],
            epochs: 120,
            transition: default_transition(),
            recipes: default_recipes(),
            noise: 0.3,
            gain_range: (0.5, 2.0),
            private_mix: 0.3,
            unscored: 0.0,
            seed: 0,
        }
    }
}

const SINES_PER_BAND: usize = 4;

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |field: &str, msg: String| Err(DataError::Invalid(format!("{field}: {msg}")));
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return bad("name", format!("{:?} is not a usable directory name", self.name));
        }
        if self.records == 0 {
            return bad("records", "must be positive".into());
        }
        if self.records_per_subject == 0 {
            return bad("records_per_subject", "must be positive".into());
        }
        if self.channels == 0 {
            return bad("channels", "must be positive".into());
        }
        if self.epochs == 0 {
            return bad("epochs", "must be positive".into());
        }
        if !(self.sampling_rates.len() == 1 || self.sampling_rates.len() == self.channels) {
            return bad("sampling_rates", format!("need 1 or {} entries, got {}", self.channels, self.sampling_rates.len()));
        }
        for &fs in &self.sampling_rates {
            if !(fs > 0.0) || (fs * EPOCH_SECONDS).fract() != 0.0 {
                return bad("sampling_rates", format!("{fs} Hz does not give a whole number of samples per epoch"));
            }
        }
        if !(self.modalities.len() == 1 || self.modalities.len() == self.channels) {
            return bad("modalities", format!("need 1 or {} entries, got {}", self.channels, self.modalities.len()));
        }
        for (i, row) in self.transition.iter().enumerate() {
            let sum: f64 = row.iter().sum();
            if row.iter().any(|&p| !(0.0..=1.0).contains(&p)) || (sum - 1.0).abs() > 1e-9 {
                return bad("transition", format!("row {i} is not a probability distribution (sum {sum})"));
            }
        }
        for (s, r) in self.recipes.iter().enumerate() {
            for b in &r.bands {
                if !(b.low > 0.0 && b.low <= b.high && b.amplitude >= 0.0) {
                    return bad("recipes", format!("stage {s} has an invalid band {}..{} Hz", b.low, b.high));
                }
                let nyquist = self.sampling_rates.iter().cloned().fold(f64::INFINITY, f64::min) / 2.0;
                if b.high >= nyquist {
                    return bad("recipes", format!("stage {s} band reaches {} Hz, above Nyquist {nyquist}", b.high));
                }
            }
        }
        if !(self.noise >= 0.0) {
            return bad("noise", "must be non-negative".into());
        }
        if !(self.gain_range.0 > 0.0 && self.gain_range.0 <= self.gain_range.1) {
            return bad("gain_range", format!("{:?} is not a positive interval", self.gain_range));
        }
        if !(0.0..1.0).contains(&self.unscored) {
            return bad("unscored", "must lie in [0, 1)".into());
        }
        Ok(())
    }

    fn rate(&self, c: usize) -> f64 {
        self.sampling_rates[if self.sampling_rates.len() == 1 { 0 } else { c }]
    }

    fn modality(&self, c: usize) -> Modality {
        self.modalities[if self.modalities.len() == 1 { 0 } else { c }]
    }

    pub fn record_id(&self, i: usize) -> String {
        format!("{}-r{i:03}", self.name)
    }

    pub fn subject_id(&self, i: usize) -> String {
        format!("{}-s{:03}", self.name, i / self.records_per_subject)
    }
}

/// Stationary distribution of a row-stochastic matrix by power iteration.
pub fn stationary_distribution(m: &[[f64; 5]; 5]) -> [f64; 5] {
    let mut p = [0.2; 5];
    for _ in 0..10_000 {
        let mut next = [0.0; 5];
        for (i, row) in m.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                next[j] += p[i] * v;
            }
        }
        let delta: f64 = next.iter().zip(&p).map(|(a, b)| (a - b).abs()).sum();
        p = next;
        if delta < 1e-15 {
            break;
        }
    }
    p
}

fn draw(probs: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Markov-chain hypnogram started from the stationary distribution.
pub fn generate_hypnogram(m: &[[f64; 5]; 5], epochs: usize, rng: &mut impl Rng) -> Vec<i8> {
    let pi = stationary_distribution(m);
    let mut state = draw(&pi, rng);
    let mut out = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        out.push(state as i8);
        state = draw(&m[state], rng);
    }
    out
}

/// One epoch of stage activity at rate `fs`.
fn stage_epoch(recipe: &StageRecipe, fs: f64, rng: &mut impl Rng) -> Vec<f64> {
    let n = (fs * EPOCH_SECONDS).round() as usize;
    let mut x = vec![0.0; n];
    for b in &recipe.bands {
        let amp = b.amplitude / (SINES_PER_BAND as f64 / 2.0).sqrt();
        let envelope: Vec<f64> = match &b.bursts {
            None => vec![1.0; n],
            Some(bursts) => {
                let count = Poisson::new(bursts.per_epoch)
                    .map(|p| p.sample(rng) as usize)
                    .unwrap_or(1)
                    .max(1);
                let sigma = bursts.duration * fs / 4.0;
                let mut env = vec![0.0; n];
                for _ in 0..count {
                    let centre = rng.random_range(0.0..n as f64);
                    for (i, e) in env.iter_mut().enumerate() {
                        let d = (i as f64 - centre) / sigma;
                        *e += (-0.5 * d * d).exp();
                    }
                }
                env
            }
        };
        for _ in 0..SINES_PER_BAND {
            let f = rng.random_range(b.low..=b.high);
            let phase = rng.random_range(0.0..2.0 * PI);
            let w = 2.0 * PI * f / fs;
            for (i, v) in x.iter_mut().enumerate() {
                *v += amp * envelope[i] * (w * i as f64 + phase).sin();
            }
        }
    }
    x
}

/// Builds record `i` of the dataset in memory.
pub fn synthesize_record(spec: &SyntheticSpec, i: usize) -> Record {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(i as u64 + 1);
    let mut labels = generate_hypnogram(&spec.transition, spec.epochs, &mut rng);
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let gains: Vec<f64> = (0..spec.channels)
        .map(|_| rng.random_range(spec.gain_range.0..=spec.gain_range.1))
        .collect();

    let mut signals: Vec<Vec<f32>> = (0..spec.channels)
        .map(|c| Vec::with_capacity((spec.rate(c) * EPOCH_SECONDS) as usize * spec.epochs))
        .collect();
    for &stage in &labels {
        let recipe = &spec.recipes[stage as usize];
        // shared content is drawn once per distinct rate
        let mut shared: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
        for c in 0..spec.channels {
            let fs = spec.rate(c);
            let common = shared
                .entry(fs.to_bits())
                .or_insert_with(|| stage_epoch(recipe, fs, &mut rng))
                .clone();
            let private = stage_epoch(recipe, fs, &mut rng);
            let g = gains[c];
            signals[c].extend(common.iter().zip(&private).map(|(a, b)| {
                let v = g * (a + spec.private_mix * b) + spec.noise * noise.sample(&mut rng);
                v as f32
            }));
        }
    }
    if spec.unscored > 0.0 {
        for l in labels.iter_mut() {
            if rng.random::<f64>() < spec.unscored {
                *l = -1;
            }
        }
    }

    let channels = (0..spec.channels)
        .map(|c| ChannelEntry {
            name: format!("ch{c}"),
            modality: spec.modality(c),
            sampling_rate: spec.rate(c),
            file: format!("ch{c}.f32"),
            samples: signals[c].len(),
        })
        .collect();
    let mut hypnograms = BTreeMap::new();
    hypnograms.insert("generator".to_string(), labels);
    Record {
        manifest: RecordManifest {
            record_id: spec.record_id(i),
            subject_id: spec.subject_id(i),
            channels,
            hypnograms: vec![HypnogramEntry {
                scorer: "generator".into(),
                file: "hypnogram.txt".into(),
            }],
        },
        signals,
        hypnograms,
    }
}

/// Writes the dataset to `root/<name>/<record id>/`, records in parallel.
/// Returns the dataset directory.
pub fn generate_synthetic_dataset(spec: &SyntheticSpec, root: &Path) -> Result<std::path::PathBuf, DataError> {
    spec.validate()?;
    let dir = root.join(&spec.name);
    fs::create_dir_all(&dir).map_err(|e| DataError::io(&dir, e))?;
    (0..spec.records).into_par_iter().try_for_each(|i| {
        let record = synthesize_record(spec, i);
        save_record(&record, &dir.join(record.id()))
    })?;
    let p = dir.join("synthetic_spec.json");
    fs::write(&p, serde_json::to_vec_pretty(spec).expect("spec serialises")).map_err(|e| DataError::io(&p, e))?;
    Ok(dir)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rustfft::num_complex::Complex64;
    use rustfft::FftPlanner;

    #[test]
    fn default_spec_is_valid() {
        SyntheticSpec::default().validate().unwrap();
        let mut s = SyntheticSpec::default();
        s.transition[1][1] = 0.9;
        assert!(s.validate().unwrap_err().to_string().contains("transition"));
    }

    #[test]
    fn stage_histogram_matches_stationary() {
        let m = default_transition();
        let pi = stationary_distribution(&m);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut counts = [0usize; 5];
        let total = 10_000;
        for _ in 0..100 {
            for s in generate_hypnogram(&m, total / 100, &mut rng) {
                counts[s as usize] += 1;
            }
        }
        for k in 0..5 {
            let freq = counts[k] as f64 / total as f64;
            assert!((freq - pi[k]).abs() < 0.03, "stage {k}: {freq} vs {}", pi[k]);
        }
    }

    #[test]
    fn n3_power_peaks_in_delta() {
        let spec = SyntheticSpec::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let fs = 100.0;
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(3000);
        for _ in 0..20 {
            let x = stage_epoch(&spec.recipes[3], fs, &mut rng);
            let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
            fft.process(&mut buf);
            let argmax = (1..1500).max_by(|&a, &b| buf[a].norm().total_cmp(&buf[b].norm())).unwrap();
            let freq = argmax as f64 * fs / 3000.0;
            assert!((0.5..=2.0).contains(&freq), "{freq}");
        }
    }

    #[test]
    fn record_shape() {
        let spec = SyntheticSpec {
            channels: 3,
            sampling_rates: vec![100.0, 128.0, 100.0],
            epochs: 5,
            ..Default::default()
        };
        let r = synthesize_record(&spec, 2);
        r.validate().unwrap();
        assert_eq!(r.signals[1].len(), 5 * 3840);
        assert_eq!(r.reference().len(), 5);
        assert_eq!(r.id(), "synth-r002");
    }
}
