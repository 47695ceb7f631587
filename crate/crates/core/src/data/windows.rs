use rand::Rng;

use super::DataError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WindowMode {
    Train,
    Inference,
}

/// A run of consecutive epochs `[start, start + len)` with its loss targets
/// (`None` for unscored epochs).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Window {
    pub start: usize,
    pub len: usize,
    pub targets: Vec<Option<usize>>,
}

fn target(code: i8) -> Option<usize> {
    (code >= 0).then_some(code as usize)
}

/// Windows of `t` epochs over a hypnogram.
///
/// Inference: every window at stride 1. Train: stride-`t` tiling with a
/// random phase in `0..t`; windows with no scored epoch are dropped.
/// A record shorter than `t` yields a single window covering the whole
/// record (the model accepts shorter contexts, so nothing is padded).
pub fn window_batches<R: Rng + ?Sized>(labels: &[i8], t: usize, mode: WindowMode, rng: &mut R) -> Result<Vec<Window>, DataError> {
    if t == 0 {
        return Err(DataError::Invalid("window length must be positive".into()));
    }
    if !labels.iter().any(|&c| c >= 0) {
        return Err(DataError::Invalid("record has no scored epoch".into()));
    }
    let n = labels.len();
    let make = |start: usize, len: usize| Window {
        start,
        len,
        targets: labels[start..start + len].iter().map(|&c| target(c)).collect(),
    };
    if n <= t {
        return Ok(vec![make(0, n)]);
    }
    let windows = match mode {
        WindowMode::Inference => (0..=n - t).map(|s| make(s, t)).collect(),
        WindowMode::Train => {
            let phase = rng.random_range(0..t);
            (phase..=n - t)
                .step_by(t)
                .map(|s| make(s, t))
                .filter(|w| w.targets.iter().any(Option::is_some))
                .collect()
        }
    };
    Ok(windows)
}

/// How many stride-1 windows of length `t` contain epoch `e` of `n`.
pub fn coverage(e: usize, n: usize, t: usize) -> usize {
    if n <= t {
        return 1;
    }
    (e + 1).min(n - e).min(t).min(n - t + 1)
}
