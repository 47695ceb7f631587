use std::f64::consts::PI;

use super::DspError;

const KAISER_BETA: f64 = 5.0;
/// Filter half-length in units of max(up, down).
const HALF_LEN_FACTOR: usize = 10;

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Rational factors `(up, down)` for `fs_in → fs_out`, after rounding both
/// rates to millihertz.
pub fn rational_factors(fs_in: f64, fs_out: f64) -> Result<(usize, usize), DspError> {
    if !(fs_in > 0.0 && fs_out > 0.0 && fs_in.is_finite() && fs_out.is_finite()) {
        return Err(DspError::Contract(format!("sampling rates must be positive, got {fs_in} → {fs_out}")));
    }
    let a = (fs_in * 1000.0).round() as u64;
    let b = (fs_out * 1000.0).round() as u64;
    if a == 0 || b == 0 {
        return Err(DspError::Contract("sampling rate rounds to zero".into()));
    }
    let g = gcd(a, b);
    Ok(((b / g) as usize, (a / g) as usize))
}

/// Zeroth-order modified Bessel function of the first kind.
fn bessel_i0(x: f64) -> f64 {
    let q = x * x / 4.0;
    let (mut term, mut sum, mut k) = (1.0, 1.0, 1.0);
    while term > sum * 1e-17 {
        term *= q / (k * k);
        sum += term;
        k += 1.0;
    }
    sum
}

/// Kaiser-windowed sinc low-pass with cutoff `1/max(up, down)` of Nyquist,
/// normalised to unit DC gain and scaled by `up`.
fn design(up: usize, down: usize) -> Vec<f64> {
    let max = up.max(down);
    let half = HALF_LEN_FACTOR * max;
    let n = 2 * half + 1;
    let cutoff = 1.0 / max as f64;
    let denom = bessel_i0(KAISER_BETA);
    let mut h: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 - half as f64;
            let arg = PI * cutoff * t;
            let sinc = if t == 0.0 { 1.0 } else { arg.sin() / arg };
            let r = t / half as f64;
            let w = bessel_i0(KAISER_BETA * (1.0 - r * r).max(0.0).sqrt()) / denom;
            cutoff * sinc * w
        })
        .collect();
    let sum: f64 = h.iter().sum();
    h.iter_mut().for_each(|v| *v *= up as f64 / sum);
    h
}

/// Polyphase rational resampling. The output has `round(len·fs_out/fs_in)`
/// samples and is aligned with the input (the filter delay is compensated).
pub fn resample(signal: &[f64], fs_in: f64, fs_out: f64) -> Result<Vec<f64>, DspError> {
    let (up, down) = rational_factors(fs_in, fs_out)?;
    if up == down {
        return Ok(signal.to_vec());
    }
    let h = design(up, down);
    let half = (h.len() - 1) / 2;
    let n_out = (signal.len() as f64 * up as f64 / down as f64).round() as usize;
    let n_in = signal.len() as i64;
    let mut out = Vec::with_capacity(n_out);
    for m in 0..n_out {
        // y[m] = Σ_k x[k]·h[m·down + half − k·up]
        let centre = (m * down + half) as i64;
        let k_lo = ((centre - 2 * half as i64).max(0) + up as i64 - 1) / up as i64;
        let k_hi = (centre / up as i64).min(n_in - 1);
        let mut acc = 0.0;
        let mut k = k_lo;
        while k <= k_hi {
            acc += signal[k as usize] * h[(centre - k * up as i64) as usize];
            k += 1;
        }
        out.push(acc);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, fs: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| (2.0 * PI * freq * i as f64 / fs).sin()).collect()
    }

    fn correlation(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn factors() {
        assert_eq!(rational_factors(128.0, 60.0).unwrap(), (15, 32));
        assert_eq!(rational_factors(100.0, 60.0).unwrap(), (3, 5));
        assert_eq!(rational_factors(256.0, 60.0).unwrap(), (15, 64));
        assert_eq!(rational_factors(99.9999, 60.0).unwrap(), (3, 5));
        assert!(rational_factors(0.0, 60.0).is_err());
    }

    #[test]
    fn same_rate_is_identity() {
        let x = sine(3.0, 60.0, 500);
        assert_eq!(resample(&x, 60.0, 60.0).unwrap(), x);
    }

    #[test]
    fn length_arithmetic() {
        assert_eq!(resample(&vec![0.0; 3000], 100.0, 60.0).unwrap().len(), 1800);
        assert_eq!(resample(&vec![0.0; 3840], 128.0, 60.0).unwrap().len(), 1800);
        assert_eq!(resample(&[0.0; 7], 100.0, 60.0).unwrap().len(), 4);
    }

    #[test]
    fn five_hz_sine_128_to_60() {
        let x = sine(5.0, 128.0, 128 * 30);
        let y = resample(&x, 128.0, 60.0).unwrap();
        let reference = sine(5.0, 60.0, y.len());
        let r = correlation(&y, &reference);
        assert!(r > 0.99, "correlation {r}");
        // amplitude preserved away from the edges
        let peak = y[200..1600].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!((peak - 1.0).abs() < 0.02, "peak {peak}");
    }

    #[test]
    fn upsampling_preserves_sine() {
        let x = sine(4.0, 50.0, 1500);
        let y = resample(&x, 50.0, 60.0).unwrap();
        assert_eq!(y.len(), 1800);
        let reference = sine(4.0, 60.0, y.len());
        assert!(correlation(&y[100..1700], &reference[100..1700]) > 0.999);
    }

    #[test]
    fn bessel_reference_values() {
        assert!((bessel_i0(0.0) - 1.0).abs() < 1e-15);
        assert!((bessel_i0(1.0) - 1.266_065_877_752_008_4).abs() < 1e-14);
        assert!((bessel_i0(5.0) - 27.239_871_823_604_45).abs() < 1e-11);
    }
}
