/// IQR below which a channel is treated as flat.
pub const FLAT_IQR: f64 = 1e-12;

/// Quantile with linear interpolation between order statistics
/// (position `q·(n−1)` in the sorted sample).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Zero-median, unit-IQR scaling followed by clipping at `±clip`.
/// Flat channels become all zeros.
pub fn robust_scale(channel: &[f64], clip: f64) -> Vec<f64> {
    if channel.is_empty() {
        return Vec::new();
    }
    let mut sorted = channel.to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = quantile_sorted(&sorted, 0.5);
    let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
    if !(iqr >= FLAT_IQR) {
        return vec![0.0; channel.len()];
    }
    channel
        .iter()
        .map(|v| ((v - median) / iqr).clamp(-clip, clip))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn median_iqr(x: &[f64]) -> (f64, f64) {
        let mut s = x.to_vec();
        s.sort_by(f64::total_cmp);
        (quantile_sorted(&s, 0.5), quantile_sorted(&s, 0.75) - quantile_sorted(&s, 0.25))
    }

    #[test]
    fn quantiles_match_linear_rule() {
        let s = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&s, 0.5), 2.5);
        assert_eq!(quantile_sorted(&s, 0.25), 1.75);
        assert_eq!(quantile_sorted(&s, 0.75), 3.25);
    }

    #[test]
    fn median_five_iqr_two() {
        // sorted: 3,4,5,6,7 → median 5, q25 4, q75 6
        let x = [7.0, 3.0, 5.0, 6.0, 4.0];
        assert_eq!(median_iqr(&x), (5.0, 2.0));
        let y = robust_scale(&x, 20.0);
        assert_eq!(median_iqr(&y), (0.0, 1.0));
    }

    #[test]
    fn constant_channel_is_zeroed() {
        assert_eq!(robust_scale(&[3.3; 50], 20.0), vec![0.0; 50]);
    }

    #[test]
    fn outlier_hits_clip_bound() {
        let mut x: Vec<f64> = (0..101).map(|i| i as f64 / 100.0).collect();
        let (med, iqr) = median_iqr(&x);
        x[0] = med + 100.0 * iqr;
        let y = robust_scale(&x, 20.0);
        assert_eq!(y[0], 20.0);
    }

    proptest! {
        #[test]
        fn scaled_median_zero_iqr_one(x in prop::collection::vec(-1e3f64..1e3, 4..200)) {
            let (_, iqr) = median_iqr(&x);
            prop_assume!(iqr > 1e-6);
            let (m, i) = median_iqr(&robust_scale(&x, 20.0));
            prop_assert!(m.abs() < 1e-9 && (i - 1.0).abs() < 1e-9, "{} {}", m, i);
        }
    }
}
