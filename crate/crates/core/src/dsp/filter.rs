use std::f64::consts::PI;

use rustfft::num_complex::Complex64;

use super::DspError;

/// One biquad: numerator `b`, denominator `a` with `a[0] == 1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Section {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Section {
    fn response(&self, z: Complex64) -> Complex64 {
        let zi = z.inv();
        let num = self.b[0] + zi * (self.b[1] + zi * self.b[2]);
        let den = self.a[0] + zi * (self.a[1] + zi * self.a[2]);
        num / den
    }
}

/// Butterworth band-pass as cascaded second-order sections.
#[derive(Clone, Debug, PartialEq)]
pub struct BandPass {
    pub sections: Vec<Section>,
}

impl BandPass {
    /// Digital Butterworth band-pass of the given prototype order (the
    /// realised filter has twice that order). Designed in the analog domain
    /// with pre-warped edges and mapped through the bilinear transform.
    pub fn butterworth(order: usize, low: f64, high: f64, fs: f64) -> Result<Self, DspError> {
        if order == 0 || order.is_multiple_of(2) {
            // odd orders give exactly one real prototype pole, which keeps
            // section pairing simple; the pipeline uses order 3
            return Err(DspError::Contract(format!("band-pass order must be odd, got {order}")));
        }
        if !(low > 0.0 && low < high) {
            return Err(DspError::Contract(format!("band edges must satisfy 0 < low < high, got {low}..{high}")));
        }
        if fs <= 2.0 * high {
            return Err(DspError::Contract(format!(
                "sampling rate {fs} Hz is too low for a {high} Hz upper band edge"
            )));
        }
        let fs2 = 2.0 * fs;
        let wl = fs2 * (PI * low / fs).tan();
        let wh = fs2 * (PI * high / fs).tan();
        let bw = wh - wl;
        let w0 = (wl * wh).sqrt();

        let mut poles = Vec::with_capacity(2 * order);
        for k in 0..order {
            let theta = PI * (2 * k + order + 1) as f64 / (2 * order) as f64;
            let p = Complex64::from_polar(1.0, theta) * (bw / 2.0);
            let disc = (p * p - w0 * w0).sqrt();
            for s in [p + disc, p - disc] {
                poles.push((fs2 + s) / (fs2 - s));
            }
        }

        let mut complex: Vec<Complex64> = poles.iter().copied().filter(|p| p.im > 1e-12).collect();
        complex.sort_by(|a, b| a.norm().total_cmp(&b.norm()));
        let mut real: Vec<f64> = poles.iter().filter(|p| p.im.abs() <= 1e-12).map(|p| p.re).collect();
        real.sort_by(f64::total_cmp);
        if !real.len().is_multiple_of(2) {
            return Err(DspError::Contract("unpaired real pole".into()));
        }

        let mut sections = Vec::with_capacity(order);
        for pair in real.chunks(2) {
            sections.push(Section {
                b: [1.0, 0.0, -1.0],
                a: [1.0, -(pair[0] + pair[1]), pair[0] * pair[1]],
            });
        }
        for p in complex {
            sections.push(Section {
                b: [1.0, 0.0, -1.0],
                a: [1.0, -2.0 * p.re, p.norm_sqr()],
            });
        }

        // unit gain where the analog centre frequency lands after warping
        let wc = 2.0 * (w0 / fs2).atan();
        let mut filter = BandPass { sections };
        let g = filter.gain_at(wc * fs / (2.0 * PI), fs);
        filter.sections[0].b.iter_mut().for_each(|b| *b /= g);
        Ok(filter)
    }

    /// Magnitude response at `freq` Hz.
    pub fn gain_at(&self, freq: f64, fs: f64) -> f64 {
        let z = Complex64::from_polar(1.0, 2.0 * PI * freq / fs);
        self.sections.iter().map(|s| s.response(z)).product::<Complex64>().norm()
    }

    /// Single causal pass, zero initial state, transposed direct form II.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = x.to_vec();
        for s in &self.sections {
            let (mut z1, mut z2) = (0.0, 0.0);
            for v in y.iter_mut() {
                let input = *v;
                let out = s.b[0] * input + z1;
                z1 = s.b[1] * input - s.a[1] * out + z2;
                z2 = s.b[2] * input - s.a[2] * out;
                *v = out;
            }
        }
        y
    }
}

/// Third-order Butterworth band-pass between `low` and `high` Hz.
pub fn bandpass(signal: &[f64], fs: f64, low: f64, high: f64) -> Result<Vec<f64>, DspError> {
    Ok(BandPass::butterworth(3, low, high, fs)?.apply(signal))
}
