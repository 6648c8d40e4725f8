//! Butterworth band-pass design and zero-phase (forward-backward) filtering.
//!
//! The design follows the usual analog-prototype route: Butterworth low-pass
//! poles, low-pass to band-pass transform, then the bilinear transform with
//! pre-warped band edges. The result is kept as cascaded second-order
//! sections in transposed direct form II.

use num_complex::Complex64;
use std::f64::consts::PI;

use crate::error::{EegError, Result};
use crate::recording::EegRecording;

/// Prototype order; the band-pass has twice as many poles.
pub const FILTER_ORDER: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Band {
    pub name: &'static str,
    pub low_hz: f64,
    pub high_hz: f64,
}

/// δ, θ, α, β, γ.
pub const BANDS: [Band; 5] = [
    Band { name: "delta", low_hz: 1.0, high_hz: 4.0 },
    Band { name: "theta", low_hz: 4.0, high_hz: 8.0 },
    Band { name: "alpha", low_hz: 8.0, high_hz: 14.0 },
    Band { name: "beta", low_hz: 14.0, high_hz: 31.0 },
    Band { name: "gamma", low_hz: 31.0, high_hz: 50.0 },
];

/// One biquad: `b = [b0, b1, b2]`, `a = [1, a1, a2]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Section {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Section {
    fn response(&self, z: Complex64) -> Complex64 {
        let zi = z.inv();
        let zi2 = zi * zi;
        (self.b[0] + self.b[1] * zi + self.b[2] * zi2) / (self.a[0] + self.a[1] * zi + self.a[2] * zi2)
    }

    fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (self.a[0] + self.a[1] + self.a[2])
    }
}

/// Cascade of second-order sections.
#[derive(Clone, Debug, PartialEq)]
pub struct SosFilter {
    pub sections: Vec<Section>,
}

impl SosFilter {
    /// Order-[`FILTER_ORDER`] Butterworth band-pass for `[low, high]` Hz.
    pub fn butter_bandpass(low: f64, high: f64, sample_rate: f64) -> Result<Self> {
        let nyquist = sample_rate / 2.0;
        if !(low > 0.0 && low < high && high < nyquist) {
            return Err(EegError::Parameter(format!(
                "band {low}-{high} Hz must satisfy 0 < low < high < {nyquist} Hz (Nyquist)"
            )));
        }
        let n = FILTER_ORDER;
        let fs2 = 2.0 * sample_rate;
        let w1 = fs2 * (PI * low / sample_rate).tan();
        let w2 = fs2 * (PI * high / sample_rate).tan();
        let bw = w2 - w1;
        let w0 = (w1 * w2).sqrt();

        let mut poles = Vec::with_capacity(2 * n);
        for m in (0..n).map(|i| -(n as i64) + 1 + 2 * i as i64) {
            let p = -Complex64::from_polar(1.0, PI * m as f64 / (2 * n) as f64);
            let plp = p * (bw / 2.0);
            let root = (plp * plp - w0 * w0).sqrt();
            poles.push(plp + root);
            poles.push(plp - root);
        }
        // Bilinear transform. The n analog zeros at s = 0 land on z = 1 and
        // the n zeros at infinity on z = -1.
        let mut gain = Complex64::new(bw.powi(n as i32), 0.0);
        for _ in 0..n {
            gain *= fs2; // (fs2 - 0) for each analog zero
        }
        let digital: Vec<Complex64> = poles
            .iter()
            .map(|&p| {
                gain /= fs2 - p;
                (fs2 + p) / (fs2 - p)
            })
            .collect();
        let gain = gain.re;

        let mut upper: Vec<Complex64> = digital.into_iter().filter(|p| p.im > 0.0).collect();
        if upper.len() != n {
            return Err(EegError::Parameter(format!(
                "band {low}-{high} Hz produced real poles; band too wide for this design"
            )));
        }
        upper.sort_by(|a, b| a.norm().total_cmp(&b.norm()));
        let mut sections: Vec<Section> = upper
            .iter()
            .map(|p| Section {
                b: [1.0, 0.0, -1.0],
                a: [1.0, -2.0 * p.re, p.norm_sqr()],
            })
            .collect();
        for c in sections[0].b.iter_mut() {
            *c *= gain;
        }
        Ok(SosFilter { sections })
    }

    /// Complex frequency response at `freq` Hz.
    pub fn response(&self, freq: f64, sample_rate: f64) -> Complex64 {
        let z = Complex64::from_polar(1.0, 2.0 * PI * freq / sample_rate);
        self.sections.iter().map(|s| s.response(z)).product()
    }

    /// Causal filtering with initial section states `zi` (two per section).
    fn run(&self, x: &mut [f64], zi: &[[f64; 2]]) {
        for (s, z0) in self.sections.iter().zip(zi) {
            let [b0, b1, b2] = s.b;
            let [_, a1, a2] = s.a;
            let (mut z1, mut z2) = (z0[0], z0[1]);
            for v in x.iter_mut() {
                let xin = *v;
                let y = b0 * xin + z1;
                z1 = b1 * xin - a1 * y + z2;
                z2 = b2 * xin - a2 * y;
                *v = y;
            }
        }
    }

    /// Steady-state section states for a unit step input.
    fn step_state(&self) -> Vec<[f64; 2]> {
        let mut scale = 1.0;
        self.sections
            .iter()
            .map(|s| {
                let g = s.dc_gain();
                let z2 = s.b[2] - s.a[2] * g;
                let z1 = s.b[1] - s.a[1] * g + z2;
                let out = [z1 * scale, z2 * scale];
                scale *= g;
                out
            })
            .collect()
    }

    /// Forward-backward filtering with odd-extension padding and
    /// steady-state initial conditions. Output length equals input length.
    pub fn filtfilt(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        if n == 0 {
            return Vec::new();
        }
        let pad = (3 * (2 * self.sections.len() + 1)).min(n - 1);
        let mut ext = Vec::with_capacity(n + 2 * pad);
        ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
        ext.extend_from_slice(x);
        ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));

        let zi = self.step_state();
        let scaled = |v: f64| -> Vec<[f64; 2]> { zi.iter().map(|z| [z[0] * v, z[1] * v]).collect() };
        let z = scaled(ext[0]);
        self.run(&mut ext, &z);
        ext.reverse();
        let z = scaled(ext[0]);
        self.run(&mut ext, &z);
        ext.reverse();
        ext[pad..pad + n].to_vec()
    }
}

/// Zero-phase band-pass of every channel, `[n_channels × n_samples]`.
pub fn bandpass_decompose(rec: &EegRecording, band: (f64, f64)) -> Result<Vec<f64>> {
    let filter = SosFilter::butter_bandpass(band.0, band.1, rec.sample_rate_hz())?;
    let mut out = Vec::with_capacity(rec.samples().len());
    for c in 0..rec.n_channels() {
        out.extend(filter.filtfilt(rec.channel(c)));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_gain_at_centre_and_zero_at_dc() {
        let f = SosFilter::butter_bandpass(8.0, 14.0, 200.0).unwrap();
        assert_eq!(f.sections.len(), 4);
        let warped = |hz: f64| (PI * hz / 200.0).tan();
        let centre = ((warped(8.0) * warped(14.0)).sqrt()).atan() * 200.0 / PI;
        assert!((f.response(centre, 200.0).norm() - 1.0).abs() < 1e-9);
        assert!(f.response(0.0, 200.0).norm() < 1e-12);
        assert!(f.response(99.999, 200.0).norm() < 1e-6);
        // −3 dB at both edges.
        for edge in [8.0, 14.0] {
            let g = f.response(edge, 200.0).norm();
            assert!((g - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-9, "{g}");
        }
    }

    #[test]
    fn rejects_band_beyond_nyquist() {
        assert!(SosFilter::butter_bandpass(31.0, 50.0, 90.0).is_err());
        assert!(SosFilter::butter_bandpass(0.0, 4.0, 200.0).is_err());
        assert!(SosFilter::butter_bandpass(8.0, 8.0, 200.0).is_err());
    }

    #[test]
    fn zero_in_zero_out() {
        let f = SosFilter::butter_bandpass(1.0, 4.0, 200.0).unwrap();
        let y = f.filtfilt(&vec![0.0; 500]);
        assert_eq!(y.len(), 500);
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn short_input_keeps_length() {
        let f = SosFilter::butter_bandpass(8.0, 14.0, 200.0).unwrap();
        assert_eq!(f.filtfilt(&[1.0, 2.0, 3.0]).len(), 3);
        assert_eq!(f.filtfilt(&[1.0]).len(), 1);
    }
}
