//! FIR filters and small signal-processing helpers.
//!
//! All filters are linear-phase FIRs designed by the windowed-sinc method
//! with Kaiser windows. Streaming variants keep their own history so chunked
//! processing gives bit-identical results to whole-signal processing.

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::collections::HashMap;
use std::sync::Arc;

/// Modified Bessel function I0 via its power series.
pub fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let half = x / 2.0;
    for k in 1..200 {
        term *= half / k as f64;
        let t2 = term * term;
        sum += t2;
        if t2 < 1e-18 * sum {
            break;
        }
    }
    sum
}

/// Kaiser shape parameter for a target stopband attenuation in dB.
pub fn kaiser_beta(atten_db: f64) -> f64 {
    if atten_db > 50.0 {
        0.1102 * (atten_db - 8.7)
    } else if atten_db >= 21.0 {
        0.5842 * (atten_db - 21.0).powf(0.4) + 0.07886 * (atten_db - 21.0)
    } else {
        0.0
    }
}

/// Kaiser window of length `n`.
pub fn kaiser_window(n: usize, beta: f64) -> Vec<f64> {
    let denom = bessel_i0(beta);
    let m = (n - 1) as f64;
    (0..n)
        .map(|i| {
            let x = 2.0 * i as f64 / m - 1.0;
            bessel_i0(beta * (1.0 - x * x).max(0.0).sqrt()) / denom
        })
        .collect()
}

/// Windowed-sinc low-pass FIR: `cutoff` is the -6 dB edge as a fraction of
/// the sample rate (0 < cutoff < 0.5). Taps are normalized to unit DC gain.
pub fn design_lowpass(num_taps: usize, cutoff: f64, beta: f64) -> Vec<f64> {
    assert!(num_taps % 2 == 1, "use an odd tap count for integer group delay");
    assert!(cutoff > 0.0 && cutoff < 0.5);
    let w = kaiser_window(num_taps, beta);
    let mid = (num_taps / 2) as isize;
    let mut taps: Vec<f64> = (0..num_taps)
        .map(|i| {
            let k = i as isize - mid;
            let x = 2.0 * std::f64::consts::PI * cutoff * k as f64;
            let sinc = if k == 0 { 1.0 } else { x.sin() / x };
            2.0 * cutoff * sinc * w[i]
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    for t in &mut taps {
        *t /= sum;
    }
    taps
}

/// Ideal Hilbert transformer windowed to `num_taps` (odd, type III:
/// antisymmetric, zero at center). Output approximates the quadrature
/// component of signals inside roughly [0.03, 0.47]·fs.
pub fn design_hilbert(num_taps: usize, beta: f64) -> Vec<f64> {
    assert!(num_taps % 2 == 1);
    let w = kaiser_window(num_taps, beta);
    let mid = (num_taps / 2) as isize;
    (0..num_taps)
        .map(|i| {
            let k = i as isize - mid;
            if k % 2 == 0 {
                0.0
            } else {
                2.0 / (std::f64::consts::PI * k as f64) * w[i]
            }
        })
        .collect()
}

/// Frequency response of a real FIR at a normalized frequency (cycles/sample).
pub fn fir_response(taps: &[f64], freq_norm: f64) -> Complex64 {
    let mut acc = Complex64::new(0.0, 0.0);
    for (k, &t) in taps.iter().enumerate() {
        let phase = -2.0 * std::f64::consts::PI * freq_norm * k as f64;
        acc += t * Complex64::new(phase.cos(), phase.sin());
    }
    acc
}

/// Streaming FIR decimator. Output m corresponds to input index
/// `group_delay() + m·factor` of the concatenated input stream.
pub struct FirDecimator {
    taps: Vec<f64>,
    factor: usize,
    buf: Vec<f64>,
    offset: usize,
}

impl FirDecimator {
    pub fn new(taps: Vec<f64>, factor: usize) -> Self {
        assert!(factor >= 1 && taps.len() % 2 == 1);
        Self {
            taps,
            factor,
            buf: Vec::new(),
            offset: 0,
        }
    }

    /// Standard anti-alias design for the given decimation factor: passband
    /// up to 0.35·(output Nyquist·2), stopband ≥ 70 dB down.
    pub fn design(factor: usize) -> Self {
        if factor == 1 {
            return Self::new(vec![1.0], 1);
        }
        let cutoff = 0.42 / factor as f64;
        let taps = 16 * factor + 1;
        Self::new(design_lowpass(taps, cutoff, kaiser_beta(70.0)), factor)
    }

    pub fn group_delay(&self) -> usize {
        self.taps.len() / 2
    }

    pub fn factor(&self) -> usize {
        self.factor
    }

    /// Power gain Σh² of the anti-alias filter.
    pub fn taps_power(&self) -> f64 {
        self.taps.iter().map(|t| t * t).sum()
    }

    pub fn process(&mut self, input: &[f64], out: &mut Vec<f64>) {
        self.buf.extend_from_slice(input);
        let t = self.taps.len();
        while self.offset + t <= self.buf.len() {
            let window = &self.buf[self.offset..self.offset + t];
            let mut acc = 0.0;
            for (w, x) in self.taps.iter().zip(window) {
                acc += w * x;
            }
            out.push(acc);
            self.offset += self.factor;
        }
        if self.offset > 0 {
            self.buf.drain(..self.offset);
            self.offset = 0;
        }
    }
}

/// Streaming polyphase interpolator (upsample by an integer factor).
pub struct FirInterpolator {
    phases: Vec<Vec<f64>>,
    factor: usize,
    hist: Vec<f64>,
    delay: usize,
}

impl FirInterpolator {
    /// Anti-image design: passband up to 0.4 of the input Nyquist.
    pub fn design(factor: usize) -> Self {
        assert!(factor >= 2);
        let cutoff = 0.42 / factor as f64;
        let n_taps = 16 * factor + 1;
        let proto = design_lowpass(n_taps, cutoff, kaiser_beta(70.0));
        let phase_len = n_taps.div_ceil(factor);
        let mut phases = vec![vec![0.0; phase_len]; factor];
        for (k, &t) in proto.iter().enumerate() {
            // gain L restores unit passband amplitude after zero stuffing
            phases[k % factor][k / factor] = t * factor as f64;
        }
        let hist = vec![0.0; phase_len];
        Self {
            phases,
            factor,
            hist,
            delay: n_taps / 2,
        }
    }

    /// Group delay in output samples.
    pub fn group_delay(&self) -> usize {
        self.delay
    }

    pub fn factor(&self) -> usize {
        self.factor
    }

    pub fn process(&mut self, input: &[f64], out: &mut Vec<f64>) {
        let plen = self.hist.len();
        for &x in input {
            self.hist.rotate_right(1);
            self.hist[0] = x;
            for p in 0..self.factor {
                let mut acc = 0.0;
                for k in 0..plen {
                    acc += self.phases[p][k] * self.hist[k];
                }
                out.push(acc);
            }
        }
    }
}

/// Zero-phase FIR filtering of a whole in-memory signal: applies a
/// linear-phase FIR and removes its group delay, truncating the tails so the
/// output has the same length as the input (edges are transients).
pub fn filter_zero_phase(taps: &[f64], x: &[f64]) -> Vec<f64> {
    let d = taps.len() / 2;
    let n = x.len();
    let mut y = vec![0.0; n];
    for (i, yi) in y.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (k, &t) in taps.iter().enumerate() {
            let idx = i as isize + d as isize - k as isize;
            if idx >= 0 && (idx as usize) < n {
                acc += t * x[idx as usize];
            }
        }
        *yi = acc;
    }
    y
}

/// Cached FFT plans keyed by length.
pub struct FftCache {
    planner: FftPlanner<f64>,
    forward: HashMap<usize, Arc<dyn Fft<f64>>>,
    inverse: HashMap<usize, Arc<dyn Fft<f64>>>,
}

impl Default for FftCache {
    fn default() -> Self {
        Self::new()
    }
}

impl FftCache {
    pub fn new() -> Self {
        Self {
            planner: FftPlanner::new(),
            forward: HashMap::new(),
            inverse: HashMap::new(),
        }
    }

    pub fn forward(&mut self, buf: &mut [Complex64]) {
        let n = buf.len();
        let plan = self
            .forward
            .entry(n)
            .or_insert_with(|| self.planner.plan_fft_forward(n))
            .clone();
        plan.process(buf);
    }

    pub fn inverse_normalized(&mut self, buf: &mut [Complex64]) {
        let n = buf.len();
        let plan = self
            .inverse
            .entry(n)
            .or_insert_with(|| self.planner.plan_fft_inverse(n))
            .clone();
        plan.process(buf);
        let scale = 1.0 / n as f64;
        for v in buf.iter_mut() {
            *v *= scale;
        }
    }
}

/// Unwrap a phase sequence in place (removes ±2π jumps).
pub fn unwrap_phase(phase: &mut [f64]) {
    use std::f64::consts::PI;
    let mut correction = 0.0;
    for i in 1..phase.len() {
        let raw = phase[i] + correction;
        let prev = phase[i - 1];
        let mut d = raw - prev;
        while d > PI {
            correction -= 2.0 * PI;
            d -= 2.0 * PI;
        }
        while d < -PI {
            correction += 2.0 * PI;
            d += 2.0 * PI;
        }
        phase[i] = prev + d;
    }
}

/// Centered moving average with window shrinking near the edges.
pub fn moving_average(x: &[f64], window: usize) -> Vec<f64> {
    let n = x.len();
    if n == 0 || window <= 1 {
        return x.to_vec();
    }
    let half = window / 2;
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    let mut acc = 0.0;
    for &v in x {
        acc += v;
        prefix.push(acc);
    }
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(n);
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    #[test]
    fn lowpass_response_shape() {
        let taps = design_lowpass(129, 0.1, kaiser_beta(70.0));
        assert_relative_eq!(fir_response(&taps, 0.0).norm(), 1.0, max_relative = 1e-12);
        assert!(fir_response(&taps, 0.05).norm() > 0.999);
        assert!((fir_response(&taps, 0.1).norm() - 0.5).abs() < 0.02);
        assert!(fir_response(&taps, 0.2).norm() < 3.2e-4, "stopband {}", fir_response(&taps, 0.2).norm());
    }

    #[test]
    fn hilbert_quadrature_response() {
        let taps = design_hilbert(301, kaiser_beta(70.0));
        // In the band, H(f) ≈ -i for positive frequencies.
        for &f in &[0.1, 0.2, 0.3, 0.4] {
            let h = fir_response(&taps, f);
            // remove linear phase of the centered FIR
            let d = (taps.len() / 2) as f64;
            let rot = Complex64::from_polar(1.0, 2.0 * PI * f * d);
            let h0 = h * rot;
            assert!((h0 - Complex64::new(0.0, -1.0)).norm() < 1e-3, "H({f}) = {h0}");
        }
    }

    #[test]
    fn decimator_streaming_matches_batch() {
        let mut rng_state = 1234u64;
        let mut noise = || {
            rng_state = rng_state.wrapping_mul(6364136223846793005).wrapping_add(1);
            (rng_state >> 33) as f64 / (1u64 << 31) as f64 - 0.5
        };
        let x: Vec<f64> = (0..10_000).map(|_| noise()).collect();
        let mut d1 = FirDecimator::design(8);
        let mut all = Vec::new();
        d1.process(&x, &mut all);
        let mut d2 = FirDecimator::design(8);
        let mut chunked = Vec::new();
        for chunk in x.chunks(701) {
            d2.process(chunk, &mut chunked);
        }
        assert_eq!(all, chunked);
    }

    #[test]
    fn decimator_passes_tone_in_band() {
        // 0.02·fs tone through an 8x decimator should emerge at amplitude 1.
        let f = 0.02;
        let x: Vec<f64> = (0..120_000).map(|i| (2.0 * PI * f * i as f64).sin()).collect();
        let mut d = FirDecimator::design(8);
        let mut y = Vec::new();
        d.process(&x, &mut y);
        let tail = &y[y.len() / 2..];
        let peak = tail.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        assert_relative_eq!(peak, 1.0, max_relative = 2e-3);
    }

    #[test]
    fn interpolator_reproduces_band_limited_tone() {
        let l = 18;
        let f = 0.03; // input-rate cycles/sample, inside the passband
        let x: Vec<f64> = (0..40_000).map(|i| (2.0 * PI * f * i as f64).sin()).collect();
        let mut up = FirInterpolator::design(l);
        let mut y = Vec::new();
        up.process(&x, &mut y);
        let d = up.group_delay();
        // compare against the exact tone at the output rate
        let mut worst = 0.0f64;
        for i in (y.len() / 2)..(y.len() / 2 + 5000) {
            let t_in = (i - d) as f64 / l as f64;
            let expect = (2.0 * PI * f * t_in).sin();
            worst = worst.max((y[i] - expect).abs());
        }
        assert!(worst < 5e-3, "worst interpolation error {worst}");
    }

    #[test]
    fn unwrap_recovers_linear_phase() {
        let true_phase: Vec<f64> = (0..500).map(|i| 0.13 * i as f64).collect();
        let mut wrapped: Vec<f64> = true_phase
            .iter()
            .map(|&p| (p + PI).rem_euclid(2.0 * PI) - PI)
            .collect();
        unwrap_phase(&mut wrapped);
        for (a, b) in wrapped.iter().zip(&true_phase) {
            assert_relative_eq!(a, b, max_relative = 1e-9);
        }
    }

    #[test]
    fn moving_average_flattens_constant() {
        let x = vec![3.0; 50];
        let y = moving_average(&x, 11);
        assert!(y.iter().all(|&v| (v - 3.0).abs() < 1e-12));
        // and halves a step in the middle of the window
        let mut step = vec![0.0; 50];
        for v in step.iter_mut().skip(25) {
            *v = 1.0;
        }
        let s = moving_average(&step, 10);
        assert!((s[25] - 0.5).abs() < 0.1);
    }

    #[test]
    fn zero_phase_filter_preserves_tone_phase() {
        let taps = design_lowpass(101, 0.2, kaiser_beta(60.0));
        let f = 0.05;
        let x: Vec<f64> = (0..4000).map(|i| (2.0 * PI * f * i as f64).cos()).collect();
        let y = filter_zero_phase(&taps, &x);
        for i in 1000..3000 {
            assert!((y[i] - x[i]).abs() < 1e-3, "phase shift at {i}");
        }
    }
}
