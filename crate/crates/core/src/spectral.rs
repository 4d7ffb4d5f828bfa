//! Averaged auto- and cross-spectral estimation with χ² confidence bands.
//!
//! Welch's method: segment, remove each segment's mean, window, FFT, average
//! the periodograms. Estimates are single-sided and Hz-referenced,
//! density-normalized so a white input of unit double-sided PSD reads 2.0.
//! Per-bin uncertainty follows the χ² distribution with 2·n_eff degrees of
//! freedom, where n_eff corrects the raw segment count for the correlation
//! introduced by overlap.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::dsp::FftCache;
use crate::error::{Error, Result};
use crate::simulator::{MemoryPairSource, PairSource};
use crate::trace::{QuadraturePair, TimeTrace};

/// Segment taper.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    Rectangular,
    Hann,
}

impl Window {
    pub fn samples(&self, n: usize) -> Vec<f64> {
        match self {
            Window::Rectangular => vec![1.0; n],
            // periodic Hann: sin²(πi/N) = ½(1 - cos(2πi/N))
            Window::Hann => (0..n)
                .map(|i| {
                    let s = (std::f64::consts::PI * i as f64 / n as f64).sin();
                    s * s
                })
                .collect(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Window::Rectangular => "rectangular",
            Window::Hann => "hann",
        }
    }
}

/// Welch estimator settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelchSettings {
    pub segment_len: usize,
    /// Fractional overlap in [0, 0.9].
    pub overlap: f64,
    pub window: Window,
    pub ci_level: f64,
}

impl WelchSettings {
    pub fn new(segment_len: usize, overlap: f64, window: Window) -> Self {
        Self {
            segment_len,
            overlap,
            window,
            ci_level: 0.95,
        }
    }

    /// The defaults used throughout: 0.5 s Hann segments, 50% overlap.
    pub fn for_rate(sample_rate: f64, segment_seconds: f64) -> Self {
        Self::new((segment_seconds * sample_rate).round() as usize, 0.5, Window::Hann)
    }

    pub fn step(&self) -> usize {
        ((self.segment_len as f64) * (1.0 - self.overlap)).round().max(1.0) as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.segment_len < 8 {
            return Err(Error::Config("segment length must be at least 8 samples".into()));
        }
        if !(0.0..=0.9).contains(&self.overlap) {
            return Err(Error::Config(format!("overlap must be in [0, 0.9], got {}", self.overlap)));
        }
        if !(0.0 < self.ci_level && self.ci_level < 1.0) {
            return Err(Error::Config("ci_level must be in (0,1)".into()));
        }
        Ok(())
    }
}

/// An averaged spectral estimate on a single-sided Hz grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectrumEstimate {
    pub frequencies: Vec<f64>,
    pub values: Vec<Complex64>,
    /// Number of averaged segments.
    pub n_avg: usize,
    /// Overlap-corrected effective segment count (≤ n_avg).
    pub n_avg_eff: f64,
    pub window: String,
    /// Equivalent noise bandwidth of one bin, Hz.
    pub enbw_hz: f64,
    pub ci_level: f64,
    /// Multiplicative band: the estimate falls in [model·ci_lo, model·ci_hi]
    /// with probability ci_level.
    pub ci_lo: f64,
    pub ci_hi: f64,
}

impl SpectrumEstimate {
    pub fn df(&self) -> f64 {
        if self.frequencies.len() > 1 {
            self.frequencies[1] - self.frequencies[0]
        } else {
            0.0
        }
    }

    /// Integrated power over all bins (≈ variance of the underlying trace).
    pub fn total_power(&self) -> f64 {
        self.values.iter().map(|v| v.re).sum::<f64>() * self.df()
    }

    /// Index of the bin nearest to `freq_hz`.
    pub fn bin_at(&self, freq_hz: f64) -> usize {
        let df = self.df();
        if df == 0.0 {
            return 0;
        }
        ((freq_hz / df).round() as usize).min(self.frequencies.len() - 1)
    }

    /// Real parts of all bins (auto-spectra are real).
    pub fn real_values(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.re).collect()
    }
}

/// χ² quantile, Newton-refined past the library's bisection accuracy.
fn chi2_quantile(dof: f64, p: f64) -> f64 {
    let chi = ChiSquared::new(dof).expect("positive dof");
    let mut x = chi.inverse_cdf(p);
    for _ in 0..5 {
        let f = chi.cdf(x) - p;
        let d = statrs::distribution::Continuous::pdf(&chi, x);
        if d <= 0.0 {
            break;
        }
        let step = f / d;
        x -= step;
        if step.abs() < 1e-14 * x.abs() {
            break;
        }
    }
    x
}

/// χ² multiplicative confidence factors for 2·n_eff degrees of freedom.
pub fn chi2_factors(n_avg_eff: f64, level: f64) -> (f64, f64) {
    let dof = 2.0 * n_avg_eff;
    let alpha = 1.0 - level;
    let lo = chi2_quantile(dof, alpha / 2.0) / dof;
    let hi = chi2_quantile(dof, 1.0 - alpha / 2.0) / dof;
    (lo, hi)
}

/// Recompute the confidence band of an estimate at a different level.
pub fn chi2_band(estimate: &SpectrumEstimate, level: f64) -> SpectrumEstimate {
    let (lo, hi) = chi2_factors(estimate.n_avg_eff, level);
    SpectrumEstimate {
        ci_level: level,
        ci_lo: lo,
        ci_hi: hi,
        ..estimate.clone()
    }
}

/// Effective number of averages for overlapping windowed segments
/// (Welch's variance correction).
pub fn effective_averages(window: &[f64], step: usize, n_segments: usize) -> f64 {
    if n_segments <= 1 {
        return n_segments as f64;
    }
    let w2: f64 = window.iter().map(|w| w * w).sum();
    let k = n_segments as f64;
    let mut corr = 0.0;
    let mut m = 1;
    while m * step < window.len() {
        let lag = m * step;
        let r: f64 = window[..window.len() - lag]
            .iter()
            .zip(&window[lag..])
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / w2;
        corr += (1.0 - m as f64 / k) * r * r;
        m += 1;
    }
    k / (1.0 + 2.0 * corr)
}

/// Layout and normalization shared by one streaming Welch pass.
#[derive(Debug, Clone)]
pub struct WelchLayout {
    pub sample_rate: f64,
    pub segment_len: usize,
    pub step: usize,
    pub window: Vec<f64>,
    pub sum_w2: f64,
    pub n_bins: usize,
}

impl WelchLayout {
    pub fn new(sample_rate: f64, settings: &WelchSettings) -> Result<Self> {
        settings.validate()?;
        let window = settings.window.samples(settings.segment_len);
        let sum_w2 = window.iter().map(|w| w * w).sum();
        Ok(Self {
            sample_rate,
            segment_len: settings.segment_len,
            step: settings.step(),
            window,
            sum_w2,
            n_bins: settings.segment_len / 2 + 1,
        })
    }

    pub fn frequencies(&self) -> Vec<f64> {
        (0..self.n_bins)
            .map(|k| k as f64 * self.sample_rate / self.segment_len as f64)
            .collect()
    }

    /// Density scale for one raw |FFT|² periodogram, single-sided doubling
    /// not included.
    pub fn density_scale(&self) -> f64 {
        1.0 / (self.sample_rate * self.sum_w2)
    }

    /// Equivalent noise bandwidth in Hz.
    pub fn enbw_hz(&self) -> f64 {
        let sum_w: f64 = self.window.iter().sum();
        self.sample_rate * self.sum_w2 / (sum_w * sum_w)
    }

    /// Fold a raw accumulated cross/auto spectrum into a single-sided
    /// estimate.
    pub fn finish(
        &self,
        mut acc: Vec<Complex64>,
        n_segments: usize,
        settings: &WelchSettings,
    ) -> Result<SpectrumEstimate> {
        if n_segments == 0 {
            return Err(Error::Config(
                "trace shorter than one segment; nothing to average".into(),
            ));
        }
        let scale = self.density_scale() / n_segments as f64;
        let nyquist_even = self.segment_len % 2 == 0;
        for (k, v) in acc.iter_mut().enumerate() {
            let doubling = if k == 0 || (nyquist_even && k == self.n_bins - 1) {
                1.0
            } else {
                2.0
            };
            *v *= scale * doubling;
        }
        let n_eff = effective_averages(&self.window, self.step, n_segments);
        let (lo, hi) = chi2_factors(n_eff, settings.ci_level);
        Ok(SpectrumEstimate {
            frequencies: self.frequencies(),
            values: acc,
            n_avg: n_segments,
            n_avg_eff: n_eff,
            window: settings.window.name().to_string(),
            enbw_hz: self.enbw_hz(),
            ci_level: settings.ci_level,
            ci_lo: lo,
            ci_hi: hi,
        })
    }
}

/// Stream a pair source through overlapping segments, handing each segment's
/// windowed, mean-removed FFTs (full complex spectra, length = segment_len)
/// to the visitor. Returns the layout and the number of segments visited.
pub fn for_each_segment_fft<F>(
    source: &mut dyn PairSource,
    settings: &WelchSettings,
    mut visit: F,
) -> Result<(WelchLayout, usize)>
where
    F: FnMut(usize, &[Complex64], &[Complex64]),
{
    let layout = WelchLayout::new(source.sample_rate(), settings)?;
    let seg_len = layout.segment_len;
    let step = layout.step;

    let mut fft = FftCache::new();
    let mut buf0: Vec<f64> = Vec::new();
    let mut buf1: Vec<f64> = Vec::new();
    let mut c0 = Vec::new();
    let mut c1 = Vec::new();
    let mut spec0 = vec![Complex64::default(); seg_len];
    let mut spec1 = vec![Complex64::default(); seg_len];
    let mut seg_idx = 0usize;
    let mut exhausted = false;

    while !exhausted {
        let got = source.next_chunk(&mut c0, &mut c1, 1 << 18)?;
        if got == 0 {
            exhausted = true;
        } else {
            buf0.extend_from_slice(&c0);
            buf1.extend_from_slice(&c1);
        }
        let mut start = 0usize;
        while start + seg_len <= buf0.len() {
            let s0 = &buf0[start..start + seg_len];
            let s1 = &buf1[start..start + seg_len];
            let m0 = s0.iter().sum::<f64>() / seg_len as f64;
            let m1 = s1.iter().sum::<f64>() / seg_len as f64;
            for i in 0..seg_len {
                let w = layout.window[i];
                spec0[i] = Complex64::new((s0[i] - m0) * w, 0.0);
                spec1[i] = Complex64::new((s1[i] - m1) * w, 0.0);
            }
            fft.forward(&mut spec0);
            fft.forward(&mut spec1);
            visit(seg_idx, &spec0, &spec1);
            seg_idx += 1;
            start += step;
        }
        if start > 0 {
            buf0.drain(..start);
            buf1.drain(..start);
        }
        if exhausted {
            break;
        }
    }
    Ok((layout, seg_idx))
}

/// Welch power spectral density of a single trace.
pub fn welch_psd(trace: &TimeTrace, settings: &WelchSettings) -> Result<SpectrumEstimate> {
    if trace.is_empty() {
        return Err(Error::Config("empty trace".into()));
    }
    if settings.segment_len > trace.len() {
        return Err(Error::Config(format!(
            "segment length {} exceeds trace length {}",
            settings.segment_len,
            trace.len()
        )));
    }
    // Reuse the pair machinery with the trace on both channels.
    let pair = QuadraturePair::new(trace.clone(), trace.clone())
        .expect("identical traces always align");
    let mut src = MemoryPairSource::new(&pair);
    let mut acc: Vec<Complex64> = Vec::new();
    let (layout, n) = for_each_segment_fft(&mut src, settings, |_, a, _| {
        if acc.is_empty() {
            acc = vec![Complex64::default(); a.len() / 2 + 1];
        }
        for (k, v) in acc.iter_mut().enumerate() {
            *v += Complex64::new(a[k].norm_sqr(), 0.0);
        }
    })?;
    layout.finish(acc, n, settings)
}

/// Welch cross-spectral density S_ab = ⟨A·conj(B)⟩; welch_csd(a, a) equals
/// welch_psd(a) bit for bit.
///
/// The conjugate sits on the second argument so that the sign convention
/// matches the analytic cross-spectrum model: a damped oscillator line
/// produces a positive imaginary peak. (The DFT kernel e^{-iωt} is the
/// time-reverse of the convention the response functions are written in.)
pub fn welch_csd(a: &TimeTrace, b: &TimeTrace, settings: &WelchSettings) -> Result<SpectrumEstimate> {
    if a.len() != b.len() {
        return Err(Error::Config(format!(
            "trace length mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.sample_rate != b.sample_rate {
        return Err(Error::Config("trace sample-rate mismatch".into()));
    }
    let pair = QuadraturePair::new(a.clone(), b.clone())?;
    let mut src = MemoryPairSource::new(&pair);
    let mut acc: Vec<Complex64> = Vec::new();
    let (layout, n) = for_each_segment_fft(&mut src, settings, |_, fa, fb| {
        if acc.is_empty() {
            acc = vec![Complex64::default(); fa.len() / 2 + 1];
        }
        for (k, v) in acc.iter_mut().enumerate() {
            *v += fa[k] * fb[k].conj();
        }
    })?;
    layout.finish(acc, n, settings)
}

/// Pointwise rotation x0·cosθ + xπ/2·sinθ done in the frequency domain:
/// |cosθ·A + sinθ·B|² accumulated per segment. Equivalent to rotating the
/// time series first (rotation commutes with windowing and the FFT).
pub fn welch_psd_rotated(
    pair: &QuadraturePair,
    theta: f64,
    settings: &WelchSettings,
) -> Result<SpectrumEstimate> {
    let mut src = MemoryPairSource::new(pair);
    let (c, s) = (theta.cos(), theta.sin());
    let mut acc: Vec<Complex64> = Vec::new();
    let (layout, n) = for_each_segment_fft(&mut src, settings, |_, fa, fb| {
        if acc.is_empty() {
            acc = vec![Complex64::default(); fa.len() / 2 + 1];
        }
        for (k, v) in acc.iter_mut().enumerate() {
            *v += Complex64::new((c * fa[k] + s * fb[k]).norm_sqr(), 0.0);
        }
    })?;
    layout.finish(acc, n, settings)
}

/// Divide an estimate by a smoothed reference floor (shot-noise
/// normalization). The reference is smoothed over `smooth_bins` bins so its
/// own estimation noise does not inflate the normalized variance.
pub fn shot_normalize(
    estimate: &SpectrumEstimate,
    reference: &SpectrumEstimate,
    smooth_bins: usize,
) -> Result<SpectrumEstimate> {
    if estimate.frequencies.len() != reference.frequencies.len() {
        return Err(Error::Config(
            "estimate and reference are on different frequency grids".into(),
        ));
    }
    let ref_vals = reference.real_values();
    let smooth = crate::dsp::moving_average(&ref_vals, smooth_bins.max(1));
    let mut out = estimate.clone();
    for (v, r) in out.values.iter_mut().zip(&smooth) {
        if *r > 0.0 {
            *v /= *r;
        } else {
            *v = Complex64::new(f64::NAN, 0.0);
        }
    }
    Ok(out)
}

/// PSD of the rotated quadrature for each angle in the grid, normalized to
/// shot-noise units by a signal-blocked reference pair processed
/// identically.
pub fn spectrogram_vs_angle(
    pair: &QuadraturePair,
    theta_grid: &[f64],
    settings: &WelchSettings,
    shot_reference: &QuadraturePair,
) -> Result<Vec<SpectrumEstimate>> {
    if theta_grid.is_empty() {
        return Err(Error::Config("theta grid must be non-empty".into()));
    }
    let smooth = 2 * (settings.segment_len / 128).max(8) + 1;
    theta_grid
        .iter()
        .map(|&th| {
            let sig = welch_psd_rotated(pair, th, settings)?;
            let shot = welch_psd_rotated(shot_reference, th, settings)?;
            shot_normalize(&sig, &shot, smooth)
        })
        .collect()
}

/// Write an estimate as CSV: `frequency_hz,value_re,value_im,ci_lo,ci_hi`.
/// The ci columns are the multiplicative χ² band factors.
pub fn write_spectrum_csv<W: std::io::Write>(mut w: W, est: &SpectrumEstimate) -> Result<()> {
    writeln!(w, "frequency_hz,value_re,value_im,ci_lo,ci_hi")?;
    for (f, v) in est.frequencies.iter().zip(&est.values) {
        writeln!(w, "{f},{},{},{},{}", v.re, v.im, est.ci_lo, est.ci_hi)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{Provenance, TraceUnit};
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;
    use std::f64::consts::PI;

    fn white(fs: f64, n: usize, seed: u64) -> TimeTrace {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = fs.sqrt(); // unit double-sided density
        let samples = (0..n)
            .map(|_| rng.sample::<f64, _>(StandardNormal) * scale)
            .collect();
        TimeTrace::new(fs, samples, TraceUnit::ShotNoise, "w", Provenance::default()).unwrap()
    }

    #[test]
    fn white_noise_floor_is_two() {
        // Unit double-sided white PSD reads 2.0 single-sided.
        let fs = 10_000.0;
        let trace = white(fs, 102_400, 1);
        let settings = WelchSettings::new(1024, 0.5, Window::Hann);
        let est = welch_psd(&trace, &settings).unwrap();
        assert!(est.n_avg >= 100, "n_avg = {}", est.n_avg);
        let mean: f64 = est.values[1..].iter().map(|v| v.re).sum::<f64>() / (est.values.len() - 1) as f64;
        // 3σ band for the bin-averaged mean of ~199 segments × 512 bins
        assert_relative_eq!(mean, 2.0, max_relative = 0.01);
        // imaginary parts exactly zero
        assert!(est.values.iter().all(|v| v.im == 0.0));
    }

    #[test]
    fn sine_integrated_power() {
        // Pure sine of amplitude a: integrated single-sided peak power a²/2.
        let fs = 8192.0;
        let a = 3.0;
        let f0 = 1000.0;
        let n = 65536;
        let samples: Vec<f64> = (0..n)
            .map(|i| a * (2.0 * PI * f0 * i as f64 / fs).sin())
            .collect();
        let trace = TimeTrace::new(fs, samples, TraceUnit::ShotNoise, "s", Provenance::default()).unwrap();
        let settings = WelchSettings::new(4096, 0.5, Window::Hann);
        let est = welch_psd(&trace, &settings).unwrap();
        let peak_bin = est.bin_at(f0);
        let df = est.df();
        let integrated: f64 = (peak_bin - 8..=peak_bin + 8)
            .map(|k| est.values[k].re * df)
            .sum();
        assert_relative_eq!(integrated, a * a / 2.0, max_relative = 0.01);
    }

    #[test]
    fn parseval_total_power_matches_variance() {
        let trace = white(5000.0, 80_000, 7);
        let settings = WelchSettings::new(2000, 0.5, Window::Hann);
        let est = welch_psd(&trace, &settings).unwrap();
        assert_relative_eq!(est.total_power(), trace.variance(), max_relative = 0.01);
    }

    #[test]
    fn csd_of_identical_traces_equals_psd() {
        let trace = white(1000.0, 10_000, 3);
        let settings = WelchSettings::new(512, 0.5, Window::Hann);
        let psd = welch_psd(&trace, &settings).unwrap();
        let csd = welch_csd(&trace, &trace, &settings).unwrap();
        assert_eq!(psd.values.len(), csd.values.len());
        for (p, c) in psd.values.iter().zip(&csd.values) {
            assert_eq!(p.re, c.re);
            assert_eq!(c.im, 0.0);
        }
    }

    #[test]
    fn csd_conjugate_symmetry() {
        let a = white(1000.0, 20_000, 11);
        let b = white(1000.0, 20_000, 12);
        let settings = WelchSettings::new(512, 0.5, Window::Hann);
        let ab = welch_csd(&a, &b, &settings).unwrap();
        let ba = welch_csd(&b, &a, &settings).unwrap();
        for (x, y) in ab.values.iter().zip(&ba.values) {
            assert_eq!(x.re, y.re);
            assert_eq!(x.im, -y.im);
        }
    }

    #[test]
    fn independent_whites_csd_shrinks_with_averaging() {
        let settings = WelchSettings::new(256, 0.5, Window::Hann);
        let mag = |n: usize| {
            let a = white(1000.0, n, 21);
            let b = white(1000.0, n, 22);
            let csd = welch_csd(&a, &b, &settings).unwrap();
            csd.values.iter().map(|v| v.norm()).sum::<f64>() / csd.values.len() as f64
        };
        let m1 = mag(10_000);
        let m2 = mag(160_000);
        // 16× the data → 16× the averages → 4× smaller residual magnitude
        let ratio = m1 / m2;
        assert!(
            (2.6..6.0).contains(&ratio),
            "expected ≈4× shrink, got {ratio}"
        );
    }

    #[test]
    fn chi2_factors_single_segment() {
        // χ²₂ quantiles over 2: frozen from the quantile tables.
        let (lo, hi) = chi2_factors(1.0, 0.95);
        assert_relative_eq!(lo, 0.025317807984289876, max_relative = 1e-9);
        assert_relative_eq!(hi, 3.6888794541139354, max_relative = 1e-9);
    }

    #[test]
    fn chi2_factors_tighten_with_averaging() {
        let (lo1, hi1) = chi2_factors(1e7, 0.95);
        assert!((lo1 - 1.0).abs() < 1e-3 && (hi1 - 1.0).abs() < 1e-3);
        // doubling n_avg shrinks the width by √2 (asymptotically)
        let (lo_a, hi_a) = chi2_factors(200.0, 0.95);
        let (lo_b, hi_b) = chi2_factors(400.0, 0.95);
        let shrink = (hi_a - lo_a) / (hi_b - lo_b);
        assert!(
            (shrink - 2.0_f64.sqrt()).abs() < 0.1 * 2.0_f64.sqrt(),
            "CI width shrink {shrink}"
        );
    }

    #[test]
    fn chi2_band_recompute() {
        let trace = white(1000.0, 10_000, 3);
        let settings = WelchSettings::new(512, 0.5, Window::Hann);
        let est = welch_psd(&trace, &settings).unwrap();
        let wider = chi2_band(&est, 0.99);
        assert!(wider.ci_lo < est.ci_lo && wider.ci_hi > est.ci_hi);
        assert!(est.ci_lo < 1.0 && est.ci_hi > 1.0);
    }

    #[test]
    fn chi2_coverage_on_white_noise() {
        // Monte-Carlo coverage of the 95% band on a white spectrum must be
        // 95% ± 2% (binomial 3σ is well inside that with ~38k bins).
        let fs = 20_000.0;
        let settings = WelchSettings::new(256, 0.5, Window::Hann);
        let mut inside = 0usize;
        let mut total = 0usize;
        for seed in 0..6 {
            let trace = white(fs, 65_536, 100 + seed);
            let est = welch_psd(&trace, &settings).unwrap();
            for k in 1..est.values.len() - 1 {
                total += 1;
                let v = est.values[k].re;
                if v >= 2.0 * est.ci_lo && v <= 2.0 * est.ci_hi {
                    inside += 1;
                }
            }
        }
        let coverage = inside as f64 / total as f64;
        assert!(
            (coverage - 0.95).abs() < 0.02,
            "coverage {coverage} with n_eff correction"
        );
    }

    #[test]
    fn effective_averages_below_raw_for_overlap() {
        let w = Window::Hann.samples(1024);
        let n_eff = effective_averages(&w, 512, 100);
        assert!(n_eff < 100.0 && n_eff > 60.0, "n_eff = {n_eff}");
        // no overlap → no correction
        let n_eff0 = effective_averages(&w, 1024, 100);
        assert_relative_eq!(n_eff0, 100.0, max_relative = 1e-12);
    }

    #[test]
    fn rotated_psd_matches_time_domain_rotation() {
        let fs = 5000.0;
        let x0 = white(fs, 20_000, 31);
        let xp = white(fs, 20_000, 32);
        let pair = QuadraturePair::new(x0, xp).unwrap();
        let th = 0.7;
        let settings = WelchSettings::new(500, 0.5, Window::Hann);
        let freq_domain = welch_psd_rotated(&pair, th, &settings).unwrap();
        let rotated: Vec<f64> = pair
            .x0
            .samples
            .iter()
            .zip(&pair.xpi2.samples)
            .map(|(a, b)| a * th.cos() + b * th.sin())
            .collect();
        let rt = TimeTrace::new(fs, rotated, TraceUnit::ShotNoise, "r", Provenance::default()).unwrap();
        let time_domain = welch_psd(&rt, &settings).unwrap();
        for (a, b) in freq_domain.values.iter().zip(&time_domain.values) {
            assert_relative_eq!(a.re, b.re, max_relative = 1e-9, epsilon = 1e-12);
        }
    }

    #[test]
    fn shot_normalization_flattens_floor() {
        let fs = 5000.0;
        let sig = QuadraturePair::new(white(fs, 50_000, 41), white(fs, 50_000, 42)).unwrap();
        let shot = QuadraturePair::new(white(fs, 200_000, 43), white(fs, 200_000, 44)).unwrap();
        let settings = WelchSettings::new(500, 0.5, Window::Hann);
        let est = welch_psd_rotated(&sig, 0.3, &settings).unwrap();
        let shot_est = welch_psd_rotated(&shot, 0.3, &settings).unwrap();
        let norm = shot_normalize(&est, &shot_est, 31).unwrap();
        let mean: f64 = norm.values[1..].iter().map(|v| v.re).sum::<f64>() / (norm.values.len() - 1) as f64;
        assert_relative_eq!(mean, 1.0, max_relative = 0.02);
    }

    #[test]
    fn csv_export_format() {
        let trace = white(1000.0, 4096, 3);
        let settings = WelchSettings::new(512, 0.5, Window::Hann);
        let est = welch_psd(&trace, &settings).unwrap();
        let mut buf = Vec::new();
        write_spectrum_csv(&mut buf, &est).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "frequency_hz,value_re,value_im,ci_lo,ci_hi");
        let first = lines.next().unwrap();
        assert!(first.starts_with("0,"));
        assert_eq!(text.lines().count(), est.frequencies.len() + 1);
    }

    #[test]
    fn errors_on_degenerate_input() {
        let trace = white(1000.0, 100, 3);
        let settings = WelchSettings::new(512, 0.5, Window::Hann);
        assert!(welch_psd(&trace, &settings).is_err());
        let bad = WelchSettings::new(512, 0.95, Window::Hann);
        assert!(bad.validate().is_err());
    }
}
