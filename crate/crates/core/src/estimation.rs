//! The parameter-evaluation chain: per-segment damping fits, cross-spectrum
//! thermometry, heating-rate inference, the single-parameter measurement-rate
//! fit, and the squeezing-depth readout.
//!
//! The chain runs on spectra rather than raw traces so the same code serves
//! in-memory pairs and streamed multi-gigabyte trace files:
//!
//! 1. damping γ and the resonance-drift series from Whittle fits of
//!    non-averaged 0.5 s periodograms of S_{π/2,π/2} (the χ²-distributed,
//!    exponential-per-bin likelihood), pooled by a trimmed mean;
//! 2. occupation n from the fitted Re/Im peak-height ratio (= 2n+1) of the
//!    π/4–3π/4 cross-spectrum, with shared line parameters;
//! 3. Γ_tot = n·γ;
//! 4. Γ_meas from the shot-normalized S_{π/2,π/2} with everything else
//!    pinned — the only remaining free parameter;
//! 5. squeezing depth from the global minimum of the shot-normalized
//!    spectra over an analyzer-angle grid after smoothing over ≈ γ/2.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optimize::{nelder_mead, NelderMeadOptions};
use crate::simulator::{MemoryPairSource, PairSource};
use crate::spectral::{
    effective_averages, for_each_segment_fft, SpectrumEstimate, WelchLayout, WelchSettings, Window,
};
use crate::trace::QuadraturePair;

const TAU: f64 = 2.0 * std::f64::consts::PI;

/// A point estimate with a 1σ uncertainty.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ValueWithSigma {
    pub value: f64,
    pub sigma: f64,
}

/// Tunables of the whole chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimationSettings {
    /// Segment length for all spectral estimates, s.
    pub segment_seconds: f64,
    /// Welch overlap for averaged spectra (damping fits always use the
    /// non-overlapping subset).
    pub overlap: f64,
    pub window: Window,
    /// Half-width of the fit band around the resonance, in linewidths.
    pub fit_band_linewidths: f64,
    /// Half-width of the squeezing search band, in linewidths.
    pub squeeze_band_linewidths: f64,
    /// Smoothing bandwidth for the squeezing readout, in units of γ.
    pub smooth_bandwidth_factor: f64,
    /// Trimming fraction per tail when pooling per-segment γ.
    pub trim_fraction: f64,
    pub ci_level: f64,
}

impl Default for EstimationSettings {
    fn default() -> Self {
        Self {
            segment_seconds: 0.5,
            overlap: 0.5,
            window: Window::Hann,
            fit_band_linewidths: 25.0,
            squeeze_band_linewidths: 50.0,
            smooth_bandwidth_factor: 0.5,
            trim_fraction: 0.1,
            ci_level: 0.95,
        }
    }
}

impl EstimationSettings {
    pub fn welch(&self, sample_rate: f64) -> WelchSettings {
        let mut w = WelchSettings::new(
            (self.segment_seconds * sample_rate).round() as usize,
            self.overlap,
            self.window,
        );
        w.ci_level = self.ci_level;
        w
    }
}

/// Single-segment periodograms of the phase quadrature on the fit band,
/// with segment midpoint times.
#[derive(Debug, Clone)]
pub struct SegmentPeriodograms {
    /// Band frequencies, Hz.
    pub freqs: Vec<f64>,
    /// Segment midpoint times, s.
    pub t_mid: Vec<f64>,
    /// One single-sided density periodogram per segment (band bins only).
    pub power: Vec<Vec<f64>>,
}

/// Everything the chain needs, collected in one pass over a pair source.
#[derive(Debug, Clone)]
pub struct ChainSpectra {
    pub sample_rate: f64,
    pub duration: f64,
    pub psd_pi2: SpectrumEstimate,
    pub psd_pi4: SpectrumEstimate,
    pub psd_3pi4: SpectrumEstimate,
    /// conj(X_{π/4})·X_{3π/4} cross-spectrum.
    pub csd_cross: SpectrumEstimate,
    pub theta_grid: Vec<f64>,
    /// PSD of the rotated quadrature per grid angle (same order).
    pub theta_psds: Vec<SpectrumEstimate>,
    pub damping: SegmentPeriodograms,
}

/// One streaming pass: averaged spectra at the chain's working angles, the
/// full θ grid, and per-segment band periodograms for the damping fits.
pub fn collect_chain_spectra(
    source: &mut dyn PairSource,
    settings: &EstimationSettings,
    band_hz: (f64, f64),
    theta_grid: &[f64],
) -> Result<ChainSpectra> {
    let welch = settings.welch(source.sample_rate());
    let fs = source.sample_rate();
    let seg_len = welch.segment_len;
    let n_bins = seg_len / 2 + 1;
    let df = fs / seg_len as f64;
    let bin_lo = ((band_hz.0 / df).floor().max(0.0)) as usize;
    let bin_hi = (((band_hz.1 / df).ceil()) as usize).min(n_bins - 1);
    if bin_hi <= bin_lo + 8 {
        return Err(Error::Config(format!(
            "fit band [{}, {}] Hz too narrow for the {} Hz resolution",
            band_hz.0, band_hz.1, df
        )));
    }

    let rotations: Vec<(f64, f64)> = theta_grid.iter().map(|t| (t.cos(), t.sin())).collect();
    let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;

    let mut acc_pi2 = vec![num_complex::Complex64::default(); n_bins];
    let mut acc_pi4 = vec![num_complex::Complex64::default(); n_bins];
    let mut acc_3pi4 = vec![num_complex::Complex64::default(); n_bins];
    let mut acc_cross = vec![num_complex::Complex64::default(); n_bins];
    let mut acc_thetas = vec![vec![num_complex::Complex64::default(); n_bins]; theta_grid.len()];
    let mut periodograms: Vec<Vec<f64>> = Vec::new();
    let mut t_mid: Vec<f64> = Vec::new();

    let step = welch.step();
    let (layout, n_segments) = for_each_segment_fft(source, &welch, |seg, f0, fp| {
        for k in 0..n_bins {
            let a = f0[k];
            let b = fp[k];
            acc_pi2[k] += num_complex::Complex64::new(b.norm_sqr(), 0.0);
            let p4 = (a + b) * inv_sqrt2;
            let p34 = (b - a) * inv_sqrt2;
            acc_pi4[k] += num_complex::Complex64::new(p4.norm_sqr(), 0.0);
            acc_3pi4[k] += num_complex::Complex64::new(p34.norm_sqr(), 0.0);
            acc_cross[k] += p4 * p34.conj();
        }
        for (acc, (c, s)) in acc_thetas.iter_mut().zip(&rotations) {
            for k in 0..n_bins {
                let v = *c * f0[k] + *s * fp[k];
                acc[k] += num_complex::Complex64::new(v.norm_sqr(), 0.0);
            }
        }
        // Even-indexed segments tile the record without overlap: they are
        // the independent 0.5-s pieces the damping fits want.
        if seg % 2 == 0 || step == seg_len {
            let scale = 2.0 / (fs * layout_sum_w2(&welch, fs));
            periodograms.push(
                (bin_lo..=bin_hi)
                    .map(|k| fp[k].norm_sqr() * scale)
                    .collect(),
            );
            t_mid.push((seg * step + seg_len / 2) as f64 / fs);
        }
    })?;

    let layout = WelchLayout::new(fs, &welch)?;
    let freqs_band: Vec<f64> = (bin_lo..=bin_hi).map(|k| k as f64 * df).collect();
    let duration = source
        .total_frames()
        .map(|n| n as f64 / fs)
        .unwrap_or(n_segments as f64 * step as f64 / fs);

    let finish = |acc: Vec<num_complex::Complex64>| layout.finish(acc, n_segments, &welch);
    Ok(ChainSpectra {
        sample_rate: fs,
        duration,
        psd_pi2: finish(acc_pi2)?,
        psd_pi4: finish(acc_pi4)?,
        psd_3pi4: finish(acc_3pi4)?,
        csd_cross: finish(acc_cross)?,
        theta_grid: theta_grid.to_vec(),
        theta_psds: acc_thetas
            .into_iter()
            .map(finish)
            .collect::<Result<Vec<_>>>()?,
        damping: SegmentPeriodograms {
            freqs: freqs_band,
            t_mid,
            power: periodograms,
        },
    })
}

fn layout_sum_w2(settings: &WelchSettings, _fs: f64) -> f64 {
    settings
        .window
        .samples(settings.segment_len)
        .iter()
        .map(|w| w * w)
        .sum()
}

/// Lorentzian-plus-floor line model: floor + amp·γ²Ω₀²/((Ω₀²-ω²)² + γ²ω²),
/// parameterized so `amp` is the peak height.
fn lorentzian(f_hz: f64, omega0: f64, gamma: f64, amp: f64, floor: f64) -> f64 {
    let w = TAU * f_hz;
    let d = (omega0 * omega0 - w * w).powi(2) + gamma * gamma * w * w;
    floor + amp * gamma * gamma * omega0 * omega0 / d
}

#[derive(Debug, Clone, Copy)]
pub struct LorentzianFit {
    pub omega_q: f64,
    pub gamma: f64,
    pub amp: f64,
    pub floor: f64,
    pub nll: f64,
    pub converged: bool,
}

/// Whittle maximum-likelihood fit of a Lorentzian line to a (possibly
/// averaged) periodogram: each bin is exponential/χ²-distributed about the
/// model, NLL = Σ ln M + I/M. Multi-start at ±3 bins around the peak.
fn whittle_lorentzian_fit(
    freqs: &[f64],
    power: &[f64],
    seed: Option<(f64, f64)>,
    max_iterations: usize,
) -> LorentzianFit {
    let n = freqs.len();
    let df = freqs[1] - freqs[0];
    // crude floor: lower quartile
    let mut sorted = power.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let floor0 = sorted[n / 4].max(1e-300);
    let peak_idx = power
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(i, _)| i)
        .unwrap();
    let amp0 = (power[peak_idx] - floor0).max(floor0);
    let (f0_guess, gamma_guess) = match seed {
        Some((w0, g0)) => (w0 / TAU, g0),
        None => {
            // half-maximum width
            let half = floor0 + amp0 / 2.0;
            let mut lo = peak_idx;
            while lo > 0 && power[lo] > half {
                lo -= 1;
            }
            let mut hi = peak_idx;
            while hi + 1 < n && power[hi] > half {
                hi += 1;
            }
            let width_hz = ((hi - lo) as f64).max(1.0) * df;
            (freqs[peak_idx], TAU * width_hz)
        }
    };

    let nll = |x: &[f64]| -> f64 {
        let (omega0, gamma, amp, floor) = (x[0], x[1], x[2].exp(), x[3].exp());
        let mut acc = 0.0;
        for (f, p) in freqs.iter().zip(power) {
            let m = lorentzian(*f, omega0, gamma, amp, floor);
            acc += m.ln() + p / m;
        }
        acc
    };

    let opts = NelderMeadOptions {
        max_iterations,
        x_tol: 1e-8,
        f_tol: 1e-10,
    };
    let lo = [TAU * freqs[0], TAU * df * 0.2, amp0.ln() - 20.0, floor0.ln() - 10.0];
    let hi = [
        TAU * freqs[n - 1],
        TAU * (freqs[n - 1] - freqs[0]),
        amp0.ln() + 20.0,
        floor0.ln() + 10.0,
    ];
    let scale = [TAU * df, gamma_guess * 0.2, 0.5, 0.5];

    let mut best: Option<crate::optimize::MinResult> = None;
    for start_offset in [-3.0, 0.0, 3.0] {
        let x0 = [
            TAU * (f0_guess + start_offset * df),
            gamma_guess,
            amp0.ln(),
            floor0.ln(),
        ];
        let r = nelder_mead(nll, &x0, &scale, &lo, &hi, &opts);
        if best.as_ref().map(|b| r.value < b.value).unwrap_or(true) {
            best = Some(r);
        }
    }
    let r = best.unwrap();
    LorentzianFit {
        omega_q: r.x[0],
        gamma: r.x[1],
        amp: r.x[2].exp(),
        floor: r.x[3].exp(),
        nll: r.value,
        converged: r.converged,
    }
}

/// Damping estimate and resonance-drift series.
#[derive(Debug, Clone)]
pub struct DampingFit {
    pub gamma: ValueWithSigma,
    /// (t_mid s, Ω_q rad/s) per segment.
    pub omega_series: Vec<(f64, f64)>,
    /// Least-squares slope of the series, rad/s per second.
    pub omega_drift_rate: f64,
    /// Mean fitted resonance, rad/s.
    pub omega_q_mean: f64,
    pub n_segments: usize,
    pub n_converged: usize,
    /// Total Whittle log-likelihood at the optimum (negated NLL sum).
    pub log_likelihood: f64,
}

/// Per-segment Whittle fits of the phase-quadrature periodograms, pooled by
/// a trimmed mean.
pub fn fit_damping_from_periodograms(
    segs: &SegmentPeriodograms,
    settings: &EstimationSettings,
) -> Result<DampingFit> {
    let n_seg = segs.power.len();
    if n_seg < 10 {
        return Err(Error::Config(format!(
            "damping fit needs at least 10 segments, got {n_seg}"
        )));
    }
    // Stage 1: fit the segment-averaged spectrum for seeds.
    let n_bins = segs.freqs.len();
    let mut avg = vec![0.0; n_bins];
    for p in &segs.power {
        for (a, v) in avg.iter_mut().zip(p) {
            *a += v / n_seg as f64;
        }
    }
    let stage1 = whittle_lorentzian_fit(&segs.freqs, &avg, None, 4000);

    let mut gammas = Vec::with_capacity(n_seg);
    let mut series = Vec::with_capacity(n_seg);
    let mut n_converged = 0usize;
    let mut ll = 0.0;
    for (p, &t) in segs.power.iter().zip(&segs.t_mid) {
        let fit = whittle_lorentzian_fit(
            &segs.freqs,
            p,
            Some((stage1.omega_q, stage1.gamma)),
            1500,
        );
        if fit.converged {
            n_converged += 1;
            gammas.push(fit.gamma);
            series.push((t, fit.omega_q));
            ll -= fit.nll;
        }
    }
    if (n_converged as f64) < 0.8 * n_seg as f64 {
        return Err(Error::Numeric(format!(
            "damping fits converged on only {n_converged}/{n_seg} segments"
        )));
    }

    // Trimmed mean of γ: the tails hold the occasional bad segment.
    let mut sorted = gammas.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let k = (settings.trim_fraction * sorted.len() as f64).floor() as usize;
    let kept = &sorted[k..sorted.len() - k];
    let mean = kept.iter().sum::<f64>() / kept.len() as f64;
    let var = kept.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / (kept.len() - 1).max(1) as f64;
    let sigma = (var / kept.len() as f64).sqrt();

    // Drift series slope by least squares.
    let nf = series.len() as f64;
    let t_mean = series.iter().map(|(t, _)| t).sum::<f64>() / nf;
    let w_mean = series.iter().map(|(_, w)| w).sum::<f64>() / nf;
    let sxx: f64 = series.iter().map(|(t, _)| (t - t_mean).powi(2)).sum();
    let sxy: f64 = series
        .iter()
        .map(|(t, w)| (t - t_mean) * (w - w_mean))
        .sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };

    Ok(DampingFit {
        gamma: ValueWithSigma { value: mean, sigma },
        omega_series: series,
        omega_drift_rate: slope,
        omega_q_mean: w_mean,
        n_segments: n_seg,
        n_converged,
        log_likelihood: ll,
    })
}

/// Spec-level convenience: damping fit straight from an in-memory pair.
pub fn fit_damping_segments(
    pair: &QuadraturePair,
    segment_seconds: f64,
    band_hz: Option<(f64, f64)>,
) -> Result<DampingFit> {
    let mut settings = EstimationSettings {
        segment_seconds,
        ..Default::default()
    };
    settings.segment_seconds = segment_seconds;
    let band = match band_hz {
        Some(b) => b,
        None => auto_band(pair, &settings)?,
    };
    let mut src = MemoryPairSource::new(pair);
    let spectra = collect_chain_spectra(&mut src, &settings, band, &[])?;
    fit_damping_from_periodograms(&spectra.damping, &settings)
}

/// Peak-detect the resonance on the phase quadrature and return a fit band
/// of ±fit_band_linewidths around it.
fn auto_band(pair: &QuadraturePair, settings: &EstimationSettings) -> Result<(f64, f64)> {
    let welch = settings.welch(pair.sample_rate());
    let psd = crate::spectral::welch_psd_rotated(pair, std::f64::consts::FRAC_PI_2, &welch)?;
    let vals = psd.real_values();
    let df = psd.df();
    let skip = (vals.len() / 100).max(2);
    let (peak_idx, _) = vals
        .iter()
        .enumerate()
        .skip(skip)
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .ok_or_else(|| Error::Numeric("empty spectrum".into()))?;
    let f_peak = peak_idx as f64 * df;
    // crude linewidth from the half-maximum width
    let floor = {
        let mut s = vals.clone();
        s.sort_by(|a, b| a.partial_cmp(b).unwrap());
        s[vals.len() / 4]
    };
    let half = floor + (vals[peak_idx] - floor) / 2.0;
    let mut lo = peak_idx;
    while lo > 0 && vals[lo] > half {
        lo -= 1;
    }
    let mut hi = peak_idx;
    while hi + 1 < vals.len() && vals[hi] > half {
        hi += 1;
    }
    let gamma_hz = ((hi - lo) as f64).max(1.0) * df;
    let half_band = (settings.fit_band_linewidths * gamma_hz).max(10.0 * df);
    Ok(((f_peak - half_band).max(df), f_peak + half_band))
}

/// Occupation estimate from the cross-spectrum peak-height ratio.
#[derive(Debug, Clone)]
pub struct OccupationFit {
    pub n_occ: ValueWithSigma,
    /// Fitted Re/Im peak-height ratio (= 2n+1).
    pub ratio: f64,
    pub omega_q: f64,
    pub gamma: f64,
    pub h_re: ValueWithSigma,
    pub h_im: ValueWithSigma,
}

/// Joint fit of the real and imaginary cross-spectrum peaks with shared
/// (Ω_q, γ) and free heights. The real part carries the |χ|² displacement
/// line, the imaginary part the ω·|χ|² zero-point correlation line; their
/// height ratio is 2n+1.
pub fn fit_occupation_from_spectra(
    chain: &ChainSpectra,
    band_hz: (f64, f64),
    seed: (f64, f64),
    min_linewidths: f64,
) -> Result<OccupationFit> {
    let csd = &chain.csd_cross;
    let df = csd.df();
    let lo = csd.bin_at(band_hz.0);
    let hi = csd.bin_at(band_hz.1);
    if hi <= lo + 8 {
        return Err(Error::Config("occupation fit band too narrow".into()));
    }
    // Duration precondition: ≥ 100 linewidths of data.
    let gamma_hz_seed = seed.1 / TAU;
    if chain.duration * gamma_hz_seed < min_linewidths {
        return Err(Error::Config(format!(
            "record covers only {:.1} linewidths; need {min_linewidths}",
            chain.duration * gamma_hz_seed
        )));
    }

    let re: Vec<f64> = (lo..=hi).map(|k| csd.values[k].re).collect();
    let im: Vec<f64> = (lo..=hi).map(|k| csd.values[k].im).collect();
    let freqs: Vec<f64> = (lo..=hi).map(|k| k as f64 * df).collect();
    // Per-bin variance of a cross-spectrum estimate is driven by the
    // incoherent product of the auto-spectra.
    let n_eff = csd.n_avg_eff;
    let smooth = 9;
    let saa = crate::dsp::moving_average(
        &(lo..=hi).map(|k| chain.psd_pi4.values[k].re).collect::<Vec<_>>(),
        smooth,
    );
    let sbb = crate::dsp::moving_average(
        &(lo..=hi).map(|k| chain.psd_3pi4.values[k].re).collect::<Vec<_>>(),
        smooth,
    );
    let re_s = crate::dsp::moving_average(&re, smooth);
    let im_s = crate::dsp::moving_average(&im, smooth);
    let mut w_re = Vec::with_capacity(re.len());
    let mut w_im = Vec::with_capacity(re.len());
    for k in 0..re.len() {
        let var_re = (saa[k] * sbb[k] + re_s[k] * re_s[k] - im_s[k] * im_s[k]).max(1e-300)
            / (2.0 * n_eff);
        let var_im = (saa[k] * sbb[k] - re_s[k] * re_s[k] + im_s[k] * im_s[k]).max(1e-300)
            / (2.0 * n_eff);
        w_re.push(1.0 / var_re);
        w_im.push(1.0 / var_im);
    }

    // Profiled weighted least squares at fixed (Ω, γ).
    let shapes = |omega0: f64, gamma: f64| -> (Vec<f64>, Vec<f64>) {
        let l_re: Vec<f64> = freqs
            .iter()
            .map(|&f| lorentzian(f, omega0, gamma, 1.0, 0.0))
            .collect();
        let l_im: Vec<f64> = freqs
            .iter()
            .zip(&l_re)
            .map(|(&f, &l)| l * (TAU * f) / omega0)
            .collect();
        (l_re, l_im)
    };
    let profile = |l: &[f64], y: &[f64], w: &[f64]| -> (f64, f64) {
        let num: f64 = l.iter().zip(y).zip(w).map(|((l, y), w)| w * l * y).sum();
        let den: f64 = l.iter().zip(w).map(|(l, w)| w * l * l).sum();
        (num / den, den)
    };
    let sse = |x: &[f64]| -> f64 {
        let (l_re, l_im) = shapes(x[0], x[1]);
        let (h_re, _) = profile(&l_re, &re, &w_re);
        let (h_im, _) = profile(&l_im, &im, &w_im);
        let mut acc = 0.0;
        for k in 0..re.len() {
            acc += w_re[k] * (re[k] - h_re * l_re[k]).powi(2);
            acc += w_im[k] * (im[k] - h_im * l_im[k]).powi(2);
        }
        acc
    };

    let opts = NelderMeadOptions {
        max_iterations: 4000,
        x_tol: 1e-8,
        f_tol: 1e-12,
    };
    let r = nelder_mead(
        sse,
        &[seed.0, seed.1],
        &[TAU * df, seed.1 * 0.1],
        &[TAU * freqs[0], TAU * df * 0.2],
        &[TAU * freqs[freqs.len() - 1], TAU * (band_hz.1 - band_hz.0)],
        &opts,
    );
    let (omega_q, gamma) = (r.x[0], r.x[1]);
    let (l_re, l_im) = shapes(omega_q, gamma);
    let (h_re, den_re) = profile(&l_re, &re, &w_re);
    let (h_im, den_im) = profile(&l_im, &im, &w_im);

    // Residual-scaled height covariances.
    let dof = (2 * re.len() - 4).max(1) as f64;
    let mut chi2 = 0.0;
    for k in 0..re.len() {
        chi2 += w_re[k] * (re[k] - h_re * l_re[k]).powi(2);
        chi2 += w_im[k] * (im[k] - h_im * l_im[k]).powi(2);
    }
    let scale = (chi2 / dof).max(1.0);
    let sig_re = (scale / den_re).sqrt();
    let sig_im = (scale / den_im).sqrt();

    if !(h_im > 3.0 * sig_im) {
        return Err(Error::Numeric(format!(
            "occupation: imaginary cross-spectrum peak not resolved (h = {h_im:.3e} ± {sig_im:.3e}); \
             longer record or larger measurement rate needed"
        )));
    }

    let ratio = h_re / h_im;
    let n = (ratio - 1.0) / 2.0;
    let sigma_ratio = ratio.abs() * ((sig_re / h_re).powi(2) + (sig_im / h_im).powi(2)).sqrt();
    Ok(OccupationFit {
        n_occ: ValueWithSigma {
            value: n,
            sigma: sigma_ratio / 2.0,
        },
        ratio,
        omega_q,
        gamma,
        h_re: ValueWithSigma { value: h_re, sigma: sig_re },
        h_im: ValueWithSigma { value: h_im, sigma: sig_im },
    })
}

/// Occupation from an in-memory pair; the line is located automatically.
pub fn estimate_occupation(pair: &QuadraturePair) -> Result<OccupationFit> {
    let settings = EstimationSettings::default();
    let band = auto_band(pair, &settings)?;
    let mut src = MemoryPairSource::new(pair);
    let chain = collect_chain_spectra(&mut src, &settings, band, &[])?;
    let stage1 = whittle_lorentzian_fit(
        &chain.damping.freqs,
        &chain
            .damping
            .power
            .iter()
            .fold(vec![0.0; chain.damping.freqs.len()], |mut acc, p| {
                for (a, v) in acc.iter_mut().zip(p) {
                    *a += v / chain.damping.power.len() as f64;
                }
                acc
            }),
        None,
        4000,
    );
    fit_occupation_from_spectra(&chain, band, (stage1.omega_q, stage1.gamma), 100.0)
}

/// Γ_tot = n·γ with uncertainties combined in quadrature.
pub fn heating_rate(n_occ: ValueWithSigma, gamma: ValueWithSigma) -> Result<ValueWithSigma> {
    if !(n_occ.value >= 0.0 && gamma.value > 0.0) {
        return Err(Error::Config("heating rate needs n ≥ 0 and γ > 0".into()));
    }
    let value = n_occ.value * gamma.value;
    let sigma = ((n_occ.sigma * gamma.value).powi(2) + (gamma.sigma * n_occ.value).powi(2)).sqrt();
    Ok(ValueWithSigma { value, sigma })
}

/// Fit Γ_meas as the only free parameter of the shot-normalized
/// S_{π/2,π/2}(Ω) = 1 + 16·Γ_meas·Γ_tot·Ω_q²·|denominator|⁻¹, with (Ω_q, γ)
/// pinned from the damping fit and Γ_tot from the heating rate. The model is
/// linear in Γ_meas, so iteratively reweighted least squares is exact.
pub fn fit_measurement_rate_from_normalized(
    freqs: &[f64],
    normalized: &[f64],
    gamma_tot: f64,
    omega_q: f64,
    gamma: f64,
    n_eff: f64,
    enbw_bins: f64,
) -> Result<ValueWithSigma> {
    if freqs.len() != normalized.len() || freqs.len() < 8 {
        return Err(Error::Config("measurement-rate fit needs a populated band".into()));
    }
    let g: Vec<f64> = freqs
        .iter()
        .map(|&f| {
            let w = TAU * f;
            16.0 * gamma_tot * omega_q * omega_q
                / ((omega_q * omega_q - w * w).powi(2) + gamma * gamma * w * w)
        })
        .collect();
    let y: Vec<f64> = normalized.iter().map(|v| v - 1.0).collect();
    let mut gm = 0.0f64;
    for _ in 0..4 {
        let mut num = 0.0;
        let mut den = 0.0;
        for k in 0..g.len() {
            let m = 1.0 + gm * g[k];
            let w = 1.0 / (m * m);
            num += w * g[k] * y[k];
            den += w * g[k] * g[k];
        }
        gm = num / den;
    }
    // Uncertainty: the larger of the model-based variance (exponential bins
    // with n_eff averages) and the residual sandwich, both thinned by the
    // ENBW in bins since adjacent bins of a windowed estimate correlate.
    let mut den = 0.0;
    let mut num = 0.0;
    for k in 0..g.len() {
        let m = 1.0 + gm.max(0.0) * g[k];
        let w = 1.0 / (m * m);
        let r = y[k] - gm * g[k];
        den += w * g[k] * g[k];
        num += w * w * g[k] * g[k] * r * r;
    }
    let enbw = enbw_bins.max(1.0);
    let sigma_model = (enbw / (n_eff * den)).sqrt();
    let sigma_sandwich = (enbw * num).sqrt() / den;
    let sigma = sigma_model.max(sigma_sandwich);
    Ok(ValueWithSigma { value: gm, sigma })
}

/// Spec-level convenience on in-memory pairs.
pub fn fit_measurement_rate(
    pair: &QuadraturePair,
    shot_reference: &QuadraturePair,
    gamma_tot: f64,
    omega_q: f64,
    gamma: f64,
) -> Result<ValueWithSigma> {
    let settings = EstimationSettings::default();
    let welch = settings.welch(pair.sample_rate());
    let psd = crate::spectral::welch_psd_rotated(pair, std::f64::consts::FRAC_PI_2, &welch)?;
    let shot = crate::spectral::welch_psd_rotated(shot_reference, std::f64::consts::FRAC_PI_2, &welch)?;
    let norm = crate::spectral::shot_normalize(&psd, &shot, 33)?;
    let f_lo = (omega_q - 20.0 * gamma) / TAU;
    let f_hi = (omega_q + 20.0 * gamma) / TAU;
    let lo = norm.bin_at(f_lo);
    let hi = norm.bin_at(f_hi);
    fit_measurement_rate_from_normalized(
        &norm.frequencies[lo..=hi],
        &norm.real_values()[lo..=hi],
        gamma_tot,
        omega_q,
        gamma,
        norm.n_avg_eff,
        norm.enbw_hz / norm.df(),
    )
}

/// Derived decoherence budget.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BudgetDerivation {
    pub gamma_ba: ValueWithSigma,
    pub c_q: ValueWithSigma,
    pub eta_d: ValueWithSigma,
}

/// Γ_ba = Γ_tot - Γ_th, C_q = Γ_ba/Γ_th, η_d = Γ_meas/Γ_ba. Γ_th is an
/// external input (pressure/temperature estimate), taken exact.
pub fn derive_budget(
    gamma_tot: ValueWithSigma,
    gamma_meas: ValueWithSigma,
    gamma_th: f64,
) -> Result<BudgetDerivation> {
    if !(gamma_th > 0.0) {
        return Err(Error::Config("gamma_th must be positive".into()));
    }
    if gamma_th >= gamma_tot.value {
        return Err(Error::Config(format!(
            "inconsistent rates: gamma_th = {gamma_th} ≥ gamma_tot = {}",
            gamma_tot.value
        )));
    }
    let gba = gamma_tot.value - gamma_th;
    let gba_sigma = gamma_tot.sigma;
    let cq = gba / gamma_th;
    let eta = gamma_meas.value / gba;
    let eta_sigma = eta.abs()
        * ((gamma_meas.sigma / gamma_meas.value).powi(2) + (gba_sigma / gba).powi(2)).sqrt();
    Ok(BudgetDerivation {
        gamma_ba: ValueWithSigma { value: gba, sigma: gba_sigma },
        c_q: ValueWithSigma {
            value: cq,
            sigma: gba_sigma / gamma_th,
        },
        eta_d: ValueWithSigma { value: eta, sigma: eta_sigma },
    })
}

/// Squeezing-depth readout.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SqueezingMeasurement {
    pub depth: ValueWithSigma,
    pub theta_opt: f64,
    pub freq_opt_hz: f64,
    /// Minimum normalized spectrum value.
    pub min_value: f64,
    /// Depth a pure-noise record would fake via minimum-selection over all
    /// candidates; depths below this are consistent with zero.
    pub zero_depth_threshold: f64,
    pub significant: bool,
}

/// Global minimum of the shot-normalized spectra over the θ grid after
/// smoothing over ≈ γ/2, with a χ²-propagated uncertainty. No dark-noise
/// subtraction.
pub fn measure_squeezing_from_normalized(
    theta_grid: &[f64],
    normalized: &[&SpectrumEstimate],
    band_hz: (f64, f64),
    smooth_bw_hz: f64,
) -> Result<SqueezingMeasurement> {
    if theta_grid.is_empty() || normalized.len() != theta_grid.len() {
        return Err(Error::Config("theta grid and spectra mismatch".into()));
    }
    let df = normalized[0].df();
    let smooth_bins = ((smooth_bw_hz / df).round() as usize).max(1) | 1;
    let mut best = (f64::INFINITY, 0.0, 0.0); // (value, theta, freq)
    let mut candidates = 0usize;
    for (est, &th) in normalized.iter().zip(theta_grid) {
        let lo = est.bin_at(band_hz.0);
        let hi = est.bin_at(band_hz.1);
        let vals = est.real_values();
        let smoothed = crate::dsp::moving_average(&vals[lo..=hi], smooth_bins);
        for (k, &v) in smoothed.iter().enumerate() {
            candidates += 1;
            if v < best.0 {
                best = (v, th, (lo + k) as f64 * df);
            }
        }
    }
    let est0 = normalized[0];
    // Effective dof of a smoothed bin: ENBW-corrected independent bin count
    // inside the smoothing window times the segment dof.
    let bins_eff = (smooth_bins as f64 * df / est0.enbw_hz).max(1.0);
    let dof = 2.0 * est0.n_avg_eff * bins_eff;
    let sigma = best.0 * (2.0 / dof).sqrt();
    let n_indep = (candidates as f64 * df / est0.enbw_hz / smooth_bins as f64).max(2.0);
    let zero_thr = sigma * ((2.0 * n_indep.ln()).sqrt() + 1.5);
    let depth = 1.0 - best.0;
    Ok(SqueezingMeasurement {
        depth: ValueWithSigma { value: depth, sigma },
        theta_opt: best.1,
        freq_opt_hz: best.2,
        min_value: best.0,
        zero_depth_threshold: zero_thr,
        significant: depth > zero_thr,
    })
}

/// Spec-level convenience on in-memory pairs: rotate, normalize by the
/// signal-blocked reference, smooth, find the global minimum.
pub fn measure_squeezing(
    pair: &QuadraturePair,
    shot_reference: &QuadraturePair,
    theta_grid: &[f64],
) -> Result<SqueezingMeasurement> {
    let settings = EstimationSettings::default();
    let band = auto_band(pair, &settings)?;
    let welch = settings.welch(pair.sample_rate());
    let mut normalized = Vec::with_capacity(theta_grid.len());
    for &th in theta_grid {
        let sig = crate::spectral::welch_psd_rotated(pair, th, &welch)?;
        let shot = crate::spectral::welch_psd_rotated(shot_reference, th, &welch)?;
        normalized.push(crate::spectral::shot_normalize(&sig, &shot, 33)?);
    }
    let refs: Vec<&SpectrumEstimate> = normalized.iter().collect();
    // Half-maximum linewidth estimate for the smoothing bandwidth.
    let gamma_hz = (band.1 - band.0) / (2.0 * settings.fit_band_linewidths);
    measure_squeezing_from_normalized(theta_grid, &refs, band, 0.5 * gamma_hz)
}

/// Complete report of the evaluation chain, serialized with fixed field
/// names (all rates as ordinary frequencies in Hz).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReport {
    pub n_occ: f64,
    pub n_occ_sigma: f64,
    pub gamma_hz: f64,
    pub gamma_hz_sigma: f64,
    pub omega_drift_hz_per_s: f64,
    pub gamma_tot_hz: f64,
    pub gamma_meas_hz: f64,
    pub gamma_ba_hz: f64,
    pub c_q: f64,
    pub eta_d: f64,
    pub squeeze_depth: f64,
    pub squeeze_theta_rad: f64,
    pub squeeze_freq_hz: f64,
    // supplementary fields
    pub gamma_tot_hz_sigma: f64,
    pub gamma_meas_hz_sigma: f64,
    pub gamma_ba_hz_sigma: f64,
    pub c_q_sigma: f64,
    pub eta_d_sigma: f64,
    pub squeeze_depth_sigma: f64,
    pub squeeze_significant: bool,
    pub omega_q_hz: f64,
    pub cross_ratio: f64,
    pub log_likelihood: f64,
    pub n_segments: usize,
}

impl FitReport {
    pub fn validate(&self) -> Result<()> {
        let sigmas = [
            self.n_occ_sigma,
            self.gamma_hz_sigma,
            self.gamma_tot_hz_sigma,
            self.gamma_meas_hz_sigma,
        ];
        if sigmas.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Numeric("non-positive uncertainty in report".into()));
        }
        // identities as computed
        let tot = self.n_occ * self.gamma_hz;
        if (tot - self.gamma_tot_hz).abs() > 1e-9 * tot.abs() {
            return Err(Error::Numeric("report identity n·γ = Γ_tot violated".into()));
        }
        Ok(())
    }
}

/// Run the full chain on collected spectra. `gamma_th` (rad/s) is the
/// externally estimated thermal decoherence rate.
pub fn analyze_chain(
    signal: &ChainSpectra,
    shot: &ChainSpectra,
    gamma_th: f64,
    settings: &EstimationSettings,
) -> Result<FitReport> {
    // 1. Damping and resonance drift.
    let damping = fit_damping_from_periodograms(&signal.damping, settings)?;
    let gamma = damping.gamma;
    let omega_q = damping.omega_q_mean;

    // 2. Occupation from the cross-spectrum ratio.
    let band = (
        signal.damping.freqs[0],
        signal.damping.freqs[signal.damping.freqs.len() - 1],
    );
    let occupation = fit_occupation_from_spectra(signal, band, (omega_q, gamma.value), 100.0)?;

    // 3. Total decoherence rate.
    let gamma_tot = heating_rate(occupation.n_occ, gamma)?;

    // 4. Measurement rate from the normalized phase-quadrature spectrum.
    let norm_pi2 = crate::spectral::shot_normalize(&signal.psd_pi2, &shot.psd_pi2, 33)?;
    let f_lo = (omega_q - 20.0 * gamma.value) / TAU;
    let f_hi = (omega_q + 20.0 * gamma.value) / TAU;
    let lo = norm_pi2.bin_at(f_lo);
    let hi = norm_pi2.bin_at(f_hi);
    let gamma_meas = fit_measurement_rate_from_normalized(
        &norm_pi2.frequencies[lo..=hi],
        &norm_pi2.real_values()[lo..=hi],
        gamma_tot.value,
        omega_q,
        gamma.value,
        norm_pi2.n_avg_eff,
        norm_pi2.enbw_hz / norm_pi2.df(),
    )?;

    // 5. Derived budget.
    let budget = derive_budget(gamma_tot, gamma_meas, gamma_th)?;

    // 6. Squeezing depth over the θ grid.
    let normalized: Vec<SpectrumEstimate> = signal
        .theta_psds
        .iter()
        .zip(&shot.theta_psds)
        .map(|(s, r)| crate::spectral::shot_normalize(s, r, 33))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&SpectrumEstimate> = normalized.iter().collect();
    let squeeze_band = (
        (omega_q - settings.squeeze_band_linewidths * gamma.value) / TAU,
        (omega_q + settings.squeeze_band_linewidths * gamma.value) / TAU,
    );
    let squeezing = measure_squeezing_from_normalized(
        &signal.theta_grid,
        &refs,
        squeeze_band,
        settings.smooth_bandwidth_factor * gamma.value / TAU,
    )?;

    let report = FitReport {
        n_occ: occupation.n_occ.value,
        n_occ_sigma: occupation.n_occ.sigma,
        gamma_hz: gamma.value / TAU,
        gamma_hz_sigma: gamma.sigma / TAU,
        omega_drift_hz_per_s: damping.omega_drift_rate / TAU,
        gamma_tot_hz: occupation.n_occ.value * (gamma.value / TAU),
        gamma_meas_hz: gamma_meas.value / TAU,
        gamma_ba_hz: budget.gamma_ba.value / TAU,
        c_q: budget.c_q.value,
        eta_d: budget.eta_d.value,
        squeeze_depth: squeezing.depth.value,
        squeeze_theta_rad: squeezing.theta_opt,
        squeeze_freq_hz: squeezing.freq_opt_hz,
        gamma_tot_hz_sigma: gamma_tot.sigma / TAU,
        gamma_meas_hz_sigma: gamma_meas.sigma / TAU,
        gamma_ba_hz_sigma: budget.gamma_ba.sigma / TAU,
        c_q_sigma: budget.c_q.sigma,
        eta_d_sigma: budget.eta_d.sigma,
        squeeze_depth_sigma: squeezing.depth.sigma,
        squeeze_significant: squeezing.significant,
        omega_q_hz: omega_q / TAU,
        cross_ratio: occupation.ratio,
        log_likelihood: damping.log_likelihood,
        n_segments: damping.n_segments,
    };
    report.validate()?;
    Ok(report)
}

/// Effective averages helper re-exported for pipeline use.
pub fn n_eff_for(welch: &WelchSettings, n_segments: usize) -> f64 {
    let w = welch.window.samples(welch.segment_len);
    effective_averages(&w, welch.step(), n_segments)
}
