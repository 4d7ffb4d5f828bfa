//! Closed-form spectra of a measured, feedback-damped nanomechanical
//! oscillator and the optical quadratures it scatters.
//!
//! Everything here is a pure function of value types. Angular frequencies
//! (rad/s) are used throughout; conversion to Hz happens only at I/O
//! boundaries. Spectral densities are double-sided.
//!
//! The central object is the detected quadrature spectrum
//!
//! ```text
//! S_θθ(Ω) = 1 + (4Γ_meas/z_zpf²)·[ S_zz(Ω)·sin²θ + (ħ/2)·Re{χ_m(Ω)}·sin2θ ]
//! ```
//!
//! in shot-noise units. The first term is the vacuum floor, the second the
//! transduced mechanical motion, and the third the amplitude–phase
//! correlation that can pull the total below 1 (squeezing) near resonance.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::constants::HBAR;
use crate::error::{Error, Result};
use crate::optimize::{nelder_mead, NelderMeadOptions};

/// Mechanical oscillator parameters: mass, trap frequency and total
/// (feedback-dominated) damping, all in SI.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MechanicalParams {
    /// Particle mass, kg.
    pub mass: f64,
    /// Trap angular frequency Ω_q, rad/s.
    pub omega_q: f64,
    /// Total damping γ, rad/s.
    pub gamma: f64,
}

impl MechanicalParams {
    pub fn new(mass: f64, omega_q: f64, gamma: f64) -> Result<Self> {
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(Error::Config(format!("mass must be positive, got {mass}")));
        }
        if !(omega_q > 0.0 && omega_q.is_finite()) {
            return Err(Error::Config(format!("omega_q must be positive, got {omega_q}")));
        }
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::Config(format!("gamma must be positive, got {gamma}")));
        }
        Ok(Self { mass, omega_q, gamma })
    }

    /// Mass of a sphere of the given radius and density.
    pub fn from_sphere(radius: f64, density: f64, omega_q: f64, gamma: f64) -> Result<Self> {
        if !(radius > 0.0 && density > 0.0) {
            return Err(Error::Config("radius and density must be positive".into()));
        }
        let mass = density * 4.0 / 3.0 * std::f64::consts::PI * radius.powi(3);
        Self::new(mass, omega_q, gamma)
    }

    /// Position zero-point fluctuation √(ħ/2mΩ_q), m.
    pub fn z_zpf(&self) -> f64 {
        (HBAR / (2.0 * self.mass * self.omega_q)).sqrt()
    }

    /// Momentum zero-point fluctuation √(ħmΩ_q/2), kg·m/s.
    pub fn p_zpf(&self) -> f64 {
        (HBAR * self.mass * self.omega_q / 2.0).sqrt()
    }

    /// The analytic spectra assume γ ≪ Ω_q. Inputs violating this are
    /// accepted but should be flagged by callers.
    pub fn is_high_q(&self) -> bool {
        self.gamma / self.omega_q < 1e-2
    }
}

/// Decoherence rates and detection efficiency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecoherenceBudget {
    /// Thermal decoherence rate Γ_th, rad/s.
    pub gamma_th: f64,
    /// Backaction decoherence rate Γ_ba, rad/s.
    pub gamma_ba: f64,
    /// Detection efficiency per quadrature, in [0, 1].
    pub eta_d: f64,
}

impl DecoherenceBudget {
    pub fn new(gamma_th: f64, gamma_ba: f64, eta_d: f64) -> Result<Self> {
        if !(gamma_th >= 0.0 && gamma_th.is_finite()) {
            return Err(Error::Config(format!("gamma_th must be >= 0, got {gamma_th}")));
        }
        if !(gamma_ba >= 0.0 && gamma_ba.is_finite()) {
            return Err(Error::Config(format!("gamma_ba must be >= 0, got {gamma_ba}")));
        }
        if !(0.0..=1.0).contains(&eta_d) {
            return Err(Error::Config(format!("eta_d must be in [0,1], got {eta_d}")));
        }
        Ok(Self { gamma_th, gamma_ba, eta_d })
    }

    /// Measurement rate Γ_meas = η_d·Γ_ba, rad/s.
    pub fn gamma_meas(&self) -> f64 {
        self.eta_d * self.gamma_ba
    }

    /// Total decoherence rate Γ_tot = Γ_th + Γ_ba, rad/s.
    pub fn gamma_tot(&self) -> f64 {
        self.gamma_th + self.gamma_ba
    }

    /// Quantum cooperativity C_q = Γ_ba/Γ_th.
    pub fn cooperativity(&self) -> f64 {
        self.gamma_ba / self.gamma_th
    }

    /// Steady-state occupation n = Γ_tot/γ under feedback cooling.
    pub fn occupation(&self, params: &MechanicalParams) -> f64 {
        self.gamma_tot() / params.gamma
    }
}

/// Quadrature analysis angle, canonically in [-π/2, π/2].
///
/// Quadratures are identified modulo π up to sign (X_{θ+π} = -X_θ), so all
/// spectra are π-periodic in θ and the canonical fold loses nothing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureAngle(f64);

impl QuadratureAngle {
    /// Fold an arbitrary angle into the canonical range. Values already in
    /// [-π/2, π/2] are returned unchanged, which makes the fold idempotent.
    pub fn new(theta: f64) -> Self {
        use std::f64::consts::{FRAC_PI_2, PI};
        if (-FRAC_PI_2..=FRAC_PI_2).contains(&theta) {
            QuadratureAngle(theta)
        } else {
            QuadratureAngle((theta + FRAC_PI_2).rem_euclid(PI) - FRAC_PI_2)
        }
    }

    pub fn radians(&self) -> f64 {
        self.0
    }
}

/// Unit tag for a model spectrum curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CurveUnit {
    /// Dimensionless, normalized to the shot-noise floor.
    ShotNoise,
    /// Displacement spectral density, m²/Hz.
    MetersSquaredPerHz,
}

/// A model spectrum sampled over an angular-frequency grid.
#[derive(Debug, Clone)]
pub struct SpectrumCurve {
    /// Strictly increasing grid, rad/s.
    pub frequencies: Vec<f64>,
    pub values: Vec<Complex64>,
    pub unit: CurveUnit,
}

impl SpectrumCurve {
    pub fn new(frequencies: Vec<f64>, values: Vec<Complex64>, unit: CurveUnit) -> Result<Self> {
        if frequencies.len() != values.len() {
            return Err(Error::Config("frequency and value grids differ in length".into()));
        }
        if frequencies.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("frequency grid must be strictly increasing".into()));
        }
        Ok(Self { frequencies, values, unit })
    }
}

/// Mechanical susceptibility χ_m(ω) = 1/(m(Ω_q² - ω² - iγω)), m/N.
pub fn mechanical_susceptibility(params: &MechanicalParams, omega: f64) -> Complex64 {
    let d = Complex64::new(
        params.omega_q * params.omega_q - omega * omega,
        -params.gamma * omega,
    );
    1.0 / (params.mass * d)
}

/// Double-sided motional displacement spectrum, m²/Hz:
/// S_qq(ω) = z_zpf²·4Ω_q²(γ·n_th + Γ_ba) / ((Ω_q²-ω²)² + ω²γ²).
///
/// The thermal contribution enters as an effective bath occupation against
/// the total damping, γ·n_th = Γ_th, so either parameterization can be used.
pub fn motional_psd(
    params: &MechanicalParams,
    budget: &DecoherenceBudget,
    n_th: f64,
    omega: f64,
) -> f64 {
    let z2 = params.z_zpf() * params.z_zpf();
    let wq2 = params.omega_q * params.omega_q;
    let denom = (wq2 - omega * omega).powi(2) + omega * omega * params.gamma * params.gamma;
    z2 * 4.0 * wq2 * (params.gamma * n_th + budget.gamma_ba) / denom
}

/// Force-noise spectral density S_FF = 4·p_zpf²·Γ for a decoherence rate Γ,
/// N²/Hz double-sided.
pub fn force_noise_psd(params: &MechanicalParams, rate: f64) -> f64 {
    4.0 * params.p_zpf() * params.p_zpf() * rate
}

/// Displacement noise S_zz(Ω) = (S_FF^ba + S_FF^th)|χ_m|², m²/Hz.
pub fn displacement_noise_psd(params: &MechanicalParams, budget: &DecoherenceBudget, omega: f64) -> f64 {
    let s_ff = force_noise_psd(params, budget.gamma_tot());
    s_ff * mechanical_susceptibility(params, omega).norm_sqr()
}

/// Detected quadrature spectrum in shot-noise units (double-sided),
/// the measured counterpart of every squeezing figure in this crate.
pub fn detected_quadrature_psd(
    params: &MechanicalParams,
    budget: &DecoherenceBudget,
    theta: QuadratureAngle,
    omega: f64,
) -> f64 {
    let th = theta.radians();
    let z2 = params.z_zpf() * params.z_zpf();
    let gm = budget.gamma_meas();
    let s_zz = displacement_noise_psd(params, budget, omega);
    let re_chi = mechanical_susceptibility(params, omega).re;
    let (s, _) = th.sin_cos();
    1.0 + 4.0 * gm / z2 * (s_zz * s * s + 0.5 * HBAR * re_chi * (2.0 * th).sin())
}

/// The same spectrum referred to displacement units, m²/Hz:
/// S_imp + sin²θ·[(S_FF^ba + S_FF^th)|χ|² - 2·Re{χ·S_qF(θ)}] with the
/// force-displacement correlation S_qF(θ) = -(ħ/2)·cot(θ).
///
/// Undefined at θ = 0 exactly (cot singularity); callers wanting the
/// amplitude quadrature use [`detected_quadrature_psd`].
pub fn displacement_referred_psd(
    params: &MechanicalParams,
    budget: &DecoherenceBudget,
    theta: QuadratureAngle,
    omega: f64,
    s_imp: f64,
) -> Result<f64> {
    let th = theta.radians();
    if th == 0.0 {
        return Err(Error::Domain(
            "displacement-referred spectrum is undefined at theta = 0 (cot singularity)".into(),
        ));
    }
    let s_zz = displacement_noise_psd(params, budget, omega);
    let chi = mechanical_susceptibility(params, omega);
    let s_qf = -0.5 * HBAR * th.cos() / th.sin();
    let sin2 = th.sin() * th.sin();
    Ok(s_imp + sin2 * (s_zz - 2.0 * chi.re * s_qf))
}

/// Cross-spectrum of the π/4 and 3π/4 quadratures,
/// S = 2D(n+1/2)·Im{χ_m} + i·D·Im{χ_m} with D = 4Γ_meas·Ω_q·m.
///
/// Its real/imaginary ratio is 2n+1 wherever Im χ_m ≠ 0, which is what makes
/// it a calibration-free thermometer.
pub fn cross_spectrum_model(
    params: &MechanicalParams,
    budget: &DecoherenceBudget,
    n_occ: f64,
    omega: f64,
) -> Complex64 {
    let d = 4.0 * budget.gamma_meas() * params.omega_q * params.mass;
    let im_chi = mechanical_susceptibility(params, omega).im;
    Complex64::new(2.0 * d * (n_occ + 0.5) * im_chi, d * im_chi)
}

/// One local minimum of the detected spectrum.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SqueezeMinimum {
    /// Frequency of the minimum, rad/s.
    pub omega: f64,
    /// Quadrature angle of the minimum, rad.
    pub theta: f64,
    /// Spectrum value there (shot-noise units, < 1 when squeezed).
    pub value: f64,
}

/// Extremal structure of S_θθ(Ω): two symmetric minima straddling the
/// resonance plus a saddle at (Ω_q, 0).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SqueezingExtrema {
    /// Minimum on the Ω > Ω_q side (positive angle).
    pub upper: SqueezeMinimum,
    /// Minimum on the Ω < Ω_q side (negative angle).
    pub lower: SqueezeMinimum,
    /// Global minimum value over both branches.
    pub min_value: f64,
    /// 1 - min_value: the squeezing depth.
    pub depth: f64,
    /// Spectrum value at the saddle candidate (Ω_q, 0); equals 1.
    pub saddle_value: f64,
    /// Whether the finite-difference Hessian at (Ω_q, 0) has negative
    /// determinant, i.e. the point is a genuine saddle.
    pub saddle_verified: bool,
}

/// Locate both squeezing minima of the detected quadrature spectrum over
/// Ω ∈ [Ω_q - 50γ, Ω_q + 50γ], θ ∈ [-π/2, π/2].
///
/// Deterministic: coarse grid seeding (ties broken toward lower Ω) followed
/// by a bounded simplex refinement in each half-plane.
pub fn find_squeezing_extrema(
    params: &MechanicalParams,
    budget: &DecoherenceBudget,
) -> Result<SqueezingExtrema> {
    use std::f64::consts::FRAC_PI_2;
    let wq = params.omega_q;
    let g = params.gamma;
    let lo_w = (wq - 50.0 * g).max(0.25 * wq);
    let hi_w = wq + 50.0 * g;

    let s = |omega: f64, theta: f64| {
        detected_quadrature_psd(params, budget, QuadratureAngle::new(theta), omega)
    };

    // Coarse grid per half-plane. The minima sit at detunings of order a few
    // tens of γ at most, so 301 frequency points resolve the basin.
    let refine_half = |sign: f64| -> SqueezeMinimum {
        let n_w = 301;
        let n_t = 91;
        let mut best = (f64::INFINITY, wq, sign * 0.05);
        for it in 0..n_t {
            // Open interval in θ: exclude 0 where the branch degenerates.
            let theta = sign * (1e-4 + (FRAC_PI_2 - 1e-4) * it as f64 / (n_t - 1) as f64);
            for iw in 0..n_w {
                let omega = lo_w + (hi_w - lo_w) * iw as f64 / (n_w - 1) as f64;
                let v = s(omega, theta);
                // Strict inequality keeps the first (lowest-Ω) grid point on ties.
                if v < best.0 {
                    best = (v, omega, theta);
                }
            }
        }
        let opts = NelderMeadOptions {
            max_iterations: 4000,
            x_tol: 1e-12,
            f_tol: 1e-15,
        };
        let (t_lo, t_hi) = if sign > 0.0 {
            (1e-6, FRAC_PI_2)
        } else {
            (-FRAC_PI_2, -1e-6)
        };
        let r = nelder_mead(
            |x| s(x[0], x[1]),
            &[best.1, best.2],
            &[g, 0.01],
            &[lo_w, t_lo],
            &[hi_w, t_hi],
            &opts,
        );
        SqueezeMinimum {
            omega: r.x[0],
            theta: r.x[1],
            value: r.value,
        }
    };

    let upper = refine_half(1.0);
    let lower = refine_half(-1.0);
    let min_value = upper.value.min(lower.value);
    if min_value >= 1.0 - 1e-6 {
        return Err(Error::NoSqueezing { min: min_value });
    }

    // Saddle check at (Ω_q, 0) by central differences.
    let saddle_value = s(wq, 0.0);
    let hw = g * 1e-2;
    let ht = 1e-4;
    let s_ww = (s(wq + hw, 0.0) - 2.0 * saddle_value + s(wq - hw, 0.0)) / (hw * hw);
    let s_tt = (s(wq, ht) - 2.0 * saddle_value + s(wq, -ht)) / (ht * ht);
    let s_wt = (s(wq + hw, ht) - s(wq + hw, -ht) - s(wq - hw, ht) + s(wq - hw, -ht)) / (4.0 * hw * ht);
    let det = s_ww * s_tt - s_wt * s_wt;
    let saddle_verified = det < 0.0 && (saddle_value - 1.0).abs() < 1e-9;

    Ok(SqueezingExtrema {
        upper,
        lower,
        min_value,
        depth: 1.0 - min_value,
        saddle_value,
        saddle_verified,
    })
}

/// Render the detected spectrum over a frequency grid at fixed θ.
pub fn detected_psd_curve(
    params: &MechanicalParams,
    budget: &DecoherenceBudget,
    theta: QuadratureAngle,
    omegas: &[f64],
) -> Result<SpectrumCurve> {
    let values = omegas
        .iter()
        .map(|&w| Complex64::new(detected_quadrature_psd(params, budget, theta, w), 0.0))
        .collect();
    SpectrumCurve::new(omegas.to_vec(), values, CurveUnit::ShotNoise)
}


#[cfg(test)]
mod properties {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(256))]

        /// The detected spectrum is a genuine power spectral density: it is
        /// non-negative for every admissible parameter draw.
        #[test]
        fn detected_psd_nonnegative(
            wq_hz in 1e3f64..1e7,
            q_log in 0.5f64..6.0,
            gth_rel in 0.0f64..1e4,
            gba_rel in 0.0f64..1e4,
            eta in 0.0f64..1.0,
            th in -PI/2.0..PI/2.0,
            w_rel in 0.0f64..5.0,
        ) {
            let tau = 2.0 * PI;
            let gamma = tau * wq_hz / 10f64.powf(q_log);
            let params = MechanicalParams::new(1e-18, tau * wq_hz, gamma).unwrap();
            let budget = DecoherenceBudget::new(gamma * gth_rel, gamma * gba_rel, eta).unwrap();
            let w = w_rel * params.omega_q;
            let v = detected_quadrature_psd(&params, &budget, QuadratureAngle::new(th), w);
            prop_assert!(v >= -1e-9, "negative PSD {v}");
        }

        /// Folding into [-π/2, π/2] is idempotent for any angle.
        #[test]
        fn angle_fold_idempotent(th in -50.0f64..50.0) {
            let a = QuadratureAngle::new(th);
            prop_assert_eq!(a.radians(), QuadratureAngle::new(a.radians()).radians());
            prop_assert!(a.radians() >= -PI/2.0 - 1e-12 && a.radians() <= PI/2.0 + 1e-12);
        }

        /// Susceptibility stays finite for every finite drive frequency.
        #[test]
        fn susceptibility_finite(w_rel in 0.0f64..100.0) {
            let tau = 2.0 * PI;
            let params = MechanicalParams::new(1e-18, tau * 76.9e3, tau * 89.7).unwrap();
            let chi = mechanical_susceptibility(&params, w_rel * params.omega_q);
            prop_assert!(chi.re.is_finite() && chi.im.is_finite());
        }
    }
}
