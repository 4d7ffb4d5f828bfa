//! Detector and dynamic-range budget calculator.
//!
//! Closed-form design equations for shot-noise-limited heterodyne detection:
//! saturation power from the output voltage swing, the local-oscillator
//! power limit, shot and dark noise current densities, their ratio, and the
//! Lamb-Dicke dynamic-range requirement that sizes the digitizer.

use serde::{Deserialize, Serialize};

use crate::constants::{ELEMENTARY_CHARGE, HBAR, PLANCK, SPEED_OF_LIGHT};
use crate::error::{Error, Result};

/// Balanced photodetector parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorSpec {
    /// Noise-equivalent power, W/√Hz.
    pub nep: f64,
    /// Maximum output voltage swing magnitude, V.
    pub delta_v: f64,
    /// Transimpedance gain, V/A.
    pub g_t: f64,
    /// Damage threshold per diode, W.
    pub p_max: f64,
    /// Quantum efficiency.
    pub eta_q: f64,
    /// Operating wavelength, m.
    pub wavelength: f64,
}

impl DetectorSpec {
    pub fn validate(&self) -> Result<()> {
        let all_positive = self.nep > 0.0
            && self.delta_v > 0.0
            && self.g_t > 0.0
            && self.p_max > 0.0
            && self.wavelength > 0.0;
        if !all_positive {
            return Err(Error::Config("detector parameters must be positive".into()));
        }
        if !(self.eta_q > 0.0 && self.eta_q <= 1.0) {
            return Err(Error::Config(format!("eta_q must be in (0,1], got {}", self.eta_q)));
        }
        Ok(())
    }

    /// Photon energy hν at the operating wavelength, J.
    pub fn photon_energy(&self) -> f64 {
        PLANCK * SPEED_OF_LIGHT / self.wavelength
    }
}

/// Trap and particle parameters for the dynamic-range estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrapSpec {
    /// Particle radius, m.
    pub radius: f64,
    /// Particle density, kg/m³.
    pub density: f64,
    /// Wavelength, m.
    pub wavelength: f64,
    /// Axial trap frequency, rad/s.
    pub omega_z: f64,
    /// Geometric factor of order one in the Lamb-Dicke parameter.
    pub alpha_geom: f64,
    /// Total heterodyne detection efficiency.
    pub eta_total: f64,
}

impl TrapSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = self.radius > 0.0
            && self.density > 0.0
            && self.wavelength > 0.0
            && self.omega_z > 0.0
            && self.alpha_geom > 0.0
            && self.eta_total > 0.0;
        if !ok {
            return Err(Error::Config("trap parameters must be positive".into()));
        }
        Ok(())
    }

    pub fn mass(&self) -> f64 {
        self.density * 4.0 / 3.0 * std::f64::consts::PI * self.radius.powi(3)
    }

    pub fn z_zpf(&self) -> f64 {
        (HBAR / (2.0 * self.mass() * self.omega_z)).sqrt()
    }
}

/// Saturation power difference ΔP_sat = (hν/(e·η_q))·(ΔV/g_t), W.
/// Magnitude convention: the electron-charge sign is dropped.
pub fn saturation_power(spec: &DetectorSpec) -> Result<f64> {
    spec.validate()?;
    Ok(spec.photon_energy() / (ELEMENTARY_CHARGE * spec.eta_q) * spec.delta_v / spec.g_t)
}

/// Which constraint set the LO power limit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoLimitBranch {
    DiodeDamage,
    Saturation,
}

/// P_lo < min{2·P_max, ΔP_sat²/P_sig}.
pub fn lo_power_limit(spec: &DetectorSpec, p_sig: f64) -> Result<(f64, LoLimitBranch)> {
    if !(p_sig > 0.0) {
        return Err(Error::Config("signal power must be positive".into()));
    }
    let dp = saturation_power(spec)?;
    let damage = 2.0 * spec.p_max;
    let saturation = dp * dp / p_sig;
    if damage <= saturation {
        Ok((damage, LoLimitBranch::DiodeDamage))
    } else {
        Ok((saturation, LoLimitBranch::Saturation))
    }
}

/// Shot and dark noise current densities, A/√Hz:
/// √S_sn = e·√(2η_q·P_lo/hν), √S_dn = NEP·η_q·e/hν.
pub fn noise_currents(spec: &DetectorSpec, p_lo: f64) -> Result<(f64, f64)> {
    spec.validate()?;
    if !(p_lo > 0.0) {
        return Err(Error::Config("LO power must be positive".into()));
    }
    let hv = spec.photon_energy();
    let shot = ELEMENTARY_CHARGE * (2.0 * spec.eta_q * p_lo / hv).sqrt();
    let dark = spec.nep * spec.eta_q * ELEMENTARY_CHARGE / hv;
    Ok((shot, dark))
}

/// Shot-to-dark power ratio 2hν·P_lo/(η_q·NEP²) and the same in dB.
/// NEP → 0 returns +∞.
pub fn snr_shot_to_dark(spec: &DetectorSpec, p_lo: f64) -> Result<(f64, f64)> {
    spec.validate()?;
    if !(p_lo > 0.0) {
        return Err(Error::Config("LO power must be positive".into()));
    }
    if spec.nep == 0.0 {
        return Ok((f64::INFINITY, f64::INFINITY));
    }
    let ratio = 2.0 * spec.photon_energy() * p_lo / (spec.eta_q * spec.nep * spec.nep);
    Ok((ratio, 10.0 * ratio.log10()))
}

/// Lamb-Dicke parameter η_LD = α·k·z_zpf and the required dynamic range
/// η_total/η_LD², plus the (2^bits)² comparison value of an ADC.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DynamicRange {
    pub eta_ld: f64,
    pub required_range: f64,
    pub adc_bits: u32,
    pub adc_range: f64,
    pub adc_sufficient: bool,
}

pub fn lamb_dicke_dynamic_range(trap: &TrapSpec, adc_bits: u32) -> Result<DynamicRange> {
    trap.validate()?;
    let k = 2.0 * std::f64::consts::PI / trap.wavelength;
    let eta_ld = trap.alpha_geom * k * trap.z_zpf();
    let required = trap.eta_total / (eta_ld * eta_ld);
    let adc = (2f64.powi(adc_bits as i32)).powi(2);
    Ok(DynamicRange {
        eta_ld,
        required_range: required,
        adc_bits,
        adc_range: adc,
        adc_sufficient: adc >= required,
    })
}

/// Full budget report for the CLI, serialized as JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BudgetReport {
    pub detector: DetectorSpec,
    pub trap: TrapSpec,
    pub p_sig: f64,
    pub p_lo: f64,
    pub saturation_power_w: f64,
    pub lo_power_limit_w: f64,
    pub lo_limit_branch: LoLimitBranch,
    pub shot_current_a_rthz: f64,
    pub dark_current_a_rthz: f64,
    pub snr_shot_to_dark: f64,
    pub snr_shot_to_dark_db: f64,
    /// Ratio evaluated at the LO power limit (the best the detector can do).
    pub snr_at_limit: f64,
    pub snr_at_limit_db: f64,
    pub eta_ld: f64,
    pub required_dynamic_range: f64,
    pub adc_bits: u32,
    pub adc_dynamic_range: f64,
    pub adc_sufficient: bool,
}

/// Evaluate every budget quantity at an operating point.
pub fn budget_report(
    detector: &DetectorSpec,
    trap: &TrapSpec,
    p_sig: f64,
    p_lo: f64,
    adc_bits: u32,
) -> Result<BudgetReport> {
    let sat = saturation_power(detector)?;
    let (limit, branch) = lo_power_limit(detector, p_sig)?;
    let (shot, dark) = noise_currents(detector, p_lo)?;
    let (snr, snr_db) = snr_shot_to_dark(detector, p_lo)?;
    let (snr_lim, snr_lim_db) = snr_shot_to_dark(detector, limit)?;
    let dr = lamb_dicke_dynamic_range(trap, adc_bits)?;
    Ok(BudgetReport {
        detector: *detector,
        trap: *trap,
        p_sig,
        p_lo,
        saturation_power_w: sat,
        lo_power_limit_w: limit,
        lo_limit_branch: branch,
        shot_current_a_rthz: shot,
        dark_current_a_rthz: dark,
        snr_shot_to_dark: snr,
        snr_shot_to_dark_db: snr_db,
        snr_at_limit: snr_lim,
        snr_at_limit_db: snr_lim_db,
        eta_ld: dr.eta_ld,
        required_dynamic_range: dr.required_range,
        adc_bits,
        adc_dynamic_range: dr.adc_range,
        adc_sufficient: dr.adc_sufficient,
    })
}

/// The detector of the experiment this toolkit models: NEP 8 pW/√Hz,
/// ±3.6 V swing, 10⁴ V/A transimpedance, 5 mW per diode, assumed η_q 0.85
/// at 1064 nm.
pub fn default_detector() -> DetectorSpec {
    DetectorSpec {
        nep: 8e-12,
        delta_v: 3.6,
        g_t: 1e4,
        p_max: 5e-3,
        eta_q: 0.85,
        wavelength: 1064e-9,
    }
}

/// The r = 43 nm silica particle at Ω_z/2π = 76.9 kHz with α = 1.5 and a
/// total heterodyne efficiency of 0.3.
pub fn default_trap() -> TrapSpec {
    TrapSpec {
        radius: 43e-9,
        density: crate::constants::SILICA_DENSITY,
        wavelength: 1064e-9,
        omega_z: 2.0 * std::f64::consts::PI * 76.9e3,
        alpha_geom: 1.5,
        eta_total: 0.3,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn saturation_power_by_hand() {
        // hν/(e·η_q)·ΔV/g_t at 1064 nm, η_q = 0.85, ΔV = 3.6 V, g_t = 10⁴:
        // 4.935e-4 W by direct arithmetic.
        let spec = default_detector();
        let p = saturation_power(&spec).unwrap();
        assert_relative_eq!(p, 4.935240096854499e-4, max_relative = 1e-9);
        // doubling the transimpedance halves the saturation power
        let mut spec2 = spec;
        spec2.g_t *= 2.0;
        assert_relative_eq!(saturation_power(&spec2).unwrap(), p / 2.0, max_relative = 1e-12);
        // ΔV → 0 gives 0
        let mut spec3 = spec;
        spec3.delta_v = 1e-30;
        assert!(saturation_power(&spec3).unwrap() < 1e-30);
    }

    #[test]
    fn lo_limit_picks_diode_branch_at_operating_point() {
        // P_sig = 100 nW: saturation branch allows ~2.4 W, so the 2·P_max
        // = 10 mW diode threshold wins.
        let spec = default_detector();
        let (limit, branch) = lo_power_limit(&spec, 100e-9).unwrap();
        assert_relative_eq!(limit, 0.01, max_relative = 1e-12);
        assert_eq!(branch, LoLimitBranch::DiodeDamage);
        // enormous signal power pushes the saturation branch below
        let (_, branch2) = lo_power_limit(&spec, 1.0).unwrap();
        assert_eq!(branch2, LoLimitBranch::Saturation);
        // boundary: both branches equal
        let dp = saturation_power(&spec).unwrap();
        let p_sig_eq = dp * dp / (2.0 * spec.p_max);
        let (limit3, _) = lo_power_limit(&spec, p_sig_eq).unwrap();
        assert_relative_eq!(limit3, 2.0 * spec.p_max, max_relative = 1e-12);
    }

    #[test]
    fn noise_currents_by_hand() {
        // P_lo = 4 mW: shot ≈ 3.058e-11 A/√Hz, dark independent of P_lo.
        let spec = default_detector();
        let (shot, dark) = noise_currents(&spec, 4e-3).unwrap();
        assert_relative_eq!(shot, 3.0577170709915716e-11, max_relative = 1e-9);
        assert_relative_eq!(dark, 5.835582349550902e-12, max_relative = 1e-9);
        let (_, dark2) = noise_currents(&spec, 8e-3).unwrap();
        assert_eq!(dark, dark2);
        // shot scales as √P_lo: quadrupling doubles
        let (shot4, _) = noise_currents(&spec, 16e-3).unwrap();
        assert_relative_eq!(shot4, 2.0 * shot, max_relative = 1e-12);
    }

    #[test]
    fn snr_shot_to_dark_by_hand() {
        // 2hν·P_lo/(η_q·NEP²) ≈ 27.46 (14.4 dB) at the 4 mW operating
        // point; comfortably above the measured 11 dB that includes
        // digitization noise.
        let spec = default_detector();
        let (ratio, db) = snr_shot_to_dark(&spec, 4e-3).unwrap();
        assert_relative_eq!(ratio, 27.45529988319505, max_relative = 1e-9);
        assert_relative_eq!(db, 14.386261916952066, max_relative = 1e-9);
        assert!(db > 11.0);
        // linear in P_lo
        let (r2, _) = snr_shot_to_dark(&spec, 8e-3).unwrap();
        assert_relative_eq!(r2, 2.0 * ratio, max_relative = 1e-12);
        // NEP → 0 is guarded
        let mut ideal = spec;
        ideal.nep = 0.0;
        let (inf, _) = snr_shot_to_dark(&ideal, 4e-3).unwrap();
        assert!(inf.is_infinite());
    }

    #[test]
    fn snr_at_limit_equals_direct_bound() {
        // Substituting the LO limit into the ratio must reproduce the
        // min{4hν·P_max/(η_q·NEP²), 2h³ν³ΔV²/(e²η_q²g_t²NEP²P_sig)} bound.
        let spec = default_detector();
        for &p_sig in &[1e-9, 100e-9, 1e-3, 1.0] {
            let (limit, _) = lo_power_limit(&spec, p_sig).unwrap();
            let (via_limit, _) = snr_shot_to_dark(&spec, limit).unwrap();
            let hv = spec.photon_energy();
            let e = ELEMENTARY_CHARGE;
            let direct = (4.0 * hv * spec.p_max / (spec.eta_q * spec.nep * spec.nep)).min(
                2.0 * hv.powi(3) * spec.delta_v * spec.delta_v
                    / (e * e
                        * spec.eta_q.powi(2)
                        * spec.g_t.powi(2)
                        * spec.nep.powi(2)
                        * p_sig),
            );
            assert_relative_eq!(via_limit, direct, max_relative = 1e-12);
        }
    }

    #[test]
    fn dynamic_range_paper_numbers() {
        // r = 43 nm, ρ = 1850, λ = 1064 nm, Ω_z/2π = 76.9 kHz, α = 1.5,
        // η_total = 0.3 → required range ≈ 2.16e7; a 16-bit ADC provides
        // (2¹⁶)² ≈ 4.295e9.
        let trap = default_trap();
        let dr = lamb_dicke_dynamic_range(&trap, 16).unwrap();
        assert_relative_eq!(dr.eta_ld, 1.1788719272257231e-4, max_relative = 1e-6);
        assert_relative_eq!(dr.required_range, 2.1586786836215727e7, max_relative = 1e-6);
        assert!((dr.required_range - 2.1e7).abs() < 0.1 * 2.1e7);
        assert_eq!(dr.adc_range, 4294967296.0);
        assert!(dr.adc_sufficient);
        // doubling α quarters the requirement
        let mut t2 = trap;
        t2.alpha_geom *= 2.0;
        let dr2 = lamb_dicke_dynamic_range(&t2, 16).unwrap();
        assert_relative_eq!(dr2.required_range, dr.required_range / 4.0, max_relative = 1e-12);
    }

    #[test]
    fn dynamic_range_monotonicity() {
        let trap = default_trap();
        let base = lamb_dicke_dynamic_range(&trap, 16).unwrap().required_range;
        // heavier particle → smaller z_zpf → larger η_LD⁻²... the range
        // requirement decreases with mass
        let mut heavier = trap;
        heavier.radius *= 1.5;
        let r_h = lamb_dicke_dynamic_range(&heavier, 16).unwrap().required_range;
        assert!(r_h < base);
        // more efficient detection demands more range
        let mut brighter = trap;
        brighter.eta_total *= 1.5;
        let r_b = lamb_dicke_dynamic_range(&brighter, 16).unwrap().required_range;
        assert!(r_b > base);
    }

    #[test]
    fn budget_report_round_trips_json() {
        let report = budget_report(&default_detector(), &default_trap(), 100e-9, 4e-3, 16).unwrap();
        assert!(report.saturation_power_w > 0.0);
        assert!(report.lo_power_limit_w > 0.0);
        assert!(report.shot_current_a_rthz > 0.0);
        assert!(report.dark_current_a_rthz > 0.0);
        assert!(report.required_dynamic_range > 0.0);
        let json = serde_json::to_string_pretty(&report).unwrap();
        let back: BudgetReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back.saturation_power_w, report.saturation_power_w);
        assert_eq!(back.lo_limit_branch, report.lo_limit_branch);
        assert_eq!(back.required_dynamic_range, report.required_dynamic_range);
    }

    #[test]
    fn validation_rejects_bad_specs() {
        let mut spec = default_detector();
        spec.eta_q = 1.5;
        assert!(spec.validate().is_err());
        spec.eta_q = 0.85;
        spec.nep = -1.0;
        assert!(spec.validate().is_err());
        let mut trap = default_trap();
        trap.radius = 0.0;
        assert!(trap.validate().is_err());
    }
}
