//! Run configuration: one JSON document describing the system, the
//! simulation, the heterodyne stage and the estimator settings.
//!
//! Frequencies in the file are ordinary frequencies in Hz; conversion to
//! angular units happens when the typed parameters are built. A run
//! re-executed from its emitted config and seed is bit-identical, and every
//! output file embeds the SHA-256 hash of the effective config.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::budget::{DetectorSpec, TrapSpec};
use crate::error::Result;
use crate::estimation::EstimationSettings;
use crate::heterodyne::{BeatNoteConfig, BeatNoteForm};
use crate::model::{DecoherenceBudget, MechanicalParams};
use crate::simulator::{PhaseDrift, SimConfig, SpectatorMode};
use crate::spectral::Window;

const TAU: f64 = 2.0 * std::f64::consts::PI;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MechanicsConfig {
    /// Direct mass override; takes precedence over radius/density.
    pub mass_kg: Option<f64>,
    pub radius_m: f64,
    pub density_kg_m3: f64,
    pub omega_q_hz: f64,
    pub gamma_hz: f64,
}

impl Default for MechanicsConfig {
    fn default() -> Self {
        Self {
            mass_kg: None,
            radius_m: 43e-9,
            density_kg_m3: crate::constants::SILICA_DENSITY,
            omega_q_hz: 76.9e3,
            gamma_hz: 89.7,
        }
    }
}

impl MechanicsConfig {
    pub fn params(&self) -> Result<MechanicalParams> {
        match self.mass_kg {
            Some(m) => MechanicalParams::new(m, TAU * self.omega_q_hz, TAU * self.gamma_hz),
            None => MechanicalParams::from_sphere(
                self.radius_m,
                self.density_kg_m3,
                TAU * self.omega_q_hz,
                TAU * self.gamma_hz,
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BudgetConfig {
    pub gamma_th_hz: f64,
    pub gamma_ba_hz: f64,
    pub eta_d: f64,
}

impl Default for BudgetConfig {
    fn default() -> Self {
        Self {
            gamma_th_hz: 2.7e3,
            gamma_ba_hz: 4.9e3,
            eta_d: 0.6 / 4.9,
        }
    }
}

impl BudgetConfig {
    pub fn budget(&self) -> Result<DecoherenceBudget> {
        DecoherenceBudget::new(TAU * self.gamma_th_hz, TAU * self.gamma_ba_hz, self.eta_d)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectatorConfig {
    pub freq_hz: f64,
    pub gamma_hz: f64,
    pub transduction_weight: f64,
}

impl Default for SpectatorConfig {
    fn default() -> Self {
        Self {
            freq_hz: 178e3,
            gamma_hz: 89.7,
            transduction_weight: 100.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhaseDriftConfig {
    pub diffusion_rad2_per_s: f64,
    pub drift_rad_per_s: f64,
}

impl Default for PhaseDriftConfig {
    fn default() -> Self {
        Self {
            diffusion_rad2_per_s: 0.0,
            drift_rad_per_s: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSection {
    pub duration_s: f64,
    pub sample_rate_hz: f64,
    pub seed: u64,
    /// Decimation factor applied before traces are stored/analyzed.
    pub decimate: usize,
    pub spectators: Vec<SpectatorConfig>,
    pub phase_drift: Option<PhaseDriftConfig>,
    pub omega_drift_hz_per_s: f64,
    pub max_samples: u64,
    /// Length of the signal-blocked shot reference; defaults to the main
    /// record duration.
    pub shot_duration_s: Option<f64>,
}

impl Default for SimSection {
    fn default() -> Self {
        Self {
            duration_s: 10.0,
            sample_rate_hz: 2.0e6,
            seed: 1,
            decimate: 8,
            spectators: Vec::new(),
            phase_drift: None,
            omega_drift_hz_per_s: 0.0,
            max_samples: 2_000_000_000,
            shot_duration_s: None,
        }
    }
}

impl SimSection {
    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            duration: self.duration_s,
            sample_rate: self.sample_rate_hz,
            seed: self.seed,
            spectator_modes: self
                .spectators
                .iter()
                .map(|s| SpectatorMode {
                    omega: TAU * s.freq_hz,
                    gamma: TAU * s.gamma_hz,
                    transduction_weight: s.transduction_weight,
                })
                .collect(),
            phase_drift: self.phase_drift.as_ref().map(|d| PhaseDrift {
                diffusion: d.diffusion_rad2_per_s,
                drift: d.drift_rad_per_s,
            }),
            omega_drift: TAU * self.omega_drift_hz_per_s,
            max_samples: self.max_samples,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeterodyneSection {
    pub het_freq_hz: f64,
    pub sample_rate_hz: f64,
    pub carrier_amplitude: f64,
    pub form: BeatNoteForm,
    pub phase0_rad: f64,
}

impl Default for HeterodyneSection {
    fn default() -> Self {
        Self {
            het_freq_hz: 1.0e6,
            sample_rate_hz: 4.5e6,
            carrier_amplitude: 100.0,
            form: BeatNoteForm::Linearized,
            phase0_rad: 0.0,
        }
    }
}

impl HeterodyneSection {
    pub fn beat_config(&self, sim: &SimSection) -> BeatNoteConfig {
        BeatNoteConfig {
            het_freq: TAU * self.het_freq_hz,
            sample_rate: self.sample_rate_hz,
            carrier_amplitude: self.carrier_amplitude,
            form: self.form,
            phase0: self.phase0_rad,
            drift: sim.sim_config().phase_drift,
            seed: sim.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimationSection {
    pub segment_s: f64,
    pub overlap: f64,
    pub window: Window,
    pub theta_points: usize,
    pub fit_band_linewidths: f64,
    pub squeeze_band_linewidths: f64,
    pub smooth_bandwidth_factor: f64,
    pub trim_fraction: f64,
    pub ci_level: f64,
}

impl Default for EstimationSection {
    fn default() -> Self {
        let d = EstimationSettings::default();
        Self {
            segment_s: d.segment_seconds,
            overlap: d.overlap,
            window: d.window,
            theta_points: 37,
            fit_band_linewidths: d.fit_band_linewidths,
            squeeze_band_linewidths: d.squeeze_band_linewidths,
            smooth_bandwidth_factor: d.smooth_bandwidth_factor,
            trim_fraction: d.trim_fraction,
            ci_level: d.ci_level,
        }
    }
}

impl EstimationSection {
    pub fn settings(&self) -> EstimationSettings {
        EstimationSettings {
            segment_seconds: self.segment_s,
            overlap: self.overlap,
            window: self.window,
            fit_band_linewidths: self.fit_band_linewidths,
            squeeze_band_linewidths: self.squeeze_band_linewidths,
            smooth_bandwidth_factor: self.smooth_bandwidth_factor,
            trim_fraction: self.trim_fraction,
            ci_level: self.ci_level,
        }
    }

    /// Analyzer-angle grid spanning [-π/2, π/2].
    pub fn theta_grid(&self) -> Vec<f64> {
        let n = self.theta_points.max(3);
        (0..n)
            .map(|i| -std::f64::consts::FRAC_PI_2 + std::f64::consts::PI * i as f64 / (n - 1) as f64)
            .collect()
    }
}

fn default_p_sig() -> f64 {
    100e-9
}
fn default_p_lo() -> f64 {
    4e-3
}
fn default_adc_bits() -> u32 {
    16
}

/// The one document every command reads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub mechanics: MechanicsConfig,
    pub budget: BudgetConfig,
    pub sim: SimSection,
    pub heterodyne: HeterodyneSection,
    pub estimation: EstimationSection,
    pub detector: Option<DetectorSpec>,
    pub trap: Option<TrapSpec>,
    #[serde(default = "default_p_sig")]
    pub p_sig_w: f64,
    #[serde(default = "default_p_lo")]
    pub p_lo_w: f64,
    #[serde(default = "default_adc_bits")]
    pub adc_bits: u32,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)
            .map_err(|e| crate::error::Error::Config(format!("config parse failure: {e}")))?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the canonical JSON serialization.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&bytes);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn detector_spec(&self) -> DetectorSpec {
        self.detector.unwrap_or_else(crate::budget::default_detector)
    }

    pub fn trap_spec(&self) -> TrapSpec {
        self.trap.unwrap_or_else(crate::budget::default_trap)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips() {
        let cfg = RunConfig::default();
        let json = cfg.to_json();
        let back = RunConfig::from_json(&json).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(cfg.hash(), back.hash());
    }

    #[test]
    fn hash_changes_with_any_field() {
        let cfg = RunConfig::default();
        let mut other = cfg.clone();
        other.sim.seed = 2;
        assert_ne!(cfg.hash(), other.hash());
        let mut third = cfg.clone();
        third.mechanics.gamma_hz = 89.6;
        assert_ne!(cfg.hash(), third.hash());
    }

    #[test]
    fn unknown_fields_rejected() {
        let r = RunConfig::from_json(r#"{ "mechanics": { "omega_qq_hz": 1.0 } }"#);
        assert!(r.is_err());
    }

    #[test]
    fn paper_defaults() {
        let cfg = RunConfig::default();
        let params = cfg.mechanics.params().unwrap();
        let budget = cfg.budget.budget().unwrap();
        assert!((params.omega_q / TAU - 76.9e3).abs() < 1e-9);
        assert!((budget.gamma_tot() / TAU - 7.6e3).abs() < 1e-9);
        assert!((budget.gamma_meas() / TAU - 0.6e3).abs() < 1e-6);
        let n = budget.occupation(&params);
        assert!((n - 84.72686733556298).abs() < 1e-9);
    }

    #[test]
    fn theta_grid_spans_canonical_range() {
        let est = EstimationSection::default();
        let grid = est.theta_grid();
        assert_eq!(grid.len(), 37);
        assert!((grid[0] + std::f64::consts::FRAC_PI_2).abs() < 1e-12);
        assert!((grid[36] - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
        assert!(grid.iter().any(|t| t.abs() < 1e-12));
    }
}
