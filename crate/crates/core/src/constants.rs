//! Physical constants (2019 SI exact values where defined).

/// Planck constant, J·s (exact by SI definition).
pub const PLANCK: f64 = 6.62607015e-34;

/// Reduced Planck constant ħ = h/2π, J·s.
pub const HBAR: f64 = PLANCK / (2.0 * std::f64::consts::PI);

/// Speed of light in vacuum, m/s (exact).
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Elementary charge magnitude, C (exact).
pub const ELEMENTARY_CHARGE: f64 = 1.602176634e-19;

/// Default particle density for fused silica nanospheres, kg/m³.
pub const SILICA_DENSITY: f64 = 1850.0;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hbar_consistent_with_h() {
        assert!((HBAR * 2.0 * std::f64::consts::PI - PLANCK).abs() < 1e-45);
    }
}
