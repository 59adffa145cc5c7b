//! Physical constants for the cesium D2 line and ground state.
//!
//! The defaults are embedded; a versioned TOML table with the same keys can
//! override any subset of them:
//!
//! ```toml
//! version = 1
//! d2_wavelength_m = 852.347e-9
//! hyperfine_f3_f2_hz = 151.21e6
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CONSTANTS_VERSION: u32 = 1;

/// Cesium constants used by the coupling and spin-response formulas. All SI.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhysicalConstants {
    pub version: u32,
    /// D2 transition wavelength.
    pub d2_wavelength_m: f64,
    /// Natural linewidth of the 6P3/2 state, angular units.
    pub d2_linewidth_rad_s: f64,
    /// Excited-state splitting F'=3 to F'=5.
    pub hyperfine_f3_f5_hz: f64,
    /// Excited-state splitting F'=4 to F'=5.
    pub hyperfine_f4_f5_hz: f64,
    /// Excited-state splitting F'=2 to F'=3.
    pub hyperfine_f3_f2_hz: f64,
    /// Excited-state splitting F'=2 to F'=4.
    pub hyperfine_f4_f2_hz: f64,
    /// Ground-state hyperfine splitting.
    pub ground_hyperfine_hz: f64,
    /// Gyromagnetic ratio of the F=4 ground state, rad/(s T).
    pub gyromagnetic_f4_rad_s_t: f64,
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        Self {
            version: CONSTANTS_VERSION,
            d2_wavelength_m: 852.347_27e-9,
            d2_linewidth_rad_s: 2.0 * std::f64::consts::PI * 5.234e6,
            hyperfine_f3_f5_hz: 452.24e6,
            hyperfine_f4_f5_hz: 251.00e6,
            hyperfine_f3_f2_hz: 151.21e6,
            hyperfine_f4_f2_hz: 352.45e6,
            ground_hyperfine_hz: 9.192_631_770e9,
            // g_F = 1/4: 3.5 kHz per microtesla
            gyromagnetic_f4_rad_s_t: 2.0 * std::f64::consts::PI * 3.4986e9,
        }
    }
}

impl PhysicalConstants {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let constants: Self =
            toml::from_str(text).map_err(|e| Error::Config(format!("constants table: {e}")))?;
        if constants.version != CONSTANTS_VERSION {
            return Err(Error::VersionMismatch {
                found: constants.version,
                expected: CONSTANTS_VERSION,
            });
        }
        Ok(constants)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("constants table always serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_override_keeps_defaults() {
        let c = PhysicalConstants::from_toml_str("version = 1\nhyperfine_f3_f2_hz = 151.0e6\n").unwrap();
        assert_eq!(c.hyperfine_f3_f2_hz, 151.0e6);
        assert_eq!(c.hyperfine_f4_f2_hz, PhysicalConstants::default().hyperfine_f4_f2_hz);
    }

    #[test]
    fn unknown_keys_and_versions_rejected() {
        assert!(PhysicalConstants::from_toml_str("version = 1\nfoo = 2.0\n").is_err());
        assert!(matches!(
            PhysicalConstants::from_toml_str("version = 7\n"),
            Err(Error::VersionMismatch { found: 7, .. })
        ));
    }

    #[test]
    fn round_trip() {
        let c = PhysicalConstants::default();
        assert_eq!(PhysicalConstants::from_toml_str(&c.to_toml_string()).unwrap(), c);
    }
}
