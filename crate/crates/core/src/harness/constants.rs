//! Physical constants and the transition-time estimate `(αω_C)⁻¹`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The constants file shipped with the crate.
pub const BUNDLED_CONSTANTS: &str = include_str!("../../data/constants.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstantsFile {
    pub schema_version: u32,
    pub alpha_inverse: f64,
    pub hbar: f64,
    pub c: f64,
    pub particles: BTreeMap<String, ParticleConstants>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParticleConstants {
    pub mass: f64,
}

/// Constants resolved for one particle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalConstants {
    pub alpha: f64,
    /// Compton angular frequency `mc²/ħ`, rad/s.
    pub omega_c: f64,
    pub hbar: f64,
    pub c: f64,
    pub mass: f64,
}

impl ConstantsFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("constants: {e}")))
    }

    pub fn bundled() -> Self {
        Self::parse(BUNDLED_CONSTANTS).expect("bundled constants parse")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn for_particle(&self, name: &str) -> Result<PhysicalConstants> {
        let p = self
            .particles
            .get(name)
            .ok_or_else(|| Error::UnknownParticle(name.to_string()))?;
        Ok(PhysicalConstants {
            alpha: 1.0 / self.alpha_inverse,
            omega_c: p.mass * self.c * self.c / self.hbar,
            hbar: self.hbar,
            c: self.c,
            mass: p.mass,
        })
    }
}

/// `(α ω_C)⁻¹` in seconds.
pub fn transition_time(pc: &PhysicalConstants) -> f64 {
    1.0 / (pc.alpha * pc.omega_c)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit() -> PhysicalConstants {
        PhysicalConstants {
            alpha: 1.0,
            omega_c: 1.0,
            hbar: 1.0,
            c: 1.0,
            mass: 1.0,
        }
    }

    #[test]
    fn unit_constants_give_one() {
        assert_eq!(transition_time(&unit()), 1.0);
    }

    #[test]
    fn doubling_omega_halves_time() {
        let pc = ConstantsFile::bundled().for_particle("electron").unwrap();
        let doubled = PhysicalConstants {
            omega_c: 2.0 * pc.omega_c,
            ..pc
        };
        assert_eq!(transition_time(&doubled), 0.5 * transition_time(&pc));
    }

    #[test]
    fn unknown_particle_is_an_error() {
        assert!(matches!(
            ConstantsFile::bundled().for_particle("tauon"),
            Err(Error::UnknownParticle(_))
        ));
    }
}
