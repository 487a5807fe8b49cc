//! Unit system and dispersion relation.
//!
//! Internal units are fixed to (nm, fs, eV, m_e): positions in nanometres,
//! times in femtoseconds, energies in electron-volts, masses as a ratio to
//! the electron mass. Velocities come out in nm/fs.

use crate::error::{Result, TunnelError};

/// Reduced Planck constant, eV fs (CODATA).
pub const HBAR_EV_FS: f64 = 0.6582119569;

/// hbar^2 / (2 m_e), eV nm^2 (CODATA).
pub const HALF_QUANTUM_EV_NM2: f64 = 0.0380998;

/// Physical constants bundled with the effective mass of the problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitSystem {
    /// hbar in eV fs.
    pub hbar: f64,
    /// hbar^2/(2 m_e) in eV nm^2.
    pub half_quantum: f64,
    /// Effective mass m / m_e.
    pub mass_ratio: f64,
}

impl UnitSystem {
    /// Unit system for a particle of effective mass `mass_ratio * m_e`.
    pub fn new(mass_ratio: f64) -> Result<Self> {
        if !(mass_ratio > 0.0) || !mass_ratio.is_finite() {
            return Err(TunnelError::Domain(format!(
                "mass ratio must be positive and finite, got {mass_ratio}"
            )));
        }
        Ok(Self {
            hbar: HBAR_EV_FS,
            half_quantum: HALF_QUANTUM_EV_NM2,
            mass_ratio,
        })
    }

    /// hbar^2/(2m) in eV nm^2 for this particle.
    #[inline]
    pub fn kinetic_scale(&self) -> f64 {
        self.half_quantum / self.mass_ratio
    }

    /// Dispersion E(k) = hbar^2 k^2 / (2m), eV.
    #[inline]
    pub fn energy_from_k(&self, k: f64) -> f64 {
        self.kinetic_scale() * k * k
    }

    /// Inverse dispersion: wavenumber in nm^-1 for kinetic energy `energy` in eV.
    pub fn k_from_energy(&self, energy: f64) -> Result<f64> {
        if energy < 0.0 {
            return Err(TunnelError::Domain(format!(
                "negative kinetic energy {energy} eV has no real wavenumber"
            )));
        }
        Ok((energy * self.mass_ratio / self.half_quantum).sqrt())
    }

    /// Group velocity hbar k / m, nm/fs.
    #[inline]
    pub fn velocity(&self, k: f64) -> f64 {
        self.hbar_over_mass() * k
    }

    /// hbar/m in nm^2/fs.
    #[inline]
    pub fn hbar_over_mass(&self) -> f64 {
        2.0 * self.half_quantum / (self.hbar * self.mass_ratio)
    }

    /// m/hbar in fs/nm^2; multiplies lengths-over-velocity expressions into times.
    #[inline]
    pub fn mass_over_hbar(&self) -> f64 {
        1.0 / self.hbar_over_mass()
    }
}

/// Standalone form of [`UnitSystem::k_from_energy`].
pub fn k_from_energy(energy: f64, mass_ratio: f64) -> Result<f64> {
    UnitSystem::new(mass_ratio)?.k_from_energy(energy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn zero_energy_gives_zero_k() {
        assert_eq!(k_from_energy(0.0, 0.067).unwrap(), 0.0);
        assert_eq!(k_from_energy(0.0, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn gaas_electron_wavenumbers() {
        // 0.02 eV at m = 0.067 m_e and the barrier-top wavenumber for 0.3 eV
        let k0 = k_from_energy(0.02, 0.067).unwrap();
        assert_relative_eq!(k0, 0.18753876478771342, max_relative = 1e-12);
        let k_top = k_from_energy(0.3, 0.067).unwrap();
        assert_relative_eq!(k_top, 0.7263345127911239, max_relative = 1e-12);
    }

    #[test]
    fn dispersion_round_trip() {
        let units = UnitSystem::new(0.067).unwrap();
        let mut k = 1e-3;
        while k <= 10.0 {
            let e = units.energy_from_k(k);
            assert_relative_eq!(units.k_from_energy(e).unwrap(), k, max_relative = 1e-12);
            k *= 1.7;
        }
    }

    #[test]
    fn negative_energy_rejected() {
        assert!(k_from_energy(-0.1, 0.067).is_err());
    }

    #[test]
    fn invalid_mass_rejected() {
        assert!(UnitSystem::new(0.0).is_err());
        assert!(UnitSystem::new(-1.0).is_err());
        assert!(UnitSystem::new(f64::NAN).is_err());
    }
}
