//! Gradient-echo phase evolution, atom-light coupling and thermal decoherence.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::constants::{BOLTZMANN, EPSILON_0, HBAR};
use crate::error::{Error, Result};

/// Gradient-echo memory parameters.
///
/// `beta0` and `xi` are cyclic gradients (Hz/m and Hz/m/s): the Zeeman
/// splitting at position `z` is `β(t)·(z − z_g)` in Hz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicsParams {
    #[serde(rename = "beta0_hz_per_m")]
    pub beta0: f64,
    #[serde(rename = "xi_hz_per_m_per_s")]
    pub xi: f64,
    #[serde(rename = "z_g_m")]
    pub z_g: f64,
    #[serde(rename = "omega_l_bar_rad_per_s")]
    pub omega_l_bar: f64,
    #[serde(rename = "k0_rad_per_m")]
    pub k0: f64,
    /// Lumped complex readout prefactor `gΩ_C`.
    #[serde(rename = "g_omega_c")]
    pub g_omega_c: [f64; 2],
}

impl PhysicsParams {
    /// Parameters whose bias precession matches the exact GEM phase:
    /// `ω̄_L = −2π β₀ z_g`.
    pub fn new(beta0: f64, xi: f64, z_g: f64, k0: f64, g_omega_c: Complex64) -> Result<Self> {
        let p =
            Self { beta0, xi, z_g, omega_l_bar: -2.0 * PI * beta0 * z_g, k0, g_omega_c: [g_omega_c.re, g_omega_c.im] };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta0 > 0.0 && self.beta0.is_finite()) {
            return Err(Error::invalid("beta0 must be positive"));
        }
        if !(self.k0 > 0.0 && self.k0.is_finite()) {
            return Err(Error::invalid("k0 must be positive"));
        }
        if !(self.xi.is_finite() && self.z_g.is_finite() && self.omega_l_bar.is_finite()) {
            return Err(Error::invalid("physics parameters must be finite"));
        }
        if self.g().norm() == 0.0 || !self.g().norm().is_finite() {
            return Err(Error::invalid("g_omega_c must be finite and nonzero"));
        }
        Ok(())
    }

    pub fn g(&self) -> Complex64 {
        Complex64::new(self.g_omega_c[0], self.g_omega_c[1])
    }

    /// Gradient of the linear GEM phase term used by the Fourier relation.
    pub fn beta_bar(&self) -> f64 {
        self.beta0
    }

    /// Readout chirp `ζ` implied by the gradient decay, from the
    /// z-independent part of the quadratic GEM phase: `ζ = π ξ z_g`.
    pub fn chirp_rate(&self) -> f64 {
        PI * self.xi * self.z_g
    }

    /// True when `|ξ|·t_meas` is no longer small next to `β₀`.
    pub fn gradient_decay_significant(&self, t_meas: f64) -> bool {
        (self.xi * t_meas).abs() > 0.1 * self.beta0
    }
}

/// Symbols of the two-photon coupling constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CouplingParams {
    pub k0: f64,
    /// Single-photon detuning Δ (rad/s).
    pub detuning: f64,
    /// Excited-state linewidth Γ (rad/s).
    pub linewidth: f64,
    /// Transition dipole moment d_ge (C·m).
    pub dipole: f64,
}

/// Thermal decoherence lifetimes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecoherenceParams {
    #[serde(rename = "tau_k_s")]
    pub tau_k: f64,
    #[serde(rename = "tau_beta_s")]
    pub tau_beta: f64,
}

impl DecoherenceParams {
    pub fn new(tau_k: f64, tau_beta: f64) -> Result<Self> {
        let d = Self { tau_k, tau_beta };
        d.validate()?;
        Ok(d)
    }

    /// No decoherence at all (both lifetimes infinite).
    pub fn none() -> Self {
        Self { tau_k: f64::INFINITY, tau_beta: f64::INFINITY }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau_k > 0.0 && self.tau_beta > 0.0) {
            return Err(Error::invalid("decoherence lifetimes must be positive"));
        }
        Ok(())
    }
}

/// `β(t) = β₀ − ξ t`.
pub fn gradient_at(t: f64, p: &PhysicsParams) -> f64 {
    p.beta0 - p.xi * t
}

/// Exact GEM phase `φ(z, t) = 2π (z − z_g) ∫₀ᵗ β(t') dt'`.
pub fn gem_phase(z: f64, t: f64, p: &PhysicsParams) -> f64 {
    2.0 * PI * (z - p.z_g) * (p.beta0 * t - 0.5 * p.xi * t * t)
}

/// `g = k₀ d² / (ħ ε₀ (2Δ + iΓ))`.
pub fn coupling_constant(c: &CouplingParams) -> Result<Complex64> {
    if c.linewidth < 0.0 {
        return Err(Error::invalid("linewidth must be non-negative"));
    }
    let den = Complex64::new(2.0 * c.detuning, c.linewidth);
    if den.norm() == 0.0 {
        return Err(Error::Numerical("2Δ + iΓ vanishes".into()));
    }
    Ok(Complex64::new(c.k0 * c.dipole * c.dipole / (HBAR * EPSILON_0), 0.0) / den)
}

/// Readout decay `η(t) = exp(−t²/2τ_k² − t⁴/2τ_β⁴)`.
pub fn decoherence_envelope(t: f64, d: &DecoherenceParams) -> f64 {
    (log_decoherence_envelope(t, d)).exp()
}

pub fn log_decoherence_envelope(t: f64, d: &DecoherenceParams) -> f64 {
    let a = t / d.tau_k;
    let b = t / d.tau_beta;
    -0.5 * a * a - 0.5 * (b * b) * (b * b)
}

/// Thermal lifetimes for a cloud at temperature `temperature` (K) storing
/// a spin wave of wavevector `k_sw` (rad/m) under gradient `beta_bar` (Hz/m).
pub fn taus_from_temperature(temperature: f64, k_sw: f64, beta_bar: f64, mass: f64) -> Result<DecoherenceParams> {
    if !(temperature > 0.0 && k_sw > 0.0 && beta_bar > 0.0 && mass > 0.0) {
        return Err(Error::invalid("temperature, k_sw, beta_bar and mass must be positive"));
    }
    let inv_speed = thermal_inverse_speed(temperature, mass);
    Ok(DecoherenceParams { tau_k: inv_speed / k_sw, tau_beta: (2.0 / (PI * beta_bar) * inv_speed).sqrt() })
}

/// `√(m / k_B T)`, the inverse thermal velocity spread (s/m).
pub fn thermal_inverse_speed(temperature: f64, mass: f64) -> f64 {
    (mass / (BOLTZMANN * temperature)).sqrt()
}

/// Temperature giving a Gaussian lifetime `tau_k`.
pub fn temperature_from_tau_k(tau_k: f64, k_sw: f64, mass: f64) -> f64 {
    let inv_speed = tau_k * k_sw;
    mass / (BOLTZMANN * inv_speed * inv_speed)
}

/// Temperature giving a quartic lifetime `tau_beta`.
pub fn temperature_from_tau_beta(tau_beta: f64, beta_bar: f64, mass: f64) -> f64 {
    let inv_speed = tau_beta * tau_beta * PI * beta_bar / 2.0;
    mass / (BOLTZMANN * inv_speed * inv_speed)
}

/// Spin-wave wavevector from the write-in/coupling beam angle.
pub fn k_sw_from_angle(theta: f64, k0: f64) -> Result<f64> {
    if !(k0 > 0.0) {
        return Err(Error::invalid("k0 must be positive"));
    }
    Ok(2.0 * k0 * (theta / 2.0).sin())
}
