//! Physical constants (CODATA values as used throughout the crate).

/// Boltzmann constant, J/K.
pub const BOLTZMANN: f64 = 1.380649e-23;
/// Mass of a ⁸⁷Rb atom, kg.
pub const RB87_MASS: f64 = 1.44316e-25;
/// Bohr magneton, J/T.
pub const BOHR_MAGNETON: f64 = 9.2740e-24;
/// Reduced Planck constant, J·s.
pub const HBAR: f64 = 1.054572e-34;
/// Vacuum permittivity, F/m.
pub const EPSILON_0: f64 = 8.8541878128e-12;
/// Vacuum permeability, H/m.
pub const MU_0: f64 = 1.25663706212e-6;
