//! Shared scenes for the criterion benches.

use std::f64::consts::PI;

use gemtomo::forward::imprint_phase;
use gemtomo::scenarios::{checkerboard_phase, flat_spinwave, CloudParams, PatternPlane};
use gemtomo::{AxisSpec, CalibParams, Complex64, ComplexField3D, ForwardOptions, GridSpec, PhysicsParams};

pub const BETA_BAR: f64 = 1.4e8;
pub const K0: f64 = 2.0 * PI / 795e-9;

pub struct Scene {
    pub physics: PhysicsParams,
    pub times: AxisSpec,
    pub spin_wave: ComplexField3D,
    pub forward: ForwardOptions,
    pub calib: CalibParams,
}

/// Checkerboard-imprinted pencil cloud on an `nx × nx × nz` grid read out at
/// `nt` delays of 100 ns.
pub fn checkerboard_scene(nx: usize, nz: usize, nt: usize) -> Scene {
    let dt = 100e-9;
    let dz = 1.0 / (BETA_BAR * dt * nt as f64);
    let grid = GridSpec::centered([nx, nx, nz], [15e-6, 15e-6, dz]).unwrap();
    let physics = PhysicsParams::new(BETA_BAR, 0.0, 0.0, K0, Complex64::new(1.0e4, 0.0)).unwrap();
    let flat = flat_spinwave(&grid, &CloudParams::default()).unwrap();
    let phase = checkerboard_phase(&grid, 1e-3, 0.1e-3, 2.0, PatternPlane::Zx).unwrap();
    let forward = ForwardOptions::default();
    Scene {
        calib: CalibParams::matched(&physics, forward.exit_plane_z),
        physics,
        times: AxisSpec::centered(nt, dt).unwrap(),
        spin_wave: imprint_phase(&flat, &phase).unwrap(),
        forward,
    }
}
