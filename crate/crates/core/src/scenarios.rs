//! Test objects: cloud density, phase patterns, two-pulse spin waves and the
//! field of a small current loop.

use std::f64::consts::PI;

use ndarray::{Array2, Array3, Zip};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::constants::{BOHR_MAGNETON, HBAR, MU_0};
use crate::error::{Error, Result};
use crate::field::{ComplexField3D, GridSpec, RealField3D};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CloudParams {
    #[serde(rename = "length_z_m")]
    pub length_z: f64,
    #[serde(rename = "sigma_x_m")]
    pub sigma_x: f64,
    #[serde(rename = "sigma_y_m")]
    pub sigma_y: f64,
    #[serde(rename = "edge_softness_m")]
    pub edge_softness: f64,
    pub peak_density: f64,
}

impl Default for CloudParams {
    fn default() -> Self {
        // 0.3 mm full extent taken as ±2σ
        Self { length_z: 10e-3, sigma_x: 0.075e-3, sigma_y: 0.075e-3, edge_softness: 0.1e-3, peak_density: 1.0 }
    }
}

impl CloudParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("length_z", self.length_z),
            ("sigma_x", self.sigma_x),
            ("sigma_y", self.sigma_y),
            ("edge_softness", self.edge_softness),
            ("peak_density", self.peak_density),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!("cloud {name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Super-Gaussian plateau `exp(-½|2z/L|^{2p})` with the order chosen so
    /// the edge falls over roughly `edge_softness`.
    pub fn edge(&self, z: f64) -> f64 {
        let two_p = (self.length_z / (2.0 * self.edge_softness)).max(2.0);
        (-0.5 * (2.0 * z / self.length_z).abs().powf(two_p)).exp()
    }

    pub fn density(&self, r: [f64; 3]) -> f64 {
        let [x, y, z] = r;
        self.peak_density
            * (-x * x / (2.0 * self.sigma_x * self.sigma_x) - y * y / (2.0 * self.sigma_y * self.sigma_y)).exp()
            * self.edge(z)
    }
}

pub fn cloud_density(grid: &GridSpec, c: &CloudParams) -> Result<RealField3D> {
    grid.validate()?;
    c.validate()?;
    Ok(RealField3D::from_fn(*grid, |r| c.density(r)))
}

pub fn flat_spinwave(grid: &GridSpec, c: &CloudParams) -> Result<ComplexField3D> {
    c.validate()?;
    ComplexField3D::from_fn(*grid, |r| Complex64::new(c.density(r), 0.0))
}

/// Plane in which a 2D pattern is drawn; it is extruded along the third axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PatternPlane {
    /// pattern in z (rows) and x (columns), extruded along y
    #[default]
    Zx,
    Zy,
    Xy,
}

impl PatternPlane {
    /// (row coordinate, column coordinate) of a point.
    fn project(self, r: [f64; 3]) -> (f64, f64) {
        match self {
            PatternPlane::Zx => (r[2], r[0]),
            PatternPlane::Zy => (r[2], r[1]),
            PatternPlane::Xy => (r[1], r[0]),
        }
    }

    fn steps(self, g: &GridSpec) -> (f64, f64) {
        match self {
            PatternPlane::Zx => (g.z.step, g.x.step),
            PatternPlane::Zy => (g.z.step, g.y.step),
            PatternPlane::Xy => (g.y.step, g.x.step),
        }
    }
}

/// Checkerboard with tiles `tile_row × tile_col` anchored at the origin.
pub fn checkerboard_phase(
    grid: &GridSpec,
    tile_row: f64,
    tile_col: f64,
    amplitude: f64,
    plane: PatternPlane,
) -> Result<RealField3D> {
    grid.validate()?;
    if !amplitude.is_finite() {
        return Err(Error::NonFinite("checkerboard amplitude"));
    }
    let (sr, sc) = plane.steps(grid);
    if !(tile_row > sr && tile_col > sc) {
        return Err(Error::invalid(format!(
            "checkerboard tile ({tile_row:e} × {tile_col:e} m) must exceed the grid step ({sr:e} × {sc:e} m)"
        )));
    }
    Ok(RealField3D::from_fn(*grid, |r| {
        let (u, v) = plane.project(r);
        let parity = (u / tile_row).floor() as i64 + (v / tile_col).floor() as i64;
        if parity.rem_euclid(2) == 1 {
            amplitude
        } else {
            0.0
        }
    }))
}

/// Binary phase from an 8-bit raster (row 0 at the top), thresholded at 128
/// and sampled nearest-neighbour. `pixel` is the physical size of one raster
/// pixel along (rows, columns); the raster is centred on the origin.
pub fn bitmap_phase(
    grid: &GridSpec,
    raster: &Array2<u8>,
    pixel: [f64; 2],
    amplitude: f64,
    plane: PatternPlane,
) -> Result<RealField3D> {
    grid.validate()?;
    let (nr, nc) = raster.dim();
    if nr == 0 || nc == 0 {
        return Err(Error::invalid("bitmap raster is empty"));
    }
    if !(pixel[0] > 0.0 && pixel[1] > 0.0) {
        return Err(Error::invalid("bitmap pixel size must be positive"));
    }
    Ok(RealField3D::from_fn(*grid, |r| {
        let (u, v) = plane.project(r);
        // rows increase downward, so flip the row coordinate
        let i = (-u / pixel[0] + nr as f64 / 2.0).floor();
        let j = (v / pixel[1] + nc as f64 / 2.0).floor();
        if i < 0.0 || j < 0.0 || i >= nr as f64 || j >= nc as f64 {
            return 0.0;
        }
        if raster[(i as usize, j as usize)] >= 128 {
            amplitude
        } else {
            0.0
        }
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwoPulseParams {
    pub alpha: f64,
    #[serde(rename = "delta_t_s")]
    pub delta_t: f64,
}

impl Default for TwoPulseParams {
    fn default() -> Self {
        Self { alpha: 1.0, delta_t: 8e-6 }
    }
}

impl TwoPulseParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::invalid("two-pulse alpha must be ≥ 0"));
        }
        if !(self.delta_t.is_finite() && self.delta_t > 0.0) {
            return Err(Error::invalid("two-pulse delta_t must be > 0"));
        }
        Ok(())
    }
}

/// `S = n·(1 + α e^{2πi δt β̄ z}) / (1 + α)`
pub fn two_pulse_spinwave(
    grid: &GridSpec,
    c: &CloudParams,
    tp: &TwoPulseParams,
    beta_bar: f64,
) -> Result<ComplexField3D> {
    c.validate()?;
    tp.validate()?;
    if !beta_bar.is_finite() {
        return Err(Error::NonFinite("beta_bar"));
    }
    let q = 2.0 * PI * tp.delta_t * beta_bar;
    let norm = 1.0 + tp.alpha;
    ComplexField3D::from_fn(*grid, |r| c.density(r) * (1.0 + tp.alpha * Complex64::from_polar(1.0, q * r[2])) / norm)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoilParams {
    #[serde(rename = "center_m")]
    pub center: [f64; 3],
    #[serde(rename = "radius_m")]
    pub radius: f64,
    #[serde(rename = "current_a")]
    pub current: f64,
    pub axis: [f64; 3],
    #[serde(rename = "t_c_s")]
    pub t_c: f64,
    #[serde(rename = "b0_t")]
    pub b0: f64,
}

impl Default for CoilParams {
    fn default() -> Self {
        Self { center: [0.0, 1.0e-3, 0.0], radius: 0.5e-3, current: 0.02, axis: [0.0, 1.0, 0.0], t_c: 1e-6, b0: 1e-4 }
    }
}

impl CoilParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius.is_finite() && self.radius > 0.0) {
            return Err(Error::invalid("coil radius must be > 0"));
        }
        let norm = self.axis.iter().map(|a| a * a).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("coil axis must be a unit vector (|axis| = {norm})")));
        }
        let all = self.center.iter().chain(&[self.current, self.t_c, self.b0]).all(|v| v.is_finite());
        if !all {
            return Err(Error::NonFinite("coil parameters"));
        }
        Ok(())
    }
}

/// Complete elliptic integrals K(m), E(m) with parameter m = k², by the
/// arithmetic-geometric mean.
pub fn elliptic_ke(m: f64) -> (f64, f64) {
    let mut a = 1.0;
    let mut b = (1.0 - m).sqrt();
    let mut c = m.sqrt();
    let mut sum = 0.5 * c * c;
    let mut pow2 = 0.5;
    for _ in 0..64 {
        if c.abs() < 1e-16 * a {
            break;
        }
        let an = 0.5 * (a + b);
        let bn = (a * b).sqrt();
        c = 0.5 * (a - b);
        a = an;
        b = bn;
        pow2 *= 2.0;
        sum += pow2 * c * c;
    }
    let k = PI / (2.0 * a);
    (k, k * (1.0 - sum))
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Field (T) of a circular current loop at `point`.
pub fn coil_field(point: [f64; 3], coil: &CoilParams) -> Result<[f64; 3]> {
    coil.validate()?;
    let n = coil.axis;
    let d = [point[0] - coil.center[0], point[1] - coil.center[1], point[2] - coil.center[2]];
    let z = dot(d, n);
    let radial = [d[0] - z * n[0], d[1] - z * n[1], d[2] - z * n[2]];
    let rho = dot(radial, radial).sqrt();
    let a = coil.radius;
    if ((rho - a).powi(2) + z * z).sqrt() <= 1e-6 {
        return Err(Error::invalid("field point lies on the coil wire"));
    }
    let alpha2 = (a - rho).powi(2) + z * z;
    let beta2 = (a + rho).powi(2) + z * z;
    let beta = beta2.sqrt();
    let m = 1.0 - alpha2 / beta2;
    let (k, e) = elliptic_ke(m);
    let c = MU_0 * coil.current / PI;
    let bz = c / (2.0 * alpha2 * beta) * ((a * a - rho * rho - z * z) * e + alpha2 * k);
    let mut b = [bz * n[0], bz * n[1], bz * n[2]];
    if rho > 1e-12 * a {
        let brho = c * z / (2.0 * alpha2 * beta * rho) * ((a * a + rho * rho + z * z) * e - alpha2 * k);
        for i in 0..3 {
            b[i] += brho * radial[i] / rho;
        }
    }
    Ok(b)
}

/// Larmor phase `μ_B |B_coil + ẑB₀| t_c / ħ` accumulated at each grid point.
pub fn coil_phase_map(grid: &GridSpec, coil: &CoilParams) -> Result<RealField3D> {
    grid.validate()?;
    coil.validate()?;
    let mut values = Array3::<f64>::zeros(grid.shape());
    let mut first_err: Option<Error> = None;
    let points = Array3::from_shape_fn(grid.shape(), |(i, j, k)| grid.point(i, j, k));
    let results: Array3<Result<f64>> = {
        let mut out = Array3::from_shape_fn(grid.shape(), |_| Ok(0.0));
        Zip::from(&mut out).and(&points).par_for_each(|o, &p| {
            *o = coil_field(p, coil).map(|b| {
                let total = [b[0], b[1], b[2] + coil.b0];
                BOHR_MAGNETON * dot(total, total).sqrt() * coil.t_c / HBAR
            });
        });
        out
    };
    for (v, r) in values.iter_mut().zip(results) {
        match r {
            Ok(x) => *v = x,
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    if let Some(e) = first_err {
        return Err(e);
    }
    RealField3D::new(*grid, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::AxisSpec;
    use proptest::prelude::*;

    fn coil(radius: f64, current: f64) -> CoilParams {
        CoilParams { center: [0.0; 3], radius, current, axis: [0.0, 0.0, 1.0], t_c: 1e-6, b0: 1e-4 }
    }

    #[test]
    fn cloud_center_and_tails() {
        let c = CloudParams::default();
        assert!((c.density([0.0; 3]) - c.peak_density).abs() < 1e-12);
        let z = c.length_z / 2.0 + 4.0 * c.edge_softness;
        assert!(c.density([0.0, 0.0, z]) < 1e-3 * c.peak_density);
        assert!(c.density([0.0, 0.0, -z * 1.01]) < 1e-3 * c.peak_density);
    }

    #[test]
    fn cloud_profile_flat_over_central_80_percent() {
        // the (x,y)-integral factorises, so the profile is the edge function
        let c = CloudParams::default();
        let n = 2001;
        for i in 0..n {
            let z = -0.4 * c.length_z + 0.8 * c.length_z * i as f64 / (n - 1) as f64;
            assert!(c.edge(z) > 0.99, "z={z} edge={}", c.edge(z));
        }
    }

    #[test]
    fn flat_spinwave_is_real_density() {
        let g = GridSpec::centered([4, 4, 16], [0.05e-3, 0.05e-3, 1e-3]).unwrap();
        let c = CloudParams::default();
        let s = flat_spinwave(&g, &c).unwrap();
        let n = cloud_density(&g, &c).unwrap();
        for (a, b) in s.values().iter().zip(n.values.iter()) {
            assert_eq!(a.im, 0.0);
            assert!((a.re - b).abs() < 1e-15);
        }
    }

    #[test]
    fn checkerboard_values_and_boundaries() {
        let g = GridSpec::new(
            AxisSpec::new(8, 0.25e-3, 0.0).unwrap(),
            AxisSpec::new(1, 1e-3, 0.0).unwrap(),
            AxisSpec::new(8, 0.25e-3, 0.0).unwrap(),
        )
        .unwrap();
        let m = checkerboard_phase(&g, 0.5e-3, 0.5e-3, 1.0, PatternPlane::Zx).unwrap();
        assert!(m.values.iter().all(|&v| v == 0.0 || v == 1.0));
        // parity flips every two cells (tile = 2 steps)
        assert_eq!(m.values[(0, 0, 0)], 0.0);
        assert_eq!(m.values[(0, 0, 1)], 0.0);
        assert_eq!(m.values[(0, 0, 2)], 1.0);
        assert_eq!(m.values[(2, 0, 2)], 0.0);
        let zero = checkerboard_phase(&g, 0.5e-3, 0.5e-3, 0.0, PatternPlane::Zx).unwrap();
        assert!(zero.values.iter().all(|&v| v == 0.0));
        assert!(checkerboard_phase(&g, 0.2e-3, 0.5e-3, 1.0, PatternPlane::Zx).is_err());
    }

    #[test]
    fn bitmap_threshold_and_orientation() {
        let raster = Array2::from_shape_vec((2, 2), vec![255u8, 0, 127, 128]).unwrap();
        let g = GridSpec::new(
            AxisSpec::new(2, 1.0, -0.5).unwrap(),
            AxisSpec::new(1, 1.0, 0.0).unwrap(),
            AxisSpec::new(2, 1.0, -0.5).unwrap(),
        )
        .unwrap();
        let m = bitmap_phase(&g, &raster, [1.0, 1.0], 2.0, PatternPlane::Zx).unwrap();
        // top row of the raster is the largest z
        assert_eq!(m.values[(0, 0, 1)], 2.0);
        assert_eq!(m.values[(1, 0, 1)], 0.0);
        assert_eq!(m.values[(0, 0, 0)], 0.0);
        assert_eq!(m.values[(1, 0, 0)], 2.0);
        assert!(bitmap_phase(&g, &Array2::zeros((0, 3)), [1.0, 1.0], 1.0, PatternPlane::Zx).is_err());
    }

    #[test]
    fn two_pulse_period_and_alpha_zero() {
        let g = GridSpec::centered([1, 1, 2048], [1e-3, 1e-3, 5e-6]).unwrap();
        let c = CloudParams::default();
        let beta_bar = 1.4e8;
        let flat = flat_spinwave(&g, &c).unwrap();
        let s0 = two_pulse_spinwave(&g, &c, &TwoPulseParams { alpha: 0.0, delta_t: 8e-6 }, beta_bar).unwrap();
        assert_eq!(s0.values(), flat.values());
        let tp = TwoPulseParams::default();
        assert!((1.0 / (tp.delta_t * beta_bar) - 0.893e-3).abs() < 0.001e-3);
        let s = two_pulse_spinwave(&g, &c, &tp, beta_bar).unwrap();
        for k in 0..g.z.n {
            let z = g.z.coord(k);
            let expect = c.density([0.0, 0.0, z]) * (PI * tp.delta_t * beta_bar * z).cos().abs();
            assert!((s.values()[(0, 0, k)].norm() - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn elliptic_reference_values() {
        let (k, e) = elliptic_ke(0.0);
        assert!((k - PI / 2.0).abs() < 1e-15 && (e - PI / 2.0).abs() < 1e-15);
        // K(0.5), E(0.5) from tables
        let (k, e) = elliptic_ke(0.5);
        assert!((k - 1.854_074_677_301_372).abs() < 1e-13);
        assert!((e - 1.350_643_881_047_675).abs() < 1e-13);
    }

    #[test]
    fn coil_on_axis_and_center() {
        let c = coil(5e-3, 1.0);
        let b = coil_field([0.0, 0.0, 5e-3], &c).unwrap();
        let a: f64 = 5e-3;
        let oracle = MU_0 * a * a / (2.0 * (2.0 * a * a).powf(1.5));
        assert!((b[2] - oracle).abs() / oracle < 1e-12);
        assert!((b[2] - 4.443e-5).abs() < 0.001e-5);
        let b0 = coil_field([0.0; 3], &c).unwrap();
        assert!((b0[2] - 1.2566e-4).abs() < 0.0001e-4);
        assert!(coil_field([5e-3, 0.0, 0.0], &c).is_err());
    }

    #[test]
    fn coil_dipole_far_field() {
        let c = coil(1e-3, 1.0);
        let moment = PI * 1e-6;
        for r in [20e-3, 40e-3] {
            // on-axis and equatorial dipole values
            let ax = coil_field([0.0, 0.0, r], &c).unwrap()[2];
            let eq = coil_field([r, 0.0, 0.0], &c).unwrap()[2];
            let dip = MU_0 * moment / (4.0 * PI * r * r * r);
            assert!((ax / (2.0 * dip) - 1.0).abs() < 0.01);
            assert!((eq / -dip - 1.0).abs() < 0.01);
        }
    }

    #[test]
    fn coil_tilted_axis_matches_rotated_frame() {
        let mut c = coil(2e-3, 0.5);
        let s = 0.5f64.sqrt();
        c.axis = [s, 0.0, s];
        // a point on the tilted axis sees a field along the axis
        let d = 3e-3;
        let b = coil_field([s * d, 0.0, s * d], &c).unwrap();
        let straight = coil_field([0.0, 0.0, d], &coil(2e-3, 0.5)).unwrap()[2];
        assert!((b[0] - s * straight).abs() < 1e-15 && (b[2] - s * straight).abs() < 1e-15);
    }

    #[test]
    fn coil_divergence_free() {
        let c = CoilParams { center: [0.1e-3, -0.2e-3, 0.3e-3], axis: [0.0, 0.6, 0.8], ..coil(1e-3, 1.0) };
        let h = 1e-6;
        for p in [[0.4e-3, 0.3e-3, 0.9e-3], [-1.5e-3, 0.2e-3, -0.4e-3], [0.0, 2e-3, 1e-3]] {
            let mut div = 0.0;
            for i in 0..3 {
                let mut pp = p;
                let mut pm = p;
                pp[i] += h;
                pm[i] -= h;
                div += (coil_field(pp, &c).unwrap()[i] - coil_field(pm, &c).unwrap()[i]) / (2.0 * h);
            }
            let b = coil_field(p, &c).unwrap();
            let bn = dot(b, b).sqrt();
            assert!(div.abs() < 1e-6 * bn / h, "div {div} |B| {bn}");
        }
    }

    #[test]
    fn coil_phase_uniform_and_zero() {
        let g = GridSpec::centered([3, 3, 3], [1e-3, 1e-3, 1e-3]).unwrap();
        let c = CoilParams { current: 0.0, center: [0.0, 10e-3, 0.0], axis: [0.0, 1.0, 0.0], ..coil(1e-3, 0.0) };
        let m = coil_phase_map(&g, &c).unwrap();
        for v in m.values.iter() {
            assert!((v - 8.794).abs() < 1e-3, "{v}");
        }
        let z = coil_phase_map(&g, &CoilParams { t_c: 0.0, ..c }).unwrap();
        assert!(z.values.iter().all(|&v| v == 0.0));
        // μ_B/h in Hz per gauss
        assert!((BOHR_MAGNETON / (2.0 * PI * HBAR) * 1e-4 / 1e6 - 1.3996).abs() < 1e-4);
    }

    proptest! {
        #[test]
        fn two_pulse_extrema(n in -5i32..5) {
            let c = CloudParams { length_z: 1.0, ..CloudParams::default() };
            let tp = TwoPulseParams::default();
            let beta_bar = 1.4e8;
            let period = 1.0 / (tp.delta_t * beta_bar);
            let zmax = n as f64 * period;
            let zmin = (n as f64 + 0.5) * period;
            let g = GridSpec::new(
                AxisSpec::new(1, 1.0, 0.0).unwrap(),
                AxisSpec::new(1, 1.0, 0.0).unwrap(),
                AxisSpec::new(2, zmin - zmax, zmax).unwrap(),
            ).unwrap();
            let s = two_pulse_spinwave(&g, &c, &tp, beta_bar).unwrap();
            let n_max = c.density([0.0, 0.0, zmax]);
            prop_assert!((s.values()[(0, 0, 0)].norm() - n_max).abs() < 1e-9);
            prop_assert!(s.values()[(0, 0, 1)].norm() < 1e-9);
        }
    }
}
