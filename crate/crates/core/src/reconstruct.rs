//! Inversion of the readout signal back to the spin wave.

use std::f64::consts::PI;

use ndarray::{Array3, Axis, Zip};
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{Axis3, AxisSpec, ComplexField3D, Direction, DomainTag, GridSpec, KSpaceSignal, RealField3D};
use crate::forward::apply_diffraction;
use crate::physics::{decoherence_envelope, DecoherenceParams, PhysicsParams};

/// Parameters found by calibration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibParams {
    #[serde(rename = "z0_m")]
    pub z0: f64,
    #[serde(rename = "zeta_rad_per_s2")]
    pub zeta: f64,
    #[serde(rename = "omega_L_bar_rad_per_s")]
    pub omega_l_bar: f64,
    pub sx: f64,
    pub sy: f64,
    pub sz: f64,
    #[serde(rename = "rotation_rad")]
    pub rotation_xy: f64,
    pub eta_floor: f64,
}

impl Default for CalibParams {
    fn default() -> Self {
        Self { z0: 0.0, zeta: 0.0, omega_l_bar: 0.0, sx: 1.0, sy: 1.0, sz: 1.0, rotation_xy: 0.0, eta_floor: 0.1 }
    }
}

impl CalibParams {
    /// Calibration that exactly undoes the given physics (exit plane `z0`).
    pub fn matched(p: &PhysicsParams, z0: f64) -> Self {
        Self { z0, zeta: p.chirp_rate(), omega_l_bar: p.omega_l_bar, ..Self::default() }
    }

    pub fn axis_scale(&self) -> [f64; 3] {
        [self.sx, self.sy, self.sz]
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta_floor > 0.0 && self.eta_floor <= 1.0) {
            return Err(Error::invalid(format!("eta_floor must lie in (0, 1], got {}", self.eta_floor)));
        }
        for (name, s) in [("sx", self.sx), ("sy", self.sy), ("sz", self.sz)] {
            if !(s.is_finite() && s > 0.0) {
                return Err(Error::invalid(format!("axis scale {name} must be positive, got {s}")));
            }
        }
        if ![self.z0, self.zeta, self.omega_l_bar, self.rotation_xy].iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("calibration parameters"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ReconstructOptions {
    /// Lifetimes used for decay compensation; `None` skips that stage.
    pub decoherence: Option<DecoherenceParams>,
    /// Output z grid; defaults to [`default_z_axis`].
    pub z_axis: Option<AxisSpec>,
}

/// Centred z grid with `n_t` samples spanning `1/(β̄·dt)`.
pub fn default_z_axis(times: &AxisSpec, beta_bar: f64) -> Result<AxisSpec> {
    let step = 1.0 / (beta_bar.abs() * times.step * times.n as f64);
    AxisSpec::centered(times.n, step)
}

/// Multiplies the slice at `t` by `e^{−iζt²}`.
pub fn compensate_chirp(sig: &KSpaceSignal, zeta: f64) -> KSpaceSignal {
    sig.scale_slices(|t| Complex64::from_polar(1.0, -zeta * t * t))
}

/// Divides the slice at `t` by `max(η(t), eta_floor)`.
pub fn compensate_decay(sig: &KSpaceSignal, d: &DecoherenceParams, eta_floor: f64) -> Result<KSpaceSignal> {
    if !(eta_floor > 0.0) {
        return Err(Error::invalid("eta_floor must be positive"));
    }
    d.validate()?;
    Ok(sig.scale_slices(|t| Complex64::new(1.0 / decoherence_envelope(t, d).max(eta_floor), 0.0)))
}

/// Stages 1–3: bias precession, chirp and decay compensation.
pub(crate) fn prepare_slices(sig: &KSpaceSignal, c: &CalibParams, opt: &ReconstructOptions) -> Result<KSpaceSignal> {
    let (w, zeta) = (c.omega_l_bar, c.zeta);
    let mut out = sig.scale_slices(|t| Complex64::from_polar(1.0, -w * t - zeta * t * t));
    if let Some(d) = &opt.decoherence {
        out = compensate_decay(&out, d, c.eta_floor)?;
    }
    Ok(out)
}

/// Stage 4: `C·Σ_t e^{−i2πβ̄tz}` onto `z_axis`, with `C = β̄·dt` so that it
/// inverts the forward sum when `dz = 1/(β̄·dt·n_t)`.
pub(crate) fn z_transform(sig: &KSpaceSignal, beta_bar: f64, z_axis: &AxisSpec) -> Array3<Complex64> {
    let t = sig.t;
    let nt = t.n;
    let nz = z_axis.n;
    let c = beta_bar.abs() * t.step;
    let mut out = Array3::<Complex64>::zeros((sig.kx.n, sig.ky.n, nz));
    // lattice-aligned axes reduce to a zero-padded DFT of length n_fft
    let cycles = 1.0 / (beta_bar * t.step * z_axis.step);
    let n_fft = cycles.round();
    let aligned = n_fft >= nt.max(nz) as f64 && (cycles / n_fft - 1.0).abs() < 1e-12;
    if aligned {
        let n_fft = n_fft as usize;
        // e^{−i2πβ̄(t0 + m dt)(z0 + j dz)} = post_j · pre_m · e^{−2πi mj/N}
        let fft = FftPlanner::new().plan_fft_forward(n_fft);
        let pre: Vec<Complex64> = (0..nt)
            .map(|m| Complex64::from_polar(c, -2.0 * PI * beta_bar * m as f64 * t.step * z_axis.origin))
            .collect();
        let post: Vec<Complex64> =
            (0..nz).map(|j| Complex64::from_polar(1.0, -2.0 * PI * beta_bar * t.origin * z_axis.coord(j))).collect();
        Zip::from(out.lanes_mut(Axis(2))).and(sig.values().lanes(Axis(2))).par_for_each(|mut dst, src| {
            let mut buf: Vec<Complex64> = src.iter().zip(&pre).map(|(v, p)| v * p).collect();
            buf.resize(n_fft, Complex64::new(0.0, 0.0));
            fft.process(&mut buf);
            dst.iter_mut().zip(buf.iter().zip(&post)).for_each(|(d, (b, p))| *d = b * p);
        });
    } else {
        let ts = t.coords();
        let kernel: Vec<Complex64> = z_axis
            .coords()
            .par_iter()
            .flat_map_iter(|&z| {
                ts.iter().map(move |&tm| Complex64::from_polar(c, -2.0 * PI * beta_bar * tm * z)).collect::<Vec<_>>()
            })
            .collect();
        Zip::from(out.lanes_mut(Axis(2))).and(sig.values().lanes(Axis(2))).par_for_each(|mut dst, src| {
            let src: Vec<Complex64> = src.iter().copied().collect();
            for (j, d) in dst.iter_mut().enumerate() {
                *d = kernel[j * nt..(j + 1) * nt].iter().zip(&src).map(|(k, v)| k * v).sum();
            }
        });
    }
    out
}

/// Stages 5–8 on the mixed-domain columns.
pub(crate) fn finish(
    mut cols: Array3<Complex64>,
    kx: &AxisSpec,
    ky: &AxisSpec,
    z_axis: &AxisSpec,
    p: &PhysicsParams,
    c: &CalibParams,
) -> Result<ComplexField3D> {
    // the 1/g gain commutes with the transverse transform
    apply_diffraction(&mut cols, kx, ky, z_axis, c.z0, p.k0, -1.0, 1.0 / p.g());
    let grid = GridSpec::new(*kx, *ky, *z_axis)?;
    let mixed = ComplexField3D::with_domain(grid, cols, DomainTag::KxyZ)?;
    let mut real = mixed.into_fft_axes(&[Axis3::X, Axis3::Y], Direction::Inverse)?;
    let scale = c.axis_scale();
    for a in Axis3::ALL {
        let ax = real.grid_mut().axis_mut(a);
        ax.step *= scale[a.index()];
        ax.origin *= scale[a.index()];
    }
    real.rotation_xy = c.rotation_xy;
    Ok(real)
}

fn check_inputs(sig: &KSpaceSignal, p: &PhysicsParams, c: &CalibParams) -> Result<()> {
    p.validate()?;
    c.validate()?;
    sig.t.validate()?;
    if !sig.values().iter().all(|v| v.re.is_finite() && v.im.is_finite()) {
        return Err(Error::NonFinite("signal values"));
    }
    Ok(())
}

/// Full inversion of a readout signal to `S(x, y, z)`.
pub fn reconstruct(
    sig: &KSpaceSignal,
    p: &PhysicsParams,
    c: &CalibParams,
    opt: &ReconstructOptions,
) -> Result<ComplexField3D> {
    check_inputs(sig, p, c)?;
    let z_axis = match opt.z_axis {
        Some(z) => {
            z.validate()?;
            z
        }
        None => default_z_axis(&sig.t, p.beta_bar())?,
    };
    let prepared = prepare_slices(sig, c, opt)?;
    let cols = z_transform(&prepared, p.beta_bar(), &z_axis);
    finish(cols, &sig.kx, &sig.ky, &z_axis, p, c)
}

/// `ρ = s / s_ref` where `|s_ref| > threshold·max|s_ref|`; zero elsewhere.
pub fn normalize_and_mask(
    s: &ComplexField3D,
    s_ref: &ComplexField3D,
    threshold: f64,
) -> Result<(ComplexField3D, Array3<bool>)> {
    if s.grid() != s_ref.grid() || s.domain() != s_ref.domain() {
        return Err(Error::ShapeMismatch("field and reference grids differ".into()));
    }
    if !(0.0..1.0).contains(&threshold) {
        return Err(Error::invalid("mask threshold must lie in [0, 1)"));
    }
    let peak = s_ref.values().iter().map(|v| v.norm()).fold(0.0, f64::max);
    let mask = s_ref.values().mapv(|v| peak > 0.0 && v.norm() > threshold * peak);
    let mut rho = s.clone();
    Zip::from(rho.values_mut())
        .and(s_ref.values())
        .and(&mask)
        .par_for_each(|v, r, &m| *v = if m { *v / r } else { Complex64::new(0.0, 0.0) });
    Ok((rho, mask))
}

/// RMS of the wrapped phase error of `field` against `target` inside `mask`,
/// after removing the best global phase offset.
pub fn masked_phase_rmse(field: &ComplexField3D, target: &RealField3D, mask: &Array3<bool>) -> Result<f64> {
    if field.values().dim() != target.values.dim() || mask.dim() != target.values.dim() {
        return Err(Error::ShapeMismatch("phase comparison inputs differ in shape".into()));
    }
    let mut acc = Complex64::new(0.0, 0.0);
    let mut diffs = Vec::new();
    Zip::from(field.values()).and(&target.values).and(mask).for_each(|v, &t, &m| {
        if m {
            let d = v * Complex64::from_polar(1.0, -t);
            if d.norm() > 0.0 {
                let u = d / d.norm();
                acc += u;
                diffs.push(u);
            }
        }
    });
    if diffs.is_empty() {
        return Err(Error::invalid("mask selects no usable samples"));
    }
    let offset = if acc.norm() > 0.0 { acc / acc.norm() } else { Complex64::new(1.0, 0.0) };
    let ss: f64 = diffs.iter().map(|u| (u * offset.conj()).arg().powi(2)).sum();
    Ok((ss / diffs.len() as f64).sqrt())
}

/// `sqrt(Σ(|a|−|b|)² / Σ|b|²)` over the mask.
pub fn masked_magnitude_rel_rmse(a: &ComplexField3D, b: &ComplexField3D, mask: &Array3<bool>) -> Result<f64> {
    if a.values().dim() != b.values().dim() || mask.dim() != a.values().dim() {
        return Err(Error::ShapeMismatch("magnitude comparison inputs differ in shape".into()));
    }
    let (mut num, mut den) = (0.0, 0.0);
    Zip::from(a.values()).and(b.values()).and(mask).for_each(|x, y, &m| {
        if m {
            num += (x.norm() - y.norm()).powi(2);
            den += y.norm_sqr();
        }
    });
    if den == 0.0 {
        return Err(Error::invalid("mask selects no signal"));
    }
    Ok((num / den).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::{forward_fft, ForwardOptions};
    use crate::physics::log_decoherence_envelope;
    use proptest::prelude::*;

    fn physics() -> PhysicsParams {
        PhysicsParams::new(1.4e8, 0.0, 0.0, 7.9e6, Complex64::new(0.7, 0.2)).unwrap()
    }

    fn setup(nt: usize) -> (PhysicsParams, AxisSpec, GridSpec) {
        let p = physics();
        let times = AxisSpec::new(nt, 1e-7, 0.0).unwrap();
        let dz = 1.0 / (p.beta_bar() * times.step * nt as f64);
        let grid = GridSpec::centered([8, 8, nt / 2], [15e-6, 15e-6, dz]).unwrap();
        (p, times, grid)
    }

    fn blob(grid: &GridSpec) -> ComplexField3D {
        ComplexField3D::from_fn(*grid, |[x, y, z]| {
            let r = (-(x * x + y * y) / (2.0 * 30e-6f64.powi(2))).exp() * (-(z * z) / (2.0 * 0.5e-3f64.powi(2))).exp();
            Complex64::from_polar(r, 3000.0 * x - 1500.0 * z)
        })
        .unwrap()
    }

    fn rel(a: &Array3<Complex64>, b: &Array3<Complex64>) -> f64 {
        let num: f64 = Zip::from(a).and(b).fold(0.0, |acc, x, y| acc + (x - y).norm_sqr());
        let den: f64 = b.iter().map(|v| v.norm_sqr()).sum();
        (num / den).sqrt()
    }

    #[test]
    fn chirp_examples() {
        let k = AxisSpec::centered(1, 1.0).unwrap();
        let t = AxisSpec::new(2, 100e-6, 0.0).unwrap();
        let sig = KSpaceSignal::new(k, k, t, Array3::from_elem((1, 1, 2), Complex64::new(1.0, 0.0))).unwrap();
        assert_eq!(compensate_chirp(&sig, 0.0), sig);
        let out = compensate_chirp(&sig, -0.01e12);
        let expect = Complex64::from_polar(1.0, 100.0);
        assert!((out.values()[(0, 0, 1)] - expect).norm() < 1e-12);
        let back = compensate_chirp(&out, 0.01e12);
        assert!(back.relative_difference(&sig) < 1e-14);
    }

    #[test]
    fn decay_gain_and_floor() {
        let k = AxisSpec::centered(1, 1.0).unwrap();
        let t = AxisSpec::new(3, 100e-6, 0.0).unwrap();
        let sig = KSpaceSignal::new(k, k, t, Array3::from_elem((1, 1, 3), Complex64::new(1.0, 0.0))).unwrap();
        let d = DecoherenceParams::new(173e-6, 175.4e-6).unwrap();
        let out = compensate_decay(&sig, &d, 0.1).unwrap();
        assert!((out.values()[(0, 0, 1)].re - 1.246).abs() < 1e-3);
        // η(200 μs) ≈ 0.17, η(…) below floor is capped
        let hard = compensate_decay(&sig, &d, 0.5).unwrap();
        assert!((hard.values()[(0, 0, 2)].re - 2.0).abs() < 1e-12);
        assert!(compensate_decay(&sig, &d, 0.0).is_err());
        let applied = crate::forward::apply_decay(&sig, &d);
        let undone = compensate_decay(&applied, &d, 1e-6).unwrap();
        assert!(undone.relative_difference(&sig) < 1e-12);
        assert!(log_decoherence_envelope(200e-6, &d).exp() < 0.5);
    }

    #[test]
    fn fast_and_direct_z_transforms_agree() {
        let (p, times, grid) = setup(32);
        let s = blob(&grid);
        let sig = forward_fft(&s, &p, &times, &ForwardOptions::default()).unwrap();
        let z = default_z_axis(&times, p.beta_bar()).unwrap();
        let fast = z_transform(&sig, p.beta_bar(), &z);
        // same grid, offset by a tiny fraction so the fast path is not taken
        let mut z2 = z;
        z2.step *= 1.0 + 1e-11;
        let slow = z_transform(&sig, p.beta_bar(), &z2);
        assert!(rel(&fast, &slow) < 1e-8);
    }

    #[test]
    fn padded_fast_path_matches_direct_sum() {
        let (p, times, grid) = setup(32);
        let sig = forward_fft(&blob(&grid), &p, &times, &ForwardOptions::default()).unwrap();
        let z = default_z_axis(&times, p.beta_bar()).unwrap();
        // half step, 3/2 of the samples, off-centre origin
        let fine = AxisSpec::new(3 * z.n / 2, z.step / 2.0, z.origin + 0.3 * z.step).unwrap();
        let fast = z_transform(&sig, p.beta_bar(), &fine);
        let mut off = fine;
        off.step *= 1.0 + 1e-11;
        let slow = z_transform(&sig, p.beta_bar(), &off);
        assert!(rel(&fast, &slow) < 1e-8);
    }

    #[test]
    fn round_trip_identity() {
        let (p, times, grid) = setup(64);
        let s = blob(&grid);
        let opt = ForwardOptions { exit_plane_z: 0.4e-3, ..Default::default() };
        let sig = forward_fft(&s, &p, &times, &opt).unwrap();
        let c = CalibParams::matched(&p, 0.4e-3);
        let r = reconstruct(&sig, &p, &c, &ReconstructOptions { z_axis: Some(grid.z), decoherence: None }).unwrap();
        assert!(rel(r.values(), s.values()) < 1e-6, "{}", rel(r.values(), s.values()));
        assert_eq!(r.grid(), s.grid());
        // default z grid contains the source grid
        let full = reconstruct(&sig, &p, &c, &ReconstructOptions::default()).unwrap();
        let off = (full.grid().z.n - grid.z.n) / 2;
        let sub = full.values().slice(ndarray::s![.., .., off..off + grid.z.n]).to_owned();
        assert!(rel(&sub, s.values()) < 1e-6);
    }

    #[test]
    fn round_trip_with_chirp_bias_and_decay() {
        let (_, times, grid) = setup(64);
        let p = PhysicsParams::new(1.4e8, -2.0e6, 3e-3, 7.9e6, Complex64::new(0.3, -0.9)).unwrap();
        let s = blob(&ComplexField3D::zeros(grid).grid().clone());
        let d = DecoherenceParams::new(173e-6, 175e-6).unwrap();
        let fopt = ForwardOptions { include_decay: true, decoherence: Some(d), ..Default::default() };
        let sig = forward_fft(&s, &p, &times, &fopt).unwrap();
        let c = CalibParams { eta_floor: 0.01, ..CalibParams::matched(&p, 0.0) };
        let opt = ReconstructOptions { z_axis: Some(grid.z), decoherence: Some(d) };
        let r = reconstruct(&sig, &p, &c, &opt).unwrap();
        assert!(rel(r.values(), s.values()) < 1e-6);
    }

    #[test]
    fn zero_signal_and_metadata() {
        let (p, times, _) = setup(16);
        let k = AxisSpec::centered(4, 1e4).unwrap();
        let sig = KSpaceSignal::zeros(k, k, times);
        let c = CalibParams { sx: 2.0, rotation_xy: 0.03, ..CalibParams::default() };
        let r = reconstruct(&sig, &p, &c, &ReconstructOptions::default()).unwrap();
        assert!(r.values().iter().all(|v| v.norm() == 0.0));
        let unscaled = k.conjugate();
        assert!((r.grid().x.step - 2.0 * unscaled.step).abs() < 1e-18);
        assert_eq!(r.rotation_xy, 0.03);
        let bad = CalibParams { eta_floor: 0.0, ..CalibParams::default() };
        assert!(reconstruct(&sig, &p, &bad, &ReconstructOptions::default()).is_err());
    }

    #[test]
    fn calib_json_keys() {
        let json = serde_json::to_value(CalibParams::default()).unwrap();
        for key in ["z0_m", "zeta_rad_per_s2", "sx", "sy", "sz", "rotation_rad", "omega_L_bar_rad_per_s", "eta_floor"] {
            assert!(json.get(key).is_some(), "{key}");
        }
    }

    #[test]
    fn mask_rules() {
        let g = GridSpec::centered([2, 1, 2], [1.0, 1.0, 1.0]).unwrap();
        let r = ComplexField3D::new(
            g,
            Array3::from_shape_vec(
                (2, 1, 2),
                vec![
                    Complex64::new(1.0, 0.0),
                    Complex64::new(0.05, 0.0),
                    Complex64::new(0.0, 0.5),
                    Complex64::new(0.1, 0.0),
                ],
            )
            .unwrap(),
        )
        .unwrap();
        let (rho, mask) = normalize_and_mask(&r, &r, 0.1).unwrap();
        assert_eq!(mask.iter().filter(|&&m| m).count(), 2);
        for (v, &m) in rho.values().iter().zip(&mask) {
            if m {
                assert!((v - Complex64::new(1.0, 0.0)).norm() < 1e-15);
            }
        }
        let zero = ComplexField3D::zeros(g);
        let (rho0, mask0) = normalize_and_mask(&r, &zero, 0.1).unwrap();
        assert!(mask0.iter().all(|&m| !m));
        assert!(rho0.values().iter().all(|v| v.norm() == 0.0));
        let other = ComplexField3D::zeros(GridSpec::centered([2, 1, 2], [2.0, 1.0, 1.0]).unwrap());
        assert!(normalize_and_mask(&r, &other, 0.1).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]
        #[test]
        fn masked_phase_invariant_under_constant_factor(re in -2.0f64..2.0, im in -2.0f64..2.0) {
            prop_assume!(re.hypot(im) > 0.05);
            let (p, times, grid) = setup(32);
            let s = blob(&grid);
            let sig = forward_fft(&s, &p, &times, &ForwardOptions::default()).unwrap();
            let c = CalibParams::matched(&p, 0.0);
            let opt = ReconstructOptions { z_axis: Some(grid.z), decoherence: None };
            let a = reconstruct(&sig, &p, &c, &opt).unwrap();
            let mut scaled = sig.clone();
            scaled.values_mut().mapv_inplace(|v| v * Complex64::new(re, im));
            let b = reconstruct(&scaled, &p, &c, &opt).unwrap();
            let target = RealField3D::new(grid, a.values().mapv(|v| v.arg())).unwrap();
            let (_, mask) = normalize_and_mask(&a, &a, 0.1).unwrap();
            prop_assert!(masked_phase_rmse(&b, &target, &mask).unwrap() < 1e-9);
        }

        #[test]
        fn diffraction_factors_cancel(z in -5e-3f64..5e-3, z0 in -5e-3f64..5e-3) {
            let k = AxisSpec::centered(4, 5e3).unwrap();
            let za = AxisSpec::new(1, 1.0, z).unwrap();
            let mut cols = Array3::from_elem((4, 4, 1), Complex64::new(1.0, 0.0));
            apply_diffraction(&mut cols, &k, &k, &za, z0, 7.9e6, 1.0, Complex64::new(1.0, 0.0));
            apply_diffraction(&mut cols, &k, &k, &za, z0, 7.9e6, -1.0, Complex64::new(1.0, 0.0));
            prop_assert!(cols.iter().all(|v| (v - Complex64::new(1.0, 0.0)).norm() < 1e-14));
        }
    }
}
