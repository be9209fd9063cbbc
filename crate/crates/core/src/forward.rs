//! Synthesis of the readout signal from a stored spin wave.
//!
//! Two independent routes are provided. [`forward_fft`] evaluates the
//! Fourier relation directly: transverse FFT, per-slice diffraction phase,
//! then an exact DFT sum from `z` onto the readout-time lattice.
//! [`forward_splitstep`] integrates the propagation equation along `z`
//! slice by slice and serves as its oracle.
//!
//! The readout field leaves the cloud at the exit plane `z = z_e`
//! (`ForwardOptions::exit_plane_z`); a slice at `z` picks up the
//! diffraction phase `(z − z_e) k⊥² / 2k₀` on the way there.

use std::f64::consts::PI;

use ndarray::{Array2, Array3, Axis, Zip};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{Axis3, AxisSpec, ComplexField3D, Direction, DomainTag, KSpaceSignal, RealField3D};
use crate::physics::{decoherence_envelope, gem_phase, DecoherenceParams, PhysicsParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ForwardMethod {
    Fft,
    Splitstep,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForwardOptions {
    pub method: ForwardMethod,
    pub z_substeps_per_cell: usize,
    pub include_diffraction: bool,
    pub include_decay: bool,
    pub decoherence: Option<DecoherenceParams>,
    #[serde(rename = "exit_plane_z_m")]
    pub exit_plane_z: f64,
}

impl Default for ForwardOptions {
    fn default() -> Self {
        Self {
            method: ForwardMethod::Fft,
            z_substeps_per_cell: 4,
            include_diffraction: true,
            include_decay: false,
            decoherence: None,
            exit_plane_z: 0.0,
        }
    }
}

impl ForwardOptions {
    pub fn validate(&self) -> Result<()> {
        if self.z_substeps_per_cell == 0 {
            return Err(Error::invalid("z_substeps_per_cell must be at least 1"));
        }
        if self.include_decay && self.decoherence.is_none() {
            return Err(Error::invalid("include_decay requires decoherence parameters"));
        }
        if let Some(d) = &self.decoherence {
            d.validate()?;
        }
        Ok(())
    }
}

/// Multiplies `s` pointwise by `e^{iφ}`.
pub fn imprint_phase(s: &ComplexField3D, phase: &RealField3D) -> Result<ComplexField3D> {
    if s.grid() != &phase.grid {
        return Err(Error::ShapeMismatch("phase map grid differs from field grid".into()));
    }
    let mut out = s.clone();
    Zip::from(out.values_mut()).and(&phase.values).par_for_each(|v, &phi| *v *= Complex64::from_polar(1.0, phi));
    Ok(out)
}

fn require_real_space(s: &ComplexField3D) -> Result<()> {
    if s.domain() != DomainTag::RealSpace {
        return Err(Error::WrongDomain { expected: "real-space", found: s.domain().name() });
    }
    Ok(())
}

/// Transverse wavevector squared for every (kx, ky) bin.
pub(crate) fn kperp_sq(kx: &AxisSpec, ky: &AxisSpec) -> Array2<f64> {
    Array2::from_shape_fn((kx.n, ky.n), |(i, j)| {
        let a = kx.coord(i);
        let b = ky.coord(j);
        a * a + b * b
    })
}

/// Readout signal from the Fourier relation, with the `z → k_z(t_R)`
/// transform evaluated by direct summation on the exact DFT kernel
/// `dz · e^{i 2π β̄ t_R z}`.
pub fn forward_fft(
    s: &ComplexField3D,
    p: &PhysicsParams,
    times: &AxisSpec,
    opt: &ForwardOptions,
) -> Result<KSpaceSignal> {
    require_real_space(s)?;
    p.validate()?;
    times.validate()?;
    opt.validate()?;

    let mixed = s.fft_axes(&[Axis3::X, Axis3::Y], Direction::Forward)?;
    let (kx, ky, z_axis) = (mixed.grid().x, mixed.grid().y, mixed.grid().z);
    let mut cols = mixed.into_values();
    if opt.include_diffraction {
        apply_diffraction(&mut cols, &kx, &ky, &z_axis, opt.exit_plane_z, p.k0, 1.0, Complex64::new(1.0, 0.0));
    }

    let beta = p.beta_bar();
    let zeta = p.chirp_rate();
    let g = p.g();
    let ts = times.coords();
    let zs = z_axis.coords();
    let nz = zs.len();
    // Kernel rows carry every per-time prefactor so each column is one
    // matrix-vector product.
    let kernel: Vec<Complex64> = ts
        .par_iter()
        .flat_map_iter(|&t| {
            let mut pref = g * Complex64::from_polar(z_axis.step, p.omega_l_bar * t + zeta * t * t);
            if opt.include_decay {
                pref *= decoherence_envelope(t, opt.decoherence.as_ref().expect("validated"));
            }
            zs.iter().map(move |&z| pref * Complex64::from_polar(1.0, 2.0 * PI * beta * t * z)).collect::<Vec<_>>()
        })
        .collect();

    let mut out = Array3::<Complex64>::zeros((kx.n, ky.n, times.n));
    Zip::from(out.lanes_mut(Axis(2))).and(cols.lanes(Axis(2))).par_for_each(|mut dst, src| {
        let src: Vec<Complex64> = src.iter().copied().collect();
        if src.iter().all(|v| v.norm_sqr() == 0.0) {
            return;
        }
        for (ti, d) in dst.iter_mut().enumerate() {
            let row = &kernel[ti * nz..(ti + 1) * nz];
            *d = dot(row, &src);
        }
    });
    KSpaceSignal::new(kx, ky, *times, out)
}

#[inline]
fn dot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    let (mut re, mut im) = (0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        re += x.re * y.re - x.im * y.im;
        im += x.re * y.im + x.im * y.re;
    }
    Complex64::new(re, im)
}

/// Multiplies each `(kx, ky, z)` sample by `e^{i·sign·(z − z_ref) k⊥²/2k₀}`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn apply_diffraction(
    cols: &mut Array3<Complex64>,
    kx: &AxisSpec,
    ky: &AxisSpec,
    z_axis: &AxisSpec,
    z_ref: f64,
    k0: f64,
    sign: f64,
    factor: Complex64,
) {
    let k2 = kperp_sq(kx, ky);
    Zip::from(cols.lanes_mut(Axis(2))).and(&k2).par_for_each(|mut lane, &k2| {
        let a = sign * k2 / (2.0 * k0);
        // phasor recurrence along z, exact to a few ulp per step
        let step = Complex64::from_polar(1.0, a * z_axis.step);
        let mut w = factor * Complex64::from_polar(1.0, a * (z_axis.origin - z_ref));
        for v in lane.iter_mut() {
            *v *= w;
            w *= step;
        }
    });
}

/// Oracle: integrates `∂_z Ω = gΩ_C S̃ e^{iφ(z,t_R)} − i k⊥²/(2k₀) Ω` from the
/// first to the last slice for each readout time, then on to the exit plane.
///
/// Each sample plane adds `dz · gΩ_C S̃(z_j)` to the field. Between planes
/// the diffraction operator is applied in symmetric half steps using its
/// unitary Cayley form `(1 − iθ/2)/(1 + iθ/2)`, which is second-order
/// accurate in the substep length.
pub fn forward_splitstep(
    s: &ComplexField3D,
    p: &PhysicsParams,
    times: &AxisSpec,
    opt: &ForwardOptions,
) -> Result<KSpaceSignal> {
    require_real_space(s)?;
    p.validate()?;
    times.validate()?;
    opt.validate()?;

    let mixed = s.fft_axes(&[Axis3::X, Axis3::Y], Direction::Forward)?;
    let (kx, ky, z_axis) = (mixed.grid().x, mixed.grid().y, mixed.grid().z);
    let src = mixed.into_values();
    let k2 = kperp_sq(&kx, &ky);
    let g = p.g();
    let zs = z_axis.coords();
    let h = z_axis.step / opt.z_substeps_per_cell as f64;

    let half_step = |len: f64| -> Array2<Complex64> {
        k2.mapv(|k2| {
            let theta = k2 * (len / 2.0) / (2.0 * p.k0);
            Complex64::new(1.0, -theta / 2.0) / Complex64::new(1.0, theta / 2.0)
        })
    };
    let step_factor = {
        let half = half_step(h);
        half.mapv(|v| v * v)
    };
    let tail = opt.exit_plane_z - z_axis.last();
    let tail_steps = (tail.abs() / h).ceil().max(1.0) as usize;
    let tail_factor = {
        let half = half_step(tail / tail_steps as f64);
        half.mapv(|v| (v * v).powu(tail_steps as u32))
    };

    let slices: Vec<Array2<Complex64>> = times
        .coords()
        .par_iter()
        .map(|&t| {
            let mut omega = Array2::<Complex64>::zeros((kx.n, ky.n));
            for (j, &z) in zs.iter().enumerate() {
                if opt.include_diffraction && j > 0 {
                    for _ in 0..opt.z_substeps_per_cell {
                        Zip::from(&mut omega).and(&step_factor).for_each(|o, f| *o *= f);
                    }
                }
                let kick = g * Complex64::from_polar(z_axis.step, gem_phase(z, t, p));
                Zip::from(&mut omega).and(src.index_axis(Axis(2), j)).for_each(|o, &sv| *o += kick * sv);
            }
            if opt.include_diffraction {
                Zip::from(&mut omega).and(&tail_factor).for_each(|o, f| *o *= f);
            }
            if opt.include_decay {
                let eta = decoherence_envelope(t, opt.decoherence.as_ref().expect("validated"));
                omega.mapv_inplace(|v| v * eta);
            }
            omega
        })
        .collect();

    let mut out = Array3::<Complex64>::zeros((kx.n, ky.n, times.n));
    for (ti, slice) in slices.into_iter().enumerate() {
        out.index_axis_mut(Axis(2), ti).assign(&slice);
    }
    KSpaceSignal::new(kx, ky, *times, out)
}

/// Multiplies each readout slice by `η(t_R)`.
pub fn apply_decay(sig: &KSpaceSignal, d: &DecoherenceParams) -> KSpaceSignal {
    sig.scale_slices(|t| Complex64::new(decoherence_envelope(t, d), 0.0))
}

/// Dispatches on [`ForwardOptions::method`].
pub fn forward(s: &ComplexField3D, p: &PhysicsParams, times: &AxisSpec, opt: &ForwardOptions) -> Result<KSpaceSignal> {
    match opt.method {
        ForwardMethod::Fft => forward_fft(s, p, times, opt),
        ForwardMethod::Splitstep => forward_splitstep(s, p, times, opt),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::GridSpec;

    fn physics() -> PhysicsParams {
        PhysicsParams::new(1.4e8, 0.0, 0.0, 2.0 * PI / 795e-9, Complex64::new(1.0, 0.0)).unwrap()
    }

    fn no_diffraction() -> ForwardOptions {
        ForwardOptions { include_diffraction: false, ..Default::default() }
    }

    #[test]
    fn imprint_trivia() {
        let g = GridSpec::centered([2, 2, 3], [1e-5, 1e-5, 1e-4]).unwrap();
        let s = ComplexField3D::from_fn(g, |p| Complex64::new(1.0 + p[2] * 1e3, 0.5)).unwrap();
        let zero = RealField3D::zeros(g);
        assert_eq!(imprint_phase(&s, &zero).unwrap(), s);
        let pi = RealField3D::from_fn(g, |_| PI);
        let neg = imprint_phase(&s, &pi).unwrap();
        for (a, b) in neg.values().iter().zip(s.values()) {
            assert!((a + b).norm() < 1e-15);
        }
        let other = GridSpec::centered([2, 2, 4], [1e-5, 1e-5, 1e-4]).unwrap();
        assert!(imprint_phase(&s, &RealField3D::zeros(other)).is_err());
    }

    #[test]
    fn zero_source_gives_zero_signal() {
        let g = GridSpec::centered([4, 4, 8], [2e-5, 2e-5, 1e-4]).unwrap();
        let s = ComplexField3D::zeros(g);
        let times = AxisSpec::new(5, 1e-7, 0.0).unwrap();
        for method in [ForwardMethod::Fft, ForwardMethod::Splitstep] {
            let opt = ForwardOptions { method, ..Default::default() };
            let sig = forward(&s, &physics(), &times, &opt).unwrap();
            assert!(sig.values().iter().all(|v| v.norm() == 0.0));
        }
    }

    #[test]
    fn wrong_domain_rejected() {
        let g = GridSpec::centered([2, 2, 2], [1e-5, 1e-5, 1e-4]).unwrap();
        let s = ComplexField3D::zeros(g).fft_axes(&[Axis3::Z], Direction::Forward).unwrap();
        let times = AxisSpec::new(2, 1e-7, 0.0).unwrap();
        assert!(matches!(forward_fft(&s, &physics(), &times, &Default::default()), Err(Error::WrongDomain { .. })));
    }

    #[test]
    fn flat_box_gives_sinc_echo() {
        // 10 mm rectangle: |Ω(0,0,t)| ∝ |sinc(π β̄ L t)|, first zero at 1/(β̄L).
        let dz = 10e-3 / 400.0;
        let g = GridSpec::new(
            AxisSpec::centered(1, 1e-5).unwrap(),
            AxisSpec::centered(1, 1e-5).unwrap(),
            AxisSpec::new(400, dz, -5e-3 + dz / 2.0).unwrap(),
        )
        .unwrap();
        let s = ComplexField3D::from_fn(g, |_| Complex64::new(1.0, 0.0)).unwrap();
        let t_zero: f64 = 1.0 / (1.4e8 * 10e-3);
        assert!((t_zero - 0.714e-6).abs() < 1e-9);
        let times = AxisSpec::new(3, t_zero / 2.0, 0.0).unwrap();
        let sig = forward_fft(&s, &physics(), &times, &no_diffraction()).unwrap();
        let v = sig.values();
        assert!((v[[0, 0, 0]].norm() - 10e-3).abs() < 1e-12);
        let expect_half = 10e-3 * (2.0 / PI);
        assert!((v[[0, 0, 1]].norm() - expect_half).abs() < 1e-3 * expect_half);
        assert!(v[[0, 0, 2]].norm() < 1e-12);
    }

    #[test]
    fn decay_identity_for_infinite_lifetimes() {
        let kx = AxisSpec::centered(2, 1.0).unwrap();
        let t = AxisSpec::new(3, 1e-5, 0.0).unwrap();
        let vals = Array3::from_shape_fn((2, 2, 3), |(i, j, k)| Complex64::new(i as f64, (j + k) as f64));
        let sig = KSpaceSignal::new(kx, kx, t, vals).unwrap();
        assert_eq!(apply_decay(&sig, &DecoherenceParams::none()), sig);
        let d = DecoherenceParams::new(173e-6, 175.4e-6).unwrap();
        let t100 = AxisSpec::new(2, 100e-6, 0.0).unwrap();
        let one = KSpaceSignal::new(kx, kx, t100, Array3::from_elem((2, 2, 2), Complex64::new(1.0, 0.0))).unwrap();
        let decayed = apply_decay(&one, &d);
        assert!((decayed.values()[[0, 0, 1]].re - 0.8026).abs() < 5e-5);
    }
}
