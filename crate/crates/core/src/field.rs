//! Grids, complex 3D fields and the readout-signal container.

use std::f64::consts::PI;

use ndarray::{Array3, Zip};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft;

/// A uniformly sampled coordinate axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisSpec {
    pub n: usize,
    pub step: f64,
    pub origin: f64,
}

impl AxisSpec {
    pub fn new(n: usize, step: f64, origin: f64) -> Result<Self> {
        let axis = Self { n, step, origin };
        axis.validate()?;
        Ok(axis)
    }

    /// Axis whose middle sample (index `n/2`) sits at zero.
    pub fn centered(n: usize, step: f64) -> Result<Self> {
        Self::new(n, step, -((n / 2) as f64) * step)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::invalid("axis must have at least one sample"));
        }
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::invalid(format!("axis step must be positive, got {}", self.step)));
        }
        if !self.origin.is_finite() {
            return Err(Error::invalid("axis origin must be finite"));
        }
        Ok(())
    }

    #[inline]
    pub fn coord(&self, i: usize) -> f64 {
        self.origin + i as f64 * self.step
    }

    pub fn coords(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.coord(i)).collect()
    }

    pub fn span(&self) -> f64 {
        self.n as f64 * self.step
    }

    pub fn last(&self) -> f64 {
        self.coord(self.n - 1)
    }

    /// The centred conjugate axis, `step' = 2π / (n·step)`.
    pub fn conjugate(&self) -> AxisSpec {
        let step = 2.0 * PI / (self.n as f64 * self.step);
        AxisSpec { n: self.n, step, origin: -((self.n / 2) as f64) * step }
    }

    /// Index of the sample nearest to `x`, if inside the axis.
    pub fn nearest_index(&self, x: f64) -> Option<usize> {
        let i = ((x - self.origin) / self.step).round();
        (i >= 0.0 && i < self.n as f64).then_some(i as usize)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Axis3 {
    X,
    Y,
    Z,
}

impl Axis3 {
    pub const ALL: [Axis3; 3] = [Axis3::X, Axis3::Y, Axis3::Z];

    pub fn index(self) -> usize {
        match self {
            Axis3::X => 0,
            Axis3::Y => 1,
            Axis3::Z => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

/// A rectilinear 3D sampling grid in metres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub x: AxisSpec,
    pub y: AxisSpec,
    pub z: AxisSpec,
}

impl GridSpec {
    pub fn new(x: AxisSpec, y: AxisSpec, z: AxisSpec) -> Result<Self> {
        let grid = Self { x, y, z };
        grid.validate()?;
        Ok(grid)
    }

    /// Grid with every axis centred on zero.
    pub fn centered(n: [usize; 3], step: [f64; 3]) -> Result<Self> {
        Self::new(
            AxisSpec::centered(n[0], step[0])?,
            AxisSpec::centered(n[1], step[1])?,
            AxisSpec::centered(n[2], step[2])?,
        )
    }

    pub fn validate(&self) -> Result<()> {
        self.x.validate()?;
        self.y.validate()?;
        self.z.validate()
    }

    pub fn axis(&self, a: Axis3) -> &AxisSpec {
        match a {
            Axis3::X => &self.x,
            Axis3::Y => &self.y,
            Axis3::Z => &self.z,
        }
    }

    pub fn axis_mut(&mut self, a: Axis3) -> &mut AxisSpec {
        match a {
            Axis3::X => &mut self.x,
            Axis3::Y => &mut self.y,
            Axis3::Z => &mut self.z,
        }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.x.n, self.y.n, self.z.n)
    }

    pub fn len(&self) -> usize {
        self.x.n * self.y.n * self.z.n
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn point(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        [self.x.coord(i), self.y.coord(j), self.z.coord(k)]
    }
}

/// Which Fourier domain a field currently lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DomainTag {
    RealSpace,
    /// Transverse axes transformed, longitudinal axis in real space.
    KxyZ,
    Kxykz,
    /// Any other combination of transformed axes.
    Mixed,
}

impl DomainTag {
    pub fn name(self) -> &'static str {
        match self {
            DomainTag::RealSpace => "real-space",
            DomainTag::KxyZ => "kxy-z",
            DomainTag::Kxykz => "kxykz",
            DomainTag::Mixed => "mixed",
        }
    }

    fn from_flags(spectral: [bool; 3]) -> Self {
        match spectral {
            [false, false, false] => DomainTag::RealSpace,
            [true, true, false] => DomainTag::KxyZ,
            [true, true, true] => DomainTag::Kxykz,
            _ => DomainTag::Mixed,
        }
    }
}

/// Complex scalar field on a [`GridSpec`].
///
/// Axes that have been Fourier transformed carry wavevector metadata
/// (rad/m). The real-space origin of a transformed axis is remembered so an
/// inverse transform restores the original coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexField3D {
    grid: GridSpec,
    values: Array3<Complex64>,
    spectral: [bool; 3],
    conjugate_origin: [f64; 3],
    /// In-plane rotation (rad) of the physical frame relative to the grid.
    pub rotation_xy: f64,
}

impl ComplexField3D {
    /// Real-space field. Fails on shape mismatch or non-finite values.
    pub fn new(grid: GridSpec, values: Array3<Complex64>) -> Result<Self> {
        Self::with_domain(grid, values, DomainTag::RealSpace)
    }

    pub fn with_domain(grid: GridSpec, values: Array3<Complex64>, domain: DomainTag) -> Result<Self> {
        grid.validate()?;
        if values.dim() != grid.shape() {
            return Err(Error::ShapeMismatch(format!("values {:?} vs grid {:?}", values.dim(), grid.shape())));
        }
        if !values.iter().all(|v| v.re.is_finite() && v.im.is_finite()) {
            return Err(Error::NonFinite("field values"));
        }
        let spectral = match domain {
            DomainTag::RealSpace => [false; 3],
            DomainTag::KxyZ => [true, true, false],
            DomainTag::Kxykz => [true; 3],
            DomainTag::Mixed => return Err(Error::invalid("cannot construct a mixed-domain field")),
        };
        let mut conjugate_origin = [0.0; 3];
        for a in Axis3::ALL {
            let ax = grid.axis(a);
            conjugate_origin[a.index()] = ax.conjugate().origin;
        }
        Ok(Self { grid, values, spectral, conjugate_origin, rotation_xy: 0.0 })
    }

    pub fn zeros(grid: GridSpec) -> Self {
        let values = Array3::zeros(grid.shape());
        Self::new(grid, values).expect("zero field on a valid grid")
    }

    pub fn from_fn(grid: GridSpec, f: impl Fn([f64; 3]) -> Complex64 + Sync) -> Result<Self> {
        let values = Array3::from_shape_fn(grid.shape(), |(i, j, k)| f(grid.point(i, j, k)));
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn grid_mut(&mut self) -> &mut GridSpec {
        &mut self.grid
    }

    pub fn values(&self) -> &Array3<Complex64> {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut Array3<Complex64> {
        &mut self.values
    }

    pub fn into_values(self) -> Array3<Complex64> {
        self.values
    }

    pub fn domain(&self) -> DomainTag {
        DomainTag::from_flags(self.spectral)
    }

    pub fn is_spectral(&self, axis: Axis3) -> bool {
        self.spectral[axis.index()]
    }

    /// Returns a copy with `f` applied to every value.
    pub fn map(&self, f: impl Fn(Complex64) -> Complex64) -> Self {
        let mut out = self.clone();
        out.values.mapv_inplace(f);
        out
    }

    /// Unitary centred DFT along the named axes (forward kernel `e^{-ik·r}`).
    ///
    /// Transforming an axis that is already in the requested domain is an
    /// error, as is a field with non-finite values.
    pub fn fft_axes(&self, axes: &[Axis3], direction: Direction) -> Result<Self> {
        self.clone().into_fft_axes(axes, direction)
    }

    /// [`ComplexField3D::fft_axes`] reusing this field's storage.
    pub fn into_fft_axes(self, axes: &[Axis3], direction: Direction) -> Result<Self> {
        if !self.values.iter().all(|v| v.re.is_finite() && v.im.is_finite()) {
            return Err(Error::NonFinite("field values"));
        }
        let mut out = self;
        for &a in axes {
            let idx = a.index();
            let want_spectral = direction == Direction::Forward;
            if out.spectral[idx] == want_spectral {
                return Err(Error::WrongDomain {
                    expected: if want_spectral { "real-space axis" } else { "spectral axis" },
                    found: if want_spectral { "spectral axis" } else { "real-space axis" },
                });
            }
            fft::transform_axis(&mut out.values, idx, direction);
            let ax = *out.grid.axis(a);
            let mut conj = ax.conjugate();
            conj.origin = out.conjugate_origin[idx];
            out.conjugate_origin[idx] = ax.origin;
            *out.grid.axis_mut(a) = conj;
            out.spectral[idx] = want_spectral;
        }
        Ok(out)
    }
}

/// Sum of `|v|²` over all samples.
pub fn total_power(field: &ComplexField3D) -> f64 {
    field.values.iter().map(|v| v.norm_sqr()).sum()
}

/// Real scalar map on a [`GridSpec`] (densities, phase patterns).
#[derive(Debug, Clone, PartialEq)]
pub struct RealField3D {
    pub grid: GridSpec,
    pub values: Array3<f64>,
}

impl RealField3D {
    pub fn new(grid: GridSpec, values: Array3<f64>) -> Result<Self> {
        if values.dim() != grid.shape() {
            return Err(Error::ShapeMismatch(format!("values {:?} vs grid {:?}", values.dim(), grid.shape())));
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: GridSpec, f: impl Fn([f64; 3]) -> f64) -> Self {
        let values = Array3::from_shape_fn(grid.shape(), |(i, j, k)| f(grid.point(i, j, k)));
        Self { grid, values }
    }

    pub fn zeros(grid: GridSpec) -> Self {
        Self { grid, values: Array3::zeros(grid.shape()) }
    }

    /// Trilinear interpolation of `e^{i·value}` at `p`; zero outside the grid.
    pub fn sample_phasor(&self, p: [f64; 3]) -> Complex64 {
        let axes = [&self.grid.x, &self.grid.y, &self.grid.z];
        let mut base = [0usize; 3];
        let mut frac = [0.0; 3];
        for d in 0..3 {
            let ax = axes[d];
            let u = (p[d] - ax.origin) / ax.step;
            if ax.n == 1 {
                if u.abs() > 0.5 {
                    return Complex64::new(0.0, 0.0);
                }
                continue;
            }
            if u < 0.0 || u > (ax.n - 1) as f64 {
                return Complex64::new(0.0, 0.0);
            }
            let i = (u.floor() as usize).min(ax.n - 2);
            base[d] = i;
            frac[d] = u - i as f64;
        }
        let mut acc = Complex64::new(0.0, 0.0);
        for corner in 0..8 {
            let mut w = 1.0;
            let mut idx = [0usize; 3];
            for d in 0..3 {
                let hi = (corner >> d) & 1 == 1;
                if axes[d].n == 1 {
                    if hi {
                        w = 0.0;
                    }
                    idx[d] = 0;
                    continue;
                }
                idx[d] = base[d] + hi as usize;
                w *= if hi { frac[d] } else { 1.0 - frac[d] };
            }
            if w != 0.0 {
                acc += Complex64::from_polar(w, self.values[idx]);
            }
        }
        acc
    }
}

/// Readout samples `Ω_s(k_x, k_y, t_R)` on a uniform time lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct KSpaceSignal {
    pub kx: AxisSpec,
    pub ky: AxisSpec,
    pub t: AxisSpec,
    values: Array3<Complex64>,
}

impl KSpaceSignal {
    pub fn new(kx: AxisSpec, ky: AxisSpec, t: AxisSpec, values: Array3<Complex64>) -> Result<Self> {
        kx.validate()?;
        ky.validate()?;
        t.validate()?;
        if values.dim() != (kx.n, ky.n, t.n) {
            return Err(Error::ShapeMismatch(format!(
                "signal values {:?} vs axes ({}, {}, {})",
                values.dim(),
                kx.n,
                ky.n,
                t.n
            )));
        }
        if !values.iter().all(|v| v.re.is_finite() && v.im.is_finite()) {
            return Err(Error::NonFinite("signal values"));
        }
        Ok(Self { kx, ky, t, values })
    }

    pub fn zeros(kx: AxisSpec, ky: AxisSpec, t: AxisSpec) -> Self {
        Self { kx, ky, t, values: Array3::zeros((kx.n, ky.n, t.n)) }
    }

    pub fn values(&self) -> &Array3<Complex64> {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut Array3<Complex64> {
        &mut self.values
    }

    pub fn into_values(self) -> Array3<Complex64> {
        self.values
    }

    /// Multiplies every time slice by `f(t)`.
    pub fn scale_slices(&self, f: impl Fn(f64) -> Complex64 + Sync) -> Self {
        let mut out = self.clone();
        let factors: Vec<Complex64> = self.t.coords().into_iter().map(f).collect();
        Zip::from(out.values.lanes_mut(ndarray::Axis(2))).par_for_each(|mut lane| {
            lane.iter_mut().zip(&factors).for_each(|(v, f)| *v *= f);
        });
        out
    }

    /// Largest relative difference `‖a − b‖ / ‖b‖` (Frobenius).
    pub fn relative_difference(&self, reference: &KSpaceSignal) -> f64 {
        let num: f64 = Zip::from(&self.values).and(&reference.values).fold(0.0, |acc, a, b| acc + (a - b).norm_sqr());
        let den: f64 = reference.values.iter().map(|v| v.norm_sqr()).sum();
        (num / den).sqrt()
    }
}

/// Longitudinal wavevector probed at readout time `t_r` (s) under a cyclic
/// splitting gradient `beta_bar` (Hz/m): `k_z = -2π β̄ t_R`.
pub fn kz_of_time(t_r: f64, beta_bar: f64) -> f64 {
    -2.0 * PI * beta_bar * t_r
}
