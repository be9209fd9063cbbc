//! Focus, axis and decoherence-lifetime calibration.

use nalgebra::{DMatrix, DVector};
use ndarray::Zip;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{AxisSpec, ComplexField3D, KSpaceSignal, RealField3D};
use crate::optim::nelder_mead;
use crate::physics::{temperature_from_tau_beta, temperature_from_tau_k, PhysicsParams};
use crate::reconstruct::{
    default_z_axis, finish, normalize_and_mask, prepare_slices, z_transform, CalibParams, ReconstructOptions,
};

/// `Σ|v|⁴ / (Σ|v|²)²`: 1 for a single nonzero sample, `1/N` for a flat field.
pub fn sharpness(field: &ComplexField3D) -> Result<f64> {
    let (s2, s4) = field.values().iter().fold((0.0, 0.0), |(a, b), v| {
        let p = v.norm_sqr();
        (a + p, b + p * p)
    });
    if !(s2 > 0.0) {
        return Err(Error::invalid("sharpness of a zero field"));
    }
    Ok(s4 / (s2 * s2))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FocusSearch {
    #[serde(rename = "z0_range_m")]
    pub z0_range: (f64, f64),
    #[serde(rename = "zeta_range_rad_per_s2")]
    pub zeta_range: (f64, f64),
    pub grid_points: usize,
    pub refine: bool,
    /// Relative spread of the objective below which a parameter is flagged
    /// as unidentifiable.
    pub flat_tolerance: f64,
    pub objective: FocusObjective,
    /// z sampling density of the metric relative to the requested axis.
    pub z_oversample: usize,
    /// Reference mask threshold for the referenced search.
    pub mask_threshold: f64,
}

/// Direction of the [`sharpness`] optimum. Amplitude structure concentrates
/// at focus. A pure phase object is most uniform at focus, and defocus turns
/// its phase edges into intensity fringes, so there the search minimises.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FocusObjective {
    #[default]
    Maximize,
    Minimize,
}

impl FocusObjective {
    fn score(self, sharpness: f64) -> f64 {
        match self {
            FocusObjective::Maximize => sharpness,
            FocusObjective::Minimize => -sharpness,
        }
    }
}

/// Same span sampled `factor` times more densely. `|S|²` carries twice the
/// bandwidth of `S`, so on the readout-limited grid the L4 sum aliases
/// whenever the image moves by a fraction of a sample.
fn metric_axis(z: &AxisSpec, factor: usize) -> Result<AxisSpec> {
    let step = z.step / factor as f64;
    AxisSpec::new(factor * z.n, step, z.origin - (z.step - step) / 2.0)
}

impl Default for FocusSearch {
    fn default() -> Self {
        Self {
            z0_range: (-10e-3, 10e-3),
            zeta_range: (-0.03e12, 0.03e12),
            grid_points: 21,
            refine: true,
            flat_tolerance: 1e-4,
            objective: FocusObjective::Maximize,
            z_oversample: 2,
            mask_threshold: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FocusResult {
    #[serde(rename = "z0_m")]
    pub z0: f64,
    #[serde(rename = "zeta_rad_per_s2")]
    pub zeta: f64,
    /// Metric at the optimum: [`sharpness`], or [`amplitude_flatness`] for
    /// the referenced search.
    pub metric: f64,
    pub z0_identifiable: bool,
    pub zeta_identifiable: bool,
    pub evaluations: usize,
}

fn linspace(range: (f64, f64), n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.5 * (range.0 + range.1)];
    }
    (0..n).map(|i| range.0 + (range.1 - range.0) * i as f64 / (n - 1) as f64).collect()
}

/// Relative variance of `|ρ|` inside `mask`: zero when the ratio to the
/// reference has a flat magnitude.
pub fn amplitude_flatness(rho: &ComplexField3D, mask: &ndarray::Array3<bool>) -> Result<f64> {
    if rho.values().dim() != mask.dim() {
        return Err(Error::ShapeMismatch("field and mask differ in shape".into()));
    }
    let (mut n, mut s1, mut s2) = (0usize, 0.0, 0.0);
    Zip::from(rho.values()).and(mask).for_each(|v, &m| {
        if m {
            let a = v.norm();
            n += 1;
            s1 += a;
            s2 += a * a;
        }
    });
    if n == 0 || !(s1 > 0.0) {
        return Err(Error::invalid("amplitude flatness over an empty or zero mask"));
    }
    let mean = s1 / n as f64;
    Ok((s2 / n as f64 - mean * mean).max(0.0) / (mean * mean))
}

struct Optimum {
    z0: f64,
    zeta: f64,
    score: f64,
    z0_identifiable: bool,
    zeta_identifiable: bool,
    evaluations: usize,
}

/// Grid over `(z₀, ζ)` then simplex refinement, maximising `score`.
/// `row(ζ, z0s)` scores a whole grid row so callers can share the z transform
/// across `z₀`; `point` scores a single pair.
fn grid_then_simplex<R, P>(search: &FocusSearch, row: R, point: P) -> Result<Optimum>
where
    R: Fn(f64, &[f64]) -> Result<Vec<f64>> + Sync,
    P: Fn(f64, f64) -> Result<f64>,
{
    let n = search.grid_points;
    if n < 3 {
        return Err(Error::invalid("focus search needs at least 3 grid points per axis"));
    }
    let (zr, cr) = (search.z0_range, search.zeta_range);
    if !(zr.0 < zr.1 && cr.0 < cr.1) {
        return Err(Error::invalid("focus search ranges must be increasing intervals"));
    }
    if search.z_oversample == 0 {
        return Err(Error::invalid("z oversampling factor must be at least 1"));
    }
    let z0s = linspace(zr, n);
    let zetas = linspace(cr, n);
    let table: Vec<Vec<f64>> = zetas.par_iter().map(|&zeta| row(zeta, &z0s)).collect::<Result<_>>()?;

    let (mut bi, mut bj, mut best) = (0, 0, f64::NEG_INFINITY);
    for (i, r) in table.iter().enumerate() {
        for (j, &v) in r.iter().enumerate() {
            if v > best {
                (bi, bj, best) = (i, j, v);
            }
        }
    }
    let spread = |vals: &[f64]| {
        let max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        (max - min) / max.abs().max(min.abs())
    };
    let z0_identifiable = spread(&table[bi]) > search.flat_tolerance;
    let zeta_col: Vec<f64> = table.iter().map(|r| r[bj]).collect();
    let zeta_identifiable = spread(&zeta_col) > search.flat_tolerance;
    if zeta_identifiable && (bi == 0 || bi == n - 1) {
        return Err(Error::RangeBoundary { parameter: "zeta", value: zetas[bi] });
    }
    if z0_identifiable && (bj == 0 || bj == n - 1) {
        return Err(Error::RangeBoundary { parameter: "z0", value: z0s[bj] });
    }
    let mut z0 = if z0_identifiable { z0s[bj] } else { 0.5 * (zr.0 + zr.1) };
    let mut zeta = zetas[bi];
    let mut evaluations = n * n;

    if search.refine && (z0_identifiable || zeta_identifiable) {
        let eval = |z0: f64, zeta: f64| point(z0, zeta).map(|v| -v).unwrap_or(f64::INFINITY);
        // normalised coordinates on [0, 1]
        let to_z0 = |u: f64| zr.0 + u * (zr.1 - zr.0);
        let to_zeta = |u: f64| cr.0 + u * (cr.1 - cr.0);
        let h = 1.0 / (n - 1) as f64;
        let u0 = (z0 - zr.0) / (zr.1 - zr.0);
        let u1 = (zeta - cr.0) / (cr.1 - cr.0);
        let evals = std::cell::Cell::new(0usize);
        let counted = |z0: f64, zeta: f64| {
            evals.set(evals.get() + 1);
            eval(z0, zeta)
        };
        let m = match (z0_identifiable, zeta_identifiable) {
            (true, true) => {
                let f = |u: &[f64]| counted(to_z0(u[0]), to_zeta(u[1]));
                let r = nelder_mead(&f, &[u0, u1], &[h, h], &[0.0, 0.0], &[1.0, 1.0], 200, 1e-12)?;
                (to_z0(r.x[0]), to_zeta(r.x[1]), -r.value)
            }
            (true, false) => {
                let f = |u: &[f64]| counted(to_z0(u[0]), zeta);
                let r = nelder_mead(&f, &[u0], &[h], &[0.0], &[1.0], 100, 1e-12)?;
                (to_z0(r.x[0]), zeta, -r.value)
            }
            _ => {
                let f = |u: &[f64]| counted(z0, to_zeta(u[0]));
                let r = nelder_mead(&f, &[u1], &[h], &[0.0], &[1.0], 100, 1e-12)?;
                (z0, to_zeta(r.x[0]), -r.value)
            }
        };
        if m.2 >= best {
            (z0, zeta, best) = m;
        }
        evaluations += evals.get();
    }
    Ok(Optimum { z0, zeta, score: best, z0_identifiable, zeta_identifiable, evaluations })
}

fn search_z_axis(sig: &KSpaceSignal, p: &PhysicsParams, opt: &ReconstructOptions, factor: usize) -> Result<AxisSpec> {
    let z = match opt.z_axis {
        Some(z) => z,
        None => default_z_axis(&sig.t, p.beta_bar())?,
    };
    metric_axis(&z, factor.max(1))
}

/// Grid search over `(z₀, ζ)` optimising [`sharpness`] of the
/// reconstruction, followed by simplex refinement. The metric is evaluated
/// on a z axis `z_oversample` times denser than the requested one.
pub fn calibrate_focus(
    sig: &KSpaceSignal,
    p: &PhysicsParams,
    base: &CalibParams,
    opt: &ReconstructOptions,
    search: &FocusSearch,
) -> Result<FocusResult> {
    p.validate()?;
    base.validate()?;
    let z_axis = search_z_axis(sig, p, opt, search.z_oversample)?;
    let obj = search.objective;
    let beta = p.beta_bar();
    // the expensive z transform is shared by every z0 at a given ζ
    let row = |zeta: f64, z0s: &[f64]| -> Result<Vec<f64>> {
        let c = CalibParams { zeta, ..*base };
        let cols = z_transform(&prepare_slices(sig, &c, opt)?, beta, &z_axis);
        z0s.iter()
            .map(|&z0| {
                let f = finish(cols.clone(), &sig.kx, &sig.ky, &z_axis, p, &CalibParams { z0, ..c })?;
                sharpness(&f).map(|v| obj.score(v))
            })
            .collect()
    };
    let point = |z0: f64, zeta: f64| -> Result<f64> {
        let c = CalibParams { z0, zeta, ..*base };
        let f = finish(z_transform(&prepare_slices(sig, &c, opt)?, beta, &z_axis), &sig.kx, &sig.ky, &z_axis, p, &c)?;
        sharpness(&f).map(|v| obj.score(v))
    };
    let o = grid_then_simplex(search, row, point)?;
    Ok(FocusResult {
        z0: o.z0,
        zeta: o.zeta,
        metric: obj.score(o.score),
        z0_identifiable: o.z0_identifiable,
        zeta_identifiable: o.zeta_identifiable,
        evaluations: o.evaluations,
    })
}

/// Focus search against a reference signal of the unpatterned cloud taken
/// under the same conditions. Both are reconstructed with the trial
/// `(z₀, ζ)` and [`amplitude_flatness`] of `ρ = S/S_ref` inside the
/// reference mask is minimised. Unlike [`sharpness`], this does not reward
/// blurring the cloud envelope, so wide search ranges are safe.
pub fn calibrate_focus_referenced(
    sig: &KSpaceSignal,
    sig_ref: &KSpaceSignal,
    p: &PhysicsParams,
    base: &CalibParams,
    opt: &ReconstructOptions,
    search: &FocusSearch,
) -> Result<FocusResult> {
    p.validate()?;
    base.validate()?;
    if (sig.kx, sig.ky, sig.t) != (sig_ref.kx, sig_ref.ky, sig_ref.t) {
        return Err(Error::ShapeMismatch("signal and reference are sampled differently".into()));
    }
    let z_axis = search_z_axis(sig, p, opt, search.z_oversample)?;
    let beta = p.beta_bar();
    let thr = search.mask_threshold;
    let score = |a: ComplexField3D, b: ComplexField3D| -> Result<f64> {
        let (rho, mask) = normalize_and_mask(&a, &b, thr)?;
        amplitude_flatness(&rho, &mask).map(|v| -v)
    };
    let row = |zeta: f64, z0s: &[f64]| -> Result<Vec<f64>> {
        let c = CalibParams { zeta, ..*base };
        let cols = z_transform(&prepare_slices(sig, &c, opt)?, beta, &z_axis);
        let cols_ref = z_transform(&prepare_slices(sig_ref, &c, opt)?, beta, &z_axis);
        z0s.iter()
            .map(|&z0| {
                let c = CalibParams { z0, ..c };
                let f = finish(cols.clone(), &sig.kx, &sig.ky, &z_axis, p, &c)?;
                let r = finish(cols_ref.clone(), &sig.kx, &sig.ky, &z_axis, p, &c)?;
                score(f, r)
            })
            .collect()
    };
    let point = |z0: f64, zeta: f64| -> Result<f64> {
        let c = CalibParams { z0, zeta, ..*base };
        let run = |s: &KSpaceSignal| -> Result<ComplexField3D> {
            finish(z_transform(&prepare_slices(s, &c, opt)?, beta, &z_axis), &s.kx, &s.ky, &z_axis, p, &c)
        };
        score(run(sig)?, run(sig_ref)?)
    };
    let o = grid_then_simplex(search, row, point)?;
    Ok(FocusResult {
        z0: o.z0,
        zeta: o.zeta,
        metric: -o.score,
        z0_identifiable: o.z0_identifiable,
        zeta_identifiable: o.zeta_identifiable,
        evaluations: o.evaluations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AxesSearch {
    pub scale_range: (f64, f64),
    #[serde(rename = "rotation_range_rad")]
    pub rotation_range: (f64, f64),
    pub scan_points: usize,
    pub mask_threshold: f64,
}

impl Default for AxesSearch {
    fn default() -> Self {
        Self { scale_range: (0.8, 1.25), rotation_range: (-0.1, 0.1), scan_points: 41, mask_threshold: 0.1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxesResult {
    pub sx: f64,
    pub sy: f64,
    pub sz: f64,
    #[serde(rename = "rotation_rad")]
    pub rotation: f64,
    pub correlation: f64,
}

/// Masked phasors of a reconstruction, ready for repeated correlation.
struct PhaseSamples {
    points: Vec<[f64; 3]>,
    phasors: Vec<Complex64>,
}

impl PhaseSamples {
    fn new(recon: &ComplexField3D, threshold: f64) -> Result<Self> {
        let peak = recon.values().iter().map(|v| v.norm()).fold(0.0, f64::max);
        let g = recon.grid();
        let mut points = Vec::new();
        let mut phasors = Vec::new();
        for ((i, j, k), v) in recon.values().indexed_iter() {
            let a = v.norm();
            if peak > 0.0 && a > threshold * peak {
                points.push(g.point(i, j, k));
                phasors.push(v / a);
            }
        }
        if points.is_empty() {
            return Err(Error::PatternNotFound(0.0));
        }
        Ok(Self { points, phasors })
    }

    /// `|⟨e^{i·target(T r)}, u⟩| / √(‖e^{i·target}‖²·N)`.
    fn correlation(&self, target: &RealField3D, s: [f64; 3], rotation: f64) -> f64 {
        let (sn, cs) = rotation.sin_cos();
        let (acc, norm) = self
            .points
            .par_iter()
            .zip(&self.phasors)
            .map(|(r, u)| {
                let x = s[0] * r[0];
                let y = s[1] * r[1];
                let q = [cs * x - sn * y, sn * x + cs * y, s[2] * r[2]];
                let t = target.sample_phasor(q);
                (t.conj() * u, t.norm_sqr())
            })
            .reduce(|| (Complex64::new(0.0, 0.0), 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
        if norm > 0.0 {
            acc.norm() / (norm * self.points.len() as f64).sqrt()
        } else {
            0.0
        }
    }
}

/// Scales and in-plane rotation mapping reconstruction coordinates onto the
/// physical frame of `target`: `r_phys = R(θ)·diag(sx, sy)·(x, y)`, `z_phys = sz·z`.
pub fn calibrate_axes(recon: &ComplexField3D, target: &RealField3D, search: &AxesSearch) -> Result<AxesResult> {
    let (lo, hi) = search.scale_range;
    let (rlo, rhi) = search.rotation_range;
    if !(lo > 0.0 && lo < 1.0 && hi > 1.0 && rlo <= 0.0 && rhi >= 0.0) || search.scan_points < 3 {
        return Err(Error::invalid("axes search ranges must bracket the identity"));
    }
    let samples = PhaseSamples::new(recon, search.mask_threshold)?;
    let score = |x: &[f64]| samples.correlation(target, [x[0], x[1], x[2]], x[3]);

    let mut x = [1.0, 1.0, 1.0, 0.0];
    let lower = [lo, lo, lo, rlo];
    let upper = [hi, hi, hi, rhi];
    let mut best = score(&x);
    // one pass of per-parameter scans
    for d in 0..4 {
        for v in linspace((lower[d], upper[d]), search.scan_points) {
            let mut trial = x;
            trial[d] = v;
            let s = score(&trial);
            if s > best {
                best = s;
                x = trial;
            }
        }
    }
    let step: Vec<f64> = (0..4).map(|d| 2.0 * (upper[d] - lower[d]) / (search.scan_points - 1) as f64).collect();
    let f = |v: &[f64]| -score(v);
    let m = nelder_mead(&f, &x, &step, &lower, &upper, 400, 1e-14)?;
    if -m.value > best {
        best = -m.value;
        x.copy_from_slice(&m.x);
    }
    if best < 0.2 {
        return Err(Error::PatternNotFound(best));
    }
    Ok(AxesResult { sx: x[0], sy: x[1], sz: x[2], rotation: x[3], correlation: best })
}

/// Which terms of the decay envelope are fitted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum DecayMode {
    /// Gradient off: Gaussian decay only, `τ_β = ∞`.
    GradientOff,
    /// Gradient on: fits `τ_β`, and `τ_k` unless fixed from a prior fit.
    GradientOn {
        #[serde(rename = "fixed_tau_k_s")]
        fixed_tau_k: Option<f64>,
    },
}

/// Constants needed to turn a lifetime into a temperature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThermalContext {
    #[serde(rename = "k_sw_rad_per_m")]
    pub k_sw: f64,
    #[serde(rename = "beta_bar_hz_per_m")]
    pub beta_bar: f64,
    #[serde(rename = "mass_kg")]
    pub mass: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayFitResult {
    #[serde(rename = "tau_k_s")]
    pub tau_k: Estimate,
    /// `None` in gradient-off mode (infinite).
    #[serde(rename = "tau_beta_s")]
    pub tau_beta: Option<Estimate>,
    #[serde(rename = "temperature_k")]
    pub temperature: Estimate,
    pub amplitude: f64,
    pub mode: DecayMode,
    pub rms_log_residual: f64,
}

/// Least squares of `ln A = ln A₀ − t²/2τ_k² − t⁴/2τ_β⁴` in the log domain.
pub fn fit_decay(times: &[f64], amplitudes: &[f64], mode: DecayMode, ctx: &ThermalContext) -> Result<DecayFitResult> {
    if times.len() != amplitudes.len() {
        return Err(Error::ShapeMismatch("times and amplitudes differ in length".into()));
    }
    if times.len() < 6 {
        return Err(Error::invalid("decay fit needs at least 6 points"));
    }
    if amplitudes.iter().any(|&a| !(a > 0.0 && a.is_finite())) || times.iter().any(|t| !t.is_finite()) {
        return Err(Error::invalid("decay amplitudes must be positive and finite"));
    }
    if let DecayMode::GradientOn { fixed_tau_k: Some(t) } = mode {
        if !(t > 0.0) {
            return Err(Error::invalid("fixed tau_k must be positive"));
        }
    }
    let n = times.len();
    // rescale time to keep the normal equations well conditioned
    let ts = times.iter().fold(0.0f64, |m, t| m.max(t.abs()));
    if ts == 0.0 {
        return Err(Error::invalid("decay times are all zero"));
    }
    let u: Vec<f64> = times.iter().map(|t| t / ts).collect();
    let mut y: Vec<f64> = amplitudes.iter().map(|a| a.ln()).collect();
    let cols: Vec<Box<dyn Fn(f64) -> f64>> = match mode {
        DecayMode::GradientOff => vec![Box::new(|_| 1.0), Box::new(|u| -u * u)],
        DecayMode::GradientOn { fixed_tau_k: Some(tk) } => {
            for (yi, t) in y.iter_mut().zip(times) {
                *yi += t * t / (2.0 * tk * tk);
            }
            vec![Box::new(|_| 1.0), Box::new(|u| -u.powi(4))]
        }
        DecayMode::GradientOn { fixed_tau_k: None } => {
            vec![Box::new(|_| 1.0), Box::new(|u| -u * u), Box::new(|u| -u.powi(4))]
        }
    };
    let p = cols.len();
    if n <= p {
        return Err(Error::invalid("not enough points for the fit"));
    }
    let x = DMatrix::from_fn(n, p, |i, j| cols[j](u[i]));
    let yv = DVector::from_vec(y);
    let xtx = x.transpose() * &x;
    let xtx_inv = xtx.try_inverse().ok_or_else(|| Error::Numerical("decay design matrix is singular".into()))?;
    let coef = &xtx_inv * x.transpose() * &yv;
    let resid = &yv - &x * &coef;
    let rss = resid.norm_squared();
    let rms = (rss / n as f64).sqrt();
    let sigma2 = rss / (n - p) as f64;
    let cov = xtx_inv * sigma2;

    // coefficient c_j on u^{2j} corresponds to c_j / ts^{2j} on t^{2j}
    let to_tau2 = |c: f64, var: f64, label: &str| -> Result<Estimate> {
        if !(c > 0.0) {
            return Err(Error::NoConvergence {
                message: format!("non-positive {label} decay rate ({c:e})"),
                residual: rms,
            });
        }
        let a = c / (ts * ts);
        let tau = (2.0 * a).powf(-0.5);
        let d = (2.0 * a).powf(-1.5) / (ts * ts);
        Ok(Estimate { value: tau, stderr: d * var.max(0.0).sqrt() })
    };
    let to_tau4 = |c: f64, var: f64| -> Result<Estimate> {
        if !(c > 0.0) {
            return Err(Error::NoConvergence {
                message: format!("non-positive quartic decay rate ({c:e})"),
                residual: rms,
            });
        }
        let b = c / ts.powi(4);
        let tau = (2.0 * b).powf(-0.25);
        let d = 0.5 * (2.0 * b).powf(-1.25) / ts.powi(4);
        Ok(Estimate { value: tau, stderr: d * var.max(0.0).sqrt() })
    };
    let amplitude = coef[0].exp();
    let (tau_k, tau_beta) = match mode {
        DecayMode::GradientOff => (to_tau2(coef[1], cov[(1, 1)], "Gaussian")?, None),
        DecayMode::GradientOn { fixed_tau_k: Some(tk) } => {
            (Estimate { value: tk, stderr: 0.0 }, Some(to_tau4(coef[1], cov[(1, 1)])?))
        }
        DecayMode::GradientOn { fixed_tau_k: None } => {
            (to_tau2(coef[1], cov[(1, 1)], "Gaussian")?, Some(to_tau4(coef[2], cov[(2, 2)])?))
        }
    };
    let temperature = match tau_beta {
        None => {
            let t = temperature_from_tau_k(tau_k.value, ctx.k_sw, ctx.mass);
            Estimate { value: t, stderr: 2.0 * t / tau_k.value * tau_k.stderr }
        }
        Some(tb) => {
            let t = temperature_from_tau_beta(tb.value, ctx.beta_bar, ctx.mass);
            Estimate { value: t, stderr: 4.0 * t / tb.value * tb.stderr }
        }
    };
    Ok(DecayFitResult { tau_k, tau_beta, temperature, amplitude, mode, rms_log_residual: rms })
}

/// Relative RMS of `a − b` (helper for reports).
pub fn relative_rms(a: &ComplexField3D, b: &ComplexField3D) -> f64 {
    let num: f64 = Zip::from(a.values()).and(b.values()).fold(0.0, |acc, x, y| acc + (x - y).norm_sqr());
    let den: f64 = b.values().iter().map(|v| v.norm_sqr()).sum();
    (num / den).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::RB87_MASS;
    use crate::field::GridSpec;
    use crate::physics::{decoherence_envelope, taus_from_temperature, DecoherenceParams};
    use crate::scenarios::{checkerboard_phase, PatternPlane};
    use ndarray::Array3;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn ctx() -> ThermalContext {
        ThermalContext { k_sw: 36355.0, beta_bar: 1.4e8, mass: RB87_MASS }
    }

    fn decay_samples(d: &DecoherenceParams, noise: f64, seed: u64) -> (Vec<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nrm = Normal::new(0.0, noise).unwrap();
        let t: Vec<f64> = (0..40).map(|i| i as f64 * 5e-6).collect();
        let a = t.iter().map(|&t| 2.5 * decoherence_envelope(t, d) * (1.0 + nrm.sample(&mut rng))).collect();
        (t, a)
    }

    #[test]
    fn sharpness_limits() {
        let g = GridSpec::centered([2, 2, 4], [1.0, 1.0, 1.0]).unwrap();
        let mut d = ComplexField3D::zeros(g);
        assert!(sharpness(&d).is_err());
        d.values_mut()[(1, 0, 2)] = Complex64::new(0.0, 3.0);
        assert!((sharpness(&d).unwrap() - 1.0).abs() < 1e-15);
        let u = ComplexField3D::new(g, Array3::from_elem((2, 2, 4), Complex64::new(1.0, 1.0))).unwrap();
        assert!((sharpness(&u).unwrap() - 1.0 / 16.0).abs() < 1e-15);
    }

    #[test]
    fn exact_decay_recovered() {
        let d = DecoherenceParams::new(173e-6, 175.4e-6).unwrap();
        let (t, a) = decay_samples(&d, 0.0, 0);
        let r = fit_decay(&t, &a, DecayMode::GradientOn { fixed_tau_k: None }, &ctx()).unwrap();
        assert!((r.tau_k.value / 173e-6 - 1.0).abs() < 1e-8);
        assert!((r.tau_beta.unwrap().value / 175.4e-6 - 1.0).abs() < 1e-8);
        assert!((r.amplitude - 2.5).abs() < 1e-8);
        let off = DecoherenceParams::new(173e-6, f64::INFINITY).unwrap();
        let (t, a) = decay_samples(&off, 0.0, 0);
        let r = fit_decay(&t, &a, DecayMode::GradientOff, &ctx()).unwrap();
        assert!((r.tau_k.value / 173e-6 - 1.0).abs() < 1e-8);
        assert!(r.tau_beta.is_none());
    }

    #[test]
    fn noisy_fits_within_three_percent() {
        let off = DecoherenceParams::new(173e-6, f64::INFINITY).unwrap();
        let on = DecoherenceParams::new(173e-6, 175.4e-6).unwrap();
        let mut ok_k = 0;
        let mut ok_b = 0;
        for seed in 0..100 {
            let (t, a) = decay_samples(&off, 0.01, seed);
            let r = fit_decay(&t, &a, DecayMode::GradientOff, &ctx()).unwrap();
            ok_k += ((r.tau_k.value / 173e-6 - 1.0).abs() < 0.03) as usize;
            let (t, a) = decay_samples(&on, 0.01, 1000 + seed);
            let r = fit_decay(&t, &a, DecayMode::GradientOn { fixed_tau_k: Some(173e-6) }, &ctx()).unwrap();
            ok_b += ((r.tau_beta.unwrap().value / 175.4e-6 - 1.0).abs() < 0.03) as usize;
        }
        assert!(ok_k >= 95 && ok_b >= 95, "{ok_k} {ok_b}");
    }

    #[test]
    fn temperature_and_errors() {
        let d = taus_from_temperature(265e-6, 36355.0, 1.4e8, RB87_MASS).unwrap();
        let (t, a) = decay_samples(&DecoherenceParams::new(d.tau_k, f64::INFINITY).unwrap(), 0.01, 3);
        let r = fit_decay(&t, &a, DecayMode::GradientOff, &ctx()).unwrap();
        assert!((r.temperature.value / 265e-6 - 1.0).abs() < 0.06);
        assert!(r.tau_k.stderr > 0.0 && r.temperature.stderr > 0.0);
        // growing amplitudes cannot be a decay
        let grow: Vec<f64> = t.iter().map(|t| (t * 1e4).exp()).collect();
        assert!(matches!(fit_decay(&t, &grow, DecayMode::GradientOff, &ctx()), Err(Error::NoConvergence { .. })));
        assert!(fit_decay(&t[..5], &a[..5], DecayMode::GradientOff, &ctx()).is_err());
        let mut neg = a.clone();
        neg[2] = -1.0;
        assert!(fit_decay(&t, &neg, DecayMode::GradientOff, &ctx()).is_err());
    }

    fn xy_pattern_grid() -> GridSpec {
        GridSpec::centered([48, 48, 4], [10e-6, 10e-6, 50e-6]).unwrap()
    }

    fn sampled(target: &RealField3D, s: [f64; 3], rot: f64) -> ComplexField3D {
        let (sn, cs) = rot.sin_cos();
        ComplexField3D::from_fn(target.grid, |r| {
            let x = s[0] * r[0];
            let y = s[1] * r[1];
            target.sample_phasor([cs * x - sn * y, sn * x + cs * y, s[2] * r[2]])
        })
        .unwrap()
    }

    #[test]
    fn axes_identity_and_self_match() {
        let g = xy_pattern_grid();
        let target = checkerboard_phase(&g, 60e-6, 60e-6, 2.0, PatternPlane::Xy).unwrap();
        let recon = ComplexField3D::from_fn(g, |r| target.sample_phasor(r)).unwrap();
        let r = calibrate_axes(&recon, &target, &AxesSearch::default()).unwrap();
        assert!((r.correlation - 1.0).abs() < 1e-6);
        for s in [r.sx, r.sy] {
            assert!((s - 1.0).abs() < 0.01);
        }
        assert!(r.rotation.abs() < 0.01);
    }

    #[test]
    fn axes_recover_rotation_and_z_stretch() {
        let g = xy_pattern_grid();
        let target = checkerboard_phase(&g, 80e-6, 60e-6, 2.0, PatternPlane::Xy).unwrap();
        let recon = sampled(&target, [1.0, 1.0, 1.0], 0.03);
        let r = calibrate_axes(&recon, &target, &AxesSearch::default()).unwrap();
        assert!((r.rotation - 0.03).abs() < 2e-3, "{r:?}");

        let gz = GridSpec::centered([16, 1, 128], [10e-6, 10e-6, 40e-6]).unwrap();
        let tz = checkerboard_phase(&gz, 0.3e-3, 40e-6, 2.0, PatternPlane::Zx).unwrap();
        let recon = sampled(&tz, [1.0, 1.0, 1.1], 0.0);
        let r = calibrate_axes(&recon, &tz, &AxesSearch::default()).unwrap();
        assert!((r.sz / 1.1 - 1.0).abs() < 0.02, "{r:?}");
    }

    #[test]
    fn axes_reject_noise() {
        let g = xy_pattern_grid();
        let target = checkerboard_phase(&g, 60e-6, 60e-6, 2.0, PatternPlane::Xy).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let u = rand_distr::Uniform::new(-3.0, 3.0).unwrap();
        let mut noisy = ComplexField3D::zeros(g);
        noisy.values_mut().mapv_inplace(|_| Complex64::from_polar(1.0, u.sample(&mut rng)));
        assert!(matches!(calibrate_axes(&noisy, &target, &AxesSearch::default()), Err(Error::PatternNotFound(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn fit_converges_as_noise_vanishes(tk in 80e-6f64..400e-6, tb in 80e-6f64..400e-6) {
            let d = DecoherenceParams::new(tk, tb).unwrap();
            let (t, a) = decay_samples(&d, 0.0, 0);
            let r = fit_decay(&t, &a, DecayMode::GradientOn { fixed_tau_k: None }, &ctx()).unwrap();
            prop_assert!((r.tau_k.value / tk - 1.0).abs() < 1e-6);
            prop_assert!((r.tau_beta.unwrap().value / tb - 1.0).abs() < 1e-6);
        }

        #[test]
        fn sharpness_invariant_under_global_factor(re in -3.0f64..3.0, im in -3.0f64..3.0) {
            prop_assume!(re.hypot(im) > 1e-3);
            let g = GridSpec::centered([3, 2, 5], [1.0, 1.0, 1.0]).unwrap();
            let f = ComplexField3D::from_fn(g, |r| Complex64::new(r[0] + 0.3, r[1] * r[2] - 0.1)).unwrap();
            let a = sharpness(&f).unwrap();
            let b = sharpness(&f.map(|v| v * Complex64::new(re, im))).unwrap();
            prop_assert!((a - b).abs() < 1e-12 * a);
        }
    }
}
