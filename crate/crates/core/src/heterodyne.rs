//! Balanced off-axis heterodyne camera: frame synthesis and Fourier
//! side-band demodulation.
//!
//! The camera sits in the far field, so pixel `(i, j)` of a readout slice is
//! the sample at `(k_x[i], k_y[j])`. Camera-plane coordinates are
//! `u = (i − n/2)·pitch`. A local oscillator `A·e^{i c·u}` interferes with the
//! signal on two camera regions; their difference is
//! `D = 2A(e^{−ic·u} S + e^{ic·u} S*)`.

use ndarray::{Array2, Array3, Axis, Zip};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::transform_axis;
use crate::field::{AxisSpec, Direction, KSpaceSignal};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorConfig {
    pub n_px_x: usize,
    pub n_px_y: usize,
    #[serde(rename = "pixel_pitch_m")]
    pub pixel_pitch: f64,
    /// LO amplitude in √(photons per pixel).
    pub lo_amplitude: f64,
    #[serde(rename = "carrier_k_rad_per_m")]
    pub carrier_k: [f64; 2],
    pub frames_per_delay: usize,
    pub shot_noise: bool,
    pub rng_seed: u64,
    #[serde(rename = "filter_radius_rad_per_m")]
    pub filter_radius: f64,
}

impl DetectorConfig {
    /// Detector matched to a readout grid `(kx, ky)` imaged through a lens of
    /// focal length `focal_length`: pixel pitch `f·Δk/k0`, filter radius
    /// covering an object of transverse radius `support_radius`, and a
    /// diagonal carrier placed as far out as the band allows (on a bin).
    pub fn far_field(
        kx: &AxisSpec,
        ky: &AxisSpec,
        k0: f64,
        focal_length: f64,
        support_radius: f64,
        lo_amplitude: f64,
    ) -> Result<Self> {
        if !(k0 > 0.0 && focal_length > 0.0 && support_radius > 0.0) {
            return Err(Error::invalid("far_field: k0, focal length and support radius must be positive"));
        }
        if ((kx.step - ky.step) / kx.step).abs() > 1e-12 {
            return Err(Error::invalid("far_field: kx and ky steps must match (square pixels)"));
        }
        let pitch = focal_length * kx.step / k0;
        let filter_radius = k0 * support_radius / focal_length;
        let mut carrier = [0.0; 2];
        for (c, n) in carrier.iter_mut().zip([kx.n, ky.n]) {
            let dq = 2.0 * std::f64::consts::PI / (n as f64 * pitch);
            let top = (n / 2) as f64 - 1.0;
            let bins = ((top * dq - filter_radius) / dq).floor();
            *c = bins.max(0.0) * dq;
        }
        let cfg = Self {
            n_px_x: kx.n,
            n_px_y: ky.n,
            pixel_pitch: pitch,
            lo_amplitude,
            carrier_k: carrier,
            frames_per_delay: 1,
            shot_noise: false,
            rng_seed: 0,
            filter_radius,
        };
        cfg.validate()?;
        cfg.check_band()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_px_x == 0 || self.n_px_y == 0 {
            return Err(Error::invalid("detector needs at least one pixel per axis"));
        }
        if !(self.pixel_pitch.is_finite() && self.pixel_pitch > 0.0) {
            return Err(Error::invalid("pixel_pitch must be positive"));
        }
        if !(self.lo_amplitude.is_finite() && self.lo_amplitude > 0.0) {
            return Err(Error::invalid("lo_amplitude must be positive"));
        }
        if self.frames_per_delay == 0 {
            return Err(Error::invalid("frames_per_delay must be ≥ 1"));
        }
        if !(self.filter_radius.is_finite() && self.filter_radius > 0.0) {
            return Err(Error::invalid("filter_radius must be positive"));
        }
        let c = self.carrier_k[0].hypot(self.carrier_k[1]);
        if !(c > 2.0 * self.filter_radius) {
            return Err(Error::invalid(format!(
                "carrier |k| = {c:.4e} rad/m must exceed twice the filter radius {:.4e}",
                self.filter_radius
            )));
        }
        Ok(())
    }

    /// Both side-band disks must fit inside the sampled band without wrapping.
    pub fn check_band(&self) -> Result<()> {
        for (c, n) in self.carrier_k.iter().zip([self.n_px_x, self.n_px_y]) {
            let dq = 2.0 * std::f64::consts::PI / (n as f64 * self.pixel_pitch);
            let top = ((n / 2) as f64 - 1.0) * dq;
            if c.abs() + self.filter_radius > top + 1e-9 * dq {
                return Err(Error::invalid(format!(
                    "carrier component {c:.4e} rad/m plus filter radius leaves the sampled band (±{top:.4e} rad/m)"
                )));
            }
        }
        Ok(())
    }

    fn pixel_axes(&self) -> (AxisSpec, AxisSpec) {
        (
            AxisSpec { n: self.n_px_x, step: self.pixel_pitch, origin: -((self.n_px_x / 2) as f64) * self.pixel_pitch },
            AxisSpec { n: self.n_px_y, step: self.pixel_pitch, origin: -((self.n_px_y / 2) as f64) * self.pixel_pitch },
        )
    }

    /// `e^{i c·u}` over the camera.
    fn carrier_phasor(&self) -> Array2<Complex64> {
        let (ux, uy) = self.pixel_axes();
        Array2::from_shape_fn((self.n_px_x, self.n_px_y), |(i, j)| {
            Complex64::from_polar(1.0, self.carrier_k[0] * ux.coord(i) + self.carrier_k[1] * uy.coord(j))
        })
    }
}

/// Images recorded on the two balanced camera regions.
#[derive(Debug, Clone, PartialEq)]
pub struct FramePair {
    pub plus: Array2<f64>,
    pub minus: Array2<f64>,
}

impl FramePair {
    pub fn differential(&self) -> Array2<f64> {
        &self.plus - &self.minus
    }
}

fn frame_rng(seed: u64, delay: u64, frame: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((delay << 32) ^ frame);
    rng
}

fn check_slice(slice: &Array2<Complex64>, cfg: &DetectorConfig) -> Result<()> {
    if slice.dim() != (cfg.n_px_x, cfg.n_px_y) {
        return Err(Error::ShapeMismatch(format!("slice {:?} vs detector {}×{}", slice.dim(), cfg.n_px_x, cfg.n_px_y)));
    }
    Ok(())
}

/// `frames_per_delay` frame pairs for one slice, using RNG stream 0.
pub fn synthesize_frames(slice: &Array2<Complex64>, cfg: &DetectorConfig) -> Result<Vec<FramePair>> {
    synthesize_frames_for_delay(slice, cfg, 0)
}

/// As [`synthesize_frames`], with noise streams keyed by `(rng_seed,
/// delay_index, frame)` so slices can be processed in any order.
pub fn synthesize_frames_for_delay(
    slice: &Array2<Complex64>,
    cfg: &DetectorConfig,
    delay_index: u64,
) -> Result<Vec<FramePair>> {
    cfg.validate()?;
    check_slice(slice, cfg)?;
    let lo = cfg.carrier_phasor().mapv(|p| p * cfg.lo_amplitude);
    let mut plus = Array2::<f64>::zeros(slice.dim());
    let mut minus = Array2::<f64>::zeros(slice.dim());
    Zip::from(&mut plus).and(&mut minus).and(&lo).and(slice).for_each(|p, m, l, s| {
        let base = l.norm_sqr() + s.norm_sqr();
        let cross = 2.0 * (l.conj() * s).re;
        *p = base + cross;
        *m = base - cross;
    });
    let clean = FramePair { plus, minus };
    Ok((0..cfg.frames_per_delay as u64)
        .into_par_iter()
        .map(|f| {
            let mut pair = clean.clone();
            if cfg.shot_noise {
                let mut rng = frame_rng(cfg.rng_seed, delay_index, f);
                for img in [&mut pair.plus, &mut pair.minus] {
                    for v in img.iter_mut() {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        *v += z * v.max(0.0).sqrt();
                    }
                }
            }
            pair
        })
        .collect())
}

/// Recovers the slice from a balanced frame pair.
pub fn demodulate(pair: &FramePair, cfg: &DetectorConfig) -> Result<Array2<Complex64>> {
    cfg.validate()?;
    cfg.check_band()?;
    if pair.plus.dim() != pair.minus.dim() || pair.plus.dim() != (cfg.n_px_x, cfg.n_px_y) {
        return Err(Error::ShapeMismatch("frame pair does not match the detector".into()));
    }
    Ok(demodulate_differential(&pair.differential(), cfg, &cfg.carrier_phasor()))
}

fn demodulate_differential(d: &Array2<f64>, cfg: &DetectorConfig, carrier: &Array2<Complex64>) -> Array2<Complex64> {
    let mut spec = d.mapv(|v| Complex64::new(v, 0.0));
    transform_axis(&mut spec, 0, Direction::Forward);
    transform_axis(&mut spec, 1, Direction::Forward);
    let (ux, uy) = cfg.pixel_axes();
    let (qx, qy) = (ux.conjugate(), uy.conjugate());
    let r2 = cfg.filter_radius * cfg.filter_radius;
    // the side-band carrying e^{-ic·u}·S sits at -c
    spec.indexed_iter_mut().for_each(|((i, j), v)| {
        let dx = qx.coord(i) + cfg.carrier_k[0];
        let dy = qy.coord(j) + cfg.carrier_k[1];
        if dx * dx + dy * dy > r2 {
            *v = Complex64::new(0.0, 0.0);
        }
    });
    transform_axis(&mut spec, 0, Direction::Inverse);
    transform_axis(&mut spec, 1, Direction::Inverse);
    let scale = 1.0 / (2.0 * cfg.lo_amplitude);
    Zip::from(&mut spec).and(carrier).for_each(|v, c| *v *= c * scale);
    spec
}

/// Complex mean of equally shaped fields.
pub fn coherent_average(fields: &[Array2<Complex64>]) -> Result<Array2<Complex64>> {
    let first = fields.first().ok_or_else(|| Error::invalid("coherent_average of an empty list"))?;
    let mut acc = Array2::<Complex64>::zeros(first.dim());
    for f in fields {
        if f.dim() != first.dim() {
            return Err(Error::ShapeMismatch("coherent_average: fields differ in shape".into()));
        }
        acc += f;
    }
    Ok(acc / fields.len() as f64)
}

/// Runs every readout slice through the camera: synthesis, demodulation and
/// coherent averaging over `frames_per_delay`.
pub fn detect_signal(sig: &KSpaceSignal, cfg: &DetectorConfig) -> Result<KSpaceSignal> {
    cfg.validate()?;
    cfg.check_band()?;
    if (sig.kx.n, sig.ky.n) != (cfg.n_px_x, cfg.n_px_y) {
        return Err(Error::ShapeMismatch(format!(
            "signal is {}×{} but detector is {}×{}",
            sig.kx.n, sig.ky.n, cfg.n_px_x, cfg.n_px_y
        )));
    }
    let carrier = cfg.carrier_phasor();
    // noiseless frames are all identical
    let single;
    let cfg = if cfg.shot_noise || cfg.frames_per_delay == 1 {
        cfg
    } else {
        single = DetectorConfig { frames_per_delay: 1, ..cfg.clone() };
        &single
    };
    let slices: Vec<Result<Array2<Complex64>>> = (0..sig.t.n)
        .into_par_iter()
        .map(|k| {
            let slice = sig.values().index_axis(Axis(2), k).to_owned();
            let frames = synthesize_frames_for_delay(&slice, cfg, k as u64)?;
            let fields: Vec<_> =
                frames.iter().map(|p| demodulate_differential(&p.differential(), cfg, &carrier)).collect();
            coherent_average(&fields)
        })
        .collect();
    let mut out = Array3::<Complex64>::zeros(sig.values().dim());
    for (k, s) in slices.into_iter().enumerate() {
        out.index_axis_mut(Axis(2), k).assign(&s?);
    }
    KSpaceSignal::new(sig.kx, sig.ky, sig.t, out)
}
