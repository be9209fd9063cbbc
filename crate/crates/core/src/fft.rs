//! Centred unitary discrete Fourier transforms along array axes.
//!
//! Sample `j` of an axis with `n` points sits at index offset `j - n/2` from
//! the centre, and so does frequency bin `m`. The forward transform is
//!
//! ```text
//! F[m] = n^{-1/2} Σ_j f[j] exp(-2πi (m - n/2)(j - n/2) / n)
//! ```
//!
//! which is the physical kernel `exp(-i k·r)` whenever the real-space axis is
//! centred, with DC at the middle bin. The inverse uses the conjugate kernel.

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::{ArrayBase, Axis, DataMut, Dimension, Zip};
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};

use crate::field::Direction;

/// A planned centred transform of fixed length.
pub struct CenteredFft {
    fft: Arc<dyn Fft<f64>>,
    pre: Vec<Complex64>,
    post: Vec<Complex64>,
    scale: f64,
}

impl CenteredFft {
    pub fn new(n: usize, direction: Direction) -> Self {
        let mut planner = FftPlanner::new();
        let fft = match direction {
            Direction::Forward => planner.plan_fft_forward(n),
            Direction::Inverse => planner.plan_fft_inverse(n),
        };
        let sign = match direction {
            Direction::Forward => 1.0,
            Direction::Inverse => -1.0,
        };
        let c = (n / 2) as f64;
        let nf = n as f64;
        let pre = (0..n).map(|j| Complex64::from_polar(1.0, sign * 2.0 * PI * c * j as f64 / nf)).collect();
        let post = (0..n).map(|m| Complex64::from_polar(1.0, sign * 2.0 * PI * c * (m as f64 - c) / nf)).collect();
        Self { fft, pre, post, scale: 1.0 / nf.sqrt() }
    }

    pub fn len(&self) -> usize {
        self.pre.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pre.is_empty()
    }

    /// Transforms `buf` in place.
    pub fn process(&self, buf: &mut [Complex64]) {
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.scratch_len()];
        self.process_with_scratch(buf, &mut scratch);
    }

    pub fn scratch_len(&self) -> usize {
        self.fft.get_inplace_scratch_len()
    }

    /// [`CenteredFft::process`] with caller-owned scratch of at least
    /// [`CenteredFft::scratch_len`] elements.
    pub fn process_with_scratch(&self, buf: &mut [Complex64], scratch: &mut [Complex64]) {
        debug_assert_eq!(buf.len(), self.len());
        for (v, p) in buf.iter_mut().zip(&self.pre) {
            *v *= p;
        }
        self.fft.process_with_scratch(buf, scratch);
        for (v, p) in buf.iter_mut().zip(&self.post) {
            *v *= p * self.scale;
        }
    }
}

/// Applies the centred unitary transform along `axis` of `values`, in place.
/// Independent lanes are processed in parallel.
pub fn transform_axis<S, D>(values: &mut ArrayBase<S, D>, axis: usize, direction: Direction)
where
    S: DataMut<Elem = Complex64>,
    D: Dimension,
{
    let n = values.len_of(Axis(axis));
    if n <= 1 {
        return;
    }
    let plan = CenteredFft::new(n, direction);
    let zero = Complex64::new(0.0, 0.0);
    Zip::from(values.lanes_mut(Axis(axis))).into_par_iter().for_each_init(
        || (vec![zero; n], vec![zero; plan.scratch_len()]),
        |(buf, scratch), (mut lane,)| {
            buf.iter_mut().zip(lane.iter()).for_each(|(b, v)| *b = *v);
            plan.process_with_scratch(buf, scratch);
            lane.iter_mut().zip(buf.iter()).for_each(|(dst, src)| *dst = *src);
        },
    );
}
