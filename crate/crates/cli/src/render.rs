//! Slice images and line profiles of reconstructed fields.

use std::f64::consts::PI;
use std::path::Path;

use gemtomo::{AxisSpec, Complex64, ComplexField3D};
use image::{Rgb, RgbImage};
use ndarray::{Array2, Axis};
use serde::Serialize;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SliceAxis {
    X,
    Y,
    Z,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SliceSpec {
    pub axis: SliceAxis,
    pub index: usize,
}

impl std::str::FromStr for SliceSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (a, i) = s.split_once('=').ok_or_else(|| format!("expected {{x|y|z}}=index, got {s:?}"))?;
        let axis = match a.trim() {
            "x" => SliceAxis::X,
            "y" => SliceAxis::Y,
            "z" => SliceAxis::Z,
            other => return Err(format!("unknown slice axis {other:?}")),
        };
        let index = i.trim().parse().map_err(|_| format!("bad slice index {i:?}"))?;
        Ok(Self { axis, index })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum RenderMode {
    Phase,
    Magnitude,
}

/// A 2D cut: `values[(row, col)]` with its two axes and a display mask.
pub struct Plane {
    pub values: Array2<Complex64>,
    pub mask: Array2<bool>,
    pub rows: AxisSpec,
    pub cols: AxisSpec,
}

/// Cuts `field` at `spec`. Rows/columns: z-slice (y, x), y-slice (x, z),
/// x-slice (y, z).
pub fn cut(field: &ComplexField3D, mask: &ndarray::Array3<bool>, spec: SliceSpec) -> CliResult<Plane> {
    let g = field.grid();
    let (ax, n) = match spec.axis {
        SliceAxis::X => (0, g.x.n),
        SliceAxis::Y => (1, g.y.n),
        SliceAxis::Z => (2, g.z.n),
    };
    if spec.index >= n {
        return Err(CliError::Validation(format!("slice index {} out of range 0..{n}", spec.index)));
    }
    let v = field.values().index_axis(Axis(ax), spec.index);
    let m = mask.index_axis(Axis(ax), spec.index);
    Ok(match spec.axis {
        SliceAxis::Z => Plane { values: v.t().to_owned(), mask: m.t().to_owned(), rows: g.y, cols: g.x },
        SliceAxis::Y => Plane { values: v.to_owned(), mask: m.to_owned(), rows: g.x, cols: g.z },
        SliceAxis::X => Plane { values: v.to_owned(), mask: m.to_owned(), rows: g.y, cols: g.z },
    })
}

/// Hue wheel over (−π, π].
fn cyclic(phase: f64) -> Rgb<u8> {
    let h = (phase + PI) / (2.0 * PI) * 6.0;
    let x = 1.0 - ((h % 2.0) - 1.0).abs();
    let (r, g, b) = match h as u32 {
        0 => (1.0, x, 0.0),
        1 => (x, 1.0, 0.0),
        2 => (0.0, 1.0, x),
        3 => (0.0, x, 1.0),
        4 => (x, 0.0, 1.0),
        _ => (1.0, 0.0, x),
    };
    let q = |c: f64| (c * 255.0).round() as u8;
    Rgb([q(r), q(g), q(b)])
}

pub fn to_image(plane: &Plane, mode: RenderMode) -> RgbImage {
    let (nr, nc) = plane.values.dim();
    let peak = plane.values.iter().zip(&plane.mask).filter(|(_, &m)| m).map(|(v, _)| v.norm()).fold(0.0, f64::max);
    RgbImage::from_fn(nc as u32, nr as u32, |c, r| {
        // first row at the top is the largest row coordinate
        let idx = (nr - 1 - r as usize, c as usize);
        if !plane.mask[idx] {
            return Rgb([0, 0, 0]);
        }
        let v = plane.values[idx];
        match mode {
            RenderMode::Phase => cyclic(v.arg()),
            RenderMode::Magnitude => {
                let g = if peak > 0.0 { (v.norm() / peak * 255.0).round() as u8 } else { 0 };
                Rgb([g, g, g])
            }
        }
    })
}

#[derive(Serialize)]
struct ProfileRow {
    profile: &'static str,
    index: usize,
    coord_m: f64,
    magnitude: f64,
    phase_rad: f64,
    in_mask: bool,
}

/// Central row and central column of the plane.
pub fn write_profiles(plane: &Plane, path: &Path) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::io(path, e))?;
    let (nr, nc) = plane.values.dim();
    let rows = (0..nc).map(|j| ("row", j, plane.cols.coord(j), (nr / 2, j)));
    let cols = (0..nr).map(|i| ("col", i, plane.rows.coord(i), (i, nc / 2)));
    for (profile, index, coord_m, at) in rows.chain(cols) {
        let v = plane.values[at];
        w.serialize(ProfileRow {
            profile,
            index,
            coord_m,
            magnitude: v.norm(),
            phase_rad: v.arg(),
            in_mask: plane.mask[at],
        })
        .map_err(|e| CliError::io(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_slice_specs() {
        assert_eq!("z=12".parse::<SliceSpec>().unwrap(), SliceSpec { axis: SliceAxis::Z, index: 12 });
        assert!("q=1".parse::<SliceSpec>().is_err());
        assert!("x".parse::<SliceSpec>().is_err());
        assert!("y=-1".parse::<SliceSpec>().is_err());
    }

    #[test]
    fn colormap_is_cyclic() {
        assert_eq!(cyclic(-PI), cyclic(PI - 1e-12));
        assert_eq!(cyclic(-PI), Rgb([255, 0, 0]));
        assert_eq!(cyclic(0.0), Rgb([0, 255, 255]));
    }
}
