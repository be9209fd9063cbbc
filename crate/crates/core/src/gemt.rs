//! GEMT: a small self-describing binary container for complex arrays.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! "GEMT"            4 bytes magic
//! version: u32      = 1
//! dtype: u8         1 = complex binary32 pairs, 2 = complex binary64 pairs,
//!                   3 = unsigned bytes (masks)
//! ndim: u8
//! ndim × { n: u64, step: f64, origin: f64, unit: [u8; 16] zero-padded }
//! payload           row-major, last axis fastest
//! ```
//!
//! dtype 3 is an extension used for 8-bit mask rasters.

use std::io::{Read, Write};

use ndarray::{Array3, ArrayD, IxDyn};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::field::{AxisSpec, ComplexField3D, DomainTag, GridSpec, KSpaceSignal};

pub const MAGIC: [u8; 4] = *b"GEMT";
pub const VERSION: u32 = 1;
const UNIT_LEN: usize = 16;

pub const UNIT_METRE: &str = "m";
pub const UNIT_WAVENUMBER: &str = "rad/m";
pub const UNIT_SECOND: &str = "s";
pub const UNIT_FRAME: &str = "frame";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Dtype {
    Complex32 = 1,
    Complex64 = 2,
    U8 = 3,
}

impl Dtype {
    fn from_u8(v: u8) -> Result<Self> {
        match v {
            1 => Ok(Dtype::Complex32),
            2 => Ok(Dtype::Complex64),
            3 => Ok(Dtype::U8),
            other => Err(Error::format("GEMT", format!("unknown dtype {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dim {
    pub axis: AxisSpec,
    pub unit: String,
}

impl Dim {
    pub fn new(axis: AxisSpec, unit: &str) -> Self {
        Self { axis, unit: unit.to_string() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Complex(ArrayD<Complex64>),
    Bytes(ArrayD<u8>),
}

/// A decoded GEMT file.
#[derive(Debug, Clone, PartialEq)]
pub struct GemtArray {
    pub dtype: Dtype,
    pub dims: Vec<Dim>,
    pub payload: Payload,
}

impl GemtArray {
    fn shape(&self) -> Vec<usize> {
        self.dims.iter().map(|d| d.axis.n).collect()
    }

    pub fn write<W: Write>(&self, w: &mut W) -> Result<()> {
        let ndim = u8::try_from(self.dims.len()).map_err(|_| Error::format("GEMT", "too many dimensions"))?;
        let payload_shape = match &self.payload {
            Payload::Complex(a) => a.shape().to_vec(),
            Payload::Bytes(a) => a.shape().to_vec(),
        };
        if payload_shape != self.shape() {
            return Err(Error::ShapeMismatch(format!("GEMT payload {:?} vs header {:?}", payload_shape, self.shape())));
        }
        w.write_all(&MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&[self.dtype as u8, ndim])?;
        for d in &self.dims {
            w.write_all(&(d.axis.n as u64).to_le_bytes())?;
            w.write_all(&d.axis.step.to_le_bytes())?;
            w.write_all(&d.axis.origin.to_le_bytes())?;
            let bytes = d.unit.as_bytes();
            if bytes.len() > UNIT_LEN {
                return Err(Error::format("GEMT", format!("unit tag '{}' longer than 16 bytes", d.unit)));
            }
            let mut tag = [0u8; UNIT_LEN];
            tag[..bytes.len()].copy_from_slice(bytes);
            w.write_all(&tag)?;
        }
        let mut buf = Vec::new();
        match (&self.payload, self.dtype) {
            (Payload::Complex(a), Dtype::Complex32) => {
                buf.reserve(a.len() * 8);
                for v in a.iter() {
                    buf.extend_from_slice(&(v.re as f32).to_le_bytes());
                    buf.extend_from_slice(&(v.im as f32).to_le_bytes());
                }
            }
            (Payload::Complex(a), Dtype::Complex64) => {
                buf.reserve(a.len() * 16);
                for v in a.iter() {
                    buf.extend_from_slice(&v.re.to_le_bytes());
                    buf.extend_from_slice(&v.im.to_le_bytes());
                }
            }
            (Payload::Bytes(a), Dtype::U8) => buf.extend(a.iter().copied()),
            _ => return Err(Error::format("GEMT", "payload does not match dtype")),
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact(r, &mut magic)?;
        if magic != MAGIC {
            return Err(Error::format("GEMT", "bad magic"));
        }
        let mut b4 = [0u8; 4];
        read_exact(r, &mut b4)?;
        let version = u32::from_le_bytes(b4);
        if version != VERSION {
            return Err(Error::format("GEMT", format!("unsupported version {version}")));
        }
        let mut b2 = [0u8; 2];
        read_exact(r, &mut b2)?;
        let dtype = Dtype::from_u8(b2[0])?;
        let ndim = b2[1] as usize;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            let mut rec = [0u8; 24 + UNIT_LEN];
            read_exact(r, &mut rec)?;
            let n = u64::from_le_bytes(rec[0..8].try_into().unwrap());
            let step = f64::from_le_bytes(rec[8..16].try_into().unwrap());
            let origin = f64::from_le_bytes(rec[16..24].try_into().unwrap());
            let tag = &rec[24..];
            let end = tag.iter().position(|&c| c == 0).unwrap_or(UNIT_LEN);
            let unit = std::str::from_utf8(&tag[..end])
                .map_err(|_| Error::format("GEMT", "unit tag is not UTF-8"))?
                .to_string();
            let axis = AxisSpec::new(
                usize::try_from(n).map_err(|_| Error::format("GEMT", "dimension too large"))?,
                step,
                origin,
            )
            .map_err(|e| Error::format("GEMT", format!("invalid axis: {e}")))?;
            dims.push(Dim { axis, unit });
        }
        let shape: Vec<usize> = dims.iter().map(|d| d.axis.n).collect();
        let count = shape
            .iter()
            .try_fold(1usize, |acc, &n| acc.checked_mul(n))
            .ok_or_else(|| Error::format("GEMT", "payload size overflows"))?;
        let elem = match dtype {
            Dtype::Complex32 => 8,
            Dtype::Complex64 => 16,
            Dtype::U8 => 1,
        };
        let mut raw =
            vec![0u8; count.checked_mul(elem).ok_or_else(|| Error::format("GEMT", "payload size overflows"))?];
        read_exact(r, &mut raw)?;
        let payload = match dtype {
            Dtype::Complex32 => Payload::Complex(to_array(
                &shape,
                raw.chunks_exact(8).map(|c| {
                    Complex64::new(
                        f32::from_le_bytes(c[0..4].try_into().unwrap()) as f64,
                        f32::from_le_bytes(c[4..8].try_into().unwrap()) as f64,
                    )
                }),
            )?),
            Dtype::Complex64 => Payload::Complex(to_array(
                &shape,
                raw.chunks_exact(16).map(|c| {
                    Complex64::new(
                        f64::from_le_bytes(c[0..8].try_into().unwrap()),
                        f64::from_le_bytes(c[8..16].try_into().unwrap()),
                    )
                }),
            )?),
            Dtype::U8 => Payload::Bytes(to_array(&shape, raw.into_iter())?),
        };
        Ok(Self { dtype, dims, payload })
    }

    fn complex3(self, what: &'static str) -> Result<(Vec<Dim>, Array3<Complex64>)> {
        if self.dims.len() != 3 {
            return Err(Error::format("GEMT", format!("{what} needs 3 dimensions, found {}", self.dims.len())));
        }
        match self.payload {
            Payload::Complex(a) => {
                let a = a.into_dimensionality::<ndarray::Ix3>().map_err(|e| Error::format("GEMT", e.to_string()))?;
                Ok((self.dims, a))
            }
            Payload::Bytes(_) => Err(Error::format("GEMT", format!("{what} must be complex"))),
        }
    }
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::format("GEMT", "truncated file")
        } else {
            Error::Io(e)
        }
    })
}

fn to_array<T>(shape: &[usize], it: impl Iterator<Item = T>) -> Result<ArrayD<T>> {
    ArrayD::from_shape_vec(IxDyn(shape), it.collect()).map_err(|e| Error::format("GEMT", e.to_string()))
}

/// Encodes a field; spectral axes are tagged `rad/m`, real axes `m`.
pub fn field_to_gemt(field: &ComplexField3D, dtype: Dtype) -> GemtArray {
    let g = field.grid();
    let dims = [(&g.x, 0), (&g.y, 1), (&g.z, 2)]
        .into_iter()
        .map(|(ax, i)| {
            let spectral = field.is_spectral(crate::field::Axis3::ALL[i]);
            Dim::new(*ax, if spectral { UNIT_WAVENUMBER } else { UNIT_METRE })
        })
        .collect();
    GemtArray { dtype, dims, payload: Payload::Complex(field.values().clone().into_dyn()) }
}

pub fn field_from_gemt(arr: GemtArray) -> Result<ComplexField3D> {
    let (dims, values) = arr.complex3("field")?;
    let flags: Vec<bool> = dims
        .iter()
        .map(|d| match d.unit.as_str() {
            UNIT_METRE => Ok(false),
            UNIT_WAVENUMBER => Ok(true),
            other => Err(Error::format("GEMT", format!("unexpected field unit '{other}'"))),
        })
        .collect::<Result<_>>()?;
    let domain = match flags.as_slice() {
        [false, false, false] => DomainTag::RealSpace,
        [true, true, false] => DomainTag::KxyZ,
        [true, true, true] => DomainTag::Kxykz,
        _ => return Err(Error::format("GEMT", "unsupported mixed-domain field")),
    };
    let grid = GridSpec::new(dims[0].axis, dims[1].axis, dims[2].axis)?;
    ComplexField3D::with_domain(grid, values, domain)
}

pub fn signal_to_gemt(sig: &KSpaceSignal, dtype: Dtype) -> GemtArray {
    GemtArray {
        dtype,
        dims: vec![Dim::new(sig.kx, UNIT_WAVENUMBER), Dim::new(sig.ky, UNIT_WAVENUMBER), Dim::new(sig.t, UNIT_SECOND)],
        payload: Payload::Complex(sig.values().clone().into_dyn()),
    }
}

pub fn signal_from_gemt(arr: GemtArray) -> Result<KSpaceSignal> {
    let (dims, values) = arr.complex3("signal")?;
    let units: Vec<&str> = dims.iter().map(|d| d.unit.as_str()).collect();
    if units != [UNIT_WAVENUMBER, UNIT_WAVENUMBER, UNIT_SECOND] {
        return Err(Error::format("GEMT", format!("signal units must be rad/m, rad/m, s; found {units:?}")));
    }
    KSpaceSignal::new(dims[0].axis, dims[1].axis, dims[2].axis, values)
}

/// 8-bit raster of a boolean mask (255 inside, 0 outside).
pub fn mask_to_gemt(mask: &Array3<bool>, grid: &GridSpec) -> GemtArray {
    GemtArray {
        dtype: Dtype::U8,
        dims: vec![Dim::new(grid.x, UNIT_METRE), Dim::new(grid.y, UNIT_METRE), Dim::new(grid.z, UNIT_METRE)],
        payload: Payload::Bytes(mask.mapv(|b| if b { 255 } else { 0 }).into_dyn()),
    }
}

pub fn write_file(path: impl AsRef<std::path::Path>, arr: &GemtArray) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    arr.write(&mut w)?;
    w.flush()?;
    Ok(())
}

pub fn read_file(path: impl AsRef<std::path::Path>) -> Result<GemtArray> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    GemtArray::read(&mut r)
}
