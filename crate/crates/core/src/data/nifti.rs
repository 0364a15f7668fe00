//! Uncompressed single-file NIfTI-1 (`.nii`) reader and writer.
//!
//! Voxel data on disk is x-fastest; tensors returned here are row-major
//! `[X, Y, Z]`, so element `(i, j, k)` sits at file index `i + X·(j + Y·k)`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const HEADER_LEN: usize = 348;
const DATA_OFFSET: usize = 352;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NiftiDtype {
    U8,
    I16,
    I32,
    F32,
    F64,
}

impl NiftiDtype {
    fn code(self) -> i16 {
        match self {
            NiftiDtype::U8 => 2,
            NiftiDtype::I16 => 4,
            NiftiDtype::I32 => 8,
            NiftiDtype::F32 => 16,
            NiftiDtype::F64 => 64,
        }
    }

    fn from_code(code: i16) -> Option<Self> {
        Some(match code {
            2 => NiftiDtype::U8,
            4 => NiftiDtype::I16,
            8 => NiftiDtype::I32,
            16 => NiftiDtype::F32,
            64 => NiftiDtype::F64,
            _ => return None,
        })
    }

    pub fn size(self) -> usize {
        match self {
            NiftiDtype::U8 => 1,
            NiftiDtype::I16 => 2,
            NiftiDtype::I32 | NiftiDtype::F32 => 4,
            NiftiDtype::F64 => 8,
        }
    }
}

/// A scaled volume and its voxel dimensions in millimetres.
#[derive(Debug, Clone, PartialEq)]
pub struct NiftiVolume {
    pub data: Tensor,
    pub voxel_size: [f64; 3],
}

struct Cursor<'a> {
    bytes: &'a [u8],
    big: bool,
}

impl Cursor<'_> {
    fn arr<const N: usize>(&self, at: usize) -> [u8; N] {
        let mut b: [u8; N] = self.bytes[at..at + N].try_into().expect("slice length");
        if self.big {
            b.reverse();
        }
        b
    }
    fn i16(&self, at: usize) -> i16 {
        i16::from_le_bytes(self.arr(at))
    }
    fn f32(&self, at: usize) -> f32 {
        f32::from_le_bytes(self.arr(at))
    }
}

pub fn parse_nifti(bytes: &[u8], path: &Path) -> Result<NiftiVolume> {
    let bad = |m: String| Error::format(path, m);
    if bytes.len() < HEADER_LEN {
        return Err(bad(format!("file is {} bytes, shorter than a NIfTI-1 header", bytes.len())));
    }
    let size_le = i32::from_le_bytes(bytes[0..4].try_into().expect("4 bytes"));
    let big = match (size_le, size_le.swap_bytes()) {
        (348, _) => false,
        (_, 348) => true,
        _ => return Err(bad(format!("sizeof_hdr is {size_le}, expected 348"))),
    };
    if &bytes[344..348] != b"n+1\0" {
        return Err(bad(format!("bad magic {:?}, expected \"n+1\"", &bytes[344..348])));
    }
    let c = Cursor { bytes, big };
    let ndim = c.i16(40);
    if !(1..=7).contains(&ndim) {
        return Err(bad(format!("dim[0] = {ndim} out of range")));
    }
    let mut dims: Vec<usize> = Vec::with_capacity(ndim as usize);
    for d in 1..=ndim as usize {
        let v = c.i16(40 + 2 * d);
        if v < 1 {
            return Err(bad(format!("dim[{d}] = {v}")));
        }
        dims.push(v as usize);
    }
    while dims.len() > 3 && dims.last() == Some(&1) {
        dims.pop();
    }
    if dims.len() > 3 {
        return Err(bad(format!("only 3-D volumes are supported, got dims {dims:?}")));
    }
    let dtype = NiftiDtype::from_code(c.i16(70)).ok_or_else(|| bad(format!("unsupported datatype {}", c.i16(70))))?;
    let mut voxel_size = [1.0; 3];
    for (d, v) in voxel_size.iter_mut().enumerate() {
        let p = c.f32(80 + 4 * d) as f64;
        if p.is_finite() && p > 0.0 {
            *v = p;
        }
    }
    let offset = (c.f32(108) as usize).max(DATA_OFFSET);
    let mut slope = c.f32(112) as f64;
    let mut inter = c.f32(116) as f64;
    if slope == 0.0 || !slope.is_finite() {
        slope = 1.0;
        inter = 0.0;
    }
    if !inter.is_finite() {
        inter = 0.0;
    }

    let count: usize = dims.iter().product();
    let need = offset + count * dtype.size();
    if bytes.len() < need {
        return Err(bad(format!("truncated data: need {need} bytes, file has {}", bytes.len())));
    }
    let raw = &bytes[offset..need];
    let data = Cursor { bytes: raw, big };
    let value = |idx: usize| -> f64 {
        let at = idx * dtype.size();
        match dtype {
            NiftiDtype::U8 => raw[at] as f64,
            NiftiDtype::I16 => data.i16(at) as f64,
            NiftiDtype::I32 => i32::from_le_bytes(data.arr(at)) as f64,
            NiftiDtype::F32 => data.f32(at) as f64,
            NiftiDtype::F64 => f64::from_le_bytes(data.arr(at)),
        }
    };
    let full = [
        dims[0],
        dims.get(1).copied().unwrap_or(1),
        dims.get(2).copied().unwrap_or(1),
    ];
    // Identity scaling is skipped so stored values come back bit for bit
    // (`-0.0 * 1 + 0` would be `+0.0`).
    let identity = slope == 1.0 && inter == 0.0;
    let mut out = Vec::with_capacity(count);
    for i in 0..full[0] {
        for j in 0..full[1] {
            for k in 0..full[2] {
                let v = value(i + full[0] * (j + full[1] * k));
                out.push(if identity { v } else { v * slope + inter });
            }
        }
    }
    let data = Tensor::new(&dims, out)?;
    data.ensure_finite(&path.display().to_string())?;
    Ok(NiftiVolume { data, voxel_size })
}

pub fn read_nifti(path: &Path) -> Result<NiftiVolume> {
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    parse_nifti(&bytes, path)
}

/// Header fields the writer lets callers choose.
#[derive(Debug, Clone, Copy)]
pub struct NiftiWriteOptions {
    pub dtype: NiftiDtype,
    pub scl_slope: f32,
    pub scl_inter: f32,
    pub big_endian: bool,
}

impl Default for NiftiWriteOptions {
    fn default() -> Self {
        NiftiWriteOptions {
            dtype: NiftiDtype::F64,
            scl_slope: 1.0,
            scl_inter: 0.0,
            big_endian: false,
        }
    }
}

/// Encodes `stored` (values as they go on disk, before scaling) into a
/// complete `.nii` image.
pub fn encode_nifti(stored: &Tensor, voxel_size: [f64; 3], opts: NiftiWriteOptions) -> Result<Vec<u8>> {
    let shape = stored.shape();
    if shape.is_empty() || shape.len() > 3 || shape.iter().any(|&d| d > i16::MAX as usize) {
        return Err(Error::Config(format!("cannot store shape {shape:?} in NIfTI-1")));
    }
    let mut h = vec![0u8; DATA_OFFSET];
    let put = |h: &mut Vec<u8>, at: usize, mut b: Vec<u8>| {
        if opts.big_endian {
            b.reverse();
        }
        h[at..at + b.len()].copy_from_slice(&b);
    };
    put(&mut h, 0, 348i32.to_le_bytes().to_vec());
    put(&mut h, 40, (shape.len() as i16).to_le_bytes().to_vec());
    for d in 1..=7 {
        let v = shape.get(d - 1).copied().unwrap_or(1) as i16;
        put(&mut h, 40 + 2 * d, v.to_le_bytes().to_vec());
    }
    put(&mut h, 70, opts.dtype.code().to_le_bytes().to_vec());
    put(&mut h, 72, (8 * opts.dtype.size() as i16).to_le_bytes().to_vec());
    put(&mut h, 76, 1f32.to_le_bytes().to_vec());
    for (d, v) in voxel_size.iter().enumerate() {
        put(&mut h, 80 + 4 * d, (*v as f32).to_le_bytes().to_vec());
    }
    put(&mut h, 108, (DATA_OFFSET as f32).to_le_bytes().to_vec());
    put(&mut h, 112, opts.scl_slope.to_le_bytes().to_vec());
    put(&mut h, 116, opts.scl_inter.to_le_bytes().to_vec());
    // xyzt_units: millimetres.
    h[123] = 2;
    h[344..348].copy_from_slice(b"n+1\0");

    let full = [shape[0], *shape.get(1).unwrap_or(&1), *shape.get(2).unwrap_or(&1)];
    let mut body = Vec::with_capacity(stored.len() * opts.dtype.size());
    for k in 0..full[2] {
        for j in 0..full[1] {
            for i in 0..full[0] {
                let v = stored.data()[(i * full[1] + j) * full[2] + k];
                let mut b = encode_value(v, opts.dtype)?;
                if opts.big_endian {
                    b.reverse();
                }
                body.extend_from_slice(&b);
            }
        }
    }
    h.extend_from_slice(&body);
    Ok(h)
}

fn encode_value(v: f64, dtype: NiftiDtype) -> Result<Vec<u8>> {
    let integral = |lo: f64, hi: f64| {
        if v.fract() != 0.0 || v < lo || v > hi {
            Err(Error::Config(format!("value {v} not representable as {dtype:?}")))
        } else {
            Ok(())
        }
    };
    Ok(match dtype {
        NiftiDtype::U8 => {
            integral(0.0, 255.0)?;
            vec![v as u8]
        }
        NiftiDtype::I16 => {
            integral(i16::MIN as f64, i16::MAX as f64)?;
            (v as i16).to_le_bytes().to_vec()
        }
        NiftiDtype::I32 => {
            integral(i32::MIN as f64, i32::MAX as f64)?;
            (v as i32).to_le_bytes().to_vec()
        }
        NiftiDtype::F32 => (v as f32).to_le_bytes().to_vec(),
        NiftiDtype::F64 => v.to_le_bytes().to_vec(),
    })
}

/// Writes `volume` as little-endian float64 with identity scaling.
pub fn write_nifti(path: &Path, volume: &Tensor, voxel_size: [f64; 3]) -> Result<()> {
    write_nifti_with(path, volume, voxel_size, NiftiWriteOptions::default())
}

pub fn write_nifti_with(path: &Path, stored: &Tensor, voxel_size: [f64; 3], opts: NiftiWriteOptions) -> Result<()> {
    let bytes = encode_nifti(stored, voxel_size, opts)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}
