//! Minimal single-file NIfTI-1 codec (`.nii` and `.nii.gz`).
//!
//! Reads any little- or big-endian 3D scalar image with an integer or
//! real datatype; writes little-endian float32 images and uint8 masks with
//! a 352-byte prefix (348-byte header plus an empty extension block).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use flate2::read::MultiGzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use ndarray::{Array3, ArrayView3, ShapeBuilder};

use super::orientation::Affine;
use crate::error::{Error, Result};

pub(crate) const HEADER_SIZE: usize = 348;
pub(crate) const VOX_OFFSET: usize = 352;

const DT_UINT8: i16 = 2;
const DT_INT16: i16 = 4;
const DT_INT32: i16 = 8;
const DT_FLOAT32: i16 = 16;
const DT_FLOAT64: i16 = 64;
const DT_INT8: i16 = 256;
const DT_UINT16: i16 = 512;
const DT_UINT32: i16 = 768;

/// Element types the writer can emit.
pub(crate) trait NiftiElement: Copy {
    const DATATYPE: i16;
    const BITPIX: i16;
    fn write_le(self, out: &mut Vec<u8>);
}

impl NiftiElement for f32 {
    const DATATYPE: i16 = DT_FLOAT32;
    const BITPIX: i16 = 32;
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
}

impl NiftiElement for u8 {
    const DATATYPE: i16 = DT_UINT8;
    const BITPIX: i16 = 8;
    fn write_le(self, out: &mut Vec<u8>) {
        out.push(self);
    }
}

/// The subset of header fields the pipeline uses.
#[derive(Debug, Clone)]
pub(crate) struct Header {
    pub dim: [i16; 8],
    pub datatype: i16,
    pub pixdim: [f32; 8],
    pub vox_offset: f32,
    pub scl_slope: f32,
    pub scl_inter: f32,
    pub qform_code: i16,
    pub sform_code: i16,
    pub quatern: [f32; 3],
    pub qoffset: [f32; 3],
    pub srow: [[f32; 4]; 3],
}

struct Cursor<'a> {
    bytes: &'a [u8],
    big_endian: bool,
}

impl Cursor<'_> {
    fn i16(&self, off: usize) -> i16 {
        let b = [self.bytes[off], self.bytes[off + 1]];
        if self.big_endian {
            i16::from_be_bytes(b)
        } else {
            i16::from_le_bytes(b)
        }
    }

    fn i32(&self, off: usize) -> i32 {
        let b: [u8; 4] = self.bytes[off..off + 4].try_into().unwrap();
        if self.big_endian {
            i32::from_be_bytes(b)
        } else {
            i32::from_le_bytes(b)
        }
    }

    fn f32(&self, off: usize) -> f32 {
        f32::from_bits(self.i32(off) as u32)
    }
}

impl Header {
    fn parse(bytes: &[u8], path: &Path) -> Result<(Self, bool)> {
        if bytes.len() < HEADER_SIZE {
            return Err(Error::nifti(path, "truncated header"));
        }
        let le = i32::from_le_bytes(bytes[0..4].try_into().unwrap());
        let be = i32::from_be_bytes(bytes[0..4].try_into().unwrap());
        let big_endian = match (le, be) {
            (348, _) => false,
            (_, 348) => true,
            _ => return Err(Error::nifti(path, "not a NIfTI-1 file (sizeof_hdr != 348)")),
        };
        if &bytes[344..348] != b"n+1\0" {
            return Err(Error::nifti(
                path,
                "unsupported NIfTI variant (only single-file n+1 is read)",
            ));
        }
        let c = Cursor { bytes, big_endian };
        let mut dim = [0i16; 8];
        for (i, d) in dim.iter_mut().enumerate() {
            *d = c.i16(40 + 2 * i);
        }
        let mut pixdim = [0f32; 8];
        for (i, p) in pixdim.iter_mut().enumerate() {
            *p = c.f32(76 + 4 * i);
        }
        let mut srow = [[0f32; 4]; 3];
        for (r, row) in srow.iter_mut().enumerate() {
            for (k, v) in row.iter_mut().enumerate() {
                *v = c.f32(280 + 16 * r + 4 * k);
            }
        }
        let header = Header {
            dim,
            datatype: c.i16(70),
            pixdim,
            vox_offset: c.f32(108),
            scl_slope: c.f32(112),
            scl_inter: c.f32(116),
            qform_code: c.i16(252),
            sform_code: c.i16(254),
            quatern: [c.f32(256), c.f32(260), c.f32(264)],
            qoffset: [c.f32(268), c.f32(272), c.f32(276)],
            srow,
        };
        Ok((header, big_endian))
    }

    fn encode(&self, bitpix: i16) -> Vec<u8> {
        let mut b = vec![0u8; VOX_OFFSET];
        let mut put = |off: usize, bytes: &[u8]| b[off..off + bytes.len()].copy_from_slice(bytes);
        put(0, &(HEADER_SIZE as i32).to_le_bytes());
        put(38, b"r");
        for (i, d) in self.dim.iter().enumerate() {
            put(40 + 2 * i, &d.to_le_bytes());
        }
        put(70, &self.datatype.to_le_bytes());
        put(72, &bitpix.to_le_bytes());
        for (i, p) in self.pixdim.iter().enumerate() {
            put(76 + 4 * i, &p.to_le_bytes());
        }
        put(108, &self.vox_offset.to_le_bytes());
        put(112, &self.scl_slope.to_le_bytes());
        put(116, &self.scl_inter.to_le_bytes());
        // xyzt_units: millimetres, seconds
        put(123, &[2 | 8]);
        put(252, &self.qform_code.to_le_bytes());
        put(254, &self.sform_code.to_le_bytes());
        for (i, q) in self.quatern.iter().enumerate() {
            put(256 + 4 * i, &q.to_le_bytes());
        }
        for (i, q) in self.qoffset.iter().enumerate() {
            put(268 + 4 * i, &q.to_le_bytes());
        }
        for (r, row) in self.srow.iter().enumerate() {
            for (k, v) in row.iter().enumerate() {
                put(280 + 16 * r + 4 * k, &v.to_le_bytes());
            }
        }
        put(344, b"n+1\0");
        b
    }

    /// Voxel-to-world transform: sform when set, else qform, else none.
    pub fn affine(&self) -> Option<Affine> {
        if self.sform_code > 0 {
            let mut m = [[0f64; 4]; 3];
            for r in 0..3 {
                for k in 0..4 {
                    m[r][k] = f64::from(self.srow[r][k]);
                }
            }
            return Some(Affine(m));
        }
        if self.qform_code > 0 {
            return Some(self.qform_affine());
        }
        None
    }

    fn qform_affine(&self) -> Affine {
        let [b, c, d] = self.quatern.map(f64::from);
        let a = (1.0 - (b * b + c * c + d * d)).max(0.0).sqrt();
        let r = [
            [a * a + b * b - c * c - d * d, 2.0 * (b * c - a * d), 2.0 * (b * d + a * c)],
            [2.0 * (b * c + a * d), a * a + c * c - b * b - d * d, 2.0 * (c * d - a * b)],
            [2.0 * (b * d - a * c), 2.0 * (c * d + a * b), a * a + d * d - c * c - b * b],
        ];
        let qfac = if self.pixdim[0] < 0.0 { -1.0 } else { 1.0 };
        let scale = [
            f64::from(self.pixdim[1]),
            f64::from(self.pixdim[2]),
            f64::from(self.pixdim[3]) * qfac,
        ];
        let mut m = [[0f64; 4]; 3];
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] = r[i][j] * scale[j];
            }
            m[i][3] = f64::from(self.qoffset[i]);
        }
        Affine(m)
    }

    fn set_qform(&mut self, affine: &Affine) {
        let mut r = [[0f64; 3]; 3];
        for j in 0..3 {
            let col = affine.column(j);
            let n = col.iter().map(|v| v * v).sum::<f64>().sqrt();
            for i in 0..3 {
                r[i][j] = if n > 0.0 { col[i] / n } else { 0.0 };
            }
        }
        let det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1])
            - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
            + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
        let qfac = if det < 0.0 {
            for row in r.iter_mut() {
                row[2] = -row[2];
            }
            -1.0
        } else {
            1.0
        };
        let (a, b, c, d) = rotation_to_quaternion(&r);
        let _ = a;
        self.quatern = [b as f32, c as f32, d as f32];
        self.qoffset = affine.translation().map(|v| v as f32);
        self.pixdim[0] = qfac;
        self.qform_code = 1;
    }
}

fn rotation_to_quaternion(r: &[[f64; 3]; 3]) -> (f64, f64, f64, f64) {
    let trace = r[0][0] + r[1][1] + r[2][2] + 1.0;
    let (mut a, mut b, mut c, mut d);
    if trace > 0.5 {
        a = 0.5 * trace.sqrt();
        b = 0.25 * (r[2][1] - r[1][2]) / a;
        c = 0.25 * (r[0][2] - r[2][0]) / a;
        d = 0.25 * (r[1][0] - r[0][1]) / a;
    } else {
        let xd = 1.0 + r[0][0] - (r[1][1] + r[2][2]);
        let yd = 1.0 + r[1][1] - (r[0][0] + r[2][2]);
        let zd = 1.0 + r[2][2] - (r[0][0] + r[1][1]);
        if xd > 1.0 {
            b = 0.5 * xd.sqrt();
            c = 0.25 * (r[0][1] + r[1][0]) / b;
            d = 0.25 * (r[0][2] + r[2][0]) / b;
            a = 0.25 * (r[2][1] - r[1][2]) / b;
        } else if yd > 1.0 {
            c = 0.5 * yd.sqrt();
            b = 0.25 * (r[0][1] + r[1][0]) / c;
            d = 0.25 * (r[1][2] + r[2][1]) / c;
            a = 0.25 * (r[0][2] - r[2][0]) / c;
        } else {
            d = 0.5 * zd.sqrt();
            b = 0.25 * (r[0][2] + r[2][0]) / d;
            c = 0.25 * (r[1][2] + r[2][1]) / d;
            a = 0.25 * (r[1][0] - r[0][1]) / d;
        }
        if a < 0.0 {
            a = -a;
            b = -b;
            c = -c;
            d = -d;
        }
    }
    (a, b, c, d)
}

fn is_gzip(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("gz"))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    if is_gzip(path) {
        MultiGzDecoder::new(BufReader::new(file))
            .read_to_end(&mut bytes)
            .map_err(|e| Error::nifti(path, format!("gzip decode failed: {e}")))?;
    } else {
        BufReader::new(file)
            .read_to_end(&mut bytes)
            .map_err(|e| Error::io(path, e))?;
    }
    Ok(bytes)
}

pub(crate) struct RawVolume {
    pub data: Array3<f32>,
    pub spacing: [f64; 3],
    pub affine: Option<Affine>,
}

pub(crate) fn read(path: &Path) -> Result<RawVolume> {
    let bytes = read_bytes(path)?;
    let (header, big_endian) = Header::parse(&bytes, path)?;

    let ndim = header.dim[0];
    if !(1..=7).contains(&ndim) {
        return Err(Error::nifti(path, format!("invalid dim[0] = {ndim}")));
    }
    let extra: i64 = (4..=ndim as usize).map(|i| i64::from(header.dim[i])).product();
    if ndim < 3 || extra != 1 {
        return Err(Error::nifti(
            path,
            format!("expected 3D volume, found {ndim}D with dims {:?}", &header.dim[1..=ndim as usize]),
        ));
    }
    let shape = [header.dim[1], header.dim[2], header.dim[3]];
    if shape.iter().any(|&n| n < 1) {
        return Err(Error::nifti(path, format!("non-positive dimension in {shape:?}")));
    }
    let shape = shape.map(|n| n as usize);
    let count = shape.iter().product::<usize>();

    let elem_size = match header.datatype {
        DT_UINT8 | DT_INT8 => 1,
        DT_INT16 | DT_UINT16 => 2,
        DT_INT32 | DT_UINT32 | DT_FLOAT32 => 4,
        DT_FLOAT64 => 8,
        other => {
            return Err(Error::nifti(path, format!("unsupported datatype code {other}")));
        }
    };
    let offset = header.vox_offset.max(0.0) as usize;
    let offset = if offset < VOX_OFFSET { VOX_OFFSET } else { offset };
    let payload = bytes
        .get(offset..offset + count * elem_size)
        .ok_or_else(|| Error::nifti(path, "truncated voxel data"))?;

    macro_rules! decode {
        ($t:ty, $n:expr) => {
            payload
                .chunks_exact($n)
                .map(|ch| {
                    let b: [u8; $n] = ch.try_into().unwrap();
                    let v = if big_endian {
                        <$t>::from_be_bytes(b)
                    } else {
                        <$t>::from_le_bytes(b)
                    };
                    v as f32
                })
                .collect::<Vec<f32>>()
        };
    }
    let mut values: Vec<f32> = match header.datatype {
        DT_UINT8 => payload.iter().map(|&v| f32::from(v)).collect(),
        DT_INT8 => payload.iter().map(|&v| f32::from(v as i8)).collect(),
        DT_INT16 => decode!(i16, 2),
        DT_UINT16 => decode!(u16, 2),
        DT_INT32 => decode!(i32, 4),
        DT_UINT32 => decode!(u32, 4),
        DT_FLOAT32 => decode!(f32, 4),
        DT_FLOAT64 => decode!(f64, 8),
        _ => unreachable!(),
    };

    let (slope, inter) = (header.scl_slope, header.scl_inter);
    if slope != 0.0 && slope.is_finite() && (slope != 1.0 || inter != 0.0) {
        for v in values.iter_mut() {
            *v = *v * slope + inter;
        }
    }

    // NIfTI stores x fastest, i.e. Fortran order for an (x, y, z) array.
    let data = Array3::from_shape_vec(shape.f(), values)
        .map_err(|e| Error::nifti(path, format!("shape error: {e}")))?;
    let spacing = [1, 2, 3].map(|i| f64::from(header.pixdim[i].abs()));
    if spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
        return Err(Error::nifti(path, format!("invalid voxel spacing {spacing:?}")));
    }
    Ok(RawVolume {
        data,
        spacing,
        affine: header.affine(),
    })
}

/// Header describing `data` with the given geometry.
pub(crate) fn header_for<T: NiftiElement>(
    shape: [usize; 3],
    spacing: [f64; 3],
    affine: Option<&Affine>,
) -> Result<Header> {
    let mut dim = [1i16; 8];
    dim[0] = 3;
    for i in 0..3 {
        dim[i + 1] = i16::try_from(shape[i])
            .map_err(|_| Error::InvalidInput(format!("dimension {} too large for NIfTI-1", shape[i])))?;
    }
    let mut pixdim = [1f32; 8];
    for i in 0..3 {
        pixdim[i + 1] = spacing[i] as f32;
    }
    let mut header = Header {
        dim,
        datatype: T::DATATYPE,
        pixdim,
        vox_offset: VOX_OFFSET as f32,
        scl_slope: 1.0,
        scl_inter: 0.0,
        qform_code: 0,
        sform_code: 0,
        quatern: [0.0; 3],
        qoffset: [0.0; 3],
        srow: [[0.0; 4]; 3],
    };
    if let Some(a) = affine {
        header.set_qform(a);
        header.sform_code = 1;
        for r in 0..3 {
            for k in 0..4 {
                header.srow[r][k] = a.0[r][k] as f32;
            }
        }
    }
    Ok(header)
}

pub(crate) fn encode<T: NiftiElement>(header: &Header, data: ArrayView3<'_, T>) -> Vec<u8> {
    let mut bytes = header.encode(T::BITPIX);
    bytes.reserve(data.len() * (T::BITPIX as usize / 8));
    // Reversed-axis iteration visits x fastest, matching the file order.
    for &v in data.t().iter() {
        v.write_le(&mut bytes);
    }
    bytes
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let result = if is_gzip(path) {
        let mut enc = GzEncoder::new(BufWriter::new(file), Compression::fast());
        enc.write_all(bytes).and_then(|_| enc.finish()?.flush())
    } else {
        let mut w = BufWriter::new(file);
        w.write_all(bytes).and_then(|_| w.flush())
    };
    result.map_err(|e| Error::io(path, e))
}

pub(crate) fn write<T: NiftiElement>(
    path: &Path,
    data: ArrayView3<'_, T>,
    spacing: [f64; 3],
    affine: Option<&Affine>,
) -> Result<()> {
    let (w, h, d) = data.dim();
    let header = header_for::<T>([w, h, d], spacing, affine)?;
    write_bytes(path, &encode(&header, data))
}
