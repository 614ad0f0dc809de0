//! Single-file NIfTI-1 (`.nii`, `.nii.gz`) reading and writing.
//!
//! Only little-endian files with magic `n+1` are accepted. Supported datatypes
//! are uint8, int16, int32 and float32. Orientation fields are carried through
//! untouched.

use std::io::{Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use crate::error::{Error, Result};
use crate::model::{Extents, LabelMask, LabelSchema, Orientation, Spacing, Volume};

pub const HEADER_SIZE: usize = 348;
/// Header plus the four-byte extension flag.
pub const DATA_OFFSET: usize = 352;

pub const MAGIC_SINGLE_FILE: &[u8; 4] = b"n+1\0";
pub const MAGIC_PAIR: &[u8; 4] = b"ni1\0";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataType {
    Uint8,
    Int16,
    Int32,
    Float32,
}

impl DataType {
    pub fn code(self) -> i16 {
        match self {
            DataType::Uint8 => 2,
            DataType::Int16 => 4,
            DataType::Int32 => 8,
            DataType::Float32 => 16,
        }
    }

    pub fn from_code(code: i16) -> Result<Self> {
        Ok(match code {
            2 => DataType::Uint8,
            4 => DataType::Int16,
            8 => DataType::Int32,
            16 => DataType::Float32,
            other => return Err(Error::Unsupported(format!("NIfTI datatype code {other}"))),
        })
    }

    pub fn bytes(self) -> usize {
        match self {
            DataType::Uint8 => 1,
            DataType::Int16 => 2,
            DataType::Int32 | DataType::Float32 => 4,
        }
    }

    pub fn is_integer(self) -> bool {
        !matches!(self, DataType::Float32)
    }
}

/// The subset of NIfTI-1 header fields this crate reads or writes.
#[derive(Debug, Clone, PartialEq)]
pub struct NiftiHeader {
    pub dim: [i16; 8],
    pub datatype: DataType,
    pub pixdim: [f32; 8],
    pub vox_offset: f32,
    pub scl_slope: f32,
    pub scl_inter: f32,
    pub descrip: String,
    pub orientation: Orientation,
}

impl NiftiHeader {
    pub fn new(extents: Extents, spacing: Spacing, datatype: DataType) -> Self {
        let mut dim = [0i16; 8];
        dim[0] = 3;
        dim[1] = extents.cols as i16;
        dim[2] = extents.rows as i16;
        dim[3] = extents.slices as i16;
        for d in dim.iter_mut().skip(4) {
            *d = 1;
        }
        let mut pixdim = [0f32; 8];
        pixdim[0] = 1.0;
        pixdim[1] = spacing.dx as f32;
        pixdim[2] = spacing.dy as f32;
        pixdim[3] = spacing.dz as f32;
        NiftiHeader {
            dim,
            datatype,
            pixdim,
            vox_offset: DATA_OFFSET as f32,
            scl_slope: 1.0,
            scl_inter: 0.0,
            descrip: String::new(),
            orientation: Orientation {
                qfac: 1.0,
                xyzt_units: 2, // millimetres
                ..Orientation::default()
            },
        }
    }

    fn with_orientation(mut self, orientation: Option<&Orientation>) -> Self {
        if let Some(o) = orientation {
            self.orientation = *o;
            self.pixdim[0] = o.qfac;
        }
        self
    }

    pub fn extents(&self) -> Result<Extents> {
        let ndim = self.dim[0];
        if !(1..=7).contains(&ndim) {
            return Err(Error::Format(format!("dim[0]={ndim} outside 1..=7")));
        }
        let mut d = [1usize; 8];
        for i in 1..=ndim as usize {
            if self.dim[i] < 1 {
                return Err(Error::Format(format!("dim[{i}]={} must be positive", self.dim[i])));
            }
            d[i] = self.dim[i] as usize;
        }
        if d[4..].iter().any(|&v| v != 1) {
            return Err(Error::Unsupported(format!(
                "only 3-D images are supported, got dim {:?}",
                &self.dim[..=ndim as usize]
            )));
        }
        Ok(Extents::new(d[3], d[2], d[1]))
    }

    pub fn spacing(&self) -> Result<Spacing> {
        let p = |i: usize| {
            if self.dim[0] as usize >= i {
                self.pixdim[i].abs() as f64
            } else {
                1.0
            }
        };
        Spacing::new(p(1), p(2), p(3)).map_err(|e| Error::Format(format!("pixdim: {e}")))
    }

    pub fn to_bytes(&self) -> [u8; HEADER_SIZE] {
        let mut b = [0u8; HEADER_SIZE];
        put_i32(&mut b, 0, HEADER_SIZE as i32);
        b[38] = b'r';
        for (i, d) in self.dim.iter().enumerate() {
            put_i16(&mut b, 40 + 2 * i, *d);
        }
        put_i16(&mut b, 70, self.datatype.code());
        put_i16(&mut b, 72, (self.datatype.bytes() * 8) as i16);
        let mut pixdim = self.pixdim;
        pixdim[0] = self.orientation.qfac;
        for (i, v) in pixdim.iter().enumerate() {
            put_f32(&mut b, 76 + 4 * i, *v);
        }
        put_f32(&mut b, 108, self.vox_offset);
        put_f32(&mut b, 112, self.scl_slope);
        put_f32(&mut b, 116, self.scl_inter);
        b[123] = self.orientation.xyzt_units;
        let descrip = self.descrip.as_bytes();
        let n = descrip.len().min(79);
        b[148..148 + n].copy_from_slice(&descrip[..n]);
        let o = &self.orientation;
        put_i16(&mut b, 252, o.qform_code);
        put_i16(&mut b, 254, o.sform_code);
        for (i, v) in o.quatern.iter().chain(o.qoffset.iter()).enumerate() {
            put_f32(&mut b, 256 + 4 * i, *v);
        }
        for (i, v) in o.srow_x.iter().chain(o.srow_y.iter()).chain(o.srow_z.iter()).enumerate() {
            put_f32(&mut b, 280 + 4 * i, *v);
        }
        b[344..348].copy_from_slice(MAGIC_SINGLE_FILE);
        b
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self> {
        if b.len() < HEADER_SIZE {
            return Err(Error::Format(format!(
                "file has {} bytes, a NIfTI-1 header needs {HEADER_SIZE}",
                b.len()
            )));
        }
        let sizeof_hdr = i32::from_le_bytes(b[0..4].try_into().unwrap());
        if sizeof_hdr != HEADER_SIZE as i32 {
            if i32::from_be_bytes(b[0..4].try_into().unwrap()) == HEADER_SIZE as i32 {
                return Err(Error::Unsupported("big-endian NIfTI files".into()));
            }
            return Err(Error::Format(format!("sizeof_hdr={sizeof_hdr}, expected 348")));
        }
        let magic = &b[344..348];
        if magic == MAGIC_PAIR {
            return Err(Error::Format(
                "magic \"ni1\" marks a .hdr/.img pair; only single-file \"n+1\" images are supported".into(),
            ));
        }
        if magic != MAGIC_SINGLE_FILE {
            return Err(Error::Format(format!("bad magic bytes {magic:?}, expected \"n+1\"")));
        }
        let mut dim = [0i16; 8];
        for (i, d) in dim.iter_mut().enumerate() {
            *d = get_i16(b, 40 + 2 * i);
        }
        let datatype = DataType::from_code(get_i16(b, 70))?;
        let mut pixdim = [0f32; 8];
        for (i, p) in pixdim.iter_mut().enumerate() {
            *p = get_f32(b, 76 + 4 * i);
        }
        let descrip_raw = &b[148..228];
        let end = descrip_raw.iter().position(|&c| c == 0).unwrap_or(descrip_raw.len());
        let mut quatern = [0f32; 3];
        let mut qoffset = [0f32; 3];
        for i in 0..3 {
            quatern[i] = get_f32(b, 256 + 4 * i);
            qoffset[i] = get_f32(b, 268 + 4 * i);
        }
        let row = |base: usize| {
            let mut r = [0f32; 4];
            for (i, v) in r.iter_mut().enumerate() {
                *v = get_f32(b, base + 4 * i);
            }
            r
        };
        let orientation = Orientation {
            qform_code: get_i16(b, 252),
            sform_code: get_i16(b, 254),
            qfac: pixdim[0],
            quatern,
            qoffset,
            srow_x: row(280),
            srow_y: row(296),
            srow_z: row(312),
            xyzt_units: b[123],
        };
        Ok(NiftiHeader {
            dim,
            datatype,
            pixdim,
            vox_offset: get_f32(b, 108),
            scl_slope: get_f32(b, 112),
            scl_inter: get_f32(b, 116),
            descrip: String::from_utf8_lossy(&descrip_raw[..end]).into_owned(),
            orientation,
        })
    }

    fn data_offset(&self) -> Result<usize> {
        let off = self.vox_offset;
        if !off.is_finite() || off < HEADER_SIZE as f32 {
            return Err(Error::Format(format!("vox_offset {off} lies inside the header")));
        }
        Ok(off as usize)
    }

    fn scaling(&self) -> Option<(f32, f32)> {
        if self.scl_slope == 0.0 || !self.scl_slope.is_finite() {
            None
        } else {
            Some((self.scl_slope, self.scl_inter))
        }
    }
}

fn put_i16(b: &mut [u8], at: usize, v: i16) {
    b[at..at + 2].copy_from_slice(&v.to_le_bytes());
}
fn put_i32(b: &mut [u8], at: usize, v: i32) {
    b[at..at + 4].copy_from_slice(&v.to_le_bytes());
}
fn put_f32(b: &mut [u8], at: usize, v: f32) {
    b[at..at + 4].copy_from_slice(&v.to_le_bytes());
}
fn get_i16(b: &[u8], at: usize) -> i16 {
    i16::from_le_bytes([b[at], b[at + 1]])
}
fn get_f32(b: &[u8], at: usize) -> f32 {
    f32::from_le_bytes(b[at..at + 4].try_into().unwrap())
}

fn is_gz_path(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("gz"))
}

fn read_file_bytes(path: &Path) -> Result<Vec<u8>> {
    let raw = std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    if raw.len() >= 2 && raw[0] == 0x1f && raw[1] == 0x8b {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::Format(format!("{}: gzip stream: {e}", path.display())))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

/// Parsed header plus the raw voxel bytes following it.
struct RawImage {
    header: NiftiHeader,
    extents: Extents,
    bytes: Vec<u8>,
    offset: usize,
}

impl RawImage {
    fn parse(bytes: Vec<u8>) -> Result<Self> {
        let header = NiftiHeader::from_bytes(&bytes)?;
        let extents = header.extents()?;
        let offset = header.data_offset()?;
        let need = offset + extents.len() * header.datatype.bytes();
        if bytes.len() < need {
            return Err(Error::Format(format!(
                "truncated voxel data: {} bytes present, {need} required",
                bytes.len()
            )));
        }
        Ok(RawImage {
            header,
            extents,
            bytes,
            offset,
        })
    }

    fn values(&self) -> impl Iterator<Item = f64> + '_ {
        let dt = self.header.datatype;
        let w = dt.bytes();
        self.bytes[self.offset..self.offset + self.extents.len() * w]
            .chunks_exact(w)
            .map(move |c| match dt {
                DataType::Uint8 => c[0] as f64,
                DataType::Int16 => i16::from_le_bytes([c[0], c[1]]) as f64,
                DataType::Int32 => i32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64,
                DataType::Float32 => f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64,
            })
    }
}

pub fn read_header(path: impl AsRef<Path>) -> Result<NiftiHeader> {
    NiftiHeader::from_bytes(&read_file_bytes(path.as_ref())?)
}

/// Reads a scan, applying `scl_slope`/`scl_inter` when the slope is non-zero.
pub fn read_volume(path: impl AsRef<Path>, case_id: &str) -> Result<Volume> {
    let path = path.as_ref();
    let raw = RawImage::parse(read_file_bytes(path)?)?;
    let spacing = raw.header.spacing()?;
    let scaling = raw.header.scaling();
    let mut data = Vec::with_capacity(raw.extents.len());
    for (i, v) in raw.values().enumerate() {
        let v = match scaling {
            Some((slope, inter)) => v * slope as f64 + inter as f64,
            None => v,
        } as f32;
        if !v.is_finite() {
            return Err(Error::Data(format!("{}: non-finite voxel at flat index {i}", path.display())));
        }
        data.push(v);
    }
    Ok(Volume::new(case_id, raw.extents, spacing, data)?.with_orientation(Some(raw.header.orientation)))
}

/// Reads a label mask stored with an integer datatype and no scaling.
pub fn read_mask(path: impl AsRef<Path>, schema: &LabelSchema) -> Result<LabelMask> {
    let path = path.as_ref();
    let raw = RawImage::parse(read_file_bytes(path)?)?;
    if !raw.header.datatype.is_integer() {
        return Err(Error::Format(format!(
            "{}: masks must use an integer datatype, found {:?}",
            path.display(),
            raw.header.datatype
        )));
    }
    if let Some((slope, inter)) = raw.header.scaling() {
        if slope != 1.0 || inter != 0.0 {
            return Err(Error::Format(format!(
                "{}: masks must not be scaled (scl_slope={slope}, scl_inter={inter})",
                path.display()
            )));
        }
    }
    let spacing = raw.header.spacing()?;
    let mut data = Vec::with_capacity(raw.extents.len());
    for v in raw.values() {
        if !(0.0..=255.0).contains(&v) {
            return Err(Error::Schema(format!("{}: label value {v} outside 0..=255", path.display())));
        }
        data.push(v as u8);
    }
    Ok(LabelMask::new(raw.extents, spacing, data, schema.clone())?.with_orientation(Some(raw.header.orientation)))
}

fn encode(header: &NiftiHeader, payload: &[u8], path: &Path) -> Result<Vec<u8>> {
    let mut bytes = Vec::with_capacity(DATA_OFFSET + payload.len());
    bytes.extend_from_slice(&header.to_bytes());
    bytes.extend_from_slice(&[0u8; 4]);
    bytes.extend_from_slice(payload);
    if is_gz_path(path) {
        let mut enc = GzEncoder::new(Vec::new(), Compression::new(6));
        enc.write_all(&bytes)?;
        Ok(enc.finish()?)
    } else {
        Ok(bytes)
    }
}

fn check_extents(extents: Extents) -> Result<()> {
    for v in [extents.slices, extents.rows, extents.cols] {
        if v > i16::MAX as usize {
            return Err(Error::Unsupported(format!("extent {v} exceeds the NIfTI-1 limit of 32767")));
        }
    }
    Ok(())
}

/// Writes a float32 image; gzip-compressed when the path ends in `.gz`.
pub fn write_volume(volume: &Volume, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    check_extents(volume.extents())?;
    let header = NiftiHeader::new(volume.extents(), volume.spacing(), DataType::Float32)
        .with_orientation(volume.orientation());
    let payload: Vec<u8> = volume.data().iter().flat_map(|v| v.to_le_bytes()).collect();
    crate::fsutil::write_atomic(path, &encode(&header, &payload, path)?)
}

/// Writes a uint8 label image with unit scaling.
pub fn write_mask(mask: &LabelMask, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    check_extents(mask.extents())?;
    let header =
        NiftiHeader::new(mask.extents(), mask.spacing(), DataType::Uint8).with_orientation(mask.orientation());
    crate::fsutil::write_atomic(path, &encode(&header, mask.data(), path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LabelRemap;

    fn sample_volume() -> Volume {
        let e = Extents::new(3, 4, 5);
        let data = (0..e.len()).map(|i| (i as f32) * 0.37 - 11.0).collect();
        Volume::new("v", e, Spacing::new(0.45, 0.5, 5.0).unwrap(), data).unwrap()
    }

    #[test]
    fn volume_round_trip_plain_and_gz() {
        let dir = tempfile::tempdir().unwrap();
        let v = sample_volume();
        for name in ["v.nii", "v.nii.gz"] {
            let p = dir.path().join(name);
            write_volume(&v, &p).unwrap();
            let back = read_volume(&p, "v").unwrap();
            assert_eq!(back.extents(), v.extents());
            assert_eq!(back.spacing().dx, 0.45f32 as f64);
            assert_eq!(back.spacing().dz, 5.0);
            for (a, b) in back.data().iter().zip(v.data()) {
                assert!((a - b).abs() <= 1e-5);
            }
        }
    }

    #[test]
    fn pixdim_maps_to_spacing_axes() {
        let e = Extents::new(2, 2, 2);
        let mut header = NiftiHeader::new(e, Spacing::isotropic(1.0).unwrap(), DataType::Int16);
        header.pixdim[1] = 0.45;
        header.pixdim[2] = 0.45;
        header.pixdim[3] = 1.0;
        let mut bytes = header.to_bytes().to_vec();
        bytes.extend_from_slice(&[0u8; 4]);
        bytes.extend(std::iter::repeat_n(0u8, e.len() * 2));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("h.nii");
        std::fs::write(&p, &bytes).unwrap();
        let v = read_volume(&p, "h").unwrap();
        assert_eq!(v.spacing(), Spacing { dx: 0.45f32 as f64, dy: 0.45f32 as f64, dz: 1.0 });

        // distinct values pin each axis
        header.pixdim[1] = 0.25;
        header.pixdim[2] = 0.5;
        header.pixdim[3] = 4.0;
        let sp = NiftiHeader::from_bytes(&header.to_bytes()).unwrap().spacing().unwrap();
        assert_eq!((sp.dx, sp.dy, sp.dz), (0.25, 0.5, 4.0));
    }

    #[test]
    fn scaling_is_applied() {
        let e = Extents::new(1, 1, 3);
        let mut header = NiftiHeader::new(e, Spacing::isotropic(1.0).unwrap(), DataType::Int16);
        header.scl_slope = 2.0;
        header.scl_inter = -1024.0;
        let mut bytes = header.to_bytes().to_vec();
        bytes.extend_from_slice(&[0u8; 4]);
        for v in [0i16, 10, 600] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.nii");
        std::fs::write(&p, &bytes).unwrap();
        let v = read_volume(&p, "s").unwrap();
        assert_eq!(v.data(), &[-1024.0, -1004.0, 176.0]);
    }

    #[test]
    fn bad_magic_is_format_error() {
        let mut b = NiftiHeader::new(Extents::new(1, 1, 1), Spacing::isotropic(1.0).unwrap(), DataType::Uint8)
            .to_bytes()
            .to_vec();
        b.extend_from_slice(&[0u8; 5]);
        b[344..348].copy_from_slice(b"xyz\0");
        assert!(matches!(NiftiHeader::from_bytes(&b), Err(Error::Format(_))));
        b[344..348].copy_from_slice(MAGIC_PAIR);
        match NiftiHeader::from_bytes(&b) {
            Err(Error::Format(msg)) => assert!(msg.contains("ni1")),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn unsupported_datatype() {
        let mut b = NiftiHeader::new(Extents::new(1, 1, 1), Spacing::isotropic(1.0).unwrap(), DataType::Uint8)
            .to_bytes()
            .to_vec();
        b[70..72].copy_from_slice(&64i16.to_le_bytes());
        assert!(matches!(NiftiHeader::from_bytes(&b), Err(Error::Unsupported(_))));
    }

    #[test]
    fn nan_voxel_is_data_error() {
        let v = Volume::new("n", Extents::new(1, 1, 2), Spacing::isotropic(1.0).unwrap(), vec![1.0, 2.0]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("n.nii");
        write_volume(&v, &p).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        bytes[DATA_OFFSET + 4..DATA_OFFSET + 8].copy_from_slice(&f32::NAN.to_le_bytes());
        std::fs::write(&p, &bytes).unwrap();
        assert!(matches!(read_volume(&p, "n"), Err(Error::Data(_))));
    }

    #[test]
    fn mask_round_trip_is_bit_exact() {
        let e = Extents::new(2, 3, 4);
        let data: Vec<u8> = (0..e.len()).map(|i| (i % 2) as u8).collect();
        let m = LabelMask::new(e, Spacing::new(0.5, 0.5, 5.0).unwrap(), data, LabelSchema::binary("l")).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.nii.gz");
        write_mask(&m, &p).unwrap();
        let back = read_mask(&p, &LabelSchema::binary("l")).unwrap();
        assert_eq!(back.data(), m.data());
        assert_eq!(back.extents(), m.extents());
    }

    #[test]
    fn mask_with_unknown_label_is_schema_error() {
        let e = Extents::new(1, 1, 3);
        let m = LabelMask::new(e, Spacing::isotropic(1.0).unwrap(), vec![0, 3, 1], LabelSchema::aisd()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.nii");
        write_mask(&m, &p).unwrap();
        assert!(matches!(read_mask(&p, &LabelSchema::binary("l")), Err(Error::Schema(_))));
        // reading with the full schema then remapping works
        let back = read_mask(&p, &LabelSchema::aisd()).unwrap();
        let bin = crate::model::remap_labels(&back, &LabelRemap::acute_infarct()).unwrap();
        assert_eq!(bin.data(), &[0, 1, 1]);
    }

    #[test]
    fn float_mask_is_format_error() {
        let v = Volume::new("f", Extents::new(1, 1, 2), Spacing::isotropic(1.0).unwrap(), vec![0.0, 1.0]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.nii");
        write_volume(&v, &p).unwrap();
        assert!(matches!(read_mask(&p, &LabelSchema::binary("l")), Err(Error::Format(_))));
    }

    #[test]
    fn orientation_is_preserved() {
        let o = Orientation {
            qform_code: 1,
            sform_code: 2,
            qfac: -1.0,
            quatern: [0.1, 0.2, 0.3],
            qoffset: [-90.0, 126.0, -72.0],
            srow_x: [0.45, 0.0, 0.0, -90.0],
            srow_y: [0.0, 0.45, 0.0, 126.0],
            srow_z: [0.0, 0.0, 5.0, -72.0],
            xyzt_units: 10,
        };
        let v = sample_volume().with_orientation(Some(o));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("o.nii");
        write_volume(&v, &p).unwrap();
        assert_eq!(read_volume(&p, "o").unwrap().orientation(), Some(&o));
    }
}
