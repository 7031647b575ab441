//! Minimal single-file NIfTI-1 (`.nii`) reader/writer plus the FSL-style
//! `.bval` sidecar.
//!
//! Only little-endian, uncompressed images with datatypes `u8`, `i16`, `f32`
//! and `f64` are supported. Anything else is rejected with an error naming the
//! offending header field; nothing is silently truncated or reinterpreted.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::grid::{BinaryMask, Dims, DwiSeries, Volume3D, VoxelSpacing};

pub const HEADER_SIZE: usize = 348;
/// Header plus the 4-byte extension flag.
pub const MIN_VOX_OFFSET: usize = 352;
pub const MAGIC: &[u8; 4] = b"n+1\0";

/// Voxel storage types this crate reads and writes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Datatype {
    U8,
    I16,
    F32,
    F64,
}

impl Datatype {
    pub fn code(self) -> i16 {
        match self {
            Datatype::U8 => 2,
            Datatype::I16 => 4,
            Datatype::F32 => 16,
            Datatype::F64 => 64,
        }
    }

    pub fn from_code(code: i16) -> Option<Self> {
        match code {
            2 => Some(Datatype::U8),
            4 => Some(Datatype::I16),
            16 => Some(Datatype::F32),
            64 => Some(Datatype::F64),
            _ => None,
        }
    }

    pub fn bytes(self) -> usize {
        match self {
            Datatype::U8 => 1,
            Datatype::I16 => 2,
            Datatype::F32 => 4,
            Datatype::F64 => 8,
        }
    }

    pub fn bitpix(self) -> i16 {
        (self.bytes() * 8) as i16
    }

    fn decode(self, bytes: &[u8]) -> f64 {
        match self {
            Datatype::U8 => bytes[0] as f64,
            Datatype::I16 => i16::from_le_bytes([bytes[0], bytes[1]]) as f64,
            Datatype::F32 => f32::from_le_bytes(bytes.try_into().unwrap()) as f64,
            Datatype::F64 => f64::from_le_bytes(bytes.try_into().unwrap()),
        }
    }

    fn encode(self, value: f64, out: &mut Vec<u8>) {
        match self {
            Datatype::U8 => out.push(value.round().clamp(0.0, 255.0) as u8),
            Datatype::I16 => out.extend_from_slice(
                &(value.round().clamp(i16::MIN as f64, i16::MAX as f64) as i16).to_le_bytes(),
            ),
            Datatype::F32 => out.extend_from_slice(&(value as f32).to_le_bytes()),
            Datatype::F64 => out.extend_from_slice(&value.to_le_bytes()),
        }
    }
}

/// The subset of the NIfTI-1 header this crate interprets.
#[derive(Clone, Debug, PartialEq)]
pub struct NiftiHeader {
    pub dim: [i16; 8],
    pub datatype: Datatype,
    pub pixdim: [f32; 8],
    pub vox_offset: usize,
    pub scl_slope: f32,
    pub scl_inter: f32,
}

impl NiftiHeader {
    /// Header for a 3D (`frames == 1`) or 4D image.
    pub fn new(dims: Dims, spacing: VoxelSpacing, frames: usize, datatype: Datatype) -> Result<Self> {
        if dims.is_empty() || frames == 0 {
            return Err(Error::Argument(format!(
                "cannot write an image with empty dims {dims:?} x {frames} frames"
            )));
        }
        let to_i16 = |n: usize, what: &str| {
            i16::try_from(n)
                .map_err(|_| Error::Argument(format!("{what} extent {n} exceeds NIfTI-1 limit")))
        };
        let mut dim = [1i16; 8];
        dim[0] = if frames > 1 { 4 } else { 3 };
        dim[1] = to_i16(dims.nx, "x")?;
        dim[2] = to_i16(dims.ny, "y")?;
        dim[3] = to_i16(dims.nz, "z")?;
        dim[4] = to_i16(frames, "t")?;
        let mut pixdim = [1.0f32; 8];
        pixdim[1] = spacing.dx as f32;
        pixdim[2] = spacing.dy as f32;
        pixdim[3] = spacing.dz as f32;
        Ok(NiftiHeader {
            dim,
            datatype,
            pixdim,
            vox_offset: MIN_VOX_OFFSET,
            scl_slope: 0.0,
            scl_inter: 0.0,
        })
    }

    pub fn dims(&self) -> Dims {
        Dims {
            nx: self.dim[1] as usize,
            ny: self.dim[2] as usize,
            nz: self.dim[3] as usize,
        }
    }

    pub fn frames(&self) -> usize {
        self.dim[4] as usize
    }

    pub fn spacing(&self) -> VoxelSpacing {
        VoxelSpacing {
            dx: self.pixdim[1] as f64,
            dy: self.pixdim[2] as f64,
            dz: self.pixdim[3] as f64,
        }
    }

    fn voxels(&self) -> usize {
        self.dims().len() * self.frames()
    }

    fn data_bytes(&self) -> usize {
        self.voxels() * self.datatype.bytes()
    }

    /// Parse and validate the first 348 bytes of `bytes`.
    pub fn parse(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |field: &'static str, reason: String| Error::Format {
            path: path.to_path_buf(),
            field,
            reason,
        };
        if bytes.len() < HEADER_SIZE {
            return Err(bad(
                "sizeof_hdr",
                format!("file is {} bytes, shorter than the 348-byte header", bytes.len()),
            ));
        }
        let i16_at = |off: usize| i16::from_le_bytes([bytes[off], bytes[off + 1]]);
        let f32_at = |off: usize| f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());

        let size_le = i32::from_le_bytes(bytes[0..4].try_into().unwrap());
        if size_le != HEADER_SIZE as i32 {
            let size_be = i32::from_be_bytes(bytes[0..4].try_into().unwrap());
            let reason = if size_be == HEADER_SIZE as i32 {
                "big-endian files are not supported".to_string()
            } else {
                format!("expected 348, found {size_le}")
            };
            return Err(bad("sizeof_hdr", reason));
        }
        if &bytes[344..348] != MAGIC {
            return Err(bad(
                "magic",
                format!("expected \"n+1\\0\", found {:?}", &bytes[344..348]),
            ));
        }

        let mut dim = [0i16; 8];
        for (k, d) in dim.iter_mut().enumerate() {
            *d = i16_at(40 + 2 * k);
        }
        let ndim = dim[0];
        if !(1..=7).contains(&ndim) {
            return Err(bad("dim", format!("dim[0] must be in 1..=7, found {ndim}")));
        }
        let ndim = ndim as usize;
        for k in 1..=ndim {
            if dim[k] < 1 {
                return Err(bad("dim", format!("dim[{k}] must be positive, found {}", dim[k])));
            }
        }
        for k in 5..=ndim {
            if dim[k] != 1 {
                return Err(bad(
                    "dim",
                    format!("only up to 4 dimensions are supported, dim[{k}] = {}", dim[k]),
                ));
            }
        }
        for d in dim.iter_mut().skip(ndim + 1) {
            *d = 1;
        }

        let code = i16_at(70);
        let datatype = Datatype::from_code(code).ok_or(Error::UnsupportedDatatype {
            path: path.to_path_buf(),
            code,
        })?;
        let bitpix = i16_at(72);
        if bitpix != datatype.bitpix() {
            return Err(bad(
                "bitpix",
                format!("datatype {code} needs bitpix {}, found {bitpix}", datatype.bitpix()),
            ));
        }

        let mut pixdim = [0f32; 8];
        for (k, p) in pixdim.iter_mut().enumerate() {
            *p = f32_at(76 + 4 * k);
        }
        for k in 1..=3 {
            if k > ndim {
                pixdim[k] = 1.0;
            } else if !(pixdim[k].is_finite() && pixdim[k] > 0.0) {
                return Err(bad(
                    "pixdim",
                    format!("pixdim[{k}] must be positive, found {}", pixdim[k]),
                ));
            }
        }

        let vox_offset = f32_at(108);
        if !(vox_offset.is_finite() && vox_offset >= MIN_VOX_OFFSET as f32 && vox_offset.fract() == 0.0)
        {
            return Err(bad(
                "vox_offset",
                format!("must be an integer >= 352, found {vox_offset}"),
            ));
        }

        Ok(NiftiHeader {
            dim,
            datatype,
            pixdim,
            vox_offset: vox_offset as usize,
            scl_slope: f32_at(112),
            scl_inter: f32_at(116),
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut h = vec![0u8; HEADER_SIZE];
        h[0..4].copy_from_slice(&(HEADER_SIZE as i32).to_le_bytes());
        h[38] = b'r';
        for (k, d) in self.dim.iter().enumerate() {
            h[40 + 2 * k..42 + 2 * k].copy_from_slice(&d.to_le_bytes());
        }
        h[70..72].copy_from_slice(&self.datatype.code().to_le_bytes());
        h[72..74].copy_from_slice(&self.datatype.bitpix().to_le_bytes());
        for (k, p) in self.pixdim.iter().enumerate() {
            h[76 + 4 * k..80 + 4 * k].copy_from_slice(&p.to_le_bytes());
        }
        h[108..112].copy_from_slice(&(self.vox_offset as f32).to_le_bytes());
        h[112..116].copy_from_slice(&self.scl_slope.to_le_bytes());
        h[116..120].copy_from_slice(&self.scl_inter.to_le_bytes());
        // xyzt_units: mm + s
        h[123] = 2 | 8;
        // sform_code = scanner; diagonal affine from pixdim
        h[254..256].copy_from_slice(&1i16.to_le_bytes());
        for (row, axis) in [(280usize, 1usize), (296, 2), (312, 3)] {
            let off = row + 4 * (axis - 1);
            h[off..off + 4].copy_from_slice(&self.pixdim[axis].to_le_bytes());
        }
        h[344..348].copy_from_slice(MAGIC);
        h
    }

    fn scaling(&self) -> Option<(f64, f64)> {
        let (slope, inter) = (self.scl_slope as f64, self.scl_inter as f64);
        if slope == 0.0 || !slope.is_finite() || (slope == 1.0 && inter == 0.0) {
            None
        } else {
            Some((slope, inter))
        }
    }
}

/// A decoded image: its header and one volume per frame.
#[derive(Clone, Debug)]
pub struct NiftiImage {
    pub header: NiftiHeader,
    pub frames: Vec<Volume3D>,
}

pub fn read_image(path: impl AsRef<Path>) -> Result<NiftiImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let header = NiftiHeader::parse(&bytes, path)?;

    let start = header.vox_offset;
    let end = start + header.data_bytes();
    if bytes.len() < end {
        return Err(Error::Format {
            path: path.to_path_buf(),
            field: "dim",
            reason: format!(
                "data section truncated: dims need {} bytes after offset {start}, file has {}",
                header.data_bytes(),
                bytes.len().saturating_sub(start)
            ),
        });
    }

    let dims = header.dims();
    let spacing = header.spacing();
    let width = header.datatype.bytes();
    let scaling = header.scaling();
    let frame_bytes = dims.len() * width;
    let frames = bytes[start..end]
        .chunks_exact(frame_bytes)
        .map(|chunk| {
            let data = chunk
                .chunks_exact(width)
                .map(|b| {
                    let v = header.datatype.decode(b);
                    match scaling {
                        Some((slope, inter)) => v * slope + inter,
                        None => v,
                    }
                })
                .collect();
            Volume3D::new(dims, spacing, data)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(NiftiImage { header, frames })
}

/// Read a single 3D volume. A 4D file with more than one frame is an error.
pub fn read_volume(path: impl AsRef<Path>) -> Result<Volume3D> {
    let path = path.as_ref();
    let mut image = read_image(path)?;
    if image.frames.len() != 1 {
        return Err(Error::Dimension(format!(
            "{}: expected a 3D volume, found {} frames",
            path.display(),
            image.frames.len()
        )));
    }
    Ok(image.frames.remove(0))
}

/// Read a mask; any non-zero voxel is foreground.
pub fn read_mask(path: impl AsRef<Path>) -> Result<BinaryMask> {
    Ok(BinaryMask::from_volume(&read_volume(path)?))
}

/// Read a 4D series and its b-values. The frame count must equal the number of b-values.
pub fn read_series(nii: impl AsRef<Path>, bval: impl AsRef<Path>) -> Result<DwiSeries> {
    let nii = nii.as_ref();
    let bvals = read_bvals(bval)?;
    let image = read_image(nii)?;
    if image.frames.len() != bvals.len() {
        return Err(Error::Dimension(format!(
            "{}: {} frames but {} b-values in the sidecar",
            nii.display(),
            image.frames.len(),
            bvals.len()
        )));
    }
    DwiSeries::new(image.frames, bvals.into_values())
}

/// `.bval` sidecar next to a `.nii` file (same basename).
pub fn bval_path_for(nii: impl AsRef<Path>) -> PathBuf {
    nii.as_ref().with_extension("bval")
}

fn write_frames(frames: &[&Volume3D], path: &Path, datatype: Datatype) -> Result<()> {
    let first = frames
        .first()
        .ok_or_else(|| Error::Argument("no frames to write".into()))?;
    let header = NiftiHeader::new(first.dims(), first.spacing(), frames.len(), datatype)?;
    for f in &frames[1..] {
        first.grid().ensure_matches(&f.grid(), "frame")?;
    }
    let mut out = header.to_bytes();
    out.resize(header.vox_offset, 0);
    out.reserve(header.data_bytes());
    for frame in frames {
        for &v in frame.data() {
            datatype.encode(v, &mut out);
        }
    }
    write_atomic(path, &out)
}

/// Write `volume` as 32-bit float.
pub fn write_volume(volume: &Volume3D, path: impl AsRef<Path>) -> Result<()> {
    write_frames(&[volume], path.as_ref(), Datatype::F32)
}

pub fn write_volume_as(volume: &Volume3D, path: impl AsRef<Path>, datatype: Datatype) -> Result<()> {
    write_frames(&[volume], path.as_ref(), datatype)
}

/// Write `mask` as unsigned 8-bit {0, 1}.
pub fn write_mask(mask: &BinaryMask, path: impl AsRef<Path>) -> Result<()> {
    write_frames(&[&mask.to_volume()], path.as_ref(), Datatype::U8)
}

/// Write a 4D float series and its `.bval` sidecar.
pub fn write_series(series: &DwiSeries, path: impl AsRef<Path>) -> Result<()> {
    write_series_as(series, path, Datatype::F32)
}

pub fn write_series_as(series: &DwiSeries, path: impl AsRef<Path>, datatype: Datatype) -> Result<()> {
    let path = path.as_ref();
    let frames: Vec<&Volume3D> = series.frames().iter().collect();
    write_frames(&frames, path, datatype)?;
    write_bvals(series.bvalues(), bval_path_for(path))
}

/// b-values, one per 4D frame, in file order.
#[derive(Clone, Debug, PartialEq)]
pub struct BvalTable(Vec<f64>);

impl BvalTable {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_values(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub fn parse_bvals(text: &str, path: &Path) -> Result<BvalTable> {
    text.split_whitespace()
        .enumerate()
        .map(|(position, token)| {
            let err = |reason: &str| Error::Parse {
                path: path.to_path_buf(),
                position,
                token: token.to_string(),
                reason: reason.to_string(),
            };
            let v: f64 = token.parse().map_err(|_| err("not a number"))?;
            if !v.is_finite() {
                Err(err("not finite"))
            } else if v < 0.0 {
                Err(err("b-values must be non-negative"))
            } else {
                Ok(v)
            }
        })
        .collect::<Result<Vec<_>>>()
        .map(BvalTable)
}

pub fn read_bvals(path: impl AsRef<Path>) -> Result<BvalTable> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_bvals(&text, path)
}

pub fn write_bvals(bvalues: &[f64], path: impl AsRef<Path>) -> Result<()> {
    let line = bvalues
        .iter()
        .map(|b| b.to_string())
        .collect::<Vec<_>>()
        .join(" ");
    write_atomic(path.as_ref(), format!("{line}\n").as_bytes())
}

/// Write to a sibling temporary file, then rename over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::Argument(format!("{} is not a file path", path.display())))?;
    let tmp = path.with_file_name(format!(
        ".{}.{}.tmp",
        name.to_string_lossy(),
        std::process::id()
    ));
    let result = (|| {
        let mut file = fs::File::create(&tmp)?;
        file.write_all(bytes)?;
        file.sync_all()?;
        fs::rename(&tmp, path)
    })();
    result.map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_volume() -> Volume3D {
        let dims = Dims::new(2, 3, 4).unwrap();
        let data = (0..dims.len()).map(|i| i as f64 * 0.25 - 1.0).collect();
        Volume3D::new(dims, VoxelSpacing::new(7.2, 2.07, 2.07).unwrap(), data).unwrap()
    }

    fn header_bytes(volume: &Volume3D, datatype: Datatype) -> Vec<u8> {
        NiftiHeader::new(volume.dims(), volume.spacing(), 1, datatype)
            .unwrap()
            .to_bytes()
    }

    #[test]
    fn header_is_348_bytes_with_magic() {
        let bytes = header_bytes(&small_volume(), Datatype::F32);
        assert_eq!(bytes.len(), 348);
        assert_eq!(&bytes[344..], MAGIC);
        let h = NiftiHeader::parse(&bytes, Path::new("x")).unwrap();
        assert_eq!(h.dims(), small_volume().dims());
    }

    #[test]
    fn wrong_header_size_rejected() {
        let mut bytes = header_bytes(&small_volume(), Datatype::F32);
        bytes[0..4].copy_from_slice(&340i32.to_le_bytes());
        match NiftiHeader::parse(&bytes, Path::new("x")) {
            Err(Error::Format { field, .. }) => assert_eq!(field, "sizeof_hdr"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn big_endian_rejected() {
        let mut bytes = header_bytes(&small_volume(), Datatype::F32);
        bytes[0..4].copy_from_slice(&348i32.to_be_bytes());
        let err = NiftiHeader::parse(&bytes, Path::new("x")).unwrap_err();
        assert!(err.to_string().contains("big-endian"), "{err}");
    }

    #[test]
    fn unsupported_datatype_rejected() {
        let mut bytes = header_bytes(&small_volume(), Datatype::F32);
        bytes[70..72].copy_from_slice(&512i16.to_le_bytes());
        assert!(matches!(
            NiftiHeader::parse(&bytes, Path::new("x")),
            Err(Error::UnsupportedDatatype { code: 512, .. })
        ));
    }

    #[test]
    fn int16_scaling_applied() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scaled.nii");
        let dims = Dims::new(1, 1, 1).unwrap();
        let mut header = NiftiHeader::new(dims, VoxelSpacing::unit(), 1, Datatype::I16).unwrap();
        header.scl_slope = 2.0;
        header.scl_inter = 1.0;
        let mut bytes = header.to_bytes();
        bytes.resize(MIN_VOX_OFFSET, 0);
        bytes.extend_from_slice(&3i16.to_le_bytes());
        fs::write(&path, bytes).unwrap();
        let v = read_volume(&path).unwrap();
        assert_eq!(v.data(), &[7.0]);
    }

    #[test]
    fn mask_written_as_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mask.nii");
        let dims = Dims::new(3, 3, 3).unwrap();
        let mask = BinaryMask::from_fn(dims, VoxelSpacing::unit(), |z, y, x| {
            [(1, 1, 1), (1, 0, 1), (1, 2, 1), (1, 1, 0), (1, 1, 2)].contains(&(z, y, x))
        });
        assert_eq!(mask.count(), 5);
        write_mask(&mask, &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        let h = NiftiHeader::parse(&bytes, &path).unwrap();
        assert_eq!(h.datatype, Datatype::U8);
        let sum: u32 = bytes[h.vox_offset..].iter().map(|&b| b as u32).sum();
        assert_eq!(sum, 5);
        assert_eq!(read_mask(&path).unwrap(), mask);
    }

    #[test]
    fn empty_dims_rejected_before_write() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.nii");
        let dims = Dims { nz: 0, ny: 4, nx: 4 };
        let v = Volume3D::new(dims, VoxelSpacing::unit(), vec![]).unwrap();
        assert!(matches!(write_volume(&v, &path), Err(Error::Argument(_))));
        assert!(!path.exists());
    }

    #[test]
    fn pixdim_round_trips_within_f32() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.nii");
        let v = small_volume();
        write_volume(&v, &path).unwrap();
        let back = read_volume(&path).unwrap();
        let (a, b) = (v.spacing(), back.spacing());
        assert_eq!(b.dz, 7.2f32 as f64);
        assert!((a.dy - b.dy).abs() < 1e-6 && (a.dx - b.dx).abs() < 1e-6);
        assert_eq!(back.data(), v.data());
    }

    #[test]
    fn truncated_data_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.nii");
        write_volume(&small_volume(), &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 1]).unwrap();
        assert!(matches!(read_volume(&path), Err(Error::Format { field: "dim", .. })));
    }

    #[test]
    fn bvals_parse() {
        let p = Path::new("b.bval");
        assert_eq!(
            parse_bvals("0 100 200 400 600", p).unwrap().values(),
            &[0.0, 100.0, 200.0, 400.0, 600.0]
        );
        assert_eq!(parse_bvals("0\n0\n100", p).unwrap().values(), &[0.0, 0.0, 100.0]);
        match parse_bvals("0 -50", p) {
            Err(Error::Parse { position, .. }) => assert_eq!(position, 1),
            other => panic!("unexpected {other:?}"),
        }
        assert!(parse_bvals("0 abc", p).is_err());
    }

    #[test]
    fn series_round_trip_with_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dwi.nii");
        let v = small_volume();
        let series = DwiSeries::new(vec![v.clone(), v], vec![0.0, 600.0]).unwrap();
        write_series(&series, &path).unwrap();
        let back = read_series(&path, bval_path_for(&path)).unwrap();
        assert_eq!(back.bvalues(), series.bvalues());
        assert_eq!(back.frames()[1].data(), series.frames()[1].data());
    }
}
