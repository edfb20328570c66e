//! Single-file NIfTI-1 reader and writer (int16 and float32, 3-d only).
//!
//! Files ending in `.gz` are gzip-compressed. Both byte orders are read;
//! files are always written little-endian as float32 with magic `n+1`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use petct_core::volume::{Volume3D, VolumeError, VolumeKind};
use thiserror::Error;

pub const HEADER_LEN: usize = 348;
/// Header plus the 4-byte extension flag.
pub const SINGLE_FILE_OFFSET: usize = 352;

#[derive(Debug, Error)]
pub enum NiftiError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("unsupported datatype code {0}")]
    UnsupportedDatatype(i16),
    #[error("expected 3 dimensions, header has dim[0] = {0}")]
    DimensionMismatch(i16),
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Datatype {
    Int16,
    Float32,
}

impl Datatype {
    pub fn code(self) -> i16 {
        match self {
            Datatype::Int16 => 4,
            Datatype::Float32 => 16,
        }
    }

    fn bytes(self) -> usize {
        match self {
            Datatype::Int16 => 2,
            Datatype::Float32 => 4,
        }
    }

    fn from_code(c: i16) -> Result<Self, NiftiError> {
        match c {
            4 => Ok(Datatype::Int16),
            16 => Ok(Datatype::Float32),
            other => Err(NiftiError::UnsupportedDatatype(other)),
        }
    }
}

/// Voxel payload in its on-disk type.
#[derive(Clone, Debug, PartialEq)]
pub enum NiftiData {
    Int16(Vec<i16>),
    Float32(Vec<f32>),
}

/// The header fields this reader honors.
#[derive(Clone, Debug, PartialEq)]
pub struct NiftiHeader {
    pub dim0: i16,
    pub dims: [usize; 3],
    pub spacing: [f32; 3],
    pub datatype: Datatype,
    pub vox_offset: usize,
    pub scl_slope: f32,
    pub scl_inter: f32,
    pub origin: [f32; 3],
    pub magic: [u8; 4],
}

impl NiftiHeader {
    pub fn for_volume(vol: &Volume3D, datatype: Datatype) -> Self {
        Self {
            dim0: 3,
            dims: vol.dims(),
            spacing: vol.spacing(),
            datatype,
            vox_offset: SINGLE_FILE_OFFSET,
            scl_slope: 1.0,
            scl_inter: 0.0,
            origin: vol.origin(),
            magic: *b"n+1\0",
        }
    }

    /// Little-endian 348-byte header. The affine is written as a pure
    /// scaling plus translation in both qform and sform.
    pub fn encode(&self) -> [u8; HEADER_LEN] {
        let mut h = [0u8; HEADER_LEN];
        let mut put = |off: usize, bytes: &[u8]| h[off..off + bytes.len()].copy_from_slice(bytes);
        put(0, &348i32.to_le_bytes());
        put(38, b"r");
        let mut dim = [1i16; 8];
        dim[0] = self.dim0;
        for a in 0..3 {
            dim[a + 1] = self.dims[a] as i16;
        }
        for (i, d) in dim.iter().enumerate() {
            put(40 + 2 * i, &d.to_le_bytes());
        }
        put(70, &self.datatype.code().to_le_bytes());
        put(72, &((self.datatype.bytes() * 8) as i16).to_le_bytes());
        let mut pixdim = [1.0f32; 8];
        pixdim[1..4].copy_from_slice(&self.spacing);
        for (i, p) in pixdim.iter().enumerate() {
            put(76 + 4 * i, &p.to_le_bytes());
        }
        put(108, &(self.vox_offset as f32).to_le_bytes());
        put(112, &self.scl_slope.to_le_bytes());
        put(116, &self.scl_inter.to_le_bytes());
        // mm, seconds
        put(123, &[2 | 8]);
        put(252, &1i16.to_le_bytes());
        put(254, &1i16.to_le_bytes());
        for a in 0..3 {
            put(268 + 4 * a, &self.origin[a].to_le_bytes());
            let mut row = [0.0f32; 4];
            row[a] = self.spacing[a];
            row[3] = self.origin[a];
            for (j, v) in row.iter().enumerate() {
                put(280 + 16 * a + 4 * j, &v.to_le_bytes());
            }
        }
        put(344, &self.magic);
        h
    }

    pub fn decode(h: &[u8]) -> Result<(Self, bool), NiftiError> {
        if h.len() < HEADER_LEN {
            return Err(NiftiError::MalformedHeader(format!(
                "{} header bytes, need {HEADER_LEN}",
                h.len()
            )));
        }
        let big = match (
            i32::from_le_bytes(h[0..4].try_into().unwrap()),
            i32::from_be_bytes(h[0..4].try_into().unwrap()),
        ) {
            (348, _) => false,
            (_, 348) => true,
            (v, _) => return Err(NiftiError::MalformedHeader(format!("sizeof_hdr {v}"))),
        };
        let magic: [u8; 4] = h[344..348].try_into().unwrap();
        if &magic != b"n+1\0" && &magic != b"ni1\0" {
            return Err(NiftiError::MalformedHeader(format!(
                "magic {:?}",
                String::from_utf8_lossy(&magic[..3])
            )));
        }
        let i16_at = |o: usize| {
            let b = [h[o], h[o + 1]];
            if big {
                i16::from_be_bytes(b)
            } else {
                i16::from_le_bytes(b)
            }
        };
        let f32_at = |o: usize| {
            let b: [u8; 4] = h[o..o + 4].try_into().unwrap();
            if big {
                f32::from_be_bytes(b)
            } else {
                f32::from_le_bytes(b)
            }
        };
        let dim0 = i16_at(40);
        if dim0 != 3 {
            return Err(NiftiError::DimensionMismatch(dim0));
        }
        let mut dims = [0usize; 3];
        for a in 0..3 {
            let d = i16_at(42 + 2 * a);
            if d <= 0 {
                return Err(NiftiError::MalformedHeader(format!("dim[{}] = {d}", a + 1)));
            }
            dims[a] = d as usize;
        }
        let datatype = Datatype::from_code(i16_at(70))?;
        let spacing = [f32_at(80), f32_at(84), f32_at(88)];
        let vox = f32_at(108);
        if !(vox >= 0.0) || vox.fract() != 0.0 {
            return Err(NiftiError::MalformedHeader(format!("vox_offset {vox}")));
        }
        let origin = if i16_at(254) > 0 {
            [f32_at(292), f32_at(308), f32_at(324)]
        } else {
            [f32_at(268), f32_at(272), f32_at(276)]
        };
        let header = Self {
            dim0,
            dims,
            spacing,
            datatype,
            vox_offset: vox as usize,
            scl_slope: f32_at(112),
            scl_inter: f32_at(116),
            origin,
            magic,
        };
        Ok((header, big))
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> NiftiError + '_ {
    move |source| NiftiError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn is_gz(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "gz")
}

fn read_all(path: &Path) -> Result<Vec<u8>, NiftiError> {
    let f = File::open(path).map_err(io_err(path))?;
    let mut buf = Vec::new();
    if is_gz(path) {
        GzDecoder::new(BufReader::new(f)).read_to_end(&mut buf)
    } else {
        BufReader::new(f).read_to_end(&mut buf)
    }
    .map_err(io_err(path))?;
    Ok(buf)
}

/// Reads a volume and tags it with `kind`. Values are scaled by
/// `scl_slope`/`scl_inter` when the slope is non-zero.
pub fn read_nifti(path: &Path, kind: VolumeKind) -> Result<Volume3D, NiftiError> {
    let bytes = read_all(path)?;
    let (h, big) = NiftiHeader::decode(&bytes)?;
    let n: usize = h.dims.iter().product();
    let start = h.vox_offset.max(HEADER_LEN);
    let need = start + n * h.datatype.bytes();
    if bytes.len() < need {
        return Err(NiftiError::MalformedHeader(format!(
            "payload truncated: {} bytes, need {need}",
            bytes.len()
        )));
    }
    let payload = &bytes[start..need];
    let raw: Vec<f32> = match h.datatype {
        Datatype::Int16 => payload
            .chunks_exact(2)
            .map(|c| {
                let b = [c[0], c[1]];
                (if big {
                    i16::from_be_bytes(b)
                } else {
                    i16::from_le_bytes(b)
                }) as f32
            })
            .collect(),
        Datatype::Float32 => payload
            .chunks_exact(4)
            .map(|c| {
                let b: [u8; 4] = c.try_into().unwrap();
                if big {
                    f32::from_be_bytes(b)
                } else {
                    f32::from_le_bytes(b)
                }
            })
            .collect(),
    };
    let data = if h.scl_slope != 0.0 && h.scl_slope.is_finite() && !(h.scl_slope == 1.0 && h.scl_inter == 0.0) {
        raw.into_iter().map(|v| h.scl_slope * v + h.scl_inter).collect()
    } else {
        raw
    };
    Ok(Volume3D::new(h.dims, h.spacing, h.origin, kind, data)?)
}

/// Writes `header` followed by `data`, gzip-compressed for `.gz` paths.
pub fn write_nifti_data(path: &Path, header: &NiftiHeader, data: &NiftiData) -> Result<(), NiftiError> {
    let mut bytes = Vec::with_capacity(SINGLE_FILE_OFFSET + 4 * header.dims.iter().product::<usize>());
    bytes.extend_from_slice(&header.encode());
    bytes.resize(header.vox_offset.max(HEADER_LEN), 0);
    match data {
        NiftiData::Int16(v) => v.iter().for_each(|x| bytes.extend_from_slice(&x.to_le_bytes())),
        NiftiData::Float32(v) => v.iter().for_each(|x| bytes.extend_from_slice(&x.to_le_bytes())),
    }
    let f = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(f);
    if is_gz(path) {
        let mut gz = GzEncoder::new(w, Compression::fast());
        gz.write_all(&bytes).map_err(io_err(path))?;
        w = gz.finish().map_err(io_err(path))?;
    } else {
        w.write_all(&bytes).map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Writes `vol` as float32.
pub fn write_nifti(vol: &Volume3D, path: &Path) -> Result<(), NiftiError> {
    let header = NiftiHeader::for_volume(vol, Datatype::Float32);
    write_nifti_data(path, &header, &NiftiData::Float32(vol.data().to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn zeros_round_trip() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("z.nii");
        let v = Volume3D::filled([4, 4, 4], VolumeKind::CtHu, 0.0).unwrap();
        write_nifti(&v, &p).unwrap();
        let r = read_nifti(&p, VolumeKind::CtHu).unwrap();
        assert_eq!(r.dims(), [4, 4, 4]);
        assert!(r.data().iter().all(|&x| x == 0.0));
        assert_eq!(std::fs::metadata(&p).unwrap().len(), 352 + 256);
    }

    #[test]
    fn int16_scaling() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("s.nii.gz");
        let v = Volume3D::filled([2, 1, 1], VolumeKind::CtHu, 0.0).unwrap();
        let mut h = NiftiHeader::for_volume(&v, Datatype::Int16);
        h.scl_slope = 2.0;
        h.scl_inter = 1.0;
        write_nifti_data(&p, &h, &NiftiData::Int16(vec![5, -3])).unwrap();
        let r = read_nifti(&p, VolumeKind::CtHu).unwrap();
        assert_eq!(r.data(), &[11.0, -5.0]);
    }

    #[test]
    fn zero_slope_means_unscaled() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("u.nii");
        let v = Volume3D::filled([1, 1, 1], VolumeKind::CtHu, 0.0).unwrap();
        let mut h = NiftiHeader::for_volume(&v, Datatype::Int16);
        h.scl_slope = 0.0;
        h.scl_inter = 7.0;
        write_nifti_data(&p, &h, &NiftiData::Int16(vec![9])).unwrap();
        assert_eq!(read_nifti(&p, VolumeKind::CtHu).unwrap().data(), &[9.0]);
    }

    #[test]
    fn bad_magic_and_dims() {
        let dir = tempdir().unwrap();
        let v = Volume3D::filled([2, 2, 2], VolumeKind::CtHu, 1.0).unwrap();
        let p = dir.path().join("m.nii");
        let mut h = NiftiHeader::for_volume(&v, Datatype::Float32);
        h.magic = *b"xxx\0";
        write_nifti_data(&p, &h, &NiftiData::Float32(vec![0.0; 8])).unwrap();
        assert!(matches!(
            read_nifti(&p, VolumeKind::CtHu),
            Err(NiftiError::MalformedHeader(_))
        ));

        let mut h = NiftiHeader::for_volume(&v, Datatype::Float32);
        h.dim0 = 4;
        write_nifti_data(&p, &h, &NiftiData::Float32(vec![0.0; 8])).unwrap();
        assert!(matches!(
            read_nifti(&p, VolumeKind::CtHu),
            Err(NiftiError::DimensionMismatch(4))
        ));
    }

    #[test]
    fn unsupported_datatype_and_truncation() {
        let dir = tempdir().unwrap();
        let v = Volume3D::filled([2, 2, 2], VolumeKind::CtHu, 1.0).unwrap();
        let p = dir.path().join("t.nii");
        write_nifti(&v, &p).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        bytes[70..72].copy_from_slice(&64i16.to_le_bytes());
        std::fs::write(&p, &bytes).unwrap();
        assert!(matches!(
            read_nifti(&p, VolumeKind::CtHu),
            Err(NiftiError::UnsupportedDatatype(64))
        ));
        bytes[70..72].copy_from_slice(&16i16.to_le_bytes());
        bytes.truncate(360);
        std::fs::write(&p, &bytes).unwrap();
        assert!(matches!(
            read_nifti(&p, VolumeKind::CtHu),
            Err(NiftiError::MalformedHeader(_))
        ));
    }

    #[test]
    fn big_endian_is_read() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("be.nii");
        let mut h = vec![0u8; 352];
        h[0..4].copy_from_slice(&348i32.to_be_bytes());
        for (i, d) in [3i16, 2, 1, 1, 1, 1, 1, 1].iter().enumerate() {
            h[40 + 2 * i..42 + 2 * i].copy_from_slice(&d.to_be_bytes());
        }
        h[70..72].copy_from_slice(&16i16.to_be_bytes());
        for i in 0..8 {
            h[76 + 4 * i..80 + 4 * i].copy_from_slice(&1.5f32.to_be_bytes());
        }
        h[108..112].copy_from_slice(&352f32.to_be_bytes());
        h[344..348].copy_from_slice(b"n+1\0");
        h.extend_from_slice(&2.5f32.to_be_bytes());
        h.extend_from_slice(&(-1.0f32).to_be_bytes());
        std::fs::write(&p, &h).unwrap();
        let r = read_nifti(&p, VolumeKind::PetSuv).unwrap();
        assert_eq!(r.data(), &[2.5, -1.0]);
        assert_eq!(r.spacing(), [1.5; 3]);
    }

    #[test]
    fn label_round_trip_and_invariants() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("l.nii.gz");
        let l = Volume3D::from_data([3, 1, 1], VolumeKind::Label, vec![0.0, 1.0, 1.0]).unwrap();
        write_nifti(&l, &p).unwrap();
        assert_eq!(read_nifti(&p, VolumeKind::Label).unwrap(), l);
        let c = Volume3D::from_data([3, 1, 1], VolumeKind::CtHu, vec![0.0, 0.5, 1.0]).unwrap();
        write_nifti(&c, &p).unwrap();
        assert!(matches!(
            read_nifti(&p, VolumeKind::Label),
            Err(NiftiError::Volume(VolumeError::NonBinaryLabel(_)))
        ));
    }

    #[test]
    fn unwritable_path_is_io_error() {
        let v = Volume3D::filled([1, 1, 1], VolumeKind::CtHu, 0.0).unwrap();
        let err = write_nifti(&v, Path::new("/nonexistent-dir/x.nii")).unwrap_err();
        assert!(matches!(err, NiftiError::Io { .. }));
    }
}
