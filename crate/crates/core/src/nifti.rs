//! Minimal single-file NIfTI-1 import.
//!
//! Only the dimensions, datatype, voxel spacing, intensity scaling and voxel
//! payload are read; everything else in the 348-byte header is ignored.
//! The NIfTI x axis varies fastest on disk, so `(z, y, x)` maps directly onto
//! the `(slice, row, col)` C-order layout used by [`Volume`].

use std::fs;
use std::path::Path;

use ndarray::Array3;

use crate::error::{Error, Result};
use crate::volume::{normalize_intensity, Volume, VolumeKind};

const HEADER_SIZE: usize = 348;

const DT_UINT8: i16 = 2;
const DT_INT16: i16 = 4;
const DT_FLOAT32: i16 = 16;

#[derive(Clone, Copy)]
enum Endian {
    Little,
    Big,
}

struct Reader<'a> {
    bytes: &'a [u8],
    endian: Endian,
}

impl Reader<'_> {
    fn i16_at(&self, off: usize) -> i16 {
        let b = [self.bytes[off], self.bytes[off + 1]];
        match self.endian {
            Endian::Little => i16::from_le_bytes(b),
            Endian::Big => i16::from_be_bytes(b),
        }
    }

    fn f32_at(&self, off: usize) -> f32 {
        let b = [
            self.bytes[off],
            self.bytes[off + 1],
            self.bytes[off + 2],
            self.bytes[off + 3],
        ];
        match self.endian {
            Endian::Little => f32::from_le_bytes(b),
            Endian::Big => f32::from_be_bytes(b),
        }
    }
}

pub(crate) fn load_nifti(path: &Path) -> Result<Volume> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_nifti(&bytes, path)
}

fn parse_nifti(bytes: &[u8], path: &Path) -> Result<Volume> {
    if bytes.len() < HEADER_SIZE {
        return Err(Error::format(
            path,
            format!("{} bytes is too small for a NIfTI-1 header", bytes.len()),
        ));
    }
    let endian = match (
        i32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]),
        i32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]),
    ) {
        (348, _) => Endian::Little,
        (_, 348) => Endian::Big,
        _ => return Err(Error::format(path, "sizeof_hdr is not 348")),
    };
    let r = Reader { bytes, endian };

    let ndim = r.i16_at(40);
    if !(1..=7).contains(&ndim) {
        return Err(Error::format(path, format!("dim[0] = {ndim}")));
    }
    let dim = |i: usize| -> usize {
        if i as i16 <= ndim {
            r.i16_at(40 + 2 * i).max(1) as usize
        } else {
            1
        }
    };
    let (nx, ny, nz) = (dim(1), dim(2), dim(3));
    if (4..=ndim as usize).any(|i| dim(i) > 1) {
        return Err(Error::format(path, "only 3D volumes are supported"));
    }
    let datatype = r.i16_at(70);
    let pixdim = |i: usize| -> f64 {
        let v = f64::from(r.f32_at(76 + 4 * i)).abs();
        if v.is_finite() && v > 0.0 {
            v
        } else {
            1.0
        }
    };
    let spacing = [pixdim(3), pixdim(2), pixdim(1)];
    let vox_offset = r.f32_at(108).max(HEADER_SIZE as f32) as usize;
    let slope = r.f32_at(112);
    let inter = r.f32_at(116);
    let (slope, inter) = if slope == 0.0 || !slope.is_finite() {
        (1.0, 0.0)
    } else {
        (f64::from(slope), f64::from(inter))
    };

    let n = nx * ny * nz;
    let width = match datatype {
        DT_UINT8 => 1,
        DT_INT16 => 2,
        DT_FLOAT32 => 4,
        other => {
            return Err(Error::format(
                path,
                format!("unsupported datatype code {other}"),
            ))
        }
    };
    let payload = bytes.get(vox_offset..).unwrap_or_default();
    if payload.len() < n * width {
        return Err(Error::format(
            path,
            format!(
                "payload holds {} bytes but {nx}x{ny}x{nz} voxels need {}",
                payload.len(),
                n * width
            ),
        ));
    }
    let raw: Vec<f64> = match datatype {
        DT_UINT8 => payload[..n].iter().map(|&b| f64::from(b)).collect(),
        DT_INT16 => payload[..2 * n]
            .chunks_exact(2)
            .map(|c| {
                let b = [c[0], c[1]];
                f64::from(match endian {
                    Endian::Little => i16::from_le_bytes(b),
                    Endian::Big => i16::from_be_bytes(b),
                })
            })
            .collect(),
        _ => payload[..4 * n]
            .chunks_exact(4)
            .map(|c| {
                let b = [c[0], c[1], c[2], c[3]];
                f64::from(match endian {
                    Endian::Little => f32::from_le_bytes(b),
                    Endian::Big => f32::from_be_bytes(b),
                })
            })
            .collect(),
    };
    let values: Vec<f32> = raw.iter().map(|&v| (v * slope + inter) as f32).collect();
    let non_finite = values.iter().filter(|v| !v.is_finite()).count();
    if non_finite > 0 {
        return Err(Error::format(
            path,
            format!("{non_finite} non-finite voxel value(s)"),
        ));
    }
    let data = Array3::from_shape_vec((nz, ny, nx), values)
        .map_err(|e| Error::format(path, e.to_string()))?;
    let data = normalize_intensity(data)?;
    let id = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("nifti")
        .to_string();
    Volume::new(data, spacing, id, "nifti", VolumeKind::Intensity)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(dims: [i16; 3], datatype: i16, bitpix: i16, slope: f32, inter: f32) -> Vec<u8> {
        let mut h = vec![0u8; 352];
        h[0..4].copy_from_slice(&348i32.to_le_bytes());
        h[40..42].copy_from_slice(&3i16.to_le_bytes());
        for (i, d) in dims.iter().enumerate() {
            h[42 + 2 * i..44 + 2 * i].copy_from_slice(&d.to_le_bytes());
        }
        h[70..72].copy_from_slice(&datatype.to_le_bytes());
        h[72..74].copy_from_slice(&bitpix.to_le_bytes());
        for (i, p) in [1.0f32, 0.5, 0.75, 2.0].iter().enumerate() {
            h[76 + 4 * i..80 + 4 * i].copy_from_slice(&p.to_le_bytes());
        }
        h[108..112].copy_from_slice(&352f32.to_le_bytes());
        h[112..116].copy_from_slice(&slope.to_le_bytes());
        h[116..120].copy_from_slice(&inter.to_le_bytes());
        h
    }

    #[test]
    fn int16_volume_is_scaled_reordered_and_normalized() {
        let mut bytes = header([4, 3, 2], DT_INT16, 16, 2.0, 1.0);
        for i in 0..24i16 {
            bytes.extend_from_slice(&i.to_le_bytes());
        }
        let v = parse_nifti(&bytes, Path::new("t1.nii")).unwrap();
        assert_eq!(v.shape(), (2, 3, 4));
        assert_eq!(v.spacing(), [2.0, 0.75, 0.5]);
        assert_eq!(v.id(), "t1");
        // x fastest: voxel (x=1, y=2, z=1) is element 1 + 4*(2 + 3*1) = 21
        let expected = 21.0 / 23.0;
        assert!((f64::from(v.data()[[1, 2, 1]]) - expected).abs() < 1e-6);
    }

    #[test]
    fn uint8_in_unit_range_is_left_alone() {
        let mut bytes = header([2, 2, 2], DT_UINT8, 8, 0.0, 0.0);
        bytes.extend_from_slice(&[0, 1, 1, 0, 1, 0, 0, 1]);
        let v = parse_nifti(&bytes, Path::new("m.nii")).unwrap();
        assert_eq!(v.data()[[0, 0, 1]], 1.0);
        assert_eq!(v.data()[[0, 0, 0]], 0.0);
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let mut bytes = header([4, 4, 4], DT_FLOAT32, 32, 1.0, 0.0);
        bytes.extend_from_slice(&[0u8; 10]);
        assert!(matches!(
            parse_nifti(&bytes, Path::new("x.nii")),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn unknown_datatype_is_rejected() {
        let mut bytes = header([2, 2, 2], 64, 64, 1.0, 0.0);
        bytes.extend_from_slice(&[0u8; 64]);
        assert!(parse_nifti(&bytes, Path::new("x.nii")).is_err());
    }
}
