//! Volumes, scan collections and their on-disk formats.
//!
//! The native format is a pair of files: `<name>.vol` holding raw
//! little-endian `f32` voxels in C order (slice-major), and a
//! `<name>.vol.hdr` JSON sidecar describing shape, spacing, id, domain and
//! kind. Single-file NIfTI-1 images can be imported as intensity volumes.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// What the voxels of a volume mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VolumeKind {
    Intensity,
    Mask,
    Probability,
}

impl fmt::Display for VolumeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            VolumeKind::Intensity => "intensity",
            VolumeKind::Mask => "mask",
            VolumeKind::Probability => "probability",
        };
        f.write_str(s)
    }
}

/// A 3D scalar grid indexed `(slice, row, col)`.
///
/// Immutable after construction. Intensity and probability volumes hold
/// values in `[0, 1]`; masks hold only `0.0` and `1.0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    data: Array3<f32>,
    spacing: [f64; 3],
    id: String,
    domain: String,
    kind: VolumeKind,
}

impl Volume {
    /// Builds a volume, checking every invariant of its kind.
    pub fn new(
        data: Array3<f32>,
        spacing: [f64; 3],
        id: impl Into<String>,
        domain: impl Into<String>,
        kind: VolumeKind,
    ) -> Result<Self> {
        let v = Self::new_unchecked(data, spacing, id, domain, kind);
        v.validate()?;
        Ok(v)
    }

    /// Builds a volume without validation. [`Volume::validate`] and
    /// [`save_volume`] still reject it if it breaks an invariant.
    pub fn new_unchecked(
        data: Array3<f32>,
        spacing: [f64; 3],
        id: impl Into<String>,
        domain: impl Into<String>,
        kind: VolumeKind,
    ) -> Self {
        Self {
            data: data.as_standard_layout().into_owned(),
            spacing,
            id: id.into(),
            domain: domain.into(),
            kind,
        }
    }

    /// Builds an intensity volume from arbitrary finite data, min-max
    /// normalizing it when it falls outside `[0, 1]`.
    pub fn from_raw_intensity(
        data: Array3<f32>,
        spacing: [f64; 3],
        id: impl Into<String>,
        domain: impl Into<String>,
    ) -> Result<Self> {
        let data = normalize_intensity(data)?;
        Self::new(data, spacing, id, domain, VolumeKind::Intensity)
    }

    /// Stacks 2D planes (all the same shape) into a volume of the given kind.
    /// Values are rounded to `f32`.
    pub fn from_planes(
        planes: &[Array2<f64>],
        spacing: [f64; 3],
        id: impl Into<String>,
        domain: impl Into<String>,
        kind: VolumeKind,
    ) -> Result<Self> {
        let first = planes
            .first()
            .ok_or_else(|| Error::Empty("no planes to stack".into()))?;
        let (h, w) = first.dim();
        let mut data = Array3::<f32>::zeros((planes.len(), h, w));
        for (i, p) in planes.iter().enumerate() {
            if p.dim() != (h, w) {
                return Err(Error::shapes(&[h, w], p.shape()));
            }
            data.index_axis_mut(Axis(0), i)
                .zip_mut_with(p, |d, &s| *d = s as f32);
        }
        Self::new(data, spacing, id, domain, kind)
    }

    pub fn validate(&self) -> Result<()> {
        let (s, h, w) = self.data.dim();
        if s == 0 || h == 0 || w == 0 {
            return Err(Error::Invariant(format!(
                "volume '{}' has an empty dimension ({s}x{h}x{w})",
                self.id
            )));
        }
        if let Some(bad) = self.spacing.iter().find(|x| !(x.is_finite() && **x > 0.0)) {
            return Err(Error::Invariant(format!(
                "volume '{}' has non-positive spacing {bad}",
                self.id
            )));
        }
        let non_finite = self.data.iter().filter(|x| !x.is_finite()).count();
        if non_finite > 0 {
            return Err(Error::NonFinite(non_finite));
        }
        match self.kind {
            VolumeKind::Intensity | VolumeKind::Probability => {
                let outside = self
                    .data
                    .iter()
                    .filter(|&&x| !(0.0..=1.0).contains(&x))
                    .count();
                if outside > 0 {
                    return Err(Error::Invariant(format!(
                        "{} volume '{}' has {outside} value(s) outside [0, 1]",
                        self.kind, self.id
                    )));
                }
            }
            VolumeKind::Mask => {
                let bad = self.data.iter().filter(|&&x| x != 0.0 && x != 1.0).count();
                if bad > 0 {
                    return Err(Error::Invariant(format!(
                        "mask '{}' has {bad} non-binary value(s)",
                        self.id
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn data(&self) -> &Array3<f32> {
        &self.data
    }

    /// `(slices, rows, cols)`.
    pub fn shape(&self) -> (usize, usize, usize) {
        self.data.dim()
    }

    pub fn n_slices(&self) -> usize {
        self.data.dim().0
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn domain(&self) -> &str {
        &self.domain
    }

    pub fn kind(&self) -> VolumeKind {
        self.kind
    }

    pub fn slice_view(&self, index: usize) -> ArrayView2<'_, f32> {
        self.data.index_axis(Axis(0), index)
    }

    /// Slice `index` widened to `f64`.
    pub fn slice(&self, index: usize) -> Array2<f64> {
        self.slice_view(index).mapv(f64::from)
    }

    /// Iterates over all slices as `f64` planes, in slice order.
    pub fn planes(&self) -> impl Iterator<Item = Array2<f64>> + '_ {
        self.data.outer_iter().map(|p| p.mapv(f64::from))
    }

    /// Thresholds a probability volume into a mask (`p >= threshold`).
    pub fn binarize(&self, threshold: f64) -> Result<Volume> {
        if self.kind != VolumeKind::Probability {
            return Err(Error::InvalidParam(format!(
                "cannot binarize a {} volume",
                self.kind
            )));
        }
        let data = self
            .data
            .mapv(|p| if f64::from(p) >= threshold { 1.0 } else { 0.0 });
        Volume::new(data, self.spacing, self.id.clone(), self.domain.clone(), VolumeKind::Mask)
    }

    /// Same voxels and metadata under a different id.
    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }
}

/// Per-volume min-max normalization for intensity data.
///
/// Data already inside `[0, 1]` is returned untouched so that normalization
/// is idempotent and save/load round trips are exact. Anything else is
/// mapped affinely onto `[0, 1]`; constant data maps to all zeros.
pub fn normalize_intensity(data: Array3<f32>) -> Result<Array3<f32>> {
    let non_finite = data.iter().filter(|x| !x.is_finite()).count();
    if non_finite > 0 {
        return Err(Error::NonFinite(non_finite));
    }
    let (min, max) = data
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        });
    if min >= 0.0 && max <= 1.0 {
        return Ok(data);
    }
    let range = f64::from(max) - f64::from(min);
    if range <= 0.0 {
        return Ok(Array3::zeros(data.raw_dim()));
    }
    let min = f64::from(min);
    Ok(data.mapv(|x| (((f64::from(x) - min) / range) as f32).clamp(0.0, 1.0)))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    shape: [usize; 3],
    spacing: [f64; 3],
    id: String,
    domain: String,
    kind: VolumeKind,
}

/// Path of the JSON sidecar belonging to a `.vol` payload.
pub fn header_path(payload: &Path) -> PathBuf {
    let mut s = payload.as_os_str().to_owned();
    s.push(".hdr");
    PathBuf::from(s)
}

/// Loads a native `.vol` (+ `.vol.hdr`) pair or a NIfTI-1 `.nii` file.
pub fn load_volume(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    if path.extension().is_some_and(|e| e == "nii") {
        return crate::nifti::load_nifti(path);
    }
    let hdr_path = header_path(path);
    let hdr_text = fs::read_to_string(&hdr_path).map_err(|e| Error::io(&hdr_path, e))?;
    let hdr: Header = serde_json::from_str(&hdr_text)
        .map_err(|e| Error::format(&hdr_path, e.to_string()))?;

    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let [s, h, w] = hdr.shape;
    let expected = s * h * w;
    if bytes.len() % 4 != 0 || bytes.len() / 4 != expected {
        return Err(Error::format(
            path,
            format!(
                "payload holds {} bytes ({} floats) but header shape {s}x{h}x{w} needs {expected}",
                bytes.len(),
                bytes.len() as f64 / 4.0
            ),
        ));
    }
    let values: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let non_finite = values.iter().filter(|x| !x.is_finite()).count();
    if non_finite > 0 {
        return Err(Error::format(
            path,
            format!("{non_finite} non-finite voxel value(s)"),
        ));
    }
    let data = Array3::from_shape_vec((s, h, w), values)
        .map_err(|e| Error::format(path, e.to_string()))?;
    let data = match hdr.kind {
        VolumeKind::Intensity => normalize_intensity(data)?,
        _ => data,
    };
    Volume::new(data, hdr.spacing, hdr.id, hdr.domain, hdr.kind)
        .map_err(|e| Error::format(path, e.to_string()))
}

/// Writes `v` as a `.vol` payload plus JSON sidecar.
pub fn save_volume(v: &Volume, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    v.validate()?;
    let (s, h, w) = v.shape();
    let hdr = Header {
        shape: [s, h, w],
        spacing: v.spacing,
        id: v.id.clone(),
        domain: v.domain.clone(),
        kind: v.kind,
    };
    let mut bytes = Vec::with_capacity(v.data.len() * 4);
    for x in v.data.iter() {
        bytes.extend_from_slice(&x.to_le_bytes());
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    let hdr_path = header_path(path);
    let text = serde_json::to_string_pretty(&hdr).expect("header serializes");
    fs::write(&hdr_path, text + "\n").map_err(|e| Error::io(&hdr_path, e))?;
    Ok(())
}

/// The scans of one acquisition domain, optionally with ground-truth masks.
#[derive(Debug, Clone)]
pub struct ScanCollection {
    scans: Vec<Volume>,
    masks: Option<Vec<Volume>>,
    domain: String,
}

impl ScanCollection {
    pub fn new(domain: impl Into<String>, scans: Vec<Volume>, masks: Option<Vec<Volume>>) -> Result<Self> {
        if let Some(masks) = &masks {
            if masks.len() != scans.len() {
                return Err(Error::InvalidParam(format!(
                    "{} scans but {} masks",
                    scans.len(),
                    masks.len()
                )));
            }
            for (s, m) in scans.iter().zip(masks) {
                if m.kind() != VolumeKind::Mask {
                    return Err(Error::InvalidParam(format!(
                        "'{}' paired with a {} volume instead of a mask",
                        s.id(),
                        m.kind()
                    )));
                }
                if s.shape() != m.shape() {
                    let (a, b) = (s.shape(), m.shape());
                    return Err(Error::shapes(&[a.0, a.1, a.2], &[b.0, b.1, b.2]));
                }
            }
        }
        Ok(Self {
            scans,
            masks,
            domain: domain.into(),
        })
    }

    pub fn scans(&self) -> &[Volume] {
        &self.scans
    }

    pub fn masks(&self) -> Option<&[Volume]> {
        self.masks.as_deref()
    }

    pub fn domain(&self) -> &str {
        &self.domain
    }

    pub fn len(&self) -> usize {
        self.scans.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scans.is_empty()
    }

    /// Splits off the first `n` scans (with their masks) from the rest.
    pub fn split_at(&self, n: usize) -> (ScanCollection, ScanCollection) {
        let n = n.min(self.scans.len());
        let (a, b) = self.scans.split_at(n);
        let (ma, mb) = match &self.masks {
            Some(m) => {
                let (x, y) = m.split_at(n);
                (Some(x.to_vec()), Some(y.to_vec()))
            }
            None => (None, None),
        };
        (
            ScanCollection {
                scans: a.to_vec(),
                masks: ma,
                domain: self.domain.clone(),
            },
            ScanCollection {
                scans: b.to_vec(),
                masks: mb,
                domain: self.domain.clone(),
            },
        )
    }

    /// Loads every `<id>.vol` in `dir` (sorted by file name), pairing each
    /// with `<id>_mask.vol` when present. Masks must exist for all scans or
    /// none.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let mut names: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.extension().is_some_and(|e| e == "vol")
                    && !p
                        .file_stem()
                        .and_then(|s| s.to_str())
                        .is_some_and(|s| s.ends_with("_mask") || s.ends_with("_prob"))
            })
            .collect();
        names.sort();
        if names.is_empty() {
            return Err(Error::Empty(format!("no .vol scans in {}", dir.display())));
        }
        let mut scans = Vec::with_capacity(names.len());
        let mut masks = Vec::new();
        for p in &names {
            let scan = load_volume(p)?;
            let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
            let mask_path = p.with_file_name(format!("{stem}_mask.vol"));
            if mask_path.exists() {
                masks.push(load_volume(&mask_path)?);
            }
            scans.push(scan);
        }
        let masks = match masks.len() {
            0 => None,
            n if n == scans.len() => Some(masks),
            n => {
                return Err(Error::format(
                    dir,
                    format!("{n} masks for {} scans", scans.len()),
                ))
            }
        };
        let domain = scans[0].domain().to_string();
        Self::new(domain, scans, masks)
    }
}
