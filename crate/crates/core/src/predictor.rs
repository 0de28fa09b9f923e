//! Slice-to-probability predictors.
//!
//! [`Predictor`] is the downstream-task contract that adapted slices are fed
//! to. Two implementations ship with the crate: a classical threshold plus
//! morphology segmenter for desk-scale experiments, and a loader returning
//! precomputed probability maps so outputs of an external model can be
//! evaluated with the same harness.

use std::collections::VecDeque;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectrum::{check_finite, Plane};
use crate::volume::{load_volume, Volume, VolumeKind};

/// Maps one intensity slice to a probability plane of the same shape.
///
/// Implementations must be pure (same input, same output) and safe to call
/// from several threads at once.
pub trait Predictor: Send + Sync {
    fn name(&self) -> String;

    /// `slice_index` is the position of `slice` in its target volume.
    fn predict(&self, slice_index: usize, slice: ArrayView2<'_, f64>) -> Result<Plane>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineSegmenterParams {
    pub threshold: f64,
    /// Radius of the disk used for binary opening; 0 disables opening.
    pub opening_radius: usize,
    pub keep_largest_component: bool,
    /// Width of the logistic ramp around the threshold.
    pub softness: f64,
}

impl Default for BaselineSegmenterParams {
    fn default() -> Self {
        Self {
            threshold: 0.35,
            opening_radius: 1,
            keep_largest_component: true,
            softness: 0.05,
        }
    }
}

impl BaselineSegmenterParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::InvalidParam(format!(
                "threshold {} outside (0, 1)",
                self.threshold
            )));
        }
        if !(self.softness > 0.0 && self.softness.is_finite()) {
            return Err(Error::InvalidParam(format!(
                "softness {} must be positive",
                self.softness
            )));
        }
        Ok(())
    }
}

/// Intensity-threshold segmenter with morphological clean-up.
#[derive(Debug, Clone)]
pub struct BaselineSegmenter {
    params: BaselineSegmenterParams,
}

impl BaselineSegmenter {
    pub fn new(params: BaselineSegmenterParams) -> Result<Self> {
        params.validate()?;
        Ok(Self { params })
    }

    pub fn params(&self) -> &BaselineSegmenterParams {
        &self.params
    }
}

impl Predictor for BaselineSegmenter {
    fn name(&self) -> String {
        "baseline".into()
    }

    fn predict(&self, _slice_index: usize, slice: ArrayView2<'_, f64>) -> Result<Plane> {
        baseline_predict(slice, &self.params)
    }
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Soft threshold, then (optionally) opening and largest-component
/// filtering of the hard support; soft values outside the kept support are
/// zeroed.
pub fn baseline_predict(slice: ArrayView2<'_, f64>, params: &BaselineSegmenterParams) -> Result<Plane> {
    params.validate()?;
    check_finite(slice)?;
    let soft = slice.mapv(|x| logistic((x - params.threshold) / params.softness));
    if params.opening_radius == 0 && !params.keep_largest_component {
        return Ok(soft);
    }
    let mut support = soft.mapv(|p| p > 0.5);
    if params.opening_radius > 0 {
        support = opening(&support, params.opening_radius);
    }
    if params.keep_largest_component {
        support = largest_component(&support);
    }
    Ok(ndarray::Zip::from(&soft)
        .and(&support)
        .map_collect(|&p, &keep| if keep { p } else { 0.0 }))
}

fn disk_offsets(radius: usize) -> Vec<(isize, isize)> {
    let r = radius as isize;
    let mut out = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if dy * dy + dx * dx <= r * r {
                out.push((dy, dx));
            }
        }
    }
    out
}

/// Erosion then dilation with a disk; neighbours outside the plane are
/// ignored.
fn opening(mask: &Array2<bool>, radius: usize) -> Array2<bool> {
    let offsets = disk_offsets(radius);
    let (h, w) = mask.dim();
    let neighbours = |i: usize, j: usize| {
        offsets.iter().filter_map(move |&(dy, dx)| {
            let (y, x) = (i as isize + dy, j as isize + dx);
            (y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w).then_some((y as usize, x as usize))
        })
    };
    let eroded = Array2::from_shape_fn((h, w), |(i, j)| neighbours(i, j).all(|p| mask[p]));
    Array2::from_shape_fn((h, w), |(i, j)| neighbours(i, j).any(|p| eroded[p]))
}

/// Keeps the largest 4-connected component; ties go to the component found
/// first in raster order.
fn largest_component(mask: &Array2<bool>) -> Array2<bool> {
    let (h, w) = mask.dim();
    let mut label = Array2::<u32>::zeros((h, w));
    let mut best = (0u32, 0usize);
    let mut next = 0u32;
    let mut queue = VecDeque::new();
    for i in 0..h {
        for j in 0..w {
            if !mask[[i, j]] || label[[i, j]] != 0 {
                continue;
            }
            next += 1;
            label[[i, j]] = next;
            queue.push_back((i, j));
            let mut size = 0;
            while let Some((y, x)) = queue.pop_front() {
                size += 1;
                let mut visit = |y: usize, x: usize| {
                    if mask[[y, x]] && label[[y, x]] == 0 {
                        label[[y, x]] = next;
                        queue.push_back((y, x));
                    }
                };
                if y > 0 {
                    visit(y - 1, x);
                }
                if y + 1 < h {
                    visit(y + 1, x);
                }
                if x > 0 {
                    visit(y, x - 1);
                }
                if x + 1 < w {
                    visit(y, x + 1);
                }
            }
            if size > best.1 {
                best = (next, size);
            }
        }
    }
    label.mapv(|l| best.1 > 0 && l == best.0)
}

/// Serves planes of a stored probability volume by slice index.
#[derive(Debug, Clone)]
pub struct PrecomputedPredictor {
    store: Arc<Volume>,
}

impl PrecomputedPredictor {
    pub fn new(store: Volume) -> Result<Self> {
        if store.kind() != VolumeKind::Probability {
            return Err(Error::InvalidParam(format!(
                "precomputed store '{}' is a {} volume, expected probability",
                store.id(),
                store.kind()
            )));
        }
        Ok(Self {
            store: Arc::new(store),
        })
    }

    pub fn store(&self) -> &Volume {
        &self.store
    }
}

/// Returns plane `slice_index` of `store` unchanged.
pub fn precomputed_predict(slice_index: usize, store: &Volume) -> Result<Plane> {
    if store.kind() != VolumeKind::Probability {
        return Err(Error::InvalidParam(format!(
            "'{}' is a {} volume, expected probability",
            store.id(),
            store.kind()
        )));
    }
    if slice_index >= store.n_slices() {
        return Err(Error::OutOfRange {
            index: slice_index,
            len: store.n_slices(),
        });
    }
    Ok(store.slice(slice_index))
}

impl Predictor for PrecomputedPredictor {
    fn name(&self) -> String {
        format!("precomputed:{}", self.store.id())
    }

    fn predict(&self, slice_index: usize, slice: ArrayView2<'_, f64>) -> Result<Plane> {
        let plane = precomputed_predict(slice_index, &self.store)?;
        if plane.dim() != slice.dim() {
            return Err(Error::shapes(plane.shape(), slice.shape()));
        }
        Ok(plane)
    }
}

/// A predictor chosen by name: `baseline` or `precomputed:<path>`.
///
/// A precomputed path may be a single probability `.vol` file, or a
/// directory holding `<target id>.vol` (or `<target id>_prob.vol`) per
/// target scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum PredictorSpec {
    Baseline(BaselineSegmenterParams),
    Precomputed { path: PathBuf },
}

impl fmt::Display for PredictorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PredictorSpec::Baseline(_) => f.write_str("baseline"),
            PredictorSpec::Precomputed { path } => write!(f, "precomputed:{}", path.display()),
        }
    }
}

impl FromStr for PredictorSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "baseline" {
            return Ok(PredictorSpec::Baseline(BaselineSegmenterParams::default()));
        }
        match s.strip_prefix("precomputed:") {
            Some(p) if !p.is_empty() => Ok(PredictorSpec::Precomputed { path: p.into() }),
            _ => Err(Error::InvalidParam(format!(
                "unknown predictor '{s}' (expected baseline or precomputed:<path>)"
            ))),
        }
    }
}

impl PredictorSpec {
    /// Instantiates the predictor to be used on `target`.
    pub fn for_target(&self, target: &Volume) -> Result<Arc<dyn Predictor>> {
        match self {
            PredictorSpec::Baseline(p) => Ok(Arc::new(BaselineSegmenter::new(*p)?)),
            PredictorSpec::Precomputed { path } => {
                let file = if path.is_dir() {
                    resolve_store(path, target.id())?
                } else {
                    path.clone()
                };
                let store = load_volume(&file)?;
                if store.shape() != target.shape() {
                    let (a, b) = (store.shape(), target.shape());
                    return Err(Error::shapes(&[a.0, a.1, a.2], &[b.0, b.1, b.2]));
                }
                Ok(Arc::new(PrecomputedPredictor::new(store)?))
            }
        }
    }
}

fn resolve_store(dir: &Path, id: &str) -> Result<PathBuf> {
    [format!("{id}.vol"), format!("{id}_prob.vol")]
        .iter()
        .map(|n| dir.join(n))
        .find(|p| p.exists())
        .ok_or_else(|| Error::Empty(format!("no precomputed map for '{id}' in {}", dir.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{s, Array3};

    fn params() -> BaselineSegmenterParams {
        BaselineSegmenterParams::default()
    }

    #[test]
    fn dark_slice_is_background() {
        let p = baseline_predict(Array2::zeros((32, 32)).view(), &params()).unwrap();
        assert!(p.iter().all(|&v| v < 0.01));
    }

    #[test]
    fn bright_square_is_foreground() {
        let mut x = Array2::zeros((40, 40));
        x.slice_mut(s![10..30, 10..30]).fill(1.0);
        let p = baseline_predict(x.view(), &params()).unwrap();
        for ((i, j), &v) in p.indexed_iter() {
            if (11..29).contains(&i) && (11..29).contains(&j) {
                assert!(v > 0.99);
            } else if !(10..30).contains(&i) || !(10..30).contains(&j) {
                assert!(v < 0.01);
            }
        }
    }

    /// Flood-fill sizes of 4-connected components, independent of the
    /// implementation above.
    fn component_sizes(mask: &Array2<bool>) -> Vec<usize> {
        let (h, w) = mask.dim();
        let mut seen = Array2::from_elem((h, w), false);
        let mut sizes = Vec::new();
        for start in mask.indexed_iter().filter(|(_, &v)| v).map(|(p, _)| p) {
            if seen[start] {
                continue;
            }
            let mut stack = vec![start];
            seen[start] = true;
            let mut n = 0;
            while let Some((y, x)) = stack.pop() {
                n += 1;
                for (dy, dx) in [(-1i32, 0i32), (1, 0), (0, -1), (0, 1)] {
                    let (ny, nx) = (y as i32 + dy, x as i32 + dx);
                    if ny >= 0 && nx >= 0 && (ny as usize) < h && (nx as usize) < w {
                        let q = (ny as usize, nx as usize);
                        if mask[q] && !seen[q] {
                            seen[q] = true;
                            stack.push(q);
                        }
                    }
                }
            }
            sizes.push(n);
        }
        sizes
    }

    #[test]
    fn smaller_blob_is_suppressed() {
        let mut x = Array2::zeros((48, 48));
        x.slice_mut(s![4..20, 4..20]).fill(0.9);
        x.slice_mut(s![30..38, 30..38]).fill(0.9);
        let raw = x.mapv(|v| v > 0.35);
        let mut sizes = component_sizes(&raw);
        sizes.sort();
        assert_eq!(sizes, vec![64, 256]);
        let p = baseline_predict(x.view(), &params()).unwrap();
        assert!(p.slice(s![30..38, 30..38]).iter().all(|&v| v == 0.0));
        assert!(p[[12, 12]] > 0.99);
        let kept = p.mapv(|v| v > 0.5);
        // opening with a radius-1 disk trims the four corners
        assert_eq!(component_sizes(&kept), vec![252]);
    }

    #[test]
    fn opening_removes_specks() {
        let mut x = Array2::zeros((32, 32));
        x.slice_mut(s![8..24, 8..24]).fill(1.0);
        x[[2, 2]] = 1.0;
        let p = BaselineSegmenterParams {
            keep_largest_component: false,
            ..params()
        };
        let out = baseline_predict(x.view(), &p).unwrap();
        assert_eq!(out[[2, 2]], 0.0);
        assert!(out[[16, 16]] > 0.99);
    }

    #[test]
    fn invalid_threshold_is_rejected() {
        let p = BaselineSegmenterParams {
            threshold: 1.0,
            ..params()
        };
        assert!(BaselineSegmenter::new(p).is_err());
    }

    fn prob_store() -> Volume {
        let data = Array3::from_shape_fn((3, 8, 8), |(k, i, j)| ((k + i + j) % 5) as f32 / 4.0);
        Volume::new(data, [1.0; 3], "t", "d", VolumeKind::Probability).unwrap()
    }

    #[test]
    fn precomputed_returns_stored_planes() {
        let store = prob_store();
        let plane = precomputed_predict(0, &store).unwrap();
        assert_eq!(plane, store.slice(0));
        assert!(matches!(
            precomputed_predict(3, &store),
            Err(Error::OutOfRange { index: 3, len: 3 })
        ));
    }

    #[test]
    fn precomputed_survives_a_save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let store = prob_store();
        crate::volume::save_volume(&store, dir.path().join("t.vol")).unwrap();
        let spec: PredictorSpec = format!("precomputed:{}", dir.path().display()).parse().unwrap();
        let target = Volume::new(Array3::zeros((3, 8, 8)), [1.0; 3], "t", "d", VolumeKind::Intensity).unwrap();
        let pred = spec.for_target(&target).unwrap();
        for i in 0..3 {
            assert_eq!(pred.predict(i, target.slice(i).view()).unwrap(), store.slice(i));
        }
    }

    #[test]
    fn predictor_spec_parsing() {
        assert!(matches!("baseline".parse::<PredictorSpec>(), Ok(PredictorSpec::Baseline(_))));
        assert!("precomputed:".parse::<PredictorSpec>().is_err());
        assert!("unet".parse::<PredictorSpec>().is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn soft_map_is_monotone_without_post_processing(
                a in proptest::collection::vec(0.0f64..=1.0, 64),
                bump in proptest::collection::vec(0.0f64..=0.5, 64),
            ) {
                let p = BaselineSegmenterParams { opening_radius: 0, keep_largest_component: false, ..Default::default() };
                let x = Array2::from_shape_vec((8, 8), a).unwrap();
                let y = (&x + &Array2::from_shape_vec((8, 8), bump).unwrap()).mapv(|v| v.min(1.0));
                let px = baseline_predict(x.view(), &p).unwrap();
                let py = baseline_predict(y.view(), &p).unwrap();
                for (u, v) in px.iter().zip(py.iter()) {
                    prop_assert!(u <= v);
                    prop_assert!((0.0..=1.0).contains(u));
                }
            }
        }
    }
}
