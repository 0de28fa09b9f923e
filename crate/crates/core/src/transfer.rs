//! Low-frequency amplitude swap and multi-source transfer.
//!
//! A target slice keeps its phase and high-frequency amplitudes; inside the
//! circular low-frequency mask its amplitudes are replaced with those of a
//! source-domain donor slice. Multi-source transfer runs the swap once per
//! donor, feeds every adapted slice to the predictor and averages the
//! resulting probability maps in donor-list order.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use ndarray::{ArrayView2, Zip};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::donors::{DonorAssignment, DEFAULT_N_MST};
use crate::error::{Error, Result};
use crate::predictor::Predictor;
use crate::spectrum::{circular_mask, decompose, recompose, MaskPlane, Plane, SliceSpectrum};
use crate::volume::{ScanCollection, Volume, VolumeKind};

/// How per-donor predictions are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Average the soft probability maps.
    MeanProbability,
    /// Binarize each map at the threshold first, then average the votes.
    MeanVote,
}

impl fmt::Display for Aggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Aggregation::MeanProbability => "mean_probability",
            Aggregation::MeanVote => "mean_vote",
        })
    }
}

impl FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean_probability" | "mean-probability" => Ok(Aggregation::MeanProbability),
            "mean_vote" | "mean-vote" => Ok(Aggregation::MeanVote),
            other => Err(Error::InvalidParam(format!("unknown aggregation '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferConfig {
    pub beta: f64,
    pub n_mst: usize,
    pub aggregation: Aggregation,
    pub binarize_threshold: f64,
}

impl Default for TransferConfig {
    fn default() -> Self {
        Self {
            beta: 0.03,
            n_mst: DEFAULT_N_MST,
            aggregation: Aggregation::MeanProbability,
            binarize_threshold: 0.5,
        }
    }
}

impl TransferConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::InvalidParam(format!("beta {} outside [0, 1]", self.beta)));
        }
        if self.n_mst == 0 {
            return Err(Error::InvalidParam("n_mst must be at least 1".into()));
        }
        if !(self.binarize_threshold > 0.0 && self.binarize_threshold < 1.0) {
            return Err(Error::InvalidParam(format!(
                "binarize threshold {} outside (0, 1)",
                self.binarize_threshold
            )));
        }
        Ok(())
    }
}

fn check_pair(source: ArrayView2<'_, f64>, target: ArrayView2<'_, f64>) -> Result<()> {
    if source.dim() != target.dim() {
        return Err(Error::shapes(source.shape(), target.shape()));
    }
    for (name, plane) in [("source", source), ("target", target)] {
        let outside = plane.iter().filter(|v| !(0.0..=1.0).contains(*v)).count();
        if outside > 0 {
            return Err(Error::InvalidParam(format!(
                "{name} slice has {outside} value(s) outside [0, 1]"
            )));
        }
    }
    Ok(())
}

/// The swapped spectrum: source amplitudes inside the mask, target
/// amplitudes outside, target phase everywhere.
pub fn swap_spectrum(
    source: ArrayView2<'_, f64>,
    target: ArrayView2<'_, f64>,
    beta: f64,
) -> Result<(SliceSpectrum, MaskPlane)> {
    check_pair(source, target)?;
    let (h, w) = target.dim();
    let mask = circular_mask(h, w, beta)?;
    let src = decompose(source)?;
    let (mut amplitude, phase) = decompose(target)?.into_parts();
    Zip::from(&mut amplitude)
        .and(src.amplitude())
        .and(mask.values())
        .for_each(|a, &s, &inside| {
            if inside {
                *a = s;
            }
        });
    Ok((SliceSpectrum::new(amplitude, phase)?, mask))
}

/// Amplitude swap without the final clipping to `[0, 1]`.
pub fn fda_swap_unclipped(source: ArrayView2<'_, f64>, target: ArrayView2<'_, f64>, beta: f64) -> Result<Plane> {
    let (spec, _) = swap_spectrum(source, target, beta)?;
    Ok(recompose(&spec))
}

/// Transfers the low-frequency style of `source` onto `target`, clipping the
/// result to `[0, 1]`. With `beta = 0` the target is returned unchanged.
pub fn fda_swap(source: ArrayView2<'_, f64>, target: ArrayView2<'_, f64>, beta: f64) -> Result<Plane> {
    if beta == 0.0 {
        check_pair(source, target)?;
        circular_mask(target.nrows(), target.ncols(), beta)?;
        return Ok(target.to_owned());
    }
    let mut out = fda_swap_unclipped(source, target, beta)?;
    out.mapv_inplace(|v| v.clamp(0.0, 1.0));
    Ok(out)
}

fn index_sources(sources: &ScanCollection) -> HashMap<&str, &Volume> {
    sources.scans().iter().map(|s| (s.id(), s)).collect()
}

fn donor_slice(
    index: &HashMap<&str, &Volume>,
    scan_id: &str,
    slice_index: usize,
    target: &Volume,
) -> Result<Plane> {
    let scan = index
        .get(scan_id)
        .ok_or_else(|| Error::InvalidParam(format!("donor scan '{scan_id}' not in the source collection")))?;
    let (_, h, w) = scan.shape();
    let (_, th, tw) = target.shape();
    if (h, w) != (th, tw) {
        return Err(Error::shapes(&[h, w], &[th, tw]));
    }
    if slice_index >= scan.n_slices() {
        return Err(Error::OutOfRange {
            index: slice_index,
            len: scan.n_slices(),
        });
    }
    Ok(scan.slice(slice_index))
}

fn check_assignment(target: &Volume, donors: &DonorAssignment) -> Result<()> {
    if target.n_slices() == 0 {
        return Err(Error::Empty("target volume has no slices".into()));
    }
    if donors.n_slices() != target.n_slices() {
        return Err(Error::shapes(&[donors.n_slices()], &[target.n_slices()]));
    }
    if let Some(i) = donors.per_slice.iter().position(|d| d.is_empty()) {
        return Err(Error::Empty(format!("no donor for target slice {i}")));
    }
    Ok(())
}

/// Averages `predictor(fda_swap(donor, t_i, beta))` over each slice's
/// donors. The running mean is accumulated in donor-list order, so a fixed
/// assignment always gives bit-identical output.
pub fn multi_source_transfer(
    target: &Volume,
    sources: &ScanCollection,
    donors: &DonorAssignment,
    cfg: &TransferConfig,
    predictor: &dyn Predictor,
) -> Result<Volume> {
    cfg.validate()?;
    check_assignment(target, donors)?;
    let index = index_sources(sources);
    let short = donors
        .per_slice
        .iter()
        .filter(|d| d.len() != cfg.n_mst)
        .count();
    if short > 0 {
        log::warn!(
            "{}: {short} slice(s) have a donor count different from n_mst = {}; averaging over what is available",
            target.id(),
            cfg.n_mst
        );
    }
    let planes = (0..target.n_slices())
        .into_par_iter()
        .map(|i| {
            let t = target.slice(i);
            let mut mean: Option<Plane> = None;
            for (k, d) in donors.per_slice[i].iter().enumerate() {
                let donor = donor_slice(&index, &d.scan_id, d.slice_index, target)?;
                let adapted = fda_swap(donor.view(), t.view(), cfg.beta)?;
                let mut p = predictor
                    .predict(i, adapted.view())
                    .map_err(|e| Error::Predictor {
                        slice: i,
                        source: Box::new(e),
                    })?;
                if p.dim() != t.dim() {
                    return Err(Error::shapes(p.shape(), t.shape()));
                }
                if cfg.aggregation == Aggregation::MeanVote {
                    p.mapv_inplace(|v| if v >= cfg.binarize_threshold { 1.0 } else { 0.0 });
                }
                match mean.as_mut() {
                    None => mean = Some(p),
                    Some(m) => {
                        let n = (k + 1) as f64;
                        Zip::from(m).and(&p).for_each(|m, &v| *m += (v - *m) / n);
                    }
                }
            }
            let mut m = mean.expect("non-empty donor list");
            m.mapv_inplace(|v| v.clamp(0.0, 1.0));
            Ok(m)
        })
        .collect::<Result<Vec<_>>>()?;
    Volume::from_planes(
        &planes,
        target.spacing(),
        target.id(),
        target.domain(),
        VolumeKind::Probability,
    )
}

/// Per-slice predictions with no spectral modification.
pub fn naive_predict(target: &Volume, predictor: &dyn Predictor) -> Result<Volume> {
    if target.n_slices() == 0 {
        return Err(Error::Empty("target volume has no slices".into()));
    }
    let planes = (0..target.n_slices())
        .into_par_iter()
        .map(|i| {
            let t = target.slice(i);
            let p = predictor.predict(i, t.view()).map_err(|e| Error::Predictor {
                slice: i,
                source: Box::new(e),
            })?;
            if p.dim() != t.dim() {
                return Err(Error::shapes(p.shape(), t.shape()));
            }
            Ok(p.mapv(|v| v.clamp(0.0, 1.0)))
        })
        .collect::<Result<Vec<_>>>()?;
    Volume::from_planes(
        &planes,
        target.spacing(),
        target.id(),
        target.domain(),
        VolumeKind::Probability,
    )
}

/// Adapted intensity volumes for one target.
#[derive(Debug, Clone)]
pub struct AdaptedVolumes {
    /// `per_rank[k]` uses every slice's `k`-th donor. Only ranks available
    /// for all slices are produced.
    pub per_rank: Vec<Volume>,
    /// Slicewise mean of the adapted slices over all of that slice's donors.
    pub composite: Volume,
}

/// Applies the swap with every assigned donor.
pub fn adapt_volume(
    target: &Volume,
    sources: &ScanCollection,
    donors: &DonorAssignment,
    beta: f64,
) -> Result<AdaptedVolumes> {
    check_assignment(target, donors)?;
    let index = index_sources(sources);
    let per_slice: Vec<Vec<Plane>> = (0..target.n_slices())
        .into_par_iter()
        .map(|i| {
            let t = target.slice(i);
            donors.per_slice[i]
                .iter()
                .map(|d| {
                    let donor = donor_slice(&index, &d.scan_id, d.slice_index, target)?;
                    fda_swap(donor.view(), t.view(), beta)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let ranks = per_slice.iter().map(Vec::len).min().unwrap_or(0);
    let meta = |suffix: String, planes: &[Plane]| {
        Volume::from_planes(
            planes,
            target.spacing(),
            format!("{}_{suffix}", target.id()),
            target.domain(),
            VolumeKind::Intensity,
        )
    };
    let per_rank = (0..ranks)
        .map(|k| {
            let planes: Vec<Plane> = per_slice.iter().map(|s| s[k].clone()).collect();
            meta(format!("donor{k}"), &planes)
        })
        .collect::<Result<Vec<_>>>()?;
    let composite: Vec<Plane> = per_slice
        .iter()
        .map(|adapted| {
            let mut m = adapted[0].clone();
            for (k, p) in adapted.iter().enumerate().skip(1) {
                let n = (k + 1) as f64;
                Zip::from(&mut m).and(p).for_each(|m, &v| *m += (v - *m) / n);
            }
            m.mapv(|v| v.clamp(0.0, 1.0))
        })
        .collect();
    Ok(AdaptedVolumes {
        per_rank,
        composite: meta("adapted".into(), &composite)?,
    })
}
