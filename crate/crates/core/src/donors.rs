//! Style-donor selection over a source collection.
//!
//! Three strategies rank candidate source slices for each target slice:
//!
//! * `3d`: whole source scans are ranked by scan-to-scan similarity and the
//!   top `n` scans donate their slice at the matching index;
//! * `2d`: for target slice `i`, every source scan's slice `i` competes;
//! * `2.5d`: as `2d`, widened to slices `i - m ..= i + m` (clipped at the
//!   volume boundary).
//!
//! Ranking is by descending score with ties broken by ascending scan index,
//! then ascending slice index.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::srsim::{slice_features, srsim_features, SliceFeatures, SrsimParams};
use crate::volume::{ScanCollection, Volume};

/// Default number of donors per target slice.
pub const DEFAULT_N_MST: usize = 7;
/// Default 2.5D half-window.
pub const DEFAULT_HALF_WINDOW: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Strategy {
    #[serde(rename = "3d")]
    D3,
    #[serde(rename = "2d")]
    D2,
    #[serde(rename = "2.5d")]
    D25,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::D3 => "3d",
            Strategy::D2 => "2d",
            Strategy::D25 => "2.5d",
        })
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "3d" => Ok(Strategy::D3),
            "2d" => Ok(Strategy::D2),
            "2.5d" | "25d" => Ok(Strategy::D25),
            other => Err(Error::InvalidParam(format!(
                "unknown donor strategy '{other}' (expected 3d, 2d or 2.5d)"
            ))),
        }
    }
}

/// One candidate donor slice and its similarity to the target slice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DonorRef {
    pub scan_id: String,
    pub slice_index: usize,
    pub score: f64,
}

/// Ranked donors for every slice of one target scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DonorAssignment {
    pub strategy: Strategy,
    pub n: usize,
    pub m: usize,
    pub per_slice: Vec<Vec<DonorRef>>,
}

impl DonorAssignment {
    pub fn n_slices(&self) -> usize {
        self.per_slice.len()
    }

    /// Builds an assignment from explicit donor lists (scores set to 0).
    /// Used for random-donor ablations and tests.
    pub fn from_refs(strategy: Strategy, n: usize, m: usize, per_slice: Vec<Vec<(String, usize)>>) -> Self {
        let per_slice = per_slice
            .into_iter()
            .map(|refs| {
                refs.into_iter()
                    .map(|(scan_id, slice_index)| DonorRef {
                        scan_id,
                        slice_index,
                        score: 0.0,
                    })
                    .collect()
            })
            .collect();
        Self {
            strategy,
            n,
            m,
            per_slice,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    scan: usize,
    slice: usize,
    score: f64,
}

fn rank(a: &Candidate, b: &Candidate) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.scan.cmp(&b.scan))
        .then(a.slice.cmp(&b.slice))
}

/// SR-SIM features of every source slice, computed once per collection.
pub struct DonorSelector<'a> {
    sources: &'a ScanCollection,
    params: SrsimParams,
    features: Vec<Vec<SliceFeatures>>,
}

impl<'a> DonorSelector<'a> {
    pub fn new(sources: &'a ScanCollection, params: &SrsimParams) -> Result<Self> {
        params.validate()?;
        let first = sources
            .scans()
            .first()
            .ok_or_else(|| Error::Empty("source collection has no scans".into()))?;
        let shape = first.shape();
        let mut ids = HashMap::new();
        for s in sources.scans() {
            if s.shape() != shape {
                let b = s.shape();
                return Err(Error::shapes(&[shape.0, shape.1, shape.2], &[b.0, b.1, b.2]));
            }
            if ids.insert(s.id(), ()).is_some() {
                return Err(Error::InvalidParam(format!("duplicate source scan id '{}'", s.id())));
            }
        }
        let jobs: Vec<(usize, usize)> = (0..sources.len())
            .flat_map(|s| (0..shape.0).map(move |i| (s, i)))
            .collect();
        let flat: Vec<SliceFeatures> = jobs
            .par_iter()
            .map(|&(s, i)| slice_features(sources.scans()[s].slice(i).view(), params))
            .collect::<Result<_>>()?;
        let mut it = flat.into_iter();
        let features = (0..sources.len())
            .map(|_| it.by_ref().take(shape.0).collect())
            .collect();
        Ok(Self {
            sources,
            params: *params,
            features,
        })
    }

    pub fn sources(&self) -> &ScanCollection {
        self.sources
    }

    /// Scores candidates against one target scan.
    pub fn for_target(&self, target: &Volume) -> Result<TargetScorer<'_, 'a>> {
        let expected = self.sources.scans()[0].shape();
        if target.shape() != expected {
            let t = target.shape();
            return Err(Error::shapes(&[t.0, t.1, t.2], &[expected.0, expected.1, expected.2]));
        }
        let features = (0..target.n_slices())
            .into_par_iter()
            .map(|i| slice_features(target.slice(i).view(), &self.params))
            .collect::<Result<Vec<_>>>()?;
        Ok(TargetScorer {
            selector: self,
            target: features,
            cache: Mutex::new(HashMap::new()),
        })
    }
}

/// Pairwise scores against a fixed target, memoized by
/// `(source scan, source slice, target slice)`.
pub struct TargetScorer<'s, 'a> {
    selector: &'s DonorSelector<'a>,
    target: Vec<SliceFeatures>,
    cache: Mutex<HashMap<(usize, usize, usize), f64>>,
}

impl TargetScorer<'_, '_> {
    fn n_slices(&self) -> usize {
        self.target.len()
    }

    fn n_scans(&self) -> usize {
        self.selector.features.len()
    }

    /// SR-SIM between source `(scan, slice)` and target slice `t`.
    pub fn pair_score(&self, scan: usize, slice: usize, t: usize) -> Result<f64> {
        let key = (scan, slice, t);
        if let Some(&s) = self.cache.lock().expect("score cache poisoned").get(&key) {
            return Ok(s);
        }
        let s = srsim_features(
            &self.selector.features[scan][slice],
            &self.target[t],
            &self.selector.params,
        )?;
        self.cache.lock().expect("score cache poisoned").insert(key, s);
        Ok(s)
    }

    /// Mean of matching-index slice scores, summed in slice order.
    pub fn scan_score(&self, scan: usize) -> Result<f64> {
        let mut acc = 0.0;
        for i in 0..self.n_slices() {
            acc += self.pair_score(scan, i, i)?;
        }
        Ok(acc / self.n_slices() as f64)
    }

    fn to_ref(&self, c: &Candidate) -> DonorRef {
        DonorRef {
            scan_id: self.selector.sources.scans()[c.scan].id().to_string(),
            slice_index: c.slice,
            score: c.score,
        }
    }

    pub fn select_3d(&self, n: usize) -> Result<DonorAssignment> {
        check_n(n)?;
        let scores: Vec<f64> = (0..self.n_scans())
            .into_par_iter()
            .map(|s| self.scan_score(s))
            .collect::<Result<_>>()?;
        let mut scans: Vec<Candidate> = scores
            .iter()
            .enumerate()
            .map(|(scan, &score)| Candidate { scan, slice: 0, score })
            .collect();
        scans.sort_by(rank);
        scans.truncate(n);
        let per_slice = (0..self.n_slices())
            .map(|i| {
                scans
                    .iter()
                    .map(|c| self.to_ref(&Candidate { slice: i, ..*c }))
                    .collect()
            })
            .collect();
        Ok(DonorAssignment {
            strategy: Strategy::D3,
            n,
            m: 0,
            per_slice,
        })
    }

    pub fn select_2d(&self, n: usize) -> Result<DonorAssignment> {
        let mut a = self.windowed(n, 0)?;
        a.strategy = Strategy::D2;
        Ok(a)
    }

    pub fn select_25d(&self, n: usize, m: usize) -> Result<DonorAssignment> {
        self.windowed(n, m)
    }

    pub fn select(&self, strategy: Strategy, n: usize, m: usize) -> Result<DonorAssignment> {
        match strategy {
            Strategy::D3 => self.select_3d(n),
            Strategy::D2 => self.select_2d(n),
            Strategy::D25 => self.select_25d(n, m),
        }
    }

    fn windowed(&self, n: usize, m: usize) -> Result<DonorAssignment> {
        check_n(n)?;
        let last = self.n_slices() - 1;
        let per_slice = (0..self.n_slices())
            .into_par_iter()
            .map(|i| {
                let window = i.saturating_sub(m)..=(i + m).min(last);
                let mut cands = Vec::new();
                for scan in 0..self.n_scans() {
                    for slice in window.clone() {
                        let score = self.pair_score(scan, slice, i)?;
                        cands.push(Candidate { scan, slice, score });
                    }
                }
                cands.sort_by(rank);
                cands.truncate(n);
                Ok(cands.iter().map(|c| self.to_ref(c)).collect())
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(DonorAssignment {
            strategy: Strategy::D25,
            n,
            m,
            per_slice,
        })
    }
}

fn check_n(n: usize) -> Result<()> {
    if n == 0 {
        Err(Error::InvalidParam("number of donors must be at least 1".into()))
    } else {
        Ok(())
    }
}

/// Top-`n` source scans by scan-to-scan similarity, donating matching slices.
pub fn select_3d(target: &Volume, sources: &ScanCollection, n: usize, params: &SrsimParams) -> Result<DonorAssignment> {
    DonorSelector::new(sources, params)?.for_target(target)?.select_3d(n)
}

/// Top-`n` same-index source slices per target slice.
pub fn select_2d(target: &Volume, sources: &ScanCollection, n: usize, params: &SrsimParams) -> Result<DonorAssignment> {
    DonorSelector::new(sources, params)?.for_target(target)?.select_2d(n)
}

/// Top-`n` source slices within `±m` of each target slice index.
pub fn select_25d(
    target: &Volume,
    sources: &ScanCollection,
    n: usize,
    m: usize,
    params: &SrsimParams,
) -> Result<DonorAssignment> {
    DonorSelector::new(sources, params)?.for_target(target)?.select_25d(n, m)
}
