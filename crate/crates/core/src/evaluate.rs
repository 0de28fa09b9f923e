//! End-to-end evaluation of one source/target pair under the ablation arms.

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::donors::{DonorAssignment, DonorSelector, Strategy, DEFAULT_HALF_WINDOW};
use crate::error::{Error, Result};
use crate::metrics::{dice, surface_dice, SurfaceDiceParams};
use crate::phantom::derive_seed;
use crate::predictor::PredictorSpec;
use crate::srsim::SrsimParams;
use crate::transfer::{multi_source_transfer, naive_predict, TransferConfig};
use crate::volume::{ScanCollection, Volume};

/// Schema version of every JSON report.
pub const REPORT_SCHEMA: u32 = 1;

/// How target slices are handled before prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// No adaptation. `none` is accepted as an alias.
    Naive,
    /// One swap with a single seeded-random donor per slice.
    SwapSingle,
    /// `n_mst` seeded-random donors per slice, predictions averaged.
    Mst,
    /// `n_mst` SR-SIM-ranked donors per slice, predictions averaged.
    SrsimMst,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Naive, Mode::SwapSingle, Mode::Mst, Mode::SrsimMst];
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Naive => "naive",
            Mode::SwapSingle => "swap-single",
            Mode::Mst => "mst",
            Mode::SrsimMst => "srsim-mst",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "naive" | "none" => Ok(Mode::Naive),
            "swap-single" => Ok(Mode::SwapSingle),
            "mst" => Ok(Mode::Mst),
            "srsim-mst" => Ok(Mode::SrsimMst),
            other => Err(Error::InvalidParam(format!(
                "unknown mode '{other}' (expected naive, none, swap-single, mst or srsim-mst)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub mode: Mode,
    pub strategy: Strategy,
    /// 2.5D half-window.
    pub m: usize,
    pub transfer: TransferConfig,
    pub srsim: SrsimParams,
    pub surface: SurfaceDiceParams,
    /// Seed of the random donor draws.
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            mode: Mode::SrsimMst,
            strategy: Strategy::D25,
            m: DEFAULT_HALF_WINDOW,
            transfer: TransferConfig::default(),
            srsim: SrsimParams::default(),
            surface: SurfaceDiceParams::default(),
            seed: 42,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        self.transfer.validate()?;
        self.srsim.validate()
    }

    /// Donors drawn per slice in this mode.
    pub fn donors_per_slice(&self) -> usize {
        match self.mode {
            Mode::Naive => 0,
            Mode::SwapSingle => 1,
            Mode::Mst | Mode::SrsimMst => self.transfer.n_mst,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanScore {
    pub scan_id: String,
    pub surface_dice: f64,
    pub dice: f64,
}

/// Scores of one pair at one beta.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema: u32,
    /// `[source domain, target domain]`.
    pub pair: [String; 2],
    pub mode: Mode,
    pub strategy: Strategy,
    pub beta: f64,
    pub surface_dice: f64,
    pub dice: f64,
    pub per_scan: Vec<ScanScore>,
}

/// Seeded uniform donors without replacement from the same candidate pool
/// the SR-SIM strategies rank.
pub fn random_donors(
    target: &Volume,
    sources: &ScanCollection,
    strategy: Strategy,
    n: usize,
    m: usize,
    seed: u64,
) -> Result<DonorAssignment> {
    if n == 0 {
        return Err(Error::InvalidParam("donor count must be at least 1".into()));
    }
    if sources.is_empty() {
        return Err(Error::Empty("source collection is empty".into()));
    }
    let slices = target.n_slices();
    let ids: Vec<&str> = sources.scans().iter().map(|s| s.id()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |pool: &[(usize, usize)]| -> Vec<(String, usize)> {
        sample(&mut rng, pool.len(), n.min(pool.len()))
            .into_iter()
            .map(|k| (ids[pool[k].0].to_string(), pool[k].1))
            .collect()
    };
    let per_slice = match strategy {
        Strategy::D3 => {
            let scans: Vec<(usize, usize)> = (0..ids.len()).map(|s| (s, 0)).collect();
            let chosen = draw(&scans);
            (0..slices)
                .map(|i| chosen.iter().map(|(id, _)| (id.clone(), i)).collect())
                .collect()
        }
        Strategy::D2 | Strategy::D25 => {
            let m = if strategy == Strategy::D2 { 0 } else { m };
            (0..slices)
                .map(|i| {
                    let lo = i.saturating_sub(m);
                    let hi = (i + m).min(slices - 1);
                    let pool: Vec<(usize, usize)> = (0..ids.len())
                        .flat_map(|s| (lo..=hi).map(move |j| (s, j)))
                        .collect();
                    draw(&pool)
                })
                .collect()
        }
    };
    let m = if strategy == Strategy::D25 { m } else { 0 };
    Ok(DonorAssignment::from_refs(strategy, n, m, per_slice))
}

/// Donor plan of every target scan; `None` entries mean no adaptation.
pub fn plan_donors(
    sources: &ScanCollection,
    targets: &ScanCollection,
    cfg: &EvalConfig,
) -> Result<Vec<Option<DonorAssignment>>> {
    let n = cfg.donors_per_slice();
    match cfg.mode {
        Mode::Naive => Ok(vec![None; targets.len()]),
        Mode::SwapSingle | Mode::Mst => targets
            .scans()
            .iter()
            .enumerate()
            .map(|(k, t)| {
                random_donors(t, sources, cfg.strategy, n, cfg.m, derive_seed(cfg.seed, k as u64)).map(Some)
            })
            .collect(),
        Mode::SrsimMst => {
            let selector = DonorSelector::new(sources, &cfg.srsim)?;
            targets
                .scans()
                .iter()
                .map(|t| selector.for_target(t)?.select(cfg.strategy, n, cfg.m).map(Some))
                .collect()
        }
    }
}

/// Predicts, binarizes and scores one target scan.
pub fn score_target(
    target: &Volume,
    gt: &Volume,
    sources: &ScanCollection,
    donors: Option<&DonorAssignment>,
    beta: f64,
    cfg: &EvalConfig,
    predictor: &PredictorSpec,
) -> Result<(ScanScore, Volume)> {
    let p = predictor.for_target(target)?;
    let prob = match donors {
        None => naive_predict(target, p.as_ref())?,
        Some(d) => {
            let tc = TransferConfig {
                beta,
                n_mst: cfg.donors_per_slice(),
                ..cfg.transfer
            };
            multi_source_transfer(target, sources, d, &tc, p.as_ref())?
        }
    };
    let mask = prob.binarize(cfg.transfer.binarize_threshold)?;
    let score = ScanScore {
        scan_id: target.id().to_string(),
        surface_dice: surface_dice(&mask, gt, &cfg.surface)?,
        dice: dice(&mask, gt)?,
    };
    Ok((score, prob))
}

pub(crate) fn target_masks(targets: &ScanCollection) -> Result<&[Volume]> {
    targets.masks().ok_or_else(|| {
        Error::InvalidParam(format!(
            "target collection '{}' has no ground-truth masks",
            targets.domain()
        ))
    })
}

pub(crate) fn report(
    sources: &ScanCollection,
    targets: &ScanCollection,
    cfg: &EvalConfig,
    beta: f64,
    per_scan: Vec<ScanScore>,
) -> EvalReport {
    let n = per_scan.len().max(1) as f64;
    EvalReport {
        schema: REPORT_SCHEMA,
        pair: [sources.domain().to_string(), targets.domain().to_string()],
        mode: cfg.mode,
        strategy: cfg.strategy,
        beta,
        surface_dice: per_scan.iter().map(|s| s.surface_dice).sum::<f64>() / n,
        dice: per_scan.iter().map(|s| s.dice).sum::<f64>() / n,
        per_scan,
    }
}

/// Evaluates every target scan at `cfg.transfer.beta`.
pub fn evaluate_pair(
    sources: &ScanCollection,
    targets: &ScanCollection,
    cfg: &EvalConfig,
    predictor: &PredictorSpec,
) -> Result<EvalReport> {
    Ok(evaluate_pair_with_predictions(sources, targets, cfg, predictor)?.0)
}

/// As [`evaluate_pair`], also returning each target's probability volume.
pub fn evaluate_pair_with_predictions(
    sources: &ScanCollection,
    targets: &ScanCollection,
    cfg: &EvalConfig,
    predictor: &PredictorSpec,
) -> Result<(EvalReport, Vec<Volume>)> {
    cfg.validate()?;
    if targets.is_empty() {
        return Err(Error::Empty(format!("target collection '{}' is empty", targets.domain())));
    }
    let masks = target_masks(targets)?;
    let plans = plan_donors(sources, targets, cfg)?;
    let mut per_scan = Vec::with_capacity(targets.len());
    let mut probs = Vec::with_capacity(targets.len());
    for ((t, gt), plan) in targets.scans().iter().zip(masks).zip(&plans) {
        let (s, p) = score_target(t, gt, sources, plan.as_ref(), cfg.transfer.beta, cfg, predictor)?;
        per_scan.push(s);
        probs.push(p);
    }
    Ok((report(sources, targets, cfg, cfg.transfer.beta, per_scan), probs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{generate_benchmark_with_shape, Severity};

    fn pair() -> (ScanCollection, ScanCollection) {
        let b = generate_benchmark_with_shape((4, 32, 32), 2, 2, Severity::Medium, 7).unwrap();
        let mut it = b.collections.into_iter();
        (it.next().unwrap(), it.next().unwrap())
    }

    fn cfg(mode: Mode) -> EvalConfig {
        EvalConfig {
            mode,
            transfer: TransferConfig { n_mst: 3, ..Default::default() },
            ..Default::default()
        }
    }

    #[test]
    fn none_parses_as_naive() {
        assert_eq!("none".parse::<Mode>().unwrap(), Mode::Naive);
        for m in Mode::ALL {
            assert_eq!(m.to_string().parse::<Mode>().unwrap(), m);
        }
        assert!("ours".parse::<Mode>().is_err());
    }

    #[test]
    fn random_donors_stay_in_window_without_repeats() {
        let (src, tgt) = pair();
        let t = &tgt.scans()[0];
        let d = random_donors(t, &src, Strategy::D25, 5, 1, 3).unwrap();
        for (i, refs) in d.per_slice.iter().enumerate() {
            let pool = 2 * ((i + 1).min(3) - i.saturating_sub(1) + 1);
            assert_eq!(refs.len(), 5.min(pool));
            let mut seen = std::collections::HashSet::new();
            for r in refs {
                assert!(r.slice_index + 1 >= i && r.slice_index <= i + 1);
                assert!(seen.insert((r.scan_id.clone(), r.slice_index)));
            }
        }
        assert_eq!(d, random_donors(t, &src, Strategy::D25, 5, 1, 3).unwrap());
        let d2 = random_donors(t, &src, Strategy::D2, 5, 1, 3).unwrap();
        assert!(d2.per_slice.iter().enumerate().all(|(i, r)| r.len() == 2 && r.iter().all(|x| x.slice_index == i)));
        let d3 = random_donors(t, &src, Strategy::D3, 1, 0, 3).unwrap();
        let scan = &d3.per_slice[0][0].scan_id;
        assert!(d3.per_slice.iter().enumerate().all(|(i, r)| &r[0].scan_id == scan && r[0].slice_index == i));
    }

    #[test]
    fn same_domain_naive_matches_direct_prediction() {
        let (src, _) = pair();
        let spec = PredictorSpec::Baseline(Default::default());
        let r = evaluate_pair(&src, &src, &cfg(Mode::Naive), &spec).unwrap();
        let p = spec.for_target(&src.scans()[1]).unwrap();
        let mask = naive_predict(&src.scans()[1], p.as_ref()).unwrap().binarize(0.5).unwrap();
        let direct = surface_dice(&mask, &src.masks().unwrap()[1], &SurfaceDiceParams::default()).unwrap();
        assert_eq!(r.per_scan[1].surface_dice, direct);
        assert_eq!(r.schema, 1);
    }

    #[test]
    fn beta_zero_modes_equal_naive() {
        let (src, tgt) = pair();
        let spec = PredictorSpec::Baseline(Default::default());
        let naive = evaluate_pair(&src, &tgt, &cfg(Mode::Naive), &spec).unwrap();
        for mode in [Mode::SwapSingle, Mode::Mst, Mode::SrsimMst] {
            let mut c = cfg(mode);
            c.transfer.beta = 0.0;
            let r = evaluate_pair(&src, &tgt, &c, &spec).unwrap();
            assert_eq!(r.per_scan, naive.per_scan, "{mode}");
        }
    }

    #[test]
    fn targets_without_masks_are_rejected() {
        let (src, tgt) = pair();
        let bare = ScanCollection::new(tgt.domain(), tgt.scans().to_vec(), None).unwrap();
        let spec = PredictorSpec::Baseline(Default::default());
        assert!(evaluate_pair(&src, &bare, &cfg(Mode::Naive), &spec).is_err());
    }

    #[test]
    fn report_round_trips_through_json() {
        let (src, tgt) = pair();
        let spec = PredictorSpec::Baseline(Default::default());
        let r = evaluate_pair(&src, &tgt, &cfg(Mode::Mst), &spec).unwrap();
        let s = serde_json::to_string(&r).unwrap();
        assert!(s.contains("\"mode\":\"mst\""));
        assert_eq!(serde_json::from_str::<EvalReport>(&s).unwrap(), r);
    }
}
