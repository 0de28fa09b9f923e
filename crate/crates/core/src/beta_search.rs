//! Beta grid search and the two beta-selection strategies.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, ErrorKind, Result};
use crate::evaluate::{plan_donors, report, score_target, target_masks, EvalConfig, EvalReport};
use crate::predictor::PredictorSpec;
use crate::volume::ScanCollection;

/// Default search grid.
pub const DEFAULT_GRID: [f64; 6] = [0.01, 0.02, 0.03, 0.05, 0.07, 0.10];

/// `(source domain, target domain)`.
pub type PairId = (String, String);

/// Mean surface Dice over a pair's validation scans, per beta.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaCurve {
    pub pair_id: PairId,
    /// `(beta, score)` with strictly increasing betas.
    pub points: Vec<(f64, f64)>,
}

impl BetaCurve {
    pub fn new(pair_id: PairId, points: Vec<(f64, f64)>) -> Result<Self> {
        let c = Self { pair_id, points };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.is_empty() {
            return Err(Error::Empty(format!("curve {:?} has no points", self.pair_id)));
        }
        check_grid(&self.betas())?;
        if let Some(&(b, s)) = self.points.iter().find(|(_, s)| !(0.0..=1.0).contains(s)) {
            return Err(Error::Invariant(format!("score {s} at beta {b} outside [0, 1]")));
        }
        Ok(())
    }

    pub fn betas(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.0).collect()
    }

    /// Score at `beta`, if it is a grid point.
    pub fn score_at(&self, beta: f64) -> Option<f64> {
        self.points.iter().find(|p| p.0 == beta).map(|p| p.1)
    }
}

/// Checks a grid is nonempty, within `[0, 1]` and strictly increasing.
pub fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::InvalidParam("beta grid is empty".into()));
    }
    if let Some(b) = grid.iter().find(|b| !(0.0..=1.0).contains(*b)) {
        return Err(Error::InvalidParam(format!("beta {b} outside [0, 1]")));
    }
    if let Some(w) = grid.windows(2).find(|w| w[0] >= w[1]) {
        return Err(Error::InvalidParam(format!(
            "beta grid must be strictly increasing ({} then {})",
            w[0], w[1]
        )));
    }
    Ok(())
}

/// A pair that could not be searched.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairFailure {
    pub pair_id: PairId,
    pub kind: ErrorKind,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearch {
    pub curves: Vec<BetaCurve>,
    /// Full per-beta reports, in the same order as `curves`.
    pub reports: Vec<Vec<EvalReport>>,
    pub failures: Vec<PairFailure>,
}

fn search_pair(
    sources: &ScanCollection,
    targets: &ScanCollection,
    grid: &[f64],
    cfg: &EvalConfig,
    predictor: &PredictorSpec,
) -> Result<Vec<EvalReport>> {
    if targets.is_empty() {
        return Err(Error::Empty(format!("target collection '{}' is empty", targets.domain())));
    }
    let masks = target_masks(targets)?;
    let plans = plan_donors(sources, targets, cfg)?;
    grid.par_iter()
        .map(|&beta| {
            let per_scan = targets
                .scans()
                .iter()
                .zip(masks)
                .zip(&plans)
                .map(|((t, gt), plan)| Ok(score_target(t, gt, sources, plan.as_ref(), beta, cfg, predictor)?.0))
                .collect::<Result<Vec<_>>>()?;
            Ok(report(sources, targets, cfg, beta, per_scan))
        })
        .collect()
}

/// Scores every pair at every beta. Donors are planned once per target and
/// reused across the grid. A pair that fails is recorded and skipped.
pub fn grid_search(
    pairs: &[(ScanCollection, ScanCollection)],
    grid: &[f64],
    cfg: &EvalConfig,
    predictor: &PredictorSpec,
) -> Result<GridSearch> {
    check_grid(grid)?;
    cfg.validate()?;
    let results: Vec<(PairId, Result<Vec<EvalReport>>)> = pairs
        .par_iter()
        .map(|(s, t)| {
            let id = (s.domain().to_string(), t.domain().to_string());
            (id, search_pair(s, t, grid, cfg, predictor))
        })
        .collect();
    let mut out = GridSearch {
        curves: Vec::new(),
        reports: Vec::new(),
        failures: Vec::new(),
    };
    for (pair_id, r) in results {
        match r {
            Ok(reports) => {
                let points = reports.iter().map(|r| (r.beta, r.surface_dice)).collect();
                out.curves.push(BetaCurve::new(pair_id, points)?);
                out.reports.push(reports);
            }
            Err(e) => {
                log::warn!("pair {} -> {} failed: {e}", pair_id.0, pair_id.1);
                out.failures.push(PairFailure {
                    pair_id,
                    kind: e.kind(),
                    error: e.to_string(),
                });
            }
        }
    }
    Ok(out)
}

/// First maximum, so ties go to the smaller beta.
fn argmax(points: impl Iterator<Item = (f64, f64)>) -> Option<f64> {
    let mut best: Option<(f64, f64)> = None;
    for (b, s) in points {
        if best.is_none_or(|(_, bs)| s > bs) {
            best = Some((b, s));
        }
    }
    best.map(|p| p.0)
}

/// Best beta of each pair.
pub fn optimal_per_pair(curves: &[BetaCurve]) -> BTreeMap<PairId, f64> {
    curves
        .iter()
        .filter_map(|c| argmax(c.points.iter().copied()).map(|b| (c.pair_id.clone(), b)))
        .collect()
}

/// Beta maximizing the mean score across pairs. All curves must share the
/// same grid.
pub fn averaged_optimal(curves: &[BetaCurve]) -> Result<f64> {
    let first = curves
        .first()
        .ok_or_else(|| Error::Empty("no curves to average".into()))?;
    let grid = first.betas();
    if let Some(c) = curves.iter().find(|c| c.betas() != grid) {
        return Err(Error::InvalidParam(format!(
            "curve {:?} uses a different beta grid",
            c.pair_id
        )));
    }
    let n = curves.len() as f64;
    let means = grid.iter().enumerate().map(|(k, &b)| {
        (b, curves.iter().map(|c| c.points[k].1).sum::<f64>() / n)
    });
    argmax(means).ok_or_else(|| Error::Empty("curves have no points".into()))
}
