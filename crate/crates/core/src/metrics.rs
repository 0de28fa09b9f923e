//! Surface Dice and volumetric Dice for binary masks.

use ndarray::{Array3, ArrayViewMut1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{Volume, VolumeKind};

/// Unit of the surface-distance tolerance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ToleranceUnit {
    /// Voxel steps, ignoring the volume spacing.
    Voxel,
    /// Millimetres, using the volume spacing.
    Mm,
}

/// Neighbourhood used to decide whether a mask voxel is on the surface.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Connectivity {
    /// The six face neighbours.
    Face,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurfaceDiceParams {
    pub tolerance: f64,
    pub unit: ToleranceUnit,
    pub connectivity: Connectivity,
}

impl Default for SurfaceDiceParams {
    fn default() -> Self {
        Self {
            tolerance: 1.0,
            unit: ToleranceUnit::Voxel,
            connectivity: Connectivity::Face,
        }
    }
}

fn check_masks(pred: &Volume, gt: &Volume) -> Result<()> {
    for v in [pred, gt] {
        if v.kind() != VolumeKind::Mask {
            return Err(Error::InvalidParam(format!(
                "'{}' is a {} volume, expected a mask",
                v.id(),
                v.kind()
            )));
        }
    }
    if pred.shape() != gt.shape() {
        let (a, b) = (pred.shape(), gt.shape());
        return Err(Error::shapes(&[a.0, a.1, a.2], &[b.0, b.1, b.2]));
    }
    Ok(())
}

/// Mask voxels with at least one face neighbour outside the mask. Voxels on
/// the volume border count as touching the outside.
pub fn boundary(mask: &Array3<bool>) -> Array3<bool> {
    let (d, h, w) = mask.dim();
    Array3::from_shape_fn((d, h, w), |(k, i, j)| {
        if !mask[[k, i, j]] {
            return false;
        }
        if k == 0 || i == 0 || j == 0 || k + 1 == d || i + 1 == h || j + 1 == w {
            return true;
        }
        !(mask[[k - 1, i, j]]
            && mask[[k + 1, i, j]]
            && mask[[k, i - 1, j]]
            && mask[[k, i + 1, j]]
            && mask[[k, i, j - 1]]
            && mask[[k, i, j + 1]])
    })
}

/// 1D lower envelope of parabolas: `out[q] = min_p weight * (q - p)^2 + f[p]`
/// over the finite entries of `f` (Felzenszwalb-Huttenlocher).
fn envelope_1d(mut f: ArrayViewMut1<'_, f64>, weight: f64, v: &mut Vec<usize>, z: &mut Vec<f64>, buf: &mut Vec<f64>) {
    let n = f.len();
    buf.clear();
    buf.extend(f.iter().copied());
    v.clear();
    z.clear();
    let key = |q: usize| buf[q] + weight * (q * q) as f64;
    for (q, fq) in buf.iter().enumerate() {
        if !fq.is_finite() {
            continue;
        }
        loop {
            match v.last() {
                None => {
                    v.push(q);
                    z.push(f64::NEG_INFINITY);
                    break;
                }
                Some(&p) => {
                    let s = (key(q) - key(p)) / (2.0 * weight * (q - p) as f64);
                    if s <= *z.last().unwrap() {
                        v.pop();
                        z.pop();
                    } else {
                        v.push(q);
                        z.push(s);
                        break;
                    }
                }
            }
        }
    }
    if v.is_empty() {
        f.fill(f64::INFINITY);
        return;
    }
    let mut k = 0;
    for q in 0..n {
        while k + 1 < v.len() && z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let d = q as f64 - p as f64;
        f[q] = weight * d * d + buf[p];
    }
}

/// Exact squared Euclidean distance from every voxel to the nearest `true`
/// voxel of `features`, with per-axis spacing. Infinite when there are no
/// features.
pub fn squared_distance_transform(features: &Array3<bool>, spacing: [f64; 3]) -> Array3<f64> {
    let mut dist = features.mapv(|f| if f { 0.0 } else { f64::INFINITY });
    let (mut v, mut z, mut buf) = (Vec::new(), Vec::new(), Vec::new());
    for (axis, s) in spacing.iter().enumerate() {
        let weight = s * s;
        for lane in dist.lanes_mut(Axis(axis)) {
            envelope_1d(lane, weight, &mut v, &mut z, &mut buf);
        }
    }
    dist
}

fn as_bool(v: &Volume) -> Array3<bool> {
    v.data().mapv(|x| x != 0.0)
}

/// Fraction of surface voxels of either mask lying within `tolerance` of the
/// other mask's surface. Both masks empty gives 1, exactly one empty gives 0.
pub fn surface_dice(pred: &Volume, gt: &Volume, params: &SurfaceDiceParams) -> Result<f64> {
    check_masks(pred, gt)?;
    if !(params.tolerance >= 0.0 && params.tolerance.is_finite()) {
        return Err(Error::InvalidParam(format!(
            "tolerance {} must be non-negative",
            params.tolerance
        )));
    }
    let (p, g) = (as_bool(pred), as_bool(gt));
    let (p_any, g_any) = (p.iter().any(|&x| x), g.iter().any(|&x| x));
    match (p_any, g_any) {
        (false, false) => return Ok(1.0),
        (true, false) | (false, true) => return Ok(0.0),
        _ => {}
    }
    let spacing = match params.unit {
        ToleranceUnit::Voxel => [1.0; 3],
        ToleranceUnit::Mm => gt.spacing(),
    };
    let (bp, bg) = (boundary(&p), boundary(&g));
    let (dp, dg) = (
        squared_distance_transform(&bp, spacing),
        squared_distance_transform(&bg, spacing),
    );
    let tol2 = params.tolerance * params.tolerance;
    let matched = |surface: &Array3<bool>, dist: &Array3<f64>| -> (usize, usize) {
        surface
            .iter()
            .zip(dist.iter())
            .filter(|(&b, _)| b)
            .fold((0, 0), |(m, n), (_, &d)| (m + usize::from(d <= tol2), n + 1))
    };
    let (mp, np) = matched(&bp, &dg);
    let (mg, ng) = matched(&bg, &dp);
    Ok((mp + mg) as f64 / (np + ng) as f64)
}

/// Volumetric Dice; both masks empty gives 1.
pub fn dice(pred: &Volume, gt: &Volume) -> Result<f64> {
    check_masks(pred, gt)?;
    let (mut inter, mut total) = (0usize, 0usize);
    for (&a, &b) in pred.data().iter().zip(gt.data().iter()) {
        let (a, b) = (a != 0.0, b != 0.0);
        inter += usize::from(a && b);
        total += usize::from(a) + usize::from(b);
    }
    if total == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / total as f64)
}
