//! Spectral residual similarity (SR-SIM) between slices.
//!
//! Each slice is summarized by a spectral-residual saliency map and a Scharr
//! gradient-magnitude map ([`SliceFeatures`]). Two slices are compared by
//! combining a saliency similarity and a gradient similarity per pixel and
//! pooling the result with the pixelwise maximum saliency as weight.
//!
//! Features are deterministic, so a pair scored through [`srsim`] and through
//! [`srsim_features`] on cached features gives bit-identical results.

use ndarray::{Array2, ArrayView2, Zip};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectrum::{check_finite, fft2_inplace, Plane, MIN_SPECTRAL_SIDE};
use crate::volume::Volume;

/// Offset inside the log-amplitude.
const LOG_EPS: f64 = 1e-8;
/// Spectral bins weaker than this fraction of the strongest bin carry no
/// structure and are left out of the saliency reconstruction.
const DEAD_BIN_FRACTION: f64 = 1e-10;
/// Added to the pooling denominator when the pooling weights vanish.
const POOL_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SrsimParams {
    /// Longer side of the grid the saliency is computed on.
    pub downsample_target: usize,
    /// Side of the box filter that estimates the average log spectrum.
    pub residual_window: usize,
    /// Gaussian smoothing of the saliency, in downsampled pixels.
    pub smoothing_sigma: f64,
    /// Saliency-similarity stabilizer.
    pub c1: f64,
    /// Gradient-similarity stabilizer on a 0-255 intensity scale.
    pub c2: f64,
    /// Exponent applied to the gradient similarity.
    pub lambda: f64,
}

impl Default for SrsimParams {
    fn default() -> Self {
        Self {
            downsample_target: 64,
            residual_window: 3,
            smoothing_sigma: 2.5,
            c1: 0.40,
            c2: 225.0,
            lambda: 0.5,
        }
    }
}

impl SrsimParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.downsample_target > 0
            && self.residual_window > 0
            && self.smoothing_sigma > 0.0
            && self.c1 > 0.0
            && self.c2 > 0.0
            && self.lambda > 0.0
            && [self.smoothing_sigma, self.c1, self.c2, self.lambda]
                .iter()
                .all(|x| x.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParam(format!(
                "SR-SIM parameters must be strictly positive: {self:?}"
            )))
        }
    }

    /// `c2` rescaled to unit-range intensities.
    fn c2_unit(&self) -> f64 {
        self.c2 / (255.0 * 255.0)
    }
}

/// Non-negative visual saliency of a slice.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    values: Plane,
}

impl SaliencyMap {
    pub fn values(&self) -> &Plane {
        &self.values
    }

    /// Location of the (first, in raster order) maximum.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = ((0, 0), f64::NEG_INFINITY);
        for (idx, &v) in self.values.indexed_iter() {
            if v > best.1 {
                best = (idx, v);
            }
        }
        best.0
    }
}

/// Precomputed saliency and gradient magnitude of one slice.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceFeatures {
    saliency: Plane,
    gradient: Plane,
}

impl SliceFeatures {
    pub fn saliency(&self) -> &Plane {
        &self.saliency
    }

    pub fn gradient(&self) -> &Plane {
        &self.gradient
    }

    pub fn dim(&self) -> (usize, usize) {
        self.saliency.dim()
    }
}

fn check_slice(slice: ArrayView2<'_, f64>) -> Result<()> {
    let (h, w) = slice.dim();
    if h < MIN_SPECTRAL_SIDE || w < MIN_SPECTRAL_SIDE {
        return Err(Error::InvalidParam(format!(
            "slice {h}x{w} is smaller than {MIN_SPECTRAL_SIDE}x{MIN_SPECTRAL_SIDE}"
        )));
    }
    check_finite(slice)
}

/// Row-stochastic matrix that area-averages `n` samples into `m` bins.
fn area_weights(n: usize, m: usize) -> Array2<f64> {
    let mut wts = Array2::zeros((m, n));
    let scale = n as f64 / m as f64;
    for o in 0..m {
        let (lo, hi) = (o as f64 * scale, (o + 1) as f64 * scale);
        let first = lo.floor() as usize;
        let last = (hi.ceil() as usize).min(n);
        for i in first..last {
            let overlap = (hi.min((i + 1) as f64) - lo.max(i as f64)).max(0.0);
            wts[[o, i]] = overlap / scale;
        }
    }
    wts
}

/// Area-averaging resize so that the longer side is at most `target`.
fn downsample(slice: ArrayView2<'_, f64>, target: usize) -> Plane {
    let (h, w) = slice.dim();
    let longer = h.max(w);
    if longer <= target {
        return slice.to_owned();
    }
    let scale = longer as f64 / target as f64;
    let oh = ((h as f64 / scale).round() as usize).max(1);
    let ow = ((w as f64 / scale).round() as usize).max(1);
    let rows = area_weights(h, oh);
    let cols = area_weights(w, ow);
    rows.dot(&slice).dot(&cols.t())
}

/// Bilinear resize with pixel-center alignment and edge clamping.
fn bilinear(src: &Plane, h: usize, w: usize) -> Plane {
    let (sh, sw) = src.dim();
    if (sh, sw) == (h, w) {
        return src.clone();
    }
    let coord = |dst: usize, n_dst: usize, n_src: usize| -> (usize, usize, f64) {
        let x = ((dst as f64 + 0.5) * n_src as f64 / n_dst as f64 - 0.5).clamp(0.0, (n_src - 1) as f64);
        let i0 = x.floor() as usize;
        let i1 = (i0 + 1).min(n_src - 1);
        (i0, i1, x - i0 as f64)
    };
    Array2::from_shape_fn((h, w), |(i, j)| {
        let (y0, y1, fy) = coord(i, h, sh);
        let (x0, x1, fx) = coord(j, w, sw);
        let top = src[[y0, x0]] * (1.0 - fx) + src[[y0, x1]] * fx;
        let bot = src[[y1, x0]] * (1.0 - fx) + src[[y1, x1]] * fx;
        top * (1.0 - fy) + bot * fy
    })
}

fn clamp_idx(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

/// Mean over a `k x k` window with replicated borders, counting only the
/// entries where `live` is set (zero where a window has no live entry).
fn masked_box_filter(a: &Plane, live: &Array2<bool>, k: usize) -> Plane {
    let (h, w) = a.dim();
    let lo = (k as isize - 1) / 2;
    let hi = k as isize - 1 - lo;
    Array2::from_shape_fn((h, w), |(i, j)| {
        let mut acc = 0.0;
        let mut n = 0usize;
        for di in -lo..=hi {
            for dj in -lo..=hi {
                let idx = [clamp_idx(i as isize + di, h), clamp_idx(j as isize + dj, w)];
                if live[idx] {
                    acc += a[idx];
                    n += 1;
                }
            }
        }
        if n == 0 {
            0.0
        } else {
            acc / n as f64
        }
    })
}

/// Separable Gaussian blur with replicated borders, radius `ceil(3 sigma)`.
fn gaussian_blur(a: &Plane, sigma: f64) -> Plane {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);
    let (h, w) = a.dim();
    let rows = Array2::from_shape_fn((h, w), |(i, j)| {
        kernel
            .iter()
            .zip(-radius..=radius)
            .map(|(k, d)| k * a[[i, clamp_idx(j as isize + d, w)]])
            .sum::<f64>()
    });
    Array2::from_shape_fn((h, w), |(i, j)| {
        kernel
            .iter()
            .zip(-radius..=radius)
            .map(|(k, d)| k * rows[[clamp_idx(i as isize + d, h), j]])
            .sum::<f64>()
    })
}

/// Spectral-residual saliency, normalized to `[0, 1]` (all zeros when the
/// slice carries no spectral structure).
pub fn spectral_residual_saliency(slice: ArrayView2<'_, f64>, params: &SrsimParams) -> Result<SaliencyMap> {
    params.validate()?;
    check_slice(slice)?;
    Ok(SaliencyMap {
        values: saliency_unchecked(slice, params),
    })
}

fn saliency_unchecked(slice: ArrayView2<'_, f64>, params: &SrsimParams) -> Plane {
    let (h, w) = slice.dim();
    let small = downsample(slice, params.downsample_target);
    let (sh, sw) = small.dim();

    let mut spec = small.mapv(|x| Complex64::new(x, 0.0));
    fft2_inplace(&mut spec, false);
    let amp = spec.mapv(|z| z.norm());
    let log_amp = amp.mapv(|a| (a + LOG_EPS).ln());

    // Dead bins (exact spectral zeros) have no meaningful phase and would
    // dig log(eps) valleys into the local average; they are excluded from
    // both the average and the reconstruction. DC only shifts the mean and
    // is dropped as well, so flat slices have no saliency at all.
    let floor = DEAD_BIN_FRACTION * amp.iter().cloned().fold(0.0, f64::max);
    let live = amp.mapv(|a| a > floor);
    let residual = &log_amp - &masked_box_filter(&log_amp, &live, params.residual_window);
    let mut recon = Array2::<Complex64>::zeros((sh, sw));
    Zip::indexed(&mut recon)
        .and(&spec)
        .and(&live)
        .and(&residual)
        .for_each(|(i, j), r, &z, &alive, &res| {
            if (i, j) != (0, 0) && alive {
                *r = Complex64::from_polar(res.exp(), z.arg());
            }
        });
    fft2_inplace(&mut recon, true);
    let n = (sh * sw) as f64;
    let energy = recon.mapv(|z| (z / n).norm_sqr());
    let smooth = gaussian_blur(&energy, params.smoothing_sigma);

    let (lo, hi) = smooth
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    let normalized = if hi - lo > f64::EPSILON * hi.abs().max(1e-300) && hi > 0.0 {
        smooth.mapv(|v| ((v - lo) / (hi - lo)).clamp(0.0, 1.0))
    } else {
        Array2::zeros((sh, sw))
    };
    bilinear(&normalized, h, w)
}

/// Scharr gradient magnitude on unit-range intensities, replicated borders.
pub fn scharr_magnitude(slice: ArrayView2<'_, f64>) -> Plane {
    let (h, w) = slice.dim();
    let at = |i: isize, j: isize| slice[[clamp_idx(i, h), clamp_idx(j, w)]];
    Array2::from_shape_fn((h, w), |(i, j)| {
        let (i, j) = (i as isize, j as isize);
        let gx = (3.0 * (at(i - 1, j - 1) - at(i - 1, j + 1))
            + 10.0 * (at(i, j - 1) - at(i, j + 1))
            + 3.0 * (at(i + 1, j - 1) - at(i + 1, j + 1)))
            / 16.0;
        let gy = (3.0 * (at(i - 1, j - 1) - at(i + 1, j - 1))
            + 10.0 * (at(i - 1, j) - at(i + 1, j))
            + 3.0 * (at(i - 1, j + 1) - at(i + 1, j + 1)))
            / 16.0;
        (gx * gx + gy * gy).sqrt()
    })
}

/// Computes the saliency and gradient features of a slice.
pub fn slice_features(slice: ArrayView2<'_, f64>, params: &SrsimParams) -> Result<SliceFeatures> {
    params.validate()?;
    check_slice(slice)?;
    Ok(SliceFeatures {
        saliency: saliency_unchecked(slice, params),
        gradient: scharr_magnitude(slice),
    })
}

/// Similarity of two slices from their precomputed features.
pub fn srsim_features(a: &SliceFeatures, b: &SliceFeatures, params: &SrsimParams) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::shapes(a.saliency.shape(), b.saliency.shape()));
    }
    let c1 = params.c1;
    let c2 = params.c2_unit();
    let mut weighted = 0.0;
    let mut total = 0.0;
    let mut plain = 0.0;
    Zip::from(&a.saliency)
        .and(&b.saliency)
        .and(&a.gradient)
        .and(&b.gradient)
        .for_each(|&v1, &v2, &g1, &g2| {
            let s_vs = (2.0 * v1 * v2 + c1) / (v1 * v1 + v2 * v2 + c1);
            let s_g = (2.0 * g1 * g2 + c2) / (g1 * g1 + g2 * g2 + c2);
            let s = s_vs * s_g.powf(params.lambda);
            let wgt = v1.max(v2);
            weighted += s * wgt;
            total += wgt;
            plain += s;
        });
    if total > 0.0 {
        Ok(weighted / total)
    } else {
        // No saliency anywhere: fall back to uniform pooling.
        let n = a.saliency.len() as f64;
        Ok((plain + POOL_EPS) / (n + POOL_EPS))
    }
}

/// SR-SIM score of two equally shaped slices, in `(0, 1]`.
pub fn srsim(x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>, params: &SrsimParams) -> Result<f64> {
    if x.dim() != y.dim() {
        return Err(Error::shapes(x.shape(), y.shape()));
    }
    let fx = slice_features(x, params)?;
    let fy = slice_features(y, params)?;
    srsim_features(&fx, &fy, params)
}

/// Features for every slice of a volume, in slice order.
pub fn volume_features(v: &Volume, params: &SrsimParams) -> Result<Vec<SliceFeatures>> {
    use rayon::prelude::*;
    (0..v.n_slices())
        .into_par_iter()
        .map(|i| slice_features(v.slice(i).view(), params))
        .collect()
}

/// Mean of per-index slice scores from precomputed features, summed in
/// slice order.
pub fn scan_similarity_features(s: &[SliceFeatures], t: &[SliceFeatures], params: &SrsimParams) -> Result<f64> {
    if s.len() != t.len() {
        return Err(Error::shapes(&[s.len()], &[t.len()]));
    }
    if s.is_empty() {
        return Err(Error::Empty("volumes without slices".into()));
    }
    let mut acc = 0.0;
    for (a, b) in s.iter().zip(t) {
        acc += srsim_features(a, b, params)?;
    }
    Ok(acc / s.len() as f64)
}

/// Scan-to-scan similarity: the mean SR-SIM over matching slice indices.
pub fn scan_similarity_3d(s: &Volume, t: &Volume, params: &SrsimParams) -> Result<f64> {
    let (ss, sh, sw) = s.shape();
    let (ts, th, tw) = t.shape();
    if (ss, sh, sw) != (ts, th, tw) {
        return Err(Error::shapes(&[ss, sh, sw], &[ts, th, tw]));
    }
    let fs = volume_features(s, params)?;
    let ft = volume_features(t, params)?;
    scan_similarity_features(&fs, &ft, params)
}
