//! Centered 2D spectra of slices and the circular low-frequency mask.
//!
//! Forward transforms are unnormalized; inverse transforms scale by
//! `1 / (H * W)`. After centering, the DC term sits at `(H / 2, W / 2)`
//! (integer division), for even and odd sizes alike.

use std::cell::RefCell;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::{Array2, ArrayView2, Zip};
use num_complex::Complex64;
use rustfft::{Fft, FftDirection, FftPlanner};

use crate::error::{Error, Result};

/// A real 2D plane (one slice, one probability map, ...).
pub type Plane = Array2<f64>;

/// Smallest side length accepted by the mask and similarity operations.
pub const MIN_SPECTRAL_SIDE: usize = 8;

/// Imaginary residual above which [`recompose`] warns about a non-Hermitian
/// spectrum.
pub const IMAG_RESIDUAL_LIMIT: f64 = 1e-4;

type PlanCache = HashMap<(usize, bool), Arc<dyn Fft<f64>>>;

thread_local! {
    static PLANS: RefCell<PlanCache> = RefCell::new(HashMap::new());
}

fn plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANS.with(|plans| {
        plans
            .borrow_mut()
            .entry((len, inverse))
            .or_insert_with(|| {
                let dir = if inverse {
                    FftDirection::Inverse
                } else {
                    FftDirection::Forward
                };
                FftPlanner::new().plan_fft(len, dir)
            })
            .clone()
    })
}

/// In-place unnormalized 2D transform (rows, then columns).
pub(crate) fn fft2_inplace(buf: &mut Array2<Complex64>, inverse: bool) {
    let (h, w) = buf.dim();
    let row_fft = plan(w, inverse);
    let mut scratch = vec![Complex64::default(); row_fft.get_inplace_scratch_len()];
    for mut row in buf.rows_mut() {
        match row.as_slice_mut() {
            Some(s) => row_fft.process_with_scratch(s, &mut scratch),
            None => {
                let mut tmp = row.to_vec();
                row_fft.process_with_scratch(&mut tmp, &mut scratch);
                row.assign(&ndarray::ArrayView1::from(&tmp));
            }
        }
    }
    let col_fft = plan(h, inverse);
    let mut scratch = vec![Complex64::default(); col_fft.get_inplace_scratch_len()];
    let mut tmp = vec![Complex64::default(); h];
    for mut col in buf.columns_mut() {
        for (t, c) in tmp.iter_mut().zip(col.iter()) {
            *t = *c;
        }
        col_fft.process_with_scratch(&mut tmp, &mut scratch);
        for (c, t) in col.iter_mut().zip(&tmp) {
            *c = *t;
        }
    }
}

/// Moves the zero frequency from `(0, 0)` to `(h / 2, w / 2)`.
pub fn fftshift<T: Clone>(a: &Array2<T>) -> Array2<T> {
    let (h, w) = a.dim();
    Array2::from_shape_fn((h, w), |(i, j)| {
        a[[(i + h - h / 2) % h, (j + w - w / 2) % w]].clone()
    })
}

/// Inverse of [`fftshift`].
pub fn ifftshift<T: Clone>(a: &Array2<T>) -> Array2<T> {
    let (h, w) = a.dim();
    Array2::from_shape_fn((h, w), |(i, j)| a[[(i + h / 2) % h, (j + w / 2) % w]].clone())
}

/// Centered amplitude and phase planes of one slice.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceSpectrum {
    amplitude: Plane,
    phase: Plane,
}

impl SliceSpectrum {
    pub fn new(amplitude: Plane, phase: Plane) -> Result<Self> {
        if amplitude.dim() != phase.dim() {
            return Err(Error::shapes(amplitude.shape(), phase.shape()));
        }
        if let Some(a) = amplitude.iter().find(|a| !(a.is_finite() && **a >= 0.0)) {
            return Err(Error::Invariant(format!("amplitude {a} is not a non-negative number")));
        }
        if phase.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite(phase.iter().filter(|p| !p.is_finite()).count()));
        }
        Ok(Self { amplitude, phase })
    }

    pub fn amplitude(&self) -> &Plane {
        &self.amplitude
    }

    pub fn phase(&self) -> &Plane {
        &self.phase
    }

    pub fn dim(&self) -> (usize, usize) {
        self.amplitude.dim()
    }

    pub fn into_parts(self) -> (Plane, Plane) {
        (self.amplitude, self.phase)
    }
}

pub(crate) fn check_finite(plane: ArrayView2<'_, f64>) -> Result<()> {
    let bad = plane.iter().filter(|x| !x.is_finite()).count();
    if bad > 0 {
        Err(Error::NonFinite(bad))
    } else {
        Ok(())
    }
}

/// Phase in `(-pi, pi]`.
fn principal_arg(z: Complex64) -> f64 {
    let p = z.arg();
    if p <= -PI {
        PI
    } else {
        p
    }
}

/// Forward transform of a slice into centered amplitude and phase.
pub fn decompose(slice: ArrayView2<'_, f64>) -> Result<SliceSpectrum> {
    check_finite(slice)?;
    let (h, w) = slice.dim();
    if h == 0 || w == 0 {
        return Err(Error::Empty("zero-sized slice".into()));
    }
    let mut buf = slice.mapv(|x| Complex64::new(x, 0.0));
    fft2_inplace(&mut buf, false);
    let centered = fftshift(&buf);
    Ok(SliceSpectrum {
        amplitude: centered.mapv(|z| z.norm()),
        phase: centered.mapv(principal_arg),
    })
}

/// Inverse transform returning the real plane and the largest absolute
/// imaginary residual.
pub fn recompose_with_residual(spec: &SliceSpectrum) -> (Plane, f64) {
    let (h, w) = spec.dim();
    let mut centered = Array2::<Complex64>::zeros((h, w));
    Zip::from(&mut centered)
        .and(&spec.amplitude)
        .and(&spec.phase)
        .for_each(|c, &a, &p| *c = Complex64::from_polar(a, p));
    let mut buf = ifftshift(&centered);
    fft2_inplace(&mut buf, true);
    let scale = 1.0 / (h * w) as f64;
    let mut max_imag = 0.0f64;
    let real = buf.mapv(|z| {
        max_imag = max_imag.max((z.im * scale).abs());
        z.re * scale
    });
    (real, max_imag)
}

/// Inverse transform; the real part is returned and a warning is logged if
/// the imaginary residual exceeds [`IMAG_RESIDUAL_LIMIT`].
pub fn recompose(spec: &SliceSpectrum) -> Plane {
    let (plane, residual) = recompose_with_residual(spec);
    if residual > IMAG_RESIDUAL_LIMIT {
        log::warn!("recompose: imaginary residual {residual:.3e} discarded");
    }
    plane
}

/// Radius of the swapped disk for a given `beta`, or `None` for an empty
/// mask.
///
/// The radius is `floor(beta * min(h, w) / 2)` lattice units, so `beta = 1`
/// gives the inscribed disk and any `beta > 0` includes at least the DC
/// term. Isolated here so the parameterization can be changed in one place.
pub fn mask_radius(h: usize, w: usize, beta: f64) -> Option<usize> {
    if beta <= 0.0 {
        return None;
    }
    let r = beta * h.min(w) as f64 / 2.0;
    Some((r + 1e-9).floor() as usize)
}

/// Binary low-frequency disk in centered coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskPlane {
    values: Array2<bool>,
    beta: f64,
}

impl MaskPlane {
    pub fn values(&self) -> &Array2<bool> {
        &self.values
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn dim(&self) -> (usize, usize) {
        self.values.dim()
    }

    pub fn count(&self) -> usize {
        self.values.iter().filter(|&&v| v).count()
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        self.values[[row, col]]
    }
}

/// Disk of radius [`mask_radius`] around the centered DC pixel, boundary
/// inclusive.
pub fn circular_mask(h: usize, w: usize, beta: f64) -> Result<MaskPlane> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::InvalidParam(format!("beta {beta} outside [0, 1]")));
    }
    if h < MIN_SPECTRAL_SIDE || w < MIN_SPECTRAL_SIDE {
        return Err(Error::InvalidParam(format!(
            "mask size {h}x{w} below {MIN_SPECTRAL_SIDE}x{MIN_SPECTRAL_SIDE}"
        )));
    }
    let values = match mask_radius(h, w, beta) {
        None => Array2::from_elem((h, w), false),
        Some(r) => {
            let (cy, cx) = ((h / 2) as i64, (w / 2) as i64);
            let r2 = (r * r) as i64;
            Array2::from_shape_fn((h, w), |(i, j)| {
                let (dy, dx) = (i as i64 - cy, j as i64 - cx);
                dy * dy + dx * dx <= r2
            })
        }
    };
    Ok(MaskPlane { values, beta })
}
