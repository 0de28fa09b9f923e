//! Deterministic synthetic multi-domain head phantoms.
//!
//! Every scan has an anatomy fixed by its anatomy seed: an ellipsoidal
//! "brain" made of two to four intensity compartments, whose support is the
//! ground-truth mask. A domain then applies its appearance model
//!
//! ```text
//! clip(contrast * bias_field * anatomy^gamma + noise, 0, 1)
//! ```
//!
//! with a smooth multiplicative bias field and Gaussian noise.
//!
//! Random streams are ChaCha8 generators seeded with
//! [`derive_seed`]`(seed, index)`, a SplitMix64 mix of the two values, so the
//! output of any scan depends only on its seeds and parameters, not on the
//! order or thread in which scans are generated.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array3, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{save_volume, ScanCollection, Volume, VolumeKind};

/// Default scan shape `(slices, rows, cols)` for benchmarks.
pub const DEFAULT_SHAPE: (usize, usize, usize) = (8, 64, 64);
/// Smallest accepted scan shape.
pub const MIN_SHAPE: (usize, usize, usize) = (4, 32, 32);

const SPACING: [f64; 3] = [3.0, 1.0, 1.0];

/// SplitMix64 finalizer.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the sub-stream `index` of `seed`.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(index))
}

fn rng(seed: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, index))
}

/// Appearance model of one acquisition domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainParams {
    pub gamma: f64,
    pub bias_amplitude: f64,
    pub contrast_scale: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl DomainParams {
    /// The identity appearance: the raw anatomy.
    pub fn identity(seed: u64) -> Self {
        Self {
            gamma: 1.0,
            bias_amplitude: 0.0,
            contrast_scale: 1.0,
            noise_sigma: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.gamma, self.bias_amplitude, self.contrast_scale, self.noise_sigma]
            .iter()
            .all(|x| x.is_finite());
        if !finite
            || self.gamma <= 0.0
            || self.bias_amplitude < 0.0
            || self.contrast_scale <= 0.0
            || self.noise_sigma < 0.0
        {
            return Err(Error::InvalidParam(format!("invalid domain parameters {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Ellipsoid {
    center: [f64; 3],
    radii: [f64; 3],
}

impl Ellipsoid {
    /// Normalized radius; `<= 1` inside.
    fn rho(&self, p: [f64; 3]) -> f64 {
        (0..3)
            .map(|a| ((p[a] - self.center[a]) / self.radii[a]).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

fn smoothstep(edge0: f64, edge1: f64, x: f64) -> f64 {
    let t = ((x - edge0) / (edge1 - edge0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Anatomy intensities in `[0, 1]` and the binary brain support.
fn anatomy(shape: (usize, usize, usize), anatomy_seed: u64) -> (Array3<f64>, Array3<bool>) {
    let mut r = rng(anatomy_seed, 0);
    let brain = Ellipsoid {
        center: [r.random_range(-0.05..0.05), r.random_range(-0.08..0.08), r.random_range(-0.08..0.08)],
        radii: [r.random_range(1.15..1.35), r.random_range(0.62..0.8), r.random_range(0.52..0.7)],
    };
    let compartments = r.random_range(2..=4usize);
    let cortex = 0.55 + r.random_range(-0.03..0.03);
    let white = 0.82 + r.random_range(-0.03..0.03);
    let cortex_depth = r.random_range(0.72..0.85);
    let deep = Ellipsoid {
        center: [r.random_range(-0.2..0.2), r.random_range(-0.2..0.2), r.random_range(-0.2..0.2)],
        radii: [r.random_range(0.5..0.7), r.random_range(0.18..0.28), r.random_range(0.15..0.25)],
    };
    let deep_value = 0.64 + r.random_range(-0.03..0.03);
    let spread = r.random_range(0.08..0.14);
    let ventricles = [-1.0, 1.0].map(|side: f64| Ellipsoid {
        center: [0.0, r.random_range(-0.15..0.05), side * spread],
        radii: [0.6, r.random_range(0.12..0.2), 0.05 + r.random_range(0.0..0.03)],
    });
    let ventricle_value = 0.45 + r.random_range(-0.03..0.03);

    let (s, h, w) = shape;
    let coord = |i: usize, n: usize| 2.0 * (i as f64 + 0.5) / n as f64 - 1.0;
    let mut values = Array3::zeros(shape);
    let mut mask = Array3::from_elem(shape, false);
    Zip::indexed(&mut values).and(&mut mask).for_each(|(k, i, j), v, m| {
        let p = [coord(k, s), coord(i, h), coord(j, w)];
        let rho = brain.rho(p);
        if rho > 1.0 {
            return;
        }
        *m = true;
        let depth = smoothstep(cortex_depth - 0.06, cortex_depth + 0.06, rho);
        let mut x = white + (cortex - white) * depth;
        if compartments >= 3 {
            let t = 1.0 - smoothstep(0.85, 1.0, deep.rho(p));
            x += (deep_value - x) * t;
        }
        if compartments >= 4 {
            for vent in &ventricles {
                let t = 1.0 - smoothstep(0.8, 1.0, vent.rho(p));
                x += (ventricle_value - x) * t;
            }
        }
        *v = x;
    });
    (values, mask)
}

/// Smooth field in `[-1, 1]` built from a few low-frequency cosines.
fn bias_shape(shape: (usize, usize, usize), seed: u64) -> Array3<f64> {
    let mut r = rng(seed, 1);
    let terms: Vec<([f64; 3], f64, f64)> = (0..4)
        .map(|_| {
            let freq = [r.random_range(0.0..0.4), r.random_range(0.2..1.0), r.random_range(0.2..1.0)];
            (freq, r.random_range(0.0..std::f64::consts::TAU), r.random_range(0.5..1.0))
        })
        .collect();
    let total: f64 = terms.iter().map(|t| t.2).sum();
    let (s, h, w) = shape;
    let coord = |i: usize, n: usize| 2.0 * (i as f64 + 0.5) / n as f64 - 1.0;
    Array3::from_shape_fn(shape, |(k, i, j)| {
        let p = [coord(k, s), coord(i, h), coord(j, w)];
        terms
            .iter()
            .map(|(f, phase, amp)| {
                amp * (std::f64::consts::PI * (f[0] * p[0] + f[1] * p[1] + f[2] * p[2]) + phase).cos()
            })
            .sum::<f64>()
            / total
    })
}

/// Generates one scan and its mask.
///
/// The anatomy, and therefore the mask, depends only on `anatomy_seed`. The
/// bias-field shape and the noise are drawn from streams keyed by both the
/// domain seed and the anatomy seed.
pub fn generate_scan(
    shape: (usize, usize, usize),
    anatomy_seed: u64,
    domain: &DomainParams,
) -> Result<(Volume, Volume)> {
    domain.validate()?;
    if shape.0 < MIN_SHAPE.0 || shape.1 < MIN_SHAPE.1 || shape.2 < MIN_SHAPE.2 {
        return Err(Error::InvalidParam(format!(
            "phantom shape {shape:?} below minimum {MIN_SHAPE:?}"
        )));
    }
    let (base, support) = anatomy(shape, anatomy_seed);
    let scan_seed = derive_seed(domain.seed, anatomy_seed);
    let field = bias_shape(shape, scan_seed);
    let mut noise_rng = rng(scan_seed, 2);
    let mut appearance = Array3::<f32>::zeros(shape);
    Zip::from(&mut appearance)
        .and(&base)
        .and(&field)
        .for_each(|out, &a, &f| {
            let bias = 1.0 + domain.bias_amplitude * f;
            let noise: f64 = if domain.noise_sigma > 0.0 {
                domain.noise_sigma * noise_rng.sample::<f64, _>(StandardNormal)
            } else {
                0.0
            };
            *out = (domain.contrast_scale * bias * a.powf(domain.gamma) + noise).clamp(0.0, 1.0) as f32;
        });
    let id = format!("scan{anatomy_seed:016x}");
    let domain_tag = format!("domain{:016x}", domain.seed);
    let intensity = Volume::new(appearance, SPACING, id.clone(), domain_tag.clone(), VolumeKind::Intensity)?;
    let mask = Volume::new(
        support.mapv(|b| if b { 1.0 } else { 0.0 }),
        SPACING,
        format!("{id}_mask"),
        domain_tag,
        VolumeKind::Mask,
    )?;
    Ok((intensity, mask))
}

/// Domain-shift severity tier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Subtle,
    Medium,
    Severe,
}

impl Severity {
    pub const ALL: [Severity; 3] = [Severity::Subtle, Severity::Medium, Severity::Severe];

    /// Appearance of the reference (source) domain, shared by all tiers.
    pub fn reference() -> TierShift {
        TierShift {
            gamma: 1.0,
            bias_amplitude: 0.05,
            contrast_scale: 1.0,
            noise_sigma: 0.02,
        }
    }

    /// Appearance of the most shifted domain of the tier.
    pub fn shifted(self) -> TierShift {
        match self {
            Severity::Subtle => TierShift {
                gamma: 1.08,
                bias_amplitude: 0.08,
                contrast_scale: 0.95,
                noise_sigma: 0.02,
            },
            Severity::Medium => TierShift {
                gamma: 1.35,
                bias_amplitude: 0.18,
                contrast_scale: 0.78,
                noise_sigma: 0.025,
            },
            Severity::Severe => TierShift {
                gamma: 1.75,
                bias_amplitude: 0.3,
                contrast_scale: 0.62,
                noise_sigma: 0.03,
            },
        }
    }
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Severity::Subtle => "subtle",
            Severity::Medium => "medium",
            Severity::Severe => "severe",
        })
    }
}

impl FromStr for Severity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "subtle" => Ok(Severity::Subtle),
            "medium" => Ok(Severity::Medium),
            "severe" => Ok(Severity::Severe),
            other => Err(Error::InvalidParam(format!(
                "unknown severity '{other}' (expected subtle, medium or severe)"
            ))),
        }
    }
}

/// Appearance parameters without a seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TierShift {
    pub gamma: f64,
    pub bias_amplitude: f64,
    pub contrast_scale: f64,
    pub noise_sigma: f64,
}

impl TierShift {
    fn lerp(a: TierShift, b: TierShift, t: f64) -> TierShift {
        let l = |x: f64, y: f64| x + (y - x) * t;
        TierShift {
            gamma: l(a.gamma, b.gamma),
            bias_amplitude: l(a.bias_amplitude, b.bias_amplitude),
            contrast_scale: l(a.contrast_scale, b.contrast_scale),
            noise_sigma: l(a.noise_sigma, b.noise_sigma),
        }
    }

    fn with_seed(self, seed: u64) -> DomainParams {
        DomainParams {
            gamma: self.gamma,
            bias_amplitude: self.bias_amplitude,
            contrast_scale: self.contrast_scale,
            noise_sigma: self.noise_sigma,
            seed,
        }
    }
}

/// Description of one generated domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainEntry {
    pub name: String,
    pub params: DomainParams,
    pub scan_ids: Vec<String>,
    pub anatomy_seeds: Vec<u64>,
}

/// Everything needed to regenerate a benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkManifest {
    pub schema: u32,
    pub seed: u64,
    pub severity: Severity,
    pub shape: [usize; 3],
    pub domains: Vec<DomainEntry>,
}

/// Generated domains (domain 0 is the reference) plus their manifest.
#[derive(Debug, Clone)]
pub struct Benchmark {
    pub collections: Vec<ScanCollection>,
    pub manifest: BenchmarkManifest,
}

/// Domain `k` of `n` sits at fraction `k / (n - 1)` of the way from the
/// reference appearance to the tier's shifted appearance.
pub fn domain_params(severity: Severity, n_domains: usize, k: usize, seed: u64) -> DomainParams {
    let t = if n_domains <= 1 { 0.0 } else { k as f64 / (n_domains - 1) as f64 };
    TierShift::lerp(Severity::reference(), severity.shifted(), t).with_seed(derive_seed(seed, 1_000 + k as u64))
}

/// Anatomy seed of scan `j` in domain `k`. Independent of severity, so the
/// tiers of one seed share their anatomies.
pub fn anatomy_seed(seed: u64, k: usize, j: usize) -> u64 {
    derive_seed(seed, ((k as u64) << 32) | j as u64)
}

pub fn generate_benchmark(n_domains: usize, scans_per_domain: usize, severity: Severity, seed: u64) -> Result<Benchmark> {
    generate_benchmark_with_shape(DEFAULT_SHAPE, n_domains, scans_per_domain, severity, seed)
}

pub fn generate_benchmark_with_shape(
    shape: (usize, usize, usize),
    n_domains: usize,
    scans_per_domain: usize,
    severity: Severity,
    seed: u64,
) -> Result<Benchmark> {
    if n_domains < 2 || scans_per_domain < 2 {
        return Err(Error::InvalidParam(format!(
            "need at least 2 domains and 2 scans per domain, got {n_domains} and {scans_per_domain}"
        )));
    }
    let jobs: Vec<(usize, usize)> = (0..n_domains)
        .flat_map(|k| (0..scans_per_domain).map(move |j| (k, j)))
        .collect();
    let scans = jobs
        .par_iter()
        .map(|&(k, j)| {
            let params = domain_params(severity, n_domains, k, seed);
            let (img, mask) = generate_scan(shape, anatomy_seed(seed, k, j), &params)?;
            let name = format!("{severity}_d{k}");
            let id = format!("{name}_s{j}");
            let img = Volume::new(img.data().clone(), img.spacing(), id.clone(), name.clone(), VolumeKind::Intensity)?;
            let mask = Volume::new(mask.data().clone(), mask.spacing(), format!("{id}_mask"), name, VolumeKind::Mask)?;
            Ok((img, mask))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut collections = Vec::with_capacity(n_domains);
    let mut domains = Vec::with_capacity(n_domains);
    let mut it = scans.into_iter();
    for k in 0..n_domains {
        let name = format!("{severity}_d{k}");
        let (imgs, masks): (Vec<_>, Vec<_>) = it.by_ref().take(scans_per_domain).unzip();
        domains.push(DomainEntry {
            name: name.clone(),
            params: domain_params(severity, n_domains, k, seed),
            scan_ids: imgs.iter().map(|v: &Volume| v.id().to_string()).collect(),
            anatomy_seeds: (0..scans_per_domain).map(|j| anatomy_seed(seed, k, j)).collect(),
        });
        collections.push(ScanCollection::new(name, imgs, Some(masks))?);
    }
    Ok(Benchmark {
        collections,
        manifest: BenchmarkManifest {
            schema: 1,
            seed,
            severity,
            shape: [shape.0, shape.1, shape.2],
            domains,
        },
    })
}

/// Writes `<domain>/<scan_id>.vol` (+ `_mask.vol`) for every scan of every
/// benchmark, and a `benchmark.json` manifest listing them.
pub fn write_benchmarks(dir: &Path, benchmarks: &[Benchmark]) -> Result<Vec<std::path::PathBuf>> {
    let mut written = Vec::new();
    for b in benchmarks {
        for c in &b.collections {
            let sub = dir.join(c.domain());
            let masks = c.masks().expect("phantom collections carry masks");
            for (scan, mask) in c.scans().iter().zip(masks) {
                let p = sub.join(format!("{}.vol", scan.id()));
                save_volume(scan, &p)?;
                written.push(p);
                let p = sub.join(format!("{}_mask.vol", scan.id()));
                save_volume(mask, &p)?;
                written.push(p);
            }
        }
    }
    let manifests: Vec<&BenchmarkManifest> = benchmarks.iter().map(|b| &b.manifest).collect();
    let path = dir.join("benchmark.json");
    let json = serde_json::json!({ "schema": 1, "benchmarks": manifests });
    fs::write(&path, serde_json::to_string_pretty(&json).expect("manifest serializes") + "\n")
        .map_err(|e| Error::io(&path, e))?;
    written.push(path);
    Ok(written)
}
