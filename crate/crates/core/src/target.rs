//! Target-domain densities and sampling from their Wasserstein
//! interpolation set.
//!
//! Interpolation happens in quantile space: the interpolated density has
//! quantile function `Σ θ_i Q_i`, which is then rediscretized onto the 256
//! brightness levels.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::UNIX_EPOCH;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::density::{estimate_density, to_quantile, DensityHistogram, QuantileFunction, DEFAULT_GRID};
use crate::error::{Error, Result};
use crate::image::{to_brightness, BrightnessImage};

/// Quantile functions of the target-domain hazy images.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetDomain {
    quantiles: Vec<QuantileFunction>,
    source_ids: Vec<String>,
}

impl TargetDomain {
    pub fn new(quantiles: Vec<QuantileFunction>, source_ids: Vec<String>) -> Result<Self> {
        if quantiles.is_empty() {
            return Err(Error::invalid("target domain needs at least one image"));
        }
        if quantiles.len() != source_ids.len() {
            return Err(Error::invalid("one source id per quantile function required"));
        }
        let m = quantiles[0].grid_size();
        if quantiles.iter().any(|q| q.grid_size() != m) {
            return Err(Error::invalid("target quantiles use different grid sizes"));
        }
        Ok(Self {
            quantiles,
            source_ids,
        })
    }

    pub fn len(&self) -> usize {
        self.quantiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.quantiles.is_empty()
    }

    pub fn grid_size(&self) -> usize {
        self.quantiles[0].grid_size()
    }

    pub fn quantiles(&self) -> &[QuantileFunction] {
        &self.quantiles
    }

    pub fn source_ids(&self) -> &[String] {
        &self.source_ids
    }
}

/// Builds a domain on the default grid, naming members by their position.
pub fn build_target_domain(images: &[BrightnessImage]) -> Result<TargetDomain> {
    let ids = (0..images.len()).map(|i| i.to_string()).collect();
    build_target_domain_with_ids(images, ids, DEFAULT_GRID)
}

pub fn build_target_domain_with_ids(
    images: &[BrightnessImage],
    source_ids: Vec<String>,
    grid: usize,
) -> Result<TargetDomain> {
    if images.is_empty() {
        return Err(Error::invalid("target domain needs at least one image"));
    }
    let quantiles = images
        .iter()
        .map(|b| to_quantile(&estimate_density(b)?, grid))
        .collect::<Result<Vec<_>>>()?;
    TargetDomain::new(quantiles, source_ids)
}

/// Point of the probability simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SimplexWeights {
    theta: Vec<f64>,
}

impl SimplexWeights {
    pub fn new(theta: Vec<f64>) -> Result<Self> {
        if theta.is_empty() || theta.iter().any(|t| !(*t >= 0.0)) {
            return Err(Error::invalid("simplex weights must be nonnegative and nonempty"));
        }
        let s: f64 = theta.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("simplex weights sum to {s}")));
        }
        Ok(Self { theta })
    }

    /// Standard basis vector `e_i` of length `k`.
    pub fn vertex(k: usize, i: usize) -> Result<Self> {
        if i >= k {
            return Err(Error::invalid("vertex index out of range"));
        }
        let mut theta = vec![0.0; k];
        theta[i] = 1.0;
        Ok(Self { theta })
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }
}

/// Quantile-space average of the domain members, rediscretized to a histogram.
pub fn interpolate_target(domain: &TargetDomain, w: &SimplexWeights) -> Result<DensityHistogram> {
    Ok(interpolate_quantile(domain, w)?.to_histogram())
}

pub fn interpolate_quantile(domain: &TargetDomain, w: &SimplexWeights) -> Result<QuantileFunction> {
    if w.theta.len() != domain.len() {
        return Err(Error::invalid(format!(
            "{} weights for a domain of {} images",
            w.theta.len(),
            domain.len()
        )));
    }
    let m = domain.grid_size();
    let mut values = vec![0.0; m];
    for (q, &t) in domain.quantiles.iter().zip(&w.theta) {
        if t == 0.0 {
            continue;
        }
        for (v, qv) in values.iter_mut().zip(q.values()) {
            *v += t * qv;
        }
    }
    // Floating error can push the combination a hair outside [0, 255] or
    // out of order; the exact combination is monotone and in range.
    let mut prev = 0.0f64;
    for v in &mut values {
        *v = v.clamp(prev, 255.0);
        prev = *v;
    }
    QuantileFunction::new(values)
}

/// Deterministic RNG for a seed.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform draw from the `(K-1)`-simplex (flat Dirichlet).
pub fn sample_theta(k: usize, seed: u64) -> Result<SimplexWeights> {
    sample_theta_with(k, &mut rng_from_seed(seed))
}

pub fn sample_theta_with<R: Rng + ?Sized>(k: usize, rng: &mut R) -> Result<SimplexWeights> {
    if k < 1 {
        return Err(Error::invalid("need at least one simplex vertex"));
    }
    if k == 1 {
        return Ok(SimplexWeights { theta: vec![1.0] });
    }
    let draws: Vec<f64> = (0..k).map(|_| rng.sample::<f64, _>(Exp1)).collect();
    let total: f64 = draws.iter().sum();
    Ok(SimplexWeights {
        theta: draws.into_iter().map(|e| e / total).collect(),
    })
}

/// Flat Dirichlet over a random `subset`-element subset of the `k`
/// vertices; all other weights are zero.
pub fn sample_theta_subset<R: Rng + ?Sized>(
    k: usize,
    subset: usize,
    rng: &mut R,
) -> Result<SimplexWeights> {
    if subset < 1 {
        return Err(Error::invalid("subset size must be >= 1"));
    }
    if subset >= k {
        return sample_theta_with(k, rng);
    }
    let mut chosen = index::sample(rng, k, subset).into_vec();
    chosen.sort_unstable();
    let inner = sample_theta_with(subset, rng)?;
    let mut theta = vec![0.0; k];
    for (i, t) in chosen.into_iter().zip(inner.theta) {
        theta[i] = t;
    }
    Ok(SimplexWeights { theta })
}

/// A randomized density target together with the draws that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomTarget {
    pub control_points: Vec<f64>,
    pub density: DensityHistogram,
}

/// Random density target: `k` sorted uniform draws on [0, 255] placed at
/// equally spaced grid anchors, linearly interpolated into a quantile
/// function.
pub fn random_target(seed: u64, control_points: usize) -> Result<RandomTarget> {
    random_target_with(&mut rng_from_seed(seed), control_points, DEFAULT_GRID)
}

pub fn random_target_with<R: Rng + ?Sized>(
    rng: &mut R,
    control_points: usize,
    grid: usize,
) -> Result<RandomTarget> {
    if control_points < 2 {
        return Err(Error::invalid("random targets need at least two control points"));
    }
    let mut points: Vec<f64> = (0..control_points)
        .map(|_| rng.random_range(0.0..=255.0))
        .collect();
    points.sort_by(f64::total_cmp);
    let density = quantile_from_control_points(&points, grid)?.to_histogram();
    Ok(RandomTarget {
        control_points: points,
        density,
    })
}

/// Piecewise-linear quantile function through sorted control points placed
/// at grid positions `j (m-1)/(k-1)`.
pub fn quantile_from_control_points(points: &[f64], grid: usize) -> Result<QuantileFunction> {
    if points.len() < 2 || grid < 1 {
        return Err(Error::invalid("need >= 2 control points and a nonempty grid"));
    }
    let segments = (points.len() - 1) as f64;
    let values = (0..grid)
        .map(|i| {
            let pos = if grid == 1 {
                0.0
            } else {
                i as f64 * segments / (grid - 1) as f64
            };
            let j = (pos.floor() as usize).min(points.len() - 2);
            let frac = pos - j as f64;
            points[j] + frac * (points[j + 1] - points[j])
        })
        .collect();
    QuantileFunction::new(values)
}

const INDEX_FILE: &str = "hazemix_targets.json";
const INDEX_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct DomainIndex {
    version: u32,
    grid_size: usize,
    entries: Vec<IndexEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct IndexEntry {
    source_id: String,
    file: String,
    sidecar: String,
    size: u64,
    mtime_ns: u128,
}

fn file_stamp(path: &Path) -> Result<(u64, u128)> {
    let meta = fs::metadata(path).map_err(|source| Error::Read {
        path: path.to_owned(),
        source,
    })?;
    let mtime = meta
        .modified()
        .ok()
        .and_then(|t| t.duration_since(UNIX_EPOCH).ok())
        .map(|d| d.as_nanos())
        .unwrap_or(0);
    Ok((meta.len(), mtime))
}

pub fn is_image_file(path: &Path) -> bool {
    matches!(
        path.extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .as_deref(),
        Some("png" | "jpg" | "jpeg")
    )
}

/// Image files of a directory, sorted by file name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let rd = fs::read_dir(dir).map_err(|source| Error::Read {
        path: dir.to_owned(),
        source,
    })?;
    let mut files = Vec::new();
    for entry in rd {
        let entry = entry.map_err(|source| Error::Read {
            path: dir.to_owned(),
            source,
        })?;
        let p = entry.path();
        if p.is_file() && is_image_file(&p) {
            files.push(p);
        }
    }
    files.sort();
    Ok(files)
}

/// Loads every image of `dir` into a target domain, reusing per-image
/// histogram sidecars whose recorded file size and mtime still match.
/// Fresh sidecars and the index are written back when the directory is
/// writable.
pub fn load_target_dir(dir: &Path, grid: usize) -> Result<TargetDomain> {
    let files = list_images(dir)?;
    if files.is_empty() {
        return Err(Error::invalid(format!("no images in target directory {}", dir.display())));
    }
    let index_path = dir.join(INDEX_FILE);
    let cached: Vec<IndexEntry> = fs::read_to_string(&index_path)
        .ok()
        .and_then(|t| serde_json::from_str::<DomainIndex>(&t).ok())
        .filter(|ix| ix.version == INDEX_VERSION)
        .map(|ix| ix.entries)
        .unwrap_or_default();

    let mut quantiles = Vec::with_capacity(files.len());
    let mut ids = Vec::with_capacity(files.len());
    let mut entries = Vec::with_capacity(files.len());
    let mut dirty = false;
    for path in &files {
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        let id = path.file_stem().unwrap().to_string_lossy().into_owned();
        let sidecar = format!("{name}.density.json");
        let (size, mtime_ns) = file_stamp(path)?;
        let hit = cached
            .iter()
            .find(|e| e.file == name && e.size == size && e.mtime_ns == mtime_ns)
            .and_then(|e| DensityHistogram::load(dir.join(&e.sidecar)).ok());
        let hist = match hit {
            Some(h) => h,
            None => {
                dirty = true;
                let h = estimate_density(&to_brightness(&crate::io::load_image(path)?))?;
                if let Err(e) = h.save(dir.join(&sidecar)) {
                    log::warn!("cannot cache density for {}: {e}", path.display());
                }
                h
            }
        };
        quantiles.push(to_quantile(&hist, grid)?);
        ids.push(id.clone());
        entries.push(IndexEntry {
            source_id: id,
            file: name,
            sidecar,
            size,
            mtime_ns,
        });
    }
    if dirty || cached.len() != entries.len() {
        let index = DomainIndex {
            version: INDEX_VERSION,
            grid_size: grid,
            entries,
        };
        let text = serde_json::to_string_pretty(&index).expect("index serializes");
        if let Err(e) = crate::io::write_atomic(&index_path, text.as_bytes()) {
            log::warn!("cannot write target index: {e}");
        }
    }
    TargetDomain::new(quantiles, ids)
}
