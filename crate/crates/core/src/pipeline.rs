//! Dataset-level augmentation runs.
//!
//! Every sample draws its randomness from its own stream, seeded by a hash
//! of (run seed, pair id, sample index), so the output tree does not depend
//! on directory iteration order or on the number of worker threads.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::airlight::{estimate_airlight, AtmosphericLight};
use crate::alignment::{damix, scalar_damix, DamixSample};
use crate::density::{estimate_density, wasserstein, DensityHistogram, DEFAULT_GRID};
use crate::error::{Error, Result};
use crate::image::{check_dims, to_brightness, RgbImage};
use crate::io::{encode_pfm, encode_png, load_image, write_atomic};
use crate::solver::{pgd_solve, SolverConfig, MAX_SIDE};
use crate::target::{
    interpolate_target, is_image_file, quantile_from_control_points, random_target_with,
    rng_from_seed, sample_theta_subset, sample_theta_with, SimplexWeights, TargetDomain,
};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const THREADS_ENV: &str = "HAZEMIX_THREADS";
const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Targets interpolated from a target-domain image set.
    Adapt,
    /// Randomized targets, no target images needed.
    Generalize,
    /// Global scalar mix matched to the target's mean brightness.
    ScalarAblation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairEntry {
    pub id: String,
    pub hazy: PathBuf,
    pub clean: PathBuf,
}

/// Paired hazy / ground-truth images of a source dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pairs: Vec<PairEntry>,
}

impl DatasetManifest {
    pub fn new(mut pairs: Vec<PairEntry>) -> Result<Self> {
        let mut seen = HashSet::new();
        for p in &pairs {
            if !seen.insert(p.id.as_str()) {
                return Err(Error::invalid(format!("duplicate pair id {:?}", p.id)));
            }
        }
        pairs.sort_by(|a, b| a.id.cmp(&b.id));
        Ok(Self { pairs })
    }

    /// Pairs `<id>_hazy.<ext>` with `<id>_GT.<ext>` in `dir`. Hazy images
    /// without a ground truth are skipped with a warning.
    pub fn scan(dir: &Path) -> Result<Self> {
        let rd = fs::read_dir(dir).map_err(|source| Error::Read {
            path: dir.to_owned(),
            source,
        })?;
        let mut files = Vec::new();
        for entry in rd {
            let p = entry
                .map_err(|source| Error::Read {
                    path: dir.to_owned(),
                    source,
                })?
                .path();
            if p.is_file() && is_image_file(&p) {
                files.push(p);
            }
        }
        files.sort();
        let mut pairs = Vec::new();
        for hazy in &files {
            let stem = hazy.file_stem().unwrap().to_string_lossy();
            let Some(id) = stem.strip_suffix("_hazy") else {
                continue;
            };
            let clean = files.iter().find(|c| {
                c.file_stem()
                    .map(|s| s.to_string_lossy() == format!("{id}_GT"))
                    .unwrap_or(false)
            });
            match clean {
                Some(clean) => pairs.push(PairEntry {
                    id: id.to_owned(),
                    hazy: hazy.clone(),
                    clean: clean.clone(),
                }),
                None => log::warn!("no ground truth for {}", hazy.display()),
            }
        }
        if pairs.is_empty() {
            return Err(Error::invalid(format!("no <id>_hazy / <id>_GT pairs in {}", dir.display())));
        }
        Self::new(pairs)
    }

    /// Reads an explicit pair list: a JSON array of `{id, hazy, clean}`,
    /// paths relative to the list file.
    pub fn from_pairs_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| Error::Read {
            path: path.to_owned(),
            source,
        })?;
        let mut pairs: Vec<PairEntry> = serde_json::from_str(&text).map_err(|e| Error::Sidecar {
            path: path.to_owned(),
            reason: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in &mut pairs {
            p.hazy = base.join(&p.hazy);
            p.clean = base.join(&p.clean);
        }
        Self::new(pairs)
    }

    pub fn pairs(&self) -> &[PairEntry] {
        &self.pairs
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub mode: Mode,
    pub seed: u64,
    pub samples_per_pair: usize,
    pub p: f64,
    pub airlight_override: Option<AtmosphericLight>,
    pub subset_k: Option<usize>,
    /// Control points of randomized targets.
    pub control_points: usize,
    pub grid: usize,
    /// Run the reference solver on each sample (images up to 64×64).
    pub oracle: bool,
    /// Write weight maps and histograms next to each sample.
    pub debug_dump: bool,
    /// Worker count; `None` reads `HAZEMIX_THREADS`, then uses all cores.
    pub threads: Option<usize>,
    pub output_dir: PathBuf,
}

impl RunConfig {
    pub fn new(mode: Mode, seed: u64, output_dir: impl Into<PathBuf>) -> Self {
        Self {
            mode,
            seed,
            samples_per_pair: 1,
            p: 1.0,
            airlight_override: None,
            subset_k: None,
            control_points: 8,
            grid: DEFAULT_GRID,
            oracle: false,
            debug_dump: false,
            threads: None,
            output_dir: output_dir.into(),
        }
    }

    fn validate(&self, domain: Option<&TargetDomain>) -> Result<()> {
        if self.samples_per_pair < 1 {
            return Err(Error::invalid("samples per pair must be >= 1"));
        }
        if !(self.p >= 1.0) {
            return Err(Error::invalid("Wasserstein order must be >= 1"));
        }
        if self.subset_k == Some(0) {
            return Err(Error::invalid("subset size must be >= 1"));
        }
        if self.control_points < 2 {
            return Err(Error::invalid("need at least two control points"));
        }
        if self.mode == Mode::Adapt && domain.is_none() {
            return Err(Error::invalid("adapt mode needs a target domain"));
        }
        if let Some(d) = domain {
            if d.grid_size() != self.grid {
                return Err(Error::invalid("target domain grid differs from run grid"));
            }
        }
        Ok(())
    }
}

/// Seed of one sample's random stream.
pub fn sample_seed(seed: u64, pair_id: &str, index: usize) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((pair_id.len() as u64).to_le_bytes());
    h.update(pair_id.as_bytes());
    h.update((index as u64).to_le_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

/// How a sample's density target was obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SampleTarget {
    Interpolated { theta: Vec<f64> },
    Random { control_points: Vec<f64> },
}

impl SampleTarget {
    /// Recomputes the target histogram from the recorded draws.
    pub fn resolve(&self, domain: Option<&TargetDomain>, grid: usize) -> Result<DensityHistogram> {
        match self {
            SampleTarget::Interpolated { theta } => {
                let domain = domain.ok_or_else(|| Error::invalid("interpolated target needs a target domain"))?;
                interpolate_target(domain, &SimplexWeights::new(theta.clone())?)
            }
            SampleTarget::Random { control_points } => {
                Ok(quantile_from_control_points(control_points, grid)?.to_histogram())
            }
        }
    }
}

/// Draws the target of one sample.
pub fn draw_target(
    cfg: &RunConfig,
    domain: Option<&TargetDomain>,
    sample_seed: u64,
) -> Result<(SampleTarget, DensityHistogram)> {
    let mut rng = rng_from_seed(sample_seed);
    match (cfg.mode, domain) {
        (Mode::Generalize, _) | (Mode::ScalarAblation, None) => {
            let t = random_target_with(&mut rng, cfg.control_points, cfg.grid)?;
            Ok((
                SampleTarget::Random {
                    control_points: t.control_points,
                },
                t.density,
            ))
        }
        (_, Some(domain)) => {
            let theta = match cfg.subset_k {
                Some(k) => sample_theta_subset(domain.len(), k, &mut rng)?,
                None => sample_theta_with(domain.len(), &mut rng)?,
            };
            let density = interpolate_target(domain, &theta)?;
            Ok((
                SampleTarget::Interpolated {
                    theta: theta.theta().to_vec(),
                },
                density,
            ))
        }
        (Mode::Adapt, None) => Err(Error::invalid("adapt mode needs a target domain")),
    }
}

/// Augments one pair toward `target` according to the run mode.
pub fn augment_pair(
    hazy: &RgbImage,
    clean: &RgbImage,
    airlight: AtmosphericLight,
    target: &DensityHistogram,
    mode: Mode,
    p: f64,
) -> Result<DamixSample> {
    match mode {
        Mode::Adapt | Mode::Generalize => damix(hazy, clean, airlight, target, p),
        Mode::ScalarAblation => {
            let image = scalar_damix(hazy, clean, airlight, target.mean())?;
            let achieved_density = estimate_density(&to_brightness(&image))?;
            let residual_distance = wasserstein(&achieved_density, target, p)?;
            Ok(DamixSample {
                image,
                weights: crate::alignment::MixWeights::zeros(hazy.width(), hazy.height()),
                achieved_density,
                target_density: target.clone(),
                residual_distance,
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    pub index: usize,
    pub file: String,
    pub sample_seed: u64,
    pub airlight: [u8; 3],
    pub target: SampleTarget,
    /// Distance between the source hazy density and the target.
    pub initial_distance: f64,
    pub residual_distance: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle_objective: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: u32,
    pub mode: Mode,
    pub seed: u64,
    pub samples_per_pair: usize,
    pub p: f64,
    pub subset_k: Option<usize>,
    pub control_points: usize,
    pub grid_size: usize,
    pub target_ids: Option<Vec<String>>,
    pub samples: Vec<SampleRecord>,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| Error::Read {
            path: path.to_owned(),
            source,
        })?;
        let m: Self = serde_json::from_str(&text).map_err(|e| Error::Sidecar {
            path: path.to_owned(),
            reason: e.to_string(),
        })?;
        if m.version != MANIFEST_VERSION {
            return Err(Error::Sidecar {
                path: path.to_owned(),
                reason: format!("unsupported manifest version {}", m.version),
            });
        }
        Ok(m)
    }
}

pub fn sample_file_name(id: &str, index: usize) -> String {
    format!("{id}_damix{index}.png")
}

fn thread_count(cfg: &RunConfig) -> Result<usize> {
    if let Some(t) = cfg.threads {
        return Ok(t.max(1));
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&t| t >= 1)
            .ok_or_else(|| Error::invalid(format!("{THREADS_ENV} must be a positive integer, got {v:?}"))),
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

fn load_pair(pair: &PairEntry) -> Result<(RgbImage, RgbImage)> {
    let hazy = load_image(&pair.hazy)?;
    let clean = load_image(&pair.clean)?;
    check_dims(hazy.dims(), clean.dims()).map_err(|_| {
        Error::invalid(format!(
            "pair {:?}: hazy is {:?} but ground truth is {:?}",
            pair.id,
            hazy.dims(),
            clean.dims()
        ))
    })?;
    Ok((hazy, clean))
}

fn process_pair(pair: &PairEntry, domain: Option<&TargetDomain>, cfg: &RunConfig) -> Result<Vec<SampleRecord>> {
    let (hazy, clean) = load_pair(pair)?;
    let airlight = match cfg.airlight_override {
        Some(a) => a,
        None => estimate_airlight(&hazy)?,
    };
    let out = &cfg.output_dir;
    write_atomic(&out.join(format!("{}_GT.png", pair.id)), &encode_png(&clean))?;
    let initial = estimate_density(&to_brightness(&hazy))?;
    let mut records = Vec::with_capacity(cfg.samples_per_pair);
    for index in 0..cfg.samples_per_pair {
        let seed = sample_seed(cfg.seed, &pair.id, index);
        let (target_rec, target) = draw_target(cfg, domain, seed)?;
        let sample = augment_pair(&hazy, &clean, airlight, &target, cfg.mode, cfg.p)?;
        let file = sample_file_name(&pair.id, index);
        write_atomic(&out.join(&file), &encode_png(&sample.image))?;
        if cfg.debug_dump {
            dump_debug(out, &pair.id, index, &sample)?;
        }
        let oracle_objective = if cfg.oracle && cfg.mode != Mode::ScalarAblation {
            run_oracle(&hazy, &clean, airlight, &target, &pair.id)?
        } else {
            None
        };
        records.push(SampleRecord {
            id: pair.id.clone(),
            index,
            file,
            sample_seed: seed,
            airlight: airlight.rgb(),
            target: target_rec,
            initial_distance: wasserstein(&initial, &target, cfg.p)?,
            residual_distance: sample.residual_distance,
            oracle_objective,
        });
    }
    Ok(records)
}

fn run_oracle(
    hazy: &RgbImage,
    clean: &RgbImage,
    airlight: AtmosphericLight,
    target: &DensityHistogram,
    id: &str,
) -> Result<Option<f64>> {
    if hazy.width() > MAX_SIDE || hazy.height() > MAX_SIDE {
        log::warn!("pair {id}: too large for the reference solver, skipped");
        return Ok(None);
    }
    let hb = to_brightness(hazy);
    let out = pgd_solve(&hb, &to_brightness(clean), airlight.brightness(), target, &SolverConfig::default())?;
    Ok(Some(out.objective))
}

fn dump_debug(out: &Path, id: &str, index: usize, sample: &DamixSample) -> Result<()> {
    let (w, h) = sample.weights.dims();
    let to_f32 = |v: &[f64]| v.iter().map(|&x| x as f32).collect::<Vec<_>>();
    let stem = format!("{id}_damix{index}");
    write_atomic(
        &out.join(format!("{stem}_alpha.pfm")),
        &encode_pfm(w, h, &to_f32(sample.weights.alpha())),
    )?;
    write_atomic(
        &out.join(format!("{stem}_beta.pfm")),
        &encode_pfm(w, h, &to_f32(sample.weights.beta())),
    )?;
    sample.achieved_density.save(out.join(format!("{stem}_achieved.json")))?;
    sample.target_density.save(out.join(format!("{stem}_target.json")))
}

/// Augments every pair and writes images plus `manifest.json` to the
/// output directory.
pub fn run_augment(
    dataset: &DatasetManifest,
    domain: Option<&TargetDomain>,
    cfg: &RunConfig,
) -> Result<RunManifest> {
    cfg.validate(domain)?;
    fs::create_dir_all(&cfg.output_dir).map_err(|source| Error::Write {
        path: cfg.output_dir.clone(),
        source,
    })?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(thread_count(cfg)?)
        .build()
        .map_err(|e| Error::invalid(format!("cannot start worker pool: {e}")))?;
    let per_pair: Vec<Result<Vec<SampleRecord>>> = pool.install(|| {
        dataset
            .pairs
            .par_iter()
            .map(|pair| process_pair(pair, domain, cfg))
            .collect()
    });
    let mut samples = Vec::new();
    for r in per_pair {
        samples.extend(r?);
    }
    let manifest = RunManifest {
        version: MANIFEST_VERSION,
        mode: cfg.mode,
        seed: cfg.seed,
        samples_per_pair: cfg.samples_per_pair,
        p: cfg.p,
        subset_k: cfg.subset_k,
        control_points: cfg.control_points,
        grid_size: cfg.grid,
        target_ids: domain.map(|d| d.source_ids().to_vec()),
        samples,
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_atomic(&cfg.output_dir.join(MANIFEST_FILE), text.as_bytes())?;
    Ok(manifest)
}

/// Regenerates a recorded sample from its pair and the recorded draws.
pub fn replay_sample(
    record: &SampleRecord,
    manifest: &RunManifest,
    pair: &PairEntry,
    domain: Option<&TargetDomain>,
) -> Result<RgbImage> {
    let (hazy, clean) = load_pair(pair)?;
    let target = record.target.resolve(domain, manifest.grid_size)?;
    let sample = augment_pair(
        &hazy,
        &clean,
        AtmosphericLight::new(record.airlight),
        &target,
        manifest.mode,
        manifest.p,
    )?;
    Ok(sample.image)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::save_image;

    #[test]
    fn sample_seed_is_stable_and_distinct() {
        assert_eq!(sample_seed(42, "a", 0), sample_seed(42, "a", 0));
        let seeds: HashSet<_> = [
            sample_seed(42, "a", 0),
            sample_seed(42, "a", 1),
            sample_seed(42, "b", 0),
            sample_seed(43, "a", 0),
            sample_seed(42, "a1", 0),
        ]
        .into_iter()
        .collect();
        assert_eq!(seeds.len(), 5);
    }

    #[test]
    fn scan_pairs_by_suffix() {
        let dir = tempfile::tempdir().unwrap();
        let img = RgbImage::filled(2, 2, [1, 2, 3]).unwrap();
        for name in ["b_hazy.png", "b_GT.png", "a_hazy.png", "a_GT.png", "lonely_hazy.png", "x.png"] {
            save_image(&img, dir.path().join(name)).unwrap();
        }
        let ds = DatasetManifest::scan(dir.path()).unwrap();
        let ids: Vec<_> = ds.pairs().iter().map(|p| p.id.as_str()).collect();
        assert_eq!(ids, ["a", "b"]);
        assert!(ds.pairs()[0].clean.ends_with("a_GT.png"));
    }

    #[test]
    fn pairs_file_and_duplicates() {
        let dir = tempfile::tempdir().unwrap();
        let list = dir.path().join("pairs.json");
        fs::write(&list, r#"[{"id":"p","hazy":"h.png","clean":"c.png"}]"#).unwrap();
        let ds = DatasetManifest::from_pairs_file(&list).unwrap();
        assert_eq!(ds.pairs()[0].hazy, dir.path().join("h.png"));
        let dup = PairEntry {
            id: "p".into(),
            hazy: "h".into(),
            clean: "c".into(),
        };
        assert!(DatasetManifest::new(vec![dup.clone(), dup]).is_err());
    }

    #[test]
    fn mismatched_pair_dims_rejected() {
        let dir = tempfile::tempdir().unwrap();
        save_image(&RgbImage::filled(3, 2, [9; 3]).unwrap(), dir.path().join("q_hazy.png")).unwrap();
        save_image(&RgbImage::filled(2, 3, [9; 3]).unwrap(), dir.path().join("q_GT.png")).unwrap();
        let ds = DatasetManifest::scan(dir.path()).unwrap();
        let mut cfg = RunConfig::new(Mode::Generalize, 1, dir.path().join("out"));
        cfg.threads = Some(1);
        let err = run_augment(&ds, None, &cfg).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
    }

    #[test]
    fn adapt_without_domain_rejected() {
        let ds = DatasetManifest::new(vec![]).unwrap();
        let cfg = RunConfig::new(Mode::Adapt, 1, "unused");
        assert!(run_augment(&ds, None, &cfg).is_err());
    }

    #[test]
    fn draw_target_is_deterministic() {
        let cfg = RunConfig::new(Mode::Generalize, 5, "unused");
        let a = draw_target(&cfg, None, 77).unwrap();
        assert_eq!(a, draw_target(&cfg, None, 77).unwrap());
        assert_eq!(a.0.resolve(None, cfg.grid).unwrap(), a.1);
    }
}
