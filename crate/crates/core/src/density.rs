//! Haze density as a distribution over the 256 brightness levels, its
//! quantile function, and 1-D Wasserstein distances.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::BrightnessImage;

pub const LEVELS: usize = 256;

/// Default number of midpoint samples of a quantile function.
pub const DEFAULT_GRID: usize = 4096;

const SIDECAR_VERSION: u32 = 1;

/// Normalized 256-bin brightness histogram.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityHistogram {
    bins: [f64; LEVELS],
    pixel_count: u64,
}

impl DensityHistogram {
    /// Builds a histogram from nonnegative weights, normalizing them.
    pub fn from_weights(weights: &[f64], pixel_count: u64) -> Result<Self> {
        if weights.len() != LEVELS {
            return Err(Error::invalid(format!(
                "histogram needs {LEVELS} bins, got {}",
                weights.len()
            )));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::invalid("histogram bins must be finite and nonnegative"));
        }
        if pixel_count == 0 {
            return Err(Error::invalid("pixel_count must be positive"));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::invalid("histogram has no mass"));
        }
        let mut bins = [0.0; LEVELS];
        for (b, w) in bins.iter_mut().zip(weights) {
            *b = w / total;
        }
        Ok(Self { bins, pixel_count })
    }

    /// Builds a histogram from bins that must already sum to one.
    pub fn from_normalized(bins: &[f64], pixel_count: u64) -> Result<Self> {
        let total: f64 = bins.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("histogram sums to {total}, not 1")));
        }
        if bins.len() != LEVELS || bins.iter().any(|w| !(*w >= 0.0)) || pixel_count == 0 {
            return Err(Error::invalid("malformed histogram"));
        }
        let mut out = [0.0; LEVELS];
        out.copy_from_slice(bins);
        Ok(Self {
            bins: out,
            pixel_count,
        })
    }

    /// Point mass at `level`.
    pub fn dirac(level: u8) -> Self {
        let mut bins = [0.0; LEVELS];
        bins[level as usize] = 1.0;
        Self {
            bins,
            pixel_count: 1,
        }
    }

    pub fn bins(&self) -> &[f64; LEVELS] {
        &self.bins
    }

    pub fn pixel_count(&self) -> u64 {
        self.pixel_count
    }

    pub fn mean(&self) -> f64 {
        self.bins
            .iter()
            .enumerate()
            .map(|(v, p)| v as f64 * p)
            .sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&HistogramSidecar {
            version: SIDECAR_VERSION,
            pixel_count: self.pixel_count,
            bins: self.bins.to_vec(),
        })
        .expect("histogram serializes")
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, String> {
        let raw: HistogramSidecar = serde_json::from_str(text).map_err(|e| e.to_string())?;
        if raw.version != SIDECAR_VERSION {
            return Err(format!("unsupported sidecar version {}", raw.version));
        }
        Self::from_normalized(&raw.bins, raw.pixel_count).map_err(|e| e.to_string())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::io::write_atomic(path.as_ref(), self.to_json().as_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| Error::Read {
            path: path.to_owned(),
            source,
        })?;
        Self::from_json(&text).map_err(|reason| Error::Sidecar {
            path: path.to_owned(),
            reason,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct HistogramSidecar {
    version: u32,
    pixel_count: u64,
    bins: Vec<f64>,
}

/// Generalized inverse CDF sampled at the midpoints `(k + 0.5) / m`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileFunction {
    values: Vec<f64>,
}

impl QuantileFunction {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("quantile grid is empty"));
        }
        if values.iter().any(|v| !(0.0..=255.0).contains(v)) {
            return Err(Error::invalid("quantile values must lie in [0, 255]"));
        }
        if values.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::invalid("quantile values must be nondecreasing"));
        }
        Ok(Self { values })
    }

    pub fn grid_size(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Rediscretizes onto the 256 levels: each grid value is rounded to a
    /// level and contributes mass `1/m`.
    pub fn to_histogram(&self) -> DensityHistogram {
        let m = self.values.len();
        let mut counts = [0u64; LEVELS];
        for &v in &self.values {
            counts[crate::image::quantize(v) as usize] += 1;
        }
        let mut bins = [0.0; LEVELS];
        for (b, c) in bins.iter_mut().zip(counts) {
            *b = c as f64 / m as f64;
        }
        DensityHistogram {
            bins,
            pixel_count: m as u64,
        }
    }

    /// `((1/m) Σ |Q_a[k] - Q_b[k]|^p)^(1/p)`.
    pub fn distance(&self, other: &Self, p: f64) -> Result<f64> {
        check_order(p)?;
        if self.grid_size() != other.grid_size() {
            return Err(Error::invalid("quantile grids differ in size"));
        }
        let m = self.grid_size() as f64;
        let pairs = self.values.iter().zip(&other.values);
        if p == 1.0 {
            return Ok(pairs.map(|(a, b)| (a - b).abs()).sum::<f64>() / m);
        }
        // Scaled by the largest gap so equal gaps come out exact.
        let scale = pairs.clone().map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if scale == 0.0 {
            return Ok(0.0);
        }
        let s: f64 = pairs.map(|(a, b)| ((a - b).abs() / scale).powf(p)).sum();
        Ok(scale * (s / m).powf(1.0 / p))
    }
}

fn check_order(p: f64) -> Result<()> {
    if !(p >= 1.0) || !p.is_finite() {
        return Err(Error::invalid(format!("Wasserstein order must be >= 1, got {p}")));
    }
    Ok(())
}

/// Empirical brightness distribution of `b`.
pub fn estimate_density(b: &BrightnessImage) -> Result<DensityHistogram> {
    if b.is_empty() {
        return Err(Error::EmptyImage);
    }
    let mut counts = [0u64; LEVELS];
    for &v in b.as_raw() {
        counts[v as usize] += 1;
    }
    let n = b.len() as f64;
    let mut bins = [0.0; LEVELS];
    for (bin, c) in bins.iter_mut().zip(counts) {
        *bin = c as f64 / n;
    }
    Ok(DensityHistogram {
        bins,
        pixel_count: b.len() as u64,
    })
}

/// Samples `min{v : CDF(v) >= (k + 0.5)/m}` for `k = 0..m`.
pub fn to_quantile(h: &DensityHistogram, m: usize) -> Result<QuantileFunction> {
    if m < 1 {
        return Err(Error::invalid("quantile grid size must be >= 1"));
    }
    let mut cdf = [0.0; LEVELS];
    let mut acc = 0.0;
    for (c, b) in cdf.iter_mut().zip(h.bins.iter()) {
        acc += b;
        *c = acc;
    }
    // Accumulated rounding may leave the CDF just short of 1; the top of the
    // support is the answer for any level beyond it.
    let top = h.bins.iter().rposition(|&b| b > 0.0).unwrap_or(0);
    let mut values = Vec::with_capacity(m);
    let mut level = 0;
    for k in 0..m {
        let u = (k as f64 + 0.5) / m as f64;
        while level < top && cdf[level] < u {
            level += 1;
        }
        values.push(level as f64);
    }
    Ok(QuantileFunction { values })
}

/// p-Wasserstein distance between two densities on the default grid.
pub fn wasserstein(a: &DensityHistogram, b: &DensityHistogram, p: f64) -> Result<f64> {
    wasserstein_on_grid(a, b, p, DEFAULT_GRID)
}

pub fn wasserstein_on_grid(
    a: &DensityHistogram,
    b: &DensityHistogram,
    p: f64,
    m: usize,
) -> Result<f64> {
    check_order(p)?;
    to_quantile(a, m)?.distance(&to_quantile(b, m)?, p)
}

/// Mean brightness, the scalar haze proxy.
pub fn scalar_density(b: &BrightnessImage) -> Result<f64> {
    if b.is_empty() {
        return Err(Error::EmptyImage);
    }
    let sum: u64 = b.as_raw().iter().map(|&v| u64::from(v)).sum();
    Ok(sum as f64 / b.len() as f64)
}
