//! Haze density alignment.
//!
//! The hazy brightness image is given a strict pixel ordering (value, then
//! local means over growing windows), split into groups whose sizes follow
//! the target histogram to get a prototype with exactly that histogram, and
//! each pixel is then moved toward the prototype by mixing the hazy image
//! with either the clean image (thinner haze) or the airlight (thicker haze).

use crate::airlight::AtmosphericLight;
use crate::density::{estimate_density, wasserstein, DensityHistogram, LEVELS};
use crate::error::{Error, Result};
use crate::image::{check_dims, quantize, to_brightness, BrightnessImage, RgbImage};

/// Window sizes of the secondary ordering keys.
const WINDOWS: [usize; 5] = [3, 5, 7, 9, 11];

/// Ascending strict order of the pixels of a brightness image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PixelRanking {
    order: Vec<usize>,
    key_depth: usize,
    dims: (usize, usize),
}

impl PixelRanking {
    /// Raster indices from lowest to highest rank.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn key_depth(&self) -> usize {
        self.key_depth
    }

    pub fn dims(&self) -> (usize, usize) {
        self.dims
    }
}

/// Sum over a `size`×`size` window at every pixel, coordinates clamped to
/// the image. A fixed window size makes sums order-equivalent to means.
fn window_sums(b: &BrightnessImage, size: usize) -> Vec<u32> {
    let (w, h) = b.dims();
    let r = (size / 2) as isize;
    let src = b.as_raw();
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut rows = vec![0u32; w * h];
    for y in 0..h {
        let line = &src[y * w..(y + 1) * w];
        for x in 0..w {
            rows[y * w + x] = (-r..=r)
                .map(|d| u32::from(line[clamp(x as isize + d, w)]))
                .sum();
        }
    }
    let mut out = vec![0u32; w * h];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = (-r..=r).map(|d| rows[clamp(y as isize + d, h) * w + x]).sum();
        }
    }
    out
}

/// Orders pixels by (value, 3×3 mean, 5×5, 7×7, 9×9, 11×11), remaining
/// ties by raster index.
pub fn rank_pixels(b: &BrightnessImage) -> Result<PixelRanking> {
    if b.is_empty() {
        return Err(Error::EmptyImage);
    }
    let n = b.len();
    let means: Vec<Vec<u32>> = WINDOWS.iter().map(|&s| window_sums(b, s)).collect();
    let keys: Vec<[u32; 6]> = (0..n)
        .map(|i| {
            [
                u32::from(b.as_raw()[i]),
                means[0][i],
                means[1][i],
                means[2][i],
                means[3][i],
                means[4][i],
            ]
        })
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &c| keys[a].cmp(&keys[c]));
    Ok(PixelRanking {
        order,
        key_depth: 1 + WINDOWS.len(),
        dims: b.dims(),
    })
}

/// Largest-remainder apportionment of `n` pixels to the histogram bins.
/// Leftover pixels go to the largest fractional parts, lower level first
/// on ties.
pub fn apportion_counts(target: &DensityHistogram, n: usize) -> [usize; LEVELS] {
    let mut counts = [0usize; LEVELS];
    let mut frac = [0.0f64; LEVELS];
    let mut assigned = 0usize;
    for (v, &p) in target.bins().iter().enumerate() {
        let exact = p * n as f64;
        let whole = exact.floor();
        counts[v] = whole as usize;
        frac[v] = exact - whole;
        assigned += counts[v];
    }
    if assigned > n {
        // Only reachable through rounding in bins that sum to 1 + ε.
        let mut excess = assigned - n;
        let mut by_level: Vec<usize> = (0..LEVELS).filter(|&v| counts[v] > 0).collect();
        by_level.sort_by(|&a, &b| frac[a].total_cmp(&frac[b]).then(b.cmp(&a)));
        for v in by_level.into_iter().cycle() {
            if excess == 0 {
                break;
            }
            if counts[v] > 0 {
                counts[v] -= 1;
                excess -= 1;
            }
        }
        return counts;
    }
    let mut levels: Vec<usize> = (0..LEVELS).collect();
    levels.sort_by(|&a, &b| frac[b].total_cmp(&frac[a]).then(a.cmp(&b)));
    let mut left = n - assigned;
    for v in levels.into_iter().cycle() {
        if left == 0 {
            break;
        }
        counts[v] += 1;
        left -= 1;
    }
    counts
}

/// Brightness image with exactly the apportioned target histogram: the
/// lowest-ranked `count_0` pixels get level 0, the next `count_1` level 1,
/// and so on.
pub fn build_prototype(
    b: &BrightnessImage,
    ranking: &PixelRanking,
    target: &DensityHistogram,
) -> Result<BrightnessImage> {
    check_dims(b.dims(), ranking.dims)?;
    let counts = apportion_counts(target, b.len());
    let mut out = vec![0u8; b.len()];
    let mut ranked = ranking.order.iter();
    for (level, &c) in counts.iter().enumerate() {
        for &i in ranked.by_ref().take(c) {
            out[i] = level as u8;
        }
    }
    BrightnessImage::new(b.width(), b.height(), out)
}

/// Per-pixel mixing coefficients toward the clean image (`alpha`) and the
/// airlight (`beta`).
#[derive(Debug, Clone, PartialEq)]
pub struct MixWeights {
    width: usize,
    height: usize,
    alpha: Vec<f64>,
    beta: Vec<f64>,
}

impl MixWeights {
    pub fn new(width: usize, height: usize, alpha: Vec<f64>, beta: Vec<f64>) -> Result<Self> {
        if alpha.len() != width * height || beta.len() != width * height {
            return Err(Error::invalid("weight maps do not match the image size"));
        }
        let w = Self {
            width,
            height,
            alpha,
            beta,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            alpha: vec![0.0; width * height],
            beta: vec![0.0; width * height],
        }
    }

    /// Checks `alpha, beta >= 0`, `alpha + beta <= 1` and `alpha * beta = 0`.
    pub fn validate(&self) -> Result<()> {
        for (i, (&a, &b)) in self.alpha.iter().zip(&self.beta).enumerate() {
            if !(a >= 0.0) || !(b >= 0.0) || a + b > 1.0 || (a > 0.0 && b > 0.0) {
                return Err(Error::invalid(format!(
                    "infeasible mix weights at pixel {i}: alpha={a}, beta={b}"
                )));
            }
        }
        Ok(())
    }

    #[cfg(test)]
    pub(crate) fn from_parts_unchecked(width: usize, height: usize, alpha: Vec<f64>, beta: Vec<f64>) -> Self {
        Self {
            width,
            height,
            alpha,
            beta,
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }
}

/// Projects the per-pixel solution of `I_p = (1-α-β) I_b + α J_b + β A_b`
/// onto the feasible set, with `α β = 0`.
pub fn solve_mix_weights(
    hazy_b: &BrightnessImage,
    clean_b: &BrightnessImage,
    airlight_b: u8,
    prototype: &BrightnessImage,
) -> Result<MixWeights> {
    check_dims(hazy_b.dims(), clean_b.dims())?;
    check_dims(hazy_b.dims(), prototype.dims())?;
    let n = hazy_b.len();
    let (mut alpha, mut beta) = (vec![0.0; n], vec![0.0; n]);
    let a = f64::from(airlight_b);
    for i in 0..n {
        let ib = hazy_b.as_raw()[i];
        let jb = clean_b.as_raw()[i];
        let ip = prototype.as_raw()[i];
        if ib >= ip {
            // A pixel no brighter than its clean value cannot be thinned.
            if ib > jb {
                alpha[i] = (f64::from(ib - ip) / f64::from(ib - jb)).min(1.0);
            }
        } else if airlight_b > ib {
            beta[i] = (f64::from(ip - ib) / (a - f64::from(ib))).min(1.0);
        }
    }
    Ok(MixWeights {
        width: hazy_b.width(),
        height: hazy_b.height(),
        alpha,
        beta,
    })
}

/// Weight `w ∈ [0, 1]` whose mix `max_c(from_c + w (toward_c - from_c))`
/// lands closest to `target`, smallest on ties.
///
/// The brightness of a mix is a convex piecewise-linear function of `w`, so
/// the optimum is at an endpoint, a channel crossing of `target`, or a kink.
fn mix_weight(from: [f64; 3], toward: [f64; 3], target: f64) -> f64 {
    let eval = |w: f64| (0..3).map(|c| from[c] + w * (toward[c] - from[c])).fold(f64::MIN, f64::max);
    let mut candidates = vec![0.0, 1.0];
    for c in 0..3 {
        let slope = toward[c] - from[c];
        if slope != 0.0 {
            candidates.push((target - from[c]) / slope);
        }
        for d in c + 1..3 {
            let ds = slope - (toward[d] - from[d]);
            if ds != 0.0 {
                candidates.push((from[d] - from[c]) / ds);
            }
        }
    }
    let mut best = (f64::INFINITY, 0.0);
    for w in candidates {
        if !(0.0..=1.0).contains(&w) {
            continue;
        }
        let err = (eval(w) - target).abs();
        if err < best.0 - 1e-9 || (err <= best.0 + 1e-9 && w < best.1) {
            best = (err, w);
        }
    }
    best.1
}

/// Mix weights whose composed image has the prototype brightness wherever
/// that is reachable, and the nearest reachable brightness elsewhere.
///
/// Pixels darker in the prototype mix toward the clean image, brighter ones
/// toward the airlight. When the clean image, the hazy image and the airlight
/// share a brightest channel this agrees with [`solve_mix_weights`].
pub fn solve_mix_weights_rgb(
    hazy: &RgbImage,
    clean: &RgbImage,
    airlight: AtmosphericLight,
    prototype: &BrightnessImage,
) -> Result<MixWeights> {
    check_dims(hazy.dims(), clean.dims())?;
    check_dims(hazy.dims(), prototype.dims())?;
    let n = hazy.len();
    let (mut alpha, mut beta) = (vec![0.0; n], vec![0.0; n]);
    let a = airlight.rgb().map(f64::from);
    for i in 0..n {
        let pi = hazy.pixel(i);
        let ib = pi.into_iter().max().unwrap_or(0);
        let ip = prototype.as_raw()[i];
        let from = pi.map(f64::from);
        if ip < ib {
            alpha[i] = mix_weight(from, clean.pixel(i).map(f64::from), f64::from(ip));
        } else if ip > ib {
            beta[i] = mix_weight(from, a, f64::from(ip));
        }
    }
    Ok(MixWeights {
        width: hazy.width(),
        height: hazy.height(),
        alpha,
        beta,
    })
}

/// `Î = (1-α-β) I + α J + β A`, with the weights broadcast over channels.
pub fn compose_damix(
    hazy: &RgbImage,
    clean: &RgbImage,
    airlight: AtmosphericLight,
    w: &MixWeights,
) -> Result<RgbImage> {
    check_dims(hazy.dims(), clean.dims())?;
    check_dims(hazy.dims(), w.dims())?;
    w.validate()?;
    Ok(compose_unchecked(hazy, clean, airlight, w))
}

pub(crate) fn compose_unchecked(
    hazy: &RgbImage,
    clean: &RgbImage,
    airlight: AtmosphericLight,
    w: &MixWeights,
) -> RgbImage {
    let a = airlight.rgb().map(f64::from);
    let mut data = Vec::with_capacity(hazy.len() * 3);
    for (i, (pi, pj)) in hazy.pixels().zip(clean.pixels()).enumerate() {
        let (al, be) = (w.alpha[i], w.beta[i]);
        let keep = 1.0 - al - be;
        for c in 0..3 {
            data.push(quantize(keep * f64::from(pi[c]) + al * f64::from(pj[c]) + be * a[c]));
        }
    }
    RgbImage::new(hazy.width(), hazy.height(), data).expect("dimensions already checked")
}

/// One augmented sample with its alignment diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct DamixSample {
    pub image: RgbImage,
    pub weights: MixWeights,
    pub achieved_density: DensityHistogram,
    pub target_density: DensityHistogram,
    pub residual_distance: f64,
}

/// Aligns the haze density of `hazy` with `target`.
pub fn damix(
    hazy: &RgbImage,
    clean: &RgbImage,
    airlight: AtmosphericLight,
    target: &DensityHistogram,
    p: f64,
) -> Result<DamixSample> {
    check_dims(hazy.dims(), clean.dims())?;
    let hazy_b = to_brightness(hazy);
    let ranking = rank_pixels(&hazy_b)?;
    let prototype = build_prototype(&hazy_b, &ranking, target)?;
    let weights = solve_mix_weights_rgb(hazy, clean, airlight, &prototype)?;
    let image = compose_damix(hazy, clean, airlight, &weights)?;
    let achieved_density = estimate_density(&to_brightness(&image))?;
    let residual_distance = wasserstein(&achieved_density, target, p)?;
    // Integer apportionment on small images can yield a prototype farther
    // from the target than the input itself; keep the input in that case.
    let initial_density = estimate_density(&hazy_b)?;
    let initial_distance = wasserstein(&initial_density, target, p)?;
    if residual_distance > initial_distance {
        log::debug!("alignment residual {residual_distance} exceeds initial {initial_distance}, keeping input");
        return Ok(DamixSample {
            image: hazy.clone(),
            weights: MixWeights::zeros(hazy.width(), hazy.height()),
            achieved_density: initial_density,
            target_density: target.clone(),
            residual_distance: initial_distance,
        });
    }
    Ok(DamixSample {
        image,
        weights,
        achieved_density,
        target_density: target.clone(),
        residual_distance,
    })
}

/// Direction of a scalar mix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MixMode {
    /// Blend toward the clean image.
    Thinner,
    /// Blend toward the airlight.
    Thicker,
}

/// `λ I + (1-λ) J` (thinner) or `λ I + (1-λ) A` (thicker).
pub fn scalar_mixup(
    hazy: &RgbImage,
    clean: &RgbImage,
    airlight: AtmosphericLight,
    lambda: f64,
    mode: MixMode,
) -> Result<RgbImage> {
    check_dims(hazy.dims(), clean.dims())?;
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::invalid(format!("lambda {lambda} outside [0, 1]")));
    }
    let a = airlight.rgb().map(f64::from);
    let mut data = Vec::with_capacity(hazy.len() * 3);
    for (pi, pj) in hazy.pixels().zip(clean.pixels()) {
        for c in 0..3 {
            let other = match mode {
                MixMode::Thinner => f64::from(pj[c]),
                MixMode::Thicker => a[c],
            };
            data.push(quantize(lambda * f64::from(pi[c]) + (1.0 - lambda) * other));
        }
    }
    RgbImage::new(hazy.width(), hazy.height(), data)
}

/// Mixing coefficient and direction that move the mean brightness of the
/// hazy image to `target_mean`.
pub fn scalar_lambda(
    hazy_mean: f64,
    clean_mean: f64,
    airlight_b: f64,
    target_mean: f64,
) -> Result<(f64, MixMode)> {
    if !(0.0..=255.0).contains(&target_mean) {
        return Err(Error::invalid(format!("target mean {target_mean} outside [0, 255]")));
    }
    if target_mean < hazy_mean {
        let lambda = if hazy_mean == clean_mean {
            1.0
        } else {
            ((target_mean - clean_mean) / (hazy_mean - clean_mean)).clamp(0.0, 1.0)
        };
        Ok((lambda, MixMode::Thinner))
    } else {
        let lambda = if airlight_b == hazy_mean {
            1.0
        } else {
            ((airlight_b - target_mean) / (airlight_b - hazy_mean)).clamp(0.0, 1.0)
        };
        Ok((lambda, MixMode::Thicker))
    }
}

/// Scalar ablation: one global mix that matches the mean brightness.
pub fn scalar_damix(
    hazy: &RgbImage,
    clean: &RgbImage,
    airlight: AtmosphericLight,
    target_mean: f64,
) -> Result<RgbImage> {
    check_dims(hazy.dims(), clean.dims())?;
    let hm = crate::density::scalar_density(&to_brightness(hazy))?;
    let cm = crate::density::scalar_density(&to_brightness(clean))?;
    let (lambda, mode) = scalar_lambda(hm, cm, f64::from(airlight.brightness()), target_mean)?;
    scalar_mixup(hazy, clean, airlight, lambda, mode)
}
