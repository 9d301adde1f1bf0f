//! Global atmospheric light from the dark channel prior.

use crate::error::{Error, Result};
use crate::image::{to_brightness, BrightnessImage, RgbImage};

pub const DEFAULT_PATCH: usize = 15;

/// Fraction of pixels, by dark-channel value, averaged into the estimate.
const TOP_FRACTION: f64 = 0.001;

/// Airlight color and its brightness (channel max).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AtmosphericLight {
    rgb: [u8; 3],
}

impl AtmosphericLight {
    pub fn new(rgb: [u8; 3]) -> Self {
        Self { rgb }
    }

    pub fn rgb(&self) -> [u8; 3] {
        self.rgb
    }

    pub fn brightness(&self) -> u8 {
        self.rgb.into_iter().max().unwrap_or(0)
    }

    /// Shifts every channel up by the smallest amount that makes the
    /// brightness at least `max_brightness`. Channels saturate at 255.
    pub fn raised_to(self, max_brightness: u8) -> Self {
        let deficit = max_brightness.saturating_sub(self.brightness());
        Self {
            rgb: self.rgb.map(|c| c.saturating_add(deficit)),
        }
    }

    /// Parses `"R,G,B"`.
    pub fn parse(s: &str) -> Result<Self> {
        let parts: Vec<_> = s.split(',').map(str::trim).collect();
        let bad = || Error::invalid(format!("airlight must be R,G,B with values 0..255, got {s:?}"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let mut rgb = [0u8; 3];
        for (c, p) in rgb.iter_mut().zip(parts) {
            *c = p.parse().map_err(|_| bad())?;
        }
        Ok(Self { rgb })
    }
}

impl std::fmt::Display for AtmosphericLight {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let [r, g, b] = self.rgb;
        write!(f, "{r},{g},{b}")
    }
}

/// Running minimum along one axis over a window of radius `r`, with
/// coordinates clamped to the image.
fn min_filter_1d(src: &[u8], len: usize, stride: usize, count: usize, step: usize, r: usize, dst: &mut [u8]) {
    for line in 0..count {
        let base = line * step;
        for i in 0..len {
            let lo = i.saturating_sub(r);
            let hi = (i + r).min(len - 1);
            let mut m = u8::MAX;
            for j in lo..=hi {
                m = m.min(src[base + j * stride]);
            }
            dst[base + i * stride] = m;
        }
    }
}

/// Per pixel, the minimum over a `patch`×`patch` neighborhood of the
/// minimum color channel.
pub fn dark_channel(img: &RgbImage, patch: usize) -> Result<BrightnessImage> {
    if patch == 0 || patch % 2 == 0 {
        return Err(Error::invalid(format!("patch size must be odd and >= 1, got {patch}")));
    }
    let (w, h) = img.dims();
    let r = patch / 2;
    let min_rgb: Vec<u8> = img.pixels().map(|[a, b, c]| a.min(b).min(c)).collect();
    // Square min is separable.
    let mut rows = vec![0u8; w * h];
    min_filter_1d(&min_rgb, w, 1, h, w, r, &mut rows);
    let mut out = vec![0u8; w * h];
    min_filter_1d(&rows, h, w, w, 1, r, &mut out);
    BrightnessImage::new(w, h, out)
}

/// Dark-channel estimate of the airlight before feasibility enforcement:
/// the per-channel mean over the brightest 0.1% of dark-channel pixels.
pub fn estimate_airlight_raw(hazy: &RgbImage, patch: usize) -> Result<AtmosphericLight> {
    if hazy.is_empty() {
        return Err(Error::EmptyImage);
    }
    let dark = dark_channel(hazy, patch)?;
    let n = hazy.len();
    let take = ((n as f64 * TOP_FRACTION).floor() as usize).max(1);
    let mut idx: Vec<usize> = (0..n).collect();
    // Stable sort keeps raster order among equal dark values.
    idx.sort_by(|&a, &b| dark.as_raw()[b].cmp(&dark.as_raw()[a]));
    let mut sums = [0u64; 3];
    for &i in &idx[..take] {
        for (s, v) in sums.iter_mut().zip(hazy.pixel(i)) {
            *s += u64::from(v);
        }
    }
    Ok(AtmosphericLight::new(
        sums.map(|s| crate::image::quantize(s as f64 / take as f64)),
    ))
}

/// Estimates the airlight and raises it so that its brightness bounds the
/// image brightness from above.
pub fn estimate_airlight(hazy: &RgbImage) -> Result<AtmosphericLight> {
    estimate_airlight_with_patch(hazy, DEFAULT_PATCH)
}

pub fn estimate_airlight_with_patch(hazy: &RgbImage, patch: usize) -> Result<AtmosphericLight> {
    let raw = estimate_airlight_raw(hazy, patch)?;
    Ok(raw.raised_to(to_brightness(hazy).max_value()))
}
