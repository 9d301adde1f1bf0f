//! 8-bit raster types, brightness extraction and the atmospheric
//! scattering model used to synthesize hazy images.

use crate::error::{Error, Result};

/// Quantizes a value on the [0, 255] scale to an intensity level.
///
/// `f64::round` rounds half away from zero.
#[inline]
pub fn quantize(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Row-major RGB image, top-left origin, channels interleaved R,G,B.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::EmptyImage);
        }
        if data.len() != width * height * 3 {
            return Err(Error::invalid(format!(
                "rgb buffer holds {} bytes, expected {}",
                data.len(),
                width * height * 3
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Image filled with a single color.
    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Result<Self> {
        let data = rgb.iter().copied().cycle().take(width * height * 3).collect();
        Self::new(width, height, data)
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> [u8; 3],
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn as_raw(&self) -> &[u8] {
        &self.data
    }

    pub fn into_raw(self) -> Vec<u8> {
        self.data
    }

    /// Pixel at raster index `i`.
    pub fn pixel(&self, i: usize) -> [u8; 3] {
        let o = i * 3;
        [self.data[o], self.data[o + 1], self.data[o + 2]]
    }

    pub fn pixels(&self) -> impl Iterator<Item = [u8; 3]> + '_ {
        self.data.chunks_exact(3).map(|c| [c[0], c[1], c[2]])
    }
}

/// Row-major single-channel image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BrightnessImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl BrightnessImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::EmptyImage);
        }
        if data.len() != width * height {
            return Err(Error::invalid(format!(
                "brightness buffer holds {} values, expected {}",
                data.len(),
                width * height
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_raw(&self) -> &[u8] {
        &self.data
    }

    pub fn max_value(&self) -> u8 {
        self.data.iter().copied().max().unwrap_or(0)
    }
}

/// HSV value channel: per pixel `max(R, G, B)`.
pub fn to_brightness(img: &RgbImage) -> BrightnessImage {
    let data = img
        .pixels()
        .map(|[r, g, b]| r.max(g).max(b))
        .collect();
    BrightnessImage {
        width: img.width,
        height: img.height,
        data,
    }
}

pub(crate) fn check_dims(expected: (usize, usize), actual: (usize, usize)) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch { expected, actual });
    }
    Ok(())
}

/// Per-pixel transmission `t(x)` in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct TransmissionMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl TransmissionMap {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::invalid(format!(
                "transmission map holds {} values, expected {}",
                values.len(),
                width * height
            )));
        }
        if let Some(bad) = values.iter().find(|t| !(0.0..=1.0).contains(*t)) {
            return Err(Error::invalid(format!("transmission {bad} outside [0, 1]")));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn constant(width: usize, height: usize, t: f64) -> Result<Self> {
        Self::new(width, height, vec![t; width * height])
    }

    /// Beer-Lambert transmission `exp(-scatter_coefficient * depth)`.
    pub fn from_depth(
        width: usize,
        height: usize,
        scatter_coefficient: f64,
        depth: &[f64],
    ) -> Result<Self> {
        if !(scatter_coefficient >= 0.0) {
            return Err(Error::invalid("scatter coefficient must be nonnegative"));
        }
        if let Some(bad) = depth.iter().find(|d| !(**d >= 0.0)) {
            return Err(Error::invalid(format!("depth {bad} is negative")));
        }
        let values = depth
            .iter()
            .map(|d| (-scatter_coefficient * d).exp())
            .collect();
        Self::new(width, height, values)
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Inputs of the atmospheric scattering model for a single synthetic scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticHazeParams {
    pub airlight: [u8; 3],
    pub transmission: TransmissionMap,
}

/// Renders `I = J t + A (1 - t)` per pixel and channel.
pub fn synthesize_hazy(clean: &RgbImage, params: &SyntheticHazeParams) -> Result<RgbImage> {
    check_dims(clean.dims(), params.transmission.dims())?;
    let a = params.airlight.map(f64::from);
    let mut data = Vec::with_capacity(clean.data.len());
    for (px, &t) in clean.pixels().zip(&params.transmission.values) {
        for c in 0..3 {
            data.push(quantize(f64::from(px[c]) * t + a[c] * (1.0 - t)));
        }
    }
    RgbImage::new(clean.width, clean.height, data)
}
