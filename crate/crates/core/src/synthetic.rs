//! Seeded synthetic scenes rendered through the atmospheric scattering
//! model, for tests, benchmarks and diagnostics.

use rand::Rng;

use crate::error::Result;
use crate::image::{synthesize_hazy, RgbImage, SyntheticHazeParams, TransmissionMap};
use crate::target::rng_from_seed;

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    /// Range of clean-image channel values.
    pub clean_range: (u8, u8),
    pub airlight: [u8; 3],
    /// Transmission at the left and right edges, linear in between.
    pub transmission: (f64, f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub clean: RgbImage,
    pub hazy: RgbImage,
    pub params: SyntheticHazeParams,
}

/// Smooth random texture: a few random plane waves per channel mapped into
/// `range`.
pub fn textured_image<R: Rng + ?Sized>(width: usize, height: usize, range: (u8, u8), rng: &mut R) -> Result<RgbImage> {
    let waves: Vec<[(f64, f64, f64, f64); 3]> = (0..3)
        .map(|_| {
            std::array::from_fn(|_| {
                (
                    rng.random_range(0.05..0.6),
                    rng.random_range(0.05..0.6),
                    rng.random_range(0.0..std::f64::consts::TAU),
                    rng.random_range(0.3..1.0),
                )
            })
        })
        .collect();
    let (lo, hi) = (f64::from(range.0), f64::from(range.1));
    RgbImage::from_fn(width, height, |x, y| {
        std::array::from_fn(|c| {
            let (mut s, mut norm) = (0.0, 0.0);
            for &(fx, fy, ph, amp) in &waves[c] {
                s += amp * (fx * x as f64 + fy * y as f64 + ph).sin();
                norm += amp;
            }
            let u = 0.5 + 0.5 * s / norm;
            (lo + u * (hi - lo)).round() as u8
        })
    })
}

/// Horizontal transmission ramp from `near` (left) to `far` (right).
pub fn ramp_transmission(width: usize, height: usize, near: f64, far: f64) -> Result<TransmissionMap> {
    let denom = (width.max(2) - 1) as f64;
    let values = (0..height)
        .flat_map(|_| (0..width).map(move |x| near + (far - near) * x as f64 / denom))
        .collect();
    TransmissionMap::new(width, height, values)
}

pub fn render_scene(spec: &SceneSpec, seed: u64) -> Result<Scene> {
    let mut rng = rng_from_seed(seed);
    let clean = textured_image(spec.width, spec.height, spec.clean_range, &mut rng)?;
    let params = SyntheticHazeParams {
        airlight: spec.airlight,
        transmission: ramp_transmission(spec.width, spec.height, spec.transmission.0, spec.transmission.1)?,
    };
    let hazy = synthesize_hazy(&clean, &params)?;
    Ok(Scene { clean, hazy, params })
}
