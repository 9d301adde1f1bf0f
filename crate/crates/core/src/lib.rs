//! Haze-density-aware mixup augmentation for paired dehazing data.
//!
//! A hazy image `I`, its haze-free counterpart `J` and the airlight `A` are
//! blended per pixel as `(1 - α - β) I + α J + β A` so that the brightness
//! distribution of the result follows a target haze density. The result is
//! again a hazy image under the atmospheric scattering model, with a
//! modified transmission map.
//!
//! Modules, bottom up:
//!
//! * [`image`]: raster types, brightness, synthetic haze rendering
//! * [`density`]: brightness histograms, quantile functions, Wasserstein distances
//! * [`airlight`]: dark-channel airlight estimation
//! * [`target`]: target domains and interpolated / randomized density targets
//! * [`alignment`]: exact histogram matching and the mix-weight solve
//! * [`solver`]: projected subgradient reference solver
//! * [`pipeline`]: dataset runs and run manifests
//! * [`synthetic`]: seeded scenes rendered through the scattering model

pub mod airlight;
pub mod alignment;
pub mod density;
mod error;
pub mod image;
pub mod io;
pub mod pipeline;
pub mod solver;
pub mod synthetic;
pub mod target;

pub use airlight::{estimate_airlight, AtmosphericLight};
pub use alignment::{damix, DamixSample, MixWeights};
pub use density::{estimate_density, wasserstein, DensityHistogram, QuantileFunction};
pub use error::{Error, Result};
pub use image::{to_brightness, BrightnessImage, RgbImage};
