//! Desk-scale synthetic scenes: vertical class strips with smooth spectra.

use std::f64::consts::TAU;

use super::{DataError, HsiCube};
use crate::tensor::Rng64;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthSpec {
    pub classes: usize,
    pub width: usize,
    pub height: usize,
    pub bands: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

/// Noise-free spectrum of class `class` (1-based): a unit-amplitude sinusoid
/// whose frequency and phase depend on the class.
pub fn class_signature(class: usize, classes: usize, bands: usize) -> Vec<f64> {
    let k = (class - 1) as f64;
    let freq = 1.0 + 0.5 * k;
    let phase = TAU * k / classes as f64;
    (0..bands)
        .map(|b| {
            let t = if bands > 1 { b as f64 / (bands - 1) as f64 } else { 0.0 };
            (TAU * freq * t + phase).sin()
        })
        .collect()
}

/// Class of column `col` when `width` columns are cut into `classes` strips.
pub fn strip_class(col: usize, width: usize, classes: usize) -> u16 {
    (col * classes / width + 1) as u16
}

/// Splits the scene into `classes` contiguous vertical strips; every pixel
/// gets its class signature plus i.i.d. Gaussian noise. Values are rounded
/// to `f32` so the in-memory cube equals the one read back from disk.
pub fn synth_cube(spec: &SynthSpec) -> Result<HsiCube, DataError> {
    let &SynthSpec {
        classes,
        width,
        height,
        bands,
        noise_sigma,
        seed,
    } = spec;
    if classes < 2 {
        return Err(DataError::Config(format!("need at least 2 classes, got {classes}")));
    }
    if width < classes {
        return Err(DataError::Config(format!("width {width} cannot hold {classes} strips")));
    }
    if height == 0 || bands == 0 {
        return Err(DataError::Config("height and bands must be positive".into()));
    }
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(DataError::Config(format!("invalid noise sigma {noise_sigma}")));
    }
    let signatures: Vec<Vec<f64>> = (1..=classes).map(|c| class_signature(c, classes, bands)).collect();
    let mut rng = Rng64::seed(seed);
    let pixels = width * height;
    let mut raster = vec![0.0; pixels * bands];
    let mut labels = vec![0u16; pixels];
    for row in 0..height {
        for col in 0..width {
            let class = strip_class(col, width, classes);
            let p = row * width + col;
            labels[p] = class;
            for (b, &s) in signatures[class as usize - 1].iter().enumerate() {
                let noise = if noise_sigma > 0.0 {
                    rng.normal(0.0, noise_sigma)
                } else {
                    0.0
                };
                raster[b * pixels + p] = (s + noise) as f32 as f64;
            }
        }
    }
    let names = (1..=classes).map(|c| format!("strip {c}")).collect();
    HsiCube::new(width, height, bands, raster, labels, Some(names))
}
