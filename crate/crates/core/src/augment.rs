//! Label-preserving augmentation primitives.
//!
//! Images get geometric transforms (shift, rotate, zoom) with bilinear
//! interpolation and zero fill; plain feature vectors get Gaussian jitter.

use serde::{Deserialize, Serialize};

use crate::data::{FeatureLayout, Sample};
use crate::error::{Error, Result};
use crate::rng::SplitMix64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AugmentPrimitive {
    /// Translate by up to `max_pixels` in each axis (integer offsets).
    Shift { max_pixels: usize },
    /// Rotate about the image center by up to `max_degrees` either way.
    Rotate { max_degrees: f64 },
    /// Rescale about the center by a factor in [1 - max_fraction, 1 + max_fraction].
    Zoom { max_fraction: f64 },
    /// Add i.i.d. Gaussian noise with the given standard deviation.
    Jitter { std: f64 },
}

/// Controls augmentation batching and the cosine-based stop rule used by
/// the gradient-alignment step.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AugmentationPolicy {
    /// Cosine-similarity threshold in [0, 1] that stops augmentation growth.
    pub theta: f64,
    /// Transform pool; when empty, defaults are picked from the layout.
    #[serde(default)]
    pub primitives: Vec<AugmentPrimitive>,
    /// Growth cap as a multiple of the original per-class count.
    #[serde(default = "default_max_growth")]
    pub max_growth: f64,
}

fn default_max_growth() -> f64 {
    4.0
}

impl Default for AugmentationPolicy {
    fn default() -> Self {
        AugmentationPolicy {
            theta: 0.8,
            primitives: Vec::new(),
            max_growth: default_max_growth(),
        }
    }
}

impl AugmentationPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(Error::Config(format!("theta {} outside [0, 1]", self.theta)));
        }
        if self.max_growth < 1.0 {
            return Err(Error::Config("max_growth must be >= 1".into()));
        }
        Ok(())
    }

    /// The transforms to draw from, falling back to layout defaults.
    pub fn effective_primitives(&self, layout: FeatureLayout) -> Vec<AugmentPrimitive> {
        if !self.primitives.is_empty() {
            return self.primitives.clone();
        }
        match layout {
            FeatureLayout::Image { .. } => vec![
                AugmentPrimitive::Shift { max_pixels: 2 },
                AugmentPrimitive::Rotate { max_degrees: 15.0 },
                AugmentPrimitive::Zoom { max_fraction: 0.1 },
            ],
            FeatureLayout::Vector => vec![AugmentPrimitive::Jitter { std: 0.1 }],
        }
    }
}

/// Apply one randomly drawn primitive to a sample. The label is preserved
/// and the output is tagged as augmented.
pub fn augment_sample(
    sample: &Sample,
    policy: &AugmentationPolicy,
    layout: FeatureLayout,
    rng: &mut SplitMix64,
) -> Sample {
    let primitives = policy.effective_primitives(layout);
    let primitive = primitives[rng.next_below(primitives.len())];
    let features = apply_primitive(&sample.features, primitive, layout, rng);
    Sample {
        features,
        label: sample.label,
        augmented: true,
    }
}

fn apply_primitive(
    features: &[f64],
    primitive: AugmentPrimitive,
    layout: FeatureLayout,
    rng: &mut SplitMix64,
) -> Vec<f64> {
    match (primitive, layout) {
        (AugmentPrimitive::Jitter { std }, _) => {
            features.iter().map(|&f| f + rng.gauss() * std).collect()
        }
        (AugmentPrimitive::Shift { max_pixels }, FeatureLayout::Image { height, width }) => {
            let span = 2 * max_pixels + 1;
            let dr = rng.next_below(span) as isize - max_pixels as isize;
            let dc = rng.next_below(span) as isize - max_pixels as isize;
            shift_image(features, height, width, dr, dc)
        }
        (AugmentPrimitive::Rotate { max_degrees }, FeatureLayout::Image { height, width }) => {
            let angle = rng.range_f64(-max_degrees, max_degrees);
            rotate_image(features, height, width, angle)
        }
        (AugmentPrimitive::Zoom { max_fraction }, FeatureLayout::Image { height, width }) => {
            let factor = rng.range_f64(1.0 - max_fraction, 1.0 + max_fraction);
            zoom_image(features, height, width, factor)
        }
        // Geometric transforms degrade to jitter-free copies on plain vectors.
        (_, FeatureLayout::Vector) => features.to_vec(),
    }
}

/// Integer-offset translation with zero fill.
pub fn shift_image(pixels: &[f64], height: usize, width: usize, dr: isize, dc: isize) -> Vec<f64> {
    let mut out = vec![0.0; pixels.len()];
    for r in 0..height as isize {
        for c in 0..width as isize {
            let (sr, sc) = (r - dr, c - dc);
            if sr >= 0 && sr < height as isize && sc >= 0 && sc < width as isize {
                out[(r * width as isize + c) as usize] =
                    pixels[(sr * width as isize + sc) as usize];
            }
        }
    }
    out
}

/// Rotation about the image center, bilinear interpolation, zero fill.
pub fn rotate_image(pixels: &[f64], height: usize, width: usize, degrees: f64) -> Vec<f64> {
    let theta = degrees.to_radians();
    let (sin, cos) = theta.sin_cos();
    let (cy, cx) = ((height as f64 - 1.0) / 2.0, (width as f64 - 1.0) / 2.0);
    resample(pixels, height, width, |r, c| {
        let (y, x) = (r as f64 - cy, c as f64 - cx);
        (cy + y * cos - x * sin, cx + y * sin + x * cos)
    })
}

/// Scaling about the image center, bilinear interpolation, zero fill.
pub fn zoom_image(pixels: &[f64], height: usize, width: usize, factor: f64) -> Vec<f64> {
    let (cy, cx) = ((height as f64 - 1.0) / 2.0, (width as f64 - 1.0) / 2.0);
    resample(pixels, height, width, |r, c| {
        (cy + (r as f64 - cy) / factor, cx + (c as f64 - cx) / factor)
    })
}

fn resample(
    pixels: &[f64],
    height: usize,
    width: usize,
    source: impl Fn(usize, usize) -> (f64, f64),
) -> Vec<f64> {
    let mut out = vec![0.0; pixels.len()];
    let at = |r: isize, c: isize| -> f64 {
        if r >= 0 && r < height as isize && c >= 0 && c < width as isize {
            pixels[(r * width as isize + c) as usize]
        } else {
            0.0
        }
    };
    for r in 0..height {
        for c in 0..width {
            let (sy, sx) = source(r, c);
            let (r0, c0) = (sy.floor(), sx.floor());
            let (fy, fx) = (sy - r0, sx - c0);
            let (r0, c0) = (r0 as isize, c0 as isize);
            out[r * width + c] = at(r0, c0) * (1.0 - fy) * (1.0 - fx)
                + at(r0, c0 + 1) * (1.0 - fy) * fx
                + at(r0 + 1, c0) * fy * (1.0 - fx)
                + at(r0 + 1, c0 + 1) * fy * fx;
        }
    }
    out
}
