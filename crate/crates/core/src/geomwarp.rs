//! Depth-based reprojection of a reference latent into a target view and the
//! noise prior built from it.
//!
//! Warping is target-centric: each target latent pixel is lifted with the
//! target's rendered depth, moved into the reference camera and bilinearly
//! sampled from the reference latent. Occlusion is not tested.

use crate::gsrender::{Camera, DepthMap};
use crate::rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WarpError {
    #[error("resolution mismatch: {0}")]
    ResolutionMismatch(String),
    #[error("invalid latent: {0}")]
    Invalid(String),
}

/// Channel-major latent image at `1 / downsample` of the camera resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub downsample: usize,
    pub values: Vec<f32>,
}

impl LatentImage {
    pub fn new(width: usize, height: usize, channels: usize, downsample: usize, values: Vec<f32>) -> Result<Self, WarpError> {
        if width == 0 || height == 0 || channels == 0 || downsample == 0 {
            return Err(WarpError::Invalid("all latent dimensions must be >= 1".into()));
        }
        if values.len() != width * height * channels {
            return Err(WarpError::Invalid(format!(
                "{} values for {channels}x{height}x{width}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(WarpError::Invalid("latent values must be finite".into()));
        }
        Ok(Self { width, height, channels, downsample, values })
    }

    pub fn zeros(width: usize, height: usize, channels: usize, downsample: usize) -> Self {
        Self { width, height, channels, downsample, values: vec![0.0; width * height * channels] }
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f32 {
        self.values[(c * self.height + y) * self.width + x]
    }

    fn plane(&self) -> usize {
        self.width * self.height
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseMode {
    Vanilla,
    Geometric,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub lambda: f64,
    pub seed: u64,
    pub mode: NoiseMode,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self { lambda: 0.3, seed: 0, mode: NoiseMode::Geometric }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WarpResult {
    pub latent: LatentImage,
    /// Per latent pixel (row-major), false where the warp had no source.
    pub valid: Vec<bool>,
}

fn check_resolution(z_c: &LatentImage, depth: &DepthMap, cam_ref: &Camera, cam_tgt: &Camera) -> Result<(), WarpError> {
    let d = z_c.downsample;
    let (fw, fh) = (z_c.width * d, z_c.height * d);
    if depth.width != fw || depth.height != fh {
        return Err(WarpError::ResolutionMismatch(format!(
            "depth is {}x{}, latent {}x{} at factor {d} needs {fw}x{fh}",
            depth.width, depth.height, z_c.width, z_c.height
        )));
    }
    for (which, cam) in [("target", cam_tgt), ("reference", cam_ref)] {
        if cam.width != fw || cam.height != fh {
            return Err(WarpError::ResolutionMismatch(format!(
                "{which} camera is {}x{}, expected {fw}x{fh}",
                cam.width, cam.height
            )));
        }
    }
    Ok(())
}

/// Mean of the valid (finite, positive) depths in latent cell `(x, y)`.
fn block_depth(depth: &DepthMap, d: usize, x: usize, y: usize) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for v in y * d..(y + 1) * d {
        for u in x * d..(x + 1) * d {
            let z = depth.depth[v * depth.width + u];
            if z.is_finite() && z > 0.0 {
                sum += f64::from(z);
                n += 1;
            }
        }
    }
    (n > 0).then(|| sum / n as f64)
}

/// Bilinear weights at continuous latent coordinate, or None outside the
/// sampling footprint.
fn bilinear(width: usize, height: usize, x: f64, y: f64) -> Option<[(usize, f64); 4]> {
    const EPS: f64 = 1e-6;
    let (wmax, hmax) = ((width - 1) as f64, (height - 1) as f64);
    if !(x >= -EPS && x <= wmax + EPS && y >= -EPS && y <= hmax + EPS) {
        return None;
    }
    let x = x.clamp(0.0, wmax);
    let y = y.clamp(0.0, hmax);
    let x0 = (x.floor() as usize).min(width.saturating_sub(2));
    let y0 = (y.floor() as usize).min(height.saturating_sub(2));
    let x1 = (x0 + 1).min(width - 1);
    let y1 = (y0 + 1).min(height - 1);
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    Some([
        (y0 * width + x0, (1.0 - fx) * (1.0 - fy)),
        (y0 * width + x1, fx * (1.0 - fy)),
        (y1 * width + x0, (1.0 - fx) * fy),
        (y1 * width + x1, fx * fy),
    ])
}

/// Inverse-warp the reference latent `z_c` into the target view described by
/// `cam_tgt` and its rendered (metric) depth.
pub fn warp_latent(
    z_c: &LatentImage,
    depth: &DepthMap,
    cam_ref: &Camera,
    cam_tgt: &Camera,
) -> Result<WarpResult, WarpError> {
    check_resolution(z_c, depth, cam_ref, cam_tgt)?;
    let d = z_c.downsample;
    let (w, h) = (z_c.width, z_c.height);
    let taps: Vec<Option<[(usize, f64); 4]>> = (0..w * h)
        .into_par_iter()
        .map(|p| {
            let (x, y) = (p % w, p / w);
            let z = block_depth(depth, d, x, y)?;
            // full-resolution position of the latent pixel center
            let u = (x as f64 + 0.5) * d as f64 - 0.5;
            let v = (y as f64 + 0.5) * d as f64 - 0.5;
            let world = cam_tgt.camera_to_world(&cam_tgt.unproject(u, v, z));
            let in_ref = cam_ref.world_to_camera(&world);
            if !(in_ref.z > 1e-9) {
                return None;
            }
            let (ur, vr) = cam_ref.project(&in_ref);
            bilinear(w, h, (ur + 0.5) / d as f64 - 0.5, (vr + 0.5) / d as f64 - 0.5)
        })
        .collect();

    let plane = z_c.plane();
    let mut out = LatentImage::zeros(w, h, z_c.channels, d);
    for (p, tap) in taps.iter().enumerate() {
        let Some(tap) = tap else { continue };
        for c in 0..z_c.channels {
            let src = &z_c.values[c * plane..(c + 1) * plane];
            let v: f64 = tap.iter().map(|&(i, wgt)| wgt * f64::from(src[i])).sum();
            out.values[c * plane + p] = v as f32;
        }
    }
    Ok(WarpResult { latent: out, valid: taps.iter().map(Option::is_some).collect() })
}

/// Standard normal sample for element `index` of stream `seed`.
pub fn seeded_noise(seed: u64, index: usize) -> f32 {
    let mut r = rng::stream(seed, index as u64);
    let n: f64 = StandardNormal.sample(&mut r);
    n as f32
}

/// `lambda * prior + noise`, with the noise source supplied per flat element.
pub fn build_noise_prior_with(
    z_c: &LatentImage,
    depth: &DepthMap,
    cam_ref: &Camera,
    cam_tgt: &Camera,
    spec: &NoiseSpec,
    noise: impl Fn(usize) -> f32 + Sync,
) -> Result<LatentImage, WarpError> {
    let prior = match spec.mode {
        NoiseMode::Vanilla => z_c.clone(),
        NoiseMode::Geometric => warp_latent(z_c, depth, cam_ref, cam_tgt)?.latent,
    };
    let lambda = spec.lambda;
    let values = prior
        .values
        .par_iter()
        .enumerate()
        .map(|(i, &p)| (lambda * f64::from(p) + f64::from(noise(i))) as f32)
        .collect();
    Ok(LatentImage { values, ..prior })
}

/// Vanilla (`lambda * z_c + n`) or geometric (`lambda * warp(z_c) + n`) noise
/// prior; invalid warp pixels carry pure noise.
pub fn build_noise_prior(
    z_c: &LatentImage,
    depth: &DepthMap,
    cam_ref: &Camera,
    cam_tgt: &Camera,
    spec: &NoiseSpec,
) -> Result<LatentImage, WarpError> {
    let seed = spec.seed;
    build_noise_prior_with(z_c, depth, cam_ref, cam_tgt, spec, |i| seeded_noise(seed, i))
}
