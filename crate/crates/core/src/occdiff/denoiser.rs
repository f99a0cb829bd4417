use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{DiffusionError, LatentVolume};

/// Noise predictor. Implementations must be shape preserving, deterministic
/// and safe to share across threads.
pub trait Denoiser: Sync {
    fn predict(&self, z: &LatentVolume, t: usize, cond: Option<&LatentVolume>) -> Result<LatentVolume, DiffusionError>;
}

/// Predicts zero noise everywhere.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroDenoiser;

impl Denoiser for ZeroDenoiser {
    fn predict(&self, z: &LatentVolume, _t: usize, _cond: Option<&LatentVolume>) -> Result<LatentVolume, DiffusionError> {
        Ok(LatentVolume { values: vec![0.0; z.values.len()], ..z.clone() })
    }
}

fn seeded_matrix(rows: usize, cols: usize, scale: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let norm = scale / (cols as f64).sqrt();
    (0..rows * cols)
        .map(|_| {
            let v: f64 = StandardNormal.sample(&mut rng);
            v * norm
        })
        .collect()
}

/// Per-pixel channel mixing `eps = A z` with a fixed `C x C` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearDenoiser {
    channels: usize,
    matrix: Vec<f64>,
}

impl LinearDenoiser {
    pub fn new(channels: usize, matrix: Vec<f64>) -> Result<Self, DiffusionError> {
        if channels == 0 || matrix.len() != channels * channels {
            return Err(DiffusionError::DimMismatch(format!("need a {channels}x{channels} matrix")));
        }
        Ok(Self { channels, matrix })
    }

    /// Gaussian entries with standard deviation `scale / sqrt(C)`.
    pub fn seeded(channels: usize, scale: f64, seed: u64) -> Self {
        Self { channels, matrix: seeded_matrix(channels, channels, scale, seed) }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn matrix(&self) -> &[f64] {
        &self.matrix
    }

    fn apply(&self, z: &LatentVolume) -> Result<LatentVolume, DiffusionError> {
        let c = self.channels;
        if z.channels != c {
            return Err(DiffusionError::ShapeMismatch(format!("denoiser expects {c} channels, latent has {}", z.channels)));
        }
        let hw = z.height * z.width;
        let mut out = vec![0.0; z.values.len()];
        for t in 0..z.frames {
            let base = t * c * hw;
            for row in 0..c {
                let a = &self.matrix[row * c..(row + 1) * c];
                let dst = &mut out[base + row * hw..base + (row + 1) * hw];
                for (col, &w) in a.iter().enumerate() {
                    let src = &z.values[base + col * hw..base + (col + 1) * hw];
                    dst.iter_mut().zip(src).for_each(|(d, s)| *d += w * s);
                }
            }
        }
        Ok(LatentVolume { values: out, ..z.clone() })
    }
}

impl Denoiser for LinearDenoiser {
    fn predict(&self, z: &LatentVolume, _t: usize, _cond: Option<&LatentVolume>) -> Result<LatentVolume, DiffusionError> {
        self.apply(z)
    }
}

/// Linear denoiser plus a per-pixel projection `P b` of the layout channels.
/// Without a condition the projection term is absent.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionAdditiveDenoiser {
    pub base: LinearDenoiser,
    cond_channels: usize,
    projection: Vec<f64>,
}

impl ConditionAdditiveDenoiser {
    pub fn new(base: LinearDenoiser, cond_channels: usize, projection: Vec<f64>) -> Result<Self, DiffusionError> {
        if cond_channels == 0 || projection.len() != base.channels * cond_channels {
            return Err(DiffusionError::DimMismatch(format!(
                "need a {}x{cond_channels} projection",
                base.channels
            )));
        }
        Ok(Self { base, cond_channels, projection })
    }

    pub fn seeded(channels: usize, cond_channels: usize, scale: f64, cond_scale: f64, seed: u64) -> Self {
        Self {
            base: LinearDenoiser::seeded(channels, scale, seed),
            cond_channels,
            projection: seeded_matrix(channels, cond_channels, cond_scale, seed ^ 0x9e37_79b9_7f4a_7c15),
        }
    }

    pub fn cond_channels(&self) -> usize {
        self.cond_channels
    }
}

impl Denoiser for ConditionAdditiveDenoiser {
    fn predict(&self, z: &LatentVolume, _t: usize, cond: Option<&LatentVolume>) -> Result<LatentVolume, DiffusionError> {
        let mut out = self.base.apply(z)?;
        let Some(b) = cond else { return Ok(out) };
        if b.channels != self.cond_channels || (b.height, b.width) != (z.height, z.width) {
            return Err(DiffusionError::ShapeMismatch(format!(
                "condition is {}x{}x{}, denoiser expects {}x{}x{}",
                b.channels, b.height, b.width, self.cond_channels, z.height, z.width
            )));
        }
        if b.frames != 1 && b.frames != z.frames {
            return Err(DiffusionError::ShapeMismatch("condition frame count".into()));
        }
        let (c, cb, hw) = (self.base.channels, self.cond_channels, z.height * z.width);
        for t in 0..z.frames {
            let bt = if b.frames == 1 { 0 } else { t };
            for row in 0..c {
                let dst = &mut out.values[(t * c + row) * hw..(t * c + row + 1) * hw];
                for k in 0..cb {
                    let w = self.projection[row * cb + k];
                    let src = &b.values[(bt * cb + k) * hw..(bt * cb + k + 1) * hw];
                    dst.iter_mut().zip(src).for_each(|(d, s)| *d += w * s);
                }
            }
        }
        Ok(out)
    }
}
