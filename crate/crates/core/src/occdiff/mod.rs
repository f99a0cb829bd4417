//! Diffusion plumbing around a pluggable denoiser: noise schedule,
//! deterministic DDIM sampling and inversion, classifier-free guidance,
//! patch tokens, forecasting-frame packing and layout editing.

mod denoiser;
mod ltnt;
mod patch;

pub use denoiser::{ConditionAdditiveDenoiser, Denoiser, LinearDenoiser, ZeroDenoiser};
pub use ltnt::{decode_ltnt, encode_ltnt, LTNT_HEADER_LEN, LTNT_MAGIC};
pub use patch::{bev_condition, patchify, unpatchify, PatchEmbedder, TokenGrid};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiffusionError {
    #[error("bad schedule range: {0}")]
    BadRange(String),
    #[error("{requested} steps requested, schedule has {available}")]
    StepRange { requested: usize, available: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("invalid latent: {0}")]
    Invalid(String),
    #[error("malformed LTNT: {0}")]
    Format(String),
}

/// `T x C x h x w` latent frames, frame-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentVolume {
    pub frames: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
    pub timestamps: Vec<f64>,
}

impl LatentVolume {
    pub fn new(frames: usize, channels: usize, height: usize, width: usize, values: Vec<f64>) -> Result<Self, DiffusionError> {
        if frames == 0 || channels == 0 || height == 0 || width == 0 {
            return Err(DiffusionError::Invalid("all latent dimensions must be >= 1".into()));
        }
        if values.len() != frames * channels * height * width {
            return Err(DiffusionError::Invalid(format!(
                "{} values for {frames}x{channels}x{height}x{width}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(DiffusionError::Invalid("latent values must be finite".into()));
        }
        Ok(Self { frames, channels, height, width, values, timestamps: (0..frames).map(|t| t as f64).collect() })
    }

    pub fn zeros(frames: usize, channels: usize, height: usize, width: usize) -> Self {
        Self {
            frames,
            channels,
            height,
            width,
            values: vec![0.0; frames * channels * height * width],
            timestamps: (0..frames).map(|t| t as f64).collect(),
        }
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        (self.frames, self.channels, self.height, self.width) == (other.frames, other.channels, other.height, other.width)
    }

    pub fn frame_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    /// Copy of frame `t` as a one-frame volume.
    pub fn frame(&self, t: usize) -> LatentVolume {
        let n = self.frame_len();
        LatentVolume {
            frames: 1,
            channels: self.channels,
            height: self.height,
            width: self.width,
            values: self.values[t * n..(t + 1) * n].to_vec(),
            timestamps: vec![self.timestamps[t]],
        }
    }

    #[inline]
    pub fn at(&self, t: usize, c: usize, y: usize, x: usize) -> f64 {
        self.values[((t * self.channels + c) * self.height + y) * self.width + x]
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    fn map_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        let values = self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect();
        Self { values, ..self.clone() }
    }
}

/// Linear beta schedule with cumulative products.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    pub betas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    pub fn steps(&self) -> usize {
        self.betas.len()
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        make_schedule(1000, 1e-4, 2e-2).expect("default range is valid")
    }
}

pub fn make_schedule(steps: usize, beta_min: f64, beta_max: f64) -> Result<NoiseSchedule, DiffusionError> {
    if steps == 0 {
        return Err(DiffusionError::BadRange("steps must be >= 1".into()));
    }
    if !(0.0 < beta_min && beta_min < beta_max && beta_max < 1.0) {
        return Err(DiffusionError::BadRange(format!("need 0 < {beta_min} < {beta_max} < 1")));
    }
    let betas: Vec<f64> = if steps == 1 {
        vec![beta_min]
    } else {
        (0..steps).map(|i| beta_min + (beta_max - beta_min) * i as f64 / (steps - 1) as f64).collect()
    };
    let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
    let alpha_bars = alphas
        .iter()
        .scan(1.0, |acc, a| {
            *acc *= a;
            Some(*acc)
        })
        .collect();
    Ok(NoiseSchedule { betas, alphas, alpha_bars })
}

/// Evenly strided timesteps ending at the last schedule step, ascending.
pub fn sub_schedule(schedule: &NoiseSchedule, num_steps: usize) -> Result<Vec<usize>, DiffusionError> {
    let total = schedule.steps();
    if num_steps > total {
        return Err(DiffusionError::StepRange { requested: num_steps, available: total });
    }
    Ok((0..num_steps)
        .map(|i| (((i + 1) * total) as f64 / num_steps as f64).round() as usize - 1)
        .collect())
}

pub fn cfg_mix(eps_cond: &LatentVolume, eps_uncond: &LatentVolume, g: f64) -> Result<LatentVolume, DiffusionError> {
    if !eps_cond.same_shape(eps_uncond) {
        return Err(DiffusionError::ShapeMismatch("guidance branches differ in shape".into()));
    }
    Ok(eps_uncond.map_with(eps_cond, |u, c| u + g * (c - u)))
}

fn guided_eps(
    denoiser: &dyn Denoiser,
    z: &LatentVolume,
    t: usize,
    cond: Option<&LatentVolume>,
    g: f64,
) -> Result<LatentVolume, DiffusionError> {
    let eps = denoiser.predict(z, t, cond)?;
    if g == 1.0 {
        return Ok(eps);
    }
    let uncond = denoiser.predict(z, t, None)?;
    cfg_mix(&eps, &uncond, g)
}

/// `x_t -> x_prev` for a fixed noise estimate.
fn ddim_update(x: &LatentVolume, eps: &LatentVolume, ab_from: f64, ab_to: f64) -> LatentVolume {
    let (sf, st) = (ab_from.sqrt(), ab_to.sqrt());
    let (nf, nt) = ((1.0 - ab_from).sqrt(), (1.0 - ab_to).sqrt());
    x.map_with(eps, |x, e| st * (x - nf * e) / sf + nt * e)
}

/// Deterministic DDIM from `z_t` at the top of the `num_steps` sub-schedule
/// down to a clean latent.
pub fn ddim_sample(
    denoiser: &dyn Denoiser,
    z_t: &LatentVolume,
    cond: Option<&LatentVolume>,
    schedule: &NoiseSchedule,
    num_steps: usize,
    g: f64,
) -> Result<LatentVolume, DiffusionError> {
    let ts = sub_schedule(schedule, num_steps)?;
    let mut z = z_t.clone();
    for i in (0..ts.len()).rev() {
        let ab = schedule.alpha_bars[ts[i]];
        let ab_prev = if i == 0 { 1.0 } else { schedule.alpha_bars[ts[i - 1]] };
        let eps = guided_eps(denoiser, &z, ts[i], cond, g)?;
        z = ddim_update(&z, &eps, ab, ab_prev);
    }
    Ok(z)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InversionOptions {
    /// Extra fixed-point passes per step that re-evaluate the noise at the
    /// current estimate of the noisier latent; 0 is plain DDIM inversion.
    pub refine_iters: usize,
    /// Stop refining once successive estimates differ by at most this much.
    pub tolerance: f64,
}

impl Default for InversionOptions {
    fn default() -> Self {
        Self { refine_iters: 30, tolerance: 1e-13 }
    }
}

/// Run the DDIM update in reverse, clean latent to noise.
pub fn ddim_invert(
    denoiser: &dyn Denoiser,
    z_0: &LatentVolume,
    cond: Option<&LatentVolume>,
    schedule: &NoiseSchedule,
    num_steps: usize,
) -> Result<LatentVolume, DiffusionError> {
    ddim_invert_with(denoiser, z_0, cond, schedule, num_steps, 1.0, &InversionOptions::default())
}

pub fn ddim_invert_with(
    denoiser: &dyn Denoiser,
    z_0: &LatentVolume,
    cond: Option<&LatentVolume>,
    schedule: &NoiseSchedule,
    num_steps: usize,
    g: f64,
    opts: &InversionOptions,
) -> Result<LatentVolume, DiffusionError> {
    let ts = sub_schedule(schedule, num_steps)?;
    let mut z = z_0.clone();
    for i in 0..ts.len() {
        let ab = schedule.alpha_bars[ts[i]];
        let ab_prev = if i == 0 { 1.0 } else { schedule.alpha_bars[ts[i - 1]] };
        let eps = guided_eps(denoiser, &z, ts[i], cond, g)?;
        let mut next = ddim_update(&z, &eps, ab_prev, ab);
        for _ in 0..opts.refine_iters {
            let eps = guided_eps(denoiser, &next, ts[i], cond, g)?;
            let refined = ddim_update(&z, &eps, ab_prev, ab);
            let change = refined.max_abs_diff(&next);
            next = refined;
            if change <= opts.tolerance {
                break;
            }
        }
        z = next;
    }
    Ok(z)
}

/// Invert under the original layout condition, then sample under the new
/// one.
pub fn edit_pipeline(
    z_ori: &LatentVolume,
    b_ori: &LatentVolume,
    b_new: &LatentVolume,
    denoiser: &dyn Denoiser,
    schedule: &NoiseSchedule,
    num_steps: usize,
    g: f64,
) -> Result<LatentVolume, DiffusionError> {
    if !b_ori.same_shape(b_new) {
        return Err(DiffusionError::ShapeMismatch("original and new layouts differ in shape".into()));
    }
    if (b_ori.height, b_ori.width) != (z_ori.height, z_ori.width) {
        return Err(DiffusionError::ShapeMismatch(format!(
            "layout condition is {}x{}, latent is {}x{}",
            b_ori.height, b_ori.width, z_ori.height, z_ori.width
        )));
    }
    let noise = ddim_invert_with(denoiser, z_ori, Some(b_ori), schedule, num_steps, g, &InversionOptions::default())?;
    ddim_sample(denoiser, &noise, Some(b_new), schedule, num_steps, g)
}

/// Stack `T_c` clean conditioning frames ahead of `T_f` future frames. When
/// `future_clean` is given the future frames are noised to step `t`,
/// otherwise `noise` is used as is. The mask is 1 on frames that carry loss.
pub fn forecast_pack(
    clean: &LatentVolume,
    noise: &LatentVolume,
    future_clean: Option<&LatentVolume>,
    schedule: &NoiseSchedule,
    t: usize,
) -> Result<(LatentVolume, Vec<u8>), DiffusionError> {
    if (clean.channels, clean.height, clean.width) != (noise.channels, noise.height, noise.width) {
        return Err(DiffusionError::ShapeMismatch("conditional and future frames differ in shape".into()));
    }
    if t >= schedule.steps() {
        return Err(DiffusionError::StepRange { requested: t + 1, available: schedule.steps() });
    }
    let future = match future_clean {
        Some(x0) => {
            if !x0.same_shape(noise) {
                return Err(DiffusionError::ShapeMismatch("future targets and noise differ in shape".into()));
            }
            let ab = schedule.alpha_bars[t];
            x0.map_with(noise, |x, e| ab.sqrt() * x + (1.0 - ab).sqrt() * e)
        }
        None => noise.clone(),
    };
    let (tc, tf) = (clean.frames, noise.frames);
    let mut values = clean.values.clone();
    values.extend_from_slice(&future.values);
    let last = clean.timestamps.last().copied().unwrap_or(0.0);
    let mut timestamps = clean.timestamps.clone();
    timestamps.extend((1..=tf).map(|k| last + k as f64));
    let packed = LatentVolume { frames: tc + tf, values, timestamps, ..clean.clone() };
    let mask = std::iter::repeat_n(0u8, tc).chain(std::iter::repeat_n(1u8, tf)).collect();
    Ok((packed, mask))
}
