//! LiDAR synthesis from semantic occupancy.
//!
//! Each ray is presampled uniformly across the grid, resampled only inside
//! occupied voxels, and rendered to a depth by SDF volume rendering. A hard
//! voxel-traversal ray caster serves as the geometric reference.

mod field;
mod head;
mod ply;
mod simulate;

pub use field::{AnalyticSdf, FeatureProvider, FeatureVolume, ProviderMode};
pub use head::{decode_lhed, encode_lhed, Dense, LidarHead, Mlp, LHED_MAGIC};
pub use ply::{decode_ply, encode_ply, PlyPoint};
pub use simulate::{
    simulate, trace_ray, DropMode, LidarPointCloud, LidarReturn, RayTrace, SamplingStrategy, SimParams, SimStats,
};

use crate::rng;
use crate::voxgrid::{is_occupied_label, SemanticOccupancyGrid};
use nalgebra::{Isometry3, Translation3, UnitQuaternion, Vector3};
use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LidarError {
    #[error("invalid rig: {0}")]
    InvalidRig(String),
    #[error("rig config line {line}: {reason}")]
    Config { line: usize, reason: String },
    #[error("ray does not overlap the grid")]
    NoOverlap,
    #[error("no occupied samples to resample from")]
    EmptySupport,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("invalid head: {0}")]
    InvalidHead(String),
    #[error("malformed {0}")]
    Format(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ray {
    pub origin: Vector3<f64>,
    /// Unit length.
    pub direction: Vector3<f64>,
    pub row: usize,
    pub col: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensorRig {
    pub beams: usize,
    pub azimuth_steps: usize,
    pub elevation_min_deg: f64,
    pub elevation_max_deg: f64,
    /// Sensor-to-world pose.
    pub mount: Isometry3<f64>,
    pub max_range: f64,
}

impl Default for SensorRig {
    fn default() -> Self {
        Self {
            beams: 32,
            azimuth_steps: 1024,
            elevation_min_deg: -30.0,
            elevation_max_deg: 10.0,
            mount: Isometry3::identity(),
            max_range: 70.0,
        }
    }
}

impl SensorRig {
    pub fn validate(&self) -> Result<(), LidarError> {
        let bad = |m: &str| Err(LidarError::InvalidRig(m.into()));
        if self.beams == 0 || self.azimuth_steps == 0 {
            return bad("beams and azimuth_steps must be >= 1");
        }
        if !(self.elevation_min_deg.is_finite() && self.elevation_max_deg.is_finite()) {
            return bad("elevations must be finite");
        }
        // a single beam has no spread to cover
        let ordered = if self.beams == 1 {
            self.elevation_min_deg <= self.elevation_max_deg
        } else {
            self.elevation_min_deg < self.elevation_max_deg
        };
        if !ordered {
            return bad("elevation_min_deg must be below elevation_max_deg");
        }
        if !(self.max_range > 0.0 && self.max_range.is_finite()) {
            return bad("max_range must be positive");
        }
        Ok(())
    }

    /// Elevation of `row` in degrees; row 0 is the topmost beam.
    pub fn elevation_deg(&self, row: usize) -> f64 {
        if self.beams == 1 {
            return self.elevation_min_deg;
        }
        let step = (self.elevation_max_deg - self.elevation_min_deg) / (self.beams - 1) as f64;
        self.elevation_max_deg - row as f64 * step
    }

    pub fn ray_count(&self) -> usize {
        self.beams * self.azimuth_steps
    }

    /// Parse a `key = value` rig description. Missing keys keep their
    /// defaults; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, LidarError> {
        let mut rig = SensorRig::default();
        let mut position = Vector3::zeros();
        let mut rotation = UnitQuaternion::identity();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |reason: String| LidarError::Config { line: n + 1, reason };
            let (key, value) = line.split_once('=').ok_or_else(|| err("expected key = value".into()))?;
            let (key, value) = (key.trim(), value.trim());
            let floats = |want: usize| -> Result<Vec<f64>, LidarError> {
                let v: Vec<f64> = value
                    .split_whitespace()
                    .map(|t| t.parse::<f64>().map_err(|_| err(format!("bad number {t:?} for {key}"))))
                    .collect::<Result<_, _>>()?;
                if v.len() != want {
                    return Err(err(format!("{key} takes {want} value(s)")));
                }
                Ok(v)
            };
            let count = || value.parse::<usize>().map_err(|_| err(format!("bad count {value:?} for {key}")));
            match key {
                "beams" => rig.beams = count()?,
                "azimuth_steps" => rig.azimuth_steps = count()?,
                "elevation_min_deg" => rig.elevation_min_deg = floats(1)?[0],
                "elevation_max_deg" => rig.elevation_max_deg = floats(1)?[0],
                "max_range" => rig.max_range = floats(1)?[0],
                "mount_position" => {
                    let v = floats(3)?;
                    position = Vector3::new(v[0], v[1], v[2]);
                }
                "mount_rotation" => {
                    let q = floats(4)?;
                    let q = nalgebra::Quaternion::new(q[0], q[1], q[2], q[3]);
                    if !((q.norm() - 1.0).abs() <= 1e-3) {
                        return Err(err("mount_rotation must be a unit quaternion".into()));
                    }
                    rotation = UnitQuaternion::from_quaternion(q);
                }
                other => return Err(err(format!("unknown key {other:?}"))),
            }
        }
        rig.mount = Isometry3::from_parts(Translation3::from(position), rotation);
        rig.validate()?;
        Ok(rig)
    }

    pub fn to_config(&self) -> String {
        let t = self.mount.translation.vector;
        let q = self.mount.rotation.quaternion();
        format!(
            "beams = {}\nazimuth_steps = {}\nelevation_min_deg = {}\nelevation_max_deg = {}\nmax_range = {}\n\
             mount_position = {} {} {}\nmount_rotation = {} {} {} {}\n",
            self.beams,
            self.azimuth_steps,
            self.elevation_min_deg,
            self.elevation_max_deg,
            self.max_range,
            t.x,
            t.y,
            t.z,
            q.w,
            q.i,
            q.j,
            q.k
        )
    }
}

/// All rays of one sweep, row-major (`row * azimuth_steps + col`).
pub fn make_rig(rig: &SensorRig) -> Result<Vec<Ray>, LidarError> {
    rig.validate()?;
    let origin = rig.mount.translation.vector;
    let mut rays = Vec::with_capacity(rig.ray_count());
    for row in 0..rig.beams {
        let el = rig.elevation_deg(row).to_radians();
        for col in 0..rig.azimuth_steps {
            let az = std::f64::consts::TAU * col as f64 / rig.azimuth_steps as f64;
            let local = Vector3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin());
            rays.push(Ray { origin, direction: (rig.mount.rotation * local).normalize(), row, col });
        }
    }
    Ok(rays)
}

/// Parametric overlap `[t_near, t_far]` of a ray with an axis-aligned box,
/// clamped to `t >= 0`.
pub fn ray_box(origin: &Vector3<f64>, dir: &Vector3<f64>, lo: &Vector3<f64>, hi: &Vector3<f64>) -> Option<(f64, f64)> {
    let mut t0 = 0.0f64;
    let mut t1 = f64::INFINITY;
    for a in 0..3 {
        if dir[a] == 0.0 {
            if origin[a] < lo[a] || origin[a] > hi[a] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / dir[a];
        let (mut ta, mut tb) = ((lo[a] - origin[a]) * inv, (hi[a] - origin[a]) * inv);
        if ta > tb {
            std::mem::swap(&mut ta, &mut tb);
        }
        t0 = t0.max(ta);
        t1 = t1.min(tb);
    }
    (t0 <= t1).then_some((t0, t1))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RayHit {
    Hit { depth: f64, label: u8 },
    Miss,
}

/// Voxel traversal to the first voxel carrying a semantic class; the depth is
/// the distance at which the ray enters that voxel.
pub fn dda_raycast(grid: &SemanticOccupancyGrid, ray: &Ray, max_range: f64) -> RayHit {
    let (lo, hi) = grid.bounds();
    let Some((t_enter, t_exit)) = ray_box(&ray.origin, &ray.direction, &lo, &hi) else {
        return RayHit::Miss;
    };
    if t_enter > max_range {
        return RayHit::Miss;
    }
    let s = f64::from(grid.voxel_size());
    let dims = grid.dims();
    let p = ray.origin + ray.direction * t_enter;
    let mut idx = [0i64; 3];
    let mut step = [0i64; 3];
    let mut t_max = [f64::INFINITY; 3];
    let mut t_delta = [f64::INFINITY; 3];
    for a in 0..3 {
        let rel = (p[a] - lo[a]) / s;
        idx[a] = (rel.floor() as i64).clamp(0, dims[a] as i64 - 1);
        let d = ray.direction[a];
        if d > 0.0 {
            step[a] = 1;
            t_max[a] = (lo[a] + (idx[a] + 1) as f64 * s - ray.origin[a]) / d;
            t_delta[a] = s / d;
        } else if d < 0.0 {
            step[a] = -1;
            t_max[a] = (lo[a] + idx[a] as f64 * s - ray.origin[a]) / d;
            t_delta[a] = -s / d;
        }
    }
    let mut t = t_enter;
    loop {
        if t > max_range || t > t_exit {
            return RayHit::Miss;
        }
        let label = grid
            .label(idx[0] as usize, idx[1] as usize, idx[2] as usize)
            .expect("traversal stays inside the grid");
        if is_occupied_label(label) {
            return RayHit::Hit { depth: t.max(0.0), label };
        }
        let a = if t_max[0] <= t_max[1] && t_max[0] <= t_max[2] {
            0
        } else if t_max[1] <= t_max[2] {
            1
        } else {
            2
        };
        t = t_max[a];
        idx[a] += step[a];
        if idx[a] < 0 || idx[a] >= dims[a] as i64 {
            return RayHit::Miss;
        }
        t_max[a] += t_delta[a];
    }
}

/// Occupancy at `p`, with points on the grid's upper faces assigned to the
/// outermost voxel so that the whole closed box is covered.
pub fn occupied_at(grid: &SemanticOccupancyGrid, p: &Vector3<f64>) -> bool {
    let s = f64::from(grid.voxel_size());
    let (lo, _) = grid.bounds();
    let dims = grid.dims();
    let mut idx = [0usize; 3];
    for a in 0..3 {
        let rel = (p[a] - lo[a]) / s;
        let n = dims[a] as f64;
        if !(rel >= 0.0 && rel <= n) {
            return false;
        }
        idx[a] = (rel.floor() as usize).min(dims[a] - 1);
    }
    is_occupied_label(grid.label(idx[0], idx[1], idx[2]).expect("index is clamped"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Presample {
    pub s: Vec<f64>,
    pub p: Vec<u8>,
}

/// `m` evenly spaced samples over the ray's overlap with the grid (capped at
/// `max_range`), flagged 1 inside occupied voxels.
pub fn presample_pdf(grid: &SemanticOccupancyGrid, ray: &Ray, m: usize, max_range: f64) -> Result<Presample, LidarError> {
    if m < 2 {
        return Err(LidarError::Invalid("at least two presamples are required".into()));
    }
    let (lo, hi) = grid.bounds();
    let (a, b) = ray_box(&ray.origin, &ray.direction, &lo, &hi).ok_or(LidarError::NoOverlap)?;
    let b = b.min(max_range);
    if a > b {
        return Err(LidarError::NoOverlap);
    }
    let s: Vec<f64> = (0..m).map(|i| a + (b - a) * i as f64 / (m - 1) as f64).collect();
    let p = s
        .iter()
        .map(|&t| u8::from(occupied_at(grid, &(ray.origin + ray.direction * t))))
        .collect();
    Ok(Presample { s, p })
}

/// Stratified inverse-CDF draws from the piecewise-constant density that is
/// uniform on every presample interval with both ends occupied. If no such
/// interval exists the isolated occupied samples act as equal point masses.
pub fn resample(s: &[f64], p: &[u8], n: usize, seed: u64) -> Result<Vec<f64>, LidarError> {
    if s.len() != p.len() {
        return Err(LidarError::LengthMismatch(s.len(), p.len()));
    }
    if !p.iter().any(|&v| v == 1) {
        return Err(LidarError::EmptySupport);
    }
    let mut r = rng::stream(seed, 0);
    let strata: Vec<f64> = (0..n).map(|j| (j as f64 + r.random::<f64>()) / n as f64).collect();

    let mut cdf = Vec::with_capacity(s.len());
    let mut total = 0.0;
    for i in 0..s.len().saturating_sub(1) {
        if p[i] == 1 && p[i + 1] == 1 {
            total += s[i + 1] - s[i];
        }
        cdf.push(total);
    }
    if total > 0.0 {
        return Ok(strata
            .iter()
            .map(|&u| {
                let target = u * total;
                let i = cdf.partition_point(|&c| c < target).min(cdf.len() - 1);
                let start = if i == 0 { 0.0 } else { cdf[i - 1] };
                let len = s[i + 1] - s[i];
                let frac = if len > 0.0 { ((target - start) / len).clamp(0.0, 1.0) } else { 0.0 };
                s[i] + frac * len
            })
            .collect());
    }
    let atoms: Vec<f64> = s.iter().zip(p).filter(|(_, &q)| q == 1).map(|(&t, _)| t).collect();
    Ok(strata
        .iter()
        .map(|&u| atoms[((u * atoms.len() as f64) as usize).min(atoms.len() - 1)])
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthRender {
    pub weights: Vec<f64>,
    pub depth: f64,
}

/// Logistic CDF `Phi_s(x)`.
#[inline]
pub fn phi(sharpness: f64, x: f64) -> f64 {
    let z = sharpness * x;
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Opacities from consecutive SDF values, weights by transmittance, and the
/// weighted depth.
pub fn volume_render_depth(sdf: &[f64], s: &[f64], sharpness: f64) -> Result<DepthRender, LidarError> {
    if sdf.len() != s.len() {
        return Err(LidarError::LengthMismatch(sdf.len(), s.len()));
    }
    if sdf.len() < 2 {
        return Err(LidarError::Invalid("at least two samples are required".into()));
    }
    if !(sharpness > 0.0 && sharpness.is_finite()) {
        return Err(LidarError::Invalid("sharpness must be positive".into()));
    }
    let n = sdf.len();
    let cdf: Vec<f64> = sdf.iter().map(|&f| phi(sharpness, f)).collect();
    let mut weights = vec![0.0; n];
    let mut trans = 1.0;
    let mut depth = 0.0;
    for i in 0..n - 1 {
        let beta = if cdf[i] < 1e-12 { 0.0 } else { ((cdf[i] - cdf[i + 1]) / cdf[i]).max(0.0) };
        weights[i] = trans * beta;
        depth += weights[i] * s[i];
        trans *= 1.0 - beta;
    }
    Ok(DepthRender { weights, depth })
}

/// `sum_i w_i * u_i` over row-major features of width `dim`.
pub fn ray_feature(weights: &[f64], features: &[f64], dim: usize) -> Result<Vec<f64>, LidarError> {
    if features.len() != weights.len() * dim {
        return Err(LidarError::LengthMismatch(weights.len() * dim, features.len()));
    }
    let mut out = vec![0.0; dim];
    for (w, u) in weights.iter().zip(features.chunks_exact(dim.max(1))) {
        if *w != 0.0 {
            for (o, x) in out.iter_mut().zip(u) {
                *o += w * x;
            }
        }
    }
    Ok(out)
}
