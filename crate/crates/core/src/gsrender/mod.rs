//! Forward Gaussian splatting of semantic occupancy into per-camera depth and
//! semantic maps.
//!
//! Every occupied voxel becomes an axis-aligned 3D Gaussian centered on the
//! voxel. Gaussians are projected with the local affine (EWA) approximation of
//! the pinhole model and alpha-composited front to back. Depth accumulates
//! `d_i * a_i * T_i` without normalization; semantics take the argmax of the
//! accumulated per-class mass.

mod camera;
mod raster;

pub use camera::{parse_camera_rig, Camera, CameraError};
pub use raster::{composite_reference, rasterize, rasterize_with, RenderOptions};

use crate::voxgrid::{is_occupied_label, SemanticOccupancyGrid};
use nalgebra::{Matrix2, Matrix2x3, Matrix3, UnitQuaternion, Vector2, Vector3};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GaussianError {
    #[error("invalid gaussian primitive: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPrimitive {
    pub position: Vector3<f64>,
    /// Per-axis standard deviations before rotation.
    pub scale: Vector3<f64>,
    pub rotation: UnitQuaternion<f64>,
    pub opacity: f64,
    pub label: u8,
}

impl GaussianPrimitive {
    pub fn new(
        position: Vector3<f64>,
        scale: Vector3<f64>,
        rotation: UnitQuaternion<f64>,
        opacity: f64,
        label: u8,
    ) -> Result<Self, GaussianError> {
        if position.iter().any(|v| !v.is_finite()) {
            return Err(GaussianError::Invalid("position must be finite".into()));
        }
        if scale.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(GaussianError::Invalid(format!("scale {scale:?} must be > 0")));
        }
        if !(opacity > 0.0 && opacity <= 1.0) {
            return Err(GaussianError::Invalid(format!("opacity {opacity} must be in (0, 1]")));
        }
        Ok(Self { position, scale, rotation, opacity, label })
    }

    /// World-frame covariance `R S S^T R^T`.
    pub fn covariance(&self) -> Matrix3<f64> {
        let r = self.rotation.to_rotation_matrix().into_inner();
        let s = Matrix3::from_diagonal(&self.scale);
        let m = r * s;
        m * m.transpose()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoxelSplatParams {
    pub opacity: f64,
    /// Gaussian standard deviation as a fraction of the voxel edge.
    pub scale_factor: f64,
}

impl Default for VoxelSplatParams {
    fn default() -> Self {
        Self { opacity: 0.99, scale_factor: 0.5 }
    }
}

/// One Gaussian per occupied voxel, in grid storage order.
pub fn voxels_to_gaussians(
    grid: &SemanticOccupancyGrid,
    params: VoxelSplatParams,
) -> Result<Vec<GaussianPrimitive>, GaussianError> {
    if !(params.opacity > 0.0 && params.opacity <= 1.0) {
        return Err(GaussianError::Invalid(format!("opacity {} must be in (0, 1]", params.opacity)));
    }
    if !(params.scale_factor > 0.0 && params.scale_factor.is_finite()) {
        return Err(GaussianError::Invalid(format!("scale_factor {} must be > 0", params.scale_factor)));
    }
    let s = params.scale_factor * f64::from(grid.voxel_size());
    let scale = Vector3::new(s, s, s);
    let mut out = Vec::with_capacity(grid.occupied_count());
    for ([i, j, k], label) in grid.iter_indexed() {
        if !is_occupied_label(label) {
            continue;
        }
        let position = grid.voxel_center(i, j, k).expect("index from iteration is in bounds");
        out.push(GaussianPrimitive {
            position,
            scale,
            rotation: UnitQuaternion::identity(),
            opacity: params.opacity,
            label,
        });
    }
    Ok(out)
}

/// Screen-space footprint of a primitive.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedGaussian {
    pub mean: Vector2<f64>,
    /// Image-plane covariance including the anti-alias floor.
    pub cov: Matrix2<f64>,
    /// Camera-frame z of the center.
    pub depth: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Projection {
    Visible(ProjectedGaussian),
    Culled,
}

pub const DEFAULT_NEAR: f64 = 0.05;
pub const COV_FLOOR: f64 = 0.3;
/// The Jacobian is evaluated with `x/z`, `y/z` clamped to this multiple of
/// the half field of view.
pub const FRUSTUM_MARGIN: f64 = 1.3;

pub fn project_gaussian(p: &GaussianPrimitive, cam: &Camera) -> Projection {
    project_gaussian_with(p, cam, DEFAULT_NEAR, COV_FLOOR)
}

pub fn project_gaussian_with(p: &GaussianPrimitive, cam: &Camera, near: f64, floor: f64) -> Projection {
    let t = cam.world_to_camera(&p.position);
    if !(t.z > near) {
        return Projection::Culled;
    }
    let (u, v) = cam.project(&t);
    let lim_x = FRUSTUM_MARGIN * cam.cx.max(cam.width as f64 - cam.cx) / cam.fx;
    let lim_y = FRUSTUM_MARGIN * cam.cy.max(cam.height as f64 - cam.cy) / cam.fy;
    let tx = (t.x / t.z).clamp(-lim_x, lim_x);
    let ty = (t.y / t.z).clamp(-lim_y, lim_y);
    let jac = Matrix2x3::new(
        cam.fx / t.z, 0.0, -cam.fx * tx / t.z,
        0.0, cam.fy / t.z, -cam.fy * ty / t.z,
    );
    let w = cam.rotation.to_rotation_matrix().into_inner();
    let cov_cam = w * p.covariance() * w.transpose();
    let mut cov = jac * cov_cam * jac.transpose();
    // exact symmetry keeps the conic well defined
    let off = 0.5 * (cov[(0, 1)] + cov[(1, 0)]);
    cov[(0, 1)] = off;
    cov[(1, 0)] = off;
    cov[(0, 0)] += floor;
    cov[(1, 1)] += floor;
    Projection::Visible(ProjectedGaussian { mean: Vector2::new(u, v), cov, depth: t.z })
}

/// Rendered depth with per-pixel accumulated opacity.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub depth: Vec<f32>,
    pub opacity: Vec<f32>,
}

impl DepthMap {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self { width, height, depth: vec![0.0; width * height], opacity: vec![0.0; width * height] }
    }

    /// Constant-depth map with full opacity.
    pub fn constant(width: usize, height: usize, depth: f32) -> Self {
        Self { width, height, depth: vec![depth; width * height], opacity: vec![1.0; width * height] }
    }

    pub fn at(&self, u: usize, v: usize) -> f32 {
        self.depth[v * self.width + u]
    }
}

/// Per-pixel class labels; 255 marks pixels with no class.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticMap {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<u8>,
}

impl SemanticMap {
    pub const NO_CLASS: u8 = 255;

    pub fn at(&self, u: usize, v: usize) -> u8 {
        self.labels[v * self.width + u]
    }
}
