//! Semantic occupancy grids, BEV layouts and the class-embedding fold.
//!
//! World frame is x-forward, y-left, z-up. Voxel index `(i, j, k)` maps to
//! `(x, y, z)`; labels are stored with `i` outermost and `k` innermost.

mod codec;
mod embed;
mod layout;

pub use codec::{
    decode_bvl, decode_cemb, decode_svo, encode_bvl, encode_cemb, encode_svo, FormatError,
    BVL_MAGIC, CEMB_MAGIC, SVO_HEADER_LEN, SVO_MAGIC,
};
pub use embed::{embed_labels, unembed_labels, BevFeatureMap, ClassEmbeddingTable};
pub use layout::{edit_layout, BevLayout, CellRect, LayoutEdit, LayoutPalette};

use nalgebra::Vector3;
use thiserror::Error;

/// Label of a free voxel.
pub const FREE: u8 = 0;
/// Sentinel for voxels whose state is unknown.
pub const UNKNOWN: u8 = 255;

/// True for labels that carry a semantic class (neither free nor unknown).
#[inline]
pub fn is_occupied_label(label: u8) -> bool {
    label != FREE && label != UNKNOWN
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("voxel index ({0}, {1}, {2}) is outside the grid")]
    IndexOutOfBounds(usize, usize, usize),
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("invalid grid: {0}")]
    Invalid(String),
    #[error("edit region {0:?} lies outside the layout")]
    RegionOutOfBounds(CellRect),
    #[error("code {code} is outside the palette of size {palette_size}")]
    CodeOutOfPalette { code: u8, palette_size: u32 },
}

/// Dense `H x W x D` semantic occupancy grid with metric placement.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticOccupancyGrid {
    dims: [usize; 3],
    voxel_size: f32,
    origin: [f32; 3],
    num_classes: u32,
    labels: Vec<u8>,
}

impl SemanticOccupancyGrid {
    pub fn new(
        dims: [usize; 3],
        voxel_size: f32,
        origin: [f32; 3],
        num_classes: u32,
        labels: Vec<u8>,
    ) -> Result<Self, GridError> {
        if dims.iter().any(|&d| d == 0) {
            return Err(GridError::Invalid(format!("dims {dims:?} must all be >= 1")));
        }
        if !(voxel_size.is_finite() && voxel_size > 0.0) {
            return Err(GridError::Invalid(format!("voxel_size {voxel_size} must be > 0")));
        }
        if origin.iter().any(|v| !v.is_finite()) {
            return Err(GridError::Invalid("origin must be finite".into()));
        }
        if num_classes == 0 {
            return Err(GridError::Invalid("num_classes must be >= 1".into()));
        }
        let expected = dims[0] * dims[1] * dims[2];
        if labels.len() != expected {
            return Err(GridError::DimMismatch(format!(
                "{} labels for dims {dims:?} ({expected} expected)",
                labels.len()
            )));
        }
        if let Some((idx, &l)) = labels
            .iter()
            .enumerate()
            .find(|(_, &l)| l != UNKNOWN && u32::from(l) >= num_classes)
        {
            return Err(GridError::Invalid(format!(
                "label {l} at flat index {idx} is >= num_classes {num_classes}"
            )));
        }
        Ok(Self { dims, voxel_size, origin, num_classes, labels })
    }

    /// Grid with every voxel set to `fill`.
    pub fn filled(
        dims: [usize; 3],
        voxel_size: f32,
        origin: [f32; 3],
        num_classes: u32,
        fill: u8,
    ) -> Result<Self, GridError> {
        let n = dims.iter().product();
        Self::new(dims, voxel_size, origin, num_classes, vec![fill; n])
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn voxel_size(&self) -> f32 {
        self.voxel_size
    }

    pub fn origin(&self) -> [f32; 3] {
        self.origin
    }

    pub fn num_classes(&self) -> u32 {
        self.num_classes
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    #[inline]
    pub fn flat_index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.dims[1] + j) * self.dims[2] + k
    }

    #[inline]
    pub fn contains_index(&self, i: usize, j: usize, k: usize) -> bool {
        i < self.dims[0] && j < self.dims[1] && k < self.dims[2]
    }

    pub fn label(&self, i: usize, j: usize, k: usize) -> Result<u8, GridError> {
        if !self.contains_index(i, j, k) {
            return Err(GridError::IndexOutOfBounds(i, j, k));
        }
        Ok(self.labels[self.flat_index(i, j, k)])
    }

    pub fn set_label(&mut self, i: usize, j: usize, k: usize, label: u8) -> Result<(), GridError> {
        if !self.contains_index(i, j, k) {
            return Err(GridError::IndexOutOfBounds(i, j, k));
        }
        if label != UNKNOWN && u32::from(label) >= self.num_classes {
            return Err(GridError::Invalid(format!(
                "label {label} is >= num_classes {}",
                self.num_classes
            )));
        }
        let idx = self.flat_index(i, j, k);
        self.labels[idx] = label;
        Ok(())
    }

    /// Metric center of voxel `(i, j, k)`.
    pub fn voxel_center(&self, i: usize, j: usize, k: usize) -> Result<Vector3<f64>, GridError> {
        if !self.contains_index(i, j, k) {
            return Err(GridError::IndexOutOfBounds(i, j, k));
        }
        let s = f64::from(self.voxel_size);
        Ok(Vector3::new(
            f64::from(self.origin[0]) + (i as f64 + 0.5) * s,
            f64::from(self.origin[1]) + (j as f64 + 0.5) * s,
            f64::from(self.origin[2]) + (k as f64 + 0.5) * s,
        ))
    }

    /// Axis-aligned bounds `(min, max)` of the grid in meters.
    pub fn bounds(&self) -> (Vector3<f64>, Vector3<f64>) {
        let s = f64::from(self.voxel_size);
        let min = Vector3::new(
            f64::from(self.origin[0]),
            f64::from(self.origin[1]),
            f64::from(self.origin[2]),
        );
        let ext = Vector3::new(
            self.dims[0] as f64 * s,
            self.dims[1] as f64 * s,
            self.dims[2] as f64 * s,
        );
        (min, min + ext)
    }

    /// Index of the voxel containing `p`, if inside the grid. Faces belong to
    /// the voxel on their upper side.
    pub fn locate(&self, p: &Vector3<f64>) -> Option<[usize; 3]> {
        let s = f64::from(self.voxel_size);
        let mut idx = [0usize; 3];
        for a in 0..3 {
            let f = ((p[a] - f64::from(self.origin[a])) / s).floor();
            if !(f >= 0.0 && f < self.dims[a] as f64) {
                return None;
            }
            idx[a] = f as usize;
        }
        Some(idx)
    }

    /// Whether `p` lies in a voxel carrying a semantic class.
    pub fn is_occupied_at(&self, p: &Vector3<f64>) -> bool {
        self.locate(p)
            .map(|[i, j, k]| is_occupied_label(self.labels[self.flat_index(i, j, k)]))
            .unwrap_or(false)
    }

    pub fn occupied_count(&self) -> usize {
        self.labels.iter().filter(|&&l| is_occupied_label(l)).count()
    }

    /// Iterate `((i, j, k), label)` in storage order.
    pub fn iter_indexed(&self) -> impl Iterator<Item = ([usize; 3], u8)> + '_ {
        let [_, w, d] = self.dims;
        self.labels.iter().enumerate().map(move |(n, &l)| {
            let k = n % d;
            let j = (n / d) % w;
            let i = n / (d * w);
            ([i, j, k], l)
        })
    }

    /// Relabel the lowest occupied voxel of every column whose BEV cell in
    /// `layout` carries one of `line_codes`. Columns are matched to layout
    /// cells by their metric xy center.
    pub fn project_layout_lines(
        &self,
        layout: &BevLayout,
        line_codes: &[u8],
        line_label: u8,
    ) -> Result<Self, GridError> {
        if u32::from(line_label) >= self.num_classes {
            return Err(GridError::Invalid(format!(
                "line label {line_label} is >= num_classes {}",
                self.num_classes
            )));
        }
        let mut out = self.clone();
        let [h, w, d] = self.dims;
        for i in 0..h {
            for j in 0..w {
                let c = self.voxel_center(i, j, 0)?;
                let Some(code) = layout.code_at_xy(c.x, c.y) else { continue };
                if !line_codes.contains(&code) {
                    continue;
                }
                if let Some(k) = (0..d).find(|&k| is_occupied_label(self.labels[self.flat_index(i, j, k)])) {
                    let idx = out.flat_index(i, j, k);
                    out.labels[idx] = line_label;
                }
            }
        }
        Ok(out)
    }
}
