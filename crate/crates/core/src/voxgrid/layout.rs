use super::GridError;

/// Layout codes shipped with the default palette. Other palettes load fine;
/// the file header's palette size is authoritative.
pub struct LayoutPalette;

impl LayoutPalette {
    pub const EMPTY: u8 = 0;
    pub const ROAD: u8 = 1;
    pub const LANE_LINE: u8 = 2;
    pub const CROSSWALK: u8 = 3;
    pub const VEHICLE: u8 = 4;
    pub const PEDESTRIAN: u8 = 5;
    pub const SIDEWALK: u8 = 6;
    pub const VEGETATION: u8 = 7;
    pub const SIZE: u32 = 8;

    pub fn name(code: u8) -> Option<&'static str> {
        Some(match code {
            0 => "empty",
            1 => "road",
            2 => "lane_line",
            3 => "crosswalk",
            4 => "vehicle",
            5 => "pedestrian",
            6 => "sidewalk",
            7 => "vegetation",
            _ => return None,
        })
    }
}

/// Top-down class-coded layout grid. Cell `(i, j)` covers x-row `i` and y-column `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct BevLayout {
    dims: [usize; 2],
    cell_size: f32,
    origin: [f32; 2],
    palette_size: u32,
    codes: Vec<u8>,
}

impl BevLayout {
    pub fn new(
        dims: [usize; 2],
        cell_size: f32,
        origin: [f32; 2],
        palette_size: u32,
        codes: Vec<u8>,
    ) -> Result<Self, GridError> {
        if dims[0] == 0 || dims[1] == 0 {
            return Err(GridError::Invalid(format!("layout dims {dims:?} must be >= 1")));
        }
        if !(cell_size.is_finite() && cell_size > 0.0) {
            return Err(GridError::Invalid(format!("cell_size {cell_size} must be > 0")));
        }
        if origin.iter().any(|v| !v.is_finite()) {
            return Err(GridError::Invalid("layout origin must be finite".into()));
        }
        if codes.len() != dims[0] * dims[1] {
            return Err(GridError::DimMismatch(format!(
                "{} codes for layout dims {dims:?}",
                codes.len()
            )));
        }
        if let Some(&code) = codes.iter().find(|&&c| u32::from(c) >= palette_size) {
            return Err(GridError::CodeOutOfPalette { code, palette_size });
        }
        Ok(Self { dims, cell_size, origin, palette_size, codes })
    }

    pub fn empty(dims: [usize; 2], cell_size: f32, origin: [f32; 2], palette_size: u32) -> Result<Self, GridError> {
        Self::new(dims, cell_size, origin, palette_size, vec![0; dims[0] * dims[1]])
    }

    pub fn dims(&self) -> [usize; 2] {
        self.dims
    }

    pub fn cell_size(&self) -> f32 {
        self.cell_size
    }

    pub fn origin(&self) -> [f32; 2] {
        self.origin
    }

    pub fn palette_size(&self) -> u32 {
        self.palette_size
    }

    pub fn codes(&self) -> &[u8] {
        &self.codes
    }

    pub fn code(&self, i: usize, j: usize) -> u8 {
        self.codes[i * self.dims[1] + j]
    }

    /// Code of the cell containing metric point `(x, y)`.
    pub fn code_at_xy(&self, x: f64, y: f64) -> Option<u8> {
        let s = f64::from(self.cell_size);
        let fi = ((x - f64::from(self.origin[0])) / s).floor();
        let fj = ((y - f64::from(self.origin[1])) / s).floor();
        if fi < 0.0 || fj < 0.0 || fi >= self.dims[0] as f64 || fj >= self.dims[1] as f64 {
            return None;
        }
        Some(self.code(fi as usize, fj as usize))
    }
}

/// Half-open cell rectangle `[i0, i1) x [j0, j1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellRect {
    pub i0: usize,
    pub j0: usize,
    pub i1: usize,
    pub j1: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayoutEdit {
    pub region: CellRect,
    pub code: u8,
}

/// Apply `edits` in order; later edits win where regions overlap.
pub fn edit_layout(layout: &BevLayout, edits: &[LayoutEdit]) -> Result<BevLayout, GridError> {
    let mut out = layout.clone();
    let [h, w] = layout.dims;
    for edit in edits {
        let r = edit.region;
        if r.i0 > r.i1 || r.j0 > r.j1 || r.i1 > h || r.j1 > w {
            return Err(GridError::RegionOutOfBounds(r));
        }
        if u32::from(edit.code) >= layout.palette_size {
            return Err(GridError::CodeOutOfPalette {
                code: edit.code,
                palette_size: layout.palette_size,
            });
        }
        for i in r.i0..r.i1 {
            out.codes[i * w + r.j0..i * w + r.j1].fill(edit.code);
        }
    }
    Ok(out)
}
