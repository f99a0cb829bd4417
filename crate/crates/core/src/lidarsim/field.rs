use super::LidarError;
use crate::voxgrid::{is_occupied_label, SemanticOccupancyGrid};
use nalgebra::Vector3;

/// Per-voxel feature vectors sampled at voxel centers with trilinear lookup.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVolume {
    pub dims: [usize; 3],
    pub voxel_size: f64,
    pub origin: [f64; 3],
    pub feature_dim: usize,
    /// `((i * dims[1] + j) * dims[2] + k) * feature_dim + f`.
    pub values: Vec<f32>,
    /// Returned for points outside the volume.
    pub far_field: Vec<f32>,
}

impl FeatureVolume {
    pub fn validate(&self) -> Result<(), LidarError> {
        let bad = |m: String| Err(LidarError::Invalid(m));
        if self.dims.contains(&0) || self.feature_dim == 0 {
            return bad("feature volume dimensions must be >= 1".into());
        }
        if !(self.voxel_size > 0.0 && self.voxel_size.is_finite()) {
            return bad("feature volume voxel size must be positive".into());
        }
        let n = self.dims.iter().product::<usize>() * self.feature_dim;
        if self.values.len() != n || self.far_field.len() != self.feature_dim {
            return bad(format!("feature volume holds {} values, expected {n}", self.values.len()));
        }
        if self.values.iter().chain(&self.far_field).any(|v| !v.is_finite()) {
            return bad("feature values must be finite".into());
        }
        Ok(())
    }

    /// Trilinear interpolation between voxel centers. Inside the outer half
    /// voxel the nearest border value is used; beyond the volume extent the
    /// far-field vector is returned.
    pub fn lookup(&self, p: &Vector3<f64>, out: &mut [f64]) {
        let mut base = [0usize; 3];
        let mut frac = [0.0f64; 3];
        for a in 0..3 {
            let c = (p[a] - self.origin[a]) / self.voxel_size - 0.5;
            let n = self.dims[a];
            if !(c >= -0.5 && c <= n as f64 - 0.5) {
                for (o, v) in out.iter_mut().zip(&self.far_field) {
                    *o = f64::from(*v);
                }
                return;
            }
            let c = c.clamp(0.0, (n - 1) as f64);
            let b = (c.floor() as usize).min(n.saturating_sub(2));
            base[a] = b;
            frac[a] = if n == 1 { 0.0 } else { c - b as f64 };
        }
        out.iter_mut().for_each(|o| *o = 0.0);
        let fd = self.feature_dim;
        for corner in 0..8 {
            let mut w = 1.0;
            let mut idx = [0usize; 3];
            for a in 0..3 {
                let hi = (corner >> a) & 1 == 1;
                if hi && self.dims[a] == 1 {
                    w = 0.0;
                }
                idx[a] = base[a] + usize::from(hi && self.dims[a] > 1);
                w *= if hi { frac[a] } else { 1.0 - frac[a] };
            }
            if w == 0.0 {
                continue;
            }
            let at = ((idx[0] * self.dims[1] + idx[1]) * self.dims[2] + idx[2]) * fd;
            for (o, v) in out.iter_mut().zip(&self.values[at..at + fd]) {
                *o += w * f64::from(*v);
            }
        }
    }
}

/// Squared 1D distance transform of `f` (lower envelope of parabolas).
fn edt_1d(f: &[f64], out: &mut [f64], v: &mut Vec<usize>, z: &mut Vec<f64>) {
    let n = f.len();
    let Some(first) = f.iter().position(|x| x.is_finite()) else {
        out.iter_mut().for_each(|o| *o = f64::INFINITY);
        return;
    };
    v.clear();
    v.resize(n, 0);
    z.clear();
    z.resize(n + 1, 0.0);
    let mut k = 0usize;
    v[0] = first;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in first + 1..n {
        if !f[q].is_finite() {
            continue;
        }
        let mut s;
        loop {
            let r = v[k];
            s = ((f[q] + (q * q) as f64) - (f[r] + (r * r) as f64)) / (2.0 * (q - r) as f64);
            if s <= z[k] {
                k -= 1;
            } else {
                break;
            }
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    let mut k = 0usize;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}

/// Euclidean distance (in voxels) from every cell to the nearest seed cell.
fn edt_3d(seed: &[bool], dims: [usize; 3]) -> Vec<f64> {
    let [nx, ny, nz] = dims;
    let mut d: Vec<f64> = seed.iter().map(|&s| if s { 0.0 } else { f64::INFINITY }).collect();
    let (mut v, mut z) = (Vec::new(), Vec::new());
    let mut line = Vec::new();
    let mut out = Vec::new();
    let mut pass = |d: &mut Vec<f64>, len: usize, index: &dyn Fn(usize, usize) -> usize, lines: usize| {
        line.resize(len, 0.0);
        out.resize(len, 0.0);
        for l in 0..lines {
            for q in 0..len {
                line[q] = d[index(l, q)];
            }
            edt_1d(&line, &mut out, &mut v, &mut z);
            for q in 0..len {
                d[index(l, q)] = out[q];
            }
        }
    };
    pass(&mut d, nz, &|l, q| l * nz + q, nx * ny);
    pass(&mut d, ny, &|l, q| ((l / nz) * ny + q) * nz + l % nz, nx * nz);
    pass(&mut d, nx, &|l, q| q * ny * nz + l, ny * nz);
    d.iter_mut().for_each(|x| *x = x.sqrt());
    d
}

/// Exact signed distance to the union of occupied voxel boxes: positive in
/// free space, negative inside. Opposite-state voxels are searched in the
/// 5x5x5 neighbourhood of the query; beyond it a center-to-center distance
/// transform supplies the magnitude.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticSdf {
    /// Grid dimensions plus one free voxel of padding per side.
    dims: [usize; 3],
    origin: [f64; 3],
    voxel_size: f64,
    occupied: Vec<bool>,
    coarse: Vec<f32>,
    far_field: f64,
}

impl AnalyticSdf {
    pub fn new(grid: &SemanticOccupancyGrid) -> Self {
        let [h, w, d] = grid.dims();
        let dims = [h + 2, w + 2, d + 2];
        let s = f64::from(grid.voxel_size());
        let n: usize = dims.iter().product();
        let mut occupied = vec![false; n];
        for ([i, j, k], l) in grid.iter_indexed() {
            occupied[((i + 1) * dims[1] + j + 1) * dims[2] + k + 1] = is_occupied_label(l);
        }
        let free: Vec<bool> = occupied.iter().map(|o| !o).collect();
        let to_occupied = edt_3d(&occupied, dims);
        let to_free = edt_3d(&free, dims);
        let (lo, hi) = grid.bounds();
        let far_field = (hi - lo).norm() + 2.0 * s;
        let coarse = (0..n)
            .map(|c| {
                let v = if occupied[c] { -(to_free[c] - 0.5) * s } else { (to_occupied[c] - 0.5) * s };
                v.clamp(-far_field, far_field) as f32
            })
            .collect();
        let o = grid.origin();
        Self {
            dims,
            origin: [f64::from(o[0]) - s, f64::from(o[1]) - s, f64::from(o[2]) - s],
            voxel_size: s,
            occupied,
            coarse,
            far_field,
        }
    }

    /// Value returned outside the padded grid.
    pub fn far_field(&self) -> f64 {
        self.far_field
    }

    pub fn eval(&self, p: &Vector3<f64>) -> f64 {
        let s = self.voxel_size;
        let mut cell = [0usize; 3];
        for a in 0..3 {
            let c = ((p[a] - self.origin[a]) / s).floor();
            if !(c >= 0.0 && c < self.dims[a] as f64) {
                return self.far_field;
            }
            cell[a] = c as usize;
        }
        let at = |i: usize, j: usize, k: usize| (i * self.dims[1] + j) * self.dims[2] + k;
        let here = at(cell[0], cell[1], cell[2]);
        let inside = self.occupied[here];
        let range = |a: usize| cell[a].saturating_sub(2)..=(cell[a] + 2).min(self.dims[a] - 1);
        let mut best = f64::INFINITY;
        for i in range(0) {
            for j in range(1) {
                for k in range(2) {
                    if self.occupied[at(i, j, k)] == inside {
                        continue;
                    }
                    let mut d2 = 0.0;
                    for (a, idx) in [i, j, k].into_iter().enumerate() {
                        let lo = self.origin[a] + idx as f64 * s;
                        let gap = (lo - p[a]).max(p[a] - lo - s).max(0.0);
                        d2 += gap * gap;
                    }
                    best = best.min(d2);
                }
            }
        }
        let magnitude = if best.is_finite() {
            best.sqrt()
        } else {
            f64::from(self.coarse[here]).abs().max(1.5 * s)
        };
        if inside { -magnitude } else { magnitude }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProviderMode {
    AnalyticSdf,
    Loaded,
}

/// Per-point features for the LiDAR heads.
#[derive(Debug, Clone, PartialEq)]
pub enum FeatureProvider {
    /// Scalar signed distance derived from the grid itself.
    AnalyticSdf(AnalyticSdf),
    Loaded(FeatureVolume),
}

impl FeatureProvider {
    pub fn analytic(grid: &SemanticOccupancyGrid) -> Self {
        Self::AnalyticSdf(AnalyticSdf::new(grid))
    }

    pub fn loaded(volume: FeatureVolume) -> Result<Self, LidarError> {
        volume.validate()?;
        Ok(Self::Loaded(volume))
    }

    pub fn mode(&self) -> ProviderMode {
        match self {
            Self::AnalyticSdf(_) => ProviderMode::AnalyticSdf,
            Self::Loaded(_) => ProviderMode::Loaded,
        }
    }

    pub fn feature_dim(&self) -> usize {
        match self {
            Self::AnalyticSdf(_) => 1,
            Self::Loaded(v) => v.feature_dim,
        }
    }

    pub fn features(&self, p: &Vector3<f64>, out: &mut [f64]) {
        match self {
            Self::AnalyticSdf(sdf) => out[0] = sdf.eval(p),
            Self::Loaded(v) => v.lookup(p, out),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::voxgrid::FREE;
    use proptest::prelude::*;

    fn brute(seed: &[bool], dims: [usize; 3]) -> Vec<f64> {
        let idx = |c: usize| [c / (dims[1] * dims[2]), (c / dims[2]) % dims[1], c % dims[2]];
        (0..seed.len())
            .map(|a| {
                let pa = idx(a);
                (0..seed.len())
                    .filter(|&b| seed[b])
                    .map(|b| {
                        let pb = idx(b);
                        (0..3).map(|x| (pa[x] as f64 - pb[x] as f64).powi(2)).sum::<f64>().sqrt()
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .collect()
    }

    proptest! {
        #[test]
        fn edt_matches_brute_force(
            dims in prop::array::uniform3(1usize..6),
            bits in prop::collection::vec(prop::bool::weighted(0.2), 216),
        ) {
            let n = dims.iter().product::<usize>();
            let seed = &bits[..n];
            let fast = edt_3d(seed, dims);
            for (a, b) in fast.iter().zip(brute(seed, dims)) {
                prop_assert!(a == &b || (a - b).abs() < 1e-9, "{} vs {}", a, b);
            }
        }
    }

    fn box_distance(p: Vector3<f64>, lo: Vector3<f64>, hi: Vector3<f64>) -> f64 {
        (0..3).map(|a| (lo[a] - p[a]).max(p[a] - hi[a]).max(0.0).powi(2)).sum::<f64>().sqrt()
    }

    #[test]
    fn single_voxel_sdf() {
        let mut g = SemanticOccupancyGrid::filled([3, 3, 3], 0.5, [0.0; 3], 17, FREE).unwrap();
        g.set_label(1, 1, 1, 4).unwrap();
        let sdf = AnalyticSdf::new(&g);
        assert!((sdf.eval(&Vector3::new(0.75, 0.75, 0.75)) + 0.25).abs() < 1e-12);
        assert!(sdf.eval(&Vector3::new(1.0, 0.75, 0.75)).abs() < 1e-12);
        assert!((sdf.eval(&Vector3::new(1.25, 0.75, 0.75)) - 0.25).abs() < 1e-12);
        // near a corner the voxel is still solid
        assert!((sdf.eval(&Vector3::new(0.51, 0.52, 0.53)) + 0.01).abs() < 1e-12);
        let corner = Vector3::new(0.4, 0.4, 0.4);
        assert!((sdf.eval(&corner) - (3.0f64 * 0.01).sqrt()).abs() < 1e-12);
        assert_eq!(sdf.eval(&Vector3::new(50.0, 0.0, 0.0)), sdf.far_field());
    }

    #[test]
    fn analytic_sdf_matches_brute_force_near_surfaces() {
        use rand::{Rng, SeedableRng};
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let n = 6;
        let labels = (0..n * n * n).map(|_| if r.random::<f64>() < 0.3 { 2 } else { FREE }).collect();
        let g = SemanticOccupancyGrid::new([n, n, n], 1.0, [0.0; 3], 17, labels).unwrap();
        let sdf = AnalyticSdf::new(&g);
        let boxes: Vec<(bool, Vector3<f64>)> = (-1..=n as i64)
            .flat_map(|i| (-1..=n as i64).flat_map(move |j| (-1..=n as i64).map(move |k| (i, j, k))))
            .map(|(i, j, k)| {
                let inside = [i, j, k].iter().all(|&x| x >= 0 && x < n as i64)
                    && is_occupied_label(g.label(i as usize, j as usize, k as usize).unwrap());
                (inside, Vector3::new(i as f64, j as f64, k as f64))
            })
            .collect();
        for _ in 0..2000 {
            let p = Vector3::new(r.random_range(0.0..6.0), r.random_range(0.0..6.0), r.random_range(0.0..6.0));
            let inside = g.is_occupied_at(&p);
            let d = boxes
                .iter()
                .filter(|(occ, _)| *occ != inside)
                .map(|(_, lo)| box_distance(p, *lo, lo + Vector3::repeat(1.0)))
                .fold(f64::INFINITY, f64::min);
            let v = sdf.eval(&p);
            assert_eq!(v < 0.0, inside);
            if d < 1.5 {
                assert!((v.abs() - d).abs() < 1e-12, "{v} vs {d}");
            }
        }
    }

    #[test]
    fn all_free_grid_is_positive_everywhere() {
        let g = SemanticOccupancyGrid::filled([4, 4, 4], 1.0, [0.0; 3], 17, FREE).unwrap();
        let sdf = AnalyticSdf::new(&g);
        for x in [0.1, 1.5, 3.9] {
            assert!(sdf.eval(&Vector3::new(x, 2.0, 2.0)) >= 1.5);
        }
    }

    #[test]
    fn trilinear_reproduces_linear_field() {
        let dims = [4, 3, 5];
        let mut values = Vec::new();
        for i in 0..4 {
            for j in 0..3 {
                for k in 0..5 {
                    let c = [(i as f64 + 0.5) * 2.0, (j as f64 + 0.5) * 2.0, (k as f64 + 0.5) * 2.0];
                    values.push((1.0 + 0.5 * c[0] - 0.25 * c[1] + 2.0 * c[2]) as f32);
                    values.push(c[0] as f32);
                }
            }
        }
        let vol = FeatureVolume { dims, voxel_size: 2.0, origin: [0.0; 3], feature_dim: 2, values, far_field: vec![0.0, 0.0] };
        vol.validate().unwrap();
        let mut out = [0.0; 2];
        let p = Vector3::new(3.3, 2.7, 6.1);
        vol.lookup(&p, &mut out);
        assert!((out[0] - (1.0 + 0.5 * p.x - 0.25 * p.y + 2.0 * p.z)).abs() < 1e-5);
        assert!((out[1] - p.x).abs() < 1e-5);
        vol.lookup(&Vector3::new(-0.1, 1.0, 1.0), &mut out);
        assert_eq!(out, [0.0, 0.0]);
    }

    #[test]
    fn loaded_volume_is_validated() {
        let vol = FeatureVolume {
            dims: [1, 1, 1],
            voxel_size: 1.0,
            origin: [0.0; 3],
            feature_dim: 2,
            values: vec![1.0],
            far_field: vec![0.0, 0.0],
        };
        assert!(FeatureProvider::loaded(vol).is_err());
    }
}
