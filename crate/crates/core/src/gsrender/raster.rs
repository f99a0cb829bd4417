use super::{project_gaussian_with, Camera, DepthMap, GaussianPrimitive, Projection, SemanticMap};
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderOptions {
    pub near: f64,
    pub cov_floor: f64,
    /// Upper clamp on per-splat alpha.
    pub alpha_max: f64,
    /// Contributions below this alpha are skipped.
    pub alpha_min: f64,
    /// Compositing stops once transmittance falls below this.
    pub min_transmittance: f64,
    pub tile_size: usize,
    /// Pixels with less accumulated opacity get no class and zero depth.
    pub min_coverage: f64,
    /// Divide accumulated depth by accumulated opacity.
    pub normalize_depth: bool,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            near: super::DEFAULT_NEAR,
            cov_floor: super::COV_FLOOR,
            alpha_max: 0.99,
            alpha_min: 1.0 / 255.0,
            min_transmittance: 1e-4,
            tile_size: 16,
            min_coverage: 1e-3,
            normalize_depth: false,
        }
    }
}

/// Projected primitive ready for compositing.
#[derive(Debug, Clone)]
struct Splat {
    mean: [f64; 2],
    /// Inverse covariance (a, b, c) of [[a, b], [b, c]].
    conic: [f64; 3],
    depth: f64,
    opacity: f64,
    label: u8,
    /// Pixel bounding box (inclusive) outside of which alpha < alpha_min.
    bbox: [i64; 4],
}

impl Splat {
    #[inline]
    fn alpha(&self, px: f64, py: f64, alpha_max: f64) -> f64 {
        let dx = px - self.mean[0];
        let dy = py - self.mean[1];
        let power = -0.5 * (self.conic[0] * dx * dx + 2.0 * self.conic[1] * dx * dy + self.conic[2] * dy * dy);
        (self.opacity * power.exp()).min(alpha_max)
    }
}

/// Project, drop culled and never-visible primitives, and sort front to back
/// by depth with ties kept in input order.
fn prepare(prims: &[GaussianPrimitive], cam: &Camera, opts: &RenderOptions) -> Vec<Splat> {
    let mut splats: Vec<(usize, Splat)> = prims
        .iter()
        .enumerate()
        .filter_map(|(idx, p)| {
            let Projection::Visible(pr) = project_gaussian_with(p, cam, opts.near, opts.cov_floor) else {
                return None;
            };
            let (a, b, c) = (pr.cov[(0, 0)], pr.cov[(0, 1)], pr.cov[(1, 1)]);
            let det = a * c - b * b;
            if !(det > 0.0) {
                return None;
            }
            // alpha >= alpha_min inside the ellipse q <= 2 ln(opacity / alpha_min)
            let opacity = p.opacity.min(opts.alpha_max);
            let ratio = opacity / opts.alpha_min;
            if ratio < 1.0 {
                return None;
            }
            let q = 2.0 * ratio.ln();
            let ex = (q * a).sqrt() + 1e-3;
            let ey = (q * c).sqrt() + 1e-3;
            let bbox = [
                (pr.mean.x - ex).floor() as i64,
                (pr.mean.y - ey).floor() as i64,
                (pr.mean.x + ex).ceil() as i64,
                (pr.mean.y + ey).ceil() as i64,
            ];
            if bbox[2] < 0 || bbox[3] < 0 || bbox[0] >= cam.width as i64 || bbox[1] >= cam.height as i64 {
                return None;
            }
            Some((
                idx,
                Splat {
                    mean: [pr.mean.x, pr.mean.y],
                    conic: [c / det, -b / det, a / det],
                    depth: pr.depth,
                    opacity: p.opacity,
                    label: p.label,
                    bbox,
                },
            ))
        })
        .collect();
    splats.sort_by(|(ia, a), (ib, b)| a.depth.total_cmp(&b.depth).then(ia.cmp(ib)));
    splats.into_iter().map(|(_, s)| s).collect()
}

#[derive(Default)]
struct PixelAccum {
    depth: f64,
    transmittance: f64,
    mass: Vec<(u8, f64)>,
}

impl PixelAccum {
    fn reset(&mut self) {
        self.depth = 0.0;
        self.transmittance = 1.0;
        self.mass.clear();
    }

    #[inline]
    fn add(&mut self, splat: &Splat, alpha: f64) {
        let w = alpha * self.transmittance;
        self.depth += splat.depth * w;
        match self.mass.iter_mut().find(|(l, _)| *l == splat.label) {
            Some((_, m)) => *m += w,
            None => self.mass.push((splat.label, w)),
        }
        self.transmittance *= 1.0 - alpha;
    }

    fn finish(&self, opts: &RenderOptions) -> (f32, f32, u8) {
        let coverage = 1.0 - self.transmittance;
        if coverage < opts.min_coverage {
            return (0.0, coverage as f32, SemanticMap::NO_CLASS);
        }
        let mut best = (SemanticMap::NO_CLASS, f64::NEG_INFINITY);
        for &(label, m) in &self.mass {
            if m > best.1 || (m == best.1 && label < best.0) {
                best = (label, m);
            }
        }
        let depth = if opts.normalize_depth { self.depth / coverage } else { self.depth };
        (depth as f32, coverage as f32, best.0)
    }
}

/// Tile-based rasterization with default options.
pub fn rasterize(prims: &[GaussianPrimitive], cam: &Camera) -> (DepthMap, SemanticMap) {
    rasterize_with(prims, cam, &RenderOptions::default())
}

pub fn rasterize_with(
    prims: &[GaussianPrimitive],
    cam: &Camera,
    opts: &RenderOptions,
) -> (DepthMap, SemanticMap) {
    let (width, height) = (cam.width, cam.height);
    let ts = opts.tile_size.max(1);
    let tiles_x = width.div_ceil(ts);
    let tiles_y = height.div_ceil(ts);
    let splats = prepare(prims, cam, opts);

    // binning in sorted order keeps every tile list sorted
    let mut bins: Vec<Vec<u32>> = vec![Vec::new(); tiles_x * tiles_y];
    for (n, s) in splats.iter().enumerate() {
        let tx0 = (s.bbox[0].max(0) as usize) / ts;
        let ty0 = (s.bbox[1].max(0) as usize) / ts;
        let tx1 = (s.bbox[2].min(width as i64 - 1) as usize) / ts;
        let ty1 = (s.bbox[3].min(height as i64 - 1) as usize) / ts;
        for ty in ty0..=ty1 {
            for tx in tx0..=tx1 {
                bins[ty * tiles_x + tx].push(n as u32);
            }
        }
    }

    let tiles: Vec<(usize, Vec<(f32, f32, u8)>)> = bins
        .par_iter()
        .enumerate()
        .map(|(t, list)| {
            let (tx, ty) = (t % tiles_x, t / tiles_x);
            let (x0, y0) = (tx * ts, ty * ts);
            let (x1, y1) = ((x0 + ts).min(width), (y0 + ts).min(height));
            let mut acc = PixelAccum::default();
            let mut out = Vec::with_capacity((x1 - x0) * (y1 - y0));
            for y in y0..y1 {
                for x in x0..x1 {
                    acc.reset();
                    let (px, py) = (x as f64, y as f64);
                    for &n in list {
                        let s = &splats[n as usize];
                        let (xi, yi) = (x as i64, y as i64);
                        if xi < s.bbox[0] || xi > s.bbox[2] || yi < s.bbox[1] || yi > s.bbox[3] {
                            continue;
                        }
                        let alpha = s.alpha(px, py, opts.alpha_max);
                        if alpha < opts.alpha_min {
                            continue;
                        }
                        acc.add(s, alpha);
                        if acc.transmittance < opts.min_transmittance {
                            break;
                        }
                    }
                    out.push(acc.finish(opts));
                }
            }
            (t, out)
        })
        .collect();

    let mut depth = DepthMap::zeros(width, height);
    let mut sem = SemanticMap { width, height, labels: vec![SemanticMap::NO_CLASS; width * height] };
    for (t, out) in tiles {
        let (tx, ty) = (t % tiles_x, t / tiles_x);
        let (x0, y0) = (tx * ts, ty * ts);
        let (x1, y1) = ((x0 + ts).min(width), (y0 + ts).min(height));
        let mut it = out.into_iter();
        for y in y0..y1 {
            for x in x0..x1 {
                let (d, o, l) = it.next().expect("tile output covers its pixels");
                let idx = y * width + x;
                depth.depth[idx] = d;
                depth.opacity[idx] = o;
                sem.labels[idx] = l;
            }
        }
    }
    (depth, sem)
}

/// Brute-force compositor: every pixel walks the full depth-sorted primitive
/// list with no tiling, no bounding boxes and no early termination. Same
/// alpha clamp and skip threshold as [`rasterize_with`].
pub fn composite_reference(
    prims: &[GaussianPrimitive],
    cam: &Camera,
    opts: &RenderOptions,
) -> (DepthMap, SemanticMap) {
    let (width, height) = (cam.width, cam.height);
    let splats = prepare(prims, cam, opts);
    let mut depth = DepthMap::zeros(width, height);
    let mut sem = SemanticMap { width, height, labels: vec![SemanticMap::NO_CLASS; width * height] };
    let mut acc = PixelAccum::default();
    for y in 0..height {
        for x in 0..width {
            acc.reset();
            for s in &splats {
                let alpha = s.alpha(x as f64, y as f64, opts.alpha_max);
                if alpha < opts.alpha_min {
                    continue;
                }
                acc.add(s, alpha);
            }
            let (d, o, l) = acc.finish(opts);
            let idx = y * width + x;
            depth.depth[idx] = d;
            depth.opacity[idx] = o;
            sem.labels[idx] = l;
        }
    }
    (depth, sem)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{UnitQuaternion, Vector3};
    use rand::{Rng, SeedableRng};

    fn cam(w: usize, h: usize) -> Camera {
        Camera::new("c", 100.0, 100.0, w as f64 / 2.0, h as f64 / 2.0, w, h, UnitQuaternion::identity(), Vector3::zeros())
            .unwrap()
    }

    fn gauss(x: f64, y: f64, z: f64, s: f64, opacity: f64, label: u8) -> GaussianPrimitive {
        GaussianPrimitive::new(Vector3::new(x, y, z), Vector3::new(s, s, s), UnitQuaternion::identity(), opacity, label)
            .unwrap()
    }

    #[test]
    fn empty_scene() {
        let c = cam(40, 30);
        for (d, s) in [rasterize(&[], &c), composite_reference(&[], &c, &RenderOptions::default())] {
            assert!(d.depth.iter().all(|&v| v == 0.0));
            assert!(s.labels.iter().all(|&l| l == SemanticMap::NO_CLASS));
        }
    }

    #[test]
    fn single_on_axis_gaussian() {
        let c = cam(64, 64);
        let (d, s) = rasterize(&[gauss(0.0, 0.0, 5.0, 0.2, 1.0, 7)], &c);
        // alpha at the center clamps to 0.99
        assert!((f64::from(d.at(32, 32)) - 5.0 * 0.99).abs() < 1e-5);
        assert_eq!(s.at(32, 32), 7);
        assert_eq!(s.at(0, 0), SemanticMap::NO_CLASS);
    }

    #[test]
    fn two_layer_hand_case() {
        let c = cam(32, 32);
        let front = gauss(0.0, 0.0, 2.0, 0.05, 0.6, 3);
        let back = gauss(0.0, 0.0, 4.0, 0.05, 0.9, 5);
        // input order must not matter here
        for prims in [vec![front.clone(), back.clone()], vec![back, front]] {
            let (d, s) = rasterize(&prims, &c);
            let center = d.at(16, 16) as f64;
            assert!((center - 2.64).abs() < 1e-6, "{center}");
            assert_eq!(s.at(16, 16), 3);
            assert!((f64::from(d.opacity[16 * 32 + 16]) - 0.96).abs() < 1e-6);
        }
    }

    #[test]
    fn normalized_depth_variant() {
        let c = cam(32, 32);
        let opts = RenderOptions { normalize_depth: true, ..Default::default() };
        let (d, _) = rasterize_with(&[gauss(0.0, 0.0, 2.0, 0.05, 0.6, 3), gauss(0.0, 0.0, 4.0, 0.05, 0.9, 5)], &c, &opts);
        assert!((f64::from(d.at(16, 16)) - 2.64 / 0.96).abs() < 1e-5);
    }

    #[test]
    fn one_primitive_matches_reference_exactly() {
        let c = cam(48, 40);
        let p = [gauss(0.3, -0.2, 3.0, 0.3, 0.7, 2)];
        let (d1, s1) = rasterize(&p, &c);
        let (d2, s2) = composite_reference(&p, &c, &RenderOptions::default());
        assert_eq!(s1, s2);
        assert_eq!(d1, d2);
    }

    fn random_scene(rng: &mut rand_chacha::ChaCha8Rng, n: usize) -> Vec<GaussianPrimitive> {
        (0..n)
            .map(|_| {
                let z = rng.random_range(1.0..12.0);
                let q = UnitQuaternion::from_euler_angles(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), 0.0);
                GaussianPrimitive::new(
                    Vector3::new(rng.random_range(-0.6..0.6) * z, rng.random_range(-0.6..0.6) * z, z),
                    Vector3::new(rng.random_range(0.02..0.5), rng.random_range(0.02..0.5), rng.random_range(0.02..0.5)),
                    q,
                    rng.random_range(0.05..1.0),
                    rng.random_range(1..17),
                )
                .unwrap()
            })
            .collect()
    }

    #[test]
    fn matches_reference_on_random_scenes() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        let c = cam(96, 80);
        for _ in 0..4 {
            let prims = random_scene(&mut rng, 60);
            let (d1, s1) = rasterize(&prims, &c);
            let (d2, s2) = composite_reference(&prims, &c, &RenderOptions::default());
            assert_eq!(s1, s2);
            let err = d1.depth.iter().zip(&d2.depth).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
            assert!(err <= 1e-5, "{err}");
        }
    }

    #[test]
    fn permutation_invariant_without_depth_ties() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let c = cam(64, 64);
        let prims = random_scene(&mut rng, 40);
        let mut shuffled = prims.clone();
        shuffled.reverse();
        shuffled.swap(3, 17);
        assert_eq!(rasterize(&prims, &c), rasterize(&shuffled, &c));
    }

    #[test]
    fn coverage_in_unit_interval_and_thread_independent() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let c = cam(80, 64);
        let prims = random_scene(&mut rng, 120);
        let (d, _) = rasterize(&prims, &c);
        assert!(d.opacity.iter().all(|&o| (0.0..=1.0).contains(&o)));
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let single = pool.install(|| rasterize(&prims, &c));
        assert_eq!(single, rasterize(&prims, &c));
    }

    #[test]
    fn odd_tile_sizes_cover_the_image() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let c = cam(37, 23);
        let prims = random_scene(&mut rng, 30);
        let base = rasterize(&prims, &c);
        for ts in [1, 5, 16, 64] {
            let opts = RenderOptions { tile_size: ts, ..Default::default() };
            assert_eq!(rasterize_with(&prims, &c, &opts), base);
        }
    }
}
