use super::{
    make_rig, occupied_at, presample_pdf, ray_box, ray_feature, resample, volume_render_depth, FeatureProvider, LidarError,
    LidarHead, Ray, SensorRig,
};
use crate::rng;
use crate::voxgrid::SemanticOccupancyGrid;
use rand::Rng;
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropMode {
    /// Drop when the probability exceeds 0.5.
    Threshold,
    /// Drop with the predicted probability, drawn from the ray's stream.
    Bernoulli,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplingStrategy {
    /// Resample inside occupied voxels only.
    PriorGuided,
    /// Evaluate features at every presample; the dense baseline.
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimParams {
    pub presamples: usize,
    pub resamples: usize,
    pub seed: u64,
    pub drop_mode: DropMode,
    pub strategy: SamplingStrategy,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            presamples: 512,
            resamples: 32,
            seed: 0,
            drop_mode: DropMode::Threshold,
            strategy: SamplingStrategy::PriorGuided,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LidarReturn {
    pub row: usize,
    pub col: usize,
    pub depth: f64,
    pub point: [f64; 3],
    pub intensity: f64,
    pub drop_prob: f64,
    pub dropped: bool,
    pub miss: bool,
}

/// One return per ray, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LidarPointCloud {
    pub rows: usize,
    pub cols: usize,
    pub max_range: f64,
    pub returns: Vec<LidarReturn>,
}

impl LidarPointCloud {
    /// Returns that make it into exported geometry.
    pub fn exported(&self) -> impl Iterator<Item = &LidarReturn> {
        self.returns.iter().filter(|r| !r.miss && !r.dropped)
    }

    pub fn hit_count(&self) -> usize {
        self.returns.iter().filter(|r| !r.miss).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SimStats {
    pub rays: usize,
    pub misses: usize,
    pub dropped: usize,
    pub feature_evals: usize,
    pub occupancy_tests: usize,
}

/// Everything computed for a single ray.
#[derive(Debug, Clone, PartialEq)]
pub struct RayTrace {
    pub samples: Vec<f64>,
    pub weights: Vec<f64>,
    pub depth: f64,
    pub ray_feature: Vec<f64>,
    pub intensity: f64,
    pub drop_prob: f64,
    pub dropped: bool,
    pub miss: bool,
    pub feature_evals: usize,
    pub occupancy_tests: usize,
}

impl RayTrace {
    fn miss(occupancy_tests: usize) -> Self {
        Self {
            samples: Vec::new(),
            weights: Vec::new(),
            depth: 0.0,
            ray_feature: Vec::new(),
            intensity: 0.0,
            drop_prob: 0.0,
            dropped: false,
            miss: true,
            feature_evals: 0,
            occupancy_tests,
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    super::phi(1.0, x)
}

/// Move resampled positions that fall in free space (a free gap narrower
/// than the presample spacing) onto the nearest occupied presample.
fn confine(grid: &SemanticOccupancyGrid, ray: &Ray, s: &[f64], p: &[u8], samples: &mut [f64]) {
    for t in samples.iter_mut() {
        if occupied_at(grid, &(ray.origin + ray.direction * *t)) {
            continue;
        }
        let i = s.partition_point(|&x| x <= *t).saturating_sub(1);
        let nearest = (0..s.len())
            .filter(|&j| p[j] == 1)
            .min_by(|&a, &b| {
                let da = ((s[a] - *t).abs(), a.abs_diff(i));
                let db = ((s[b] - *t).abs(), b.abs_diff(i));
                da.partial_cmp(&db).unwrap()
            })
            .expect("support is non-empty");
        *t = s[nearest];
    }
    samples.sort_by(f64::total_cmp);
}

fn ray_seed(seed: u64, ray: &Ray) -> u64 {
    rng::mix64(seed ^ rng::key2(ray.row as u64, ray.col as u64))
}

/// Run one ray through sampling, volume rendering and the heads.
pub fn trace_ray(
    grid: &SemanticOccupancyGrid,
    provider: &FeatureProvider,
    head: &LidarHead,
    ray: &Ray,
    max_range: f64,
    params: &SimParams,
) -> RayTrace {
    let seed = ray_seed(params.seed, ray);
    let (samples, occupancy_tests) = match params.strategy {
        SamplingStrategy::PriorGuided => {
            let Ok(pre) = presample_pdf(grid, ray, params.presamples, max_range) else {
                return RayTrace::miss(0);
            };
            let tests = pre.s.len();
            let Ok(mut samples) = resample(&pre.s, &pre.p, params.resamples, seed) else {
                return RayTrace::miss(tests);
            };
            confine(grid, ray, &pre.s, &pre.p, &mut samples);
            (samples, tests)
        }
        SamplingStrategy::Uniform => {
            let (lo, hi) = grid.bounds();
            let Some((a, b)) = ray_box(&ray.origin, &ray.direction, &lo, &hi) else {
                return RayTrace::miss(0);
            };
            let b = b.min(max_range);
            if a > b {
                return RayTrace::miss(0);
            }
            let m = params.presamples;
            ((0..m).map(|i| a + (b - a) * i as f64 / (m - 1) as f64).collect(), 0)
        }
    };

    let fd = provider.feature_dim();
    let mut features = vec![0.0; samples.len() * fd];
    let mut sdf = Vec::with_capacity(samples.len());
    for (t, u) in samples.iter().zip(features.chunks_exact_mut(fd)) {
        provider.features(&(ray.origin + ray.direction * *t), u);
        sdf.push(head.sdf_mlp.forward(u)[0]);
    }
    let feature_evals = samples.len();
    let Ok(render) = volume_render_depth(&sdf, &samples, head.sharpness) else {
        return RayTrace { feature_evals, ..RayTrace::miss(occupancy_tests) };
    };
    let total: f64 = render.weights.iter().sum();
    if total <= 0.0 || render.depth <= 0.0 || render.depth > max_range {
        return RayTrace { samples, weights: render.weights, feature_evals, ..RayTrace::miss(occupancy_tests) };
    }
    let v_r = ray_feature(&render.weights, &features, fd).expect("feature layout matches samples");
    let intensity = sigmoid(head.intensity_mlp.forward(&v_r)[0]);
    let drop_prob = sigmoid(head.drop_mlp.forward(&v_r)[0]);
    let dropped = match params.drop_mode {
        DropMode::Threshold => drop_prob > 0.5,
        DropMode::Bernoulli => rng::stream(seed, 1).random::<f64>() < drop_prob,
        DropMode::Off => false,
    };
    RayTrace {
        samples,
        weights: render.weights,
        depth: render.depth,
        ray_feature: v_r,
        intensity,
        drop_prob,
        dropped,
        miss: false,
        feature_evals,
        occupancy_tests,
    }
}

/// Synthesize one sweep of `rig` over `grid`.
pub fn simulate(
    grid: &SemanticOccupancyGrid,
    rig: &SensorRig,
    provider: &FeatureProvider,
    head: &LidarHead,
    params: &SimParams,
) -> Result<(LidarPointCloud, SimStats), LidarError> {
    if params.presamples < 2 || params.resamples < 2 {
        return Err(LidarError::Invalid("presamples and resamples must be >= 2".into()));
    }
    head.validate(provider.feature_dim())?;
    let rays = make_rig(rig)?;
    let traces: Vec<(LidarReturn, usize, usize)> = rays
        .par_iter()
        .map(|ray| {
            let tr = trace_ray(grid, provider, head, ray, rig.max_range, params);
            let p = ray.origin + ray.direction * tr.depth;
            let ret = LidarReturn {
                row: ray.row,
                col: ray.col,
                depth: tr.depth,
                point: if tr.miss { [0.0; 3] } else { [p.x, p.y, p.z] },
                intensity: tr.intensity,
                drop_prob: tr.drop_prob,
                dropped: tr.dropped,
                miss: tr.miss,
            };
            (ret, tr.feature_evals, tr.occupancy_tests)
        })
        .collect();
    let mut stats = SimStats { rays: traces.len(), ..SimStats::default() };
    let mut returns = Vec::with_capacity(traces.len());
    for (ret, fe, ot) in traces {
        stats.misses += usize::from(ret.miss);
        stats.dropped += usize::from(ret.dropped);
        stats.feature_evals += fe;
        stats.occupancy_tests += ot;
        returns.push(ret);
    }
    let cloud = LidarPointCloud { rows: rig.beams, cols: rig.azimuth_steps, max_range: rig.max_range, returns };
    Ok((cloud, stats))
}
