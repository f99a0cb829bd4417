use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use rayon::prelude::*;
use serde_json::{json, Value};

use occscene_core::evalkit::{iou_miou, median_bandwidth, mmd, BevHistogram, HistogramSpec};
use occscene_core::geomwarp::{build_noise_prior, warp_latent, LatentImage, NoiseMode, NoiseSpec};
use occscene_core::gsrender::{parse_camera_rig, rasterize_with, voxels_to_gaussians, Camera, RenderOptions, VoxelSplatParams};
use occscene_core::imageio::{decode_pfm, encode_pfm, encode_pfm_gray, encode_pgm, FloatImage};
use occscene_core::lidarsim::{
    decode_lhed, decode_ply, dda_raycast, encode_ply, make_rig, simulate, DropMode, FeatureProvider, LidarHead, RayHit,
    SamplingStrategy, SensorRig, SimParams,
};
use occscene_core::occdiff::{
    bev_condition, edit_pipeline, encode_ltnt, ConditionAdditiveDenoiser, Denoiser, LatentVolume, LinearDenoiser,
    NoiseSchedule, ZeroDenoiser,
};
use occscene_core::voxgrid::{
    decode_bvl, decode_cemb, decode_svo, embed_labels, encode_svo, unembed_labels, BevLayout, ClassEmbeddingTable,
    LayoutPalette, SemanticOccupancyGrid, SVO_MAGIC,
};

use crate::manifest::{manifest_for_dir, manifest_for_file, Run};
use crate::voxply::{decode_voxel_ply, encode_voxel_ply};
use crate::{
    format_report, Cli, Command, ConvertArgs, DenoiserArg, DropArg, EditArgs, LidarArgs, MetricsArgs, PriorMode,
    RaycastArgs, RenderArgs, StrategyArg, UsageError, WarpArgs,
};

type Report = BTreeMap<String, Value>;

pub fn run(cli: &Cli) -> Result<Report> {
    match &cli.command {
        Command::Convert(a) => convert(a, cli.seed),
        Command::Render(a) => render(a, cli.seed),
        Command::Warp(a) => warp(a, cli.seed),
        Command::Lidar(a) => lidar(a, cli.seed),
        Command::RaycastOracle(a) => raycast(a, cli.seed),
        Command::Edit(a) => edit(a, cli.seed),
        Command::Metrics(a) => metrics(a, cli.seed, cli.json),
    }
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

fn load_grid(run: &mut Run, path: &Path) -> Result<SemanticOccupancyGrid> {
    let bytes = run.read(path)?;
    decode_svo(&bytes).with_context(|| format!("{}: invalid SVO grid", path.display()))
}

fn load_layout(run: &mut Run, path: &Path) -> Result<BevLayout> {
    let bytes = run.read(path)?;
    decode_bvl(&bytes).with_context(|| format!("{}: invalid BVL layout", path.display()))
}

fn load_text(run: &mut Run, path: &Path) -> Result<String> {
    let bytes = run.read(path)?;
    String::from_utf8(bytes).map_err(|_| anyhow!("{}: not UTF-8 text", path.display()))
}

fn load_cameras(run: &mut Run, path: &Path) -> Result<Vec<Camera>> {
    let text = load_text(run, path)?;
    let cams = parse_camera_rig(&text).with_context(|| format!("{}: invalid camera rig", path.display()))?;
    for (n, cam) in cams.iter().enumerate() {
        if cam.name.is_empty() || cam.name.contains(['/', '\\']) || cam.name.starts_with('.') {
            bail!("{}: camera {n} has a name unusable as a file name: `{}`", path.display(), cam.name);
        }
        if cams[..n].iter().any(|c| c.name == cam.name) {
            bail!("{}: camera name `{}` is repeated", path.display(), cam.name);
        }
    }
    Ok(cams)
}

fn load_rig(run: &mut Run, path: &Path) -> Result<SensorRig> {
    let text = load_text(run, path)?;
    SensorRig::parse(&text).with_context(|| format!("{}: invalid rig config", path.display()))
}

fn convert(a: &ConvertArgs, seed: u64) -> Result<Report> {
    let mut run = Run::new("convert", seed);
    let bytes = run.read(&a.input)?;
    let (out, direction) = if bytes.starts_with(SVO_MAGIC) {
        let grid = decode_svo(&bytes).with_context(|| format!("{}: invalid SVO grid", a.input.display()))?;
        run.report("vertices", grid.labels().iter().filter(|&&l| l != 0).count());
        (encode_voxel_ply(&grid), "svo-to-ply")
    } else if bytes.starts_with(b"ply\n") {
        let grid = decode_voxel_ply(&bytes).with_context(|| format!("{}: invalid voxel PLY", a.input.display()))?;
        run.report("voxels", grid.len());
        (encode_svo(&grid), "ply-to-svo")
    } else {
        bail!("{}: neither an SVO grid nor a PLY file", a.input.display());
    };
    run.param("direction", direction);
    run.report("direction", direction);
    run.output(a.out.clone(), out);
    run.finish(&manifest_for_file(&a.out))
}

fn render(a: &RenderArgs, seed: u64) -> Result<Report> {
    let mut run = Run::new("render", seed);
    let mut grid = load_grid(&mut run, &a.grid)?;
    let cams = load_cameras(&mut run, &a.cams)?;
    if let Some(lp) = &a.layout {
        let layout = load_layout(&mut run, lp)?;
        grid = grid
            .project_layout_lines(&layout, &[LayoutPalette::LANE_LINE], a.line_label)
            .with_context(|| format!("{}: cannot project lane lines (line_label)", lp.display()))?;
    }
    let params = VoxelSplatParams { opacity: a.opacity, scale_factor: a.scale_factor };
    let prims = voxels_to_gaussians(&grid, params).map_err(|e| UsageError(e.to_string()))?;
    let opts = RenderOptions { normalize_depth: a.normalize_depth, ..RenderOptions::default() };
    run.param("opacity", a.opacity);
    run.param("scale_factor", a.scale_factor);
    run.param("normalize_depth", a.normalize_depth);
    run.param("line_label", a.line_label);
    for cam in &cams {
        let (depth, sem) = rasterize_with(&prims, cam, &opts);
        run.output(a.out_dir.join(format!("{}.pfm", cam.name)), encode_pfm_gray(depth.width, depth.height, &depth.depth)?);
        run.output(a.out_dir.join(format!("{}.pgm", cam.name)), encode_pgm(sem.width, sem.height, &sem.labels)?);
    }
    run.report("cameras", cams.len());
    run.report("gaussians", prims.len());
    run.finish(&manifest_for_dir(&a.out_dir))
}

fn hwc_to_chw(img: &FloatImage) -> Vec<f32> {
    let plane = img.width * img.height;
    let mut out = vec![0.0; img.data.len()];
    for p in 0..plane {
        for c in 0..img.channels {
            out[c * plane + p] = img.data[p * img.channels + c];
        }
    }
    out
}

fn chw_to_pfm(z: &LatentImage) -> FloatImage {
    let plane = z.width * z.height;
    let mut data = vec![0.0; z.values.len()];
    for p in 0..plane {
        for c in 0..z.channels {
            data[p * z.channels + c] = z.values[c * plane + p];
        }
    }
    FloatImage { width: z.width, height: z.height, channels: z.channels, data }
}

fn warp(a: &WarpArgs, seed: u64) -> Result<Report> {
    let mut run = Run::new("warp", seed);
    let grid = load_grid(&mut run, &a.grid)?;
    let cams = load_cameras(&mut run, &a.cams)?;
    let find = |name: &str, flag: &str| {
        cams.iter()
            .find(|c| c.name == name)
            .cloned()
            .ok_or_else(|| anyhow!("{}: no camera named `{name}` (--{flag})", a.cams.display()))
    };
    let (cam_ref, cam_tgt) = (find(&a.reference, "ref")?, find(&a.target, "target")?);
    let latent_bytes = run.read(&a.latent)?;
    let img = decode_pfm(&latent_bytes).with_context(|| format!("{}: invalid PFM", a.latent.display()))?;
    let z_c = LatentImage::new(img.width, img.height, img.channels, a.downsample, hwc_to_chw(&img))
        .with_context(|| format!("{}: invalid latent", a.latent.display()))?;
    if !a.lambda.is_finite() {
        return Err(UsageError("--lambda must be finite".into()).into());
    }

    let prims = voxels_to_gaussians(&grid, VoxelSplatParams::default())?;
    let opts = RenderOptions { normalize_depth: true, ..RenderOptions::default() };
    let (depth, _) = rasterize_with(&prims, &cam_tgt, &opts);
    let ctx = || format!("{}: latent at factor {} does not match the cameras", a.latent.display(), a.downsample);
    let warped = warp_latent(&z_c, &depth, &cam_ref, &cam_tgt).with_context(ctx)?;
    let mode = match a.mode {
        PriorMode::Vanilla => NoiseMode::Vanilla,
        PriorMode::Geometric => NoiseMode::Geometric,
    };
    let spec = NoiseSpec { lambda: a.lambda, seed, mode };
    let prior = build_noise_prior(&z_c, &depth, &cam_ref, &cam_tgt, &spec).with_context(ctx)?;

    run.param("ref", a.reference.as_str());
    run.param("target", a.target.as_str());
    run.param("downsample", a.downsample);
    run.param("lambda", a.lambda);
    run.param("mode", if mode == NoiseMode::Vanilla { "vanilla" } else { "geometric" });
    let valid: Vec<u8> = warped.valid.iter().map(|&v| if v { 255 } else { 0 }).collect();
    run.report("valid_fraction", warped.valid.iter().filter(|&&v| v).count() as f64 / valid.len() as f64);
    run.output(a.out_dir.join("warped.pfm"), encode_pfm(&chw_to_pfm(&warped.latent))?);
    run.output(a.out_dir.join("valid.pgm"), encode_pgm(z_c.width, z_c.height, &valid)?);
    run.output(a.out_dir.join("prior.pfm"), encode_pfm(&chw_to_pfm(&prior))?);
    run.finish(&manifest_for_dir(&a.out_dir))
}

fn lidar(a: &LidarArgs, seed: u64) -> Result<Report> {
    let mut run = Run::new("lidar", seed);
    let grid = load_grid(&mut run, &a.grid)?;
    let rig = load_rig(&mut run, &a.rig)?;
    let head = match &a.head {
        Some(p) => {
            let bytes = run.read(p)?;
            decode_lhed(&bytes).with_context(|| format!("{}: invalid LHED head", p.display()))?
        }
        None => LidarHead::analytic(f64::from(grid.voxel_size())),
    };
    let provider = FeatureProvider::analytic(&grid);
    if let Err(e) = head.validate(provider.feature_dim()) {
        bail!("{}: {e}", a.head.as_deref().map(path_str).unwrap_or_default());
    }
    if a.presamples < 2 || a.resamples < 2 {
        return Err(UsageError("--presamples and --resamples must be >= 2".into()).into());
    }
    let drop_mode = match a.drop_mode {
        DropArg::Threshold => DropMode::Threshold,
        DropArg::Bernoulli => DropMode::Bernoulli,
        DropArg::Off => DropMode::Off,
    };
    let strategy = match a.strategy {
        StrategyArg::Prior => SamplingStrategy::PriorGuided,
        StrategyArg::Uniform => SamplingStrategy::Uniform,
    };
    let params = SimParams { presamples: a.presamples, resamples: a.resamples, seed, drop_mode, strategy };
    let (cloud, stats) = simulate(&grid, &rig, &provider, &head, &params)
        .with_context(|| format!("{}: simulation failed", a.grid.display()))?;

    run.param("rig", rig.to_config());
    run.param("presamples", a.presamples);
    run.param("resamples", a.resamples);
    run.param("drop_mode", format!("{:?}", a.drop_mode).to_lowercase());
    run.param("strategy", format!("{:?}", a.strategy).to_lowercase());
    run.param("sharpness", head.sharpness);
    let points = cloud.to_ply_points();
    run.report("rays", stats.rays);
    run.report("misses", stats.misses);
    run.report("dropped", stats.dropped);
    run.report("points", points.len());
    run.report("feature_evals", stats.feature_evals);
    run.report("occupancy_tests", stats.occupancy_tests);
    run.output(a.out.clone(), encode_ply(&points));
    run.finish(&manifest_for_file(&a.out))
}

fn raycast(a: &RaycastArgs, seed: u64) -> Result<Report> {
    let mut run = Run::new("raycast-oracle", seed);
    let grid = load_grid(&mut run, &a.grid)?;
    let rig = load_rig(&mut run, &a.rig)?;
    let rays = make_rig(&rig).with_context(|| format!("{}: invalid rig", a.rig.display()))?;
    let (rows, cols) = (rig.beams, rig.azimuth_steps);
    let hits: Vec<RayHit> = rays.par_iter().map(|r| dda_raycast(&grid, r, rig.max_range)).collect();
    let mut depth = vec![0.0f32; rows * cols];
    let mut labels = vec![255u8; rows * cols];
    for (ray, hit) in rays.iter().zip(&hits) {
        if let RayHit::Hit { depth: d, label } = *hit {
            depth[ray.row * cols + ray.col] = d as f32;
            labels[ray.row * cols + ray.col] = label;
        }
    }
    run.param("rig", rig.to_config());
    run.report("rays", rays.len());
    run.report("hits", hits.iter().filter(|h| matches!(h, RayHit::Hit { .. })).count());
    run.output(a.out.clone(), encode_pfm_gray(cols, rows, &depth)?);
    if let Some(lp) = &a.labels {
        run.output(lp.clone(), encode_pgm(cols, rows, &labels)?);
    }
    run.finish(&manifest_for_file(&a.out))
}

fn edit(a: &EditArgs, seed: u64) -> Result<Report> {
    let mut run = Run::new("edit", seed);
    let grid = load_grid(&mut run, &a.grid)?;
    let b_ori = load_layout(&mut run, &a.layout_ori)?;
    let b_new = load_layout(&mut run, &a.layout_new)?;
    if b_ori.dims() != b_new.dims() || b_ori.palette_size() != b_new.palette_size() {
        bail!(
            "{}: layout dims/palette {:?}/{} differ from {} ({:?}/{})",
            a.layout_new.display(),
            b_new.dims(),
            b_new.palette_size(),
            a.layout_ori.display(),
            b_ori.dims(),
            b_ori.palette_size()
        );
    }
    let table = match &a.table {
        Some(p) => {
            let bytes = run.read(p)?;
            decode_cemb(&bytes).with_context(|| format!("{}: invalid CEMB table", p.display()))?
        }
        None => ClassEmbeddingTable::signed_axes(grid.num_classes() as usize, 8)
            .with_context(|| format!("{}: num_classes too large for the default table", a.grid.display()))?,
    };
    if !a.guidance.is_finite() {
        return Err(UsageError("--guidance must be finite".into()).into());
    }
    let schedule = NoiseSchedule::default();
    if a.steps > schedule.steps() {
        return Err(UsageError(format!("--steps must be <= {}", schedule.steps())).into());
    }

    let fmap = embed_labels(&grid, &table).with_context(|| format!("{}: grid does not fit the table", a.grid.display()))?;
    let z_ori = LatentVolume::from_feature_map(&fmap);
    let (h, w) = (z_ori.height, z_ori.width);
    let c_ori = bev_condition(&b_ori, h, w)?;
    let c_new = bev_condition(&b_new, h, w)?;
    let channels = z_ori.channels;
    let cond_channels = b_ori.palette_size() as usize;
    let denoiser: Box<dyn Denoiser> = match a.denoiser {
        DenoiserArg::Zero => Box::new(ZeroDenoiser),
        DenoiserArg::Linear => Box::new(LinearDenoiser::seeded(channels, 0.2, seed)),
        DenoiserArg::Condition => Box::new(ConditionAdditiveDenoiser::seeded(channels, cond_channels, 0.2, 0.5, seed)),
    };
    let z_new = edit_pipeline(&z_ori, &c_ori, &c_new, denoiser.as_ref(), &schedule, a.steps, a.guidance)?;
    let edited = unembed_labels(&z_new.to_feature_map(0, &fmap)?, &table, grid.dims()[2])?;

    let latent_out = a.latent_out.clone().unwrap_or_else(|| a.out.with_extension("ltnt"));
    run.param("denoiser", format!("{:?}", a.denoiser).to_lowercase());
    run.param("steps", a.steps);
    run.param("guidance", a.guidance);
    run.param("schedule", json!({ "steps": 1000, "beta_min": 1e-4, "beta_max": 2e-2 }));
    run.param("embed_dim", table.embed_dim());
    run.report("changed_voxels", grid.labels().iter().zip(edited.labels()).filter(|(x, y)| x != y).count());
    run.report("changed_layout_cells", b_ori.codes().iter().zip(b_new.codes()).filter(|(x, y)| x != y).count());
    run.report("latent_max_change", z_new.max_abs_diff(&z_ori));
    run.output(latent_out, encode_ltnt(&z_new));
    run.output(a.out.clone(), encode_svo(&edited));
    run.finish(&manifest_for_file(&a.out))
}

fn load_histograms(run: &mut Run, paths: &[PathBuf], spec: HistogramSpec) -> Result<Vec<BevHistogram>> {
    paths
        .iter()
        .map(|p| {
            let bytes = run.read(p)?;
            let pts = decode_ply(&bytes).with_context(|| format!("{}: invalid LiDAR PLY", p.display()))?;
            Ok(BevHistogram::build(pts.iter().map(|q| [f64::from(q.x), f64::from(q.y)]), spec)?)
        })
        .collect()
}

fn metrics(a: &MetricsArgs, seed: u64, json_out: bool) -> Result<Report> {
    let mut run = Run::new("metrics", seed);
    if a.pred.is_none() && a.set_a.is_empty() {
        return Err(UsageError("metrics needs --pred/--gt or --set-a/--set-b".into()).into());
    }
    if let (Some(pp), Some(gp)) = (&a.pred, &a.gt) {
        let pred = load_grid(&mut run, pp)?;
        let gt = load_grid(&mut run, gp)?;
        let r = iou_miou(&pred, &gt).with_context(|| format!("{}: dims differ from {}", pp.display(), gp.display()))?;
        run.report("iou", r.iou);
        run.report("miou", r.miou);
        for (c, v) in r.per_class.iter().enumerate() {
            run.report(&format!("iou_class_{c:03}"), *v);
        }
    }
    if !a.set_a.is_empty() {
        let spec = HistogramSpec { bins: [a.bins, a.bins], x_range: [-a.extent, a.extent], y_range: [-a.extent, a.extent] };
        spec.validate().map_err(|e| UsageError(e.to_string()))?;
        let ha = load_histograms(&mut run, &a.set_a, spec)?;
        let hb = load_histograms(&mut run, &a.set_b, spec)?;
        let bandwidth = match a.bandwidth {
            Some(b) if b > 0.0 && b.is_finite() => b,
            Some(_) => return Err(UsageError("--bandwidth must be positive".into()).into()),
            None => median_bandwidth(&ha, &hb)?,
        };
        run.param("bins", a.bins);
        run.param("extent", a.extent);
        run.report("bandwidth", bandwidth);
        run.report("mmd", mmd(&ha, &hb, bandwidth)?);
        let pooled = |hs: &[BevHistogram]| {
            let mut acc = hs[0].clone();
            for h in &hs[1..] {
                acc.counts.iter_mut().zip(&h.counts).for_each(|(x, y)| *x += y);
                acc.discarded += h.discarded;
            }
            acc
        };
        let (pa, pb) = (pooled(&ha), pooled(&hb));
        let jsd = if pa.total() > 0 && pb.total() > 0 { Value::from(pa.jsd(&pb)?) } else { Value::Null };
        run.report("jsd", jsd);
        run.report("set_a_points", pa.total());
        run.report("set_b_points", pb.total());
        run.report("discarded_points", pa.discarded + pb.discarded);
    }
    match &a.out {
        Some(out) => {
            let text = format_report(&run.report, json_out);
            run.output(out.clone(), text.into_bytes());
            run.finish(&manifest_for_file(out))
        }
        None => Ok(run.report),
    }
}
