//! End-to-end checks that chain several modules together.

use nalgebra::{Isometry3, Vector3};
use occscene_core::evalkit::{mmd, BevHistogram, HistogramSpec};
use occscene_core::geomwarp::{warp_latent, LatentImage};
use occscene_core::gsrender::{rasterize_with, voxels_to_gaussians, Camera, RenderOptions, VoxelSplatParams};
use occscene_core::imageio::{decode_pfm, decode_pgm, encode_pfm, encode_pgm, FloatImage};
use occscene_core::lidarsim::{
    dda_raycast, decode_lhed, decode_ply, encode_lhed, encode_ply, simulate, DropMode, FeatureProvider, LidarHead, Ray,
    RayHit, SensorRig, SimParams,
};
use occscene_core::occdiff::{
    bev_condition, decode_ltnt, edit_pipeline, encode_ltnt, make_schedule, LatentVolume, ZeroDenoiser,
};
use occscene_core::voxgrid::{
    decode_bvl, decode_cemb, decode_svo, embed_labels, encode_bvl, encode_cemb, encode_svo, unembed_labels, BevLayout,
    ClassEmbeddingTable, LayoutPalette, SemanticOccupancyGrid, FREE,
};

fn fill(g: &mut SemanticOccupancyGrid, lo: [usize; 3], hi: [usize; 3], label: u8) {
    for i in lo[0]..hi[0] {
        for j in lo[1]..hi[1] {
            for k in lo[2]..hi[2] {
                g.set_label(i, j, k, label).unwrap();
            }
        }
    }
}

fn walled_grid() -> SemanticOccupancyGrid {
    let mut g = SemanticOccupancyGrid::filled([16, 16, 16], 1.0, [0.0; 3], 17, FREE).unwrap();
    fill(&mut g, [10, 0, 0], [14, 16, 16], 15);
    fill(&mut g, [0, 0, 0], [16, 16, 1], 11);
    g
}

fn street() -> SemanticOccupancyGrid {
    let mut g = SemanticOccupancyGrid::filled([16, 16, 4], 0.5, [-4.0, -4.0, -1.0], 17, FREE).unwrap();
    fill(&mut g, [0, 0, 0], [16, 16, 1], 11);
    fill(&mut g, [6, 6, 1], [9, 8, 3], 4);
    fill(&mut g, [12, 2, 1], [13, 3, 4], 9);
    g
}

#[test]
fn rendered_depth_follows_voxel_traversal() {
    let g = walled_grid();
    let eye = Vector3::new(2.0, 8.0, 8.0);
    let cam = Camera::look_at("c", eye, Vector3::new(12.0, 8.0, 8.0), Vector3::z(), 40.0, 40.0, 64, 64).unwrap();
    let prims = voxels_to_gaussians(&g, VoxelSplatParams { opacity: 0.99, scale_factor: 0.5 }).unwrap();
    let opts = RenderOptions { normalize_depth: true, ..RenderOptions::default() };
    let (depth, sem) = rasterize_with(&prims, &cam, &opts);
    let mut checked = 0;
    for y in (8..56).step_by(4) {
        for x in (8..56).step_by(4) {
            let idx = y * 64 + x;
            if depth.opacity[idx] < 0.99 {
                continue;
            }
            let d_cam = cam.unproject(x as f64, y as f64, 1.0);
            let dir = (cam.camera_to_world(&d_cam) - eye).normalize();
            let RayHit::Hit { depth: t, label } = dda_raycast(&g, &Ray { origin: eye, direction: dir, row: 0, col: 0 }, 50.0)
            else {
                panic!("pixel ({x}, {y}) has coverage but its ray misses");
            };
            let z = t / d_cam.norm();
            assert!((f64::from(depth.depth[idx]) - z).abs() <= 1.0, "({x}, {y}): {} vs {z}", depth.depth[idx]);
            assert_eq!(sem.labels[idx], label, "({x}, {y})");
            checked += 1;
        }
    }
    assert!(checked > 50, "{checked}");
}

#[test]
fn warping_into_the_same_view_is_identity() {
    let g = walled_grid();
    let cam = Camera::look_at("c", Vector3::new(2.0, 8.0, 8.0), Vector3::new(12.0, 7.0, 7.5), Vector3::z(), 40.0, 40.0, 64, 48)
        .unwrap();
    let prims = voxels_to_gaussians(&g, VoxelSplatParams { opacity: 0.99, scale_factor: 0.5 }).unwrap();
    let (depth, _) = rasterize_with(&prims, &cam, &RenderOptions { normalize_depth: true, ..RenderOptions::default() });
    let values: Vec<f32> = (0..8 * 6 * 2).map(|i| (i as f32 * 0.37).sin()).collect();
    let z = LatentImage::new(8, 6, 2, 8, values).unwrap();
    let out = warp_latent(&z, &depth, &cam, &cam).unwrap();
    assert!(out.valid.iter().filter(|&&v| v).count() >= 40);
    for (n, &ok) in out.valid.iter().enumerate() {
        for c in 0..2 {
            let (y, x) = (n / 8, n % 8);
            if ok {
                assert!((out.latent.at(c, y, x) - z.at(c, y, x)).abs() < 1e-4);
            } else {
                assert_eq!(out.latent.at(c, y, x), 0.0);
            }
        }
    }
}

#[test]
fn edit_with_zero_denoiser_keeps_the_grid() {
    let g = street();
    let table = ClassEmbeddingTable::signed_axes(17, 8).unwrap();
    let fmap = embed_labels(&g, &table).unwrap();
    let z = LatentVolume::from_feature_map(&fmap);
    let layout = BevLayout::new([8, 8], 1.0, [-4.0, -4.0], LayoutPalette::SIZE, vec![LayoutPalette::ROAD; 64]).unwrap();
    let mut codes = layout.codes().to_vec();
    codes[3 * 8 + 3] = LayoutPalette::VEHICLE;
    let layout_new = BevLayout::new([8, 8], 1.0, [-4.0, -4.0], LayoutPalette::SIZE, codes).unwrap();
    let b_ori = bev_condition(&layout, z.height, z.width).unwrap();
    let b_new = bev_condition(&layout_new, z.height, z.width).unwrap();
    let schedule = make_schedule(1000, 1e-4, 2e-2).unwrap();
    let edited = edit_pipeline(&z, &b_ori, &b_new, &ZeroDenoiser, &schedule, 25, 1.0).unwrap();
    assert!(edited.max_abs_diff(&z) < 1e-9);
    let back = unembed_labels(&edited.to_feature_map(0, &fmap).unwrap(), &table, 4).unwrap();
    assert_eq!(encode_svo(&back), encode_svo(&g));
    let decoded = decode_ltnt(&encode_ltnt(&edited)).unwrap();
    assert!(decoded.max_abs_diff(&edited) < 1e-6);
}

fn closed_room() -> SemanticOccupancyGrid {
    let mut g = SemanticOccupancyGrid::filled([24, 24, 12], 0.5, [0.0; 3], 17, 15).unwrap();
    fill(&mut g, [2, 2, 2], [22, 22, 10], FREE);
    fill(&mut g, [14, 5, 2], [17, 9, 5], 4);
    g
}

#[test]
fn simulated_sweep_survives_export_and_scores_zero_against_itself() {
    let g = closed_room();
    let provider = FeatureProvider::analytic(&g);
    let head = LidarHead::analytic(0.5);
    let rig = SensorRig {
        beams: 16,
        azimuth_steps: 90,
        elevation_min_deg: -30.0,
        elevation_max_deg: 10.0,
        mount: Isometry3::translation(6.1, 5.9, 3.2),
        max_range: 40.0,
    };
    let params = SimParams { drop_mode: DropMode::Off, ..SimParams::default() };
    let (cloud, stats) = simulate(&g, &rig, &provider, &head, &params).unwrap();
    assert_eq!(stats.misses, 0);
    let pts = decode_ply(&encode_ply(&cloud.to_ply_points())).unwrap();
    assert_eq!(pts.len(), rig.ray_count());
    let (lo, hi) = g.bounds();
    assert!(pts.iter().all(|p| {
        let v = Vector3::new(f64::from(p.x), f64::from(p.y), f64::from(p.z));
        (0..3).all(|a| v[a] >= lo[a] - 1e-3 && v[a] <= hi[a] + 1e-3)
    }));
    let spec = HistogramSpec { bins: [24, 24], x_range: [0.0, 12.0], y_range: [0.0, 12.0] };
    let hist = |shift: f32| BevHistogram::build(pts.iter().map(|p| [f64::from(p.x + shift), f64::from(p.y)]), spec).unwrap();
    let a = [hist(0.0)];
    let b = [hist(1.5)];
    assert!(mmd(&a, &a, 2.0).unwrap().abs() < 1e-12);
    assert!(mmd(&a, &b, 2.0).unwrap() > 1e-3);
    assert_eq!(a[0].jsd(&a[0]).unwrap(), 0.0);
}

#[test]
fn every_codec_round_trips() {
    let g = street();
    assert_eq!(encode_svo(&decode_svo(&encode_svo(&g)).unwrap()), encode_svo(&g));
    let layout = BevLayout::new([3, 5], 0.4, [1.0, -2.0], LayoutPalette::SIZE, (0..15).map(|i| (i % 8) as u8).collect())
        .unwrap();
    assert_eq!(decode_bvl(&encode_bvl(&layout)).unwrap(), layout);
    let table = ClassEmbeddingTable::signed_axes(17, 8).unwrap();
    assert_eq!(decode_cemb(&encode_cemb(&table)).unwrap(), table);
    let head = LidarHead::analytic(0.25);
    assert_eq!(encode_lhed(&decode_lhed(&encode_lhed(&head)).unwrap()), encode_lhed(&head));
    let img = FloatImage { width: 3, height: 2, channels: 3, data: (0..18).map(|i| i as f32 - 4.5).collect() };
    assert_eq!(decode_pfm(&encode_pfm(&img).unwrap()).unwrap(), img);
    let labels = vec![0, 4, 255, 11, 3, 7];
    assert_eq!(decode_pgm(&encode_pgm(3, 2, &labels).unwrap()).unwrap(), (3, 2, labels));
}
