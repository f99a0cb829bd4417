#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use occscene_core::gsrender::Camera;
use occscene_core::imageio::{encode_pfm, FloatImage};
use occscene_core::nalgebra::Vector3;
use occscene_core::voxgrid::{encode_bvl, encode_svo, BevLayout, LayoutPalette, SemanticOccupancyGrid};

pub fn bin() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_occscene"))
}

pub fn occscene(args: &[&str]) -> Output {
    Command::new(bin()).args(args).env_remove("OCCSCENE_THREADS").output().expect("binary runs")
}

pub fn occscene_env(args: &[&str], key: &str, value: &str) -> Output {
    Command::new(bin()).args(args).env(key, value).output().expect("binary runs")
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// 32 x 32 x 8 street: ground slab, a parked car and a far wall.
pub fn street_grid() -> SemanticOccupancyGrid {
    let mut g = SemanticOccupancyGrid::filled([32, 32, 8], 0.5, [-8.0, -8.0, -1.0], 17, 0).unwrap();
    for i in 0..32 {
        for j in 0..32 {
            g.set_label(i, j, 0, 11).unwrap();
        }
    }
    for i in 20..24 {
        for j in 14..18 {
            for k in 1..4 {
                g.set_label(i, j, k, 4).unwrap();
            }
        }
    }
    for i in 30..32 {
        for j in 0..32 {
            for k in 1..7 {
                g.set_label(i, j, k, 15).unwrap();
            }
        }
    }
    g
}

pub fn cameras() -> Vec<Camera> {
    let up = Vector3::new(0.0, 0.0, 1.0);
    vec![
        Camera::look_at("front", Vector3::new(-6.0, 0.0, 6.0), Vector3::new(3.0, 0.0, 0.0), up, 40.0, 40.0, 64, 48).unwrap(),
        Camera::look_at("left", Vector3::new(-6.0, 1.0, 6.0), Vector3::new(3.0, 1.0, 0.0), up, 40.0, 40.0, 64, 48).unwrap(),
    ]
}

pub fn street_layout(with_car: bool) -> BevLayout {
    let mut codes = vec![LayoutPalette::ROAD; 16 * 16];
    if with_car {
        for i in 10..12 {
            for j in 7..9 {
                codes[i * 16 + j] = LayoutPalette::VEHICLE;
            }
        }
    }
    BevLayout::new([16, 16], 1.0, [-8.0, -8.0], LayoutPalette::SIZE, codes).unwrap()
}

pub const RIG: &str = "# small test rig\nbeams = 8\nazimuth_steps = 64\nelevation_min_deg = -25\nelevation_max_deg = 5\n\
max_range = 30\nmount_position = 0.3 0.2 1.0\nmount_rotation = 1 0 0 0\n";

/// Writes every fixture into `dir` and returns their paths.
pub struct Fixture {
    pub grid: PathBuf,
    pub cams: PathBuf,
    pub rig: PathBuf,
    pub layout: PathBuf,
    pub layout_new: PathBuf,
    pub latent: PathBuf,
}

pub fn write_fixture(dir: &Path) -> Fixture {
    let grid = dir.join("street.svo");
    std::fs::write(&grid, encode_svo(&street_grid())).unwrap();
    let cams = dir.join("cams.txt");
    let text: String = cameras().iter().map(|c| c.to_rig_line() + "\n").collect();
    std::fs::write(&cams, text).unwrap();
    let rig = dir.join("rig.cfg");
    std::fs::write(&rig, RIG).unwrap();
    let layout = dir.join("ori.bvl");
    std::fs::write(&layout, encode_bvl(&street_layout(true))).unwrap();
    let layout_new = dir.join("new.bvl");
    std::fs::write(&layout_new, encode_bvl(&street_layout(false))).unwrap();
    let latent = dir.join("latent.pfm");
    let data: Vec<f32> = (0..8 * 6 * 3).map(|i| ((i * 7 % 13) as f32 - 6.0) / 6.0).collect();
    std::fs::write(&latent, encode_pfm(&FloatImage { width: 8, height: 6, channels: 3, data }).unwrap()).unwrap();
    Fixture { grid, cams, rig, layout, layout_new, latent }
}

/// Manifest text with the run-time fields removed.
pub fn stable_manifest(path: &Path) -> String {
    let text = std::fs::read_to_string(path).unwrap();
    text.lines()
        .filter(|l| !l.contains("\"started_unix_ms\"") && !l.contains("\"duration_ms\""))
        .collect::<Vec<_>>()
        .join("\n")
}

/// All files under `dir`, sorted, with contents; manifests reduced to their
/// stable part.
pub fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let name = p.strip_prefix(dir).unwrap().display().to_string();
                let bytes = if name.ends_with("manifest.json") {
                    stable_manifest(&p).into_bytes()
                } else {
                    std::fs::read(&p).unwrap()
                };
                out.push((name, bytes));
            }
        }
    }
    out.sort();
    out
}
