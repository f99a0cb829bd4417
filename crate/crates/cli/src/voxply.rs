//! Voxel-centre PLY export of semantic grids. Grid placement travels in
//! header comments so the grid can be rebuilt exactly.

use anyhow::{anyhow, bail, Context, Result};
use occscene_core::voxgrid::{SemanticOccupancyGrid, FREE};

const RECORD: usize = 3 * 4 + 1;

fn header(grid: &SemanticOccupancyGrid, count: usize) -> String {
    let [h, w, d] = grid.dims();
    let o = grid.origin();
    format!(
        "ply\nformat binary_little_endian 1.0\n\
         comment occscene dims {h} {w} {d}\n\
         comment occscene voxel_size {}\n\
         comment occscene origin {} {} {}\n\
         comment occscene num_classes {}\n\
         element vertex {count}\n\
         property float x\nproperty float y\nproperty float z\nproperty uchar label\n\
         end_header\n",
        grid.voxel_size(),
        o[0],
        o[1],
        o[2],
        grid.num_classes()
    )
}

/// Every non-free voxel as its centre and label, in storage order.
pub fn encode_voxel_ply(grid: &SemanticOccupancyGrid) -> Vec<u8> {
    let cells: Vec<([usize; 3], u8)> = grid.iter_indexed().filter(|&(_, l)| l != FREE).collect();
    let mut out = header(grid, cells.len()).into_bytes();
    out.reserve(cells.len() * RECORD);
    for ([i, j, k], label) in cells {
        let c = grid.voxel_center(i, j, k).expect("index from iteration is in bounds");
        for v in [c.x, c.y, c.z] {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        out.push(label);
    }
    out
}

fn field<'a>(text: &'a str, key: &str) -> Result<Vec<&'a str>> {
    let prefix = format!("comment occscene {key} ");
    let line = text
        .lines()
        .find_map(|l| l.strip_prefix(prefix.as_str()))
        .ok_or_else(|| anyhow!("missing header field `{key}`"))?;
    Ok(line.split_whitespace().collect())
}

fn parse<T: std::str::FromStr>(tokens: &[&str], n: usize, key: &str) -> Result<Vec<T>> {
    if tokens.len() != n {
        bail!("header field `{key}` needs {n} values");
    }
    tokens
        .iter()
        .map(|t| t.parse::<T>().map_err(|_| anyhow!("header field `{key}` has bad value `{t}`")))
        .collect()
}

pub fn decode_voxel_ply(bytes: &[u8]) -> Result<SemanticOccupancyGrid> {
    let marker = b"end_header\n";
    let end = bytes
        .windows(marker.len())
        .position(|w| w == marker)
        .ok_or_else(|| anyhow!("missing end_header"))?
        + marker.len();
    let text = std::str::from_utf8(&bytes[..end]).context("header is not text")?;
    let dims: Vec<usize> = parse(&field(text, "dims")?, 3, "dims")?;
    let voxel_size: Vec<f32> = parse(&field(text, "voxel_size")?, 1, "voxel_size")?;
    let origin: Vec<f32> = parse(&field(text, "origin")?, 3, "origin")?;
    let classes: Vec<u32> = parse(&field(text, "num_classes")?, 1, "num_classes")?;
    let count = text
        .lines()
        .find_map(|l| l.strip_prefix("element vertex "))
        .and_then(|n| n.trim().parse::<usize>().ok())
        .ok_or_else(|| anyhow!("missing vertex count"))?;
    let dims = [dims[0], dims[1], dims[2]];
    let placeholder = SemanticOccupancyGrid::filled(dims, voxel_size[0], [origin[0], origin[1], origin[2]], classes[0], FREE)?;
    if text != header(&placeholder, count) {
        bail!("unsupported header layout");
    }
    let body = &bytes[end..];
    if body.len() != count * RECORD {
        bail!("payload length does not match vertex count {count}");
    }
    let mut grid = placeholder;
    let vs = f64::from(voxel_size[0]);
    for (n, rec) in body.chunks_exact(RECORD).enumerate() {
        let f = |i: usize| f64::from(f32::from_le_bytes(rec[i * 4..i * 4 + 4].try_into().unwrap()));
        let mut idx = [0usize; 3];
        for a in 0..3 {
            let t = (f(a) - f64::from(origin[a])) / vs - 0.5;
            let r = t.round();
            if !((t - r).abs() < 1e-3 && r >= 0.0 && (r as usize) < dims[a]) {
                bail!("vertex {n} is not on a voxel centre of the declared grid");
            }
            idx[a] = r as usize;
        }
        grid.set_label(idx[0], idx[1], idx[2], rec[12]).with_context(|| format!("vertex {n} label"))?;
    }
    Ok(grid)
}
