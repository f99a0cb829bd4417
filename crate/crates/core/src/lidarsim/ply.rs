use super::{LidarError, LidarPointCloud};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlyPoint {
    pub x: f32,
    pub y: f32,
    pub z: f32,
    pub intensity: f32,
    pub drop_prob: f32,
    pub dropped: u8,
}

const PROPERTIES: [(&str, &str); 6] = [
    ("float", "x"),
    ("float", "y"),
    ("float", "z"),
    ("float", "intensity"),
    ("float", "drop_prob"),
    ("uchar", "dropped"),
];
const RECORD: usize = 5 * 4 + 1;

impl LidarPointCloud {
    /// Exported returns, dropped and missed rays excluded.
    pub fn to_ply_points(&self) -> Vec<PlyPoint> {
        self.exported()
            .map(|r| PlyPoint {
                x: r.point[0] as f32,
                y: r.point[1] as f32,
                z: r.point[2] as f32,
                intensity: r.intensity as f32,
                drop_prob: r.drop_prob as f32,
                dropped: u8::from(r.dropped),
            })
            .collect()
    }
}

fn header(count: usize) -> String {
    let mut h = format!("ply\nformat binary_little_endian 1.0\nelement vertex {count}\n");
    for (ty, name) in PROPERTIES {
        h.push_str(&format!("property {ty} {name}\n"));
    }
    h.push_str("end_header\n");
    h
}

pub fn encode_ply(points: &[PlyPoint]) -> Vec<u8> {
    let mut out = header(points.len()).into_bytes();
    out.reserve(points.len() * RECORD);
    for p in points {
        for v in [p.x, p.y, p.z, p.intensity, p.drop_prob] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.push(p.dropped);
    }
    out
}

/// Decode files written by [`encode_ply`]; the header must match exactly.
pub fn decode_ply(bytes: &[u8]) -> Result<Vec<PlyPoint>, LidarError> {
    let bad = |m: &str| LidarError::Format(format!("PLY: {m}"));
    let marker = b"end_header\n";
    let end = bytes
        .windows(marker.len())
        .position(|w| w == marker)
        .ok_or_else(|| bad("missing end_header"))?
        + marker.len();
    let text = std::str::from_utf8(&bytes[..end]).map_err(|_| bad("header is not text"))?;
    let count = text
        .lines()
        .find_map(|l| l.strip_prefix("element vertex "))
        .and_then(|n| n.trim().parse::<usize>().ok())
        .ok_or_else(|| bad("missing vertex count"))?;
    if text != header(count) {
        return Err(bad("unsupported header layout"));
    }
    let body = &bytes[end..];
    if body.len() != count * RECORD {
        return Err(bad("payload length does not match vertex count"));
    }
    Ok(body
        .chunks_exact(RECORD)
        .map(|c| {
            let f = |i: usize| f32::from_le_bytes(c[i * 4..i * 4 + 4].try_into().unwrap());
            PlyPoint { x: f(0), y: f(1), z: f(2), intensity: f(3), drop_prob: f(4), dropped: c[20] }
        })
        .collect())
}
