use super::{DiffusionError, LatentVolume};

pub const LTNT_MAGIC: &[u8; 4] = b"LTNT";
/// Magic plus `T, C, h, w` as little-endian u32.
pub const LTNT_HEADER_LEN: usize = 20;

/// Values are stored as f32 in frame, channel, row, column order.
pub fn encode_ltnt(z: &LatentVolume) -> Vec<u8> {
    let mut out = Vec::with_capacity(LTNT_HEADER_LEN + z.values.len() * 4);
    out.extend_from_slice(LTNT_MAGIC);
    for d in [z.frames, z.channels, z.height, z.width] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in &z.values {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

pub fn decode_ltnt(bytes: &[u8]) -> Result<LatentVolume, DiffusionError> {
    if bytes.len() < LTNT_HEADER_LEN {
        return Err(DiffusionError::Format("truncated header".into()));
    }
    if &bytes[..4] != LTNT_MAGIC {
        return Err(DiffusionError::Format("bad magic".into()));
    }
    let dim = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let (t, c, h, w) = (dim(0), dim(1), dim(2), dim(3));
    let count = [t, c, h, w]
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .and_then(|n| n.checked_mul(4).map(|b| (n, b)));
    let (n, payload) = count.ok_or_else(|| DiffusionError::Format("size overflow".into()))?;
    if bytes.len() - LTNT_HEADER_LEN != payload {
        return Err(DiffusionError::Format(format!(
            "expected {payload} payload bytes, found {}",
            bytes.len() - LTNT_HEADER_LEN
        )));
    }
    let values: Vec<f64> = bytes[LTNT_HEADER_LEN..]
        .chunks_exact(4)
        .map(|b| f64::from(f32::from_le_bytes(b.try_into().unwrap())))
        .collect();
    debug_assert_eq!(values.len(), n);
    LatentVolume::new(t, c, h, w, values)
}
