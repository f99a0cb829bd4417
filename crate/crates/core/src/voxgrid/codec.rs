//! Little-endian binary codecs for grids (`SVOC`), layouts (`BVLC`) and
//! class-embedding tables (`CEMB`). All formats are version 1.

use super::{BevLayout, ClassEmbeddingTable, GridError, SemanticOccupancyGrid, UNKNOWN};
use thiserror::Error;

pub const SVO_MAGIC: &[u8; 4] = b"SVOC";
pub const BVL_MAGIC: &[u8; 4] = b"BVLC";
pub const CEMB_MAGIC: &[u8; 4] = b"CEMB";
const VERSION: u32 = 1;

/// magic + version + dims + voxel_size + origin + num_classes
pub const SVO_HEADER_LEN: usize = 4 + 4 + 12 + 4 + 12 + 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FormatError {
    #[error("bad magic {found:?}, expected {expected:?}")]
    BadMagic { expected: [u8; 4], found: Vec<u8> },
    #[error("unsupported version {0}")]
    VersionUnsupported(u32),
    #[error("truncated header: need {needed} bytes, have {have}")]
    TruncatedHeader { needed: usize, have: usize },
    #[error("truncated payload: need {needed} bytes, have {have}")]
    TruncatedPayload { needed: usize, have: usize },
    #[error("{extra} trailing bytes after payload")]
    TrailingBytes { extra: usize },
    #[error("label {label} at voxel {index} is out of range for {num_classes} classes")]
    LabelOutOfRange { index: usize, label: u8, num_classes: u32 },
    #[error("invalid header field `{field}`: {reason}")]
    InvalidField { field: &'static str, reason: String },
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    header_len: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8], magic: &[u8; 4], header_len: usize) -> Result<Self, FormatError> {
        if buf.len() < 4 || &buf[..4] != magic {
            return Err(FormatError::BadMagic {
                expected: *magic,
                found: buf[..buf.len().min(4)].to_vec(),
            });
        }
        if buf.len() < header_len {
            return Err(FormatError::TruncatedHeader { needed: header_len, have: buf.len() });
        }
        let mut r = Reader { buf, pos: 4, header_len };
        let version = r.u32();
        if version != VERSION {
            return Err(FormatError::VersionUnsupported(version));
        }
        Ok(r)
    }

    fn u32(&mut self) -> u32 {
        let v = u32::from_le_bytes(self.buf[self.pos..self.pos + 4].try_into().unwrap());
        self.pos += 4;
        v
    }

    fn f32(&mut self) -> f32 {
        f32::from_bits(self.u32())
    }

    fn payload(&self, needed: usize) -> Result<&'a [u8], FormatError> {
        debug_assert_eq!(self.pos, self.header_len);
        let rest = &self.buf[self.pos..];
        if rest.len() < needed {
            return Err(FormatError::TruncatedPayload { needed, have: rest.len() });
        }
        if rest.len() > needed {
            return Err(FormatError::TrailingBytes { extra: rest.len() - needed });
        }
        Ok(rest)
    }
}

fn dim(v: u32, field: &'static str) -> Result<usize, FormatError> {
    if v == 0 {
        return Err(FormatError::InvalidField { field, reason: "must be >= 1".into() });
    }
    Ok(v as usize)
}

fn positive(v: f32, field: &'static str) -> Result<f32, FormatError> {
    if !(v.is_finite() && v > 0.0) {
        return Err(FormatError::InvalidField { field, reason: format!("{v} must be > 0") });
    }
    Ok(v)
}

fn finite(v: f32, field: &'static str) -> Result<f32, FormatError> {
    if !v.is_finite() {
        return Err(FormatError::InvalidField { field, reason: "must be finite".into() });
    }
    Ok(v)
}

fn checked_len(dims: &[usize], field: &'static str) -> Result<usize, FormatError> {
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or(FormatError::InvalidField { field, reason: "payload size overflows".into() })
}

fn to_field_error(e: GridError, field: &'static str) -> FormatError {
    FormatError::InvalidField { field, reason: e.to_string() }
}

pub fn encode_svo(grid: &SemanticOccupancyGrid) -> Vec<u8> {
    let mut out = Vec::with_capacity(SVO_HEADER_LEN + grid.len());
    out.extend_from_slice(SVO_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for d in grid.dims() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.extend_from_slice(&grid.voxel_size().to_le_bytes());
    for o in grid.origin() {
        out.extend_from_slice(&o.to_le_bytes());
    }
    out.extend_from_slice(&grid.num_classes().to_le_bytes());
    out.extend_from_slice(grid.labels());
    out
}

pub fn decode_svo(bytes: &[u8]) -> Result<SemanticOccupancyGrid, FormatError> {
    let mut r = Reader::new(bytes, SVO_MAGIC, SVO_HEADER_LEN)?;
    let h = dim(r.u32(), "H")?;
    let w = dim(r.u32(), "W")?;
    let d = dim(r.u32(), "D")?;
    let voxel_size = positive(r.f32(), "voxel_size")?;
    let origin = [finite(r.f32(), "origin.x")?, finite(r.f32(), "origin.y")?, finite(r.f32(), "origin.z")?];
    let num_classes = r.u32();
    if num_classes == 0 {
        return Err(FormatError::InvalidField { field: "num_classes", reason: "must be >= 1".into() });
    }
    let payload = r.payload(checked_len(&[h, w, d], "H*W*D")?)?;
    if let Some((index, &label)) = payload
        .iter()
        .enumerate()
        .find(|(_, &l)| l != UNKNOWN && u32::from(l) >= num_classes)
    {
        return Err(FormatError::LabelOutOfRange { index, label, num_classes });
    }
    SemanticOccupancyGrid::new([h, w, d], voxel_size, origin, num_classes, payload.to_vec())
        .map_err(|e| to_field_error(e, "payload"))
}

pub fn encode_bvl(layout: &BevLayout) -> Vec<u8> {
    let mut out = Vec::with_capacity(32 + layout.codes().len());
    out.extend_from_slice(BVL_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for d in layout.dims() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.extend_from_slice(&layout.cell_size().to_le_bytes());
    for o in layout.origin() {
        out.extend_from_slice(&o.to_le_bytes());
    }
    out.extend_from_slice(&layout.palette_size().to_le_bytes());
    out.extend_from_slice(layout.codes());
    out
}

pub fn decode_bvl(bytes: &[u8]) -> Result<BevLayout, FormatError> {
    const HEADER: usize = 4 + 4 + 8 + 4 + 8 + 4;
    let mut r = Reader::new(bytes, BVL_MAGIC, HEADER)?;
    let h = dim(r.u32(), "H")?;
    let w = dim(r.u32(), "W")?;
    let cell_size = positive(r.f32(), "cell_size")?;
    let origin = [finite(r.f32(), "origin.x")?, finite(r.f32(), "origin.y")?];
    let palette_size = r.u32();
    let payload = r.payload(checked_len(&[h, w], "H*W")?)?;
    if let Some((index, &label)) = payload.iter().enumerate().find(|(_, &c)| u32::from(c) >= palette_size) {
        return Err(FormatError::LabelOutOfRange { index, label, num_classes: palette_size });
    }
    BevLayout::new([h, w], cell_size, origin, palette_size, payload.to_vec())
        .map_err(|e| to_field_error(e, "payload"))
}

pub fn encode_cemb(table: &ClassEmbeddingTable) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 4 * table.weights().len());
    out.extend_from_slice(CEMB_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(table.num_classes() as u32).to_le_bytes());
    out.extend_from_slice(&(table.embed_dim() as u32).to_le_bytes());
    for w in table.weights() {
        out.extend_from_slice(&w.to_le_bytes());
    }
    out
}

pub fn decode_cemb(bytes: &[u8]) -> Result<ClassEmbeddingTable, FormatError> {
    let mut r = Reader::new(bytes, CEMB_MAGIC, 16)?;
    let n = dim(r.u32(), "num_classes")?;
    let e = dim(r.u32(), "embed_dim")?;
    let count = checked_len(&[n, e, 4], "weights")?;
    let payload = r.payload(count)?;
    let weights = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    ClassEmbeddingTable::new(n, e, weights).map_err(|e| to_field_error(e, "weights"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tiny() -> SemanticOccupancyGrid {
        SemanticOccupancyGrid::new([1, 1, 1], 1.0, [0.0; 3], 2, vec![1]).unwrap()
    }

    #[test]
    fn smallest_grid_is_41_bytes() {
        let bytes = encode_svo(&tiny());
        assert_eq!(bytes.len(), 41);
        assert_eq!(&bytes[..4], b"SVOC");
        assert_eq!(decode_svo(&bytes).unwrap(), tiny());
    }

    #[test]
    fn header_layout_is_little_endian() {
        let g = SemanticOccupancyGrid::new([2, 1, 1], 0.5, [-1.0, 2.0, 3.0], 17, vec![0, 16]).unwrap();
        let b = encode_svo(&g);
        assert_eq!(&b[4..8], &[1, 0, 0, 0]);
        assert_eq!(&b[8..12], &[2, 0, 0, 0]);
        assert_eq!(&b[20..24], &0.5f32.to_le_bytes());
        assert_eq!(&b[24..28], &(-1.0f32).to_le_bytes());
        assert_eq!(&b[36..40], &[17, 0, 0, 0]);
        assert_eq!(&b[40..], &[0, 16]);
    }

    #[test]
    fn decode_errors() {
        let mut b = encode_svo(&tiny());
        b[0] = b'X';
        assert!(matches!(decode_svo(&b), Err(FormatError::BadMagic { .. })));

        let mut b = encode_svo(&tiny());
        b[4] = 2;
        assert_eq!(decode_svo(&b), Err(FormatError::VersionUnsupported(2)));

        let b = encode_svo(&tiny());
        assert!(matches!(
            decode_svo(&b[..40]),
            Err(FormatError::TruncatedPayload { needed: 1, have: 0 })
        ));
        assert!(matches!(decode_svo(&b[..20]), Err(FormatError::TruncatedHeader { .. })));

        let mut b = encode_svo(&tiny());
        b[40] = 2;
        assert!(matches!(decode_svo(&b), Err(FormatError::LabelOutOfRange { label: 2, .. })));

        let mut b = encode_svo(&tiny());
        b.push(0);
        assert!(matches!(decode_svo(&b), Err(FormatError::TrailingBytes { extra: 1 })));
    }

    #[test]
    fn unknown_sentinel_round_trips() {
        let g = SemanticOccupancyGrid::new([1, 2, 1], 1.0, [0.0; 3], 3, vec![UNKNOWN, 2]).unwrap();
        assert_eq!(decode_svo(&encode_svo(&g)).unwrap(), g);
    }

    #[test]
    fn equal_grids_encode_identically() {
        assert_eq!(encode_svo(&tiny()), encode_svo(&tiny().clone()));
    }

    #[test]
    fn layout_and_table_round_trip() {
        let l = BevLayout::new([2, 3], 0.5, [-1.0, -2.0], 8, vec![0, 1, 2, 3, 4, 7]).unwrap();
        let b = encode_bvl(&l);
        assert_eq!(b.len(), 32 + 6);
        assert_eq!(decode_bvl(&b).unwrap(), l);
        let t = ClassEmbeddingTable::signed_axes(17, 8).unwrap();
        let b = encode_cemb(&t);
        assert_eq!(b.len(), 16 + 17 * 8 * 4);
        assert_eq!(decode_cemb(&b).unwrap(), t);
        assert!(matches!(decode_bvl(&encode_svo(&tiny())), Err(FormatError::BadMagic { .. })));
    }

    fn arb_grid() -> impl Strategy<Value = SemanticOccupancyGrid> {
        (1usize..5, 1usize..5, 1usize..5, 1u32..40, 0.01f32..4.0, prop::array::uniform3(-50f32..50.0))
            .prop_flat_map(|(h, w, d, nc, vs, origin)| {
                let label = prop_oneof![9 => (0..nc).prop_map(|l| l as u8), 1 => Just(UNKNOWN)];
                prop::collection::vec(label, h * w * d).prop_map(move |labels| {
                    SemanticOccupancyGrid::new([h, w, d], vs, origin, nc, labels).unwrap()
                })
            })
    }

    proptest! {
        #[test]
        fn svo_round_trip(g in arb_grid()) {
            let bytes = encode_svo(&g);
            prop_assert_eq!(bytes.len(), SVO_HEADER_LEN + g.len());
            let back = decode_svo(&bytes).unwrap();
            prop_assert_eq!(encode_svo(&back), bytes);
            prop_assert_eq!(back, g);
        }
    }
}
