//! PFM (float) and PGM P5 (8-bit) image files.
//!
//! PFM rows are stored bottom to top as the format requires; in memory all
//! images are row-major top to bottom.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("malformed {format} header: {reason}")]
    Header { format: &'static str, reason: String },
    #[error("{format} payload has {have} bytes, {needed} expected")]
    Payload { format: &'static str, needed: usize, have: usize },
    #[error("image data length {len} does not match {width}x{height}x{channels}")]
    Shape { len: usize, width: usize, height: usize, channels: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FloatImage {
    pub width: usize,
    pub height: usize,
    /// 1 (`Pf`) or 3 (`PF`).
    pub channels: usize,
    /// Interleaved, top row first.
    pub data: Vec<f32>,
}

pub fn encode_pfm(img: &FloatImage) -> Result<Vec<u8>, ImageError> {
    let FloatImage { width, height, channels, .. } = *img;
    if !(channels == 1 || channels == 3) || img.data.len() != width * height * channels {
        return Err(ImageError::Shape { len: img.data.len(), width, height, channels });
    }
    let tag = if channels == 1 { "Pf" } else { "PF" };
    let mut out = format!("{tag}\n{width} {height}\n-1.0\n").into_bytes();
    out.reserve(img.data.len() * 4);
    let row = width * channels;
    for y in (0..height).rev() {
        for v in &img.data[y * row..(y + 1) * row] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Grayscale convenience wrapper.
pub fn encode_pfm_gray(width: usize, height: usize, data: &[f32]) -> Result<Vec<u8>, ImageError> {
    encode_pfm(&FloatImage { width, height, channels: 1, data: data.to_vec() })
}

/// Split off `count` whitespace-separated header tokens; returns them and the
/// payload that follows the single whitespace byte after the last token.
fn header_tokens<'a>(bytes: &'a [u8], count: usize, format: &'static str) -> Result<(Vec<String>, &'a [u8]), ImageError> {
    let mut tokens = Vec::with_capacity(count);
    let mut pos = 0;
    while tokens.len() < count {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(ImageError::Header { format, reason: "unexpected end of header".into() });
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if pos >= bytes.len() {
        return Err(ImageError::Header { format, reason: "missing payload separator".into() });
    }
    Ok((tokens, &bytes[pos + 1..]))
}

fn parse_dim(tok: &str, format: &'static str) -> Result<usize, ImageError> {
    tok.parse::<usize>()
        .ok()
        .filter(|&v| v > 0)
        .ok_or_else(|| ImageError::Header { format, reason: format!("bad dimension {tok:?}") })
}

pub fn decode_pfm(bytes: &[u8]) -> Result<FloatImage, ImageError> {
    const F: &str = "PFM";
    let (tok, payload) = header_tokens(bytes, 4, F)?;
    let channels = match tok[0].as_str() {
        "Pf" => 1,
        "PF" => 3,
        other => return Err(ImageError::Header { format: F, reason: format!("bad tag {other:?}") }),
    };
    let width = parse_dim(&tok[1], F)?;
    let height = parse_dim(&tok[2], F)?;
    let scale: f32 = tok[3]
        .parse()
        .map_err(|_| ImageError::Header { format: F, reason: format!("bad scale {:?}", tok[3]) })?;
    if scale == 0.0 {
        return Err(ImageError::Header { format: F, reason: "scale must be non-zero".into() });
    }
    let n = width * height * channels;
    if payload.len() != n * 4 {
        return Err(ImageError::Payload { format: F, needed: n * 4, have: payload.len() });
    }
    let read = |c: &[u8]| {
        let b: [u8; 4] = c.try_into().unwrap();
        if scale < 0.0 { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) }
    };
    let row = width * channels;
    let mut data = vec![0.0f32; n];
    for (file_row, chunk) in payload.chunks_exact(row * 4).enumerate() {
        let y = height - 1 - file_row;
        for (x, c) in chunk.chunks_exact(4).enumerate() {
            data[y * row + x] = read(c);
        }
    }
    Ok(FloatImage { width, height, channels, data })
}

pub fn encode_pgm(width: usize, height: usize, data: &[u8]) -> Result<Vec<u8>, ImageError> {
    if data.len() != width * height {
        return Err(ImageError::Shape { len: data.len(), width, height, channels: 1 });
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(data);
    Ok(out)
}

pub fn decode_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>), ImageError> {
    const F: &str = "PGM";
    let (tok, payload) = header_tokens(bytes, 4, F)?;
    if tok[0] != "P5" {
        return Err(ImageError::Header { format: F, reason: format!("bad tag {:?}", tok[0]) });
    }
    let width = parse_dim(&tok[1], F)?;
    let height = parse_dim(&tok[2], F)?;
    if tok[3] != "255" {
        return Err(ImageError::Header { format: F, reason: "only maxval 255 is supported".into() });
    }
    if payload.len() != width * height {
        return Err(ImageError::Payload { format: F, needed: width * height, have: payload.len() });
    }
    Ok((width, height, payload.to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pfm_header_and_row_order() {
        let img = FloatImage { width: 2, height: 2, channels: 1, data: vec![1.0, 2.0, 3.0, 4.0] };
        let bytes = encode_pfm(&img).unwrap();
        let header = b"Pf\n2 2\n-1.0\n";
        assert_eq!(&bytes[..header.len()], header);
        // bottom row first
        assert_eq!(&bytes[header.len()..header.len() + 4], &3.0f32.to_le_bytes());
        assert_eq!(decode_pfm(&bytes).unwrap(), img);
    }

    #[test]
    fn pfm_color_round_trip() {
        let data: Vec<f32> = (0..18).map(|v| v as f32 * 0.5 - 3.0).collect();
        let img = FloatImage { width: 3, height: 2, channels: 3, data };
        assert_eq!(decode_pfm(&encode_pfm(&img).unwrap()).unwrap(), img);
    }

    #[test]
    fn pfm_big_endian_scale() {
        let mut bytes = b"Pf\n1 1\n1.0\n".to_vec();
        bytes.extend_from_slice(&2.5f32.to_be_bytes());
        assert_eq!(decode_pfm(&bytes).unwrap().data, vec![2.5]);
    }

    #[test]
    fn pgm_round_trip_and_errors() {
        let bytes = encode_pgm(3, 1, &[0, 128, 255]).unwrap();
        assert_eq!(&bytes[..11], b"P5\n3 1\n255\n");
        assert_eq!(decode_pgm(&bytes).unwrap(), (3, 1, vec![0, 128, 255]));
        assert!(decode_pgm(&bytes[..12]).is_err());
        assert!(encode_pgm(2, 2, &[0]).is_err());
        assert!(decode_pfm(b"P6\n1 1\n255\nx").is_err());
    }
}
