use super::LidarError;

pub const LHED_MAGIC: &[u8; 4] = b"LHED";
const LHED_VERSION: u32 = 1;

/// Fully connected layer, `y = W x + b` with row-major `W` of shape
/// `out_dim x in_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f32>,
    pub biases: Vec<f32>,
}

impl Dense {
    pub fn new(in_dim: usize, out_dim: usize, weights: Vec<f32>, biases: Vec<f32>) -> Result<Self, LidarError> {
        if in_dim == 0 || out_dim == 0 {
            return Err(LidarError::InvalidHead("layer dimensions must be >= 1".into()));
        }
        if weights.len() != in_dim * out_dim || biases.len() != out_dim {
            return Err(LidarError::InvalidHead(format!(
                "layer {in_dim}->{out_dim} needs {} weights and {out_dim} biases",
                in_dim * out_dim
            )));
        }
        if weights.iter().chain(&biases).any(|v| !v.is_finite()) {
            return Err(LidarError::InvalidHead("weights must be finite".into()));
        }
        Ok(Self { in_dim, out_dim, weights, biases })
    }
}

/// Stack of dense layers with ReLU between them. An empty stack is the
/// identity.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

impl Mlp {
    pub fn identity() -> Self {
        Self::default()
    }

    pub fn new(layers: Vec<Dense>) -> Result<Self, LidarError> {
        for pair in layers.windows(2) {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(LidarError::InvalidHead(format!(
                    "layer output {} does not feed input {}",
                    pair[0].out_dim, pair[1].in_dim
                )));
            }
        }
        Ok(Self { layers })
    }

    pub fn is_identity(&self) -> bool {
        self.layers.is_empty()
    }

    /// Output width for an input of width `in_dim`, if compatible.
    pub fn output_dim(&self, in_dim: usize) -> Option<usize> {
        match (self.layers.first(), self.layers.last()) {
            (Some(first), Some(last)) => (first.in_dim == in_dim).then_some(last.out_dim),
            _ => Some(in_dim),
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut cur = x.to_vec();
        for (n, layer) in self.layers.iter().enumerate() {
            let mut next = vec![0.0; layer.out_dim];
            for (o, y) in next.iter_mut().enumerate() {
                let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                *y = f64::from(layer.biases[o]) + row.iter().zip(&cur).map(|(w, v)| f64::from(*w) * v).sum::<f64>();
                if n + 1 < self.layers.len() {
                    *y = y.max(0.0);
                }
            }
            cur = next;
        }
        cur
    }
}

/// SDF, intensity and ray-drop heads plus the sharpness of the logistic CDF.
#[derive(Debug, Clone, PartialEq)]
pub struct LidarHead {
    pub sdf_mlp: Mlp,
    pub intensity_mlp: Mlp,
    pub drop_mlp: Mlp,
    pub sharpness: f64,
}

impl LidarHead {
    /// Heads for the scalar analytic SDF: identity SDF head, intensity
    /// falling with the weighted signed distance, and a low constant drop
    /// probability.
    pub fn analytic(voxel_size: f64) -> Self {
        let scalar = |w: f32, b: f32| Mlp { layers: vec![Dense { in_dim: 1, out_dim: 1, weights: vec![w], biases: vec![b] }] };
        Self {
            sdf_mlp: Mlp::identity(),
            intensity_mlp: scalar(-1.0, 0.0),
            drop_mlp: scalar(0.0, -4.0),
            sharpness: 150.0 / voxel_size,
        }
    }

    /// Check the heads against a provider feature width.
    pub fn validate(&self, feature_dim: usize) -> Result<(), LidarError> {
        if !(self.sharpness > 0.0 && self.sharpness.is_finite()) {
            return Err(LidarError::InvalidHead("sharpness must be positive".into()));
        }
        for (name, mlp) in [("sdf", &self.sdf_mlp), ("intensity", &self.intensity_mlp), ("drop", &self.drop_mlp)] {
            if mlp.output_dim(feature_dim) != Some(1) {
                return Err(LidarError::InvalidHead(format!(
                    "{name} head must map {feature_dim} features to one value"
                )));
            }
        }
        Ok(())
    }
}

pub fn encode_lhed(head: &LidarHead) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(LHED_MAGIC);
    out.extend_from_slice(&LHED_VERSION.to_le_bytes());
    out.extend_from_slice(&(head.sharpness as f32).to_le_bytes());
    for mlp in [&head.sdf_mlp, &head.intensity_mlp, &head.drop_mlp] {
        out.extend_from_slice(&(mlp.layers.len() as u32).to_le_bytes());
        for l in &mlp.layers {
            out.extend_from_slice(&(l.in_dim as u32).to_le_bytes());
            out.extend_from_slice(&(l.out_dim as u32).to_le_bytes());
            for v in l.weights.iter().chain(&l.biases) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], LidarError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| LidarError::Format("LHED: truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, LidarError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>, LidarError> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| LidarError::Format("LHED: size overflow".into()))?)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

pub fn decode_lhed(bytes: &[u8]) -> Result<LidarHead, LidarError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != LHED_MAGIC {
        return Err(LidarError::Format("LHED: bad magic".into()));
    }
    let version = r.u32()?;
    if version != LHED_VERSION {
        return Err(LidarError::Format(format!("LHED: unsupported version {version}")));
    }
    let sharpness = f64::from(f32::from_le_bytes(r.take(4)?.try_into().unwrap()));
    let mut mlps = Vec::with_capacity(3);
    for _ in 0..3 {
        let count = r.u32()? as usize;
        let mut layers = Vec::new();
        for _ in 0..count {
            let (i, o) = (r.u32()? as usize, r.u32()? as usize);
            let weights = r.f32s(i * o)?;
            let biases = r.f32s(o)?;
            layers.push(Dense::new(i, o, weights, biases)?);
        }
        mlps.push(Mlp::new(layers)?);
    }
    if r.pos != bytes.len() {
        return Err(LidarError::Format("LHED: trailing bytes".into()));
    }
    let drop_mlp = mlps.pop().unwrap();
    let intensity_mlp = mlps.pop().unwrap();
    let sdf_mlp = mlps.pop().unwrap();
    let head = LidarHead { sdf_mlp, intensity_mlp, drop_mlp, sharpness };
    if !(sharpness > 0.0 && sharpness.is_finite()) {
        return Err(LidarError::InvalidHead("sharpness must be positive".into()));
    }
    Ok(head)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_layer() -> Mlp {
        Mlp::new(vec![
            Dense::new(2, 3, vec![1.0, 0.0, 0.0, 1.0, 1.0, -1.0], vec![0.0, 0.0, -5.0]).unwrap(),
            Dense::new(3, 1, vec![1.0, 2.0, 3.0], vec![0.5]).unwrap(),
        ])
        .unwrap()
    }

    #[test]
    fn forward_applies_relu_between_layers() {
        // hidden = relu([1, 2, -6]) = [1, 2, 0]
        assert_eq!(two_layer().forward(&[1.0, 2.0]), vec![1.0 + 4.0 + 0.5]);
        assert_eq!(Mlp::identity().forward(&[3.0, -1.0]), vec![3.0, -1.0]);
    }

    #[test]
    fn layer_shapes_are_checked() {
        assert!(Dense::new(2, 2, vec![0.0; 3], vec![0.0; 2]).is_err());
        assert!(Dense::new(1, 1, vec![f32::NAN], vec![0.0]).is_err());
        let a = Dense::new(2, 3, vec![0.0; 6], vec![0.0; 3]).unwrap();
        let b = Dense::new(2, 1, vec![0.0; 2], vec![0.0]).unwrap();
        assert!(Mlp::new(vec![a, b]).is_err());
    }

    #[test]
    fn head_validation() {
        let head = LidarHead::analytic(0.5);
        assert_eq!(head.sharpness, 300.0);
        head.validate(1).unwrap();
        assert!(head.validate(2).is_err());
        let loaded = LidarHead { sdf_mlp: two_layer(), intensity_mlp: two_layer(), drop_mlp: two_layer(), sharpness: 5.0 };
        loaded.validate(2).unwrap();
        assert!(LidarHead { sharpness: 0.0, ..loaded }.validate(2).is_err());
    }

    #[test]
    fn lhed_round_trip_and_errors() {
        let head = LidarHead { sdf_mlp: two_layer(), intensity_mlp: Mlp::identity(), drop_mlp: two_layer(), sharpness: 12.5 };
        let bytes = encode_lhed(&head);
        assert_eq!(&bytes[..4], LHED_MAGIC);
        assert_eq!(decode_lhed(&bytes).unwrap(), head);
        assert_eq!(encode_lhed(&decode_lhed(&bytes).unwrap()), bytes);
        assert!(decode_lhed(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode_lhed(&extra).is_err());
        let mut bad = bytes;
        bad[0] = b'X';
        assert!(decode_lhed(&bad).is_err());
    }
}
