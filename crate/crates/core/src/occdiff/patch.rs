use crate::voxgrid::{BevFeatureMap, BevLayout};

use super::{DiffusionError, LatentVolume};

/// Affine map `y = W x + b`, `W` row-major `out_dim x in_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchEmbedder {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl PatchEmbedder {
    pub fn new(in_dim: usize, out_dim: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self, DiffusionError> {
        if in_dim == 0 || out_dim == 0 || weights.len() != in_dim * out_dim || bias.len() != out_dim {
            return Err(DiffusionError::DimMismatch(format!("embedder {in_dim}->{out_dim} has wrong parameter count")));
        }
        Ok(Self { in_dim, out_dim, weights, bias })
    }

    pub fn identity(dim: usize) -> Self {
        let mut weights = vec![0.0; dim * dim];
        (0..dim).for_each(|i| weights[i * dim + i] = 1.0);
        Self { in_dim: dim, out_dim: dim, weights, bias: vec![0.0; dim] }
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (o, y) in out.iter_mut().enumerate() {
            let row = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
            *y = self.bias[o] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
    }
}

/// Row-major patch tokens, `L x E_d`.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenGrid {
    pub tokens: Vec<f64>,
    pub num_tokens: usize,
    pub embed_dim: usize,
    pub patch: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl TokenGrid {
    pub fn token(&self, l: usize) -> &[f64] {
        &self.tokens[l * self.embed_dim..(l + 1) * self.embed_dim]
    }
}

/// Concatenate latent and layout channels, cut `P x P` patches row-major and
/// embed each. Inside a patch vector, channel `c`, offset `(py, px)` sits at
/// `c * P^2 + py * P + px`.
pub fn patchify(
    latent: &LatentVolume,
    bev: &LatentVolume,
    patch: usize,
    embedder: &PatchEmbedder,
) -> Result<TokenGrid, DiffusionError> {
    let (h, w) = (latent.height, latent.width);
    if latent.frames != 1 || bev.frames != 1 {
        return Err(DiffusionError::DimMismatch("patchify takes single frames".into()));
    }
    if (bev.height, bev.width) != (h, w) {
        return Err(DiffusionError::DimMismatch(format!("layout is {}x{}, latent is {h}x{w}", bev.height, bev.width)));
    }
    if patch == 0 || h % patch != 0 || w % patch != 0 {
        return Err(DiffusionError::DimMismatch(format!("patch {patch} does not divide {h}x{w}")));
    }
    let channels = latent.channels + bev.channels;
    let pp = patch * patch;
    if embedder.in_dim != channels * pp {
        return Err(DiffusionError::DimMismatch(format!(
            "embedder takes {}, patches have {}",
            embedder.in_dim,
            channels * pp
        )));
    }
    let (ph, pw) = (h / patch, w / patch);
    let e = embedder.out_dim;
    let mut tokens = vec![0.0; ph * pw * e];
    let mut buf = vec![0.0; channels * pp];
    for gy in 0..ph {
        for gx in 0..pw {
            for c in 0..channels {
                let (src, cc) = if c < latent.channels { (latent, c) } else { (bev, c - latent.channels) };
                for py in 0..patch {
                    for px in 0..patch {
                        buf[c * pp + py * patch + px] = src.at(0, cc, gy * patch + py, gx * patch + px);
                    }
                }
            }
            let l = gy * pw + gx;
            embedder.apply(&buf, &mut tokens[l * e..(l + 1) * e]);
        }
    }
    Ok(TokenGrid { tokens, num_tokens: ph * pw, embed_dim: e, patch, height: h, width: w, channels })
}

/// Map each token back to a patch and lay patches out row-major. The output
/// channel count is `unembedder.out_dim / P^2`.
pub fn unpatchify(tokens: &TokenGrid, unembedder: &PatchEmbedder) -> Result<LatentVolume, DiffusionError> {
    let p = tokens.patch;
    let pp = p * p;
    if unembedder.in_dim != tokens.embed_dim {
        return Err(DiffusionError::DimMismatch(format!(
            "un-embedder takes {}, tokens have {}",
            unembedder.in_dim, tokens.embed_dim
        )));
    }
    if unembedder.out_dim % pp != 0 {
        return Err(DiffusionError::DimMismatch(format!("un-embedder output {} is not a multiple of {pp}", unembedder.out_dim)));
    }
    let (h, w) = (tokens.height, tokens.width);
    let pw = w / p;
    if tokens.num_tokens != (h / p) * pw || tokens.tokens.len() != tokens.num_tokens * tokens.embed_dim {
        return Err(DiffusionError::DimMismatch("token count does not match the source size".into()));
    }
    let channels = unembedder.out_dim / pp;
    let mut out = LatentVolume::zeros(1, channels, h, w);
    let mut buf = vec![0.0; unembedder.out_dim];
    for l in 0..tokens.num_tokens {
        unembedder.apply(tokens.token(l), &mut buf);
        let (gy, gx) = (l / pw, l % pw);
        for c in 0..channels {
            for py in 0..p {
                for px in 0..p {
                    out.values[(c * h + gy * p + py) * w + gx * p + px] = buf[c * pp + py * p + px];
                }
            }
        }
    }
    Ok(out)
}

/// One-hot layout channels at latent resolution, nearest-neighbour sampled.
/// Latent row `y` follows layout axis `i`, column `x` follows axis `j`.
pub fn bev_condition(layout: &BevLayout, height: usize, width: usize) -> Result<LatentVolume, DiffusionError> {
    if height == 0 || width == 0 {
        return Err(DiffusionError::DimMismatch("condition size must be >= 1".into()));
    }
    let [lh, lw] = layout.dims();
    let cb = layout.palette_size() as usize;
    let mut out = LatentVolume::zeros(1, cb, height, width);
    for y in 0..height {
        let i = ((y * 2 + 1) * lh / (height * 2)).min(lh - 1);
        for x in 0..width {
            let j = ((x * 2 + 1) * lw / (width * 2)).min(lw - 1);
            let code = layout.code(i, j) as usize;
            out.values[(code * height + y) * width + x] = 1.0;
        }
    }
    Ok(out)
}

impl LatentVolume {
    /// Single frame from a channels-last BEV feature map.
    pub fn from_feature_map(fmap: &BevFeatureMap) -> LatentVolume {
        let [h, w] = fmap.dims;
        let c = fmap.channels();
        let mut out = LatentVolume::zeros(1, c, h, w);
        for (p, cell) in fmap.values.chunks_exact(c).enumerate() {
            for (ch, v) in cell.iter().enumerate() {
                out.values[ch * h * w + p] = f64::from(*v);
            }
        }
        out
    }

    /// Write frame `t` back into a feature map of matching size.
    pub fn to_feature_map(&self, t: usize, like: &BevFeatureMap) -> Result<BevFeatureMap, DiffusionError> {
        let [h, w] = like.dims;
        let c = like.channels();
        if (self.channels, self.height, self.width) != (c, h, w) || t >= self.frames {
            return Err(DiffusionError::ShapeMismatch(format!(
                "latent {}x{}x{} does not fit feature map {c}x{h}x{w}",
                self.channels, self.height, self.width
            )));
        }
        let frame = &self.values[t * self.frame_len()..(t + 1) * self.frame_len()];
        let mut values = vec![0.0f32; h * w * c];
        for p in 0..h * w {
            for ch in 0..c {
                values[p * c + ch] = frame[ch * h * w + p] as f32;
            }
        }
        Ok(BevFeatureMap { values, ..like.clone() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(channels: usize, h: usize, w: usize, offset: f64) -> LatentVolume {
        let n = channels * h * w;
        LatentVolume::new(1, channels, h, w, (0..n).map(|i| i as f64 + offset).collect()).unwrap()
    }

    fn concat(a: &LatentVolume, b: &LatentVolume) -> LatentVolume {
        let mut v = a.values.clone();
        v.extend_from_slice(&b.values);
        LatentVolume::new(1, a.channels + b.channels, a.height, a.width, v).unwrap()
    }

    #[test]
    fn unit_patch_tokens_are_pixel_vectors() {
        let z = ramp(2, 2, 3, 0.0);
        let b = ramp(1, 2, 3, 100.0);
        let g = patchify(&z, &b, 1, &PatchEmbedder::identity(3)).unwrap();
        assert_eq!(g.num_tokens, 6);
        // pixel (1, 2) is flat index 5
        assert_eq!(g.token(5), &[5.0, 11.0, 105.0]);
    }

    #[test]
    fn patch_layout_and_count() {
        let z = ramp(1, 4, 4, 0.0);
        let b = ramp(1, 4, 4, 100.0);
        let g = patchify(&z, &b, 2, &PatchEmbedder::identity(8)).unwrap();
        assert_eq!(g.num_tokens, 4);
        // second token: rows 0..2, columns 2..4
        assert_eq!(g.token(1), &[2.0, 3.0, 6.0, 7.0, 102.0, 103.0, 106.0, 107.0]);
        let single = patchify(&ramp(1, 2, 2, 0.0), &ramp(1, 2, 2, 0.0), 2, &PatchEmbedder::identity(8)).unwrap();
        assert_eq!(single.num_tokens, 1);
    }

    #[test]
    fn identity_round_trip() {
        for (p, h, w) in [(1, 3, 5), (2, 4, 6), (3, 6, 3)] {
            let z = ramp(3, h, w, 0.5);
            let b = ramp(2, h, w, -9.0);
            let id = PatchEmbedder::identity(5 * p * p);
            let g = patchify(&z, &b, p, &id).unwrap();
            assert_eq!(unpatchify(&g, &id).unwrap(), concat(&z, &b));
        }
    }

    #[test]
    fn dimension_errors() {
        let z = ramp(1, 4, 4, 0.0);
        let b = ramp(1, 4, 4, 0.0);
        assert!(patchify(&z, &b, 3, &PatchEmbedder::identity(18)).is_err());
        assert!(patchify(&z, &b, 2, &PatchEmbedder::identity(7)).is_err());
        assert!(patchify(&z, &ramp(1, 2, 2, 0.0), 1, &PatchEmbedder::identity(2)).is_err());
        let g = patchify(&z, &b, 2, &PatchEmbedder::identity(8)).unwrap();
        assert!(unpatchify(&g, &PatchEmbedder::identity(6)).is_err());
        let odd = PatchEmbedder::new(8, 6, vec![0.0; 48], vec![0.0; 6]).unwrap();
        assert!(unpatchify(&g, &odd).is_err());
    }

    #[test]
    fn condition_is_one_hot_nearest() {
        let layout = BevLayout::new([2, 2], 1.0, [0.0, 0.0], 3, vec![0, 1, 2, 1]).unwrap();
        let c = bev_condition(&layout, 4, 4).unwrap();
        assert_eq!(c.channels, 3);
        for y in 0..4 {
            for x in 0..4 {
                let code = layout.code(y / 2, x / 2) as usize;
                let hot: Vec<f64> = (0..3).map(|k| c.at(0, k, y, x)).collect();
                assert_eq!(hot.iter().sum::<f64>(), 1.0);
                assert_eq!(hot[code], 1.0);
            }
        }
        let down = bev_condition(&layout, 1, 1).unwrap();
        assert_eq!(down.values.iter().sum::<f64>(), 1.0);
    }
}
