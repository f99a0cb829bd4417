use super::{GridError, SemanticOccupancyGrid, UNKNOWN};

/// Per-class embedding rows (`num_classes x embed_dim`, row-major).
#[derive(Debug, Clone, PartialEq)]
pub struct ClassEmbeddingTable {
    num_classes: usize,
    embed_dim: usize,
    weights: Vec<f32>,
}

impl ClassEmbeddingTable {
    pub const DEFAULT_EMBED_DIM: usize = 8;

    pub fn new(num_classes: usize, embed_dim: usize, weights: Vec<f32>) -> Result<Self, GridError> {
        if num_classes == 0 || embed_dim == 0 {
            return Err(GridError::Invalid("embedding table must be non-empty".into()));
        }
        if weights.len() != num_classes * embed_dim {
            return Err(GridError::DimMismatch(format!(
                "{} weights for a {num_classes}x{embed_dim} table",
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(GridError::Invalid("embedding weights must be finite".into()));
        }
        Ok(Self { num_classes, embed_dim, weights })
    }

    /// Identity rows; needs `num_classes <= embed_dim`.
    pub fn orthonormal(num_classes: usize, embed_dim: usize) -> Result<Self, GridError> {
        if num_classes > embed_dim {
            return Err(GridError::DimMismatch(format!(
                "{num_classes} orthonormal rows do not fit in {embed_dim} dimensions"
            )));
        }
        let mut w = vec![0.0; num_classes * embed_dim];
        for c in 0..num_classes {
            w[c * embed_dim + c] = 1.0;
        }
        Self::new(num_classes, embed_dim, w)
    }

    /// Unit rows `+e0, -e0, +e1, -e1, ...` followed by the normalized all-ones
    /// diagonal, for up to `2 * embed_dim + 1` classes. Every row has a strictly
    /// larger dot product with itself than with any other row, so argmax
    /// decoding recovers each class exactly.
    pub fn signed_axes(num_classes: usize, embed_dim: usize) -> Result<Self, GridError> {
        if num_classes > 2 * embed_dim + 1 {
            return Err(GridError::DimMismatch(format!(
                "{num_classes} signed-axis rows do not fit in {embed_dim} dimensions"
            )));
        }
        let mut w = vec![0.0f32; num_classes * embed_dim];
        for c in 0..num_classes {
            let row = &mut w[c * embed_dim..(c + 1) * embed_dim];
            if c < 2 * embed_dim {
                row[c / 2] = if c % 2 == 0 { 1.0 } else { -1.0 };
            } else {
                row.fill(1.0 / (embed_dim as f32).sqrt());
            }
        }
        Self::new(num_classes, embed_dim, w)
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    pub fn row(&self, class: usize) -> &[f32] {
        &self.weights[class * self.embed_dim..(class + 1) * self.embed_dim]
    }
}

/// BEV folding of a grid: `H x W x (D * C')`, channel `k * C' + c` holds
/// embedding component `c` of voxel `(i, j, k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BevFeatureMap {
    pub dims: [usize; 2],
    pub depth: usize,
    pub embed_dim: usize,
    pub values: Vec<f32>,
    /// Placement carried over from the source grid so unfolding can rebuild it.
    pub voxel_size: f32,
    pub origin: [f32; 3],
    pub num_classes: u32,
}

impl BevFeatureMap {
    pub fn channels(&self) -> usize {
        self.depth * self.embed_dim
    }

    pub fn cell(&self, i: usize, j: usize) -> &[f32] {
        let c = self.channels();
        let base = (i * self.dims[1] + j) * c;
        &self.values[base..base + c]
    }
}

pub fn embed_labels(
    grid: &SemanticOccupancyGrid,
    table: &ClassEmbeddingTable,
) -> Result<BevFeatureMap, GridError> {
    if (table.num_classes as u64) < u64::from(grid.num_classes()) {
        return Err(GridError::DimMismatch(format!(
            "table has {} classes, grid needs {}",
            table.num_classes,
            grid.num_classes()
        )));
    }
    let [h, w, d] = grid.dims();
    let e = table.embed_dim;
    let mut values = vec![0.0f32; h * w * d * e];
    // storage order of the grid is (i, j, k) and channels are (k, c), so the
    // feature map is the label array with each label expanded to its row
    for (n, &label) in grid.labels().iter().enumerate() {
        if label == UNKNOWN {
            continue;
        }
        values[n * e..(n + 1) * e].copy_from_slice(table.row(label as usize));
    }
    Ok(BevFeatureMap {
        dims: [h, w],
        depth: d,
        embed_dim: e,
        values,
        voxel_size: grid.voxel_size(),
        origin: grid.origin(),
        num_classes: grid.num_classes(),
    })
}

/// Fold back to labels: per voxel, logits are dot products with the first
/// `fmap.num_classes` table rows; argmax with ties going to the lowest class.
pub fn unembed_labels(
    fmap: &BevFeatureMap,
    table: &ClassEmbeddingTable,
    depth: usize,
) -> Result<SemanticOccupancyGrid, GridError> {
    let e = table.embed_dim;
    if fmap.embed_dim != e || fmap.depth != depth {
        return Err(GridError::DimMismatch(format!(
            "feature map has {} channels, expected {depth} x {e}",
            fmap.channels()
        )));
    }
    let [h, w] = fmap.dims;
    if fmap.values.len() != h * w * depth * e {
        return Err(GridError::DimMismatch("feature map value count".into()));
    }
    let classes = (fmap.num_classes as usize).min(table.num_classes);
    let labels: Vec<u8> = fmap
        .values
        .chunks_exact(e)
        .map(|feat| {
            let mut best = 0usize;
            let mut best_logit = f64::NEG_INFINITY;
            for c in 0..classes {
                let logit: f64 = feat
                    .iter()
                    .zip(table.row(c))
                    .map(|(&a, &b)| f64::from(a) * f64::from(b))
                    .sum();
                if logit > best_logit {
                    best_logit = logit;
                    best = c;
                }
            }
            best as u8
        })
        .collect();
    SemanticOccupancyGrid::new([h, w, depth], fmap.voxel_size, fmap.origin, fmap.num_classes, labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_grid(rng: &mut ChaCha8Rng, classes: u32) -> SemanticOccupancyGrid {
        let dims = [rng.random_range(1..6), rng.random_range(1..6), rng.random_range(1..5)];
        let n = dims.iter().product();
        let labels = (0..n).map(|_| rng.random_range(0..classes) as u8).collect();
        SemanticOccupancyGrid::new(dims, 0.4, [-1.0, 2.0, -0.5], classes, labels).unwrap()
    }

    #[test]
    fn all_free_grid_tiles_row_zero() {
        let table = ClassEmbeddingTable::signed_axes(17, 8).unwrap();
        let g = SemanticOccupancyGrid::filled([3, 2, 4], 1.0, [0.0; 3], 17, 0).unwrap();
        let f = embed_labels(&g, &table).unwrap();
        assert_eq!(f.channels(), 32);
        for i in 0..3 {
            for j in 0..2 {
                for k in 0..4 {
                    assert_eq!(&f.cell(i, j)[k * 8..(k + 1) * 8], table.row(0));
                }
            }
        }
    }

    #[test]
    fn one_hot_pattern_for_identity_table() {
        let table = ClassEmbeddingTable::orthonormal(8, 8).unwrap();
        let labels: Vec<u8> = (0..8).collect();
        let g = SemanticOccupancyGrid::new([2, 2, 2], 1.0, [0.0; 3], 8, labels).unwrap();
        let f = embed_labels(&g, &table).unwrap();
        // voxel (i, j, k) holds label 4i + 2j + k, so cell (i, j) has a one at
        // channel k*8 + label for k in {0, 1}
        for i in 0..2 {
            for j in 0..2 {
                let cell = f.cell(i, j);
                for k in 0..2 {
                    let label = 4 * i + 2 * j + k;
                    for c in 0..8 {
                        let expect = if c == label { 1.0 } else { 0.0 };
                        assert_eq!(cell[k * 8 + c], expect, "cell ({i},{j}) k={k} c={c}");
                    }
                }
            }
        }
    }

    #[test]
    fn undersized_table_is_rejected() {
        let table = ClassEmbeddingTable::orthonormal(3, 8).unwrap();
        let g = SemanticOccupancyGrid::filled([1, 1, 1], 1.0, [0.0; 3], 17, 0).unwrap();
        assert!(matches!(embed_labels(&g, &table), Err(GridError::DimMismatch(_))));
    }

    #[test]
    fn unknown_embeds_to_zero() {
        let table = ClassEmbeddingTable::signed_axes(17, 8).unwrap();
        let g = SemanticOccupancyGrid::filled([1, 1, 1], 1.0, [0.0; 3], 17, UNKNOWN).unwrap();
        let f = embed_labels(&g, &table).unwrap();
        assert!(f.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn round_trip_with_orthonormal_rows() {
        let table = ClassEmbeddingTable::orthonormal(8, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let g = random_grid(&mut rng, 8);
            let f = embed_labels(&g, &table).unwrap();
            assert_eq!(unembed_labels(&f, &table, g.dims()[2]).unwrap(), g);
        }
    }

    #[test]
    fn round_trip_with_signed_axes() {
        let table = ClassEmbeddingTable::signed_axes(17, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let g = random_grid(&mut rng, 17);
            let f = embed_labels(&g, &table).unwrap();
            assert_eq!(unembed_labels(&f, &table, g.dims()[2]).unwrap(), g);
        }
    }

    #[test]
    fn zero_features_decode_to_free() {
        let table = ClassEmbeddingTable::orthonormal(5, 8).unwrap();
        let f = BevFeatureMap {
            dims: [2, 2],
            depth: 3,
            embed_dim: 8,
            values: vec![0.0; 2 * 2 * 3 * 8],
            voxel_size: 1.0,
            origin: [0.0; 3],
            num_classes: 5,
        };
        let g = unembed_labels(&f, &table, 3).unwrap();
        assert!(g.labels().iter().all(|&l| l == 0));
    }

    #[test]
    fn mean_of_two_rows_breaks_tie_low() {
        let table = ClassEmbeddingTable::orthonormal(5, 8).unwrap();
        let mut values = vec![0.0f32; 8];
        values[1] = 0.5;
        values[2] = 0.5;
        let f = BevFeatureMap {
            dims: [1, 1],
            depth: 1,
            embed_dim: 8,
            values,
            voxel_size: 1.0,
            origin: [0.0; 3],
            num_classes: 5,
        };
        assert_eq!(unembed_labels(&f, &table, 1).unwrap().labels(), &[1]);
    }

    #[test]
    fn unembed_checks_channel_count() {
        let table = ClassEmbeddingTable::orthonormal(5, 8).unwrap();
        let g = SemanticOccupancyGrid::filled([1, 1, 2], 1.0, [0.0; 3], 5, 1).unwrap();
        let f = embed_labels(&g, &table).unwrap();
        assert!(matches!(unembed_labels(&f, &table, 3), Err(GridError::DimMismatch(_))));
    }

    #[test]
    fn signed_axes_capacity() {
        assert!(ClassEmbeddingTable::signed_axes(18, 8).is_err());
        let t = ClassEmbeddingTable::signed_axes(17, 8).unwrap();
        for a in 0..17 {
            let self_dot: f32 = t.row(a).iter().map(|v| v * v).sum();
            assert!((self_dot - 1.0).abs() < 1e-6);
            for b in 0..17 {
                if a != b {
                    let dot: f32 = t.row(a).iter().zip(t.row(b)).map(|(x, y)| x * y).sum();
                    assert!(dot < self_dot - 0.5);
                }
            }
        }
    }
}
