use super::MetricError;

/// Bin counts and metric extent of a BEV histogram.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistogramSpec {
    pub bins: [usize; 2],
    pub x_range: [f64; 2],
    pub y_range: [f64; 2],
}

impl Default for HistogramSpec {
    fn default() -> Self {
        Self { bins: [100, 100], x_range: [-50.0, 50.0], y_range: [-50.0, 50.0] }
    }
}

impl HistogramSpec {
    pub fn validate(&self) -> Result<(), MetricError> {
        let ok = |r: [f64; 2]| r[0].is_finite() && r[1].is_finite() && r[0] < r[1];
        if self.bins[0] == 0 || self.bins[1] == 0 || !ok(self.x_range) || !ok(self.y_range) {
            return Err(MetricError::Invalid(format!("degenerate histogram spec {self:?}")));
        }
        Ok(())
    }

    pub fn bin_width(&self) -> [f64; 2] {
        [
            (self.x_range[1] - self.x_range[0]) / self.bins[0] as f64,
            (self.y_range[1] - self.y_range[0]) / self.bins[1] as f64,
        ]
    }

    /// Bin of `v` along an axis; the upper edge belongs to the last bin.
    fn axis_bin(v: f64, range: [f64; 2], bins: usize) -> Option<usize> {
        if !(v >= range[0] && v <= range[1]) {
            return None;
        }
        let i = ((v - range[0]) / (range[1] - range[0]) * bins as f64).floor() as usize;
        Some(i.min(bins - 1))
    }

    pub fn bin_of(&self, x: f64, y: f64) -> Option<[usize; 2]> {
        Some([
            Self::axis_bin(x, self.x_range, self.bins[0])?,
            Self::axis_bin(y, self.y_range, self.bins[1])?,
        ])
    }

    pub fn bin_center(&self, ix: usize, iy: usize) -> [f64; 2] {
        let w = self.bin_width();
        [self.x_range[0] + (ix as f64 + 0.5) * w[0], self.y_range[0] + (iy as f64 + 0.5) * w[1]]
    }
}

/// Top-down point counts, `x` bin major.
#[derive(Debug, Clone, PartialEq)]
pub struct BevHistogram {
    pub spec: HistogramSpec,
    pub counts: Vec<u64>,
    pub discarded: u64,
}

impl BevHistogram {
    /// Bin the `(x, y)` components of `points`; points outside the range
    /// are counted as discarded.
    pub fn build<I>(points: I, spec: HistogramSpec) -> Result<Self, MetricError>
    where
        I: IntoIterator<Item = [f64; 2]>,
    {
        spec.validate()?;
        let mut counts = vec![0u64; spec.bins[0] * spec.bins[1]];
        let mut discarded = 0;
        for [x, y] in points {
            match spec.bin_of(x, y) {
                Some([ix, iy]) => counts[ix * spec.bins[1] + iy] += 1,
                None => discarded += 1,
            }
        }
        Ok(Self { spec, counts, discarded })
    }

    pub fn count(&self, ix: usize, iy: usize) -> u64 {
        self.counts[ix * self.spec.bins[1] + iy]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Counts divided by their total; all zeros for an empty histogram.
    pub fn mass(&self) -> Vec<f64> {
        let t = self.total();
        if t == 0 {
            return vec![0.0; self.counts.len()];
        }
        self.counts.iter().map(|&c| c as f64 / t as f64).collect()
    }

    fn marginals(&self) -> [Vec<f64>; 2] {
        let [nx, ny] = self.spec.bins;
        let m = self.mass();
        let mut mx = vec![0.0; nx];
        let mut my = vec![0.0; ny];
        for ix in 0..nx {
            for iy in 0..ny {
                mx[ix] += m[ix * ny + iy];
                my[iy] += m[ix * ny + iy];
            }
        }
        [mx, my]
    }

    pub fn jsd(&self, other: &BevHistogram) -> Result<f64, MetricError> {
        if self.spec != other.spec {
            return Err(MetricError::BinMismatch);
        }
        jsd(&self.mass(), &other.mass())
    }
}

/// Sum over both axes of the 1-D Wasserstein-1 distance between marginal
/// masses, in metres. For two single-bin impulses this is the L1 distance
/// between their bin centres.
pub fn transport_distance(a: &BevHistogram, b: &BevHistogram) -> Result<f64, MetricError> {
    if a.spec != b.spec {
        return Err(MetricError::BinMismatch);
    }
    let w = a.spec.bin_width();
    let (ma, mb) = (a.marginals(), b.marginals());
    let mut d = 0.0;
    for axis in 0..2 {
        let mut cdf = 0.0;
        for (pa, pb) in ma[axis].iter().zip(&mb[axis]) {
            cdf += pa - pb;
            d += cdf.abs() * w[axis];
        }
    }
    Ok(d)
}

fn check_sets(a: &[BevHistogram], b: &[BevHistogram]) -> Result<(), MetricError> {
    if a.is_empty() || b.is_empty() {
        return Err(MetricError::Invalid("histogram sets must be non-empty".into()));
    }
    let spec = a[0].spec;
    if a.iter().chain(b).any(|h| h.spec != spec) {
        return Err(MetricError::BinMismatch);
    }
    Ok(())
}

/// Median of the pairwise transport distances over the union of both sets.
/// Falls back to the mean bin width when every distance is zero.
pub fn median_bandwidth(a: &[BevHistogram], b: &[BevHistogram]) -> Result<f64, MetricError> {
    check_sets(a, b)?;
    let all: Vec<&BevHistogram> = a.iter().chain(b).collect();
    let mut d = Vec::new();
    for i in 0..all.len() {
        for j in i + 1..all.len() {
            d.push(transport_distance(all[i], all[j])?);
        }
    }
    d.sort_by(f64::total_cmp);
    let median = match d.len() {
        0 => 0.0,
        n if n % 2 == 1 => d[n / 2],
        n => 0.5 * (d[n / 2 - 1] + d[n / 2]),
    };
    let w = a[0].spec.bin_width();
    Ok(if median > 0.0 { median } else { 0.5 * (w[0] + w[1]) })
}

/// Squared MMD with kernel `exp(-d^2 / (2 sigma^2))` over transport
/// distances. Within-set means skip the diagonal; a singleton set uses its
/// only self-similarity. The result is clamped at 0.
pub fn mmd(a: &[BevHistogram], b: &[BevHistogram], bandwidth: f64) -> Result<f64, MetricError> {
    check_sets(a, b)?;
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(MetricError::Invalid(format!("bandwidth {bandwidth} must be positive")));
    }
    let k = |x: &BevHistogram, y: &BevHistogram| -> Result<f64, MetricError> {
        let d = transport_distance(x, y)?;
        Ok((-d * d / (2.0 * bandwidth * bandwidth)).exp())
    };
    let within = |s: &[BevHistogram]| -> Result<f64, MetricError> {
        if s.len() == 1 {
            return k(&s[0], &s[0]);
        }
        let mut sum = 0.0;
        for i in 0..s.len() {
            for j in 0..s.len() {
                if i != j {
                    sum += k(&s[i], &s[j])?;
                }
            }
        }
        Ok(sum / (s.len() * (s.len() - 1)) as f64)
    };
    let mut cross = 0.0;
    for x in a {
        for y in b {
            cross += k(x, y)?;
        }
    }
    cross /= (a.len() * b.len()) as f64;
    Ok((within(a)? + within(b)? - 2.0 * cross).max(0.0))
}

/// Jensen-Shannon divergence in nats between two normalized mass vectors.
pub fn jsd(p: &[f64], q: &[f64]) -> Result<f64, MetricError> {
    if p.len() != q.len() {
        return Err(MetricError::BinMismatch);
    }
    for (name, v) in [("P", p), ("Q", q)] {
        let s: f64 = v.iter().sum();
        if (s - 1.0).abs() > 1e-9 || v.iter().any(|&x| !(x >= 0.0)) {
            return Err(MetricError::NotNormalized(format!("{name} sums to {s}")));
        }
    }
    let kl_half = |x: f64, m: f64| if x > 0.0 { x * (x / m).ln() } else { 0.0 };
    let mut total = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        let m = 0.5 * (a + b);
        total += 0.5 * kl_half(a, m) + 0.5 * kl_half(b, m);
    }
    Ok(total.clamp(0.0, std::f64::consts::LN_2))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> HistogramSpec {
        HistogramSpec { bins: [4, 2], x_range: [0.0, 4.0], y_range: [-1.0, 1.0] }
    }

    #[test]
    fn histogram_binning() {
        let empty = BevHistogram::build(std::iter::empty(), HistogramSpec::default()).unwrap();
        assert_eq!(empty.total(), 0);
        assert!(empty.mass().iter().all(|&m| m == 0.0));

        let center = BevHistogram::build([[0.0, 0.0]], HistogramSpec::default()).unwrap();
        assert_eq!(center.count(50, 50), 1);
        let odd = HistogramSpec { bins: [3, 3], x_range: [-1.5, 1.5], y_range: [-1.5, 1.5] };
        assert_eq!(BevHistogram::build([[0.0, 0.0]], odd).unwrap().count(1, 1), 1);

        let pts = [[0.0, -1.0], [4.0, 1.0], [3.999, 0.0], [4.01, 0.0], [1.0, -1.5], [2.5, 0.5]];
        let h = BevHistogram::build(pts, small()).unwrap();
        assert_eq!(h.count(0, 0), 1);
        assert_eq!(h.count(3, 1), 2);
        assert_eq!(h.count(2, 1), 1);
        assert_eq!(h.total() + h.discarded, pts.len() as u64);
        assert!((h.mass().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(BevHistogram::build([[0.0, 0.0]], HistogramSpec { bins: [0, 1], ..small() }).is_err());
    }

    fn impulse(ix: usize, iy: usize) -> BevHistogram {
        let spec = small();
        let c = spec.bin_center(ix, iy);
        BevHistogram::build([c], spec).unwrap()
    }

    #[test]
    fn mmd_of_singleton_impulses() {
        let (a, b) = (impulse(1, 0), impulse(2, 0));
        let d = 1.0f64;
        for sigma in [0.5, 1.0, 3.0] {
            let direct = 2.0 * (1.0 - (-d * d / (2.0 * sigma * sigma)).exp());
            let v = mmd(std::slice::from_ref(&a), std::slice::from_ref(&b), sigma).unwrap();
            assert!((v - direct).abs() < 1e-12);
        }
        // diagonal neighbours are one x bin and one y bin apart
        assert!((transport_distance(&impulse(0, 0), &impulse(1, 1)).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn mmd_axioms() {
        let set_a = vec![impulse(0, 0), impulse(0, 1)];
        let set_b = vec![impulse(3, 1), impulse(3, 0)];
        assert!(mmd(&set_a, &set_a, 1.0).unwrap().abs() < 1e-9);
        let ab = mmd(&set_a, &set_b, 0.5).unwrap();
        assert_eq!(ab, mmd(&set_b, &set_a, 0.5).unwrap());
        assert!(ab > 0.0);
        let other = BevHistogram::build([[0.0, 0.0]], HistogramSpec::default()).unwrap();
        assert_eq!(mmd(&set_a, &[other], 1.0), Err(MetricError::BinMismatch));
        assert!(mmd(&set_a, &[], 1.0).is_err());
        assert!(median_bandwidth(&set_a, &set_b).unwrap() > 0.0);
    }

    #[test]
    fn jsd_examples() {
        assert_eq!(jsd(&[0.25, 0.75], &[0.25, 0.75]).unwrap(), 0.0);
        assert!((jsd(&[1.0, 0.0], &[0.0, 1.0]).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        let direct = 0.5 * (0.5 * (0.5f64 / 0.75).ln() + 0.5 * (0.5f64 / 0.25).ln()) + 0.5 * (1.0f64 / 0.75).ln();
        let v = jsd(&[0.5, 0.5], &[1.0, 0.0]).unwrap();
        assert!((v - direct).abs() < 1e-15);
        assert!((v - 0.2158).abs() < 1e-4);
        assert!(matches!(jsd(&[0.5, 0.4], &[1.0, 0.0]), Err(MetricError::NotNormalized(_))));
        assert_eq!(jsd(&[1.0], &[1.0, 0.0]), Err(MetricError::BinMismatch));
        assert!(impulse(0, 0).jsd(&BevHistogram::build([[0.0, 0.0]], HistogramSpec::default()).unwrap()).is_err());
    }
}
