//! Losses and evaluation metrics: IoU/mIoU, cross-entropy, Lovász-softmax,
//! KL, masked and noise-prediction MSE, the LiDAR composite loss, BEV
//! histograms, MMD and JSD.

mod dist;

pub use dist::{jsd, median_bandwidth, mmd, transport_distance, BevHistogram, HistogramSpec};

use thiserror::Error;

use crate::voxgrid::{is_occupied_label, SemanticOccupancyGrid, UNKNOWN};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("every element is masked out")]
    AllMasked,
    #[error("not normalized: {0}")]
    NotNormalized(String),
    #[error("histogram bins or ranges differ")]
    BinMismatch,
    #[error("invalid input: {0}")]
    Invalid(String),
}

/// Per-class true positive, false positive and false negative counts, plus
/// the same counts for occupied-vs-free.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionTally {
    pub num_classes: usize,
    pub tp: Vec<u64>,
    pub fp: Vec<u64>,
    pub fn_: Vec<u64>,
    pub occupied: [u64; 3],
}

impl ConfusionTally {
    pub fn new(num_classes: usize) -> Self {
        Self { num_classes, tp: vec![0; num_classes], fp: vec![0; num_classes], fn_: vec![0; num_classes], occupied: [0; 3] }
    }

    /// Count one voxel. `gt == 255` is skipped; a prediction of 255 matches
    /// no class and counts as not occupied.
    pub fn add(&mut self, pred: u8, gt: u8) {
        if gt == UNKNOWN {
            return;
        }
        let (p, g) = (pred as usize, gt as usize);
        if pred == gt {
            self.tp[g] += 1;
        } else {
            if pred != UNKNOWN && p < self.num_classes {
                self.fp[p] += 1;
            }
            if g < self.num_classes {
                self.fn_[g] += 1;
            }
        }
        match (is_occupied_label(pred), is_occupied_label(gt)) {
            (true, true) => self.occupied[0] += 1,
            (true, false) => self.occupied[1] += 1,
            (false, true) => self.occupied[2] += 1,
            (false, false) => {}
        }
    }

    pub fn merge(&mut self, other: &ConfusionTally) {
        if other.num_classes > self.num_classes {
            self.tp.resize(other.num_classes, 0);
            self.fp.resize(other.num_classes, 0);
            self.fn_.resize(other.num_classes, 0);
            self.num_classes = other.num_classes;
        }
        for c in 0..other.num_classes {
            self.tp[c] += other.tp[c];
            self.fp[c] += other.fp[c];
            self.fn_[c] += other.fn_[c];
        }
        for k in 0..3 {
            self.occupied[k] += other.occupied[k];
        }
    }

    pub fn report(&self) -> IouReport {
        let ratio = |tp: u64, fp: u64, fn_: u64| {
            let denom = tp + fp + fn_;
            (denom > 0).then(|| tp as f64 / denom as f64)
        };
        let per_class: Vec<Option<f64>> = (0..self.num_classes).map(|c| ratio(self.tp[c], self.fp[c], self.fn_[c])).collect();
        let semantic: Vec<f64> = per_class.iter().skip(1).flatten().copied().collect();
        let miou = (!semantic.is_empty()).then(|| semantic.iter().sum::<f64>() / semantic.len() as f64);
        let [tp, fp, fn_] = self.occupied;
        IouReport { per_class, miou, iou: ratio(tp, fp, fn_) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IouReport {
    /// IoU per class, `None` for classes absent from both grids.
    pub per_class: Vec<Option<f64>>,
    /// Mean over the defined semantic classes, free class excluded.
    pub miou: Option<f64>,
    /// Occupied-vs-free IoU.
    pub iou: Option<f64>,
}

pub fn iou_miou(pred: &SemanticOccupancyGrid, gt: &SemanticOccupancyGrid) -> Result<IouReport, MetricError> {
    if pred.dims() != gt.dims() {
        return Err(MetricError::DimMismatch(format!("pred {:?} vs gt {:?}", pred.dims(), gt.dims())));
    }
    let mut tally = ConfusionTally::new(pred.num_classes().max(gt.num_classes()) as usize);
    for (&p, &g) in pred.labels().iter().zip(gt.labels()) {
        tally.add(p, g);
    }
    Ok(tally.report())
}

fn check_rows(values: &[f64], classes: usize, labels: &[u8]) -> Result<(), MetricError> {
    if classes == 0 || values.len() != labels.len() * classes {
        return Err(MetricError::ShapeMismatch(format!(
            "{} values for {} voxels of {classes} classes",
            values.len(),
            labels.len()
        )));
    }
    if let Some(&l) = labels.iter().find(|&&l| l != UNKNOWN && l as usize >= classes) {
        return Err(MetricError::Invalid(format!("label {l} outside {classes} classes")));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(MetricError::Invalid("values must be finite".into()));
    }
    Ok(())
}

/// Mean negative log-softmax at the true class over voxels not labelled 255.
/// `logits` is voxel-major with `classes` values per voxel.
pub fn cross_entropy(logits: &[f64], classes: usize, labels: &[u8]) -> Result<f64, MetricError> {
    check_rows(logits, classes, labels)?;
    let mut total = 0.0;
    let mut count = 0usize;
    for (row, &label) in logits.chunks_exact(classes).zip(labels) {
        if label == UNKNOWN {
            continue;
        }
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        total += lse - row[label as usize];
        count += 1;
    }
    if count == 0 {
        return Err(MetricError::AllMasked);
    }
    Ok(total / count as f64)
}

/// Lovász hinge weights for errors sorted in descending order: the
/// successive differences of the Jaccard loss.
fn lovasz_grad(gt_sorted: &[bool]) -> Vec<f64> {
    let gts = gt_sorted.iter().filter(|&&g| g).count() as f64;
    let mut cum_fg = 0.0;
    let mut cum_bg = 0.0;
    let mut prev = 0.0;
    gt_sorted
        .iter()
        .map(|&g| {
            if g {
                cum_fg += 1.0;
            } else {
                cum_bg += 1.0;
            }
            let jaccard = 1.0 - (gts - cum_fg) / (gts + cum_bg);
            let w = jaccard - prev;
            prev = jaccard;
            w
        })
        .collect()
}

/// Lovász-softmax averaged over the classes present in `labels`. Voxels
/// labelled 255 are ignored.
pub fn lovasz_softmax(probs: &[f64], classes: usize, labels: &[u8]) -> Result<f64, MetricError> {
    check_rows(probs, classes, labels)?;
    for (n, row) in probs.chunks_exact(classes).enumerate() {
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > 1e-6 || row.iter().any(|&p| p < 0.0) {
            return Err(MetricError::NotNormalized(format!("voxel {n} sums to {s}")));
        }
    }
    let kept: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] != UNKNOWN).collect();
    if kept.is_empty() {
        return Err(MetricError::AllMasked);
    }
    let mut losses = Vec::new();
    for c in 0..classes {
        if !kept.iter().any(|&i| labels[i] as usize == c) {
            continue;
        }
        let mut errs: Vec<(f64, bool)> = kept
            .iter()
            .map(|&i| {
                let fg = labels[i] as usize == c;
                let p = probs[i * classes + c];
                (if fg { 1.0 - p } else { p }, fg)
            })
            .collect();
        // stable, so ties keep voxel order
        errs.sort_by(|a, b| b.0.total_cmp(&a.0));
        let fg: Vec<bool> = errs.iter().map(|e| e.1).collect();
        losses.push(errs.iter().zip(lovasz_grad(&fg)).map(|(e, g)| e.0 * g).sum::<f64>());
    }
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// `0.5 * sum(mu^2 + exp(logvar) - logvar - 1)` per row of width `dim`,
/// averaged over rows.
pub fn kl_diag_gauss(mu: &[f64], logvar: &[f64], dim: usize) -> Result<f64, MetricError> {
    if dim == 0 || mu.len() != logvar.len() || mu.len() % dim != 0 || mu.is_empty() {
        return Err(MetricError::ShapeMismatch(format!("{} means, {} log-variances, width {dim}", mu.len(), logvar.len())));
    }
    let total: f64 = mu.iter().zip(logvar).map(|(m, lv)| 0.5 * (m * m + lv.exp() - lv - 1.0)).sum();
    Ok(total / (mu.len() / dim) as f64)
}

/// Squared error summed within frames whose mask is 0, averaged over those
/// frames.
pub fn masked_mse(pred: &[f64], target: &[f64], mask: &[u8]) -> Result<f64, MetricError> {
    if pred.len() != target.len() || mask.is_empty() || pred.len() % mask.len() != 0 {
        return Err(MetricError::ShapeMismatch(format!(
            "{} predictions, {} targets, {} frames",
            pred.len(),
            target.len(),
            mask.len()
        )));
    }
    if mask.iter().any(|&m| m > 1) {
        return Err(MetricError::Invalid("mask values must be 0 or 1".into()));
    }
    let n = pred.len() / mask.len();
    let kept = mask.iter().filter(|&&m| m == 0).count();
    if kept == 0 {
        return Err(MetricError::AllMasked);
    }
    let total: f64 = mask
        .iter()
        .enumerate()
        .filter(|(_, &m)| m == 0)
        .map(|(f, _)| squared_norm(&pred[f * n..(f + 1) * n], &target[f * n..(f + 1) * n]))
        .sum();
    Ok(total / kept as f64)
}

fn squared_norm(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Mean over `frames` of the per-frame squared error.
pub fn noise_pred_loss(eps_hat: &[f64], eps: &[f64], frames: usize) -> Result<f64, MetricError> {
    if eps_hat.len() != eps.len() || frames == 0 || eps.len() % frames != 0 {
        return Err(MetricError::ShapeMismatch(format!("{} vs {} values over {frames} frames", eps_hat.len(), eps.len())));
    }
    Ok(squared_norm(eps_hat, eps) / frames as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VaeLossWeights {
    pub lovasz: f64,
    pub kl: f64,
}

impl Default for VaeLossWeights {
    fn default() -> Self {
        Self { lovasz: 1.0, kl: 1e-4 }
    }
}

pub fn vae_loss(ce: f64, lovasz: f64, kl: f64, w: VaeLossWeights) -> f64 {
    ce + w.lovasz * lovasz + w.kl * kl
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LidarLossWeights {
    pub intensity: f64,
    pub drop: f64,
}

impl Default for LidarLossWeights {
    fn default() -> Self {
        Self { intensity: 1.0, drop: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LidarLoss {
    pub total: f64,
    pub depth: f64,
    pub intensity: f64,
    pub drop: f64,
}

/// Per-ray predictions and targets for [`lidar_loss`].
#[derive(Debug, Clone, Copy)]
pub struct LidarLossInput<'a> {
    pub depth_pred: &'a [f64],
    pub depth_gt: &'a [f64],
    pub intensity_pred: &'a [f64],
    pub intensity_gt: &'a [f64],
    pub drop_logit: &'a [f64],
    pub drop_gt: &'a [u8],
}

/// Mean L1 depth, mean L1 intensity and mean binary cross-entropy on drop
/// logits.
pub fn lidar_loss(input: &LidarLossInput<'_>, w: LidarLossWeights) -> Result<LidarLoss, MetricError> {
    let n = input.depth_pred.len();
    let lens = [
        input.depth_gt.len(),
        input.intensity_pred.len(),
        input.intensity_gt.len(),
        input.drop_logit.len(),
        input.drop_gt.len(),
    ];
    if n == 0 || lens.iter().any(|&l| l != n) {
        return Err(MetricError::ShapeMismatch(format!("ray counts {n} and {lens:?}")));
    }
    if input.drop_gt.iter().any(|&f| f > 1) {
        return Err(MetricError::Invalid("drop flags must be 0 or 1".into()));
    }
    let l1 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / n as f64;
    let depth = l1(input.depth_pred, input.depth_gt);
    let intensity = l1(input.intensity_pred, input.intensity_gt);
    let drop = input
        .drop_logit
        .iter()
        .zip(input.drop_gt)
        .map(|(&x, &y)| x.max(0.0) - x * f64::from(y) + (-x.abs()).exp().ln_1p())
        .sum::<f64>()
        / n as f64;
    Ok(LidarLoss { total: depth + w.intensity * intensity + w.drop * drop, depth, intensity, drop })
}
