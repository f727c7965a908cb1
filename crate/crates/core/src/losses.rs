//! Training losses with analytic gradients.

use rayon::prelude::*;

use crate::anchors::{AnchorLabel, EncodedTargets, RegressionTarget};
use crate::error::{Error, Result};
use crate::feature_map::FeatureMap;

/// Probabilities are kept this far from 0 and 1 before taking logs.
pub const PROB_EPS: f64 = 1e-7;

/// A loss value with its gradient with respect to the differentiated input.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub gradient: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FocalConfig {
    pub gamma: f64,
    pub balance: f64,
}

impl Default for FocalConfig {
    fn default() -> Self {
        Self { gamma: 2.0, balance: 0.25 }
    }
}

/// Focal loss of one probability. The gradient is with respect to `p`,
/// evaluated at the clamped probability.
pub fn focal_loss(p: f64, target: bool, gamma: f64, balance: f64) -> LossValue {
    let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    let (pt, sign) = if target { (p, 1.0) } else { (1.0 - p, -1.0) };
    let q = 1.0 - pt;
    let ln = pt.ln();
    let value = -balance * q.powf(gamma) * ln;
    let dq = if gamma == 0.0 { 0.0 } else { gamma * q.powf(gamma - 1.0) };
    let d_pt = -balance * (-dq * ln + q.powf(gamma) / pt);
    LossValue { value, gradient: vec![sign * d_pt] }
}

/// Huber-style smoothed L1 of a residual; gradient with respect to the residual.
pub fn smooth_l1(residual: f64, beta: f64) -> Result<LossValue> {
    if !(beta > 0.0) {
        return Err(Error::InvalidParameter(format!("smooth-L1 beta {beta} must be positive")));
    }
    let a = residual.abs();
    Ok(if a < beta {
        LossValue { value: 0.5 * residual * residual / beta, gradient: vec![residual / beta] }
    } else {
        LossValue { value: a - 0.5 * beta, gradient: vec![residual.signum()] }
    })
}

/// Sorted bin edges for multi-bin classification of a scalar.
#[derive(Debug, Clone, PartialEq)]
pub struct BinEdges(Vec<f64>);

impl BinEdges {
    pub fn new(edges: Vec<f64>) -> Result<Self> {
        if edges.len() < 3 {
            return Err(Error::InvalidParameter(format!("{} edges give fewer than two bins", edges.len())));
        }
        if edges.iter().any(|e| !e.is_finite()) || edges.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidParameter("bin edges must be finite and strictly increasing".into()));
        }
        Ok(Self(edges))
    }

    /// `bins` equal-width bins spanning `[min, max]`.
    pub fn uniform(min: f64, max: f64, bins: usize) -> Result<Self> {
        if bins < 2 {
            return Err(Error::InvalidParameter("need at least two bins".into()));
        }
        let (lo, hi) = if max > min { (min, max) } else { (min - 0.5, min + 0.5) };
        let w = (hi - lo) / bins as f64;
        let mut edges: Vec<f64> = (0..bins).map(|i| lo + w * i as f64).collect();
        edges.push(hi);
        Self::new(edges)
    }

    pub fn edges(&self) -> &[f64] {
        &self.0
    }

    pub fn bins(&self) -> usize {
        self.0.len() - 1
    }

    /// Bin holding `value`; values outside the edges go to the outer bins.
    pub fn bin_of(&self, value: f64) -> usize {
        let inner = &self.0[1..self.0.len() - 1];
        inner.partition_point(|e| *e <= value)
    }

    pub fn center(&self, bin: usize) -> f64 {
        0.5 * (self.0[bin] + self.0[bin + 1])
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// Softmax cross-entropy against the bin containing `true_value`; gradient
/// with respect to the logits.
pub fn multibin_ce(logits: &[f64], true_value: f64, edges: &BinEdges) -> Result<LossValue> {
    if logits.len() != edges.bins() {
        return Err(Error::ShapeMismatch(format!("{} logits for {} bins", logits.len(), edges.bins())));
    }
    let target = edges.bin_of(true_value);
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
    let mut gradient = softmax(logits);
    gradient[target] -= 1.0;
    Ok(LossValue { value: lse - logits[target], gradient })
}

/// Center of the highest-scoring bin; the first one wins ties.
pub fn multibin_decode(logits: &[f64], edges: &BinEdges) -> Result<f64> {
    if logits.len() != edges.bins() {
        return Err(Error::ShapeMismatch(format!("{} logits for {} bins", logits.len(), edges.bins())));
    }
    let mut best = 0;
    for (i, l) in logits.iter().enumerate() {
        if *l > logits[best] {
            best = i;
        }
    }
    Ok(edges.center(best))
}

/// Fixed-shape pairwise summation, so sums do not depend on thread count.
fn tree_sum(xs: &[f64]) -> f64 {
    const LEAF: usize = 1024;
    if xs.len() <= LEAF {
        return xs.iter().sum();
    }
    let (a, b) = xs.split_at(xs.len() / 2);
    let (x, y) = rayon::join(|| tree_sum(a), || tree_sum(b));
    x + y
}

/// Scale-invariant log-depth loss over the valid pixels.
pub fn si_loss(pred_log: &[f64], gt_log: &[f64], valid: &[bool], lambda: f64) -> Result<LossValue> {
    if pred_log.len() != gt_log.len() || pred_log.len() != valid.len() {
        return Err(Error::ShapeMismatch(format!(
            "prediction {}, target {}, mask {}",
            pred_log.len(),
            gt_log.len(),
            valid.len()
        )));
    }
    let d: Vec<f64> = pred_log
        .par_iter()
        .zip(gt_log)
        .zip(valid)
        .map(|((p, g), v)| if *v { p - g } else { 0.0 })
        .collect();
    let n = valid.iter().filter(|v| **v).count();
    if n == 0 {
        return Err(Error::Empty("no valid depth pixels".into()));
    }
    let n = n as f64;
    let sum = tree_sum(&d);
    let sq: Vec<f64> = d.par_iter().map(|x| x * x).collect();
    let value = tree_sum(&sq) / n - lambda * sum * sum / (n * n);
    let shift = 2.0 * lambda * sum / (n * n);
    let gradient = d
        .par_iter()
        .zip(valid)
        .map(|(x, v)| if *v { 2.0 * x / n - shift } else { 0.0 })
        .collect();
    Ok(LossValue { value, gradient })
}

/// Edge-aware smoothness of a one-channel depth grid, weighted by the image
/// gradient. Gradient with respect to the depth values.
pub fn smoothness_loss(depth: &FeatureMap, image: &FeatureMap) -> Result<LossValue> {
    let (dc, rows, cols) = depth.shape();
    if dc != 1 || image.rows() != rows || image.cols() != cols {
        return Err(Error::ShapeMismatch(format!("depth {:?} with image {:?}", depth.shape(), image.shape())));
    }
    let z = depth.plane(0);
    let n = (rows * cols) as f64;
    let edge = |r0: usize, c0: usize, r1: usize, c1: usize| -> f64 {
        let g: f64 = (0..image.channels()).map(|ch| (image.get(ch, r1, c1) - image.get(ch, r0, c0)).abs()).sum();
        (-g).exp()
    };
    // Per-pixel terms and their (sign * weight) factors, computed row-parallel.
    let terms: Vec<(f64, f64, f64)> = (0..rows * cols)
        .into_par_iter()
        .map(|i| {
            let (r, c) = (i / cols, i % cols);
            let mut value = 0.0;
            let (mut sx, mut sy) = (0.0, 0.0);
            if c + 1 < cols {
                let w = edge(r, c, r, c + 1);
                let dz = z[i + 1] - z[i];
                value += dz.abs() * w;
                sx = dz.signum() * w * (dz != 0.0) as u8 as f64;
            }
            if r + 1 < rows {
                let w = edge(r, c, r + 1, c);
                let dz = z[i + cols] - z[i];
                value += dz.abs() * w;
                sy = dz.signum() * w * (dz != 0.0) as u8 as f64;
            }
            (value, sx, sy)
        })
        .collect();
    let values: Vec<f64> = terms.iter().map(|t| t.0).collect();
    let value = tree_sum(&values) / n;
    let gradient = (0..rows * cols)
        .into_par_iter()
        .map(|i| {
            let (r, c) = (i / cols, i % cols);
            let mut g = -terms[i].1 - terms[i].2;
            if c > 0 {
                g += terms[i - 1].1;
            }
            if r > 0 {
                g += terms[i - cols].2;
            }
            g / n
        })
        .collect();
    Ok(LossValue { value, gradient })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthLossConfig {
    pub lambda: f64,
    pub alpha_smooth: f64,
    pub scales: usize,
}

impl Default for DepthLossConfig {
    fn default() -> Self {
        Self { lambda: 0.3, alpha_smooth: 0.3, scales: 1 }
    }
}

impl DepthLossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::InvalidParameter(format!("lambda {} outside [0, 1]", self.lambda)));
        }
        if !(self.alpha_smooth >= 0.0) {
            return Err(Error::InvalidParameter(format!("smoothness weight {} is negative", self.alpha_smooth)));
        }
        if self.scales == 0 {
            return Err(Error::InvalidParameter("at least one scale".into()));
        }
        Ok(())
    }
}

/// One supervision scale of the depth head.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthScale {
    /// Predicted log depth, one channel.
    pub pred_log: FeatureMap,
    pub gt_log: FeatureMap,
    pub valid: Vec<bool>,
    pub image: FeatureMap,
}

/// Sum over scales of the SI loss plus weighted smoothness of `exp(pred_log)`.
/// The gradient is with respect to every scale's `pred_log`, concatenated in
/// scale order.
pub fn total_depth_loss(scales: &[DepthScale], cfg: &DepthLossConfig) -> Result<LossValue> {
    cfg.validate()?;
    if scales.len() != cfg.scales {
        return Err(Error::ShapeMismatch(format!("{} scales given, {} configured", scales.len(), cfg.scales)));
    }
    let mut value = 0.0;
    let mut gradient = Vec::new();
    for s in scales {
        if s.pred_log.shape() != s.gt_log.shape() {
            return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", s.pred_log.shape(), s.gt_log.shape())));
        }
        let si = si_loss(s.pred_log.as_slice(), s.gt_log.as_slice(), &s.valid, cfg.lambda)?;
        let mut scale_value = si.value;
        let mut g = si.gradient;
        if cfg.alpha_smooth != 0.0 {
            let (c, r, w) = s.pred_log.shape();
            let z = FeatureMap::from_vec(c, r, w, s.pred_log.as_slice().iter().map(|x| x.exp()).collect())?;
            let sm = smoothness_loss(&z, &s.image)?;
            scale_value += cfg.alpha_smooth * sm.value;
            for ((gi, gs), zi) in g.iter_mut().zip(&sm.gradient).zip(z.as_slice()) {
                *gi += cfg.alpha_smooth * gs * zi;
            }
        }
        value += scale_value;
        gradient.extend(g);
    }
    Ok(LossValue { value, gradient })
}

/// What happens to a loss component below the clip threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ClipMode {
    /// Raise it to the threshold.
    #[default]
    Floor,
    /// Drop it entirely.
    Zero,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionLossConfig {
    pub focal: FocalConfig,
    pub beta: f64,
    pub clip_floor: f64,
    pub clip_mode: ClipMode,
}

impl Default for DetectionLossConfig {
    fn default() -> Self {
        Self { focal: FocalConfig::default(), beta: 1.0, clip_floor: 1e-3, clip_mode: ClipMode::Floor }
    }
}

/// Raw head outputs for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionOutputs {
    /// Per anchor, per class probability; anchor-major.
    pub class_probs: Vec<f64>,
    pub num_classes: usize,
    /// Per anchor regression.
    pub regression: Vec<RegressionTarget>,
    /// Per anchor, per dimension `(h, w, l)`, per bin logit; anchor-major.
    pub dim_logits: Vec<f64>,
    pub bins: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionGradients {
    pub class_probs: Vec<f64>,
    pub regression: Vec<RegressionTarget>,
    pub dim_logits: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionLoss {
    pub value: f64,
    pub classification: f64,
    pub regression: f64,
    pub dimensions: f64,
    pub gradient: DetectionGradients,
}

fn clip(value: f64, floor: f64, mode: ClipMode) -> (f64, bool) {
    if value >= floor {
        return (value, true);
    }
    match mode {
        ClipMode::Floor => (floor, false),
        ClipMode::Zero => (0.0, false),
    }
}

/// Classification plus regression plus dimension loss, each averaged over
/// foreground anchors and clipped from below before summation.
///
/// `dim_bins[class]` holds the `(h, w, l)` bin edges of each class.
pub fn detection_loss(
    outputs: &DetectionOutputs,
    targets: &EncodedTargets,
    dim_bins: &[[BinEdges; 3]],
    cfg: &DetectionLossConfig,
) -> Result<DetectionLoss> {
    let anchors = targets.labels.len();
    let k = outputs.num_classes;
    if outputs.class_probs.len() != anchors * k
        || outputs.regression.len() != anchors
        || outputs.dim_logits.len() != anchors * 3 * outputs.bins
    {
        return Err(Error::ShapeMismatch(format!(
            "outputs for {} anchors x {k} classes x {} bins do not match {anchors} anchors",
            outputs.regression.len(),
            outputs.bins
        )));
    }
    if dim_bins.len() < k || dim_bins.iter().flatten().any(|b| b.bins() != outputs.bins) {
        return Err(Error::ShapeMismatch("dimension bins do not match the head".into()));
    }
    let mut class_of = vec![None; anchors];
    for f in &targets.foreground {
        if f.class >= k {
            return Err(Error::ShapeMismatch(format!("class {} with {k} class outputs", f.class)));
        }
        class_of[f.anchor] = Some(f.class);
    }
    let norm = targets.foreground.len().max(1) as f64;

    let mut cls_grad = vec![0.0; anchors * k];
    let cls_terms: Vec<f64> = (0..anchors)
        .into_par_iter()
        .zip(cls_grad.par_chunks_mut(k))
        .map(|(a, grad)| {
            if targets.labels[a] == AnchorLabel::Ignored {
                return 0.0;
            }
            let mut sum = 0.0;
            for (c, g) in grad.iter_mut().enumerate() {
                let l = focal_loss(outputs.class_probs[a * k + c], class_of[a] == Some(c), cfg.focal.gamma, cfg.focal.balance);
                sum += l.value;
                *g = l.gradient[0] / norm;
            }
            sum
        })
        .collect();
    let classification = tree_sum(&cls_terms) / norm;

    let mut reg_grad = vec![RegressionTarget::default(); anchors];
    let mut dim_grad = vec![0.0; outputs.dim_logits.len()];
    let mut reg_sum = 0.0;
    let mut dim_sum = 0.0;
    let bins = outputs.bins;
    for f in &targets.foreground {
        let pred = &outputs.regression[f.anchor].0;
        for j in 0..RegressionTarget::LEN {
            let l = smooth_l1(pred[j] - f.regression.0[j], cfg.beta)?;
            reg_sum += l.value;
            reg_grad[f.anchor].0[j] = l.gradient[0] / norm;
        }
        for (d, value) in [f.dims.h, f.dims.w, f.dims.l].into_iter().enumerate() {
            let at = (f.anchor * 3 + d) * bins;
            let l = multibin_ce(&outputs.dim_logits[at..at + bins], value, &dim_bins[f.class][d])?;
            dim_sum += l.value;
            for (g, x) in dim_grad[at..at + bins].iter_mut().zip(&l.gradient) {
                *g = x / norm;
            }
        }
    }
    let (classification, keep_cls) = clip(classification, cfg.clip_floor, cfg.clip_mode);
    let (regression, keep_reg) = clip(reg_sum / norm, cfg.clip_floor, cfg.clip_mode);
    let (dimensions, keep_dim) = clip(dim_sum / norm, cfg.clip_floor, cfg.clip_mode);
    if !keep_cls {
        cls_grad.iter_mut().for_each(|g| *g = 0.0);
    }
    if !keep_reg {
        reg_grad.iter_mut().for_each(|g| *g = RegressionTarget::default());
    }
    if !keep_dim {
        dim_grad.iter_mut().for_each(|g| *g = 0.0);
    }
    Ok(DetectionLoss {
        value: classification + regression + dimensions,
        classification,
        regression,
        dimensions,
        gradient: DetectionGradients { class_probs: cls_grad, regression: reg_grad, dim_logits: dim_grad },
    })
}
