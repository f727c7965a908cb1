//! Ground-aware sampling: every location gathers features and the depth
//! prior from a row below it, at an offset derived from the ground plane,
//! and merges them back through a residual mix.

use rayon::prelude::*;

use crate::camera::{CameraIntrinsics, GroundModel};
use crate::error::{Error, Result};
use crate::feature_map::FeatureMap;

/// Per-row base offset in feature-grid units for objects of height `object_height`.
pub fn base_offsets(
    rows: usize,
    stride: u32,
    intr: &CameraIntrinsics,
    ground: &GroundModel,
    object_height: f64,
) -> Result<Vec<f64>> {
    let denom = 2.0 * ground.elevation - object_height;
    if !(object_height > 0.0 && denom > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "object height {object_height} must lie in (0, {})",
            2.0 * ground.elevation
        )));
    }
    if stride == 0 {
        return Err(Error::InvalidParameter("stride must be positive".into()));
    }
    let s = f64::from(stride);
    let coeff = object_height / denom;
    Ok((0..rows)
        .map(|r| {
            let v = (r as f64 + 0.5) * s;
            (coeff * (v - intr.cy)).max(0.0) / s
        })
        .collect())
}

/// Vertical sampling offsets: a per-row base plus a per-pixel residual.
#[derive(Debug, Clone, PartialEq)]
pub struct OffsetField {
    base: Vec<f64>,
    residual: Vec<f64>,
    cols: usize,
    object_height: f64,
}

impl OffsetField {
    pub fn new(base: Vec<f64>, residual: Vec<f64>, cols: usize, object_height: f64) -> Result<Self> {
        if residual.len() != base.len() * cols {
            return Err(Error::ShapeMismatch(format!(
                "residual of {} for a {}x{} grid",
                residual.len(),
                base.len(),
                cols
            )));
        }
        if base.iter().chain(&residual).any(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter("non-finite offset".into()));
        }
        Ok(Self { base, residual, cols, object_height })
    }

    /// Geometric base offsets with a zero residual.
    pub fn from_geometry(
        rows: usize,
        cols: usize,
        stride: u32,
        intr: &CameraIntrinsics,
        ground: &GroundModel,
        object_height: f64,
    ) -> Result<Self> {
        let base = base_offsets(rows, stride, intr, ground, object_height)?;
        Self::new(base, vec![0.0; rows * cols], cols, object_height)
    }

    /// Zero base and the given residual, mostly for tests.
    pub fn from_residual(rows: usize, cols: usize, residual: Vec<f64>) -> Result<Self> {
        Self::new(vec![0.0; rows], residual, cols, 0.0)
    }

    pub fn rows(&self) -> usize {
        self.base.len()
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn object_height(&self) -> f64 {
        self.object_height
    }

    pub fn base(&self) -> &[f64] {
        &self.base
    }

    pub fn residual(&self) -> &[f64] {
        &self.residual
    }

    pub fn residual_mut(&mut self) -> &mut [f64] {
        &mut self.residual
    }

    pub fn total(&self, row: usize, col: usize) -> f64 {
        self.base[row] + self.residual[row * self.cols + col]
    }
}

/// Linear map from the `channels + 1` sampled planes back to `channels` outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingMatrix {
    channels: usize,
    data: Vec<f64>,
}

impl MixingMatrix {
    pub fn new(channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || data.len() != channels * (channels + 1) {
            return Err(Error::ShapeMismatch(format!(
                "mixing matrix of {} values for {channels} channels",
                data.len()
            )));
        }
        Ok(Self { channels, data })
    }

    pub fn zeros(channels: usize) -> Self {
        Self { channels, data: vec![0.0; channels * (channels + 1)] }
    }

    /// Passes each sampled feature channel to itself and ignores the prior.
    pub fn identity(channels: usize) -> Self {
        let mut m = Self::zeros(channels);
        for c in 0..channels {
            m.set(c, c, 1.0);
        }
        m
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn inputs(&self) -> usize {
        self.channels + 1
    }

    pub fn get(&self, out: usize, input: usize) -> f64 {
        self.data[out * self.inputs() + input]
    }

    pub fn set(&mut self, out: usize, input: usize, value: f64) {
        let k = self.inputs();
        self.data[out * k + input] = value;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

/// Where one output pixel reads from: `(1 - t) * row[lower] + t * row[lower + 1]`.
#[derive(Debug, Clone, Copy)]
struct Tap {
    lower: usize,
    t: f64,
    /// Whether the sample moves with the offset (false once clamped).
    live: bool,
}

fn tap(row: usize, offset: f64, rows: usize) -> Tap {
    let last = (rows - 1) as f64;
    let s = row as f64 + offset;
    if rows == 1 || s <= 0.0 || s.is_nan() {
        return Tap { lower: 0, t: 0.0, live: false };
    }
    if s > last {
        return Tap { lower: rows - 2, t: 1.0, live: false };
    }
    // Integer positions take the cell below them, so the derivative is the
    // left-hand one.
    let lower = (s.ceil() as usize - 1).min(rows - 2);
    Tap { lower, t: s - lower as f64, live: true }
}

impl Tap {
    fn sample(&self, plane: &[f64], cols: usize, col: usize) -> f64 {
        let a = plane[self.lower * cols + col];
        if self.t == 0.0 {
            return a;
        }
        let b = plane[(self.lower + 1) * cols + col];
        a + self.t * (b - a)
    }

    fn slope(&self, plane: &[f64], cols: usize, col: usize) -> f64 {
        if !self.live {
            return 0.0;
        }
        plane[(self.lower + 1) * cols + col] - plane[self.lower * cols + col]
    }
}

fn check_shapes(features: &FeatureMap, prior: &FeatureMap, offsets: &OffsetField, mixing: &MixingMatrix) -> Result<()> {
    let (c, r, w) = features.shape();
    if prior.shape() != (1, r, w) {
        return Err(Error::ShapeMismatch(format!("prior {:?} for features {:?}", prior.shape(), features.shape())));
    }
    if offsets.rows() != r || offsets.cols() != w {
        return Err(Error::ShapeMismatch(format!(
            "offsets {}x{} for a {r}x{w} grid",
            offsets.rows(),
            offsets.cols()
        )));
    }
    if mixing.channels() != c {
        return Err(Error::ShapeMismatch(format!("mixing for {} channels, features have {c}", mixing.channels())));
    }
    Ok(())
}

fn taps(offsets: &OffsetField) -> Vec<Tap> {
    let (rows, cols) = (offsets.rows(), offsets.cols());
    (0..rows * cols).map(|i| tap(i / cols, offsets.total(i / cols, i % cols), rows)).collect()
}

/// Sampled planes: the feature channels followed by the prior.
fn sample_planes(features: &FeatureMap, prior: &FeatureMap, taps: &[Tap]) -> Vec<Vec<f64>> {
    let cols = features.cols();
    let planes: Vec<&[f64]> = (0..features.channels()).map(|c| features.plane(c)).chain([prior.plane(0)]).collect();
    planes
        .par_iter()
        .map(|plane| taps.iter().enumerate().map(|(i, tp)| tp.sample(plane, cols, i % cols)).collect())
        .collect()
}

/// Residual ground-aware merge: `features + mixing · [sampled features; sampled prior]`.
pub fn gac_forward(
    features: &FeatureMap,
    prior: &FeatureMap,
    offsets: &OffsetField,
    mixing: &MixingMatrix,
) -> Result<FeatureMap> {
    check_shapes(features, prior, offsets, mixing)?;
    let (channels, rows, cols) = features.shape();
    let sampled = sample_planes(features, prior, &taps(offsets));
    let n = rows * cols;
    let mut out = features.clone();
    out.as_mut_slice().par_chunks_mut(n).enumerate().for_each(|(c, plane)| {
        for (k, s) in sampled.iter().enumerate() {
            let m = mixing.get(c, k);
            if m == 0.0 {
                continue;
            }
            for (o, v) in plane.iter_mut().zip(s) {
                *o += m * v;
            }
        }
    });
    debug_assert_eq!(out.channels(), channels);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GacGradients {
    pub features: FeatureMap,
    pub prior: FeatureMap,
    /// One entry per grid location, matching [`OffsetField::residual`].
    pub residual: Vec<f64>,
    pub mixing: MixingMatrix,
}

/// Exact gradients of [`gac_forward`] given the upstream gradient of its output.
pub fn gac_backward(
    upstream: &FeatureMap,
    features: &FeatureMap,
    prior: &FeatureMap,
    offsets: &OffsetField,
    mixing: &MixingMatrix,
) -> Result<GacGradients> {
    check_shapes(features, prior, offsets, mixing)?;
    if upstream.shape() != features.shape() {
        return Err(Error::ShapeMismatch(format!(
            "upstream {:?} for output {:?}",
            upstream.shape(),
            features.shape()
        )));
    }
    let (channels, rows, cols) = features.shape();
    let n = rows * cols;
    let taps = taps(offsets);
    let sampled = sample_planes(features, prior, &taps);
    let inputs = channels + 1;

    let mut d_mixing = MixingMatrix::zeros(channels);
    for c in 0..channels {
        let g = upstream.plane(c);
        for (k, s) in sampled.iter().enumerate() {
            d_mixing.set(c, k, g.iter().zip(s).map(|(a, b)| a * b).sum());
        }
    }

    // Gradient reaching each sampled plane.
    let d_sampled: Vec<Vec<f64>> = (0..inputs)
        .into_par_iter()
        .map(|k| {
            let mut acc = vec![0.0; n];
            for c in 0..channels {
                let m = mixing.get(c, k);
                if m == 0.0 {
                    continue;
                }
                for (a, g) in acc.iter_mut().zip(upstream.plane(c)) {
                    *a += m * g;
                }
            }
            acc
        })
        .collect();

    let scatter = |src: &[f64], dst: &mut [f64]| {
        for (i, (tp, g)) in taps.iter().zip(src).enumerate() {
            let col = i % cols;
            dst[tp.lower * cols + col] += (1.0 - tp.t) * g;
            if tp.t != 0.0 {
                dst[(tp.lower + 1) * cols + col] += tp.t * g;
            }
        }
    };

    let mut d_features = upstream.clone();
    d_features
        .as_mut_slice()
        .par_chunks_mut(n)
        .zip(&d_sampled[..channels])
        .for_each(|(dst, src)| scatter(src, dst));
    let mut d_prior = FeatureMap::zeros(1, rows, cols);
    scatter(&d_sampled[channels], d_prior.as_mut_slice());

    let residual = (0..n)
        .into_par_iter()
        .map(|i| {
            let tp = &taps[i];
            if !tp.live {
                return 0.0;
            }
            let col = i % cols;
            (0..inputs)
                .map(|k| {
                    let plane = if k < channels { features.plane(k) } else { prior.plane(0) };
                    d_sampled[k][i] * tp.slope(plane, cols, col)
                })
                .sum()
        })
        .collect();

    Ok(GacGradients { features: d_features, prior: d_prior, residual, mixing: d_mixing })
}
