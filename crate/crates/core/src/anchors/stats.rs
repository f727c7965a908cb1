use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;

use super::{AnchorGrid, AnchorShape};
use crate::boxes::iou_2d;
use crate::error::{Error, Result};
use crate::kitti::LabelRecord;
use crate::moments::Moments;

/// Lower bound applied to every standard deviation used for normalization.
pub const STD_FLOOR: f64 = 1e-2;

const HEADER: &str = "groundaware-anchor-stats 1";

#[derive(Debug, Clone, PartialEq)]
pub struct StatsConfig {
    /// Minimum 2D IoU between an anchor and an object for the pair to count.
    pub iou_threshold: f64,
    /// Matches required before a shape's statistics are usable.
    pub min_support: u64,
    /// Categories to collect; empty means every non-DontCare category.
    pub classes: Vec<String>,
}

impl Default for StatsConfig {
    fn default() -> Self {
        Self { iou_threshold: 0.5, min_support: 10, classes: Vec::new() }
    }
}

impl StatsConfig {
    fn accepts(&self, r: &LabelRecord) -> bool {
        !r.is_dont_care() && (self.classes.is_empty() || self.classes.contains(&r.category))
    }
}

/// Finalized per-shape moments of depth and observation-angle encoding.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ShapeStats {
    pub count: u64,
    pub mean_z: f64,
    pub var_z: f64,
    pub mean_sin: f64,
    pub var_sin: f64,
    pub mean_cos: f64,
    pub var_cos: f64,
}

/// Normalization prior of a usable shape, standard deviations floored.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapePrior {
    pub mean_z: f64,
    pub std_z: f64,
    pub mean_sin: f64,
    pub std_sin: f64,
    pub mean_cos: f64,
    pub std_cos: f64,
}

/// Corpus-global dimension statistics of one category.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ClassDimStats {
    pub count: u64,
    /// `(h, w, l)` means.
    pub mean: [f64; 3],
    pub var: [f64; 3],
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl ClassDimStats {
    pub fn std(&self) -> [f64; 3] {
        self.var.map(|v| v.sqrt().max(STD_FLOOR))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnchorStats {
    min_support: u64,
    shapes: Vec<(AnchorShape, ShapeStats)>,
    classes: BTreeMap<String, ClassDimStats>,
}

fn floored_std(var: f64) -> f64 {
    var.max(0.0).sqrt().max(STD_FLOOR)
}

impl AnchorStats {
    pub fn new(min_support: u64, shapes: Vec<(AnchorShape, ShapeStats)>, classes: BTreeMap<String, ClassDimStats>) -> Self {
        Self { min_support, shapes, classes }
    }

    pub fn min_support(&self) -> u64 {
        self.min_support
    }

    pub fn shapes(&self) -> &[(AnchorShape, ShapeStats)] {
        &self.shapes
    }

    pub fn classes(&self) -> &BTreeMap<String, ClassDimStats> {
        &self.classes
    }

    pub fn is_usable(&self, shape: usize) -> bool {
        self.shapes.get(shape).is_some_and(|(_, s)| s.count >= self.min_support && s.count > 0)
    }

    pub fn prior(&self, shape: usize) -> Option<ShapePrior> {
        if !self.is_usable(shape) {
            return None;
        }
        let s = &self.shapes[shape].1;
        Some(ShapePrior {
            mean_z: s.mean_z,
            std_z: floored_std(s.var_z),
            mean_sin: s.mean_sin,
            std_sin: floored_std(s.var_sin),
            mean_cos: s.mean_cos,
            std_cos: floored_std(s.var_cos),
        })
    }

    pub fn class_dims(&self, category: &str) -> Option<&ClassDimStats> {
        self.classes.get(category).filter(|c| c.count > 0)
    }

    /// Versioned plain-text table, full precision.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{HEADER}");
        let _ = writeln!(out, "min_support {}", self.min_support);
        let _ = writeln!(out, "shapes {}", self.shapes.len());
        for (shape, s) in &self.shapes {
            let _ = writeln!(
                out,
                "{} {} {} {} {} {} {} {} {}",
                shape.w, shape.h, s.count, s.mean_z, s.var_z, s.mean_sin, s.var_sin, s.mean_cos, s.var_cos
            );
        }
        let _ = writeln!(out, "classes {}", self.classes.len());
        for (name, c) in &self.classes {
            let _ = write!(out, "{name} {}", c.count);
            for k in 0..3 {
                let _ = write!(out, " {} {}", c.mean[k], c.var[k]);
            }
            for k in 0..3 {
                let _ = write!(out, " {} {}", c.min[k], c.max[k]);
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let mut next = |what: &str| {
            lines
                .next()
                .map(|(i, l)| (i + 1, l))
                .ok_or_else(|| Error::Malformed { line: 0, reason: format!("missing {what}") })
        };
        let (line, header) = next("header")?;
        if header.trim() != HEADER {
            return Err(Error::Malformed { line, reason: format!("unsupported header {header:?}") });
        }
        let keyed = |line: usize, text: &str, key: &str| -> Result<u64> {
            let mut it = text.split_whitespace();
            match (it.next(), it.next(), it.next()) {
                (Some(k), Some(v), None) if k == key => v
                    .parse()
                    .map_err(|_| Error::NonNumeric { line, token: v.to_string() }),
                _ => Err(Error::Malformed { line, reason: format!("expected `{key} <n>`") }),
            }
        };
        let (line, text_ms) = next("min_support")?;
        let min_support = keyed(line, text_ms, "min_support")?;
        let (line, text_n) = next("shape count")?;
        let n_shapes = keyed(line, text_n, "shapes")?;
        let mut shapes = Vec::with_capacity(n_shapes as usize);
        for _ in 0..n_shapes {
            let (line, row) = next("shape row")?;
            let f = numbers(row, line, 9)?;
            let count = as_count(f[2], line)?;
            shapes.push((
                AnchorShape { w: f[0], h: f[1] },
                ShapeStats {
                    count,
                    mean_z: f[3],
                    var_z: f[4],
                    mean_sin: f[5],
                    var_sin: f[6],
                    mean_cos: f[7],
                    var_cos: f[8],
                },
            ));
        }
        let (line, text_c) = next("class count")?;
        let n_classes = keyed(line, text_c, "classes")?;
        let mut classes = BTreeMap::new();
        for _ in 0..n_classes {
            let (line, row) = next("class row")?;
            let (name, rest) = row
                .trim()
                .split_once(char::is_whitespace)
                .ok_or_else(|| Error::Malformed { line, reason: "class row".into() })?;
            let f = numbers(rest, line, 13)?;
            let mut c = ClassDimStats { count: as_count(f[0], line)?, ..Default::default() };
            for k in 0..3 {
                c.mean[k] = f[1 + 2 * k];
                c.var[k] = f[2 + 2 * k];
                c.min[k] = f[7 + 2 * k];
                c.max[k] = f[8 + 2 * k];
            }
            classes.insert(name.to_string(), c);
        }
        if let Some((i, _)) = lines.next() {
            return Err(Error::Malformed { line: i + 1, reason: "trailing content".into() });
        }
        Ok(Self { min_support, shapes, classes })
    }
}

fn numbers(row: &str, line: usize, n: usize) -> Result<Vec<f64>> {
    let f = row
        .split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|_| Error::NonNumeric { line, token: t.to_string() }))
        .collect::<Result<Vec<_>>>()?;
    if f.len() != n {
        return Err(Error::Malformed { line, reason: format!("expected {n} fields, found {}", f.len()) });
    }
    Ok(f)
}

fn as_count(x: f64, line: usize) -> Result<u64> {
    if x >= 0.0 && x.fract() == 0.0 {
        Ok(x as u64)
    } else {
        Err(Error::Malformed { line, reason: format!("bad count {x}") })
    }
}

#[derive(Clone, Default)]
struct ShapeAccum {
    z: Moments,
    sin: Moments,
    cos: Moments,
}

impl ShapeAccum {
    fn merge(&mut self, o: &ShapeAccum) {
        self.z.merge(&o.z);
        self.sin.merge(&o.sin);
        self.cos.merge(&o.cos);
    }
}

#[derive(Clone)]
struct DimAccum {
    m: [Moments; 3],
    min: [f64; 3],
    max: [f64; 3],
}

impl Default for DimAccum {
    fn default() -> Self {
        Self { m: Default::default(), min: [f64::INFINITY; 3], max: [f64::NEG_INFINITY; 3] }
    }
}

impl DimAccum {
    fn push(&mut self, d: [f64; 3]) {
        for k in 0..3 {
            self.m[k].push(d[k]);
            self.min[k] = self.min[k].min(d[k]);
            self.max[k] = self.max[k].max(d[k]);
        }
    }

    fn merge(&mut self, o: &DimAccum) {
        for k in 0..3 {
            self.m[k].merge(&o.m[k]);
            self.min[k] = self.min[k].min(o.min[k]);
            self.max[k] = self.max[k].max(o.max[k]);
        }
    }
}

struct FrameAccum {
    shapes: Vec<ShapeAccum>,
    dims: BTreeMap<String, DimAccum>,
}

fn accumulate_frame(grid: &AnchorGrid, labels: &[LabelRecord], cfg: &StatsConfig) -> FrameAccum {
    let mut acc = FrameAccum { shapes: vec![ShapeAccum::default(); grid.shapes().len()], dims: BTreeMap::new() };
    for obj in labels.iter().filter(|r| cfg.accepts(r)) {
        acc.dims
            .entry(obj.category.clone())
            .or_default()
            .push([obj.dims.h, obj.dims.w, obj.dims.l]);
        let z = obj.location[2];
        if !(z > 0.0) {
            continue;
        }
        let (s, c) = obj.alpha.sin_cos();
        for (shape, slot) in acc.shapes.iter_mut().enumerate() {
            for a in grid.overlapping(shape, &obj.bbox2d) {
                if iou_2d(&grid.anchor_box(a), &obj.bbox2d) >= cfg.iou_threshold {
                    slot.z.push(z);
                    slot.sin.push(s);
                    slot.cos.push(c);
                }
            }
        }
    }
    acc
}

/// Gather per-shape depth and angle moments over every `(anchor, object)`
/// pair with `iou_2d >= cfg.iou_threshold`. Frames are accumulated
/// independently and merged in corpus order, so the result does not depend
/// on the thread count.
pub fn collect_stats<L: AsRef<[LabelRecord]> + Sync>(
    grid: &AnchorGrid,
    corpus: &[L],
    cfg: &StatsConfig,
) -> Result<AnchorStats> {
    if corpus.is_empty() {
        return Err(Error::Empty("label corpus".into()));
    }
    if !(cfg.iou_threshold > 0.0 && cfg.iou_threshold <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "IoU threshold must lie in (0, 1], got {}",
            cfg.iou_threshold
        )));
    }
    let frames: Vec<FrameAccum> = corpus
        .par_iter()
        .map(|labels| accumulate_frame(grid, labels.as_ref(), cfg))
        .collect();

    let mut shapes = vec![ShapeAccum::default(); grid.shapes().len()];
    let mut dims: BTreeMap<String, DimAccum> = BTreeMap::new();
    for f in &frames {
        for (total, part) in shapes.iter_mut().zip(&f.shapes) {
            total.merge(part);
        }
        for (name, d) in &f.dims {
            dims.entry(name.clone()).or_default().merge(d);
        }
    }

    let shapes = grid
        .shapes()
        .iter()
        .zip(shapes)
        .map(|(shape, a)| {
            (
                *shape,
                ShapeStats {
                    count: a.z.count(),
                    mean_z: a.z.mean(),
                    var_z: a.z.variance(),
                    mean_sin: a.sin.mean(),
                    var_sin: a.sin.variance(),
                    mean_cos: a.cos.mean(),
                    var_cos: a.cos.variance(),
                },
            )
        })
        .collect();
    let classes = dims
        .into_iter()
        .map(|(name, d)| {
            let stats = ClassDimStats {
                count: d.m[0].count(),
                mean: [d.m[0].mean(), d.m[1].mean(), d.m[2].mean()],
                var: [d.m[0].variance(), d.m[1].variance(), d.m[2].variance()],
                min: d.min,
                max: d.max,
            };
            (name, stats)
        })
        .collect();
    Ok(AnchorStats { min_support: cfg.min_support, shapes, classes })
}
