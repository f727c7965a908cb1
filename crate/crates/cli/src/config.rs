use std::path::{Path, PathBuf};

use groundaware_core::camera::GroundModel;
use groundaware_core::evaluation::{ClassThresholds, Criterion, EvalConfig};
use groundaware_core::postopt::{HillClimbConfig, RefineVariables};
use groundaware_core::synthetic::SceneSpec;

use crate::CliError;

/// Everything a subcommand may need. Built from defaults, then a
/// `key = value` file, then command-line overrides, in that order.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data_root: PathBuf,
    pub split: Option<PathBuf>,
    pub out: PathBuf,
    pub jobs: Option<usize>,
    /// Size of the original camera images.
    pub image_width: u32,
    pub image_height: u32,
    /// Network input size after cropping.
    pub input_width: u32,
    pub input_height: u32,
    pub crop_top: f64,
    pub stride: u32,
    pub scales: Vec<f64>,
    pub ratios: Vec<f64>,
    pub stats_iou: f64,
    pub min_support: u64,
    pub classes: Vec<String>,
    pub ground_tolerance: f64,
    pub ground: GroundModel,
    pub iou_fg: f64,
    pub iou_bg: f64,
    pub hill: HillClimbConfig,
    pub eval: EvalConfig,
    pub synth: SceneSpec,
    pub synth_frames: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data_root: PathBuf::from("."),
            split: None,
            out: PathBuf::from("out"),
            jobs: None,
            image_width: 1242,
            image_height: 375,
            input_width: 1280,
            input_height: 288,
            crop_top: 100.0,
            stride: 16,
            scales: vec![20.0, 28.0, 40.0, 56.0, 80.0, 112.0, 160.0, 224.0, 320.0],
            ratios: vec![0.5, 0.75, 1.0],
            stats_iou: 0.5,
            min_support: 10,
            classes: vec!["Car".into()],
            ground_tolerance: 1.0,
            ground: GroundModel::default(),
            iou_fg: 0.5,
            iou_bg: 0.4,
            hill: HillClimbConfig::default(),
            eval: EvalConfig::default(),
            synth: SceneSpec::default(),
            synth_frames: 100,
        }
    }
}

fn bad(key: &str, value: &str, why: impl std::fmt::Display) -> CliError {
    CliError::Input(format!("config {key} = {value}: {why}"))
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, CliError>
where
    T::Err: std::fmt::Display,
{
    value.trim().parse().map_err(|e| bad(key, value, e))
}

fn list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>, CliError>
where
    T::Err: std::fmt::Display,
{
    value.split(',').filter(|s| !s.trim().is_empty()).map(|s| num(key, s)).collect()
}

fn names(value: &str) -> Vec<String> {
    value.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect()
}

impl RunConfig {
    /// Read a `key = value` file on top of the defaults. `#` starts a comment.
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<(), CliError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Input(format!("config line {}: expected key = value", i + 1)))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        match key {
            "data_root" => self.data_root = PathBuf::from(value),
            "split" => self.split = Some(PathBuf::from(value)),
            "out" => self.out = PathBuf::from(value),
            "jobs" => self.jobs = Some(num(key, value)?),
            "image_width" => self.image_width = num(key, value)?,
            "image_height" => self.image_height = num(key, value)?,
            "input_width" => self.input_width = num(key, value)?,
            "input_height" => self.input_height = num(key, value)?,
            "crop_top" => self.crop_top = num(key, value)?,
            "stride" => self.stride = num(key, value)?,
            "scales" => self.scales = list(key, value)?,
            "ratios" => self.ratios = list(key, value)?,
            "stats_iou" => self.stats_iou = num(key, value)?,
            "min_support" => self.min_support = num(key, value)?,
            "classes" => self.classes = names(value),
            "ground_tolerance" => {
                self.ground_tolerance = match value {
                    "inf" | "infinity" | "∞" => f64::INFINITY,
                    v => num(key, v)?,
                }
            }
            "elevation" => self.ground.elevation = num(key, value)?,
            "virtual_baseline" => self.ground.virtual_baseline = num(key, value)?,
            "iou_fg" => self.iou_fg = num(key, value)?,
            "iou_bg" => self.iou_bg = num(key, value)?,
            "hill.variables" => {
                self.hill.variables = match value {
                    "angle" => RefineVariables::AngleOnly,
                    "angle-depth" => RefineVariables::AngleAndDepth,
                    other => return Err(bad(key, other, "expected angle or angle-depth")),
                }
            }
            "hill.step_alpha" => self.hill.step_alpha = num(key, value)?,
            "hill.step_z" => self.hill.step_z = num(key, value)?,
            "hill.shrink" => self.hill.shrink = num(key, value)?,
            "hill.max_iterations" => self.hill.max_iterations = num(key, value)?,
            "hill.epsilon" => self.hill.epsilon = num(key, value)?,
            "hill.min_step_alpha" => self.hill.min_step_alpha = num(key, value)?,
            "hill.min_step_z" => self.hill.min_step_z = num(key, value)?,
            "eval.classes" => {
                self.eval.classes = names(value).iter().map(|c| ClassThresholds::standard(c)).collect();
            }
            "eval.criteria" => {
                self.eval.criteria = names(value)
                    .iter()
                    .map(|c| match c.as_str() {
                        "2D" | "2d" => Ok(Criterion::Box2D),
                        "BEV" | "bev" => Ok(Criterion::Bev),
                        "3D" | "3d" => Ok(Criterion::Box3D),
                        other => Err(bad(key, other, "expected 2D, BEV or 3D")),
                    })
                    .collect::<Result<_, _>>()?;
            }
            k if k.starts_with("eval.iou.") => {
                let class = &k["eval.iou.".len()..];
                let iou = list(key, value)?;
                match self.eval.classes.iter_mut().find(|c| c.class == class) {
                    Some(c) => c.iou = iou,
                    None => self.eval.classes.push(ClassThresholds { class: class.to_string(), iou }),
                }
            }
            "synth.seed" => self.synth.seed = num(key, value)?,
            "synth.frames" => self.synth_frames = num(key, value)?,
            "synth.objects_min" => self.synth.objects.0 = num(key, value)?,
            "synth.objects_max" => self.synth.objects.1 = num(key, value)?,
            "synth.depth_min" => self.synth.depth.0 = num(key, value)?,
            "synth.depth_max" => self.synth.depth.1 = num(key, value)?,
            "synth.lateral_min" => self.synth.lateral.0 = num(key, value)?,
            "synth.lateral_max" => self.synth.lateral.1 = num(key, value)?,
            _ => return Err(CliError::Input(format!("unknown config key {key}"))),
        }
        Ok(())
    }

    /// Range checks on numeric fields; paths are checked by each command.
    pub fn validate(&self) -> Result<(), CliError> {
        let input = |m: String| Err(CliError::Input(m));
        if self.stride == 0 || self.scales.is_empty() || self.ratios.is_empty() {
            return input("stride, scales and ratios must be nonempty and positive".into());
        }
        if self.scales.iter().chain(&self.ratios).any(|x| !(*x > 0.0)) {
            return input("scales and ratios must be positive".into());
        }
        if !(self.stats_iou > 0.0 && self.stats_iou <= 1.0) {
            return input(format!("stats_iou {} outside (0, 1]", self.stats_iou));
        }
        if !(0.0 <= self.iou_bg && self.iou_bg <= self.iou_fg && self.iou_fg <= 1.0) {
            return input(format!("need 0 <= iou_bg <= iou_fg <= 1, got {} and {}", self.iou_bg, self.iou_fg));
        }
        if !(self.ground_tolerance >= 0.0) {
            return input(format!("ground_tolerance {} is negative", self.ground_tolerance));
        }
        if !(self.crop_top >= 0.0 && self.crop_top < f64::from(self.image_height)) {
            return input(format!("crop_top {} outside the image", self.crop_top));
        }
        if self.jobs == Some(0) {
            return input("jobs must be at least 1".into());
        }
        GroundModel::new(self.ground.elevation, self.ground.virtual_baseline)
            .map_err(|e| CliError::Input(e.to_string()))?;
        self.hill.validate().map_err(|e| CliError::Input(e.to_string()))?;
        self.synth.validate().map_err(|e| CliError::Input(e.to_string()))?;
        for c in &self.eval.classes {
            if c.iou.is_empty() || c.iou.iter().any(|t| !(*t > 0.0 && *t <= 1.0)) {
                return input(format!("IoU thresholds for {} must lie in (0, 1]", c.class));
            }
        }
        Ok(())
    }

    pub fn calib_dir(&self) -> PathBuf {
        self.data_root.join("calib")
    }

    pub fn label_dir(&self) -> PathBuf {
        self.data_root.join("label_2")
    }
}
