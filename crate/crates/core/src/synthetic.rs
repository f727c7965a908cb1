//! Deterministic synthetic scenes: objects resting on the ground plane,
//! labelled with exact projections.
//!
//! Randomness comes from SplitMix64. Frame `i` of seed `s` uses its own
//! stream seeded with `mix(s ^ mix(i + 1))`, where `mix` is the SplitMix64
//! output function, so frames can be generated in any order. Uniform reals
//! take the top 53 bits of a draw; normals use Box-Muller on two uniforms.

use rayon::prelude::*;

use crate::boxes::{alpha_from_yaw, project_box, project_box_unclamped, Box3D, Dimensions};
use crate::camera::{CameraIntrinsics, GroundModel};
use crate::error::{Error, Result};
use crate::kitti::{CalibrationFile, LabelRecord};

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    /// Independent stream for one frame of a seeded corpus.
    pub fn for_frame(seed: u64, frame: u64) -> Self {
        Self::new(mix(seed ^ mix(frame.wrapping_add(1))))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        mix(self.state)
    }

    /// Uniform in `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in `lo..=hi`.
    pub fn range(&mut self, lo: u32, hi: u32) -> u32 {
        let span = u64::from(hi - lo) + 1;
        lo + (self.next_u64() % span) as u32
    }

    pub fn normal(&mut self, mean: f64, std: f64) -> f64 {
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        mean + std * (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassSpec {
    pub name: String,
    /// `(h, w, l)` means and standard deviations, meters.
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl ClassSpec {
    pub fn car() -> Self {
        Self { name: "Car".into(), mean: [1.53, 1.63, 3.88], std: [0.10, 0.10, 0.40] }
    }
}

/// KITTI-like left color camera.
pub fn kitti_like_camera() -> CameraIntrinsics {
    CameraIntrinsics {
        fx: 721.5377,
        fy: 721.5377,
        cx: 609.5593,
        cy: 172.854,
        ty: 0.2163791,
        image_w: 1242,
        image_h: 375,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub seed: u64,
    /// Inclusive object count range per frame.
    pub objects: (u32, u32),
    pub depth: (f64, f64),
    pub lateral: (f64, f64),
    pub yaw: (f64, f64),
    pub classes: Vec<ClassSpec>,
    pub camera: CameraIntrinsics,
    pub ground: GroundModel,
    /// Resampling attempts per object before it is dropped.
    pub max_retries: u32,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            objects: (1, 8),
            depth: (5.0, 60.0),
            lateral: (-15.0, 15.0),
            yaw: (-std::f64::consts::PI, std::f64::consts::PI),
            classes: vec![ClassSpec::car()],
            camera: kitti_like_camera(),
            ground: GroundModel::default(),
            max_retries: 100,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let ordered = |(a, b): (f64, f64)| a.is_finite() && b.is_finite() && a <= b;
        if self.objects.0 > self.objects.1 || !ordered(self.depth) || !ordered(self.lateral) || !ordered(self.yaw) {
            return Err(Error::InvalidParameter("scene ranges must be nonempty".into()));
        }
        if self.classes.is_empty() {
            return Err(Error::InvalidParameter("scene needs at least one class".into()));
        }
        for c in &self.classes {
            if c.mean.iter().any(|m| !(*m > 0.0)) || c.std.iter().any(|s| !(*s >= 0.0)) {
                return Err(Error::InvalidParameter(format!("bad dimension distribution for {}", c.name)));
            }
        }
        self.camera.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneFrame {
    pub calib: CalibrationFile,
    pub labels: Vec<LabelRecord>,
    /// Objects dropped after exhausting their retries.
    pub dropped: u32,
}

fn sample_object(spec: &SceneSpec, rng: &mut SplitMix64) -> Option<LabelRecord> {
    let class = &spec.classes[rng.range(0, spec.classes.len() as u32 - 1) as usize];
    let z = rng.uniform(spec.depth.0, spec.depth.1);
    let x = rng.uniform(spec.lateral.0, spec.lateral.1);
    let yaw = rng.uniform(spec.yaw.0, spec.yaw.1);
    let mut d = [0.0; 3];
    for i in 0..3 {
        d[i] = rng.normal(class.mean[i], class.std[i]).max(0.25 * class.mean[i]);
    }
    if !(z > 0.0) {
        return None;
    }
    let dims = Dimensions { h: d[0], w: d[1], l: d[2] };
    let b = Box3D::new([x, spec.ground.elevation, z], dims, yaw).ok()?;
    let raw = project_box_unclamped(&b, &spec.camera).ok()?;
    let (w, h) = (f64::from(spec.camera.image_w - 1), f64::from(spec.camera.image_h - 1));
    if raw.left < 0.0 || raw.top < 0.0 || raw.right > w || raw.bottom > h {
        return None;
    }
    Some(LabelRecord {
        category: class.name.clone(),
        truncation: 0.0,
        occlusion: 0,
        alpha: alpha_from_yaw(b.yaw, x, z).ok()?.radians(),
        bbox2d: project_box(&b, &spec.camera).ok()?,
        dims,
        location: b.center,
        rotation_y: b.yaw,
        score: None,
    })
}

/// One frame, identical however and whenever it is generated.
pub fn generate_frame(spec: &SceneSpec, frame: u64) -> Result<SceneFrame> {
    spec.validate()?;
    let mut rng = SplitMix64::for_frame(spec.seed, frame);
    let count = rng.range(spec.objects.0, spec.objects.1);
    let mut labels = Vec::with_capacity(count as usize);
    let mut dropped = 0;
    for _ in 0..count {
        match (0..=spec.max_retries).find_map(|_| sample_object(spec, &mut rng)) {
            Some(l) => labels.push(l),
            None => dropped += 1,
        }
    }
    Ok(SceneFrame { calib: CalibrationFile::from_intrinsics(&spec.camera), labels, dropped })
}

pub fn generate(spec: &SceneSpec, frames: usize) -> Result<Vec<SceneFrame>> {
    spec.validate()?;
    (0..frames as u64).into_par_iter().map(|i| generate_frame(spec, i)).collect()
}
