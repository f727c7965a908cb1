//! Pinhole projection and the ground-plane depth prior.
//!
//! Image rows grow downwards and the camera frame is KITTI's rectified
//! frame: x right, y down, z forward. The vertical relation used everywhere
//! in this module is
//!
//! ```text
//! z * v = f_y * y + c_y * z + T_y
//! ```
//!
//! Solving it for `z` with `y` fixed to the camera elevation gives the depth
//! of a ground pixel, which diverges at the vanishing line `v = c_y`. The
//! virtual disparity `f_y * B / z` removes that pole and is what the depth
//! prior feature map carries.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::feature_map::FeatureMap;

/// Camera elevation above the ground for KITTI, meters.
pub const KITTI_ELEVATION: f64 = 1.65;
/// Baseline of the fictitious stereo rig used to encode disparity, meters.
pub const KITTI_VIRTUAL_BASELINE: f64 = 0.54;

/// Projective parameters of a rectified pinhole camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Row-1 translation of the projection matrix, meter·pixels.
    pub ty: f64,
    pub image_w: u32,
    pub image_h: u32,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, ty: f64, image_w: u32, image_h: u32) -> Result<Self> {
        let intr = Self { fx, fy, cx, cy, ty, image_w, image_h };
        intr.validate()?;
        Ok(intr)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) || !self.fx.is_finite() || !self.fy.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "focal lengths must be positive, got fx={} fy={}",
                self.fx, self.fy
            )));
        }
        if !(self.cx.is_finite() && self.cy.is_finite() && self.ty.is_finite()) {
            return Err(Error::InvalidParameter("non-finite principal point or T_y".into()));
        }
        if self.image_w == 0 || self.image_h == 0 {
            return Err(Error::InvalidParameter("image size must be positive".into()));
        }
        Ok(())
    }
}

/// Flat-ground hypothesis: camera elevation and virtual stereo baseline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundModel {
    pub elevation: f64,
    pub virtual_baseline: f64,
}

impl Default for GroundModel {
    fn default() -> Self {
        Self { elevation: KITTI_ELEVATION, virtual_baseline: KITTI_VIRTUAL_BASELINE }
    }
}

impl GroundModel {
    pub fn new(elevation: f64, virtual_baseline: f64) -> Result<Self> {
        if !(elevation > 0.0 && elevation.is_finite()) {
            return Err(Error::InvalidParameter(format!("elevation must be > 0, got {elevation}")));
        }
        if !(virtual_baseline > 0.0 && virtual_baseline.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "virtual baseline must be > 0, got {virtual_baseline}"
            )));
        }
        Ok(Self { elevation, virtual_baseline })
    }
}

/// How [`backproject`] treats the `T_y` term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BackprojectMode {
    /// Exact inverse of [`project`], including `T_y`.
    #[default]
    Exact,
    /// `y = (v - c_y) / f_y * z`, ignoring `T_y`.
    DropTy,
}

pub fn project(point: [f64; 3], intr: &CameraIntrinsics) -> Result<[f64; 2]> {
    let [x, y, z] = point;
    if !(z > 0.0) {
        return Err(Error::NonPositiveDepth(z));
    }
    Ok([intr.fx * x / z + intr.cx, (intr.fy * y + intr.ty) / z + intr.cy])
}

pub fn backproject(u: f64, v: f64, z: f64, intr: &CameraIntrinsics) -> Result<[f64; 3]> {
    backproject_with(u, v, z, intr, BackprojectMode::Exact)
}

pub fn backproject_with(
    u: f64,
    v: f64,
    z: f64,
    intr: &CameraIntrinsics,
    mode: BackprojectMode,
) -> Result<[f64; 3]> {
    if !(z > 0.0) {
        return Err(Error::NonPositiveDepth(z));
    }
    let x = (u - intr.cx) / intr.fx * z;
    let y = match mode {
        BackprojectMode::Exact => ((v - intr.cy) * z - intr.ty) / intr.fy,
        BackprojectMode::DropTy => (v - intr.cy) / intr.fy * z,
    };
    Ok([x, y, z])
}

/// Depth of the ground plane seen at image row `v`.
///
/// `None` at and above the vanishing line, where no ground is visible.
pub fn ground_depth(v: f64, intr: &CameraIntrinsics, ground: &GroundModel) -> Option<f64> {
    if v <= intr.cy {
        return None;
    }
    let z = (intr.fy * ground.elevation + intr.ty) / (v - intr.cy);
    (z > 0.0 && z.is_finite()).then_some(z)
}

/// Virtual disparity of the ground at row `v`, suppressed to zero where negative.
pub fn virtual_disparity(v: f64, intr: &CameraIntrinsics, ground: &GroundModel) -> f64 {
    let d = intr.fy * ground.virtual_baseline * (v - intr.cy) / (intr.fy * ground.elevation + intr.ty);
    d.max(0.0)
}

/// One-channel map of ground disparity sampled at pixel-center rows `(r + 0.5) * stride`.
pub fn depth_prior_map(
    intr: &CameraIntrinsics,
    ground: &GroundModel,
    stride: u32,
    rows: usize,
    cols: usize,
) -> Result<FeatureMap> {
    if stride == 0 {
        return Err(Error::InvalidParameter("stride must be >= 1".into()));
    }
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidParameter("prior map must have positive size".into()));
    }
    let stride = f64::from(stride);
    let mut data = vec![0.0; rows * cols];
    data.par_chunks_mut(cols).enumerate().for_each(|(r, row)| {
        let v = (r as f64 + 0.5) * stride;
        row.fill(virtual_disparity(v, intr, ground));
    });
    FeatureMap::from_vec(1, rows, cols, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn intr() -> CameraIntrinsics {
        CameraIntrinsics::new(1000.0, 1000.0, 600.0, 100.0, 0.0, 1280, 288).unwrap()
    }

    #[test]
    fn optical_axis_hits_principal_point() {
        let [u, v] = project([0.0, 0.0, 7.3], &intr()).unwrap();
        assert_eq!((u, v), (600.0, 100.0));
    }

    #[test]
    fn project_row_substitution() {
        let [_, v] = project([0.0, 1.65, 16.5], &intr()).unwrap();
        assert!((v - 200.0).abs() < 1e-12);
    }

    #[test]
    fn nonpositive_depth_rejected() {
        assert_eq!(project([0.0, 0.0, 0.0], &intr()), Err(Error::NonPositiveDepth(0.0)));
        assert!(backproject(1.0, 1.0, -2.0, &intr()).is_err());
    }

    #[test]
    fn backproject_substitution() {
        let p = backproject(700.0, 100.0, 16.5, &intr()).unwrap();
        assert!((p[0] - 1.65).abs() < 1e-12);
        assert_eq!(backproject(600.0, 100.0, 3.0, &intr()).unwrap(), [0.0, 0.0, 3.0]);
    }

    #[test]
    fn ty_modes_differ_only_by_ty_over_fy() {
        let mut k = intr();
        k.ty = -3.3;
        let exact = backproject_with(650.0, 180.0, 12.0, &k, BackprojectMode::Exact).unwrap();
        let paper = backproject_with(650.0, 180.0, 12.0, &k, BackprojectMode::DropTy).unwrap();
        assert!((paper[1] - exact[1] - (-3.3) / 1000.0).abs() < 1e-12);
        let [_, v] = project(exact, &k).unwrap();
        assert!((v - 180.0).abs() < 1e-9);
    }

    #[test]
    fn ground_depth_values() {
        let g = GroundModel::default();
        assert!((ground_depth(200.0, &intr(), &g).unwrap() - 16.5).abs() < 1e-12);
        assert_eq!(ground_depth(100.0, &intr(), &g), None);
        assert_eq!(ground_depth(50.0, &intr(), &g), None);
    }

    #[test]
    fn disparity_values() {
        let g = GroundModel::default();
        let d = virtual_disparity(200.0, &intr(), &g);
        assert!((d - 54000.0 / 1650.0).abs() < 1e-12);
        assert_eq!(virtual_disparity(100.0, &intr(), &g), 0.0);
        assert_eq!(virtual_disparity(-40.0, &intr(), &g), 0.0);
    }

    #[test]
    fn prior_map_rows() {
        let g = GroundModel::default();
        let k = intr();
        let map = depth_prior_map(&k, &g, 16, 18, 80).unwrap();
        assert_eq!((map.channels(), map.rows(), map.cols()), (1, 18, 80));
        // row 5 center is v = 88 < c_y
        for r in 0..=5 {
            assert!(map.row(0, r).iter().all(|&d| d == 0.0));
        }
        for r in 1..18 {
            assert!(map.get(0, r, 0) >= map.get(0, r - 1, 0));
            assert!(map.row(0, r).iter().all(|&d| d == map.get(0, r, 0)));
        }

        let full = depth_prior_map(&k, &g, 1, 288, 1).unwrap();
        for r in 0..288 {
            assert_eq!(full.get(0, r, 0), virtual_disparity(r as f64 + 0.5, &k, &g));
        }
    }

    #[test]
    fn invalid_configs() {
        assert!(CameraIntrinsics::new(0.0, 1.0, 0.0, 0.0, 0.0, 1, 1).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 0.0, 0.0, 0.0, 0, 1).is_err());
        assert!(GroundModel::new(0.0, 0.54).is_err());
        assert!(depth_prior_map(&intr(), &GroundModel::default(), 0, 1, 1).is_err());
    }
}
