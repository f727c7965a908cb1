//! Image-plane and oriented 3D boxes.
//!
//! 3D boxes follow KITTI: `center` is the bottom-face center in the
//! rectified camera frame (y down), the box spans `[y - h, y]` vertically,
//! and the footprint is an `l × w` rectangle with `l` along the heading.

use std::cmp::Ordering;
use std::f64::consts::{PI, TAU};

use crate::camera::{project, CameraIntrinsics};
use crate::error::{Error, Result};

/// Wraps an angle into `[-π, π)`.
pub fn normalize_angle(theta: f64) -> f64 {
    let mut t = theta - TAU * ((theta + PI) / TAU).floor();
    if t >= PI {
        t -= TAU;
    }
    if t < -PI {
        t += TAU;
    }
    t
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Box2D {
    pub left: f64,
    pub top: f64,
    pub right: f64,
    pub bottom: f64,
}

impl Box2D {
    pub fn new(left: f64, top: f64, right: f64, bottom: f64) -> Result<Self> {
        if !(right >= left && bottom >= top) {
            return Err(Error::InvalidParameter(format!(
                "inverted box ({left}, {top}, {right}, {bottom})"
            )));
        }
        Ok(Self { left, top, right, bottom })
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self { left: cx - w / 2.0, top: cy - h / 2.0, right: cx + w / 2.0, bottom: cy + h / 2.0 }
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.left + self.right) / 2.0, (self.top + self.bottom) / 2.0)
    }

    pub fn width(&self) -> f64 {
        self.right - self.left
    }

    pub fn height(&self) -> f64 {
        self.bottom - self.top
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn intersection(&self, other: &Box2D) -> f64 {
        let w = self.right.min(other.right) - self.left.max(other.left);
        let h = self.bottom.min(other.bottom) - self.top.max(other.top);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }
}

/// Height, width and length in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dimensions {
    pub h: f64,
    pub w: f64,
    pub l: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Box3D {
    /// Bottom-face center `(x, y, z)`.
    pub center: [f64; 3],
    pub dims: Dimensions,
    /// Heading about the camera y axis (KITTI `rotation_y`).
    pub yaw: f64,
}

impl Box3D {
    pub fn new(center: [f64; 3], dims: Dimensions, yaw: f64) -> Result<Self> {
        if dims.h < 0.0 || dims.w < 0.0 || dims.l < 0.0 {
            return Err(Error::InvalidParameter(format!("negative dimensions {dims:?}")));
        }
        Ok(Self { center, dims, yaw: normalize_angle(yaw) })
    }

    /// Geometric center of the cuboid (half a height above the bottom face).
    pub fn volume_center(&self) -> [f64; 3] {
        let [x, y, z] = self.center;
        [x, y - self.dims.h / 2.0, z]
    }

    pub fn volume(&self) -> f64 {
        self.dims.h * self.dims.w * self.dims.l
    }

    /// Footprint corners in the `(x, z)` plane, counter-clockwise.
    pub fn footprint(&self) -> [[f64; 2]; 4] {
        let (s, c) = self.yaw.sin_cos();
        let (hl, hw) = (self.dims.l / 2.0, self.dims.w / 2.0);
        let [x, _, z] = self.center;
        let mut pts = [[0.0; 2]; 4];
        for (p, (dx, dz)) in pts.iter_mut().zip([(hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)]) {
            *p = [x + c * dx + s * dz, z - s * dx + c * dz];
        }
        if signed_area(&pts) < 0.0 {
            pts.reverse();
        }
        pts
    }

    fn sort_key(&self) -> [f64; 7] {
        let [x, y, z] = self.center;
        [x, y, z, self.dims.h, self.dims.w, self.dims.l, self.yaw]
    }
}

/// The eight cuboid corners: bottom face (y = y3d) first, then the top face.
pub fn corners3d(b: &Box3D) -> [[f64; 3]; 8] {
    let (s, c) = b.yaw.sin_cos();
    let (hl, hw, h) = (b.dims.l / 2.0, b.dims.w / 2.0, b.dims.h);
    let [x, y, z] = b.center;
    let xs = [hl, hl, -hl, -hl, hl, hl, -hl, -hl];
    let ys = [0.0, 0.0, 0.0, 0.0, -h, -h, -h, -h];
    let zs = [hw, -hw, -hw, hw, hw, -hw, -hw, hw];
    let mut out = [[0.0; 3]; 8];
    for i in 0..8 {
        out[i] = [x + c * xs[i] + s * zs[i], y + ys[i], z - s * xs[i] + c * zs[i]];
    }
    out
}

/// Axis-aligned hull of the projected corners, not clamped to the image.
pub fn project_box_unclamped(b: &Box3D, intr: &CameraIntrinsics) -> Result<Box2D> {
    let corners = corners3d(b);
    if corners.iter().any(|p| !(p[2] > 0.0)) {
        return Err(Error::BehindCamera);
    }
    let mut hull = Box2D {
        left: f64::INFINITY,
        top: f64::INFINITY,
        right: f64::NEG_INFINITY,
        bottom: f64::NEG_INFINITY,
    };
    for p in corners {
        let [u, v] = project(p, intr)?;
        hull.left = hull.left.min(u);
        hull.right = hull.right.max(u);
        hull.top = hull.top.min(v);
        hull.bottom = hull.bottom.max(v);
    }
    Ok(hull)
}

/// Image-plane box of a 3D box, clamped to `[0, W-1] × [0, H-1]`.
pub fn project_box(b: &Box3D, intr: &CameraIntrinsics) -> Result<Box2D> {
    let raw = project_box_unclamped(b, intr)?;
    let (wmax, hmax) = (f64::from(intr.image_w) - 1.0, f64::from(intr.image_h) - 1.0);
    Ok(Box2D {
        left: raw.left.clamp(0.0, wmax),
        top: raw.top.clamp(0.0, hmax),
        right: raw.right.clamp(0.0, wmax),
        bottom: raw.bottom.clamp(0.0, hmax),
    })
}

pub fn iou_2d(a: &Box2D, b: &Box2D) -> f64 {
    let inter = a.intersection(b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// Intersection over the area of `a` (used for don't-care regions).
pub fn ioa_2d(a: &Box2D, b: &Box2D) -> f64 {
    let area = a.area();
    if area <= 0.0 {
        0.0
    } else {
        (a.intersection(b) / area).clamp(0.0, 1.0)
    }
}

fn canonical_pair<'a>(a: &'a Box3D, b: &'a Box3D) -> (&'a Box3D, &'a Box3D) {
    let ord = a
        .sort_key()
        .iter()
        .zip(b.sort_key().iter())
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| *o != Ordering::Equal)
        .unwrap_or(Ordering::Equal);
    if ord == Ordering::Greater {
        (b, a)
    } else {
        (a, b)
    }
}

fn same_footprint(a: &Box3D, b: &Box3D) -> bool {
    if a.center[0] != b.center[0] || a.center[2] != b.center[2] || a.dims.l != b.dims.l || a.dims.w != b.dims.w {
        return false;
    }
    let d = normalize_angle(a.yaw - b.yaw);
    d == 0.0 || d == -PI
}

fn bev_intersection(a: &Box3D, b: &Box3D) -> f64 {
    let clipped = clip_convex(&a.footprint(), &b.footprint());
    polygon_area(&clipped)
}

/// Bird's-eye-view IoU of the yaw-rotated footprints.
pub fn iou_bev(a: &Box3D, b: &Box3D) -> f64 {
    let (a, b) = canonical_pair(a, b);
    let (area_a, area_b) = (a.dims.l * a.dims.w, b.dims.l * b.dims.w);
    if area_a <= 0.0 || area_b <= 0.0 {
        return 0.0;
    }
    if same_footprint(a, b) {
        return 1.0;
    }
    let inter = bev_intersection(a, b).min(area_a).min(area_b);
    let union = area_a + area_b - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

fn vertical_overlap(a: &Box3D, b: &Box3D) -> f64 {
    let (ya, yb) = (a.center[1], b.center[1]);
    (ya.min(yb) - (ya - a.dims.h).max(yb - b.dims.h)).max(0.0)
}

pub fn iou_3d(a: &Box3D, b: &Box3D) -> f64 {
    let (a, b) = canonical_pair(a, b);
    let (va, vb) = (a.volume(), b.volume());
    if va <= 0.0 || vb <= 0.0 {
        return 0.0;
    }
    if same_footprint(a, b) && a.center[1] == b.center[1] && a.dims.h == b.dims.h {
        return 1.0;
    }
    let overlap = vertical_overlap(a, b);
    if overlap <= 0.0 {
        return 0.0;
    }
    let inter = (bev_intersection(a, b) * overlap).min(va).min(vb);
    let union = va + vb - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

fn signed_area(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    let mut acc = 0.0;
    for i in 0..n {
        let (p, q) = (poly[i], poly[(i + 1) % n]);
        acc += p[0] * q[1] - q[0] * p[1];
    }
    acc / 2.0
}

const MERGE_EPS: f64 = 1e-12;

fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    signed_area(poly).abs()
}

/// Sutherland–Hodgman clipping of `subject` by the convex, counter-clockwise `clip`.
fn clip_convex(subject: &[[f64; 2]], clip: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut out: Vec<[f64; 2]> = subject.to_vec();
    let m = clip.len();
    for i in 0..m {
        if out.len() < 3 {
            return Vec::new();
        }
        let (a, b) = (clip[i], clip[(i + 1) % m]);
        let side = |p: [f64; 2]| (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
        let input = std::mem::take(&mut out);
        let n = input.len();
        for j in 0..n {
            let (s, e) = (input[j], input[(j + 1) % n]);
            let (ds, de) = (side(s), side(e));
            if de >= 0.0 {
                if ds < 0.0 {
                    push_merged(&mut out, lerp(s, e, ds / (ds - de)));
                }
                push_merged(&mut out, e);
            } else if ds >= 0.0 {
                push_merged(&mut out, lerp(s, e, ds / (ds - de)));
            }
        }
        if out.len() > 1 {
            let (first, last) = (out[0], out[out.len() - 1]);
            if close(first, last) {
                out.pop();
            }
        }
    }
    out
}

fn lerp(s: [f64; 2], e: [f64; 2], t: f64) -> [f64; 2] {
    [s[0] + (e[0] - s[0]) * t, s[1] + (e[1] - s[1]) * t]
}

fn close(p: [f64; 2], q: [f64; 2]) -> bool {
    (p[0] - q[0]).abs() <= MERGE_EPS && (p[1] - q[1]).abs() <= MERGE_EPS
}

fn push_merged(out: &mut Vec<[f64; 2]>, p: [f64; 2]) {
    if out.last().is_none_or(|&q| !close(p, q)) {
        out.push(p);
    }
}

/// Observation angle: heading relative to the viewing ray.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObservationAngle(f64);

impl ObservationAngle {
    pub fn new(alpha: f64) -> Self {
        Self(normalize_angle(alpha))
    }

    /// Angle of an arbitrary-scale `(sin, cos)` pair; the pair is renormalized first.
    pub fn from_sin_cos(sin: f64, cos: f64) -> Self {
        let norm = sin.hypot(cos);
        if norm > 0.0 {
            Self::new((sin / norm).atan2(cos / norm))
        } else {
            Self(0.0)
        }
    }

    pub fn radians(self) -> f64 {
        self.0
    }

    pub fn sin_cos(self) -> (f64, f64) {
        self.0.sin_cos()
    }
}

pub fn alpha_from_yaw(yaw: f64, x: f64, z: f64) -> Result<ObservationAngle> {
    if !(z > 0.0) {
        return Err(Error::NonPositiveDepth(z));
    }
    Ok(ObservationAngle::new(yaw - x.atan2(z)))
}

pub fn yaw_from_alpha(alpha: ObservationAngle, x: f64, z: f64) -> Result<f64> {
    if !(z > 0.0) {
        return Err(Error::NonPositiveDepth(z));
    }
    Ok(normalize_angle(alpha.radians() + x.atan2(z)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_4;

    fn cube(x: f64, y: f64, z: f64, side: f64, yaw: f64) -> Box3D {
        Box3D::new([x, y, z], Dimensions { h: side, w: side, l: side }, yaw).unwrap()
    }

    fn intr() -> CameraIntrinsics {
        CameraIntrinsics::new(1000.0, 1000.0, 600.0, 100.0, 0.0, 1280, 288).unwrap()
    }

    #[test]
    fn normalize_is_half_open() {
        assert_eq!(normalize_angle(PI), -PI);
        assert_eq!(normalize_angle(-PI), -PI);
        assert!((normalize_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-15);
        assert!((normalize_angle(-10.0) - (-10.0 + 4.0 * PI)).abs() < 1e-12);
    }

    #[test]
    fn axis_aligned_corners() {
        let cs = corners3d(&cube(0.0, 0.0, 10.0, 2.0, 0.0));
        for p in cs {
            assert!((p[0].abs() - 1.0).abs() < 1e-12);
            assert!(p[1] == 0.0 || p[1] == -2.0);
            assert!((p[2] - 9.0).abs() < 1e-12 || (p[2] - 11.0).abs() < 1e-12);
        }
        assert_eq!(cs.iter().filter(|p| p[1] == 0.0).count(), 4);
    }

    #[test]
    fn yaw_pi_reflects_about_vertical_axis() {
        let b = Box3D::new([1.0, 1.5, 20.0], Dimensions { h: 1.5, w: 1.6, l: 3.9 }, 0.3).unwrap();
        let mut r = b;
        r.yaw = normalize_angle(b.yaw + PI);
        let (p, q) = (corners3d(&b), corners3d(&r));
        for i in 0..8 {
            assert!((q[i][0] - (2.0 * 1.0 - p[i][0])).abs() < 1e-12);
            assert!((q[i][2] - (2.0 * 20.0 - p[i][2])).abs() < 1e-12);
            assert_eq!(q[i][1], p[i][1]);
        }
    }

    #[test]
    fn corners_periodic_in_yaw() {
        let mut b = cube(0.5, 1.0, 12.0, 2.0, 0.7);
        let p = corners3d(&b);
        b.yaw += TAU;
        let q = corners3d(&b);
        for i in 0..8 {
            for k in 0..3 {
                assert!((p[i][k] - q[i][k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn centered_cube_projects_symmetrically() {
        let k = intr();
        let b2 = project_box(&cube(0.0, 1.0, 10.0, 2.0, 0.0), &k).unwrap();
        assert!((b2.center().0 - k.cx).abs() < 1e-9);
    }

    #[test]
    fn doubling_depth_halves_width() {
        let k = intr();
        // A flat plate facing the camera keeps near and far faces at one depth.
        let plate = |z| Box3D::new([0.0, 1.0, z], Dimensions { h: 1.0, w: 1e-9, l: 2.0 }, 0.0).unwrap();
        let w1 = project_box(&plate(10.0), &k).unwrap().width();
        let w2 = project_box(&plate(20.0), &k).unwrap().width();
        assert!((w1 / w2 - 2.0).abs() < 1e-6);
    }

    #[test]
    fn behind_camera_box() {
        let b = cube(0.0, 1.0, 0.5, 3.0, 0.0);
        assert_eq!(project_box(&b, &intr()), Err(Error::BehindCamera));
    }

    #[test]
    fn iou_2d_examples() {
        let a = Box2D::new(0.0, 0.0, 1.0, 1.0).unwrap();
        let b = Box2D::new(0.5, 0.0, 1.5, 1.0).unwrap();
        let far = Box2D::new(5.0, 5.0, 6.0, 6.0).unwrap();
        assert_eq!(iou_2d(&a, &a), 1.0);
        assert_eq!(iou_2d(&a, &far), 0.0);
        assert!((iou_2d(&a, &b) - 1.0 / 3.0).abs() < 1e-15);
        let empty = Box2D::new(1.0, 1.0, 1.0, 1.0).unwrap();
        assert_eq!(iou_2d(&empty, &empty), 0.0);
    }

    #[test]
    fn bev_identity_disjoint_and_rotation() {
        let a = cube(0.0, 1.0, 10.0, 1.0, 0.0);
        assert_eq!(iou_bev(&a, &a), 1.0);
        let mut flipped = a;
        flipped.yaw = -PI;
        assert_eq!(iou_bev(&a, &flipped), 1.0);
        assert_eq!(iou_bev(&a, &cube(100.0, 1.0, 10.0, 1.0, 0.0)), 0.0);

        // Unit square against itself rotated 45°: the intersection is a regular
        // octagon with side √2 − 1, area 2(√2 − 1).
        let r = cube(0.0, 1.0, 10.0, 1.0, FRAC_PI_4);
        let inter = 2.0 * (2f64.sqrt() - 1.0);
        let expect = inter / (2.0 - inter);
        assert!((iou_bev(&a, &r) - expect).abs() < 1e-12);
    }

    #[test]
    fn iou_3d_vertical_cases() {
        let a = cube(0.0, 1.0, 10.0, 1.0, 0.3);
        assert_eq!(iou_3d(&a, &a), 1.0);
        let mut up = a;
        up.center[1] -= 1.0;
        assert_eq!(iou_3d(&a, &up), 0.0);
        let mut half = a;
        half.center[1] -= 0.5;
        assert!((iou_3d(&a, &half) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_footprint_is_zero() {
        let a = Box3D::new([0.0, 1.0, 10.0], Dimensions { h: 1.0, w: 0.0, l: 2.0 }, 0.0).unwrap();
        assert_eq!(iou_bev(&a, &a), 0.0);
        assert_eq!(iou_3d(&a, &a), 0.0);
    }

    #[test]
    fn touching_boxes_are_zero() {
        let a = cube(0.0, 1.0, 10.0, 1.0, 0.0);
        let b = cube(1.0, 1.0, 10.0, 1.0, 0.0);
        assert_eq!(iou_bev(&a, &b), 0.0);
    }

    #[test]
    fn alpha_yaw_conversions() {
        assert_eq!(alpha_from_yaw(0.4, 0.0, 10.0).unwrap().radians(), 0.4);
        let a = alpha_from_yaw(0.4, 5.0, 5.0).unwrap().radians();
        assert!((a - normalize_angle(0.4 - FRAC_PI_4)).abs() < 1e-15);
        let yaw = yaw_from_alpha(alpha_from_yaw(2.9, -3.0, 7.0).unwrap(), -3.0, 7.0).unwrap();
        assert!((yaw - 2.9).abs() < 1e-12);
        assert!(alpha_from_yaw(0.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn sin_cos_renormalized() {
        let a = ObservationAngle::from_sin_cos(3.0 * 0.6, 3.0 * 0.8);
        assert!((a.radians() - 0.6f64.atan2(0.8)).abs() < 1e-15);
    }
}
