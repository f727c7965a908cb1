//! KITTI calibration and label files, plus the two image-space transforms
//! applied to them for training: horizontal mirroring and top cropping.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::boxes::{normalize_angle, Box2D, Box3D, Dimensions};
use crate::camera::CameraIntrinsics;
use crate::error::{Error, Result};

pub type Mat3x4 = [[f64; 4]; 3];
pub type Mat3 = [[f64; 3]; 3];

pub const DONT_CARE: &str = "DontCare";

const RECT_KEY: &str = "R0_rect";
const VELO_KEY: &str = "Tr_velo_to_cam";

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CalibrationFile {
    /// Camera projection matrices keyed `P0`..`P3`.
    pub projections: BTreeMap<String, Mat3x4>,
    pub rectification: Option<Mat3>,
    pub velo_to_cam: Option<Mat3x4>,
    /// Unrecognized keys in file order.
    pub extra: Vec<(String, Vec<f64>)>,
}

fn is_projection_key(key: &str) -> bool {
    matches!(key, "P0" | "P1" | "P2" | "P3")
}

fn mat3x4(v: &[f64]) -> Mat3x4 {
    let mut m = [[0.0; 4]; 3];
    for (i, x) in v.iter().enumerate() {
        m[i / 4][i % 4] = *x;
    }
    m
}

fn mat3(v: &[f64]) -> Mat3 {
    let mut m = [[0.0; 3]; 3];
    for (i, x) in v.iter().enumerate() {
        m[i / 3][i % 3] = *x;
    }
    m
}

fn parse_number(token: &str, line: usize) -> Result<f64> {
    let x: f64 = token
        .parse()
        .map_err(|_| Error::NonNumeric { line, token: token.to_string() })?;
    if !x.is_finite() {
        return Err(Error::Malformed { line, reason: format!("non-finite value {token}") });
    }
    Ok(x)
}

pub fn parse_calibration(text: &str) -> Result<CalibrationFile> {
    let mut calib = CalibrationFile::default();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            continue;
        }
        let (key, rest) = trimmed.split_once(':').ok_or_else(|| Error::Malformed {
            line,
            reason: "expected `KEY: values`".into(),
        })?;
        let key = key.trim();
        if key.is_empty() || key.contains(char::is_whitespace) {
            return Err(Error::Malformed { line, reason: format!("bad key {key:?}") });
        }
        let values = rest
            .split_whitespace()
            .map(|t| parse_number(t, line))
            .collect::<Result<Vec<_>>>()?;
        let expect = |n: usize| -> Result<()> {
            if values.len() == n {
                Ok(())
            } else {
                Err(Error::Malformed {
                    line,
                    reason: format!("{key} needs {n} values, found {}", values.len()),
                })
            }
        };
        if is_projection_key(key) {
            expect(12)?;
            calib.projections.insert(key.to_string(), mat3x4(&values));
        } else if key == RECT_KEY {
            expect(9)?;
            calib.rectification = Some(mat3(&values));
        } else if key == VELO_KEY {
            expect(12)?;
            calib.velo_to_cam = Some(mat3x4(&values));
        } else {
            calib.extra.push((key.to_string(), values));
        }
    }
    Ok(calib)
}

fn write_row<'a>(out: &mut String, key: &str, values: impl IntoIterator<Item = &'a f64>) {
    out.push_str(key);
    out.push(':');
    for v in values {
        let _ = write!(out, " {v}");
    }
    out.push('\n');
}

/// Canonical text form: shortest round-trip decimals, fixed key order.
pub fn write_calibration(calib: &CalibrationFile) -> String {
    let mut out = String::new();
    for (key, m) in &calib.projections {
        write_row(&mut out, key, m.iter().flatten());
    }
    if let Some(r) = &calib.rectification {
        write_row(&mut out, RECT_KEY, r.iter().flatten());
    }
    if let Some(t) = &calib.velo_to_cam {
        write_row(&mut out, VELO_KEY, t.iter().flatten());
    }
    for (key, values) in &calib.extra {
        write_row(&mut out, key, values);
    }
    out
}

impl CalibrationFile {
    /// Minimal calibration whose `P2` carries `intr` (no horizontal baseline term).
    pub fn from_intrinsics(intr: &CameraIntrinsics) -> Self {
        let p = [
            [intr.fx, 0.0, intr.cx, 0.0],
            [0.0, intr.fy, intr.cy, intr.ty],
            [0.0, 0.0, 1.0, 0.0],
        ];
        let mut projections = BTreeMap::new();
        projections.insert("P2".to_string(), p);
        Self {
            projections,
            rectification: Some([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]),
            velo_to_cam: Some([[0.0, -1.0, 0.0, 0.0], [0.0, 0.0, -1.0, 0.0], [1.0, 0.0, 0.0, 0.0]]),
            extra: Vec::new(),
        }
    }

    pub fn projection(&self, camera: &str) -> Result<&Mat3x4> {
        self.projections
            .get(camera)
            .ok_or_else(|| Error::MissingCamera(camera.to_string()))
    }

    pub fn intrinsics(&self, camera: &str, image_w: u32, image_h: u32) -> Result<CameraIntrinsics> {
        let p = self.projection(camera)?;
        CameraIntrinsics::new(p[0][0], p[1][1], p[0][2], p[1][2], p[1][3], image_w, image_h)
    }
}

/// Left-camera (`P2`) intrinsics.
pub fn intrinsics_from_calibration(
    calib: &CalibrationFile,
    camera: &str,
    image_w: u32,
    image_h: u32,
) -> Result<CameraIntrinsics> {
    calib.intrinsics(camera, image_w, image_h)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelRecord {
    pub category: String,
    pub truncation: f64,
    pub occlusion: i32,
    pub alpha: f64,
    pub bbox2d: Box2D,
    pub dims: Dimensions,
    /// Bottom-face center in the camera frame.
    pub location: [f64; 3],
    pub rotation_y: f64,
    pub score: Option<f64>,
}

impl LabelRecord {
    pub fn is_dont_care(&self) -> bool {
        self.category == DONT_CARE
    }

    pub fn box3d(&self) -> Box3D {
        Box3D { center: self.location, dims: self.dims, yaw: self.rotation_y }
    }
}

/// Number formatting for written label files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LabelPrecision {
    /// Two decimals for geometry and six for scores, as in devkit files.
    #[default]
    Devkit,
    /// Shortest round-trip decimals; `parse(write(r)) == r` for every record.
    Full,
}

pub fn parse_labels(text: &str) -> Result<Vec<LabelRecord>> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let fields: Vec<&str> = raw.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() != 15 && fields.len() != 16 {
            return Err(Error::Malformed {
                line,
                reason: format!("expected 15 or 16 fields, found {}", fields.len()),
            });
        }
        let num = |i: usize| parse_number(fields[i], line);
        let category = fields[0].to_string();
        let occlusion: i32 = fields[2]
            .parse()
            .map_err(|_| Error::NonNumeric { line, token: fields[2].to_string() })?;
        let bbox2d = Box2D { left: num(4)?, top: num(5)?, right: num(6)?, bottom: num(7)? };
        let dims = Dimensions { h: num(8)?, w: num(9)?, l: num(10)? };
        let location = [num(11)?, num(12)?, num(13)?];
        let mut record = LabelRecord {
            category,
            truncation: num(1)?,
            occlusion,
            alpha: num(3)?,
            bbox2d,
            dims,
            location,
            rotation_y: num(14)?,
            score: if fields.len() == 16 { Some(num(15)?) } else { None },
        };
        if !record.is_dont_care() {
            let bad = |reason: String| Error::Malformed { line, reason };
            if dims.h < 0.0 || dims.w < 0.0 || dims.l < 0.0 {
                return Err(bad(format!("negative dimensions ({}, {}, {})", dims.h, dims.w, dims.l)));
            }
            if location[2] < 0.0 {
                return Err(bad(format!("negative depth {}", location[2])));
            }
            if bbox2d.right < bbox2d.left || bbox2d.bottom < bbox2d.top {
                return Err(bad("inverted 2D box".into()));
            }
            record.alpha = normalize_angle(record.alpha);
            record.rotation_y = normalize_angle(record.rotation_y);
        }
        out.push(record);
    }
    Ok(out)
}

pub fn write_labels(records: &[LabelRecord], precision: LabelPrecision) -> String {
    let mut out = String::new();
    for r in records {
        let geometry = [
            r.alpha,
            r.bbox2d.left,
            r.bbox2d.top,
            r.bbox2d.right,
            r.bbox2d.bottom,
            r.dims.h,
            r.dims.w,
            r.dims.l,
            r.location[0],
            r.location[1],
            r.location[2],
            r.rotation_y,
        ];
        match precision {
            LabelPrecision::Devkit => {
                let _ = write!(out, "{} {:.2} {}", r.category, r.truncation, r.occlusion);
                for g in geometry {
                    let _ = write!(out, " {g:.2}");
                }
                if let Some(s) = r.score {
                    let _ = write!(out, " {s:.6}");
                }
            }
            LabelPrecision::Full => {
                let _ = write!(out, "{} {} {}", r.category, r.truncation, r.occlusion);
                for g in geometry {
                    let _ = write!(out, " {g}");
                }
                if let Some(s) = r.score {
                    let _ = write!(out, " {s}");
                }
            }
        }
        out.push('\n');
    }
    out
}

/// `000042.txt` for frame 42.
pub fn frame_file_name(id: u32) -> String {
    format!("{id:06}.txt")
}

/// Frame ID of a six-digit `.txt` file name.
pub fn parse_frame_file_name(name: &str) -> Option<u32> {
    let stem = name.strip_suffix(".txt")?;
    if stem.len() != 6 || !stem.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    stem.parse().ok()
}

/// Mirror labels and calibration about the vertical image centerline.
///
/// Projection matrices become `M · P · S` with `M` the pixel mirror
/// `u ↦ W − 1 − u` and `S` the 3D mirror `x ↦ −x`, so `c_x ↦ W − 1 − c_x`
/// and every mirrored point still projects onto the mirrored pixel.
pub fn flip_horizontal(
    labels: &[LabelRecord],
    calib: &CalibrationFile,
    image_width: u32,
) -> Result<(Vec<LabelRecord>, CalibrationFile)> {
    if image_width == 0 {
        return Err(Error::InvalidParameter("image width must be positive".into()));
    }
    let edge = f64::from(image_width) - 1.0;
    let flipped = labels
        .iter()
        .map(|r| {
            let mut f = r.clone();
            f.bbox2d.left = edge - r.bbox2d.right;
            f.bbox2d.right = edge - r.bbox2d.left;
            if !r.is_dont_care() {
                f.location[0] = -r.location[0];
                f.rotation_y = normalize_angle(std::f64::consts::PI - r.rotation_y);
                f.alpha = normalize_angle(std::f64::consts::PI - r.alpha);
            }
            f
        })
        .collect();

    let mut out = calib.clone();
    for p in out.projections.values_mut() {
        let src = *p;
        for j in 0..4 {
            let sign = if j == 0 { -1.0 } else { 1.0 };
            p[0][j] = sign * (edge * src[2][j] - src[0][j]);
            p[1][j] = sign * src[1][j];
            p[2][j] = sign * src[2][j];
        }
    }
    Ok((flipped, out))
}

/// Remove the top `crop_rows` image rows: the principal point moves up and
/// 2D boxes shift with it (clamped at zero); 3D fields are untouched.
pub fn crop_top(
    calib: &CalibrationFile,
    labels: &[LabelRecord],
    crop_rows: f64,
) -> Result<(CalibrationFile, Vec<LabelRecord>)> {
    if !(crop_rows >= 0.0) || !crop_rows.is_finite() {
        return Err(Error::InvalidParameter(format!("crop rows must be >= 0, got {crop_rows}")));
    }
    let mut out = calib.clone();
    for p in out.projections.values_mut() {
        for j in 0..4 {
            p[1][j] -= crop_rows * p[2][j];
        }
    }
    let labels = labels
        .iter()
        .map(|r| {
            let mut c = r.clone();
            c.bbox2d.top = (r.bbox2d.top - crop_rows).max(0.0);
            c.bbox2d.bottom = (r.bbox2d.bottom - crop_rows).max(0.0);
            c
        })
        .collect();
    Ok((out, labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    const KITTI_CALIB: &str = "\
P0: 7.215377e+02 0.000000e+00 6.095593e+02 0.000000e+00 0.000000e+00 7.215377e+02 1.728540e+02 0.000000e+00 0.000000e+00 0.000000e+00 1.000000e+00 0.000000e+00
P1: 7.215377e+02 0.000000e+00 6.095593e+02 -3.875744e+02 0.000000e+00 7.215377e+02 1.728540e+02 0.000000e+00 0.000000e+00 0.000000e+00 1.000000e+00 0.000000e+00
P2: 7.215377e+02 0.000000e+00 6.095593e+02 4.485728e+01 0.000000e+00 7.215377e+02 1.728540e+02 2.163791e-01 0.000000e+00 0.000000e+00 1.000000e+00 2.745884e-03
P3: 7.215377e+02 0.000000e+00 6.095593e+02 -3.395242e+02 0.000000e+00 7.215377e+02 1.728540e+02 2.199936e+00 0.000000e+00 0.000000e+00 1.000000e+00 2.729905e-03
R0_rect: 9.999239e-01 9.837760e-03 -7.445048e-03 -9.869795e-03 9.999421e-01 -4.278459e-03 7.402527e-03 4.351614e-03 9.999631e-01
Tr_velo_to_cam: 7.533745e-03 -9.999714e-01 -6.166020e-04 -4.069766e-03 1.480249e-02 7.280733e-04 -9.998902e-01 -7.631618e-02 9.998621e-01 7.523790e-03 1.480755e-02 -2.717806e-01
Tr_imu_to_velo: 9.999976e-01 7.553071e-04 -2.035826e-03 -8.086759e-01 -7.854027e-04 9.998898e-01 -1.482298e-02 3.195559e-01 2.024406e-03 1.482454e-02 9.998881e-01 -7.997231e-01
";

    const LABELS: &str = "\
Car 0.00 0 -1.58 587.01 173.33 614.12 200.12 1.65 1.67 3.64 -0.65 1.71 46.70 -1.59
Pedestrian 0.00 0 0.21 423.17 173.67 433.17 224.03 1.60 0.38 0.30 -5.12 1.85 24.31 0.01
DontCare -1 -1 -10 605.53 171.23 620.35 186.40 -1 -1 -1 -1000 -1000 -1000 -10
";

    #[test]
    fn parses_devkit_calibration() {
        let c = parse_calibration(KITTI_CALIB).unwrap();
        let p2 = c.projection("P2").unwrap();
        assert_eq!(p2[0], [721.5377, 0.0, 609.5593, 44.85728]);
        assert_eq!(p2[1][3], 0.2163791);
        assert_eq!(c.extra.len(), 1);
        assert_eq!(c.extra[0].0, "Tr_imu_to_velo");
        assert!(c.rectification.is_some() && c.velo_to_cam.is_some());
    }

    #[test]
    fn calibration_round_trip() {
        let c = parse_calibration(KITTI_CALIB).unwrap();
        let text = write_calibration(&c);
        let again = parse_calibration(&text).unwrap();
        assert_eq!(again, c);
        assert_eq!(write_calibration(&again), text);
    }

    #[test]
    fn calibration_errors() {
        let short = "P2: 1 2 3\n";
        assert!(matches!(parse_calibration(short), Err(Error::Malformed { line: 1, .. })));
        let bad = "\nP2: 1 2 3 4 5 6 7 8 9 10 11 x\n";
        assert_eq!(
            parse_calibration(bad),
            Err(Error::NonNumeric { line: 2, token: "x".into() })
        );
        assert!(matches!(parse_calibration("no colon here"), Err(Error::Malformed { .. })));
    }

    #[test]
    fn empty_calibration_has_no_p2() {
        let c = parse_calibration("").unwrap();
        assert_eq!(c.intrinsics("P2", 1242, 375), Err(Error::MissingCamera("P2".into())));
    }

    #[test]
    fn intrinsics_extraction() {
        let c = parse_calibration("P2: 1000 0 600 0 0 1000 100 0 0 0 1 0\n").unwrap();
        let k = intrinsics_from_calibration(&c, "P2", 1280, 288).unwrap();
        assert_eq!((k.fx, k.fy, k.cx, k.cy, k.ty), (1000.0, 1000.0, 600.0, 100.0, 0.0));
        let c = parse_calibration("P3: 1 0 0 0 0 1 0 -3.3 0 0 1 0\n").unwrap();
        assert_eq!(c.intrinsics("P3", 10, 10).unwrap().ty, -3.3);
        assert_eq!(c.intrinsics("P5", 10, 10), Err(Error::MissingCamera("P5".into())));
    }

    #[test]
    fn label_field_counts() {
        let recs = parse_labels(LABELS).unwrap();
        assert_eq!(recs.len(), 3);
        assert_eq!(recs[0].score, None);
        assert!(recs[2].is_dont_care());
        assert_eq!(recs[2].alpha, -10.0);
        let with_score = parse_labels("Car -1 -1 0.5 1 2 3 4 1.5 1.6 3.9 0.1 1.6 20.0 0.4 0.87\n").unwrap();
        assert_eq!(with_score[0].score, Some(0.87));
        assert!(parse_labels("Car 0 0 0 1 2 3 4\n").is_err());
        assert!(matches!(
            parse_labels("Car 0 x 0 1 2 3 4 1 1 1 0 0 1 0\n"),
            Err(Error::NonNumeric { line: 1, .. })
        ));
    }

    #[test]
    fn angles_normalized_on_read() {
        let recs = parse_labels("Car 0 0 3.5 1 2 3 4 1 1 1 0 0 1 -4.0\n").unwrap();
        assert!((recs[0].alpha - (3.5 - 2.0 * PI)).abs() < 1e-12);
        assert!((recs[0].rotation_y - (-4.0 + 2.0 * PI)).abs() < 1e-12);
    }

    #[test]
    fn devkit_text_is_a_fixpoint() {
        let recs = parse_labels(LABELS).unwrap();
        let text = write_labels(&recs, LabelPrecision::Devkit);
        assert_eq!(write_labels(&parse_labels(&text).unwrap(), LabelPrecision::Devkit), text);
        assert!(text.starts_with("Car 0.00 0 -1.58 587.01 173.33 614.12 200.12 1.65"));
    }

    #[test]
    fn full_precision_round_trip() {
        let recs = parse_labels("Car 0.1 1 0.123456789 1.5 2.25 3.125 4.0625 1.53 1.63 3.88 0.1 1.65 20.123456 0.4 0.9\n").unwrap();
        let back = parse_labels(&write_labels(&recs, LabelPrecision::Full)).unwrap();
        assert_eq!(back, recs);
    }

    #[test]
    fn frame_names() {
        assert_eq!(frame_file_name(42), "000042.txt");
        assert_eq!(parse_frame_file_name("003769.txt"), Some(3769));
        assert_eq!(parse_frame_file_name("42.txt"), None);
    }

    fn on_axis_car() -> LabelRecord {
        LabelRecord {
            category: "Car".into(),
            truncation: 0.0,
            occlusion: 0,
            alpha: FRAC_PI_2,
            bbox2d: Box2D { left: 100.0, top: 50.0, right: 200.0, bottom: 80.0 },
            dims: Dimensions { h: 1.5, w: 1.6, l: 3.9 },
            location: [0.0, 1.65, 20.0],
            rotation_y: FRAC_PI_2,
            score: None,
        }
    }

    #[test]
    fn flip_examples() {
        let calib = parse_calibration(KITTI_CALIB).unwrap();
        let (f, fc) = flip_horizontal(&[on_axis_car()], &calib, 1280).unwrap();
        assert_eq!(f[0].location[0], 0.0);
        assert!((f[0].rotation_y - FRAC_PI_2).abs() < 1e-15);
        let b = f[0].bbox2d;
        assert_eq!((b.left, b.top, b.right, b.bottom), (1079.0, 50.0, 1179.0, 80.0));
        let p2 = fc.projection("P2").unwrap();
        assert!((p2[0][2] - (1279.0 - 609.5593)).abs() < 1e-9);
        assert_eq!(p2[0][0], 721.5377);
        assert!(flip_horizontal(&[], &calib, 0).is_err());
    }

    #[test]
    fn flip_is_an_involution() {
        let calib = parse_calibration(KITTI_CALIB).unwrap();
        let labels = parse_labels(LABELS).unwrap();
        let (once, c1) = flip_horizontal(&labels, &calib, 1242).unwrap();
        let (twice, c2) = flip_horizontal(&once, &c1, 1242).unwrap();
        for (a, b) in labels.iter().zip(&twice) {
            assert!((a.bbox2d.left - b.bbox2d.left).abs() < 1e-9);
            assert!((a.bbox2d.right - b.bbox2d.right).abs() < 1e-9);
            assert!((a.location[0] - b.location[0]).abs() < 1e-9);
            assert!((a.rotation_y - b.rotation_y).abs() < 1e-9);
            assert!((a.alpha - b.alpha).abs() < 1e-9);
        }
        for (k, p) in &calib.projections {
            let q = c2.projection(k).unwrap();
            for i in 0..3 {
                for j in 0..4 {
                    assert!((p[i][j] - q[i][j]).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn crop_examples() {
        let calib = parse_calibration("P2: 1000 0 600 0 0 1000 185 0 0 0 1 0\n").unwrap();
        let mut car = on_axis_car();
        car.bbox2d.top = 30.0;
        car.bbox2d.bottom = 180.0;
        let (cc, cl) = crop_top(&calib, &[car.clone()], 100.0).unwrap();
        assert_eq!(cc.intrinsics("P2", 1, 1).unwrap().cy, 85.0);
        assert_eq!(cl[0].bbox2d.top, 0.0);
        assert_eq!(cl[0].bbox2d.bottom, 80.0);
        assert_eq!(cl[0].location, car.location);
        let (same_c, same_l) = crop_top(&calib, &[car.clone()], 0.0).unwrap();
        assert_eq!(same_c, calib);
        assert_eq!(same_l[0], car);
        assert!(crop_top(&calib, &[], -1.0).is_err());
    }
}
