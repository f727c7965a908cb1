use crate::boxes::{Box2D, Box3D};
use crate::kitti::LabelRecord;

/// A scored 2D + 3D detection of one object.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub category: String,
    pub box2d: Box2D,
    pub box3d: Box3D,
    /// Observation angle, radians.
    pub alpha: f64,
    pub score: f64,
}

impl Detection {
    pub fn from_label(record: &LabelRecord) -> Self {
        Self {
            category: record.category.clone(),
            box2d: record.bbox2d,
            box3d: record.box3d(),
            alpha: record.alpha,
            score: record.score.unwrap_or(1.0),
        }
    }

    pub fn to_label(&self) -> LabelRecord {
        LabelRecord {
            category: self.category.clone(),
            truncation: -1.0,
            occlusion: -1,
            alpha: self.alpha,
            bbox2d: self.box2d,
            dims: self.box3d.dims,
            location: self.box3d.center,
            rotation_y: self.box3d.yaw,
            score: Some(self.score),
        }
    }
}
