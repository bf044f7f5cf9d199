//! Dataset access: point-cloud and label files, the dataset manifest, and
//! the persisted object bank.

mod bank;
mod cloud;
mod labels;
mod manifest;

pub use bank::{bank_build, bank_sample, load_bank, save_bank, ObjectBank, ObjectSample};
pub use cloud::{read_cloud, write_cloud};
pub use labels::{read_labels, write_labels, LabelRecord};
pub use manifest::{load_dataset, read_manifest, write_manifest, ManifestEntry};

use crate::geometry::{Box3D, PointCloud};

/// A ground-truth box with its category.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledBox {
    pub box3d: Box3D,
    pub category: String,
}

/// One LiDAR sweep with its ground-truth boxes.
#[derive(Clone, Debug)]
pub struct SceneFrame {
    pub frame_id: String,
    pub scene_id: String,
    pub cloud: PointCloud,
    pub boxes: Vec<LabeledBox>,
}

impl SceneFrame {
    /// Categories present in this frame's ground truth.
    pub fn categories(&self) -> std::collections::BTreeSet<&str> {
        self.boxes.iter().map(|b| b.category.as_str()).collect()
    }
}
