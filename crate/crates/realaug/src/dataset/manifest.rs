//! Dataset manifest: `frame_id,scene_id,cloud_path`, with cloud paths
//! resolved relative to the manifest's directory.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};

use super::cloud::read_cloud;
use super::labels::read_labels;
use super::{LabeledBox, SceneFrame};

pub const MANIFEST_HEADER: [&str; 3] = ["frame_id", "scene_id", "cloud_path"];
pub const MANIFEST_FILE: &str = "manifest.csv";
pub const LABELS_FILE: &str = "labels.csv";

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub frame_id: String,
    pub scene_id: String,
    pub cloud_path: String,
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::format(path, e.to_string()))?;
    {
        let headers = reader
            .headers()
            .map_err(|e| Error::format(path, e.to_string()))?;
        let got: Vec<&str> = headers.iter().collect();
        if got != MANIFEST_HEADER {
            return Err(Error::format(path, format!("unexpected header {got:?}")));
        }
    }
    let mut out = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (idx, row) in reader.records().enumerate() {
        let line = idx + 2;
        let row = row.map_err(|e| Error::format(path, format!("line {line}: {e}")))?;
        if row.len() != 3 {
            return Err(Error::format(
                path,
                format!("line {line}: expected 3 fields"),
            ));
        }
        let entry = ManifestEntry {
            frame_id: row.get(0).unwrap().to_string(),
            scene_id: row.get(1).unwrap().to_string(),
            cloud_path: row.get(2).unwrap().to_string(),
        };
        if !seen.insert(entry.frame_id.clone()) {
            return Err(Error::format(
                path,
                format!("line {line}: duplicate frame_id `{}`", entry.frame_id),
            ));
        }
        out.push(entry);
    }
    Ok(out)
}

pub fn write_manifest(entries: &[ManifestEntry], path: &Path) -> Result<()> {
    let mut writer =
        csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    writer
        .write_record(MANIFEST_HEADER)
        .map_err(|e| Error::format(path, e.to_string()))?;
    for e in entries {
        writer
            .write_record([
                e.frame_id.as_str(),
                e.scene_id.as_str(),
                e.cloud_path.as_str(),
            ])
            .map_err(|err| Error::format(path, err.to_string()))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

/// Load a whole dataset directory (`manifest.csv`, `labels.csv`, clouds) in
/// manifest order.
pub fn load_dataset(dir: &Path, fields_per_point: usize) -> Result<Vec<SceneFrame>> {
    let manifest_path = dir.join(MANIFEST_FILE);
    if !manifest_path.is_file() {
        return Err(Error::MissingInput(manifest_path.display().to_string()));
    }
    let entries = read_manifest(&manifest_path)?;

    let labels_path = dir.join(LABELS_FILE);
    let mut by_frame: HashMap<String, Vec<LabeledBox>> = HashMap::new();
    if labels_path.is_file() {
        for rec in read_labels(&labels_path)? {
            by_frame.entry(rec.frame_id).or_default().push(LabeledBox {
                box3d: rec.box3d,
                category: rec.category,
            });
        }
    }

    entries
        .into_iter()
        .map(|e| {
            let cloud = read_cloud(&dir.join(&e.cloud_path), fields_per_point)?;
            Ok(SceneFrame {
                boxes: by_frame.remove(&e.frame_id).unwrap_or_default(),
                frame_id: e.frame_id,
                scene_id: e.scene_id,
                cloud,
            })
        })
        .collect()
}
