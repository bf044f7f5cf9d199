//! Label CSV files: one row per ground-truth box,
//! `frame_id,category,cx,cy,cz,l,w,h,yaw` with 6-decimal fixed formatting.

use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::Box3D;

pub const LABEL_HEADER: [&str; 9] = [
    "frame_id", "category", "cx", "cy", "cz", "l", "w", "h", "yaw",
];

/// One parsed label row.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelRecord {
    pub frame_id: String,
    pub category: String,
    pub box3d: Box3D,
}

pub fn read_labels(path: &Path) -> Result<Vec<LabelRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::format(path, e.to_string()))?;
    {
        let headers = reader
            .headers()
            .map_err(|e| Error::format(path, e.to_string()))?;
        let got: Vec<&str> = headers.iter().collect();
        if got != LABEL_HEADER {
            return Err(Error::format(path, format!("unexpected header {got:?}")));
        }
    }

    let mut out = Vec::new();
    for (idx, row) in reader.records().enumerate() {
        let line = idx + 2; // header is line 1
        let row = row.map_err(|e| Error::format(path, format!("line {line}: {e}")))?;
        if row.len() != 9 {
            return Err(Error::format(
                path,
                format!("line {line}: expected 9 fields, got {}", row.len()),
            ));
        }
        let field = |i: usize| -> Result<f64> {
            let raw = row.get(i).unwrap();
            let v: f64 = raw
                .parse()
                .map_err(|_| Error::format(path, format!("line {line}: bad number `{raw}`")))?;
            if !v.is_finite() {
                return Err(Error::format(
                    path,
                    format!("line {line}: non-finite value `{raw}`"),
                ));
            }
            Ok(v)
        };
        let category = row.get(1).unwrap().to_string();
        if category.is_empty() {
            return Err(Error::format(path, format!("line {line}: empty category")));
        }
        let box3d = Box3D::new(
            field(2)?,
            field(3)?,
            field(4)?,
            field(5)?,
            field(6)?,
            field(7)?,
            field(8)?,
        )
        .map_err(|e| Error::format(path, format!("line {line}: {e}")))?;
        out.push(LabelRecord {
            frame_id: row.get(0).unwrap().to_string(),
            category,
            box3d,
        });
    }
    Ok(out)
}

pub fn write_labels(records: &[LabelRecord], path: &Path) -> Result<()> {
    let mut writer =
        csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    writer
        .write_record(LABEL_HEADER)
        .map_err(|e| Error::format(path, e.to_string()))?;
    for rec in records {
        let b = &rec.box3d;
        writer
            .write_record([
                rec.frame_id.as_str(),
                rec.category.as_str(),
                &format!("{:.6}", b.cx),
                &format!("{:.6}", b.cy),
                &format!("{:.6}", b.cz),
                &format!("{:.6}", b.l),
                &format!("{:.6}", b.w),
                &format!("{:.6}", b.h),
                &format!("{:.6}", b.yaw),
            ])
            .map_err(|e| Error::format(path, e.to_string()))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}
