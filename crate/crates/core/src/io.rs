//! JSON-lines interchange formats: poses, detector boxes and generic records.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::camera::BoundingBox;
use crate::error::{Error, Result};
use crate::pose::Pose3D;

/// `{frame_id, action, joints: [[x, y, z] × J], root_index}`, millimeters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    pub frame_id: String,
    #[serde(default)]
    pub action: String,
    pub joints: Vec<[f64; 3]>,
    pub root_index: usize,
}

impl PoseRecord {
    pub fn pose(&self) -> Result<Pose3D> {
        Pose3D::new(self.joints.clone(), self.root_index)
    }

    pub fn from_pose(frame_id: impl Into<String>, action: impl Into<String>, pose: &Pose3D) -> Self {
        PoseRecord {
            frame_id: frame_id.into(),
            action: action.into(),
            joints: pose.joints.clone(),
            root_index: pose.root_index,
        }
    }
}

/// `{frame_id, x, y, w, h, score}` as written by an external person detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxRecord {
    pub frame_id: String,
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    #[serde(default)]
    pub score: f64,
}

impl BoxRecord {
    pub fn bbox(&self) -> BoundingBox {
        BoundingBox {
            x: self.x,
            y: self.y,
            w: self.w,
            h: self.h,
        }
    }
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| {
            Error::InvalidArgument(format!("{}:{}: {e}", path.display(), n + 1))
        })?;
        out.push(value);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_poses(path: &Path) -> Result<Vec<PoseRecord>> {
    let records: Vec<PoseRecord> = read_jsonl(path)?;
    for r in &records {
        r.pose()
            .map_err(|e| Error::InvalidArgument(format!("{}: frame {}: {e}", path.display(), r.frame_id)))?;
    }
    Ok(records)
}

pub fn write_json_pretty<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
