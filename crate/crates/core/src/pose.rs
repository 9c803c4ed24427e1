//! Camera-space 3D poses.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `J` joint positions in camera space (millimeters) with a designated root
/// joint (the pelvis in the Human3.6M convention).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pose3D {
    pub joints: Vec<[f64; 3]>,
    pub root_index: usize,
}

impl Pose3D {
    pub fn new(joints: Vec<[f64; 3]>, root_index: usize) -> Result<Self> {
        let pose = Pose3D { joints, root_index };
        pose.validate()?;
        Ok(pose)
    }

    pub fn validate(&self) -> Result<()> {
        if self.joints.is_empty() {
            return Err(Error::InvalidArgument("pose has no joints".into()));
        }
        if self.root_index >= self.joints.len() {
            return Err(Error::InvalidArgument(format!(
                "root index {} out of range for {} joints",
                self.root_index,
                self.joints.len()
            )));
        }
        if self.joints.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("pose has non-finite coordinates".into()));
        }
        Ok(())
    }

    pub fn num_joints(&self) -> usize {
        self.joints.len()
    }

    pub fn root(&self) -> [f64; 3] {
        self.joints[self.root_index]
    }

    /// Subtracts the root joint from every joint. The root becomes exactly zero.
    pub fn root_relative(&self) -> Pose3D {
        let root = self.root();
        Pose3D {
            joints: self
                .joints
                .iter()
                .map(|p| [p[0] - root[0], p[1] - root[1], p[2] - root[2]])
                .collect(),
            root_index: self.root_index,
        }
    }

    pub fn translated(&self, t: [f64; 3]) -> Pose3D {
        Pose3D {
            joints: self
                .joints
                .iter()
                .map(|p| [p[0] + t[0], p[1] + t[1], p[2] + t[2]])
                .collect(),
            root_index: self.root_index,
        }
    }

    /// Checks that two poses can be compared joint by joint.
    pub fn check_compatible(&self, other: &Pose3D) -> Result<()> {
        if self.joints.len() != other.joints.len() {
            return Err(Error::LengthMismatch {
                left: self.joints.len(),
                right: other.joints.len(),
            });
        }
        if self.root_index != other.root_index {
            return Err(Error::InvalidArgument(format!(
                "root index mismatch: {} vs {}",
                self.root_index, other.root_index
            )));
        }
        Ok(())
    }
}

/// Free-function form of [`Pose3D::root_relative`].
pub fn root_relative(pose: &Pose3D) -> Pose3D {
    pose.root_relative()
}
