//! Point clouds, spatial indexing, normal estimation and farthest point
//! sampling.
//!
//! Everything downstream consumes a [`PointCloud`]: positions with unit
//! normals and, for meshes, triangle faces. Units are never interpreted.

mod fps;
pub mod io;
mod kdtree;
pub(crate) mod normals;

pub use fps::farthest_point_sampling;
pub use io::{load_cloud, sample_mesh_surface, CloudFormat};
pub use kdtree::SpatialIndex;
pub use normals::{estimate_normals, NormalEstimate};

use nalgebra::{Matrix3, Rotation3, Vector3};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Tolerance on `|n| - 1` for stored normals.
pub const NORMAL_TOLERANCE: f64 = 1e-6;

/// The fixed global frame. `z` is the gravity-aligned vertical axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlobalFrame {
    pub x: Vec3,
    pub y: Vec3,
    pub z: Vec3,
}

impl Default for GlobalFrame {
    fn default() -> Self {
        Self {
            x: Vec3::x(),
            y: Vec3::y(),
            z: Vec3::z(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub positions: Vec<Vec3>,
    pub normals: Vec<Vec3>,
    pub faces: Option<Vec<[usize; 3]>>,
}

impl PointCloud {
    /// Builds a cloud, renormalizing normals. Fails on length mismatch,
    /// non-finite values, zero normals or out-of-range face indices.
    pub fn new(
        positions: Vec<Vec3>,
        normals: Vec<Vec3>,
        faces: Option<Vec<[usize; 3]>>,
    ) -> Result<Self> {
        if positions.len() != normals.len() {
            return Err(Error::InvalidCloud(format!(
                "{} positions but {} normals",
                positions.len(),
                normals.len()
            )));
        }
        if let Some(i) = positions
            .iter()
            .position(|p| !p.iter().all(|c| c.is_finite()))
        {
            return Err(Error::InvalidCloud(format!("position {i} is not finite")));
        }
        let mut normals = normals;
        for (i, n) in normals.iter_mut().enumerate() {
            let norm = n.norm();
            if !norm.is_finite() || norm == 0.0 {
                return Err(Error::InvalidCloud(format!("normal {i} has zero length")));
            }
            *n /= norm;
        }
        if let Some(faces) = &faces {
            for (fi, f) in faces.iter().enumerate() {
                if f.iter().any(|&v| v >= positions.len()) {
                    return Err(Error::InvalidCloud(format!(
                        "face {fi} references a vertex past {}",
                        positions.len()
                    )));
                }
            }
        }
        Ok(Self {
            positions,
            normals,
            faces,
        })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn centroid(&self) -> Vec3 {
        if self.positions.is_empty() {
            return Vec3::zeros();
        }
        self.positions.iter().sum::<Vec3>() / self.positions.len() as f64
    }

    /// Radius of the sphere around the centroid that encloses every point.
    pub fn bounding_radius(&self) -> f64 {
        let c = self.centroid();
        self.positions
            .iter()
            .map(|p| (p - c).norm())
            .fold(0.0, f64::max)
    }

    /// Sorted 1-ring neighbors of every vertex, when the cloud is a mesh.
    pub fn mesh_adjacency(&self) -> Option<Vec<Vec<usize>>> {
        let faces = self.faces.as_ref()?;
        let mut adj = vec![Vec::new(); self.len()];
        for f in faces {
            for a in 0..3 {
                for b in 0..3 {
                    if a != b {
                        adj[f[a]].push(f[b]);
                    }
                }
            }
        }
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
        }
        Some(adj)
    }

    /// Applies a rigid rotation to positions and normals.
    pub fn rotated(&self, rot: &Rotation3<f64>) -> Self {
        Self {
            positions: self.positions.iter().map(|p| rot * p).collect(),
            normals: self.normals.iter().map(|n| rot * n).collect(),
            faces: self.faces.clone(),
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            positions: self.positions.iter().map(|p| p * s).collect(),
            normals: self.normals.clone(),
            faces: self.faces.clone(),
        }
    }

    pub fn translated(&self, t: &Vec3) -> Self {
        Self {
            positions: self.positions.iter().map(|p| p + t).collect(),
            normals: self.normals.clone(),
            faces: self.faces.clone(),
        }
    }

    /// Keeps the points whose index passes `keep`. Faces are dropped.
    pub fn filtered(&self, mut keep: impl FnMut(usize) -> bool) -> Self {
        let mut positions = Vec::new();
        let mut normals = Vec::new();
        for i in 0..self.len() {
            if keep(i) {
                positions.push(self.positions[i]);
                normals.push(self.normals[i]);
            }
        }
        Self {
            positions,
            normals,
            faces: None,
        }
    }
}

/// Rotation by `angle` radians about the vertical axis.
pub fn rotation_z(angle: f64) -> Rotation3<f64> {
    Rotation3::from_axis_angle(&Vec3::z_axis(), angle)
}

/// Angle in radians between two vectors, robust near 0 and pi.
pub fn angle_between(a: &Vec3, b: &Vec3) -> f64 {
    a.cross(b).norm().atan2(a.dot(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_renormalizes_and_validates() {
        let c = PointCloud::new(vec![Vec3::zeros()], vec![Vec3::new(0.0, 0.0, 2.0)], None).unwrap();
        assert!((c.normals[0].norm() - 1.0).abs() < NORMAL_TOLERANCE);

        assert!(PointCloud::new(vec![Vec3::zeros()], vec![], None).is_err());
        assert!(PointCloud::new(vec![Vec3::zeros()], vec![Vec3::zeros()], None).is_err());
        assert!(PointCloud::new(
            vec![Vec3::zeros(); 3],
            vec![Vec3::z(); 3],
            Some(vec![[0, 1, 3]])
        )
        .is_err());
    }

    #[test]
    fn mesh_adjacency_is_one_ring() {
        let c = PointCloud::new(
            vec![
                Vec3::zeros(),
                Vec3::x(),
                Vec3::y(),
                Vec3::new(1.0, 1.0, 0.0),
            ],
            vec![Vec3::z(); 4],
            Some(vec![[0, 1, 2], [1, 3, 2]]),
        )
        .unwrap();
        let adj = c.mesh_adjacency().unwrap();
        assert_eq!(adj[0], vec![1, 2]);
        assert_eq!(adj[1], vec![0, 2, 3]);
        assert_eq!(adj[3], vec![1, 2]);
    }

    #[test]
    fn angle_between_extremes() {
        assert_eq!(angle_between(&Vec3::z(), &Vec3::z()), 0.0);
        assert!((angle_between(&Vec3::z(), &-Vec3::z()) - std::f64::consts::PI).abs() < 1e-12);
        assert!(
            (angle_between(&Vec3::x(), &Vec3::y()) - std::f64::consts::FRAC_PI_2).abs() < 1e-12
        );
    }
}
