use crate::geometry::normals::{covariance, least_eigenvector};
use crate::geometry::{GlobalFrame, Mat3, PointCloud, Vec3};

/// Horizontal component below which the part normal counts as vertical.
const VERTICAL_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalFrame {
    /// Rows `v1, v2, v3`.
    pub rotation: Mat3,
    /// The part normal `e3`.
    pub normal: Vec3,
    pub degenerate: bool,
}

/// Frame built from the part normal and the vertical:
///
/// ```text
/// v1 = normalize(e3 - (e3 . z) z)
/// v3 = z
/// v2 = v3 x v1
/// ```
///
/// `e3` is the smallest principal axis of the members, flipped to agree with
/// their mean normal. Parts with fewer than three members, or collinear
/// members, use the mean normal directly. A vertical `e3` yields the identity
/// and the degenerate flag.
pub fn compute_lrf(cloud: &PointCloud, members: &[usize], up: &GlobalFrame) -> LocalFrame {
    let mean_normal: Vec3 = members.iter().map(|&i| cloud.normals[i]).sum();
    let fallback = mean_normal.try_normalize(0.0).unwrap_or(up.z);
    let e3 = if members.len() >= 3 {
        let (_, cov) = covariance(members.iter().map(|&i| &cloud.positions[i]));
        match least_eigenvector(&cov) {
            Some(e) if e.dot(&mean_normal) < 0.0 => -e,
            Some(e) => e,
            None => fallback,
        }
    } else {
        fallback
    };
    frame_from_normal(&e3, up)
}

/// The frame for a given part normal.
pub fn frame_from_normal(e3: &Vec3, up: &GlobalFrame) -> LocalFrame {
    let z = up.z;
    let horizontal = e3 - z * e3.dot(&z);
    let norm = horizontal.norm();
    if norm < VERTICAL_EPS {
        return LocalFrame {
            rotation: Mat3::identity(),
            normal: *e3,
            degenerate: true,
        };
    }
    let v1 = horizontal / norm;
    let v2 = z.cross(&v1);
    LocalFrame {
        rotation: Mat3::from_rows(&[v1.transpose(), v2.transpose(), z.transpose()]),
        normal: *e3,
        degenerate: false,
    }
}
