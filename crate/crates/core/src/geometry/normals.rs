use nalgebra::SymmetricEigen;

use super::{Mat3, PointCloud, SpatialIndex, Vec3};
use crate::error::{Error, Result};

/// Relative eigenvalue floor below which a neighborhood counts as rank-deficient.
const RANK_EPS: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct NormalEstimate {
    pub cloud: PointCloud,
    /// Points whose neighborhood was coincident or collinear; their normal is `z`.
    pub degenerate: Vec<usize>,
}

/// Smallest-eigenvalue eigenvector of a symmetric 3x3 matrix, or `None`
/// when the two smallest eigenvalues cannot be told apart.
pub(crate) fn least_eigenvector(cov: &Mat3) -> Option<Vec3> {
    let eig = SymmetricEigen::new(*cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let largest = eig.eigenvalues[order[2]];
    if largest <= 0.0 || eig.eigenvalues[order[1]] <= RANK_EPS * largest {
        return None;
    }
    Some(eig.eigenvectors.column(order[0]).normalize())
}

pub(crate) fn covariance<'a>(points: impl Iterator<Item = &'a Vec3> + Clone) -> (Vec3, Mat3) {
    let mut n = 0usize;
    let mut mean = Vec3::zeros();
    for p in points.clone() {
        mean += p;
        n += 1;
    }
    mean /= n.max(1) as f64;
    let mut cov = Mat3::zeros();
    for p in points {
        let d = p - mean;
        cov += d * d.transpose();
    }
    (mean, cov / n.max(1) as f64)
}

/// PCA normals over the `k` nearest neighbors (the point itself included),
/// oriented away from the cloud centroid.
pub fn estimate_normals(cloud: &PointCloud, k: usize) -> Result<NormalEstimate> {
    let n = cloud.len();
    if k < 3 || n < k {
        return Err(Error::InvalidArgument(format!(
            "normal estimation needs N >= k >= 3, got N={n}, k={k}"
        )));
    }
    let index = SpatialIndex::new(&cloud.positions);
    let centroid = cloud.centroid();
    let mut normals = Vec::with_capacity(n);
    let mut degenerate = Vec::new();
    for (i, p) in cloud.positions.iter().enumerate() {
        let nbrs = index.knn(p, k);
        let (_, cov) = covariance(nbrs.iter().map(|&j| &cloud.positions[j]));
        match least_eigenvector(&cov) {
            Some(mut normal) => {
                if normal.dot(&(p - centroid)) < 0.0 {
                    normal = -normal;
                }
                normals.push(normal);
            }
            None => {
                log::warn!("point {i}: degenerate neighborhood, normal set to +z");
                degenerate.push(i);
                normals.push(Vec3::z());
            }
        }
    }
    let cloud = PointCloud::new(cloud.positions.clone(), normals, cloud.faces.clone())?;
    Ok(NormalEstimate { cloud, degenerate })
}
