//! Graph of surface parts.
//!
//! A cloud is cut into parts by region growing with a curvature budget. Each
//! part gets a local reference frame built from its normal and the vertical
//! axis, so that anything expressed in that frame is invariant to rotations
//! about the vertical. Parts are connected along the surface (and optionally
//! through bounding-sphere overlap) with cone-based occlusion pruning.

mod canonical;
mod connect;
pub mod export;
mod grow;
mod lrf;

pub use canonical::canonicalize_part;
pub use connect::{connect_parts, surface_adjacency, ConnectConfig};
pub use grow::{grow_parts, grow_regions, point_adjacency};
pub use lrf::{compute_lrf, frame_from_normal, LocalFrame};

use rand::Rng;

use crate::geometry::{GlobalFrame, Mat3, PointCloud, Vec3};

#[derive(Debug, Clone, PartialEq)]
pub struct Part {
    /// Member point indices in admission order; the seed comes first.
    pub member_indices: Vec<usize>,
    pub seed_index: usize,
    /// Mean of member positions.
    pub center: Vec3,
    /// Largest member distance to `center`.
    pub bounding_radius: f64,
    /// Part normal (smallest principal axis, oriented by member normals).
    pub normal: Vec3,
    /// Rows are the frame axes `v1, v2, v3`.
    pub lrf: Mat3,
    pub degenerate_lrf: bool,
    /// Centered, rotated into the frame and scaled into the unit ball.
    pub canonical_points: Vec<Vec3>,
}

impl Part {
    /// Builds the geometric summary of a member set. Canonical points are left
    /// empty; see [`canonicalize_part`].
    pub fn from_members(cloud: &PointCloud, members: Vec<usize>, up: &GlobalFrame) -> Self {
        let n = members.len().max(1) as f64;
        let center = members.iter().map(|&i| cloud.positions[i]).sum::<Vec3>() / n;
        let bounding_radius = members
            .iter()
            .map(|&i| (cloud.positions[i] - center).norm())
            .fold(0.0, f64::max);
        let frame = compute_lrf(cloud, &members, up);
        Self {
            seed_index: members[0],
            member_indices: members,
            center,
            bounding_radius,
            normal: frame.normal,
            lrf: frame.rotation,
            degenerate_lrf: frame.degenerate,
            canonical_points: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrowConfig {
    /// Curvature budget in radians.
    pub angle_threshold: f64,
    pub max_parts: usize,
    pub points_per_part: usize,
    /// Neighbor count for clouds without faces.
    pub knn: usize,
    /// Budget multiplier applied when `real_data` is set.
    pub real_data_multiplier: f64,
    pub real_data: bool,
}

impl Default for GrowConfig {
    fn default() -> Self {
        Self {
            angle_threshold: 2.0,
            max_parts: 128,
            points_per_part: 128,
            knn: 10,
            real_data_multiplier: 3.0,
            real_data: false,
        }
    }
}

impl GrowConfig {
    pub fn effective_threshold(&self) -> f64 {
        if self.real_data {
            self.angle_threshold * self.real_data_multiplier
        } else {
            self.angle_threshold
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartGraph {
    pub parts: Vec<Part>,
    /// Sorted, unique `(i, j)`: `j` is a retained neighbor of `i`.
    pub edges: Vec<(usize, usize)>,
}

impl PartGraph {
    /// Neighbor lists mirroring `edges`.
    pub fn neighbor_lists(&self) -> Vec<Vec<usize>> {
        let mut lists = vec![Vec::new(); self.parts.len()];
        for &(i, j) in &self.edges {
            lists[i].push(j);
        }
        lists
    }
}

/// Grows parts, computes their frames, canonicalizes them and connects them.
pub fn build_part_graph(
    cloud: &PointCloud,
    grow: &GrowConfig,
    connect: &ConnectConfig,
    rng: &mut impl Rng,
) -> PartGraph {
    let up = GlobalFrame::default();
    let adjacency = point_adjacency(cloud, grow.knn);
    let regions = grow_regions(cloud, &adjacency, grow, rng);
    let mut parts: Vec<Part> = regions
        .into_iter()
        .map(|members| Part::from_members(cloud, members, &up))
        .collect();
    for part in &mut parts {
        part.canonical_points = canonicalize_part(part, cloud, grow.points_per_part, rng);
    }
    let surface = surface_adjacency(&parts, &adjacency, cloud.len());
    let edges = connect_parts(&parts, &surface, connect);
    PartGraph { parts, edges }
}
