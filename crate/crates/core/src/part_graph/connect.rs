use std::collections::BTreeSet;

use super::Part;
use crate::geometry::{angle_between, SpatialIndex, Vec3};

#[derive(Debug, Clone, PartialEq)]
pub struct ConnectConfig {
    /// Also connect parts whose bounding spheres intersect.
    pub use_spatial_fallback: bool,
    /// A candidate is hidden when a retained closer neighbor lies within this
    /// angle of it, seen from the part center.
    pub cone_half_angle: f64,
    /// Candidates within this angle of the negated part normal are ignored.
    pub opposite_half_angle: f64,
}

impl Default for ConnectConfig {
    fn default() -> Self {
        Self {
            use_spatial_fallback: false,
            cone_half_angle: 20f64.to_radians(),
            opposite_half_angle: 45f64.to_radians(),
        }
    }
}

/// Ordered part pairs whose member points are adjacent on the surface.
pub fn surface_adjacency(
    parts: &[Part],
    point_adjacency: &[Vec<usize>],
    n_points: usize,
) -> BTreeSet<(usize, usize)> {
    let mut owner = vec![usize::MAX; n_points];
    for (pi, part) in parts.iter().enumerate() {
        for &m in &part.member_indices {
            owner[m] = pi;
        }
    }
    let mut pairs = BTreeSet::new();
    for (p, nbrs) in point_adjacency.iter().enumerate() {
        let a = owner[p];
        if a == usize::MAX {
            continue;
        }
        for &q in nbrs {
            let b = owner[q];
            if b != usize::MAX && b != a {
                pairs.insert((a, b));
                pairs.insert((b, a));
            }
        }
    }
    pairs
}

/// Connects parts.
///
/// Candidates of part `i` are its surface neighbors plus, with the spatial
/// fallback, every part whose bounding sphere intersects its own. Candidates
/// lying inside the cone around `-normal_i` are ignored. The rest are visited
/// by ascending distance and kept unless a kept closer candidate lies within
/// `cone_half_angle` of them. Coincident centers are always kept and never
/// hide anything.
pub fn connect_parts(
    parts: &[Part],
    surface: &BTreeSet<(usize, usize)>,
    cfg: &ConnectConfig,
) -> Vec<(usize, usize)> {
    let centers: Vec<Vec3> = parts.iter().map(|p| p.center).collect();
    let index = SpatialIndex::new(&centers);
    let max_radius = parts.iter().map(|p| p.bounding_radius).fold(0.0, f64::max);
    let opposite_cos = -cfg.opposite_half_angle.cos();

    let mut edges = Vec::new();
    for (i, part) in parts.iter().enumerate() {
        let mut candidates: BTreeSet<usize> =
            surface.range((i, 0)..(i + 1, 0)).map(|&(_, j)| j).collect();
        if cfg.use_spatial_fallback {
            for j in index.within_radius(&part.center, part.bounding_radius + max_radius) {
                if j != i
                    && (centers[j] - part.center).norm()
                        <= part.bounding_radius + parts[j].bounding_radius
                {
                    candidates.insert(j);
                }
            }
        }

        let mut ordered: Vec<(f64, usize, Vec3)> = candidates
            .into_iter()
            .filter_map(|j| {
                let d = centers[j] - part.center;
                let dist = d.norm();
                if dist > 0.0 && (d / dist).dot(&part.normal) < opposite_cos {
                    return None;
                }
                Some((dist, j, d))
            })
            .collect();
        ordered.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

        let mut kept: Vec<Vec3> = Vec::new();
        for (dist, j, d) in ordered {
            if dist > 0.0 {
                if kept
                    .iter()
                    .any(|k| angle_between(k, &d) < cfg.cone_half_angle)
                {
                    continue;
                }
                kept.push(d);
            }
            edges.push((i, j));
        }
    }
    edges.sort_unstable();
    edges
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Mat3;

    fn part(center: Vec3, radius: f64, normal: Vec3) -> Part {
        Part {
            member_indices: vec![0],
            seed_index: 0,
            center,
            bounding_radius: radius,
            normal,
            lrf: Mat3::identity(),
            degenerate_lrf: false,
            canonical_points: Vec::new(),
        }
    }

    fn spatial(cone_deg: f64) -> ConnectConfig {
        ConnectConfig {
            use_spatial_fallback: true,
            cone_half_angle: cone_deg.to_radians(),
            ..ConnectConfig::default()
        }
    }

    #[test]
    fn overlapping_spheres_connect_both_ways() {
        let parts = vec![
            part(Vec3::zeros(), 0.6, Vec3::z()),
            part(Vec3::x(), 0.6, Vec3::z()),
        ];
        let edges = connect_parts(&parts, &BTreeSet::new(), &spatial(20.0));
        assert_eq!(edges, vec![(0, 1), (1, 0)]);
        // Without the fallback and without surface contact there is nothing.
        assert!(connect_parts(&parts, &BTreeSet::new(), &ConnectConfig::default()).is_empty());
    }

    #[test]
    fn hidden_part_is_pruned() {
        // p1 - p2 - p3 collinear, p3 behind p2 as seen from p1.
        let parts = vec![
            part(Vec3::zeros(), 2.5, Vec3::z()),
            part(Vec3::x(), 0.5, Vec3::z()),
            part(Vec3::x() * 2.0, 0.5, Vec3::z()),
        ];
        let edges = connect_parts(&parts, &BTreeSet::new(), &spatial(20.0));
        assert!(edges.contains(&(0, 1)));
        assert!(!edges.contains(&(0, 2)));
    }

    #[test]
    fn lateral_neighbor_survives_cone() {
        let parts = vec![
            part(Vec3::zeros(), 3.0, Vec3::z()),
            part(Vec3::x(), 0.5, Vec3::z()),
            part(Vec3::new(0.0, 2.0, 0.0), 0.5, Vec3::z()),
        ];
        let edges = connect_parts(&parts, &BTreeSet::new(), &spatial(20.0));
        assert!(edges.contains(&(0, 1)) && edges.contains(&(0, 2)));
    }

    #[test]
    fn neighbors_behind_the_normal_are_ignored() {
        let parts = vec![
            part(Vec3::zeros(), 1.0, Vec3::z()),
            part(-Vec3::z() * 0.5, 1.0, Vec3::x()),
        ];
        let edges = connect_parts(&parts, &BTreeSet::new(), &spatial(20.0));
        assert_eq!(edges, vec![(1, 0)]);
    }

    #[test]
    fn surface_adjacency_pairs() {
        let parts = vec![
            Part {
                member_indices: vec![0, 1],
                ..part(Vec3::zeros(), 0.0, Vec3::z())
            },
            Part {
                member_indices: vec![2],
                ..part(Vec3::x(), 0.0, Vec3::z())
            },
        ];
        let adjacency = vec![vec![1], vec![0, 2], vec![1], vec![2]];
        let pairs = surface_adjacency(&parts, &adjacency, 4);
        assert_eq!(pairs.into_iter().collect::<Vec<_>>(), vec![(0, 1), (1, 0)]);
    }
}
