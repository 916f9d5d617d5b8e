use std::collections::VecDeque;

use rand::Rng;

use super::{GrowConfig, Part};
use crate::geometry::{angle_between, GlobalFrame, PointCloud, SpatialIndex};

/// Mesh 1-ring when the cloud has faces, k nearest neighbors otherwise.
pub fn point_adjacency(cloud: &PointCloud, knn: usize) -> Vec<Vec<usize>> {
    match cloud.mesh_adjacency() {
        Some(adj) => adj,
        None => SpatialIndex::new(&cloud.positions).knn_graph(knn),
    }
}

/// Region growing with a per-part curvature budget.
///
/// Returns member lists (seed first). Admitting point `q` from frontier point
/// `f` costs `angle(n_f, n_q)`; a part stops once its accumulated cost reaches
/// the threshold or its frontier is empty. Points facing away from the seed
/// normal are never admitted and every point joins at most one part.
pub fn grow_regions(
    cloud: &PointCloud,
    adjacency: &[Vec<usize>],
    cfg: &GrowConfig,
    rng: &mut impl Rng,
) -> Vec<Vec<usize>> {
    let n = cloud.len();
    let threshold = cfg.effective_threshold();
    let mut owner: Vec<Option<usize>> = vec![None; n];
    let mut regions: Vec<Vec<usize>> = Vec::new();
    let mut assigned = 0usize;

    while assigned < n && regions.len() < cfg.max_parts {
        let seed = if regions.is_empty() {
            rng.gen_range(0..n)
        } else {
            let border = border_points(&owner, adjacency);
            if border.is_empty() {
                let free: Vec<usize> = (0..n).filter(|&i| owner[i].is_none()).collect();
                free[rng.gen_range(0..free.len())]
            } else {
                border[rng.gen_range(0..border.len())]
            }
        };

        let id = regions.len();
        let seed_normal = cloud.normals[seed];
        let mut members = vec![seed];
        owner[seed] = Some(id);
        let mut spent = 0.0;
        let mut frontier = VecDeque::from([seed]);
        'grow: while let Some(f) = frontier.pop_front() {
            if spent >= threshold {
                break;
            }
            for &q in &adjacency[f] {
                if owner[q].is_some() || cloud.normals[q].dot(&seed_normal) < 0.0 {
                    continue;
                }
                owner[q] = Some(id);
                members.push(q);
                frontier.push_back(q);
                spent += angle_between(&cloud.normals[f], &cloud.normals[q]);
                if spent >= threshold {
                    break 'grow;
                }
            }
        }
        assigned += members.len();
        regions.push(members);
    }
    regions
}

/// Unassigned points adjacent to an assigned point, ascending.
fn border_points(owner: &[Option<usize>], adjacency: &[Vec<usize>]) -> Vec<usize> {
    let mut is_border = vec![false; owner.len()];
    for (p, nbrs) in adjacency.iter().enumerate() {
        let p_assigned = owner[p].is_some();
        for &q in nbrs {
            let q_assigned = owner[q].is_some();
            if p_assigned && !q_assigned {
                is_border[q] = true;
            } else if q_assigned && !p_assigned {
                is_border[p] = true;
            }
        }
    }
    (0..owner.len()).filter(|&i| is_border[i]).collect()
}

/// Grows regions and summarizes them as parts (frames computed, canonical
/// points not yet sampled).
pub fn grow_parts(cloud: &PointCloud, cfg: &GrowConfig, rng: &mut impl Rng) -> Vec<Part> {
    let up = GlobalFrame::default();
    let adjacency = point_adjacency(cloud, cfg.knn);
    grow_regions(cloud, &adjacency, cfg, rng)
        .into_iter()
        .map(|members| Part::from_members(cloud, members, &up))
        .collect()
}
