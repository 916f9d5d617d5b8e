use super::Vec3;
use crate::error::{Error, Result};

/// Greedy farthest point sampling starting from `seed_index`.
///
/// Each step picks the point with the largest distance to the already
/// selected set, lowest index on ties. When every remaining distance is zero
/// (coincident points) an already selected index can be emitted again.
pub fn farthest_point_sampling(points: &[Vec3], m: usize, seed_index: usize) -> Result<Vec<usize>> {
    if m > points.len() {
        return Err(Error::InvalidArgument(format!(
            "cannot sample {m} of {} points",
            points.len()
        )));
    }
    if m == 0 {
        return Ok(Vec::new());
    }
    if seed_index >= points.len() {
        return Err(Error::InvalidArgument(format!(
            "seed index {seed_index} out of range"
        )));
    }
    let seed = points[seed_index];
    let mut min_dist: Vec<f64> = points.iter().map(|p| (p - seed).norm_squared()).collect();
    let mut selected = Vec::with_capacity(m);
    selected.push(seed_index);
    while selected.len() < m {
        let mut best = 0;
        for (i, &d) in min_dist.iter().enumerate() {
            if d > min_dist[best] {
                best = i;
            }
        }
        selected.push(best);
        let chosen = points[best];
        for (d, p) in min_dist.iter_mut().zip(points) {
            *d = d.min((p - chosen).norm_squared());
        }
    }
    Ok(selected)
}
