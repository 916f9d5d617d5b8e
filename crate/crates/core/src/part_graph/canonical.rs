use rand::seq::index;
use rand::Rng;

use super::Part;
use crate::geometry::{PointCloud, Vec3};

/// Samples `n` member points, centers them on the part mean, rotates them into
/// the part frame and scales the set so its farthest point has norm 1.
///
/// Sampling is without replacement when the part has at least `n` members and
/// with replacement otherwise. A part whose points all coincide with the
/// center maps to zeros.
pub fn canonicalize_part(
    part: &Part,
    cloud: &PointCloud,
    n: usize,
    rng: &mut impl Rng,
) -> Vec<Vec3> {
    let members = &part.member_indices;
    let picks: Vec<usize> = if members.len() >= n {
        index::sample(rng, members.len(), n).into_vec()
    } else {
        (0..n).map(|_| rng.gen_range(0..members.len())).collect()
    };
    let mut points: Vec<Vec3> = picks
        .into_iter()
        .map(|k| part.lrf * (cloud.positions[members[k]] - part.center))
        .collect();
    let scale = points.iter().map(|p| p.norm()).fold(0.0, f64::max);
    if scale > 0.0 {
        points.iter_mut().for_each(|p| *p /= scale);
    } else {
        points.iter_mut().for_each(|p| *p = Vec3::zeros());
    }
    points
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::GlobalFrame;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_member_collapses_to_zero() {
        let cloud = PointCloud::new(vec![Vec3::new(3.0, 2.0, 1.0)], vec![Vec3::x()], None).unwrap();
        let part = Part::from_members(&cloud, vec![0], &GlobalFrame::default());
        let pts = canonicalize_part(&part, &cloud, 16, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(pts, vec![Vec3::zeros(); 16]);
    }

    #[test]
    fn segment_along_v1_maps_to_x_axis() {
        // Members along the horizontal direction of the normal; normal (1,0,0)
        // makes the frame the identity, so the segment runs along x.
        let pts: Vec<Vec3> = (0..9)
            .map(|i| Vec3::new(-1.0 + 0.25 * i as f64, 0.0, 0.0))
            .collect();
        let cloud = PointCloud::new(pts, vec![Vec3::x(); 9], None).unwrap();
        let part = Part::from_members(&cloud, (0..9).collect(), &GlobalFrame::default());
        let canon = canonicalize_part(&part, &cloud, 9, &mut ChaCha8Rng::seed_from_u64(0));
        for p in &canon {
            assert!(p.y.abs() < 1e-12 && p.z.abs() < 1e-12);
        }
        let xs: Vec<f64> = canon.iter().map(|p| p.x).collect();
        assert!((xs.iter().cloned().fold(f64::MIN, f64::max) - 1.0).abs() < 1e-12);
        assert!((xs.iter().cloned().fold(f64::MAX, f64::min) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn output_fits_unit_ball() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts: Vec<Vec3> = (0..50)
            .map(|_| Vec3::new(rng.gen(), rng.gen::<f64>() * 4.0, rng.gen()))
            .collect();
        let cloud = PointCloud::new(pts, vec![Vec3::new(1.0, 1.0, 0.2); 50], None).unwrap();
        let part = Part::from_members(&cloud, (0..50).collect(), &GlobalFrame::default());
        for n in [8, 50, 128] {
            let canon = canonicalize_part(&part, &cloud, n, &mut rng);
            assert_eq!(canon.len(), n);
            let max = canon.iter().map(|p| p.norm()).fold(0.0, f64::max);
            assert!((1.0 - 1e-3..=1.0 + 1e-6).contains(&max));
        }
    }
}
