use crate::error::{Error, Result};
use crate::geometry::Vec3;

/// Lattice offset that spreads the two polar points away from the poles.
/// With it two kernels sit about 1.91 apart and six kernels stay at least
/// 1.27 apart.
const LATTICE_OFFSET: f64 = 0.36;

/// Kernel points: `sphere_count` centers on the unit sphere, optionally
/// followed by one at the origin.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelLayout {
    pub centers: Vec<Vec3>,
    pub sigma: f64,
    pub has_origin: bool,
}

impl KernelLayout {
    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn origin_index(&self) -> Option<usize> {
        self.has_origin.then(|| self.centers.len() - 1)
    }

    pub fn min_pairwise_distance(&self) -> f64 {
        let mut best = f64::INFINITY;
        for (i, a) in self.centers.iter().enumerate() {
            for b in &self.centers[i + 1..] {
                best = best.min((a - b).norm());
            }
        }
        best
    }
}

/// Deterministic spherical Fibonacci placement.
pub fn make_kernel_layout(
    sphere_count: usize,
    sigma: f64,
    with_origin: bool,
) -> Result<KernelLayout> {
    if sphere_count < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 sphere kernels, got {sphere_count}"
        )));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "kernel sigma must be positive, got {sigma}"
        )));
    }
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    let k = sphere_count as f64;
    let mut centers: Vec<Vec3> = (0..sphere_count)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + LATTICE_OFFSET) / (k - 1.0 + 2.0 * LATTICE_OFFSET);
            let r = (1.0 - z * z).max(0.0).sqrt();
            let phi = golden * i as f64;
            Vec3::new(r * phi.cos(), r * phi.sin(), z).normalize()
        })
        .collect();
    if with_origin {
        centers.push(Vec3::zeros());
    }
    Ok(KernelLayout {
        centers,
        sigma,
        has_origin: with_origin,
    })
}

/// Linear correlation `max(0, 1 - |p - c| / sigma)`.
pub fn influence(p: &Vec3, c: &Vec3, sigma: f64) -> f64 {
    (1.0 - (p - c).norm() / sigma).max(0.0)
}
