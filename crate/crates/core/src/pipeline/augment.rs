//! Training augmentations and evaluation perturbations.

use std::f64::consts::TAU;
use std::str::FromStr;

use nalgebra::{Rotation3, Unit};
use rand::Rng;
use rand_distr::{Distribution, Normal, UnitSphere};

use super::synth::{sample_shape, LabeledObject, SHAPES};
use crate::error::{Error, Result};
use crate::geometry::{rotation_z, PointCloud, Vec3};

/// Minimum share of points an occlusion must keep.
const MIN_VISIBLE: f64 = 0.05;
const OCCLUSION_TRIES: usize = 10;
/// Crops with fewer points than this are skipped.
pub const MIN_CROP_POINTS: usize = 16;
/// Points per clutter patch.
const PATCH_POINTS: usize = 48;

/// Keeps the points facing the same half-space as a randomly chosen point's
/// normal. Retries when almost nothing survives; after the last try the
/// input comes back unchanged.
pub fn augment_occlusion(cloud: &PointCloud, rng: &mut impl Rng) -> PointCloud {
    if cloud.is_empty() {
        return cloud.clone();
    }
    for _ in 0..OCCLUSION_TRIES {
        let view = cloud.normals[rng.gen_range(0..cloud.len())];
        let kept = cloud.filtered(|i| cloud.normals[i].dot(&view) > 0.0);
        if kept.len() as f64 >= MIN_VISIBLE * cloud.len() as f64 && !kept.is_empty() {
            return kept;
        }
    }
    cloud.clone()
}

/// A unit vector perpendicular to `n`.
fn perpendicular(n: &Vec3, rng: &mut impl Rng) -> Vec3 {
    loop {
        let v: [f64; 3] = UnitSphere.sample(rng);
        let p = Vec3::from(v).cross(n);
        if p.norm() > 1e-6 {
            return p.normalize();
        }
    }
}

/// Tilts each normal about a random perpendicular axis by an angle drawn
/// from `|N(0, sigma)|`.
pub fn augment_normal_noise(
    cloud: &PointCloud,
    sigma: f64,
    rng: &mut impl Rng,
) -> Result<PointCloud> {
    if sigma.is_nan() || sigma < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "normal noise sigma must be >= 0, got {sigma}"
        )));
    }
    if sigma == 0.0 {
        return Ok(cloud.clone());
    }
    let dist = Normal::new(0.0, sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut out = cloud.clone();
    for n in &mut out.normals {
        let axis = Unit::new_unchecked(perpendicular(n, rng));
        let angle = dist.sample(rng).abs();
        *n = (Rotation3::from_axis_angle(&axis, angle) * *n).normalize();
    }
    Ok(out)
}

/// Number of clutter points that make up `fraction` of the result.
pub fn clutter_count(object_points: usize, fraction: f64) -> usize {
    (object_points as f64 * fraction / (1.0 - fraction)).floor() as usize
}

/// Surface samples drawn per fragment source shape.
const FRAGMENT_SOURCE_POINTS: usize = 600;

/// A patch of `n` points centered on the origin: a flat disk of radius
/// `size`, or a cap cut from a primitive shape scaled by `size` (stand-ins
/// for walls and for pieces of other objects).
fn clutter_patch(n: usize, size: f64, rng: &mut impl Rng) -> (Vec<Vec3>, Vec<Vec3>) {
    let kind = rng.gen_range(0..=SHAPES.len());
    if kind == SHAPES.len() {
        let normal = Vec3::from(UnitSphere.sample(rng));
        let u = perpendicular(&normal, rng);
        let v = normal.cross(&u);
        let positions = (0..n)
            .map(|_| {
                let r = size * rng.gen::<f64>().sqrt();
                let phi = rng.gen_range(0.0..TAU);
                u * (r * phi.cos()) + v * (r * phi.sin())
            })
            .collect();
        return (positions, vec![normal; n]);
    }
    let source =
        sample_shape(SHAPES[kind], FRAGMENT_SOURCE_POINTS.max(n), rng).expect("known shape");
    let axis = Unit::new_normalize(Vec3::from(UnitSphere.sample(rng)));
    let rot = Rotation3::from_axis_angle(&axis, rng.gen_range(0.0..TAU));
    let anchor = source.positions[rng.gen_range(0..source.len())];
    let mut order: Vec<usize> = (0..source.len()).collect();
    order.sort_by(|&a, &b| {
        (source.positions[a] - anchor)
            .norm_squared()
            .total_cmp(&(source.positions[b] - anchor).norm_squared())
    });
    order.truncate(n);
    let center: Vec3 = order.iter().map(|&i| source.positions[i]).sum::<Vec3>() / n as f64;
    let positions = order
        .iter()
        .map(|&i| rot * (source.positions[i] - center) * (2.0 * size))
        .collect();
    let normals = order.iter().map(|&i| rot * source.normals[i]).collect();
    (positions, normals)
}

/// Clutter patches of [`PATCH_POINTS`] points (flat disks and fragments of
/// primitive shapes) scattered in a shell between 1.2 and 2 bounding radii
/// around the cloud center, `count` points in total.
pub fn make_clutter(cloud: &PointCloud, count: usize, rng: &mut impl Rng) -> PointCloud {
    let center = cloud.centroid();
    let radius = cloud.bounding_radius().max(1e-9);
    let mut positions = Vec::with_capacity(count);
    let mut normals = Vec::with_capacity(count);
    while positions.len() < count {
        let dir = Vec3::from(UnitSphere.sample(rng));
        let at = center + dir * radius * rng.gen_range(1.2..2.0);
        let n = PATCH_POINTS.min(count - positions.len());
        let (p, nn) = clutter_patch(n, radius * rng.gen_range(0.15..0.35), rng);
        positions.extend(p.into_iter().map(|q| q + at));
        normals.extend(nn);
    }
    PointCloud {
        positions,
        normals,
        faces: None,
    }
}

fn concat(a: &PointCloud, b: &PointCloud) -> PointCloud {
    PointCloud {
        positions: a.positions.iter().chain(&b.positions).copied().collect(),
        normals: a.normals.iter().chain(&b.normals).copied().collect(),
        faces: None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EvalVariant {
    None,
    T25,
    T50Rs,
    Background,
}

impl EvalVariant {
    pub const ALL: [EvalVariant; 4] = [Self::None, Self::T25, Self::T50Rs, Self::Background];
}

impl FromStr for EvalVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "t25" => Ok(Self::T25),
            "t50_rs" => Ok(Self::T50Rs),
            "background" => Ok(Self::Background),
            _ => Err(Error::Config(format!(
                "unknown eval variant {s:?} (none, t25, t50_rs, background)"
            ))),
        }
    }
}

impl std::fmt::Display for EvalVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::None => "none",
            Self::T25 => "t25",
            Self::T50Rs => "t50_rs",
            Self::Background => "background",
        })
    }
}

/// Crops to the object's bounding box shifted by `shift` times its extent
/// per axis; points outside are dropped.
pub fn shifted_crop(cloud: &PointCloud, shift: &Vec3) -> PointCloud {
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for p in &cloud.positions {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let offset = (hi - lo).component_mul(shift);
    let (lo, hi) = (lo + offset, hi + offset);
    cloud.filtered(|i| {
        let p = cloud.positions[i];
        (0..3).all(|a| p[a] >= lo[a] && p[a] <= hi[a])
    })
}

/// Applies an evaluation perturbation. `Ok(None)` means the crop left fewer
/// than [`MIN_CROP_POINTS`] points and the object must be skipped.
pub fn perturb_eval_variant(
    obj: &LabeledObject,
    variant: EvalVariant,
    clutter_fraction: f64,
    rng: &mut impl Rng,
) -> Result<Option<LabeledObject>> {
    let mut out = obj.clone();
    match variant {
        EvalVariant::None => return Ok(Some(out)),
        EvalVariant::T25 | EvalVariant::T50Rs => {
            let f = if variant == EvalVariant::T25 {
                0.25
            } else {
                0.5
            };
            let shift = Vec3::new(
                rng.gen_range(-f..=f),
                rng.gen_range(-f..=f),
                rng.gen_range(-f..=f),
            );
            let mut cloud = shifted_crop(&obj.cloud, &shift);
            if variant == EvalVariant::T50Rs {
                let s = rng.gen_range(0.5..=2.0);
                cloud = cloud
                    .rotated(&rotation_z(rng.gen_range(0.0..TAU)))
                    .scaled(s);
            }
            if cloud.len() < MIN_CROP_POINTS {
                return Ok(None);
            }
            out.cloud = cloud;
        }
        EvalVariant::Background => {
            if !(0.0..1.0).contains(&clutter_fraction) {
                return Err(Error::InvalidArgument(format!(
                    "clutter fraction {clutter_fraction} outside [0, 1)"
                )));
            }
            let clutter = make_clutter(
                &obj.cloud,
                clutter_count(obj.cloud.len(), clutter_fraction),
                rng,
            );
            out.cloud = concat(&obj.cloud, &clutter);
            out.has_background = true;
        }
    }
    Ok(Some(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::angle_between;
    use crate::pipeline::synth::{sample_shape, Split};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn plane(n: usize, z: f64, normal: Vec3) -> PointCloud {
        let positions = (0..n)
            .map(|i| Vec3::new(i as f64 * 0.1, (i % 7) as f64 * 0.1, z))
            .collect();
        PointCloud::new(positions, vec![normal; n], None).unwrap()
    }

    fn object(cloud: PointCloud) -> LabeledObject {
        LabeledObject {
            id: "o".into(),
            cloud,
            label: 0,
            split: Split::Test,
            has_background: false,
        }
    }

    #[test]
    fn occlusion_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let flat = plane(50, 0.0, Vec3::z());
        assert_eq!(augment_occlusion(&flat, &mut rng), flat.filtered(|_| true));

        let two = concat(&plane(30, 0.0, Vec3::z()), &plane(30, 1.0, -Vec3::z()));
        let kept = augment_occlusion(&two, &mut rng);
        assert_eq!(kept.len(), 30);
        assert!(kept.normals.windows(2).all(|w| w[0] == w[1]));

        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let sphere = sample_shape("sphere", 4000, &mut rng).unwrap();
            let share = augment_occlusion(&sphere, &mut rng).len() as f64 / 4000.0;
            assert!((0.45..=0.55).contains(&share), "{share}");
        }
    }

    #[test]
    fn normal_noise_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let sphere = sample_shape("sphere", 10_000, &mut rng).unwrap();
        assert_eq!(
            augment_normal_noise(&sphere, 0.0, &mut rng).unwrap(),
            sphere
        );
        let sigma = 0.2;
        let noisy = augment_normal_noise(&sphere, sigma, &mut rng).unwrap();
        assert!(noisy.normals.iter().all(|n| (n.norm() - 1.0).abs() < 1e-9));
        let mean = sphere
            .normals
            .iter()
            .zip(&noisy.normals)
            .map(|(a, b)| angle_between(a, b))
            .sum::<f64>()
            / 10_000.0;
        let expected = sigma * (2.0 / std::f64::consts::PI).sqrt();
        assert!(
            (mean - expected).abs() < 0.05 * expected,
            "{mean} vs {expected}"
        );
        assert!(augment_normal_noise(&sphere, -1.0, &mut rng).is_err());
    }

    #[test]
    fn variants() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let obj = object(sample_shape("box", 1000, &mut rng).unwrap());
        assert_eq!(
            perturb_eval_variant(&obj, EvalVariant::None, 0.5, &mut rng)
                .unwrap()
                .unwrap(),
            obj
        );
        assert_eq!(
            shifted_crop(&obj.cloud, &Vec3::zeros()).len(),
            obj.cloud.len()
        );

        let bg = perturb_eval_variant(&obj, EvalVariant::Background, 0.5, &mut rng)
            .unwrap()
            .unwrap();
        let frac = (bg.cloud.len() - 1000) as f64 / bg.cloud.len() as f64;
        assert!((0.45..=0.5).contains(&frac), "{frac}");
        assert!(bg.has_background);
        let center = obj.cloud.centroid();
        let r = obj.cloud.bounding_radius();
        for p in &bg.cloud.positions[1000..] {
            assert!((p - center).norm() > 1.2 * r * 0.6);
        }

        for v in [EvalVariant::T25, EvalVariant::T50Rs] {
            let out = perturb_eval_variant(&obj, v, 0.5, &mut rng)
                .unwrap()
                .unwrap();
            assert!(out.cloud.len() <= 1000 && out.cloud.len() >= MIN_CROP_POINTS);
        }
    }

    #[test]
    fn tiny_crop_is_skipped() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let obj = object(plane(10, 0.0, Vec3::z()));
        assert!(perturb_eval_variant(&obj, EvalVariant::T25, 0.5, &mut rng)
            .unwrap()
            .is_none());
    }

    #[test]
    fn variant_names_round_trip() {
        for v in EvalVariant::ALL {
            assert_eq!(v.to_string().parse::<EvalVariant>().unwrap(), v);
        }
    }
}
