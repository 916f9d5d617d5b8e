//! Parametric shapes sampled uniformly by area, with analytic normals.

use std::f64::consts::{PI, TAU};

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::geometry::{rotation_z, PointCloud, Vec3};

/// Names accepted by [`sample_shape`].
pub const SHAPES: &[&str] = &["sphere", "box", "cylinder", "cone", "torus"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledObject {
    pub id: String,
    pub cloud: PointCloud,
    pub label: usize,
    pub split: Split,
    pub has_background: bool,
}

const BOX_HALF: [f64; 3] = [0.7, 0.5, 0.4];
const CYL_RADIUS: f64 = 0.5;
const CYL_HALF_HEIGHT: f64 = 0.7;
const CONE_RADIUS: f64 = 0.6;
const CONE_HEIGHT: f64 = 1.2;
const TORUS_MAJOR: f64 = 0.7;
const TORUS_MINOR: f64 = 0.25;

fn disk_point(rng: &mut impl Rng, radius: f64) -> (f64, f64) {
    let r = radius * rng.gen::<f64>().sqrt();
    let phi = rng.gen_range(0.0..TAU);
    (r * phi.cos(), r * phi.sin())
}

/// One surface sample and its outward normal for a named shape at unit size,
/// centered on its bounding box.
fn surface_point(shape: &str, rng: &mut impl Rng) -> Result<(Vec3, Vec3)> {
    Ok(match shape {
        "sphere" => {
            let z: f64 = rng.gen_range(-1.0..1.0);
            let phi = rng.gen_range(0.0..TAU);
            let r = (1.0 - z * z).sqrt();
            let p = Vec3::new(r * phi.cos(), r * phi.sin(), z);
            (p, p)
        }
        "box" => {
            let [a, b, c] = BOX_HALF;
            let areas = [b * c, b * c, a * c, a * c, a * b, a * b];
            let total: f64 = areas.iter().sum();
            let mut t = rng.gen::<f64>() * total;
            let mut face = 5;
            for (i, ar) in areas.iter().enumerate() {
                if t < *ar {
                    face = i;
                    break;
                }
                t -= ar;
            }
            let axis = face / 2;
            let sign = if face % 2 == 0 { 1.0 } else { -1.0 };
            let mut p = Vec3::new(
                rng.gen_range(-a..a),
                rng.gen_range(-b..b),
                rng.gen_range(-c..c),
            );
            p[axis] = sign * BOX_HALF[axis];
            let mut n = Vec3::zeros();
            n[axis] = sign;
            (p, n)
        }
        "cylinder" => {
            let side = TAU * CYL_RADIUS * 2.0 * CYL_HALF_HEIGHT;
            let cap = PI * CYL_RADIUS * CYL_RADIUS;
            let t = rng.gen::<f64>() * (side + 2.0 * cap);
            if t < side {
                let phi = rng.gen_range(0.0..TAU);
                let z = rng.gen_range(-CYL_HALF_HEIGHT..CYL_HALF_HEIGHT);
                let n = Vec3::new(phi.cos(), phi.sin(), 0.0);
                (Vec3::new(CYL_RADIUS * n.x, CYL_RADIUS * n.y, z), n)
            } else {
                let (x, y) = disk_point(rng, CYL_RADIUS);
                let s = if t < side + cap { 1.0 } else { -1.0 };
                (Vec3::new(x, y, s * CYL_HALF_HEIGHT), Vec3::new(0.0, 0.0, s))
            }
        }
        "cone" => {
            let slant = (CONE_RADIUS * CONE_RADIUS + CONE_HEIGHT * CONE_HEIGHT).sqrt();
            let side = PI * CONE_RADIUS * slant;
            let base = PI * CONE_RADIUS * CONE_RADIUS;
            let half = CONE_HEIGHT / 2.0;
            if rng.gen::<f64>() * (side + base) < side {
                // Radius grows linearly from the apex, so sample it by sqrt.
                let s = rng.gen::<f64>().sqrt();
                let phi = rng.gen_range(0.0..TAU);
                let r = s * CONE_RADIUS;
                let p = Vec3::new(r * phi.cos(), r * phi.sin(), half - s * CONE_HEIGHT);
                let n = Vec3::new(
                    CONE_HEIGHT * phi.cos(),
                    CONE_HEIGHT * phi.sin(),
                    CONE_RADIUS,
                )
                .normalize();
                (p, n)
            } else {
                let (x, y) = disk_point(rng, CONE_RADIUS);
                (Vec3::new(x, y, -half), -Vec3::z())
            }
        }
        "torus" => {
            // Area density is proportional to the distance from the axis.
            let theta = loop {
                let th = rng.gen_range(0.0..TAU);
                let accept =
                    (TORUS_MAJOR + TORUS_MINOR * f64::cos(th)) / (TORUS_MAJOR + TORUS_MINOR);
                if rng.gen::<f64>() < accept {
                    break th;
                }
            };
            let phi = rng.gen_range(0.0..TAU);
            let n = Vec3::new(
                theta.cos() * phi.cos(),
                theta.cos() * phi.sin(),
                theta.sin(),
            );
            let ring = Vec3::new(phi.cos(), phi.sin(), 0.0) * TORUS_MAJOR;
            (ring + n * TORUS_MINOR, n)
        }
        other => return Err(Error::UnknownShape(other.to_string())),
    })
}

/// `n` surface samples of a unit-size shape with exact normals.
pub fn sample_shape(shape: &str, n: usize, rng: &mut impl Rng) -> Result<PointCloud> {
    let mut positions = Vec::with_capacity(n);
    let mut normals = Vec::with_capacity(n);
    for _ in 0..n {
        let (p, nn) = surface_point(shape, rng)?;
        positions.push(p);
        normals.push(nn);
    }
    if n == 0 {
        surface_point(shape, rng)?;
    }
    PointCloud::new(positions, normals, None)
}

/// Sampling parameters shared by every object of a synthetic set.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub classes: Vec<String>,
    pub per_class: usize,
    pub points: usize,
    /// Standard deviation of Gaussian position jitter, in unit-shape units.
    pub noise: f64,
    /// Log-uniform global scale range.
    pub scale_range: (f64, f64),
    pub split: Split,
}

/// Balanced synthetic objects, centered at the origin, each with a random
/// log-uniform scale and rotation about the vertical axis. Objects are
/// interleaved by class.
pub fn synth_dataset(spec: &SynthSpec, rng: &mut impl Rng) -> Result<Vec<LabeledObject>> {
    if spec.classes.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 classes, got {}",
            spec.classes.len()
        )));
    }
    for c in &spec.classes {
        if !SHAPES.contains(&c.as_str()) {
            return Err(Error::UnknownShape(c.clone()));
        }
    }
    let (lo, hi) = spec.scale_range;
    let jitter =
        Normal::new(0.0, spec.noise.max(0.0)).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let tag = match spec.split {
        Split::Train => "train",
        Split::Test => "test",
    };
    let mut out = Vec::with_capacity(spec.classes.len() * spec.per_class);
    for i in 0..spec.per_class {
        for (label, name) in spec.classes.iter().enumerate() {
            let mut cloud = sample_shape(name, spec.points, rng)?;
            if spec.noise > 0.0 {
                for p in &mut cloud.positions {
                    *p += Vec3::new(jitter.sample(rng), jitter.sample(rng), jitter.sample(rng));
                }
            }
            let scale = if hi > lo {
                (rng.gen_range(lo.ln()..hi.ln())).exp()
            } else {
                lo
            };
            let rot = rotation_z(rng.gen_range(0.0..TAU));
            let cloud = cloud.rotated(&rot).scaled(scale);
            out.push(LabeledObject {
                id: format!("{tag}-{name}-{i}"),
                cloud,
                label,
                split: spec.split,
                has_background: false,
            });
        }
    }
    Ok(out)
}
