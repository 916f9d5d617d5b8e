//! Self-checks: finite-difference gradients of every differentiable op and
//! end-to-end invariance of predictions.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, UnitSphere};

use super::model::{object_rng, Model};
use super::synth::LabeledObject;
use crate::error::Result;
use crate::geometry::{rotation_z, Mat3, Vec3};
use crate::nn::gradcheck::{check_gradients, GradCheckConfig, GradCheckReport};
use crate::nn::{Tape, Tensor, Var};
use crate::part_graph::build_part_graph;
use crate::skpconv::{conv_on_tape, conv_terms, make_kernel_layout, ConvKind, GraphNeighborhood};
use crate::voting::{place_votes, VoteGeometry};

/// Names of the checked operations, in report order.
pub const GRADIENT_CASES: &[&str] = &[
    "affine",
    "maxsub",
    "batch_norm",
    "softmax_ce",
    "kpconv",
    "skpconv",
    "vote_head",
    "cluster_classifier",
];

fn randn(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| StandardNormal.sample(rng)).collect(),
    )
    .expect("shape matches data")
}

fn random_rotation(rng: &mut impl Rng) -> Mat3 {
    let axis = nalgebra::Unit::new_normalize(Vec3::from(UnitSphere.sample(rng)));
    *nalgebra::Rotation3::from_axis_angle(&axis, rng.gen_range(0.0..std::f64::consts::TAU)).matrix()
}

/// Projects a tensor to a scalar with fixed random weights so every output
/// entry gets a distinct gradient.
fn project(tape: &mut Tape, x: Var, rng: &mut impl Rng) -> Result<Var> {
    let n = tape.value(x).len();
    tape.dot_const(x, (0..n).map(|_| StandardNormal.sample(rng)).collect())
}

/// Two-layer perceptron built from raw tape ops: `relu(x w1 + b1) w2 + b2`.
fn mlp(tape: &mut Tape, x: Var, p: &[Var]) -> Result<Var> {
    let h = tape.matmul(x, p[0])?;
    let h = tape.add_row(h, p[1])?;
    let h = tape.relu(h);
    let o = tape.matmul(h, p[2])?;
    tape.add_row(o, p[3])
}

fn random_neighborhood(rng: &mut impl Rng, n: usize) -> Result<GraphNeighborhood> {
    let centers: Vec<Vec3> = (0..n)
        .map(|_| Vec3::from(UnitSphere.sample(rng)) * rng.gen_range(0.2..1.0))
        .collect();
    let neighbors = (0..n)
        .map(|i| (0..n).filter(|&j| j != i && rng.gen_bool(0.6)).collect())
        .collect();
    let frames = (0..n).map(|_| random_rotation(rng)).collect();
    GraphNeighborhood::new(centers, neighbors, frames)
}

/// Checks one named case for one seed.
pub fn gradient_case(name: &str, seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = GradCheckConfig::default();
    let proj_seed: u64 = rng.gen();
    let proj = move || ChaCha8Rng::seed_from_u64(proj_seed);
    match name {
        "affine" => {
            let inputs = [
                randn(&mut rng, &[5, 4]),
                randn(&mut rng, &[4, 3]),
                randn(&mut rng, &[3]),
            ];
            check_gradients(&inputs, &cfg, |t, v| {
                let y = t.matmul(v[0], v[1])?;
                let y = t.add_row(y, v[2])?;
                project(t, y, &mut proj())
            })
        }
        "maxsub" => {
            let inputs = [
                randn(&mut rng, &[8, 3]),
                Tensor::scalar(rng.gen_range(0.1..0.9)),
                randn(&mut rng, &[3, 2]),
                randn(&mut rng, &[2]),
            ];
            check_gradients(&inputs, &cfg, |t, v| {
                let y = t.max_subtract(v[0], v[1], 4)?;
                let y = t.matmul(y, v[2])?;
                let y = t.add_row(y, v[3])?;
                project(t, y, &mut proj())
            })
        }
        "batch_norm" => {
            let inputs = [
                randn(&mut rng, &[6, 4]),
                randn(&mut rng, &[4]),
                randn(&mut rng, &[4]),
            ];
            check_gradients(&inputs, &cfg, |t, v| {
                let (y, _) = t.batch_norm(v[0], v[1], v[2], 1e-5)?;
                project(t, y, &mut proj())
            })
        }
        "softmax_ce" => {
            let labels: Vec<usize> = (0..5).map(|_| rng.gen_range(0..4)).collect();
            check_gradients(&[randn(&mut rng, &[5, 4])], &cfg, |t, v| {
                t.softmax_cross_entropy(v[0], &labels)
            })
        }
        "kpconv" | "skpconv" => {
            let kind = if name == "kpconv" {
                ConvKind::KpConv
            } else {
                ConvKind::SkpConv
            };
            let layout = make_kernel_layout(14, 0.7, true)?;
            let nbhd = random_neighborhood(&mut rng, 6)?;
            let terms = conv_terms(&nbhd, &layout, kind, true);
            let inputs = [
                randn(&mut rng, &[6, 3]),
                randn(&mut rng, &[layout.len() * 3, 2]),
            ];
            check_gradients(&inputs, &cfg, |t, v| {
                let y = conv_on_tape(t, v[0], &terms, v[1])?;
                project(t, y, &mut proj())
            })
        }
        "vote_head" => {
            let n = 5;
            let geom = VoteGeometry {
                centers: (0..n)
                    .map(|_| Vec3::from(UnitSphere.sample(&mut rng)))
                    .collect(),
                frames: (0..n).map(|_| random_rotation(&mut rng)).collect(),
                radii: (0..n).map(|_| rng.gen_range(0.1..0.5)).collect(),
            };
            let inputs = [
                randn(&mut rng, &[n, 4]),
                randn(&mut rng, &[4, 4]),
                randn(&mut rng, &[4]),
                randn(&mut rng, &[4, 3]),
                randn(&mut rng, &[3]),
            ];
            check_gradients(&inputs, &cfg, |t, v| {
                let u = mlp(t, v[0], &v[1..])?;
                let (votes, _) = place_votes(t, u, &geom)?;
                let loss = t.mean_row_sq_norm(votes);
                let extra = project(t, votes, &mut proj())?;
                t.add(loss, extra)
            })
        }
        "cluster_classifier" => {
            let groups: Vec<Vec<usize>> = (0..3)
                .map(|_| {
                    let mut g: Vec<usize> = (0..7).filter(|_| rng.gen_bool(0.5)).collect();
                    if g.is_empty() {
                        g.push(rng.gen_range(0..7));
                    }
                    g
                })
                .collect();
            let labels: Vec<usize> = (0..3).map(|_| rng.gen_range(0..4)).collect();
            let inputs = [
                randn(&mut rng, &[7, 4]),
                randn(&mut rng, &[4, 5]),
                randn(&mut rng, &[5]),
                randn(&mut rng, &[5, 4]),
                randn(&mut rng, &[4]),
            ];
            check_gradients(&inputs, &cfg, |t, v| {
                let pooled = t.segment_max(v[0], &groups)?;
                let logits = mlp(t, pooled, &v[1..])?;
                t.softmax_cross_entropy(logits, &labels)
            })
        }
        other => Err(crate::Error::InvalidArgument(format!(
            "unknown gradient case {other:?}"
        ))),
    }
}

/// Every case over seeds `0..seeds`, merged per case.
pub fn gradient_suite(seeds: u64) -> Result<Vec<(&'static str, GradCheckReport)>> {
    GRADIENT_CASES
        .iter()
        .map(|&name| {
            let mut total = GradCheckReport::default();
            for s in 0..seeds {
                total.merge(&gradient_case(name, s)?);
            }
            Ok((name, total))
        })
        .collect()
}

pub fn format_gradient_suite(results: &[(&str, GradCheckReport)]) -> String {
    let mut s = String::new();
    for (name, r) in results {
        let _ = writeln!(
            s,
            "{} grad {name:<20} checked {:>5} kinks {:>3} failures {:>3} max_rel_err {:.2e}",
            if r.passed() { "PASS" } else { "FAIL" },
            r.checked,
            r.kinks,
            r.failures,
            r.max_rel_error
        );
    }
    s
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct InvarianceReport {
    /// Objects compared; candidates with degenerate part frames are excluded.
    pub objects: usize,
    pub excluded_degenerate: usize,
    pub rotation_agree: usize,
    /// Objects whose class agrees at every tested scale.
    pub scale_agree: usize,
    /// Largest canonical-point deviation under rotation.
    pub canonical_max_dev: f64,
}

impl InvarianceReport {
    pub fn passed(&self, canonical_tol: f64) -> bool {
        self.objects > 0
            && self.rotation_agree == self.objects
            && self.scale_agree == self.objects
            && self.canonical_max_dev <= canonical_tol
    }
}

pub const INVARIANCE_SCALES: [f64; 3] = [0.1, 1.0, 10.0];

/// Compares predictions for up to `limit` candidates without degenerate
/// parts under a random rotation about the vertical axis and under global
/// scaling. Each transformed copy uses the same random stream as the
/// original.
pub fn invariance_suite(
    model: &Model,
    candidates: &[LabeledObject],
    limit: usize,
    seed: u64,
) -> Result<InvarianceReport> {
    let mut report = InvarianceReport::default();
    let mut angles = ChaCha8Rng::seed_from_u64(seed);
    for (i, obj) in candidates.iter().enumerate() {
        if report.objects == limit {
            break;
        }
        let rng = || object_rng(seed, 7, i);
        let base = model.prepare(obj, &mut rng())?;
        let angle = angles.gen_range(0.0..std::f64::consts::TAU);
        if base.degenerate_parts > 0 {
            report.excluded_degenerate += 1;
            continue;
        }
        report.objects += 1;
        let class = model.predict(&base)?.class;

        let mut rotated = obj.clone();
        rotated.cloud = obj.cloud.rotated(&rotation_z(angle));
        let rot = model.prepare(&rotated, &mut rng())?;
        if base.canonical.shape() == rot.canonical.shape() {
            let dev = base
                .canonical
                .data()
                .iter()
                .zip(rot.canonical.data())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            report.canonical_max_dev = report.canonical_max_dev.max(dev);
        } else {
            report.canonical_max_dev = f64::INFINITY;
        }
        if model.predict(&rot)?.class == class {
            report.rotation_agree += 1;
        }

        let mut all = true;
        for s in INVARIANCE_SCALES {
            let mut scaled = obj.clone();
            scaled.cloud = obj.cloud.scaled(s);
            all &= model.predict(&model.prepare(&scaled, &mut rng())?)?.class == class;
        }
        report.scale_agree += usize::from(all);
    }
    Ok(report)
}

/// Share of object parts in the most confident cluster of one cluttered
/// scene. The first `object_points` points of `scene` belong to the object;
/// a part counts as an object part when most of its members do. `None` for
/// global max pooling, which forms no clusters.
pub fn separation_purity(
    model: &Model,
    scene: &LabeledObject,
    object_points: usize,
    rng: &ChaCha8Rng,
) -> Result<Option<f64>> {
    let cfg = &model.config;
    let graph = build_part_graph(&scene.cloud, &cfg.grow, &cfg.connect, &mut rng.clone());
    let prepared = model.prepare(scene, &mut rng.clone())?;
    let pred = model.predict(&prepared)?;
    let Some(sel) = pred.selected_cluster else {
        return Ok(None);
    };
    let members = &pred.clusters[sel].members;
    let object_part = |p: usize| {
        let m = &graph.parts[p].member_indices;
        2 * m.iter().filter(|&&i| i < object_points).count() > m.len()
    };
    let pure = members.iter().filter(|&&p| object_part(p)).count();
    Ok(Some(pure as f64 / members.len().max(1) as f64))
}

pub fn format_invariance(r: &InvarianceReport, canonical_tol: f64) -> String {
    format!(
        "{} invariance objects {} (excluded {} with degenerate parts) rotation {}/{} scale {}/{} canonical_max_dev {:.2e}\n",
        if r.passed(canonical_tol) { "PASS" } else { "FAIL" },
        r.objects,
        r.excluded_degenerate,
        r.rotation_agree,
        r.objects,
        r.scale_agree,
        r.objects,
        r.canonical_max_dev
    )
}
