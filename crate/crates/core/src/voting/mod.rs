//! Object-center votes, vote clustering and cluster-wise classification.
//!
//! Each part predicts an offset in its own frame. The offset is scaled by
//! the part radius, rotated back to the global frame and added to the part
//! center. Votes are clustered by farthest point sampling; features of every
//! part voting into a cluster are max-pooled and classified, and the most
//! confident cluster gives the prediction.

use crate::error::{Error, Result};
use crate::geometry::{farthest_point_sampling, Mat3, Vec3};
use crate::nn::{softmax_rows, Forward, Mlp2, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoteConfig {
    pub num_clusters: usize,
    /// Cluster radius as a fraction of the input cloud's bounding radius.
    pub cluster_radius: f64,
    pub vote_loss_weight: f64,
}

impl Default for VoteConfig {
    fn default() -> Self {
        Self {
            num_clusters: 5,
            cluster_radius: 0.25,
            vote_loss_weight: 1.0,
        }
    }
}

impl VoteConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_clusters == 0 {
            return Err(Error::Config("num_clusters must be at least 1".into()));
        }
        if !(self.cluster_radius > 0.0 && self.cluster_radius.is_finite()) {
            return Err(Error::Config(format!(
                "cluster_radius must be positive, got {}",
                self.cluster_radius
            )));
        }
        if !(self.vote_loss_weight >= 0.0 && self.vote_loss_weight.is_finite()) {
            return Err(Error::Config(format!(
                "vote_loss_weight must be >= 0, got {}",
                self.vote_loss_weight
            )));
        }
        Ok(())
    }
}

/// Geometry of the parts casting votes.
#[derive(Debug, Clone, PartialEq)]
pub struct VoteGeometry {
    pub centers: Vec<Vec3>,
    pub frames: Vec<Mat3>,
    /// Offset scale per part.
    pub radii: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoteSet {
    pub votes: Vec<Vec3>,
    /// Offsets in each part's frame.
    pub offsets: Vec<Vec3>,
}

fn rows_to_vecs(t: &Tensor) -> Vec<Vec3> {
    t.data()
        .chunks(3)
        .map(|r| Vec3::new(r[0], r[1], r[2]))
        .collect()
}

/// Votes on the tape: `vote_i = R_i^T (r_i u_i) + p_i` with `u = head(f)`.
/// Returns the `[N, 3]` vote variable and the values.
pub fn predict_votes(
    fw: &mut Forward,
    feats: Var,
    geom: &VoteGeometry,
    head: &Mlp2,
) -> Result<(Var, VoteSet)> {
    let u = head.forward(fw, feats)?;
    place_votes(&mut fw.tape, u, geom)
}

/// Turns raw per-part head outputs `[N, 3]` into global votes.
pub fn place_votes(tape: &mut Tape, u: Var, geom: &VoteGeometry) -> Result<(Var, VoteSet)> {
    let n = geom.centers.len();
    if tape.value(u).shape() != [n, 3] || geom.frames.len() != n || geom.radii.len() != n {
        return Err(Error::ShapeMismatch {
            op: "predict_votes",
            detail: format!("head output {:?} for {n} parts", tape.value(u).shape()),
        });
    }
    let offsets = tape.row_scale(u, geom.radii.clone())?;
    let global =
        tape.row_transform(offsets, geom.frames.iter().map(|r| r.transpose()).collect())?;
    let centers = Tensor::new(
        vec![n, 3],
        geom.centers
            .iter()
            .flat_map(|c| c.iter().copied())
            .collect(),
    )?;
    let votes = tape.add_const(global, &centers)?;
    let set = VoteSet {
        votes: rows_to_vecs(tape.value(votes)),
        offsets: rows_to_vecs(tape.value(offsets)),
    };
    Ok((votes, set))
}

/// Mean squared distance of the votes to the origin.
pub fn vote_loss(tape: &mut Tape, votes: Var) -> Var {
    tape.mean_row_sq_norm(votes)
}

/// `class_loss + lambda * vote_loss`.
pub fn total_loss(tape: &mut Tape, class_loss: Var, vote_loss: Var, lambda: f64) -> Result<Var> {
    let weighted = tape.scale(vote_loss, lambda);
    tape.add(class_loss, weighted)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub center: Vec3,
    /// Parts whose vote lies within the radius of the center, ascending.
    pub members: Vec<usize>,
}

/// Index of the vote with the most votes within `radius`, lowest index on ties.
pub fn densest_vote(votes: &[Vec3], radius: f64) -> usize {
    let r2 = radius * radius;
    let mut best = (0, 0);
    for (i, a) in votes.iter().enumerate() {
        let count = votes
            .iter()
            .filter(|b| (a - *b).norm_squared() <= r2)
            .count();
        if count > best.1 {
            best = (i, count);
        }
    }
    best.0
}

/// Farthest point sampling of `min(num_clusters, N)` centers among the
/// votes, starting from the densest vote; each cluster holds every part
/// whose vote is within `radius` of its center.
pub fn cluster_votes(votes: &[Vec3], num_clusters: usize, radius: f64) -> Result<Vec<Cluster>> {
    if votes.is_empty() {
        return Err(Error::InvalidArgument("cannot cluster zero votes".into()));
    }
    let seed = densest_vote(votes, radius);
    let picks = farthest_point_sampling(votes, num_clusters.min(votes.len()), seed)?;
    let r2 = radius * radius;
    Ok(picks
        .into_iter()
        .map(|c| {
            let center = votes[c];
            let members = (0..votes.len())
                .filter(|&j| (votes[j] - center).norm_squared() <= r2)
                .collect();
            Cluster { center, members }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterPrediction {
    pub center: Vec3,
    pub members: Vec<usize>,
    pub logits: Vec<f64>,
    /// Largest softmax probability.
    pub confidence: f64,
}

impl ClusterPrediction {
    pub fn class(&self) -> usize {
        argmax(&self.logits)
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Max-pools member features per cluster and classifies them. Returns the
/// `[clusters, C]` logits variable and the per-cluster predictions.
pub fn classify_clusters(
    fw: &mut Forward,
    feats: Var,
    clusters: &[Cluster],
    classifier: &Mlp2,
) -> Result<(Var, Vec<ClusterPrediction>)> {
    let groups: Vec<Vec<usize>> = clusters.iter().map(|c| c.members.clone()).collect();
    let pooled = fw.tape.segment_max(feats, &groups)?;
    let logits = classifier.forward(fw, pooled)?;
    let lv = fw.tape.value(logits);
    let probs = softmax_rows(lv);
    let c = lv.cols();
    let preds = clusters
        .iter()
        .enumerate()
        .map(|(i, cl)| ClusterPrediction {
            center: cl.center,
            members: cl.members.clone(),
            logits: lv.row(i).to_vec(),
            confidence: probs[i * c..(i + 1) * c]
                .iter()
                .cloned()
                .fold(0.0, f64::max),
        })
        .collect();
    Ok((logits, preds))
}

/// Most confident cluster (lowest index on ties) and its class.
pub fn select_prediction(preds: &[ClusterPrediction]) -> Result<(usize, usize)> {
    if preds.is_empty() {
        return Err(Error::InvalidArgument("no clusters to select from".into()));
    }
    let mut best = 0;
    for (i, p) in preds.iter().enumerate() {
        if p.confidence > preds[best].confidence {
            best = i;
        }
    }
    Ok((best, preds[best].class()))
}
