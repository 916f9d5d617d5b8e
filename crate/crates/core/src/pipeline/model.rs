//! The classifier network and its per-object inputs.

use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{Pooling, RunConfig};
use super::synth::LabeledObject;
use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::nn::{AggregationTerm, Forward, Mlp2, ParamStore, PartEncoder, Tensor, Var};
use crate::part_graph::build_part_graph;
use crate::skpconv::{
    conv_terms, make_kernel_layout, ConvLayer, ConvTerms, GraphNeighborhood, KernelLayout,
};
use crate::voting::{
    classify_clusters, cluster_votes, place_votes, select_prediction, ClusterPrediction,
    VoteGeometry,
};

/// Deterministic generator for one object in one pass.
pub fn object_rng(seed: u64, pass: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ pass.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(index as u64);
    rng
}

/// Everything the network needs from one object, computed once.
#[derive(Debug, Clone)]
pub struct PreparedObject {
    pub id: String,
    pub label: usize,
    pub parts: usize,
    pub points_per_part: usize,
    /// `[parts * points_per_part, 3]`.
    pub canonical: Tensor,
    pub terms: ConvTerms,
    pub geom: VoteGeometry,
    /// Bounding radius of the input cloud; sets the cluster radius.
    pub cloud_radius: f64,
    /// Largest point distance from the origin; normalizes the vote loss.
    pub vote_scale: f64,
    pub degenerate_parts: usize,
}

pub fn prepare_object(
    obj: &LabeledObject,
    cfg: &RunConfig,
    layout: &KernelLayout,
    rng: &mut impl Rng,
) -> Result<PreparedObject> {
    if obj.cloud.is_empty() {
        return Err(Error::EmptyCloud {
            path: obj.id.clone().into(),
        });
    }
    let graph = build_part_graph(&obj.cloud, &cfg.grow, &cfg.connect, rng);
    let n = cfg.grow.points_per_part;
    let mut canonical = Vec::with_capacity(graph.parts.len() * n * 3);
    for part in &graph.parts {
        for p in &part.canonical_points {
            canonical.extend_from_slice(p.as_slice());
        }
    }
    let nbhd = GraphNeighborhood::from_graph(&graph, cfg.use_lrf);
    let geom = VoteGeometry {
        centers: graph.parts.iter().map(|p| p.center).collect(),
        frames: graph.parts.iter().map(|p| p.lrf).collect(),
        radii: graph
            .parts
            .iter()
            .map(|p| p.bounding_radius.max(1e-12))
            .collect(),
    };
    Ok(PreparedObject {
        id: obj.id.clone(),
        label: obj.label,
        parts: graph.parts.len(),
        points_per_part: n,
        canonical: Tensor::new(vec![graph.parts.len() * n, 3], canonical)?,
        terms: conv_terms(&nbhd, layout, cfg.layer, true),
        geom,
        cloud_radius: obj.cloud.bounding_radius().max(1e-12),
        vote_scale: obj
            .cloud
            .positions
            .iter()
            .map(Vec3::norm)
            .fold(0.0, f64::max)
            .max(1e-12),
        degenerate_parts: graph.parts.iter().filter(|p| p.degenerate_lrf).count(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectPrediction {
    pub class: usize,
    pub confidence: f64,
    /// Empty for global max pooling.
    pub clusters: Vec<ClusterPrediction>,
    pub selected_cluster: Option<usize>,
    pub votes: Vec<Vec3>,
}

#[derive(Debug)]
pub struct BatchPass {
    pub loss: Var,
    pub class_loss: Var,
    pub vote_loss: Option<Var>,
    pub predictions: Vec<ObjectPrediction>,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub store: ParamStore,
    pub encoder: PartEncoder,
    pub convs: Vec<ConvLayer>,
    pub vote_head: Mlp2,
    pub classifier: Mlp2,
    pub layout: KernelLayout,
    pub classes: Vec<String>,
    pub config: RunConfig,
}

impl Model {
    pub fn new(config: &RunConfig, classes: &[String], rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        if classes.len() < 2 {
            return Err(Error::Config(format!(
                "need at least 2 classes, got {}",
                classes.len()
            )));
        }
        let layout = make_kernel_layout(
            config.kernel_count,
            config.kernel_sigma,
            config.kernel_origin,
        )?;
        let mut store = ParamStore::new();
        let encoder = PartEncoder::new(&mut store, "encoder", &config.encoder_widths, rng)?;
        let mut convs = Vec::new();
        let mut width = encoder.out_width();
        for (i, &w) in config.conv_widths.iter().enumerate() {
            convs.push(ConvLayer::new(
                &mut store,
                &format!("conv.{i}"),
                layout.len(),
                width,
                w,
                rng,
            )?);
            width = w;
        }
        let hidden = (width / 2).max(1);
        let vote_head = Mlp2::new(&mut store, "vote_head", [width, hidden, 3], rng)?;
        let classifier = Mlp2::new(
            &mut store,
            "classifier",
            [width, hidden, classes.len()],
            rng,
        )?;
        if config.pooling == Pooling::MaxPool {
            for id in vote_head.params() {
                store.set_trainable(id, false);
            }
        }
        store.meta.insert("classes".into(), classes.join(","));
        for line in config.to_text().lines() {
            if let Some((k, v)) = line.split_once('=') {
                store.meta.insert(format!("config.{k}"), v.to_string());
            }
        }
        Ok(Self {
            store,
            encoder,
            convs,
            vote_head,
            classifier,
            layout,
            classes: classes.to_vec(),
            config: config.clone(),
        })
    }

    /// Rebuilds the architecture recorded in a checkpoint and adopts its
    /// parameters and optimizer state.
    pub fn from_store(store: ParamStore) -> Result<Self> {
        let mut pairs = Vec::new();
        for (k, v) in &store.meta {
            if let Some(key) = k.strip_prefix("config.") {
                pairs.push((key.to_string(), v.clone()));
            }
        }
        let mut config = RunConfig::full();
        config.apply_pairs(&pairs)?;
        let classes: Vec<String> = store
            .meta
            .get("classes")
            .ok_or_else(|| Error::Checkpoint("checkpoint has no class list".into()))?
            .split(',')
            .map(String::from)
            .collect();
        let mut model = Self::new(&config, &classes, &mut ChaCha8Rng::seed_from_u64(0))?;
        if model.store.len() != store.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} parameters, architecture needs {}",
                store.len(),
                model.store.len()
            )));
        }
        for ((_, a), (_, b)) in model.store.iter().zip(store.iter()) {
            if a.name != b.name || a.value.shape() != b.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {} does not match the architecture",
                    b.name
                )));
            }
        }
        model.store = store;
        Ok(model)
    }

    pub fn prepare(&self, obj: &LabeledObject, rng: &mut impl Rng) -> Result<PreparedObject> {
        if obj.label >= self.classes.len() {
            return Err(Error::LabelOutOfRange {
                label: obj.label,
                classes: self.classes.len(),
            });
        }
        prepare_object(obj, &self.config, &self.layout, rng)
    }

    /// One pass over a batch of objects on a single tape. Batch-norm
    /// statistics in training mode pool every part of the batch.
    pub fn forward_batch(&self, fw: &mut Forward, objs: &[&PreparedObject]) -> Result<BatchPass> {
        if objs.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let n = objs[0].points_per_part;
        let mut offsets = Vec::with_capacity(objs.len());
        let mut total = 0usize;
        for o in objs {
            if o.points_per_part != n || o.parts == 0 {
                return Err(Error::InvalidArgument(format!(
                    "object {} cannot join the batch",
                    o.id
                )));
            }
            offsets.push(total);
            total += o.parts;
        }
        let canonical = Tensor::new(
            vec![total * n, 3],
            objs.iter()
                .flat_map(|o| o.canonical.data().iter().copied())
                .collect(),
        )?;
        let mut terms = Vec::new();
        for (o, &off) in objs.iter().zip(&offsets) {
            terms.extend(o.terms.terms.iter().map(|t| AggregationTerm {
                dst: t.dst + off as u32,
                src: t.src + off as u32,
                ..*t
            }));
        }
        let terms = ConvTerms {
            terms: Arc::from(terms),
            kernels: self.layout.len(),
            nodes: total,
        };

        let x = fw.tape.constant(canonical);
        let mut f = self.encoder.forward(fw, x, n)?;
        for conv in &self.convs {
            f = conv.forward(fw, f, &terms)?;
        }
        let labels: Vec<usize> = objs.iter().map(|o| o.label).collect();

        match self.config.pooling {
            Pooling::MaxPool => {
                let groups: Vec<Vec<usize>> = objs
                    .iter()
                    .zip(&offsets)
                    .map(|(o, &off)| (off..off + o.parts).collect())
                    .collect();
                let pooled = fw.tape.segment_max(f, &groups)?;
                let logits = self.classifier.forward(fw, pooled)?;
                let class_loss = fw.tape.softmax_cross_entropy(logits, &labels)?;
                let lv = fw.tape.value(logits);
                let probs = crate::nn::softmax_rows(lv);
                let c = lv.cols();
                let predictions = (0..objs.len())
                    .map(|b| {
                        let row = &probs[b * c..(b + 1) * c];
                        let class = argmax(row);
                        ObjectPrediction {
                            class,
                            confidence: row[class],
                            clusters: Vec::new(),
                            selected_cluster: None,
                            votes: Vec::new(),
                        }
                    })
                    .collect();
                Ok(BatchPass {
                    loss: class_loss,
                    class_loss,
                    vote_loss: None,
                    predictions,
                })
            }
            Pooling::VoteMaxPool => {
                let u = self.vote_head.forward(fw, f)?;
                let geom = VoteGeometry {
                    centers: objs
                        .iter()
                        .flat_map(|o| o.geom.centers.iter().copied())
                        .collect(),
                    frames: objs
                        .iter()
                        .flat_map(|o| o.geom.frames.iter().copied())
                        .collect(),
                    radii: objs
                        .iter()
                        .flat_map(|o| o.geom.radii.iter().copied())
                        .collect(),
                };
                let (votes, set) = place_votes(&mut fw.tape, u, &geom)?;
                let mut clusters = Vec::new();
                let mut cluster_ranges = Vec::with_capacity(objs.len());
                for (o, &off) in objs.iter().zip(&offsets) {
                    let local = &set.votes[off..off + o.parts];
                    let radius = self.config.vote.cluster_radius * o.cloud_radius;
                    let start = clusters.len();
                    for mut c in cluster_votes(local, self.config.vote.num_clusters, radius)? {
                        c.members.iter_mut().for_each(|m| *m += off);
                        clusters.push(c);
                    }
                    cluster_ranges.push(start..clusters.len());
                }
                let (logits, preds) = classify_clusters(fw, f, &clusters, &self.classifier)?;
                let mut selected_rows = Vec::with_capacity(objs.len());
                let mut predictions = Vec::with_capacity(objs.len());
                for ((range, o), &off) in cluster_ranges.into_iter().zip(objs).zip(&offsets) {
                    let mine = &preds[range.clone()];
                    let (sel, class) = select_prediction(mine)?;
                    selected_rows.push(range.start + sel);
                    let mut local_clusters = mine.to_vec();
                    for c in &mut local_clusters {
                        c.members.iter_mut().for_each(|m| *m -= off);
                    }
                    predictions.push(ObjectPrediction {
                        class,
                        confidence: mine[sel].confidence,
                        clusters: local_clusters,
                        selected_cluster: Some(sel),
                        votes: set.votes[off..off + o.parts].to_vec(),
                    });
                }
                let chosen = fw.tape.select_rows(logits, selected_rows)?;
                let class_loss = fw.tape.softmax_cross_entropy(chosen, &labels)?;
                let inv: Vec<f64> = objs
                    .iter()
                    .flat_map(|o| std::iter::repeat_n(1.0 / o.vote_scale, o.parts))
                    .collect();
                let normalized = fw.tape.row_scale(votes, inv)?;
                let vote_loss = fw.tape.mean_row_sq_norm(normalized);
                let loss = crate::voting::total_loss(
                    &mut fw.tape,
                    class_loss,
                    vote_loss,
                    self.config.vote.vote_loss_weight,
                )?;
                Ok(BatchPass {
                    loss,
                    class_loss,
                    vote_loss: Some(vote_loss),
                    predictions,
                })
            }
        }
    }

    /// Inference on one prepared object.
    pub fn predict(&self, obj: &PreparedObject) -> Result<ObjectPrediction> {
        let mut fw = Forward::new(&self.store, false);
        let mut pass = self.forward_batch(&mut fw, &[obj])?;
        Ok(pass.predictions.remove(0))
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
