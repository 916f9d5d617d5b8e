//! Deterministic training loop.

use std::path::PathBuf;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::augment::{augment_normal_noise, augment_occlusion};
use super::config::RunConfig;
use super::model::{object_rng, Model, PreparedObject};
use super::synth::LabeledObject;
use crate::error::{Error, Result};
use crate::nn::{AdamConfig, Forward};

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub class_loss: f64,
    pub vote_loss: f64,
    /// Accuracy of the training-mode predictions made during the epoch.
    pub accuracy: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub history: Vec<EpochStats>,
    /// Checkpoints written, one per epoch.
    pub checkpoints: Vec<PathBuf>,
}

/// Offsets pass numbers so training and evaluation draw different streams.
const TRAIN_PASS: u64 = 1 << 32;

/// Part graphs are regrown every epoch from a fresh stream, so the model
/// sees a new random region-growing realization of each object, as it will
/// at evaluation time.
fn prepare_all(
    model: &Model,
    objects: &[LabeledObject],
    cfg: &RunConfig,
    epoch: usize,
) -> Result<Vec<PreparedObject>> {
    objects
        .par_iter()
        .enumerate()
        .map(|(i, obj)| {
            let mut rng = object_rng(cfg.seed, TRAIN_PASS + epoch as u64, i);
            let mut o = obj.clone();
            if cfg.augment_occlusion {
                o.cloud = augment_occlusion(&o.cloud, &mut rng);
            }
            if cfg.augment_normal_noise > 0.0 {
                o.cloud = augment_normal_noise(&o.cloud, cfg.augment_normal_noise, &mut rng)?;
            }
            model.prepare(&o, &mut rng)
        })
        .collect()
}

/// Trains a fresh model on `objects`. `on_epoch` sees each epoch's stats as
/// they finish.
pub fn train(
    cfg: &RunConfig,
    classes: &[String],
    objects: &[LabeledObject],
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainOutcome> {
    if objects.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = Model::new(cfg, classes, &mut init_rng)?;
    let adam = AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    };
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut checkpoints = Vec::new();
    if let Some(dir) = &cfg.checkpoint_dir {
        std::fs::create_dir_all(dir)?;
    }

    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        let prepared = prepare_all(&model, objects, cfg, epoch)?;
        let mut order: Vec<usize> = (0..prepared.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(
            cfg.seed.wrapping_add(epoch as u64),
        ));

        let (mut loss_sum, mut class_sum, mut vote_sum, mut correct) = (0.0, 0.0, 0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let objs: Vec<&PreparedObject> = batch.iter().map(|&i| &prepared[i]).collect();
            let mut fw = Forward::new(&model.store, true);
            let pass = model.forward_batch(&mut fw, &objs)?;
            let loss = fw.tape.value(pass.loss).item();
            if !loss.is_finite() {
                let culprit = pass
                    .predictions
                    .iter()
                    .zip(&objs)
                    .find(|(p, _)| {
                        !p.confidence.is_finite()
                            || p.votes.iter().any(|v| !v.iter().all(|c| c.is_finite()))
                    })
                    .map_or(objs[0], |(_, o)| *o);
                return Err(Error::NonFiniteLoss {
                    object: culprit.id.clone(),
                    detail: format!(
                        "epoch {epoch}: loss {loss}, {} parts, cloud radius {}, batch {:?}",
                        culprit.parts,
                        culprit.cloud_radius,
                        objs.iter().map(|o| o.id.as_str()).collect::<Vec<_>>()
                    ),
                });
            }
            let b = objs.len() as f64;
            loss_sum += loss * b;
            class_sum += fw.tape.value(pass.class_loss).item() * b;
            if let Some(v) = pass.vote_loss {
                vote_sum += fw.tape.value(v).item() * b;
            }
            correct += pass
                .predictions
                .iter()
                .zip(&objs)
                .filter(|(p, o)| p.class == o.label)
                .count();
            let grads = fw.gradients(pass.loss);
            let updates = fw.into_bn_updates();
            if !grads.is_finite() {
                return Err(Error::NonFiniteLoss {
                    object: objs[0].id.clone(),
                    detail: format!("epoch {epoch}: non-finite gradient"),
                });
            }
            model.store.adam_step(&grads, &adam)?;
            model.store.apply_bn_updates(&updates);
        }
        let n = prepared.len() as f64;
        let stats = EpochStats {
            epoch,
            loss: loss_sum / n,
            class_loss: class_sum / n,
            vote_loss: vote_sum / n,
            accuracy: correct as f64 / n,
            seconds: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: loss {:.4} (class {:.4}, vote {:.4}) accuracy {:.3} in {:.1}s",
            stats.loss,
            stats.class_loss,
            stats.vote_loss,
            stats.accuracy,
            stats.seconds
        );
        on_epoch(&stats);
        history.push(stats);
        if let Some(dir) = &cfg.checkpoint_dir {
            let path = dir.join(format!("epoch-{epoch:03}.ckpt"));
            model.store.save(&path)?;
            checkpoints.push(path);
        }
    }
    Ok(TrainOutcome {
        model,
        history,
        checkpoints,
    })
}
