//! Evaluation and metrics export.

use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;

use super::augment::{perturb_eval_variant, EvalVariant};
use super::model::{object_rng, Model};
use super::synth::LabeledObject;
use crate::error::{Error, Result};

/// Printed with every evaluation report.
pub const PROVENANCE_NOTE: &str = "note: published benchmark accuracies for this architecture \
(for example 52.7 / 47.2 / 41.7 on ScanObjectNN without background) come from full-scale \
ModelNet training; they need that training to reproduce and are not asserted by this test suite.";

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub variant: EvalVariant,
    pub classes: Vec<String>,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    /// Objects dropped because the perturbation left too few points.
    pub skipped: usize,
    pub config_text: String,
    pub seconds: f64,
}

impl MetricsReport {
    pub fn total(&self) -> usize {
        self.confusion.iter().flatten().sum()
    }

    pub fn accuracy(&self) -> f64 {
        let trace: usize = (0..self.confusion.len())
            .map(|i| self.confusion[i][i])
            .sum();
        trace as f64 / self.total().max(1) as f64
    }

    /// Mean recall over classes with at least one sample.
    pub fn class_mean_accuracy(&self) -> f64 {
        let recalls: Vec<f64> = self
            .confusion
            .iter()
            .enumerate()
            .filter_map(|(i, row)| {
                let n: usize = row.iter().sum();
                (n > 0).then(|| row[i] as f64 / n as f64)
            })
            .collect();
        if recalls.is_empty() {
            0.0
        } else {
            recalls.iter().sum::<f64>() / recalls.len() as f64
        }
    }

    /// Aligned human-readable table followed by the confusion matrix.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<12} {:>8} {:>10} {:>8} {:>8}",
            "variant", "acc", "class_acc", "objects", "skipped"
        );
        let _ = writeln!(
            s,
            "{:<12} {:>8.2} {:>10.2} {:>8} {:>8}",
            self.variant.to_string(),
            100.0 * self.accuracy(),
            100.0 * self.class_mean_accuracy(),
            self.total(),
            self.skipped
        );
        let width = self
            .classes
            .iter()
            .map(String::len)
            .max()
            .unwrap_or(4)
            .max(6);
        let _ = write!(s, "\n{:<width$}", "true\\pred");
        for c in &self.classes {
            let _ = write!(s, " {c:>width$}");
        }
        s.push('\n');
        for (c, row) in self.classes.iter().zip(&self.confusion) {
            let _ = write!(s, "{c:<width$}");
            for v in row {
                let _ = write!(s, " {v:>width$}");
            }
            s.push('\n');
        }
        s
    }

    /// `metric<TAB>variant<TAB>value` lines.
    pub fn to_tsv(&self) -> String {
        let v = self.variant;
        let mut s = String::new();
        let _ = writeln!(s, "accuracy\t{v}\t{}", self.accuracy());
        let _ = writeln!(
            s,
            "class_mean_accuracy\t{v}\t{}",
            self.class_mean_accuracy()
        );
        let _ = writeln!(s, "objects\t{v}\t{}", self.total());
        let _ = writeln!(s, "skipped\t{v}\t{}", self.skipped);
        let _ = writeln!(s, "seconds\t{v}\t{}", self.seconds);
        for (i, row) in self.confusion.iter().enumerate() {
            for (j, n) in row.iter().enumerate() {
                let _ = writeln!(
                    s,
                    "confusion.{}.{}\t{v}\t{n}",
                    self.classes[i], self.classes[j]
                );
            }
        }
        s
    }

    /// Results file body: the configuration as comments, then the metrics.
    pub fn to_results_file(&self) -> String {
        let mut s = String::new();
        for line in self.config_text.lines() {
            let _ = writeln!(s, "# {line}");
        }
        s.push_str(&self.to_tsv());
        s
    }
}

/// Pass number used for evaluation randomness of a variant.
fn eval_pass(variant: EvalVariant) -> u64 {
    match variant {
        EvalVariant::None => 0,
        EvalVariant::T25 => 1,
        EvalVariant::T50Rs => 2,
        EvalVariant::Background => 3,
    }
}

/// Predicted class per object (`None` when the perturbation skipped it).
pub fn predict_all(
    model: &Model,
    objects: &[LabeledObject],
    variant: EvalVariant,
    seed: u64,
) -> Result<Vec<Option<usize>>> {
    let clutter = model.config.clutter_fraction;
    objects
        .par_iter()
        .enumerate()
        .map(|(i, obj)| {
            let mut rng = object_rng(seed, eval_pass(variant), i);
            let Some(o) = perturb_eval_variant(obj, variant, clutter, &mut rng)? else {
                return Ok(None);
            };
            let prepared = model.prepare(&o, &mut rng)?;
            Ok(Some(model.predict(&prepared)?.class))
        })
        .collect()
}

pub fn evaluate(
    model: &Model,
    objects: &[LabeledObject],
    variant: EvalVariant,
    seed: u64,
) -> Result<MetricsReport> {
    if objects.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let c = model.classes.len();
    if let Some(o) = objects.iter().find(|o| o.label >= c) {
        return Err(Error::LabelOutOfRange {
            label: o.label,
            classes: c,
        });
    }
    let start = Instant::now();
    let preds = predict_all(model, objects, variant, seed)?;
    let mut confusion = vec![vec![0usize; c]; c];
    let mut skipped = 0;
    for (o, p) in objects.iter().zip(&preds) {
        match p {
            Some(p) => confusion[o.label][*p] += 1,
            None => skipped += 1,
        }
    }
    if skipped > 0 {
        log::warn!("{variant}: skipped {skipped} objects whose crop kept fewer than 16 points");
    }
    Ok(MetricsReport {
        variant,
        classes: model.classes.clone(),
        confusion,
        skipped,
        config_text: model.config.to_text(),
        seconds: start.elapsed().as_secs_f64(),
    })
}
