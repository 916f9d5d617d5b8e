//! The layer by pooling ablation grid on synthetic data.

use std::fmt::Write as _;

use super::augment::EvalVariant;
use super::config::{Pooling, RunConfig};
use super::dataset::{split_rng, synth_split};
use super::eval::evaluate;
use super::synth::Split;
use super::train::train;
use crate::error::Result;
use crate::skpconv::ConvKind;

pub const ABLATION_SEEDS: usize = 3;

/// One grid cell: accuracies per seed, clean and with clutter.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub layer: ConvKind,
    pub pooling: Pooling,
    pub clean: Vec<f64>,
    pub clutter: Vec<f64>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

impl AblationRow {
    pub fn clean_mean(&self) -> f64 {
        mean(&self.clean)
    }

    pub fn clutter_mean(&self) -> f64 {
        mean(&self.clutter)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationReport {
    pub seeds: Vec<u64>,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn row(&self, layer: ConvKind, pooling: Pooling) -> Option<&AblationRow> {
        self.rows
            .iter()
            .find(|r| r.layer == layer && r.pooling == pooling)
    }

    /// Mean accuracy over poolings for one layer, clutter variant.
    pub fn layer_clutter_mean(&self, layer: ConvKind) -> f64 {
        mean(
            &self
                .rows
                .iter()
                .filter(|r| r.layer == layer)
                .map(AblationRow::clutter_mean)
                .collect::<Vec<_>>(),
        )
    }

    /// Aligned table of percentages. Contains no timings, so equal inputs
    /// give byte-identical output.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        let _ = writeln!(s, "seeds: {}", seeds.join(","));
        let _ = writeln!(
            s,
            "{:<8} {:<12} {:>8} {:>8}   per-seed clean / clutter",
            "layer", "pooling", "clean", "clutter"
        );
        for r in &self.rows {
            let per: Vec<String> = r
                .clean
                .iter()
                .zip(&r.clutter)
                .map(|(a, b)| format!("{:.1}/{:.1}", 100.0 * a, 100.0 * b))
                .collect();
            let _ = writeln!(
                s,
                "{:<8} {:<12} {:>8.2} {:>8.2}   {}",
                r.layer.to_string(),
                r.pooling.to_string(),
                100.0 * r.clean_mean(),
                100.0 * r.clutter_mean(),
                per.join("  ")
            );
        }
        s
    }
}

/// Trains every layer and pooling combination on seeds `seed..seed+3` and
/// evaluates each on the clean and cluttered test sets.
pub fn run_ablation(base: &RunConfig, seed: u64) -> Result<AblationReport> {
    let seeds: Vec<u64> = (0..ABLATION_SEEDS as u64).map(|i| seed + i).collect();
    let mut rows = Vec::new();
    for layer in [ConvKind::SkpConv, ConvKind::KpConv] {
        for pooling in [Pooling::VoteMaxPool, Pooling::MaxPool] {
            rows.push(AblationRow {
                layer,
                pooling,
                clean: Vec::new(),
                clutter: Vec::new(),
            });
        }
    }
    for &s in &seeds {
        let mut data_cfg = base.clone();
        data_cfg.seed = s;
        let train_set = synth_split(&data_cfg, Split::Train, &mut split_rng(s, Split::Train))?;
        let test_set = synth_split(&data_cfg, Split::Test, &mut split_rng(s, Split::Test))?;
        for row in &mut rows {
            let mut cfg = data_cfg.clone();
            cfg.layer = row.layer;
            cfg.pooling = row.pooling;
            cfg.checkpoint_dir = None;
            log::info!("ablation seed {s}: {} + {}", cfg.layer, cfg.pooling);
            let model = train(&cfg, &train_set.classes, &train_set.objects, |_| {})?.model;
            row.clean
                .push(evaluate(&model, &test_set.objects, EvalVariant::None, s)?.accuracy());
            row.clutter
                .push(evaluate(&model, &test_set.objects, EvalVariant::Background, s)?.accuracy());
        }
    }
    Ok(AblationReport { seeds, rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_is_stable_and_means_are_right() {
        let report = AblationReport {
            seeds: vec![7, 8],
            rows: vec![
                AblationRow {
                    layer: ConvKind::SkpConv,
                    pooling: Pooling::VoteMaxPool,
                    clean: vec![1.0, 0.5],
                    clutter: vec![0.5, 0.5],
                },
                AblationRow {
                    layer: ConvKind::KpConv,
                    pooling: Pooling::VoteMaxPool,
                    clean: vec![0.25, 0.25],
                    clutter: vec![0.0, 0.5],
                },
            ],
        };
        assert_eq!(
            report
                .row(ConvKind::SkpConv, Pooling::VoteMaxPool)
                .unwrap()
                .clean_mean(),
            0.75
        );
        assert_eq!(report.layer_clutter_mean(ConvKind::KpConv), 0.25);
        let t = report.to_table();
        assert_eq!(t, report.clone().to_table());
        assert!(
            t.contains("skpconv  votemaxpool     75.00    50.00   100.0/50.0  50.0/50.0"),
            "{t}"
        );
    }
}
