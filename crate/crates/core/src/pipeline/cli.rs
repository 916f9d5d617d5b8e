//! Command-line front end.
//!
//! Any run-config key can be given as `--key=value` or `--key value` on any
//! subcommand; those flags are taken out before the remaining arguments are
//! parsed. Exit codes: 0 success, 1 usage error, 2 runtime failure.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{CommandFactory, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ablate::run_ablation;
use super::augment::EvalVariant;
use super::check::{format_gradient_suite, format_invariance, gradient_suite, invariance_suite};
use super::config::RunConfig;
use super::dataset::load_split;
use super::eval::{evaluate, MetricsReport, PROVENANCE_NOTE};
use super::model::Model;
use super::synth::Split;
use super::train::train;
use crate::error::{Error, Result};
use crate::geometry::io::write_xyz_normals;
use crate::geometry::{load_cloud, CloudFormat};
use crate::nn::ParamStore;
use crate::part_graph::build_part_graph;
use crate::part_graph::export::{write_graph, GraphRecord};

/// Canonical-point tolerance of the invariance check.
const CANONICAL_TOL: f64 = 1e-5;

#[derive(Debug, Parser)]
#[command(
    name = "partvote",
    about = "Part-graph point cloud classifier: data synthesis, training, evaluation and checks",
    after_help = "Every run-config key (see `partvote synth --help` for the file format) can be \
overridden with --key=value, for example --profile=desk --epochs=10 --layer=kpconv."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the synthetic train and test sets as class-per-directory
    /// xyz-normals files, plus the config that produced them.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// Run-config file (`key=value` lines).
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Build the part graph of one cloud and write it in the text
    /// interchange format.
    Graph {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// off, ply or xyz-normals; taken from the extension when omitted.
        #[arg(long)]
        format: Option<String>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train a model and report held-out accuracy.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Final checkpoint path.
        #[arg(long, default_value = "partvote.ckpt")]
        out: PathBuf,
        /// Write a results file with the config and test metrics.
        #[arg(long)]
        results: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on the test split under perturbation variants.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// none, t25, t50_rs, background or all.
        #[arg(long, default_value = "all")]
        variant: String,
        #[arg(long)]
        results: Option<PathBuf>,
    },
    /// Train and evaluate the layer by pooling grid on three consecutive
    /// seeds starting at --seed.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run the gradient and invariance self-checks.
    Check {
        /// Random seeds per gradient case.
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        /// Objects in the invariance check.
        #[arg(long, default_value_t = 50)]
        objects: usize,
        /// Use this model for the invariance check instead of a freshly
        /// initialized one.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

/// Arguments left for clap, and the run-config overrides taken out.
type SplitArgs = (Vec<OsString>, Vec<(String, String)>);

/// Removes `--key=value` and `--key value` pairs naming run-config keys.
fn split_overrides(args: &[OsString]) -> std::result::Result<SplitArgs, String> {
    let mut rest = Vec::new();
    let mut pairs = Vec::new();
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let Some(flag) = a.to_str().and_then(|s| s.strip_prefix("--")) else {
            rest.push(a.clone());
            continue;
        };
        let (key, inline) = match flag.split_once('=') {
            Some((k, v)) => (k, Some(v.to_string())),
            None => (flag, None),
        };
        if !RunConfig::is_key(key) {
            rest.push(a.clone());
            continue;
        }
        let value = match inline {
            Some(v) => v,
            None => it
                .next()
                .and_then(|v| v.to_str())
                .map(String::from)
                .ok_or_else(|| format!("--{key} needs a value"))?,
        };
        pairs.push((key.to_string(), value));
    }
    Ok((rest, pairs))
}

enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

fn usage_text() -> String {
    Cli::command().render_usage().to_string()
}

fn build_config(
    base: RunConfig,
    file: Option<&Path>,
    overrides: &[(String, String)],
) -> std::result::Result<RunConfig, Failure> {
    let mut cfg = base;
    if let Some(path) = file {
        let text = std::fs::read_to_string(path).map_err(Error::from)?;
        cfg.apply_text(&text)
            .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    }
    cfg.apply_pairs(overrides)
        .map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(cfg)
}

fn write_results(path: &Path, reports: &[MetricsReport]) -> Result<()> {
    let mut body = String::new();
    for (i, r) in reports.iter().enumerate() {
        if i == 0 {
            body.push_str(&r.to_results_file());
        } else {
            body.push_str(&r.to_tsv());
        }
    }
    std::fs::write(path, body)?;
    Ok(())
}

fn run(command: Command, overrides: &[(String, String)]) -> std::result::Result<(), Failure> {
    match command {
        Command::Synth { out, config } => {
            let cfg = build_config(RunConfig::default(), config.as_deref(), overrides)?;
            for split in [Split::Train, Split::Test] {
                let set = load_split(&cfg, split)?;
                let dir = out.join(if split == Split::Train {
                    "train"
                } else {
                    "test"
                });
                for c in &set.classes {
                    std::fs::create_dir_all(dir.join(c)).map_err(Error::from)?;
                }
                for o in &set.objects {
                    let name = o.id.rsplit('-').next().unwrap_or("0");
                    write_xyz_normals(
                        &o.cloud,
                        &dir.join(&set.classes[o.label]).join(format!("{name}.xyz")),
                    )?;
                }
                println!("{}: {} objects", dir.display(), set.objects.len());
            }
            std::fs::write(out.join("config.txt"), cfg.to_text()).map_err(Error::from)?;
        }
        Command::Graph {
            input,
            out,
            format,
            config,
        } => {
            let cfg = build_config(RunConfig::default(), config.as_deref(), overrides)?;
            let format = match format {
                Some(f) => f
                    .parse()
                    .map_err(|e: Error| Failure::Usage(e.to_string()))?,
                None => CloudFormat::from_path(&input).ok_or_else(|| {
                    Failure::Usage(format!(
                        "cannot tell the format of {}; pass --format",
                        input.display()
                    ))
                })?,
            };
            let cloud = load_cloud(&input, format)?;
            let graph = build_part_graph(
                &cloud,
                &cfg.grow,
                &cfg.connect,
                &mut ChaCha8Rng::seed_from_u64(cfg.seed),
            );
            std::fs::write(&out, write_graph(&GraphRecord::from(&graph))).map_err(Error::from)?;
            println!(
                "{}: {} parts, {} edges",
                out.display(),
                graph.parts.len(),
                graph.edges.len()
            );
        }
        Command::Train {
            config,
            out,
            results,
        } => {
            let cfg = build_config(RunConfig::default(), config.as_deref(), overrides)?;
            let train_set = load_split(&cfg, Split::Train)?;
            let test_set = load_split(&cfg, Split::Test)?;
            if test_set.classes != train_set.classes {
                return Err(Error::ClassMismatch {
                    expected: train_set.classes,
                    found: test_set.classes,
                }
                .into());
            }
            let outcome = train(&cfg, &train_set.classes, &train_set.objects, |s| {
                println!(
                    "epoch {:>3} loss {:.4} class {:.4} vote {:.4} train_acc {:.2} ({:.1}s)",
                    s.epoch,
                    s.loss,
                    s.class_loss,
                    s.vote_loss,
                    100.0 * s.accuracy,
                    s.seconds
                );
            })?;
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(Error::from)?;
            }
            outcome.model.store.save(&out)?;
            let report = evaluate(
                &outcome.model,
                &test_set.objects,
                EvalVariant::None,
                cfg.seed,
            )?;
            print!("{}", report.to_table());
            println!("checkpoint: {}", out.display());
            if let Some(path) = results {
                write_results(&path, &[report])?;
            }
        }
        Command::Eval {
            checkpoint,
            variant,
            results,
        } => {
            let variants: Vec<EvalVariant> = if variant == "all" {
                EvalVariant::ALL.to_vec()
            } else {
                vec![variant
                    .parse()
                    .map_err(|e: Error| Failure::Usage(e.to_string()))?]
            };
            let mut model = Model::from_store(ParamStore::load(&checkpoint)?)?;
            let data_cfg = build_config(model.config.clone(), None, overrides)?;
            model.config.clutter_fraction = data_cfg.clutter_fraction;
            let test_set = load_split(&data_cfg, Split::Test)?;
            if test_set.classes != model.classes {
                return Err(Error::ClassMismatch {
                    expected: model.classes.clone(),
                    found: test_set.classes,
                }
                .into());
            }
            let mut reports = Vec::new();
            for v in variants {
                let r = evaluate(&model, &test_set.objects, v, data_cfg.seed)?;
                print!("{}\n{}", r.to_table(), r.to_tsv());
                reports.push(r);
            }
            println!("{PROVENANCE_NOTE}");
            if let Some(path) = results {
                write_results(&path, &reports)?;
            }
        }
        Command::Ablate { config } => {
            let cfg = build_config(RunConfig::default(), config.as_deref(), overrides)?;
            let report = run_ablation(&cfg, cfg.seed)?;
            print!("{}", report.to_table());
        }
        Command::Check {
            seeds,
            objects,
            checkpoint,
        } => {
            let grads = gradient_suite(seeds)?;
            print!("{}", format_gradient_suite(&grads));
            let model = match checkpoint {
                Some(p) => Model::from_store(ParamStore::load(&p)?)?,
                None => {
                    let cfg = build_config(RunConfig::desk(), None, overrides)?;
                    Model::new(&cfg, &cfg.classes, &mut ChaCha8Rng::seed_from_u64(cfg.seed))?
                }
            };
            let mut data_cfg = model.config.clone();
            data_cfg.test_per_class = (2 * objects).div_ceil(data_cfg.classes.len().max(1));
            let candidates = load_split(&data_cfg, Split::Test)?;
            let inv = invariance_suite(&model, &candidates.objects, objects, data_cfg.seed)?;
            print!("{}", format_invariance(&inv, CANONICAL_TOL));
            let ok = grads.iter().all(|(_, r)| r.passed())
                && inv.passed(CANONICAL_TOL)
                && inv.objects == objects;
            if !ok {
                return Err(Error::InvalidArgument("self-check failed".into()).into());
            }
        }
    }
    Ok(())
}

/// Runs the command line `argv` (program name first) and returns the exit
/// code.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let (rest, overrides) = match split_overrides(argv.get(1..).unwrap_or(&[])) {
        Ok(x) => x,
        Err(msg) => {
            eprintln!("error: {msg}\n\n{}", usage_text());
            return 1;
        }
    };
    let program = argv.first().cloned().unwrap_or_else(|| "partvote".into());
    let cli = match Cli::try_parse_from(std::iter::once(program).chain(rest)) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp
                | ErrorKind::DisplayVersion
                | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
                    if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand {
                        1
                    } else {
                        0
                    }
                }
                _ => 1,
            };
            if code == 0 {
                print!("{e}");
            } else {
                eprint!("{e}");
            }
            return code;
        }
    };
    match run(cli.command, &overrides) {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}\n\n{}", usage_text());
            1
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            2
        }
    }
}
