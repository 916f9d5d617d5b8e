//! Flat `key=value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. The `profile` key
//! (`full` or `desk`) selects the base values; every other key then
//! overrides one field. The serialized form lists every key, so a results
//! file records the exact configuration that produced it.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::part_graph::{ConnectConfig, GrowConfig};
use crate::skpconv::ConvKind;
use crate::voting::VoteConfig;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Pooling {
    VoteMaxPool,
    MaxPool,
}

impl FromStr for Pooling {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "votemaxpool" => Ok(Self::VoteMaxPool),
            "maxpool" => Ok(Self::MaxPool),
            _ => Err(Error::Config(format!(
                "unknown pooling {s:?} (expected votemaxpool or maxpool)"
            ))),
        }
    }
}

impl std::fmt::Display for Pooling {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::VoteMaxPool => "votemaxpool",
            Self::MaxPool => "maxpool",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub profile: String,
    pub seed: u64,
    pub layer: ConvKind,
    pub pooling: Pooling,
    pub use_lrf: bool,

    pub grow: GrowConfig,
    pub connect: ConnectConfig,

    pub kernel_count: usize,
    pub kernel_origin: bool,
    pub kernel_sigma: f64,

    pub encoder_widths: Vec<usize>,
    pub conv_widths: Vec<usize>,
    pub vote: VoteConfig,

    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,

    pub classes: Vec<String>,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub points_per_object: usize,
    pub scale_min: f64,
    pub scale_max: f64,
    pub noise: f64,

    pub augment_occlusion: bool,
    /// Standard deviation, in radians, of the normal perturbation angle.
    pub augment_normal_noise: f64,
    /// Clutter share of the points in background scenes.
    pub clutter_fraction: f64,

    pub train_dir: Option<PathBuf>,
    pub test_dir: Option<PathBuf>,
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::full()
    }
}

impl RunConfig {
    /// Defaults at the architecture's nominal size.
    pub fn full() -> Self {
        Self {
            profile: "full".into(),
            seed: 0,
            layer: ConvKind::SkpConv,
            pooling: Pooling::VoteMaxPool,
            use_lrf: true,
            grow: GrowConfig::default(),
            connect: ConnectConfig::default(),
            kernel_count: 14,
            kernel_origin: true,
            kernel_sigma: 0.7,
            encoder_widths: vec![64, 128, 256],
            conv_widths: vec![256, 256, 256, 256],
            vote: VoteConfig::default(),
            lr: 1e-3,
            epochs: 30,
            batch_size: 8,
            classes: ["sphere", "box", "cylinder", "cone"]
                .map(String::from)
                .to_vec(),
            train_per_class: 50,
            test_per_class: 25,
            points_per_object: 4096,
            scale_min: 0.5,
            scale_max: 2.0,
            noise: 0.0,
            augment_occlusion: false,
            augment_normal_noise: 0.0,
            clutter_fraction: 0.5,
            train_dir: None,
            test_dir: None,
            checkpoint_dir: None,
        }
    }

    /// Reduced sizes that train in minutes on one CPU core.
    pub fn desk() -> Self {
        let mut c = Self::full();
        c.profile = "desk".into();
        c.grow.max_parts = 64;
        c.grow.points_per_part = 32;
        c.encoder_widths = vec![16, 32, 64];
        c.conv_widths = vec![64, 64, 64, 64];
        c.points_per_object = 768;
        c.lr = 3e-3;
        c
    }

    pub fn for_profile(name: &str) -> Result<Self> {
        match name {
            "full" => Ok(Self::full()),
            "desk" => Ok(Self::desk()),
            _ => Err(Error::Config(format!(
                "unknown profile {name:?} (expected full or desk)"
            ))),
        }
    }

    /// Every key accepted by [`RunConfig::set`].
    pub const KEYS: &'static [&'static str] = &[
        "version",
        "profile",
        "seed",
        "layer",
        "pooling",
        "use_lrf",
        "angle_threshold",
        "max_parts",
        "points_per_part",
        "knn",
        "real_data",
        "real_data_multiplier",
        "spatial_fallback",
        "cone_half_angle_deg",
        "opposite_half_angle_deg",
        "kernel_count",
        "kernel_origin",
        "kernel_sigma",
        "encoder_widths",
        "conv_widths",
        "num_clusters",
        "cluster_radius",
        "vote_loss_weight",
        "lr",
        "epochs",
        "batch_size",
        "classes",
        "train_per_class",
        "test_per_class",
        "points_per_object",
        "scale_min",
        "scale_max",
        "noise",
        "augment_occlusion",
        "augment_normal_noise",
        "clutter_fraction",
        "train_dir",
        "test_dir",
        "checkpoint_dir",
    ];

    pub fn is_key(key: &str) -> bool {
        Self::KEYS.contains(&key)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
        }
        fn flag(key: &str, v: &str) -> Result<bool> {
            match v {
                "true" | "1" | "yes" => Ok(true),
                "false" | "0" | "no" => Ok(false),
                _ => Err(Error::Config(format!(
                    "{key}: expected true or false, got {v:?}"
                ))),
            }
        }
        fn list(key: &str, v: &str) -> Result<Vec<usize>> {
            v.split(',').map(|t| num(key, t.trim())).collect()
        }
        fn path(v: &str) -> Option<PathBuf> {
            (!v.is_empty()).then(|| PathBuf::from(v))
        }
        let v = value.trim();
        match key {
            "version" => {
                let ver: u32 = num(key, v)?;
                if ver != CONFIG_VERSION {
                    return Err(Error::Config(format!(
                        "config version {ver} is not supported (expected {CONFIG_VERSION})"
                    )));
                }
            }
            "profile" => {
                let base = Self::for_profile(v)?;
                *self = base;
            }
            "seed" => self.seed = num(key, v)?,
            "layer" => self.layer = v.parse()?,
            "pooling" => self.pooling = v.parse()?,
            "use_lrf" => self.use_lrf = flag(key, v)?,
            "angle_threshold" => self.grow.angle_threshold = num(key, v)?,
            "max_parts" => self.grow.max_parts = num(key, v)?,
            "points_per_part" => self.grow.points_per_part = num(key, v)?,
            "knn" => self.grow.knn = num(key, v)?,
            "real_data" => self.grow.real_data = flag(key, v)?,
            "real_data_multiplier" => self.grow.real_data_multiplier = num(key, v)?,
            "spatial_fallback" => self.connect.use_spatial_fallback = flag(key, v)?,
            "cone_half_angle_deg" => {
                self.connect.cone_half_angle = num::<f64>(key, v)?.to_radians()
            }
            "opposite_half_angle_deg" => {
                self.connect.opposite_half_angle = num::<f64>(key, v)?.to_radians()
            }
            "kernel_count" => self.kernel_count = num(key, v)?,
            "kernel_origin" => self.kernel_origin = flag(key, v)?,
            "kernel_sigma" => self.kernel_sigma = num(key, v)?,
            "encoder_widths" => self.encoder_widths = list(key, v)?,
            "conv_widths" => self.conv_widths = list(key, v)?,
            "num_clusters" => self.vote.num_clusters = num(key, v)?,
            "cluster_radius" => self.vote.cluster_radius = num(key, v)?,
            "vote_loss_weight" => self.vote.vote_loss_weight = num(key, v)?,
            "lr" => self.lr = num(key, v)?,
            "epochs" => self.epochs = num(key, v)?,
            "batch_size" => self.batch_size = num(key, v)?,
            "classes" => {
                self.classes = v
                    .split(',')
                    .map(|s| s.trim().to_string())
                    .filter(|s| !s.is_empty())
                    .collect()
            }
            "train_per_class" => self.train_per_class = num(key, v)?,
            "test_per_class" => self.test_per_class = num(key, v)?,
            "points_per_object" => self.points_per_object = num(key, v)?,
            "scale_min" => self.scale_min = num(key, v)?,
            "scale_max" => self.scale_max = num(key, v)?,
            "noise" => self.noise = num(key, v)?,
            "augment_occlusion" => self.augment_occlusion = flag(key, v)?,
            "augment_normal_noise" => self.augment_normal_noise = num(key, v)?,
            "clutter_fraction" => self.clutter_fraction = num(key, v)?,
            "train_dir" => self.train_dir = path(v),
            "test_dir" => self.test_dir = path(v),
            "checkpoint_dir" => self.checkpoint_dir = path(v),
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Applies `key=value` lines. A `profile` line is applied first wherever
    /// it appears, so it never clobbers other keys.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut pairs = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key=value, got {line:?}", i + 1))
            })?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        self.apply_pairs(&pairs)
    }

    pub fn apply_pairs(&mut self, pairs: &[(String, String)]) -> Result<()> {
        for (k, v) in pairs.iter().filter(|(k, _)| k == "profile") {
            self.set(k, v)?;
        }
        for (k, v) in pairs.iter().filter(|(k, _)| k != "profile") {
            self.set(k, v)?;
        }
        self.validate()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = Self::full();
        c.apply_text(text)?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.vote.validate()?;
        let bad = |m: String| Err(Error::Config(m));
        if self.classes.len() < 2 && self.train_dir.is_none() {
            return bad("need at least 2 classes".into());
        }
        if self.encoder_widths.is_empty()
            || self.conv_widths.is_empty()
            || self
                .encoder_widths
                .iter()
                .chain(&self.conv_widths)
                .any(|&w| w == 0)
        {
            return bad("layer widths must be non-empty lists of positive integers".into());
        }
        if self.kernel_count < 2 || self.kernel_sigma.is_nan() || self.kernel_sigma <= 0.0 {
            return bad("need kernel_count >= 2 and kernel_sigma > 0".into());
        }
        if self.batch_size == 0 || self.lr.is_nan() || self.lr <= 0.0 {
            return bad("need batch_size >= 1 and lr > 0".into());
        }
        if self.grow.max_parts == 0 || self.grow.points_per_part == 0 || self.grow.knn < 3 {
            return bad("need max_parts >= 1, points_per_part >= 1, knn >= 3".into());
        }
        if !(self.scale_min > 0.0 && self.scale_max >= self.scale_min) {
            return bad("need 0 < scale_min <= scale_max".into());
        }
        if !(0.0..1.0).contains(&self.clutter_fraction) {
            return bad("clutter_fraction must be in [0, 1)".into());
        }
        if self.points_per_object < 16 {
            return bad("points_per_object must be at least 16".into());
        }
        Ok(())
    }

    /// Every key, one `key=value` per line, loadable by [`RunConfig::from_text`].
    pub fn to_text(&self) -> String {
        let join = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        let p = |p: &Option<PathBuf>| {
            p.as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default()
        };
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k}={v}");
        };
        kv("version", CONFIG_VERSION.to_string());
        kv("profile", self.profile.clone());
        kv("seed", self.seed.to_string());
        kv("layer", self.layer.to_string());
        kv("pooling", self.pooling.to_string());
        kv("use_lrf", self.use_lrf.to_string());
        kv("angle_threshold", self.grow.angle_threshold.to_string());
        kv("max_parts", self.grow.max_parts.to_string());
        kv("points_per_part", self.grow.points_per_part.to_string());
        kv("knn", self.grow.knn.to_string());
        kv("real_data", self.grow.real_data.to_string());
        kv(
            "real_data_multiplier",
            self.grow.real_data_multiplier.to_string(),
        );
        kv(
            "spatial_fallback",
            self.connect.use_spatial_fallback.to_string(),
        );
        kv(
            "cone_half_angle_deg",
            self.connect.cone_half_angle.to_degrees().to_string(),
        );
        kv(
            "opposite_half_angle_deg",
            self.connect.opposite_half_angle.to_degrees().to_string(),
        );
        kv("kernel_count", self.kernel_count.to_string());
        kv("kernel_origin", self.kernel_origin.to_string());
        kv("kernel_sigma", self.kernel_sigma.to_string());
        kv("encoder_widths", join(&self.encoder_widths));
        kv("conv_widths", join(&self.conv_widths));
        kv("num_clusters", self.vote.num_clusters.to_string());
        kv("cluster_radius", self.vote.cluster_radius.to_string());
        kv("vote_loss_weight", self.vote.vote_loss_weight.to_string());
        kv("lr", self.lr.to_string());
        kv("epochs", self.epochs.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("classes", self.classes.join(","));
        kv("train_per_class", self.train_per_class.to_string());
        kv("test_per_class", self.test_per_class.to_string());
        kv("points_per_object", self.points_per_object.to_string());
        kv("scale_min", self.scale_min.to_string());
        kv("scale_max", self.scale_max.to_string());
        kv("noise", self.noise.to_string());
        kv("augment_occlusion", self.augment_occlusion.to_string());
        kv(
            "augment_normal_noise",
            self.augment_normal_noise.to_string(),
        );
        kv("clutter_fraction", self.clutter_fraction.to_string());
        kv("train_dir", p(&self.train_dir));
        kv("test_dir", p(&self.test_dir));
        kv("checkpoint_dir", p(&self.checkpoint_dir));
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut c = RunConfig::desk();
        c.seed = 42;
        c.layer = ConvKind::KpConv;
        c.pooling = Pooling::MaxPool;
        c.kernel_sigma = 0.65;
        c.checkpoint_dir = Some("/tmp/ck".into());
        let back = RunConfig::from_text(&c.to_text()).unwrap();
        assert_eq!(back.to_text(), c.to_text());
        assert_eq!(back, c);
    }

    #[test]
    fn every_key_is_serialized() {
        let text = RunConfig::full().to_text();
        let keys: Vec<&str> = text.lines().map(|l| l.split_once('=').unwrap().0).collect();
        assert_eq!(keys, RunConfig::KEYS);
    }

    #[test]
    fn profile_applies_before_overrides() {
        let c = RunConfig::from_text("epochs=3\nprofile=desk\n").unwrap();
        assert_eq!(c.profile, "desk");
        assert_eq!(c.epochs, 3);
        assert_eq!(c.encoder_widths, RunConfig::desk().encoder_widths);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(RunConfig::from_text("nonsense").is_err());
        assert!(RunConfig::from_text("unknown=1").is_err());
        assert!(RunConfig::from_text("version=2").is_err());
        assert!(RunConfig::from_text("layer=conv").is_err());
        assert!(RunConfig::from_text("num_clusters=0").is_err());
        assert!(RunConfig::from_text("# comment\n\nseed=5").unwrap().seed == 5);
    }

    proptest::proptest! {
        #[test]
        fn text_round_trip_for_arbitrary_values(
            seed in proptest::num::u64::ANY,
            lr in 1e-6f64..1.0,
            sigma in 0.05f64..3.0,
            parts in 1usize..300,
            widths in proptest::collection::vec(1usize..512, 1..5),
            clutter in 0.0f64..0.95,
        ) {
            let mut c = RunConfig::desk();
            c.seed = seed;
            c.lr = lr;
            c.kernel_sigma = sigma;
            c.grow.max_parts = parts;
            c.conv_widths = widths;
            c.clutter_fraction = clutter;
            proptest::prop_assert_eq!(RunConfig::from_text(&c.to_text()).unwrap(), c);
        }
    }
}
