//! Dataset ingestion: synthetic sets from a run config, or directories with
//! one subdirectory per class.

use std::path::Path;

use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::config::RunConfig;
use super::model::object_rng;
use super::synth::{synth_dataset, LabeledObject, Split, SynthSpec};
use crate::error::{Error, Result};
use crate::geometry::{load_cloud, sample_mesh_surface, CloudFormat, PointCloud};

/// Class names and objects of one split.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub classes: Vec<String>,
    pub objects: Vec<LabeledObject>,
}

/// The synthetic split described by `cfg`.
pub fn synth_split(cfg: &RunConfig, split: Split, rng: &mut impl Rng) -> Result<Dataset> {
    let per_class = match split {
        Split::Train => cfg.train_per_class,
        Split::Test => cfg.test_per_class,
    };
    let spec = SynthSpec {
        classes: cfg.classes.clone(),
        per_class,
        points: cfg.points_per_object,
        noise: cfg.noise,
        scale_range: (cfg.scale_min, cfg.scale_max),
        split,
    };
    Ok(Dataset {
        classes: cfg.classes.clone(),
        objects: synth_dataset(&spec, rng)?,
    })
}

/// Meshes are sampled by area and large clouds are subsampled, both to
/// `points` points; smaller clouds are kept whole.
fn resample(cloud: PointCloud, points: usize, rng: &mut impl Rng) -> Result<PointCloud> {
    if cloud.faces.is_some() {
        return sample_mesh_surface(&cloud, points, rng);
    }
    if cloud.len() <= points {
        return Ok(cloud);
    }
    let mut keep = sample(rng, cloud.len(), points).into_vec();
    keep.sort_unstable();
    PointCloud::new(
        keep.iter().map(|&i| cloud.positions[i]).collect(),
        keep.iter().map(|&i| cloud.normals[i]).collect(),
        None,
    )
}

/// Loads `root/<class>/<file>` with classes and files in name order. Files
/// with unrecognized extensions are ignored.
pub fn load_dir(root: &Path, split: Split, points: usize, rng: &mut impl Rng) -> Result<Dataset> {
    let mut class_dirs: Vec<_> = std::fs::read_dir(root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    class_dirs.sort();
    let mut classes = Vec::new();
    let mut objects = Vec::new();
    for dir in &class_dirs {
        let label = classes.len();
        classes.push(
            dir.file_name()
                .unwrap_or_default()
                .to_string_lossy()
                .into_owned(),
        );
        let mut files: Vec<_> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        files.sort();
        for path in files {
            let Some(format) = CloudFormat::from_path(&path) else {
                continue;
            };
            let cloud = load_cloud(&path, format)?;
            if cloud.is_empty() {
                return Err(Error::EmptyCloud { path });
            }
            objects.push(LabeledObject {
                id: path.display().to_string(),
                cloud: resample(cloud, points, rng)?,
                label,
                split,
                has_background: false,
            });
        }
    }
    if objects.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(Dataset { classes, objects })
}

/// Independent stream per split so either split can be rebuilt alone.
pub fn split_rng(seed: u64, split: Split) -> ChaCha8Rng {
    object_rng(seed, SPLIT_PASS, split as usize)
}

const SPLIT_PASS: u64 = 1 << 33;

/// The configured directory for `split` when set, otherwise the synthetic
/// set, drawn from [`split_rng`].
pub fn load_split(cfg: &RunConfig, split: Split) -> Result<Dataset> {
    let mut rng = split_rng(cfg.seed, split);
    let dir = match split {
        Split::Train => &cfg.train_dir,
        Split::Test => &cfg.test_dir,
    };
    match dir {
        Some(d) => load_dir(d, split, cfg.points_per_object, &mut rng),
        None => synth_split(cfg, split, &mut rng),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const CUBE_OFF: &str = "OFF\n8 12 0\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n0 0 1\n1 0 1\n1 1 1\n0 1 1\n\
3 0 2 1\n3 0 3 2\n3 4 5 6\n3 4 6 7\n3 0 1 5\n3 0 5 4\n3 2 3 7\n3 2 7 6\n3 1 2 6\n3 1 6 5\n3 0 4 7\n3 0 7 3\n";

    #[test]
    fn loads_class_per_directory() {
        let dir = tempfile::tempdir().unwrap();
        for class in ["b_cube", "a_points"] {
            std::fs::create_dir(dir.path().join(class)).unwrap();
        }
        std::fs::write(dir.path().join("b_cube/one.off"), CUBE_OFF).unwrap();
        std::fs::write(dir.path().join("b_cube/readme.md"), "ignored").unwrap();
        let xyz: String = (0..40)
            .map(|i| format!("{} {} 0 0 0 1\n", i % 8, i / 8))
            .collect();
        std::fs::write(dir.path().join("a_points/p.xyz"), xyz).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let set = load_dir(dir.path(), Split::Test, 30, &mut rng).unwrap();
        assert_eq!(set.classes, ["a_points", "b_cube"]);
        assert_eq!(set.objects.len(), 2);
        assert_eq!(set.objects[0].label, 0);
        assert_eq!(set.objects[0].cloud.len(), 30);
        assert_eq!(set.objects[1].label, 1);
        assert_eq!(set.objects[1].cloud.len(), 30);
        assert!(set.objects[1].cloud.faces.is_none());
    }

    #[test]
    fn splits_are_independent_and_reproducible() {
        let mut cfg = RunConfig::desk();
        cfg.train_per_class = 2;
        cfg.test_per_class = 2;
        cfg.points_per_object = 64;
        let a = load_split(&cfg, Split::Test).unwrap();
        let b = load_split(&cfg, Split::Test).unwrap();
        assert_eq!(a, b);
        let t = load_split(&cfg, Split::Train).unwrap();
        assert_ne!(t.objects[0].cloud, a.objects[0].cloud);
    }

    #[test]
    fn empty_directory_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            load_dir(dir.path(), Split::Train, 10, &mut rng),
            Err(Error::EmptyDataset)
        ));
    }
}
