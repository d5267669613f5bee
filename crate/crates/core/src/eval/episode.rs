use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::ingest::load_glyph;
use crate::data::{image_numel, ClassId, ClassIndexedDataset, ImageShape, OneShotSet};
use crate::error::{Error, Result};

/// First class id given to classes of the pre-fixed Omniglot runs, well
/// clear of any ingested dataset.
pub const FIXED_RUN_CLASS_BASE: ClassId = 1 << 30;

#[derive(Clone, Debug, PartialEq)]
pub struct Shot {
    pub class: ClassId,
    /// Instance index in the source dataset; `None` for images loaded directly.
    pub instance: Option<usize>,
    pub pixels: Vec<f32>,
}

/// One N-way one-shot task.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub run: usize,
    pub image_shape: ImageShape,
    /// One shot per class, ascending class id.
    pub support: Vec<Shot>,
    pub queries: Vec<Shot>,
}

impl Episode {
    pub fn way(&self) -> usize {
        self.support.len()
    }

    pub fn one_shot_set(&self) -> Result<OneShotSet> {
        let shots: BTreeMap<ClassId, Vec<f32>> = self.support.iter().map(|s| (s.class, s.pixels.clone())).collect();
        OneShotSet::new(self.image_shape, shots)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeSpec {
    pub way: usize,
    pub queries_per_class: usize,
    pub runs: usize,
}

impl EpisodeSpec {
    /// 20-way, one query per class, 20 runs.
    pub fn omniglot() -> Self {
        Self { way: 20, queries_per_class: 1, runs: 20 }
    }

    /// 5-way, ten queries per class, 10 runs.
    pub fn natural() -> Self {
        Self { way: 5, queries_per_class: 10, runs: 10 }
    }
}

/// Samples `spec.runs` episodes. Per run, `way` classes are drawn without
/// replacement and `1 + queries_per_class` distinct instances per class; the
/// first becomes the support shot.
pub fn build_episodes<R: Rng + ?Sized>(
    novel: &ClassIndexedDataset,
    spec: &EpisodeSpec,
    rng: &mut R,
) -> Result<Vec<Episode>> {
    if spec.way < 2 || spec.queries_per_class == 0 || spec.runs == 0 {
        return Err(Error::Config(format!("episode spec {spec:?} needs way >= 2 and positive counts")));
    }
    if novel.num_classes() < spec.way {
        return Err(Error::InsufficientData(format!(
            "{}-way episodes need {} classes, the dataset has {}",
            spec.way,
            spec.way,
            novel.num_classes()
        )));
    }
    let need = 1 + spec.queries_per_class;
    let mut episodes = Vec::with_capacity(spec.runs);
    for run in 0..spec.runs {
        let mut picked: Vec<usize> = sample_indices(rng, novel.num_classes(), spec.way).into_vec();
        picked.sort_unstable();
        let mut support = Vec::with_capacity(spec.way);
        let mut queries = Vec::with_capacity(spec.way * spec.queries_per_class);
        for &ci in &picked {
            let class = &novel.classes()[ci];
            if class.len() < need {
                return Err(Error::InsufficientData(format!(
                    "class {} ({}) has {} instances, an episode needs {need}",
                    class.id,
                    class.name,
                    class.len()
                )));
            }
            let idx = sample_indices(rng, class.len(), need).into_vec();
            let shot = |i: usize| Shot { class: class.id, instance: Some(i), pixels: class.image(i).to_vec() };
            support.push(shot(idx[0]));
            queries.extend(idx[1..].iter().map(|&i| shot(i)));
        }
        episodes.push(Episode { run, image_shape: novel.image_shape(), support, queries });
    }
    Ok(episodes)
}

/// Reads the pre-fixed Omniglot runs: `dir/runNN/class_labels.txt` lists
/// `test/itemNN.png training/classNN.png` pairs with paths relative to `dir`.
pub fn load_omniglot_runs(dir: &Path, side: Option<usize>) -> Result<Vec<Episode>> {
    let mut run_dirs: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("class_labels.txt").is_file())
        .collect();
    run_dirs.sort();
    if run_dirs.is_empty() {
        return Err(Error::Ingest { path: dir.to_path_buf(), message: "no run*/class_labels.txt found".into() });
    }
    let side_px = side.unwrap_or(crate::data::ingest::OMNIGLOT_SIDE);
    let shape = (1, side_px, side_px);
    let mut episodes = Vec::with_capacity(run_dirs.len());
    for (run, run_dir) in run_dirs.iter().enumerate() {
        let labels_path = run_dir.join("class_labels.txt");
        let text = std::fs::read_to_string(&labels_path).map_err(|e| Error::io(&labels_path, e))?;
        let mut support_by_path: BTreeMap<String, ClassId> = BTreeMap::new();
        let mut pairs = Vec::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let mut parts = line.split_whitespace();
            let (Some(test), Some(train), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(Error::Format { path: labels_path.clone(), message: format!("bad line `{line}`") });
            };
            pairs.push((test.to_string(), train.to_string()));
            support_by_path.entry(train.to_string()).or_insert(0);
        }
        let base = FIXED_RUN_CLASS_BASE + (run * 1000) as ClassId;
        for (i, id) in support_by_path.values_mut().enumerate() {
            *id = base + i as ClassId;
        }
        let resolve = |rel: &str| -> Result<Vec<f32>> {
            let direct = dir.join(rel);
            let path = if direct.is_file() { direct } else { run_dir.join(rel) };
            let img = load_glyph(&path, side)?;
            if img.len() != image_numel(shape) {
                return Err(Error::Ingest { path, message: format!("expected a {side_px}x{side_px} image") });
            }
            Ok(img)
        };
        let support = support_by_path
            .iter()
            .map(|(p, &class)| Ok(Shot { class, instance: None, pixels: resolve(p)? }))
            .collect::<Result<Vec<_>>>()?;
        let queries = pairs
            .iter()
            .map(|(t, s)| Ok(Shot { class: support_by_path[s], instance: None, pixels: resolve(t)? }))
            .collect::<Result<Vec<_>>>()?;
        episodes.push(Episode { run, image_shape: shape, support, queries });
    }
    Ok(episodes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{ClassEntry, Role};
    use crate::rng;

    fn novel(classes: u32, per: usize) -> ClassIndexedDataset {
        let e = (0..classes)
            .map(|c| ClassEntry::new(c, format!("{c}"), "", (0..per).map(|i| vec![c as f32, i as f32]).collect()))
            .collect();
        ClassIndexedDataset::new((1, 1, 2), Role::Novel, e).unwrap()
    }

    #[test]
    fn natural_protocol_shapes() {
        let eps = build_episodes(&novel(20, 11), &EpisodeSpec::natural(), &mut rng::stream(0, 0, 0)).unwrap();
        assert_eq!(eps.len(), 10);
        for e in &eps {
            assert_eq!(e.way(), 5);
            assert_eq!(e.queries.len(), 50);
            for q in &e.queries {
                let s = e.support.iter().find(|s| s.class == q.class).unwrap();
                assert_ne!(s.instance, q.instance);
            }
        }
    }

    #[test]
    fn short_class_is_named() {
        let err = build_episodes(&novel(5, 1), &EpisodeSpec { way: 5, queries_per_class: 1, runs: 1 }, &mut rng::stream(0, 0, 0))
            .unwrap_err();
        assert!(err.to_string().contains("class"));
        assert!(build_episodes(&novel(3, 5), &EpisodeSpec::natural(), &mut rng::stream(0, 0, 0)).is_err());
    }

    #[test]
    fn fixed_runs_are_read_verbatim() {
        let dir = tempfile::tempdir().unwrap();
        let run = dir.path().join("run01");
        std::fs::create_dir_all(run.join("test")).unwrap();
        std::fs::create_dir_all(run.join("training")).unwrap();
        let mut labels = String::new();
        for i in 1..=3u32 {
            for (sub, name) in [("test", format!("item{i:02}.png")), ("training", format!("class{i:02}.png"))] {
                let mut img = image::GrayImage::from_pixel(4, 4, image::Luma([255]));
                img.put_pixel(i, 0, image::Luma([0]));
                img.save(run.join(sub).join(name)).unwrap();
            }
            labels.push_str(&format!("run01/test/item{i:02}.png run01/training/class{:02}.png\n", 4 - i));
        }
        std::fs::write(run.join("class_labels.txt"), labels).unwrap();
        let eps = load_omniglot_runs(dir.path(), Some(4)).unwrap();
        assert_eq!(eps.len(), 1);
        assert_eq!(eps[0].way(), 3);
        assert_eq!(eps[0].queries.len(), 3);
        // item01 is labelled with class03
        let class03 = eps[0].support[2].class;
        assert_eq!(eps[0].queries[0].class, class03);
    }
}
