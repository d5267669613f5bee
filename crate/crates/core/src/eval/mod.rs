//! Episode construction, nearest-neighbour one-shot evaluation and PCA export.

mod episode;
pub mod pca;
mod predict;

pub use episode::{build_episodes, load_omniglot_runs, Episode, EpisodeSpec, Shot, FIXED_RUN_CLASS_BASE};
pub use pca::{pca_project, Projection};
pub use predict::{class_distribution, predict_nn, predict_nn_by, softmax_neg, Prediction};

use log::warn;

use crate::data::{stack_images, Augmentation, ClassId, ClassIndexedDataset, ImageShape};
use crate::error::{Error, Result};
use crate::loss::{squared_euclidean, SiameseHead};
use crate::net::{EmbeddingModel, LayerId};

/// Images per forward pass during evaluation.
pub const EVAL_CHUNK: usize = 64;

/// How support/query features are compared.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub enum Scoring {
    /// Nearest neighbour in squared Euclidean distance.
    #[default]
    Distance,
    /// Highest same-class probability under a pairwise head.
    Siamese(SiameseHead),
}

/// Features from `layer` for each image, in input order. Images are first
/// mapped through the augmentation's evaluation view.
pub fn extract_features<'a>(
    model: &EmbeddingModel<f32>,
    images: impl IntoIterator<Item = &'a [f32]>,
    stored: ImageShape,
    layer: LayerId,
    view: &Augmentation,
) -> Result<Vec<Vec<f32>>> {
    let shape = view.output_shape(stored)?;
    let viewed = images.into_iter().map(|img| view.eval_view(img, stored)).collect::<Result<Vec<_>>>()?;
    let mut out = Vec::with_capacity(viewed.len());
    for chunk in viewed.chunks(EVAL_CHUNK) {
        let batch = stack_images(chunk, shape)?;
        let feats = model.layer_features(&batch, layer)?;
        let (n, _) = feats.dims2()?;
        out.extend((0..n).map(|i| feats.row(i).to_vec()));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub per_run: Vec<f64>,
    pub mean: f64,
    /// Queries whose nearest support was not unique.
    pub tied_queries: usize,
    pub total_queries: usize,
}

impl EvalReport {
    pub fn from_runs(per_run: Vec<f64>, tied_queries: usize, total_queries: usize) -> Self {
        let mean = if per_run.is_empty() { 0.0 } else { per_run.iter().sum::<f64>() / per_run.len() as f64 };
        Self { per_run, mean, tied_queries, total_queries }
    }

    pub fn runs(&self) -> usize {
        self.per_run.len()
    }

    /// `run,accuracy` rows followed by a `mean` summary row.
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["run", "accuracy"])?;
        for (i, a) in self.per_run.iter().enumerate() {
            w.write_record([i.to_string(), a.to_string()])?;
        }
        w.write_record(["mean".to_string(), self.mean.to_string()])?;
        w.into_inner().map_err(|e| Error::Contract(e.to_string()))
    }
}

/// Accuracy of nearest-support prediction on every episode.
pub fn evaluate(
    model: &EmbeddingModel<f32>,
    episodes: &[Episode],
    layer: LayerId,
    view: &Augmentation,
    scoring: Scoring,
) -> Result<EvalReport> {
    if !model.layer_registry().contains(&layer) {
        return Err(Error::UnknownLayer(layer.to_string()));
    }
    let mut per_run = Vec::with_capacity(episodes.len());
    let mut tied = 0;
    let mut total = 0;
    for ep in episodes {
        let images = ep.support.iter().chain(&ep.queries).map(|s| s.pixels.as_slice());
        let feats = extract_features(model, images, ep.image_shape, layer, view)?;
        let (sup, qry) = feats.split_at(ep.support.len());
        let support: Vec<(ClassId, &[f32])> =
            ep.support.iter().zip(sup).map(|(s, f)| (s.class, f.as_slice())).collect();
        let mut correct = 0;
        for (q, f) in ep.queries.iter().zip(qry) {
            let p = match scoring {
                Scoring::Distance => predict_nn_by(&support, f, |a, b| squared_euclidean(a, b) as f64)?,
                Scoring::Siamese(head) => predict_nn_by(&support, f, |a, b| -head.same_probability::<f64>(
                    &a.iter().map(|&v| v as f64).collect::<Vec<_>>(),
                    &b.iter().map(|&v| v as f64).collect::<Vec<_>>(),
                ))?,
            };
            correct += (p.class == q.class) as usize;
            tied += p.tied as usize;
        }
        total += ep.queries.len();
        per_run.push(if ep.queries.is_empty() { 0.0 } else { correct as f64 / ep.queries.len() as f64 });
    }
    if tied > 0 {
        warn!("{tied} of {total} queries had a tied nearest support; ties went to the smallest class id");
    }
    Ok(EvalReport::from_runs(per_run, tied, total))
}

/// One PCA point per instance of the listed classes.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectedPoint {
    pub point: usize,
    pub class: ClassId,
    pub x: f64,
    pub y: f64,
}

pub fn project_classes(
    model: &EmbeddingModel<f32>,
    dataset: &ClassIndexedDataset,
    classes: &[ClassId],
    view: &Augmentation,
) -> Result<(Vec<ProjectedPoint>, Projection)> {
    let mut labels = Vec::new();
    let mut images = Vec::new();
    for &id in classes {
        let c = dataset.class(id)?;
        for img in c.images() {
            labels.push(id);
            images.push(img);
        }
    }
    let feats = extract_features(model, images, dataset.image_shape(), LayerId::Fc, view)?;
    let rows: Vec<Vec<f64>> = feats.iter().map(|f| f.iter().map(|&v| v as f64).collect()).collect();
    let proj = pca_project(&rows, 2)?;
    let points = proj
        .coords
        .iter()
        .zip(labels)
        .enumerate()
        .map(|(point, (c, class))| ProjectedPoint { point, class, x: c[0], y: c[1] })
        .collect();
    Ok((points, proj))
}

pub fn projection_csv(points: &[ProjectedPoint]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["point_id", "class_id", "x", "y"])?;
    for p in points {
        w.write_record([p.point.to_string(), p.class.to_string(), p.x.to_string(), p.y.to_string()])?;
    }
    w.into_inner().map_err(|e| Error::Contract(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn report_mean_and_csv() {
        let r = EvalReport::from_runs(vec![1.0, 0.5, 0.25], 0, 12);
        assert_eq!(r.mean, 1.75 / 3.0);
        let text = String::from_utf8(r.to_csv().unwrap()).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "run,accuracy");
        assert_eq!(lines[2], "1,0.5");
        assert!(lines[4].starts_with("mean,"));
    }
}
