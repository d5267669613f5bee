use crate::data::ClassId;
use crate::error::{Error, Result};
use crate::loss::squared_euclidean;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Prediction {
    pub class: ClassId,
    /// Another support class sat at exactly the same distance.
    pub tied: bool,
}

fn check(support: &[(ClassId, &[f32])], query: &[f32]) -> Result<()> {
    if support.is_empty() {
        return Err(Error::Precondition("nearest-neighbour prediction over an empty support set".into()));
    }
    if let Some((id, _)) = support.iter().find(|(_, e)| e.len() != query.len()) {
        return Err(Error::shape(format!("support embedding of class {id} differs in length from the query")));
    }
    Ok(())
}

/// Nearest support under `distance`; equal distances go to the smallest class id.
pub fn predict_nn_by(
    support: &[(ClassId, &[f32])],
    query: &[f32],
    distance: impl Fn(&[f32], &[f32]) -> f64,
) -> Result<Prediction> {
    check(support, query)?;
    let mut best: Option<(f64, ClassId)> = None;
    let mut tied = false;
    for &(id, e) in support {
        let d = distance(e, query);
        match best {
            None => best = Some((d, id)),
            Some((bd, bid)) => {
                if d < bd {
                    best = Some((d, id));
                    tied = false;
                } else if d == bd {
                    tied = true;
                    if id < bid {
                        best = Some((d, id));
                    }
                }
            }
        }
    }
    let (_, class) = best.expect("non-empty support");
    Ok(Prediction { class, tied })
}

/// Nearest support in squared Euclidean distance.
pub fn predict_nn(support: &[(ClassId, &[f32])], query: &[f32]) -> Result<Prediction> {
    predict_nn_by(support, query, |a, b| squared_euclidean(a, b) as f64)
}

/// `p(k) ∝ exp(-d_k)` over the support, in support order, with the minimum
/// distance subtracted before exponentiating.
pub fn class_distribution(support: &[(ClassId, &[f32])], query: &[f32]) -> Result<Vec<f64>> {
    check(support, query)?;
    let d: Vec<f64> = support
        .iter()
        .map(|(_, e)| e.iter().zip(query).map(|(&a, &b)| (a as f64 - b as f64).powi(2)).sum())
        .collect();
    Ok(softmax_neg(&d))
}

pub fn softmax_neg(distances: &[f64]) -> Vec<f64> {
    let min = distances.iter().copied().fold(f64::INFINITY, f64::min);
    let w: Vec<f64> = distances.iter().map(|&d| (min - d).exp()).collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|v| v / z).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_query_predicts_its_class() {
        let a = [0.0, 1.0];
        let b = [3.0, -1.0];
        let s = [(4, &a[..]), (9, &b[..])];
        assert_eq!(predict_nn(&s, &b).unwrap(), Prediction { class: 9, tied: false });
    }

    #[test]
    fn ties_go_to_smallest_id_and_are_flagged() {
        let a = [1.0, 0.0];
        let b = [-1.0, 0.0];
        let s = [(7, &a[..]), (3, &b[..])];
        assert_eq!(predict_nn(&s, &[0.0, 0.0]).unwrap(), Prediction { class: 3, tied: true });
        assert_eq!(class_distribution(&s, &[0.0, 0.0]).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn far_support_gets_vanishing_mass() {
        let q = [0.0f32];
        let mut last = 0.0;
        for gap in [0.5f32, 1.0, 2.0, 4.0] {
            let near = [0.0f32];
            let far = [gap];
            let p = class_distribution(&[(0, &near[..]), (1, &far[..])], &q).unwrap();
            assert!(p[0] > last);
            last = p[0];
        }
        assert!(last > 0.999_999);
    }

    #[test]
    fn empty_support_and_length_mismatch_error() {
        assert!(predict_nn(&[], &[1.0]).is_err());
        let a = [1.0, 2.0];
        assert!(predict_nn(&[(0, &a[..])], &[1.0]).is_err());
    }
}
