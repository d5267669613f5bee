use proptest::prelude::*;

use tripnet::data::augment::{affine_warp, AffineParams};
use tripnet::data::sampler::sample_triplet_batch;
use tripnet::data::synthetic::{generate, GlyphSpec};
use tripnet::data::{cache, AffineRanges, Augmentation, ClassEntry, ClassIndexedDataset, ImageRef, Role};
use tripnet::eval::{pca_project, predict_nn, predict_nn_by, softmax_neg};
use tripnet::loss::{embedding_regularizer, triplet_loss, EmbeddedTriplet};
use tripnet::rng;

fn vecs(n: usize, d: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-3.0..3.0f64, d), n)
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

proptest! {
    #[test]
    fn triplet_loss_is_symmetric_in_the_positives(v in vecs(3, 6), m in 0.1..4.0f64) {
        let a = triplet_loss(&v[0], &v[1], &v[2], m).unwrap();
        let b = triplet_loss(&v[1], &v[0], &v[2], m).unwrap();
        prop_assert_eq!(a, b);
        prop_assert!(a >= 0.0);
    }

    #[test]
    fn triplet_loss_ignores_a_common_shift(v in vecs(4, 5), m in 0.1..4.0f64) {
        let shift = |x: &Vec<f64>| x.iter().zip(&v[3]).map(|(a, t)| a + t).collect::<Vec<_>>();
        let a = triplet_loss(&v[0], &v[1], &v[2], m).unwrap();
        let b = triplet_loss(&shift(&v[0]), &shift(&v[1]), &shift(&v[2]), m).unwrap();
        prop_assert!(close(a, b, 1e-9), "{a} vs {b}");
    }

    #[test]
    fn margin_bounds_the_loss_of_coincident_points(v in vecs(2, 4), m in 0.1..4.0f64) {
        // p1 = p2 and the negative anywhere: each hinge is max(0, m - d(p, n))
        let l = triplet_loss(&v[0], &v[0], &v[1], m).unwrap();
        prop_assert!(l <= 2.0 * m + 1e-12);
    }

    #[test]
    fn regularizer_scales_quadratically(v in vecs(3, 4), c in 0.1..5.0f64) {
        let scaled: Vec<Vec<f64>> = v.iter().map(|x| x.iter().map(|a| c * a).collect()).collect();
        let r = embedding_regularizer(&[EmbeddedTriplet::new(&v[0], &v[1], &v[2]).unwrap()]).unwrap();
        let s = embedding_regularizer(&[EmbeddedTriplet::new(&scaled[0], &scaled[1], &scaled[2]).unwrap()]).unwrap();
        prop_assert!(close(s, c * c * r, 1e-12));
    }

    #[test]
    fn nearest_neighbour_survives_monotone_distance_maps(
        support in prop::collection::vec(prop::collection::vec(-2.0..2.0f32, 4), 2..8),
        query in prop::collection::vec(-2.0..2.0f32, 4),
    ) {
        let labelled: Vec<(u32, &[f32])> = support.iter().enumerate().map(|(i, e)| (i as u32 * 3, e.as_slice())).collect();
        let plain = predict_nn(&labelled, &query).unwrap();
        let sq = |a: &[f32], b: &[f32]| a.iter().zip(b).map(|(x, y)| ((x - y) as f64).powi(2)).sum::<f64>();
        let root = predict_nn_by(&labelled, &query, |a, b| sq(a, b).sqrt()).unwrap();
        let exp = predict_nn_by(&labelled, &query, |a, b| (0.1 * sq(a, b)).exp()).unwrap();
        prop_assert_eq!(plain.class, root.class);
        prop_assert_eq!(plain.class, exp.class);

        let mut reversed = labelled.clone();
        reversed.reverse();
        prop_assert_eq!(predict_nn(&reversed, &query).unwrap().class, plain.class);
    }

    #[test]
    fn softmax_is_a_distribution_peaked_at_the_nearest(d in prop::collection::vec(0.0..50.0f64, 1..10), shift in -5.0..5.0f64) {
        let p = softmax_neg(&d);
        prop_assert!(p.iter().all(|&v| v > 0.0));
        prop_assert!(close(p.iter().sum::<f64>(), 1.0, 1e-12));
        let argmin = (0..d.len()).min_by(|&a, &b| d[a].total_cmp(&d[b])).unwrap();
        let argmax = (0..p.len()).max_by(|&a, &b| p[a].total_cmp(&p[b]).then(b.cmp(&a))).unwrap();
        prop_assert_eq!(p[argmax], p[argmin]);
        let moved: Vec<f64> = d.iter().map(|v| v + shift).collect();
        for (a, b) in p.iter().zip(softmax_neg(&moved)) {
            prop_assert!(close(*a, b, 1e-12));
        }
    }

    #[test]
    fn affine_views_stay_in_range_and_shape(seed in any::<u64>(), side in 6usize..20) {
        let img: Vec<f32> = (0..side * side).map(|i| ((i * 37) % 11) as f32 / 10.0).collect();
        let aug = Augmentation::Affine(AffineRanges::default());
        let out = aug.apply(&img, (1, side, side), &mut rng::stream(seed, 0, 0)).unwrap();
        prop_assert_eq!(out.len(), img.len());
        prop_assert!(out.iter().all(|v| (0.0..=1.0).contains(v)));
        let same = affine_warp(&img, (1, side, side), &AffineParams::identity()).unwrap();
        for (a, b) in same.iter().zip(&img) {
            prop_assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn triplet_batches_are_seeded_and_well_formed(seed in any::<u64>(), classes in 2usize..6, per in 2usize..5) {
        let ds = generate(&GlyphSpec { classes, instances: per, side: 8, ..Default::default() }, 0, Role::Base, 1).unwrap();
        let a = sample_triplet_batch(&ds, 20, &mut rng::stream(seed, 2, 0)).unwrap();
        let b = sample_triplet_batch(&ds, 20, &mut rng::stream(seed, 2, 0)).unwrap();
        prop_assert_eq!(&a, &b);
        for t in &a.triplets {
            let (ImageRef::Base { class: c1, index: i1 }, ImageRef::Base { class: c2, index: i2 }) = (t.pos1, t.pos2) else {
                panic!("base batch holds one-shot images")
            };
            prop_assert_eq!(c1, c2);
            prop_assert_ne!(i1, i2);
            prop_assert_ne!(t.neg.class(), c1);
        }
    }

    #[test]
    fn full_rank_pca_preserves_centered_inner_products(rows in vecs(6, 3)) {
        let n = rows.len() as f64;
        let mean: Vec<f64> = (0..3).map(|k| rows.iter().map(|r| r[k]).sum::<f64>() / n).collect();
        let centered: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().zip(&mean).map(|(a, m)| a - m).collect()).collect();
        let p = pca_project(&rows, 3).unwrap();
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        for i in 0..rows.len() {
            for j in 0..rows.len() {
                prop_assert!(close(dot(&p.coords[i], &p.coords[j]), dot(&centered[i], &centered[j]), 1e-8));
            }
        }
        prop_assert!(p.explained.windows(2).all(|w| w[0] >= w[1] - 1e-12));
        prop_assert!(p.explained.iter().sum::<f64>() <= 1.0 + 1e-9);
    }

    #[test]
    fn dataset_cache_round_trips(pixels in prop::collection::vec(0.0..1.0f32, 2 * 3 * 4), role in any::<bool>()) {
        let classes = vec![
            ClassEntry::new(7, "a/x", "a", vec![pixels[..4].to_vec(), pixels[4..8].to_vec(), pixels[8..12].to_vec()]),
            ClassEntry::new(2, "b/y", "b", vec![pixels[12..16].to_vec(), pixels[16..20].to_vec(), pixels[20..].to_vec()]),
        ];
        let ds = ClassIndexedDataset::new((1, 2, 2), if role { Role::Base } else { Role::Novel }, classes).unwrap();
        let back = cache::from_bytes(&cache::to_bytes(&ds), std::path::Path::new("mem")).unwrap();
        prop_assert_eq!(back, ds);
    }
}
