use std::collections::BTreeMap;
use std::sync::Arc;

use proptest::prelude::*;

use deid_core::exec::Exec;
use deid_core::features::{
    extract_edge_map, heatmap_peak, organ_bounding_boxes, render_heatmaps, CannyParams,
};
use deid_core::landmarks::{LandmarkSchema, LandmarkSet, Point};
use deid_core::privacy::{cosine, sample_frame_pairs, PairMode};
use deid_core::synth::{Background, Expression, FaceScene, HeadPose, Identity};
use deid_core::triage::{
    auc, compute_metrics, make_fold_plan, predict_case, sensitivity_matched_threshold, CasePrediction, FrameModel,
    Label, TriageSample,
};
use deid_core::video::{ClipRole, VideoClip};
use image::{Rgb, RgbImage};

fn schema() -> Arc<LandmarkSchema> {
    Arc::new(LandmarkSchema::face33())
}

fn vec_strategy() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (1usize..48).prop_flat_map(|d| {
        (
            proptest::collection::vec(-10.0f64..10.0, d),
            proptest::collection::vec(-10.0f64..10.0, d),
        )
    })
}

fn scored_cases() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (2usize..40).prop_flat_map(|n| {
        (
            proptest::collection::vec((0u32..20).prop_map(|k| k as f64 / 20.0), n),
            proptest::collection::vec(any::<bool>(), n),
        )
    })
}

fn scene_pose() -> impl Strategy<Value = (u64, f64, f64, f64, f64)> {
    (any::<u64>(), 40.0f64..60.0, -12.0f64..12.0, -10.0f64..10.0, -10.0f64..10.0)
}

/// A rendered face with its exact landmarks.
fn face(seed: u64, iod: f64, roll: f64, dx: f64, dy: f64) -> (RgbImage, LandmarkSet) {
    let size = (256, 256);
    let scene = FaceScene::new(Identity::random(seed), Background::random(seed), size);
    let mut pose = HeadPose::centered(size, iod);
    pose.roll_deg = roll;
    pose.cx += dx;
    pose.cy += dy;
    let expr = Expression::neutral();
    let img = scene.render(&pose, &expr, Exec::Sequential);
    let lm = scene.landmarks(&pose, &expr, schema()).unwrap();
    (img, lm)
}

struct Fixed(Vec<f64>);

impl FrameModel for Fixed {
    fn dim(&self) -> usize {
        self.0.len()
    }

    fn frame_logits(&self, x: &[f32]) -> [f64; 2] {
        let z: f64 = self.0.iter().zip(x).map(|(w, &v)| w * v as f64).sum();
        [-z, z]
    }

    fn parameters(&self) -> Vec<f64> {
        self.0.clone()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn csim_symmetric_and_scale_invariant((a, b) in vec_strategy(), k in 1e-3f64..1e3) {
        let (Ok(ab), Ok(ba)) = (cosine(&a, &b), cosine(&b, &a)) else { return Ok(()); };
        prop_assert_eq!(ab, ba);
        prop_assert!((-1.0..=1.0).contains(&ab));
        let ka: Vec<f64> = a.iter().map(|x| x * k).collect();
        prop_assert!((cosine(&ka, &b).unwrap() - ab).abs() < 1e-12);
    }

    #[test]
    fn auc_invariant_under_monotone_transforms((scores, pos) in scored_cases()) {
        let base = auc(&scores, &pos);
        for f in [|x: f64| x.exp(), |x: f64| x * x * x + 3.0 * x, |x: f64| (x + 1.0).ln() - 7.0] {
            let t: Vec<f64> = scores.iter().map(|&x| f(x)).collect();
            prop_assert_eq!(auc(&t, &pos), base);
        }
        if let Some(a) = base {
            let flipped: Vec<bool> = pos.iter().map(|p| !p).collect();
            prop_assert!((auc(&scores, &flipped).unwrap() - (1.0 - a)).abs() < 1e-12);
        }
    }

    #[test]
    fn metrics_agree_with_stored_confusion((scores, pos) in scored_cases(), t in 0.0f64..1.0) {
        let preds: Vec<CasePrediction> = scores
            .iter()
            .enumerate()
            .map(|(i, &s)| CasePrediction { case_id: format!("c{i}"), logits: [0.0, s * 6.0 - 3.0], frame_logit_count: 1 })
            .collect();
        let labels: BTreeMap<String, Label> = pos
            .iter()
            .enumerate()
            .map(|(i, &p)| (format!("c{i}"), if p { Label::Stroke } else { Label::NonStroke }))
            .collect();
        let m = compute_metrics(&preds, &labels, t).unwrap();
        let c = m.confusion;
        prop_assert_eq!(c.total(), preds.len());
        prop_assert_eq!(m.accuracy, (c.tp + c.tn) as f64 / c.total() as f64);
    }

    #[test]
    fn sensitivity_threshold_is_the_largest_reaching_target((scores, pos) in scored_cases(), target in 0.05f64..1.0) {
        prop_assume!(pos.iter().any(|&p| p));
        let choice = sensitivity_matched_threshold(&scores, &pos, target).unwrap();
        prop_assert!(!choice.unreachable);
        let sens = |t: f64| {
            let tp = scores.iter().zip(&pos).filter(|(s, p)| **p && **s >= t).count();
            tp as f64 / pos.iter().filter(|&&p| p).count() as f64
        };
        prop_assert!(sens(choice.threshold) + 1e-9 >= target);
        // Any higher positive score would miss the target.
        let higher = scores.iter().zip(&pos).filter(|(s, p)| **p && **s > choice.threshold).map(|(s, _)| *s);
        for h in higher {
            prop_assert!(sens(h) + 1e-9 < target);
        }
    }

    #[test]
    fn case_prediction_ignores_frame_order(
        w in proptest::collection::vec(-1.0f64..1.0, 4),
        frames in proptest::collection::vec(proptest::collection::vec(-1.0f32..1.0, 4), 1..20),
        seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let model = Fixed(w);
        let sample = TriageSample { case_id: "c".into(), label: Label::Stroke, features: frames.clone() };
        let mut shuffled = frames;
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let other = TriageSample { features: shuffled, ..sample.clone() };
        let a = predict_case(&model, &sample).unwrap();
        let b = predict_case(&model, &other).unwrap();
        for k in 0..2 {
            prop_assert!((a.logits[k] - b.logits[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn fold_plans_partition_and_stratify(n_pos in 1usize..30, n_neg in 1usize..30, seed in any::<u64>()) {
        prop_assume!(n_pos + n_neg >= 5);
        let cases: Vec<(String, Label)> = (0..n_pos + n_neg)
            .map(|i| (format!("c{i:03}"), if i < n_pos { Label::Stroke } else { Label::NonStroke }))
            .collect();
        let plan = make_fold_plan(&cases, seed).unwrap();
        prop_assert_eq!(&plan, &make_fold_plan(&cases, seed).unwrap());
        let mut all: Vec<&String> = plan.folds.iter().flatten().collect();
        all.sort();
        all.dedup();
        prop_assert_eq!(all.len(), cases.len());
        let sizes: Vec<usize> = plan.folds.iter().map(Vec::len).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        for class in [Label::Stroke, Label::NonStroke] {
            let per: Vec<usize> = plan.folds.iter()
                .map(|f| f.iter().filter(|id| cases.iter().any(|(c, l)| c == *id && *l == class)).count())
                .collect();
            prop_assert!(per.iter().max().unwrap() - per.iter().min().unwrap() <= 1);
        }
    }

    #[test]
    fn real_real_pairs_use_distinct_frames(n in 2usize..30, pairs in 1usize..60, seed in any::<u64>()) {
        let frames = (0..n).map(|i| RgbImage::from_pixel(2, 2, Rgb([i as u8, 0, 0]))).collect();
        let clip = VideoClip::new("r", ClipRole::Driving, frames, 30.0).unwrap();
        let got = sample_frame_pairs(&clip, None, pairs, PairMode::RealReal, seed).unwrap();
        prop_assert_eq!(got.len(), pairs);
        for p in &got {
            prop_assert!(p.a.frame_index != p.b.frame_index);
            prop_assert!(p.a.frame_index < n && p.b.frame_index < n);
        }
        prop_assert_eq!(got, sample_frame_pairs(&clip, None, pairs, PairMode::RealReal, seed).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn heatmap_peaks_sit_on_rounded_landmarks((seed, iod, roll, dx, dy) in scene_pose(), sigma in 1.0f64..4.0) {
        let (_, lm) = face(seed, iod, roll, dx, dy);
        let maps = render_heatmaps(&lm, sigma, lm.frame_size()).unwrap();
        for (ch, p) in maps.iter().zip(lm.points()) {
            prop_assert_eq!(heatmap_peak(ch), (p.x.round() as usize, p.y.round() as usize));
        }
    }

    #[test]
    fn heatmaps_shift_with_landmarks((seed, iod, roll, _, _) in scene_pose(), sx in -8i32..8, sy in -8i32..8) {
        let (_, lm) = face(seed, iod, roll, 0.0, 0.0);
        let moved: Vec<Point> = lm.points().iter().map(|p| Point::new(p.x + sx as f64, p.y + sy as f64)).collect();
        let lm2 = LandmarkSet::from_points(moved, lm.frame_size(), schema()).unwrap();
        let a = render_heatmaps(&lm, 2.0, lm.frame_size()).unwrap();
        let b = render_heatmaps(&lm2, 2.0, lm.frame_size()).unwrap();
        let (w, h) = (a[0].width() as i32, a[0].height() as i32);
        for (pa, pb) in a.iter().zip(&b) {
            for y in 20..h - 20 {
                for x in 20..w - 20 {
                    prop_assert_eq!(pa.get(x as usize, y as usize), pb.get((x + sx) as usize, (y + sy) as usize));
                }
            }
        }
    }

    #[test]
    fn edges_stay_inside_organ_boxes((seed, iod, roll, dx, dy) in scene_pose(), pad in 0.0f64..0.3) {
        let (img, lm) = face(seed, iod, roll, dx, dy);
        let boxes = organ_bounding_boxes(&lm, pad).unwrap();
        let edges = extract_edge_map(&img, &boxes, CannyParams::default()).unwrap();
        let inside = boxes.union_mask();
        prop_assert!(edges.count() > 0);
        for (e, i) in edges.data().iter().zip(inside.data()) {
            prop_assert!(!e || *i);
        }
        for b in boxes.boxes.values() {
            prop_assert!(b.x0 >= 0.0 && b.y0 >= 0.0 && b.x0 < b.x1 && b.y0 < b.y1);
            prop_assert!(b.x1 <= 256.0 && b.y1 <= 256.0);
        }
    }
}
