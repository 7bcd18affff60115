mod common;

use common::{micro::micro_scenes, reference_eval};
use vla_core::eval::evaluate_coco;

fn close(a: Option<f64>, b: Option<f64>) -> bool {
    match (a, b) {
        (Some(x), Some(y)) => (x - y).abs() <= 1e-9,
        (None, None) => true,
        _ => false,
    }
}

#[test]
fn evaluator_matches_brute_force_reference() {
    for seed in 0..300 {
        let (cats, scenes) = micro_scenes(seed);
        let fast = evaluate_coco(&scenes, &cats);
        let slow = reference_eval::evaluate(&scenes, &cats);
        let pairs = [
            (fast.ap_50_95, slow.ap_50_95),
            (fast.ap_50, slow.ap_50),
            (fast.ap_75, slow.ap_75),
            (fast.ap_small, slow.ap_small),
            (fast.ap_medium, slow.ap_medium),
            (fast.ap_large, slow.ap_large),
        ];
        for (k, (a, b)) in pairs.iter().enumerate() {
            assert!(close(*a, *b), "seed {seed} metric {k}: {a:?} vs {b:?}");
        }
    }
}

#[test]
fn removing_a_false_positive_never_lowers_ap() {
    for seed in 0..200 {
        let (cats, scenes) = micro_scenes(seed);
        let base = evaluate_coco(&scenes, &cats);
        // A detection far outside every image box can only be a false positive.
        let mut with_fp = scenes.clone();
        let fp = vla_core::Detection::new(
            999_999,
            with_fp[0].image_id,
            vla_core::BoundingBox::new(380.0, 380.0, 399.0, 399.0).unwrap(),
            common::micro::NAMES[0],
            1.0,
            "detector",
        )
        .unwrap();
        if with_fp[0]
            .ground_truth
            .iter()
            .any(|g| g.bbox.x2() > 370.0 && g.bbox.y2() > 370.0)
        {
            continue;
        }
        with_fp[0].detections.push(fp);
        let worse = evaluate_coco(&with_fp, &cats);
        for (a, b) in [
            (base.ap_50_95, worse.ap_50_95),
            (base.ap_50, worse.ap_50),
            (base.ap_small, worse.ap_small),
        ] {
            if let (Some(a), Some(b)) = (a, b) {
                assert!(a + 1e-12 >= b, "seed {seed}: {a} < {b}");
            }
        }
    }
}
