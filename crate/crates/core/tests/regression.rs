//! Frozen outputs of the seeded benchmark and a few whole-pipeline properties.

use labelfuse_core::bench::{run_benchmark, BenchmarkParams, Reviewer, WorldParams};
use labelfuse_core::metrics::evaluate;
use labelfuse_core::model::{Annotation, BoundingBox, Dataset, Detection, ImageRecord, LabelSpace, Provenance};
use labelfuse_core::unify::{build_unified_space, AliasMap};
use proptest::prelude::*;

const TOL: f64 = 1e-12;

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= TOL
}

#[test]
fn default_benchmark_is_frozen() {
    let r = run_benchmark(&BenchmarkParams::default()).unwrap();
    assert_eq!((r.classes, r.images, r.gap_boxes), (6, 200, 264));
    let singles: Vec<f64> = r.single.iter().map(|s| s.map50.unwrap()).collect();
    for (got, want) in singles.iter().zip([0.5707095709570958, 0.5816831683168316, 0.5803424092409242]) {
        assert!(close(*got, want), "{got} vs {want}");
    }
    assert!(close(r.fused_map50, 0.7780975332462156), "{}", r.fused_map50);
    assert!(close(r.reviewed_map50.unwrap(), 0.9217188425496649));
    assert_eq!((r.accepted, r.needs_review, r.oracle_accepted), (226, 144, 37));
}

#[test]
fn seed_11_without_review_is_frozen() {
    let params = BenchmarkParams {
        world: WorldParams { seed: 11, ..WorldParams::default() },
        reviewer: Reviewer::None,
        ..BenchmarkParams::default()
    };
    let r = run_benchmark(&params).unwrap();
    assert_eq!(r.gap_boxes, 278);
    assert!(close(r.best_single().unwrap(), 0.598051535922823));
    assert!(close(r.fused_map50, 0.7834365674125118));
    assert_eq!(r.reviewed_map50, None);
    assert_eq!((r.accepted, r.needs_review, r.oracle_accepted), (249, 150, 0));
}

#[test]
fn eight_class_union() {
    let spaces: Vec<(String, LabelSpace)> =
        [("a", vec!["A", "TS", "M"]), ("b", vec!["r", "p", "c", "m"]), ("c", vec!["CA", "VF", "a", "P"])]
            .into_iter()
            .map(|(id, names)| (id.to_string(), LabelSpace::from_names(names).unwrap()))
            .collect();
    let (space, tables) = build_unified_space(&spaces, &AliasMap::default()).unwrap();
    assert_eq!(space.len(), 8);
    assert_eq!(tables.iter().map(|t| t.mapping.len()).sum::<usize>(), 11);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ap_depends_only_on_score_order(
        scores in prop::collection::vec(0.01f64..0.99, 1..8),
        offsets in prop::collection::vec(-5.0f64..5.0, 8),
    ) {
        let space = LabelSpace::from_names(["x"]).unwrap();
        let img = ImageRecord::new("i", "d", "", 200, 200).unwrap();
        let gt_box = |k: usize| BoundingBox::new(20.0 * k as f64 + 1.0, 10.0, 15.0, 15.0).unwrap();
        let anns = (0..4)
            .map(|k| Annotation::new(&img, 0, gt_box(k), Provenance::GroundTruth, &space).unwrap())
            .collect();
        let gt = Dataset::new("d", space, vec![img], anns).unwrap();
        let dets = |f: &dyn Fn(f64) -> f64| -> Vec<Detection> {
            scores
                .iter()
                .enumerate()
                .map(|(k, &s)| {
                    let g = gt_box(k % 4);
                    let b = BoundingBox::new(g.x + offsets[k], g.y, g.w, g.h).unwrap();
                    Detection::new("i", 0, b, f(s), "m").unwrap()
                })
                .collect()
        };
        let base = evaluate(&gt, &dets(&|s| s), 0.0).unwrap();
        let squashed = evaluate(&gt, &dets(&|s| s * s * 0.5 + 0.1), 0.0).unwrap();
        prop_assert!(close(base.all.ap50, squashed.all.ap50));
        prop_assert!(close(base.all.ap50_95, squashed.all.ap50_95));
    }
}
