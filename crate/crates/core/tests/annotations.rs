mod common;

use common::*;
use literati_core::annotation_store::{
    make_split, mix_negatives, rescale_box, BoundingBox, CoordSpace, Frame, SplitRatios,
};
use literati_core::eval_harness::iou;
use proptest::prelude::*;

fn ids(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i:04}")).collect()
}

#[test]
fn split_is_order_independent() {
    let mut a = ids("s", 97);
    let split = make_split(&a, SplitRatios::STANDARD, 3).unwrap();
    a.reverse();
    assert_eq!(make_split(&a, SplitRatios::STANDARD, 3).unwrap(), split);
    assert_ne!(make_split(&a, SplitRatios::STANDARD, 4).unwrap(), split);
}

#[test]
fn mixing_at_equal_ratio() {
    let pos = ids("p", 40);
    let pool = ids("n", 100);
    let out = mix_negatives(&pos, &pool, 1.0, 5).unwrap();
    assert_eq!(out.negatives_taken, 40);
    assert_eq!(&out.ids[..40], pos.as_slice());
    assert!(out.ids[40..].iter().all(|id| id.starts_with('n')));
    assert!(out.warning.is_none());
    let short = mix_negatives(&pos, &ids("n", 10), 1.0, 5).unwrap();
    assert_eq!(short.negatives_taken, 10);
    assert!(short.warning.is_some());
}

#[test]
fn net_to_native_and_back() {
    let native = Frame::new(2544.0, 3056.0, CoordSpace::Native);
    let b = BoundingBox::new(208.0, 100.0, 52.0, 26.0, CoordSpace::Net416).unwrap();
    let up = rescale_box(&b, Frame::net416(), native).unwrap();
    let down = rescale_box(&up, native, Frame::net416()).unwrap();
    for (x, y) in down.to_array().iter().zip(b.to_array()) {
        assert!((x - y).abs() < 1e-9);
    }
    assert!(rescale_box(&b, native, Frame::net416()).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn split_partition_law(n in 1usize..400, seed in any::<u64>(), val in 0.0f64..0.4, test in 0.0f64..0.4) {
        let ratios = SplitRatios::new(1.0 - val - test, val, test).unwrap();
        let all = ids("x", n);
        let split = make_split(&all, ratios, seed).unwrap();
        let (tr, va, te) = split.sizes();
        prop_assert_eq!(tr + va + te, n);
        prop_assert_eq!(va, ((n as f64) * val + 1e-9).floor() as usize);
        prop_assert_eq!(te, ((n as f64) * test + 1e-9).floor() as usize);
        let mut union: Vec<String> = split.train_ids.iter().chain(&split.val_ids).chain(&split.test_ids).cloned().collect();
        union.sort();
        prop_assert_eq!(union, all.clone());
        prop_assert_eq!(make_split(&all, ratios, seed).unwrap(), split);
    }

    #[test]
    fn rescaling_preserves_iou(a in arb_box(CoordSpace::Native), b in arb_box(CoordSpace::Native), w in 10.0f64..4000.0, h in 10.0f64..4000.0) {
        let from = Frame::new(w, h, CoordSpace::Native);
        let a2 = rescale_box(&a, from, Frame::net416()).unwrap();
        let b2 = rescale_box(&b, from, Frame::net416()).unwrap();
        prop_assert!((iou(&a, &b).unwrap() - iou(&a2, &b2).unwrap()).abs() < 1e-9);
    }
}
