//! Scores against brute-force and literal reimplementations on random maps.

use ndarray::{s, Array2, Axis};
use polyp_metrics::{dice_iou_sweep, emeasure, mae, score_image, smeasure, weighted_fmeasure};
use polyp_reference::metrics::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn sweep_and_mae_match_brute_force() {
    for (i, (pred, gt)) in cases().iter().enumerate() {
        let (d, u) = dice_iou_sweep(pred.view(), gt.view()).unwrap();
        let (od, ou) = oracle_dice_iou(pred.view(), gt.view());
        assert!((d - od).abs() < 1e-9 && (u - ou).abs() < 1e-9, "case {i}: {d} {od} {u} {ou}");
        let m = mae(pred.view(), gt.view()).unwrap();
        assert!((m - oracle_mae(pred.view(), gt.view())).abs() < 1e-9, "case {i}");
    }
}

#[test]
fn structure_alignment_and_weighted_match_transcriptions() {
    for (i, (pred, gt)) in cases().iter().enumerate() {
        let (em, ex) = emeasure(pred.view(), gt.view()).unwrap();
        let (oem, oex) = oracle_emeasure(pred.view(), gt.view());
        assert!((em - oem).abs() < 1e-6 && (ex - oex).abs() < 1e-6, "case {i}: E {em} {oem} {ex} {oex}");
        let sm = smeasure(pred.view(), gt.view()).unwrap();
        assert!((sm - oracle_smeasure(pred, gt)).abs() < 1e-6, "case {i}: S {sm} {}", oracle_smeasure(pred, gt));
        let wf = weighted_fmeasure(pred.view(), gt.view()).unwrap();
        assert!((wf - oracle_wfm(pred, gt)).abs() < 1e-6, "case {i}: wF {wf} {}", oracle_wfm(pred, gt));
    }
}

#[test]
fn five_by_five_blob_weighted_f() {
    let gt = Array2::from_shape_fn((5, 5), |(r, c)| (1..4).contains(&r) && (1..3).contains(&c));
    let pred = Array2::from_shape_fn((5, 5), |(r, c)| ((r * 5 + c) as f64 * 0.37).fract());
    let wf = weighted_fmeasure(pred.view(), gt.view()).unwrap();
    assert!((wf - oracle_wfm(&pred, &gt)).abs() < 1e-9);
    assert!(wf > 0.0 && wf < 1.0);
}

#[test]
fn eight_by_eight_structure_case() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let gt = Array2::from_shape_fn((8, 8), |(r, c)| r + c < 7 && rng.gen_bool(0.8));
    let pred = Array2::from_shape_fn((8, 8), |_| rng.gen_range(0.0..1.0));
    assert!((smeasure(pred.view(), gt.view()).unwrap() - oracle_smeasure(&pred, &gt)).abs() < 1e-9);
}

#[test]
fn inverted_prediction_matches_sweep_oracle() {
    let (_, gt) = random_case(&mut ChaCha8Rng::seed_from_u64(3), 2);
    let pred = gt.mapv(|g| 1.0 - as_f(g));
    let (d, _) = dice_iou_sweep(pred.view(), gt.view()).unwrap();
    assert_eq!(d, oracle_dice_iou(pred.view(), gt.view()).0);
    assert!(d < 1e-12);
    let (em, ex) = emeasure(pred.view(), gt.view()).unwrap();
    let (oem, oex) = oracle_emeasure(pred.view(), gt.view());
    assert!((em - oem).abs() < 1e-12 && (ex - oex).abs() < 1e-12);
    assert!(em < 0.5);
}

#[test]
fn exact_prediction_scores_exactly() {
    for (pred, gt) in cases() {
        let _ = pred;
        let exact = gt.mapv(as_f);
        let s = score_image(exact.view(), gt.view()).unwrap();
        assert_eq!(s.to_array(), [1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.0]);
    }
}

fn arb_case() -> impl Strategy<Value = (Array2<f64>, Array2<bool>)> {
    (any::<u64>(), 0usize..100).prop_map(|(seed, case)| random_case(&mut ChaCha8Rng::seed_from_u64(seed), case))
}

fn flip(a: &Array2<f64>) -> Array2<f64> {
    a.slice(s![.., ..;-1]).to_owned()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn horizontal_flip_invariance((pred, gt) in arb_case()) {
        let a = score_image(pred.view(), gt.view()).unwrap();
        let fg = gt.slice(s![.., ..;-1]).to_owned();
        let fp = flip(&pred);
        let b = score_image(fp.view(), fg.view()).unwrap();
        let (mut a7, mut b7) = (a.to_array(), b.to_array());
        // S-measure splits at the rounded 1-based centroid column, which a
        // flip moves by one; checked below against the mirrored split instead
        a7[3] = 0.0;
        b7[3] = 0.0;
        for (x, y) in a7.iter().zip(&b7) {
            prop_assert!((x - y).abs() < 1e-9, "{a:?} vs {b:?}");
        }
        let n = gt.iter().filter(|&&g| g).count();
        if n > 0 && n < gt.len() {
            let mirrored = SIZE - centroid(&gt).0;
            prop_assert!((a.smeasure - oracle_smeasure_split(&fp, &fg, Some(mirrored))).abs() < 1e-9);
        } else {
            prop_assert!((a.smeasure - b.smeasure).abs() < 1e-12);
        }
    }

    #[test]
    fn scores_are_in_range((pred, gt) in arb_case()) {
        let s = score_image(pred.view(), gt.view()).unwrap();
        prop_assert!(s.to_array().iter().all(|v| (0.0..=1.0).contains(v)), "{s:?}");
        prop_assert!(s.mEm <= s.maxEm);
    }

    #[test]
    fn mae_is_symmetric_under_complement((pred, gt) in arb_case()) {
        let inv_gt = gt.mapv(|g| !g);
        let a = mae(pred.view(), gt.view()).unwrap();
        let b = mae(pred.mapv(|p| 1.0 - p).view(), inv_gt.view()).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn blending_toward_truth_never_lowers_dice((pred, gt) in arb_case(), lam in 0.0f64..1.0) {
        let g = gt.mapv(as_f);
        let blended = &pred * (1.0 - lam) + &g * lam;
        let before = dice_iou_sweep(pred.view(), gt.view()).unwrap().0;
        let after = dice_iou_sweep(blended.view(), gt.view()).unwrap().0;
        prop_assert!(after >= before - 1e-12, "{before} -> {after}");
    }
}

#[test]
fn flip_helper_reverses_columns() {
    let a = Array2::from_shape_fn((2, 3), |(r, c)| (r * 3 + c) as f64);
    assert_eq!(flip(&a).index_axis(Axis(0), 0).to_vec(), vec![2.0, 1.0, 0.0]);
}
