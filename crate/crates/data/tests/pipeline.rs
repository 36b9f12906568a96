use std::path::Path;

use image::{GrayImage, Luma, RgbImage};
use ndarray::{Array2, Array3};
use polyp_data::{
    load_manifest, load_manifest_cached, make_sample, rotate_eval, rotate_image, rotate_mask, synth_dataset, Error,
    SampleConfig, SynthConfig,
};
use proptest::prelude::*;

fn write_pair(base: &Path, stem: &str, w: u32, h: u32) {
    std::fs::create_dir_all(base.join("images")).unwrap();
    std::fs::create_dir_all(base.join("masks")).unwrap();
    RgbImage::from_fn(w, h, |x, y| image::Rgb([(x * 3) as u8, (y * 5) as u8, 90]))
        .save(base.join("images").join(format!("{stem}.png")))
        .unwrap();
    GrayImage::from_fn(w, h, |x, y| Luma([if x > w / 3 && y < h / 2 { 255 } else { 0 }]))
        .save(base.join("masks").join(format!("{stem}.png")))
        .unwrap();
}

#[test]
fn empty_dataset_gives_empty_manifest() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir_all(dir.path().join("empty/images")).unwrap();
    let m = load_manifest(dir.path(), "empty").unwrap();
    assert!(m.is_empty());
}

#[test]
fn three_pairs_in_stem_order() {
    let dir = tempfile::tempdir().unwrap();
    for s in ["b", "c", "a"] {
        write_pair(&dir.path().join("set"), s, 20, 10);
    }
    let m = load_manifest(dir.path(), "set").unwrap();
    assert_eq!(m.pairs.iter().map(|p| p.stem.as_str()).collect::<Vec<_>>(), ["a", "b", "c"]);
}

#[test]
fn unmatched_files_name_the_stem() {
    let dir = tempfile::tempdir().unwrap();
    let base = dir.path().join("set");
    write_pair(&base, "ok", 8, 8);
    RgbImage::new(4, 4).save(base.join("images/lonely.png")).unwrap();
    let err = load_manifest(dir.path(), "set").unwrap_err();
    assert!(matches!(&err, Error::MissingMask { stem } if stem == "lonely"));
    assert!(err.to_string().contains("lonely"));
    std::fs::remove_file(base.join("images/lonely.png")).unwrap();
    GrayImage::new(4, 4).save(base.join("masks/orphan.png")).unwrap();
    assert!(matches!(load_manifest(dir.path(), "set"), Err(Error::MissingImage { stem }) if stem == "orphan"));
    assert!(matches!(load_manifest(dir.path(), "nope"), Err(Error::MissingDir(_))));
}

#[test]
fn manifest_cache_round_trips_and_refreshes() {
    let dir = tempfile::tempdir().unwrap();
    let base = dir.path().join("set");
    write_pair(&base, "a", 8, 8);
    let first = load_manifest_cached(dir.path(), "set").unwrap();
    assert!(base.join("manifest.json").exists());
    assert_eq!(load_manifest_cached(dir.path(), "set").unwrap(), first);
    std::fs::remove_file(base.join("images/a.png")).unwrap();
    std::fs::remove_file(base.join("masks/a.png")).unwrap();
    assert!(load_manifest_cached(dir.path(), "set").unwrap().is_empty());
}

#[test]
fn sample_sizes_and_scale_precondition() {
    let dir = tempfile::tempdir().unwrap();
    write_pair(&dir.path().join("set"), "a", 50, 30);
    let m = load_manifest(dir.path(), "set").unwrap();
    let cfg = SampleConfig::default();
    let s = make_sample(&m.pairs[0], false, 1.0, &cfg, "set").unwrap();
    assert_eq!(s.image.dim(), (3, 352, 352));
    assert_eq!(s.mask.dim(), (352, 352));
    assert_eq!(s.meta.original, (30, 50));
    assert_eq!(make_sample(&m.pairs[0], true, 0.75, &cfg, "set").unwrap().size(), (256, 256));
    assert_eq!(make_sample(&m.pairs[0], true, 1.25, &cfg, "set").unwrap().size(), (416, 416));
    assert!(matches!(make_sample(&m.pairs[0], false, 0.75, &cfg, "set"), Err(Error::Invalid(_))));
    assert!(s.mask.iter().all(|&v| v == 0.0 || v == 1.0));
    assert!(s.mask.iter().any(|&v| v == 1.0));
    // blue channel is constant 90/255 before normalization
    let n = cfg.normalization;
    let want = n.apply(2, 90.0 / 255.0);
    assert!(s.image.index_axis(ndarray::Axis(0), 2).iter().all(|&v| (v - want).abs() < 1e-5));
}

#[test]
fn rotation_identity_cases() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SampleConfig { image_size: 64, ..Default::default() };
    let m = synth_dataset(dir.path(), "syn", 1, 4, &SynthConfig::default()).unwrap();
    let s = make_sample(&m.pairs[0], false, 1.0, &cfg, "syn").unwrap();
    assert_eq!(rotate_eval(&s, 0.0), s);
    let full = rotate_eval(&s, 360.0);
    assert_eq!(full.mask, s.mask);
    let worst = full.image.iter().zip(s.image.iter()).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
    assert!(worst < 1e-5, "{worst}");
}

#[test]
fn fifteen_degrees_preserves_centered_square_area() {
    let mask = Array2::from_shape_fn((96, 96), |(y, x)| (28..68).contains(&y) && (28..68).contains(&x));
    let before = mask.iter().filter(|&&b| b).count() as f64;
    let after = rotate_mask(&mask, 15.0).iter().filter(|&&b| b).count() as f64;
    assert!((after / before - 1.0).abs() < 0.02, "{before} -> {after}");
}

#[test]
fn rotated_sample_mask_stays_binary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SampleConfig { image_size: 64, ..Default::default() };
    let m = synth_dataset(dir.path(), "syn", 2, 4, &SynthConfig::default()).unwrap();
    for p in &m.pairs {
        let s = rotate_eval(&make_sample(p, false, 1.0, &cfg, "syn").unwrap(), 15.0);
        assert!(s.mask.iter().all(|&v| v == 0.0 || v == 1.0));
    }
}

#[test]
fn synthetic_data_is_deterministic_and_sized() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let cfg = SynthConfig::default();
    let ma = synth_dataset(a.path(), "s", 8, 11, &cfg).unwrap();
    let mb = synth_dataset(b.path(), "s", 8, 11, &cfg).unwrap();
    assert_eq!(ma.len(), 8);
    for (pa, pb) in ma.pairs.iter().zip(&mb.pairs) {
        assert_eq!(std::fs::read(&pa.image).unwrap(), std::fs::read(&pb.image).unwrap());
        assert_eq!(std::fs::read(&pa.mask).unwrap(), std::fs::read(&pb.mask).unwrap());
        let g = image::open(&pa.mask).unwrap().to_luma8();
        let frac = g.pixels().filter(|p| p[0] > 127).count() as f64 / (64.0 * 64.0);
        assert!((0.05..=0.40).contains(&frac), "{frac}");
    }
    let other = synth_dataset(a.path(), "t", 1, 12, &cfg).unwrap();
    assert_ne!(std::fs::read(&other.pairs[0].image).unwrap(), std::fs::read(&ma.pairs[0].image).unwrap());
    assert!(synth_dataset(a.path(), "none", 0, 1, &cfg).unwrap().is_empty());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// The image and mask transforms use the same geometry: a coordinate grid
    /// rotated as an image reports the source pixel that the mask rotation reads.
    #[test]
    fn image_and_mask_rotate_identically(deg in -180.0f64..180.0, y in 8usize..24, x in 8usize..24) {
        let (h, w) = (32, 32);
        let grid = Array3::from_shape_fn((2, h, w), |(c, yy, xx)| if c == 0 { yy as f32 } else { xx as f32 });
        let rotated = rotate_image(&grid, deg, &[f32::NAN, f32::NAN]);
        let (sy, sx) = (rotated[(0, y, x)], rotated[(1, y, x)]);
        prop_assume!(sy.is_finite() && sx.is_finite());
        // stay clear of rounding ties
        prop_assume!((sy.fract() - 0.5).abs() > 1e-3 && (sx.fract() - 0.5).abs() > 1e-3);
        let mut one = Array2::from_elem((h, w), false);
        one[(sy.round() as usize, sx.round() as usize)] = true;
        prop_assert!(rotate_mask(&one, deg)[(y, x)]);
    }
}
