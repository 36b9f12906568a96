use std::collections::{BTreeSet, HashMap};

use candle_core::{DType, Device, Tensor};
use polyp_core::backbone::{load_pretrained, Backbone, BackboneConfig};
use polyp_core::decoder::{AblationVariant, DecoderConfig};
use polyp_core::layers::Mode;
use polyp_core::model::{ModelConfig, PolypPvt};
use polyp_core::ops::to_f64_vec;
use polyp_core::params::ParamStore;
use polyp_core::{Error, ImageTensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn image(seed: u64, b: usize, h: usize, w: usize, dtype: DType) -> ImageTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<f32> = (0..b * 3 * h * w).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let t = Tensor::from_vec(data, (b, 3, h, w), &Device::Cpu).unwrap().to_dtype(dtype).unwrap();
    ImageTensor::new(t).unwrap()
}

fn desk(variant: AblationVariant) -> PolypPvt {
    PolypPvt::new(&ModelConfig::desk().with_variant(variant), DType::F32, &Device::Cpu, 0).unwrap()
}

#[test]
fn desk_shapes_64() {
    let model = desk(AblationVariant::Full);
    let out = model.forward_detailed(&image(0, 2, 64, 64, DType::F32), &mut Mode::Eval).unwrap();
    let got: Vec<(usize, usize, usize)> = out.features.as_array().iter().map(|f| f.hwc()).collect();
    assert_eq!(got, vec![(16, 16, 16), (8, 8, 32), (4, 4, 48), (2, 2, 64)]);
    assert_eq!(out.t1.hwc(), (8, 8, 16));
    assert_eq!(out.t2.hwc(), (16, 16, 16));
    assert_eq!(out.z.hwc(), (8, 8, 16));
    for r in &out.reduced {
        assert_eq!(r.channels(), 16);
        assert!(to_f64_vec(&r.tensor).unwrap().iter().all(|&v| v >= 0.0));
    }
    for p in [&out.prediction.p1, &out.prediction.p2, &out.prediction.p_final] {
        assert_eq!(p.dims(), &[2, 1, 64, 64]);
    }
}

#[test]
fn p_final_is_exact_sum() {
    let model = desk(AblationVariant::Full);
    let p = model.forward(&image(1, 1, 64, 96, DType::F32), &mut Mode::Eval).unwrap();
    let sum = (&p.p1 + &p.p2).unwrap();
    assert_eq!(to_f64_vec(&sum).unwrap(), to_f64_vec(&p.p_final).unwrap());
}

#[test]
fn stage1_shape_formula() {
    let cfg = BackboneConfig {
        embed_dims: [8, 16, 24, 32],
        num_heads: [1, 1, 1, 1],
        depths: [1, 1, 1, 1],
        ..BackboneConfig::desk()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut store = ParamStore::new(DType::F32, Device::Cpu);
    let bb = Backbone::new(&mut store.root(&mut rng).sub("backbone"), &cfg).unwrap();
    let f = bb.forward(&image(0, 1, 32, 32, DType::F32), &mut Mode::Eval).unwrap();
    assert_eq!(f.x1.hwc(), (8, 8, 8));
    assert_eq!(f.x4.hwc(), (1, 1, 32));
}

#[test]
fn eval_is_bitwise_deterministic() {
    let model = desk(AblationVariant::Full);
    let img = image(2, 1, 64, 64, DType::F32);
    let a = model.forward(&img, &mut Mode::Eval).unwrap();
    let b = model.forward(&img, &mut Mode::Eval).unwrap();
    assert_eq!(to_f64_vec(&a.p_final).unwrap(), to_f64_vec(&b.p_final).unwrap());
    let twin = desk(AblationVariant::Full);
    let c = twin.forward(&img, &mut Mode::Eval).unwrap();
    assert_eq!(to_f64_vec(&a.p_final).unwrap(), to_f64_vec(&c.p_final).unwrap());
}

#[test]
fn attention_rows_are_distributions() {
    let cfg = BackboneConfig::desk();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut store = ParamStore::new(DType::F64, Device::Cpu);
    let bb = Backbone::new(&mut store.root(&mut rng).sub("backbone"), &cfg).unwrap();
    let img = image(5, 1, 64, 64, DType::F64);
    let (tokens, h, w) = bb.stages[0].embed.forward(img.tensor()).unwrap();
    let attn = bb.stages[0].blocks[0].attention();
    assert_eq!(attn.kv_grid(h, w).unwrap(), (2, 2));
    let weights = attn.attention_weights(&tokens, h, w).unwrap();
    let dims = weights.dims().to_vec();
    assert_eq!(*dims.last().unwrap(), 4);
    let rows = to_f64_vec(&weights).unwrap();
    for row in rows.chunks(4) {
        assert!(row.iter().all(|&v| v >= 0.0));
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-5);
    }
}

#[test]
fn single_token_attention_is_value_projection() {
    use polyp_core::backbone::SrAttention;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut store = ParamStore::new(DType::F64, Device::Cpu);
    let attn = SrAttention::new(&mut store.root(&mut rng).sub("attn"), 8, 2, 1, 0.0).unwrap();
    let x = Tensor::from_vec((0..8).map(|i| i as f64 * 0.3 - 1.0).collect::<Vec<_>>(), (1, 1, 8), &Device::Cpu).unwrap();
    let weights = attn.attention_weights(&x, 1, 1).unwrap();
    assert!(to_f64_vec(&weights).unwrap().iter().all(|&v| (v - 1.0).abs() < 1e-12));
    let out = to_f64_vec(&attn.forward(&x, 1, 1, &mut Mode::Eval).unwrap()).unwrap();

    // v = second half of kv(x); output = proj(v)
    let w = store.export_f64().unwrap();
    let xv = to_f64_vec(&x).unwrap();
    let (kv_w, kv_b) = (&w["attn.kv.weight"].1, &w["attn.kv.bias"].1);
    let v: Vec<f64> = (0..8).map(|o| kv_b[8 + o] + (0..8).map(|i| kv_w[(8 + o) * 8 + i] * xv[i]).sum::<f64>()).collect();
    let (pw, pb) = (&w["attn.proj.weight"].1, &w["attn.proj.bias"].1);
    for o in 0..8 {
        let want = pb[o] + (0..8).map(|i| pw[o * 8 + i] * v[i]).sum::<f64>();
        assert!((out[o] - want).abs() < 1e-12, "{o}: {} vs {want}", out[o]);
    }
}

#[test]
fn sr_ratio_must_divide_grid() {
    use polyp_core::backbone::SrAttention;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut store = ParamStore::new(DType::F32, Device::Cpu);
    let attn = SrAttention::new(&mut store.root(&mut rng).sub("attn"), 8, 1, 4, 0.0).unwrap();
    assert!(matches!(attn.kv_grid(6, 8), Err(Error::Shape { .. })));
    assert_eq!(attn.kv_grid(88, 88).unwrap(), (22, 22));
}

#[test]
fn wz_zero_gives_residual_identity() {
    for variant in [AblationVariant::Full, AblationVariant::SamNogcn, AblationVariant::SamConv] {
        let model = desk(variant);
        let wz = model.store().get("sam.wz.weight").unwrap();
        model.store().set("sam.wz.weight", &wz.zeros_like().unwrap()).unwrap();
        let out = model.forward_detailed(&image(7, 1, 64, 64, DType::F32), &mut Mode::Eval).unwrap();
        assert_eq!(to_f64_vec(&out.z.tensor).unwrap(), to_f64_vec(&out.t1.tensor).unwrap(), "{variant}");
    }
}

#[test]
fn zero_x1_gives_zero_t2() {
    use polyp_core::decoder::Cim;
    use polyp_core::feature::FeatureMap;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut store = ParamStore::new(DType::F32, Device::Cpu);
    let cim = Cim::new(&mut store.root(&mut rng).sub("cim"), 16, 4).unwrap();
    let x = FeatureMap::new(Tensor::zeros((1, 16, 8, 8), DType::F32, &Device::Cpu).unwrap(), 4).unwrap();
    assert!(to_f64_vec(&cim.forward(&x).unwrap().tensor).unwrap().iter().all(|&v| v == 0.0));
}

#[test]
fn gates_shrink_magnitudes() {
    use polyp_core::decoder::Cim;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut store = ParamStore::new(DType::F64, Device::Cpu);
    let cim = Cim::new(&mut store.root(&mut rng).sub("cim"), 8, 2).unwrap();
    let x = image(9, 1, 32, 32, DType::F64).tensor().narrow(1, 0, 1).unwrap().repeat((1, 8, 1, 1)).unwrap();
    let y = cim.channel.forward(&x).unwrap();
    for (a, b) in to_f64_vec(&y).unwrap().iter().zip(to_f64_vec(&x).unwrap()) {
        assert!(a.abs() <= b.abs());
    }
    // constant channels: max pool == avg pool
    let c = Tensor::ones((1, 8, 4, 4), DType::F64, &Device::Cpu).unwrap();
    let gate = to_f64_vec(&cim.channel.gate(&(c * 0.7).unwrap()).unwrap()).unwrap();
    assert!(gate.iter().all(|&g| g > 0.0 && g < 1.0));
    // one channel: max_c == mean_c == x
    let single = image(3, 1, 32, 32, DType::F64).tensor().narrow(1, 0, 1).unwrap();
    let g = cim.spatial.gate(&single).unwrap();
    assert_eq!(g.dims(), &[1, 1, 32, 32]);
}

fn names(model: &PolypPvt) -> BTreeSet<String> {
    model.store().names().map(String::from).collect()
}

#[test]
fn ablation_name_sets_differ_as_documented() {
    let full = names(&desk(AblationVariant::Full));
    let has = |set: &BTreeSet<String>, p: &str| set.iter().any(|n| n.starts_with(p));
    assert!(has(&full, "cfm.f8.") && has(&full, "cim.") && has(&full, "sam.gcn."));
    assert!(full.contains("head.p1.weight") && full.contains("head.p2.bias"));
    assert!(full.contains("backbone.stage1.block0.attn.q.weight"));
    assert!(full.contains("backbone.stage4.block1.mlp.dwconv.weight"));

    let strip = |set: &BTreeSet<String>, p: &str| -> BTreeSet<String> { set.iter().filter(|n| !n.starts_with(p)).cloned().collect() };
    assert_eq!(names(&desk(AblationVariant::NoCfm)), strip(&full, "cfm."));
    assert_eq!(names(&desk(AblationVariant::NoCim)), strip(&full, "cim."));
    let no_sam = names(&desk(AblationVariant::NoSam));
    let expected: BTreeSet<String> = strip(&full, "sam.")
        .into_iter()
        .chain(["conv.weight", "bn.weight", "bn.bias", "bn.running_mean", "bn.running_var"].map(|s| format!("fuse.t2_reduce.{s}")))
        .collect();
    assert_eq!(no_sam, expected);
    assert_eq!(names(&desk(AblationVariant::SamNogcn)), strip(&full, "sam.gcn."));
    let conv: BTreeSet<String> = strip(&full, "sam.gcn.")
        .into_iter()
        .chain(["sam.node_conv.weight".to_string(), "sam.node_conv.bias".to_string()])
        .collect();
    assert_eq!(names(&desk(AblationVariant::SamConv)), conv);
}

#[test]
fn sam_variant_counts_are_ordered() {
    for base in [ModelConfig::desk(), ModelConfig::default()] {
        let count = |v| {
            PolypPvt::new(&base.clone().with_variant(v), DType::F32, &Device::Cpu, 0)
                .unwrap()
                .store()
                .num_parameters_with_prefix("sam.")
        };
        let (nogcn, conv, gcn) = (count(AblationVariant::SamNogcn), count(AblationVariant::SamConv), count(AblationVariant::Full));
        assert!(nogcn < conv && conv <= gcn, "{nogcn} {conv} {gcn}");
        if base == ModelConfig::default() {
            assert_eq!((nogcn, conv, gcn), (3680, 3952, 4208));
        }
    }
}

#[test]
fn default_parameter_counts_are_pinned() {
    let model = PolypPvt::new(&ModelConfig::default(), DType::F32, &Device::Cpu, 0).unwrap();
    let s = model.store();
    assert_eq!(s.num_parameters_with_prefix("backbone."), 44_725_696);
    assert_eq!(s.num_parameters(), 45_127_636);
    assert_eq!(s.num_parameters_with_prefix("cim."), 610);
    assert_eq!(s.num_parameters_with_prefix("cfm."), 120_384);
}

#[test]
fn every_parameter_gets_a_finite_gradient() {
    use polyp_core::loss::{total_loss, LossConfig};
    let model = desk(AblationVariant::Full);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let img = image(11, 2, 64, 64, DType::F32);
    let mask: Vec<f32> = (0..2 * 64 * 64).map(|i| if (i % 64) > 20 && (i / 64) % 64 < 40 { 1.0 } else { 0.0 }).collect();
    let mask = Tensor::from_vec(mask, (2, 1, 64, 64), &Device::Cpu).unwrap();
    let pred = model.forward(&img, &mut Mode::Train(&mut rng)).unwrap();
    let loss = total_loss(&pred, &mask, &LossConfig::default()).unwrap();
    let grads = loss.total.backward().unwrap();
    for (name, var) in model.store().trainable() {
        let g = grads.get(var.as_tensor()).unwrap_or_else(|| panic!("{name}: no gradient"));
        assert!(to_f64_vec(g).unwrap().iter().all(|v| v.is_finite()), "{name}");
    }
}

#[test]
fn checkpoint_round_trip_is_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.safetensors");
    let a = desk(AblationVariant::Full);
    a.store().save(&path).unwrap();
    let b = PolypPvt::new(&ModelConfig::desk(), DType::F32, &Device::Cpu, 99).unwrap();
    let report = b.store().load(&path, "", true).unwrap();
    assert!(report.is_complete());
    assert_eq!(a.store().export_f64().unwrap(), b.store().export_f64().unwrap());
    let img = image(12, 1, 64, 64, DType::F32);
    let pa = a.forward(&img, &mut Mode::Eval).unwrap().p_final;
    let pb = b.forward(&img, &mut Mode::Eval).unwrap().p_final;
    assert_eq!(to_f64_vec(&pa).unwrap(), to_f64_vec(&pb).unwrap());
}

#[test]
fn ablation_partially_loads_full_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("full.safetensors");
    desk(AblationVariant::Full).store().save(&path).unwrap();
    let no_cim = desk(AblationVariant::NoCim);
    assert!(no_cim.store().load(&path, "", true).is_err());
    let report = no_cim.store().load(&path, "", false).unwrap();
    assert!(report.missing.is_empty());
    assert!(report.unexpected.iter().all(|n| n.starts_with("cim.")));
    assert_eq!(report.unexpected.len(), 3);
}

#[test]
fn pretrained_backbone_loading() {
    let dir = tempfile::tempdir().unwrap();
    let src = desk(AblationVariant::Full);
    let dst = PolypPvt::new(&ModelConfig::desk(), DType::F32, &Device::Cpu, 5).unwrap();

    let backbone_only: HashMap<String, Tensor> =
        src.store().tensors().into_iter().filter(|(k, _)| k.starts_with("backbone.")).collect();
    let good = dir.path().join("good.safetensors");
    candle_core::safetensors::save(&backbone_only, &good).unwrap();
    let report = load_pretrained(dst.store(), &good).unwrap();
    assert!(report.missing.is_empty() && report.unexpected.is_empty());
    let n_backbone = dst.store().names().filter(|n| n.starts_with("backbone.")).count();
    assert_eq!(report.loaded.len(), n_backbone);
    assert_eq!(
        to_f64_vec(dst.store().get("backbone.stage2.block1.attn.q.weight").unwrap()).unwrap(),
        to_f64_vec(src.store().get("backbone.stage2.block1.attn.q.weight").unwrap()).unwrap()
    );

    // deeper config: extra blocks are unexpected, and the strict loader refuses
    let deep = ModelConfig {
        backbone: BackboneConfig { depths: [3, 4, 18, 3], ..BackboneConfig::desk() },
        decoder: DecoderConfig::desk(),
    };
    let deep_model = PolypPvt::new(&deep, DType::F32, &Device::Cpu, 0).unwrap();
    let deep_path = dir.path().join("deep.safetensors");
    deep_model.store().save(&deep_path).unwrap();
    let err = load_pretrained(dst.store(), &deep_path).unwrap_err().to_string();
    assert!(err.contains("backbone.stage3.block17"), "{err}");

    // shape mismatch names the parameter
    let mut bad = backbone_only.clone();
    bad.insert("backbone.stage1.norm.weight".into(), Tensor::zeros(7, DType::F32, &Device::Cpu).unwrap());
    let bad_path = dir.path().join("bad.safetensors");
    candle_core::safetensors::save(&bad, &bad_path).unwrap();
    let err = load_pretrained(dst.store(), &bad_path).unwrap_err().to_string();
    assert!(err.contains("backbone.stage1.norm.weight"), "{err}");

    assert!(load_pretrained(dst.store(), dir.path().join("missing.safetensors")).is_err());
}

#[test]
fn indivisible_input_names_the_stage() {
    use polyp_core::backbone::PatchEmbed;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut store = ParamStore::new(DType::F32, Device::Cpu);
    let pe = PatchEmbed::new(&mut store.root(&mut rng).sub("pe"), 2, 8, 16).unwrap();
    let err = pe.forward(&Tensor::zeros((1, 8, 7, 8), DType::F32, &Device::Cpu).unwrap()).unwrap_err();
    assert!(err.to_string().contains("stage 2"), "{err}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn shape_law(hm in 1usize..4, wm in 1usize..4, b in 1usize..3) {
        let cfg = ModelConfig {
            backbone: BackboneConfig {
                embed_dims: [8, 16, 16, 16],
                num_heads: [1, 1, 1, 1],
                mlp_ratios: [2, 2, 2, 2],
                depths: [1, 1, 1, 1],
                ..BackboneConfig::default()
            },
            decoder: DecoderConfig { channel: 8, sam_state: 4, cim_reduction: 2, ..DecoderConfig::default() },
        };
        let model = PolypPvt::new(&cfg, DType::F32, &Device::Cpu, 1).unwrap();
        let (h, w) = (32 * hm, 32 * wm);
        let out = model.forward_detailed(&image(3, b, h, w, DType::F32), &mut Mode::Eval).unwrap();
        for (f, s) in out.features.as_array().iter().zip([4, 8, 16, 32]) {
            prop_assert_eq!((f.height(), f.width(), f.stride), (h / s, w / s, s));
        }
        prop_assert_eq!((out.t1.height(), out.t1.width()), (h / 8, w / 8));
        prop_assert_eq!((out.t2.height(), out.t2.width()), (h / 4, w / 4));
        prop_assert_eq!((out.z.height(), out.z.width()), (h / 8, w / 8));
        prop_assert_eq!(out.prediction.p_final.dims(), &[b, 1, h, w]);
    }
}
