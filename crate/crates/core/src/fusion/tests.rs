use super::*;
use crate::complexity::FlopConvention;

fn m(rows: usize, cols: usize, data: &[f64]) -> Tensor {
    Tensor::new(&[rows, cols], data.to_vec()).unwrap()
}

fn set(f: &mut dyn Fusion, name: &str, value: Tensor) {
    f.params_mut().set(name, &value).unwrap();
}

#[test]
fn kind_names_round_trip() {
    for k in FusionKind::ALL {
        assert_eq!(k.name().parse::<FusionKind>().unwrap(), k);
        assert_eq!(k.label().parse::<FusionKind>().unwrap(), k);
    }
    assert_eq!("c_mlp".parse::<FusionKind>().unwrap(), FusionKind::Cmlp);
    let err = "tucker".parse::<FusionKind>().unwrap_err();
    assert!(err.to_string().contains("mutan"), "{err}");
}

#[test]
fn registry_lists_all_builtins() {
    let names: Vec<&str> = FusionRegistry::global().names().collect();
    assert_eq!(names.len(), 8);
    for k in FusionKind::ALL {
        assert!(names.contains(&k.name()));
    }
    assert!(FusionRegistry::global().get("nope").is_err());
}

#[test]
fn defaults_match_standard_settings() {
    assert_eq!(Hyper::defaults(FusionKind::Linear, 3000), Hyper::Linear { inter: 1000, d_out: 3000 });
    assert_eq!(Hyper::defaults(FusionKind::Cmlp, 3000), Hyper::Cmlp { hidden: 1600, d_out: 3000 });
    assert_eq!(Hyper::defaults(FusionKind::Mcb, 0), Hyper::Mcb { d: 16000, normalize: true });
    assert_eq!(Hyper::defaults(FusionKind::Mlb, 0), Hyper::Mlb { d_z: 1200 });
    assert_eq!(Hyper::defaults(FusionKind::Mfb, 0), Hyper::Mfb { k: 5, d_z: 1000 });
    assert_eq!(Hyper::defaults(FusionKind::Mfh, 0), Hyper::Mfh { k: 5, d_z: 1000, m: 2 });
    assert!(matches!(Hyper::defaults(FusionKind::Mutan, 0), Hyper::Mutan { rank: 10, .. }));
    assert_eq!(
        Hyper::defaults(FusionKind::Block, 0),
        Hyper::Block { d_pv: 1600, d_pq: 1600, d_z: 1600, rank: 15, n: 18 }
    );
}

#[test]
fn invalid_hyperparameters_are_config_errors() {
    let bad = [
        Hyper::Mfb { k: 0, d_z: 4 },
        Hyper::Mfh { k: 2, d_z: 4, m: 0 },
        Hyper::Mutan { d_pv: 4, d_pq: 4, d_z: 4, rank: 0 },
        Hyper::Block { d_pv: 4, d_pq: 4, d_z: 4, rank: 0, n: 2 },
        Hyper::Block { d_pv: 4, d_pq: 4, d_z: 3, rank: 1, n: 4 },
        Hyper::Mcb { d: 0, normalize: false },
    ];
    for h in bad {
        let err = FusionSpec::with_hyper(3, 3, h).build().unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{h:?}: {err}");
    }
    let err = FusionSpec::new(FusionKind::Mlb, 0, 3, 0).build().unwrap_err();
    assert!(matches!(err, Error::Config(_)));
}

#[test]
fn even_chunks_for_default_block() {
    let w = even_chunks(1600, 18);
    assert_eq!(w.iter().filter(|&&x| x == 89).count(), 16);
    assert_eq!(w.iter().filter(|&&x| x == 88).count(), 2);
    assert!(w[..16].iter().all(|&x| x == 89));
    assert_eq!(w.iter().sum::<usize>(), 1600);
}

#[test]
fn mlb_closed_forms() {
    let spec = FusionSpec::with_hyper(2048, 2400, Hyper::Mlb { d_z: 1200 });
    assert_eq!(spec.param_count(), 2048 * 1200 + 2400 * 1200);
    assert_eq!(spec.param_count(), 5_337_600);
    let flops = 2 * 2048 * 1200 + 2 * 2400 * 1200 + 1200;
    assert_eq!(spec.flop_count(&FlopConvention::MAC2, 1), flops);
    assert_eq!(spec.flop_count(&FlopConvention::MAC2, 1), 10_676_400);
    assert_eq!(spec.flop_count(&FlopConvention::MAC2, 7), 7 * flops);
}

#[test]
fn mfb_with_unit_window_counts_like_mlb() {
    let mfb = FusionSpec::with_hyper(2048, 2400, Hyper::Mfb { k: 1, d_z: 1200 });
    assert_eq!(mfb.param_count(), 5_337_600);
}

#[test]
fn cmlp_closed_form() {
    let spec = FusionSpec::new(FusionKind::Cmlp, 2048, 2400, 3000);
    let d_in = 2048 + 2400;
    assert_eq!(d_in, 4448);
    let expected = d_in * 1600 + 1600 * 1600 + 1600 * 3000 + (1600 + 1600 + 3000);
    assert_eq!(spec.param_count(), expected);
    assert_eq!(expected, 14_483_000);
}

#[test]
fn built_counts_match_closed_forms() {
    let specs = [
        Hyper::Linear { inter: 5, d_out: 3 },
        Hyper::Cmlp { hidden: 6, d_out: 3 },
        Hyper::Mcb { d: 8, normalize: true },
        Hyper::Mlb { d_z: 4 },
        Hyper::Mfb { k: 3, d_z: 4 },
        Hyper::Mfh { k: 3, d_z: 4, m: 3 },
        Hyper::Mutan { d_pv: 5, d_pq: 6, d_z: 4, rank: 3 },
        Hyper::Block { d_pv: 7, d_pq: 8, d_z: 5, rank: 2, n: 3 },
    ];
    for h in specs {
        let spec = FusionSpec::with_hyper(9, 11, h);
        let built = spec.build().unwrap();
        assert_eq!(built.param_count(), spec.param_count(), "{h:?}");
        assert_eq!(built.d_out(), h.d_out());
    }
}

#[test]
fn linear_minimal_dims() {
    let spec = FusionSpec::with_hyper(1, 1, Hyper::Linear { inter: 1, d_out: 1 });
    // three weights plus three biases
    assert_eq!(spec.param_count(), 3 + 3);
    let mut f = spec.build().unwrap();
    for w in ["w_v", "w_q", "w_o"] {
        set(f.as_mut(), w, m(1, 1, &[1.0]));
    }
    let out = f.apply(&m(1, 1, &[2.0]), &m(1, 1, &[3.0])).unwrap();
    assert_eq!(out.to_vec(), vec![5.0]);
}

#[test]
fn linear_zero_inputs_and_homogeneity() {
    let f = FusionSpec::with_hyper(4, 3, Hyper::Linear { inter: 5, d_out: 2 })
        .seed(3)
        .build()
        .unwrap();
    let zero = f.apply(&Tensor::zeros(&[2, 4], DType::F64), &Tensor::zeros(&[2, 3], DType::F64)).unwrap();
    assert!(zero.to_vec().iter().all(|&x| x == 0.0));
    let mut rng = Rng::new(1);
    let v = Tensor::randn(&[2, 4], DType::F64, &mut rng);
    let q = Tensor::randn(&[2, 3], DType::F64, &mut rng);
    let once = f.apply(&v, &q).unwrap();
    let twice = f.apply(&v.scale(2.0), &q.scale(2.0)).unwrap();
    assert!(once.scale(2.0).max_abs_diff(&twice).unwrap() < 1e-12);
}

#[test]
fn linear_input_gradient_is_constant() {
    let f = FusionSpec::with_hyper(4, 3, Hyper::Linear { inter: 5, d_out: 2 })
        .seed(9)
        .build()
        .unwrap();
    let mut rng = Rng::new(2);
    let g = Tensor::randn(&[1, 2], DType::F64, &mut rng);
    let grads: Vec<Tensor> = (0..2)
        .map(|_| {
            let v = Tensor::randn(&[1, 4], DType::F64, &mut rng);
            let q = Tensor::randn(&[1, 3], DType::F64, &mut rng);
            let (_, cache) = f.forward(&v, &q).unwrap();
            f.backward(&cache, &g).unwrap().v
        })
        .collect();
    assert_eq!(grads[0].to_vec(), grads[1].to_vec());
}

#[test]
fn cmlp_zero_weights_give_zero() {
    let mut f = FusionSpec::with_hyper(3, 2, Hyper::Cmlp { hidden: 4, d_out: 2 }).build().unwrap();
    for (name, t) in f.params().iter().map(|(n, t)| (n.to_string(), Tensor::zeros(t.shape(), t.dtype()))).collect::<Vec<_>>() {
        set(f.as_mut(), &name, t);
    }
    let mut rng = Rng::new(5);
    let out = f
        .apply(&Tensor::randn(&[3, 3], DType::F64, &mut rng), &Tensor::randn(&[3, 2], DType::F64, &mut rng))
        .unwrap();
    assert!(out.to_vec().iter().all(|&x| x == 0.0));
    assert_eq!(f.params().get("w1").unwrap().shape(), &[5, 4]);
}

#[test]
fn count_sketch_definition() {
    // h = (1, 3) in 1-based buckets, s = (+, -).
    let t = SketchTable::from_parts(vec![0, 2], vec![1.0, -1.0], 4).unwrap();
    let out = t.apply(&m(1, 2, &[2.0, 5.0])).unwrap();
    assert_eq!(out.to_vec(), vec![2.0, 0.0, -5.0, 0.0]);
}

#[test]
fn mcb_has_no_trainable_parameters() {
    let spec = FusionSpec::with_hyper(6, 5, Hyper::Mcb { d: 8, normalize: true });
    let f = spec.build().unwrap();
    assert_eq!(f.param_count(), 0);
    assert_eq!(spec.param_count(), 0);
    let frozen: usize = f.frozen_state().iter().map(|(_, n)| n).sum();
    assert_eq!(frozen, 2 * 6 + 2 * 5);
}

#[test]
fn mcb_zero_visual_input_gives_zero() {
    for normalize in [false, true] {
        let f = FusionSpec::with_hyper(6, 5, Hyper::Mcb { d: 8, normalize }).build().unwrap();
        let mut rng = Rng::new(4);
        let out = f
            .apply(&Tensor::zeros(&[2, 6], DType::F64), &Tensor::randn(&[2, 5], DType::F64, &mut rng))
            .unwrap();
        assert!(out.to_vec().iter().all(|&x| x.abs() < 1e-15), "normalize = {normalize}");
    }
}

#[test]
fn mcb_normalized_rows_have_unit_norm() {
    let f = FusionSpec::with_hyper(10, 7, Hyper::Mcb { d: 16, normalize: true }).seed(2).build().unwrap();
    let mut rng = Rng::new(8);
    let out = f
        .apply(&Tensor::randn(&[3, 10], DType::F64, &mut rng), &Tensor::randn(&[3, 7], DType::F64, &mut rng))
        .unwrap();
    for row in out.to_vec().chunks(16) {
        let n: f64 = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-12);
    }
}

#[test]
fn mlb_scalar_case_and_gradient() {
    let mut f = FusionSpec::with_hyper(1, 1, Hyper::Mlb { d_z: 1 }).build().unwrap();
    set(f.as_mut(), "p_v", m(1, 1, &[2.0]));
    set(f.as_mut(), "p_q", m(1, 1, &[3.0]));
    let (out, cache) = f.forward(&m(1, 1, &[4.0]), &m(1, 1, &[5.0])).unwrap();
    assert_eq!(out.to_vec(), vec![120.0]);
    let g = f.backward(&cache, &m(1, 1, &[1.0])).unwrap();
    assert_eq!(g.v.to_vec(), vec![30.0]);
}

#[test]
fn mlb_zero_inputs_and_scaling() {
    let f = FusionSpec::with_hyper(4, 3, Hyper::Mlb { d_z: 5 }).seed(1).build().unwrap();
    let mut rng = Rng::new(6);
    let v = Tensor::randn(&[2, 4], DType::F64, &mut rng);
    let q = Tensor::randn(&[2, 3], DType::F64, &mut rng);
    let zv = f.apply(&Tensor::zeros(&[2, 4], DType::F64), &q).unwrap();
    let zq = f.apply(&v, &Tensor::zeros(&[2, 3], DType::F64)).unwrap();
    assert!(zv.to_vec().iter().chain(zq.to_vec().iter()).all(|&x| x == 0.0));
    let base = f.apply(&v, &q).unwrap();
    // A power of two keeps the scaling exact.
    let scaled = f.apply(&v.scale(4.0), &q).unwrap();
    assert_eq!(base.scale(4.0).to_vec(), scaled.to_vec());
}

#[test]
fn mfb_hand_case() {
    let mut f = FusionSpec::with_hyper(1, 1, Hyper::Mfb { k: 2, d_z: 1 }).build().unwrap();
    set(f.as_mut(), "p_v", m(1, 2, &[1.0, 2.0]));
    set(f.as_mut(), "p_q", m(1, 2, &[3.0, 4.0]));
    let out = f.apply(&m(1, 1, &[1.0]), &m(1, 1, &[1.0])).unwrap();
    assert_eq!(out.to_vec(), vec![11.0]);
}

#[test]
fn mfh_output_width_and_zero_input() {
    let f = FusionSpec::with_hyper(4, 3, Hyper::Mfh { k: 2, d_z: 3, m: 2 }).build().unwrap();
    let mut rng = Rng::new(1);
    let q = Tensor::randn(&[2, 3], DType::F64, &mut rng);
    let out = f.apply(&Tensor::zeros(&[2, 4], DType::F64), &q).unwrap();
    assert_eq!(out.shape(), &[2, 6]);
    assert!(out.to_vec().iter().all(|&x| x == 0.0));
}

#[test]
fn mutan_scalar_rank_two() {
    let mut f = FusionSpec::with_hyper(1, 1, Hyper::Mutan { d_pv: 1, d_pq: 1, d_z: 1, rank: 2 })
        .build()
        .unwrap();
    set(f.as_mut(), "f_v", m(1, 1, &[1.0]));
    set(f.as_mut(), "f_q", m(1, 1, &[1.0]));
    let a = interleave_rank_factors(&[m(1, 1, &[1.0]), m(1, 1, &[2.0])]).unwrap();
    let b = interleave_rank_factors(&[m(1, 1, &[1.0]), m(1, 1, &[1.0])]).unwrap();
    set(f.as_mut(), "core_v", a);
    set(f.as_mut(), "core_q", b);
    let out = f.apply(&m(1, 1, &[3.0]), &m(1, 1, &[5.0])).unwrap();
    assert_eq!(out.to_vec(), vec![3.0 * 5.0 * 1.0 * 1.0 + 3.0 * 5.0 * 2.0 * 1.0]);
    assert_eq!(out.to_vec(), vec![45.0]);
}

#[test]
fn interleave_layout() {
    let a1 = m(2, 2, &[1.0, 2.0, 3.0, 4.0]);
    let a2 = m(2, 2, &[10.0, 20.0, 30.0, 40.0]);
    let packed = interleave_rank_factors(&[a1, a2]).unwrap();
    assert_eq!(packed.to_vec(), vec![1.0, 10.0, 2.0, 20.0, 3.0, 30.0, 4.0, 40.0]);
}

#[test]
fn block_independence_with_zeroed_second_block() {
    let h = Hyper::Block { d_pv: 6, d_pq: 4, d_z: 4, rank: 2, n: 2 };
    let mut f = FusionSpec::with_hyper(5, 3, h).seed(11).build().unwrap();
    for name in ["core_v.2", "core_q.2"] {
        let shape = f.params().get(name).unwrap().shape().to_vec();
        set(f.as_mut(), name, Tensor::zeros(&shape, DType::F64));
    }
    let mut rng = Rng::new(3);
    let v = Tensor::randn(&[3, 5], DType::F64, &mut rng);
    let q = Tensor::randn(&[3, 3], DType::F64, &mut rng);
    let out = f.apply(&v, &q).unwrap();
    assert!(out.slice_last(2, 2).unwrap().to_vec().iter().all(|&x| x == 0.0));

    // Block 1 alone is a Mutan on the first chunks of the reduced inputs.
    let p = f.params();
    let tv = v.matmul(p.get("f_v").unwrap()).unwrap().slice_last(0, 3).unwrap();
    let tq = q.matmul(p.get("f_q").unwrap()).unwrap().slice_last(0, 2).unwrap();
    let mut mutan = FusionSpec::with_hyper(3, 2, Hyper::Mutan { d_pv: 3, d_pq: 2, d_z: 2, rank: 2 })
        .build()
        .unwrap();
    set(mutan.as_mut(), "f_v", Tensor::identity(3, DType::F64));
    set(mutan.as_mut(), "f_q", Tensor::identity(2, DType::F64));
    set(mutan.as_mut(), "core_v", p.get("core_v.1").unwrap().clone());
    set(mutan.as_mut(), "core_q", p.get("core_q.1").unwrap().clone());
    let first = mutan.apply(&tv, &tq).unwrap();
    assert_eq!(out.slice_last(0, 2).unwrap().to_vec(), first.to_vec());
}

#[test]
fn stale_cache_is_a_state_error() {
    let mut f = FusionSpec::with_hyper(3, 2, Hyper::Mlb { d_z: 2 }).build().unwrap();
    let other = FusionSpec::with_hyper(3, 2, Hyper::Mlb { d_z: 2 }).build().unwrap();
    let mut rng = Rng::new(1);
    let v = Tensor::randn(&[1, 3], DType::F64, &mut rng);
    let q = Tensor::randn(&[1, 2], DType::F64, &mut rng);
    let g = Tensor::zeros(&[1, 2], DType::F64);
    let (_, cache) = f.forward(&v, &q).unwrap();
    assert!(matches!(other.backward(&cache, &g), Err(Error::State(_))));
    assert!(f.backward(&cache, &g).is_ok());
    f.params_mut().get_mut("p_v").unwrap();
    assert!(matches!(f.backward(&cache, &g), Err(Error::State(_))));
    let (_, cache) = f.forward(&v, &q).unwrap();
    let wrong = Tensor::zeros(&[1, 3], DType::F64);
    assert!(matches!(f.backward(&cache, &wrong), Err(Error::Dimension(_))));
}

#[test]
fn shape_errors_name_the_problem() {
    let f = FusionSpec::with_hyper(3, 2, Hyper::Mlb { d_z: 2 }).build().unwrap();
    let err = f
        .apply(&Tensor::zeros(&[2, 3], DType::F64), &Tensor::zeros(&[1, 2], DType::F64))
        .unwrap_err();
    assert!(matches!(err, Error::Dimension(_)));
    let err = f
        .apply(&Tensor::zeros(&[2, 4], DType::F64), &Tensor::zeros(&[2, 2], DType::F64))
        .unwrap_err();
    assert!(err.to_string().contains("[2, 4]"), "{err}");
}

#[test]
fn empty_batch_keeps_trailing_shape() {
    for h in [
        Hyper::Linear { inter: 3, d_out: 2 },
        Hyper::Cmlp { hidden: 3, d_out: 2 },
        Hyper::Mcb { d: 8, normalize: true },
        Hyper::Mlb { d_z: 2 },
        Hyper::Mfb { k: 2, d_z: 2 },
        Hyper::Mfh { k: 2, d_z: 2, m: 2 },
        Hyper::Mutan { d_pv: 3, d_pq: 3, d_z: 2, rank: 2 },
        Hyper::Block { d_pv: 4, d_pq: 4, d_z: 4, rank: 2, n: 2 },
    ] {
        let f = FusionSpec::with_hyper(3, 2, h).build().unwrap();
        let (out, cache) = f
            .forward(&Tensor::zeros(&[0, 3], DType::F64), &Tensor::zeros(&[0, 2], DType::F64))
            .unwrap();
        assert_eq!(out.shape(), &[0, h.d_out()], "{h:?}");
        let g = f.backward(&cache, &out).unwrap();
        assert_eq!(g.v.shape(), &[0, 3]);
    }
}

#[test]
fn nan_inputs_propagate() {
    for kind in FusionKind::ALL {
        let spec = FusionSpec::with_hyper(3, 2, small_hyper(kind));
        let f = spec.build().unwrap();
        let mut v = Tensor::zeros(&[1, 3], DType::F64);
        v.set_at(0, f64::NAN);
        let out = f.apply(&v, &Tensor::full(&[1, 2], 1.0, DType::F64)).unwrap();
        assert!(out.has_nan(), "{kind}");
    }
}

fn small_hyper(kind: FusionKind) -> Hyper {
    match kind {
        FusionKind::Linear => Hyper::Linear { inter: 3, d_out: 2 },
        FusionKind::Cmlp => Hyper::Cmlp { hidden: 3, d_out: 2 },
        FusionKind::Mcb => Hyper::Mcb { d: 8, normalize: true },
        FusionKind::Mlb => Hyper::Mlb { d_z: 2 },
        FusionKind::Mfb => Hyper::Mfb { k: 2, d_z: 2 },
        FusionKind::Mfh => Hyper::Mfh { k: 2, d_z: 2, m: 2 },
        FusionKind::Mutan => Hyper::Mutan { d_pv: 3, d_pq: 3, d_z: 2, rank: 2 },
        FusionKind::Block => Hyper::Block { d_pv: 4, d_pq: 4, d_z: 4, rank: 2, n: 2 },
    }
}

#[test]
fn f32_modules_run() {
    for kind in FusionKind::ALL {
        let f = FusionSpec::with_hyper(3, 2, small_hyper(kind)).dtype(DType::F32).build().unwrap();
        let mut rng = Rng::new(1);
        let v = Tensor::randn(&[2, 3], DType::F32, &mut rng);
        let q = Tensor::randn(&[2, 2], DType::F32, &mut rng);
        let (out, cache) = f.forward(&v, &q).unwrap();
        assert_eq!(out.dtype(), DType::F32, "{kind}");
        let g = f.backward(&cache, &out).unwrap();
        assert_eq!(g.v.dtype(), DType::F32, "{kind}");
    }
}

#[test]
fn param_serialization_round_trip() {
    let f = FusionSpec::with_hyper(4, 3, Hyper::Mfh { k: 2, d_z: 3, m: 2 }).seed(5).build().unwrap();
    let mut buf = Vec::new();
    write_params(&mut buf, f.params().iter()).unwrap();
    assert_eq!(&buf[..8], PARAM_MAGIC);
    let back = read_params(buf.as_slice()).unwrap();
    assert_eq!(back.len(), f.params().len());
    for ((name, t), (orig_name, orig)) in back.iter().zip(f.params().iter()) {
        assert_eq!(name, orig_name);
        assert_eq!(t.shape(), orig.shape());
        assert_eq!(t.to_vec(), orig.to_vec());
    }
    assert!(read_params(&buf[..buf.len() - 1]).is_err());
    assert!(read_params(&b"NOTPARAM\0\0\0\0"[..]).is_err());
}
