mod support;

use vqa_fusion::fusion::{Fusion, FusionSpec, Hyper, Mcb, SketchTable};
use vqa_fusion::Tensor;

#[test]
fn spectral_path_matches_outer_product_sketch() {
    for (d, width) in [(6, 8), (10, 16)] {
        let gap = support::mcb_oracle_gap(d, width, 100, 7);
        assert!(gap <= 1e-9, "d = {d}, D = {width}: {gap:e}");
    }
}

#[test]
fn odd_sketch_width_uses_the_same_identity() {
    // 13 is prime and not a small radix product in every path; 97 forces Bluestein.
    for width in [13, 97] {
        let gap = support::mcb_oracle_gap(5, width, 10, 3);
        assert!(gap <= 1e-9, "D = {width}: {gap:e}");
    }
}

#[test]
fn hand_built_tables() {
    let spec = FusionSpec::with_hyper(2, 2, Hyper::Mcb { d: 4, normalize: false });
    let sv = SketchTable::from_parts(vec![0, 2], vec![1.0, -1.0], 4).unwrap();
    let sq = SketchTable::from_parts(vec![1, 1], vec![1.0, 1.0], 4).unwrap();
    let mcb = Mcb::with_sketches(&spec, sv, sq).unwrap();
    let v = Tensor::new(&[1, 2], vec![2.0, 5.0]).unwrap();
    let q = Tensor::new(&[1, 2], vec![1.0, 3.0]).unwrap();
    // v' = [2, 0, -5, 0], q' = [0, 4, 0, 0]: circular shift by one, times 4.
    let out = mcb.apply(&v, &q).unwrap().to_vec();
    let want = [0.0, 8.0, 0.0, -20.0];
    for (a, b) in out.iter().zip(want) {
        assert!((a - b).abs() < 1e-12, "{out:?}");
    }
    assert_eq!(support::sketch_outer_product(&mcb, &v.to_vec(), &q.to_vec()), want.to_vec());
}
