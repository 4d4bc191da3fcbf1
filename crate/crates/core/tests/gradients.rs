use vqa_fusion::fusion::FusionKind;
use vqa_fusion::gradcheck::{check_spec, small_specs};

#[test]
fn analytic_backward_matches_finite_differences() {
    for kind in FusionKind::ALL {
        for spec in small_specs(kind, 2024) {
            let report = check_spec(&spec, 3, 1e-5).unwrap();
            for (name, err) in &report.entries {
                assert!(*err <= 1e-5, "{kind} {:?}: {name} rel err {err:e}", spec.hyper);
            }
        }
    }
}

#[test]
fn other_seeds_also_pass() {
    for seed in [1u64, 77] {
        for kind in FusionKind::ALL {
            for spec in small_specs(kind, seed) {
                let worst = check_spec(&spec, 2, 1e-5).unwrap().worst();
                assert!(worst <= 1e-5, "{kind} seed {seed} {:?}: {worst:e}", spec.hyper);
            }
        }
    }
}
