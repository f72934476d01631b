use egospeed::gradcheck::{finite_difference_gradient, run_suite, SuiteOptions, CASES, DEFAULT_TOLERANCE};
use egospeed::Tensor;

fn opts(cases: &[&str], seeds: u64) -> SuiteOptions {
    SuiteOptions {
        cases: cases.iter().map(|c| c.to_string()).collect(),
        seeds,
        ..SuiteOptions::default()
    }
}

#[test]
fn every_op_passes_on_three_seeds() {
    let ops: Vec<&str> = CASES.iter().copied().filter(|c| !matches!(*c, "threedcma" | "vivit")).collect();
    for r in run_suite(&opts(&ops, 3)).unwrap() {
        assert!(r.passed, "{r:?}");
        assert!(r.checked > 0);
    }
}

#[test]
fn models_pass_on_two_seeds() {
    for r in run_suite(&opts(&["threedcma", "vivit"], 2)).unwrap() {
        assert!(r.passed && r.max_rel_err < DEFAULT_TOLERANCE, "{r:?}");
    }
}

#[test]
fn sign_error_is_caught_everywhere() {
    let o = SuiteOptions {
        inject_sign_error: true,
        ..opts(&["matmul", "conv3d", "attention", "layer_norm"], 1)
    };
    assert!(run_suite(&o).unwrap().iter().all(|r| !r.passed));
}

#[test]
fn finite_differences_of_a_cubic() {
    let x = Tensor::from_vec(&[3], vec![0.5, -1.0, 2.0]).unwrap();
    let g = finite_difference_gradient(
        |t: &Tensor| Ok(Tensor::scalar(t.data().iter().map(|v| v * v * v).sum())),
        &x,
        1e-5,
    )
    .unwrap();
    for (gi, xi) in g.data().iter().zip(x.data()) {
        assert!((gi - 3.0 * xi * xi).abs() < 1e-8);
    }
}
