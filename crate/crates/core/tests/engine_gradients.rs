mod common;

use blastoseg::engine::gradcheck::DEFAULT_REL_TOL;
use common::{op_cases, run_op_case, SHAPES};

fn assert_op(name: &str) {
    let case = op_cases().into_iter().find(|c| c.name == name).expect("known op");
    let (check, shapes_passed) = run_op_case(&case, 11).unwrap();
    assert_eq!(
        shapes_passed,
        SHAPES.len(),
        "{name}: max rel error {:e} at {:?}",
        check.max_rel_error,
        check.worst
    );
    assert!(check.passes(DEFAULT_REL_TOL));
}

macro_rules! op_tests {
    ($($test:ident => $name:literal),* $(,)?) => {
        $(#[test] fn $test() { assert_op($name); })*

        #[test]
        fn every_op_has_a_test() {
            let covered = [$($name),*];
            for c in op_cases() {
                assert!(covered.contains(&c.name), "{} has no test", c.name);
            }
        }
    };
}

op_tests! {
    add => "add",
    sub => "sub",
    mul => "mul",
    div => "div",
    affine => "affine",
    ln => "ln",
    clamp => "clamp",
    relu => "relu",
    sigmoid => "sigmoid",
    sum => "sum",
    mean => "mean",
    sum_per_sample => "sum_per_sample",
    concat_channels => "concat_channels",
    conv2d_same => "conv2d_same",
    conv2d_dilated => "conv2d_dilated",
    conv2d_strided_valid => "conv2d_strided_valid",
    conv_transpose2d => "conv_transpose2d",
    maxpool2d => "maxpool2d",
    batch_norm2d_training => "batch_norm2d_training",
    batch_norm2d_inference => "batch_norm2d_inference",
    dropout => "dropout",
    bce_jaccard_loss => "bce_jaccard_loss",
    bce_jaccard_loss_on_logits => "bce_jaccard_loss_on_logits",
}

/// Near saturation the loss still agrees with finite differences once the
/// step is small enough: the gap shrinks as h², so it is the reference's
/// truncation error and not a gradient defect.
#[test]
fn loss_gap_near_saturation_is_quadratic_in_step() {
    use blastoseg::engine::gradcheck::check_tape_gradients;
    use blastoseg::engine::Tensor;
    use blastoseg::train::loss_bce_jaccard;

    let mut rng = blastoseg::seeded_rng(2);
    let p = common::uniform(&[1, 1, 6, 6], 0.02, 0.08, &mut rng);
    let t = common::binary(&[1, 1, 6, 6], &mut rng);
    let gap = |h: f64| {
        let targets: Tensor<f64> = t.clone();
        check_tape_gradients(std::slice::from_ref(&p), h, 1e-4, 1e-6, move |tape, v| {
            let c = tape.constant(targets.clone());
            loss_bce_jaccard(tape, v[0], c)
        })
        .unwrap()
        .max_rel_error
    };
    let (coarse, fine) = (gap(1e-3), gap(1e-4));
    assert!(coarse > 1e-4, "expected a visible truncation gap, got {coarse:e}");
    assert!((coarse / fine - 100.0).abs() < 5.0, "ratio {}", coarse / fine);
    assert!(fine < 1e-4);
}
