//! Finite-difference checks on 20 random fixtures per primitive.

mod common;

use common::grad::{end_to_end_multitask_loss, primitives, TOL_F32, TOL_F64};

#[test]
fn every_primitive() {
    let mut failures = Vec::new();
    for (name, case) in primitives() {
        let [e64, e32] = case();
        if e64 > TOL_F64 || e32 > TOL_F32 {
            failures.push(format!("{name}: f64 {e64:e}, f32 {e32:e}"));
        }
    }
    assert!(failures.is_empty(), "{failures:#?}");
}

#[test]
fn end_to_end_loss() {
    let [e64, e32] = end_to_end_multitask_loss();
    assert!(e64 <= TOL_F64, "f64 {e64:e}");
    assert!(e32 <= TOL_F32, "f32 {e32:e}");
}
