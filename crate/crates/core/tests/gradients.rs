mod common;

use common::*;
use gvit::model::GViTModel;

#[test]
fn every_op_matches_finite_differences() {
    for (i, case) in op_cases().iter().enumerate() {
        let err = run_case(case, 100 + i as u64).unwrap();
        assert!(err <= OP_TOLERANCE, "{}: relative error {err:e}", case.name);
    }
}

#[test]
fn reduced_model_matches_finite_differences() {
    let model = GViTModel::new(reduced_config()).unwrap();
    let err = check_model_gradients(&model, &random_graph(10, 4)).unwrap();
    assert!(err <= MODEL_TOLERANCE, "relative error {err:e}");
}

#[test]
fn reduced_model_with_short_graph() {
    // fewer nodes than pooled slots exercises row replication
    let model = GViTModel::new(reduced_config()).unwrap();
    let err = check_model_gradients(&model, &random_graph(3, 5)).unwrap();
    assert!(err <= MODEL_TOLERANCE, "relative error {err:e}");
}
