//! Fixtures shared by the criterion benches.

use ddc_core::harness::{BenchModel, ModelFamily};
use ddc_core::{apply_lambda, ev_from_w, EVStack, ModelSpec, WVector};

/// VFI iterations applied to the zero vector before timing a Newton step.
pub const WARM_START_ITERS: usize = 5;

pub fn model(family: ModelFamily, n_states: usize) -> ModelSpec {
    BenchModel::default_for(family)
        .build(n_states)
        .expect("bench sizes are valid")
}

/// The same warm start for both formulations: a few Lambda iterations, then
/// `EV_j = F(j) W`.
pub fn warm_start(spec: &ModelSpec) -> (WVector, EVStack) {
    let mut w = WVector::zeros(spec.n_states());
    for _ in 0..WARM_START_ITERS {
        w = apply_lambda(spec, &w).expect("dimensions match");
    }
    let ev = ev_from_w(spec, &w).expect("dimensions match");
    (w, ev)
}
