//! Named plant fixtures and the two worked examples built on them.
//!
//! The batch reactor is the classic linearized four-state, two-input
//! benchmark from the networked-control literature.
//! Only its continuous-time matrices are stored; discrete models come from
//! [`zoh_discretize`].

use super::actuator::ActuatorParams;
use super::token_bucket::{TokenBucketParams, TokenBucketState};
use crate::error::{Error, Result};
use crate::numerics::{block_diag, zoh_discretize, DenseMatrix, Vector};
use crate::polytope::Polytope;
use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

pub const BATCH_REACTOR: &str = "batch_reactor";
pub const TWO_BATCH_REACTORS: &str = "two_batch_reactors";
pub const SAMPLING_PERIOD: f64 = 0.1;

#[rustfmt::skip]
const REACTOR_A: [f64; 16] = [
     1.38,   -0.2077,  6.715, -5.676,
    -0.5814, -4.29,    0.0,    0.675,
     1.067,   4.273,  -6.654,  5.893,
     0.048,   4.273,   1.343, -2.104,
];

#[rustfmt::skip]
const REACTOR_B: [f64; 8] = [
    0.0,    0.0,
    5.679,  0.0,
    1.136, -3.146,
    1.136,  0.0,
];

/// Continuous-time `(A_c, B_c)` of one batch reactor.
pub fn batch_reactor_continuous() -> (DenseMatrix, DenseMatrix) {
    (DMatrix::from_row_slice(4, 4, &REACTOR_A), DMatrix::from_row_slice(4, 2, &REACTOR_B))
}

/// Discrete `(A, B)` of one reactor with sampling period `h`.
pub fn batch_reactor(h: f64) -> Result<(DenseMatrix, DenseMatrix)> {
    let (ac, bc) = batch_reactor_continuous();
    zoh_discretize(&ac, &bc, h)
}

/// Two decoupled reactors: 8 states, 4 inputs.
pub fn two_batch_reactors(h: f64) -> Result<(DenseMatrix, DenseMatrix)> {
    let (a, b) = batch_reactor(h)?;
    Ok((block_diag(&[&a, &a]), block_diag(&[&b, &b])))
}

/// Looks up a discrete plant fixture by name.
pub fn plant_fixture(name: &str, h: f64) -> Result<(DenseMatrix, DenseMatrix)> {
    match name {
        BATCH_REACTOR => batch_reactor(h),
        TWO_BATCH_REACTORS => two_batch_reactors(h),
        other => Err(Error::Config(format!(
            "unknown plant fixture '{other}' (known: {BATCH_REACTOR}, {TWO_BATCH_REACTORS})"
        ))),
    }
}

/// Batch reactor over a token bucket with `g = 1`, `c = 8`, `b = 22`,
/// `Q = 10I`, `R = I`, `|x_p| ≤ 2`, `|u| ≤ 3`.
pub fn token_bucket_example() -> TokenBucketParams {
    let (a, b) = batch_reactor(SAMPLING_PERIOD).expect("fixture discretizes");
    TokenBucketParams::new(
        a,
        b,
        DMatrix::identity(4, 4) * 10.0,
        DMatrix::identity(2, 2),
        1,
        8,
        22,
        Polytope::symmetric_box(&[2.0; 4]).expect("valid box"),
        Polytope::symmetric_box(&[3.0; 2]).expect("valid box"),
    )
    .expect("fixture parameters are valid")
}

/// `x_p = [1 0 1 0]`, `u_s = 0`, full bucket.
pub fn token_bucket_initial_state() -> TokenBucketState {
    TokenBucketState::new(DVector::from_row_slice(&[1.0, 0.0, 1.0, 0.0]), DVector::zeros(2), 22)
}

/// Two reactors, four single-input actuators served round robin,
/// `Q = diag(I, 10I)`, `R = diag(10, 0.1, 1, 1)`.
pub fn actuator_example() -> ActuatorParams {
    let (a, b) = two_batch_reactors(SAMPLING_PERIOD).expect("fixture discretizes");
    let mut qd = vec![1.0; 4];
    qd.extend([10.0; 4]);
    ActuatorParams::new(
        a,
        b,
        DMatrix::from_diagonal(&DVector::from_vec(qd)),
        DMatrix::from_diagonal(&DVector::from_row_slice(&[10.0, 0.1, 1.0, 1.0])),
        vec![1; 4],
        vec![0, 1, 2, 3],
    )
    .expect("fixture parameters are valid")
}

pub fn actuator_initial_state() -> Vector {
    DVector::from_row_slice(&[1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0])
}

/// Reference closed-loop trajectory of the actuator example (`N = 3`).
#[derive(Debug, Clone, Deserialize)]
pub struct ReferenceTrajectory {
    pub description: String,
    /// `states[k]` for `k = 0..29`.
    pub states: Vec<Vec<f64>>,
    pub inputs: Vec<Vec<f64>>,
}

pub fn actuator_reference_trajectory() -> ReferenceTrajectory {
    serde_json::from_str(include_str!("../../fixtures/actuator_reference_trajectory.json"))
        .expect("embedded fixture parses")
}
