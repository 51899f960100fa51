//! Reference systems used throughout the tests, the CLI fixtures and the
//! documentation.

use nalgebra::DMatrix;

use crate::model::{DwellLaw, MarkovModel, SemiMarkovModel};
use crate::stabilizer::{Plant, SynthesisProblem};

/// Weibull shape of the failure law in [`controller_failure`].
pub const FAILURE_SHAPE: f64 = 10.0;
/// Weibull scale of the failure law in [`controller_failure`].
pub const FAILURE_SCALE: f64 = 3.0;
/// Mass of the failure law beyond its cut point.
pub const FAILURE_TAIL: f64 = 0.1;

/// Two-mode positive system alternating between a controlled (stable) mode
/// and an open-loop (unstable) mode.
///
/// Mode 1 fails after a truncated Weibull time; mode 2 is repaired after a
/// time uniform on `[a, 3a]`. Resets are the identity.
pub fn controller_failure(a: f64) -> SemiMarkovModel {
    controller_failure_with(a, FAILURE_SHAPE, FAILURE_SCALE, FAILURE_TAIL)
}

pub fn controller_failure_with(a: f64, shape: f64, scale: f64, tail_mass: f64) -> SemiMarkovModel {
    let a1 = DMatrix::from_row_slice(2, 2, &[-2.0, 0.2, 0.1, -2.3]);
    let a2 = DMatrix::from_row_slice(2, 2, &[2.1, 0.9, 0.2, 0.3]);
    let p = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
    SemiMarkovModel::new(vec![a1, a2], p)
        .with_dwell(
            0,
            1,
            DwellLaw::TruncatedWeibull {
                shape,
                scale,
                tail_mass,
            },
        )
        .with_dwell(1, 0, DwellLaw::Uniform { lo: a, hi: 3.0 * a })
}

/// Two-mode plant with scalar input and output; both open-loop modes are
/// Metzler and mode 1 is unstable.
pub fn two_mode_feedback_problem() -> SynthesisProblem {
    SynthesisProblem::new(vec![
        Plant {
            a: DMatrix::from_row_slice(2, 2, &[0.0, 0.2, 0.9, 0.9]),
            b: DMatrix::from_row_slice(2, 1, &[0.6, 0.3]),
            c: DMatrix::from_row_slice(1, 2, &[0.3, 0.1]),
        },
        Plant {
            a: DMatrix::from_row_slice(2, 2, &[0.1, 0.4, 0.6, -0.3]),
            b: DMatrix::from_row_slice(2, 1, &[0.2, 0.8]),
            c: DMatrix::from_row_slice(1, 2, &[-0.8, 1.0]),
        },
    ])
}

/// Published gains and generator for [`two_mode_feedback_problem`] with fast
/// switching.
pub fn fast_switching_design() -> (Vec<DMatrix<f64>>, DMatrix<f64>) {
    (
        vec![
            DMatrix::from_element(1, 1, -3.3333),
            DMatrix::from_element(1, 1, -2.0000),
        ],
        DMatrix::from_row_slice(2, 2, &[-2068.3, 2068.3, 3123.1, -3123.1]),
    )
}

/// Published gains and generator with switching rates capped at 2.
pub fn slow_switching_design() -> (Vec<DMatrix<f64>>, DMatrix<f64>) {
    (
        vec![
            DMatrix::from_element(1, 1, -3.3308),
            DMatrix::from_element(1, 1, -1.9998),
        ],
        DMatrix::from_row_slice(2, 2, &[-1.9997, 1.9997, 1.9817, -1.9817]),
    )
}

/// Closed-loop Markov model for a given design.
pub fn closed_loop(
    problem: &SynthesisProblem,
    design: &(Vec<DMatrix<f64>>, DMatrix<f64>),
) -> MarkovModel {
    MarkovModel::new(problem.closed_loop_modes(&design.0), design.1.clone())
}
