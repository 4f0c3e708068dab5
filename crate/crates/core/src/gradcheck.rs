//! Finite-difference verification of analytic gradients.

use alloc::vec::Vec;

use crate::error::Result;
use crate::math;
use crate::optim::{self, Param};
use crate::tensor::{Tape, TensorId};
use crate::Real;

/// Default central-difference step.
pub const DEFAULT_STEP: Real = 1e-5 as Real;

/// Outcome of a gradient check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    /// Max over all coordinates of `|a - n| / max(1e-8, |a| + |n|)`.
    pub max_rel_error: Real,
    /// Index of the parameter holding the worst coordinate.
    pub worst_param: usize,
    /// Flat index of the worst coordinate within that parameter.
    pub worst_coord: usize,
}

/// Compare the analytic gradient of a deterministic scalar function
/// against central finite differences, coordinate by coordinate.
///
/// `f` builds the loss on a fresh tape from the bound parameter leaves;
/// it must be deterministic in the parameter values.
pub fn finite_diff_check<F>(params: &[Param], step: Real, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[TensorId]) -> Result<TensorId>,
{
    let eval = |ps: &[Param]| -> Result<Real> {
        let mut tape = Tape::new();
        let ids = optim::bind(&mut tape, ps)?;
        let loss = f(&mut tape, &ids)?;
        Ok(tape.value(loss)[0])
    };

    // analytic gradients in one reverse sweep
    let mut tape = Tape::new();
    let ids = optim::bind(&mut tape, params)?;
    let loss = f(&mut tape, &ids)?;
    tape.backward(loss)?;
    let analytic: Vec<Vec<Real>> = ids
        .iter()
        .zip(params)
        .map(|(id, p)| {
            tape.grad(*id)
                .map(<[Real]>::to_vec)
                .unwrap_or_else(|| alloc::vec![0.0; p.data.len()])
        })
        .collect();

    let mut work: Vec<Param> = params.to_vec();
    let mut report = GradCheckReport { max_rel_error: 0.0, worst_param: 0, worst_coord: 0 };
    for pi in 0..params.len() {
        for ci in 0..params[pi].data.len() {
            let orig = work[pi].data[ci];
            work[pi].data[ci] = orig + step;
            let up = eval(&work)?;
            work[pi].data[ci] = orig - step;
            let down = eval(&work)?;
            work[pi].data[ci] = orig;
            let numeric = (up - down) / (2.0 * step);
            let a = analytic[pi][ci];
            let denom = Real::max(1e-8 as Real, math::abs(a) + math::abs(numeric));
            let rel = math::abs(a - numeric) / denom;
            if rel > report.max_rel_error {
                report = GradCheckReport { max_rel_error: rel, worst_param: pi, worst_coord: ci };
            }
        }
    }
    Ok(report)
}
