use serde::{Deserialize, Serialize};

use super::{loss_on_tape, LossKind, TrainError};
use crate::backbone::Model;
use crate::corpus::TargetedSequence;
use crate::numerics::{finite_difference_check, NumericsError, Tape, DEFAULT_FD_EPS};

pub const GRADIENT_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub name: String,
    pub max_rel_error: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientReport {
    pub kind: LossKind,
    pub groups: Vec<GroupReport>,
}

impl GradientReport {
    pub fn max_error(&self) -> f64 {
        self.groups.iter().map(|g| g.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_error() < GRADIENT_TOLERANCE
    }

    pub fn group(&self, name: &str) -> Option<&GroupReport> {
        self.groups.iter().find(|g| g.name == name)
    }
}

/// Finite-difference check of the `kind` loss gradient for every parameter
/// of a tiny 64-bit model.
pub fn gradient_check(
    model: &Model<f64>,
    batch: &[TargetedSequence],
    kind: LossKind,
    window: usize,
) -> Result<GradientReport, TrainError> {
    let refs: Vec<&TargetedSequence> = batch.iter().collect();

    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, true);
    let l = loss_on_tape(model, &mut tape, &bound, &refs, kind, window, None)?;
    tape.backward(l.loss)?;
    let norms: Vec<f64> = bound
        .vars()
        .iter()
        .map(|&v| {
            let g = tape.grad(v).expect("parameters require grad");
            g.data().iter().map(|x| x * x).sum::<f64>().sqrt()
        })
        .collect();
    drop(tape);

    let mut groups = Vec::with_capacity(norms.len());
    for (i, name) in model.params().names().iter().enumerate() {
        let f = |tape: &mut Tape<f64>, x| {
            let bound = model.bind_with(tape, i, x);
            match loss_on_tape(model, tape, &bound, &refs, kind, window, None) {
                Ok(l) => Ok(l.loss),
                Err(TrainError::Numerics(e)) => Err(e),
                // Unreachable: the same loss already evaluated successfully above.
                Err(_) => Err(NumericsError::Empty("loss evaluation")),
            }
        };
        let err = finite_difference_check(f, model.params().get(i), DEFAULT_FD_EPS)?;
        groups.push(GroupReport {
            name: name.clone(),
            max_rel_error: err,
            grad_norm: norms[i],
        });
    }
    Ok(GradientReport { kind, groups })
}
