//! Recurrent cells, nonlinearity and losses.

mod batch;
mod eurnn;
mod loss;
mod modrelu;
mod vanilla;

pub use batch::{SequenceBatch, Targets};
pub use eurnn::{CellGradients, EurnnCell};
pub use loss::{cross_entropy_sequence, mse_sequence, LossKind};
pub use modrelu::{modrelu, modrelu_backward};
pub use vanilla::{VanillaCell, VanillaGradients};

use crate::error::{EunnError, Result};

/// Loss and accuracy over the scored positions of a batch. Accuracy is only
/// meaningful for class targets and is 0 otherwise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalStats {
    pub loss: f64,
    pub accuracy: f64,
}

/// What the training loop needs from a model.
pub trait SequenceModel: Sync {
    /// Mean loss over scored positions and its gradient, one array per
    /// parameter in [`SequenceModel::params`] order.
    fn forward_backward(&self, batch: &SequenceBatch, loss: LossKind) -> Result<(f64, Vec<Vec<f64>>)>;

    fn evaluate(&self, batch: &SequenceBatch, loss: LossKind) -> Result<EvalStats>;

    fn param_names(&self) -> Vec<String>;

    fn params(&self) -> Vec<&[f64]>;

    fn params_mut(&mut self) -> Vec<&mut [f64]>;
}

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Eurnn(EurnnCell),
    Vanilla(VanillaCell),
}

impl SequenceModel for Model {
    fn forward_backward(&self, batch: &SequenceBatch, loss: LossKind) -> Result<(f64, Vec<Vec<f64>>)> {
        match self {
            Model::Eurnn(c) => c.forward_backward(batch, loss),
            Model::Vanilla(c) => c.forward_backward(batch, loss),
        }
    }

    fn evaluate(&self, batch: &SequenceBatch, loss: LossKind) -> Result<EvalStats> {
        match self {
            Model::Eurnn(c) => c.evaluate(batch, loss),
            Model::Vanilla(c) => c.evaluate(batch, loss),
        }
    }

    fn param_names(&self) -> Vec<String> {
        match self {
            Model::Eurnn(c) => c.param_names(),
            Model::Vanilla(c) => c.param_names(),
        }
    }

    fn params(&self) -> Vec<&[f64]> {
        match self {
            Model::Eurnn(c) => c.params(),
            Model::Vanilla(c) => c.params(),
        }
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            Model::Eurnn(c) => c.params_mut(),
            Model::Vanilla(c) => c.params_mut(),
        }
    }
}

/// Loss at one scored position; writes `scale · dLoss/dOutput` into `grad`.
pub(crate) fn position_loss(
    batch: &SequenceBatch,
    t: usize,
    b: usize,
    out: &[f64],
    kind: LossKind,
    scale: f64,
    grad: Option<&mut [f64]>,
) -> Result<f64> {
    match (kind, batch.targets()) {
        (LossKind::CrossEntropy, Targets::Classes(_)) => {
            Ok(loss::softmax_xent(out, batch.class_target(t, b), scale, grad))
        }
        (LossKind::Mse, Targets::Values { .. }) => {
            Ok(loss::squared_error(out, batch.value_target(t, b), scale, grad))
        }
        (kind, _) => Err(EunnError::Config(format!(
            "loss {kind} does not match the batch's target type"
        ))),
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (k, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = k;
        }
    }
    best
}

pub(crate) fn diverged(loss: f64) -> Result<f64> {
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(EunnError::Diverged {
            iter: 0,
            detail: format!("loss is {loss}"),
        })
    }
}
