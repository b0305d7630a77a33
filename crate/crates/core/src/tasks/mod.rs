//! Training tasks: the copying-memory generator and pixel-permuted MNIST.

mod copy;
mod mnist;

pub use copy::{copy_batch, memoryless_baseline, CopyTask, CopyTaskConfig};
pub use mnist::{mnist_load, read_idx_images, read_idx_labels, IdxImages, MnistConfig, MnistData, MnistSplit};

use crate::cell::{LossKind, SequenceBatch, SequenceModel};
use crate::error::Result;
use crate::Rng;

/// A source of training batches plus a fixed validation metric.
pub trait TaskSource {
    fn n_in(&self) -> usize;

    fn n_out(&self) -> usize;

    fn loss_kind(&self) -> LossKind;

    fn train_batch(&self, batch: usize, rng: &mut Rng) -> Result<SequenceBatch>;

    /// Name of the value reported by [`TaskSource::validate`].
    fn val_metric_name(&self) -> &'static str;

    fn validate(&self, model: &dyn SequenceModel) -> Result<f64>;
}
