//! Copying memory. Alphabet: data symbols `0..n`, blank `n`, start-recall `n+1`.
//!
//! ```text
//! input   a1 .. aM  _ (T−1 times)  :  _ (M times)
//! target  _ (T+M times)               a1 .. aM
//! ```

use super::TaskSource;
use crate::cell::{EvalStats, LossKind, SequenceBatch, SequenceModel, Targets};
use crate::error::{EunnError, Result};
use crate::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CopyTaskConfig {
    pub n_symbols: usize,
    pub m_len: usize,
    pub t_delay: usize,
}

impl CopyTaskConfig {
    pub fn new(n_symbols: usize, m_len: usize, t_delay: usize) -> Result<Self> {
        let cfg = Self {
            n_symbols,
            m_len,
            t_delay,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_symbols < 2 || self.m_len < 1 || self.t_delay < 1 {
            return Err(EunnError::Config(format!(
                "copy task needs n >= 2, M >= 1, T >= 1 (got n={}, M={}, T={})",
                self.n_symbols, self.m_len, self.t_delay
            )));
        }
        Ok(())
    }

    pub fn seq_len(&self) -> usize {
        self.t_delay + 2 * self.m_len
    }

    pub fn blank(&self) -> usize {
        self.n_symbols
    }

    pub fn recall(&self) -> usize {
        self.n_symbols + 1
    }

    /// One-hot input width.
    pub fn n_in(&self) -> usize {
        self.n_symbols + 2
    }

    /// Output classes: data symbols and blank.
    pub fn n_out(&self) -> usize {
        self.n_symbols + 1
    }

    /// Input and target symbol sequences for one sample with the given data.
    pub fn layout(&self, data: &[usize]) -> (Vec<usize>, Vec<usize>) {
        let (m, t) = (self.m_len, self.t_delay);
        let mut input = Vec::with_capacity(self.seq_len());
        input.extend_from_slice(data);
        input.extend(std::iter::repeat(self.blank()).take(t - 1));
        input.push(self.recall());
        input.extend(std::iter::repeat(self.blank()).take(m));
        let mut target = vec![self.blank(); t + m];
        target.extend_from_slice(data);
        (input, target)
    }
}

/// Cross entropy in nats of emitting blanks and then uniform guesses:
/// `M ln n / (T + 2M)`.
pub fn memoryless_baseline(n_symbols: usize, m_len: usize, t_delay: usize) -> f64 {
    if n_symbols <= 1 {
        return 0.0;
    }
    m_len as f64 * (n_symbols as f64).ln() / (t_delay + 2 * m_len) as f64
}

/// Batch of `batch` independent samples; the loss mask covers every step.
pub fn copy_batch(cfg: &CopyTaskConfig, batch: usize, rng: &mut Rng) -> Result<SequenceBatch> {
    cfg.validate()?;
    let (len, width) = (cfg.seq_len(), cfg.n_in());
    let mut inputs = vec![0.0; len * batch * width];
    let mut targets = vec![0; len * batch];
    for b in 0..batch {
        let data: Vec<usize> = (0..cfg.m_len).map(|_| rng.below(cfg.n_symbols)).collect();
        let (inp, tgt) = cfg.layout(&data);
        for t in 0..len {
            inputs[(t * batch + b) * width + inp[t]] = 1.0;
            targets[t * batch + b] = tgt[t];
        }
    }
    SequenceBatch::new(len, batch, width, inputs, Targets::Classes(targets), None)
}

/// Copy task with a fixed validation batch.
#[derive(Debug, Clone)]
pub struct CopyTask {
    cfg: CopyTaskConfig,
    validation: SequenceBatch,
}

impl CopyTask {
    /// Draws the validation batch from `rng`.
    pub fn new(cfg: CopyTaskConfig, val_size: usize, rng: &mut Rng) -> Result<Self> {
        let validation = copy_batch(&cfg, val_size, rng)?;
        Ok(Self { cfg, validation })
    }

    pub fn config(&self) -> &CopyTaskConfig {
        &self.cfg
    }

    pub fn baseline(&self) -> f64 {
        memoryless_baseline(self.cfg.n_symbols, self.cfg.m_len, self.cfg.t_delay)
    }

    pub fn evaluate(&self, model: &dyn SequenceModel) -> Result<EvalStats> {
        model.evaluate(&self.validation, LossKind::CrossEntropy)
    }
}

impl TaskSource for CopyTask {
    fn n_in(&self) -> usize {
        self.cfg.n_in()
    }

    fn n_out(&self) -> usize {
        self.cfg.n_out()
    }

    fn loss_kind(&self) -> LossKind {
        LossKind::CrossEntropy
    }

    fn train_batch(&self, batch: usize, rng: &mut Rng) -> Result<SequenceBatch> {
        copy_batch(&self.cfg, batch, rng)
    }

    fn val_metric_name(&self) -> &'static str {
        "val_cross_entropy"
    }

    fn validate(&self, model: &dyn SequenceModel) -> Result<f64> {
        Ok(self.evaluate(model)?.loss)
    }
}
