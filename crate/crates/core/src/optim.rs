//! RMSProp with momentum and the training loop.
//!
//! ```text
//! ms  ← decay·ms + (1 − decay)·g²
//! mom ← momentum·mom + lr·g / √(ms + ε)
//! p   ← p − mom
//! ```

use std::fmt::Write as _;
use std::time::Instant;

use crate::cell::SequenceModel;
use crate::error::{check_len, EunnError, Result};
use crate::tasks::TaskSource;
use crate::Rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RmsPropConfig {
    pub lr: f64,
    pub decay: f64,
    pub momentum: f64,
    pub epsilon: f64,
}

impl Default for RmsPropConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            decay: 0.9,
            momentum: 0.0,
            epsilon: 1e-8,
        }
    }
}

impl RmsPropConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr >= 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.decay)
            && (0.0..1.0).contains(&self.momentum)
            && self.epsilon > 0.0
            && self.epsilon.is_finite();
        if !ok {
            return Err(EunnError::Config(format!(
                "invalid RMSProp settings: lr={} decay={} momentum={} epsilon={}",
                self.lr, self.decay, self.momentum, self.epsilon
            )));
        }
        Ok(())
    }
}

/// Optimizer state; buffers are created on the first step.
#[derive(Debug, Clone, PartialEq)]
pub struct RmsProp {
    cfg: RmsPropConfig,
    ms: Vec<Vec<f64>>,
    mom: Vec<Vec<f64>>,
}

impl RmsProp {
    pub fn new(cfg: RmsPropConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            ms: Vec::new(),
            mom: Vec::new(),
        })
    }

    pub fn config(&self) -> &RmsPropConfig {
        &self.cfg
    }

    pub fn mean_square(&self) -> &[Vec<f64>] {
        &self.ms
    }

    pub fn momentum_buffer(&self) -> &[Vec<f64>] {
        &self.mom
    }

    /// Restores buffers, e.g. from a checkpoint.
    pub fn set_buffers(&mut self, ms: Vec<Vec<f64>>, mom: Vec<Vec<f64>>) -> Result<()> {
        check_len("optimizer buffers", ms.len(), mom.len())?;
        for (a, b) in ms.iter().zip(&mom) {
            check_len("optimizer buffer", a.len(), b.len())?;
        }
        self.ms = ms;
        self.mom = mom;
        Ok(())
    }

    /// Updates every parameter array in place. Rejects non-finite gradients
    /// before touching any state.
    pub fn step(&mut self, mut params: Vec<&mut [f64]>, grads: &[Vec<f64>]) -> Result<()> {
        check_len("gradient arrays", params.len(), grads.len())?;
        for (k, (p, g)) in params.iter().zip(grads).enumerate() {
            check_len("gradient", p.len(), g.len())?;
            if let Some(i) = g.iter().position(|v| !v.is_finite()) {
                return Err(EunnError::Diverged {
                    iter: 0,
                    detail: format!("non-finite gradient in parameter array {k} at index {i}"),
                });
            }
        }
        if self.ms.is_empty() {
            self.ms = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            self.mom = self.ms.clone();
        }
        check_len("optimizer buffers", self.ms.len(), grads.len())?;
        let RmsPropConfig {
            lr,
            decay,
            momentum,
            epsilon,
        } = self.cfg;
        for (k, g) in grads.iter().enumerate() {
            check_len("optimizer buffer", self.ms[k].len(), g.len())?;
            let p = &mut params[k];
            for i in 0..g.len() {
                let ms = decay * self.ms[k][i] + (1.0 - decay) * g[i] * g[i];
                let mom = momentum * self.mom[k][i] + lr * g[i] / (ms + epsilon).sqrt();
                self.ms[k][i] = ms;
                self.mom[k][i] = mom;
                p[i] -= mom;
            }
        }
        Ok(())
    }
}

/// Rescales `grads` so their joint L2 norm is at most `max_norm`.
pub fn clip_global_norm(grads: &mut [Vec<f64>], max_norm: f64) -> f64 {
    let norm = grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        grads.iter_mut().flatten().for_each(|g| *g *= s);
    }
    norm
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub iters: usize,
    /// Validation every this many iterations and after the last one.
    pub eval_interval: usize,
    pub seed: u64,
    pub optimizer: RmsPropConfig,
    pub clip_norm: Option<f64>,
    /// Record wall-clock time per row. Off by default so that metric streams
    /// are reproducible byte for byte.
    pub wall_clock: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            iters: 1000,
            eval_interval: 100,
            seed: 0,
            optimizer: RmsPropConfig::default(),
            clip_norm: None,
            wall_clock: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.eval_interval == 0 {
            return Err(EunnError::Config("batch_size and eval_interval must be positive".into()));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0 && c.is_finite()) {
                return Err(EunnError::Config(format!("clip_norm must be positive, got {c}")));
            }
        }
        self.optimizer.validate()
    }
}

pub const METRICS_HEADER: &str = "iter,loss,val_metric,wall_ms";

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRecord {
    pub iter: usize,
    pub loss: f64,
    pub val_metric: Option<f64>,
    pub wall_ms: Option<f64>,
    pub diverged: bool,
}

impl MetricRecord {
    /// CSV row without newline. Floats use the shortest round-tripping form.
    pub fn csv_row(&self) -> String {
        let mut s = String::new();
        let _ = write!(s, "{},{},", self.iter, self.loss);
        if self.diverged {
            s.push_str("diverged");
        } else if let Some(v) = self.val_metric {
            let _ = write!(s, "{v}");
        }
        s.push(',');
        if let Some(ms) = self.wall_ms {
            let _ = write!(s, "{ms:.3}");
        }
        s
    }
}

pub fn metrics_csv(records: &[MetricRecord]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrainOutcome {
    Completed,
    /// The observer asked to stop after this iteration.
    Stopped { iter: usize },
    Diverged { iter: usize, detail: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainRun {
    pub records: Vec<MetricRecord>,
    pub outcome: TrainOutcome,
}

impl TrainRun {
    /// `Err(Diverged)` if training diverged.
    pub fn into_result(self) -> Result<Vec<MetricRecord>> {
        match self.outcome {
            TrainOutcome::Diverged { iter, detail } => Err(EunnError::Diverged { iter, detail }),
            _ => Ok(self.records),
        }
    }
}

pub fn train<M: SequenceModel>(config: &TrainConfig, model: &mut M, task: &dyn TaskSource) -> Result<TrainRun> {
    train_with(config, model, task, |_| true)
}

/// Runs the loop, handing each record to `observer` as it is produced; the
/// run stops early when the observer returns `false`. Batches are drawn from
/// stream 1 of `config.seed`.
pub fn train_with<M, F>(config: &TrainConfig, model: &mut M, task: &dyn TaskSource, mut observer: F) -> Result<TrainRun>
where
    M: SequenceModel,
    F: FnMut(&MetricRecord) -> bool,
{
    config.validate()?;
    let mut opt = RmsProp::new(config.optimizer)?;
    let mut rng = Rng::with_stream(config.seed, 1);
    let start = Instant::now();
    let mut records = Vec::new();
    let kind = task.loss_kind();
    let wall = |on: bool| on.then(|| start.elapsed().as_secs_f64() * 1e3);
    for iter in 1..=config.iters {
        let batch = task.train_batch(config.batch_size, &mut rng)?;
        let stepped = model.forward_backward(&batch, kind).and_then(|(loss, mut grads)| {
            if let Some(c) = config.clip_norm {
                clip_global_norm(&mut grads, c);
            }
            opt.step(model.params_mut(), &grads)?;
            Ok(loss)
        });
        let loss = match stepped {
            Ok(l) => l,
            Err(EunnError::Diverged { detail, .. }) => {
                let rec = MetricRecord {
                    iter,
                    loss: f64::NAN,
                    val_metric: None,
                    wall_ms: wall(config.wall_clock),
                    diverged: true,
                };
                observer(&rec);
                records.push(rec);
                return Ok(TrainRun {
                    records,
                    outcome: TrainOutcome::Diverged { iter, detail },
                });
            }
            Err(e) => return Err(e),
        };
        let val_metric = if iter % config.eval_interval == 0 || iter == config.iters {
            Some(task.validate(model)?)
        } else {
            None
        };
        let rec = MetricRecord {
            iter,
            loss,
            val_metric,
            wall_ms: wall(config.wall_clock),
            diverged: false,
        };
        let go_on = observer(&rec);
        records.push(rec);
        if !go_on {
            return Ok(TrainRun {
                records,
                outcome: TrainOutcome::Stopped { iter },
            });
        }
    }
    Ok(TrainRun {
        records,
        outcome: TrainOutcome::Completed,
    })
}
