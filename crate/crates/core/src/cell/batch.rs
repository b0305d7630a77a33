use crate::error::{check_len, EunnError, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    /// One class index per `(t, b)` position, `[T][B]` flattened.
    Classes(Vec<usize>),
    /// `[T][B][width]` real targets, flattened.
    Values { data: Vec<f64>, width: usize },
}

/// Time-major batch of sequences. `inputs` is `[T][B][n_in]` flattened.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceBatch {
    t_len: usize,
    batch: usize,
    n_in: usize,
    inputs: Vec<f64>,
    targets: Targets,
    mask: Option<Vec<bool>>,
}

impl SequenceBatch {
    pub fn new(
        t_len: usize,
        batch: usize,
        n_in: usize,
        inputs: Vec<f64>,
        targets: Targets,
        mask: Option<Vec<bool>>,
    ) -> Result<Self> {
        let positions = t_len * batch;
        check_len("batch inputs", positions * n_in, inputs.len())?;
        match &targets {
            Targets::Classes(c) => check_len("class targets", positions, c.len())?,
            Targets::Values { data, width } => check_len("value targets", positions * width, data.len())?,
        }
        if let Some(m) = &mask {
            check_len("loss mask", positions, m.len())?;
        }
        if inputs.iter().any(|v| !v.is_finite()) {
            return Err(EunnError::Validation("batch inputs contain non-finite values".into()));
        }
        Ok(Self {
            t_len,
            batch,
            n_in,
            inputs,
            targets,
            mask,
        })
    }

    pub fn t_len(&self) -> usize {
        self.t_len
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn n_in(&self) -> usize {
        self.n_in
    }

    pub fn input(&self, t: usize, b: usize) -> &[f64] {
        let start = (t * self.batch + b) * self.n_in;
        &self.inputs[start..start + self.n_in]
    }

    pub fn targets(&self) -> &Targets {
        &self.targets
    }

    pub fn mask(&self) -> Option<&[bool]> {
        self.mask.as_deref()
    }

    pub fn position(&self, t: usize, b: usize) -> usize {
        t * self.batch + b
    }

    pub fn is_scored(&self, t: usize, b: usize) -> bool {
        self.mask.as_ref().is_none_or(|m| m[self.position(t, b)])
    }

    pub fn scored_positions(&self) -> usize {
        self.mask
            .as_ref()
            .map_or(self.t_len * self.batch, |m| m.iter().filter(|v| **v).count())
    }

    pub fn class_target(&self, t: usize, b: usize) -> usize {
        match &self.targets {
            Targets::Classes(c) => c[self.position(t, b)],
            Targets::Values { .. } => panic!("batch has real-valued targets"),
        }
    }

    pub fn value_target(&self, t: usize, b: usize) -> &[f64] {
        match &self.targets {
            Targets::Values { data, width } => {
                let start = self.position(t, b) * width;
                &data[start..start + width]
            }
            Targets::Classes(_) => panic!("batch has class targets"),
        }
    }

    /// Checks that class targets fit an output head of `n_out` classes.
    pub fn check_output_width(&self, n_out: usize) -> Result<()> {
        match &self.targets {
            Targets::Classes(c) => {
                if let Some(bad) = c.iter().find(|&&t| t >= n_out) {
                    return Err(EunnError::dim(format!("class target {bad} outside {n_out} outputs")));
                }
            }
            Targets::Values { width, .. } => check_len("target width", n_out, *width)?,
        }
        Ok(())
    }
}
