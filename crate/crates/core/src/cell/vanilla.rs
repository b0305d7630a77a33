//! Non-unitary baseline: `h_t = tanh(U x_t + W h_{t−1} + a)`, `y_t = V h_t + c`,
//! with a dense real `W`. Used to show gradient decay and growth.

use nalgebra::DMatrix;
use rayon::prelude::*;

use super::{argmax, diverged, position_loss, EvalStats, LossKind, SequenceBatch, SequenceModel};
use crate::error::{check_len, EunnError, Result};
use crate::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct VanillaCell {
    n_in: usize,
    n_hidden: usize,
    n_out: usize,
    /// `[n_hidden][n_in]`
    u: Vec<f64>,
    /// `[n_hidden][n_hidden]`
    w: Vec<f64>,
    a: Vec<f64>,
    /// `[n_out][n_hidden]`
    v: Vec<f64>,
    c: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VanillaGradients {
    pub u: Vec<f64>,
    pub w: Vec<f64>,
    pub a: Vec<f64>,
    pub v: Vec<f64>,
    pub c: Vec<f64>,
}

impl VanillaGradients {
    fn zeros_like(cell: &VanillaCell) -> Self {
        Self {
            u: vec![0.0; cell.u.len()],
            w: vec![0.0; cell.w.len()],
            a: vec![0.0; cell.a.len()],
            v: vec![0.0; cell.v.len()],
            c: vec![0.0; cell.c.len()],
        }
    }

    fn accumulate(&mut self, o: &VanillaGradients) {
        for (dst, src) in [
            (&mut self.u, &o.u),
            (&mut self.w, &o.w),
            (&mut self.a, &o.a),
            (&mut self.v, &o.v),
            (&mut self.c, &o.c),
        ] {
            for (x, y) in dst.iter_mut().zip(src) {
                *x += y;
            }
        }
    }

    pub fn flatten(self) -> Vec<Vec<f64>> {
        vec![self.u, self.w, self.a, self.v, self.c]
    }
}

/// Haar-random real orthogonal matrix scaled by `radius`, row-major.
fn scaled_orthogonal(n: usize, radius: f64, rng: &mut Rng) -> Vec<f64> {
    let g = DMatrix::<f64>::from_fn(n, n, |_, _| rng.normal());
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            for i in 0..n {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            out[i * n + j] = radius * q[(i, j)];
        }
    }
    out
}

impl VanillaCell {
    /// `W` is a scaled random orthogonal matrix, so every eigenvalue has
    /// modulus `spectral_radius`. `U`, `V` uniform in `±1/√n_hidden`.
    pub fn new(n_in: usize, n_hidden: usize, n_out: usize, spectral_radius: f64, rng: &mut Rng) -> Result<Self> {
        if n_in == 0 || n_hidden == 0 || n_out == 0 {
            return Err(EunnError::Config("vanilla cell dimensions must be positive".into()));
        }
        let s = 1.0 / (n_hidden as f64).sqrt();
        let w = scaled_orthogonal(n_hidden, spectral_radius, rng);
        Ok(Self {
            n_in,
            n_hidden,
            n_out,
            u: rng.uniform_vec(n_hidden * n_in, -s, s),
            w,
            a: vec![0.0; n_hidden],
            v: rng.uniform_vec(n_out * n_hidden, -s, s),
            c: vec![0.0; n_out],
        })
    }

    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        n_in: usize,
        n_hidden: usize,
        n_out: usize,
        u: Vec<f64>,
        w: Vec<f64>,
        a: Vec<f64>,
        v: Vec<f64>,
        c: Vec<f64>,
    ) -> Result<Self> {
        check_len("u", n_hidden * n_in, u.len())?;
        check_len("w", n_hidden * n_hidden, w.len())?;
        check_len("hidden bias", n_hidden, a.len())?;
        check_len("v", n_out * n_hidden, v.len())?;
        check_len("c", n_out, c.len())?;
        Ok(Self {
            n_in,
            n_hidden,
            n_out,
            u,
            w,
            a,
            v,
            c,
        })
    }

    pub fn n_in(&self) -> usize {
        self.n_in
    }

    pub fn n_hidden(&self) -> usize {
        self.n_hidden
    }

    pub fn n_out(&self) -> usize {
        self.n_out
    }

    pub fn w_mut(&mut self) -> &mut [f64] {
        &mut self.w
    }

    pub fn cell_forward(&self, x: &[f64], h_prev: &[f64]) -> Result<Vec<f64>> {
        check_len("cell input", self.n_in, x.len())?;
        check_len("hidden state", self.n_hidden, h_prev.len())?;
        let (n, m) = (self.n_hidden, self.n_in);
        Ok((0..n)
            .map(|r| {
                let mut acc = self.a[r];
                for (k, hk) in h_prev.iter().enumerate() {
                    acc += self.w[r * n + k] * hk;
                }
                for (k, xk) in x.iter().enumerate() {
                    acc += self.u[r * m + k] * xk;
                }
                acc.tanh()
            })
            .collect())
    }

    pub fn output_head(&self, h: &[f64]) -> Vec<f64> {
        let n = self.n_hidden;
        (0..self.n_out)
            .map(|o| self.c[o] + (0..n).map(|k| self.v[o * n + k] * h[k]).sum::<f64>())
            .collect()
    }

    /// `dh_prev = Wᵀ (dh ⊙ (1 − h²))`; also returns the pre-activation cotangent.
    fn step_back(&self, h: &[f64], dh: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = self.n_hidden;
        let da: Vec<f64> = h.iter().zip(dh).map(|(h, g)| g * (1.0 - h * h)).collect();
        let mut prev = vec![0.0; n];
        for (r, g) in da.iter().enumerate() {
            for k in 0..n {
                prev[k] += self.w[r * n + k] * g;
            }
        }
        (prev, da)
    }

    fn sample_gradient(
        &self,
        batch: &SequenceBatch,
        b: usize,
        kind: LossKind,
        scale: f64,
    ) -> Result<(f64, VanillaGradients)> {
        let (n, m) = (self.n_hidden, self.n_in);
        let mut hs: Vec<Vec<f64>> = Vec::with_capacity(batch.t_len() + 1);
        hs.push(vec![0.0; n]);
        for t in 0..batch.t_len() {
            let h = self.cell_forward(batch.input(t, b), &hs[t])?;
            hs.push(h);
        }
        let mut g = VanillaGradients::zeros_like(self);
        let mut loss = 0.0;
        let mut dlogits = vec![0.0; self.n_out];
        let mut dh_next = vec![0.0; n];
        for t in (0..batch.t_len()).rev() {
            let h = &hs[t + 1];
            let mut dh = dh_next;
            if batch.is_scored(t, b) {
                let y = self.output_head(h);
                loss += position_loss(batch, t, b, &y, kind, scale, Some(&mut dlogits))?;
                for (o, &gy) in dlogits.iter().enumerate() {
                    g.c[o] += gy;
                    for k in 0..n {
                        g.v[o * n + k] += gy * h[k];
                        dh[k] += gy * self.v[o * n + k];
                    }
                }
            }
            let (prev, da) = self.step_back(h, &dh);
            let x = batch.input(t, b);
            for (r, &ga) in da.iter().enumerate() {
                g.a[r] += ga;
                for k in 0..n {
                    g.w[r * n + k] += ga * hs[t][k];
                }
                for k in 0..m {
                    g.u[r * m + k] += ga * x[k];
                }
            }
            dh_next = prev;
        }
        Ok((loss, g))
    }

    pub fn sequence_forward_backward(&self, batch: &SequenceBatch, kind: LossKind) -> Result<(f64, VanillaGradients)> {
        check_len("batch input width", self.n_in, batch.n_in())?;
        batch.check_output_width(self.n_out)?;
        let count = batch.scored_positions();
        if count == 0 {
            return Ok((0.0, VanillaGradients::zeros_like(self)));
        }
        let scale = 1.0 / count as f64;
        let parts: Vec<(f64, VanillaGradients)> = (0..batch.batch())
            .into_par_iter()
            .map(|b| self.sample_gradient(batch, b, kind, scale))
            .collect::<Result<_>>()?;
        let mut total = VanillaGradients::zeros_like(self);
        let mut loss = 0.0;
        for (l, g) in &parts {
            loss += l;
            total.accumulate(g);
        }
        Ok((diverged(loss * scale)?, total))
    }

    pub fn evaluate(&self, batch: &SequenceBatch, kind: LossKind) -> Result<EvalStats> {
        check_len("batch input width", self.n_in, batch.n_in())?;
        batch.check_output_width(self.n_out)?;
        let count = batch.scored_positions();
        if count == 0 {
            return Ok(EvalStats { loss: 0.0, accuracy: 0.0 });
        }
        let mut loss = 0.0;
        let mut correct = 0usize;
        for b in 0..batch.batch() {
            let mut h = vec![0.0; self.n_hidden];
            for t in 0..batch.t_len() {
                h = self.cell_forward(batch.input(t, b), &h)?;
                if batch.is_scored(t, b) {
                    let y = self.output_head(&h);
                    loss += position_loss(batch, t, b, &y, kind, 1.0, None)?;
                    if kind == LossKind::CrossEntropy && argmax(&y) == batch.class_target(t, b) {
                        correct += 1;
                    }
                }
            }
        }
        Ok(EvalStats {
            loss: diverged(loss / count as f64)?,
            accuracy: correct as f64 / count as f64,
        })
    }

    /// `‖∂C/∂h_t‖` for `t = 0..=T`, unrolled from `h0` with `∂C/∂h_T = dh_final`.
    pub fn hidden_gradient_norms(&self, h0: &[f64], inputs: &[Vec<f64>], dh_final: &[f64]) -> Result<Vec<f64>> {
        let mut hs = vec![h0.to_vec()];
        for x in inputs {
            let h = self.cell_forward(x, hs.last().expect("nonempty"))?;
            hs.push(h);
        }
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let mut norms = vec![0.0; inputs.len() + 1];
        let mut dh = dh_final.to_vec();
        norms[inputs.len()] = norm(&dh);
        for t in (0..inputs.len()).rev() {
            dh = self.step_back(&hs[t + 1], &dh).0;
            norms[t] = norm(&dh);
        }
        Ok(norms)
    }
}

impl SequenceModel for VanillaCell {
    fn forward_backward(&self, batch: &SequenceBatch, loss: LossKind) -> Result<(f64, Vec<Vec<f64>>)> {
        let (l, g) = self.sequence_forward_backward(batch, loss)?;
        Ok((l, g.flatten()))
    }

    fn evaluate(&self, batch: &SequenceBatch, loss: LossKind) -> Result<EvalStats> {
        VanillaCell::evaluate(self, batch, loss)
    }

    fn param_names(&self) -> Vec<String> {
        ["u", "w", "a", "v", "c"].map(String::from).to_vec()
    }

    fn params(&self) -> Vec<&[f64]> {
        vec![&self.u, &self.w, &self.a, &self.v, &self.c]
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.u, &mut self.w, &mut self.a, &mut self.v, &mut self.c]
    }
}
