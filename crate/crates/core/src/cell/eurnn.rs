//! The unitary recurrent cell.
//!
//! ```text
//! z_t = U x_t + W h_{t−1}        U complex, W a UnitaryComposition
//! h_t = modReLU(z_t, b)
//! y_t = V [Re h_t; Im h_t] + c
//! ```
//!
//! `h_0` is the zero vector. Gradients are accumulated per sample by walking
//! the sequence backwards, and summed over the batch in sample order.

use nalgebra::{DMatrix, DMatrixView, DVectorView};
use rayon::prelude::*;

use super::modrelu::{modrelu_backward_into, modrelu_into};
use super::{argmax, diverged, position_loss, EvalStats, LossKind, SequenceBatch, SequenceModel};
use crate::complex::ComplexVec;
use crate::error::{check_len, EunnError, Result};
use crate::unitary::{CompiledComposition, CompositionGrad, ForwardTape, MeshStyle, UnitaryComposition};
use crate::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct EurnnCell {
    n_in: usize,
    n_hidden: usize,
    n_out: usize,
    /// `[n_hidden][n_in]`, real and imaginary parts of the input map.
    u_re: Vec<f64>,
    u_im: Vec<f64>,
    w: UnitaryComposition,
    /// modReLU bias.
    b: Vec<f64>,
    /// `[n_out][2·n_hidden]` acting on `[Re h; Im h]`.
    v: Vec<f64>,
    c: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellGradients {
    pub u_re: Vec<f64>,
    pub u_im: Vec<f64>,
    pub w: CompositionGrad,
    pub b: Vec<f64>,
    pub v: Vec<f64>,
    pub c: Vec<f64>,
}

impl CellGradients {
    pub fn zeros_like(cell: &EurnnCell) -> Self {
        Self {
            u_re: vec![0.0; cell.u_re.len()],
            u_im: vec![0.0; cell.u_im.len()],
            w: CompositionGrad::zeros_like(&cell.w),
            b: vec![0.0; cell.b.len()],
            v: vec![0.0; cell.v.len()],
            c: vec![0.0; cell.c.len()],
        }
    }

    pub fn accumulate(&mut self, other: &CellGradients) {
        add(&mut self.u_re, &other.u_re);
        add(&mut self.u_im, &other.u_im);
        self.w.accumulate(&other.w);
        add(&mut self.b, &other.b);
        add(&mut self.v, &other.v);
        add(&mut self.c, &other.c);
    }

    pub fn scale(&mut self, s: f64) {
        for a in self.flatten_mut() {
            for x in a.iter_mut() {
                *x *= s;
            }
        }
    }

    fn flatten_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out = vec![&mut self.u_re, &mut self.u_im];
        for l in self.w.layers.iter_mut() {
            out.push(&mut l.d_theta);
            out.push(&mut l.d_phi);
        }
        out.push(&mut self.w.d_phase);
        out.push(&mut self.b);
        out.push(&mut self.v);
        out.push(&mut self.c);
        out
    }

    /// Arrays in the same order as [`EurnnCell::params`].
    pub fn flatten(mut self) -> Vec<Vec<f64>> {
        self.flatten_mut().into_iter().map(std::mem::take).collect()
    }

    pub fn is_finite(&self) -> bool {
        let mut s = self.clone();
        s.flatten_mut().iter().all(|a| a.iter().all(|v| v.is_finite()))
    }
}

fn add(a: &mut [f64], b: &[f64]) {
    for (x, y) in a.iter_mut().zip(b) {
        *x += y;
    }
}

struct Step {
    z: ComplexVec,
    h: ComplexVec,
    tape: ForwardTape,
}

impl EurnnCell {
    /// Random initialization: angles and phases uniform in `[−π, π)`, `U` and
    /// `V` uniform in `±1/√n_hidden`, zero modReLU and output biases.
    pub fn new(
        n_in: usize,
        n_hidden: usize,
        n_out: usize,
        style: MeshStyle,
        capacity: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        if n_in == 0 || n_out == 0 {
            return Err(EunnError::Config("input and output widths must be positive".into()));
        }
        let mut w = UnitaryComposition::with_style(style, n_hidden, capacity)?;
        w.randomize(rng);
        let s = 1.0 / (n_hidden as f64).sqrt();
        let u_re = rng.uniform_vec(n_hidden * n_in, -s, s);
        let u_im = rng.uniform_vec(n_hidden * n_in, -s, s);
        let v = rng.uniform_vec(n_out * 2 * n_hidden, -s, s);
        Ok(Self {
            n_in,
            n_hidden,
            n_out,
            u_re,
            u_im,
            w,
            b: vec![0.0; n_hidden],
            v,
            c: vec![0.0; n_out],
        })
    }

    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        n_in: usize,
        n_out: usize,
        u_re: Vec<f64>,
        u_im: Vec<f64>,
        w: UnitaryComposition,
        b: Vec<f64>,
        v: Vec<f64>,
        c: Vec<f64>,
    ) -> Result<Self> {
        let n_hidden = w.n();
        check_len("u_re", n_hidden * n_in, u_re.len())?;
        check_len("u_im", n_hidden * n_in, u_im.len())?;
        check_len("modrelu bias", n_hidden, b.len())?;
        check_len("v", n_out * 2 * n_hidden, v.len())?;
        check_len("c", n_out, c.len())?;
        let cell = Self {
            n_in,
            n_hidden,
            n_out,
            u_re,
            u_im,
            w,
            b,
            v,
            c,
        };
        if cell.params().iter().any(|a| a.iter().any(|v| !v.is_finite())) {
            return Err(EunnError::Validation("cell parameters must be finite".into()));
        }
        Ok(cell)
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

    pub fn u(&self) -> (&[f64], &[f64]) {
        (&self.u_re, &self.u_im)
    }

    pub fn w(&self) -> &UnitaryComposition {
        &self.w
    }

    pub fn w_mut(&mut self) -> &mut UnitaryComposition {
        &mut self.w
    }

    pub fn bias(&self) -> &[f64] {
        &self.b
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.b
    }

    pub fn v(&self) -> &[f64] {
        &self.v
    }

    pub fn v_mut(&mut self) -> &mut [f64] {
        &mut self.v
    }

    pub fn c(&self) -> &[f64] {
        &self.c
    }

    pub fn c_mut(&mut self) -> &mut [f64] {
        &mut self.c
    }

    fn step(&self, k: &CompiledComposition, x: &[f64], h_prev: &ComplexVec) -> Result<Step> {
        check_len("cell input", self.n_in, x.len())?;
        check_len("hidden state", self.n_hidden, h_prev.len())?;
        let (mut z, tape) = k.forward(h_prev)?;
        {
            let (zr, zi) = z.planes_mut();
            let m_in = self.n_in;
            for (m, &xm) in x.iter().enumerate() {
                if xm == 0.0 {
                    continue;
                }
                for r in 0..self.n_hidden {
                    zr[r] += self.u_re[r * m_in + m] * xm;
                    zi[r] += self.u_im[r * m_in + m] * xm;
                }
            }
        }
        let mut h = ComplexVec::zeros(self.n_hidden);
        modrelu_into(&z, &self.b, &mut h);
        Ok(Step { z, h, tape })
    }

    /// One recurrence step; returns `(h_t, z_t)`.
    pub fn cell_forward(&self, x_t: &[f64], h_prev: &ComplexVec) -> Result<(ComplexVec, ComplexVec)> {
        let s = self.step(&self.w.compile()?, x_t, h_prev)?;
        Ok((s.h, s.z))
    }

    /// `V [Re h; Im h] + c`.
    pub fn output_head(&self, h: &ComplexVec) -> Result<Vec<f64>> {
        check_len("hidden state", self.n_hidden, h.len())?;
        let n = self.n_hidden;
        let mut y = self.c.clone();
        for (o, yo) in y.iter_mut().enumerate() {
            let row = &self.v[o * 2 * n..(o + 1) * 2 * n];
            let mut acc = 0.0;
            for k in 0..n {
                acc += row[k] * h.re()[k] + row[n + k] * h.im()[k];
            }
            *yo += acc;
        }
        Ok(y)
    }

    fn unroll(&self, k: &CompiledComposition, batch: &SequenceBatch, b: usize) -> Result<Vec<Step>> {
        let mut steps: Vec<Step> = Vec::with_capacity(batch.t_len());
        let h0 = ComplexVec::zeros(self.n_hidden);
        for t in 0..batch.t_len() {
            let prev = steps.last().map_or(&h0, |s| &s.h);
            let s = self.step(k, batch.input(t, b), prev)?;
            steps.push(s);
        }
        Ok(steps)
    }

    /// Summed (unscaled) loss and `scale`-weighted gradient for one sample.
    ///
    /// The output head is evaluated for all scored steps at once: with `H` the
    /// `2n × S` matrix of stacked `[Re h; Im h]`, `Y = V H`, `dV = dY Hᵀ` and
    /// `dH = Vᵀ dY`.
    fn sample_gradient(
        &self,
        k: &CompiledComposition,
        batch: &SequenceBatch,
        b: usize,
        kind: LossKind,
        scale: f64,
    ) -> Result<(f64, CellGradients)> {
        let steps = self.unroll(k, batch, b)?;
        let n = self.n_hidden;
        let scored: Vec<usize> = (0..batch.t_len()).filter(|&t| batch.is_scored(t, b)).collect();
        let mut hmat = DMatrix::<f64>::zeros(2 * n, scored.len());
        for (col, &t) in scored.iter().enumerate() {
            let h = &steps[t].h;
            let mut c = hmat.column_mut(col);
            c.rows_mut(0, n).copy_from_slice(h.re());
            c.rows_mut(n, n).copy_from_slice(h.im());
        }
        // `v` is row-major `[n_out][2n]`, i.e. column-major Vᵀ.
        let vt = DMatrixView::from_slice(&self.v, 2 * n, self.n_out);
        let mut logits = vt.tr_mul(&hmat);
        let mut loss = 0.0;
        let mut grads = CellGradients::zeros_like(self);
        let mut dlogits = vec![0.0; self.n_out];
        for (col, &t) in scored.iter().enumerate() {
            let mut y = logits.column_mut(col);
            y += DVectorView::from_slice(&self.c, self.n_out);
            loss += position_loss(batch, t, b, y.as_slice(), kind, scale, Some(&mut dlogits))?;
            y.copy_from_slice(&dlogits);
            for (gc, g) in grads.c.iter_mut().zip(&dlogits) {
                *gc += g;
            }
        }
        let dlogits_all = logits;
        // dVᵀ = H dYᵀ, whose column-major storage is dV row-major.
        let dvt = &hmat * dlogits_all.transpose();
        grads.v.copy_from_slice(dvt.as_slice());
        let dhmat = vt * &dlogits_all;

        let mut dh_next = ComplexVec::zeros(n);
        let mut dz = ComplexVec::zeros(n);
        let mut next_scored = scored.len();
        for t in (0..batch.t_len()).rev() {
            let step = &steps[t];
            let mut dh = dh_next;
            if next_scored > 0 && scored[next_scored - 1] == t {
                next_scored -= 1;
                let col = dhmat.column(next_scored);
                let (dhr, dhi) = dh.planes_mut();
                for q in 0..n {
                    dhr[q] += col[q];
                    dhi[q] += col[n + q];
                }
            }
            modrelu_backward_into(&step.z, &self.b, &dh, &mut dz, &mut grads.b);
            let x = batch.input(t, b);
            for (m, &xm) in x.iter().enumerate() {
                if xm == 0.0 {
                    continue;
                }
                for r in 0..n {
                    grads.u_re[r * self.n_in + m] += dz.re()[r] * xm;
                    grads.u_im[r * self.n_in + m] += dz.im()[r] * xm;
                }
            }
            dh_next = k.backward_accumulate(&self.w, &step.tape, &dz, &mut grads.w)?;
        }
        Ok((loss, grads))
    }

    /// Mean loss over scored positions and the gradient of every parameter,
    /// by back-propagation through time.
    pub fn sequence_forward_backward(&self, batch: &SequenceBatch, kind: LossKind) -> Result<(f64, CellGradients)> {
        check_len("batch input width", self.n_in, batch.n_in())?;
        batch.check_output_width(self.n_out)?;
        let count = batch.scored_positions();
        if count == 0 {
            return Ok((0.0, CellGradients::zeros_like(self)));
        }
        let scale = 1.0 / count as f64;
        let k = self.w.compile()?;
        let parts: Vec<(f64, CellGradients)> = (0..batch.batch())
            .into_par_iter()
            .map(|b| self.sample_gradient(&k, batch, b, kind, scale))
            .collect::<Result<_>>()?;
        let mut total = CellGradients::zeros_like(self);
        let mut loss = 0.0;
        for (l, g) in &parts {
            loss += l;
            total.accumulate(g);
        }
        let loss = diverged(loss * scale)?;
        Ok((loss, total))
    }

    /// Loss and accuracy without gradients.
    pub fn evaluate(&self, batch: &SequenceBatch, kind: LossKind) -> Result<EvalStats> {
        check_len("batch input width", self.n_in, batch.n_in())?;
        batch.check_output_width(self.n_out)?;
        let count = batch.scored_positions();
        if count == 0 {
            return Ok(EvalStats { loss: 0.0, accuracy: 0.0 });
        }
        let k = self.w.compile()?;
        let per_sample: Vec<(f64, usize)> = (0..batch.batch())
            .into_par_iter()
            .map(|b| {
                let mut h = ComplexVec::zeros(self.n_hidden);
                let mut loss = 0.0;
                let mut correct = 0;
                for t in 0..batch.t_len() {
                    h = self.step(&k, batch.input(t, b), &h)?.h;
                    if batch.is_scored(t, b) {
                        let y = self.output_head(&h)?;
                        loss += position_loss(batch, t, b, &y, kind, 1.0, None)?;
                        if kind == LossKind::CrossEntropy && argmax(&y) == batch.class_target(t, b) {
                            correct += 1;
                        }
                    }
                }
                Ok((loss, correct))
            })
            .collect::<Result<_>>()?;
        let loss: f64 = per_sample.iter().map(|p| p.0).sum();
        let correct: usize = per_sample.iter().map(|p| p.1).sum();
        Ok(EvalStats {
            loss: diverged(loss / count as f64)?,
            accuracy: correct as f64 / count as f64,
        })
    }

    /// `‖∂C/∂h_t‖` for `t = 0..=T` when the cell is unrolled from `h0` over
    /// `inputs` and `∂C/∂h_T = dh_final`.
    pub fn hidden_gradient_norms(
        &self,
        h0: &ComplexVec,
        inputs: &[Vec<f64>],
        dh_final: &ComplexVec,
    ) -> Result<Vec<f64>> {
        let k = self.w.compile()?;
        let mut steps: Vec<Step> = Vec::with_capacity(inputs.len());
        for x in inputs {
            let prev = steps.last().map_or(h0, |s| &s.h);
            let s = self.step(&k, x, prev)?;
            steps.push(s);
        }
        let mut norms = vec![0.0; inputs.len() + 1];
        let mut dh = dh_final.clone();
        norms[inputs.len()] = dh.norm2();
        let mut dz = ComplexVec::zeros(self.n_hidden);
        let mut db = vec![0.0; self.n_hidden];
        for t in (0..inputs.len()).rev() {
            modrelu_backward_into(&steps[t].z, &self.b, &dh, &mut dz, &mut db);
            dh = k.backward(&self.w, &steps[t].tape, &dz)?.0;
            norms[t] = dh.norm2();
        }
        Ok(norms)
    }
}

impl SequenceModel for EurnnCell {
    fn forward_backward(&self, batch: &SequenceBatch, loss: LossKind) -> Result<(f64, Vec<Vec<f64>>)> {
        let (l, g) = self.sequence_forward_backward(batch, loss)?;
        Ok((l, g.flatten()))
    }

    fn evaluate(&self, batch: &SequenceBatch, loss: LossKind) -> Result<EvalStats> {
        EurnnCell::evaluate(self, batch, loss)
    }

    fn param_names(&self) -> Vec<String> {
        let mut names = vec!["u_re".to_string(), "u_im".to_string()];
        for l in 0..self.w.capacity() {
            names.push(format!("theta{l}"));
            names.push(format!("phi{l}"));
        }
        names.extend(["w_phase", "b", "v", "c"].map(String::from));
        names
    }

    fn params(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = vec![&self.u_re, &self.u_im];
        for l in self.w.layers() {
            out.push(l.theta());
            out.push(l.phi());
        }
        out.push(self.w.diag().phases());
        out.push(&self.b);
        out.push(&self.v);
        out.push(&self.c);
        out
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![&mut self.u_re, &mut self.u_im];
        let (layers, diag) = self.w.parts_mut();
        for l in layers {
            let (t, p) = l.angles_mut();
            out.push(t);
            out.push(p);
        }
        out.push(diag.phases_mut());
        out.push(&mut self.b);
        out.push(&mut self.v);
        out.push(&mut self.c);
        out
    }
}
