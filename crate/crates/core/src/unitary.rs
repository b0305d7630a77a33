//! Full unitary transforms `W = D · F¹ · F² · … · F^L` built from rotation
//! layers, angle synthesis from arbitrary unitaries, and the dense projective
//! (Cayley) update used as a full-space baseline.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;

use crate::complex::ComplexVec;
use crate::dense::{unitarity_defect, CMatrix};
use crate::error::{check_len, EunnError, Result};
use crate::rotation::{
    apply_layer_into, backward_layer_accumulate, compile_layer, fft_plan, materialize_layer, rotation_block,
    tunable_plan, LayerGrad, LayerKernels, RotationLayer,
};
use crate::Rng;

/// Unitarity tolerance for inputs to construction routines.
pub const CONSTRUCTION_TOL: f64 = 1e-8;

/// Diagonal of unit-modulus phases `e^{i w_j}`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalPhase {
    w: Vec<f64>,
}

impl DiagonalPhase {
    pub fn zeros(n: usize) -> Self {
        Self { w: vec![0.0; n] }
    }

    pub fn new(w: Vec<f64>) -> Self {
        Self { w }
    }

    pub fn n(&self) -> usize {
        self.w.len()
    }

    pub fn phases(&self) -> &[f64] {
        &self.w
    }

    pub fn phases_mut(&mut self) -> &mut [f64] {
        &mut self.w
    }

    pub fn factors(&self) -> ComplexVec {
        let (re, im): (Vec<f64>, Vec<f64>) = self.w.iter().map(|w| (w.cos(), w.sin())).unzip();
        ComplexVec::from_parts(re, im).expect("planes built together")
    }

    pub fn materialize(&self) -> CMatrix {
        let n = self.n();
        let mut m = CMatrix::zeros(n, n);
        for (j, w) in self.w.iter().enumerate() {
            m[(j, j)] = Complex64::from_polar(1.0, *w);
        }
        m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshStyle {
    Tunable,
    Fft,
}

impl fmt::Display for MeshStyle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MeshStyle::Tunable => "tunable",
            MeshStyle::Fft => "fft",
        })
    }
}

impl FromStr for MeshStyle {
    type Err = EunnError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tunable" => Ok(MeshStyle::Tunable),
            "fft" => Ok(MeshStyle::Fft),
            other => Err(EunnError::Config(format!("unknown mesh style '{other}'"))),
        }
    }
}

/// `W = D · F¹ · … · F^L`; applied right to left, the diagonal last.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitaryComposition {
    diag: DiagonalPhase,
    layers: Vec<RotationLayer>,
    style: MeshStyle,
}

impl UnitaryComposition {
    pub fn tunable(n: usize, capacity: usize) -> Result<Self> {
        Ok(Self {
            diag: DiagonalPhase::zeros(n),
            layers: tunable_plan(n, capacity)?,
            style: MeshStyle::Tunable,
        })
    }

    pub fn fft(n: usize) -> Result<Self> {
        Ok(Self {
            diag: DiagonalPhase::zeros(n),
            layers: fft_plan(n)?,
            style: MeshStyle::Fft,
        })
    }

    /// Zero-angle composition of the given style. `capacity` is ignored for fft.
    pub fn with_style(style: MeshStyle, n: usize, capacity: usize) -> Result<Self> {
        match style {
            MeshStyle::Tunable => Self::tunable(n, capacity),
            MeshStyle::Fft => Self::fft(n),
        }
    }

    /// Draws every θ, φ and diagonal phase uniformly from `[−π, π)`.
    pub fn randomize(&mut self, rng: &mut Rng) {
        for layer in &mut self.layers {
            let (theta, phi) = layer.angles_mut();
            for t in theta.iter_mut() {
                *t = rng.uniform(-PI, PI);
            }
            for p in phi.iter_mut() {
                *p = rng.uniform(-PI, PI);
            }
        }
        for w in self.diag.phases_mut() {
            *w = rng.uniform(-PI, PI);
        }
    }

    pub fn n(&self) -> usize {
        self.diag.n()
    }

    pub fn capacity(&self) -> usize {
        self.layers.len()
    }

    pub fn style(&self) -> MeshStyle {
        self.style
    }

    pub fn layers(&self) -> &[RotationLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [RotationLayer] {
        &mut self.layers
    }

    pub fn diag(&self) -> &DiagonalPhase {
        &self.diag
    }

    pub fn diag_mut(&mut self) -> &mut DiagonalPhase {
        &mut self.diag
    }

    /// Layers and diagonal borrowed mutably at once.
    pub fn parts_mut(&mut self) -> (&mut [RotationLayer], &mut DiagonalPhase) {
        (&mut self.layers, &mut self.diag)
    }

    pub fn num_rotations(&self) -> usize {
        self.layers.iter().map(|l| l.num_rotations()).sum()
    }

    /// θ and φ for every rotation plus the diagonal phases.
    pub fn num_params(&self) -> usize {
        2 * self.num_rotations() + self.n()
    }

    pub fn compile(&self) -> Result<CompiledComposition> {
        Ok(CompiledComposition {
            kernels: self.layers.iter().map(compile_layer).collect::<Result<_>>()?,
            phase: self.diag.factors(),
        })
    }
}

/// Kernels for every layer plus the diagonal factors, ready to apply.
#[derive(Debug, Clone)]
pub struct CompiledComposition {
    kernels: Vec<LayerKernels>,
    phase: ComplexVec,
}

/// Inputs seen by each layer during a forward pass, and the input to `D`.
#[derive(Debug, Clone)]
pub struct ForwardTape {
    layer_inputs: Vec<ComplexVec>,
    pre_diag: ComplexVec,
}

impl ForwardTape {
    /// Zeroed tape for a composition of `layers` layers on dimension `n`.
    pub fn new(n: usize, layers: usize) -> Self {
        Self {
            layer_inputs: vec![ComplexVec::zeros(n); layers],
            pre_diag: ComplexVec::zeros(n),
        }
    }
}

/// Gradient of a composition's parameters, aligned with its layers.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositionGrad {
    pub layers: Vec<LayerGrad>,
    pub d_phase: Vec<f64>,
}

impl CompositionGrad {
    pub fn zeros_like(w: &UnitaryComposition) -> Self {
        Self {
            layers: w
                .layers()
                .iter()
                .map(|l| LayerGrad {
                    d_theta: vec![0.0; l.num_rotations()],
                    d_phi: vec![0.0; l.num_rotations()],
                })
                .collect(),
            d_phase: vec![0.0; w.n()],
        }
    }

    pub fn accumulate(&mut self, other: &CompositionGrad) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.d_theta.iter_mut().zip(&b.d_theta) {
                *x += y;
            }
            for (x, y) in a.d_phi.iter_mut().zip(&b.d_phi) {
                *x += y;
            }
        }
        for (x, y) in self.d_phase.iter_mut().zip(&other.d_phase) {
            *x += y;
        }
    }
}

impl CompiledComposition {
    pub fn n(&self) -> usize {
        self.phase.len()
    }

    pub fn num_layers(&self) -> usize {
        self.kernels.len()
    }

    pub fn kernels_mut(&mut self) -> &mut [LayerKernels] {
        &mut self.kernels
    }

    pub fn apply(&self, x: &ComplexVec) -> Result<ComplexVec> {
        Ok(self.forward(x)?.0)
    }

    /// Forward pass that keeps each layer's input for the backward pass.
    pub fn forward(&self, x: &ComplexVec) -> Result<(ComplexVec, ForwardTape)> {
        let mut tape = ForwardTape::new(self.n(), self.kernels.len());
        let mut y = ComplexVec::zeros(self.n());
        self.forward_into(x, &mut tape, &mut y)?;
        Ok((y, tape))
    }

    /// Allocation-free [`CompiledComposition::forward`] into a tape from
    /// [`ForwardTape::new`].
    pub fn forward_into(&self, x: &ComplexVec, tape: &mut ForwardTape, y: &mut ComplexVec) -> Result<()> {
        let n = self.n();
        check_len("composition input", n, x.len())?;
        check_len("composition output", n, y.len())?;
        check_len("tape layers", self.kernels.len(), tape.layer_inputs.len())?;
        check_len("tape width", n, tape.pre_diag.len())?;
        let last = self.kernels.len();
        let first_input = if last == 0 { &mut tape.pre_diag } else { &mut tape.layer_inputs[last - 1] };
        first_input.re_mut().copy_from_slice(x.re());
        first_input.im_mut().copy_from_slice(x.im());
        for l in (0..last).rev() {
            let (head, tail) = tape.layer_inputs.split_at_mut(l);
            let out = if l == 0 { &mut tape.pre_diag } else { &mut head[l - 1] };
            apply_layer_into(&self.kernels[l], &tail[0], out)?;
        }
        let (pr, pi) = (self.phase.re(), self.phase.im());
        let (ur, ui) = (tape.pre_diag.re(), tape.pre_diag.im());
        let (yr, yi) = y.planes_mut();
        for j in 0..n {
            yr[j] = pr[j] * ur[j] - pi[j] * ui[j];
            yi[j] = pr[j] * ui[j] + pi[j] * ur[j];
        }
        Ok(())
    }

    /// Reverse pass; `w` must be the composition these kernels were compiled from.
    pub fn backward(
        &self,
        w: &UnitaryComposition,
        tape: &ForwardTape,
        dy: &ComplexVec,
    ) -> Result<(ComplexVec, CompositionGrad)> {
        let mut grad = CompositionGrad::zeros_like(w);
        let dx = self.backward_accumulate(w, tape, dy, &mut grad)?;
        Ok((dx, grad))
    }

    /// [`CompiledComposition::backward`] adding into an existing gradient.
    pub fn backward_accumulate(
        &self,
        w: &UnitaryComposition,
        tape: &ForwardTape,
        dy: &ComplexVec,
        grad: &mut CompositionGrad,
    ) -> Result<ComplexVec> {
        let mut dx = ComplexVec::zeros(self.n());
        let mut scratch = ComplexVec::zeros(self.n());
        self.backward_into(w, tape, dy, &mut dx, &mut scratch, grad)?;
        Ok(dx)
    }

    /// Allocation-free reverse pass: writes the input cotangent into `dx` and
    /// adds parameter gradients into `grad`. `scratch` is overwritten.
    pub fn backward_into(
        &self,
        w: &UnitaryComposition,
        tape: &ForwardTape,
        dy: &ComplexVec,
        dx: &mut ComplexVec,
        scratch: &mut ComplexVec,
        grad: &mut CompositionGrad,
    ) -> Result<()> {
        let n = self.n();
        check_len("composition cotangent", n, dy.len())?;
        check_len("input cotangent", n, dx.len())?;
        check_len("scratch", n, scratch.len())?;
        check_len("phase gradient", n, grad.d_phase.len())?;
        check_len("layer gradients", self.kernels.len(), grad.layers.len())?;
        {
            let (pr, pi) = (self.phase.re(), self.phase.im());
            let (ur, ui) = (tape.pre_diag.re(), tape.pre_diag.im());
            let (dr, di) = (dy.re(), dy.im());
            let (gr, gi) = dx.planes_mut();
            for j in 0..n {
                // Re(conj(dy) · i e u)
                let eu_r = pr[j] * ur[j] - pi[j] * ui[j];
                let eu_i = pr[j] * ui[j] + pi[j] * ur[j];
                grad.d_phase[j] += di[j] * eu_r - dr[j] * eu_i;
                gr[j] = pr[j] * dr[j] + pi[j] * di[j];
                gi[j] = pr[j] * di[j] - pi[j] * dr[j];
            }
        }
        for (l, k) in self.kernels.iter().enumerate() {
            backward_layer_accumulate(k, &w.layers()[l], &tape.layer_inputs[l], dx, scratch, &mut grad.layers[l])?;
            std::mem::swap(dx, scratch);
        }
        Ok(())
    }
}

/// `y = W x` in O(nL).
pub fn apply(w: &UnitaryComposition, x: &ComplexVec) -> Result<ComplexVec> {
    w.compile()?.apply(x)
}

/// Cotangent of `x` and the gradient of every θ, φ and diagonal phase, given
/// the output cotangent `dy`. Recomputes the forward pass to fill the tape.
pub fn backward(
    w: &UnitaryComposition,
    x: &ComplexVec,
    dy: &ComplexVec,
) -> Result<(ComplexVec, CompositionGrad)> {
    let compiled = w.compile()?;
    let (_, tape) = compiled.forward(x)?;
    compiled.backward(w, &tape, dy)
}

pub fn materialize(w: &UnitaryComposition) -> CMatrix {
    let mut m = w.diag.materialize();
    for layer in &w.layers {
        m *= materialize_layer(layer);
    }
    m
}

/// One rotation of an [`AngleProgram`]; `i` is the phased coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProgramRotation {
    pub i: usize,
    pub j: usize,
    pub theta: f64,
    pub phi: f64,
}

/// `W = D · R(r₁)† · R(r₂)† · … · R(r_K)†` over the listed rotations, in order.
#[derive(Debug, Clone, PartialEq)]
pub struct AngleProgram {
    pub rotations: Vec<ProgramRotation>,
    pub diag: DiagonalPhase,
}

impl AngleProgram {
    pub fn n(&self) -> usize {
        self.diag.n()
    }
}

/// Angles `(θ, φ)` for a right-multiplied rotation on columns `(r, c)` that
/// zeroes entry `(r, c)`, given `a = M[r][r]` and `b = M[r][c]`.
fn eliminating_angles(a: Complex64, b: Complex64) -> (f64, f64) {
    let (abs_a, abs_b) = (a.norm(), b.norm());
    if abs_b == 0.0 {
        return (0.0, 0.0);
    }
    let theta = abs_b.atan2(abs_a);
    let phi = if abs_a > 0.0 { b.arg() - a.arg() } else { 0.0 };
    (theta, phi)
}

/// `M ← M · R_{r,c}(θ, φ)`, mixing columns `r` and `c`.
fn right_rotate(m: &mut CMatrix, r: usize, c: usize, theta: f64, phi: f64) {
    let b = rotation_block(theta, phi);
    for k in 0..m.nrows() {
        let (mr, mc) = (m[(k, r)], m[(k, c)]);
        m[(k, r)] = mr * b[0][0] + mc * b[1][0];
        m[(k, c)] = mr * b[0][1] + mc * b[1][1];
    }
}

/// Column-by-column elimination. The last row is cleared by rotations against
/// columns `n−2, …, 0`, then the procedure repeats on the leading block until a
/// diagonal of unit-modulus phases remains.
pub fn decompose_unitary(m: &CMatrix) -> Result<AngleProgram> {
    let n = m.nrows();
    if n == 0 || m.ncols() != n {
        return Err(EunnError::dim(format!(
            "decompose_unitary needs a nonempty square matrix, got {}×{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let defect = unitarity_defect(m);
    if !(defect < CONSTRUCTION_TOL) {
        return Err(EunnError::Validation(format!(
            "matrix is not unitary: max |M†M − I| = {defect:.3e} exceeds {CONSTRUCTION_TOL:e}"
        )));
    }
    let mut work = m.clone();
    let mut applied = Vec::with_capacity(n * (n - 1) / 2);
    for r in (1..n).rev() {
        for c in (0..r).rev() {
            let (theta, phi) = eliminating_angles(work[(r, r)], work[(r, c)]);
            right_rotate(&mut work, r, c, theta, phi);
            applied.push(ProgramRotation { i: r, j: c, theta, phi });
        }
    }
    let mut off_diag: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                off_diag = off_diag.max(work[(i, j)].norm());
            }
        }
    }
    if off_diag > CONSTRUCTION_TOL {
        return Err(EunnError::Numerical(format!(
            "elimination residual is not diagonal (max off-diagonal {off_diag:.3e})"
        )));
    }
    let phases = (0..n).map(|j| work[(j, j)].arg()).collect();
    applied.reverse();
    Ok(AngleProgram {
        rotations: applied,
        diag: DiagonalPhase::new(phases),
    })
}

pub fn reconstruct(p: &AngleProgram) -> Result<CMatrix> {
    let n = p.n();
    let mut m = p.diag.materialize();
    for r in &p.rotations {
        if r.i >= n || r.j >= n || r.i == r.j {
            return Err(EunnError::InvalidPlan(format!(
                "program rotation ({}, {}) invalid for dimension {n}",
                r.i, r.j
            )));
        }
        let b = rotation_block(r.theta, r.phi);
        // right-multiply by the adjoint of the block
        let (i, j) = (r.i, r.j);
        for k in 0..n {
            let (mi, mj) = (m[(k, i)], m[(k, j)]);
            m[(k, i)] = mi * b[0][0].conj() + mj * b[0][1].conj();
            m[(k, j)] = mi * b[1][0].conj() + mj * b[1][1].conj();
        }
    }
    Ok(m)
}

/// Cayley-projected gradient step:
/// `A = G†W − W†G`, `W' = (I + λ/2·A)⁻¹ (I − λ/2·A) W`. O(n³).
pub fn projective_update(w: &CMatrix, g: &CMatrix, lr: f64) -> Result<CMatrix> {
    let n = w.nrows();
    if w.ncols() != n || g.shape() != w.shape() {
        return Err(EunnError::dim(format!(
            "projective_update: W is {:?}, G is {:?}",
            w.shape(),
            g.shape()
        )));
    }
    let defect = unitarity_defect(w);
    if !(defect < CONSTRUCTION_TOL) {
        return Err(EunnError::Validation(format!(
            "W is not unitary: max |W†W − I| = {defect:.3e}"
        )));
    }
    let a = g.adjoint() * w - w.adjoint() * g;
    let half = Complex64::new(lr / 2.0, 0.0);
    let eye = CMatrix::identity(n, n);
    let lhs = &eye + &a * half;
    let rhs = (&eye - &a * half) * w;
    lhs.lu()
        .solve(&rhs)
        .ok_or_else(|| EunnError::Numerical("I + λ/2·A is singular".into()))
}
