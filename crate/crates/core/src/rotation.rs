//! Single rotation layers.
//!
//! A layer is a set of U(2) rotations acting on disjoint coordinate pairs. For a
//! pair `(i, j)` with angles `(θ, φ)` the layer maps
//!
//! ```text
//! y_i = e^{iφ} cos θ · x_i − e^{iφ} sin θ · x_j
//! y_j =        sin θ · x_i +        cos θ · x_j
//! ```
//!
//! so the first coordinate of a pair carries the phase. Because the pairs are
//! disjoint the whole layer reduces to `y = v1 ⊙ x + v2 ⊙ permute(x)`, two
//! element-wise products and one gather, which is what [`LayerKernels`] stores.

use num_complex::Complex64;

use crate::complex::{ComplexVec, PermutationPlan};
use crate::dense::CMatrix;
use crate::error::{check_len, EunnError, Result};

/// Kernel work counters. Compiled in for unit tests and the `op-count` feature.
#[cfg(any(test, feature = "op-count"))]
pub mod op_count {
    use std::cell::Cell;

    thread_local! {
        static DIAG_TERMS: Cell<u64> = const { Cell::new(0) };
        static SWAP_TERMS: Cell<u64> = const { Cell::new(0) };
    }

    pub fn reset() {
        DIAG_TERMS.with(|c| c.set(0));
        SWAP_TERMS.with(|c| c.set(0));
    }

    /// `(v1 ⊙ x multiply-adds, v2 ⊙ permute(x) multiply-adds)` since the last reset.
    pub fn read() -> (u64, u64) {
        (DIAG_TERMS.with(|c| c.get()), SWAP_TERMS.with(|c| c.get()))
    }

    #[inline(always)]
    pub(crate) fn tick_diag() {
        DIAG_TERMS.with(|c| c.set(c.get() + 1));
    }

    #[inline(always)]
    pub(crate) fn tick_swap() {
        SWAP_TERMS.with(|c| c.set(c.get() + 1));
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RotationLayer {
    n: usize,
    pairs: Vec<(usize, usize)>,
    theta: Vec<f64>,
    phi: Vec<f64>,
}

impl RotationLayer {
    pub fn new(n: usize, pairs: Vec<(usize, usize)>, theta: Vec<f64>, phi: Vec<f64>) -> Result<Self> {
        check_len("theta", pairs.len(), theta.len())?;
        check_len("phi", pairs.len(), phi.len())?;
        let mut seen = vec![false; n];
        for &(i, j) in &pairs {
            if i >= n || j >= n {
                return Err(EunnError::InvalidPlan(format!(
                    "pair ({i}, {j}) out of range for dimension {n}"
                )));
            }
            if i == j {
                return Err(EunnError::InvalidPlan(format!("pair ({i}, {j}) is degenerate")));
            }
            for k in [i, j] {
                if seen[k] {
                    return Err(EunnError::InvalidPlan(format!(
                        "coordinate {k} appears in more than one pair"
                    )));
                }
                seen[k] = true;
            }
        }
        Ok(Self { n, pairs, theta, phi })
    }

    /// Layer with all angles zero (the identity transform).
    pub fn zeros(n: usize, pairs: Vec<(usize, usize)>) -> Result<Self> {
        let m = pairs.len();
        Self::new(n, pairs, vec![0.0; m], vec![0.0; m])
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn phi(&self) -> &[f64] {
        &self.phi
    }

    pub fn theta_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    pub fn phi_mut(&mut self) -> &mut [f64] {
        &mut self.phi
    }

    /// Both angle arrays, for optimizers that walk every parameter.
    pub fn angles_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (&mut self.theta, &mut self.phi)
    }

    pub fn num_rotations(&self) -> usize {
        self.pairs.len()
    }
}

/// Precomputed `v1`, `v2` and pairing permutation for one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerKernels {
    v1: ComplexVec,
    v2: ComplexVec,
    perm: PermutationPlan,
}

impl LayerKernels {
    pub fn n(&self) -> usize {
        self.v1.len()
    }

    pub fn v1(&self) -> &ComplexVec {
        &self.v1
    }

    pub fn v2(&self) -> &ComplexVec {
        &self.v2
    }

    pub fn perm(&self) -> &PermutationPlan {
        &self.perm
    }

    /// Scales one `v1` entry. Only used to inject faults into invariant checks.
    #[doc(hidden)]
    pub fn corrupt_for_testing(&mut self, index: usize, factor: f64) {
        let i = index % self.n();
        self.v1.re_mut()[i] *= factor;
        self.v1.im_mut()[i] *= factor;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub d_theta: Vec<f64>,
    pub d_phi: Vec<f64>,
}

/// The 2×2 block of a single rotation, rows/columns ordered `(i, j)`.
pub fn rotation_block(theta: f64, phi: f64) -> [[Complex64; 2]; 2] {
    let e = Complex64::from_polar(1.0, phi);
    let (s, c) = theta.sin_cos();
    [
        [e * c, -e * s],
        [Complex64::new(s, 0.0), Complex64::new(c, 0.0)],
    ]
}

pub fn compile_layer(layer: &RotationLayer) -> Result<LayerKernels> {
    let n = layer.n;
    let mut v1 = ComplexVec::from_real(vec![1.0; n]);
    let mut v2 = ComplexVec::zeros(n);
    let mut forward: Vec<usize> = (0..n).collect();
    for (p, &(i, j)) in layer.pairs.iter().enumerate() {
        let b = rotation_block(layer.theta[p], layer.phi[p]);
        v1.set(i, b[0][0]);
        v2.set(i, b[0][1]);
        v1.set(j, b[1][1]);
        v2.set(j, b[1][0]);
        forward[i] = j;
        forward[j] = i;
    }
    Ok(LayerKernels {
        v1,
        v2,
        perm: PermutationPlan::new(forward)?,
    })
}

/// `y = v1 ⊙ x + v2 ⊙ permute(x)`.
pub fn apply_layer(k: &LayerKernels, x: &ComplexVec) -> Result<ComplexVec> {
    let mut y = ComplexVec::zeros(x.len());
    apply_layer_into(k, x, &mut y)?;
    Ok(y)
}

/// Allocation-free form of [`apply_layer`].
pub fn apply_layer_into(k: &LayerKernels, x: &ComplexVec, y: &mut ComplexVec) -> Result<()> {
    let n = k.n();
    check_len("layer input", n, x.len())?;
    check_len("layer output", n, y.len())?;
    let (v1r, v1i) = (k.v1.re(), k.v1.im());
    let (v2r, v2i) = (k.v2.re(), k.v2.im());
    let (xr, xi) = (x.re(), x.im());
    let perm = k.perm.forward();
    let (yr, yi) = y.planes_mut();
    let (v1r, v1i, v2r, v2i) = (&v1r[..n], &v1i[..n], &v2r[..n], &v2i[..n]);
    let (xr, xi, yr, yi, perm) = (&xr[..n], &xi[..n], &mut yr[..n], &mut yi[..n], &perm[..n]);
    for i in 0..n {
        yr[i] = v1r[i] * xr[i] - v1i[i] * xi[i];
        yi[i] = v1r[i] * xi[i] + v1i[i] * xr[i];
    }
    #[cfg(any(test, feature = "op-count"))]
    (0..n).for_each(|_| op_count::tick_diag());
    for i in 0..n {
        let j = perm[i];
        let (pr, pi) = (xr[j], xi[j]);
        yr[i] += v2r[i] * pr - v2i[i] * pi;
        yi[i] += v2r[i] * pi + v2i[i] * pr;
    }
    #[cfg(any(test, feature = "op-count"))]
    (0..n).for_each(|_| op_count::tick_swap());
    Ok(())
}

/// `x = F† y`: conjugated kernels scattered back through the pairing.
pub fn apply_layer_adjoint(k: &LayerKernels, y: &ComplexVec) -> Result<ComplexVec> {
    let mut out = ComplexVec::zeros(y.len());
    apply_layer_adjoint_into(k, y, &mut out)?;
    Ok(out)
}

/// Allocation-free form of [`apply_layer_adjoint`].
pub fn apply_layer_adjoint_into(k: &LayerKernels, y: &ComplexVec, out: &mut ComplexVec) -> Result<()> {
    let n = k.n();
    check_len("layer adjoint input", n, y.len())?;
    check_len("layer adjoint output", n, out.len())?;
    let (v1r, v1i) = (k.v1.re(), k.v1.im());
    let (v2r, v2i) = (k.v2.re(), k.v2.im());
    let (gr, gi) = (y.re(), y.im());
    let inv = k.perm.inverse();
    let (or, oi) = out.planes_mut();
    let (v1r, v1i, v2r, v2i) = (&v1r[..n], &v1i[..n], &v2r[..n], &v2i[..n]);
    let (gr, gi, or, oi, inv) = (&gr[..n], &gi[..n], &mut or[..n], &mut oi[..n], &inv[..n]);
    for i in 0..n {
        or[i] = v1r[i] * gr[i] + v1i[i] * gi[i];
        oi[i] = v1r[i] * gi[i] - v1i[i] * gr[i];
    }
    // conj(v2_s) g_s where s maps onto i
    for i in 0..n {
        let s = inv[i];
        or[i] += v2r[s] * gr[s] + v2i[s] * gi[s];
        oi[i] += v2r[s] * gi[s] - v2i[s] * gr[s];
    }
    Ok(())
}

/// Reverse-mode pass through one layer.
///
/// `dy` holds the real cotangent `dL/d(re y) + i dL/d(im y)`. Returns the
/// cotangent of `x` and `dL/dθ`, `dL/dφ` for every pair, using
/// `dL/dθ = Σ Re(conj(dy_k) ∂y_k/∂θ)`. Each pair touches four scalars.
pub fn backward_layer(
    k: &LayerKernels,
    layer: &RotationLayer,
    x: &ComplexVec,
    dy: &ComplexVec,
) -> Result<(ComplexVec, LayerGrad)> {
    let m = layer.pairs.len();
    let mut grad = LayerGrad {
        d_theta: vec![0.0; m],
        d_phi: vec![0.0; m],
    };
    let mut dx = ComplexVec::zeros(layer.n);
    backward_layer_accumulate(k, layer, x, dy, &mut dx, &mut grad)?;
    Ok((dx, grad))
}

/// [`backward_layer`] writing `dx` into a buffer and adding the angle
/// gradients into `grad`. Derivatives are read off the compiled kernels, so
/// no trigonometry is evaluated.
pub fn backward_layer_accumulate(
    k: &LayerKernels,
    layer: &RotationLayer,
    x: &ComplexVec,
    dy: &ComplexVec,
    dx: &mut ComplexVec,
    grad: &mut LayerGrad,
) -> Result<()> {
    check_len("layer input", layer.n, x.len())?;
    check_len("layer cotangent", layer.n, dy.len())?;
    check_len("layer theta gradient", layer.pairs.len(), grad.d_theta.len())?;
    check_len("layer phi gradient", layer.pairs.len(), grad.d_phi.len())?;
    apply_layer_adjoint_into(k, dy, dx)?;
    for (p, &(i, j)) in layer.pairs.iter().enumerate() {
        // v1_i = e^{iφ}cosθ, v2_i = −e^{iφ}sinθ, v1_j = cosθ, v2_j = sinθ
        let (a_i, b_i) = (k.v1.get(i), k.v2.get(i));
        let (a_j, b_j) = (k.v1.get(j).re, k.v2.get(j).re);
        let (xi, xj) = (x.get(i), x.get(j));
        let (gi, gj) = (dy.get(i), dy.get(j));
        // ∂y_i/∂θ = e^{iφ}(−sinθ x_i − cosθ x_j),  ∂y_j/∂θ = cosθ x_i − sinθ x_j
        let dyi_dtheta = b_i * xi - a_i * xj;
        let dyj_dtheta = a_j * xi - b_j * xj;
        grad.d_theta[p] += (gi.conj() * dyi_dtheta).re + (gj.conj() * dyj_dtheta).re;
        // ∂y_i/∂φ = i y_i,  y_j does not depend on φ
        let yi = a_i * xi + b_i * xj;
        grad.d_phi[p] += (gi.conj() * Complex64::i() * yi).re;
    }
    Ok(())
}

/// Alternating adjacent-pair mesh. Odd-numbered layers (1-based) pair
/// `(0,1),(2,3),…`; even-numbered layers pair `(1,2),(3,4),…`.
pub fn tunable_plan(n: usize, capacity: usize) -> Result<Vec<RotationLayer>> {
    if n == 0 || n % 2 != 0 {
        return Err(EunnError::UnsupportedDimension {
            n,
            reason: "tunable meshes need an even, nonzero dimension",
        });
    }
    if capacity == 0 || capacity > n {
        return Err(EunnError::Config(format!(
            "capacity {capacity} outside [1, {n}] for dimension {n}"
        )));
    }
    let style_a: Vec<(usize, usize)> = (0..n / 2).map(|k| (2 * k, 2 * k + 1)).collect();
    let style_b: Vec<(usize, usize)> = (0..n / 2 - 1).map(|k| (2 * k + 1, 2 * k + 2)).collect();
    (0..capacity)
        .map(|l| {
            let pairs = if l % 2 == 0 { style_a.clone() } else { style_b.clone() };
            RotationLayer::zeros(n, pairs)
        })
        .collect()
}

/// Butterfly mesh with `log2 n` layers. Layer `i` (1-based) has span
/// `p = n / 2^i` and pairs `(2pk + j, p(2k+1) + j)` for `k < 2^{i−1}`, `j < p`
/// (0-based `j` here).
pub fn fft_plan(n: usize) -> Result<Vec<RotationLayer>> {
    if n < 2 || !n.is_power_of_two() {
        return Err(EunnError::UnsupportedDimension {
            n,
            reason: "fft meshes need a power-of-two dimension of at least 2",
        });
    }
    let depth = n.trailing_zeros() as usize;
    (1..=depth)
        .map(|i| {
            let p = n >> i;
            let mut pairs = Vec::with_capacity(n / 2);
            for k in 0..(1usize << (i - 1)) {
                for j in 0..p {
                    pairs.push((2 * p * k + j, p * (2 * k + 1) + j));
                }
            }
            RotationLayer::zeros(n, pairs)
        })
        .collect()
}

/// Dense `n × n` matrix of the layer. O(n²); for oracles and tests.
pub fn materialize_layer(layer: &RotationLayer) -> CMatrix {
    let mut m = CMatrix::identity(layer.n, layer.n);
    for (p, &(i, j)) in layer.pairs.iter().enumerate() {
        let b = rotation_block(layer.theta[p], layer.phi[p]);
        m[(i, i)] = b[0][0];
        m[(i, j)] = b[0][1];
        m[(j, i)] = b[1][0];
        m[(j, j)] = b[1][1];
    }
    m
}
