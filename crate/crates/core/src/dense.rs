//! Small dense complex matrices: test oracles, Haar sampling, and the
//! projective baseline. Nothing here is on the O(N) hot path.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::complex::ComplexVec;
use crate::error::{check_len, EunnError, Result};
use crate::Rng;

pub type CMatrix = DMatrix<Complex64>;

/// Haar-distributed `n × n` unitary: QR of a complex Ginibre matrix with the
/// phases of `R`'s diagonal folded back into `Q`.
pub fn haar_unitary(n: usize, rng: &mut Rng) -> Result<CMatrix> {
    if n == 0 {
        return Err(EunnError::dim("haar_unitary requires n >= 1"));
    }
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let z = CMatrix::from_fn(n, n, |_, _| Complex64::new(rng.normal() * s, rng.normal() * s));
    let qr = z.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        let d = r[(j, j)];
        let ph = if d.norm() > 0.0 {
            d / d.norm()
        } else {
            Complex64::new(1.0, 0.0)
        };
        for i in 0..n {
            q[(i, j)] *= ph;
        }
    }
    Ok(q)
}

/// `max |(M†M − I)_ij|`.
pub fn unitarity_defect(m: &CMatrix) -> f64 {
    let g = m.adjoint() * m;
    let n = g.nrows();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in 0..g.ncols() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g[(i, j)] - Complex64::new(target, 0.0)).norm());
        }
    }
    worst
}

pub fn max_abs_diff(a: &CMatrix, b: &CMatrix) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

pub fn matvec(m: &CMatrix, x: &ComplexVec) -> Result<ComplexVec> {
    check_len("matvec input", m.ncols(), x.len())?;
    let xs = x.to_complex();
    let mut out = vec![Complex64::new(0.0, 0.0); m.nrows()];
    for (i, o) in out.iter_mut().enumerate() {
        for (j, xj) in xs.iter().enumerate() {
            *o += m[(i, j)] * xj;
        }
    }
    Ok(ComplexVec::from_complex(&out))
}

pub fn identity(n: usize) -> CMatrix {
    CMatrix::identity(n, n)
}
