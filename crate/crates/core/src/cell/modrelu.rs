//! modReLU: `z_i / |z_i| · ReLU(|z_i| + b_i)`.
//!
//! Magnitudes are shifted by the bias and clipped at zero while phases are
//! kept. For real `z` this is `sign(z) · ReLU(|z| + b)`, which is the same
//! formula restricted to the real axis, so there is no separate real variant.
//! At `z_i = 0` the phase is undefined; output and gradient are both 0 there.

use crate::complex::ComplexVec;
use crate::error::{check_len, Result};

pub fn modrelu(z: &ComplexVec, b: &[f64]) -> Result<ComplexVec> {
    check_len("modrelu bias", z.len(), b.len())?;
    let mut out = ComplexVec::zeros(z.len());
    modrelu_into(z, b, &mut out);
    Ok(out)
}

pub(crate) fn modrelu_into(z: &ComplexVec, b: &[f64], out: &mut ComplexVec) {
    let (zr, zi) = (z.re(), z.im());
    let (or, oi) = out.planes_mut();
    for k in 0..b.len() {
        let r = (zr[k] * zr[k] + zi[k] * zi[k]).sqrt();
        let shifted = r + b[k];
        if r > 0.0 && shifted > 0.0 {
            let s = shifted / r;
            or[k] = zr[k] * s;
            oi[k] = zi[k] * s;
        } else {
            or[k] = 0.0;
            oi[k] = 0.0;
        }
    }
}

/// Cotangents of `z` and `b` given the output cotangent `dy`.
///
/// On active coordinates, with `u = z/|z|`, the cotangent splits into a radial
/// part `Re(conj(dy) u)` passed through unchanged (and equal to `db`) and a
/// tangential part scaled by `(|z| + b)/|z|`.
pub fn modrelu_backward(z: &ComplexVec, b: &[f64], dy: &ComplexVec) -> Result<(ComplexVec, Vec<f64>)> {
    check_len("modrelu bias", z.len(), b.len())?;
    check_len("modrelu cotangent", z.len(), dy.len())?;
    let mut dz = ComplexVec::zeros(z.len());
    let mut db = vec![0.0; z.len()];
    modrelu_backward_into(z, b, dy, &mut dz, &mut db);
    Ok((dz, db))
}

/// Writes `dz` and adds into `db`.
pub(crate) fn modrelu_backward_into(
    z: &ComplexVec,
    b: &[f64],
    dy: &ComplexVec,
    dz: &mut ComplexVec,
    db: &mut [f64],
) {
    let (zr, zi) = (z.re(), z.im());
    let (gr, gi) = (dy.re(), dy.im());
    let (dr, di) = dz.planes_mut();
    for k in 0..b.len() {
        let r = (zr[k] * zr[k] + zi[k] * zi[k]).sqrt();
        let shifted = r + b[k];
        if r > 0.0 && shifted > 0.0 {
            let (ur, ui) = (zr[k] / r, zi[k] / r);
            let radial = gr[k] * ur + gi[k] * ui;
            let tangential = gi[k] * ur - gr[k] * ui;
            let s = shifted / r;
            // radial·u + s·tangential·(i u)
            dr[k] = radial * ur - s * tangential * ui;
            di[k] = radial * ui + s * tangential * ur;
            db[k] += radial;
        } else {
            dr[k] = 0.0;
            di[k] = 0.0;
        }
    }
}
