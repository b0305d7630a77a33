//! Complex vectors in split (structure-of-arrays) storage and the element-wise
//! kernels the rotation layers are built from.

use num_complex::Complex64;

use crate::error::{check_len, EunnError, Result};

/// Complex vector stored as separate real and imaginary planes.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexVec {
    re: Vec<f64>,
    im: Vec<f64>,
}

impl ComplexVec {
    pub fn zeros(n: usize) -> Self {
        Self {
            re: vec![0.0; n],
            im: vec![0.0; n],
        }
    }

    pub fn from_parts(re: Vec<f64>, im: Vec<f64>) -> Result<Self> {
        check_len("imaginary plane", re.len(), im.len())?;
        Ok(Self { re, im })
    }

    pub fn from_real(re: Vec<f64>) -> Self {
        let im = vec![0.0; re.len()];
        Self { re, im }
    }

    pub fn from_complex(values: &[Complex64]) -> Self {
        Self {
            re: values.iter().map(|z| z.re).collect(),
            im: values.iter().map(|z| z.im).collect(),
        }
    }

    pub fn to_complex(&self) -> Vec<Complex64> {
        self.re
            .iter()
            .zip(&self.im)
            .map(|(&r, &i)| Complex64::new(r, i))
            .collect()
    }

    /// Standard complex Gaussian entries, `(N(0,1) + i N(0,1)) / sqrt(2)`.
    pub fn random(n: usize, rng: &mut crate::Rng) -> Self {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let mut v = Self::zeros(n);
        for k in 0..n {
            v.re[k] = rng.normal() * s;
            v.im[k] = rng.normal() * s;
        }
        v
    }

    pub fn len(&self) -> usize {
        self.re.len()
    }

    pub fn is_empty(&self) -> bool {
        self.re.is_empty()
    }

    pub fn re(&self) -> &[f64] {
        &self.re
    }

    pub fn im(&self) -> &[f64] {
        &self.im
    }

    pub fn re_mut(&mut self) -> &mut [f64] {
        &mut self.re
    }

    pub fn im_mut(&mut self) -> &mut [f64] {
        &mut self.im
    }

    pub fn planes_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (&mut self.re, &mut self.im)
    }

    pub fn get(&self, i: usize) -> Complex64 {
        Complex64::new(self.re[i], self.im[i])
    }

    pub fn set(&mut self, i: usize, z: Complex64) {
        self.re[i] = z.re;
        self.im[i] = z.im;
    }

    pub fn norm2(&self) -> f64 {
        norm2(self)
    }

    pub fn is_finite(&self) -> bool {
        self.re.iter().chain(&self.im).all(|v| v.is_finite())
    }

    /// `self += other`, element-wise.
    pub fn add_assign(&mut self, other: &ComplexVec) -> Result<()> {
        check_len("add_assign operand", self.len(), other.len())?;
        for (a, b) in self.re.iter_mut().zip(&other.re) {
            *a += b;
        }
        for (a, b) in self.im.iter_mut().zip(&other.im) {
            *a += b;
        }
        Ok(())
    }

    pub fn max_abs_diff(&self, other: &ComplexVec) -> f64 {
        assert_eq!(self.len(), other.len());
        (0..self.len())
            .map(|k| (self.get(k) - other.get(k)).norm())
            .fold(0.0, f64::max)
    }
}

/// Bijection on `0..n` together with its inverse.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PermutationPlan {
    forward: Vec<usize>,
    inverse: Vec<usize>,
}

impl PermutationPlan {
    pub fn new(forward: Vec<usize>) -> Result<Self> {
        let n = forward.len();
        let mut inverse = vec![usize::MAX; n];
        for (i, &f) in forward.iter().enumerate() {
            if f >= n {
                return Err(EunnError::InvalidPlan(format!(
                    "permutation index {f} out of range for length {n}"
                )));
            }
            if inverse[f] != usize::MAX {
                return Err(EunnError::InvalidPlan(format!(
                    "permutation maps two positions to index {f}"
                )));
            }
            inverse[f] = i;
        }
        Ok(Self { forward, inverse })
    }

    pub fn identity(n: usize) -> Self {
        let forward: Vec<usize> = (0..n).collect();
        Self {
            inverse: forward.clone(),
            forward,
        }
    }

    pub fn len(&self) -> usize {
        self.forward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forward.is_empty()
    }

    pub fn forward(&self) -> &[usize] {
        &self.forward
    }

    pub fn inverse(&self) -> &[usize] {
        &self.inverse
    }

    pub fn inverted(&self) -> PermutationPlan {
        PermutationPlan {
            forward: self.inverse.clone(),
            inverse: self.forward.clone(),
        }
    }
}

/// `acc + a ⊙ b`, complex element-wise; the product is formed first, then added.
pub fn cmul_accumulate(a: &ComplexVec, b: &ComplexVec, acc: &ComplexVec) -> Result<ComplexVec> {
    check_len("cmul_accumulate b", a.len(), b.len())?;
    check_len("cmul_accumulate acc", a.len(), acc.len())?;
    let mut out = acc.clone();
    for k in 0..a.len() {
        let pr = a.re[k] * b.re[k] - a.im[k] * b.im[k];
        let pi = a.re[k] * b.im[k] + a.im[k] * b.re[k];
        out.re[k] += pr;
        out.im[k] += pi;
    }
    Ok(out)
}

/// `out[i] = x[forward[i]]`.
pub fn permute(x: &ComplexVec, plan: &PermutationPlan) -> Result<ComplexVec> {
    check_len("permute input", plan.len(), x.len())?;
    let mut out = ComplexVec::zeros(x.len());
    for (i, &src) in plan.forward.iter().enumerate() {
        out.re[i] = x.re[src];
        out.im[i] = x.im[src];
    }
    Ok(out)
}

/// Gathers through the inverse map, undoing [`permute`].
pub fn permute_inverse(x: &ComplexVec, plan: &PermutationPlan) -> Result<ComplexVec> {
    check_len("permute input", plan.len(), x.len())?;
    let mut out = ComplexVec::zeros(x.len());
    for (i, &src) in plan.inverse.iter().enumerate() {
        out.re[i] = x.re[src];
        out.im[i] = x.im[src];
    }
    Ok(out)
}

pub fn norm2(x: &ComplexVec) -> f64 {
    x.re.iter()
        .zip(&x.im)
        .map(|(r, i)| r * r + i * i)
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Rng;

    fn cv(values: &[(f64, f64)]) -> ComplexVec {
        ComplexVec::from_parts(
            values.iter().map(|v| v.0).collect(),
            values.iter().map(|v| v.1).collect(),
        )
        .unwrap()
    }

    #[test]
    fn cmul_small_case() {
        let a = cv(&[(1.0, 0.0), (0.0, 1.0)]);
        let b = cv(&[(2.0, 0.0), (3.0, 0.0)]);
        let out = cmul_accumulate(&a, &b, &ComplexVec::zeros(2)).unwrap();
        assert_eq!(out, cv(&[(2.0, 0.0), (0.0, 3.0)]));
    }

    #[test]
    fn cmul_zero_operand_returns_acc() {
        let mut rng = Rng::new(1);
        let b = ComplexVec::random(16, &mut rng);
        let c = ComplexVec::random(16, &mut rng);
        let out = cmul_accumulate(&ComplexVec::zeros(16), &b, &c).unwrap();
        assert_eq!(out, c);
    }

    #[test]
    fn cmul_matches_scalar_loop_bitwise() {
        let mut rng = Rng::new(2);
        let a = ComplexVec::random(64, &mut rng);
        let b = ComplexVec::random(64, &mut rng);
        let acc = ComplexVec::random(64, &mut rng);
        let out = cmul_accumulate(&a, &b, &acc).unwrap();
        for k in 0..64 {
            let (ar, ai) = (a.re()[k], a.im()[k]);
            let (br, bi) = (b.re()[k], b.im()[k]);
            let re = acc.re()[k] + (ar * br - ai * bi);
            let im = acc.im()[k] + (ar * bi + ai * br);
            assert_eq!(out.re()[k].to_bits(), re.to_bits());
            assert_eq!(out.im()[k].to_bits(), im.to_bits());
        }
    }

    #[test]
    fn cmul_length_mismatch() {
        let err = cmul_accumulate(&ComplexVec::zeros(2), &ComplexVec::zeros(3), &ComplexVec::zeros(2));
        assert!(matches!(err, Err(EunnError::Dimension(_))));
    }

    #[test]
    fn permute_adjacent_swap() {
        let x = cv(&[(1.0, 0.0), (2.0, 0.0), (3.0, 0.0), (4.0, 0.0)]);
        let p = PermutationPlan::new(vec![1, 0, 3, 2]).unwrap();
        assert_eq!(
            permute(&x, &p).unwrap(),
            cv(&[(2.0, 0.0), (1.0, 0.0), (4.0, 0.0), (3.0, 0.0)])
        );
        assert_eq!(permute(&x, &PermutationPlan::identity(4)).unwrap(), x);
    }

    #[test]
    fn permute_round_trip_bit_exact() {
        let mut rng = Rng::new(5);
        let x = ComplexVec::random(128, &mut rng);
        let p = PermutationPlan::new(rng.permutation(128)).unwrap();
        let y = permute(&x, &p).unwrap();
        assert_eq!(permute_inverse(&y, &p).unwrap(), x);
        assert_eq!(permute(&y, &p.inverted()).unwrap(), x);
        for i in 0..128 {
            assert_eq!(p.inverse()[p.forward()[i]], i);
        }
    }

    #[test]
    fn permutation_rejects_non_bijection() {
        assert!(PermutationPlan::new(vec![0, 0, 1]).is_err());
        assert!(PermutationPlan::new(vec![0, 3, 1]).is_err());
    }

    #[test]
    fn norm_values() {
        assert_eq!(norm2(&cv(&[(3.0, 0.0), (0.0, 4.0)])), 5.0);
        assert_eq!(norm2(&ComplexVec::zeros(7)), 0.0);
        let mut rng = Rng::new(9);
        let x = ComplexVec::random(100, &mut rng);
        let mut s = 0.0;
        for k in 0..100 {
            s += x.get(k).norm_sqr();
        }
        let n = norm2(&x);
        assert!(((n * n) - s).abs() / s < 1e-14);
    }

    #[test]
    fn mismatched_planes_rejected() {
        assert!(ComplexVec::from_parts(vec![1.0], vec![]).is_err());
    }
}
