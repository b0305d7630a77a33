//! Invariant suite behind the `verify` command. Every check runs at fixed
//! seeds and reports the worst observed error next to its tolerance.

use std::time::Instant;

use crate::cell::{EurnnCell, LossKind, Model, SequenceBatch, SequenceModel, Targets, VanillaCell};
use crate::dense::{haar_unitary, matvec, max_abs_diff, unitarity_defect};
use crate::error::Result;
use crate::formats::{parse_checkpoint, write_checkpoint};
use crate::unitary::{backward, decompose_unitary, materialize, projective_update, reconstruct, MeshStyle, UnitaryComposition};
use crate::{ComplexVec, Rng};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct VerifyOptions {
    /// Corrupt one rotation kernel before the unitarity check, which must
    /// then fail.
    pub inject_fault: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub millis: f64,
}

fn check(name: &'static str, f: impl FnOnce() -> Result<(bool, String)>) -> CheckResult {
    let t = Instant::now();
    let (passed, detail) = match f() {
        Ok(r) => r,
        Err(e) => (false, format!("error: {e}")),
    };
    CheckResult {
        name,
        passed,
        detail,
        millis: t.elapsed().as_secs_f64() * 1e3,
    }
}

fn within(worst: f64, tol: f64) -> (bool, String) {
    (worst <= tol, format!("worst {worst:.3e} (tolerance {tol:.0e})"))
}

fn unitarity(inject_fault: bool) -> Result<(bool, String)> {
    let mut rng = Rng::new(101);
    let mut worst: f64 = 0.0;
    let mut shapes = Vec::new();
    for n in [64, 256] {
        for l in [2, 8, n] {
            shapes.push(UnitaryComposition::tunable(n, l)?);
        }
        shapes.push(UnitaryComposition::fft(n)?);
    }
    for (idx, mut w) in shapes.into_iter().enumerate() {
        w.randomize(&mut rng);
        let mut k = w.compile()?;
        if inject_fault && idx == 0 {
            k.kernels_mut()[0].corrupt_for_testing(3, 1.5);
        }
        for _ in 0..20 {
            let x = ComplexVec::random(w.n(), &mut rng);
            let y = k.apply(&x)?;
            worst = worst.max((y.norm2() / x.norm2() - 1.0).abs());
        }
    }
    Ok(within(worst, 1e-10))
}

fn dense_agreement() -> Result<(bool, String)> {
    let mut rng = Rng::new(102);
    let mut worst: f64 = 0.0;
    for mut w in [UnitaryComposition::tunable(16, 16)?, UnitaryComposition::fft(16)?] {
        w.randomize(&mut rng);
        let m = materialize(&w);
        worst = worst.max(unitarity_defect(&m));
        for _ in 0..5 {
            let x = ComplexVec::random(16, &mut rng);
            worst = worst.max(crate::unitary::apply(&w, &x)?.max_abs_diff(&matvec(&m, &x)?));
        }
    }
    Ok(within(worst, 1e-12))
}

fn rel_err(a: f64, f: f64) -> f64 {
    (a - f).abs() / a.abs().max(f.abs()).max(1e-4)
}

fn angle_mut(w: &mut UnitaryComposition, l: usize, p: usize, which: usize) -> &mut f64 {
    let (t, f) = w.layers_mut()[l].angles_mut();
    if which == 0 {
        &mut t[p]
    } else {
        &mut f[p]
    }
}

fn composition_gradient() -> Result<(bool, String)> {
    let mut rng = Rng::new(103);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for mut w in [UnitaryComposition::tunable(8, 8)?, UnitaryComposition::fft(8)?] {
        w.randomize(&mut rng);
        let x = ComplexVec::random(8, &mut rng);
        let c = ComplexVec::random(8, &mut rng);
        // L = Re <c, W x>, so dL/dy = c
        let loss = |w: &UnitaryComposition| -> Result<f64> {
            let y = crate::unitary::apply(w, &x)?;
            Ok((0..8).map(|i| c.re()[i] * y.re()[i] + c.im()[i] * y.im()[i]).sum())
        };
        let (_, grad) = backward(&w, &x, &c)?;
        for l in 0..w.capacity() {
            for p in 0..w.layers()[l].num_rotations() {
                for which in 0..2 {
                    let mut probe = w.clone();
                    let orig = *angle_mut(&mut probe, l, p, which);
                    *angle_mut(&mut probe, l, p, which) = orig + h;
                    let lp = loss(&probe)?;
                    *angle_mut(&mut probe, l, p, which) = orig - h;
                    let lm = loss(&probe)?;
                    let an = if which == 0 { grad.layers[l].d_theta[p] } else { grad.layers[l].d_phi[p] };
                    worst = worst.max(rel_err(an, (lp - lm) / (2.0 * h)));
                }
            }
        }
        for j in 0..8 {
            let mut probe = w.clone();
            probe.diag_mut().phases_mut()[j] += h;
            let lp = loss(&probe)?;
            probe.diag_mut().phases_mut()[j] -= 2.0 * h;
            let lm = loss(&probe)?;
            worst = worst.max(rel_err(grad.d_phase[j], (lp - lm) / (2.0 * h)));
        }
    }
    Ok(within(worst, 1e-5))
}

fn toy_batch(rng: &mut Rng, t_len: usize, bsz: usize, n_in: usize, n_out: usize) -> Result<SequenceBatch> {
    let inputs = rng.uniform_vec(t_len * bsz * n_in, -1.0, 1.0);
    let targets = (0..t_len * bsz).map(|_| rng.below(n_out)).collect();
    SequenceBatch::new(t_len, bsz, n_in, inputs, Targets::Classes(targets), None)
}

fn cell_gradient() -> Result<(bool, String)> {
    let mut rng = Rng::new(104);
    let cell = EurnnCell::new(4, 8, 3, MeshStyle::Tunable, 4, &mut rng)?;
    let batch = toy_batch(&mut rng, 5, 2, 4, 3)?;
    let (_, grads) = cell.forward_backward(&batch, LossKind::CrossEntropy)?;
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    let mut probe = cell.clone();
    let lens: Vec<usize> = cell.params().iter().map(|p| p.len()).collect();
    for (a, &len) in lens.iter().enumerate() {
        for i in 0..len {
            let orig = probe.params()[a][i];
            probe.params_mut()[a][i] = orig + h;
            let lp = probe.evaluate(&batch, LossKind::CrossEntropy)?.loss;
            probe.params_mut()[a][i] = orig - h;
            let lm = probe.evaluate(&batch, LossKind::CrossEntropy)?.loss;
            probe.params_mut()[a][i] = orig;
            worst = worst.max(rel_err(grads[a][i], (lp - lm) / (2.0 * h)));
        }
    }
    Ok(within(worst, 1e-5))
}

fn decomposition() -> Result<(bool, String)> {
    let mut rng = Rng::new(105);
    let mut worst: f64 = 0.0;
    for n in [4, 8, 16] {
        for _ in 0..5 {
            let m = haar_unitary(n, &mut rng)?;
            worst = worst.max(max_abs_diff(&reconstruct(&decompose_unitary(&m)?)?, &m));
        }
    }
    Ok(within(worst, 1e-8))
}

fn parameter_counts() -> Result<(bool, String)> {
    let mut bad = Vec::new();
    for n in [2usize, 4, 8, 16, 64, 256] {
        let t = UnitaryComposition::tunable(n, n)?.num_rotations();
        if t != n * (n - 1) / 2 {
            bad.push(format!("tunable n={n}: {t}"));
        }
        let f = UnitaryComposition::fft(n)?.num_rotations();
        if f != n * n.trailing_zeros() as usize / 2 {
            bad.push(format!("fft n={n}: {f}"));
        }
    }
    Ok((bad.is_empty(), if bad.is_empty() { "exact".into() } else { bad.join("; ") }))
}

fn projective() -> Result<(bool, String)> {
    let mut rng = Rng::new(106);
    let mut w = haar_unitary(16, &mut rng)?;
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let g = crate::dense::CMatrix::from_fn(16, 16, |_, _| num_complex::Complex64::new(rng.normal(), rng.normal()));
        w = projective_update(&w, &g, 1e-2)?;
        worst = worst.max(unitarity_defect(&w));
    }
    Ok(within(worst, 1e-6))
}

fn norm_conservation() -> Result<(bool, String)> {
    let mut rng = Rng::new(107);
    let cell = EurnnCell::new(2, 32, 2, MeshStyle::Tunable, 4, &mut rng)?;
    let mut h = ComplexVec::random(32, &mut rng);
    let n0 = h.norm2();
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        h = cell.cell_forward(&[0.0, 0.0], &h)?.0;
        worst = worst.max((h.norm2() / n0 - 1.0).abs());
    }
    Ok(within(worst, 1e-10))
}

fn gradient_contrast() -> Result<(bool, String)> {
    let mut rng = Rng::new(108);
    let t_len = 100;
    let eurnn = EurnnCell::new(2, 16, 2, MeshStyle::Tunable, 4, &mut rng)?;
    let h0 = ComplexVec::random(16, &mut rng);
    let dh = ComplexVec::random(16, &mut rng);
    let e = eurnn.hidden_gradient_norms(&h0, &vec![vec![0.0; 2]; t_len], &dh)?;
    let vanilla = VanillaCell::new(2, 16, 2, 0.5, &mut rng)?;
    let dv: Vec<f64> = (0..16).map(|_| rng.normal()).collect();
    let v = vanilla.hidden_gradient_norms(&[0.0; 16], &vec![vec![0.0; 2]; t_len], &dv)?;
    let (re, rv) = (e[0] / e[t_len], v[0] / v[t_len]);
    Ok((
        (1e-2..=1e2).contains(&re) && rv < 1e-6,
        format!("unitary ratio {re:.3e}, contractive ratio {rv:.3e}"),
    ))
}

fn checkpoint_round_trip() -> Result<(bool, String)> {
    let mut rng = Rng::new(109);
    let models = [
        Model::Eurnn(EurnnCell::new(3, 8, 4, MeshStyle::Fft, 3, &mut rng)?),
        Model::Vanilla(VanillaCell::new(3, 8, 4, 0.9, &mut rng)?),
    ];
    for m in &models {
        if parse_checkpoint(&write_checkpoint(m), "<memory>")? != *m {
            return Ok((false, "reloaded parameters differ".into()));
        }
    }
    Ok((true, "bit-exact".into()))
}

pub fn run_verify(opts: &VerifyOptions) -> Vec<CheckResult> {
    vec![
        check("unitarity", || unitarity(opts.inject_fault)),
        check("dense agreement", dense_agreement),
        check("composition gradient", composition_gradient),
        check("cell gradient", cell_gradient),
        check("decomposition round-trip", decomposition),
        check("parameter counts", parameter_counts),
        check("projective update", projective),
        check("norm conservation", norm_conservation),
        check("gradient contrast", gradient_contrast),
        check("checkpoint round-trip", checkpoint_round_trip),
    ]
}

pub fn format_table(results: &[CheckResult]) -> String {
    let width = results.iter().map(|r| r.name.len()).max().unwrap_or(0);
    let mut out = String::new();
    for r in results {
        out.push_str(&format!(
            "{:<width$}  {}  {:>9.1} ms  {}\n",
            r.name,
            if r.passed { "PASS" } else { "FAIL" },
            r.millis,
            r.detail
        ));
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    out.push_str(&format!("{} checks, {failed} failed\n", results.len()));
    out
}
