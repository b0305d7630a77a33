//! End-to-end acceptance gates. Runs without the libtest harness so the
//! criteria execute one after another (timing and training share one core)
//! and each prints a single PASS/FAIL line.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use nalgebra::DMatrix;
use num_complex::Complex64;

use eunn::bench::{run_bench, BenchConfig, TimingReport};
use eunn::cell::{EurnnCell, LossKind, SequenceBatch, SequenceModel, Targets, VanillaCell};
use eunn::experiment::{ExperimentSpec, DATA_DIR_ENV, METRICS_FILE, RESOLVED_FILE};
use eunn::optim::{train_with, TrainOutcome};
use eunn::unitary::{decompose_unitary, projective_update, reconstruct, MeshStyle, UnitaryComposition};
use eunn::{ComplexVec, Rng};

type CMat = DMatrix<Complex64>;

enum Verdict {
    Pass(String),
    Fail(String),
    Skipped(String),
}

fn verdict(ok: bool, detail: String) -> Verdict {
    if ok {
        Verdict::Pass(detail)
    } else {
        Verdict::Fail(detail)
    }
}

fn norm(x: &ComplexVec) -> f64 {
    x.re().iter().chain(x.im()).map(|v| v * v).sum::<f64>().sqrt()
}

// ---- oracles -------------------------------------------------------------

/// Haar unitary from the QR of a complex Ginibre matrix, with `R`'s diagonal
/// phases folded back into `Q`.
fn haar(n: usize, rng: &mut Rng) -> CMat {
    let g = CMat::from_fn(n, n, |_, _| Complex64::new(rng.normal(), rng.normal()));
    let qr = g.qr();
    let (mut q, r) = (qr.q(), qr.r());
    for j in 0..n {
        let d = r[(j, j)];
        let ph = if d.norm() > 0.0 { d / d.norm() } else { Complex64::new(1.0, 0.0) };
        for i in 0..n {
            q[(i, j)] *= ph;
        }
    }
    q
}

fn max_entry_diff(a: &CMat, b: &CMat) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

fn defect(w: &CMat) -> f64 {
    let n = w.nrows();
    max_entry_diff(&(w.adjoint() * w), &CMat::identity(n, n))
}

/// Dense `D F¹ … F^L`, built entry by entry from the rotation definition
/// `y_i = e^{iφ}(cos θ x_i − sin θ x_j)`, `y_j = sin θ x_i + cos θ x_j`.
fn dense_composition(w: &UnitaryComposition) -> CMat {
    let n = w.n();
    let mut m = CMat::identity(n, n);
    for layer in w.layers() {
        let mut f = CMat::identity(n, n);
        for (r, &(i, j)) in layer.pairs().iter().enumerate() {
            let (th, ph) = (layer.theta()[r], layer.phi()[r]);
            let e = Complex64::from_polar(1.0, ph);
            f[(i, i)] = e * th.cos();
            f[(i, j)] = -e * th.sin();
            f[(j, i)] = Complex64::new(th.sin(), 0.0);
            f[(j, j)] = Complex64::new(th.cos(), 0.0);
        }
        m *= f;
    }
    let d = CMat::from_diagonal(&nalgebra::DVector::from_iterator(
        n,
        w.diag().phases().iter().map(|&p| Complex64::from_polar(1.0, p)),
    ));
    d * m
}

/// Mean cross entropy of `cell` on `batch`, computed densely, plus the
/// modReLU active set (`|z| + b > 0`) at every step.
fn oracle_loss(cell: &EurnnCell, batch: &SequenceBatch) -> (f64, Vec<bool>) {
    let n = cell.n_hidden();
    let w = dense_composition(cell.w());
    let (ur, ui) = cell.u();
    let n_in = cell.n_in();
    let mut total = 0.0;
    let mut active = Vec::new();
    for b in 0..batch.batch() {
        let mut h = nalgebra::DVector::<Complex64>::zeros(n);
        for t in 0..batch.t_len() {
            let x = batch.input(t, b);
            let mut z = &w * &h;
            for r in 0..n {
                for (m, &xm) in x.iter().enumerate() {
                    z[r] += Complex64::new(ur[r * n_in + m], ui[r * n_in + m]) * xm;
                }
            }
            for r in 0..n {
                let mag = z[r].norm();
                let shifted = mag + cell.bias()[r];
                active.push(shifted > 0.0);
                h[r] = if mag > 0.0 && shifted > 0.0 { z[r] * (shifted / mag) } else { Complex64::new(0.0, 0.0) };
            }
            let logits: Vec<f64> = (0..cell.n_out())
                .map(|o| {
                    let row = &cell.v()[o * 2 * n..(o + 1) * 2 * n];
                    cell.c()[o] + (0..n).map(|k| row[k] * h[k].re + row[n + k] * h[k].im).sum::<f64>()
                })
                .collect();
            let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + logits.iter().map(|l| (l - mx).exp()).sum::<f64>().ln();
            total += lse - logits[batch.class_target(t, b)];
        }
    }
    (total / (batch.t_len() * batch.batch()) as f64, active)
}

// ---- criteria ------------------------------------------------------------

fn unitarity() -> Verdict {
    let mut rng = Rng::new(1);
    let mut worst: f64 = 0.0;
    let mut configs = Vec::new();
    for n in [64usize, 256, 1024] {
        for cap in [2, 8, n] {
            configs.push((MeshStyle::Tunable, n, cap));
        }
        configs.push((MeshStyle::Fft, n, 0));
    }
    for (style, n, cap) in configs {
        let mut w = UnitaryComposition::with_style(style, n, cap).expect("composition");
        w.randomize(&mut rng);
        let k = w.compile().expect("compile");
        for _ in 0..100 {
            let x = ComplexVec::random(n, &mut rng);
            let y = k.apply(&x).expect("apply");
            worst = worst.max((norm(&y) / norm(&x) - 1.0).abs());
        }
    }
    verdict(worst <= 1e-10, format!("max | ‖Wx‖/‖x‖ − 1 | = {worst:.2e} (tol 1e-10)"))
}

fn gradients() -> Verdict {
    let mut rng = Rng::new(2);
    let (n_in, nh, n_out, t_len, bsz) = (4, 8, 3, 5, 2);
    let mut cell = EurnnCell::new(n_in, nh, n_out, MeshStyle::Tunable, 4, &mut rng).expect("cell");
    for b in cell.bias_mut() {
        *b = rng.uniform(-0.3, 0.1);
    }
    for c in cell.c_mut() {
        *c = rng.uniform(-0.5, 0.5);
    }
    let inputs = rng.uniform_vec(t_len * bsz * n_in, -1.0, 1.0);
    let targets = (0..t_len * bsz).map(|_| rng.below(n_out)).collect();
    let batch = SequenceBatch::new(t_len, bsz, n_in, inputs, Targets::Classes(targets), None).expect("batch");

    let (loss, grads) = cell.forward_backward(&batch, LossKind::CrossEntropy).expect("backward");
    let (oracle, _) = oracle_loss(&cell, &batch);
    if (loss - oracle).abs() > 1e-10 {
        return Verdict::Fail(format!("loss {loss} differs from dense oracle {oracle}"));
    }
    let h = 1e-6;
    let mut probe = cell.clone();
    let lens: Vec<usize> = cell.params().iter().map(|p| p.len()).collect();
    let (mut worst, mut checked, mut excluded) = (0.0f64, 0usize, 0usize);
    let mut worst_name = String::new();
    let names = cell.param_names();
    for (a, &len) in lens.iter().enumerate() {
        for i in 0..len {
            let orig = probe.params()[a][i];
            probe.params_mut()[a][i] = orig + h;
            let (lp, ap) = oracle_loss(&probe, &batch);
            probe.params_mut()[a][i] = orig - h;
            let (lm, am) = oracle_loss(&probe, &batch);
            probe.params_mut()[a][i] = orig;
            if ap != am {
                excluded += 1;
                continue;
            }
            let fd = (lp - lm) / (2.0 * h);
            let an = grads[a][i];
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-4);
            checked += 1;
            if rel > worst {
                worst = rel;
                worst_name = format!("{}[{i}]", names[a]);
            }
        }
    }
    verdict(
        worst < 1e-5 && checked > 0,
        format!("{checked} parameters, {excluded} kink-adjacent excluded, worst relative error {worst:.2e} at {worst_name} (tol 1e-5)"),
    )
}

fn decomposition() -> Verdict {
    let mut rng = Rng::new(3);
    let mut worst: f64 = 0.0;
    for n in [4usize, 8, 16] {
        for _ in 0..20 {
            let m = haar(n, &mut rng);
            let rebuilt = decompose_unitary(&m).and_then(|p| reconstruct(&p));
            match rebuilt {
                Ok(r) => worst = worst.max(max_entry_diff(&r, &m)),
                Err(e) => return Verdict::Fail(format!("n={n}: {e}")),
            }
        }
    }
    verdict(worst < 1e-8, format!("60 matrices, max entry error {worst:.2e} (tol 1e-8)"))
}

fn parameter_counts() -> Verdict {
    let mut bad = Vec::new();
    for n in [2usize, 4, 8, 16, 32, 64, 128, 256, 512, 1024] {
        let tunable = UnitaryComposition::tunable(n, n).expect("tunable");
        let counted: usize = tunable.layers().iter().map(|l| l.pairs().len()).sum();
        if tunable.num_rotations() != n * (n - 1) / 2 || counted != n * (n - 1) / 2 {
            bad.push(format!("tunable n={n}: {counted}"));
        }
        let log2 = (n as f64).log2().round() as usize;
        let fft = UnitaryComposition::fft(n).expect("fft");
        let counted: usize = fft.layers().iter().map(|l| l.pairs().len()).sum();
        if fft.num_rotations() != n * log2 / 2 || counted != n * log2 / 2 {
            bad.push(format!("fft n={n}: {counted}"));
        }
    }
    let ok = bad.is_empty();
    verdict(ok, if ok { "n(n−1)/2 and n·log2(n)/2 exact for n = 2..1024".into() } else { bad.join("; ") })
}

fn copy_task() -> Verdict {
    let pairs: Vec<(String, String)> = [
        ("task", "copy"),
        ("model", "eurnn-tunable"),
        ("n_hidden", "128"),
        ("capacity", "2"),
        ("n_symbols", "8"),
        ("m_len", "10"),
        ("t_delay", "100"),
        ("lr", "0.001"),
        ("decay", "0.5"),
        ("batch_size", "128"),
        ("iters", "10000"),
        ("eval_interval", "10000"),
        ("seed", "0"),
    ]
    .iter()
    .map(|(k, v)| (k.to_string(), v.to_string()))
    .collect();
    let spec = ExperimentSpec::resolve(&pairs).expect("copy spec");
    let baseline = 10.0 * 8f64.ln() / 120.0;
    let task = spec.build_task().expect("task");
    let mut model = spec.build_model(task.n_in(), task.n_out()).expect("model");
    let (mut half_at, mut tenth_at) = (None, None);
    let run = train_with(&spec.train, &mut model, task.as_ref(), |r| {
        if half_at.is_none() && r.loss < 0.5 * baseline {
            half_at = Some(r.iter);
        }
        if r.loss < 0.1 * baseline {
            tenth_at = Some(r.iter);
            return false;
        }
        true
    });
    let run = match run {
        Ok(r) => r,
        Err(e) => return Verdict::Fail(format!("training failed: {e}")),
    };
    if let TrainOutcome::Diverged { iter, detail } = run.outcome {
        return Verdict::Fail(format!("diverged at {iter}: {detail}"));
    }
    let ok = half_at.is_some_and(|i| i < 2000) && tenth_at.is_some_and(|i| i < 10000);
    let show = |x: Option<usize>| x.map_or("never".into(), |i| (i + 1).to_string());
    verdict(
        ok,
        format!(
            "baseline {baseline:.4}; below 0.5× at iteration {} (limit 2000), below 0.1× at {} (limit 10000)",
            show(half_at),
            show(tenth_at)
        ),
    )
}

fn gradient_contrast() -> Verdict {
    let mut rng = Rng::new(6);
    let (n, t_len) = (64, 100);
    let cell = EurnnCell::new(1, n, 2, MeshStyle::Tunable, 2, &mut rng).expect("cell");
    let h0 = ComplexVec::random(n, &mut rng);
    let dh = ComplexVec::random(n, &mut rng);
    let zeros = vec![vec![0.0]; t_len];
    let e = cell.hidden_gradient_norms(&h0, &zeros, &dh).expect("eurnn norms");
    let e_ratio = e[0] / e[t_len];

    let vanilla = VanillaCell::new(1, n, 2, 0.5, &mut rng).expect("vanilla");
    let h0: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
    let dh: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
    let v = vanilla.hidden_gradient_norms(&h0, &zeros, &dh).expect("vanilla norms");
    let v_ratio = v[0] / v[t_len];
    verdict(
        (1e-2..=1e2).contains(&e_ratio) && v_ratio < 1e-6,
        format!("T=100: unitary ratio {e_ratio:.3e} (band [1e-2, 1e2]), contractive vanilla ratio {v_ratio:.3e} (< 1e-6)"),
    )
}

fn mnist_dir() -> PathBuf {
    std::env::var_os(DATA_DIR_ENV).map_or_else(|| PathBuf::from("/root/data/mnist"), PathBuf::from)
}

fn permuted_mnist() -> Verdict {
    let dir = mnist_dir();
    if !dir.join("train-images-idx3-ubyte").exists() {
        return Verdict::Skipped(format!("no MNIST files in {} (set {DATA_DIR_ENV})", dir.display()));
    }
    let pairs: Vec<(String, String)> = [
        ("task", "mnist"),
        ("model", "eurnn-tunable"),
        ("n_hidden", "128"),
        ("capacity", "2"),
        ("data_dir", dir.to_str().expect("utf-8 path")),
        ("train_size", "4000"),
        ("val_size", "1000"),
        ("downsample", "2"),
        ("perm_seed", "1"),
        ("lr", "0.001"),
        ("decay", "0.9"),
        ("batch_size", "128"),
        ("iters", "1500"),
        ("eval_interval", "100"),
        ("seed", "0"),
    ]
    .iter()
    .map(|(k, v)| (k.to_string(), v.to_string()))
    .collect();
    let spec = ExperimentSpec::resolve(&pairs).expect("mnist spec");
    let task = match spec.build_task() {
        Ok(t) => t,
        Err(e) => return Verdict::Fail(format!("loading {}: {e}", dir.display())),
    };
    let mut model = spec.build_model(task.n_in(), task.n_out()).expect("model");
    let mut best: (f64, usize) = (0.0, 0);
    let run = train_with(&spec.train, &mut model, task.as_ref(), |r| {
        if let Some(acc) = r.val_metric {
            if acc > best.0 {
                best = (acc, r.iter + 1);
            }
            return acc <= 0.85;
        }
        true
    });
    if let Err(e) = run {
        return Verdict::Fail(format!("training failed: {e}"));
    }
    verdict(
        best.0 > 0.85,
        format!(
            "4000 train / 1000 validation, 14×14 pixels; best validation accuracy {:.4} at iteration {} (> 0.85, budget 1500)",
            best.0, best.1
        ),
    )
}

/// Largest dimension whose dense `n × n` complex matrix (16 n² bytes) fits in
/// a 2 MiB L2 cache. Dense steps past it mix cache regimes and are reported
/// but not gated.
const DENSE_IN_CACHE_MAX_N: usize = 256;

fn scaling() -> Verdict {
    let cfg = BenchConfig {
        dims: vec![64, 128, 256, 512],
        capacities: vec![2, 8],
        styles: vec![MeshStyle::Tunable, MeshStyle::Fft],
        samples: 15,
        min_sample_us: 3000.0,
        dense: true,
        seed: 8,
    };
    let report = match run_bench(&cfg) {
        Ok(r) => r,
        Err(e) => return Verdict::Fail(format!("bench failed: {e}")),
    };
    let mut ok = true;
    let mut parts = Vec::new();
    let fmt = |ratios: &[f64]| ratios.iter().map(|r| format!("{r:.2}")).collect::<Vec<_>>().join(", ");
    let mut check = |label: String, ratios: Vec<f64>, lo: f64, hi: f64| {
        ok &= !ratios.is_empty() && ratios.iter().all(|r| (lo..=hi).contains(r));
        parts.push(format!("{label} [{}] in [{lo}, {hi}]", fmt(&ratios)));
    };
    for cap in [2, 8] {
        let s = report.series(MeshStyle::Tunable, Some(cap));
        check(format!("L={cap}"), TimingReport::ratios(&s, false), 1.5, 3.5);
    }
    let fft = report.series(MeshStyle::Fft, None);
    check("fft".into(), TimingReport::ratios(&fft, false), 1.6, 4.5);
    let rows = report.series(MeshStyle::Tunable, Some(2));
    let in_cache: Vec<_> = rows.iter().filter(|r| r.n <= DENSE_IN_CACHE_MAX_N).copied().collect();
    check("dense n≤256".into(), TimingReport::ratios(&in_cache, true), 3.0, 5.0);
    let crossing: Vec<_> = rows.iter().filter(|r| r.n >= DENSE_IN_CACHE_MAX_N).copied().collect();
    let info = fmt(&TimingReport::ratios(&crossing, true));
    verdict(ok, format!("n→2n over 64..512: {}; dense 256→512 (leaves L2, not gated) [{info}]", parts.join("; ")))
}

fn projective() -> Verdict {
    let mut rng = Rng::new(9);
    let mut w = haar(16, &mut rng);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let g = CMat::from_fn(16, 16, |_, _| Complex64::new(rng.normal(), rng.normal()));
        w = match projective_update(&w, &g, 1e-2) {
            Ok(w) => w,
            Err(e) => return Verdict::Fail(e.to_string()),
        };
        worst = worst.max(defect(&w));
    }
    verdict(worst < 1e-6, format!("1000 updates, max ‖W†W − I‖_max {worst:.2e} (tol 1e-6)"))
}

fn run_train(out: &Path, extra: &[&str]) -> std::io::Result<std::process::Output> {
    Command::new(env!("CARGO_BIN_EXE_eunn"))
        .arg("train")
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
}

fn determinism() -> Verdict {
    let tmp = tempfile::tempdir().expect("tempdir");
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    let flags = [
        "--task", "copy", "--n-hidden", "16", "--m-len", "3", "--t-delay", "10", "--iters", "40",
        "--batch-size", "8", "--eval-interval", "10", "--seed", "11",
    ];
    for dir in [&a, &b] {
        match run_train(dir, &flags) {
            Ok(o) if o.status.success() => {}
            Ok(o) => return Verdict::Fail(format!("train exited {:?}: {}", o.status.code(), String::from_utf8_lossy(&o.stderr))),
            Err(e) => return Verdict::Fail(format!("cannot run eunn: {e}")),
        }
    }
    let resolved = a.join(RESOLVED_FILE);
    match run_train(&c, &["--config", resolved.to_str().expect("utf-8 path")]) {
        Ok(o) if o.status.success() => {}
        Ok(o) => return Verdict::Fail(format!("rerun exited {:?}: {}", o.status.code(), String::from_utf8_lossy(&o.stderr))),
        Err(e) => return Verdict::Fail(format!("cannot run eunn: {e}")),
    }
    let read = |d: &Path| std::fs::read(d.join(METRICS_FILE)).unwrap_or_default();
    let (ma, mb, mc) = (read(&a), read(&b), read(&c));
    verdict(
        !ma.is_empty() && ma == mb && ma == mc,
        format!("metrics.csv ({} bytes) identical across two runs and a rerun from config.resolved", ma.len()),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Verdict); 10] = [
        ("1 unitarity", unitarity),
        ("2 gradient check", gradients),
        ("3 decomposition round-trip", decomposition),
        ("4 parameter counts", parameter_counts),
        ("5 copy task", copy_task),
        ("6 gradient contrast", gradient_contrast),
        ("7 permuted MNIST", permuted_mnist),
        ("8 complexity scaling", scaling),
        ("9 projective updates", projective),
        ("10 determinism", determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, f) in criteria {
        if !filter.is_empty() && !filter.iter().any(|p| name.contains(p.as_str())) {
            continue;
        }
        let t = Instant::now();
        let v = f();
        let secs = t.elapsed().as_secs_f64();
        let (tag, detail) = match v {
            Verdict::Pass(d) => ("PASS", d),
            Verdict::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Verdict::Skipped(d) => ("SKIPPED", d),
        };
        println!("{tag:7} criterion {name}: {detail} [{secs:.1}s]");
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
