use std::ffi::CStr;
use std::ptr;

use eunn_ffi::*;

fn last_error() -> String {
    let p = eunn_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

struct Composition(*mut EunnComposition);

impl Composition {
    fn new(style: EunnMeshStyle, n: usize, capacity: usize, seed: u64) -> Self {
        let mut h = ptr::null_mut();
        let st = unsafe { eunn_composition_new(style, n, capacity, seed, &mut h) };
        assert_eq!(st, EunnStatus::Ok);
        assert!(!h.is_null());
        Composition(h)
    }

    fn apply(&self, xr: &[f64], xi: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = xr.len();
        let (mut yr, mut yi) = (vec![0.0; n], vec![0.0; n]);
        let st = unsafe { eunn_composition_apply(self.0, xr.as_ptr(), xi.as_ptr(), yr.as_mut_ptr(), yi.as_mut_ptr(), n) };
        assert_eq!(st, EunnStatus::Ok);
        (yr, yi)
    }

    fn params(&self) -> Vec<f64> {
        let len = unsafe { eunn_composition_num_params(self.0) };
        let mut p = vec![0.0; len];
        assert_eq!(unsafe { eunn_composition_get_params(self.0, p.as_mut_ptr(), len) }, EunnStatus::Ok);
        p
    }

    fn set_params(&self, p: &[f64]) {
        assert_eq!(unsafe { eunn_composition_set_params(self.0, p.as_ptr(), p.len()) }, EunnStatus::Ok);
    }
}

impl Drop for Composition {
    fn drop(&mut self) {
        unsafe { eunn_composition_free(self.0) }
    }
}

fn vectors(n: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    let mut next = || {
        s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
    };
    let re = (0..n).map(|_| next()).collect();
    let im = (0..n).map(|_| next()).collect();
    (re, im)
}

fn norm(re: &[f64], im: &[f64]) -> f64 {
    re.iter().chain(im).map(|v| v * v).sum::<f64>().sqrt()
}

#[test]
fn apply_preserves_norm_and_matches_matrix() {
    for (style, n, cap) in [(EunnMeshStyle::Tunable, 8, 3), (EunnMeshStyle::Fft, 16, 0)] {
        let c = Composition::new(style, n, cap, 4);
        assert_eq!(unsafe { eunn_composition_dim(c.0) }, n);
        let (xr, xi) = vectors(n, 1);
        let (yr, yi) = c.apply(&xr, &xi);
        assert!((norm(&yr, &yi) / norm(&xr, &xi) - 1.0).abs() < 1e-12);

        let (mut mr, mut mi) = (vec![0.0; n * n], vec![0.0; n * n]);
        let st = unsafe { eunn_composition_materialize(c.0, mr.as_mut_ptr(), mi.as_mut_ptr(), n) };
        assert_eq!(st, EunnStatus::Ok);
        for r in 0..n {
            let (mut ar, mut ai) = (0.0, 0.0);
            for k in 0..n {
                let (a, b) = (mr[r * n + k], mi[r * n + k]);
                ar += a * xr[k] - b * xi[k];
                ai += a * xi[k] + b * xr[k];
            }
            assert!((ar - yr[r]).abs() < 1e-12 && (ai - yi[r]).abs() < 1e-12);
        }
    }
}

#[test]
fn backward_matches_finite_differences() {
    let n = 8;
    let c = Composition::new(EunnMeshStyle::Tunable, n, 4, 9);
    assert_eq!(unsafe { eunn_composition_capacity(c.0) }, 4);
    let (xr, xi) = vectors(n, 2);
    let (gr, gi) = vectors(n, 3);
    // loss = Re <g, W x>, so dL/dy = g
    let loss = |c: &Composition| {
        let (yr, yi) = c.apply(&xr, &xi);
        (0..n).map(|k| gr[k] * yr[k] + gi[k] * yi[k]).sum::<f64>()
    };
    let len = unsafe { eunn_composition_num_params(c.0) };
    // layers alternate 4 and 3 pairs at n = 8
    assert_eq!(len, 2 * (4 + 3 + 4 + 3) + n);
    let (mut dxr, mut dxi, mut grad) = (vec![0.0; n], vec![0.0; n], vec![0.0; len]);
    let st = unsafe {
        eunn_composition_backward(
            c.0,
            xr.as_ptr(),
            xi.as_ptr(),
            gr.as_ptr(),
            gi.as_ptr(),
            dxr.as_mut_ptr(),
            dxi.as_mut_ptr(),
            n,
            grad.as_mut_ptr(),
            len,
        )
    };
    assert_eq!(st, EunnStatus::Ok);
    // W is unitary, so ‖W† g‖ = ‖g‖
    assert!((norm(&dxr, &dxi) - norm(&gr, &gi)).abs() < 1e-12);

    let p0 = c.params();
    let h = 1e-6;
    for k in 0..len {
        let mut p = p0.clone();
        p[k] += h;
        c.set_params(&p);
        let lp = loss(&c);
        p[k] -= 2.0 * h;
        c.set_params(&p);
        let lm = loss(&c);
        let fd = (lp - lm) / (2.0 * h);
        assert!((fd - grad[k]).abs() < 1e-7, "param {k}: fd {fd} analytic {}", grad[k]);
    }
    c.set_params(&p0);
    assert_eq!(c.params(), p0);
}

#[test]
fn decompose_round_trip() {
    let n = 6;
    let c = Composition::new(EunnMeshStyle::Tunable, n, n, 11);
    let (mut mr, mut mi) = (vec![0.0; n * n], vec![0.0; n * n]);
    assert_eq!(unsafe { eunn_composition_materialize(c.0, mr.as_mut_ptr(), mi.as_mut_ptr(), n) }, EunnStatus::Ok);

    let mut p = ptr::null_mut();
    assert_eq!(unsafe { eunn_decompose(mr.as_ptr(), mi.as_ptr(), n, &mut p) }, EunnStatus::Ok);
    assert_eq!(unsafe { eunn_program_dim(p) }, n);
    assert_eq!(unsafe { eunn_program_num_rotations(p) }, n * (n - 1) / 2);
    let (mut rr, mut ri) = (vec![0.0; n * n], vec![0.0; n * n]);
    assert_eq!(unsafe { eunn_program_reconstruct(p, rr.as_mut_ptr(), ri.as_mut_ptr(), n) }, EunnStatus::Ok);
    unsafe { eunn_program_free(p) };
    for k in 0..n * n {
        assert!((rr[k] - mr[k]).abs() < 1e-10 && (ri[k] - mi[k]).abs() < 1e-10);
    }
}

#[test]
fn non_unitary_input_is_rejected() {
    let (re, im) = ([1.0, 1.0, 0.0, 1.0], [0.0; 4]);
    let mut p = ptr::null_mut();
    let st = unsafe { eunn_decompose(re.as_ptr(), im.as_ptr(), 2, &mut p) };
    assert_eq!(st, EunnStatus::InvalidArgument);
    assert!(p.is_null());
    assert!(last_error().contains("unitary"), "{}", last_error());
}

#[test]
fn errors_are_reported() {
    let mut h = ptr::null_mut();
    let st = unsafe { eunn_composition_new(EunnMeshStyle::Fft, 12, 0, 0, &mut h) };
    assert_eq!(st, EunnStatus::InvalidArgument);
    assert!(h.is_null());
    assert!(last_error().contains("12"));

    let st = unsafe { eunn_composition_new(EunnMeshStyle::Tunable, 4, 2, 0, ptr::null_mut()) };
    assert_eq!(st, EunnStatus::NullPointer);

    let c = Composition::new(EunnMeshStyle::Tunable, 4, 2, 0);
    let x = [0.0; 4];
    let (mut yr, mut yi) = ([0.0; 4], [0.0; 4]);
    let st = unsafe { eunn_composition_apply(c.0, x.as_ptr(), ptr::null(), yr.as_mut_ptr(), yi.as_mut_ptr(), 4) };
    assert_eq!(st, EunnStatus::NullPointer);
    let st = unsafe { eunn_composition_apply(c.0, x.as_ptr(), x.as_ptr(), yr.as_mut_ptr(), yi.as_mut_ptr(), 3) };
    assert_eq!(st, EunnStatus::InvalidArgument);
    let st = unsafe { eunn_composition_apply(ptr::null(), x.as_ptr(), x.as_ptr(), yr.as_mut_ptr(), yi.as_mut_ptr(), 4) };
    assert_eq!(st, EunnStatus::NullPointer);

    let mut p = c.params();
    p[0] = f64::NAN;
    let st = unsafe { eunn_composition_set_params(c.0, p.as_ptr(), p.len()) };
    assert_eq!(st, EunnStatus::InvalidArgument);
    assert!(c.params()[0].is_finite());

    // success clears the message
    c.apply(&x, &x);
    assert!(eunn_last_error_message().is_null());
    assert_eq!(unsafe { eunn_composition_dim(ptr::null()) }, 0);
    unsafe { eunn_composition_free(ptr::null_mut()) };
    unsafe { eunn_program_free(ptr::null_mut()) };
}

#[test]
fn copy_baseline_value() {
    let mut b = 0.0;
    assert_eq!(unsafe { eunn_copy_baseline(8, 10, 100, &mut b) }, EunnStatus::Ok);
    assert!((b - 10.0 * 8f64.ln() / 120.0).abs() < 1e-15);
    assert_eq!(unsafe { eunn_copy_baseline(0, 10, 100, &mut b) }, EunnStatus::InvalidArgument);
}

#[test]
fn header_declares_the_api() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/eunn.h")).unwrap();
    for name in [
        "EUNN_H",
        "EUNN_STATUS_OK",
        "EUNN_MESH_STYLE_FFT",
        "typedef struct EunnComposition EunnComposition",
        "eunn_last_error_message",
        "eunn_composition_new",
        "eunn_composition_backward",
        "eunn_decompose",
        "eunn_program_reconstruct",
        "eunn_copy_baseline",
    ] {
        assert!(header.contains(name), "missing {name}");
    }
}

#[test]
fn header_compiles_as_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/eunn.h");
    let Ok(out) = std::process::Command::new("cc").args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c", header]).output() else {
        eprintln!("no C compiler; skipping");
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
