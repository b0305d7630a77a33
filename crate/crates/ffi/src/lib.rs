//! C ABI over the `eunn` crate.
//!
//! Objects cross the boundary as opaque handles created by `*_new` or
//! `eunn_decompose` and released with the matching `*_free`. Every fallible
//! function returns an [`EunnStatus`]; on failure the message is available
//! from [`eunn_last_error_message`] on the same thread until the next call.
//!
//! Complex vectors are passed as separate real and imaginary `double` arrays.
//! Matrices are row-major.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use eunn::dense::CMatrix;
use eunn::tasks::memoryless_baseline;
use eunn::unitary::{self, AngleProgram, CompiledComposition, MeshStyle, UnitaryComposition};
use eunn::{ComplexVec, EunnError, Rng};
use num_complex::Complex64;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EunnStatus {
    Ok = 0,
    NullPointer = 1,
    /// Bad sizes, unsupported dimension, or invalid parameters.
    InvalidArgument = 2,
    /// A numerical routine failed or produced non-finite values.
    Numerical = 3,
    /// A unitarity or round-trip invariant did not hold.
    Invariant = 4,
    /// Unexpected internal error; the handle should not be used again.
    Panic = 5,
}

/// Mesh layout for [`eunn_composition_new`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EunnMeshStyle {
    Tunable = 0,
    Fft = 1,
}

/// A unitary `W = D F¹ … F^L` with its compiled kernels.
pub struct EunnComposition {
    w: UnitaryComposition,
    compiled: CompiledComposition,
}

/// Rotation angles and phases recovered from a dense unitary.
pub struct EunnProgram {
    program: AngleProgram,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &EunnError) -> EunnStatus {
    match e {
        EunnError::Numerical(_) | EunnError::Diverged { .. } => EunnStatus::Numerical,
        EunnError::Invariant(_) => EunnStatus::Invariant,
        _ => EunnStatus::InvalidArgument,
    }
}

/// Runs `f`, recording any error or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), (EunnStatus, String)>) -> EunnStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => EunnStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal error: {msg}"));
            EunnStatus::Panic
        }
    }
}

fn lib<T>(r: eunn::Result<T>) -> Result<T, (EunnStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(what: &str) -> (EunnStatus, String) {
    (EunnStatus::NullPointer, format!("{what} is null"))
}

/// # Safety
/// `p` must be null or point to `len` readable doubles.
unsafe fn input<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], (EunnStatus, String)> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

/// # Safety
/// `p` must be null or point to `len` writable doubles.
unsafe fn output<'a>(p: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], (EunnStatus, String)> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts_mut(p, len))
}

/// # Safety
/// Both pointers must be null or point to `n` readable doubles.
unsafe fn complex_input(re: *const f64, im: *const f64, n: usize, what: &str) -> Result<ComplexVec, (EunnStatus, String)> {
    let re = input(re, n, what)?;
    let im = input(im, n, what)?;
    lib(ComplexVec::from_parts(re.to_vec(), im.to_vec()))
}

/// # Safety
/// Both pointers must be null or point to `n` writable doubles.
unsafe fn complex_output(v: &ComplexVec, re: *mut f64, im: *mut f64, what: &str) -> Result<(), (EunnStatus, String)> {
    output(re, v.len(), what)?.copy_from_slice(v.re());
    output(im, v.len(), what)?.copy_from_slice(v.im());
    Ok(())
}

unsafe fn handle<'a, T>(h: *const T, what: &str) -> Result<&'a T, (EunnStatus, String)> {
    h.as_ref().ok_or_else(|| null(what))
}

fn check_n(expected: usize, got: usize) -> Result<(), (EunnStatus, String)> {
    if expected == got {
        Ok(())
    } else {
        Err((EunnStatus::InvalidArgument, format!("expected length {expected}, got {got}")))
    }
}

/// Message for the last failed call on this thread, or null if it succeeded.
/// The pointer stays valid until the next `eunn_*` call on this thread.
#[no_mangle]
pub extern "C" fn eunn_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Creates a randomly initialized composition. `capacity` is ignored for the
/// fft style, which always has `log2 n` layers.
///
/// # Safety
/// `out` must point to writable storage for one handle pointer.
#[no_mangle]
pub unsafe extern "C" fn eunn_composition_new(
    style: EunnMeshStyle,
    n: usize,
    capacity: usize,
    seed: u64,
    out: *mut *mut EunnComposition,
) -> EunnStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let style = match style {
            EunnMeshStyle::Tunable => MeshStyle::Tunable,
            EunnMeshStyle::Fft => MeshStyle::Fft,
        };
        let mut w = lib(UnitaryComposition::with_style(style, n, capacity))?;
        w.randomize(&mut Rng::new(seed));
        let compiled = lib(w.compile())?;
        *out = Box::into_raw(Box::new(EunnComposition { w, compiled }));
        Ok(())
    })
}

/// # Safety
/// `h` must be null or a handle from [`eunn_composition_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn eunn_composition_free(h: *mut EunnComposition) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Dimension `n`, or 0 for a null handle.
///
/// # Safety
/// `h` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn eunn_composition_dim(h: *const EunnComposition) -> usize {
    h.as_ref().map_or(0, |c| c.w.n())
}

/// Number of layers `L`, or 0 for a null handle.
///
/// # Safety
/// `h` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn eunn_composition_capacity(h: *const EunnComposition) -> usize {
    h.as_ref().map_or(0, |c| c.w.capacity())
}

/// Length of the flat parameter vector: every layer's θ then φ, layer by
/// layer, followed by the `n` diagonal phases.
///
/// # Safety
/// `h` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn eunn_composition_num_params(h: *const EunnComposition) -> usize {
    h.as_ref().map_or(0, |c| c.w.num_params())
}

/// Copies the flat parameters into `out[0..len]`; `len` must equal
/// [`eunn_composition_num_params`].
///
/// # Safety
/// `h` must be a live handle and `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn eunn_composition_get_params(h: *const EunnComposition, out: *mut f64, len: usize) -> EunnStatus {
    guard(|| {
        let c = handle(h, "composition")?;
        check_n(c.w.num_params(), len)?;
        let out = output(out, len, "out")?;
        let mut k = 0;
        for layer in c.w.layers() {
            for v in layer.theta().iter().chain(layer.phi()) {
                out[k] = *v;
                k += 1;
            }
        }
        out[k..].copy_from_slice(c.w.diag().phases());
        Ok(())
    })
}

/// Replaces all parameters from a flat vector in the
/// [`eunn_composition_get_params`] layout. Values must be finite.
///
/// # Safety
/// `h` must be a live handle and `params` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn eunn_composition_set_params(h: *mut EunnComposition, params: *const f64, len: usize) -> EunnStatus {
    guard(|| {
        let c = h.as_mut().ok_or_else(|| null("composition"))?;
        check_n(c.w.num_params(), len)?;
        let p = input(params, len, "params")?;
        if p.iter().any(|v| !v.is_finite()) {
            return Err((EunnStatus::InvalidArgument, "parameters must be finite".into()));
        }
        let mut w = c.w.clone();
        let mut k = 0;
        for layer in w.layers_mut() {
            let (theta, phi) = layer.angles_mut();
            let r = theta.len();
            theta.copy_from_slice(&p[k..k + r]);
            phi.copy_from_slice(&p[k + r..k + 2 * r]);
            k += 2 * r;
        }
        w.diag_mut().phases_mut().copy_from_slice(&p[k..]);
        c.compiled = lib(w.compile())?;
        c.w = w;
        Ok(())
    })
}

/// `y = W x` for vectors of length `n`.
///
/// # Safety
/// `h` must be a live handle; each array must hold `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn eunn_composition_apply(
    h: *const EunnComposition,
    x_re: *const f64,
    x_im: *const f64,
    y_re: *mut f64,
    y_im: *mut f64,
    n: usize,
) -> EunnStatus {
    guard(|| {
        let c = handle(h, "composition")?;
        check_n(c.w.n(), n)?;
        let x = complex_input(x_re, x_im, n, "x")?;
        let y = lib(c.compiled.apply(&x))?;
        complex_output(&y, y_re, y_im, "y")
    })
}

/// Reverse pass at input `x` with output cotangent `dy`: writes `dx = W† dy`
/// and the gradient of the real loss with respect to every parameter, in the
/// flat layout of [`eunn_composition_get_params`].
///
/// # Safety
/// `h` must be a live handle; vector arrays hold `n` doubles and `grad`
/// holds `grad_len` doubles.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn eunn_composition_backward(
    h: *const EunnComposition,
    x_re: *const f64,
    x_im: *const f64,
    dy_re: *const f64,
    dy_im: *const f64,
    dx_re: *mut f64,
    dx_im: *mut f64,
    n: usize,
    grad: *mut f64,
    grad_len: usize,
) -> EunnStatus {
    guard(|| {
        let c = handle(h, "composition")?;
        check_n(c.w.n(), n)?;
        check_n(c.w.num_params(), grad_len)?;
        let x = complex_input(x_re, x_im, n, "x")?;
        let dy = complex_input(dy_re, dy_im, n, "dy")?;
        let (_, tape) = lib(c.compiled.forward(&x))?;
        let (dx, g) = lib(c.compiled.backward(&c.w, &tape, &dy))?;
        complex_output(&dx, dx_re, dx_im, "dx")?;
        let out = output(grad, grad_len, "grad")?;
        let mut k = 0;
        for l in &g.layers {
            for v in l.d_theta.iter().chain(&l.d_phi) {
                out[k] = *v;
                k += 1;
            }
        }
        out[k..].copy_from_slice(&g.d_phase);
        Ok(())
    })
}

/// Writes the dense `n × n` matrix of the composition, row-major.
///
/// # Safety
/// `h` must be a live handle; `re` and `im` must each hold `n * n` doubles.
#[no_mangle]
pub unsafe extern "C" fn eunn_composition_materialize(
    h: *const EunnComposition,
    re: *mut f64,
    im: *mut f64,
    n: usize,
) -> EunnStatus {
    guard(|| {
        let c = handle(h, "composition")?;
        check_n(c.w.n(), n)?;
        write_matrix(&unitary::materialize(&c.w), re, im)
    })
}

unsafe fn write_matrix(m: &CMatrix, re: *mut f64, im: *mut f64) -> Result<(), (EunnStatus, String)> {
    let n = m.nrows();
    let re = output(re, n * n, "re")?;
    let im = output(im, n * n, "im")?;
    for r in 0..n {
        for c in 0..n {
            re[r * n + c] = m[(r, c)].re;
            im[r * n + c] = m[(r, c)].im;
        }
    }
    Ok(())
}

/// Decomposes a unitary `n × n` matrix (row-major) into rotations and
/// phases. Fails with `InvalidArgument` if the matrix is not unitary.
///
/// # Safety
/// `re` and `im` must each hold `n * n` doubles; `out` must point to
/// writable storage for one handle pointer.
#[no_mangle]
pub unsafe extern "C" fn eunn_decompose(
    re: *const f64,
    im: *const f64,
    n: usize,
    out: *mut *mut EunnProgram,
) -> EunnStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let re = input(re, n * n, "re")?;
        let im = input(im, n * n, "im")?;
        let m = CMatrix::from_fn(n, n, |r, c| Complex64::new(re[r * n + c], im[r * n + c]));
        let program = lib(unitary::decompose_unitary(&m))?;
        *out = Box::into_raw(Box::new(EunnProgram { program }));
        Ok(())
    })
}

/// # Safety
/// `p` must be null or a handle from [`eunn_decompose`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn eunn_program_free(p: *mut EunnProgram) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Dimension of the decomposed matrix, or 0 for a null handle.
///
/// # Safety
/// `p` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn eunn_program_dim(p: *const EunnProgram) -> usize {
    p.as_ref().map_or(0, |p| p.program.n())
}

/// Number of rotations, or 0 for a null handle.
///
/// # Safety
/// `p` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn eunn_program_num_rotations(p: *const EunnProgram) -> usize {
    p.as_ref().map_or(0, |p| p.program.rotations.len())
}

/// Rebuilds the dense matrix, row-major.
///
/// # Safety
/// `p` must be a live handle; `re` and `im` must each hold `n * n` doubles.
#[no_mangle]
pub unsafe extern "C" fn eunn_program_reconstruct(p: *const EunnProgram, re: *mut f64, im: *mut f64, n: usize) -> EunnStatus {
    guard(|| {
        let p = handle(p, "program")?;
        check_n(p.program.n(), n)?;
        write_matrix(&lib(unitary::reconstruct(&p.program))?, re, im)
    })
}

/// Cross entropy of the memoryless strategy on the copy task with
/// `n_symbols` data symbols, `m_len` symbols to recall and delay `t_delay`.
///
/// # Safety
/// `out` must point to one writable double.
#[no_mangle]
pub unsafe extern "C" fn eunn_copy_baseline(n_symbols: usize, m_len: usize, t_delay: usize, out: *mut f64) -> EunnStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        if n_symbols == 0 || m_len == 0 {
            return Err((EunnStatus::InvalidArgument, "n_symbols and m_len must be positive".into()));
        }
        *out = memoryless_baseline(n_symbols, m_len, t_delay);
        Ok(())
    })
}
