//! C ABI over the cubeq library: opaque form handles, status codes, and
//! plain-old-data results, so other languages can evaluate the exponential
//! sums and local densities without speaking Rust.
//!
//! Conventions: every fallible function returns a [`CubeqStatus`]; outputs
//! go through pointers that must be non-null. A failing call stores a
//! message retrievable with `cubeq_last_error`. Handles from
//! `cubeq_form_parse_json` are freed with `cubeq_form_free` and are safe to
//! share across threads for concurrent reads.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};

use cubeq::density::{hensel_soluble, local_factor, point_count};
use cubeq::expsum::{q_crt, q_gauss, q_naive, Method};
use cubeq::forms::{AugmentedForm, CubicForm};
use cubeq::modular::Modulus;
use cubeq::{Budget, Error, ExecCtx};

/// Status codes returned by every fallible entry point.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum CubeqStatus {
    Ok = 0,
    /// Null pointer, wrong length, unknown method, or other bad argument.
    InvalidArgument = -1,
    /// The form file text was not a valid form.
    Parse = -2,
    /// The request exceeds the enumeration or memory budget.
    Budget = -3,
    /// Exact integer arithmetic left the representable range.
    Overflow = -4,
    /// A built-in cross-check failed.
    Verification = -5,
    /// The library panicked; state is still consistent.
    Internal = -6,
}

/// Evaluation route selector for `cubeq_q_eval`.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum CubeqMethod {
    Auto = 0,
    Naive = 1,
    Gauss = 2,
    Crt = 3,
}

/// A computed `Q(m,k)` value with its absolute error bound; `method` is the
/// route that produced it (0 naive, 1 gauss, 2 char, 3 crt, 4 stationary).
#[repr(C)]
#[derive(Clone, Copy)]
pub struct CubeqQValue {
    pub re: f64,
    pub im: f64,
    pub err: f64,
    pub method: i32,
}

/// Both routes of the truncated local density at one prime.
#[repr(C)]
#[derive(Clone, Copy)]
pub struct CubeqLocalFactor {
    pub route_expsum: f64,
    pub route_count: f64,
    pub sigma_p: f64,
    /// 1 when the count route is stable from the previous level
    pub stabilized: i32,
}

/// Opaque form handle: the augmented polynomial `C(x_hat) - x_{n+1}^2`.
pub struct CubeqForm {
    form: AugmentedForm,
    budget: Budget,
    ctx: ExecCtx,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = msg.into());
}

fn status_of(err: &Error) -> CubeqStatus {
    match err {
        Error::BudgetExceeded { .. } | Error::MemoryBudget { .. } => CubeqStatus::Budget,
        Error::Overflow => CubeqStatus::Overflow,
        Error::VerificationFailure(_) => CubeqStatus::Verification,
        Error::InvalidForm(_) | Error::Json(_) => CubeqStatus::Parse,
        _ => CubeqStatus::InvalidArgument,
    }
}

fn fail(err: Error) -> CubeqStatus {
    let status = status_of(&err);
    set_error(err.to_string());
    status
}

fn guarded(f: impl FnOnce() -> CubeqStatus) -> CubeqStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => {
            set_error("internal panic");
            CubeqStatus::Internal
        }
    }
}

fn method_tag(m: Method) -> i32 {
    match m {
        Method::Naive => 0,
        Method::Gauss => 1,
        Method::Char => 2,
        Method::Crt => 3,
        Method::Stationary => 4,
    }
}

/// Copy the last error message for this thread into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length in bytes.
///
/// # Safety
/// `buf` must point to `len` writable bytes, or be null (query mode).
#[no_mangle]
pub unsafe extern "C" fn cubeq_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|slot| {
        let msg = slot.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            std::ptr::copy_nonoverlapping(bytes.as_ptr(), buf.cast(), n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Parse a form from its JSON file text
/// (`{"n": <int>, "terms": [{"e": [..], "c": <int>}, ..]}`).
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cubeq_form_parse_json(
    json: *const c_char,
    out: *mut *mut CubeqForm,
) -> CubeqStatus {
    guarded(|| {
        if json.is_null() || out.is_null() {
            set_error("null argument");
            return CubeqStatus::InvalidArgument;
        }
        let Ok(text) = CStr::from_ptr(json).to_str() else {
            set_error("form text is not UTF-8");
            return CubeqStatus::InvalidArgument;
        };
        match CubicForm::from_json_str(text) {
            Ok(form) => {
                let handle = Box::new(CubeqForm {
                    form: AugmentedForm::new(form),
                    budget: Budget::default(),
                    ctx: ExecCtx::default(),
                });
                *out = Box::into_raw(handle);
                CubeqStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Free a handle returned by `cubeq_form_parse_json`. Null is a no-op.
///
/// # Safety
/// `form` must be a pointer from `cubeq_form_parse_json`, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cubeq_form_free(form: *mut CubeqForm) {
    if !form.is_null() {
        drop(Box::from_raw(form));
    }
}

/// Total number of variables of the counted polynomial, `n + 1`.
///
/// # Safety
/// `form` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn cubeq_form_arity(form: *const CubeqForm) -> u32 {
    if form.is_null() {
        return 0;
    }
    (*form).form.arity() as u32
}

/// Exact evaluation of `f(x) = C(x_hat) - x_{n+1}^2` at an integer point of
/// length `n + 1`.
///
/// # Safety
/// `x` must point at `len` values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn cubeq_form_evaluate(
    form: *const CubeqForm,
    x: *const i64,
    len: usize,
    out: *mut i64,
) -> CubeqStatus {
    guarded(|| {
        if form.is_null() || x.is_null() || out.is_null() {
            set_error("null argument");
            return CubeqStatus::InvalidArgument;
        }
        let handle = &*form;
        let xs: Vec<i128> = std::slice::from_raw_parts(x, len)
            .iter()
            .map(|&v| v as i128)
            .collect();
        match handle.form.evaluate(&xs) {
            Ok(v) => {
                if v < i64::MIN as i128 || v > i64::MAX as i128 {
                    set_error("value exceeds 64 bits");
                    return CubeqStatus::Overflow;
                }
                *out = v as i64;
                CubeqStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Evaluate `Q(m,k)`; `m` has `n + 1` signed coordinates.
///
/// # Safety
/// `m` must point at `len` values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn cubeq_q_eval(
    form: *const CubeqForm,
    m: *const i64,
    len: usize,
    k: u64,
    method: CubeqMethod,
    out: *mut CubeqQValue,
) -> CubeqStatus {
    guarded(|| {
        if form.is_null() || m.is_null() || out.is_null() {
            set_error("null argument");
            return CubeqStatus::InvalidArgument;
        }
        let handle = &*form;
        let m = std::slice::from_raw_parts(m, len);
        let result = match method {
            CubeqMethod::Auto | CubeqMethod::Crt => Modulus::new(k)
                .and_then(|modulus| q_crt(&handle.form, m, &modulus, &handle.budget)),
            CubeqMethod::Naive => q_naive(&handle.form, m, k, &handle.budget),
            CubeqMethod::Gauss => q_gauss(&handle.form, m, k, &handle.budget),
        };
        match result {
            Ok(v) => {
                *out = CubeqQValue {
                    re: v.value.re,
                    im: v.value.im,
                    err: v.err,
                    method: method_tag(v.method),
                };
                CubeqStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Exact count of solutions of `f = 0 mod q`.
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn cubeq_point_count(
    form: *const CubeqForm,
    q: u64,
    out: *mut u64,
) -> CubeqStatus {
    guarded(|| {
        if form.is_null() || out.is_null() {
            set_error("null argument");
            return CubeqStatus::InvalidArgument;
        }
        let handle = &*form;
        match point_count(&handle.form, q, &handle.budget, &handle.ctx) {
            Ok(count) => {
                if count > u64::MAX as u128 {
                    set_error("count exceeds 64 bits");
                    return CubeqStatus::Overflow;
                }
                *out = count as u64;
                CubeqStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Truncated local density at `p`, both routes; fails with a verification
/// status if they disagree.
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn cubeq_local_factor(
    form: *const CubeqForm,
    p: u64,
    level: u32,
    out: *mut CubeqLocalFactor,
) -> CubeqStatus {
    guarded(|| {
        if form.is_null() || out.is_null() {
            set_error("null argument");
            return CubeqStatus::InvalidArgument;
        }
        let handle = &*form;
        match local_factor(&handle.form, p, level, &handle.budget, &handle.ctx) {
            Ok(lf) => {
                *out = CubeqLocalFactor {
                    route_expsum: lf.route_expsum,
                    route_count: lf.route_count,
                    sigma_p: lf.sigma_p,
                    stabilized: lf.stabilized as i32,
                };
                CubeqStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Look for a nonsingular solution of `f = 0 mod p`. On success `*found` is
/// 0 or 1; when 1 and `witness` is non-null, the solution's `n + 1`
/// coordinates are written there.
///
/// # Safety
/// `witness`, when non-null, must point at `cubeq_form_arity` slots.
#[no_mangle]
pub unsafe extern "C" fn cubeq_hensel_witness(
    form: *const CubeqForm,
    p: u64,
    witness: *mut u64,
    found: *mut i32,
) -> CubeqStatus {
    guarded(|| {
        if form.is_null() || found.is_null() {
            set_error("null argument");
            return CubeqStatus::InvalidArgument;
        }
        let handle = &*form;
        match hensel_soluble(&handle.form, p, &handle.budget) {
            Ok(Some(w)) => {
                *found = 1;
                if !witness.is_null() {
                    std::ptr::copy_nonoverlapping(w.as_ptr(), witness, w.len());
                }
                CubeqStatus::Ok
            }
            Ok(None) => {
                *found = 0;
                CubeqStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Jacobi symbol `(a|k)` for odd `k`.
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn cubeq_jacobi(a: i64, k: u64, out: *mut i32) -> CubeqStatus {
    guarded(|| {
        if out.is_null() {
            set_error("null argument");
            return CubeqStatus::InvalidArgument;
        }
        match cubeq::modular::jacobi(a, k) {
            Ok(v) => {
                *out = v;
                CubeqStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Ramanujan sum `c_{p^alpha}(d)` by its closed form.
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn cubeq_ramanujan(
    p: u64,
    alpha: u32,
    d: i64,
    out: *mut i64,
) -> CubeqStatus {
    guarded(|| {
        if out.is_null() || alpha == 0 || !cubeq::modular::is_prime(p) {
            set_error("need a prime p, alpha >= 1, and a valid out pointer");
            return CubeqStatus::InvalidArgument;
        }
        let v = cubeq::modular::ramanujan(p, alpha, d);
        if v < i64::MIN as i128 || v > i64::MAX as i128 {
            set_error("value exceeds 64 bits");
            return CubeqStatus::Overflow;
        }
        *out = v as i64;
        CubeqStatus::Ok
    })
}

/// The smooth weight `gamma(t) = exp(-2/(1-t^2))` inside `(-1,1)`, else 0.
#[no_mangle]
pub extern "C" fn cubeq_weight_gamma(t: f64) -> f64 {
    cubeq::forms::weight_gamma(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ffi::CString;

    const FERMAT1: &str = r#"{"n":1,"terms":[{"e":[3],"c":1}]}"#;

    fn parse(json: &str) -> *mut CubeqForm {
        let c = CString::new(json).unwrap();
        let mut handle: *mut CubeqForm = std::ptr::null_mut();
        let status = unsafe { cubeq_form_parse_json(c.as_ptr(), &mut handle) };
        assert_eq!(status, CubeqStatus::Ok);
        handle
    }

    #[test]
    fn parse_evaluate_free() {
        let form = parse(FERMAT1);
        assert_eq!(unsafe { cubeq_form_arity(form) }, 2);
        let x = [2i64, 3];
        let mut out = 0i64;
        let status = unsafe { cubeq_form_evaluate(form, x.as_ptr(), 2, &mut out) };
        assert_eq!(status, CubeqStatus::Ok);
        assert_eq!(out, 8 - 9);
        // wrong arity
        let status = unsafe { cubeq_form_evaluate(form, x.as_ptr(), 1, &mut out) };
        assert_eq!(status, CubeqStatus::InvalidArgument);
        unsafe { cubeq_form_free(form) };
    }

    #[test]
    fn parse_rejects_bad_forms() {
        for bad in [
            "not json",
            r#"{"n":2,"terms":[{"e":[3,0],"c":1},{"e":[3,0],"c":1}]}"#,
            r#"{"n":1,"terms":[{"e":[2],"c":1}]}"#,
        ] {
            let c = CString::new(bad).unwrap();
            let mut handle: *mut CubeqForm = std::ptr::null_mut();
            let status = unsafe { cubeq_form_parse_json(c.as_ptr(), &mut handle) };
            assert_eq!(status, CubeqStatus::Parse, "{bad}");
            assert!(handle.is_null());
            let mut buf = [0i8; 128];
            let len = unsafe { cubeq_last_error(buf.as_mut_ptr(), buf.len()) };
            assert!(len > 0);
        }
    }

    #[test]
    fn q_eval_routes() {
        let form = parse(FERMAT1);
        let m = [0i64, 0];
        let mut out = CubeqQValue {
            re: 0.0,
            im: 0.0,
            err: 0.0,
            method: -1,
        };
        // Q(0,5) = 0 for the cuspidal form
        let status =
            unsafe { cubeq_q_eval(form, m.as_ptr(), 2, 5, CubeqMethod::Auto, &mut out) };
        assert_eq!(status, CubeqStatus::Ok);
        assert!((out.re * out.re + out.im * out.im).sqrt() <= out.err);
        // all routes agree
        let mut naive = out;
        unsafe {
            assert_eq!(
                cubeq_q_eval(form, m.as_ptr(), 2, 15, CubeqMethod::Naive, &mut naive),
                CubeqStatus::Ok
            );
            assert_eq!(
                cubeq_q_eval(form, m.as_ptr(), 2, 15, CubeqMethod::Gauss, &mut out),
                CubeqStatus::Ok
            );
        }
        assert!((naive.re - out.re).abs() < 1e-9 && (naive.im - out.im).abs() < 1e-9);
        // budget refusal surfaces as a status
        let status =
            unsafe { cubeq_q_eval(form, m.as_ptr(), 2, 50_000, CubeqMethod::Naive, &mut out) };
        assert_eq!(status, CubeqStatus::Budget);
        unsafe { cubeq_form_free(form) };
    }

    #[test]
    fn density_surface() {
        let form = parse(FERMAT1);
        let mut count = 0u64;
        assert_eq!(
            unsafe { cubeq_point_count(form, 5, &mut count) },
            CubeqStatus::Ok
        );
        assert_eq!(count, 5);
        let mut lf = CubeqLocalFactor {
            route_expsum: 0.0,
            route_count: 0.0,
            sigma_p: 0.0,
            stabilized: 0,
        };
        assert_eq!(
            unsafe { cubeq_local_factor(form, 5, 1, &mut lf) },
            CubeqStatus::Ok
        );
        assert!((lf.route_count - 1.0).abs() < 1e-12);
        let mut witness = [0u64; 2];
        let mut found = 0i32;
        assert_eq!(
            unsafe { cubeq_hensel_witness(form, 5, witness.as_mut_ptr(), &mut found) },
            CubeqStatus::Ok
        );
        assert_eq!(found, 1);
        assert_eq!(witness, [1, 1]);
        unsafe { cubeq_form_free(form) };
    }

    #[test]
    fn scalar_helpers() {
        let mut j = 0i32;
        assert_eq!(unsafe { cubeq_jacobi(3, 7, &mut j) }, CubeqStatus::Ok);
        assert_eq!(j, -1);
        assert_eq!(
            unsafe { cubeq_jacobi(3, 8, &mut j) },
            CubeqStatus::InvalidArgument
        );
        let mut r = 0i64;
        assert_eq!(unsafe { cubeq_ramanujan(3, 2, 9, &mut r) }, CubeqStatus::Ok);
        assert_eq!(r, 6);
        assert!((cubeq_weight_gamma(0.0) - (-2.0f64).exp()).abs() < 1e-15);
        assert_eq!(cubeq_weight_gamma(1.0), 0.0);
    }

    #[test]
    fn header_is_generated() {
        let header = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("include/cubeq.h");
        let text = std::fs::read_to_string(header).expect("header generated at build time");
        for symbol in [
            "cubeq_form_parse_json",
            "cubeq_q_eval",
            "cubeq_local_factor",
            "CubeqStatus",
            "CUBEQ_H",
        ] {
            assert!(text.contains(symbol), "header missing {symbol}");
        }
    }
}
