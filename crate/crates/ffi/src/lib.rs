//! C ABI over the privacy accountant and generalization bounds.
//!
//! All functions return an error code ([`SgldLabStatus`]); results come
//! back through out-pointers. The ledger is an opaque handle created by
//! [`sgld_lab_ledger_new`] and released by [`sgld_lab_ledger_free`].
//! Strings returned through out-pointers are released with
//! [`sgld_lab_string_free`].

use sgld_lab::accountant::{
    default_order_grid, subsampled_gaussian_renyi, FormulaMode, RenyiLedger, StepRecord,
};
use sgld_lab::bounds::{info_gen_bound, stability_gen_bound, BoundInputs};
use sgld_lab::Error;
use std::ffi::{c_char, CString};

/// Status codes returned by every fallible function.
#[repr(i32)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SgldLabStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ValidityNotMet = 3,
    NumericFailure = 4,
}

fn status_of(error: &Error) -> SgldLabStatus {
    match error {
        Error::InvalidArgument(_)
        | Error::NonpositiveParameter { .. }
        | Error::NonpositiveVariance(_)
        | Error::InvalidCombination { .. }
        | Error::OutOfOrderStep { .. }
        | Error::DimensionMismatch { .. }
        | Error::EmptySequence => SgldLabStatus::InvalidArgument,
        Error::ValidityNotMet(_) => SgldLabStatus::ValidityNotMet,
        _ => SgldLabStatus::NumericFailure,
    }
}

/// Opaque privacy-ledger handle.
pub struct SgldLabLedger {
    inner: RenyiLedger,
}

/// Creates a ledger over the default order grid (1/2 and integers
/// 2..=64). On success writes the new handle to `out`.
#[no_mangle]
pub extern "C" fn sgld_lab_ledger_new(
    dataset_size: u64,
    out: *mut *mut SgldLabLedger,
) -> SgldLabStatus {
    if out.is_null() {
        return SgldLabStatus::NullPointer;
    }
    match RenyiLedger::new(
        dataset_size as usize,
        default_order_grid(),
        FormulaMode::Theorem1,
    ) {
        Ok(inner) => {
            let handle = Box::new(SgldLabLedger { inner });
            unsafe { *out = Box::into_raw(handle) };
            SgldLabStatus::Ok
        }
        Err(e) => status_of(&e),
    }
}

/// Appends one SGLD step. `step_index` must equal the current ledger
/// length.
#[no_mangle]
pub extern "C" fn sgld_lab_ledger_append_step(
    ledger: *mut SgldLabLedger,
    step_index: u64,
    alpha: f64,
    tau: f64,
    clip_bound: f64,
) -> SgldLabStatus {
    let Some(ledger) = (unsafe { ledger.as_mut() }) else {
        return SgldLabStatus::NullPointer;
    };
    let dataset_size = ledger.inner.dataset_size;
    let record = match StepRecord::new(step_index as usize, alpha, tau, clip_bound, dataset_size) {
        Ok(r) => r,
        Err(e) => return status_of(&e),
    };
    match ledger.inner.append_step(record) {
        Ok(()) => SgldLabStatus::Ok,
        Err(e) => status_of(&e),
    }
}

/// Writes the composed total at the given order to `out`. The order must
/// be on the ledger's grid.
#[no_mangle]
pub extern "C" fn sgld_lab_ledger_total(
    ledger: *const SgldLabLedger,
    lambda: f64,
    out: *mut f64,
) -> SgldLabStatus {
    let Some(ledger) = (unsafe { ledger.as_ref() }) else {
        return SgldLabStatus::NullPointer;
    };
    if out.is_null() {
        return SgldLabStatus::NullPointer;
    }
    match ledger.inner.total_at(lambda) {
        Some(total) => {
            unsafe { *out = total };
            SgldLabStatus::Ok
        }
        None => SgldLabStatus::InvalidArgument,
    }
}

/// Serializes the ledger to JSON. The returned string is owned by the
/// caller and must be released with `sgld_lab_string_free`.
#[no_mangle]
pub extern "C" fn sgld_lab_ledger_to_json(
    ledger: *const SgldLabLedger,
    out: *mut *mut c_char,
) -> SgldLabStatus {
    let Some(ledger) = (unsafe { ledger.as_ref() }) else {
        return SgldLabStatus::NullPointer;
    };
    if out.is_null() {
        return SgldLabStatus::NullPointer;
    }
    let json = match ledger.inner.to_json() {
        Ok(j) => j,
        Err(e) => return status_of(&e),
    };
    match CString::new(json) {
        Ok(s) => {
            unsafe { *out = s.into_raw() };
            SgldLabStatus::Ok
        }
        Err(_) => SgldLabStatus::NumericFailure,
    }
}

/// Releases a ledger handle. A null handle is ignored.
#[no_mangle]
pub extern "C" fn sgld_lab_ledger_free(ledger: *mut SgldLabLedger) {
    if !ledger.is_null() {
        drop(unsafe { Box::from_raw(ledger) });
    }
}

/// Releases a string returned by this library. A null pointer is ignored.
#[no_mangle]
pub extern "C" fn sgld_lab_string_free(string: *mut c_char) {
    if !string.is_null() {
        drop(unsafe { CString::from_raw(string) });
    }
}

/// Binomial-sum Renyi bound of the subsampled Gaussian mechanism at
/// integer order `lambda` in [2, 256].
#[no_mangle]
pub extern "C" fn sgld_lab_subsampled_gaussian_renyi(
    lambda: u32,
    tau: f64,
    sigma_sq: f64,
    out: *mut f64,
) -> SgldLabStatus {
    if out.is_null() {
        return SgldLabStatus::NullPointer;
    }
    match subsampled_gaussian_renyi(lambda, tau, sigma_sq) {
        Ok(v) => {
            unsafe { *out = v };
            SgldLabStatus::Ok
        }
        Err(e) => status_of(&e),
    }
}

fn bound_inputs(
    clip_bound: f64,
    loss_bound: f64,
    subgaussian_param: f64,
    dataset_size: u64,
    alphas: *const f64,
    alpha_count: usize,
) -> Option<BoundInputs> {
    if alphas.is_null() && alpha_count > 0 {
        return None;
    }
    let alpha_schedule = if alpha_count == 0 {
        Vec::new()
    } else {
        unsafe { std::slice::from_raw_parts(alphas, alpha_count) }.to_vec()
    };
    Some(BoundInputs {
        clip_bound,
        loss_bound,
        subgaussian_param,
        dataset_size: dataset_size as usize,
        alpha_schedule,
    })
}

/// Stability-route generalization bound sqrt(2)*L*C/n * sqrt(sum alpha).
#[no_mangle]
pub extern "C" fn sgld_lab_stability_bound(
    clip_bound: f64,
    loss_bound: f64,
    dataset_size: u64,
    alphas: *const f64,
    alpha_count: usize,
    out: *mut f64,
) -> SgldLabStatus {
    if out.is_null() {
        return SgldLabStatus::NullPointer;
    }
    let Some(inputs) = bound_inputs(clip_bound, loss_bound, 1.0, dataset_size, alphas, alpha_count)
    else {
        return SgldLabStatus::NullPointer;
    };
    match stability_gen_bound(&inputs) {
        Ok(v) => {
            unsafe { *out = v };
            SgldLabStatus::Ok
        }
        Err(e) => status_of(&e),
    }
}

/// Information-route generalization bound sqrt(2)*sigma*L/n * sqrt(sum alpha).
#[no_mangle]
pub extern "C" fn sgld_lab_info_bound(
    clip_bound: f64,
    subgaussian_param: f64,
    dataset_size: u64,
    alphas: *const f64,
    alpha_count: usize,
    out: *mut f64,
) -> SgldLabStatus {
    if out.is_null() {
        return SgldLabStatus::NullPointer;
    }
    let Some(inputs) =
        bound_inputs(clip_bound, 1.0, subgaussian_param, dataset_size, alphas, alpha_count)
    else {
        return SgldLabStatus::NullPointer;
    };
    match info_gen_bound(&inputs) {
        Ok(v) => {
            unsafe { *out = v };
            SgldLabStatus::Ok
        }
        Err(e) => status_of(&e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ffi::CStr;
    use std::ptr;

    #[test]
    fn ledger_lifecycle_through_the_c_abi() {
        let mut handle: *mut SgldLabLedger = ptr::null_mut();
        assert_eq!(sgld_lab_ledger_new(100, &mut handle), SgldLabStatus::Ok);
        assert!(!handle.is_null());

        for i in 0..10u64 {
            assert_eq!(
                sgld_lab_ledger_append_step(handle, i, 0.01, 0.32, 1.0),
                SgldLabStatus::Ok
            );
        }
        // Out-of-order append rejected.
        assert_eq!(
            sgld_lab_ledger_append_step(handle, 99, 0.01, 0.32, 1.0),
            SgldLabStatus::InvalidArgument
        );

        let mut total = f64::NAN;
        assert_eq!(
            sgld_lab_ledger_total(handle, 2.0, &mut total),
            SgldLabStatus::Ok
        );
        // 2 * 0.1 / 100^2.
        assert!((total - 2e-5).abs() < 1e-18);
        assert_eq!(
            sgld_lab_ledger_total(handle, 3.5, &mut total),
            SgldLabStatus::InvalidArgument
        );

        let mut json: *mut c_char = ptr::null_mut();
        assert_eq!(sgld_lab_ledger_to_json(handle, &mut json), SgldLabStatus::Ok);
        let text = unsafe { CStr::from_ptr(json) }.to_str().unwrap().to_string();
        assert!(text.contains("\"dataset_size\""));
        sgld_lab_string_free(json);
        sgld_lab_ledger_free(handle);
    }

    #[test]
    fn null_handles_are_rejected() {
        assert_eq!(
            sgld_lab_ledger_new(10, ptr::null_mut()),
            SgldLabStatus::NullPointer
        );
        assert_eq!(
            sgld_lab_ledger_append_step(ptr::null_mut(), 0, 0.1, 0.1, 1.0),
            SgldLabStatus::NullPointer
        );
        let mut out = 0.0;
        assert_eq!(
            sgld_lab_ledger_total(ptr::null(), 2.0, &mut out),
            SgldLabStatus::NullPointer
        );
        sgld_lab_ledger_free(ptr::null_mut());
        sgld_lab_string_free(ptr::null_mut());
    }

    #[test]
    fn scalar_functions_match_direct_calls() {
        let mut out = f64::NAN;
        assert_eq!(
            sgld_lab_subsampled_gaussian_renyi(2, 0.01, 2.0, &mut out),
            SgldLabStatus::Ok
        );
        let direct = subsampled_gaussian_renyi(2, 0.01, 2.0).unwrap();
        assert_eq!(out, direct);
        assert_eq!(
            sgld_lab_subsampled_gaussian_renyi(1, 0.01, 2.0, &mut out),
            SgldLabStatus::InvalidArgument
        );

        let alphas = [0.5, 0.5];
        assert_eq!(
            sgld_lab_stability_bound(1.0, 1.0, 100, alphas.as_ptr(), 2, &mut out),
            SgldLabStatus::Ok
        );
        assert!((out - 2.0f64.sqrt() / 100.0).abs() < 1e-15);
        assert_eq!(
            sgld_lab_info_bound(1.0, 1.0, 100, alphas.as_ptr(), 2, &mut out),
            SgldLabStatus::Ok
        );
        assert!((out - 2.0f64.sqrt() / 100.0).abs() < 1e-15);

        assert_eq!(
            sgld_lab_stability_bound(1.0, 1.0, 100, ptr::null(), 2, &mut out),
            SgldLabStatus::NullPointer
        );
    }
}
