//! C ABI over the trustboost core.
//!
//! Every function returns a [`TbStatus`]; results go through out-pointers.
//! On failure the message is kept per thread and can be fetched with
//! [`tb_last_error_message`]. Strings returned to C are owned by the caller
//! and must be released with [`tb_free_string`]; ledgers with
//! [`tb_ledger_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use trustboost::audit::batch_audit_experiment;
use trustboost::crypto::{sha256, Digest, OrgId};
use trustboost::hitl::{entropy, route, Route};
use trustboost::ledger::{onchain_cost_estimate, AnchorPayload, AnchorTx, Ledger, NetworkConfig, OnChainAnchor, Preset};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TbStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    NotFound = 4,
    LedgerError = 5,
    AuditError = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TbRoute {
    AutoDecide = 0,
    HumanReview = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TbPreset {
    FabricLike = 0,
    EthereumLike = 1,
}

/// Opaque ledger handle.
pub struct TbLedger {
    inner: Ledger,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

type Fallible = Result<(), (TbStatus, String)>;

fn guard(f: impl FnOnce() -> Fallible) -> TbStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => TbStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside trustboost");
            TbStatus::Panic
        }
    }
}

fn fail<T>(status: TbStatus, msg: impl std::fmt::Display) -> Result<T, (TbStatus, String)> {
    Err((status, msg.to_string()))
}

unsafe fn out<'a, T>(ptr: *mut T) -> Result<&'a mut T, (TbStatus, String)> {
    ptr.as_mut().ok_or((TbStatus::NullPointer, "null out-pointer".to_string()))
}

unsafe fn text<'a>(ptr: *const c_char) -> Result<&'a str, (TbStatus, String)> {
    if ptr.is_null() {
        return fail(TbStatus::NullPointer, "null string argument");
    }
    CStr::from_ptr(ptr).to_str().or_else(|e| fail(TbStatus::InvalidUtf8, e))
}

unsafe fn ledger<'a>(ptr: *mut TbLedger) -> Result<&'a mut Ledger, (TbStatus, String)> {
    ptr.as_mut().map(|l| &mut l.inner).ok_or((TbStatus::NullPointer, "null ledger handle".to_string()))
}

/// Copy of the calling thread's last error message, or null when the last
/// call succeeded. Free with `tb_free_string`.
#[no_mangle]
pub extern "C" fn tb_last_error_message() -> *mut c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null_mut(), |s| s.clone().into_raw()))
}

/// # Safety
/// `s` must be null or a string returned by this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn tb_free_string(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Lowercase hex SHA-256 of `len` bytes at `data`.
///
/// # Safety
/// `data` must point to `len` readable bytes (or be null with `len == 0`).
#[no_mangle]
pub unsafe extern "C" fn tb_sha256_hex(data: *const u8, len: usize, out_hex: *mut *mut c_char) -> TbStatus {
    guard(|| {
        let bytes = match (data.is_null(), len) {
            (true, 0) => &[][..],
            (true, _) => return fail(TbStatus::NullPointer, "null data with non-zero length"),
            (false, _) => std::slice::from_raw_parts(data, len),
        };
        let hex = CString::new(sha256(bytes).to_hex()).expect("hex has no NUL");
        *out(out_hex)? = hex.into_raw();
        Ok(())
    })
}

/// Normalized binary entropy of a fund/reject distribution.
///
/// # Safety
/// `out_entropy` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tb_entropy(p_fund: f64, p_reject: f64, out_entropy: *mut f64) -> TbStatus {
    guard(|| {
        let phi = entropy(&[p_fund, p_reject]).or_else(|e| fail(TbStatus::InvalidArgument, e))?;
        *out(out_entropy)? = phi;
        Ok(())
    })
}

/// # Safety
/// `out_route` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tb_route(entropy: f64, threshold: f64, out_route: *mut TbRoute) -> TbStatus {
    guard(|| {
        if !(0.0..=1.0).contains(&entropy) || !(0.0..=1.0).contains(&threshold) {
            return fail(TbStatus::InvalidArgument, "entropy and threshold must lie in [0, 1]");
        }
        *out(out_route)? = match route(entropy, threshold).route {
            Route::AutoDecide => TbRoute::AutoDecide,
            Route::HumanReview => TbRoute::HumanReview,
        };
        Ok(())
    })
}

/// Dollar cost of storing `bytes` at `usd_per_kb` per 1000 bytes.
///
/// # Safety
/// `out_usd` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tb_onchain_cost(bytes: i64, usd_per_kb: f64, out_usd: *mut f64) -> TbStatus {
    guard(|| {
        *out(out_usd)? = onchain_cost_estimate(bytes, usd_per_kb).or_else(|e| fail(TbStatus::InvalidArgument, e))?;
        Ok(())
    })
}

/// # Safety
/// `out_ledger` must be a valid pointer. The handle is freed with `tb_ledger_free`.
#[no_mangle]
pub unsafe extern "C" fn tb_ledger_new(org_count: u32, preset: TbPreset, seed: u64, out_ledger: *mut *mut TbLedger) -> TbStatus {
    guard(|| {
        let preset = match preset {
            TbPreset::FabricLike => Preset::FabricLike,
            TbPreset::EthereumLike => Preset::EthereumLike,
        };
        let inner = Ledger::new(NetworkConfig::preset(preset, org_count, seed)).or_else(|e| fail(TbStatus::InvalidArgument, e))?;
        *out(out_ledger)? = Box::into_raw(Box::new(TbLedger { inner }));
        Ok(())
    })
}

/// # Safety
/// `ledger` must be null or a handle from `tb_ledger_new`, freed once.
#[no_mangle]
pub unsafe extern "C" fn tb_ledger_free(ledger: *mut TbLedger) {
    if !ledger.is_null() {
        drop(Box::from_raw(ledger));
    }
}

fn parse_digest(hex: &str) -> Result<Digest, (TbStatus, String)> {
    hex.parse::<Digest>().or_else(|_| fail(TbStatus::InvalidArgument, format!("not a 64-digit hex digest: {hex:?}")))
}

/// Queues an `(ID, DTM, H_E)` anchor submitted by organization
/// `org_index` (1-based) at `submit_time` ms.
///
/// # Safety
/// `ledger` must be a live handle; strings must be NUL-terminated UTF-8.
#[no_mangle]
pub unsafe extern "C" fn tb_ledger_submit_explanation(
    ledger: *mut TbLedger,
    customer_id: *const c_char,
    dtm: u64,
    explanation_hash_hex: *const c_char,
    org_index: u32,
    submit_time: u64,
) -> TbStatus {
    guard(|| {
        let l = self::ledger(ledger)?;
        let anchor = OnChainAnchor {
            customer_id: text(customer_id)?.to_string(),
            dtm,
            explanation_hash: parse_digest(text(explanation_hash_hex)?)?,
        };
        if org_index == 0 || org_index > l.config().org_count {
            return fail(TbStatus::InvalidArgument, format!("org index {org_index} outside 1..={}", l.config().org_count));
        }
        let org = OrgId(format!("org{org_index}"));
        l.submit_tx(AnchorTx::new(AnchorPayload::Explanation(anchor), org, submit_time))
            .or_else(|e| fail(TbStatus::LedgerError, e))?;
        Ok(())
    })
}

/// Commits every block whose batch closes at or before `until`
/// (`UINT64_MAX` commits everything queued).
///
/// # Safety
/// `ledger` must be a live handle; `out_blocks` may be null.
#[no_mangle]
pub unsafe extern "C" fn tb_ledger_run_ordering(ledger: *mut TbLedger, until: u64, out_blocks: *mut usize) -> TbStatus {
    guard(|| {
        let produced = self::ledger(ledger)?.run_ordering(until).len();
        if let Some(o) = out_blocks.as_mut() {
            *o = produced;
        }
        Ok(())
    })
}

/// # Safety
/// `ledger` must be a live handle and `out_height` valid.
#[no_mangle]
pub unsafe extern "C" fn tb_ledger_height(ledger: *mut TbLedger, out_height: *mut u64) -> TbStatus {
    guard(|| {
        *out(out_height)? = self::ledger(ledger)?.height();
        Ok(())
    })
}

/// # Safety
/// `ledger` must be a live handle and `out_valid` valid.
#[no_mangle]
pub unsafe extern "C" fn tb_ledger_validate(ledger: *mut TbLedger, out_valid: *mut bool) -> TbStatus {
    guard(|| {
        *out(out_valid)? = self::ledger(ledger)?.validate_chain().valid;
        Ok(())
    })
}

/// Height of the earliest committed anchor for `(customer_id, hash)`,
/// or `NotFound`.
///
/// # Safety
/// `ledger` must be a live handle; strings NUL-terminated UTF-8.
#[no_mangle]
pub unsafe extern "C" fn tb_ledger_query(
    ledger: *mut TbLedger,
    customer_id: *const c_char,
    explanation_hash_hex: *const c_char,
    out_height: *mut u64,
) -> TbStatus {
    guard(|| {
        let l = self::ledger(ledger)?;
        let hash = parse_digest(text(explanation_hash_hex)?)?;
        let customer = text(customer_id)?;
        match l.query_anchor(customer, &hash) {
            Some((_, height)) => {
                *out(out_height)? = height;
                Ok(())
            }
            None => fail(TbStatus::NotFound, format!("no anchor for {customer}")),
        }
    })
}

/// Runs the seeded batch tamper experiment.
///
/// # Safety
/// Out-pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn tb_audit_batch(
    file_count: usize,
    tamper_fraction: f64,
    seed: u64,
    out_tampered_found: *mut u64,
    out_elapsed_ops: *mut u64,
) -> TbStatus {
    guard(|| {
        let found = out(out_tampered_found)?;
        let ops = out(out_elapsed_ops)?;
        let report = batch_audit_experiment(file_count, tamper_fraction, seed).or_else(|e| fail(TbStatus::AuditError, e))?;
        *found = report.tampered_found;
        *ops = report.elapsed_ops;
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_slot_clears_on_success() {
        let mut phi = 0.0;
        assert_eq!(unsafe { tb_entropy(0.5, 0.2, &mut phi) }, TbStatus::InvalidArgument);
        let msg = tb_last_error_message();
        assert!(!msg.is_null());
        unsafe { tb_free_string(msg) };
        assert_eq!(unsafe { tb_entropy(0.5, 0.5, &mut phi) }, TbStatus::Ok);
        assert!(tb_last_error_message().is_null());
        assert_eq!(phi, 1.0);
    }
}
