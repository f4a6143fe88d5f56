use std::ffi::{CStr, CString};
use std::ptr;

use trustboost_ffi::*;

fn take_string(p: *mut std::ffi::c_char) -> String {
    assert!(!p.is_null());
    let s = unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_string();
    unsafe { tb_free_string(p) };
    s
}

#[test]
fn sha256_known_vector() {
    let mut hex = ptr::null_mut();
    assert_eq!(unsafe { tb_sha256_hex(b"abc".as_ptr(), 3, &mut hex) }, TbStatus::Ok);
    assert_eq!(take_string(hex), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    assert_eq!(unsafe { tb_sha256_hex(ptr::null(), 0, &mut hex) }, TbStatus::Ok);
    assert_eq!(take_string(hex), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    assert_eq!(unsafe { tb_sha256_hex(ptr::null(), 4, &mut hex) }, TbStatus::NullPointer);
}

#[test]
fn entropy_route_and_cost() {
    let mut phi = 0.0;
    assert_eq!(unsafe { tb_entropy(0.98, 0.02, &mut phi) }, TbStatus::Ok);
    assert!((phi - 0.141).abs() < 1e-3);
    let mut r = TbRoute::HumanReview;
    assert_eq!(unsafe { tb_route(phi, 0.80, &mut r) }, TbStatus::Ok);
    assert_eq!(r, TbRoute::AutoDecide);
    assert_eq!(unsafe { tb_route(0.997, 0.80, &mut r) }, TbStatus::Ok);
    assert_eq!(r, TbRoute::HumanReview);
    assert_eq!(unsafe { tb_route(1.5, 0.80, &mut r) }, TbStatus::InvalidArgument);

    let mut usd = 0.0;
    assert_eq!(unsafe { tb_onchain_cost(2000, 50.93, &mut usd) }, TbStatus::Ok);
    assert!((usd - 101.86).abs() < 1e-9);
    assert_eq!(unsafe { tb_onchain_cost(-1, 50.93, &mut usd) }, TbStatus::InvalidArgument);
    assert!(take_string(tb_last_error_message()).contains("negative"));
    assert_eq!(unsafe { tb_entropy(0.5, 0.5, ptr::null_mut()) }, TbStatus::NullPointer);
}

#[test]
fn ledger_handle_lifecycle() {
    let mut l = ptr::null_mut();
    assert_eq!(unsafe { tb_ledger_new(4, TbPreset::FabricLike, 9, &mut l) }, TbStatus::Ok);
    let customer = CString::new("cust-1").unwrap();
    let hash = CString::new("ab".repeat(32)).unwrap();
    assert_eq!(unsafe { tb_ledger_submit_explanation(l, customer.as_ptr(), 10, hash.as_ptr(), 2, 10) }, TbStatus::Ok);
    assert_eq!(
        unsafe { tb_ledger_submit_explanation(l, customer.as_ptr(), 10, hash.as_ptr(), 2, 10) },
        TbStatus::LedgerError
    );
    assert_eq!(unsafe { tb_ledger_submit_explanation(l, customer.as_ptr(), 11, hash.as_ptr(), 9, 11) }, TbStatus::InvalidArgument);
    let bad = CString::new("xyz").unwrap();
    assert_eq!(unsafe { tb_ledger_submit_explanation(l, customer.as_ptr(), 12, bad.as_ptr(), 1, 12) }, TbStatus::InvalidArgument);

    let mut height = 99;
    assert_eq!(unsafe { tb_ledger_query(l, customer.as_ptr(), hash.as_ptr(), &mut height) }, TbStatus::NotFound);
    let mut blocks = 0;
    assert_eq!(unsafe { tb_ledger_run_ordering(l, u64::MAX, &mut blocks) }, TbStatus::Ok);
    assert_eq!(blocks, 1);
    assert_eq!(unsafe { tb_ledger_query(l, customer.as_ptr(), hash.as_ptr(), &mut height) }, TbStatus::Ok);
    assert_eq!(height, 1);
    assert_eq!(unsafe { tb_ledger_height(l, &mut height) }, TbStatus::Ok);
    assert_eq!(height, 1);
    let mut valid = false;
    assert_eq!(unsafe { tb_ledger_validate(l, &mut valid) }, TbStatus::Ok);
    assert!(valid);
    unsafe { tb_ledger_free(l) };
    assert_eq!(unsafe { tb_ledger_height(ptr::null_mut(), &mut height) }, TbStatus::NullPointer);
    assert_eq!(unsafe { tb_ledger_new(0, TbPreset::FabricLike, 9, &mut l) }, TbStatus::InvalidArgument);
}

#[test]
fn audit_batch_counts_exactly() {
    let (mut found, mut ops) = (0, 0);
    assert_eq!(unsafe { tb_audit_batch(100, 0.1, 4, &mut found, &mut ops) }, TbStatus::Ok);
    assert_eq!(found, 10);
    assert!(ops >= 100);
    assert_eq!(unsafe { tb_audit_batch(5, 0.1, 4, &mut found, &mut ops) }, TbStatus::AuditError);
}

#[test]
fn header_is_valid_c() {
    let header = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("include/trustboost.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for sym in ["tb_sha256_hex", "tb_ledger_new", "tb_audit_batch", "tb_free_string", "TB_STATUS_NOT_FOUND"] {
        assert!(text.contains(sym), "{sym} missing from header");
    }
    if let Ok(out) = std::process::Command::new("cc").args(["-fsyntax-only", "-x", "c"]).arg(&header).output() {
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
}
