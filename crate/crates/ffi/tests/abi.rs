use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use reltask_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as std::ffi::c_char; 256];
    unsafe { rt_last_error(buf.as_mut_ptr(), buf.len()) };
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
}

fn task(name: &str) -> *mut RtTask {
    let name = CString::new(name).unwrap();
    let mut t = ptr::null_mut();
    assert_eq!(unsafe { rt_task_from_builtin(name.as_ptr(), &mut t) }, RtStatus::Ok);
    t
}

fn kernel(json: &str) -> *mut RtKernel {
    let json = CString::new(json).unwrap();
    let mut k = ptr::null_mut();
    assert_eq!(unsafe { rt_kernel_from_json(json.as_ptr(), &mut k) }, RtStatus::Ok, "{}", last_error());
    k
}

#[test]
fn task_and_dataset_round_trip() {
    let t = task("aba_vs_abb");
    unsafe {
        assert_eq!(rt_task_k(t), 3);
        assert_eq!(rt_task_num_templates(t), 2);
        assert_eq!(rt_task_set_vocab_size(t, 64), RtStatus::Ok);
        let mut ds = ptr::null_mut();
        assert_eq!(rt_dataset_sample(t, 20, 10, 3, &mut ds), RtStatus::Ok);
        assert_eq!(rt_dataset_len(ds), 20);
        let mut toks = vec![0u32; 60];
        assert_eq!(rt_dataset_tokens(ds, toks.as_mut_ptr(), 59), RtStatus::BufferTooSmall);
        assert_eq!(rt_dataset_tokens(ds, toks.as_mut_ptr(), 60), RtStatus::Ok);
        let mut tmpl = vec![0usize; 20];
        assert_eq!(rt_dataset_templates(ds, tmpl.as_mut_ptr(), 20), RtStatus::Ok);
        let mut y = vec![0.0; 20];
        assert_eq!(rt_dataset_labels(ds, y.as_mut_ptr(), 20), RtStatus::Ok);
        for i in 0..20 {
            let row = &toks[3 * i..3 * i + 3];
            // template 0 is aba, template 1 is abb
            assert_eq!(row[2] == row[0], tmpl[i] == 0);
            assert!(y[i] == 1.0 || y[i] == -1.0);
        }
        rt_dataset_free(ds);
        rt_task_free(t);
    }
}

#[test]
fn errors_carry_messages() {
    let bad = CString::new("no_such_task").unwrap();
    let mut t = ptr::null_mut();
    let s = unsafe { rt_task_from_builtin(bad.as_ptr(), &mut t) };
    assert_eq!(s, RtStatus::InvalidArgument);
    assert!(t.is_null());
    assert!(last_error().contains("no_such_task"));
    assert_eq!(unsafe { rt_task_from_builtin(ptr::null(), &mut t) }, RtStatus::NullPointer);
    let mut v = 0.0;
    let x = [1u32, 2];
    let y = [1u32];
    // k = 0 is an empty sequence
    assert_eq!(
        unsafe { rt_k_attn(x.as_ptr(), y.as_ptr(), 0, 0.0, 0.5, 0, 0, &mut v, ptr::null_mut()) },
        RtStatus::Dimension
    );
    // freeing null is a no-op
    unsafe {
        rt_task_free(ptr::null_mut());
        rt_dataset_free(ptr::null_mut());
        rt_kernel_free(ptr::null_mut());
    }
}

#[test]
fn kernel_values_match_the_library() {
    let x = [4u32, 4, 9];
    let y = [7u32, 9, 9];
    let (mut v, mut se) = (0.0, -1.0);
    unsafe { rt_k_attn(x.as_ptr(), y.as_ptr(), 3, 0.0, 0.5, 0, 0, &mut v, &mut se) };
    // one token of x matches two of y: (2 + γ²k)/k²
    assert!((v - (2.0 + 0.75) / 9.0).abs() < 1e-15);
    assert_eq!(se, 0.0);

    let k = kernel(r#"{"kind":"trans","beta":0.5,"gamma":0.5,"b1":1.0,"b2":0.3,"n_samples":256}"#);
    let (mut a, mut b) = (0.0, 0.0);
    let x2 = [40u32, 40, 1];
    let y2 = [2u32, 1, 1];
    unsafe {
        assert_eq!(rt_kernel_eval(k, x.as_ptr(), y.as_ptr(), 3, &mut a, ptr::null_mut()), RtStatus::Ok);
        assert_eq!(rt_kernel_eval(k, x2.as_ptr(), y2.as_ptr(), 3, &mut b, ptr::null_mut()), RtStatus::Ok);
    }
    assert_eq!(a, b, "relabelled pairs share one value");
    unsafe { rt_kernel_free(k) };
}

#[test]
fn n_matrix_dichotomy() {
    let t = task("same_different");
    unsafe { assert_eq!(rt_task_add_cls(t), RtStatus::Ok) };
    let mut vals = [0.0; 4];
    let (mut cond, mut singular) = (0.0, false);
    let mlp = kernel(r#"{"kind":"inner_product"}"#);
    unsafe {
        assert_eq!(rt_n_matrix(t, mlp, 0, vals.as_mut_ptr(), 3, &mut cond, &mut singular), RtStatus::BufferTooSmall);
        assert_eq!(rt_n_matrix(t, mlp, 0, vals.as_mut_ptr(), 4, &mut cond, &mut singular), RtStatus::Ok);
    }
    assert!(singular);
    let tr = kernel(r#"{"kind":"trans","beta":0.5,"gamma":0.5,"b1":1.0,"b2":0.3,"n_samples":1048576}"#);
    unsafe { assert_eq!(rt_n_matrix(t, tr, 0, vals.as_mut_ptr(), 4, &mut cond, &mut singular), RtStatus::Ok) };
    assert!(!singular && cond < 1e6, "{cond}");
    assert_eq!(vals[1], vals[2]);
    unsafe {
        rt_kernel_free(mlp);
        rt_kernel_free(tr);
        rt_task_free(t);
    }
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(rt_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_every_entry_point_and_compiles() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR"));
    let header = std::fs::read_to_string(dir.join("include/reltask.h")).unwrap();
    let src = std::fs::read_to_string(dir.join("src/lib.rs")).unwrap();
    for line in src.lines() {
        if let Some(rest) = line.split("extern \"C\" fn ").nth(1) {
            let name = rest.split('(').next().unwrap();
            assert!(header.contains(&format!("{name}(")), "{name} missing from the header");
        }
    }
    // syntax check with the system C compiler when one is present
    if let Ok(out) = Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c"])
        .arg(dir.join("include/reltask.h"))
        .output()
    {
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
}
