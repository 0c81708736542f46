use std::ffi::{CStr, CString};
use std::process::Command;
use std::ptr;

use plain_mamba_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(pm_last_error()) }.to_string_lossy().into_owned()
}

#[test]
fn params_and_flops() {
    let l1 = CString::new("L1").unwrap();
    let mut n = 0u64;
    assert_eq!(unsafe { pm_count_params(l1.as_ptr(), &mut n) }, PmStatus::Ok);
    assert_eq!(n, plain_mamba::analysis::count_params(&plain_mamba::model::Preset::L1.config()).total as u64);

    let mut f = PmFlops::default();
    assert_eq!(unsafe { pm_count_flops(l1.as_ptr(), 224, 224, &mut f) }, PmStatus::Ok);
    assert_eq!(f.total, f.token_mixing + f.channel_mixing + f.other);

    assert_eq!(unsafe { pm_count_flops(l1.as_ptr(), 100, 224, &mut f) }, PmStatus::Config);
    assert!(last_error().contains("patch size 16"), "{}", last_error());

    let mut a = PmFlops::default();
    assert_eq!(unsafe { pm_count_flops_attention(4096, 4096, &mut a) }, PmStatus::Ok);
    assert!(a.token_mixing > 20_000_000_000_000);
}

#[test]
fn bad_arguments() {
    let bogus = CString::new("L9").unwrap();
    let mut n = 0u64;
    assert_eq!(unsafe { pm_count_params(bogus.as_ptr(), &mut n) }, PmStatus::Config);
    assert_eq!(unsafe { pm_count_params(ptr::null(), &mut n) }, PmStatus::NullPointer);
    let toy = CString::new("toy").unwrap();
    assert_eq!(unsafe { pm_count_params(toy.as_ptr(), ptr::null_mut()) }, PmStatus::NullPointer);
    assert_eq!(unsafe { pm_count_params(toy.as_ptr(), &mut n) }, PmStatus::Ok);
    assert_eq!(last_error(), "");
}

#[test]
fn model_lifecycle() {
    let toy = CString::new("toy").unwrap();
    let mut model = ptr::null_mut();
    assert_eq!(unsafe { pm_model_init(toy.as_ptr(), 7, &mut model) }, PmStatus::Ok);
    assert!(!model.is_null());
    assert_eq!(unsafe { pm_model_num_classes(model) }, 2);

    let pixels = vec![0.5; 32 * 32 * 3];
    let mut logits = [0.0; 2];
    let st = unsafe { pm_model_forward(model, pixels.as_ptr(), 32, 32, logits.as_mut_ptr(), 2) };
    assert_eq!(st, PmStatus::Ok);
    assert!(logits.iter().all(|v| v.is_finite()));

    let mut short = [0.0; 1];
    let st = unsafe { pm_model_forward(model, pixels.as_ptr(), 32, 32, short.as_mut_ptr(), 1) };
    assert_eq!(st, PmStatus::BufferTooSmall);
    let st = unsafe { pm_model_forward(model, pixels.as_ptr(), 30, 32, logits.as_mut_ptr(), 2) };
    assert_eq!(st, PmStatus::Config);

    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("toy.pmwb").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { pm_model_save(model, path.as_ptr(), false) }, PmStatus::Ok);
    let mut loaded = ptr::null_mut();
    assert_eq!(unsafe { pm_model_load(toy.as_ptr(), path.as_ptr(), &mut loaded) }, PmStatus::Ok);
    let mut again = [0.0; 2];
    unsafe { pm_model_forward(loaded, pixels.as_ptr(), 32, 32, again.as_mut_ptr(), 2) };
    assert_eq!(logits, again);

    let l1 = CString::new("L1").unwrap();
    let mut wrong = ptr::null_mut();
    assert_eq!(unsafe { pm_model_load(l1.as_ptr(), path.as_ptr(), &mut wrong) }, PmStatus::Manifest);
    assert!(wrong.is_null());

    unsafe {
        pm_model_free(model);
        pm_model_free(loaded);
        pm_model_free(ptr::null_mut());
    }
}

#[test]
fn scan_paths() {
    let mut paths = ptr::null_mut();
    assert_eq!(unsafe { pm_paths_new(2, 3, false, &mut paths) }, PmStatus::Ok);
    assert_eq!(unsafe { pm_paths_len(paths) }, 6);
    let mut order = [0usize; 6];
    assert_eq!(unsafe { pm_paths_order(paths, 0, order.as_mut_ptr(), 6) }, PmStatus::Ok);
    assert_eq!(order, [0, 1, 2, 5, 4, 3]);
    let mut dirs = [0u8; 6];
    assert_eq!(unsafe { pm_paths_directions(paths, 0, dirs.as_mut_ptr(), 6) }, PmStatus::Ok);
    assert_eq!(dirs, [4, 0, 0, 2, 1, 1]);
    assert_eq!(unsafe { pm_paths_order(paths, 4, order.as_mut_ptr(), 6) }, PmStatus::InvalidArgument);
    assert_eq!(unsafe { pm_paths_order(paths, 0, order.as_mut_ptr(), 5) }, PmStatus::BufferTooSmall);
    assert_eq!(unsafe { pm_paths_new(0, 3, false, &mut paths) }, PmStatus::Config);
    assert!(paths.is_null());
}

#[test]
fn version_string() {
    let v = unsafe { CStr::from_ptr(pm_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_compiles_as_c() {
    let include = concat!(env!("CARGO_MANIFEST_DIR"), "/include");
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("probe.c");
    std::fs::write(
        &src,
        "#include \"plain_mamba.h\"\nint main(void) { PmFlops f; return pm_count_flops_attention(16, 16, &f) == PM_STATUS_OK ? 0 : 1; }\n",
    )
    .unwrap();
    let Ok(out) = Command::new("cc").args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I", include]).arg(&src).output() else {
        eprintln!("no C compiler; skipping");
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
