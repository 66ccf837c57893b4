use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use dcn_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(dcn_last_error()) }.to_string_lossy().into_owned()
}

fn tiny_json() -> CString {
    CString::new(
        r#"{"d": 8, "h": 2, "k": 1, "l": 2, "t": 4, "e": 4, "c": 2, "n_objects": 4, "n_attributes": 4,
            "layer_attn_hidden": 8, "head_hidden": 8,
            "data": {"objects_per_image": 3, "n_train": 16, "n_test": 8},
            "train": {"max_epochs": 1, "batch_size": 8}}"#,
    )
    .unwrap()
}

#[test]
fn create_count_and_free() {
    let cfg = tiny_json();
    let mut model = ptr::null_mut();
    assert_eq!(unsafe { dcn_model_new(cfg.as_ptr(), &mut model) }, DcnStatus::Ok);
    assert!(!model.is_null());
    let (mut n, mut analytic, mut answers) = (0usize, 0usize, 0usize);
    unsafe {
        assert_eq!(dcn_model_num_params(model, &mut n), DcnStatus::Ok);
        assert_eq!(dcn_count_params(cfg.as_ptr(), &mut analytic), DcnStatus::Ok);
        assert_eq!(dcn_model_num_answers(model, &mut answers), DcnStatus::Ok);
        dcn_model_free(model);
        dcn_model_free(ptr::null_mut());
    }
    assert_eq!(n, analytic);
    assert_eq!(answers, 4);
}

#[test]
fn errors_carry_codes_and_messages() {
    let mut model = ptr::null_mut();
    let bad = CString::new(r#"{"d": 30, "h": 4}"#).unwrap();
    assert_eq!(unsafe { dcn_model_new(bad.as_ptr(), &mut model) }, DcnStatus::Config);
    assert!(model.is_null());
    assert!(last_error().contains("`h`"), "{}", last_error());
    assert_eq!(unsafe { dcn_model_new(ptr::null(), ptr::null_mut()) }, DcnStatus::NullArgument);
    let missing = CString::new("/nonexistent/checkpoint").unwrap();
    assert_eq!(unsafe { dcn_model_load(missing.as_ptr(), &mut model) }, DcnStatus::Io);
    let mut n = 0usize;
    assert_eq!(unsafe { dcn_model_num_params(ptr::null(), &mut n) }, DcnStatus::NullArgument);
    let invalid = [0xffu8 as std::ffi::c_char, 0];
    assert_eq!(unsafe { dcn_count_params(invalid.as_ptr(), &mut n) }, DcnStatus::InvalidUtf8);
}

#[test]
fn schedule() {
    assert_eq!(dcn_lr_at(0.0, 0.001, 4.0), 0.001);
    assert!((dcn_lr_at(4.0, 0.001, 4.0) - 0.0005).abs() < 1e-18);
    assert!((dcn_lr_at(8.0, 0.001, 4.0) - 0.00025).abs() < 1e-18);
    assert!(dcn_lr_at(-1.0, 0.001, 4.0).is_nan());
    assert!(dcn_lr_at(1.0, 0.001, 0.5).is_nan());
}

#[test]
fn train_save_load_predict() {
    let cfg = tiny_json();
    let dir = tempfile::tempdir().unwrap();
    let out = CString::new(dir.path().join("run").to_str().unwrap()).unwrap();
    let mut model = ptr::null_mut();
    let mut best = -1.0;
    assert_eq!(unsafe { dcn_train(cfg.as_ptr(), out.as_ptr(), &mut model, &mut best) }, DcnStatus::Ok);
    assert!((0.0..=1.0).contains(&best));
    let ckpt = CString::new(dir.path().join("ckpt").to_str().unwrap()).unwrap();
    let mut loaded = ptr::null_mut();
    let sample = CString::new(
        r#"{"regions": [{"object": 0, "attribute": 2}, null, {"object": 3, "attribute": 1}, null],
            "question": [8, 3, 9], "question_type": 2, "answer": 2, "noise_seed": 5}"#,
    )
    .unwrap();
    let (mut a, mut b) = ([0.0f64; 4], [0.0f64; 4]);
    let mut n = 0usize;
    let (mut acc1, mut acc2) = (0.0, 0.0);
    unsafe {
        assert_eq!(dcn_model_save(model, ckpt.as_ptr()), DcnStatus::Ok);
        assert_eq!(dcn_model_load(ckpt.as_ptr(), &mut loaded), DcnStatus::Ok);
        assert_eq!(dcn_model_predict(model, sample.as_ptr(), a.as_mut_ptr(), 4, &mut n), DcnStatus::Ok);
        assert_eq!(n, 4);
        assert_eq!(dcn_model_predict(loaded, sample.as_ptr(), b.as_mut_ptr(), 4, &mut n), DcnStatus::Ok);
        assert_eq!(
            dcn_model_predict(model, sample.as_ptr(), a.as_mut_ptr(), 2, &mut n),
            DcnStatus::BufferTooSmall
        );
        assert_eq!(n, 4);
        assert_eq!(dcn_model_evaluate(model, &mut acc1), DcnStatus::Ok);
        assert_eq!(dcn_model_evaluate(loaded, &mut acc2), DcnStatus::Ok);
        dcn_model_free(model);
        dcn_model_free(loaded);
    }
    assert_eq!(a, b);
    assert!(a.iter().all(|&s| s > 0.0 && s < 1.0));
    assert_eq!(acc1, acc2);
    assert!(dir.path().join("run").join("metrics.csv").exists());
}

fn header() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include").join("dcn.h")
}

#[test]
fn header_declares_the_abi() {
    let text = std::fs::read_to_string(header()).expect("build script writes include/dcn.h");
    for name in [
        "typedef struct DcnModel DcnModel",
        "DCN_STATUS_OK",
        "DCN_STATUS_BUFFER_TOO_SMALL",
        "dcn_last_error",
        "dcn_model_new",
        "dcn_model_load",
        "dcn_model_save",
        "dcn_model_free",
        "dcn_model_predict",
        "dcn_model_evaluate",
        "dcn_count_params",
        "dcn_lr_at",
        "dcn_train",
    ] {
        assert!(text.contains(name), "header lacks {name}");
    }
}

/// Compiles a small C program against the header and static library when a
/// C compiler is available.
#[test]
fn c_program_links_and_runs() {
    if Command::new("cc").arg("--version").output().is_err() {
        eprintln!("no C compiler, skipping");
        return;
    }
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().unwrap().parent().unwrap();
    let lib = profile_dir.join("libdcn_ffi.a");
    if !lib.exists() {
        eprintln!("static library not found at {}, skipping", lib.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("smoke.c");
    std::fs::write(
        &src,
        r#"#include <stdio.h>
#include "dcn.h"
int main(void) {
    size_t n = 0;
    if (dcn_count_params("{\"d\": 8, \"h\": 2, \"e\": 4, \"c\": 2}", &n) != DCN_STATUS_OK) return 1;
    DcnModel *m = NULL;
    if (dcn_model_new("{\"d\": 30, \"h\": 4}", &m) != DCN_STATUS_CONFIG) return 2;
    if (m != NULL) return 3;
    if (dcn_lr_at(4.0, 0.001, 4.0) != 0.0005) return 4;
    printf("%zu\n", n);
    return 0;
}
"#,
    )
    .unwrap();
    let bin = dir.path().join("smoke");
    let status = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(header().parent().unwrap())
        .arg(&lib)
        .args(["-lm", "-lpthread", "-ldl", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success(), "C compilation failed");
    let out = Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "C smoke test exited with {:?}", out.status);
    let printed: usize = String::from_utf8_lossy(&out.stdout).trim().parse().unwrap();
    assert!(printed > 0);
}
