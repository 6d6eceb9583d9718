use std::ffi::{CStr, CString};
use std::ptr;

use frrc_core::data::FeatureSequence;
use frrc_core::model::{Checkpoint, ModelConfig, ModelParams};
use frrc_core::tensor::Tensor;
use frrc_core::train::predict;
use frrc_ffi::*;

fn tiny_checkpoint() -> Checkpoint {
    let cfg = ModelConfig {
        d0: 5,
        d_model: 8,
        num_blocks: 2,
        heads: 2,
        decoder_heads: 2,
        conv2d_out_channels: 3,
        ffn_dim: 8,
        max_len: 64,
        ..ModelConfig::default()
    };
    Checkpoint::new(cfg.clone(), ModelParams::init(&cfg, 4).unwrap()).unwrap()
}

fn last_error() -> String {
    let p = frrc_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_string()
}

fn load(ck: &Checkpoint) -> *mut FrrcModel {
    let bytes = ck.to_bytes();
    let mut m = ptr::null_mut();
    let s = unsafe { frrc_model_from_bytes(bytes.as_ptr(), bytes.len(), &mut m) };
    assert_eq!(s, FrrcStatus::Ok);
    m
}

#[test]
fn predict_matches_core() {
    let ck = tiny_checkpoint();
    let m = load(&ck);
    assert_eq!(unsafe { frrc_model_input_width(m) }, 5);
    let (t, d) = (17, 5);
    let feats: Vec<f64> = (0..t * d).map(|i| ((i * 7) % 11) as f64 / 11.0 - 0.5).collect();
    let mut density = vec![0.0; t];
    let mut count = f64::NAN;
    let s = unsafe {
        frrc_model_predict(m, feats.as_ptr(), t, d, density.as_mut_ptr(), t, &mut count)
    };
    assert_eq!(s, FrrcStatus::Ok);
    let seq = FeatureSequence::new("x", Tensor::new(vec![t, d], feats).unwrap(), 1).unwrap();
    let (want, c) = predict(&seq, &ck).unwrap();
    assert_eq!(density, want.values);
    assert_eq!(count, c);
    unsafe { frrc_model_free(m) };
}

#[test]
fn load_from_file_and_errors() {
    let ck = tiny_checkpoint();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.frrc");
    ck.save(&path).unwrap();
    let c = CString::new(path.to_str().unwrap()).unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { frrc_model_load(c.as_ptr(), &mut m) }, FrrcStatus::Ok);
    assert!(!m.is_null());

    // Width mismatch.
    let feats = [0.0; 12];
    let s = unsafe { frrc_model_predict(m, feats.as_ptr(), 3, 4, ptr::null_mut(), 0, ptr::null_mut()) };
    assert_eq!(s, FrrcStatus::InvalidArgument);
    assert!(last_error().contains("width 4"));

    // Short output buffer.
    let feats = [0.0; 15];
    let mut out = [0.0; 2];
    let s = unsafe { frrc_model_predict(m, feats.as_ptr(), 3, 5, out.as_mut_ptr(), 2, ptr::null_mut()) };
    assert_eq!(s, FrrcStatus::BufferTooSmall);

    // Non-finite input.
    let mut feats = [0.0; 15];
    feats[4] = f64::NAN;
    let mut cnt = 0.0;
    let s = unsafe { frrc_model_predict(m, feats.as_ptr(), 3, 5, ptr::null_mut(), 0, &mut cnt) };
    assert_eq!(s, FrrcStatus::InvalidArgument);
    unsafe { frrc_model_free(m) };

    let missing = CString::new(dir.path().join("nope").to_str().unwrap()).unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { frrc_model_load(missing.as_ptr(), &mut m) }, FrrcStatus::Data);
    assert!(m.is_null());
    assert_eq!(unsafe { frrc_model_load(ptr::null(), &mut m) }, FrrcStatus::NullPointer);
}

#[test]
fn corrupt_bytes_are_a_data_error() {
    let mut bytes = tiny_checkpoint().to_bytes();
    bytes[0] = b'X';
    let mut m = ptr::null_mut();
    let s = unsafe { frrc_model_from_bytes(bytes.as_ptr(), bytes.len(), &mut m) };
    assert_eq!(s, FrrcStatus::Data);
    assert!(last_error().contains("byte"));
    let s = unsafe { frrc_model_from_bytes(bytes.as_ptr(), 10, &mut m) };
    assert_eq!(s, FrrcStatus::Data);
    unsafe { frrc_model_free(ptr::null_mut()) };
}

#[test]
fn ground_truth_mass() {
    let starts = [0usize, 10, 20];
    let ends = [9usize, 19, 20];
    let mut out = vec![0.0; 25];
    let s = unsafe { frrc_ground_truth(starts.as_ptr(), ends.as_ptr(), 3, 25, out.as_mut_ptr(), 25) };
    assert_eq!(s, FrrcStatus::Ok);
    assert!((out.iter().sum::<f64>() - 3.0).abs() < 1e-9);
    assert_eq!(out[20], 1.0);
    assert_eq!(&out[21..], &[0.0; 4]);

    let bad_end = [30usize, 19, 20];
    let s = unsafe { frrc_ground_truth(starts.as_ptr(), bad_end.as_ptr(), 3, 25, out.as_mut_ptr(), 25) };
    assert_eq!(s, FrrcStatus::InvalidArgument);
    assert!(last_error().contains("interval 0"));
}

#[test]
fn evaluate_counts_examples() {
    let (t, p) = ([10.0, 5.0], [8.0, 5.0]);
    let (mut mae, mut obo) = (0.0, 0.0);
    let s = unsafe { frrc_evaluate_counts(t.as_ptr(), p.as_ptr(), 2, &mut mae, &mut obo) };
    assert_eq!(s, FrrcStatus::Ok);
    assert!((mae - 0.1).abs() < 1e-15);
    assert_eq!(obo, 0.5);
    let s = unsafe { frrc_evaluate_counts(t.as_ptr(), p.as_ptr(), 0, &mut mae, &mut obo) };
    assert_eq!(s, FrrcStatus::InvalidArgument);
    let s = unsafe { frrc_evaluate_counts(ptr::null(), p.as_ptr(), 2, &mut mae, &mut obo) };
    assert_eq!(s, FrrcStatus::NullPointer);
}

#[test]
fn errors_are_per_thread() {
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { frrc_model_load(ptr::null(), &mut m) }, FrrcStatus::NullPointer);
    std::thread::spawn(|| assert!(frrc_last_error().is_null())).join().unwrap();
    assert!(!frrc_last_error().is_null());
    let v = unsafe { CStr::from_ptr(frrc_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}
