use std::ffi::{CStr, CString};
use std::ptr;

use wisa_lab::backbone::{Model, ToyDiTConfig, Vocab};
use wisa_lab::physchema::{self, NUM_CATEGORIES};
use wisa_lab::physmodule::PhysConfig;
use wisa_lab::synthphys::{generate, Scenario, ScenarioKind};
use wisa_lab_ffi::*;

fn last_error() -> String {
    let p = wisa_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn annotation_json() -> Vec<u8> {
    let c = generate(&Scenario::new(ScenarioKind::Bounce), 4).unwrap();
    physchema::serialize(&c.annotation)
}

#[test]
fn sci_round_trip() {
    let (mut c, mut e) = (0.0, 0);
    let mut v = 0.0;
    unsafe {
        assert_eq!(wisa_sci_encode(0.016, &mut c, &mut e), WisaStatus::Ok);
        assert_eq!((c, e), (1.6, -2));
        assert_eq!(wisa_sci_decode(c, e, &mut v), WisaStatus::Ok);
    }
    assert_eq!(v, 0.016);
    unsafe {
        assert_eq!(wisa_sci_encode(f64::NAN, &mut c, &mut e), WisaStatus::Numeric);
        assert_eq!(wisa_sci_encode(1.0, ptr::null_mut(), &mut e), WisaStatus::NullPointer);
    }
    assert!(last_error().contains("coefficient"));
}

#[test]
fn annotation_lifecycle() {
    let json = annotation_json();
    let mut h = ptr::null_mut();
    unsafe {
        assert_eq!(wisa_annotation_parse(json.as_ptr(), json.len(), &mut h), WisaStatus::Ok);
        let mut n = usize::MAX;
        assert_eq!(wisa_annotation_validate(h, true, &mut n), WisaStatus::Ok);
        assert_eq!(n, 0);

        let mut gate = vec![-1.0; NUM_CATEGORIES];
        assert_eq!(wisa_annotation_gating(h, gate.as_mut_ptr(), 3), WisaStatus::BufferTooSmall);
        assert_eq!(wisa_annotation_gating(h, gate.as_mut_ptr(), gate.len()), WisaStatus::Ok);
        let active: Vec<usize> = (0..NUM_CATEGORIES).filter(|&i| gate[i] == 1.0).map(|i| i + 1).collect();
        assert_eq!(active, vec![1, 2, 14, 20, 22, 29]);

        let mut s = ptr::null_mut();
        assert_eq!(wisa_annotation_to_json(h, &mut s), WisaStatus::Ok);
        assert_eq!(CStr::from_ptr(s).to_bytes(), &json[..]);
        wisa_string_free(s);
        wisa_annotation_free(h);
        wisa_annotation_free(ptr::null_mut());
    }
}

#[test]
fn malformed_annotation_reports_path() {
    let bad = br#"{"caption": 3}"#;
    let mut h = ptr::null_mut();
    let st = unsafe { wisa_annotation_parse(bad.as_ptr(), bad.len(), &mut h) };
    assert_eq!(st, WisaStatus::Parse);
    assert!(h.is_null());
    assert!(last_error().contains("caption"), "{}", last_error());
}

#[test]
fn perturbation_is_seeded_and_in_range() {
    let gate: Vec<f64> = (0..NUM_CATEGORIES).map(|i| (i % 2) as f64).collect();
    let mut a = vec![0.0; NUM_CATEGORIES];
    let mut b = vec![0.0; NUM_CATEGORIES];
    unsafe {
        assert_eq!(wisa_perturb(gate.as_ptr(), gate.len(), 0.5, 9, a.as_mut_ptr()), WisaStatus::Ok);
        assert_eq!(wisa_perturb(gate.as_ptr(), gate.len(), 0.5, 9, b.as_mut_ptr()), WisaStatus::Ok);
        assert_eq!(wisa_perturb(gate.as_ptr(), gate.len(), 1.5, 9, b.as_mut_ptr()), WisaStatus::Usage);
        assert_eq!(wisa_perturb(gate.as_ptr(), 5, 0.5, 9, b.as_mut_ptr()), WisaStatus::Dimension);
    }
    assert_eq!(a, b);
    assert!(a.iter().all(|v| [0.0, 0.1, 1.0].contains(v)));
}

#[test]
fn model_classifies_through_handle() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ToyDiTConfig {
        n_blocks: 1,
        model_dim: 32,
        frames: 4,
        height: 8,
        width: 8,
        ..ToyDiTConfig::default()
    };
    let model = Model::new(cfg, PhysConfig::default(), Vocab::build(["a ball"]), 1).unwrap();
    let path = dir.path().join("m.ckpt");
    model.save(&path).unwrap();

    let cpath = CString::new(path.to_str().unwrap()).unwrap();
    let mut h = ptr::null_mut();
    unsafe {
        assert_eq!(wisa_model_load(cpath.as_ptr(), &mut h), WisaStatus::Ok);
        let mut shape = [0usize; 3];
        assert_eq!(wisa_model_clip_shape(h, shape.as_mut_ptr()), WisaStatus::Ok);
        assert_eq!(shape, [4, 8, 8]);
        let clip = vec![0.25; 4 * 8 * 8];
        let mut probs = vec![0.0; NUM_CATEGORIES];
        let st = wisa_model_classify(h, clip.as_ptr(), clip.len(), 0, ptr::null(), probs.as_mut_ptr(), probs.len());
        assert_eq!(st, WisaStatus::Ok);
        // zero-initialised classifier head
        assert!(probs.iter().all(|&p| p == 0.5));
        let st = wisa_model_classify(h, clip.as_ptr(), 10, 0, ptr::null(), probs.as_mut_ptr(), probs.len());
        assert_eq!(st, WisaStatus::Dimension);
        wisa_model_free(h);

        let missing = CString::new("/nonexistent/m.ckpt").unwrap();
        assert_eq!(wisa_model_load(missing.as_ptr(), &mut h), WisaStatus::Io);
        assert!(h.is_null());
    }
}
