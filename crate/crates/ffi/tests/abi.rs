use std::ffi::{c_char, CString};
use std::path::Path;
use std::ptr;

use mdl_core::attack::{self, AttackConfig, LossSpec};
use mdl_core::datagen::{self, DatasetKind};
use mdl_core::eval::{self, Decision, Rule};
use mdl_core::io::{self, CheckpointMeta};
use mdl_core::linalg::Matrix;
use mdl_core::nn::{self, ArchConfig, Mode, ModelKind, ModelParams};
use mdl_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as c_char; 256];
    let len = unsafe { mdl_last_error(buf.as_mut_ptr(), buf.len()) };
    let bytes: Vec<u8> = buf[..len.min(255)].iter().map(|&c| c as u8).collect();
    String::from_utf8(bytes).unwrap()
}

fn cstr(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn saved_model(dir: &Path, kind: ModelKind) -> (ModelParams, CString) {
    let mut arch = ArchConfig::new(3, 2);
    arch.width = 16;
    let mut params = ModelParams::init(kind, arch, 11);
    params.set_mode(Mode::Eval);
    let meta = CheckpointMeta {
        bn_momentum: arch.bn_momentum,
        bn_eps: arch.bn_eps,
        train_config: None,
        epoch_losses: vec![],
    };
    let path = dir.join(format!("{}.bin", kind.name()));
    std::fs::write(&path, io::encode_checkpoint(&params, &meta).unwrap()).unwrap();
    (params, cstr(&path))
}

#[test]
fn generated_dataset_matches_core() {
    let mut ds: *mut MdlDataset = ptr::null_mut();
    let st = unsafe { mdl_dataset_generate(MdlDatasetKind::ConcentricSpheres, 1, 3, 50, 9, &mut ds) };
    assert_eq!(st, MdlStatus::Ok);
    let expected = datagen::generate(DatasetKind::ConcentricSpheres, 1, 3, 50, 9).unwrap();
    unsafe {
        assert_eq!(mdl_dataset_len(ds), 100);
        assert_eq!(mdl_dataset_dim(ds), 3);
        let mut points = vec![0.0; 300];
        let mut labels = vec![0i32; 100];
        assert_eq!(mdl_dataset_copy(ds, points.as_mut_ptr(), labels.as_mut_ptr()), MdlStatus::Ok);
        assert_eq!(points, expected.points.data());
        let want: Vec<i32> = expected.labels.iter().map(|&l| l as i32).collect();
        assert_eq!(labels, want);
        mdl_dataset_free(ds);
    }
}

#[test]
fn dataset_round_trips_through_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let expected = datagen::generate(DatasetKind::SwissRolls, 1, 3, 20, 4).unwrap();
    let path = dir.path().join("ds.bin");
    std::fs::write(&path, io::encode_dataset(&expected).unwrap()).unwrap();
    let mut ds: *mut MdlDataset = ptr::null_mut();
    unsafe {
        assert_eq!(mdl_dataset_load(cstr(&path).as_ptr(), &mut ds), MdlStatus::Ok);
        let mut points = vec![0.0; 120];
        assert_eq!(mdl_dataset_copy(ds, points.as_mut_ptr(), ptr::null_mut()), MdlStatus::Ok);
        assert_eq!(points, expected.points.data());
        mdl_dataset_free(ds);
    }
}

#[test]
fn model_calls_agree_with_core() {
    let dir = tempfile::tempdir().unwrap();
    let x = Matrix::from_vec(4, 3, (0..12).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
    for kind in [ModelKind::DistanceLearner, ModelKind::Standard] {
        let (params, path) = saved_model(dir.path(), kind);
        let mut model: *mut MdlModel = ptr::null_mut();
        unsafe {
            assert_eq!(mdl_model_load(path.as_ptr(), &mut model), MdlStatus::Ok);
            assert_eq!(mdl_model_input_dim(model), 3);
            assert_eq!(mdl_model_num_classes(model), 2);
            let mut k = MdlModelKind::Robust;
            assert_eq!(mdl_model_kind(model, &mut k), MdlStatus::Ok);
            assert_eq!(k as u32, kind.code() as u32);

            let mut pred = vec![0.0; 8];
            assert_eq!(mdl_model_predict(model, x.data().as_ptr(), 4, pred.as_mut_ptr()), MdlStatus::Ok);
            let want = nn::predict(&params, &x, 64).unwrap();
            assert_eq!(pred, want.data());

            let tol = 0.3;
            let mut labels = vec![7i32; 4];
            assert_eq!(mdl_model_classify(model, x.data().as_ptr(), 4, tol, labels.as_mut_ptr()), MdlStatus::Ok);
            let rule = Rule::for_head(params.head(), Some(tol));
            for (got, d) in labels.iter().zip(eval::decisions(&want, rule)) {
                let d = match d {
                    Decision::Class(c) => c as i32,
                    Decision::OutOfDomain => MDL_OUT_OF_DOMAIN,
                };
                assert_eq!(*got, d);
            }

            let y = [0i32, 1, 0, 1];
            let mut adv = vec![0.0; 12];
            let st = mdl_pgd_attack(model, x.data().as_ptr(), y.as_ptr(), 4, 0.2, 10, 0.05, 0, adv.as_mut_ptr());
            assert_eq!(st, MdlStatus::Ok);
            let mut cfg = AttackConfig::new(0.2, LossSpec::for_kind(kind));
            cfg.steps = 10;
            cfg.step_size = 0.05;
            let want = attack::pgd_attack(&params, &x, &[0, 1, 0, 1], &cfg).unwrap();
            assert_eq!(adv, want.data());
            for i in 0..4 {
                let d: f64 = (0..3).map(|k| (adv[i * 3 + k] - x.get(i, k)).powi(2)).sum::<f64>().sqrt();
                assert!(d <= 0.2 + 1e-12);
            }
            mdl_model_free(model);
        }
    }
}

#[test]
fn errors_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    unsafe {
        let mut ds: *mut MdlDataset = ptr::null_mut();
        let st = mdl_dataset_generate(MdlDatasetKind::SeparatedSpheres, 5, 3, 10, 0, &mut ds);
        assert_eq!(st, MdlStatus::InvalidArgument);
        assert!(ds.is_null());
        assert!(!last_error().is_empty());

        assert_eq!(
            mdl_dataset_generate(MdlDatasetKind::SeparatedSpheres, 1, 2, 10, 0, ptr::null_mut()),
            MdlStatus::NullPointer
        );
        assert_eq!(last_error(), "out is null");

        let missing = cstr(&dir.path().join("nope.bin"));
        let mut model: *mut MdlModel = ptr::null_mut();
        assert_eq!(mdl_model_load(missing.as_ptr(), &mut model), MdlStatus::Io);
        assert!(last_error().contains("nope.bin"));

        let junk = dir.path().join("junk.bin");
        std::fs::write(&junk, b"not a model").unwrap();
        assert_eq!(mdl_model_load(cstr(&junk).as_ptr(), &mut model), MdlStatus::Io);

        let (_, path) = saved_model(dir.path(), ModelKind::Standard);
        assert_eq!(mdl_model_load(path.as_ptr(), &mut model), MdlStatus::Ok);
        let x = [0.0; 3];
        let bad = [5i32];
        let mut out = [0.0; 3];
        let st = mdl_pgd_attack(model, x.as_ptr(), bad.as_ptr(), 1, 0.1, 5, 0.01, 0, out.as_mut_ptr());
        assert_eq!(st, MdlStatus::InvalidArgument);
        assert!(last_error().contains("label 5"));
        assert_eq!(mdl_model_predict(model, ptr::null(), 1, out.as_mut_ptr()), MdlStatus::NullPointer);
        let nan = [f64::NAN; 3];
        assert_eq!(mdl_model_predict(model, nan.as_ptr(), 1, out.as_mut_ptr()), MdlStatus::Numeric);
        mdl_model_free(model);

        assert_eq!(mdl_dataset_len(ptr::null()), 0);
        mdl_dataset_free(ptr::null_mut());
        mdl_model_free(ptr::null_mut());
    }
}

#[test]
fn truncated_error_buffer_is_terminated() {
    unsafe {
        mdl_dataset_generate(MdlDatasetKind::SeparatedSpheres, 1, 2, 10, 0, ptr::null_mut());
        let mut buf = [1 as c_char; 4];
        let full = mdl_last_error(buf.as_mut_ptr(), buf.len());
        assert_eq!(full, "out is null".len());
        assert_eq!(buf[3], 0);
        assert_eq!(mdl_last_error(ptr::null_mut(), 0), full);
    }
}

#[test]
fn header_declares_the_api_and_compiles() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/mdl.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for f in [
        "mdl_last_error",
        "mdl_dataset_generate",
        "mdl_dataset_load",
        "mdl_dataset_free",
        "mdl_dataset_copy",
        "mdl_model_load",
        "mdl_model_free",
        "mdl_model_predict",
        "mdl_model_classify",
        "mdl_pgd_attack",
        "typedef struct MdlModel MdlModel",
    ] {
        assert!(text.contains(f), "{f} missing from header");
    }
    let Ok(status) = std::process::Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c"])
        .arg(&header)
        .status()
    else {
        eprintln!("no C compiler; skipping syntax check");
        return;
    };
    assert!(status.success());
}

#[test]
fn c_program_links_against_the_static_library() {
    let manifest = Path::new(env!("CARGO_MANIFEST_DIR"));
    let target = std::env::var_os("CARGO_TARGET_DIR")
        .map(std::path::PathBuf::from)
        .unwrap_or_else(|| manifest.join("../../target"));
    let lib = ["debug", "release"]
        .iter()
        .map(|p| target.join(p).join("libmdl_ffi.a"))
        .find(|p| p.is_file());
    let Some(lib) = lib else {
        eprintln!("static library not found; skipping");
        return;
    };
    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("smoke");
    let Ok(status) = std::process::Command::new("cc")
        .arg(manifest.join("tests/c/smoke.c"))
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
    else {
        eprintln!("no C compiler; skipping");
        return;
    };
    assert!(status.success());
    let out = std::process::Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "exit {:?}", out.status.code());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.starts_with("1 "), "{stdout}");
    assert!(stdout.contains("model.bin"), "{stdout}");
}
