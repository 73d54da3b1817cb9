use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use wat_core::corpus::{corpus_to_string, generate_synthetic_corpus, GeneratorSpec};
use wat_core::embedding::{Embedder, ProviderConfig};
use wat_core::features::{FeatureConfig, FeatureType, TurnSource};
use wat_core::inventory::Inventory;
use wat_core::models::{ModelCheckpoint, ModelConfig, ModelKind, SequenceModel};
use wat_core::pipeline::{build_examples, score_corpus, RunContext, TrainConfig};
use wat_ffi::*;

fn last_error() -> String {
    let p = wat_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn hash(dim: usize) -> *mut WatProvider {
    let mut p = ptr::null_mut();
    assert_eq!(unsafe { wat_provider_hash(dim, 0, &mut p) }, WatStatus::Ok);
    p
}

#[test]
fn embed_matches_core() {
    let p = hash(16);
    assert_eq!(unsafe { wat_provider_dim(p) }, 16);
    let text = CString::new("we agree on the plan").unwrap();
    let mut out = [0.0; 16];
    assert_eq!(
        unsafe { wat_embed(p, text.as_ptr(), out.as_mut_ptr(), out.len()) },
        WatStatus::Ok
    );
    let core = Embedder::from_config(&ProviderConfig::hash(16))
        .unwrap()
        .embed("we agree on the plan")
        .unwrap();
    assert_eq!(&out[..], core.as_slice());

    let mut small = [0.0; 4];
    assert_eq!(
        unsafe { wat_embed(p, text.as_ptr(), small.as_mut_ptr(), small.len()) },
        WatStatus::BufferTooSmall
    );
    assert!(last_error().contains("16 required"));
    unsafe { wat_provider_free(p) };
}

#[test]
fn null_and_bad_arguments_are_reported() {
    let mut out = 0.0;
    assert_eq!(
        unsafe { wat_cosine(ptr::null(), ptr::null(), 3, &mut out) },
        WatStatus::NullPointer
    );
    assert!(last_error().contains("is null"));
    let (a, b) = ([1.0, 0.0], [1.0, 1.0]);
    assert_eq!(
        unsafe { wat_cosine(a.as_ptr(), b.as_ptr(), 2, &mut out) },
        WatStatus::Ok
    );
    assert!((out - 0.5f64.sqrt()).abs() < 1e-15);
    assert!(wat_last_error().is_null());

    let mut inv = ptr::null_mut();
    let missing = CString::new("/nonexistent/inventory.jsonl").unwrap();
    assert_eq!(
        unsafe { wat_inventory_load(missing.as_ptr(), &mut inv) },
        WatStatus::Io
    );
    assert!(inv.is_null());
    let mut model = ptr::null_mut();
    assert_eq!(
        unsafe { wat_model_load(missing.as_ptr(), &mut model) },
        WatStatus::Io
    );

    let mut p = ptr::null_mut();
    assert_eq!(
        unsafe { wat_provider_hash(0, 0, &mut p) },
        WatStatus::Embedding
    );
    unsafe {
        wat_inventory_free(ptr::null_mut());
        wat_provider_free(ptr::null_mut());
        wat_model_free(ptr::null_mut());
        wat_string_free(ptr::null_mut());
    }
}

#[test]
fn score_text_covers_the_inventory() {
    let p = hash(64);
    let mut inv = ptr::null_mut();
    assert_eq!(
        unsafe { wat_inventory_placeholder(&mut inv) },
        WatStatus::Ok
    );
    let n = unsafe { wat_inventory_size(inv) };
    assert_eq!(n, 36);
    let text = CString::new("I trust that we are working toward my goals").unwrap();
    let mut out = vec![0.0; n];
    for rater in [WAT_RATER_PATIENT, WAT_RATER_THERAPIST] {
        assert_eq!(
            unsafe { wat_score_text(p, inv, text.as_ptr(), rater, out.as_mut_ptr(), n) },
            WatStatus::Ok
        );
        assert!(out.iter().all(|v| (-1.0..=1.0).contains(v)));
    }
    assert_eq!(
        unsafe { wat_score_text(p, inv, text.as_ptr(), 7, out.as_mut_ptr(), n) },
        WatStatus::InvalidArgument
    );
    unsafe {
        wat_inventory_free(inv);
        wat_provider_free(p);
    }
}

fn saved_model(dir: &Path) -> (PathBuf, SequenceModel, String) {
    let sessions = generate_synthetic_corpus(&GeneratorSpec::balanced(1, 5, 3)).unwrap();
    let feature = FeatureConfig::new(FeatureType::WaScore, TurnSource::Both, 16);
    let run = RunContext {
        feature,
        provider: ProviderConfig::hash(16),
        inventory: Inventory::placeholder(),
        train: TrainConfig::new(10, 0),
        test_fraction: 0.2,
        split_seed: 0,
    };
    let model =
        SequenceModel::new(ModelConfig::new(ModelKind::Lstm, feature.feature_dim(), 9)).unwrap();
    let path = dir.join("m.json");
    ModelCheckpoint::new(&model, Some(run), None, 0, None)
        .save(&path)
        .unwrap();
    let line = corpus_to_string(&sessions[2..3], None);
    (path, model, line)
}

#[test]
fn model_predictions_match_core() {
    let dir = tempfile::tempdir().unwrap();
    let (path, model, line) = saved_model(dir.path());
    let cpath = CString::new(path.to_str().unwrap()).unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(
        unsafe { wat_model_load(cpath.as_ptr(), &mut m) },
        WatStatus::Ok
    );
    assert_eq!(unsafe { wat_model_input_dim(m) }, 72);

    let embedder = Embedder::from_config(&ProviderConfig::hash(16)).unwrap();
    let sessions = wat_core::corpus::parse_corpus(line.as_bytes()).unwrap();
    let scored = score_corpus(&sessions, &Inventory::placeholder(), &embedder, 50).unwrap();
    let cfg = FeatureConfig::new(FeatureType::WaScore, TurnSource::Both, 16);
    let x = build_examples(&scored, &cfg, 50).unwrap().remove(0).x;
    let expected = model.predict(&x).unwrap();

    let (mut code, mut probs) = (u32::MAX, [0.0; WAT_NUM_CLASSES]);
    let status = unsafe {
        wat_model_predict(
            m,
            x.data().as_ptr(),
            x.rows(),
            x.last_dim(),
            &mut code,
            probs.as_mut_ptr(),
        )
    };
    assert_eq!(status, WatStatus::Ok);
    assert_eq!(code as usize, expected.condition.code());
    assert_eq!(probs.to_vec(), expected.probabilities);

    let p = hash(16);
    let session = CString::new(line.trim_end()).unwrap();
    let mut json = ptr::null_mut();
    assert_eq!(
        unsafe { wat_model_predict_session(m, p, session.as_ptr(), &mut json) },
        WatStatus::Ok
    );
    let v: serde_json::Value =
        serde_json::from_str(unsafe { CStr::from_ptr(json) }.to_str().unwrap()).unwrap();
    assert_eq!(v["condition"], expected.condition.as_str());
    assert_eq!(v["session_id"], sessions[0].session_id.as_str());
    unsafe { wat_string_free(json) };

    let wrong = hash(8);
    let mut json = ptr::null_mut();
    assert_eq!(
        unsafe { wat_model_predict_session(m, wrong, session.as_ptr(), &mut json) },
        WatStatus::InvalidArgument
    );
    assert!(json.is_null());
    let bad_width = [0.0; 10];
    assert_eq!(
        unsafe { wat_model_predict(m, bad_width.as_ptr(), 2, 5, &mut code, ptr::null_mut()) },
        WatStatus::Validation
    );
    unsafe {
        wat_provider_free(p);
        wat_provider_free(wrong);
        wat_model_free(m);
    }
}

#[test]
fn version_is_static() {
    let v = unsafe { CStr::from_ptr(wat_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

/// Compiles a C program against the generated header and the static library.
#[test]
fn c_program_links_against_header() {
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    if Command::new(&cc).arg("--version").output().is_err() {
        eprintln!("no C compiler found; skipping");
        return;
    }
    let crate_dir = Path::new(env!("CARGO_MANIFEST_DIR"));
    let lib_dir = std::env::current_exe()
        .unwrap()
        .parent()
        .unwrap()
        .parent()
        .unwrap()
        .to_path_buf();
    let staticlib = lib_dir.join("libwat_ffi.a");
    assert!(staticlib.exists(), "{} missing", staticlib.display());
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("smoke.c");
    std::fs::write(
        &src,
        r#"
#include <stdio.h>
#include "wat.h"
int main(void) {
    WatProvider *p = NULL;
    WatInventory *inv = NULL;
    double scores[36];
    if (wat_provider_hash(64, 0, &p) != WAT_STATUS_OK) return 1;
    if (wat_inventory_placeholder(&inv) != WAT_STATUS_OK) return 2;
    if (wat_score_text(p, inv, "we agree on goals", WAT_RATER_PATIENT, scores, 36) != WAT_STATUS_OK) return 3;
    if (wat_embed(p, "x", scores, 2) != WAT_STATUS_BUFFER_TOO_SMALL) return 4;
    if (wat_last_error() == NULL) return 5;
    printf("%s %zu\n", wat_version(), wat_inventory_size(inv));
    wat_inventory_free(inv);
    wat_provider_free(p);
    return 0;
}
"#,
    )
    .unwrap();
    let exe = dir.path().join("smoke");
    let status = Command::new(&cc)
        .arg(&src)
        .arg("-I")
        .arg(crate_dir.join("include"))
        .arg(&staticlib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success(), "C compilation failed");
    let out = Command::new(&exe).output().unwrap();
    assert!(
        out.status.success(),
        "smoke program exited with {:?}",
        out.status.code()
    );
    assert_eq!(
        String::from_utf8_lossy(&out.stdout).trim(),
        format!("{} 36", env!("CARGO_PKG_VERSION"))
    );
}
