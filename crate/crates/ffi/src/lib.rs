//! C ABI over `wat-core`.
//!
//! Every fallible function returns a [`WatStatus`]; on failure the message is
//! available from [`wat_last_error`] on the same thread. Handles are opaque
//! and must be released with their `*_free` function. Panics never cross the
//! boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::io::BufReader;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use serde::Serialize;
use thiserror::Error;

use wat_core::alliance::{cosine, score_turn, InventoryEmbeddings, ItemEmbeddings};
use wat_core::corpus::{parse_corpus, Speaker};
use wat_core::embedding::{Embedder, EmbeddingError, ProviderConfig, ProviderKind};
use wat_core::inventory::{load_inventory, Inventory};
use wat_core::models::{ModelCheckpoint, SequenceModel};
use wat_core::numeric::Tensor;
use wat_core::pipeline::{build_examples, score_corpus, RunContext};

/// Result codes. Zero is success.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WatStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Validation = 5,
    Embedding = 6,
    Model = 7,
    BufferTooSmall = 8,
    Panic = 9,
}

/// Rater codes for [`wat_score_text`].
pub const WAT_RATER_PATIENT: u32 = 0;
pub const WAT_RATER_THERAPIST: u32 = 1;

/// Number of classes in a prediction.
pub const WAT_NUM_CLASSES: usize = 4;

/// Opaque inventory handle.
pub struct WatInventory {
    inner: Inventory,
}

/// Opaque embedding provider handle.
pub struct WatProvider {
    inner: Embedder,
}

/// Opaque trained-model handle.
pub struct WatModel {
    model: SequenceModel,
    run: Option<RunContext>,
}

#[derive(Debug, Error)]
enum FfiError {
    #[error("{0} is null")]
    Null(&'static str),
    #[error("{0} is not valid UTF-8")]
    Utf8(&'static str),
    #[error("{0}")]
    InvalidArgument(String),
    #[error("output buffer holds {have} values, {need} required")]
    BufferTooSmall { have: usize, need: usize },
    #[error(transparent)]
    Core(#[from] wat_core::Error),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
}

impl FfiError {
    fn status(&self) -> WatStatus {
        match self {
            FfiError::Null(_) => WatStatus::NullPointer,
            FfiError::Utf8(_) | FfiError::InvalidArgument(_) => WatStatus::InvalidArgument,
            FfiError::BufferTooSmall { .. } => WatStatus::BufferTooSmall,
            FfiError::Embedding(_) => WatStatus::Embedding,
            FfiError::Core(e) => match e.root() {
                wat_core::Error::Io { .. } => WatStatus::Io,
                wat_core::Error::Parse { .. } => WatStatus::Parse,
                wat_core::Error::Validation(_) | wat_core::Error::Config(_) => {
                    WatStatus::Validation
                }
                wat_core::Error::Embedding(_) => WatStatus::Embedding,
                wat_core::Error::Numeric(_) | wat_core::Error::Checkpoint(_) => WatStatus::Model,
                wat_core::Error::Context { .. } => unreachable!("root skips context"),
            },
        }
    }
}

type FfiResult<T> = Result<T, FfiError>;

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> FfiResult<()>) -> WatStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => WatStatus::Ok,
        Ok(Err(e)) => {
            set_last_error(e.to_string());
            e.status()
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("internal panic: {msg}"));
            WatStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &'static str) -> FfiResult<&'a str> {
    if p.is_null() {
        return Err(FfiError::Null(name));
    }
    CStr::from_ptr(p).to_str().map_err(|_| FfiError::Utf8(name))
}

unsafe fn ref_arg<'a, T>(p: *const T, name: &'static str) -> FfiResult<&'a T> {
    p.as_ref().ok_or(FfiError::Null(name))
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, name: &'static str) -> FfiResult<&'a [f64]> {
    if p.is_null() {
        return Err(FfiError::Null(name));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_slice<'a>(
    p: *mut f64,
    len: usize,
    need: usize,
    name: &'static str,
) -> FfiResult<&'a mut [f64]> {
    if p.is_null() {
        return Err(FfiError::Null(name));
    }
    if len < need {
        return Err(FfiError::BufferTooSmall { have: len, need });
    }
    Ok(std::slice::from_raw_parts_mut(p, need))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> FfiResult<()> {
    if out.is_null() {
        return Err(FfiError::Null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn free<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Message for the last failed call on this thread, or NULL. Valid until the
/// next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn wat_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn wat_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn wat_inventory_placeholder(out: *mut *mut WatInventory) -> WatStatus {
    guard(|| {
        put(
            out,
            WatInventory {
                inner: Inventory::placeholder(),
            },
        )
    })
}

/// Loads an inventory JSONL file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` as for [`wat_inventory_placeholder`].
#[no_mangle]
pub unsafe extern "C" fn wat_inventory_load(
    path: *const c_char,
    out: *mut *mut WatInventory,
) -> WatStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        put(
            out,
            WatInventory {
                inner: load_inventory(path)?,
            },
        )
    })
}

/// Items per rater; 0 for NULL.
///
/// # Safety
/// `inventory` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn wat_inventory_size(inventory: *const WatInventory) -> usize {
    inventory.as_ref().map_or(0, |i| i.inner.size())
}

/// # Safety
/// `inventory` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn wat_inventory_free(inventory: *mut WatInventory) {
    free(inventory)
}

fn provider(config: ProviderConfig) -> FfiResult<WatProvider> {
    Ok(WatProvider {
        inner: Embedder::from_config(&config)?,
    })
}

/// Deterministic hash embedding provider of dimension `dim`.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn wat_provider_hash(
    dim: usize,
    seed: u64,
    out: *mut *mut WatProvider,
) -> WatStatus {
    guard(|| {
        let mut config = ProviderConfig::hash(dim);
        config.kind = ProviderKind::Hash { dim, seed };
        put(out, provider(config)?)
    })
}

/// Provider backed by a precomputed vector file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` as for [`wat_provider_hash`].
#[no_mangle]
pub unsafe extern "C" fn wat_provider_file(
    path: *const c_char,
    out: *mut *mut WatProvider,
) -> WatStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        put(out, provider(ProviderConfig::file(path))?)
    })
}

/// Provider speaking the remote embedding protocol at `endpoint`.
///
/// # Safety
/// `endpoint` must be a NUL-terminated string; `out` as for [`wat_provider_hash`].
#[no_mangle]
pub unsafe extern "C" fn wat_provider_remote(
    endpoint: *const c_char,
    out: *mut *mut WatProvider,
) -> WatStatus {
    guard(|| {
        let endpoint = str_arg(endpoint, "endpoint")?;
        put(out, provider(ProviderConfig::remote(endpoint))?)
    })
}

/// Embedding dimension; 0 for NULL.
///
/// # Safety
/// `provider` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn wat_provider_dim(provider: *const WatProvider) -> usize {
    provider.as_ref().map_or(0, |p| p.inner.dim())
}

/// # Safety
/// `provider` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn wat_provider_free(provider: *mut WatProvider) {
    free(provider)
}

/// Writes the embedding of `text` into `out[0..dim]`.
///
/// # Safety
/// `provider` must be a live handle, `text` a NUL-terminated string and `out`
/// must point to `out_len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn wat_embed(
    provider: *const WatProvider,
    text: *const c_char,
    out: *mut f64,
    out_len: usize,
) -> WatStatus {
    guard(|| {
        let p = ref_arg(provider, "provider")?;
        let text = str_arg(text, "text")?;
        let v = p.inner.embed(text)?;
        out_slice(out, out_len, v.dim(), "out")?.copy_from_slice(v.as_slice());
        Ok(())
    })
}

/// Cosine similarity of two length-`len` vectors; 0 when either is zero.
///
/// # Safety
/// `a` and `b` must each point to `len` readable doubles; `out` to one writable double.
#[no_mangle]
pub unsafe extern "C" fn wat_cosine(
    a: *const f64,
    b: *const f64,
    len: usize,
    out: *mut f64,
) -> WatStatus {
    guard(|| {
        let (a, b) = (slice_arg(a, len, "a")?, slice_arg(b, len, "b")?);
        let out = out.as_mut().ok_or(FfiError::Null("out"))?;
        *out = cosine(a, b)?;
        Ok(())
    })
}

/// Alliance scores of one turn against the inventory items of `rater`.
/// Writes `wat_inventory_size(inventory)` values.
///
/// # Safety
/// Handles must be live, `text` NUL-terminated and `out` must point to
/// `out_len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn wat_score_text(
    provider: *const WatProvider,
    inventory: *const WatInventory,
    text: *const c_char,
    rater: u32,
    out: *mut f64,
    out_len: usize,
) -> WatStatus {
    guard(|| {
        let p = ref_arg(provider, "provider")?;
        let inv = ref_arg(inventory, "inventory")?;
        let text = str_arg(text, "text")?;
        let rater = match rater {
            WAT_RATER_PATIENT => Speaker::Patient,
            WAT_RATER_THERAPIST => Speaker::Therapist,
            r => return Err(FfiError::InvalidArgument(format!("unknown rater code {r}"))),
        };
        let items = InventoryEmbeddings::compute(&inv.inner, &p.inner)?;
        let turn = p.inner.embed(text)?;
        let scores = score_turn(&turn, items.items(rater), rater, 0)?;
        out_slice(out, out_len, scores.len(), "out")?.copy_from_slice(&scores.scores);
        Ok(())
    })
}

/// Loads a checkpoint; its config digest is verified.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be a valid pointer to
/// writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn wat_model_load(path: *const c_char, out: *mut *mut WatModel) -> WatStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let ckpt = ModelCheckpoint::load(path)?;
        let model = ckpt.to_model()?;
        put(
            out,
            WatModel {
                model,
                run: ckpt.run,
            },
        )
    })
}

/// Per-step feature width the model expects; 0 for NULL.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn wat_model_input_dim(model: *const WatModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.config().input_dim)
}

/// # Safety
/// `model` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn wat_model_free(model: *mut WatModel) {
    free(model)
}

/// Classifies a row-major `[rows, cols]` feature matrix. Writes the class code
/// (0 anxiety, 1 depression, 2 schizophrenia, 3 suicidal) and, when
/// `probabilities` is not NULL, [`WAT_NUM_CLASSES`] probabilities.
///
/// # Safety
/// `model` must be a live handle, `features` must point to `rows * cols`
/// readable doubles, `condition` to one writable `u32`, and `probabilities`
/// to [`WAT_NUM_CLASSES`] writable doubles or be NULL.
#[no_mangle]
pub unsafe extern "C" fn wat_model_predict(
    model: *const WatModel,
    features: *const f64,
    rows: usize,
    cols: usize,
    condition: *mut u32,
    probabilities: *mut f64,
) -> WatStatus {
    guard(|| {
        let m = ref_arg(model, "model")?;
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| FfiError::InvalidArgument("rows * cols overflows".into()))?;
        let data = slice_arg(features, n, "features")?.to_vec();
        let x = Tensor::matrix(rows, cols, data).map_err(wat_core::Error::from)?;
        let pred = m.model.predict(&x)?;
        *condition.as_mut().ok_or(FfiError::Null("condition"))? = pred.condition.code() as u32;
        if !probabilities.is_null() {
            std::slice::from_raw_parts_mut(probabilities, WAT_NUM_CLASSES)
                .copy_from_slice(&pred.probabilities);
        }
        Ok(())
    })
}

#[derive(Serialize)]
struct SessionPrediction<'a> {
    session_id: &'a str,
    condition: &'a str,
    probabilities: &'a [f64],
}

/// Classifies one transcript session given as a single corpus JSON line, using
/// the feature configuration and inventory stored in the checkpoint. On
/// success `*out_json` receives `{"session_id","condition","probabilities"}`,
/// to be released with [`wat_string_free`].
///
/// # Safety
/// Handles must be live, `session_json` NUL-terminated and `out_json` a valid
/// pointer to writable storage for one string pointer.
#[no_mangle]
pub unsafe extern "C" fn wat_model_predict_session(
    model: *const WatModel,
    provider: *const WatProvider,
    session_json: *const c_char,
    out_json: *mut *mut c_char,
) -> WatStatus {
    guard(|| {
        let m = ref_arg(model, "model")?;
        let p = ref_arg(provider, "provider")?;
        let line = str_arg(session_json, "session_json")?;
        if out_json.is_null() {
            return Err(FfiError::Null("out_json"));
        }
        let run = m
            .run
            .as_ref()
            .ok_or_else(|| FfiError::InvalidArgument("checkpoint carries no run context".into()))?;
        if p.inner.dim() != run.feature.embed_dim {
            return Err(FfiError::InvalidArgument(format!(
                "provider dimension {} differs from the checkpoint's {}",
                p.inner.dim(),
                run.feature.embed_dim
            )));
        }
        let sessions = parse_corpus(BufReader::new(line.as_bytes()))?;
        let [session] = sessions.as_slice() else {
            return Err(FfiError::InvalidArgument(format!(
                "expected one session, found {}",
                sessions.len()
            )));
        };
        let max_pairs = run.train.max_pairs;
        let scored = score_corpus(
            std::slice::from_ref(session),
            &run.inventory,
            &p.inner,
            max_pairs,
        )?;
        let example = build_examples(&scored, &run.feature, max_pairs)?.remove(0);
        let pred = m.model.predict(&example.x)?;
        let json = serde_json::to_string(&SessionPrediction {
            session_id: &example.session_id,
            condition: pred.condition.as_str(),
            probabilities: &pred.probabilities,
        })
        .expect("prediction serialises");
        *out_json = CString::new(json).expect("JSON has no NUL").into_raw();
        Ok(())
    })
}

/// Releases a string returned by this library.
///
/// # Safety
/// `s` must be NULL or a string returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn wat_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
