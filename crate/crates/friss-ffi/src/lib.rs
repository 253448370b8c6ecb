//! C ABI over a trained model: load a checkpoint, predict frames for a
//! JSON-encoded document, render highlighted HTML.
//!
//! Conventions: every fallible function returns a `FrissStatus` code; on
//! failure a human-readable message is retrievable with
//! [`friss_last_error`] (thread-local). Returned strings are owned by the
//! caller and must be released with [`friss_string_free`]. Handles are
//! opaque and must be released with [`friss_model_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use friss_core::classifier::predict;
use friss_core::corpus::{filter_document, parse_document, LabelRegistry};
use friss_core::encoding::{build_encoder, encode_document, Encoder};
use friss_core::error::FrissError;
use friss_core::interpret::{default_palette, export_html, highlight_document};
use friss_core::model::{load_checkpoint, ModelParams};
use friss_core::trainer::TrainConfig;

/// Status codes shared with the generated header.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrissStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Io = 3,
    BadCheckpoint = 4,
    BadDocument = 5,
    Internal = 6,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let sanitized = msg.replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(sanitized).unwrap());
}

fn status_of(err: &FrissError) -> FrissStatus {
    match err {
        FrissError::Io(_) => FrissStatus::Io,
        FrissError::Checkpoint(_) => FrissStatus::BadCheckpoint,
        FrissError::CorpusLoad { .. }
        | FrissError::InvalidDocument { .. }
        | FrissError::UnknownFrame(_)
        | FrissError::UnusableDocument(_)
        | FrissError::Json(_) => FrissStatus::BadDocument,
        _ => FrissStatus::Internal,
    }
}

/// Opaque trained-model handle: parameters plus everything needed to go from
/// raw document JSON to predictions.
pub struct FrissModel {
    params: ModelParams,
    config: TrainConfig,
    registry: LabelRegistry,
    encoder: Box<dyn Encoder>,
}

fn load_model(path: &Path) -> Result<FrissModel, FrissError> {
    let ckpt = load_checkpoint(path)?;
    let config: TrainConfig = serde_json::from_value(
        ckpt.meta
            .get("config")
            .cloned()
            .ok_or_else(|| FrissError::Checkpoint("checkpoint missing config metadata".into()))?,
    )
    .map_err(|e| FrissError::Checkpoint(format!("bad config metadata: {e}")))?;
    let labels: Vec<String> = serde_json::from_value(
        ckpt.meta
            .get("labels")
            .cloned()
            .ok_or_else(|| FrissError::Checkpoint("checkpoint missing label metadata".into()))?,
    )
    .map_err(|e| FrissError::Checkpoint(format!("bad label metadata: {e}")))?;
    let registry = LabelRegistry::from_names(labels)?;
    let encoder = build_encoder(&config.encoder)?;
    Ok(FrissModel {
        params: ckpt.params,
        config,
        registry,
        encoder,
    })
}

unsafe fn cstr_arg<'a>(ptr: *const c_char) -> Result<&'a str, FrissStatus> {
    if ptr.is_null() {
        set_error("null argument");
        return Err(FrissStatus::NullArgument);
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        set_error("argument is not valid UTF-8");
        FrissStatus::InvalidUtf8
    })
}

fn guard<F: FnOnce() -> FrissStatus>(f: F) -> FrissStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => {
            set_error("internal panic");
            FrissStatus::Internal
        }
    }
}

fn emit_string(s: String, out: *mut *mut c_char) -> FrissStatus {
    match CString::new(s.replace('\0', " ")) {
        Ok(c) => {
            unsafe { *out = c.into_raw() };
            FrissStatus::Ok
        }
        Err(_) => {
            set_error("output contained interior NUL");
            FrissStatus::Internal
        }
    }
}

/// Load a trained checkpoint. On success writes a handle to `out`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn friss_model_load(
    path: *const c_char,
    out: *mut *mut FrissModel,
) -> FrissStatus {
    guard(|| {
        if out.is_null() {
            set_error("null output pointer");
            return FrissStatus::NullArgument;
        }
        let path = match cstr_arg(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match load_model(Path::new(path)) {
            Ok(model) => {
                *out = Box::into_raw(Box::new(model));
                FrissStatus::Ok
            }
            Err(e) => {
                set_error(&e.to_string());
                status_of(&e)
            }
        }
    })
}

/// Release a model handle. Null is a no-op.
///
/// # Safety
/// `model` must come from [`friss_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn friss_model_free(model: *mut FrissModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

fn predict_impl(model: &FrissModel, doc_json: &str) -> Result<String, FrissError> {
    let doc = parse_document(doc_json, &model.registry)?;
    let filtered = filter_document(&doc, &model.config.limits)?;
    let encoded = encode_document(model.encoder.as_ref(), &filtered)?;
    let pred = predict(
        &model.params,
        &encoded,
        &model.config.ablations.views,
        model.config.inference_combine,
    )?;
    Ok(serde_json::to_string(&serde_json::json!({
        "doc_id": doc.doc_id,
        "y_hat_u": pred.y_hat_u.to_vec(),
        "y_hat_s": pred.y_hat_s.to_vec(),
        "predicted": model.registry.name_of(pred.combined_argmax),
    }))?)
}

/// Predict the frame of one JSON-encoded document. On success writes a
/// caller-owned JSON string to `out`.
///
/// # Safety
/// `model` must be a live handle; `doc_json` a NUL-terminated string; `out`
/// a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn friss_predict_json(
    model: *const FrissModel,
    doc_json: *const c_char,
    out: *mut *mut c_char,
) -> FrissStatus {
    guard(|| {
        if model.is_null() || out.is_null() {
            set_error("null argument");
            return FrissStatus::NullArgument;
        }
        let doc_json = match cstr_arg(doc_json) {
            Ok(s) => s,
            Err(s) => return s,
        };
        match predict_impl(&*model, doc_json) {
            Ok(json) => emit_string(json, out),
            Err(e) => {
                set_error(&e.to_string());
                status_of(&e)
            }
        }
    })
}

fn highlight_impl(model: &FrissModel, doc_json: &str) -> Result<String, FrissError> {
    let doc = parse_document(doc_json, &model.registry)?;
    let filtered = filter_document(&doc, &model.config.limits)?;
    let highlighted = highlight_document(
        &model.params,
        model.encoder.as_ref(),
        &filtered,
        &model.config.ablations.views,
        model.config.inference_combine,
    )?;
    export_html(&highlighted, &default_palette(model.config.k), model.config.k)
}

/// Render one JSON-encoded document as standalone highlighted HTML.
///
/// # Safety
/// Same contract as [`friss_predict_json`].
#[no_mangle]
pub unsafe extern "C" fn friss_highlight_html(
    model: *const FrissModel,
    doc_json: *const c_char,
    out: *mut *mut c_char,
) -> FrissStatus {
    guard(|| {
        if model.is_null() || out.is_null() {
            set_error("null argument");
            return FrissStatus::NullArgument;
        }
        let doc_json = match cstr_arg(doc_json) {
            Ok(s) => s,
            Err(s) => return s,
        };
        match highlight_impl(&*model, doc_json) {
            Ok(html) => emit_string(html, out),
            Err(e) => {
                set_error(&e.to_string());
                status_of(&e)
            }
        }
    })
}

/// Message for the most recent failure on this thread. Valid until the next
/// failing call; never null.
#[no_mangle]
pub extern "C" fn friss_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Release a string returned by this library. Null is a no-op.
///
/// # Safety
/// `s` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn friss_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
